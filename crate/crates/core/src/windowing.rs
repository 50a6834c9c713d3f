//! Sliding previous-3 → next-3 window pairs over a scan.

use crate::data::{Slice, Volume};
use crate::{Error, Result};

/// Consecutive slices per stack.
pub const STACK_DEPTH: usize = 3;
/// Slices consumed by one input/target pair.
pub const WINDOW_SPAN: usize = 2 * STACK_DEPTH;

/// Three same-sized slices stored as channels, `[3, H, W]` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Stack {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Stack {
    pub fn from_raw(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != STACK_DEPTH * height * width || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "{STACK_DEPTH}x{height}x{width} stack cannot hold {} values",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// All values, channel-major.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, k: usize) -> &[f64] {
        let plane = self.height * self.width;
        &self.data[k * plane..(k + 1) * plane]
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

/// Concatenate exactly three equally sized slices into channels.
pub fn stack_channels(slices: &[Slice]) -> Result<Stack> {
    if slices.len() != STACK_DEPTH {
        return Err(Error::Shape(format!(
            "need {STACK_DEPTH} slices to stack, got {}",
            slices.len()
        )));
    }
    let (h, w) = slices[0].dims();
    if slices.iter().any(|s| s.dims() != (h, w)) {
        return Err(Error::Shape("stacked slices differ in size".into()));
    }
    let mut data = Vec::with_capacity(STACK_DEPTH * h * w);
    for s in slices {
        data.extend_from_slice(s.pixels());
    }
    Stack::from_raw(h, w, data)
}

/// Split a stack back into its slices.
pub fn unstack(stack: &Stack) -> [Slice; STACK_DEPTH] {
    std::array::from_fn(|k| {
        Slice::new(stack.height, stack.width, stack.channel(k).to_vec())
            .expect("stack channels are valid slices")
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowPair {
    /// Slices `start_index..start_index + 3`.
    pub input: Stack,
    /// Slices `start_index + 3..start_index + 6`.
    pub target: Stack,
    pub start_index: usize,
    pub scan_id: String,
}

/// Number of window pairs an `n`-slice scan yields.
pub fn window_count(n_slices: usize) -> usize {
    n_slices.saturating_sub(WINDOW_SPAN - 1)
}

/// Every pair at stride 1, in ascending start order. Short scans give none.
pub fn make_window_pairs(volume: &Volume) -> Vec<WindowPair> {
    let slices = volume.slices();
    (0..window_count(slices.len()))
        .map(|i| WindowPair {
            input: stack_channels(&slices[i..i + STACK_DEPTH]).expect("volume slices share dims"),
            target: stack_channels(&slices[i + STACK_DEPTH..i + WINDOW_SPAN])
                .expect("volume slices share dims"),
            start_index: i,
            scan_id: volume.scan_id.clone(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Cdr, Split};
    use proptest::prelude::*;

    fn tagged_volume(n: usize) -> Volume {
        let slices = (0..n)
            .map(|i| Slice::new(2, 3, vec![i as f64; 6]).unwrap())
            .collect();
        Volume::new("s", "scan", Cdr::Healthy, Split::Test, slices).unwrap()
    }

    #[test]
    fn forty_slices_give_thirty_five_pairs() {
        let pairs = make_window_pairs(&tagged_volume(40));
        assert_eq!(pairs.len(), 35);
        assert_eq!(pairs.last().unwrap().start_index, 34);
        assert_eq!(pairs.last().unwrap().target.channel(2)[0], 39.0);
    }

    #[test]
    fn minimal_and_short_scans() {
        let pairs = make_window_pairs(&tagged_volume(6));
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].start_index, 0);
        assert!(make_window_pairs(&tagged_volume(5)).is_empty());
        assert!(make_window_pairs(&tagged_volume(0)).is_empty());
    }

    #[test]
    fn stacking_keeps_channel_order() {
        let s = |v: f64| Slice::new(1, 2, vec![v, v + 0.5]).unwrap();
        let stack = stack_channels(&[s(1.0), s(2.0), s(3.0)]).unwrap();
        assert_eq!(stack.channel(1), &[2.0, 2.5]);
        assert_eq!(unstack(&stack), [s(1.0), s(2.0), s(3.0)]);
    }

    #[test]
    fn stacking_rejects_bad_inputs() {
        let a = Slice::new(1, 2, vec![0.0; 2]).unwrap();
        let b = Slice::new(2, 1, vec![0.0; 2]).unwrap();
        assert!(matches!(
            stack_channels(&[a.clone(), a.clone()]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            stack_channels(&[a.clone(), a, b]),
            Err(Error::Shape(_))
        ));
    }

    proptest! {
        #[test]
        fn count_law_and_consecutiveness(n in 0usize..61) {
            let pairs = make_window_pairs(&tagged_volume(n));
            prop_assert_eq!(pairs.len(), n.saturating_sub(5));
            let mut covered = vec![false; n];
            for (i, p) in pairs.iter().enumerate() {
                prop_assert_eq!(p.start_index, i);
                for k in 0..3 {
                    prop_assert_eq!(p.input.channel(k)[0], (i + k) as f64);
                    prop_assert_eq!(p.target.channel(k)[0], (i + 3 + k) as f64);
                    covered[i + k] = true;
                    covered[i + 3 + k] = true;
                }
            }
            if n >= 6 {
                prop_assert!(covered.iter().all(|&c| c));
            }
        }
    }
}
