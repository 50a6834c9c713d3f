use serde::{Deserialize, Serialize};

use super::{ManifestEntry, Slice, Volume};
use crate::{Error, Result};

/// Centered zero padding to `target_width`; an odd remainder goes right.
pub fn zero_pad_slice(slice: &Slice, target_width: usize) -> Result<Slice> {
    let (h, w) = slice.dims();
    if w > target_width {
        return Err(Error::Dimension(format!(
            "slice width {w} exceeds pad target {target_width}"
        )));
    }
    if w == target_width {
        return Ok(slice.clone());
    }
    let left = (target_width - w) / 2;
    let mut pixels = vec![0.0; h * target_width];
    for (row, src) in pixels
        .chunks_exact_mut(target_width)
        .zip(slice.pixels().chunks_exact(w))
    {
        row[left..left + w].copy_from_slice(src);
    }
    Slice::new(h, target_width, pixels)
}

/// Inverse of [`zero_pad_slice`]: keep the centered `original_width` columns.
pub fn crop_slice(slice: &Slice, original_width: usize) -> Result<Slice> {
    let (h, w) = slice.dims();
    if original_width > w || original_width == 0 {
        return Err(Error::Dimension(format!(
            "cannot crop width {w} to {original_width}"
        )));
    }
    let left = (w - original_width) / 2;
    let pixels = slice
        .pixels()
        .chunks_exact(w)
        .flat_map(|row| row[left..left + original_width].iter().copied())
        .collect();
    Slice::new(h, original_width, pixels)
}

/// Per-scan min-max mapping to `[0, 1]`. Constant scans map to zeros.
pub fn normalize_volume(volume: &Volume) -> Result<Volume> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut any = false;
    for v in volume.slices().iter().flat_map(|s| s.pixels()) {
        if !v.is_finite() {
            return Err(Error::Data(format!(
                "scan {} has non-finite intensity {v}",
                volume.scan_id
            )));
        }
        lo = lo.min(*v);
        hi = hi.max(*v);
        any = true;
    }
    if !any {
        return Err(Error::Data(format!(
            "scan {} has no pixels",
            volume.scan_id
        )));
    }
    let range = hi - lo;
    let slices = volume
        .slices()
        .iter()
        .map(|s| {
            let pixels = s
                .pixels()
                .iter()
                .map(|&v| if range > 0.0 { (v - lo) / range } else { 0.0 })
                .collect();
            Slice::new(s.height(), s.width(), pixels)
        })
        .collect::<Result<Vec<_>>>()?;
    volume.with_slices(slices)
}

/// Contiguous sub-volume `[lo, hi]`, both ends inclusive.
pub fn select_slices(volume: &Volume, (lo, hi): (usize, usize)) -> Result<Volume> {
    if lo > hi || hi >= volume.len() {
        return Err(Error::Bounds(format!(
            "slice range ({lo}, {hi}) invalid for a {}-slice scan",
            volume.len()
        )));
    }
    volume.with_slices(volume.slices()[lo..=hi].to_vec())
}

/// How raw scans are turned into model inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    /// Zero-pad every slice to this width before anything else.
    pub pad_width: Option<usize>,
    /// Explicit inclusive slice range; overrides `middle_fraction`.
    pub slice_range: Option<(usize, usize)>,
    /// Keep this centered fraction of the slices when no range is given.
    pub middle_fraction: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            pad_width: None,
            slice_range: None,
            middle_fraction: 0.4,
        }
    }
}

impl PreprocessConfig {
    /// Inclusive slice range for an `n`-slice scan.
    pub fn range_for(&self, n: usize) -> Result<(usize, usize)> {
        if n == 0 {
            return Err(Error::Bounds("empty scan".into()));
        }
        if let Some(range) = self.slice_range {
            return Ok(range);
        }
        if !(self.middle_fraction > 0.0 && self.middle_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "middle_fraction must be in (0, 1], got {}",
                self.middle_fraction
            )));
        }
        let keep = ((n as f64 * self.middle_fraction).round() as usize).clamp(1, n);
        let lo = (n - keep) / 2;
        Ok((lo, lo + keep - 1))
    }
}

/// Pad, select, drop excluded slices, then normalize.
///
/// `excluded` holds slice indices in the raw scan's numbering.
pub fn preprocess_volume(
    volume: &Volume,
    cfg: &PreprocessConfig,
    excluded: &[usize],
) -> Result<Volume> {
    let padded = match cfg.pad_width {
        Some(width) => volume.with_slices(
            volume
                .slices()
                .iter()
                .map(|s| zero_pad_slice(s, width))
                .collect::<Result<_>>()?,
        )?,
        None => volume.clone(),
    };
    let (lo, hi) = cfg.range_for(padded.len())?;
    let selected = select_slices(&padded, (lo, hi))?;
    let kept = if excluded.is_empty() {
        selected
    } else {
        let slices = selected
            .slices()
            .iter()
            .enumerate()
            .filter(|(i, _)| !excluded.contains(&(lo + i)))
            .map(|(_, s)| s.clone())
            .collect();
        selected.with_slices(slices)?
    };
    normalize_volume(&kept)
}

impl ManifestEntry {
    /// Convenience wrapper applying this entry's exclusion list.
    pub fn preprocess(&self, volume: &Volume, cfg: &PreprocessConfig) -> Result<Volume> {
        preprocess_volume(volume, cfg, &self.excluded_slices)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Cdr, Split};
    use proptest::prelude::*;

    fn volume(slices: Vec<Slice>) -> Volume {
        Volume::new("sub", "scan", Cdr::Healthy, Split::Test, slices).unwrap()
    }

    fn ramp(h: usize, w: usize, offset: f64) -> Slice {
        Slice::from_fn(h, w, |y, x| offset + (y * w + x) as f64).unwrap()
    }

    #[test]
    fn pad_240_to_256_adds_eight_columns_each_side() {
        let s = Slice::from_fn(176, 240, |_, _| 1.0).unwrap();
        let p = zero_pad_slice(&s, 256).unwrap();
        assert_eq!(p.dims(), (176, 256));
        for y in [0, 100, 175] {
            assert!((0..8).all(|x| p.get(y, x) == 0.0));
            assert!((8..248).all(|x| p.get(y, x) == 1.0));
            assert!((248..256).all(|x| p.get(y, x) == 0.0));
        }
    }

    #[test]
    fn pad_to_same_width_is_identity() {
        let s = ramp(176, 256, 0.0);
        assert_eq!(zero_pad_slice(&s, 256).unwrap(), s);
    }

    #[test]
    fn pad_small_odd_case() {
        let s = Slice::from_fn(4, 5, |_, _| 1.0).unwrap();
        let p = zero_pad_slice(&s, 9).unwrap();
        assert_eq!(p.dims(), (4, 9));
        for y in 0..4 {
            for x in 0..9 {
                let expected = if (2..=6).contains(&x) { 1.0 } else { 0.0 };
                assert_eq!(p.get(y, x), expected);
            }
        }
        // odd remainder: 5 -> 8 pads 1 left, 2 right
        let q = zero_pad_slice(&s, 8).unwrap();
        assert_eq!(q.get(0, 0), 0.0);
        assert_eq!(q.get(0, 1), 1.0);
        assert_eq!(q.get(0, 5), 1.0);
        assert_eq!(q.get(0, 6), 0.0);
    }

    #[test]
    fn pad_rejects_wider_slice() {
        let s = ramp(2, 10, 0.0);
        assert!(matches!(zero_pad_slice(&s, 9), Err(Error::Dimension(_))));
    }

    #[test]
    fn normalize_maps_midpoint() {
        let s = Slice::new(1, 3, vec![10.0, 60.0, 110.0]).unwrap();
        let n = normalize_volume(&volume(vec![s])).unwrap();
        assert_eq!(n.slices()[0].pixels(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn normalize_constant_volume_is_zero() {
        let s = Slice::new(2, 2, vec![7.0; 4]).unwrap();
        let n = normalize_volume(&volume(vec![s.clone(), s])).unwrap();
        assert!(n
            .slices()
            .iter()
            .all(|s| s.pixels().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn normalize_random_volume_hits_both_extremes() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let slices = (0..3)
            .map(|_| Slice::from_fn(5, 4, |_, _| rng.gen_range(-50.0..300.0)).unwrap())
            .collect();
        let n = normalize_volume(&volume(slices)).unwrap();
        let all: Vec<f64> = n
            .slices()
            .iter()
            .flat_map(|s| s.pixels().to_vec())
            .collect();
        assert_eq!(all.iter().cloned().fold(f64::INFINITY, f64::min), 0.0);
        assert_eq!(all.iter().cloned().fold(f64::NEG_INFINITY, f64::max), 1.0);
    }

    #[test]
    fn select_counts_and_bounds() {
        let v = volume((0..256).map(|i| ramp(2, 2, i as f64)).collect());
        assert_eq!(select_slices(&v, (100, 139)).unwrap().len(), 40);
        assert_eq!(
            select_slices(&v, (100, 139)).unwrap().slices()[0],
            v.slices()[100]
        );
        assert_eq!(select_slices(&v, (0, 255)).unwrap(), v);
        assert!(matches!(select_slices(&v, (10, 9)), Err(Error::Bounds(_))));
        assert!(matches!(select_slices(&v, (0, 256)), Err(Error::Bounds(_))));
    }

    #[test]
    fn middle_fraction_range() {
        let cfg = PreprocessConfig::default();
        assert_eq!(cfg.range_for(100).unwrap(), (30, 69));
        let all = PreprocessConfig {
            middle_fraction: 1.0,
            ..Default::default()
        };
        assert_eq!(all.range_for(12).unwrap(), (0, 11));
    }

    #[test]
    fn preprocess_drops_excluded_raw_indices() {
        let v = volume((0..10).map(|i| ramp(2, 2, i as f64 * 10.0)).collect());
        let cfg = PreprocessConfig {
            slice_range: Some((2, 7)),
            ..Default::default()
        };
        let out = preprocess_volume(&v, &cfg, &[3, 9]).unwrap();
        assert_eq!(out.len(), 5);
    }

    proptest! {
        #[test]
        fn crop_undoes_pad(h in 1usize..6, w in 1usize..9, extra in 0usize..7, seed in 0u64..1000) {
            let s = Slice::from_fn(h, w, |y, x| ((y * 31 + x * 7) as u64 ^ seed) as f64).unwrap();
            let padded = zero_pad_slice(&s, w + extra).unwrap();
            prop_assert_eq!(crop_slice(&padded, w).unwrap(), s);
        }

        #[test]
        fn normalize_is_idempotent(values in proptest::collection::vec(-1e3f64..1e3, 12)) {
            let slices = values.chunks(4).map(|c| Slice::new(2, 2, c.to_vec()).unwrap()).collect();
            let once = normalize_volume(&volume(slices)).unwrap();
            let twice = normalize_volume(&once).unwrap();
            for (a, b) in once.slices().iter().zip(twice.slices()) {
                for (x, y) in a.pixels().iter().zip(b.pixels()) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn full_range_selection_is_identity(n in 1usize..20) {
            let v = volume((0..n).map(|i| ramp(1, 2, i as f64)).collect());
            prop_assert_eq!(select_slices(&v, (0, n - 1)).unwrap(), v);
        }
    }
}
