//! Reconstruction metrics on plain stacks, used for scoring.
//!
//! Every metric reduces jointly over all channels and pixels.

use crate::windowing::Stack;
use crate::{Error, Result};

/// Stabilizer for the soft Dice ratio.
pub const DICE_EPSILON: f64 = 1e-7;

fn same_shape(a: &Stack, b: &Stack) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "metric inputs differ in size: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

fn unit_range(s: &Stack, what: &str) -> Result<()> {
    if let Some(v) = s.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Domain(format!(
            "{what} needs values in [0, 1], found {v}"
        )));
    }
    Ok(())
}

/// Mean absolute difference.
pub fn l1_loss(a: &Stack, b: &Stack) -> Result<f64> {
    same_shape(a, b)?;
    let n = a.data().len() as f64;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / n)
}

/// Mean squared difference.
pub fn l2_loss(a: &Stack, b: &Stack) -> Result<f64> {
    same_shape(a, b)?;
    let n = a.data().len() as f64;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n)
}

/// `1 - (2 Σab + ε) / (Σa² + Σb² + ε)`.
pub fn soft_dice_loss(a: &Stack, b: &Stack) -> Result<f64> {
    same_shape(a, b)?;
    unit_range(a, "soft Dice")?;
    unit_range(b, "soft Dice")?;
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.data().iter().zip(b.data()) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    Ok(1.0 - (2.0 * ab + DICE_EPSILON) / (aa + bb + DICE_EPSILON))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(v: f64) -> Stack {
        Stack::from_raw(4, 4, vec![v; 48]).unwrap()
    }

    #[test]
    fn constant_cases() {
        assert_eq!(l1_loss(&constant(0.0), &constant(1.0)).unwrap(), 1.0);
        assert_eq!(l2_loss(&constant(0.0), &constant(0.5)).unwrap(), 0.25);
        assert_eq!(l1_loss(&constant(0.3), &constant(0.3)).unwrap(), 0.0);
        assert!(
            soft_dice_loss(&constant(0.7), &constant(0.7))
                .unwrap()
                .abs()
                < 1e-9
        );
    }

    #[test]
    fn disjoint_masks_have_unit_dice() {
        let mut a = vec![0.0; 48];
        let mut b = vec![0.0; 48];
        a[..24].fill(1.0);
        b[24..].fill(1.0);
        let a = Stack::from_raw(4, 4, a).unwrap();
        let b = Stack::from_raw(4, 4, b).unwrap();
        assert!((soft_dice_loss(&a, &b).unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn errors() {
        let small = Stack::from_raw(2, 2, vec![0.0; 12]).unwrap();
        assert!(matches!(
            l1_loss(&small, &constant(0.0)),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            l2_loss(&small, &constant(0.0)),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            soft_dice_loss(&constant(1.5), &constant(0.0)),
            Err(Error::Domain(_))
        ));
    }
}
