use crate::windowing::Stack;
use crate::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
/// `(0.01 * L)^2` and `(0.03 * L)^2` for dynamic range `L = 1`.
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Normalized 1-D Gaussian taps.
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let center = (SSIM_WINDOW / 2) as f64;
    let mut taps = [0.0; SSIM_WINDOW];
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - center;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    taps
}

/// Separable valid-mode Gaussian filter of one plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let line = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&line[x..]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * rows[(y + k) * ow + x])
                .sum();
        }
    }
    out
}

/// Mean local SSIM over every valid 11×11 Gaussian window of every channel.
pub fn ssim(a: &Stack, b: &Stack) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "SSIM inputs differ in size: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Domain(format!(
            "{h}x{w} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    for s in [a, b] {
        if let Some(v) = s.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!(
                "SSIM needs values in [0, 1], found {v}"
            )));
        }
    }
    let taps = gaussian_window();
    let mut total = 0.0;
    let mut count = 0usize;
    for k in 0..3 {
        let (x, y) = (a.channel(k), b.channel(k));
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
        let mu_x = filter_valid(x, h, w, &taps);
        let mu_y = filter_valid(y, h, w, &taps);
        let e_xx = filter_valid(&xx, h, w, &taps);
        let e_yy = filter_valid(&yy, h, w, &taps);
        let e_xy = filter_valid(&xy, h, w, &taps);
        for i in 0..mu_x.len() {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let var_x = e_xx[i] - mx * mx;
            let var_y = e_yy[i] - my * my;
            let cov = e_xy[i] - mx * my;
            total += ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((mx * mx + my * my + SSIM_C1) * (var_x + var_y + SSIM_C2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

pub fn ssim_loss(a: &Stack, b: &Stack) -> Result<f64> {
    Ok(1.0 - ssim(a, b)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_is_normalized_and_symmetric() {
        let t = gaussian_window();
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..SSIM_WINDOW {
            assert_eq!(t[i], t[SSIM_WINDOW - 1 - i]);
        }
    }

    #[test]
    fn identical_images() {
        let data: Vec<f64> = (0..3 * 16 * 20)
            .map(|i| ((i * 37) % 101) as f64 / 100.0)
            .collect();
        let a = Stack::from_raw(16, 20, data).unwrap();
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!(ssim_loss(&a, &a).unwrap().abs() < 1e-12);
    }

    #[test]
    fn constant_images_follow_closed_form() {
        let zeros = Stack::from_raw(12, 12, vec![0.0; 3 * 144]).unwrap();
        let ones = Stack::from_raw(12, 12, vec![1.0; 3 * 144]).unwrap();
        // zero variance: ((C1)(C2)) / ((1 + C1)(C2))
        let expected = SSIM_C1 / (1.0 + SSIM_C1);
        assert!((ssim(&zeros, &ones).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn too_small_is_domain_error() {
        let a = Stack::from_raw(10, 30, vec![0.0; 900]).unwrap();
        assert!(matches!(ssim(&a, &a), Err(Error::Domain(_))));
    }
}
