//! Seeded synthetic "brain" volumes.
//!
//! Each subject is a stack of axial cross-sections through nested soft-edged
//! ellipses: skull, cerebrospinal fluid, cortex, white matter with a wavy
//! boundary, two ventricles and two hippocampus-like blobs. Every structure
//! varies smoothly with the axial position so adjacent slices are continuous.
//! Disease severity shrinks tissue and enlarges fluid spaces.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{save_volume, Cdr, DatasetManifest, ManifestEntry, Slice, Split, Volume};
use crate::{Error, Result};

/// Tissue shrinkage per unit severity.
pub const ATROPHY_FACTOR: f64 = 0.2;
/// Fluid-space enlargement per unit severity.
pub const CAVITY_FACTOR: f64 = 1.0;

const RAW_SCALE: f64 = 3000.0;
const RAW_OFFSET: f64 = 200.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSpec {
    pub seed: u64,
    pub n_healthy: usize,
    pub n_anomalous: usize,
    pub slices_per_volume: usize,
    /// `(height, width)` in pixels.
    pub slice_size: (usize, usize),
    /// Severity of the most advanced tier, in `[0, 1]`.
    pub severity: f64,
    /// Gaussian noise standard deviation in normalized intensity units.
    pub noise_sigma: f64,
    /// Healthy scans routed to validation; the next `test_healthy` go to test
    /// and the remainder to training.
    pub validation_healthy: usize,
    pub test_healthy: usize,
    /// Anomalous scans routed to validation; the remainder go to test.
    pub validation_anomalous: usize,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_healthy: 70,
            n_anomalous: 30,
            slices_per_volume: 12,
            slice_size: (64, 64),
            severity: 1.0,
            noise_sigma: 0.02,
            validation_healthy: 10,
            test_healthy: 20,
            validation_anomalous: 10,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.slices_per_volume < 6 {
            return fail(format!(
                "slices_per_volume must be at least 6 to form a window pair, got {}",
                self.slices_per_volume
            ));
        }
        if self.slice_size.0 == 0 || self.slice_size.1 == 0 {
            return fail(format!(
                "slice_size must be positive, got {:?}",
                self.slice_size
            ));
        }
        if !(0.0..=1.0).contains(&self.severity) {
            return fail(format!("severity must be in [0, 1], got {}", self.severity));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            ));
        }
        if self.validation_healthy + self.test_healthy > self.n_healthy {
            return fail("validation_healthy + test_healthy exceeds n_healthy".into());
        }
        if self.validation_anomalous > self.n_anomalous {
            return fail("validation_anomalous exceeds n_anomalous".into());
        }
        Ok(())
    }

    /// Label and severity for the `index`-th anomalous scan of a split.
    pub fn tier(&self, index: usize) -> (Cdr, f64) {
        const TIERS: [Cdr; 3] = [Cdr::VeryMild, Cdr::Mild, Cdr::Moderate];
        let t = index % 3;
        (TIERS[t], self.severity * (t + 1) as f64 / 3.0)
    }
}

/// Per-subject geometry and contrast.
#[derive(Clone, Debug, PartialEq)]
pub struct Anatomy {
    pub center: (f64, f64),
    pub semi_axes: (f64, f64),
    pub tilt: f64,
    pub gain: f64,
    pub ventricle_scale: f64,
    pub gyral_phase: f64,
}

impl Anatomy {
    pub fn sample(rng: &mut impl Rng) -> Self {
        let rx = rng.gen_range(0.74..0.80);
        Self {
            center: (rng.gen_range(-0.03..0.03), rng.gen_range(-0.03..0.03)),
            semi_axes: (rx, rx * rng.gen_range(1.12..1.20)),
            tilt: rng.gen_range(-0.08..0.08),
            gain: rng.gen_range(0.9..1.1),
            ventricle_scale: rng.gen_range(0.9..1.1),
            gyral_phase: rng.gen_range(0.0..std::f64::consts::TAU),
        }
    }
}

fn smooth_inside(u: f64, v: f64, rx: f64, ry: f64, edge: f64) -> f64 {
    if rx <= 0.0 || ry <= 0.0 {
        return 0.0;
    }
    let d = ((u / rx).powi(2) + (v / ry).powi(2)).sqrt();
    let signed = (d - 1.0) * (rx * ry).sqrt();
    (0.5 - signed / edge).clamp(0.0, 1.0)
}

/// Noise-free cross-section in `[0, 1]` at axial position `z` in `[-0.5, 0.5]`.
pub fn render_slice(
    anatomy: &Anatomy,
    z: f64,
    severity: f64,
    (height, width): (usize, usize),
) -> Vec<f64> {
    let tissue = 1.0 - ATROPHY_FACTOR * severity;
    let cavity = 1.0 + CAVITY_FACTOR * severity;
    let taper = (1.0 - 0.3 * z * z).sqrt();
    let (hx, hy) = (anatomy.semi_axes.0 * taper, anatomy.semi_axes.1 * taper);
    let vent = anatomy.ventricle_scale * (1.0 - 0.8 * z * z) * cavity;
    let hippo = (1.0 - ((z + 0.1) / 0.45).powi(2)).max(0.0) * tissue;
    let edge = 1.5 / width.min(height) as f64;
    let (sin_t, cos_t) = anatomy.tilt.sin_cos();

    let mut out = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            let px = (x as f64 + 0.5) / width as f64 * 2.0 - 1.0 - anatomy.center.0;
            let py = (y as f64 + 0.5) / height as f64 * 2.0 - 1.0 - anatomy.center.1;
            let u = cos_t * px + sin_t * py;
            let v = -sin_t * px + cos_t * py;

            let mut value = 0.0;
            let mut paint = |weight: f64, intensity: f64| value += weight * (intensity - value);
            paint(smooth_inside(u, v, hx, hy, edge), 0.85);
            paint(smooth_inside(u, v, 0.92 * hx, 0.92 * hy, edge), 0.12);
            paint(
                smooth_inside(u, v, 0.88 * hx * tissue, 0.88 * hy * tissue, edge),
                0.5,
            );
            let theta = v.atan2(u);
            let gyri = 1.0 + 0.05 * (7.0 * theta + anatomy.gyral_phase + 2.0 * z).sin();
            let wm = 0.62 * tissue * gyri;
            paint(smooth_inside(u, v, wm * hx, wm * hy, edge), 0.78);
            for side in [-1.0, 1.0] {
                let cu = u - side * 0.11 * hx;
                let cv = v + 0.08 * hy;
                paint(
                    smooth_inside(cu, cv, 0.07 * hx * vent, 0.25 * hy * vent, edge),
                    0.12,
                );
                let hu = u - side * 0.38 * hx;
                let hv = v - 0.3 * hy;
                paint(
                    smooth_inside(hu, hv, 0.09 * hx * hippo, 0.06 * hy * hippo, edge),
                    0.62,
                );
            }
            out.push(value);
        }
    }
    out
}

/// Raw integer-intensity slices for one subject.
pub fn render_volume(
    spec: &PhantomSpec,
    anatomy: &Anatomy,
    severity: f64,
    rng: &mut impl Rng,
) -> Result<Vec<Slice>> {
    let n = spec.slices_per_volume;
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    (0..n)
        .map(|k| {
            let z = -0.5 + k as f64 / (n - 1).max(1) as f64;
            let clean = render_slice(anatomy, z, severity, spec.slice_size);
            let pixels = clean
                .into_iter()
                .map(|v| {
                    let noisy = (v + noise.sample(rng)).clamp(0.0, 1.0);
                    (anatomy.gain * noisy * RAW_SCALE + RAW_OFFSET).round()
                })
                .collect();
            Slice::new(spec.slice_size.0, spec.slice_size.1, pixels)
        })
        .collect()
}

/// All phantom scans in generation order: healthy first, then anomalous.
pub fn phantom_volumes(spec: &PhantomSpec) -> Result<Vec<Volume>> {
    spec.validate()?;
    let mut volumes = Vec::with_capacity(spec.n_healthy + spec.n_anomalous);
    let mut subject = 0u64;
    let mut next = |cdr: Cdr, split: Split, severity: f64| -> Result<Volume> {
        subject += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(subject);
        let anatomy = Anatomy::sample(&mut rng);
        let slices = render_volume(spec, &anatomy, severity, &mut rng)?;
        let subject_id = format!("sub-{subject:04}");
        let scan_id = format!("{subject_id}_ses-1");
        Volume::new(subject_id, scan_id, cdr, split, slices)
    };
    for i in 0..spec.n_healthy {
        let split = if i < spec.validation_healthy {
            Split::Validation
        } else if i < spec.validation_healthy + spec.test_healthy {
            Split::Test
        } else {
            Split::Train
        };
        volumes.push(next(Cdr::Healthy, split, 0.0)?);
    }
    for i in 0..spec.n_anomalous {
        let (split, index) = if i < spec.validation_anomalous {
            (Split::Validation, i)
        } else {
            (Split::Test, i - spec.validation_anomalous)
        };
        let (cdr, severity) = spec.tier(index);
        volumes.push(next(cdr, split, severity)?);
    }
    Ok(volumes)
}

/// Write every phantom scan plus `manifest.json` under `out_dir`.
pub fn generate_phantoms(spec: &PhantomSpec, out_dir: &Path) -> Result<DatasetManifest> {
    let volumes = phantom_volumes(spec)?;
    let vol_dir = out_dir.join("volumes");
    fs::create_dir_all(&vol_dir).map_err(|e| Error::io(&vol_dir, e))?;
    let mut entries = Vec::with_capacity(volumes.len());
    for v in &volumes {
        let rel = Path::new("volumes").join(format!("{}.vol", v.scan_id));
        save_volume(v, &out_dir.join(&rel))?;
        let (height, width) = spec.slice_size;
        entries.push(ManifestEntry {
            path: rel,
            subject_id: v.subject_id.clone(),
            scan_id: v.scan_id.clone(),
            cdr: v.cdr,
            split: v.split,
            n_slices: v.len(),
            height,
            width,
            excluded_slices: Vec::new(),
        });
    }
    let manifest = DatasetManifest::new(entries)?;
    manifest.save(&out_dir.join(DatasetManifest::FILE_NAME))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> PhantomSpec {
        PhantomSpec {
            seed: 1,
            n_healthy: 4,
            n_anomalous: 4,
            slices_per_volume: 12,
            slice_size: (64, 64),
            validation_healthy: 1,
            test_healthy: 1,
            validation_anomalous: 1,
            ..Default::default()
        }
    }

    fn anatomy() -> Anatomy {
        Anatomy::sample(&mut ChaCha8Rng::seed_from_u64(5))
    }

    /// Pixels brighter than the cortex: white matter and hippocampi.
    fn inner_area(pixels: &[f64]) -> usize {
        pixels.iter().filter(|&&v| v > 0.6 && v < 0.8).count()
    }

    #[test]
    fn generation_is_byte_identical_across_runs() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = generate_phantoms(&small_spec(), a.path()).unwrap();
        let mb = generate_phantoms(&small_spec(), b.path()).unwrap();
        assert_eq!(ma, mb);
        assert_eq!(ma.entries.len(), 8);
        for e in &ma.entries {
            let x = fs::read(a.path().join(&e.path)).unwrap();
            let y = fs::read(b.path().join(&e.path)).unwrap();
            assert_eq!(x, y, "{}", e.scan_id);
        }
        let ja = fs::read(a.path().join("manifest.json")).unwrap();
        let jb = fs::read(b.path().join("manifest.json")).unwrap();
        assert_eq!(ja, jb);
    }

    #[test]
    fn different_seeds_differ() {
        let mut other = small_spec();
        other.seed = 2;
        let a = phantom_volumes(&small_spec()).unwrap();
        let b = phantom_volumes(&other).unwrap();
        assert_ne!(a[0].slices(), b[0].slices());
    }

    #[test]
    fn splits_and_labels() {
        let vols = phantom_volumes(&small_spec()).unwrap();
        let count = |split: Split, healthy: bool| {
            vols.iter()
                .filter(|v| v.split == split && v.cdr.is_healthy() == healthy)
                .count()
        };
        assert_eq!(count(Split::Train, true), 2);
        assert_eq!(count(Split::Validation, true), 1);
        assert_eq!(count(Split::Test, true), 1);
        assert_eq!(count(Split::Validation, false), 1);
        assert_eq!(count(Split::Test, false), 3);
        assert_eq!(count(Split::Train, false), 0);
        let test_cdrs: Vec<Cdr> = vols
            .iter()
            .filter(|v| v.split == Split::Test && !v.cdr.is_healthy())
            .map(|v| v.cdr)
            .collect();
        assert_eq!(test_cdrs, vec![Cdr::VeryMild, Cdr::Mild, Cdr::Moderate]);
    }

    #[test]
    fn too_few_slices_is_config_error() {
        let spec = PhantomSpec {
            slices_per_volume: 5,
            ..small_spec()
        };
        assert!(matches!(phantom_volumes(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn zero_severity_matches_healthy_rendering() {
        let spec = small_spec();
        let a = anatomy();
        let healthy = render_volume(&spec, &a, 0.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let (_, tier_severity) = PhantomSpec {
            severity: 0.0,
            ..spec.clone()
        }
        .tier(2);
        let anomalous =
            render_volume(&spec, &a, tier_severity, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(healthy, anomalous);
    }

    #[test]
    fn higher_severity_shrinks_inner_structures() {
        let a = anatomy();
        let areas = |severity: f64| -> f64 {
            (0..12)
                .map(|k| {
                    let z = -0.5 + k as f64 / 11.0;
                    inner_area(&render_slice(&a, z, severity, (64, 64))) as f64
                })
                .sum::<f64>()
                / 12.0
        };
        let mild = areas(0.1);
        let severe = areas(1.0);
        assert!(severe < mild, "severe {severe} vs mild {mild}");
    }

    #[test]
    fn slices_are_continuous() {
        let a = anatomy();
        let s0 = render_slice(&a, 0.0, 0.0, (64, 64));
        let s1 = render_slice(&a, 1.0 / 11.0, 0.0, (64, 64));
        let far = render_slice(&a, 0.5, 0.0, (64, 64));
        let diff = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>();
        assert!(diff(&s0, &s1) < diff(&s0, &far));
    }
}
