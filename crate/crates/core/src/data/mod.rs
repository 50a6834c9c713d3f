//! Scans, labels, on-disk formats, preprocessing and synthetic phantoms.

mod dataset;
pub mod io;
pub mod phantom;
pub mod preprocess;

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{Error, Result};

pub use dataset::Dataset;
pub use io::{
    load_volume, read_volume_file, save_volume, write_volume_file, DatasetManifest, ManifestEntry,
    VolumeHeader, MANIFEST_FORMAT_VERSION, VOLUME_FORMAT_VERSION,
};
pub use phantom::{generate_phantoms, phantom_volumes, PhantomSpec};
pub use preprocess::{
    crop_slice, normalize_volume, preprocess_volume, select_slices, zero_pad_slice,
    PreprocessConfig,
};

/// One grayscale image, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Slice {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Slice {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Dimension(format!(
                "slice must be non-empty, got {height}x{width}"
            )));
        }
        if pixels.len() != height * width {
            return Err(Error::Dimension(format!(
                "{height}x{width} slice needs {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite pixel value {bad}")));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(y, x));
            }
        }
        Self::new(height, width, pixels)
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

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }
}

/// Clinical Dementia Rating of a scan.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Cdr {
    Healthy,
    VeryMild,
    Mild,
    Moderate,
}

impl Cdr {
    pub const ALL: [Cdr; 4] = [Cdr::Healthy, Cdr::VeryMild, Cdr::Mild, Cdr::Moderate];

    pub fn value(self) -> f64 {
        match self {
            Cdr::Healthy => 0.0,
            Cdr::VeryMild => 0.5,
            Cdr::Mild => 1.0,
            Cdr::Moderate => 2.0,
        }
    }

    pub fn from_value(value: f64) -> Result<Self> {
        Cdr::ALL
            .into_iter()
            .find(|c| c.value() == value)
            .ok_or_else(|| Error::Data(format!("CDR must be one of 0, 0.5, 1, 2; got {value}")))
    }

    pub fn is_healthy(self) -> bool {
        self == Cdr::Healthy
    }
}

impl fmt::Display for Cdr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

impl std::str::FromStr for Cdr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v: f64 = s
            .trim()
            .parse()
            .map_err(|_| Error::Data(format!("unparseable CDR {s:?}")))?;
        Cdr::from_value(v)
    }
}

impl Serialize for Cdr {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.value())
    }
}

impl<'de> Deserialize<'de> for Cdr {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let v = f64::deserialize(deserializer)?;
        Cdr::from_value(v).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// One scan: ordered slices plus identity and label.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub subject_id: String,
    pub scan_id: String,
    pub cdr: Cdr,
    pub split: Split,
    slices: Vec<Slice>,
}

impl Volume {
    pub fn new(
        subject_id: impl Into<String>,
        scan_id: impl Into<String>,
        cdr: Cdr,
        split: Split,
        slices: Vec<Slice>,
    ) -> Result<Self> {
        let scan_id = scan_id.into();
        if let Some(first) = slices.first() {
            if let Some(bad) = slices.iter().find(|s| s.dims() != first.dims()) {
                return Err(Error::Dimension(format!(
                    "scan {scan_id}: slice of size {:?} differs from {:?}",
                    bad.dims(),
                    first.dims()
                )));
            }
        }
        if split == Split::Train && !cdr.is_healthy() {
            return Err(Error::Regime(format!(
                "scan {scan_id} has CDR {cdr} but is in the training split"
            )));
        }
        Ok(Self {
            subject_id: subject_id.into(),
            scan_id,
            cdr,
            split,
            slices,
        })
    }

    pub fn slices(&self) -> &[Slice] {
        &self.slices
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    /// `(height, width)` of every slice, if there are any.
    pub fn dims(&self) -> Option<(usize, usize)> {
        self.slices.first().map(Slice::dims)
    }

    /// Same identity and label with different slices.
    pub fn with_slices(&self, slices: Vec<Slice>) -> Result<Self> {
        Volume::new(
            self.subject_id.clone(),
            self.scan_id.clone(),
            self.cdr,
            self.split,
            slices,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdr_round_trips_through_numbers() {
        for c in Cdr::ALL {
            assert_eq!(Cdr::from_value(c.value()).unwrap(), c);
            assert_eq!(c.to_string().parse::<Cdr>().unwrap(), c);
        }
        assert!(Cdr::from_value(3.0).is_err());
        let json = serde_json::to_string(&Cdr::VeryMild).unwrap();
        assert_eq!(json, "0.5");
        assert_eq!(serde_json::from_str::<Cdr>("2.0").unwrap(), Cdr::Moderate);
    }

    #[test]
    fn slice_rejects_bad_input() {
        assert!(matches!(Slice::new(0, 3, vec![]), Err(Error::Dimension(_))));
        assert!(matches!(
            Slice::new(2, 2, vec![0.0; 3]),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            Slice::new(1, 2, vec![0.0, f64::NAN]),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn volume_enforces_shared_dims_and_training_regime() {
        let a = Slice::new(2, 2, vec![0.0; 4]).unwrap();
        let b = Slice::new(2, 3, vec![0.0; 6]).unwrap();
        assert!(matches!(
            Volume::new("s", "x", Cdr::Healthy, Split::Test, vec![a.clone(), b]),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            Volume::new("s", "x", Cdr::Mild, Split::Train, vec![a.clone()]),
            Err(Error::Regime(_))
        ));
        assert!(Volume::new("s", "x", Cdr::Mild, Split::Test, vec![a]).is_ok());
    }
}
