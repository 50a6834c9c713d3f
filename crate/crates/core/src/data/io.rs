//! Volume binary files and the dataset manifest.
//!
//! A volume file is a 32-byte little-endian header followed by raw pixels:
//!
//! ```text
//! offset  size  field
//!      0     4  magic "VOLR"
//!      4     4  format_version (u32) = 1
//!      8     4  n_slices (u32)
//!     12     4  height (u32)
//!     16     4  width (u32)
//!     20    12  reserved, zero
//!     32     -  n_slices * height * width u16 pixels, row-major, slice by slice
//! ```
//!
//! Pixels are stored as raw integer intensities; a volume can only be saved
//! when every pixel is an integer in `0..=65535`.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Cdr, Slice, Split, Volume};
use crate::{Error, Result};

pub const VOLUME_MAGIC: &[u8; 4] = b"VOLR";
pub const VOLUME_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VolumeHeader {
    pub n_slices: usize,
    pub height: usize,
    pub width: usize,
}

/// Write raw slices (integer intensities) in the volume format.
pub fn write_volume_file(path: &Path, slices: &[Slice]) -> Result<()> {
    let (height, width) = slices.first().map(Slice::dims).unwrap_or((0, 0));
    let mut bytes = Vec::with_capacity(HEADER_LEN + 2 * slices.len() * height * width);
    bytes.extend_from_slice(VOLUME_MAGIC);
    for field in [
        VOLUME_FORMAT_VERSION,
        slices.len() as u32,
        height as u32,
        width as u32,
    ] {
        bytes.extend_from_slice(&field.to_le_bytes());
    }
    bytes.resize(HEADER_LEN, 0);
    for slice in slices {
        if slice.dims() != (height, width) {
            return Err(Error::Dimension(format!(
                "cannot write mixed slice sizes {:?} and {:?}",
                (height, width),
                slice.dims()
            )));
        }
        for &v in slice.pixels() {
            if v.fract() != 0.0 || !(0.0..=65535.0).contains(&v) {
                return Err(Error::Format(format!(
                    "pixel {v} is not a 16-bit unsigned intensity"
                )));
            }
            bytes.extend_from_slice(&(v as u16).to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Read a volume file without manifest metadata.
pub fn read_volume_file(path: &Path) -> Result<(VolumeHeader, Vec<Slice>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: String| Error::Format(format!("{}: {msg}", path.display()));
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!(
            "file is {} bytes, shorter than the header",
            bytes.len()
        )));
    }
    if &bytes[..4] != VOLUME_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let field =
        |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let version = field(0) as u32;
    if version != VOLUME_FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let header = VolumeHeader {
        n_slices: field(1),
        height: field(2),
        width: field(3),
    };
    if bytes[20..HEADER_LEN].iter().any(|&b| b != 0) {
        return Err(bad("reserved header bytes are not zero".into()));
    }
    let plane = header.height * header.width;
    let expected = HEADER_LEN + 2 * header.n_slices * plane;
    if bytes.len() != expected {
        return Err(bad(format!(
            "expected {expected} bytes for {} slices of {}x{}, found {}",
            header.n_slices,
            header.height,
            header.width,
            bytes.len()
        )));
    }
    if header.n_slices > 0 && plane == 0 {
        return Err(bad("zero-sized slices".into()));
    }
    let slices = bytes[HEADER_LEN..]
        .chunks_exact(2 * plane.max(1))
        .take(header.n_slices)
        .map(|chunk| {
            let pixels = chunk
                .chunks_exact(2)
                .map(|p| f64::from(u16::from_le_bytes([p[0], p[1]])))
                .collect();
            Slice::new(header.height, header.width, pixels)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((header, slices))
}

pub fn save_volume(volume: &Volume, path: &Path) -> Result<()> {
    write_volume_file(path, volume.slices())
}

/// Load a volume, checking the file against its manifest entry.
pub fn load_volume(path: &Path, entry: &ManifestEntry) -> Result<Volume> {
    let (header, slices) = read_volume_file(path)?;
    let declared = VolumeHeader {
        n_slices: entry.n_slices,
        height: entry.height,
        width: entry.width,
    };
    if header != declared {
        return Err(Error::Format(format!(
            "{}: file holds {:?} but the manifest declares {:?}",
            path.display(),
            header,
            declared
        )));
    }
    Volume::new(
        entry.subject_id.clone(),
        entry.scan_id.clone(),
        entry.cdr,
        entry.split,
        slices,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Volume file, relative to the manifest's directory.
    pub path: PathBuf,
    pub subject_id: String,
    pub scan_id: String,
    pub cdr: Cdr,
    pub split: Split,
    pub n_slices: usize,
    pub height: usize,
    pub width: usize,
    /// Raw slice indices to drop (manual quality control).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excluded_slices: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub const FILE_NAME: &'static str = "manifest.json";

    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let manifest = Self {
            format_version: MANIFEST_FORMAT_VERSION,
            entries,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    /// Unique scan ids, one split per subject, sane exclusion lists.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != MANIFEST_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported manifest version {}",
                self.format_version
            )));
        }
        let mut scans = HashSet::new();
        let mut subject_split: HashMap<&str, Split> = HashMap::new();
        for e in &self.entries {
            if !scans.insert(e.scan_id.as_str()) {
                return Err(Error::Format(format!("duplicate scan id {}", e.scan_id)));
            }
            match subject_split.get(e.subject_id.as_str()) {
                Some(&split) if split != e.split => {
                    return Err(Error::Format(format!(
                        "subject {} appears in both {split} and {}",
                        e.subject_id, e.split
                    )));
                }
                _ => {
                    subject_split.insert(&e.subject_id, e.split);
                }
            }
            if let Some(&i) = e.excluded_slices.iter().find(|&&i| i >= e.n_slices) {
                return Err(Error::Format(format!(
                    "scan {} excludes slice {i} of {}",
                    e.scan_id, e.n_slices
                )));
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(scan: &str, subject: &str, split: Split) -> ManifestEntry {
        ManifestEntry {
            path: format!("{scan}.vol").into(),
            subject_id: subject.into(),
            scan_id: scan.into(),
            cdr: Cdr::Healthy,
            split,
            n_slices: 3,
            height: 2,
            width: 2,
            excluded_slices: vec![],
        }
    }

    fn sample_volume() -> Volume {
        let slices = (0..3)
            .map(|i| Slice::new(2, 2, vec![i as f64, 65535.0, 0.0, 1234.0]).unwrap())
            .collect();
        Volume::new("sub-1", "a", Cdr::Healthy, Split::Train, slices).unwrap()
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.vol");
        let v = sample_volume();
        save_volume(&v, &path).unwrap();
        let loaded = load_volume(&path, &entry("a", "sub-1", Split::Train)).unwrap();
        assert_eq!(loaded, v);
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"VOLR");
        assert_eq!(bytes.len(), 32 + 3 * 4 * 2);
    }

    #[test]
    fn truncated_file_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.vol");
        save_volume(&sample_volume(), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        let err = load_volume(&path, &entry("a", "sub-1", Split::Train)).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
        fs::write(&path, &bytes[..10]).unwrap();
        assert!(matches!(read_volume_file(&path), Err(Error::Format(_))));
    }

    #[test]
    fn manifest_slice_count_mismatch_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.vol");
        save_volume(&sample_volume(), &path).unwrap();
        let mut e = entry("a", "sub-1", Split::Train);
        e.n_slices = 4;
        assert!(matches!(load_volume(&path, &e), Err(Error::Format(_))));
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.vol");
        save_volume(&sample_volume(), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, bytes).unwrap();
        assert!(matches!(read_volume_file(&path), Err(Error::Format(_))));
    }

    #[test]
    fn non_integer_pixels_cannot_be_saved() {
        let dir = tempfile::tempdir().unwrap();
        let s = Slice::new(1, 1, vec![0.5]).unwrap();
        let v = Volume::new("s", "x", Cdr::Healthy, Split::Test, vec![s]).unwrap();
        assert!(matches!(
            save_volume(&v, &dir.path().join("x.vol")),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn manifest_discipline() {
        assert!(DatasetManifest::new(vec![
            entry("a", "s1", Split::Train),
            entry("b", "s1", Split::Train)
        ])
        .is_ok());
        assert!(matches!(
            DatasetManifest::new(vec![
                entry("a", "s1", Split::Train),
                entry("a", "s2", Split::Test)
            ]),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            DatasetManifest::new(vec![
                entry("a", "s1", Split::Train),
                entry("b", "s1", Split::Test)
            ]),
            Err(Error::Format(_))
        ));
        let mut e = entry("a", "s1", Split::Train);
        e.excluded_slices = vec![3];
        assert!(DatasetManifest::new(vec![e]).is_err());
    }

    #[test]
    fn manifest_round_trip_and_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let m = DatasetManifest::new(vec![entry("a", "s1", Split::Validation)]).unwrap();
        m.save(&path).unwrap();
        assert_eq!(DatasetManifest::load(&path).unwrap(), m);
        let text = fs::read_to_string(&path)
            .unwrap()
            .replace("\"format_version\"", "\"bogus\": 1, \"format_version\"");
        fs::write(&path, text).unwrap();
        assert!(matches!(
            DatasetManifest::load(&path),
            Err(Error::Format(_))
        ));
    }
}
