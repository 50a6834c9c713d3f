use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::{load_volume, DatasetManifest, ManifestEntry, PreprocessConfig, Volume};
use crate::Result;

/// A manifest plus the directory its paths are relative to.
///
/// Every volume read goes through [`Dataset::load`], which records the scan
/// id so callers can audit what a stage touched.
#[derive(Debug)]
pub struct Dataset {
    root: PathBuf,
    manifest: DatasetManifest,
    access_log: Mutex<Vec<String>>,
}

impl Dataset {
    pub fn new(root: impl Into<PathBuf>, manifest: DatasetManifest) -> Self {
        Self {
            root: root.into(),
            manifest,
            access_log: Mutex::new(Vec::new()),
        }
    }

    /// Open `manifest.json`; volume paths resolve against its directory.
    pub fn open(manifest_path: &Path) -> Result<Self> {
        let manifest = DatasetManifest::load(manifest_path)?;
        let root = manifest_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        Ok(Self::new(root, manifest))
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn load(&self, entry: &ManifestEntry) -> Result<Volume> {
        self.access_log
            .lock()
            .expect("access log poisoned")
            .push(entry.scan_id.clone());
        load_volume(&self.root.join(&entry.path), entry)
    }

    pub fn load_preprocessed(
        &self,
        entry: &ManifestEntry,
        cfg: &PreprocessConfig,
    ) -> Result<Volume> {
        entry.preprocess(&self.load(entry)?, cfg)
    }

    /// Scan ids read so far, in order.
    pub fn access_log(&self) -> Vec<String> {
        self.access_log.lock().expect("access log poisoned").clone()
    }
}
