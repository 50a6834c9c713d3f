//! One TOML run configuration covering every pipeline stage.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Cdr, PhantomSpec, PreprocessConfig, Split};
use crate::evaluation::DEFAULT_BINS;
use crate::losses::Objective;
use crate::trainer::{ScaleProfile, TrainConfig};
use crate::{Error, Result};

/// Options of the reconstruct, score and evaluate stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageOptions {
    /// Split whose predictions `reconstruct` writes.
    pub reconstruct_split: Split,
    /// Splits `score` produces tables for.
    pub score_splits: Vec<Split>,
    /// Ratings treated as positive when selecting the score on validation.
    pub selection_positive: Vec<Cdr>,
    pub histogram_bins: usize,
}

impl Default for StageOptions {
    fn default() -> Self {
        Self {
            reconstruct_split: Split::Test,
            score_splits: vec![Split::Validation, Split::Test],
            selection_positive: vec![Cdr::VeryMild, Cdr::Mild, Cdr::Moderate],
            histogram_bins: DEFAULT_BINS,
        }
    }
}

/// Input locations that override the run-directory defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Dataset manifest; defaults to `<out>/data/manifest.json`.
    pub manifest: Option<PathBuf>,
    /// Trained checkpoint; defaults to `<out>/train/checkpoint.srck`.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub phantom: PhantomSpec,
    pub preprocess: PreprocessConfig,
    pub train: TrainConfig,
    pub stages: StageOptions,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    /// Desk scale: 64×64 phantoms, every slice kept, small networks.
    pub fn desk() -> Self {
        Self {
            phantom: PhantomSpec::default(),
            preprocess: PreprocessConfig {
                middle_fraction: 1.0,
                ..PreprocessConfig::default()
            },
            train: TrainConfig::desk(Objective::WganGpL1),
            stages: StageOptions::default(),
            paths: PathsConfig::default(),
        }
    }

    /// Full-size training on 176×256 slices padded from the source width.
    pub fn paper() -> Self {
        Self {
            preprocess: PreprocessConfig {
                pad_width: Some(256),
                ..PreprocessConfig::default()
            },
            train: TrainConfig::paper(Objective::WganGpL1),
            ..Self::desk()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        self.train.validate()?;
        if !(self.preprocess.middle_fraction > 0.0 && self.preprocess.middle_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "preprocess.middle_fraction must be in (0, 1], got {}",
                self.preprocess.middle_fraction
            )));
        }
        if self.stages.histogram_bins == 0 {
            return Err(Error::Config("stages.histogram_bins must be >= 1".into()));
        }
        if self
            .stages
            .selection_positive
            .iter()
            .any(|c| c.is_healthy())
        {
            return Err(Error::Config(
                "stages.selection_positive must not contain CDR 0".into(),
            ));
        }
        Ok(())
    }

    /// Seed both the phantom generator and training.
    pub fn set_seed(&mut self, seed: u64) {
        self.phantom.seed = seed;
        self.train.seed = seed;
    }

    /// Apply every assignment in order, then validate the result once, so
    /// interdependent fields can be changed together.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, assignments: &[S]) -> Result<()> {
        let mut updated = self.clone();
        for a in assignments {
            updated.apply_override(a.as_ref())?;
        }
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    /// Apply `dotted.key=value`; the value is read as a TOML literal and
    /// falls back to a bare string. Unknown keys and ill-typed values are
    /// rejected; cross-field validation is left to [`RunConfig::validate`].
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        let key = key.trim();
        let value = parse_literal(raw.trim());
        let mut root = toml::Value::try_from(&*self).expect("run config serializes");
        let mut parts: Vec<&str> = key.split('.').collect();
        let leaf = parts
            .pop()
            .filter(|l| !l.is_empty())
            .ok_or_else(|| Error::Config(format!("empty override key in {assignment:?}")))?;
        let mut table = root.as_table_mut().expect("config is a table");
        for part in parts {
            table = table
                .get_mut(part)
                .and_then(toml::Value::as_table_mut)
                .ok_or_else(|| {
                    Error::Config(format!("unknown config section {part:?} in {key:?}"))
                })?;
        }
        table.insert(leaf.to_string(), value);
        let updated: Self = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("override {key}: {e}")))?;
        *self = updated;
        Ok(())
    }

    /// Switch objective, keeping the profile's other settings.
    pub fn set_objective(&mut self, objective: Objective) {
        let fresh = match self.train.profile {
            ScaleProfile::Desk => TrainConfig::desk(objective),
            ScaleProfile::Paper => TrainConfig::paper(objective),
        };
        self.train.loss.objective = objective;
        self.train.steps = fresh.steps;
        self.train.batch_size = fresh.batch_size;
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    #[derive(Deserialize)]
    struct Probe {
        v: toml::Value,
    }
    toml::from_str::<Probe>(&format!("v = {raw}"))
        .map(|p| p.v)
        .unwrap_or_else(|_| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        for cfg in [RunConfig::desk(), RunConfig::paper()] {
            assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        }
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = RunConfig::from_toml("[train]\nsteps = 12\n").unwrap();
        assert_eq!(cfg.train.steps, 12);
        assert_eq!(cfg.phantom, PhantomSpec::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(
            RunConfig::from_toml("[train]\nstepz = 12\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::from_toml("[bogus]\nx = 1\n"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn overrides() {
        let mut cfg = RunConfig::desk();
        cfg.apply_override("train.steps=7").unwrap();
        cfg.apply_override("train.loss.objective=dice").unwrap();
        cfg.apply_override("phantom.slice_size=[32, 32]").unwrap();
        cfg.apply_override("stages.reconstruct_split=validation")
            .unwrap();
        cfg.apply_override("paths.manifest=/tmp/x/manifest.json")
            .unwrap();
        assert_eq!(cfg.train.steps, 7);
        assert_eq!(cfg.train.loss.objective, Objective::Dice);
        assert_eq!(cfg.phantom.slice_size, (32, 32));
        assert_eq!(cfg.stages.reconstruct_split, Split::Validation);
        assert_eq!(
            cfg.paths.manifest,
            Some(PathBuf::from("/tmp/x/manifest.json"))
        );

        assert!(cfg.apply_override("train.nope=1").is_err());
        assert!(cfg.apply_override("nope.steps=1").is_err());
        assert!(cfg.apply_override("train.steps").is_err());
        assert!(cfg.apply_override("train.steps=\"many\"").is_err());
        assert!(cfg
            .apply_overrides(&["train.steps=3", "train.steps=0"])
            .is_err());
        assert_eq!(
            cfg.train.steps, 7,
            "failed overrides leave the config untouched"
        );
        cfg.apply_overrides(&[
            "phantom.n_healthy=5",
            "phantom.validation_healthy=2",
            "phantom.test_healthy=2",
        ])
        .unwrap();
        assert_eq!(cfg.phantom.n_healthy, 5);
    }
}
