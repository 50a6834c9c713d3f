//! The five pipeline stages over a run directory.
//!
//! ```text
//! <out>/data/          manifest.json, volumes/   (synth)
//! <out>/train/         checkpoint.srck, log.jsonl (train)
//! <out>/reconstruct/   <split>/<scan>.vol, .png   (reconstruct)
//! <out>/scores/        <split>.csv               (score)
//! <out>/report/        report.json               (evaluate)
//! ```
//!
//! Every stage echoes the resolved configuration into its directory and
//! refuses to replace existing outputs unless asked to.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::GrayImage;
use log::{info, warn};

use crate::config::RunConfig;
use crate::data::{generate_phantoms, write_volume_file, Dataset, DatasetManifest, Slice, Split};
use crate::evaluation::{evaluate_staged, EvalReport};
use crate::nets::{Checkpoint, Generator};
use crate::scoring::{load_score_table, save_score_table, score_scan, select_score, ScoreRecord};
use crate::trainer::{train, JsonLinesLog, Reconstruction, StepLog, TrainObserver};
use crate::windowing::{Stack, STACK_DEPTH};
use crate::{trainer, Error, Result};

pub const CONFIG_ECHO: &str = "config.toml";
pub const CHECKPOINT_FILE: &str = "checkpoint.srck";
pub const TRAIN_LOG: &str = "log.jsonl";
pub const REPORT_FILE: &str = "report.json";

pub fn data_dir(out: &Path) -> PathBuf {
    out.join("data")
}

pub fn train_dir(out: &Path) -> PathBuf {
    out.join("train")
}

pub fn reconstruct_dir(out: &Path) -> PathBuf {
    out.join("reconstruct")
}

pub fn scores_dir(out: &Path) -> PathBuf {
    out.join("scores")
}

pub fn report_dir(out: &Path) -> PathBuf {
    out.join("report")
}

pub fn score_table_path(out: &Path, split: Split) -> PathBuf {
    scores_dir(out).join(format!("{split}.csv"))
}

pub fn manifest_path(cfg: &RunConfig, out: &Path) -> PathBuf {
    cfg.paths
        .manifest
        .clone()
        .unwrap_or_else(|| data_dir(out).join(DatasetManifest::FILE_NAME))
}

pub fn checkpoint_path(cfg: &RunConfig, out: &Path) -> PathBuf {
    cfg.paths
        .checkpoint
        .clone()
        .unwrap_or_else(|| train_dir(out).join(CHECKPOINT_FILE))
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingInput(path.to_path_buf()))
    }
}

/// Create a fresh stage directory, clearing an existing one only when
/// `overwrite` is set.
fn fresh_dir(dir: &Path, overwrite: bool) -> Result<()> {
    let occupied = dir
        .read_dir()
        .map(|mut entries| entries.next().is_some())
        .unwrap_or(false);
    if occupied {
        if !overwrite {
            return Err(Error::OutputExists(dir.to_path_buf()));
        }
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn echo_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let path = dir.join(CONFIG_ECHO);
    fs::write(&path, cfg.to_toml()).map_err(|e| Error::io(&path, e))
}

fn open_dataset(cfg: &RunConfig, out: &Path) -> Result<Dataset> {
    let path = manifest_path(cfg, out);
    require(&path)?;
    Dataset::open(&path)
}

/// Generate the phantom dataset.
pub fn synth(cfg: &RunConfig, out: &Path, overwrite: bool) -> Result<DatasetManifest> {
    cfg.phantom.validate()?;
    let dir = data_dir(out);
    fresh_dir(&dir, overwrite)?;
    let manifest = generate_phantoms(&cfg.phantom, &dir)?;
    echo_config(cfg, &dir)?;
    info!(
        "wrote {} scans to {}",
        manifest.entries.len(),
        dir.display()
    );
    Ok(manifest)
}

/// Writes the step log and every checkpoint into the train directory.
struct StageObserver {
    log: JsonLinesLog<BufWriter<File>>,
    dir: PathBuf,
    final_step: u64,
}

impl TrainObserver for StageObserver {
    fn on_step(&mut self, log: &StepLog) -> Result<()> {
        if log.step.is_multiple_of(100) {
            info!(
                "step {} generator loss {:.5} l1 {:.5}",
                log.step, log.generator_loss, log.l1
            );
        }
        self.log.on_step(log)
    }

    fn on_checkpoint(&mut self, checkpoint: &Checkpoint) -> Result<()> {
        let name = if checkpoint.step == self.final_step {
            CHECKPOINT_FILE.to_string()
        } else {
            format!("checkpoint-{:08}.srck", checkpoint.step)
        };
        checkpoint.save(&self.dir.join(name))
    }
}

/// Train on the training split. On divergence the last good checkpoint is
/// kept as `diverged-last-good.srck` before the error is returned.
pub fn train_stage(cfg: &RunConfig, out: &Path, overwrite: bool) -> Result<Checkpoint> {
    cfg.train.validate()?;
    let dataset = open_dataset(cfg, out)?;
    let dir = train_dir(out);
    fresh_dir(&dir, overwrite)?;
    echo_config(cfg, &dir)?;
    let log_path = dir.join(TRAIN_LOG);
    let log_file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut observer = StageObserver {
        log: JsonLinesLog::new(BufWriter::new(log_file)),
        dir: dir.clone(),
        final_step: cfg.train.steps,
    };
    match train(&cfg.train, &dataset, &cfg.preprocess, &mut observer) {
        Err(Error::Divergence {
            step,
            reason,
            last_good,
        }) => {
            if let Some(good) = &last_good {
                good.save(&dir.join("diverged-last-good.srck"))?;
            }
            Err(Error::Divergence {
                step,
                reason,
                last_good,
            })
        }
        other => other,
    }
}

fn load_generator(cfg: &RunConfig, out: &Path) -> Result<Generator> {
    let path = checkpoint_path(cfg, out);
    require(&path)?;
    Checkpoint::load(&path)?.generator()
}

/// Reconstruct every scan of one split with the trained generator.
fn reconstruct_split(
    generator: &Generator,
    dataset: &Dataset,
    cfg: &RunConfig,
    split: Split,
) -> Result<Vec<(crate::data::Cdr, Reconstruction)>> {
    dataset
        .manifest()
        .split(split)
        .map(|entry| {
            let volume = dataset.load_preprocessed(entry, &cfg.preprocess)?;
            Ok((entry.cdr, trainer::reconstruct_volume(generator, &volume)?))
        })
        .collect()
}

fn quantize(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round())
        .collect()
}

fn stack_slices(stack: &Stack) -> Result<Vec<Slice>> {
    let (h, w) = stack.dims();
    (0..STACK_DEPTH)
        .map(|k| Slice::new(h, w, quantize(stack.channel(k))))
        .collect()
}

/// Rows are the three channels; columns are input | target | prediction.
fn montage(input: &Stack, target: &Stack, prediction: &Stack) -> GrayImage {
    let (h, w) = input.dims();
    let mut img = GrayImage::new((3 * w) as u32, (STACK_DEPTH * h) as u32);
    for (col, stack) in [input, target, prediction].into_iter().enumerate() {
        for k in 0..STACK_DEPTH {
            for (i, v) in stack.channel(k).iter().enumerate() {
                let (y, x) = (i / w, i % w);
                let px = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                img.put_pixel((col * w + x) as u32, (k * h + y) as u32, image::Luma([px]));
            }
        }
    }
    img
}

/// Write predicted stacks (window-major, three slices per window, values
/// scaled to 0..65535) and a montage of the middle window per scan.
pub fn reconstruct(cfg: &RunConfig, out: &Path, overwrite: bool) -> Result<Vec<PathBuf>> {
    let dataset = open_dataset(cfg, out)?;
    let generator = load_generator(cfg, out)?;
    let split = cfg.stages.reconstruct_split;
    let dir = reconstruct_dir(out).join(split.as_str());
    fresh_dir(&dir, overwrite)?;
    echo_config(cfg, &dir)?;
    let mut written = Vec::new();
    for (_, r) in reconstruct_split(&generator, &dataset, cfg, split)? {
        if r.predictions.is_empty() {
            continue;
        }
        let slices = r
            .predictions
            .iter()
            .map(stack_slices)
            .collect::<Result<Vec<_>>>()?
            .concat();
        let path = dir.join(format!("{}.vol", r.scan_id));
        write_volume_file(&path, &slices)?;
        written.push(path);
        let mid = r.pairs.len() / 2;
        let png = dir.join(format!("{}.png", r.scan_id));
        montage(
            &r.pairs[mid].input,
            &r.pairs[mid].target,
            &r.predictions[mid],
        )
        .save(&png)
        .map_err(|e| Error::Format(format!("{}: {e}", png.display())))?;
    }
    Ok(written)
}

/// Score records of one split; unscorable (too short) scans are skipped
/// with a warning.
pub fn score_records(
    generator: &Generator,
    dataset: &Dataset,
    cfg: &RunConfig,
    split: Split,
) -> Result<Vec<ScoreRecord>> {
    let mut records = Vec::new();
    for (cdr, r) in reconstruct_split(generator, dataset, cfg, split)? {
        if r.predictions.is_empty() {
            warn!("skipping unscorable scan {}", r.scan_id);
            continue;
        }
        let targets: Vec<Stack> = r.pairs.iter().map(|p| p.target.clone()).collect();
        records.push(score_scan(&r.scan_id, cdr, &r.predictions, &targets)?);
    }
    Ok(records)
}

/// Write one score table per configured split.
pub fn score(cfg: &RunConfig, out: &Path, overwrite: bool) -> Result<Vec<PathBuf>> {
    let dataset = open_dataset(cfg, out)?;
    let generator = load_generator(cfg, out)?;
    let dir = scores_dir(out);
    fresh_dir(&dir, overwrite)?;
    echo_config(cfg, &dir)?;
    let mut written = Vec::new();
    for &split in &cfg.stages.score_splits {
        let records = score_records(&generator, &dataset, cfg, split)?;
        let path = score_table_path(out, split);
        save_score_table(&path, &records)?;
        written.push(path);
    }
    Ok(written)
}

/// Select the score on validation, evaluate it on test, write the report.
pub fn evaluate(cfg: &RunConfig, out: &Path, overwrite: bool) -> Result<EvalReport> {
    let validation = score_table_path(out, Split::Validation);
    let test = score_table_path(out, Split::Test);
    require(&validation)?;
    require(&test)?;
    let selection = select_score(
        &load_score_table(&validation)?,
        &cfg.stages.selection_positive,
    )?;
    let report = evaluate_staged(
        &load_score_table(&test)?,
        &selection,
        cfg.stages.histogram_bins,
    )?;
    let dir = report_dir(out);
    fresh_dir(&dir, overwrite)?;
    echo_config(cfg, &dir)?;
    let path = dir.join(REPORT_FILE);
    fs::write(&path, report.to_json()).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

/// All five stages in order.
pub fn run_all(cfg: &RunConfig, out: &Path, overwrite: bool) -> Result<EvalReport> {
    synth(cfg, out, overwrite)?;
    train_stage(cfg, out, overwrite)?;
    reconstruct(cfg, out, overwrite)?;
    score(cfg, out, overwrite)?;
    evaluate(cfg, out, overwrite)
}
