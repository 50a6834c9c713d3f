//! The 8-score anomaly bank per scan and validation-based score selection.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Cdr;
use crate::evaluation::{auc, cmp_auc};
use crate::losses::{l1_loss, l2_loss, soft_dice_loss, ssim_loss};
use crate::windowing::Stack;
use crate::{Error, Result};

/// Listed in tie-break order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    L2,
    L1,
    Ssim,
    Dice,
}

/// Listed in tie-break order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Average,
    Maximum,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::L2, Metric::L1, Metric::Ssim, Metric::Dice];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::L2 => "l2",
            Metric::L1 => "l1",
            Metric::Ssim => "ssim",
            Metric::Dice => "dice",
        }
    }

    /// Loss orientation: 0 for a perfect reconstruction, higher is worse.
    pub fn loss(self, prediction: &Stack, target: &Stack) -> Result<f64> {
        match self {
            Metric::L2 => l2_loss(prediction, target),
            Metric::L1 => l1_loss(prediction, target),
            Metric::Ssim => ssim_loss(prediction, target),
            Metric::Dice => soft_dice_loss(prediction, target),
        }
    }
}

impl Aggregation {
    pub const ALL: [Aggregation; 2] = [Aggregation::Average, Aggregation::Maximum];

    pub fn as_str(self) -> &'static str {
        match self {
            Aggregation::Average => "average",
            Aggregation::Maximum => "maximum",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown metric {s:?}")))
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Aggregation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown aggregation {s:?}")))
    }
}

/// The eight (metric, aggregation) pairs in tie-break order.
pub fn score_keys() -> impl Iterator<Item = (Metric, Aggregation)> {
    Metric::ALL
        .into_iter()
        .flat_map(|m| Aggregation::ALL.into_iter().map(move |a| (m, a)))
}

fn key_index(metric: Metric, aggregation: Aggregation) -> usize {
    metric as usize * 2 + aggregation as usize
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRecord {
    pub scan_id: String,
    pub cdr: Cdr,
    scores: [f64; 8],
}

impl ScoreRecord {
    /// `scores` in [`score_keys`] order; every entry finite and non-negative.
    pub fn new(scan_id: impl Into<String>, cdr: Cdr, scores: [f64; 8]) -> Result<Self> {
        let scan_id = scan_id.into();
        if let Some(bad) = scores.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Scoring(format!(
                "scan {scan_id}: scores must be finite and >= 0, got {bad}"
            )));
        }
        Ok(Self {
            scan_id,
            cdr,
            scores,
        })
    }

    #[cfg(test)]
    pub(crate) fn uniform(scan_id: impl Into<String>, cdr: Cdr, value: f64) -> Self {
        Self::new(scan_id, cdr, [value; 8]).unwrap()
    }

    pub fn get(&self, metric: Metric, aggregation: Aggregation) -> f64 {
        self.scores[key_index(metric, aggregation)]
    }

    pub fn scores(&self) -> &[f64; 8] {
        &self.scores
    }
}

/// Score bank of one scan from predictions aligned with their targets.
pub fn score_scan(
    scan_id: &str,
    cdr: Cdr,
    predictions: &[Stack],
    targets: &[Stack],
) -> Result<ScoreRecord> {
    if predictions.is_empty() {
        return Err(Error::Scoring(format!(
            "scan {scan_id} has no windows to score"
        )));
    }
    if predictions.len() != targets.len() {
        return Err(Error::Scoring(format!(
            "scan {scan_id}: {} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let mut scores = [0.0; 8];
    for metric in Metric::ALL {
        let losses = predictions
            .iter()
            .zip(targets)
            .map(|(p, t)| metric.loss(p, t))
            .collect::<Result<Vec<f64>>>()?;
        // Rounding can push a perfect reconstruction a hair below zero.
        let losses: Vec<f64> = losses.into_iter().map(|v| v.max(0.0)).collect();
        scores[key_index(metric, Aggregation::Average)] =
            losses.iter().sum::<f64>() / losses.len() as f64;
        scores[key_index(metric, Aggregation::Maximum)] =
            losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    }
    ScoreRecord::new(scan_id, cdr, scores)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSelection {
    pub metric: Metric,
    pub aggregation: Aggregation,
    pub validation_auc: f64,
}

/// Pick the score with the highest validation AUC of CDR 0 against the
/// ratings in `positive`. Ties keep the earliest key in tie-break order.
pub fn select_score(records: &[ScoreRecord], positive: &[Cdr]) -> Result<ScoreSelection> {
    let used: Vec<&ScoreRecord> = records
        .iter()
        .filter(|r| r.cdr.is_healthy() || positive.contains(&r.cdr))
        .collect();
    let labels: Vec<bool> = used.iter().map(|r| !r.cdr.is_healthy()).collect();
    if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
        return Err(Error::Selection(
            "validation records need CDR 0 scans and at least one positive scan".into(),
        ));
    }
    let mut best: Option<ScoreSelection> = None;
    for (metric, aggregation) in score_keys() {
        let scores: Vec<f64> = used.iter().map(|r| r.get(metric, aggregation)).collect();
        let a = auc(&scores, &labels)?;
        if best
            .as_ref()
            .is_none_or(|b| cmp_auc(a, b.validation_auc).is_gt())
        {
            best = Some(ScoreSelection {
                metric,
                aggregation,
                validation_auc: a,
            });
        }
    }
    Ok(best.expect("eight candidate scores"))
}

/// Column header of the score table.
pub fn score_table_header() -> String {
    let mut cols = vec!["scan_id".to_string(), "cdr".to_string()];
    cols.extend(score_keys().map(|(m, a)| format!("{m}_{a}")));
    cols.join(",")
}

/// Comma-separated score table with a fixed header; floats use the shortest
/// round-trip representation.
pub fn write_score_table(records: &[ScoreRecord]) -> String {
    let mut out = score_table_header();
    out.push('\n');
    for r in records {
        out.push_str(&r.scan_id);
        out.push(',');
        out.push_str(&r.cdr.to_string());
        for v in r.scores {
            out.push(',');
            out.push_str(&format!("{v:?}"));
        }
        out.push('\n');
    }
    out
}

pub fn parse_score_table(text: &str) -> Result<Vec<ScoreRecord>> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != score_table_header() {
        return Err(Error::Format(format!(
            "unexpected score table header {header:?}"
        )));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let bad = |msg: String| Error::Format(format!("score table line {}: {msg}", i + 2));
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 10 {
                return Err(bad(format!("expected 10 fields, got {}", fields.len())));
            }
            let cdr: Cdr = fields[1].parse().map_err(|e: Error| bad(e.to_string()))?;
            let mut scores = [0.0; 8];
            for (s, f) in scores.iter_mut().zip(&fields[2..]) {
                *s = f.parse().map_err(|_| bad(format!("bad number {f:?}")))?;
            }
            ScoreRecord::new(fields[0], cdr, scores).map_err(|e| bad(e.to_string()))
        })
        .collect()
}

pub fn save_score_table(path: &Path, records: &[ScoreRecord]) -> Result<()> {
    fs::write(path, write_score_table(records)).map_err(|e| Error::io(path, e))
}

pub fn load_score_table(path: &Path) -> Result<Vec<ScoreRecord>> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_score_table(&text)
}
