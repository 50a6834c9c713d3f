//! ROC analysis, exact AUC, CDR-stratified comparisons and score histograms.

use std::cmp::Ordering;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::Cdr;
use crate::scoring::{ScoreRecord, ScoreSelection};
use crate::{Error, Result};

/// Default histogram resolution for score distributions.
pub const DEFAULT_BINS: usize = 30;

/// One vertex of an ROC trace. `threshold` is the smallest score still
/// called positive at this vertex (`+inf` at the origin).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
}

fn class_sizes(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Evaluation(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Evaluation(format!("non-finite score {bad}")));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Evaluation(format!(
            "ROC needs both classes, got {n_neg} negatives and {n_pos} positives"
        )));
    }
    Ok((n_neg, n_pos))
}

/// ROC trace over distinct thresholds in descending order; tied scores form
/// a single vertex. `labels[i]` is true for positives.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<RocPoint>> {
    let (n_neg, n_pos) = class_sizes(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
            threshold,
        });
    }
    Ok(points)
}

/// Mann–Whitney AUC: `(#(pos > neg) + ½·#(pos = neg)) / (n_pos·n_neg)`.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (n_neg, n_pos) = class_sizes(scores, labels)?;
    // Rank-sum form of the pair count: sort once, walk tie groups.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut negatives_below = 0usize;
    let mut twice_wins = 0u128;
    let mut i = 0;
    while i < order.len() {
        let value = scores[order[i]];
        let (mut pos, mut neg) = (0usize, 0usize);
        while i < order.len() && scores[order[i]] == value {
            if labels[order[i]] {
                pos += 1;
            } else {
                neg += 1;
            }
            i += 1;
        }
        twice_wins += (pos as u128) * (2 * negatives_below as u128 + neg as u128);
        negatives_below += neg;
    }
    Ok(twice_wins as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// Trapezoidal area under an ROC trace.
pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub name: String,
    pub negative: Vec<Cdr>,
    pub positive: Vec<Cdr>,
    pub n_neg: usize,
    pub n_pos: usize,
    pub auc: f64,
    pub roc: Vec<RocPoint>,
}

/// Per-CDR counts over shared bin edges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` ascending edges; the last bin is closed on the right.
    pub edges: Vec<f64>,
    pub counts: Vec<(Cdr, Vec<usize>)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub selection: ScoreSelection,
    pub comparisons: Vec<Comparison>,
    pub distributions: Histogram,
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn comparison(&self, name: &str) -> Option<&Comparison> {
        self.comparisons.iter().find(|c| c.name == name)
    }

    /// Pretty JSON with a trailing newline; byte-stable for equal reports.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

fn compare(
    records: &[ScoreRecord],
    selection: &ScoreSelection,
    name: &str,
    positive: &[Cdr],
) -> Result<Comparison> {
    let chosen: Vec<&ScoreRecord> = records
        .iter()
        .filter(|r| r.cdr.is_healthy() || positive.contains(&r.cdr))
        .collect();
    let scores: Vec<f64> = chosen
        .iter()
        .map(|r| r.get(selection.metric, selection.aggregation))
        .collect();
    let labels: Vec<bool> = chosen.iter().map(|r| !r.cdr.is_healthy()).collect();
    let n_pos = labels.iter().filter(|&&l| l).count();
    Ok(Comparison {
        name: name.to_string(),
        negative: vec![Cdr::Healthy],
        positive: positive.to_vec(),
        n_neg: labels.len() - n_pos,
        n_pos,
        auc: auc(&scores, &labels)?,
        roc: roc_curve(&scores, &labels)?,
    })
}

/// CDR 0 against all other ratings, then against 0.5, 1 and 2 separately,
/// using the selected score. Comparisons whose positive class is absent are
/// skipped with a warning.
pub fn evaluate_staged(
    records: &[ScoreRecord],
    selection: &ScoreSelection,
    bins: usize,
) -> Result<EvalReport> {
    if !records.iter().any(|r| r.cdr.is_healthy()) {
        return Err(Error::Evaluation(
            "no CDR 0 scans to compare against".into(),
        ));
    }
    let mut stages = vec![(
        "cdr0_vs_all".to_string(),
        vec![Cdr::VeryMild, Cdr::Mild, Cdr::Moderate],
    )];
    for c in &Cdr::ALL[1..] {
        stages.push((format!("cdr0_vs_cdr{c}"), vec![*c]));
    }
    let mut comparisons = Vec::new();
    let mut warnings = Vec::new();
    for (name, positive) in stages {
        if !records.iter().any(|r| positive.contains(&r.cdr)) {
            let msg = format!("{name}: no scans with CDR in {positive:?}; comparison skipped");
            warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        comparisons.push(compare(records, selection, &name, &positive)?);
    }
    Ok(EvalReport {
        selection: selection.clone(),
        comparisons,
        distributions: export_distributions(records, selection, bins)?,
        warnings,
    })
}

/// Histogram of the selected score per CDR over the pooled score range.
pub fn export_distributions(
    records: &[ScoreRecord],
    selection: &ScoreSelection,
    bins: usize,
) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::Evaluation("histogram needs at least one bin".into()));
    }
    let value = |r: &ScoreRecord| r.get(selection.metric, selection.aggregation);
    let (lo, hi) = records
        .iter()
        .map(value)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    let (lo, hi) = if records.is_empty() {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    };
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect();
    let mut counts = Vec::new();
    for cdr in Cdr::ALL {
        let mut c = vec![0usize; bins];
        let mut any = false;
        for r in records.iter().filter(|r| r.cdr == cdr) {
            any = true;
            let idx = ((value(r) - lo) / width).floor() as usize;
            c[idx.min(bins - 1)] += 1;
        }
        if any {
            counts.push((cdr, c));
        }
    }
    Ok(Histogram { edges, counts })
}

/// Orders AUC values so that NaN never wins; used by selection.
pub(crate) fn cmp_auc(a: f64, b: f64) -> Ordering {
    a.total_cmp(&b)
}
