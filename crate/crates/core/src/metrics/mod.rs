//! Evaluation statistics for reward models and annotation panels.

mod iaa;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use iaa::{
    band, fleiss_kappa, iaa_report, krippendorff_alpha, raw_agreement, Coefficient, IaaReport,
};

use crate::dataflow::{PairRelation, PreferencePair, Split};
use crate::losses::RewardTable;
use crate::{Error, Result};

/// Fraction of win pairs whose winner scores strictly higher.
pub fn pairwise_accuracy(rewards: &RewardTable, pairs: &[PreferencePair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("no pairs to score".into()));
    }
    let mut correct = 0usize;
    for p in pairs {
        if p.relation != PairRelation::Win {
            return Err(Error::Invalid(format!(
                "accuracy needs win pairs, got a tie ({}, {})",
                p.id_i, p.id_j
            )));
        }
        if rewards.get(&p.id_i)? > rewards.get(&p.id_j)? {
            correct += 1;
        }
    }
    Ok(correct as f64 / pairs.len() as f64)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population variance; zero for fewer than two values.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

/// `mean(r | pass) - mean(r | fail)`.
pub fn reward_margin(rewards: &[f64], pass: &[bool]) -> Result<f64> {
    if rewards.len() != pass.len() {
        return Err(Error::Shape(format!(
            "{} rewards for {} labels",
            rewards.len(),
            pass.len()
        )));
    }
    let (p, f): (Vec<(f64, bool)>, Vec<(f64, bool)>) =
        rewards.iter().copied().zip(pass.iter().copied()).partition(|x| x.1);
    if p.is_empty() || f.is_empty() {
        return Err(Error::Empty("margin needs both pass and fail samples".into()));
    }
    let m = |v: &[(f64, bool)]| v.iter().map(|x| x.0).sum::<f64>() / v.len() as f64;
    Ok(m(&p) - m(&f))
}

/// `A_i = (r_i - mean) / popstd`, all zero when `popstd < epsilon`.
pub fn group_advantage(rewards: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::Invalid(format!(
            "group of {} cannot be standardized",
            rewards.len()
        )));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite("group rewards".into()));
    }
    let m = mean(rewards);
    let sd = variance(rewards).sqrt();
    if sd < epsilon {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - m) / sd).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvantageReport {
    pub groups: Vec<Vec<f64>>,
    /// Mean over groups of `|A|` at the highest reward.
    pub top_abs_mean: f64,
    pub histogram: Vec<(f64, usize)>,
}

/// Standardize each group and summarize the top-ranked member.
pub fn advantage_report(groups: &[Vec<f64>], epsilon: f64) -> Result<AdvantageReport> {
    if groups.is_empty() {
        return Err(Error::Empty("no groups".into()));
    }
    let mut adv = Vec::with_capacity(groups.len());
    let mut top = 0.0;
    for g in groups {
        let a = group_advantage(g, epsilon)?;
        let best = (0..g.len())
            .max_by(|&x, &y| g[x].total_cmp(&g[y]).then(y.cmp(&x)))
            .unwrap();
        top += a[best].abs();
        adv.push(a);
    }
    let all: Vec<f64> = adv.iter().flatten().copied().collect();
    Ok(AdvantageReport {
        top_abs_mean: top / groups.len() as f64,
        histogram: histogram(&all, 20)?,
        groups: adv,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    /// Unique quantized scores over `n`.
    pub distinct_ratio: f64,
    /// Share of the most common quantized score.
    pub mode_mass: f64,
    /// Natural-log entropy of the quantized histogram.
    pub entropy: f64,
}

pub const CLUSTER_QUANTUM: f64 = 1e-6;

pub fn clustering_stats(scores: &[f64], quantum: f64) -> Result<ClusterStats> {
    if scores.is_empty() {
        return Err(Error::Empty("no scores".into()));
    }
    if !(quantum > 0.0) {
        return Err(Error::Invalid(format!("quantum {quantum}")));
    }
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for s in scores {
        if !s.is_finite() {
            return Err(Error::NonFinite("scores".into()));
        }
        *counts.entry((s / quantum).round() as i64).or_default() += 1;
    }
    let n = scores.len() as f64;
    let mode = *counts.values().max().unwrap() as f64;
    let entropy = counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum::<f64>();
    Ok(ClusterStats {
        distinct_ratio: counts.len() as f64 / n,
        mode_mass: mode / n,
        entropy: entropy.max(0.0),
    })
}

/// Equal-width bins over the value range as `(bin_left, count)`.
pub fn histogram(values: &[f64], bins: usize) -> Result<Vec<(f64, usize)>> {
    if values.is_empty() || bins == 0 {
        return Err(Error::Empty("histogram needs values and bins".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::NonFinite("histogram values".into()));
    }
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for v in values {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| (lo + k as f64 * width, c))
        .collect())
}

pub fn write_histogram_csv(path: &Path, hist: &[(f64, usize)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["bin_left", "count"]).map_err(|e| csv_err(path, e))?;
    for (left, c) in hist {
        w.write_record([left.to_string(), c.to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Record {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("{other:?}"),
        },
    }
}

/// Statistics of one evaluation split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub split: Split,
    pub samples: usize,
    pub pairs: usize,
    pub accuracy: f64,
    pub margin: f64,
    pub clustering: ClusterStats,
    /// Population variance of pass-sample scores.
    pub positive_score_variance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub id: SplitReport,
    pub ood: Option<SplitReport>,
}

impl EvalReport {
    pub const CSV_HEADER: [&'static str; 9] = [
        "accuracy_id",
        "accuracy_ood",
        "margin_id",
        "margin_ood",
        "positive_score_variance_id",
        "positive_score_variance_ood",
        "distinct_ratio_id",
        "mode_mass_id",
        "entropy_id",
    ];

    pub fn csv_row(&self) -> Vec<String> {
        let ood = |f: fn(&SplitReport) -> f64| self.ood.as_ref().map_or(String::new(), |r| f(r).to_string());
        vec![
            self.id.accuracy.to_string(),
            ood(|r| r.accuracy),
            self.id.margin.to_string(),
            ood(|r| r.margin),
            self.id.positive_score_variance.to_string(),
            ood(|r| r.positive_score_variance),
            self.id.clustering.distinct_ratio.to_string(),
            self.id.clustering.mode_mass.to_string(),
            self.id.clustering.entropy.to_string(),
        ]
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(Self::CSV_HEADER).map_err(|e| csv_err(path, e))?;
        w.write_record(self.csv_row()).map_err(|e| csv_err(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// Pretty JSON with a trailing newline.
pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let s = serde_json::to_string_pretty(value).expect("serializable value");
    f.write_all(s.as_bytes())
        .and_then(|_| f.write_all(b"\n"))
        .map_err(|e| Error::io(path, e))
}
