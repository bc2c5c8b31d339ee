use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train, TrainConfig};
use crate::dataflow::{Corpus, PreferencePair};
use crate::losses::LossConfig;
use crate::metrics::{csv_err, EvalReport};
use crate::{Error, Result};

/// One row of a comparison: a training setup and the pair pool it sees.
#[derive(Clone, Debug)]
pub struct Variant {
    pub name: String,
    pub config: TrainConfig,
    pub pairs: Vec<PreferencePair>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub variant: String,
    pub seed: u64,
    pub report: Option<EvalReport>,
    pub final_loss: Option<f64>,
    pub error: Option<String>,
}

/// Mean and population standard deviation over successful seeds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    fn of(xs: &[f64]) -> Option<Stat> {
        if xs.is_empty() {
            return None;
        }
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64;
        Some(Stat {
            mean,
            std: var.sqrt(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub variant: String,
    pub succeeded: usize,
    pub acc_id: Option<Stat>,
    pub acc_ood: Option<Stat>,
    pub margin: Option<Stat>,
    pub pos_variance: Option<Stat>,
    pub distinct_ratio: Option<Stat>,
    pub mode_mass: Option<Stat>,
    pub entropy: Option<Stat>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub cells: Vec<CellOutcome>,
}

impl Comparison {
    /// Outcomes of one variant in seed order.
    pub fn cells_of<'a>(&'a self, variant: &'a str) -> impl Iterator<Item = &'a CellOutcome> + 'a {
        self.cells.iter().filter(move |c| c.variant == variant)
    }

    /// `variant, acc_id, acc_ood, margin, pos_variance` means, one row per variant.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["variant", "acc_id", "acc_ood", "margin", "pos_variance"])
            .map_err(|e| csv_err(path, e))?;
        let cell = |s: Option<Stat>| s.map_or(String::new(), |s| s.mean.to_string());
        for r in &self.rows {
            w.write_record([
                r.variant.clone(),
                cell(r.acc_id),
                cell(r.acc_ood),
                cell(r.margin),
                cell(r.pos_variance),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Train every variant under every seed on the same corpus. A failing cell is
/// recorded in the table instead of aborting it.
pub fn compare_variants(variants: &[Variant], seeds: &[u64], corpus: &Corpus) -> Result<Comparison> {
    if variants.is_empty() || seeds.is_empty() {
        return Err(Error::Empty("comparison needs variants and seeds".into()));
    }
    let jobs: Vec<(&Variant, u64)> = variants
        .iter()
        .flat_map(|v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let cells: Vec<CellOutcome> = jobs
        .par_iter()
        .map(|(v, s)| {
            let mut cfg = v.config.clone();
            cfg.seed = *s;
            match train(&cfg, corpus, &v.pairs) {
                Ok((_, h)) => CellOutcome {
                    variant: v.name.clone(),
                    seed: *s,
                    report: h.final_tick().map(|t| t.report.clone()),
                    final_loss: h.final_loss(),
                    error: None,
                },
                Err(e) => CellOutcome {
                    variant: v.name.clone(),
                    seed: *s,
                    report: None,
                    final_loss: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let rows = variants
        .iter()
        .map(|v| {
            let reports: Vec<&EvalReport> = cells
                .iter()
                .filter(|c| c.variant == v.name)
                .filter_map(|c| c.report.as_ref())
                .collect();
            let stat = |f: &dyn Fn(&EvalReport) -> Option<f64>| {
                Stat::of(&reports.iter().filter_map(|r| f(r)).collect::<Vec<_>>())
            };
            ComparisonRow {
                variant: v.name.clone(),
                succeeded: reports.len(),
                acc_id: stat(&|r| Some(r.id.accuracy)),
                acc_ood: stat(&|r| r.ood.as_ref().map(|o| o.accuracy)),
                margin: stat(&|r| Some(r.id.margin)),
                pos_variance: stat(&|r| Some(r.id.positive_score_variance)),
                distinct_ratio: stat(&|r| Some(r.id.clustering.distinct_ratio)),
                mode_mass: stat(&|r| Some(r.id.clustering.mode_mass)),
                entropy: stat(&|r| Some(r.id.clustering.entropy)),
            }
        })
        .collect();
    Ok(Comparison { rows, cells })
}

/// Compare loss functions on one shared pair pool; each variant is named by
/// its loss label.
pub fn compare_losses(
    base: &TrainConfig,
    losses: &[LossConfig],
    seeds: &[u64],
    corpus: &Corpus,
    pairs: &[PreferencePair],
) -> Result<Comparison> {
    let variants: Vec<Variant> = losses
        .iter()
        .map(|l| Variant {
            name: l.label(),
            config: TrainConfig {
                loss: l.clone(),
                ..base.clone()
            },
            pairs: pairs.to_vec(),
        })
        .collect();
    compare_variants(&variants, seeds, corpus)
}
