use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataflow::AnnotationRecord;
use crate::{Error, Result};

/// An agreement statistic, or the reason it is undefined for this input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coefficient {
    Value(f64),
    Degenerate(String),
}

impl Coefficient {
    pub fn value(&self) -> Option<f64> {
        match self {
            Coefficient::Value(v) => Some(*v),
            Coefficient::Degenerate(_) => None,
        }
    }

    pub fn band(&self) -> &'static str {
        match self {
            Coefficient::Value(v) => band(*v),
            Coefficient::Degenerate(_) => "Degenerate",
        }
    }
}

/// Conventional reading of a chance-corrected agreement value.
pub fn band(x: f64) -> &'static str {
    if x < 0.0 {
        "Poor"
    } else if x <= 0.2 {
        "Slight"
    } else if x <= 0.4 {
        "Fair"
    } else if x <= 0.6 {
        "Moderate"
    } else if x <= 0.8 {
        "Substantial"
    } else {
        "Almost perfect"
    }
}

/// Fleiss' kappa from an items × categories count matrix.
pub fn fleiss_kappa(counts: &[Vec<usize>]) -> Result<Coefficient> {
    let Some(first) = counts.first() else {
        return Err(Error::Empty("no items".into()));
    };
    let cats = first.len();
    if cats < 2 {
        return Err(Error::Invalid(format!("{cats} categories, need at least 2")));
    }
    let n: usize = first.iter().sum();
    if n < 2 {
        return Err(Error::Degenerate(format!("{n} raters per item, need at least 2")));
    }
    for (i, row) in counts.iter().enumerate() {
        if row.len() != cats {
            return Err(Error::Shape(format!("item {i} has {} categories", row.len())));
        }
        let s: usize = row.iter().sum();
        if s != n {
            return Err(Error::Invalid(format!(
                "item {i} has {s} ratings, item 0 has {n}"
            )));
        }
    }
    let items = counts.len() as f64;
    let nf = n as f64;
    let p_bar = counts
        .iter()
        .map(|row| {
            let sq: f64 = row.iter().map(|&c| (c * c) as f64).sum();
            (sq - nf) / (nf * (nf - 1.0))
        })
        .sum::<f64>()
        / items;
    let p_e: f64 = (0..cats)
        .map(|j| {
            let pj = counts.iter().map(|r| r[j] as f64).sum::<f64>() / (items * nf);
            pj * pj
        })
        .sum();
    if (1.0 - p_e).abs() < 1e-12 {
        return Ok(Coefficient::Degenerate(
            "every rating falls in one category".into(),
        ));
    }
    Ok(Coefficient::Value((p_bar - p_e) / (1.0 - p_e)))
}

fn check_rectangular(ratings: &[Vec<Option<usize>>]) -> Result<usize> {
    let Some(first) = ratings.first() else {
        return Err(Error::Empty("no annotators".into()));
    };
    let items = first.len();
    if ratings.iter().any(|r| r.len() != items) {
        return Err(Error::Shape("annotator rows differ in length".into()));
    }
    Ok(items)
}

/// Nominal Krippendorff's alpha from an annotator × item matrix.
pub fn krippendorff_alpha(ratings: &[Vec<Option<usize>>]) -> Result<Coefficient> {
    let items = check_rectangular(ratings)?;
    let cats = ratings
        .iter()
        .flatten()
        .flatten()
        .max()
        .map_or(0, |m| m + 1);
    let mut coincidence = vec![vec![0.0f64; cats]; cats];
    let mut unit_counts = vec![0usize; cats];
    for u in 0..items {
        unit_counts.iter_mut().for_each(|c| *c = 0);
        let mut m = 0usize;
        for row in ratings {
            if let Some(c) = row[u] {
                unit_counts[c] += 1;
                m += 1;
            }
        }
        if m < 2 {
            continue;
        }
        let w = 1.0 / (m - 1) as f64;
        for c in 0..cats {
            for k in 0..cats {
                let pairs = if c == k {
                    unit_counts[c] * unit_counts[c].saturating_sub(1)
                } else {
                    unit_counts[c] * unit_counts[k]
                };
                coincidence[c][k] += pairs as f64 * w;
            }
        }
    }
    let marg: Vec<f64> = coincidence.iter().map(|r| r.iter().sum()).collect();
    let n: f64 = marg.iter().sum();
    if n < 2.0 {
        return Err(Error::Degenerate("fewer than 2 paired ratings".into()));
    }
    let mut observed = 0.0;
    let mut expected = 0.0;
    for c in 0..cats {
        for k in 0..cats {
            if c != k {
                observed += coincidence[c][k];
                expected += marg[c] * marg[k];
            }
        }
    }
    if expected == 0.0 {
        return Ok(Coefficient::Degenerate(
            "no variation among paired ratings".into(),
        ));
    }
    Ok(Coefficient::Value(1.0 - (n - 1.0) * observed / expected))
}

/// Mean over items of the share of agreeing rater pairs.
pub fn raw_agreement(ratings: &[Vec<Option<usize>>]) -> Result<f64> {
    let items = check_rectangular(ratings)?;
    if ratings.len() < 2 {
        return Err(Error::Degenerate("agreement needs at least 2 raters".into()));
    }
    let mut total = 0.0;
    let mut used = 0usize;
    for u in 0..items {
        let vals: Vec<usize> = ratings.iter().filter_map(|r| r[u]).collect();
        if vals.len() < 2 {
            continue;
        }
        let mut agree = 0usize;
        let mut pairs = 0usize;
        for a in 0..vals.len() {
            for b in a + 1..vals.len() {
                pairs += 1;
                agree += usize::from(vals[a] == vals[b]);
            }
        }
        total += agree as f64 / pairs as f64;
        used += 1;
    }
    if used == 0 {
        return Err(Error::Degenerate("no item has two ratings".into()));
    }
    Ok(total / used as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IaaReport {
    pub annotators: usize,
    pub items: usize,
    pub krippendorff_alpha: Coefficient,
    pub alpha_band: String,
    pub fleiss_kappa: Coefficient,
    pub kappa_band: String,
    pub raw_agreement: f64,
}

/// All three measures over binary verdicts, grouped per `(dimension, sample)`.
pub fn iaa_report(records: &[AnnotationRecord]) -> Result<IaaReport> {
    let mut annotators: BTreeMap<&str, usize> = BTreeMap::new();
    let mut items: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for r in records {
        let a = annotators.len();
        annotators.entry(r.annotator_id.as_str()).or_insert(a);
        let i = items.len();
        items.entry((r.dimension.as_str(), r.sample_id.as_str())).or_insert(i);
    }
    if items.is_empty() {
        return Err(Error::Empty("no annotations".into()));
    }
    let mut ratings = vec![vec![None; items.len()]; annotators.len()];
    for r in records {
        let a = annotators[r.annotator_id.as_str()];
        let i = items[&(r.dimension.as_str(), r.sample_id.as_str())];
        ratings[a][i] = Some(usize::from(r.verdict.is_pass()));
    }
    let agreement = raw_agreement(&ratings)?;
    let alpha = krippendorff_alpha(&ratings)?;
    let counts: Vec<Vec<usize>> = (0..items.len())
        .map(|i| {
            let mut row = vec![0usize; 2];
            for a in &ratings {
                if let Some(c) = a[i] {
                    row[c] += 1;
                }
            }
            row
        })
        .collect();
    let kappa = fleiss_kappa(&counts)?;
    Ok(IaaReport {
        annotators: annotators.len(),
        items: items.len(),
        alpha_band: alpha.band().to_string(),
        kappa_band: kappa.band().to_string(),
        krippendorff_alpha: alpha,
        fleiss_kappa: kappa,
        raw_agreement: agreement,
    })
}
