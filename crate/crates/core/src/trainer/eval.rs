use serde::{Deserialize, Serialize};

use crate::dataflow::{build_pairs, Corpus, PairConfig, PairRelation, PairStrategy, PreferencePair, Split};
use crate::heads::Scorer;
use crate::losses::RewardTable;
use crate::metrics::{
    clustering_stats, pairwise_accuracy, reward_margin, variance, EvalReport, SplitReport,
    CLUSTER_QUANTUM,
};
use crate::{Error, Result};

/// Scores every sample of `split` and reports accuracy on the win pairs that
/// lie entirely inside it.
pub fn evaluate<S: Scorer + ?Sized>(
    scorer: &S,
    corpus: &Corpus,
    pairs: &[PreferencePair],
    split: Split,
) -> Result<SplitReport> {
    if split == Split::Train {
        return Err(Error::Invalid("evaluation runs on id_eval or ood_eval".into()));
    }
    let samples = corpus.split(split);
    if samples.is_empty() {
        return Err(Error::Empty(format!("split {}", split.as_str())));
    }
    let scores = scorer.score(&samples)?;
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("score {s} on split {}", split.as_str())));
    }
    let table: RewardTable = samples
        .iter()
        .zip(&scores)
        .map(|(s, r)| (s.sample_id.as_str(), *r))
        .collect();
    let wins: Vec<PreferencePair> = pairs
        .iter()
        .filter(|p| {
            p.relation == PairRelation::Win
                && table.position(&p.id_i).is_ok()
                && table.position(&p.id_j).is_ok()
        })
        .cloned()
        .collect();
    let pass: Vec<bool> = samples
        .iter()
        .map(|s| corpus.label(&s.sample_id).map(|v| v.is_pass()))
        .collect::<Result<_>>()?;
    let pass_scores: Vec<f64> = scores
        .iter()
        .zip(&pass)
        .filter(|(_, p)| **p)
        .map(|(s, _)| *s)
        .collect();
    Ok(SplitReport {
        split,
        samples: samples.len(),
        pairs: wins.len(),
        accuracy: pairwise_accuracy(&table, &wins)?,
        margin: reward_margin(&scores, &pass)?,
        clustering: clustering_stats(&scores, CLUSTER_QUANTUM)?,
        positive_score_variance: variance(&pass_scores),
    })
}

/// Held-out win pairs for the in-distribution split and, when present, the
/// out-of-distribution split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSet {
    pub id: Vec<PreferencePair>,
    pub ood: Option<Vec<PreferencePair>>,
}

impl EvalSet {
    /// Every pass/fail pair of each held-out split, regardless of prompt.
    pub fn build(corpus: &Corpus) -> Result<Self> {
        let cfg = PairConfig::exhaustive_wins(PairStrategy::CrossPrompt);
        let id = build_pairs(&corpus.split(Split::IdEval), &corpus.labels, &cfg)?;
        let ood_samples = corpus.split(Split::OodEval);
        let ood = if ood_samples.is_empty() {
            None
        } else {
            Some(build_pairs(&ood_samples, &corpus.labels, &cfg)?)
        };
        Ok(EvalSet { id, ood })
    }
}

pub fn evaluate_set<S: Scorer + ?Sized>(scorer: &S, corpus: &Corpus, set: &EvalSet) -> Result<EvalReport> {
    Ok(EvalReport {
        id: evaluate(scorer, corpus, &set.id, Split::IdEval)?,
        ood: match &set.ood {
            Some(p) => Some(evaluate(scorer, corpus, p, Split::OodEval)?),
            None => None,
        },
    })
}
