//! Synthetic preference corpora: samples, simulated annotators, pair
//! construction and JSONL persistence.

mod annotate;
mod corpus;
mod jsonl;
mod pairs;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use annotate::{consensus, simulate_annotators};
pub use corpus::{generate_corpus, Corpus, CorpusConfig, DimensionConfig, SampleFactory};
pub use jsonl::{read_jsonl, write_jsonl, Extras};
pub use pairs::{build_pairs, check_pairs, PairConfig, PairStrategy};

pub type Extra = BTreeMap<String, serde_json::Value>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    IdEval,
    OodEval,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::IdEval => "id_eval",
            Split::OodEval => "ood_eval",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSample {
    pub sample_id: String,
    pub prompt_id: String,
    pub dimension: String,
    pub latent_quality: f64,
    pub shortcut: bool,
    pub features: Vec<f64>,
    pub split: Split,
    #[serde(flatten)]
    pub extra: Extra,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn from_pass(pass: bool) -> Self {
        if pass {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn is_pass(self) -> bool {
        self == Verdict::Pass
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub sample_id: String,
    pub annotator_id: String,
    pub dimension: String,
    pub verdict: Verdict,
    #[serde(flatten)]
    pub extra: Extra,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairRelation {
    Win,
    Tie,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pairing {
    InPrompt,
    CrossPrompt,
}

/// `id_i` is the winner of a `Win` pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub id_i: String,
    pub id_j: String,
    pub relation: PairRelation,
    pub pairing: Pairing,
    #[serde(flatten)]
    pub extra: Extra,
}

impl PreferencePair {
    pub fn new(id_i: &str, id_j: &str, relation: PairRelation, pairing: Pairing) -> Self {
        PreferencePair {
            id_i: id_i.to_string(),
            id_j: id_j.to_string(),
            relation,
            pairing,
            extra: Extra::new(),
        }
    }
}

/// Consensus verdict per sample id.
pub type Labels = BTreeMap<String, Verdict>;
