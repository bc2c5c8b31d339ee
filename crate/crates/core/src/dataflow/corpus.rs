use std::collections::{BTreeMap, HashMap};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    consensus, simulate_annotators, AnnotationRecord, Labels, Split, SyntheticSample, Verdict,
};
use crate::{seed, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimensionConfig {
    pub name: String,
    /// Pass threshold on latent quality.
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub prompts: usize,
    pub samples_per_prompt: usize,
    /// Fraction of prompts that yield a single sample.
    pub single_sample_fraction: f64,
    pub dimensions: Vec<DimensionConfig>,
    /// Centre and spread of the per-prompt quality level.
    pub quality_mean: f64,
    pub prompt_spread: f64,
    /// Spread of sample quality around its prompt's level.
    pub sample_spread: f64,
    /// Width of the empty band around the threshold.
    pub gap: f64,
    /// Let pass samples show their quality above the threshold.
    pub graded_pass: bool,
    pub prompt_dim: usize,
    pub quality_features: usize,
    pub noise_features: usize,
    pub feature_noise: f64,
    pub loading: f64,
    pub annotators: usize,
    pub annotator_noise: f64,
    /// Shortcut/pass correlation in train and id_eval.
    pub rho_train: f64,
    pub rho_ood: f64,
    pub id_eval_fraction: f64,
    pub ood_eval_fraction: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            prompts: 200,
            samples_per_prompt: 10,
            single_sample_fraction: 0.0,
            dimensions: vec![DimensionConfig {
                name: "quality".into(),
                threshold: 0.0,
            }],
            quality_mean: 0.0,
            prompt_spread: 0.5,
            sample_spread: 1.0,
            gap: 1.0,
            graded_pass: false,
            prompt_dim: 8,
            quality_features: 16,
            noise_features: 8,
            feature_noise: 0.5,
            loading: 1.0,
            annotators: 3,
            annotator_noise: 0.2,
            rho_train: 0.5,
            rho_ood: 0.0,
            id_eval_fraction: 0.15,
            ood_eval_fraction: 0.15,
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.prompts == 0 {
            return Err(Error::config("corpus.prompts", "must be positive"));
        }
        if self.samples_per_prompt == 0 {
            return Err(Error::config("corpus.samples_per_prompt", "must be positive"));
        }
        if self.dimensions.is_empty() {
            return Err(Error::config("corpus.dimensions", "at least one dimension"));
        }
        let mut names: Vec<&str> = self.dimensions.iter().map(|d| d.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.dimensions.len() {
            return Err(Error::config("corpus.dimensions", "duplicate dimension name"));
        }
        for (field, v) in [
            ("corpus.rho_train", self.rho_train),
            ("corpus.rho_ood", self.rho_ood),
            ("corpus.single_sample_fraction", self.single_sample_fraction),
            ("corpus.id_eval_fraction", self.id_eval_fraction),
            ("corpus.ood_eval_fraction", self.ood_eval_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(field, format!("{v} outside [0, 1]")));
            }
        }
        if self.id_eval_fraction + self.ood_eval_fraction > 1.0 {
            return Err(Error::config("corpus.ood_eval_fraction", "splits exceed the corpus"));
        }
        for (field, v) in [
            ("corpus.prompt_spread", self.prompt_spread),
            ("corpus.sample_spread", self.sample_spread),
            ("corpus.gap", self.gap),
            ("corpus.feature_noise", self.feature_noise),
            ("corpus.annotator_noise", self.annotator_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("{v} must be finite and >= 0")));
            }
        }
        if self.gap > 0.0 && self.sample_spread == 0.0 && self.prompt_spread == 0.0 {
            return Err(Error::config("corpus.gap", "needs quality spread to resample"));
        }
        if self.annotators == 0 {
            return Err(Error::config("corpus.annotators", "must be at least 1"));
        }
        Ok(())
    }

    pub fn thresholds(&self) -> BTreeMap<String, f64> {
        self.dimensions
            .iter()
            .map(|d| (d.name.clone(), d.threshold))
            .collect()
    }

    pub fn feature_len(&self) -> usize {
        self.prompt_dim + self.quality_features + self.noise_features
    }
}

/// Turns latent quality and a shortcut bit into a feature vector.
#[derive(Clone, Debug)]
pub struct SampleFactory {
    prompt_dim: usize,
    quality_features: usize,
    noise_features: usize,
    feature_noise: f64,
    loading: f64,
    gap: f64,
    graded_pass: bool,
}

impl SampleFactory {
    pub fn new(config: &CorpusConfig) -> Self {
        SampleFactory {
            prompt_dim: config.prompt_dim,
            quality_features: config.quality_features,
            noise_features: config.noise_features,
            feature_noise: config.feature_noise,
            loading: config.loading,
            gap: config.gap,
            graded_pass: config.graded_pass,
        }
    }

    pub fn prompt_embedding<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.prompt_dim).map(|_| rng.sample(StandardNormal)).collect()
    }

    /// Quality as the features express it. Unless graded, every pass sample
    /// shows the same level just above the threshold.
    pub fn visible_quality(&self, q: f64, threshold: f64) -> f64 {
        if self.graded_pass || !threshold.is_finite() || q < threshold {
            q
        } else {
            threshold + self.gap / 2.0
        }
    }

    pub fn features<R: Rng + ?Sized>(
        &self,
        prompt: &[f64],
        q: f64,
        threshold: f64,
        rng: &mut R,
    ) -> Vec<f64> {
        let centre = if threshold.is_finite() { threshold } else { 0.0 };
        let v = self.visible_quality(q, threshold) - centre;
        let mut out = Vec::with_capacity(prompt.len() + self.quality_features + self.noise_features);
        out.extend_from_slice(prompt);
        for i in 0..self.quality_features {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            let e: f64 = rng.sample(StandardNormal);
            out.push(sign * self.loading * v + self.feature_noise * e);
        }
        for _ in 0..self.noise_features {
            out.push(rng.sample(StandardNormal));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub samples: Vec<SyntheticSample>,
    pub annotations: Vec<AnnotationRecord>,
    pub labels: Labels,
}

impl Corpus {
    /// Rebuild a corpus from persisted samples and annotations.
    pub fn from_parts(
        config: CorpusConfig,
        samples: Vec<SyntheticSample>,
        annotations: Vec<AnnotationRecord>,
    ) -> Result<Self> {
        let labels = consensus(&samples, &annotations, &config.thresholds())?;
        Ok(Corpus {
            config,
            samples,
            annotations,
            labels,
        })
    }

    pub fn index(&self) -> HashMap<&str, usize> {
        self.samples
            .iter()
            .enumerate()
            .map(|(i, s)| (s.sample_id.as_str(), i))
            .collect()
    }

    pub fn split(&self, split: Split) -> Vec<&SyntheticSample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    pub fn label(&self, id: &str) -> Result<Verdict> {
        self.labels
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    }
}

fn draw_quality<R: Rng + ?Sized>(
    rng: &mut R,
    mean: f64,
    spread: f64,
    threshold: f64,
    gap: f64,
) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        let q = mean + spread * z;
        if gap <= 0.0 || !threshold.is_finite() || (q - threshold).abs() >= gap / 2.0 {
            return q;
        }
    }
}

/// Generate samples, annotations and consensus labels from `config.seed`.
pub fn generate_corpus(config: &CorpusConfig) -> Result<Corpus> {
    config.validate()?;
    let mut rng = seed::derived_rng(config.seed, "corpus");
    let factory = SampleFactory::new(config);
    let p = config.prompts;

    let mut order: Vec<usize> = (0..p).collect();
    order.shuffle(&mut rng);
    let n_id = (p as f64 * config.id_eval_fraction).round() as usize;
    let n_ood = ((p as f64 * config.ood_eval_fraction).round() as usize).min(p - n_id);
    let mut splits = vec![Split::Train; p];
    for (rank, &pi) in order.iter().enumerate() {
        if rank < n_id {
            splits[pi] = Split::IdEval;
        } else if rank < n_id + n_ood {
            splits[pi] = Split::OodEval;
        }
    }
    let n_single = (p as f64 * config.single_sample_fraction).round() as usize;
    let mut single = vec![false; p];
    for i in index::sample(&mut rng, p, n_single) {
        single[i] = true;
    }

    struct Draft {
        prompt: usize,
        slot: usize,
        dim: usize,
        q: f64,
    }
    let mut embeddings = Vec::with_capacity(p);
    let mut drafts = Vec::new();
    for pi in 0..p {
        embeddings.push(factory.prompt_embedding(&mut rng));
        let z: f64 = rng.sample(StandardNormal);
        let level = config.quality_mean + config.prompt_spread * z;
        let n = if single[pi] { 1 } else { config.samples_per_prompt };
        for slot in 0..n {
            for (di, dim) in config.dimensions.iter().enumerate() {
                let q = draw_quality(&mut rng, level, config.sample_spread, dim.threshold, config.gap);
                drafts.push(Draft {
                    prompt: pi,
                    slot,
                    dim: di,
                    q,
                });
            }
        }
    }

    // Shortcut copies the pass bit with probability rho, otherwise it is an
    // independent draw at the cell's pass rate, so corr(shortcut, pass) = rho.
    let mut sc_rng = seed::derived_rng(config.seed, "corpus/shortcut");
    let mut shortcut = vec![false; drafts.len()];
    for split in [Split::Train, Split::IdEval, Split::OodEval] {
        let rho = if split == Split::OodEval {
            config.rho_ood
        } else {
            config.rho_train
        };
        for (di, dim) in config.dimensions.iter().enumerate() {
            let cell: Vec<usize> = (0..drafts.len())
                .filter(|&i| splits[drafts[i].prompt] == split && drafts[i].dim == di)
                .collect();
            if cell.is_empty() {
                continue;
            }
            let passes = cell.iter().filter(|&&i| drafts[i].q >= dim.threshold).count();
            let rate = passes as f64 / cell.len() as f64;
            for i in cell {
                let pass = drafts[i].q >= dim.threshold;
                shortcut[i] = if sc_rng.gen_bool(rho) {
                    pass
                } else {
                    sc_rng.gen_bool(rate)
                };
            }
        }
    }

    let mut feat_rng = seed::derived_rng(config.seed, "corpus/features");
    let mut samples = Vec::with_capacity(drafts.len());
    for (i, d) in drafts.iter().enumerate() {
        let dim = &config.dimensions[d.dim];
        samples.push(SyntheticSample {
            sample_id: format!("{}-p{:04}-s{:02}", dim.name, d.prompt, d.slot),
            prompt_id: format!("p{:04}", d.prompt),
            dimension: dim.name.clone(),
            latent_quality: d.q,
            shortcut: shortcut[i],
            features: factory.features(&embeddings[d.prompt], d.q, dim.threshold, &mut feat_rng),
            split: splits[d.prompt],
            extra: Default::default(),
        });
    }

    let mut ann_rng = seed::derived_rng(config.seed, "corpus/annotators");
    let annotations = simulate_annotators(
        &samples,
        config.annotators,
        config.annotator_noise,
        &config.thresholds(),
        &mut ann_rng,
    )?;
    Corpus::from_parts(config.clone(), samples, annotations)
}
