//! Toy group-relative policy optimization against a reward model.
//!
//! The policy emits samples with latent quality `q ~ N(m, noise²)` and a
//! shortcut bit `b ~ Bernoulli(σ(s))`. Each step scores groups of samples,
//! standardizes rewards within each group and applies a score-function update
//! to `(m, s)`. Whether `σ(s)` climbs shows if the scorer can be exploited.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataflow::{CorpusConfig, SampleFactory, Split, SyntheticSample};
use crate::heads::Scorer;
use crate::metrics::{advantage_report, csv_err, group_advantage, AdvantageReport};
use crate::numkit::sigmoid;
use crate::{seed, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyPolicy {
    pub mean_quality: f64,
    pub shortcut_logit: f64,
    /// Standard deviation of emitted quality; must be positive.
    pub noise: f64,
}

impl Default for ToyPolicy {
    fn default() -> Self {
        ToyPolicy {
            mean_quality: -0.5,
            shortcut_logit: 0.0,
            noise: 1.0,
        }
    }
}

impl ToyPolicy {
    pub fn shortcut_prob(&self) -> f64 {
        sigmoid(self.shortcut_logit)
    }

    fn validate(&self) -> Result<()> {
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return Err(Error::config("policy.noise", "must be positive"));
        }
        if !self.mean_quality.is_finite() || !self.shortcut_logit.is_finite() {
            return Err(Error::config("policy", "parameters must be finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub policy: ToyPolicy,
    pub steps: usize,
    pub group_size: usize,
    /// Groups (one prompt each) per update.
    pub groups_per_step: usize,
    pub step_size: f64,
    /// Optional bound on the absolute per-step parameter change.
    pub clip: Option<f64>,
    pub epsilon: f64,
    /// Quality dimension whose threshold and feature layout the policy emits into.
    pub dimension: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            policy: ToyPolicy::default(),
            steps: 200,
            group_size: 8,
            groups_per_step: 4,
            step_size: 0.05,
            clip: None,
            epsilon: 1e-8,
            dimension: 0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        if self.group_size < 2 {
            return Err(Error::config("group_size", "must be at least 2"));
        }
        if self.groups_per_step == 0 {
            return Err(Error::config("groups_per_step", "must be positive"));
        }
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(Error::config("step_size", "must be non-negative"));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return Err(Error::config("clip", "must be positive"));
            }
        }
        Ok(())
    }
}

/// Emits samples the way the corpus generator does, for a given policy.
#[derive(Clone, Debug)]
pub struct Emitter {
    factory: SampleFactory,
    dimension: String,
    threshold: f64,
}

impl Emitter {
    pub fn new(corpus: &CorpusConfig, dimension: usize) -> Result<Self> {
        let dim = corpus.dimensions.get(dimension).ok_or_else(|| {
            Error::config(
                "dimension",
                format!("corpus has {} dimensions", corpus.dimensions.len()),
            )
        })?;
        Ok(Emitter {
            factory: SampleFactory::new(corpus),
            dimension: dim.name.clone(),
            threshold: dim.threshold,
        })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Group {
    pub samples: Vec<SyntheticSample>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

fn emit<R: Rng + ?Sized>(
    policy: &ToyPolicy,
    g: usize,
    emitter: &Emitter,
    tag: &str,
    rng: &mut R,
) -> Vec<SyntheticSample> {
    let prompt = emitter.factory.prompt_embedding(rng);
    let p = policy.shortcut_prob();
    (0..g)
        .map(|k| {
            let z: f64 = rng.sample(StandardNormal);
            let q = policy.mean_quality + policy.noise * z;
            let b = rng.gen_bool(p);
            SyntheticSample {
                sample_id: format!("{tag}-s{k:02}"),
                prompt_id: tag.to_string(),
                dimension: emitter.dimension.clone(),
                latent_quality: q,
                shortcut: b,
                features: emitter.factory.features(&prompt, q, emitter.threshold, rng),
                split: Split::OodEval,
                extra: Default::default(),
            }
        })
        .collect()
}

fn score_groups<S: Scorer + ?Sized>(
    scorer: &S,
    groups: Vec<Vec<SyntheticSample>>,
    epsilon: f64,
) -> Result<Vec<Group>> {
    let flat: Vec<&SyntheticSample> = groups.iter().flatten().collect();
    let scores = scorer.score(&flat)?;
    if scores.len() != flat.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} samples",
            scores.len(),
            flat.len()
        )));
    }
    let mut out = Vec::with_capacity(groups.len());
    let mut at = 0;
    for samples in groups {
        let rewards = scores[at..at + samples.len()].to_vec();
        at += samples.len();
        let advantages = group_advantage(&rewards, epsilon)?;
        out.push(Group {
            samples,
            rewards,
            advantages,
        });
    }
    Ok(out)
}

/// Draw one group of `g` samples under a shared prompt, score it and
/// standardize the rewards.
pub fn rollout_group<S: Scorer + ?Sized>(
    policy: &ToyPolicy,
    g: usize,
    scorer: &S,
    emitter: &Emitter,
    seed: u64,
) -> Result<Group> {
    policy.validate()?;
    if g < 2 {
        return Err(Error::Invalid(format!("group size {g}, need at least 2")));
    }
    let mut rng = seed::derived_rng(seed, "sim/group");
    let samples = emit(policy, g, emitter, "g0", &mut rng);
    Ok(score_groups(scorer, vec![samples], 1e-8)?.remove(0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub mean_quality_param: f64,
    pub shortcut_prob: f64,
    pub mean_reward: f64,
    /// Mean latent quality of the emitted samples.
    pub mean_quality: f64,
    pub advantages: AdvantageReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub records: Vec<TrajectoryRecord>,
    pub final_policy: ToyPolicy,
}

impl Trajectory {
    pub fn initial(&self) -> &TrajectoryRecord {
        &self.records[0]
    }

    pub fn last(&self) -> &TrajectoryRecord {
        self.records.last().expect("trajectory has its initial record")
    }

    /// Mean over records of the top-ranked member's `|A|`.
    pub fn mean_top_advantage(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.advantages.top_abs_mean)
            .sum::<f64>()
            / self.records.len() as f64
    }

    pub const CSV_HEADER: [&'static str; 6] = [
        "step",
        "m",
        "shortcut_prob",
        "mean_reward",
        "mean_quality",
        "top_adv_abs",
    ];

    fn row(r: &TrajectoryRecord) -> [String; 5] {
        [
            r.mean_quality_param.to_string(),
            r.shortcut_prob.to_string(),
            r.mean_reward.to_string(),
            r.mean_quality.to_string(),
            r.advantages.top_abs_mean.to_string(),
        ]
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(Self::CSV_HEADER).map_err(|e| csv_err(path, e))?;
        for r in &self.records {
            let mut rec = vec![r.step.to_string()];
            rec.extend(Self::row(r));
            w.write_record(rec).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Step-aligned columns of several trajectories, prefixed by their names.
pub fn write_side_by_side(path: &Path, runs: &[(&str, &Trajectory)]) -> Result<()> {
    let Some((_, first)) = runs.first() else {
        return Err(Error::Empty("no trajectories".into()));
    };
    if runs.iter().any(|(_, t)| t.records.len() != first.records.len()) {
        return Err(Error::Shape("trajectories differ in length".into()));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["step".to_string()];
    for (name, _) in runs {
        header.extend(Trajectory::CSV_HEADER[1..].iter().map(|c| format!("{name}_{c}")));
    }
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for k in 0..first.records.len() {
        let mut rec = vec![k.to_string()];
        for (_, t) in runs {
            rec.extend(Trajectory::row(&t.records[k]));
        }
        w.write_record(rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Run `config.steps` updates; the trajectory has `steps + 1` records and
/// the groups of record `k` drive update `k + 1`.
pub fn simulate<S: Scorer + ?Sized>(scorer: &S, emitter: &Emitter, config: &SimConfig) -> Result<Trajectory> {
    config.validate()?;
    let mut policy = config.policy;
    let mut rng = seed::derived_rng(config.seed, "sim/rollout");
    let mut records = Vec::with_capacity(config.steps + 1);
    for step in 0..=config.steps {
        let raw: Vec<Vec<SyntheticSample>> = (0..config.groups_per_step)
            .map(|gi| emit(&policy, config.group_size, emitter, &format!("t{step}-g{gi}"), &mut rng))
            .collect();
        let groups = score_groups(scorer, raw, config.epsilon)?;
        let rewards: Vec<Vec<f64>> = groups.iter().map(|g| g.rewards.clone()).collect();
        let n = (config.group_size * config.groups_per_step) as f64;
        let all = || groups.iter().flat_map(|g| g.samples.iter().zip(&g.advantages));
        records.push(TrajectoryRecord {
            step,
            mean_quality_param: policy.mean_quality,
            shortcut_prob: policy.shortcut_prob(),
            mean_reward: rewards.iter().flatten().sum::<f64>() / n,
            mean_quality: all().map(|(s, _)| s.latent_quality).sum::<f64>() / n,
            advantages: advantage_report(&rewards, config.epsilon)?,
        });
        if step == config.steps {
            break;
        }
        let p = policy.shortcut_prob();
        let var = policy.noise * policy.noise;
        let mut dm = all()
            .map(|(s, a)| a * (s.latent_quality - policy.mean_quality) / var)
            .sum::<f64>()
            / n;
        let mut ds = all()
            .map(|(s, a)| a * (f64::from(u8::from(s.shortcut)) - p))
            .sum::<f64>()
            / n;
        dm *= config.step_size;
        ds *= config.step_size;
        if let Some(c) = config.clip {
            dm = dm.clamp(-c, c);
            ds = ds.clamp(-c, c);
        }
        policy.mean_quality += dm;
        policy.shortcut_logit += ds;
        if !policy.mean_quality.is_finite() || !policy.shortcut_logit.is_finite() {
            return Err(Error::PolicyDiverged(step + 1));
        }
    }
    Ok(Trajectory {
        records,
        final_policy: policy,
    })
}

/// Shortcut drift of `run` beyond the drift of `reference`.
pub fn hacking_index(run: &Trajectory, reference: &Trajectory) -> Result<f64> {
    if run.records.is_empty() {
        return Err(Error::Empty("trajectory".into()));
    }
    if run.records.len() != reference.records.len() {
        return Err(Error::Shape(format!(
            "trajectory has {} records, reference {}",
            run.records.len(),
            reference.records.len()
        )));
    }
    let drift = |t: &Trajectory| t.last().shortcut_prob - t.initial().shortcut_prob;
    Ok(drift(run) - drift(reference))
}
