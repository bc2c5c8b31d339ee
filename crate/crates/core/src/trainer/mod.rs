//! Reward-model training over preference pairs.

mod compare;
mod eval;
mod optim;

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use compare::{compare_losses, compare_variants, CellOutcome, Comparison, ComparisonRow, Stat, Variant};
pub use eval::{evaluate, evaluate_set, EvalSet};
pub use optim::AdamW;

use crate::backbone::embed_batch;
use crate::dataflow::{Corpus, Labels, PairRelation, PreferencePair, SyntheticSample};
use crate::heads::{ModelConfig, RewardModel};
use crate::losses::{batch_loss, BatchLoss, LossConfig, LossKind, RewardTable};
use crate::metrics::{csv_err, EvalReport};
use crate::numkit::{GradSet, Tape, Tensor};
use crate::{seed, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Pairs per micro-batch.
    pub batch_size: usize,
    /// Micro-batches averaged into one optimizer step.
    pub grad_accumulation: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// Share of all steps spent in linear warmup.
    pub warmup_fraction: f64,
    /// Root of the run; also replaces `model.backbone.seed`.
    pub seed: u64,
    pub freeze_backbone: bool,
    /// Evaluate every this many steps; 0 evaluates at the end of each epoch.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            learning_rate: 1e-3,
            epochs: 3,
            batch_size: 32,
            grad_accumulation: 1,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.01,
            warmup_fraction: 0.05,
            seed: 0,
            freeze_backbone: false,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if self.grad_accumulation == 0 {
            return Err(Error::config("grad_accumulation", "must be positive"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(name, "must lie in [0, 1)"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::config("adam_eps", "must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight_decay", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::config("warmup_fraction", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// The model configuration actually initialized by a run.
    pub fn resolved_model(&self) -> ModelConfig {
        let mut m = self.model.clone();
        m.backbone.seed = self.seed;
        m
    }

    /// Learning rate for 1-based `step` out of `total`.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        let warm = (self.warmup_fraction * total as f64).ceil() as usize;
        if warm > 0 && step <= warm {
            self.learning_rate * step as f64 / warm as f64
        } else {
            self.learning_rate
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalTick {
    pub step: usize,
    pub epoch: usize,
    pub report: EvalReport,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalTick>,
    /// Index into `evals` of the tick whose parameters were returned.
    pub selected: Option<usize>,
}

impl TrainHistory {
    /// The evaluation of the returned parameters.
    pub fn final_tick(&self) -> Option<&EvalTick> {
        self.selected.map(|i| &self.evals[i])
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.steps.last().map(|s| s.loss)
    }

    pub fn write_loss_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["step", "loss"]).map_err(|e| csv_err(path, e))?;
        for s in &self.steps {
            w.write_record([s.step.to_string(), s.loss.to_string()])
                .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

const CHUNK: usize = 16;

/// Loss and parameter gradients of one batch of pairs.
///
/// Every sample referenced by the batch is scored once, so both members of a
/// pair see the same parameters. Chunks run in parallel and their gradients
/// are summed in chunk order.
pub fn batch_gradients(
    model: &RewardModel,
    samples: &HashMap<&str, &SyntheticSample>,
    pairs: &[PreferencePair],
    labels: Option<&Labels>,
    loss: &LossConfig,
) -> Result<(BatchLoss, GradSet)> {
    let mut order: Vec<&SyntheticSample> = Vec::new();
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for p in pairs {
        for id in [p.id_i.as_str(), p.id_j.as_str()] {
            if !seen.contains_key(id) {
                let s = samples
                    .get(id)
                    .ok_or_else(|| Error::UnknownId(id.to_string()))?;
                seen.insert(id, order.len());
                order.push(s);
            }
        }
    }
    let cfg = &model.config().backbone;
    let forwards: Vec<(Tape, crate::numkit::Var)> = order
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut tape = Tape::new();
            let x = tape.input(embed_batch(chunk, cfg)?);
            let r = model.forward(&mut tape, x)?;
            Ok((tape, r))
        })
        .collect::<Result<_>>()?;
    let table: RewardTable = order
        .iter()
        .map(|s| s.sample_id.as_str())
        .zip(forwards.iter().flat_map(|(t, r)| t.value(*r).data().iter().copied()))
        .collect();
    let bl = batch_loss(pairs, &table, labels, loss)?;
    let partials: Vec<GradSet> = forwards
        .par_iter()
        .enumerate()
        .map(|(c, (tape, r))| {
            let lo = c * CHUNK;
            let seed = Tensor::from_vec(bl.grads[lo..lo + tape.value(*r).len()].to_vec());
            Ok(tape.backward(*r, &seed)?.params(tape, model.store()))
        })
        .collect::<Result<_>>()?;
    let mut total = model.store().zero_grads();
    for g in &partials {
        total.add_assign(g);
    }
    Ok((bl, total))
}

/// Train a fresh model on `pairs`, keeping the parameters of the evaluation
/// tick with the highest in-distribution accuracy (earliest on ties).
pub fn train(
    config: &TrainConfig,
    corpus: &Corpus,
    pairs: &[PreferencePair],
) -> Result<(RewardModel, TrainHistory)> {
    config.validate()?;
    let mut model = RewardModel::new(&config.resolved_model())?;
    if config.freeze_backbone {
        model.set_backbone_frozen(true);
    }
    let mut history = TrainHistory::default();
    if config.epochs == 0 {
        return Ok((model, history));
    }

    let samples: HashMap<&str, &SyntheticSample> = corpus
        .samples
        .iter()
        .map(|s| (s.sample_id.as_str(), s))
        .collect();
    let pool: Vec<&PreferencePair> = pairs
        .iter()
        .filter(|p| !(config.loss.kind == LossKind::Bt && p.relation == PairRelation::Tie))
        .collect();
    if pool.is_empty() {
        return Err(Error::Empty("no usable training pairs".into()));
    }
    for p in &pool {
        for id in [&p.id_i, &p.id_j] {
            if !samples.contains_key(id.as_str()) {
                return Err(Error::UnknownId(id.clone()));
            }
        }
    }
    let eval_set = EvalSet::build(corpus)?;
    let labels = (config.loss.bce_weight > 0.0).then_some(&corpus.labels);

    let micro_per_epoch = pool.len().div_ceil(config.batch_size);
    let steps_per_epoch = micro_per_epoch.div_ceil(config.grad_accumulation);
    let total_steps = steps_per_epoch * config.epochs;
    let mut opt = AdamW::new(
        model.store(),
        config.beta1,
        config.beta2,
        config.adam_eps,
        config.weight_decay,
    );
    let mut rng = seed::derived_rng(config.seed, "train/shuffle");
    let mut best: Option<(f64, crate::numkit::ParamStore)> = None;
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..pool.len()).collect();

    let mut tick = |model: &RewardModel, step: usize, epoch: usize, history: &mut TrainHistory| -> Result<()> {
        let report = evaluate_set(model, corpus, &eval_set)?;
        let acc = report.id.accuracy;
        history.evals.push(EvalTick { step, epoch, report });
        if best.as_ref().map_or(true, |(b, _)| acc > *b) {
            best = Some((acc, model.store().clone()));
            history.selected = Some(history.evals.len() - 1);
        }
        Ok(())
    };

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let micro: Vec<Vec<PreferencePair>> = order
            .chunks(config.batch_size)
            .map(|c| c.iter().map(|&k| pool[k].clone()).collect())
            .collect();
        for group in micro.chunks(config.grad_accumulation) {
            step += 1;
            let mut grads = model.store().zero_grads();
            let mut loss = 0.0;
            for batch in group {
                let (bl, g) = batch_gradients(&model, &samples, batch, labels, &config.loss)
                    .map_err(|e| match e {
                        Error::NonFinite(_) => Error::Diverged {
                            step,
                            loss: f64::NAN,
                        },
                        e => e,
                    })?;
                loss += bl.value;
                grads.add_assign(&g);
            }
            let w = 1.0 / group.len() as f64;
            loss *= w;
            grads.scale(w);
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged { step, loss });
            }
            let lr = config.lr_at(step, total_steps);
            opt.step(model.store_mut(), &grads, lr);
            if !model.store().is_finite() {
                return Err(Error::Diverged { step, loss });
            }
            history.steps.push(StepRecord { step, epoch, loss, lr });
            if config.eval_every > 0 && step % config.eval_every == 0 {
                tick(&model, step, epoch, &mut history)?;
            }
        }
        if config.eval_every == 0 {
            tick(&model, step, epoch, &mut history)?;
        }
    }
    if history.evals.last().map_or(true, |t| t.step != step) {
        tick(&model, step, config.epochs - 1, &mut history)?;
    }
    if let Some((_, store)) = best {
        *model.store_mut() = store;
    }
    Ok((model, history))
}
