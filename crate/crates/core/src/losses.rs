//! Pairwise preference losses: plain Bradley-Terry, the win-tie variant,
//! the Rao-Kupper three-outcome model and a pointwise cross-entropy penalty.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dataflow::{Labels, PairRelation, PreferencePair};
use crate::numkit::{log_sigmoid, sigmoid};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "BT")]
    Bt,
    #[serde(rename = "BTWT")]
    BtWt,
    #[serde(rename = "BTT")]
    Btt,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Bt => "BT",
            LossKind::BtWt => "BTWT",
            LossKind::Btt => "BTT",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Weight of the per-sample cross-entropy term; 0 disables it.
    pub bce_weight: f64,
    pub btt_tie_theta: f64,
    /// Shift inside the win term, `-log σ(Δ - m)`.
    pub bt_margin: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::BtWt,
            bce_weight: 0.0,
            btt_tie_theta: std::f64::consts::E,
            bt_margin: 0.0,
        }
    }
}

impl LossConfig {
    pub fn new(kind: LossKind) -> Self {
        LossConfig {
            kind,
            ..Default::default()
        }
    }

    pub fn with_bce(mut self, weight: f64) -> Self {
        self.bce_weight = weight;
        self
    }

    /// Short label such as `BTWT+BCE(1)`.
    pub fn label(&self) -> String {
        let mut s = self.kind.as_str().to_string();
        if self.bce_weight > 0.0 {
            s.push_str(&format!("+BCE({})", self.bce_weight));
        }
        if self.bt_margin != 0.0 {
            s.push_str(&format!("+m({})", self.bt_margin));
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bce_weight >= 0.0 && self.bce_weight.is_finite()) {
            return Err(Error::config("loss.bce_weight", "must be finite and >= 0"));
        }
        if !(self.bt_margin >= 0.0 && self.bt_margin.is_finite()) {
            return Err(Error::config("loss.bt_margin", "must be finite and >= 0"));
        }
        if self.kind == LossKind::Btt {
            check_theta(self.btt_tie_theta)
                .map_err(|_| Error::config("loss.btt_tie_theta", "must be finite and > 1"))?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BttOutcome {
    IWin,
    JWin,
    Tie,
}

/// A pair loss and its partial derivatives in each reward.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairGrad {
    pub loss: f64,
    pub d_i: f64,
    pub d_j: f64,
}

impl PairGrad {
    fn from_delta(loss: f64, d_delta: f64) -> Self {
        PairGrad {
            loss,
            d_i: d_delta,
            d_j: -d_delta,
        }
    }
}

fn finite(xs: &[f64]) -> Result<()> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("loss input {xs:?}")))
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if theta > 1.0 && theta.is_finite() {
        Ok(())
    } else {
        Err(Error::Invalid(format!("tie parameter θ = {theta} must exceed 1")))
    }
}

/// `-log σ(Δ - m)` and its slope in `Δ`.
fn win_term(delta: f64, margin: f64) -> (f64, f64) {
    let x = delta - margin;
    (-log_sigmoid(x), -sigmoid(-x))
}

pub fn bt_grad(r_w: f64, r_l: f64, margin: f64) -> Result<PairGrad> {
    finite(&[r_w, r_l])?;
    let (l, d) = win_term(r_w - r_l, margin);
    Ok(PairGrad::from_delta(l, d))
}

/// `-log σ(r_w - r_l)`.
pub fn bt_loss(r_w: f64, r_l: f64) -> Result<f64> {
    Ok(bt_grad(r_w, r_l, 0.0)?.loss)
}

pub fn bt_wt_grad(r_i: f64, r_j: f64, relation: PairRelation, margin: f64) -> Result<PairGrad> {
    finite(&[r_i, r_j])?;
    let delta = r_i - r_j;
    Ok(match relation {
        PairRelation::Win => {
            let (l, d) = win_term(delta, margin);
            PairGrad::from_delta(l, d)
        }
        PairRelation::Tie => {
            // Evaluated symmetrically so swapping the members is exact.
            let loss = 0.5 * (-log_sigmoid(delta)) + 0.5 * (-log_sigmoid(-delta));
            let d = 0.5 * (sigmoid(delta) - sigmoid(-delta));
            PairGrad::from_delta(loss, d)
        }
    })
}

/// `-μ log σ(Δ) - (1-μ) log σ(-Δ)` with `μ = 1` for a win and `½` for a tie.
pub fn bt_wt_loss(r_i: f64, r_j: f64, relation: PairRelation) -> Result<f64> {
    Ok(bt_wt_grad(r_i, r_j, relation, 0.0)?.loss)
}

/// Outcome probabilities `[i wins, j wins, tie]` under Rao-Kupper with
/// strengths `e^r` and tie parameter `θ`.
pub fn btt_probabilities(r_i: f64, r_j: f64, theta: f64) -> Result<[f64; 3]> {
    finite(&[r_i, r_j])?;
    check_theta(theta)?;
    let (c, delta) = (theta.ln(), r_i - r_j);
    let pi = sigmoid(delta - c);
    let pj = sigmoid(-delta - c);
    Ok([pi, pj, (theta - 1.0) * (theta + 1.0) * pi * pj])
}

pub fn btt_grad(r_i: f64, r_j: f64, outcome: BttOutcome, theta: f64) -> Result<PairGrad> {
    finite(&[r_i, r_j])?;
    check_theta(theta)?;
    let (c, delta) = (theta.ln(), r_i - r_j);
    let (loss, d) = match outcome {
        BttOutcome::IWin => (-log_sigmoid(delta - c), -sigmoid(c - delta)),
        BttOutcome::JWin => (-log_sigmoid(-delta - c), sigmoid(delta + c)),
        BttOutcome::Tie => (
            -((theta - 1.0).ln() + (theta + 1.0).ln())
                - log_sigmoid(delta - c)
                - log_sigmoid(-delta - c),
            -(sigmoid(c - delta) - sigmoid(delta + c)),
        ),
    };
    Ok(PairGrad::from_delta(loss, d))
}

/// Negative log-likelihood of `outcome` under the Rao-Kupper model.
pub fn btt_loss(r_i: f64, r_j: f64, outcome: BttOutcome, theta: f64) -> Result<f64> {
    Ok(btt_grad(r_i, r_j, outcome, theta)?.loss)
}

/// Loss and slope of `-y log σ(r) - (1-y) log σ(-r)`.
pub fn bce_grad(r: f64, pass: bool) -> Result<(f64, f64)> {
    finite(&[r])?;
    let y = if pass { 1.0 } else { 0.0 };
    let loss = if pass { -log_sigmoid(r) } else { -log_sigmoid(-r) };
    Ok((loss, sigmoid(r) - y))
}

pub fn bce_penalty(r: f64, pass: bool) -> Result<f64> {
    Ok(bce_grad(r, pass)?.0)
}

/// Rewards addressable by sample id.
#[derive(Clone, Debug, Default)]
pub struct RewardTable {
    index: HashMap<String, usize>,
    ids: Vec<String>,
    values: Vec<f64>,
}

impl RewardTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: &str, reward: f64) -> usize {
        if let Some(&i) = self.index.get(id) {
            self.values[i] = reward;
            return i;
        }
        self.index.insert(id.to_string(), self.values.len());
        self.ids.push(id.to_string());
        self.values.push(reward);
        self.values.len() - 1
    }

    pub fn position(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    pub fn get(&self, id: &str) -> Result<f64> {
        Ok(self.values[self.position(id)?])
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl<S: AsRef<str>> FromIterator<(S, f64)> for RewardTable {
    fn from_iter<I: IntoIterator<Item = (S, f64)>>(iter: I) -> Self {
        let mut t = RewardTable::new();
        for (id, r) in iter {
            t.insert(id.as_ref(), r);
        }
        t
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchLoss {
    pub value: f64,
    pub pair_term: f64,
    pub bce_term: f64,
    /// Pairs that contributed; plain BT skips ties.
    pub pairs_used: usize,
    /// `∂value/∂reward`, aligned with the table.
    pub grads: Vec<f64>,
}

/// Mean pair loss plus `λ ×` mean cross-entropy over the samples the batch
/// touches. Labels are needed only when `λ > 0`.
pub fn batch_loss(
    pairs: &[PreferencePair],
    rewards: &RewardTable,
    labels: Option<&Labels>,
    cfg: &LossConfig,
) -> Result<BatchLoss> {
    cfg.validate()?;
    let mut grads = vec![0.0; rewards.len()];
    let mut touched = vec![false; rewards.len()];
    let mut terms = Vec::with_capacity(pairs.len());
    for p in pairs {
        let (i, j) = (rewards.position(&p.id_i)?, rewards.position(&p.id_j)?);
        touched[i] = true;
        touched[j] = true;
        let (ri, rj) = (rewards.values[i], rewards.values[j]);
        let g = match (cfg.kind, p.relation) {
            (LossKind::Bt, PairRelation::Tie) => continue,
            (LossKind::Bt, PairRelation::Win) => bt_grad(ri, rj, cfg.bt_margin)?,
            (LossKind::BtWt, rel) => bt_wt_grad(ri, rj, rel, cfg.bt_margin)?,
            (LossKind::Btt, PairRelation::Win) => {
                btt_grad(ri, rj, BttOutcome::IWin, cfg.btt_tie_theta)?
            }
            (LossKind::Btt, PairRelation::Tie) => {
                btt_grad(ri, rj, BttOutcome::Tie, cfg.btt_tie_theta)?
            }
        };
        terms.push((i, j, g));
    }
    let mut pair_term = 0.0;
    if !terms.is_empty() {
        let w = 1.0 / terms.len() as f64;
        for (i, j, g) in &terms {
            pair_term += g.loss;
            grads[*i] += w * g.d_i;
            grads[*j] += w * g.d_j;
        }
        pair_term *= w;
    }

    let mut bce_term = 0.0;
    if cfg.bce_weight > 0.0 {
        let labels = labels.ok_or_else(|| {
            Error::Invalid("cross-entropy term needs consensus labels".into())
        })?;
        let members: Vec<usize> = (0..rewards.len()).filter(|&k| touched[k]).collect();
        if !members.is_empty() {
            let w = cfg.bce_weight / members.len() as f64;
            for k in members {
                let id = &rewards.ids[k];
                let v = labels
                    .get(id)
                    .ok_or_else(|| Error::UnknownId(id.clone()))?;
                let (l, d) = bce_grad(rewards.values[k], v.is_pass())?;
                bce_term += l;
                grads[k] += w * d;
            }
            bce_term *= w / cfg.bce_weight;
        }
    }
    Ok(BatchLoss {
        value: pair_term + cfg.bce_weight * bce_term,
        pair_term,
        bce_term,
        pairs_used: terms.len(),
        grads,
    })
}
