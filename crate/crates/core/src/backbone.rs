//! Small pre-norm transformer encoder exposing every layer's hidden state.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataflow::SyntheticSample;
use crate::numkit::{Linear, MhaParams, ParamId, ParamStore, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub seq_len: usize,
    /// Width of one input token.
    pub feature_dim: usize,
    /// Reserve position 0 for a learnable token.
    pub special_token: bool,
    pub seed: u64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            layers: 6,
            model_dim: 32,
            heads: 4,
            seq_len: 16,
            feature_dim: 8,
            special_token: false,
            seed: 0,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers < 2 {
            return Err(Error::config("backbone.layers", "must be at least 2"));
        }
        if self.model_dim == 0 || self.heads == 0 || self.model_dim % self.heads != 0 {
            return Err(Error::config(
                "backbone.heads",
                format!("model_dim {} not divisible by {}", self.model_dim, self.heads),
            ));
        }
        if self.feature_dim == 0 {
            return Err(Error::config("backbone.feature_dim", "must be positive"));
        }
        if self.seq_len < 2 + usize::from(self.special_token) {
            return Err(Error::config("backbone.seq_len", "too short for the token layout"));
        }
        Ok(())
    }

    /// Position of the shortcut token.
    pub fn shortcut_pos(&self) -> usize {
        usize::from(self.special_token)
    }

    /// Number of feature scalars that fit after the reserved tokens.
    pub fn feature_capacity(&self) -> usize {
        (self.seq_len - self.shortcut_pos() - 1) * self.feature_dim
    }
}

#[derive(Clone, Copy, Debug)]
struct Block {
    ln1: (ParamId, ParamId),
    attn: MhaParams,
    ln2: (ParamId, ParamId),
    ff_in: Linear,
    ff_out: Linear,
}

#[derive(Clone, Debug)]
pub struct Backbone {
    config: BackboneConfig,
    embed: Linear,
    pos: ParamId,
    special: Option<ParamId>,
    blocks: Vec<Block>,
}

fn layer_norm_params(store: &mut ParamStore, name: &str, d: usize) -> (ParamId, ParamId) {
    (
        store.add(format!("{name}.gain"), Tensor::full(&[d], 1.0)),
        store.add(format!("{name}.shift"), Tensor::zeros(&[d])),
    )
}

impl Backbone {
    pub fn init<R: Rng + ?Sized>(
        config: &BackboneConfig,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.model_dim;
        let embed = Linear::init(store, "backbone.embed", config.feature_dim, d, 1.0, rng);
        let pos = store.add(
            "backbone.pos",
            Tensor::randn(&[config.seq_len, d], 0.5, rng),
        );
        let special = config
            .special_token
            .then(|| store.add("backbone.special", Tensor::randn(&[d], 1.0, rng)));
        let mut blocks = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let name = format!("backbone.block{l}");
            blocks.push(Block {
                ln1: layer_norm_params(store, &format!("{name}.ln1"), d),
                attn: MhaParams::init(store, &format!("{name}.attn"), d, config.heads, rng)?,
                ln2: layer_norm_params(store, &format!("{name}.ln2"), d),
                ff_in: Linear::init(store, &format!("{name}.ff_in"), d, 2 * d, 1.0, rng),
                ff_out: Linear::init(store, &format!("{name}.ff_out"), 2 * d, d, 1.0, rng),
            });
        }
        Ok(Backbone {
            config: config.clone(),
            embed,
            pos,
            special,
            blocks,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    /// `tokens: [B, S, F]` to the hidden states `H_0 … H_L`, each `[B, S, D]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, tokens: Var) -> Result<Vec<Var>> {
        let c = &self.config;
        let ts = tape.shape(tokens);
        if ts.len() != 3 || ts[1] != c.seq_len || ts[2] != c.feature_dim {
            return Err(Error::Shape(format!(
                "tokens {ts:?}, expected [B, {}, {}]",
                c.seq_len, c.feature_dim
            )));
        }
        let x = self.embed.forward(tape, store, tokens)?;
        let pos = tape.param(store, self.pos);
        let mut h = tape.add_broadcast(x, pos)?;
        if let Some(sp) = self.special {
            let e = tape.param(store, sp);
            h = tape.add_at_pos(h, e, 0)?;
        }
        let mut states = vec![h];
        for b in &self.blocks {
            let (g1, s1) = (tape.param(store, b.ln1.0), tape.param(store, b.ln1.1));
            let n1 = tape.layer_norm(h, g1, s1)?;
            let a = b.attn.forward(tape, store, n1, n1, n1)?;
            let mid = tape.add(h, a)?;
            let (g2, s2) = (tape.param(store, b.ln2.0), tape.param(store, b.ln2.1));
            let n2 = tape.layer_norm(mid, g2, s2)?;
            let f = b.ff_in.forward(tape, store, n2)?;
            let f = tape.silu(f)?;
            let f = b.ff_out.forward(tape, store, f)?;
            h = tape.add(mid, f)?;
            states.push(h);
        }
        Ok(states)
    }

    /// Hidden states for a plain token tensor `[B, S, F]` or `[S, F]`.
    pub fn encode(&self, store: &ParamStore, tokens: &Tensor) -> Result<Vec<Tensor>> {
        let t = if tokens.shape().len() == 2 {
            tokens.clone().reshape(&[1, tokens.shape()[0], tokens.shape()[1]])?
        } else {
            tokens.clone()
        };
        let mut tape = Tape::new();
        let x = tape.input(t);
        let states = self.forward(&mut tape, store, x)?;
        Ok(states.into_iter().map(|v| tape.value(v).clone()).collect())
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.embed.ids();
        ids.push(self.pos);
        ids.extend(self.special);
        for b in &self.blocks {
            ids.extend([b.ln1.0, b.ln1.1, b.ln2.0, b.ln2.1]);
            ids.extend(b.attn.param_ids());
            ids.extend(b.ff_in.ids());
            ids.extend(b.ff_out.ids());
        }
        ids
    }

    #[cfg(test)]
    pub(crate) fn attention_blocks(&self) -> Vec<MhaParams> {
        self.blocks.iter().map(|b| b.attn).collect()
    }
}

/// Lay a sample out as `[S, F]` tokens.
///
/// Position 0 is left empty for the special token when enabled. The next
/// position carries the shortcut bit as ±1 on every channel, followed by the
/// feature vector in `F`-wide chunks and zero padding.
pub fn embed_sample(sample: &SyntheticSample, config: &BackboneConfig) -> Result<Tensor> {
    embed_features(&sample.features, sample.shortcut, config)
}

pub fn embed_features(features: &[f64], shortcut: bool, config: &BackboneConfig) -> Result<Tensor> {
    if features.len() > config.feature_capacity() {
        return Err(Error::config(
            "backbone.seq_len",
            format!(
                "{} features exceed the capacity of {}",
                features.len(),
                config.feature_capacity()
            ),
        ));
    }
    let f = config.feature_dim;
    let mut data = vec![0.0; config.seq_len * f];
    let sp = config.shortcut_pos();
    let bit = if shortcut { 1.0 } else { -1.0 };
    data[sp * f..(sp + 1) * f].fill(bit);
    data[(sp + 1) * f..][..features.len()].copy_from_slice(features);
    Tensor::new(vec![config.seq_len, f], data)
}

/// Stack samples into one `[B, S, F]` batch.
pub fn embed_batch(samples: &[&SyntheticSample], config: &BackboneConfig) -> Result<Tensor> {
    let mut data = Vec::with_capacity(samples.len() * config.seq_len * config.feature_dim);
    for s in samples {
        data.extend_from_slice(embed_sample(s, config)?.data());
    }
    Tensor::new(vec![samples.len(), config.seq_len, config.feature_dim], data)
}
