//! Reward heads over backbone hidden states, and the full reward model.
//!
//! The progressive query head starts from a learnable query, refines it by
//! attending over a list of selected layers in order, adds a second query's
//! attention over the last layer, and maps the sum to a scalar.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::{embed_batch, Backbone, BackboneConfig};
use crate::dataflow::SyntheticSample;
use crate::numkit::{Linear, MhaParams, ParamId, ParamStore, Tape, Tensor, Var};
use crate::{seed, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HeadKind {
    #[serde(rename = "HPQA")]
    Hpqa,
    LinearLastToken,
    SpecialToken,
    YesTokenLogit,
}

impl HeadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::Hpqa => "HPQA",
            HeadKind::LinearLastToken => "LinearLastToken",
            HeadKind::SpecialToken => "SpecialToken",
            HeadKind::YesTokenLogit => "YesTokenLogit",
        }
    }
}

/// Strictly increasing indices into `[H_0 … H_L]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LayerIndexList(Vec<usize>);

impl LayerIndexList {
    pub fn new(indices: Vec<usize>, layers: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::config("model.layer_indices", "need at least one layer"));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(
                "model.layer_indices",
                format!("{indices:?} is not strictly increasing"),
            ));
        }
        if indices[indices.len() - 1] > layers {
            return Err(Error::config(
                "model.layer_indices",
                format!("{indices:?} exceeds the last layer {layers}"),
            ));
        }
        Ok(LayerIndexList(indices))
    }

    /// `round(k·L/N)` for `k = 1..=N`; always ends at the last layer.
    pub fn evenly_spaced(layers: usize, n: usize) -> Result<Self> {
        if n == 0 || n > layers {
            return Err(Error::config(
                "model.hpqa_stages",
                format!("{n} stages over {layers} layers"),
            ));
        }
        let v = (1..=n)
            .map(|k| ((k * layers) as f64 / n as f64).round() as usize)
            .collect();
        Self::new(v, layers)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `Linear(D→D) → SiLU → Linear(D→1)`.
#[derive(Clone, Copy, Debug)]
pub struct RewardHead {
    pub hidden: Linear,
    pub out: Linear,
}

impl RewardHead {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d: usize, rng: &mut R) -> Self {
        RewardHead {
            hidden: Linear::init(store, &format!("{name}.hidden"), d, d, 1.0, rng),
            out: Linear::init(store, &format!("{name}.out"), d, 1, 1.0, rng),
        }
    }

    /// `[B, D] → [B]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, store, x)?;
        let h = tape.silu(h)?;
        let r = self.out.forward(tape, store, h)?;
        tape.column(r, 0)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        [self.hidden.ids(), self.out.ids()].concat()
    }
}

#[derive(Clone, Debug)]
pub struct HpqaParams {
    /// Initial query, `[1, 1, D]`.
    pub q0: ParamId,
    /// Query of the last-layer branch, `[1, 1, D]`.
    pub q_res: ParamId,
    pub stages: Vec<MhaParams>,
    pub res: MhaParams,
    pub head: RewardHead,
    pub indices: LayerIndexList,
}

impl HpqaParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        dim: usize,
        heads: usize,
        indices: LayerIndexList,
        rng: &mut R,
    ) -> Result<Self> {
        let q0 = store.add("hpqa.q0", Tensor::randn(&[1, 1, dim], 1.0, rng));
        let q_res = store.add("hpqa.q_res", Tensor::randn(&[1, 1, dim], 1.0, rng));
        let stages = (0..indices.len())
            .map(|k| MhaParams::init(store, &format!("hpqa.stage{k}"), dim, heads, rng))
            .collect::<Result<Vec<_>>>()?;
        let res = MhaParams::init(store, "hpqa.res", dim, heads, rng)?;
        let head = RewardHead::init(store, "hpqa.head", dim, rng);
        Ok(HpqaParams {
            q0,
            q_res,
            stages,
            res,
            head,
            indices,
        })
    }

    /// Scalar reward per batch row from `[H_0 … H_L]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, hidden: &[Var]) -> Result<Var> {
        let last = hidden.len().checked_sub(1).ok_or_else(|| {
            Error::Shape("no hidden states".into())
        })?;
        if let Some(&l) = self.indices.as_slice().iter().find(|&&l| l > last) {
            return Err(Error::Shape(format!(
                "layer index {l} out of range for {} hidden states",
                hidden.len()
            )));
        }
        let b = tape.shape(hidden[0])[0];
        let q0 = tape.param(store, self.q0);
        let mut q = tape.broadcast_batch(q0, b)?;
        for (mha, &l) in self.stages.iter().zip(self.indices.as_slice()) {
            q = mha.forward(tape, store, q, hidden[l], hidden[l])?;
        }
        let qr = tape.param(store, self.q_res);
        let qr = tape.broadcast_batch(qr, b)?;
        let o = self.res.forward(tape, store, qr, hidden[last], hidden[last])?;
        let s = tape.add(q, o)?;
        let d = tape.shape(s)[2];
        let s = tape.reshape(s, &[b, d])?;
        self.head.forward(tape, store, s)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.q0, self.q_res];
        for m in &self.stages {
            ids.extend(m.param_ids());
        }
        ids.extend(self.res.param_ids());
        ids.extend(self.head.param_ids());
        ids
    }
}

#[derive(Clone, Debug)]
pub enum Head {
    Hpqa(HpqaParams),
    /// Affine map of the last position of `H_L`.
    LinearLastToken(Linear),
    /// Affine map of position 0 of `H_L`, where the special token sits.
    SpecialToken(Linear),
    /// Two-way classifier over mean-pooled `H_L`; the score is logit 0.
    YesTokenLogit(Linear),
}

impl Head {
    pub fn kind(&self) -> HeadKind {
        match self {
            Head::Hpqa(_) => HeadKind::Hpqa,
            Head::LinearLastToken(_) => HeadKind::LinearLastToken,
            Head::SpecialToken(_) => HeadKind::SpecialToken,
            Head::YesTokenLogit(_) => HeadKind::YesTokenLogit,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, hidden: &[Var]) -> Result<Var> {
        let last = *hidden
            .last()
            .ok_or_else(|| Error::Shape("no hidden states".into()))?;
        match self {
            Head::Hpqa(p) => p.forward(tape, store, hidden),
            Head::LinearLastToken(lin) => {
                let s = tape.shape(last)[1];
                let x = tape.select_pos(last, s - 1)?;
                let r = lin.forward(tape, store, x)?;
                tape.column(r, 0)
            }
            Head::SpecialToken(lin) => {
                let x = tape.select_pos(last, 0)?;
                let r = lin.forward(tape, store, x)?;
                tape.column(r, 0)
            }
            Head::YesTokenLogit(lin) => {
                let x = tape.mean_pos(last)?;
                let logits = lin.forward(tape, store, x)?;
                tape.column(logits, 0)
            }
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        match self {
            Head::Hpqa(p) => p.param_ids(),
            Head::LinearLastToken(l) | Head::SpecialToken(l) | Head::YesTokenLogit(l) => {
                l.ids()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub head: HeadKind,
    /// Layers feeding the progressive stages; evenly spaced when absent.
    pub layer_indices: Option<Vec<usize>>,
    pub hpqa_stages: usize,
    /// Attention heads inside the adapter.
    pub adapter_heads: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: BackboneConfig::default(),
            head: HeadKind::Hpqa,
            layer_indices: None,
            hpqa_stages: 3,
            adapter_heads: 4,
        }
    }
}

impl ModelConfig {
    pub fn resolved_indices(&self) -> Result<LayerIndexList> {
        match &self.layer_indices {
            Some(v) => LayerIndexList::new(v.clone(), self.backbone.layers),
            None => LayerIndexList::evenly_spaced(self.backbone.layers, self.hpqa_stages),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.head == HeadKind::Hpqa {
            self.resolved_indices()?;
            if self.adapter_heads == 0 || self.backbone.model_dim % self.adapter_heads != 0 {
                return Err(Error::config(
                    "model.adapter_heads",
                    format!(
                        "model_dim {} not divisible by {}",
                        self.backbone.model_dim, self.adapter_heads
                    ),
                ));
            }
        }
        if self.head == HeadKind::SpecialToken && !self.backbone.special_token {
            return Err(Error::config(
                "model.head",
                "SpecialToken needs backbone.special_token = true",
            ));
        }
        Ok(())
    }
}

/// Scores samples with one scalar each.
pub trait Scorer: Sync {
    fn score(&self, samples: &[&SyntheticSample]) -> Result<Vec<f64>>;
}

/// Scores by the generating latent quality.
#[derive(Clone, Copy, Debug, Default)]
pub struct OracleScorer;

impl Scorer for OracleScorer {
    fn score(&self, samples: &[&SyntheticSample]) -> Result<Vec<f64>> {
        Ok(samples.iter().map(|s| s.latent_quality).collect())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConstantScorer(pub f64);

impl Scorer for ConstantScorer {
    fn score(&self, samples: &[&SyntheticSample]) -> Result<Vec<f64>> {
        Ok(vec![self.0; samples.len()])
    }
}

const MAGIC: &[u8; 8] = b"RMLABCKP";
const VERSION: u32 = 1;
const SCORE_CHUNK: usize = 128;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: ModelConfig,
    frozen_backbone: bool,
}

#[derive(Clone, Debug)]
pub struct RewardModel {
    config: ModelConfig,
    store: ParamStore,
    backbone: Backbone,
    head: Head,
}

impl RewardModel {
    /// Initialize from `config.backbone.seed`.
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = seed::derived_rng(config.backbone.seed, "model/backbone");
        let backbone = Backbone::init(&config.backbone, &mut store, &mut rng)?;
        let mut rng = seed::derived_rng(config.backbone.seed, "model/head");
        let d = config.backbone.model_dim;
        let head = match config.head {
            HeadKind::Hpqa => Head::Hpqa(HpqaParams::init(
                &mut store,
                d,
                config.adapter_heads,
                config.resolved_indices()?,
                &mut rng,
            )?),
            HeadKind::LinearLastToken => {
                Head::LinearLastToken(Linear::init(&mut store, "head.linear", d, 1, 1.0, &mut rng))
            }
            HeadKind::SpecialToken => {
                Head::SpecialToken(Linear::init(&mut store, "head.special", d, 1, 1.0, &mut rng))
            }
            HeadKind::YesTokenLogit => {
                Head::YesTokenLogit(Linear::init(&mut store, "head.yes_no", d, 2, 1.0, &mut rng))
            }
        };
        Ok(RewardModel {
            config: config.clone(),
            store,
            backbone,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn backbone_param_ids(&self) -> Vec<ParamId> {
        self.backbone.param_ids()
    }

    pub fn head_param_ids(&self) -> Vec<ParamId> {
        self.head.param_ids()
    }

    pub fn set_backbone_frozen(&mut self, frozen: bool) {
        for id in self.backbone.param_ids() {
            self.store.set_trainable(id, !frozen);
        }
    }

    pub fn backbone_frozen(&self) -> bool {
        self.backbone
            .param_ids()
            .iter()
            .all(|&id| !self.store.is_trainable(id))
    }

    /// `tokens: [B, S, F]` to rewards `[B]`.
    pub fn forward(&self, tape: &mut Tape, tokens: Var) -> Result<Var> {
        let hidden = self.backbone.forward(tape, &self.store, tokens)?;
        self.head.forward(tape, &self.store, &hidden)
    }

    pub fn score_tokens(&self, tokens: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let x = tape.input(tokens.clone());
        let r = self.forward(&mut tape, x)?;
        Ok(tape.value(r).data().to_vec())
    }

    fn to_writer<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let header = serde_json::to_vec(&CheckpointHeader {
            config: self.config.clone(),
            frozen_backbone: self.backbone_frozen(),
        })?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        w.write_all(&(self.store.len() as u64).to_le_bytes())?;
        for id in self.store.ids() {
            let name = self.store.name(id).as_bytes();
            let t = self.store.get(id);
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.to_writer(&mut buf).expect("writing to memory");
        buf
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.to_writer(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint { msg, .. } => Error::Checkpoint {
                path: path.to_path_buf(),
                msg,
            },
            e => e,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: String| Error::Checkpoint {
            path: "<memory>".into(),
            msg,
        };
        let mut r = bytes;
        let mut take = |n: usize| -> Result<Vec<u8>> {
            let mut buf = vec![0u8; n];
            r.read_exact(&mut buf)
                .map_err(|_| bad("truncated file".into()))?;
            Ok(buf)
        };
        if take(8)? != MAGIC {
            return Err(bad("not a reward-model checkpoint".into()));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        if hlen > bytes.len() {
            return Err(bad("truncated file".into()));
        }
        let header: CheckpointHeader = serde_json::from_slice(&take(hlen)?)
            .map_err(|e| bad(format!("header: {e}")))?;
        let mut model = RewardModel::new(&header.config)?;
        let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        if count != model.store.len() {
            return Err(bad(format!(
                "{count} tensors, configuration implies {}",
                model.store.len()
            )));
        }
        for _ in 0..count {
            let nlen = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(nlen.min(bytes.len()))?)
                .map_err(|_| bad("tensor name is not UTF-8".into()))?;
            let ndim = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            if ndim > 8 {
                return Err(bad(format!("`{name}` has {ndim} dimensions")));
            }
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize);
            }
            let id = model
                .store
                .find(&name)
                .ok_or_else(|| bad(format!("unexpected tensor `{name}`")))?;
            if model.store.get(id).shape() != shape.as_slice() {
                return Err(bad(format!("`{name}` has shape {shape:?}")));
            }
            let n: usize = shape.iter().product();
            let raw = take(n * 8)?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(bad(format!("`{name}` holds non-finite values")));
            }
            model.store.set(id, Tensor::new(shape, data)?)?;
        }
        if !take(1).map(|b| b.is_empty()).unwrap_or(true) {
            return Err(bad("trailing bytes".into()));
        }
        model.set_backbone_frozen(header.frozen_backbone);
        Ok(model)
    }
}

impl Scorer for RewardModel {
    fn score(&self, samples: &[&SyntheticSample]) -> Result<Vec<f64>> {
        let chunks: Vec<Result<Vec<f64>>> = samples
            .par_chunks(SCORE_CHUNK)
            .map(|c| self.score_tokens(&embed_batch(c, &self.config.backbone)?))
            .collect();
        let mut out = Vec::with_capacity(samples.len());
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }
}
