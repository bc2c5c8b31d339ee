use rand::Rng;

use super::{Linear, ParamStore, Tape, Tensor, Var};
use crate::{Error, Result};

/// Projection set of one multi-head attention block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MhaParams {
    pub q_proj: Linear,
    pub k_proj: Linear,
    pub v_proj: Linear,
    pub o_proj: Linear,
    pub heads: usize,
}

impl MhaParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Shape(format!(
                "{name}: width {dim} not divisible by {heads} heads"
            )));
        }
        Ok(MhaParams {
            q_proj: Linear::init(store, &format!("{name}.q"), dim, dim, 1.0, rng),
            k_proj: Linear::init_unbiased(store, &format!("{name}.k"), dim, dim, 1.0, rng),
            v_proj: Linear::init(store, &format!("{name}.v"), dim, dim, 1.0, rng),
            o_proj: Linear::init(store, &format!("{name}.o"), dim, dim, 1.0, rng),
            heads,
        })
    }

    pub fn dim(&self) -> usize {
        self.q_proj.in_dim
    }

    /// `O(softmax(QKᵀ/√d_h) V)` per head; Q, V and O are affine, K is linear.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        query: Var,
        keys: Var,
        values: Var,
    ) -> Result<Var> {
        let q = self.q_proj.forward(tape, store, query)?;
        let k = self.k_proj.forward(tape, store, keys)?;
        let v = self.v_proj.forward(tape, store, values)?;
        let a = tape.attention(q, k, v, self.heads)?;
        self.o_proj.forward(tape, store, a)
    }

    pub fn param_ids(&self) -> Vec<super::ParamId> {
        [self.q_proj, self.k_proj, self.v_proj, self.o_proj]
            .iter()
            .flat_map(|l| l.ids())
            .collect()
    }
}

/// Evaluate one attention block on plain tensors.
pub fn multi_head_attention(
    query: &Tensor,
    keys: &Tensor,
    values: &Tensor,
    store: &ParamStore,
    weights: &MhaParams,
) -> Result<Tensor> {
    let d = weights.dim();
    for (name, t) in [("query", query), ("keys", keys), ("values", values)] {
        if t.shape().len() != 3 || t.shape()[2] != d {
            return Err(Error::Shape(format!(
                "{name} {:?} does not end in model width {d}",
                t.shape()
            )));
        }
    }
    let mut tape = Tape::new();
    let q = tape.input(query.clone());
    let k = tape.input(keys.clone());
    let v = tape.input(values.clone());
    let out = weights.forward(&mut tape, store, q, k, v)?;
    Ok(tape.value(out).clone())
}
