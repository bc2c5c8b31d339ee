use crate::numkit::{GradSet, ParamStore, Tensor};

/// AdamW with decoupled weight decay; frozen parameters are left untouched.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(store: &ParamStore, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Tensor> = store.ids().map(|id| Tensor::zeros(store.get(id).shape())).collect();
        AdamW {
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &GradSet, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            if !store.is_trainable(id) {
                continue;
            }
            let k = id.index();
            let g = grads.get(id).data();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            let p = store.get_mut(id).data_mut();
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let update = (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                p[i] -= lr * (update + self.weight_decay * p[i]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_the_gradient_sign() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_vec(vec![1.0, -2.0, 0.5]));
        let mut opt = AdamW::new(&store, 0.9, 0.999, 1e-12, 0.0);
        let grads = GradSet {
            grads: vec![Tensor::from_vec(vec![3.0, -0.1, 0.0])],
        };
        opt.step(&mut store, &grads, 0.01);
        let p = store.get(id).data();
        assert!((p[0] - 0.99).abs() < 1e-9);
        assert!((p[1] + 1.99).abs() < 1e-9);
        assert_eq!(p[2], 0.5);
    }

    #[test]
    fn decay_is_decoupled_and_skips_frozen() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::from_vec(vec![2.0]));
        let b = store.add("b", Tensor::from_vec(vec![2.0]));
        store.set_trainable(b, false);
        let mut opt = AdamW::new(&store, 0.9, 0.999, 1e-8, 0.1);
        let zero = store.zero_grads();
        opt.step(&mut store, &zero, 0.5);
        assert!((store.get(a).data()[0] - (2.0 - 0.5 * 0.1 * 2.0)).abs() < 1e-15);
        assert_eq!(store.get(b).data()[0], 2.0);
    }
}
