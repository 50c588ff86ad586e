use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamStore};
use super::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected Adam moments for every parameter of a store.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, n_params: usize) -> Self {
        Self { config, step: 0, m: alloc::vec![None; n_params], v: alloc::vec![None; n_params] }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, index: usize) -> (Option<&Tensor>, Option<&Tensor>) {
        (self.m[index].as_ref(), self.v[index].as_ref())
    }

    /// One update. Parameters whose gradient is absent are skipped and their
    /// moments left untouched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if !(self.config.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.config.lr)));
        }
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} gradients / {} moment slots for {} parameters",
                grads.len(),
                self.m.len(),
                params.len()
            )));
        }
        for id in params.ids() {
            if let Some(g) = grads.get(id) {
                if !g.same_shape(params.get(id)) {
                    return Err(Error::ShapeMismatch(format!(
                        "gradient {:?} for parameter {} of shape {:?}",
                        g.shape(),
                        params.name(id),
                        params.get(id).shape()
                    )));
                }
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - libm::pow(beta1, t as f64);
        let bc2 = 1.0 - libm::pow(beta2, t as f64);
        for id in params.ids() {
            let Some(g) = grads.get(id) else { continue };
            let i = id.index();
            let p = params.get_mut(id);
            let m = self.m[i].get_or_insert_with(|| Tensor::zeros(p.rows(), p.cols()));
            let v = self.v[i].get_or_insert_with(|| Tensor::zeros(p.rows(), p.cols()));
            for (((pv, &gv), mv), vv) in
                p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut())
            {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= lr * mhat / (libm::sqrt(vhat) + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Graph;

    fn single(value: f64) -> (ParamStore, crate::numerics::ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::scalar(value));
        (store, id)
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let (mut store, id) = single(1.5);
        let mut adam = AdamState::new(AdamConfig::default(), 1);
        let mut grads = Gradients::empty(1);
        grads.set(id, Tensor::scalar(0.0));
        adam.step(&mut store, &grads).unwrap();
        assert_eq!(store.get(id).item(), 1.5);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (mut store, id) = single(0.0);
        let cfg = AdamConfig { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        let mut adam = AdamState::new(cfg, 1);
        let mut grads = Gradients::empty(1);
        grads.set(id, Tensor::scalar(1.0));
        adam.step(&mut store, &grads).unwrap();
        // m̂ = v̂ = 1, so Δ = -0.1 / (1 + 1e-8)
        assert!((store.get(id).item() + 0.1).abs() < 1e-8);
    }

    #[test]
    fn converges_on_a_quadratic() {
        let (mut store, id) = single(0.0);
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        let mut adam = AdamState::new(cfg, 1);
        for _ in 0..100 {
            let mut g = Graph::new();
            let x = g.param(&store, id);
            let two = g.constant(Tensor::scalar(-2.0));
            let d = g.add(x, two);
            let sq = g.mul(d, d);
            let grads = g.param_grads(sq, &store).unwrap();
            adam.step(&mut store, &grads).unwrap();
        }
        assert!((store.get(id).item() - 2.0).abs() < 0.1, "x = {}", store.get(id).item());
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let (mut store, id) = single(0.0);
        let mut adam = AdamState::new(AdamConfig::default(), 1);
        let mut grads = Gradients::empty(1);
        grads.set(id, Tensor::zeros(2, 2));
        assert!(matches!(adam.step(&mut store, &grads), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn absent_gradient_skips_parameter() {
        let (mut store, id) = single(3.0);
        let mut adam = AdamState::new(AdamConfig::default(), 1);
        adam.step(&mut store, &Gradients::empty(1)).unwrap();
        assert_eq!(store.get(id).item(), 3.0);
        assert!(adam.moments(0).0.is_none());
    }
}
