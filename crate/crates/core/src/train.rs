//! Shared optimisation loop: batch gradients in, Adam steps and loss records out.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::Model;
use crate::numerics::{AdamConfig, AdamState, Gradients, ParamStore};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub clip_norm: f64,
    /// Probability of a video+event+text batch during pre-training.
    pub lambda: f64,
    /// Fraction of items masked per sample.
    pub mask_prob: f64,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    /// Decay the learning rate linearly towards zero over the run.
    pub lr_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 400,
            batch_size: 8,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1.0,
            lambda: 1.0 / 3.0,
            mask_prob: 0.15,
            checkpoint_every: 0,
            lr_decay: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(alloc::format!("train.lr {} must be positive", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(alloc::format!("train.lambda {} not in [0, 1]", self.lambda)));
        }
        if !(self.mask_prob > 0.0 && self.mask_prob <= 1.0) {
            return Err(Error::Config(alloc::format!("train.mask_prob {} not in (0, 1]", self.mask_prob)));
        }
        if self.clip_norm < 0.0 {
            return Err(Error::Config("train.clip_norm must be non-negative".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Mlm,
    Mvfr,
    Mefm,
    Ed,
    Ec,
    Concept,
    Boundary,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Mlm => "mlm",
            Task::Mvfr => "mvfr",
            Task::Mefm => "mefm",
            Task::Ed => "ed",
            Task::Ec => "ec",
            Task::Concept => "concept",
            Task::Boundary => "boundary",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub task: Task,
    pub loss: f64,
}

/// Independent random stream for `(seed, stage, index)`.
pub fn derived_rng(seed: u64, stage: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stage.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(index);
    rng
}

/// Anything that owns a parameter store the loop can update.
pub trait Trainable {
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
}

impl Trainable for Model {
    fn store(&self) -> &ParamStore {
        &self.params
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
}

/// Result of one batch: summed gradients and per-task losses.
pub struct StepOutput {
    pub grads: Gradients,
    pub losses: Vec<(Task, f64)>,
}

/// Runs `config.steps` optimisation steps. `step_fn` receives the model, the
/// step index and that step's random stream; `on_checkpoint` is called every
/// `checkpoint_every` steps and after the last one.
pub fn run<M: Trainable>(
    model: &mut M,
    config: &TrainConfig,
    seed: u64,
    stage: u64,
    mut step_fn: impl FnMut(&M, usize, &mut ChaCha8Rng) -> Result<StepOutput>,
    mut on_checkpoint: impl FnMut(usize, &M) -> Result<()>,
) -> Result<Vec<LossRecord>> {
    config.validate()?;
    let mut adam = AdamState::new(config.adam(), model.store().len());
    let mut records = Vec::with_capacity(config.steps * 2);
    for step in 0..config.steps {
        let mut rng = derived_rng(seed, stage, step as u64);
        let StepOutput { mut grads, losses } = step_fn(model, step, &mut rng)?;
        for &(task, loss) in &losses {
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { step, task: task.name(), value: loss });
            }
            records.push(LossRecord { step, task, loss });
        }
        if !grads.is_finite() {
            let task = losses.first().map_or("unknown", |l| l.0.name());
            return Err(Error::NonFiniteLoss { step, task, value: f64::NAN });
        }
        if config.clip_norm > 0.0 {
            grads.clip_global_norm(config.clip_norm);
        }
        if config.lr_decay {
            adam.config.lr = config.lr * (config.steps - step) as f64 / config.steps as f64;
        }
        adam.step(model.store_mut(), &grads)?;
        if config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0 && step + 1 < config.steps {
            on_checkpoint(step + 1, model)?;
        }
    }
    on_checkpoint(config.steps, model)?;
    Ok(records)
}

/// Mean loss of `task` over a window of steps, for quick progress checks.
pub fn mean_loss(records: &[LossRecord], task: Task, steps: core::ops::Range<usize>) -> Option<f64> {
    let vals: Vec<f64> =
        records.iter().filter(|r| r.task == task && steps.contains(&r.step)).map(|r| r.loss).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Graph, ParamStore};

    struct Scalar(ParamStore);

    impl Trainable for Scalar {
        fn store(&self) -> &ParamStore {
            &self.0
        }

        fn store_mut(&mut self) -> &mut ParamStore {
            &mut self.0
        }
    }

    /// Final weight after four steps under a constant unit gradient. Adam's
    /// normalised step is close to the learning rate itself.
    fn final_weight(lr_decay: bool) -> f64 {
        let mut store = ParamStore::new();
        let id = store.add_zeros("w", 1, 1);
        let mut m = Scalar(store);
        let cfg = TrainConfig { steps: 4, lr: 0.1, clip_norm: 0.0, lr_decay, ..TrainConfig::default() };
        let step = |m: &Scalar, _: usize, _: &mut ChaCha8Rng| {
            let mut g = Graph::new();
            let w = g.param(m.store(), id);
            let loss = g.sum(w);
            Ok(StepOutput { grads: g.param_grads(loss, m.store())?, losses: alloc::vec![(Task::Ed, 0.0)] })
        };
        run(&mut m, &cfg, 0, 0, step, |_, _| Ok(())).unwrap();
        m.0.get(id).item()
    }

    #[test]
    fn linear_decay_shrinks_the_total_update() {
        // constant: four steps of ~0.1; linear: 0.1 * (4 + 3 + 2 + 1) / 4
        assert!((final_weight(false) + 0.4).abs() < 1e-6);
        assert!((final_weight(true) + 0.25).abs() < 1e-6);
    }
}
