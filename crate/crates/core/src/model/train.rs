//! Mini-batch SGD with momentum and L2 weight decay.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corr::AdjacencyMatrix;
use crate::embeddings::EmbeddingMatrix;
use crate::error::{Error, Result};

use super::{loss_and_gradients, GatnParams, Gradients, LabeledSample};

/// Step schedule: multiply the learning rate by `factor` every `every` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrDecay {
    pub factor: f64,
    pub every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub lr_decay: Option<LrDecay>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.03,
            momentum: 0.9,
            weight_decay: 0.1,
            epochs: 50,
            batch_size: 16,
            seed: 42,
            lr_decay: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // lr = 0 is accepted so a frozen run can be used as a baseline.
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Invalid(format!("lr must be >= 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Invalid(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Invalid(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Invalid("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch_size must be >= 1".into()));
        }
        if let Some(d) = self.lr_decay {
            if d.every == 0 || !(d.factor > 0.0 && d.factor.is_finite()) {
                return Err(Error::Invalid(format!("invalid lr decay {d:?}")));
            }
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_decay {
            Some(d) => self.lr * d.factor.powi((epoch / d.every) as i32),
            None => self.lr,
        }
    }
}

fn step_with_lr(
    params: &mut GatnParams,
    grads: &Gradients,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<()> {
    let mut velocity = std::mem::replace(
        &mut params.velocity,
        Gradients {
            gat: None,
            gcn: Vec::new(),
        },
    );
    let result = (|| {
        let mut thetas = params.tensors_mut();
        let mut vs = velocity.tensors_mut();
        let gs = grads.tensors();
        if thetas.len() != gs.len() || vs.len() != gs.len() {
            return Err(Error::Invalid(format!(
                "gradient bundle has {} tensors, parameters have {}",
                gs.len(),
                thetas.len()
            )));
        }
        for ((theta, v), g) in thetas.iter_mut().zip(vs.iter_mut()).zip(&gs) {
            if theta.shape() != g.shape() || v.shape() != g.shape() {
                return Err(Error::shape("sgd_step", theta.shape(), g.shape()));
            }
        }
        for ((theta, v), g) in thetas.iter_mut().zip(vs.iter_mut()).zip(gs) {
            let theta = theta.as_mut_slice();
            let v = v.as_mut_slice();
            for ((t, vel), &gr) in theta.iter_mut().zip(v.iter_mut()).zip(g.as_slice()) {
                *vel = cfg.momentum * *vel + gr + cfg.weight_decay * *t;
                *t -= lr * *vel;
            }
        }
        Ok(())
    })();
    params.velocity = velocity;
    result
}

/// `v <- momentum * v + (g + weight_decay * theta)`, `theta <- theta - lr * v`.
pub fn sgd_step(params: &mut GatnParams, grads: &Gradients, cfg: &TrainConfig) -> Result<()> {
    step_with_lr(params, grads, cfg, cfg.lr)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: GatnParams,
    /// Sample-weighted mean training loss seen during each epoch.
    pub loss_history: Vec<f64>,
}

/// Trains from `init` for `cfg.epochs` epochs with seeded per-epoch shuffling.
/// Single-threaded and deterministic for a given seed.
pub fn train(
    cfg: &TrainConfig,
    init: GatnParams,
    z: &EmbeddingMatrix,
    a: &AdjacencyMatrix,
    dataset: &[LabeledSample],
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    let mut params = init;
    params.validate(z.n(), z.dim())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let lr = cfg.lr_at(epoch);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<LabeledSample> = chunk.iter().map(|&i| dataset[i].clone()).collect();
            let (loss, grads) = loss_and_gradients(&params, z, a, &batch)?;
            total += loss * batch.len() as f64;
            step_with_lr(&mut params, &grads, cfg, lr)?;
        }
        history.push(total / dataset.len() as f64);
    }
    Ok(TrainOutcome {
        params,
        loss_history: history,
    })
}
