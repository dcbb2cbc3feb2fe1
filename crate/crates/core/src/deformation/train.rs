// SPDX-License-Identifier: Apache-2.0

//! Mini-batch Adam training of a coupling field.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CouplingField, DeformError, LossWeights};
use crate::flow_lift::SceneFlowSample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub iterations: u32,
    pub batch_size: u32,
    pub lambda_flow: f64,
    pub lambda_rad: f64,
    pub seed: u64,
    pub optimizer: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            iterations: 2000,
            batch_size: 1024,
            lambda_flow: 1.0,
            lambda_rad: 0.5,
            seed: 0,
            optimizer: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), DeformError> {
        let o = &self.optimizer;
        let bad = |m: &str| Err(DeformError::InvalidConfig(m.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.lambda_flow >= 0.0 && self.lambda_rad >= 0.0) {
            return bad("loss weights must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.epsilon > 0.0) {
            return bad("Adam needs beta in [0, 1) and epsilon > 0");
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            flow: self.lambda_flow,
            rad: self.lambda_rad,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u32,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    /// One bias-corrected Adam step, in place.
    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64, cfg: &AdamConfig) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step as i32);
        let c2 = 1.0 - cfg.beta2.powi(self.step as i32);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub field: CouplingField,
    /// Weighted mini-batch loss before each update.
    pub history: Vec<f64>,
    /// Unweighted losses of the trained field on all samples.
    pub final_loss_flow: f64,
    pub final_loss_rad: f64,
}

/// Seeded mini-batches: walk a shuffled permutation, reshuffling when fewer
/// than `batch` indices remain. A batch covering every sample keeps the
/// input order.
struct Batcher {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    batch: usize,
}

impl Batcher {
    fn new(n: usize, batch: usize, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..n).collect(),
            cursor: n,
            batch: batch.min(n),
        }
    }

    fn next(&mut self) -> &[usize] {
        let n = self.order.len();
        if self.batch == n {
            return &self.order;
        }
        if self.cursor + self.batch > n {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let s = self.cursor;
        self.cursor += self.batch;
        &self.order[s..s + self.batch]
    }
}

/// Trains a copy of `field` with Adam for `cfg.iterations` steps.
pub fn fit(
    field: &CouplingField,
    samples: &[SceneFlowSample],
    cfg: &TrainConfig,
) -> Result<FitResult, DeformError> {
    cfg.validate()?;
    field.validate()?;
    if samples.is_empty() {
        return Err(DeformError::NoSamples);
    }
    let weights = cfg.weights();
    let mut field = field.clone();
    let mut params = field.params();
    let mut adam = AdamState::new(params.len());
    let mut batcher = Batcher::new(samples.len(), cfg.batch_size as usize, cfg.seed);
    let mut batch = Vec::with_capacity(cfg.batch_size as usize);
    let mut history = Vec::with_capacity(cfg.iterations as usize);
    for iteration in 0..cfg.iterations {
        batch.clear();
        batch.extend(batcher.next().iter().map(|&i| samples[i]));
        let (lf, lr, grad) = field.loss_and_gradient(&batch, &weights);
        let loss = weights.flow * lf + weights.rad * lr;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(DeformError::NonFiniteLoss { iteration, loss });
        }
        history.push(loss);
        adam.update(&mut params, &grad, cfg.learning_rate, &cfg.optimizer);
        field.set_params(&params)?;
        log::debug!("iter {iteration}: loss {loss:.6e} (flow {lf:.6e}, rad {lr:.6e})");
    }
    let (final_loss_flow, final_loss_rad) = field.losses(samples);
    Ok(FitResult {
        field,
        history,
        final_loss_flow,
        final_loss_rad,
    })
}
