use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{backward_parts, forward_parts, AdaptedClassifier, Adam};
use crate::error::{ensure, Result};
use crate::numerics::{
    cross_entropy_unchecked, ema_update, softmax_unchecked, ProbVector, SIMPLEX_TOL,
};
use crate::rng::{derive_indexed, rng_from};
use crate::store::SampleStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    /// EMA momentum for soft-label refinement; 1 disables refinement.
    pub mu: f64,
    /// Epochs before soft labels start tracking the model's predictions.
    pub warmup_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            base_lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 32,
            mu: 0.9,
            warmup_epochs: 3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!((0.0..=1.0).contains(&self.mu), "mu {} outside [0, 1]", self.mu);
        ensure!(self.batch_size >= 1, "batch_size must be at least 1");
        ensure!(self.base_lr.is_finite() && self.base_lr >= 0.0, "base_lr must be finite and >= 0");
        ensure!(
            (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2),
            "Adam betas must lie in [0, 1)"
        );
        ensure!(
            self.epochs == 0 || self.warmup_epochs <= self.epochs,
            "warmup_epochs {} exceeds epochs {}",
            self.warmup_epochs,
            self.epochs
        );
        Ok(())
    }

    /// Same config with refinement disabled (plain cross-entropy).
    pub fn plain(&self) -> Self {
        Self { mu: 1.0, ..self.clone() }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    /// Mean minibatch loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Number of epochs after which soft labels were refined.
    pub refinements: usize,
}

/// Mean cross-entropy over `batch` and its gradient in
/// [`AdaptedClassifier::trainable_params`] order.
pub fn batch_loss_and_grad(
    model: &AdaptedClassifier,
    batch: &[(&[f64], &ProbVector)],
) -> Result<(f64, Vec<f64>)> {
    ensure!(!batch.is_empty(), "empty batch");
    let k = model.num_classes();
    let n_adapter = model.adapter.param_count();
    let mut grad = vec![0.0; model.trainable_len()];
    let (g_adapter, g_head) = grad.split_at_mut(n_adapter);
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut dz = vec![0.0; k];
    for (x, q) in batch {
        ensure!(x.len() == model.input_dim(), "input length mismatch in batch");
        ensure!(q.len() == k, "label length mismatch in batch");
        let act = forward_parts(model.backbone(), &model.adapter, &model.head, x);
        loss += cross_entropy_unchecked(&act.logits, q.entries());
        let p = softmax_unchecked(&act.logits);
        let qsum: f64 = q.entries().iter().sum();
        for ((d, pi), qi) in dz.iter_mut().zip(&p).zip(q.entries()) {
            *d = pi * qsum - qi;
        }
        backward_parts(&model.adapter, &model.head, x, &act, &dz, scale, g_adapter, g_head);
    }
    Ok((loss * scale, grad))
}

/// One Adam step on the mean cross-entropy of `batch`. Returns the batch
/// loss before the step.
pub fn grad_step(
    model: &mut AdaptedClassifier,
    adam: &mut Adam,
    batch: &[(&[f64], &ProbVector)],
    lr: f64,
) -> Result<f64> {
    ensure!(
        batch.iter().all(|(_, q)| q.is_on_simplex(SIMPLEX_TOL)),
        "batch labels must lie on the simplex"
    );
    let (loss, grad) = batch_loss_and_grad(model, batch)?;
    let mut params = model.trainable_params();
    adam.step(&mut params, &grad, lr);
    model.set_trainable_params(&params)?;
    Ok(loss)
}

/// Trains on `store` with soft-label refinement: after every epoch past the
/// warm-up, each label moves to `μ·q + (1−μ)·softmax(logits)`.
pub fn label_refine_train(
    model: &mut AdaptedClassifier,
    store: &mut SampleStore,
    cfg: &TrainConfig,
) -> Result<TrainSummary> {
    cfg.validate()?;
    ensure!(!store.is_empty(), "cannot train on an empty sample store");
    let mut adam = Adam::new(model.trainable_len(), cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut order: Vec<usize> = (0..store.len()).collect();
    let mut summary = TrainSummary::default();
    for epoch in 0..cfg.epochs {
        let lr = super::cosine_lr(epoch, cfg.epochs, cfg.base_lr);
        let mut rng = rng_from(derive_indexed(cfg.seed, "shuffle", epoch as u64));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&[f64], &ProbVector)> = chunk
                .iter()
                .map(|&i| {
                    let s = store.get(i);
                    (s.input.as_slice(), s.label())
                })
                .collect();
            loss_sum += grad_step(model, &mut adam, &batch, lr)?;
            batches += 1;
        }
        summary.epoch_losses.push(loss_sum / batches as f64);

        if epoch + 1 > cfg.warmup_epochs && cfg.mu < 1.0 {
            for i in 0..store.len() {
                let p = ProbVector::from_raw(softmax_unchecked(&model.forward(&store.get(i).input)?));
                let q = ema_update(store.get(i).label(), &p, cfg.mu)?;
                store.set_label(i, q);
            }
            summary.refinements += 1;
        }
    }
    Ok(summary)
}

/// `(class, confidence)` for every entry of `store`.
pub fn predict_store(model: &AdaptedClassifier, store: &SampleStore) -> Result<Vec<(usize, f64)>> {
    store.iter().map(|s| model.predict(&s.input)).collect()
}
