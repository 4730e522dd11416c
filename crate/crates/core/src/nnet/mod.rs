//! The adapted classifier: a frozen tanh backbone layer whose weight carries
//! a rank-r low-rank delta, followed by a trainable linear head.
//!
//! ```text
//! logits = H · tanh((W_b + (α/r)·B·A)·x + b) + c
//! ```
//!
//! Trainable parameters are `{A, B, H, c}`; the backbone never changes after
//! construction. Gradients are derived by hand in [`backward_parts`].

mod checkpoint;
mod optim;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT};
pub use optim::{cosine_lr, Adam};
pub use train::{
    batch_loss_and_grad, grad_step, label_refine_train, predict_store, TrainConfig, TrainSummary,
};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::numerics::{argmax, softmax_unchecked, DenseMatrix, ProbVector};
use crate::rng::rng_for;

/// Standard deviation of the adapter down-projection at initialization.
pub const ADAPTER_INIT_STD: f64 = 0.02;

/// Frozen first layer. Only constructible from a seed (or a checkpoint), and
/// exposes no mutable access.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Backbone {
    weight: DenseMatrix,
    bias: Vec<f64>,
    seed: u64,
}

impl Backbone {
    /// Draws `W_b ~ N(0, 1/d)` and `b ~ N(0, 0.1²)` from `seed`.
    pub fn random(input_dim: usize, hidden_dim: usize, seed: u64) -> Result<Self> {
        ensure!(input_dim >= 1 && hidden_dim >= 1, "backbone dimensions must be positive");
        let mut rng = rng_for(seed, "backbone");
        let w = Normal::new(0.0, 1.0 / (input_dim as f64).sqrt()).expect("valid std");
        let b = Normal::new(0.0, 0.1).expect("valid std");
        let weight = DenseMatrix::from_fn(hidden_dim, input_dim, |_, _| w.sample(&mut rng));
        let bias = (0..hidden_dim).map(|_| b.sample(&mut rng)).collect();
        Ok(Self { weight, bias, seed })
    }

    pub fn weight(&self) -> &DenseMatrix {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// Low-rank delta `ΔW = (α/r)·B·A` on the backbone weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraAdapter {
    /// `A`, rank × input_dim.
    pub down: DenseMatrix,
    /// `B`, hidden_dim × rank.
    pub up: DenseMatrix,
    rank: usize,
    alpha: f64,
}

impl LoraAdapter {
    /// Zero `up`, Gaussian `down` with std [`ADAPTER_INIT_STD`].
    pub fn new(
        input_dim: usize,
        hidden_dim: usize,
        rank: usize,
        alpha: f64,
        seed: u64,
    ) -> Result<Self> {
        ensure!(rank >= 1, "adapter rank must be at least 1");
        ensure!(
            rank <= hidden_dim.min(input_dim),
            "adapter rank {rank} exceeds min(hidden_dim, input_dim) = {}",
            hidden_dim.min(input_dim)
        );
        ensure!(alpha.is_finite(), "adapter alpha must be finite");
        let mut rng = rng_for(seed, "adapter");
        let n = Normal::new(0.0, ADAPTER_INIT_STD).expect("valid std");
        let down = DenseMatrix::from_fn(rank, input_dim, |_, _| n.sample(&mut rng));
        Ok(Self { down, up: DenseMatrix::zeros(hidden_dim, rank), rank, alpha })
    }

    pub fn from_parts(down: DenseMatrix, up: DenseMatrix, alpha: f64) -> Result<Self> {
        let rank = down.rows();
        ensure!(rank >= 1, "adapter rank must be at least 1");
        ensure!(up.cols() == rank, "up has {} columns, rank is {rank}", up.cols());
        ensure!(
            rank <= up.rows().min(down.cols()),
            "adapter rank exceeds min(hidden_dim, input_dim)"
        );
        Ok(Self { down, up, rank, alpha })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `α / r`.
    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn param_count(&self) -> usize {
        self.down.as_slice().len() + self.up.as_slice().len()
    }

    /// `(α/r)·B·A`, hidden_dim × input_dim.
    pub fn delta_weight(&self) -> DenseMatrix {
        self.up.matmul(&self.down).expect("adapter shapes chain").scale(self.scaling())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

impl Head {
    pub fn zeros(num_classes: usize, hidden_dim: usize) -> Result<Self> {
        ensure!(num_classes >= 2, "a classifier head needs at least two classes");
        Ok(Self { weight: DenseMatrix::zeros(num_classes, hidden_dim), bias: vec![0.0; num_classes] })
    }

    pub fn num_classes(&self) -> usize {
        self.weight.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weight.as_slice().len() + self.bias.len()
    }
}

/// Shape of an adapted classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub rank: usize,
    pub alpha: f64,
}

impl ModelDims {
    /// `α = r`, so the adapter scaling is 1.
    pub fn new(input_dim: usize, hidden_dim: usize, num_classes: usize, rank: usize) -> Self {
        Self { input_dim, hidden_dim, num_classes, rank, alpha: rank as f64 }
    }
}

/// Frozen backbone + low-rank adapter + trainable head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptedClassifier {
    backbone: Backbone,
    pub adapter: LoraAdapter,
    pub head: Head,
}

impl AdaptedClassifier {
    pub fn new(backbone: Backbone, adapter: LoraAdapter, head: Head) -> Result<Self> {
        ensure!(
            adapter.down.cols() == backbone.input_dim() && adapter.up.rows() == backbone.hidden_dim(),
            "adapter shape does not match the backbone"
        );
        ensure!(
            head.weight.cols() == backbone.hidden_dim() && head.bias.len() == head.num_classes(),
            "head shape does not match the backbone"
        );
        Ok(Self { backbone, adapter, head })
    }

    /// Fresh model on `backbone`: zero-`up` adapter seeded from `seed`, zero head.
    pub fn fresh(backbone: Backbone, num_classes: usize, rank: usize, alpha: f64, seed: u64) -> Result<Self> {
        let adapter =
            LoraAdapter::new(backbone.input_dim(), backbone.hidden_dim(), rank, alpha, seed)?;
        let head = Head::zeros(num_classes, backbone.hidden_dim())?;
        Self::new(backbone, adapter, head)
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            input_dim: self.backbone.input_dim(),
            hidden_dim: self.backbone.hidden_dim(),
            num_classes: self.head.num_classes(),
            rank: self.adapter.rank(),
            alpha: self.adapter.alpha(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.backbone.input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.head.num_classes()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        ensure!(
            x.len() == self.input_dim(),
            "input length {} != model input_dim {}",
            x.len(),
            self.input_dim()
        );
        Ok(forward_parts(&self.backbone, &self.adapter, &self.head, x).logits)
    }

    pub fn probabilities(&self, x: &[f64]) -> Result<ProbVector> {
        Ok(ProbVector::from_raw(softmax_unchecked(&self.forward(x)?)))
    }

    /// Logits of the same backbone and head with no adapter at all.
    pub fn forward_without_adapter(&self, x: &[f64]) -> Result<Vec<f64>> {
        ensure!(x.len() == self.input_dim(), "input length mismatch");
        let pre = self.backbone.weight.matvec_unchecked(x);
        let hidden: Vec<f64> =
            pre.iter().zip(&self.backbone.bias).map(|(p, b)| (p + b).tanh()).collect();
        Ok(head_forward(&self.head, &hidden))
    }

    /// Argmax class and its probability; ties resolve to the lowest index.
    pub fn predict(&self, x: &[f64]) -> Result<(usize, f64)> {
        Ok(predict_from_logits(&self.forward(x)?))
    }

    pub fn trainable_len(&self) -> usize {
        self.adapter.param_count() + self.head.param_count()
    }

    /// Trainable parameters flattened as `[A, B, H, c]`.
    pub fn trainable_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.trainable_len());
        write_adapter(&self.adapter, &mut out);
        write_head(&self.head, &mut out);
        out
    }

    pub fn set_trainable_params(&mut self, params: &[f64]) -> Result<()> {
        ensure!(params.len() == self.trainable_len(), "parameter vector length mismatch");
        let rest = read_adapter(&mut self.adapter, params);
        read_head(&mut self.head, rest);
        Ok(())
    }
}

/// `(argmax, max softmax)` with the lowest index winning ties.
pub fn predict_from_logits(logits: &[f64]) -> (usize, f64) {
    let p = softmax_unchecked(logits);
    let c = argmax(&p);
    (c, p[c])
}

pub(crate) fn write_adapter(adapter: &LoraAdapter, out: &mut Vec<f64>) {
    out.extend_from_slice(adapter.down.as_slice());
    out.extend_from_slice(adapter.up.as_slice());
}

pub(crate) fn write_head(head: &Head, out: &mut Vec<f64>) {
    out.extend_from_slice(head.weight.as_slice());
    out.extend_from_slice(&head.bias);
}

pub(crate) fn read_adapter<'a>(adapter: &mut LoraAdapter, params: &'a [f64]) -> &'a [f64] {
    let nd = adapter.down.as_slice().len();
    let nu = adapter.up.as_slice().len();
    adapter.down.as_mut_slice().copy_from_slice(&params[..nd]);
    adapter.up.as_mut_slice().copy_from_slice(&params[nd..nd + nu]);
    &params[nd + nu..]
}

pub(crate) fn read_head<'a>(head: &mut Head, params: &'a [f64]) -> &'a [f64] {
    let nw = head.weight.as_slice().len();
    let nb = head.bias.len();
    head.weight.as_mut_slice().copy_from_slice(&params[..nw]);
    head.bias.copy_from_slice(&params[nw..nw + nb]);
    &params[nw + nb..]
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub(crate) struct Activations {
    /// `A·x`.
    pub low: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
}

fn head_forward(head: &Head, hidden: &[f64]) -> Vec<f64> {
    head.weight
        .matvec_unchecked(hidden)
        .into_iter()
        .zip(&head.bias)
        .map(|(z, c)| z + c)
        .collect()
}

pub(crate) fn forward_parts(
    backbone: &Backbone,
    adapter: &LoraAdapter,
    head: &Head,
    x: &[f64],
) -> Activations {
    let s = adapter.scaling();
    let base = backbone.weight.matvec_unchecked(x);
    let low = adapter.down.matvec_unchecked(x);
    let delta = adapter.up.matvec_unchecked(&low);
    let hidden: Vec<f64> = base
        .iter()
        .zip(&delta)
        .zip(&backbone.bias)
        .map(|((w, d), b)| (w + s * d + b).tanh())
        .collect();
    let logits = head_forward(head, &hidden);
    Activations { low, hidden, logits }
}

/// Accumulates `scale · ∂loss/∂θ` for one sample, given `dlogits = ∂loss/∂z`.
/// `g_adapter` is laid out `[A, B]`, `g_head` `[H, c]`.
pub(crate) fn backward_parts(
    adapter: &LoraAdapter,
    head: &Head,
    x: &[f64],
    act: &Activations,
    dlogits: &[f64],
    scale: f64,
    g_adapter: &mut [f64],
    g_head: &mut [f64],
) {
    let h_dim = act.hidden.len();
    let d_in = x.len();
    let r = adapter.rank();
    let s = adapter.scaling();

    let (g_w, g_c) = g_head.split_at_mut(head.weight.as_slice().len());
    for (k, dz) in dlogits.iter().enumerate() {
        let f = scale * dz;
        g_c[k] += f;
        let row = &mut g_w[k * h_dim..(k + 1) * h_dim];
        for (g, hv) in row.iter_mut().zip(&act.hidden) {
            *g += f * hv;
        }
    }

    let dh = head.weight.tmatvec_unchecked(dlogits);
    let dpre: Vec<f64> =
        dh.iter().zip(&act.hidden).map(|(g, hv)| g * (1.0 - hv * hv)).collect();

    let (g_down, g_up) = g_adapter.split_at_mut(r * d_in);
    // ∂/∂B = s · dpre · (A x)ᵀ
    for (i, dp) in dpre.iter().enumerate() {
        let f = scale * s * dp;
        let row = &mut g_up[i * r..(i + 1) * r];
        for (g, l) in row.iter_mut().zip(&act.low) {
            *g += f * l;
        }
    }
    // ∂/∂A = s · (Bᵀ dpre) · xᵀ
    let bt_dpre = adapter.up.tmatvec_unchecked(&dpre);
    for (j, v) in bt_dpre.iter().enumerate() {
        let f = scale * s * v;
        let row = &mut g_down[j * d_in..(j + 1) * d_in];
        for (g, xv) in row.iter_mut().zip(x) {
            *g += f * xv;
        }
    }
}

/// Draws a standard-normal vector; used by tests and generators.
pub(crate) fn gaussian_vec(rng: &mut impl Rng, n: usize, std: f64) -> Vec<f64> {
    let dist = Normal::new(0.0, std).expect("valid std");
    (0..n).map(|_| dist.sample(rng)).collect()
}
