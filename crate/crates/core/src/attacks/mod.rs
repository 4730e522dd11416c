//! LoRA extraction attacks against a [`QueryOracle`]:
//!
//! * [`stolen_lora_rand`]: query every synthesized sample and distill.
//! * [`stolen_lora_dsl`]: disagreement-based semi-supervised querying, which
//!   accepts generator pseudo-labels where the substitute confidently agrees
//!   and spends the budget only on the least confident of the rest.
//! * [`baseline_random_pool`]: query a class-agnostic random pool.

mod dsl;
mod random;

pub use dsl::{stolen_lora_dsl, CandidateRecord, IterationEvent, Partition};
pub use random::{baseline_random_pool, stolen_lora_rand, PoolSampler};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, LabError, Result};
use crate::metrics::{accuracy, asr};
use crate::nnet::{AdaptedClassifier, Backbone, TrainConfig};
use crate::rng::derive_seed;
use crate::victim::{LabelMode, QueryOracle};
use crate::worldgen::{GeneratorConfig, LabeledSet, PseudoLabeledSet, TaskWorld};

pub use crate::store::{Provenance, Sample, SampleStore};

/// Largest batch sent to an oracle in one call.
pub const MAX_QUERY_BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneMode {
    /// The attacker adapts the victim's own public backbone.
    #[default]
    Identical,
    /// The attacker adapts an independently drawn backbone.
    Cross,
}

impl BackboneMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BackboneMode::Identical => "identical",
            BackboneMode::Cross => "cross",
        }
    }
}

impl std::str::FromStr for BackboneMode {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identical" => Ok(BackboneMode::Identical),
            "cross" => Ok(BackboneMode::Cross),
            other => Err(LabError::Contract(format!("unknown backbone mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Dsl,
    Rand,
    Baseline,
}

impl AttackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::Dsl => "dsl",
            AttackKind::Rand => "rand",
            AttackKind::Baseline => "baseline",
        }
    }
}

impl std::str::FromStr for AttackKind {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dsl" => Ok(AttackKind::Dsl),
            "rand" => Ok(AttackKind::Rand),
            "baseline" => Ok(AttackKind::Baseline),
            other => Err(LabError::Contract(format!("unknown attack `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub backbone_mode: BackboneMode,
    /// Total query budget B.
    pub budget: u64,
    /// Planned DSL iterations T; per-iteration budget is ⌊B/T⌋.
    pub iterations: usize,
    /// Hard cap on DSL iterations when unspent budget keeps rolling over.
    pub max_iterations: usize,
    /// Candidate oversampling factor β.
    pub beta: f64,
    /// Confidence threshold τ for accepting a pseudo-label.
    pub tau: f64,
    /// Initial pseudo-labeled samples per class.
    pub initial_per_class: usize,
    /// Train on the union of all iterations' samples instead of the latest only.
    pub accumulate: bool,
    pub train: TrainConfig,
    pub rank: usize,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            backbone_mode: BackboneMode::Identical,
            budget: 2000,
            iterations: 5,
            max_iterations: 20,
            beta: 1.5,
            tau: 0.95,
            initial_per_class: 10,
            accumulate: true,
            train: TrainConfig::default(),
            rank: 4,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate_dsl(&self) -> Result<()> {
        ensure!(self.iterations >= 1, "DSL needs at least one iteration");
        ensure!(
            self.budget >= self.iterations as u64,
            "budget {} is smaller than the iteration count {}",
            self.budget,
            self.iterations
        );
        ensure!(
            self.max_iterations >= self.iterations,
            "max_iterations must be at least iterations"
        );
        ensure!(self.beta >= 1.0 && self.beta.is_finite(), "beta must be >= 1");
        ensure!(self.tau > 0.0 && self.tau < 1.0, "tau must lie in (0, 1)");
        self.train.validate()
    }

    /// ⌊B/T⌋.
    pub fn per_iteration_budget(&self) -> u64 {
        self.budget / self.iterations.max(1) as u64
    }
}

/// What the experimenter (not the attacker) uses to score a run, plus the
/// public information the attacker starts from.
#[derive(Debug, Clone)]
pub struct AttackContext<'a> {
    pub world: &'a TaskWorld,
    /// The public base model the victim was adapted from.
    pub public_backbone: &'a Backbone,
    pub test_set: &'a LabeledSet,
    /// Accuracy of the attacked system on `test_set`.
    pub victim_acc: f64,
}

impl AttackContext<'_> {
    pub fn evaluate(&self, model: &AdaptedClassifier) -> Result<(f64, f64)> {
        let acc = accuracy(model, self.test_set)?;
        Ok((acc, asr(acc, self.victim_acc)?))
    }
}

/// One point of the accuracy-versus-queries curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub queries_used: u64,
    pub acc: f64,
    pub asr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub attack: AttackKind,
    pub backbone_mode: BackboneMode,
    pub label_mode: LabelMode,
    pub seed: u64,
    pub budget: u64,
    pub tau: f64,
    pub victim_acc: f64,
    pub checkpoints: Vec<CurvePoint>,
    pub queries_used: u64,
    pub final_acc: f64,
    pub final_asr: f64,
    /// Per-iteration log; empty for non-iterative attacks.
    pub events: Vec<IterationEvent>,
}

impl RunReport {
    /// Accuracy of the latest checkpoint that used at most `queries` queries.
    pub fn acc_at(&self, queries: u64) -> Option<f64> {
        self.checkpoints.iter().rev().find(|c| c.queries_used <= queries).map(|c| c.acc)
    }

    /// JSON lines, one per iteration event.
    pub fn event_log_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Runs `kind` with the default OOD pool for the baseline.
pub fn run_attack(
    kind: AttackKind,
    oracle: &dyn QueryOracle,
    ctx: &AttackContext<'_>,
    gen: &GeneratorConfig,
    cfg: &AttackConfig,
) -> Result<(AdaptedClassifier, RunReport)> {
    match kind {
        AttackKind::Dsl => stolen_lora_dsl(oracle, ctx, gen, cfg),
        AttackKind::Rand => stolen_lora_rand(oracle, ctx, gen, cfg),
        AttackKind::Baseline => baseline_random_pool(oracle, ctx, None, cfg),
    }
}

/// A fresh substitute: zero-`up` adapter and zero head on either the
/// victim's public backbone or an independently seeded one.
pub fn make_substitute(
    public_backbone: &Backbone,
    num_classes: usize,
    rank: usize,
    mode: BackboneMode,
    seed: u64,
) -> Result<AdaptedClassifier> {
    let backbone = match mode {
        BackboneMode::Identical => public_backbone.clone(),
        BackboneMode::Cross => Backbone::random(
            public_backbone.input_dim(),
            public_backbone.hidden_dim(),
            derive_seed(seed, "substitute-backbone"),
        )?,
    };
    AdaptedClassifier::fresh(
        backbone,
        num_classes,
        rank,
        rank as f64,
        derive_seed(seed, "substitute-adapter"),
    )
}

/// Candidates split by agreement with the substitute.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    /// Candidate indices whose pseudo-label is accepted.
    pub confident: Vec<usize>,
    /// `(candidate index, confidence)` of everything else, in candidate order.
    pub uncertain: Vec<(usize, f64)>,
    /// Substitute `(class, confidence)` for every candidate.
    pub predictions: Vec<(usize, f64)>,
}

/// A candidate is confident iff the substitute predicts its pseudo-label
/// with probability at least `tau`.
pub fn disagreement_filter(
    model: &AdaptedClassifier,
    candidates: &PseudoLabeledSet,
    tau: f64,
) -> Result<FilterOutcome> {
    let mut out = FilterOutcome { confident: Vec::new(), uncertain: Vec::new(), predictions: Vec::new() };
    for (i, (x, c)) in candidates.samples.iter().zip(&candidates.pseudo_labels).enumerate() {
        let (pred, conf) = model.predict(x)?;
        if pred == *c && conf >= tau {
            out.confident.push(i);
        } else {
            out.uncertain.push((i, conf));
        }
        out.predictions.push((pred, conf));
    }
    Ok(out)
}

/// The `min(budget, |uncertain|)` least confident entries, ascending by
/// confidence; ties keep candidate order.
pub fn select_queries(uncertain: &[(usize, f64)], budget: usize) -> Vec<usize> {
    let mut sorted = uncertain.to_vec();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    sorted.into_iter().take(budget).map(|(i, _)| i).collect()
}

/// Queries `inputs` in batches of at most [`MAX_QUERY_BATCH`].
pub(crate) fn query_all(
    oracle: &dyn QueryOracle,
    inputs: &[Vec<f64>],
) -> Result<Vec<crate::numerics::ProbVector>> {
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(MAX_QUERY_BATCH) {
        out.extend(oracle.query(chunk)?);
    }
    Ok(out)
}

pub(crate) fn ensure_budget(oracle: &dyn QueryOracle, budget: u64) -> Result<()> {
    let remaining = oracle.remaining()?;
    if remaining < budget {
        return Err(LabError::BudgetExhausted { requested: budget, remaining });
    }
    Ok(())
}
