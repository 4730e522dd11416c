//! Victim construction and the budget-metered black-box query oracle.

use std::sync::Mutex;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, LabError, Result};
use crate::metrics::accuracy;
use crate::nnet::{label_refine_train, AdaptedClassifier, Backbone, TrainConfig};
use crate::numerics::{softmax_unchecked, ProbVector};
use crate::rng::{derive_seed, rng_for, rng_from, Rng64};
use crate::store::{Provenance, SampleStore};
use crate::worldgen::{sample_labeled, LabeledSet, TaskWorld};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    #[default]
    Soft,
    Hard,
}

impl LabelMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelMode::Soft => "soft",
            LabelMode::Hard => "hard",
        }
    }
}

impl std::str::FromStr for LabelMode {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(LabelMode::Soft),
            "hard" => Ok(LabelMode::Hard),
            other => Err(LabError::Contract(format!("unknown label mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryBudget {
    total: u64,
    remaining: u64,
}

impl QueryBudget {
    pub fn new(total: u64) -> Self {
        Self { total, remaining: total }
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn remaining(&self) -> u64 {
        self.remaining
    }

    pub fn used(&self) -> u64 {
        self.total - self.remaining
    }

    /// Charges `n` queries, all or nothing.
    pub fn charge(&mut self, n: u64) -> Result<()> {
        if n > self.remaining {
            return Err(LabError::BudgetExhausted { requested: n, remaining: self.remaining });
        }
        self.remaining -= n;
        Ok(())
    }
}

/// The query contract shared by local and remote oracles.
pub trait QueryOracle: Send + Sync {
    /// Answers every input or none. Hard-mode answers are one-hot.
    fn query(&self, inputs: &[Vec<f64>]) -> Result<Vec<ProbVector>>;
    fn remaining(&self) -> Result<u64>;
    fn label_mode(&self) -> LabelMode;
    fn num_classes(&self) -> usize;
}

#[derive(Debug)]
struct OracleState {
    budget: QueryBudget,
    selector: Rng64,
}

/// A victim model behind a metered query endpoint, optionally defended by a
/// second adapter: each answer then comes from one of the two models chosen
/// uniformly at random.
#[derive(Debug)]
pub struct VictimOracle {
    primary: AdaptedClassifier,
    secondary: Option<AdaptedClassifier>,
    mode: LabelMode,
    state: Mutex<OracleState>,
}

impl VictimOracle {
    pub fn new(model: AdaptedClassifier, mode: LabelMode, budget: u64) -> Self {
        Self {
            primary: model,
            secondary: None,
            mode,
            state: Mutex::new(OracleState { budget: QueryBudget::new(budget), selector: rng_from(0) }),
        }
    }

    pub fn defended(
        model_a: AdaptedClassifier,
        model_b: AdaptedClassifier,
        mode: LabelMode,
        budget: u64,
        selection_seed: u64,
    ) -> Result<Self> {
        ensure!(
            model_a.backbone() == model_b.backbone(),
            "defended oracle models must share a backbone"
        );
        ensure!(
            model_a.dims().hidden_dim == model_b.dims().hidden_dim
                && model_a.num_classes() == model_b.num_classes(),
            "defended oracle models must share head dimensions"
        );
        Ok(Self {
            primary: model_a,
            secondary: Some(model_b),
            mode,
            state: Mutex::new(OracleState {
                budget: QueryBudget::new(budget),
                selector: rng_for(selection_seed, "defense-selection"),
            }),
        })
    }

    pub fn is_defended(&self) -> bool {
        self.secondary.is_some()
    }

    pub fn primary(&self) -> &AdaptedClassifier {
        &self.primary
    }

    pub fn secondary(&self) -> Option<&AdaptedClassifier> {
        self.secondary.as_ref()
    }

    pub fn budget(&self) -> QueryBudget {
        self.state.lock().expect("oracle lock").budget
    }

    /// Answer of one specific model for `x` under this oracle's label mode.
    pub fn answer_with(&self, model: &AdaptedClassifier, x: &[f64]) -> Result<ProbVector> {
        let p = softmax_unchecked(&model.forward(x)?);
        Ok(match self.mode {
            LabelMode::Soft => ProbVector::from_raw(p),
            LabelMode::Hard => {
                let c = crate::numerics::argmax(&p);
                ProbVector::one_hot(p.len(), c)?
            }
        })
    }
}

impl QueryOracle for VictimOracle {
    fn query(&self, inputs: &[Vec<f64>]) -> Result<Vec<ProbVector>> {
        let d = self.primary.input_dim();
        ensure!(
            inputs.iter().all(|x| x.len() == d && x.iter().all(|v| v.is_finite())),
            "query inputs must be finite vectors of length {d}"
        );
        // Budget charge and model selection happen under one lock so each
        // batch is atomic with respect to concurrent callers.
        let mut state = self.state.lock().expect("oracle lock");
        state.budget.charge(inputs.len() as u64)?;
        let mut out = Vec::with_capacity(inputs.len());
        for x in inputs {
            let model = match &self.secondary {
                Some(b) if state.selector.random_bool(0.5) => b,
                _ => &self.primary,
            };
            out.push(self.answer_with(model, x)?);
        }
        Ok(out)
    }

    fn remaining(&self) -> Result<u64> {
        Ok(self.budget().remaining())
    }

    fn label_mode(&self) -> LabelMode {
        self.mode
    }

    fn num_classes(&self) -> usize {
        self.primary.num_classes()
    }
}

/// Architecture and data sizes of the victim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VictimConfig {
    pub hidden_dim: usize,
    pub rank: usize,
    /// Defaults to `rank`.
    pub alpha: Option<f64>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Seed of the public backbone the victim is adapted from.
    pub backbone_seed: u64,
    pub seed: u64,
}

impl Default for VictimConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 32,
            rank: 4,
            alpha: None,
            train_per_class: 200,
            test_per_class: 200,
            backbone_seed: 1,
            seed: 42,
        }
    }
}

impl VictimConfig {
    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(self.rank as f64)
    }

    pub fn adapter_seed(&self) -> u64 {
        derive_seed(self.seed, "victim-adapter")
    }

    pub fn train_set(&self, world: &TaskWorld) -> Result<LabeledSet> {
        sample_labeled(world, self.train_per_class, &mut rng_for(self.seed, "victim-train"))
    }

    pub fn test_set(&self, world: &TaskWorld) -> Result<LabeledSet> {
        sample_labeled(world, self.test_per_class, &mut rng_for(self.seed, "victim-test"))
    }

    pub fn public_backbone(&self, world: &TaskWorld) -> Result<Backbone> {
        Backbone::random(world.input_dim(), self.hidden_dim, self.backbone_seed)
    }

    pub fn train_cfg(&self, base: &TrainConfig) -> TrainConfig {
        base.plain().with_seed(derive_seed(self.seed, "victim-shuffle"))
    }
}

/// Store of hard one-hot ground-truth labels.
pub fn labeled_store(set: &LabeledSet, num_classes: usize) -> Result<SampleStore> {
    let mut store = SampleStore::new();
    for (x, y) in set.inputs.iter().zip(&set.labels) {
        store.push(x.clone(), ProbVector::one_hot(num_classes, *y)?, Provenance::Labeled, 0)?;
    }
    Ok(store)
}

#[derive(Debug, Clone)]
pub struct TrainedVictim {
    pub model: AdaptedClassifier,
    pub test_accuracy: f64,
    pub train_set: LabeledSet,
    pub test_set: LabeledSet,
}

/// Fine-tunes adapter and head on ground-truth data with plain cross-entropy
/// and reports held-out accuracy.
pub fn train_victim(world: &TaskWorld, cfg: &VictimConfig, train: &TrainConfig) -> Result<TrainedVictim> {
    let backbone = cfg.public_backbone(world)?;
    let mut model = AdaptedClassifier::fresh(
        backbone,
        world.num_classes(),
        cfg.rank,
        cfg.alpha(),
        cfg.adapter_seed(),
    )?;
    let train_set = cfg.train_set(world)?;
    let test_set = cfg.test_set(world)?;
    let tcfg = cfg.train_cfg(train);
    if tcfg.epochs > 0 {
        let mut store = labeled_store(&train_set, world.num_classes())?;
        label_refine_train(&mut model, &mut store, &tcfg)?;
    }
    let test_accuracy = accuracy(&model, &test_set)?;
    Ok(TrainedVictim { model, test_accuracy, train_set, test_set })
}
