//! Experiment configuration and the per-command runners behind the CLI.
//!
//! Every runner is a pure function of the configuration, so rerunning a
//! command with the same config reproduces its reports byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::{make_substitute, run_attack, AttackConfig, AttackContext, AttackKind, BackboneMode, RunReport};
use crate::defense::{DefenseConfig, DEFAULT_LAMBDAS};
use crate::error::{ensure, LabError, Result};
use crate::metrics::{divergence_profile, median, DivergenceProfile};
use crate::nnet::{label_refine_train, load_checkpoint, Backbone, TrainConfig};
use crate::rng::{derive_seed, rng_for};
use crate::service::{RemoteOptions, RemoteOracle};
use crate::store::{Provenance, SampleStore};
use crate::victim::{train_victim, LabelMode, TrainedVictim, VictimConfig, VictimOracle};
use crate::worldgen::{sample_ood, GeneratorConfig, TaskWorld, WorldSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Names the output subdirectory.
    pub name: String,
    pub out_dir: PathBuf,
    pub world: WorldSpec,
    pub generator: GeneratorConfig,
    pub victim: VictimConfig,
    /// Victim fine-tuning schedule.
    pub victim_train: TrainConfig,
    /// Load the victim from this checkpoint instead of training it.
    pub victim_checkpoint: Option<PathBuf>,
    /// Hyperparameters shared by every attack run; `budget` and `seed` are
    /// taken from `budgets` and `seeds`.
    pub attack: AttackConfig,
    pub attacks: Vec<AttackKind>,
    pub budgets: Vec<u64>,
    pub label_mode: LabelMode,
    pub seeds: Vec<u64>,
    pub defense: DefenseConfig,
    pub lambdas: Vec<f64>,
    pub defense_attacks: Vec<AttackKind>,
    /// Budget of the defense sweep's attacks; defaults to the largest of `budgets`.
    pub defense_budget: Option<u64>,
    /// Run attacks against a served victim at this address.
    pub remote: Option<String>,
    pub serve: ServeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub addr: String,
    pub budget: u64,
    /// Serve the dual-adapter deployment trained at this λ.
    pub defense_lambda: Option<f64>,
    pub selection_seed: u64,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self { addr: "127.0.0.1:7878".into(), budget: 2000, defense_lambda: None, selection_seed: 0 }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            out_dir: PathBuf::from("out"),
            world: WorldSpec::default(),
            generator: GeneratorConfig::default(),
            victim: VictimConfig::default(),
            victim_train: TrainConfig::default(),
            victim_checkpoint: None,
            attack: AttackConfig::default(),
            attacks: vec![AttackKind::Dsl, AttackKind::Rand, AttackKind::Baseline],
            budgets: vec![500, 1000, 2000],
            label_mode: LabelMode::Soft,
            seeds: vec![1, 2, 3, 4, 5],
            defense: DefenseConfig::default(),
            lambdas: DEFAULT_LAMBDAS.to_vec(),
            defense_attacks: vec![AttackKind::Dsl, AttackKind::Baseline],
            defense_budget: None,
            remote: None,
            serve: ServeConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| LabError::Contract(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| LabError::Contract(format!("invalid config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.name.is_empty() && !self.name.contains(['/', '\\']), "name must be a plain directory name");
        ensure!(!self.seeds.is_empty(), "seeds must not be empty");
        ensure!(!self.budgets.is_empty(), "budgets must not be empty");
        ensure!(!self.attacks.is_empty(), "attacks must not be empty");
        ensure!(!self.lambdas.is_empty(), "lambdas must not be empty");
        ensure!(!self.defense_attacks.is_empty(), "defense_attacks must not be empty");
        self.generator.validate()?;
        self.victim_train.validate()?;
        self.defense.validate()?;
        for &l in &self.lambdas {
            ensure!(l.is_finite() && l >= 0.0, "lambda {l} must be finite and >= 0");
        }
        for &b in self.budgets.iter().chain(self.defense_budget.iter()) {
            self.attack_config(b, 0).validate_dsl()?;
        }
        Ok(())
    }

    pub fn attack_config(&self, budget: u64, seed: u64) -> AttackConfig {
        AttackConfig { budget, seed, ..self.attack.clone() }
    }

    pub fn defense_budget(&self) -> u64 {
        self.defense_budget.unwrap_or_else(|| self.budgets.iter().copied().max().unwrap_or(self.attack.budget))
    }

    /// `out_dir/name/command`.
    pub fn command_dir(&self, command: &str) -> PathBuf {
        self.out_dir.join(&self.name).join(command)
    }
}

/// A trained (or loaded) victim and the public facts around it.
#[derive(Debug, Clone)]
pub struct PreparedVictim {
    pub world: TaskWorld,
    pub victim: TrainedVictim,
    pub public_backbone: Backbone,
}

impl PreparedVictim {
    pub fn context(&self) -> AttackContext<'_> {
        AttackContext {
            world: &self.world,
            public_backbone: &self.public_backbone,
            test_set: &self.victim.test_set,
            victim_acc: self.victim.test_accuracy,
        }
    }

    pub fn summary(&self, cfg: &ExperimentConfig) -> VictimSummary {
        VictimSummary {
            test_accuracy: self.victim.test_accuracy,
            test_size: self.victim.test_set.len(),
            num_classes: self.world.num_classes(),
            input_dim: self.world.input_dim(),
            hidden_dim: cfg.victim.hidden_dim,
            rank: cfg.victim.rank,
            backbone_seed: cfg.victim.backbone_seed,
            seed: cfg.victim.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VictimSummary {
    pub test_accuracy: f64,
    pub test_size: usize,
    pub num_classes: usize,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub rank: usize,
    pub backbone_seed: u64,
    pub seed: u64,
}

pub fn prepare_victim(cfg: &ExperimentConfig) -> Result<PreparedVictim> {
    let world = TaskWorld::new(cfg.world.clone())?;
    let public_backbone = cfg.victim.public_backbone(&world)?;
    let victim = match &cfg.victim_checkpoint {
        None => train_victim(&world, &cfg.victim, &cfg.victim_train)?,
        Some(path) => {
            let model = load_checkpoint(path)?;
            ensure!(
                model.backbone() == &public_backbone,
                "checkpoint {} was not adapted from the configured backbone",
                path.display()
            );
            let train_set = cfg.victim.train_set(&world)?;
            let test_set = cfg.victim.test_set(&world)?;
            let test_accuracy = crate::metrics::accuracy(&model, &test_set)?;
            TrainedVictim { model, test_accuracy, train_set, test_set }
        }
    };
    Ok(PreparedVictim { world, victim, public_backbone })
}

/// One `(attack, budget, seed)` run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackCell {
    pub attack: AttackKind,
    pub budget: u64,
    pub seed: u64,
}

/// Cells in report order: seed, then attack, then budget.
pub fn attack_cells(cfg: &ExperimentConfig) -> Vec<AttackCell> {
    let mut cells = Vec::new();
    for &seed in &cfg.seeds {
        for &attack in &cfg.attacks {
            for &budget in &cfg.budgets {
                cells.push(AttackCell { attack, budget, seed });
            }
        }
    }
    cells
}

/// Runs one cell against a fresh local oracle, or through `cfg.remote`.
pub fn run_attack_cell(cfg: &ExperimentConfig, prepared: &PreparedVictim, cell: AttackCell) -> Result<RunReport> {
    let acfg = cfg.attack_config(cell.budget, cell.seed);
    let ctx = prepared.context();
    let (_, report) = match &cfg.remote {
        None => {
            let oracle = VictimOracle::new(prepared.victim.model.clone(), cfg.label_mode, cell.budget);
            run_attack(cell.attack, &oracle, &ctx, &cfg.generator, &acfg)?
        }
        Some(addr) => {
            let oracle = RemoteOracle::connect(
                addr.as_str(),
                cfg.label_mode,
                prepared.world.num_classes(),
                RemoteOptions::default(),
            )?;
            run_attack(cell.attack, &oracle, &ctx, &cfg.generator, &acfg)?
        }
    };
    Ok(report)
}

/// File stem of a cell's report, e.g. `dsl-identical-soft-2000`.
pub fn report_stem(report: &RunReport) -> String {
    format!(
        "{}-{}-{}-{}",
        report.attack.as_str(),
        report.backbone_mode.as_str(),
        report.label_mode.as_str(),
        report.budget
    )
}

/// One row per report: final metrics.
pub fn attack_summary_csv(reports: &[RunReport]) -> String {
    let mut out = String::from("attack,mode,seed,budget,queries_used,acc,asr\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.attack.as_str(),
            r.label_mode.as_str(),
            r.seed,
            r.budget,
            r.queries_used,
            r.final_acc,
            r.final_asr
        ));
    }
    out
}

/// One row per checkpoint of every report.
pub fn attack_curves_csv(reports: &[RunReport]) -> String {
    let mut out = String::from("attack,mode,seed,budget,queries_used,acc,asr\n");
    for r in reports {
        for c in &r.checkpoints {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.attack.as_str(),
                r.label_mode.as_str(),
                r.seed,
                r.budget,
                c.queries_used,
                c.acc,
                c.asr
            ));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianRow {
    pub attack: AttackKind,
    pub budget: u64,
    pub runs: usize,
    pub median_acc: f64,
    pub median_asr: f64,
}

/// Median final accuracy and ASR per `(attack, budget)`, in first-seen order.
pub fn median_table(reports: &[RunReport]) -> Vec<MedianRow> {
    let mut keys: Vec<(AttackKind, u64)> = Vec::new();
    for r in reports {
        if !keys.contains(&(r.attack, r.budget)) {
            keys.push((r.attack, r.budget));
        }
    }
    keys.into_iter()
        .map(|(attack, budget)| {
            let cell: Vec<&RunReport> = reports.iter().filter(|r| r.attack == attack && r.budget == budget).collect();
            let accs: Vec<f64> = cell.iter().map(|r| r.final_acc).collect();
            let asrs: Vec<f64> = cell.iter().map(|r| r.final_asr).collect();
            MedianRow {
                attack,
                budget,
                runs: cell.len(),
                median_acc: median(&accs).unwrap_or(f64::NAN),
                median_asr: median(&asrs).unwrap_or(f64::NAN),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistinctionResult {
    pub seed: u64,
    pub substitute_acc: f64,
    pub profile: DivergenceProfile,
    /// Victim against itself: per-sample prediction entropies.
    pub control: DivergenceProfile,
}

/// Trains a cross-backbone substitute on the victim's own training inputs,
/// labeled with the victim's soft answers, and profiles victim→substitute
/// cross-entropy on held-out ID data and on OOD noise of the same size.
pub fn run_distinction(cfg: &ExperimentConfig, prepared: &PreparedVictim, seed: u64) -> Result<DistinctionResult> {
    let victim = &prepared.victim;
    let k = prepared.world.num_classes();
    let mut substitute = make_substitute(&prepared.public_backbone, k, cfg.attack.rank, BackboneMode::Cross, seed)?;
    let mut store = SampleStore::new();
    for x in &victim.train_set.inputs {
        store.push(x.clone(), victim.model.probabilities(x)?, Provenance::Queried, 0)?;
    }
    let train = cfg.attack.train.plain().with_seed(derive_seed(seed, "distinction-train"));
    label_refine_train(&mut substitute, &mut store, &train)?;
    let substitute_acc = crate::metrics::accuracy(&substitute, &victim.test_set)?;
    let ood = sample_ood(&prepared.world, victim.test_set.len(), &mut rng_for(seed, "distinction-ood"))?;
    let profile = divergence_profile(&victim.model, &substitute, &victim.test_set.inputs, &ood)?;
    let control = divergence_profile(&victim.model, &victim.model, &victim.test_set.inputs, &ood)?;
    Ok(DistinctionResult { seed, substitute_acc, profile, control })
}

pub fn distinction_csv(results: &[DistinctionResult]) -> String {
    let mut out = String::from("seed,substitute_acc,id_mean,ood_mean\n");
    for r in results {
        out.push_str(&format!("{},{},{},{}\n", r.seed, r.substitute_acc, r.profile.id_mean(), r.profile.ood_mean()));
    }
    out
}

/// Pretty JSON with a trailing newline.
pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Writes `contents` to `path`, creating parent directories.
pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents)?;
    Ok(())
}
