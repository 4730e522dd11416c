//! Dual-adapter defense: two adapters on one backbone trained to solve the
//! task while disagreeing with each other, deployed behind an oracle that
//! answers each query with one of them at random.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::attacks::{run_attack, AttackConfig, AttackContext, AttackKind};
use crate::error::{ensure, Result};
use crate::metrics::{accuracy, asr};
use crate::nnet::{
    backward_parts, cosine_lr, forward_parts, read_adapter, read_head, write_adapter, write_head,
    AdaptedClassifier, Adam, Backbone, Head, LoraAdapter, TrainConfig,
};
use crate::numerics::{cross_entropy_unchecked, softmax_unchecked};
use crate::rng::{derive_indexed, derive_seed, rng_from};
use crate::victim::{labeled_store, LabelMode, QueryOracle, VictimConfig, VictimOracle};
use crate::worldgen::{GeneratorConfig, LabeledSet, TaskWorld};

pub const DEFAULT_LAMBDAS: [f64; 5] = [0.0, 0.5, 1.0, 2.0, 5.0];

/// Size of the fixed training prefix whose logits are logged every epoch.
const PROBE_SIZE: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DefenseConfig {
    pub lambda: f64,
    pub shared_head: bool,
    /// Use `KL(A‖B) + KL(B‖A)` instead of `KL(A‖B)`.
    pub symmetric_kl: bool,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        Self { lambda: 0.0, shared_head: true, symmetric_kl: false, train: TrainConfig::default(), seed: 7 }
    }
}

impl DefenseConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.lambda.is_finite() && self.lambda >= 0.0, "lambda must be finite and >= 0");
        self.train.validate()
    }
}

/// Two adapters over one frozen backbone, with one or two heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualLoraModel {
    backbone: Backbone,
    pub adapter_a: LoraAdapter,
    pub adapter_b: LoraAdapter,
    pub head_a: Head,
    /// `None` when both adapters share `head_a`.
    pub head_b: Option<Head>,
}

impl DualLoraModel {
    pub fn new(
        backbone: Backbone,
        adapter_a: LoraAdapter,
        adapter_b: LoraAdapter,
        head_a: Head,
        head_b: Option<Head>,
    ) -> Result<Self> {
        // Reuse the single-model dimension checks.
        AdaptedClassifier::new(backbone.clone(), adapter_a.clone(), head_a.clone())?;
        AdaptedClassifier::new(backbone.clone(), adapter_b.clone(), head_b.clone().unwrap_or_else(|| head_a.clone()))?;
        Ok(Self { backbone, adapter_a, adapter_b, head_a, head_b })
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn head_for_b(&self) -> &Head {
        self.head_b.as_ref().unwrap_or(&self.head_a)
    }

    pub fn model_a(&self) -> AdaptedClassifier {
        AdaptedClassifier::new(self.backbone.clone(), self.adapter_a.clone(), self.head_a.clone())
            .expect("dimensions checked at construction")
    }

    pub fn model_b(&self) -> AdaptedClassifier {
        AdaptedClassifier::new(self.backbone.clone(), self.adapter_b.clone(), self.head_for_b().clone())
            .expect("dimensions checked at construction")
    }

    /// Layout: `[adapter A, adapter B, head A, head B?]`.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_len());
        write_adapter(&self.adapter_a, &mut out);
        write_adapter(&self.adapter_b, &mut out);
        write_head(&self.head_a, &mut out);
        if let Some(h) = &self.head_b {
            write_head(h, &mut out);
        }
        out
    }

    pub fn param_len(&self) -> usize {
        self.adapter_a.param_count()
            + self.adapter_b.param_count()
            + self.head_a.param_count()
            + self.head_b.as_ref().map_or(0, Head::param_count)
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        ensure!(params.len() == self.param_len(), "expected {} parameters, got {}", self.param_len(), params.len());
        let rest = read_adapter(&mut self.adapter_a, params);
        let rest = read_adapter(&mut self.adapter_b, rest);
        let rest = read_head(&mut self.head_a, rest);
        if let Some(h) = &mut self.head_b {
            read_head(h, rest);
        }
        Ok(())
    }

    /// Logits of both models for one input.
    pub fn logits(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        ensure!(x.len() == self.backbone.input_dim(), "input length mismatch");
        let a = forward_parts(&self.backbone, &self.adapter_a, &self.head_a, x).logits;
        let b = forward_parts(&self.backbone, &self.adapter_b, self.head_for_b(), x).logits;
        Ok((a, b))
    }
}

/// Batch means of the terms of the dual objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DualObjective {
    pub task_a: f64,
    pub task_b: f64,
    pub kl: f64,
    /// `task_a + task_b − λ·kl`.
    pub total: f64,
}

fn log_softmax_unchecked(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

/// `KL(softmax(za) ‖ softmax(zb))` computed in log space.
pub fn kl_from_logits(za: &[f64], zb: &[f64]) -> f64 {
    let la = log_softmax_unchecked(za);
    let lb = log_softmax_unchecked(zb);
    la.iter().zip(&lb).map(|(a, b)| a.exp() * (a - b)).sum()
}

/// Gradients of `KL(softmax(za) ‖ softmax(zb))` with respect to `za` and `zb`.
fn kl_grads(za: &[f64], zb: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let la = log_softmax_unchecked(za);
    let lb = log_softmax_unchecked(zb);
    let pa: Vec<f64> = la.iter().map(|v| v.exp()).collect();
    let pb: Vec<f64> = lb.iter().map(|v| v.exp()).collect();
    let g: Vec<f64> = la.iter().zip(&lb).map(|(a, b)| a - b).collect();
    let mean_g: f64 = pa.iter().zip(&g).map(|(p, gi)| p * gi).sum();
    let ga = pa.iter().zip(&g).map(|(p, gi)| p * (gi - mean_g)).collect();
    let gb = pb.iter().zip(&pa).map(|(b, a)| b - a).collect();
    (ga, gb)
}

/// Objective value and its gradient in [`DualLoraModel::params`] layout,
/// for a batch of inputs with class labels.
pub fn dual_loss_and_grad(
    model: &DualLoraModel,
    batch: &[(&[f64], usize)],
    lambda: f64,
    symmetric: bool,
) -> Result<(DualObjective, Vec<f64>)> {
    ensure!(!batch.is_empty(), "empty batch");
    let k = model.head_a.num_classes();
    let na = model.adapter_a.param_count();
    let nb = model.adapter_b.param_count();
    let nh = model.head_a.param_count();
    let mut grad = vec![0.0; model.param_len()];
    let (g_ad_a, rest) = grad.split_at_mut(na);
    let (g_ad_b, rest) = rest.split_at_mut(nb);
    let (g_head_a, g_head_b) = rest.split_at_mut(nh);
    let scale = 1.0 / batch.len() as f64;
    let mut obj = DualObjective::default();
    for &(x, y) in batch {
        ensure!(x.len() == model.backbone.input_dim(), "input length mismatch in batch");
        ensure!(y < k, "label {y} out of range");
        let act_a = forward_parts(&model.backbone, &model.adapter_a, &model.head_a, x);
        let act_b = forward_parts(&model.backbone, &model.adapter_b, model.head_for_b(), x);
        let target = one_hot(k, y);
        obj.task_a += cross_entropy_unchecked(&act_a.logits, &target);
        obj.task_b += cross_entropy_unchecked(&act_b.logits, &target);

        let mut dza = softmax_unchecked(&act_a.logits);
        let mut dzb = softmax_unchecked(&act_b.logits);
        dza[y] -= 1.0;
        dzb[y] -= 1.0;
        let (ka, kb) = kl_grads(&act_a.logits, &act_b.logits);
        let mut kl = kl_from_logits(&act_a.logits, &act_b.logits);
        for j in 0..k {
            dza[j] -= lambda * ka[j];
            dzb[j] -= lambda * kb[j];
        }
        if symmetric {
            let (kb2, ka2) = kl_grads(&act_b.logits, &act_a.logits);
            kl += kl_from_logits(&act_b.logits, &act_a.logits);
            for j in 0..k {
                dza[j] -= lambda * ka2[j];
                dzb[j] -= lambda * kb2[j];
            }
        }
        obj.kl += kl;

        backward_parts(&model.adapter_a, &model.head_a, x, &act_a, &dza, scale, g_ad_a, g_head_a);
        let g_hb = if model.head_b.is_some() { &mut *g_head_b } else { &mut *g_head_a };
        backward_parts(&model.adapter_b, model.head_for_b(), x, &act_b, &dzb, scale, g_ad_b, g_hb);
    }
    obj.task_a *= scale;
    obj.task_b *= scale;
    obj.kl *= scale;
    obj.total = obj.task_a + obj.task_b - lambda * obj.kl;
    Ok((obj, grad))
}

fn one_hot(k: usize, y: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[y] = 1.0;
    v
}

/// End-of-epoch snapshot on a fixed training prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualEpochLog {
    pub epoch: usize,
    /// Mean of the minibatch objectives seen during the epoch.
    pub train_objective: DualObjective,
    /// Objective on the probe batch after the epoch.
    pub probe_objective: DualObjective,
    pub probe_labels: Vec<usize>,
    pub probe_logits_a: Vec<Vec<f64>>,
    pub probe_logits_b: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualLoraOutcome {
    pub lambda: f64,
    pub model: DualLoraModel,
    pub acc_a: f64,
    pub acc_b: f64,
    /// Mean `KL(A‖B)` over the held-out set.
    pub heldout_kl: f64,
    pub epochs: Vec<DualEpochLog>,
}

/// Trains the adapter pair on the victim's training data.
///
/// Adapter A starts from the victim's adapter seed and minibatches follow
/// the victim's shuffle stream, so at `λ = 0` it tracks the undefended
/// victim closely.
pub fn train_dual_lora(world: &TaskWorld, victim: &VictimConfig, cfg: &DefenseConfig) -> Result<DualLoraOutcome> {
    cfg.validate()?;
    let k = world.num_classes();
    let train_set = victim.train_set(world)?;
    let test_set = victim.test_set(world)?;
    ensure!(!train_set.is_empty(), "defense needs training data");
    // Validates the labels the same way the single-model path does.
    labeled_store(&train_set, k)?;

    let backbone = victim.public_backbone(world)?;
    let (d, h) = (backbone.input_dim(), backbone.hidden_dim());
    let adapter_a = LoraAdapter::new(d, h, victim.rank, victim.alpha(), victim.adapter_seed())?;
    let adapter_b = LoraAdapter::new(d, h, victim.rank, victim.alpha(), derive_seed(cfg.seed, "adapter-b"))?;
    let head_b = if cfg.shared_head { None } else { Some(Head::zeros(k, h)?) };
    let mut model = DualLoraModel::new(backbone, adapter_a, adapter_b, Head::zeros(k, h)?, head_b)?;

    let shuffle_seed = victim.train_cfg(&cfg.train).seed;
    let t = &cfg.train;
    let mut adam = Adam::new(model.param_len(), t.beta1, t.beta2, t.adam_eps);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let probe: Vec<(&[f64], usize)> = train_set
        .inputs
        .iter()
        .zip(&train_set.labels)
        .take(PROBE_SIZE)
        .map(|(x, &y)| (x.as_slice(), y))
        .collect();
    let mut epochs = Vec::with_capacity(t.epochs);
    for epoch in 0..t.epochs {
        let lr = cosine_lr(epoch, t.epochs, t.base_lr);
        order.shuffle(&mut rng_from(derive_indexed(shuffle_seed, "shuffle", epoch as u64)));
        let mut sum = DualObjective::default();
        let mut batches = 0.0;
        for chunk in order.chunks(t.batch_size) {
            let batch: Vec<(&[f64], usize)> =
                chunk.iter().map(|&i| (train_set.inputs[i].as_slice(), train_set.labels[i])).collect();
            let (obj, grad) = dual_loss_and_grad(&model, &batch, cfg.lambda, cfg.symmetric_kl)?;
            let mut params = model.params();
            adam.step(&mut params, &grad, lr);
            model.set_params(&params)?;
            sum.task_a += obj.task_a;
            sum.task_b += obj.task_b;
            sum.kl += obj.kl;
            sum.total += obj.total;
            batches += 1.0;
        }
        let train_objective = DualObjective {
            task_a: sum.task_a / batches,
            task_b: sum.task_b / batches,
            kl: sum.kl / batches,
            total: sum.total / batches,
        };
        let (probe_objective, _) = dual_loss_and_grad(&model, &probe, cfg.lambda, cfg.symmetric_kl)?;
        let mut probe_logits_a = Vec::with_capacity(probe.len());
        let mut probe_logits_b = Vec::with_capacity(probe.len());
        for (x, _) in &probe {
            let (a, b) = model.logits(x)?;
            probe_logits_a.push(a);
            probe_logits_b.push(b);
        }
        epochs.push(DualEpochLog {
            epoch,
            train_objective,
            probe_objective,
            probe_labels: probe.iter().map(|p| p.1).collect(),
            probe_logits_a,
            probe_logits_b,
        });
    }

    let acc_a = accuracy(&model.model_a(), &test_set)?;
    let acc_b = accuracy(&model.model_b(), &test_set)?;
    let heldout_kl = mean_kl(&model, &test_set)?;
    Ok(DualLoraOutcome { lambda: cfg.lambda, model, acc_a, acc_b, heldout_kl, epochs })
}

fn mean_kl(model: &DualLoraModel, set: &LabeledSet) -> Result<f64> {
    ensure!(!set.is_empty(), "KL over an empty set");
    let mut sum = 0.0;
    for x in &set.inputs {
        let (a, b) = model.logits(x)?;
        sum += kl_from_logits(&a, &b);
    }
    Ok(sum / set.len() as f64)
}

/// Deploys a trained pair behind a randomized oracle.
pub fn defended_oracle(model: &DualLoraModel, mode: LabelMode, budget: u64, selection_seed: u64) -> Result<VictimOracle> {
    VictimOracle::defended(model.model_a(), model.model_b(), mode, budget, selection_seed)
}

/// Accuracy of the randomized deployment, measured by querying it.
pub fn defender_accuracy(model: &DualLoraModel, test: &LabeledSet, selection_seed: u64) -> Result<f64> {
    ensure!(!test.is_empty(), "accuracy on an empty test set");
    let oracle = defended_oracle(model, LabelMode::Hard, test.len() as u64, selection_seed)?;
    let answers = oracle.query(&test.inputs)?;
    let correct = answers.iter().zip(&test.labels).filter(|(a, y)| a.argmax() == **y).count();
    Ok(100.0 * correct as f64 / test.len() as f64)
}

/// Grid and attacks for [`evaluate_tradeoff`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TradeoffConfig {
    pub lambdas: Vec<f64>,
    pub attacks: Vec<AttackKind>,
    pub seeds: Vec<u64>,
    pub label_mode: LabelMode,
    /// Budget, backbone mode and attack hyperparameters; `seed` is replaced
    /// by each entry of `seeds`.
    pub attack: AttackConfig,
    pub generator: GeneratorConfig,
    /// `lambda` is replaced by each entry of `lambdas`.
    pub defense: DefenseConfig,
}

impl Default for TradeoffConfig {
    fn default() -> Self {
        Self {
            lambdas: DEFAULT_LAMBDAS.to_vec(),
            attacks: vec![AttackKind::Dsl, AttackKind::Baseline],
            seeds: vec![1, 2, 3, 4, 5],
            label_mode: LabelMode::Soft,
            attack: AttackConfig::default(),
            generator: GeneratorConfig::default(),
            defense: DefenseConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub lambda: f64,
    pub attack: AttackKind,
    pub seed: u64,
    pub defender_acc: f64,
    pub substitute_acc: f64,
    /// Relative to `defender_acc`.
    pub substitute_asr: f64,
}

/// One row per `(λ, attack, seed)`, in that nesting order. Each attack runs
/// against its own freshly budgeted oracle.
pub fn evaluate_tradeoff(world: &TaskWorld, victim: &VictimConfig, cfg: &TradeoffConfig) -> Result<Vec<TradeoffRow>> {
    let test_set = victim.test_set(world)?;
    let public = victim.public_backbone(world)?;
    let mut rows = Vec::with_capacity(cfg.lambdas.len() * cfg.attacks.len() * cfg.seeds.len());
    for &lambda in &cfg.lambdas {
        let dcfg = DefenseConfig { lambda, ..cfg.defense.clone() };
        let outcome = train_dual_lora(world, victim, &dcfg)?;
        let defender_acc = defender_accuracy(&outcome.model, &test_set, derive_seed(dcfg.seed, "defender-eval"))?;
        let ctx = AttackContext { world, public_backbone: &public, test_set: &test_set, victim_acc: defender_acc };
        for &attack in &cfg.attacks {
            for &seed in &cfg.seeds {
                let acfg = AttackConfig { seed, ..cfg.attack.clone() };
                let oracle = defended_oracle(
                    &outcome.model,
                    cfg.label_mode,
                    acfg.budget,
                    derive_indexed(dcfg.seed, "attack-selection", seed),
                )?;
                let (sub, _) = run_attack(attack, &oracle, &ctx, &cfg.generator, &acfg)?;
                let substitute_acc = accuracy(&sub, &test_set)?;
                rows.push(TradeoffRow {
                    lambda,
                    attack,
                    seed,
                    defender_acc,
                    substitute_acc,
                    substitute_asr: asr(substitute_acc, defender_acc)?,
                });
            }
        }
    }
    Ok(rows)
}

pub fn tradeoff_csv(rows: &[TradeoffRow]) -> String {
    let mut out = String::from("lambda,attack,seed,defender_acc,substitute_acc,substitute_asr\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.lambda,
            r.attack.as_str(),
            r.seed,
            r.defender_acc,
            r.substitute_acc,
            r.substitute_asr
        ));
    }
    out
}

/// Median over seeds of `ASR(λ = from) − ASR(λ = to)` for one attack. Seeds
/// missing either row are skipped; `None` if no seed has both.
pub fn median_asr_drop(rows: &[TradeoffRow], attack: AttackKind, from: f64, to: f64) -> Option<f64> {
    let at = |lambda: f64, seed: u64| {
        rows.iter()
            .find(|r| r.attack == attack && r.seed == seed && r.lambda == lambda)
            .map(|r| r.substitute_asr)
    };
    let mut seeds: Vec<u64> = rows.iter().filter(|r| r.attack == attack).map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let drops: Vec<f64> = seeds.iter().filter_map(|&s| Some(at(from, s)? - at(to, s)?)).collect();
    crate::metrics::median(&drops)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, relative_l2_error};
    use crate::nnet::gaussian_vec;
    use crate::rng::rng_from;
    use crate::worldgen::WorldSpec;
    use rand::Rng;

    fn random_dual(seed: u64, shared: bool) -> DualLoraModel {
        let bb = Backbone::random(5, 6, seed).unwrap();
        let a = LoraAdapter::new(5, 6, 2, 2.0, seed + 1).unwrap();
        let b = LoraAdapter::new(5, 6, 2, 2.0, seed + 2).unwrap();
        let hb = if shared { None } else { Some(Head::zeros(3, 6).unwrap()) };
        let mut m = DualLoraModel::new(bb, a, b, Head::zeros(3, 6).unwrap(), hb).unwrap();
        let mut rng = rng_from(seed ^ 0x5eed);
        let p: Vec<f64> = (0..m.param_len()).map(|_| rng.random_range(-0.7..0.7)).collect();
        m.set_params(&p).unwrap();
        m
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        for (i, (shared, symmetric)) in [(true, false), (false, false), (true, true)].into_iter().enumerate() {
            let m = random_dual(10 + i as u64, shared);
            let mut rng = rng_from(i as u64);
            let xs: Vec<Vec<f64>> = (0..4).map(|_| gaussian_vec(&mut rng, 5, 1.0)).collect();
            let batch: Vec<(&[f64], usize)> = xs.iter().enumerate().map(|(j, x)| (x.as_slice(), j % 3)).collect();
            let (_, analytic) = dual_loss_and_grad(&m, &batch, 1.7, symmetric).unwrap();
            let fd = finite_diff_grad(
                |p| {
                    let mut mm = m.clone();
                    mm.set_params(p)?;
                    Ok::<_, crate::LabError>(dual_loss_and_grad(&mm, &batch, 1.7, symmetric)?.0.total)
                },
                &m.params(),
                1e-5,
            )
            .unwrap();
            assert!(relative_l2_error(&analytic, &fd) < 1e-4);
        }
    }

    #[test]
    fn kl_matches_reference_values() {
        // KL([.7,.3] ‖ [.3,.7]) from logits ln p.
        let a = [0.7f64.ln(), 0.3f64.ln()];
        let b = [0.3f64.ln(), 0.7f64.ln()];
        assert!((kl_from_logits(&a, &b) - 0.33891914415488145).abs() < 1e-14);
        assert_eq!(kl_from_logits(&a, &a), 0.0);
    }

    #[test]
    fn params_round_trip() {
        for shared in [true, false] {
            let m = random_dual(3, shared);
            let mut n = m.clone();
            n.set_params(&vec![0.0; m.param_len()]).unwrap();
            n.set_params(&m.params()).unwrap();
            assert_eq!(m, n);
        }
    }

    fn small_victim() -> VictimConfig {
        VictimConfig { train_per_class: 40, test_per_class: 40, ..VictimConfig::default() }
    }

    fn small_defense(lambda: f64) -> DefenseConfig {
        DefenseConfig { lambda, train: TrainConfig { epochs: 5, ..TrainConfig::default() }, ..DefenseConfig::default() }
    }

    #[test]
    fn logged_objective_is_recomputable_from_logits() {
        let world = TaskWorld::new(WorldSpec::default()).unwrap();
        let out = train_dual_lora(&world, &small_victim(), &small_defense(2.0)).unwrap();
        assert_eq!(out.epochs.len(), 5);
        for e in &out.epochs {
            let n = e.probe_labels.len() as f64;
            let (mut ta, mut tb, mut kl) = (0.0, 0.0, 0.0);
            for ((za, zb), &y) in e.probe_logits_a.iter().zip(&e.probe_logits_b).zip(&e.probe_labels) {
                ta += -log_softmax_unchecked(za)[y];
                tb += -log_softmax_unchecked(zb)[y];
                kl += kl_from_logits(za, zb);
            }
            let total = ta / n + tb / n - 2.0 * kl / n;
            assert!((total - e.probe_objective.total).abs() < 1e-9);
        }
    }

    #[test]
    fn divergence_grows_with_lambda() {
        let world = TaskWorld::new(WorldSpec::default()).unwrap();
        let off = train_dual_lora(&world, &small_victim(), &small_defense(0.0)).unwrap();
        let on = train_dual_lora(&world, &small_victim(), &small_defense(5.0)).unwrap();
        assert!(on.heldout_kl > off.heldout_kl);
    }

    #[test]
    fn defended_answers_come_from_one_adapter() {
        let world = TaskWorld::new(WorldSpec::default()).unwrap();
        let out = train_dual_lora(&world, &small_victim(), &small_defense(2.0)).unwrap();
        let oracle = defended_oracle(&out.model, LabelMode::Soft, 50, 9).unwrap();
        let xs = small_victim().test_set(&world).unwrap().inputs[..50].to_vec();
        let answers = oracle.query(&xs).unwrap();
        for (x, y) in xs.iter().zip(&answers) {
            let a = oracle.answer_with(oracle.primary(), x).unwrap();
            let b = oracle.answer_with(oracle.secondary().unwrap(), x).unwrap();
            assert!(*y == a || *y == b);
        }
    }

    #[test]
    fn tradeoff_table_has_one_row_per_cell() {
        let world = TaskWorld::new(WorldSpec::default()).unwrap();
        let tcfg = TrainConfig { epochs: 2, warmup_epochs: 1, ..TrainConfig::default() };
        let cfg = TradeoffConfig {
            lambdas: vec![0.0, 1.0],
            attacks: vec![AttackKind::Rand, AttackKind::Baseline],
            seeds: vec![1, 2, 3],
            attack: AttackConfig { budget: 40, train: tcfg.clone(), ..AttackConfig::default() },
            defense: DefenseConfig { train: tcfg, ..DefenseConfig::default() },
            ..TradeoffConfig::default()
        };
        let rows = evaluate_tradeoff(&world, &small_victim(), &cfg).unwrap();
        assert_eq!(rows.len(), 12);
        let csv = tradeoff_csv(&rows);
        assert_eq!(csv.lines().count(), 13);
        assert!(csv.starts_with("lambda,attack,seed,defender_acc,substitute_acc,substitute_asr\n"));
        assert!(median_asr_drop(&rows, AttackKind::Rand, 0.0, 1.0).is_some());
        assert!(median_asr_drop(&rows, AttackKind::Dsl, 0.0, 1.0).is_none());
    }
}
