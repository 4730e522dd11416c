use rand::seq::SliceRandom;

use super::{
    ensure_budget, make_substitute, query_all, AttackConfig, AttackContext, AttackKind, CurvePoint,
    RunReport,
};
use crate::error::Result;
use crate::nnet::{label_refine_train, AdaptedClassifier};
use crate::numerics::ProbVector;
use crate::rng::{derive_indexed, rng_for, Rng64};
use crate::store::{Provenance, SampleStore};
use crate::victim::QueryOracle;
use crate::worldgen::{balanced_counts, sample_ood, synth_candidates, GeneratorConfig, TaskWorld};

/// Source of attack inputs for the random-pool baseline.
pub type PoolSampler<'a> = &'a dyn Fn(usize, &mut Rng64) -> Result<Vec<Vec<f64>>>;

const CHECKPOINT_FRACTIONS: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];

/// Queries every input, then trains one substitute per budget checkpoint on
/// the corresponding prefix with plain cross-entropy.
fn query_then_distill(
    attack: AttackKind,
    oracle: &dyn QueryOracle,
    ctx: &AttackContext<'_>,
    inputs: Vec<Vec<f64>>,
    cfg: &AttackConfig,
) -> Result<(AdaptedClassifier, RunReport)> {
    let answers = query_all(oracle, &inputs)?;
    let fresh = make_substitute(
        ctx.public_backbone,
        ctx.world.num_classes(),
        cfg.rank,
        cfg.backbone_mode,
        cfg.seed,
    )?;
    let train = cfg.train.plain();
    let mut checkpoints = Vec::new();
    let mut last = fresh.clone();
    let mut prev_n = None;
    for (k, frac) in CHECKPOINT_FRACTIONS.iter().enumerate() {
        let n = (frac * inputs.len() as f64).round() as usize;
        if prev_n != Some(n) {
            last = train_on_prefix(&fresh, &inputs[..n], &answers[..n], &train, derive_indexed(cfg.seed, "distill", k as u64))?;
            prev_n = Some(n);
        }
        let (acc, asr) = ctx.evaluate(&last)?;
        checkpoints.push(CurvePoint { queries_used: n as u64, acc, asr });
    }
    let final_point = checkpoints.last().cloned().expect("checkpoints are non-empty");
    let report = RunReport {
        attack,
        backbone_mode: cfg.backbone_mode,
        label_mode: oracle.label_mode(),
        seed: cfg.seed,
        budget: cfg.budget,
        tau: cfg.tau,
        victim_acc: ctx.victim_acc,
        queries_used: inputs.len() as u64,
        final_acc: final_point.acc,
        final_asr: final_point.asr,
        checkpoints,
        events: Vec::new(),
    };
    Ok((last, report))
}

fn train_on_prefix(
    fresh: &AdaptedClassifier,
    inputs: &[Vec<f64>],
    answers: &[ProbVector],
    train: &crate::nnet::TrainConfig,
    seed: u64,
) -> Result<AdaptedClassifier> {
    let mut model = fresh.clone();
    if inputs.is_empty() || train.epochs == 0 {
        return Ok(model);
    }
    let mut store = SampleStore::new();
    for (x, y) in inputs.iter().zip(answers) {
        store.push(x.clone(), y.clone(), Provenance::Queried, 0)?;
    }
    label_refine_train(&mut model, &mut store, &train.with_seed(seed))?;
    Ok(model)
}

/// Synthesizes `B` class-balanced samples, queries all of them and distills
/// the answers with plain cross-entropy.
pub fn stolen_lora_rand(
    oracle: &dyn QueryOracle,
    ctx: &AttackContext<'_>,
    gen: &GeneratorConfig,
    cfg: &AttackConfig,
) -> Result<(AdaptedClassifier, RunReport)> {
    cfg.train.validate()?;
    ensure_budget(oracle, cfg.budget)?;
    let inputs = synthesize_shuffled(ctx.world, gen, cfg.budget as usize, cfg.seed)?;
    query_then_distill(AttackKind::Rand, oracle, ctx, inputs, cfg)
}

fn synthesize_shuffled(
    world: &TaskWorld,
    gen: &GeneratorConfig,
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let mut rng = rng_for(seed, "rand-candidates");
    let counts = balanced_counts(world.num_classes(), n, &mut rng);
    let mut samples = synth_candidates(world, gen, &counts, &mut rng)?.samples;
    samples.shuffle(&mut rng);
    Ok(samples)
}

/// Queries `B` samples drawn from `pool` (uniform out-of-distribution noise
/// when `None`) and distills the answers.
pub fn baseline_random_pool(
    oracle: &dyn QueryOracle,
    ctx: &AttackContext<'_>,
    pool: Option<PoolSampler<'_>>,
    cfg: &AttackConfig,
) -> Result<(AdaptedClassifier, RunReport)> {
    cfg.train.validate()?;
    ensure_budget(oracle, cfg.budget)?;
    let mut rng = rng_for(cfg.seed, "baseline-pool");
    let n = cfg.budget as usize;
    let inputs = match (pool, n) {
        (_, 0) => Vec::new(),
        (Some(sampler), _) => sampler(n, &mut rng)?,
        (None, _) => sample_ood(ctx.world, n, &mut rng)?,
    };
    query_then_distill(AttackKind::Baseline, oracle, ctx, inputs, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::TrainConfig;
    use crate::victim::{train_victim, LabelMode, VictimConfig, VictimOracle};
    use crate::worldgen::WorldSpec;

    #[test]
    fn zero_budget_leaves_substitute_at_chance() {
        let world = TaskWorld::new(WorldSpec::default()).unwrap();
        let vcfg = VictimConfig { train_per_class: 30, test_per_class: 50, ..VictimConfig::default() };
        let tcfg = TrainConfig { epochs: 3, ..TrainConfig::default() };
        let v = train_victim(&world, &vcfg, &tcfg).unwrap();
        let bb = vcfg.public_backbone(&world).unwrap();
        let ctx = AttackContext { world: &world, public_backbone: &bb, test_set: &v.test_set, victim_acc: v.test_accuracy };
        let oracle = VictimOracle::new(v.model.clone(), LabelMode::Soft, 0);
        let cfg = AttackConfig { budget: 0, train: tcfg, ..AttackConfig::default() };
        let (_, r) = stolen_lora_rand(&oracle, &ctx, &GeneratorConfig::default(), &cfg).unwrap();
        assert_eq!(r.final_acc, 12.5);
        let (_, r) = baseline_random_pool(&oracle, &ctx, None, &cfg).unwrap();
        assert_eq!(r.final_acc, 12.5);
        assert_eq!(r.queries_used, 0);
    }

    #[test]
    fn insufficient_budget_is_refused_before_querying() {
        let world = TaskWorld::new(WorldSpec::default()).unwrap();
        let vcfg = VictimConfig { train_per_class: 10, test_per_class: 10, ..VictimConfig::default() };
        let tcfg = TrainConfig { epochs: 1, warmup_epochs: 1, ..TrainConfig::default() };
        let v = train_victim(&world, &vcfg, &tcfg).unwrap();
        let bb = vcfg.public_backbone(&world).unwrap();
        let ctx = AttackContext { world: &world, public_backbone: &bb, test_set: &v.test_set, victim_acc: v.test_accuracy };
        let oracle = VictimOracle::new(v.model.clone(), LabelMode::Soft, 50);
        let cfg = AttackConfig { budget: 100, train: tcfg, ..AttackConfig::default() };
        assert!(stolen_lora_rand(&oracle, &ctx, &GeneratorConfig::default(), &cfg).is_err());
        assert_eq!(oracle.remaining().unwrap(), 50);
    }
}
