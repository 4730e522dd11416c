use serde::{Deserialize, Serialize};

use super::{
    disagreement_filter, ensure_budget, make_substitute, query_all, select_queries, AttackConfig,
    AttackContext, AttackKind, CurvePoint, RunReport,
};
use crate::error::{LabError, Result};
use crate::nnet::{label_refine_train, AdaptedClassifier};
use crate::numerics::ProbVector;
use crate::rng::{derive_indexed, rng_for};
use crate::store::{Provenance, SampleStore};
use crate::victim::QueryOracle;
use crate::worldgen::{balanced_counts, synth_candidates, GeneratorConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Confident,
    Uncertain,
}

/// Filter outcome for one candidate, as seen at filter time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub pseudo_label: usize,
    pub predicted: usize,
    pub confidence: f64,
    pub partition: Partition,
    pub queried: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationEvent {
    /// 0 is the pseudo-label-only initialization.
    pub iteration: usize,
    pub candidates: usize,
    pub confident: usize,
    pub uncertain: usize,
    pub queried: usize,
    /// Attack budget left after this iteration.
    pub budget_remaining: u64,
    pub queries_used: u64,
    pub train_size: usize,
    pub substitute_acc: f64,
    /// One entry per candidate; empty for the initialization.
    pub records: Vec<CandidateRecord>,
}

/// Disagreement-based semi-supervised querying.
///
/// Iteration 0 trains on `N` pseudo-labeled samples per class without any
/// query. Each later iteration synthesizes `⌈β·a⌉` candidates, where `a` is
/// the iteration's allowance (⌊B/T⌋ plus whatever earlier iterations left
/// unspent; the last planned iteration and any overflow iterations take all
/// of the remainder). Candidates the substitute confidently agrees with keep
/// their pseudo-label; the least confident of the rest are sent to the
/// oracle. The substitute is then trained with label refinement on the new
/// samples, plus every earlier sample when `accumulate` is set.
pub fn stolen_lora_dsl(
    oracle: &dyn QueryOracle,
    ctx: &AttackContext<'_>,
    gen: &GeneratorConfig,
    cfg: &AttackConfig,
) -> Result<(AdaptedClassifier, RunReport)> {
    cfg.validate_dsl()?;
    ensure_budget(oracle, cfg.budget)?;
    let k = ctx.world.num_classes();
    let mut substitute = make_substitute(ctx.public_backbone, k, cfg.rank, cfg.backbone_mode, cfg.seed)?;
    let mut gen_rng = rng_for(cfg.seed, "dsl-candidates");
    let train_cfg = |t: usize| cfg.train.with_seed(derive_indexed(cfg.seed, "dsl-train", t as u64));

    let initial = synth_candidates(ctx.world, gen, &vec![cfg.initial_per_class; k], &mut gen_rng)?;
    let mut store = SampleStore::new();
    for (x, c) in initial.samples.iter().zip(&initial.pseudo_labels) {
        store.push(x.clone(), ProbVector::one_hot(k, *c)?, Provenance::Pseudo, 0)?;
    }
    if !store.is_empty() {
        label_refine_train(&mut substitute, &mut store, &train_cfg(0))?;
    }
    let (acc, asr) = ctx.evaluate(&substitute)?;
    let mut checkpoints = vec![CurvePoint { queries_used: 0, acc, asr }];
    let mut events = vec![IterationEvent {
        iteration: 0,
        candidates: initial.len(),
        confident: initial.len(),
        uncertain: 0,
        queried: 0,
        budget_remaining: cfg.budget,
        queries_used: 0,
        train_size: store.len(),
        substitute_acc: acc,
        records: Vec::new(),
    }];
    if !cfg.accumulate {
        store = SampleStore::new();
    }

    let per_iter = cfg.per_iteration_budget();
    let mut spent: u64 = 0;
    let mut t = 1;
    while spent < cfg.budget && t <= cfg.max_iterations {
        let allowance = if t >= cfg.iterations {
            cfg.budget - spent
        } else {
            (per_iter * t as u64).saturating_sub(spent).min(cfg.budget - spent)
        };
        let n_cand = (cfg.beta * allowance as f64).ceil() as usize;
        let counts = balanced_counts(k, n_cand, &mut gen_rng);
        let cands = synth_candidates(ctx.world, gen, &counts, &mut gen_rng)?;
        let filtered = disagreement_filter(&substitute, &cands, cfg.tau)?;
        let selected = select_queries(&filtered.uncertain, allowance as usize);
        let inputs: Vec<Vec<f64>> = selected.iter().map(|&i| cands.samples[i].clone()).collect();
        let answers = query_all(oracle, &inputs)?;
        if answers.len() != inputs.len() {
            return Err(LabError::Protocol("oracle answered a different number of inputs".into()));
        }
        spent += inputs.len() as u64;

        let mut fresh = SampleStore::new();
        for &i in &filtered.confident {
            fresh.push(cands.samples[i].clone(), ProbVector::one_hot(k, cands.pseudo_labels[i])?, Provenance::Pseudo, t)?;
        }
        for (x, y) in inputs.into_iter().zip(answers) {
            fresh.push(x, y, Provenance::Queried, t)?;
        }
        if cfg.accumulate {
            store.extend(fresh)?;
        } else {
            store = fresh;
        }
        if !store.is_empty() {
            label_refine_train(&mut substitute, &mut store, &train_cfg(t))?;
        }

        let mut records: Vec<CandidateRecord> = filtered
            .predictions
            .iter()
            .zip(&cands.pseudo_labels)
            .map(|(&(predicted, confidence), &pseudo_label)| CandidateRecord {
                pseudo_label,
                predicted,
                confidence,
                partition: Partition::Uncertain,
                queried: false,
            })
            .collect();
        for &i in &filtered.confident {
            records[i].partition = Partition::Confident;
        }
        for &i in &selected {
            records[i].queried = true;
        }
        let (acc, asr) = ctx.evaluate(&substitute)?;
        checkpoints.push(CurvePoint { queries_used: spent, acc, asr });
        events.push(IterationEvent {
            iteration: t,
            candidates: cands.len(),
            confident: filtered.confident.len(),
            uncertain: filtered.uncertain.len(),
            queried: selected.len(),
            budget_remaining: cfg.budget - spent,
            queries_used: spent,
            train_size: store.len(),
            substitute_acc: acc,
            records,
        });
        t += 1;
    }

    let last = checkpoints.last().cloned().expect("initial checkpoint exists");
    let report = RunReport {
        attack: AttackKind::Dsl,
        backbone_mode: cfg.backbone_mode,
        label_mode: oracle.label_mode(),
        seed: cfg.seed,
        budget: cfg.budget,
        tau: cfg.tau,
        victim_acc: ctx.victim_acc,
        queries_used: spent,
        final_acc: last.acc,
        final_asr: last.asr,
        checkpoints,
        events,
    };
    Ok((substitute, report))
}
