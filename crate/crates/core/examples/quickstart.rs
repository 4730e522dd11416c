//! Train a victim, steal it with the DSL attack, print the result.
//!
//! cargo run --release -p loralab-core --example quickstart

use loralab_core::attacks::{stolen_lora_dsl, AttackConfig, BackboneMode};
use loralab_core::experiment::{prepare_victim, ExperimentConfig};
use loralab_core::victim::{LabelMode, QueryOracle, VictimOracle};
use loralab_core::worldgen::GeneratorConfig;

fn main() -> loralab_core::Result<()> {
    let prepared = prepare_victim(&ExperimentConfig::default())?;
    println!("victim test accuracy: {:.2}%", prepared.victim.test_accuracy);

    let budget = 1000;
    let oracle = VictimOracle::new(prepared.victim.model.clone(), LabelMode::Soft, budget);
    let cfg = AttackConfig { backbone_mode: BackboneMode::Cross, budget, seed: 1, ..AttackConfig::default() };
    let (_, report) = stolen_lora_dsl(&oracle, &prepared.context(), &GeneratorConfig::default(), &cfg)?;
    println!(
        "substitute accuracy {:.2}%, ASR {:.2}, {} queries used, {} left",
        report.final_acc,
        report.final_asr,
        report.queries_used,
        oracle.remaining()?
    );
    Ok(())
}
