use std::path::{Path, PathBuf};
use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use loralab_core::attacks::{AttackKind, BackboneMode, RunReport};
use loralab_core::defense::{
    defended_oracle, evaluate_tradeoff, median_asr_drop, train_dual_lora, tradeoff_csv, TradeoffConfig, TradeoffRow,
};
use loralab_core::experiment::{
    attack_cells, attack_curves_csv, attack_summary_csv, distinction_csv, median_table, prepare_victim, report_stem,
    run_attack_cell, run_distinction, to_json_pretty, write_file, ExperimentConfig,
};
use loralab_core::nnet::Checkpoint;
use loralab_core::service::serve;
use loralab_core::victim::{LabelMode, QueryOracle, VictimOracle};

mod report;

#[derive(Debug, Parser)]
#[command(name = "loralab", version, about = "LoRA extraction attacks and defenses on synthetic task worlds")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// JSON experiment config; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output root (overrides `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated seed list.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Single query budget for attacks, the defense sweep and the server.
    #[arg(long, global = true)]
    budget: Option<u64>,
    #[arg(long, global = true, value_parser = ["soft", "hard"])]
    label_mode: Option<String>,
    #[arg(long, global = true, value_parser = ["identical", "cross"])]
    backbone: Option<String>,
    /// Worker threads for independent runs.
    #[arg(long, global = true, default_value_t = 1)]
    parallel: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fine-tune the victim and save its checkpoint.
    TrainVictim,
    /// Run every (attack, budget, seed) cell.
    Attack {
        /// Query a served victim instead of an in-process one.
        #[arg(long)]
        remote: Option<String>,
    },
    /// Sweep the dual-adapter defense over the λ grid.
    Defend,
    /// Victim-to-substitute divergence on ID versus OOD inputs.
    Distinction,
    /// Serve the victim over line-delimited JSON until interrupted.
    Serve {
        /// Bind address (overrides `serve.addr`).
        #[arg(long)]
        addr: Option<String>,
    },
    /// Summarize whatever outputs exist for the experiment.
    Report,
}

fn load_config(g: &GlobalArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &g.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seeds) = &g.seeds {
        cfg.seeds = seeds.clone();
    }
    if let Some(b) = g.budget {
        cfg.budgets = vec![b];
        cfg.defense_budget = Some(b);
        cfg.serve.budget = b;
    }
    if let Some(m) = &g.label_mode {
        cfg.label_mode = m.parse::<LabelMode>()?;
    }
    if let Some(b) = &g.backbone {
        cfg.attack.backbone_mode = b.parse::<BackboneMode>()?;
    }
    cfg.validate().context("invalid configuration")?;
    Ok(cfg)
}

fn pool(n: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build()?)
}

/// Wall-clock goes to its own file so reports stay byte-identical.
fn write_meta(dir: &Path, started: Instant) -> Result<()> {
    let meta = serde_json::json!({ "wall_clock_seconds": started.elapsed().as_secs_f64() });
    write_file(&dir.join("meta.json"), &to_json_pretty(&meta)?)?;
    Ok(())
}

fn cmd_train_victim(cfg: &ExperimentConfig) -> Result<()> {
    let started = Instant::now();
    let prepared = prepare_victim(cfg)?;
    let dir = cfg.command_dir("train-victim").join(cfg.victim.seed.to_string());
    write_file(&dir.join("checkpoint.json"), &Checkpoint::new(&prepared.victim.model).to_json()?)?;
    write_file(&dir.join("summary.json"), &to_json_pretty(&prepared.summary(cfg))?)?;
    write_meta(&dir, started)?;
    println!("victim test accuracy: {}%", prepared.victim.test_accuracy);
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_attack(cfg: &ExperimentConfig, parallel: usize) -> Result<()> {
    let started = Instant::now();
    let prepared = prepare_victim(cfg)?;
    let cells = attack_cells(cfg);
    let reports: Vec<RunReport> = pool(parallel)?.install(|| {
        cells
            .par_iter()
            .map(|&cell| {
                run_attack_cell(cfg, &prepared, cell).with_context(|| {
                    format!("{} attack, budget {}, seed {}", cell.attack.as_str(), cell.budget, cell.seed)
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let dir = cfg.command_dir("attack");
    for r in &reports {
        let seed_dir = dir.join(r.seed.to_string());
        let stem = report_stem(r);
        write_file(&seed_dir.join(format!("{stem}.json")), &to_json_pretty(r)?)?;
        if r.attack == AttackKind::Dsl {
            write_file(&seed_dir.join(format!("{stem}.events.jsonl")), &r.event_log_jsonl()?)?;
        }
    }
    write_file(&dir.join("victim.json"), &to_json_pretty(&prepared.summary(cfg))?)?;
    write_file(&dir.join("attack.csv"), &attack_summary_csv(&reports))?;
    write_file(&dir.join("curves.csv"), &attack_curves_csv(&reports))?;
    let medians = median_table(&reports);
    write_file(&dir.join("medians.json"), &to_json_pretty(&medians)?)?;
    write_meta(&dir, started)?;

    println!("victim test accuracy: {}%", prepared.victim.test_accuracy);
    println!("{:<10} {:>8} {:>5} {:>10} {:>10}", "attack", "budget", "runs", "med acc", "med asr");
    for m in &medians {
        println!(
            "{:<10} {:>8} {:>5} {:>10.3} {:>10.3}",
            m.attack.as_str(),
            m.budget,
            m.runs,
            m.median_acc,
            m.median_asr
        );
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_defend(cfg: &ExperimentConfig, parallel: usize) -> Result<()> {
    let started = Instant::now();
    let world = loralab_core::worldgen::TaskWorld::new(cfg.world.clone())?;
    let base = TradeoffConfig {
        lambdas: Vec::new(),
        attacks: cfg.defense_attacks.clone(),
        seeds: cfg.seeds.clone(),
        label_mode: cfg.label_mode,
        attack: cfg.attack_config(cfg.defense_budget(), 0),
        generator: cfg.generator.clone(),
        defense: cfg.defense.clone(),
    };
    let per_lambda: Vec<Vec<TradeoffRow>> = pool(parallel)?.install(|| {
        cfg.lambdas
            .par_iter()
            .map(|&l| {
                let one = TradeoffConfig { lambdas: vec![l], ..base.clone() };
                evaluate_tradeoff(&world, &cfg.victim, &one).with_context(|| format!("lambda {l}"))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let rows: Vec<TradeoffRow> = per_lambda.into_iter().flatten().collect();

    let dir = cfg.command_dir("defend");
    write_file(&dir.join("tradeoff.csv"), &tradeoff_csv(&rows))?;
    for &seed in &cfg.seeds {
        let mine: Vec<TradeoffRow> = rows.iter().filter(|r| r.seed == seed).cloned().collect();
        write_file(&dir.join(seed.to_string()).join("tradeoff.csv"), &tradeoff_csv(&mine))?;
    }
    let lo = cfg.lambdas.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = cfg.lambdas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let drops: Vec<serde_json::Value> = cfg
        .defense_attacks
        .iter()
        .map(|&a| {
            serde_json::json!({
                "attack": a.as_str(),
                "from_lambda": lo,
                "to_lambda": hi,
                "median_asr_drop": median_asr_drop(&rows, a, lo, hi),
            })
        })
        .collect();
    write_file(&dir.join("drops.json"), &to_json_pretty(&drops)?)?;
    write_meta(&dir, started)?;

    println!("{:>8} {:<10} {:>12} {:>12}", "lambda", "attack", "defender", "median asr");
    for &l in &cfg.lambdas {
        for &a in &cfg.defense_attacks {
            let cell: Vec<&TradeoffRow> = rows.iter().filter(|r| r.lambda == l && r.attack == a).collect();
            let asrs: Vec<f64> = cell.iter().map(|r| r.substitute_asr).collect();
            let defender = cell.first().map_or(f64::NAN, |r| r.defender_acc);
            let med = loralab_core::metrics::median(&asrs).unwrap_or(f64::NAN);
            println!("{:>8} {:<10} {:>12.3} {:>12.3}", l, a.as_str(), defender, med);
        }
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_distinction(cfg: &ExperimentConfig, parallel: usize) -> Result<()> {
    let started = Instant::now();
    let prepared = prepare_victim(cfg)?;
    let results = pool(parallel)?.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&s| run_distinction(cfg, &prepared, s).with_context(|| format!("seed {s}")))
            .collect::<Result<Vec<_>>>()
    })?;
    let dir = cfg.command_dir("distinction");
    for r in &results {
        let seed_dir = dir.join(r.seed.to_string());
        write_file(&seed_dir.join("divergence.csv"), &r.profile.to_csv())?;
        write_file(&seed_dir.join("control.csv"), &r.control.to_csv())?;
    }
    write_file(&dir.join("distinction.csv"), &distinction_csv(&results))?;
    write_meta(&dir, started)?;
    println!("{:>6} {:>12} {:>12} {:>12}", "seed", "sub acc", "id mean", "ood mean");
    for r in &results {
        println!(
            "{:>6} {:>12.3} {:>12.5} {:>12.5}",
            r.seed,
            r.substitute_acc,
            r.profile.id_mean(),
            r.profile.ood_mean()
        );
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_serve(cfg: &ExperimentConfig, addr: Option<String>) -> Result<()> {
    let prepared = prepare_victim(cfg)?;
    let s = &cfg.serve;
    let oracle: Arc<dyn QueryOracle> = match s.defense_lambda {
        None => Arc::new(VictimOracle::new(prepared.victim.model.clone(), cfg.label_mode, s.budget)),
        Some(lambda) => {
            let dcfg = loralab_core::defense::DefenseConfig { lambda, ..cfg.defense.clone() };
            let dual = train_dual_lora(&prepared.world, &cfg.victim, &dcfg)?;
            Arc::new(defended_oracle(&dual.model, cfg.label_mode, s.budget, s.selection_seed)?)
        }
    };
    let addr = addr.unwrap_or_else(|| s.addr.clone());
    let handle = serve(oracle, addr.as_str()).with_context(|| format!("cannot bind {addr}"))?;
    let stop = handle.stop_flag();
    ctrlc::set_handler(move || stop.store(true, Ordering::SeqCst)).context("cannot install signal handler")?;
    println!(
        "serving {} labels on {} (budget {}, {} classes, input dim {})",
        cfg.label_mode.as_str(),
        handle.local_addr(),
        s.budget,
        prepared.world.num_classes(),
        prepared.world.input_dim()
    );
    handle.wait();
    println!("stopped");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli.global)?;
    let parallel = cli.global.parallel;
    if parallel == 0 {
        bail!("--parallel must be at least 1");
    }
    match cli.command {
        Command::TrainVictim => cmd_train_victim(&cfg),
        Command::Attack { remote } => {
            if remote.is_some() {
                cfg.remote = remote;
            }
            cmd_attack(&cfg, parallel)
        }
        Command::Defend => cmd_defend(&cfg, parallel),
        Command::Distinction => cmd_distinction(&cfg, parallel),
        Command::Serve { addr } => cmd_serve(&cfg, addr),
        Command::Report => report::cmd_report(&cfg),
    }
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
