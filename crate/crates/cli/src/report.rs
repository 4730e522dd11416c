//! `report`: gathers the outputs of earlier commands into one summary.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use loralab_core::attacks::RunReport;
use loralab_core::experiment::{median_table, to_json_pretty, write_file, ExperimentConfig, MedianRow, VictimSummary};
use loralab_core::metrics::median;

#[derive(Debug, Serialize)]
struct DefenseCell {
    lambda: f64,
    attack: String,
    defender_acc: f64,
    median_asr: f64,
    runs: usize,
}

#[derive(Debug, Serialize)]
struct DistinctionRow {
    seed: u64,
    id_mean: f64,
    ood_mean: f64,
}

#[derive(Debug, Default, Serialize)]
struct Report {
    victim: Option<VictimSummary>,
    attacks: Vec<MedianRow>,
    defense: Vec<DefenseCell>,
    distinction: Vec<DistinctionRow>,
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    out.sort();
    Ok(out)
}

fn load_reports(dir: &Path) -> Result<Vec<RunReport>> {
    let mut reports = Vec::new();
    for seed_dir in sorted_entries(dir)?.into_iter().filter(|p| p.is_dir()) {
        for file in sorted_entries(&seed_dir)? {
            if file.extension().is_some_and(|e| e == "json") {
                let text = fs::read_to_string(&file)?;
                reports.push(serde_json::from_str(&text).with_context(|| format!("parsing {}", file.display()))?);
            }
        }
    }
    Ok(reports)
}

/// Rows of a headered CSV file, split on commas.
fn csv_rows(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path)?;
    Ok(text.lines().skip(1).map(|l| l.split(',').map(str::to_owned).collect()).collect())
}

fn num(field: &str, path: &Path) -> Result<f64> {
    field.parse().with_context(|| format!("bad number `{field}` in {}", path.display()))
}

fn load_defense(path: &Path) -> Result<Vec<DefenseCell>> {
    let mut cells: Vec<(f64, String, f64, Vec<f64>)> = Vec::new();
    for row in csv_rows(path)? {
        anyhow::ensure!(row.len() == 6, "expected 6 columns in {}", path.display());
        let (lambda, attack, defender) = (num(&row[0], path)?, row[1].clone(), num(&row[3], path)?);
        let asr = num(&row[5], path)?;
        match cells.iter_mut().find(|c| c.0 == lambda && c.1 == attack) {
            Some(c) => c.3.push(asr),
            None => cells.push((lambda, attack, defender, vec![asr])),
        }
    }
    Ok(cells
        .into_iter()
        .map(|(lambda, attack, defender_acc, asrs)| DefenseCell {
            lambda,
            attack,
            defender_acc,
            median_asr: median(&asrs).unwrap_or(f64::NAN),
            runs: asrs.len(),
        })
        .collect())
}

fn load_distinction(path: &Path) -> Result<Vec<DistinctionRow>> {
    csv_rows(path)?
        .into_iter()
        .map(|row| {
            anyhow::ensure!(row.len() == 4, "expected 4 columns in {}", path.display());
            Ok(DistinctionRow {
                seed: row[0].parse().with_context(|| format!("bad seed in {}", path.display()))?,
                id_mean: num(&row[2], path)?,
                ood_mean: num(&row[3], path)?,
            })
        })
        .collect()
}

fn render(r: &Report) -> String {
    let mut md = String::from("# Experiment report\n");
    if let Some(v) = &r.victim {
        md += &format!("\nVictim test accuracy: {}% on {} samples.\n", v.test_accuracy, v.test_size);
    }
    if !r.attacks.is_empty() {
        md += "\n| attack | budget | runs | median acc | median ASR |\n|---|---:|---:|---:|---:|\n";
        for m in &r.attacks {
            md += &format!(
                "| {} | {} | {} | {:.3} | {:.3} |\n",
                m.attack.as_str(),
                m.budget,
                m.runs,
                m.median_acc,
                m.median_asr
            );
        }
    }
    if !r.defense.is_empty() {
        md += "\n| lambda | attack | defender acc | median ASR |\n|---:|---|---:|---:|\n";
        for c in &r.defense {
            md += &format!("| {} | {} | {:.3} | {:.3} |\n", c.lambda, c.attack, c.defender_acc, c.median_asr);
        }
    }
    if !r.distinction.is_empty() {
        md += "\n| seed | ID mean CE | OOD mean CE |\n|---:|---:|---:|\n";
        for d in &r.distinction {
            md += &format!("| {} | {:.5} | {:.5} |\n", d.seed, d.id_mean, d.ood_mean);
        }
    }
    md
}

pub fn cmd_report(cfg: &ExperimentConfig) -> Result<()> {
    let mut report = Report::default();
    let attack_dir = cfg.command_dir("attack");
    if attack_dir.is_dir() {
        report.attacks = median_table(&load_reports(&attack_dir)?);
        let victim = attack_dir.join("victim.json");
        if victim.is_file() {
            report.victim = Some(serde_json::from_str(&fs::read_to_string(&victim)?)?);
        }
    }
    let tradeoff = cfg.command_dir("defend").join("tradeoff.csv");
    if tradeoff.is_file() {
        report.defense = load_defense(&tradeoff)?;
    }
    let distinction = cfg.command_dir("distinction").join("distinction.csv");
    if distinction.is_file() {
        report.distinction = load_distinction(&distinction)?;
    }
    if report.attacks.is_empty() && report.defense.is_empty() && report.distinction.is_empty() {
        anyhow::bail!("no outputs under {}; run attack, defend or distinction first", cfg.out_dir.join(&cfg.name).display());
    }
    let dir = cfg.command_dir("report");
    let md = render(&report);
    write_file(&dir.join("report.json"), &to_json_pretty(&report)?)?;
    write_file(&dir.join("report.md"), &md)?;
    print!("{md}");
    Ok(())
}
