//! `evaluate`: metrics report (pass curve + selected accuracy) from infer
//! outputs and the dataset manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use divskill::dataset::load_manifest;
use divskill::domain::InstanceId;
use divskill::metrics::build_report;

use super::infer::{CandidateRow, SelectionRow};
use super::{write_json, write_run_manifest};

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// selections.jsonl from `infer`.
    #[arg(long)]
    pub selections: PathBuf,
    /// candidates.jsonl from `infer`.
    #[arg(long)]
    pub candidates: PathBuf,
    /// The dataset manifest the selections were made on.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Report path (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let mut rows = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(
            serde_json::from_str(&line)
                .with_context(|| format!("{}: line {}", path.display(), idx + 1))?,
        );
    }
    Ok(rows)
}

pub fn run_command(args: EvaluateArgs) -> Result<()> {
    let instances = load_manifest(&args.manifest).context("dataset manifest")?;
    let selections: Vec<SelectionRow> = read_jsonl(&args.selections)?;
    let candidates: Vec<CandidateRow> = read_jsonl(&args.candidates)?;

    let mut successes: BTreeMap<InstanceId, Vec<(String, bool)>> = BTreeMap::new();
    for row in candidates {
        successes
            .entry(row.instance_id)
            .or_default()
            .push((row.skill_id.as_str().to_owned(), row.success));
    }
    let winners: BTreeMap<InstanceId, String> = selections
        .into_iter()
        .map(|row| (row.instance_id, row.winner_skill_id.as_str().to_owned()))
        .collect();

    let mut per_instance = Vec::with_capacity(instances.len());
    for instance in &instances {
        let id = &instance.instance_id;
        let Some(rows) = successes.get(id) else {
            bail!("metrics: instance '{id}' has no candidate rows");
        };
        let Some(winner) = winners.get(id) else {
            bail!("metrics: instance '{id}' has no selection");
        };
        let Some((_, verdict)) = rows.iter().find(|(skill, _)| skill == winner) else {
            bail!("metrics: instance '{id}' selection references unknown skill '{winner}'");
        };
        let outcomes: Vec<bool> = rows.iter().map(|(_, ok)| *ok).collect();
        per_instance.push((id.clone(), outcomes, Some(*verdict)));
    }

    let report = build_report(&per_instance).context("metrics")?;
    write_json(&args.out, &report)?;
    if let Some(parent) = args.out.parent() {
        write_run_manifest(
            parent,
            "evaluate",
            None,
            &[
                ("selections", args.selections.as_path()),
                ("candidates", args.candidates.as_path()),
                ("manifest", args.manifest.as_path()),
            ],
        )?;
    }
    let max_k = report.pass_curve.keys().max().copied().unwrap_or(0);
    println!(
        "evaluate: {} instances; pass@1 = {:.4}, pass@{} = {:.4}, selected accuracy = {:.4}; wrote {}",
        report.per_instance.len(),
        report.pass1_mean,
        max_k,
        report.pass_curve.get(&max_k).copied().unwrap_or(0.0),
        report.selected_accuracy,
        args.out.display()
    );
    Ok(())
}
