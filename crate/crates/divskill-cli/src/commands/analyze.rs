//! `analyze-trajectories`: per-skill-pair similarity histograms from a run
//! directory's trajectories.jsonl.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use divskill::domain::InstanceId;
use divskill::trajectory::{similarity_report, Trajectory};

use super::infer::TrajectoryRow;
use super::{write_json, write_run_manifest};

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// Run directory containing trajectories.jsonl (e.g. an `infer` output).
    #[arg(long)]
    pub runs: PathBuf,
    /// Report path (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_command(args: AnalyzeArgs) -> Result<()> {
    let path = args.runs.join("trajectories.jsonl");
    let file = fs::File::open(&path)
        .with_context(|| format!("trajectory analysis: cannot open {}", path.display()))?;
    let mut groups: BTreeMap<InstanceId, Vec<Trajectory>> = BTreeMap::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: TrajectoryRow = serde_json::from_str(&line)
            .with_context(|| format!("{}: line {}", path.display(), idx + 1))?;
        groups
            .entry(row.instance_id.clone())
            .or_default()
            .push(Trajectory {
                skill_id: row.skill_id,
                instance_id: row.instance_id,
                actions: row.actions,
            });
    }
    let report = similarity_report(&groups).context("trajectory analysis")?;
    write_json(&args.out, &report)?;
    if let Some(parent) = args.out.parent() {
        write_run_manifest(parent, "analyze-trajectories", None, &[("trajectories", path.as_path())])?;
    }
    println!(
        "analyze-trajectories: {} instances, {} skill pair(s), mean off-diagonal similarity {:.4}; wrote {}",
        report.instances,
        report.pairs.len(),
        report.mean_off_diagonal,
        args.out.display()
    );
    Ok(())
}
