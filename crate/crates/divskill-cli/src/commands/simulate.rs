//! `simulate`: generate a synthetic capability-tagged dataset and a seed
//! pool, ready for `optimize --executor sim`.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use divskill::dataset::write_manifest;
use divskill::synth::{generate_instances, seed_pool, SynthSpec};

use super::write_run_manifest;

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Capability alphabet, comma-separated (e.g. a,b,c).
    #[arg(long, value_delimiter = ',')]
    pub capabilities: Vec<String>,
    #[arg(long, default_value_t = 60)]
    pub train: usize,
    #[arg(long, default_value_t = 40)]
    pub holdout: usize,
    #[arg(long, default_value_t = 1)]
    pub reqs_per_instance: usize,
    #[arg(long)]
    pub seed: u64,
    /// Seed pool size.
    #[arg(long, default_value_t = 3)]
    pub pool_size: usize,
    /// Capability covered by every seed skill; defaults to the first of the
    /// alphabet.
    #[arg(long)]
    pub base_cap: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_command(args: SimulateArgs) -> Result<()> {
    if args.capabilities.is_empty() {
        bail!("simulate: --capabilities must list at least one capability");
    }
    if args.train == 0 || args.pool_size == 0 {
        bail!("simulate: --train and --pool-size must be positive");
    }
    let base = args
        .base_cap
        .clone()
        .unwrap_or_else(|| args.capabilities[0].clone());
    if !args.capabilities.contains(&base) {
        bail!("simulate: base capability '{base}' is not in the alphabet");
    }
    let spec = SynthSpec {
        capabilities: args.capabilities.clone(),
        train: args.train,
        holdout: args.holdout,
        reqs_per_instance: args.reqs_per_instance,
        seed: args.seed,
    };
    let (train, holdout) = generate_instances(&spec);
    let pool = seed_pool(args.pool_size, &base);

    fs::create_dir_all(&args.out)?;
    let train_path = args.out.join("train.jsonl");
    let holdout_path = args.out.join("holdout.jsonl");
    let pool_path = args.out.join("pool.json");
    write_manifest(&train_path, &train).context("write train manifest")?;
    write_manifest(&holdout_path, &holdout).context("write holdout manifest")?;
    fs::write(&pool_path, pool.to_json()).context("write pool")?;
    write_run_manifest(&args.out, "simulate", Some(args.seed), &[])?;
    println!(
        "simulate: {} train / {} holdout instances over {{{}}}, pool of {} '{}' seeds; wrote {}",
        train.len(),
        holdout.len(),
        args.capabilities.join(","),
        args.pool_size,
        base,
        args.out.display()
    );
    Ok(())
}
