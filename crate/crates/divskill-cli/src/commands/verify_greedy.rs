//! `verify-greedy`: randomized check of the greedy (1 - 1/e) guarantee over
//! seeded random population matrices. Emits a JSON report of ratios; any
//! violation is a failure.

use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Result};
use clap::Args;
use divskill::coverage::{greedy_bound, PopulationMatrix, DEFAULT_ENUMERATION_CAP};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{write_json, write_run_manifest};

#[derive(Args, Debug)]
pub struct VerifyGreedyArgs {
    /// Maximum number of skills per trial matrix.
    #[arg(long, default_value_t = 8)]
    pub skills: usize,
    /// Maximum number of instances per trial matrix.
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    /// Maximum ensemble size K per trial.
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    #[arg(long)]
    pub seed: u64,
    /// Report path; defaults to stdout only.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct TrialRecord {
    trial: usize,
    skills: usize,
    instances: usize,
    k: usize,
    greedy_value: f64,
    opt_value: f64,
    ratio: f64,
    holds: bool,
}

#[derive(Serialize)]
struct GreedyReport {
    trials: usize,
    bound: f64,
    min_ratio: f64,
    mean_ratio: f64,
    violations: Vec<TrialRecord>,
    elapsed_ms: u128,
}

fn random_matrix(rng: &mut ChaCha8Rng, skills: usize, instances: usize, style: usize) -> Vec<Vec<f64>> {
    (0..skills)
        .map(|_| {
            (0..instances)
                .map(|_| match style {
                    // Dense uniform probabilities.
                    0 => rng.gen::<f64>(),
                    // Sparse: mostly zero coverage.
                    1 => {
                        if rng.gen_bool(0.6) {
                            0.0
                        } else {
                            rng.gen::<f64>()
                        }
                    }
                    // Set-cover style 0/1 matrices.
                    _ => {
                        if rng.gen_bool(0.4) {
                            1.0
                        } else {
                            0.0
                        }
                    }
                })
                .collect()
        })
        .collect()
}

pub fn run_command(args: VerifyGreedyArgs) -> Result<()> {
    if args.skills < 2 || args.instances < 1 || args.k < 1 || args.trials < 1 {
        bail!("verify-greedy: need skills >= 2, instances >= 1, k >= 1, trials >= 1");
    }
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut ratios = Vec::with_capacity(args.trials);
    let mut violations = Vec::new();
    for trial in 0..args.trials {
        let skills = rng.gen_range(2..=args.skills);
        let instances = rng.gen_range(1..=args.instances);
        let k = rng.gen_range(1..=args.k.min(skills));
        let matrix = random_matrix(&mut rng, skills, instances, trial % 3);
        let pm = PopulationMatrix::new(matrix).expect("generated matrix is valid");
        let report = pm
            .check_guarantee(k, DEFAULT_ENUMERATION_CAP)
            .expect("trial sizes stay under the enumeration cap");
        ratios.push(report.ratio);
        if !report.holds {
            violations.push(TrialRecord {
                trial,
                skills,
                instances,
                k,
                greedy_value: report.greedy_value,
                opt_value: report.opt_value,
                ratio: report.ratio,
                holds: report.holds,
            });
        }
    }
    let min_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let mean_ratio = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let violation_count = violations.len();
    let report = GreedyReport {
        trials: args.trials,
        bound: greedy_bound(),
        min_ratio,
        mean_ratio,
        violations,
        elapsed_ms: started.elapsed().as_millis(),
    };
    match &args.out {
        Some(path) => {
            write_json(path, &report)?;
            if let Some(parent) = path.parent() {
                write_run_manifest(parent, "verify-greedy", Some(args.seed), &[])?;
            }
        }
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    println!(
        "verify-greedy: {} trials, min ratio {:.4} (bound {:.4}), {} violation(s), {} ms",
        report.trials, report.min_ratio, report.bound, violation_count, report.elapsed_ms
    );
    if violation_count > 0 {
        bail!("greedy guarantee violated on {violation_count} trial(s)");
    }
    Ok(())
}
