//! `optimize`: run batch-sequential residual skill optimization and persist
//! the run directory (config, pools, traces, outcome log).

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use divskill::agents::{
    Executor, HttpLlmClient, LlmAgentExecutor, LlmReflectionOptimizer, MutationOptimizer,
    SimExecutor, SnippetDirs,
};
use divskill::dataset::{load_manifest, GoldStore};
use divskill::residual::{run, EngineCtx, LexicalScreen, SkillOptimizer};

use crate::config::{load_config, CliConfig};

use super::{write_json, write_run_manifest};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExecutorKind {
    Sim,
    Llm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OptimizerKind {
    Mutate,
    Llm,
}

#[derive(Args, Debug)]
pub struct OptimizeArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Training manifest (JSONL).
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long, value_enum, default_value = "sim")]
    pub executor: ExecutorKind,
    #[arg(long, value_enum, default_value = "mutate")]
    pub optimizer: OptimizerKind,
    /// Run output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides [run].seed from the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON patches applied over the TOML config (repeatable).
    #[arg(long = "override")]
    pub overrides: Vec<String>,
}

fn snippet_dirs(config: &CliConfig) -> SnippetDirs {
    SnippetDirs {
        docs: config.paths.docs_dir.clone(),
        patterns: config.paths.patterns_dir.clone(),
        templates: config.paths.templates_dir.clone(),
    }
}

pub fn run_command(args: OptimizeArgs) -> Result<()> {
    let config = load_config(Some(&args.config), &args.overrides)?;
    config
        .budgets
        .validate()
        .map_err(|message| anyhow::anyhow!("config: {message}"))?;
    config
        .match_policy
        .validate()
        .map_err(|message| anyhow::anyhow!("config: {message}"))?;

    let train = load_manifest(&args.train).context("training manifest")?;
    let config_dir = args.config.parent().map(PathBuf::from);
    let pool = config.seed_pool(config_dir.as_deref())?;
    let run_config = config.run_config(pool.k(), args.seed)?;

    let llm_client = || -> Result<HttpLlmClient> {
        if config.llm.base_url.is_empty() {
            bail!("[llm].base_url is required for the llm executor/optimizer");
        }
        Ok(HttpLlmClient::new(
            config.llm.base_url.clone(),
            config.llm.model.clone(),
        ))
    };

    let executor: Box<dyn Executor> = match args.executor {
        ExecutorKind::Sim => Box::new(SimExecutor::new(config.executor.noise)),
        ExecutorKind::Llm => {
            let mut agent = LlmAgentExecutor::new(llm_client()?);
            agent.limits = config.executor.limits();
            agent.snippets = snippet_dirs(&config);
            Box::new(agent)
        }
    };
    let optimizer: Box<dyn SkillOptimizer> = match args.optimizer {
        OptimizerKind::Mutate => Box::new(MutationOptimizer),
        OptimizerKind::Llm => Box::new(LlmReflectionOptimizer::new(
            llm_client()?,
            config.llm.optimizer_model(),
        )),
    };

    fs::create_dir_all(&args.out)?;
    let gold = GoldStore::new(config.match_policy.clone(), config.executor.limits())
        .with_cache_dir(args.out.join("gold_cache"));
    let ctx = EngineCtx {
        executor: executor.as_ref(),
        optimizer: optimizer.as_ref(),
        gold: &gold,
        budgets: config.budgets.clone(),
        screen: LexicalScreen::new(config.screen.dialect_denylist.iter().cloned()),
    };

    let output = run(&pool, &train, &run_config, &ctx).context("optimizer engine")?;

    write_json(&args.out.join("config.json"), &config)?;
    fs::write(args.out.join("pool_initial.json"), pool.to_json())?;
    fs::write(args.out.join("pool_final.json"), output.pool.to_json())?;
    let traces_dir = args.out.join("traces");
    fs::create_dir_all(&traces_dir)?;
    for trace in &output.traces {
        write_json(&traces_dir.join(format!("batch_{}.json", trace.batch)), trace)?;
    }
    let mut outcomes = Vec::new();
    output.matrix.write_jsonl(&mut outcomes)?;
    fs::write(args.out.join("outcomes.jsonl"), outcomes)?;
    write_run_manifest(
        &args.out,
        "optimize",
        Some(run_config.seed),
        &[("config", args.config.as_path()), ("train", args.train.as_path())],
    )?;

    let accepted: usize = output
        .traces
        .iter()
        .flat_map(|t| &t.positions)
        .filter(|p| p.accepted)
        .count();
    println!(
        "optimize: {} batches over {} instances; {} accepted update(s); pool at {}",
        output.traces.len(),
        train.len(),
        accepted,
        args.out.join("pool_final.json").display()
    );
    Ok(())
}
