//! `infer`: run every skill on every instance, deduplicate candidates by
//! execution output, and pick one SQL per instance with the pairwise
//! tournament. Emits selections, per-candidate verdicts, and trajectories.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use divskill::agents::{Executor, HttpLlmClient, LlmAgentExecutor, LlmJudge, SimExecutor, SnippetDirs};
use divskill::dataset::{load_manifest, GoldStore};
use divskill::domain::{Instance, InstanceId, SkillId, SkillPool};
use divskill::exec::{schema_overview, ExecError};
use divskill::selection::{
    select, CandidateExecution, Judge, JudgeContext, OracleJudge, SelectionOutcome,
};
use divskill::trajectory::Trajectory;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::load_config;

use super::optimize::ExecutorKind;
use super::write_run_manifest;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum JudgeKind {
    Oracle,
    Llm,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    /// Pool document, or a run directory containing pool_final.json.
    #[arg(long)]
    pub pool: PathBuf,
    /// Evaluation manifest (JSONL).
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value = "oracle")]
    pub judge: JudgeKind,
    #[arg(long, value_enum, default_value = "sim")]
    pub executor: ExecutorKind,
    /// Output directory for selections.jsonl, candidates.jsonl,
    /// trajectories.jsonl.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional TOML config (budgets, match policy, llm endpoints).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON patches applied over the TOML config (repeatable).
    #[arg(long = "override")]
    pub overrides: Vec<String>,
}

/// selections.jsonl row.
#[derive(Serialize, Deserialize)]
pub struct SelectionRow {
    pub instance_id: InstanceId,
    pub winner_skill_id: SkillId,
    pub sql: String,
    #[serde(rename = "G")]
    pub g: usize,
    pub win_counts: BTreeMap<SkillId, u32>,
    pub all_candidates_errored: bool,
}

/// candidates.jsonl row, one per (instance, skill), in pool order.
#[derive(Serialize, Deserialize)]
pub struct CandidateRow {
    pub instance_id: InstanceId,
    pub skill_id: SkillId,
    pub sql: String,
    pub success: bool,
    pub errored: bool,
}

/// trajectories.jsonl row.
#[derive(Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub instance_id: InstanceId,
    pub skill_id: SkillId,
    pub actions: Vec<divskill::trajectory::ActionSymbol>,
}

pub fn resolve_pool_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("pool_final.json")
    } else {
        path.to_path_buf()
    }
}

struct InstanceRun {
    candidates: Vec<CandidateExecution>,
    verdicts: Vec<bool>,
    trajectories: Vec<Trajectory>,
}

fn run_instance(
    pool: &SkillPool,
    instance: &Instance,
    executor: &dyn Executor,
    gold: &GoldStore,
    budgets: &divskill::agents::Budgets,
    seed: u64,
) -> Result<InstanceRun> {
    let mut candidates = Vec::with_capacity(pool.k());
    let mut verdicts = Vec::with_capacity(pool.k());
    let mut trajectories = Vec::with_capacity(pool.k());
    for skill in pool.skills() {
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update(skill.skill_id.as_str().as_bytes());
        hasher.update(instance.instance_id.as_str().as_bytes());
        let digest = hasher.finalize();
        let run_seed = u64::from_le_bytes(digest[..8].try_into().unwrap());
        let run = executor
            .run(skill, instance, budgets, run_seed)
            .with_context(|| format!("executor on {}", instance.instance_id))?;
        let outcome = match run.execution {
            Some(result) => result,
            None => Err(ExecError::Db(format!(
                "no candidate produced ({:?})",
                run.termination
            ))),
        };
        let verdict = gold
            .verdict(instance, &outcome)
            .context("gold verdict")?;
        verdicts.push(verdict);
        trajectories.push(run.trajectory);
        candidates.push(CandidateExecution {
            skill_id: skill.skill_id.clone(),
            sql: run.sql.unwrap_or_default(),
            outcome,
        });
    }
    Ok(InstanceRun {
        candidates,
        verdicts,
        trajectories,
    })
}

pub fn run_command(args: InferArgs, jobs: usize) -> Result<()> {
    let config = load_config(args.config.as_deref(), &args.overrides)?;
    let pool_path = resolve_pool_path(&args.pool);
    let pool_text = fs::read_to_string(&pool_path)
        .with_context(|| format!("pool: cannot read {}", pool_path.display()))?;
    let pool = SkillPool::from_json(&pool_text).context("pool document")?;
    let instances = load_manifest(&args.dataset).context("dataset manifest")?;
    fs::create_dir_all(&args.out)?;
    let gold = GoldStore::new(config.match_policy.clone(), config.executor.limits())
        .with_cache_dir(args.out.join("gold_cache"));

    let executor: Box<dyn Executor> = match args.executor {
        ExecutorKind::Sim => Box::new(SimExecutor::new(config.executor.noise)),
        ExecutorKind::Llm => {
            if config.llm.base_url.is_empty() {
                bail!("[llm].base_url is required for the llm executor");
            }
            let mut agent = LlmAgentExecutor::new(HttpLlmClient::new(
                config.llm.base_url.clone(),
                config.llm.model.clone(),
            ));
            agent.limits = config.executor.limits();
            agent.snippets = SnippetDirs {
                docs: config.paths.docs_dir.clone(),
                patterns: config.paths.patterns_dir.clone(),
                templates: config.paths.templates_dir.clone(),
            };
            Box::new(agent)
        }
    };

    // Candidate generation is the expensive half; spread instances across
    // worker threads, then judge sequentially in instance order.
    let jobs = jobs.max(1).min(instances.len().max(1));
    let mut runs: BTreeMap<InstanceId, InstanceRun> = BTreeMap::new();
    let results: Vec<Result<Vec<(InstanceId, InstanceRun)>>> = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for chunk in instances.chunks(instances.len().div_ceil(jobs)) {
            let executor = executor.as_ref();
            let pool = &pool;
            let gold = &gold;
            let budgets = &config.budgets;
            let seed = args.seed;
            handles.push(scope.spawn(move || {
                let mut out = Vec::with_capacity(chunk.len());
                for instance in chunk {
                    let run = run_instance(pool, instance, executor, gold, budgets, seed)?;
                    out.push((instance.instance_id.clone(), run));
                }
                Ok(out)
            }));
        }
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    for result in results {
        for (id, run) in result? {
            runs.insert(id, run);
        }
    }

    let llm_judge: Option<LlmJudge<HttpLlmClient>> = match args.judge {
        JudgeKind::Llm => {
            if config.llm.base_url.is_empty() {
                bail!("[llm].base_url is required for the llm judge");
            }
            Some(LlmJudge::new(
                HttpLlmClient::new(config.llm.base_url.clone(), config.llm.judge_model()),
                config.llm.judge_model(),
            ))
        }
        JudgeKind::Oracle => None,
    };

    let mut selections_file = fs::File::create(args.out.join("selections.jsonl"))?;
    let mut candidates_file = fs::File::create(args.out.join("candidates.jsonl"))?;
    let mut trajectories_file = fs::File::create(args.out.join("trajectories.jsonl"))?;
    let mut selected_correct = 0usize;
    let mut g_total = 0usize;

    for instance in &instances {
        let run = runs
            .remove(&instance.instance_id)
            .expect("every instance was executed");
        let schema = if instance.db.is_empty() {
            String::new()
        } else {
            schema_overview(Path::new(&instance.db)).unwrap_or_default()
        };
        let context = JudgeContext {
            question: &instance.question,
            schema_summary: &schema,
        };
        let outcome: SelectionOutcome = match &llm_judge {
            Some(judge) => select(
                instance.instance_id.clone(),
                run.candidates.clone(),
                judge,
                &context,
                gold.policy(),
            )?,
            None => {
                let oracle = OracleJudge {
                    gold: gold.gold_fingerprint(instance).context("gold fingerprint")?,
                };
                let judge: &dyn Judge = &oracle;
                select(
                    instance.instance_id.clone(),
                    run.candidates.clone(),
                    judge,
                    &context,
                    gold.policy(),
                )?
            }
        };
        g_total += outcome.g;

        let winner_index = pool
            .skills()
            .iter()
            .position(|s| s.skill_id == outcome.winner_skill_id)
            .expect("winner comes from the pool");
        if run.verdicts[winner_index] {
            selected_correct += 1;
        }
        let row = SelectionRow {
            instance_id: outcome.instance_id.clone(),
            winner_skill_id: outcome.winner_skill_id.clone(),
            sql: outcome.sql.clone(),
            g: outcome.g,
            win_counts: outcome.win_counts.clone(),
            all_candidates_errored: outcome.all_candidates_errored,
        };
        writeln!(selections_file, "{}", serde_json::to_string(&row)?)?;

        for (idx, skill) in pool.skills().iter().enumerate() {
            let candidate = &run.candidates[idx];
            writeln!(
                candidates_file,
                "{}",
                serde_json::to_string(&CandidateRow {
                    instance_id: instance.instance_id.clone(),
                    skill_id: skill.skill_id.clone(),
                    sql: candidate.sql.clone(),
                    success: run.verdicts[idx],
                    errored: candidate.outcome.is_err(),
                })?
            )?;
            writeln!(
                trajectories_file,
                "{}",
                serde_json::to_string(&TrajectoryRow {
                    instance_id: instance.instance_id.clone(),
                    skill_id: skill.skill_id.clone(),
                    actions: run.trajectories[idx].actions.clone(),
                })?
            )?;
        }
    }

    write_run_manifest(
        &args.out,
        "infer",
        Some(args.seed),
        &[("pool", pool_path.as_path()), ("dataset", args.dataset.as_path())],
    )?;
    println!(
        "infer: {} instances, mean G = {:.2}, selected-correct = {}/{}; wrote {}",
        instances.len(),
        g_total as f64 / instances.len().max(1) as f64,
        selected_correct,
        instances.len(),
        args.out.join("selections.jsonl").display()
    );
    Ok(())
}
