//! Batch-sequential residual skill optimization.
//!
//! Each batch draws fresh training instances, walks the pool in a rotated
//! order, and for each skill: evaluates the current prompt on the running
//! residual, asks the optimizer for a refinement built from the failure
//! traces, evaluates the proposal on the same residual, applies the
//! acceptance rule (strict rate improvement, or equal rate with a strictly
//! shorter prompt), and shrinks the residual by whatever the skill now
//! solves. Accepted prompts are committed to the pool at batch end with a
//! version bump.
//!
//! Rates are compared in exact rational arithmetic so the equality branch of
//! the brevity tiebreak is well-defined.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use num_rational::Ratio;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agents::{Budgets, Executor, ExecutorError};
use crate::dataset::{GoldError, GoldStore};
use crate::domain::{
    Attempt, Dialect, Instance, InstanceId, OutcomeMatrix, Skill, SkillId, SkillPool,
    DEFAULT_MAX_PROMPT_LEN,
};
use crate::exec::schema_identifiers;
use crate::trajectory::Trajectory;

/// Exact success rate: successes over evaluations.
pub type Rate = Ratio<u64>;

fn rate_string(rate: &Rate) -> String {
    format!("{}/{}", rate.numer(), rate.denom())
}

/// Engine parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Pool size K; fixed for a run.
    pub k: usize,
    /// Number of batches T.
    pub batches: usize,
    /// Batch size b, drawn without replacement within a batch.
    pub batch_size: usize,
    /// Evaluation attempts per (skill, instance).
    #[serde(default = "default_n_eval")]
    pub n_eval: usize,
    #[serde(default = "default_max_prompt_len")]
    pub max_prompt_len: usize,
    pub seed: u64,
    /// Overrides the rotation stride max(1, ceil(K/T)).
    #[serde(default)]
    pub rotation_stride: Option<usize>,
}

fn default_n_eval() -> usize {
    1
}

fn default_max_prompt_len() -> usize {
    DEFAULT_MAX_PROMPT_LEN
}

impl RunConfig {
    pub fn validate(&self, pool: &SkillPool, train_len: usize) -> Result<(), EngineError> {
        if self.k == 0 || self.batch_size == 0 || self.n_eval == 0 || self.max_prompt_len == 0 {
            return Err(EngineError::Config(
                "k, batch_size, n_eval, and max_prompt_len must be positive".into(),
            ));
        }
        if pool.k() != self.k {
            return Err(EngineError::Config(format!(
                "pool has {} skills but config.k = {}",
                pool.k(),
                self.k
            )));
        }
        if self.batch_size > train_len {
            return Err(EngineError::Config(format!(
                "batch_size {} exceeds the {} training instances",
                self.batch_size, train_len
            )));
        }
        Ok(())
    }

}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error("executor failed at batch {batch}, position {position}: {source}")]
    Executor {
        batch: usize,
        position: usize,
        source: ExecutorError,
    },
    #[error("optimizer failed at batch {batch}, position {position}: {source}")]
    Optimizer {
        batch: usize,
        position: usize,
        source: OptimizeError,
    },
    #[error("gold resolution failed: {0}")]
    Gold(#[from] GoldError),
    #[error(transparent)]
    Domain(#[from] crate::domain::DomainError),
}

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("no failures to optimize on")]
    NoFailures,
    #[error("optimizer backend: {0}")]
    Backend(String),
}

/// One failed instance handed to the optimizer: the task, the agent's
/// trajectory, and a short error summary.
#[derive(Clone, Debug)]
pub struct FailureExample {
    pub instance: Instance,
    pub trajectory: Trajectory,
    pub error_summary: String,
}

/// Inner-loop optimizer contract: propose a refined prompt from failures on
/// the residual. Proposals must stay instance- and dialect-agnostic; the
/// engine enforces that with a lexical screen over batch schema identifiers
/// and a dialect-keyword denylist.
pub trait SkillOptimizer {
    fn optimize(&self, prompt: &str, failures: &[FailureExample]) -> Result<String, OptimizeError>;
}

/// Rotation of the pool order for batch `t` (1-based): offset
/// `((t-1) * stride) mod K`, stride defaulting to `max(1, ceil(K/T))` so
/// first-position coverage spreads when T < K. Returns 0-based skill
/// indices; the cyclic order among skills is preserved.
pub fn rotation_ordering(
    k: usize,
    t: usize,
    total_batches: usize,
    stride_override: Option<usize>,
) -> Vec<usize> {
    let stride = stride_override
        .unwrap_or_else(|| if total_batches == 0 { 1 } else { k.div_ceil(total_batches) })
        .max(1);
    let offset = (t.saturating_sub(1) * stride) % k.max(1);
    (0..k).map(|j| (j + offset) % k).collect()
}

/// Outcome of the acceptance rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcceptDecision {
    StrictImprovement,
    BrevityTiebreak,
    RejectedLowerRate,
    RejectedNotShorter,
}

impl AcceptDecision {
    pub fn accepted(self) -> bool {
        matches!(
            self,
            AcceptDecision::StrictImprovement | AcceptDecision::BrevityTiebreak
        )
    }
}

/// Accept iff the new rate strictly improves, or ties with a strictly
/// shorter prompt (lengths in characters).
pub fn accept_update(
    old_prompt: &str,
    new_prompt: &str,
    old_rate: Rate,
    new_rate: Rate,
) -> AcceptDecision {
    debug_assert!(!old_prompt.is_empty() && !new_prompt.is_empty());
    if new_rate > old_rate {
        AcceptDecision::StrictImprovement
    } else if new_rate < old_rate {
        AcceptDecision::RejectedLowerRate
    } else if new_prompt.chars().count() < old_prompt.chars().count() {
        AcceptDecision::BrevityTiebreak
    } else {
        AcceptDecision::RejectedNotShorter
    }
}

/// Mechanical enforcement of the instance/dialect-agnostic constraint on
/// proposals: rejected if any token matches a schema identifier of the
/// current batch's databases or a configured dialect keyword.
#[derive(Clone, Debug, Default)]
pub struct LexicalScreen {
    /// Lowercased dialect-specific keywords to keep out of prompts.
    pub dialect_denylist: BTreeSet<String>,
}

fn lexical_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_ascii_alphanumeric() && c != '_')
        .filter(|token| !token.is_empty())
        .map(str::to_lowercase)
}

impl LexicalScreen {
    pub fn new(denylist: impl IntoIterator<Item = String>) -> Self {
        LexicalScreen {
            dialect_denylist: denylist.into_iter().map(|s| s.to_lowercase()).collect(),
        }
    }

    /// `Err(offending token)` when the proposal names batch schema or a
    /// denied dialect keyword.
    pub fn check(
        &self,
        proposal: &str,
        batch_identifiers: &BTreeSet<String>,
    ) -> Result<(), String> {
        for token in lexical_tokens(proposal) {
            if batch_identifiers.contains(&token) {
                return Err(format!("schema identifier '{token}'"));
            }
            if self.dialect_denylist.contains(&token) {
                return Err(format!("dialect keyword '{token}'"));
            }
        }
        Ok(())
    }
}

/// Trace of one position of the inner loop.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PositionTrace {
    /// 1-based position j within the batch.
    pub position: usize,
    pub skill_id: SkillId,
    pub residual_before: Vec<InstanceId>,
    /// Residual was already empty: no evaluation, no optimizer call.
    pub skipped: bool,
    /// Current prompt solved every residual instance, so there were no
    /// failures to optimize on.
    pub no_failures: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub old_rate: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proposed_prompt: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub screen_violation: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub new_rate: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decision: Option<AcceptDecision>,
    pub accepted: bool,
    pub residual_after: Vec<InstanceId>,
}

/// Trace of one batch: the ordering and every position.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BatchTrace {
    pub batch: usize,
    pub ordering: Vec<SkillId>,
    pub positions: Vec<PositionTrace>,
}

/// Collaborators of a run.
pub struct EngineCtx<'a> {
    pub executor: &'a dyn Executor,
    pub optimizer: &'a dyn SkillOptimizer,
    pub gold: &'a GoldStore,
    pub budgets: Budgets,
    pub screen: LexicalScreen,
}

/// Deterministic seed derivation: every evaluation attempt gets its own
/// stream, so results do not depend on evaluation schedule.
pub(crate) fn derive_seed(parts: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(b"divskill-seed");
    for part in parts {
        hasher.update([0x1f]);
        hasher.update(part);
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 yields 32 bytes"))
}

struct InstanceEval {
    instance_id: InstanceId,
    any_success: bool,
    attempts: Vec<Attempt>,
    failure: Option<FailureExample>,
}

struct EvalOutcome {
    rows: Vec<InstanceEval>,
    successes_total: u64,
}

impl EvalOutcome {
    fn rate(&self, n_eval: usize, residual_len: usize) -> Rate {
        Rate::new(self.successes_total, (n_eval * residual_len) as u64)
    }

    fn failures(&self) -> Vec<FailureExample> {
        self.rows
            .iter()
            .filter_map(|row| row.failure.clone())
            .collect()
    }

    fn solved_ids(&self) -> BTreeSet<InstanceId> {
        self.rows
            .iter()
            .filter(|row| row.any_success)
            .map(|row| row.instance_id.clone())
            .collect()
    }
}

fn candidate_ref(sql: &Option<String>) -> Option<String> {
    sql.as_ref().map(|text| {
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        let digest = hasher.finalize();
        digest[..6].iter().map(|b| format!("{b:02x}")).collect()
    })
}

#[allow(clippy::too_many_arguments)]
fn evaluate_prompt(
    skill: &Skill,
    prompt: &str,
    residual: &BTreeSet<InstanceId>,
    instances: &BTreeMap<InstanceId, &Instance>,
    config: &RunConfig,
    ctx: &EngineCtx,
    batch: usize,
    position: usize,
    phase: &str,
) -> Result<EvalOutcome, EngineError> {
    let candidate_skill = Skill {
        prompt: prompt.to_owned(),
        ..skill.clone()
    };
    let mut rows = Vec::with_capacity(residual.len());
    let mut successes_total = 0u64;
    for instance_id in residual {
        let instance = instances
            .get(instance_id)
            .expect("residual ids come from the batch");
        let mut attempts = Vec::with_capacity(config.n_eval);
        let mut any_success = false;
        let mut last_failure: Option<FailureExample> = None;
        for attempt_idx in 0..config.n_eval {
            let seed = derive_seed(&[
                &config.seed.to_le_bytes(),
                b"eval",
                &batch.to_le_bytes(),
                &position.to_le_bytes(),
                phase.as_bytes(),
                skill.skill_id.as_str().as_bytes(),
                instance_id.as_str().as_bytes(),
                &attempt_idx.to_le_bytes(),
            ]);
            let run = ctx
                .executor
                .run(&candidate_skill, instance, &ctx.budgets, seed)
                .map_err(|source| EngineError::Executor {
                    batch,
                    position,
                    source,
                })?;
            let success = match &run.execution {
                Some(outcome) => ctx.gold.verdict(instance, outcome)?,
                None => false,
            };
            if success {
                any_success = true;
                successes_total += 1;
                last_failure = None;
            } else {
                last_failure = Some(FailureExample {
                    instance: (*instance).clone(),
                    trajectory: run.trajectory.clone(),
                    error_summary: run.failure_summary(),
                });
            }
            attempts.push(Attempt {
                success,
                candidate_ref: candidate_ref(&run.sql),
                batch: Some(batch),
                position: Some(position),
            });
        }
        rows.push(InstanceEval {
            instance_id: instance_id.clone(),
            any_success,
            attempts,
            failure: if any_success { None } else { last_failure },
        });
    }
    Ok(EvalOutcome {
        rows,
        successes_total,
    })
}

fn record_eval(
    matrix: &mut OutcomeMatrix,
    skill: &SkillId,
    outcome: &EvalOutcome,
) -> Result<(), EngineError> {
    for row in &outcome.rows {
        for attempt in &row.attempts {
            matrix.record(skill, &row.instance_id, attempt.clone())?;
        }
    }
    Ok(())
}

/// Union of schema identifiers across the batch's SQLite databases.
/// Synthetic instances contribute nothing.
fn batch_identifiers(batch: &[Instance]) -> BTreeSet<String> {
    let mut identifiers = BTreeSet::new();
    let mut seen_dbs = BTreeSet::new();
    for instance in batch {
        if instance.dialect != Dialect::Sqlite || instance.db.is_empty() {
            continue;
        }
        if !seen_dbs.insert(instance.db.clone()) {
            continue;
        }
        match schema_identifiers(Path::new(&instance.db)) {
            Ok(names) => identifiers.extend(names),
            Err(error) => log::warn!("cannot read schema of {}: {error}", instance.db),
        }
    }
    identifiers
}

/// One pass of the inner loop over a sampled batch. Returns the updated pool
/// (accepted prompts committed with version bumps) and the batch trace;
/// outcome records are appended to `matrix`.
pub fn run_batch(
    pool: &SkillPool,
    batch: &[Instance],
    t: usize,
    config: &RunConfig,
    ctx: &EngineCtx,
    matrix: &mut OutcomeMatrix,
) -> Result<(SkillPool, BatchTrace), EngineError> {
    let ordering = rotation_ordering(pool.k(), t, config.batches, config.rotation_stride);
    let instances: BTreeMap<InstanceId, &Instance> = batch
        .iter()
        .map(|instance| (instance.instance_id.clone(), instance))
        .collect();
    let forbidden = batch_identifiers(batch);

    let mut working = pool.clone();
    let mut accepted_at: Vec<Option<String>> = vec![None; pool.k()];
    let mut residual: BTreeSet<InstanceId> = instances.keys().cloned().collect();
    let mut positions = Vec::with_capacity(pool.k());

    for (j, &skill_idx) in ordering.iter().enumerate() {
        let position = j + 1;
        let skill = working.skills()[skill_idx].clone();
        let residual_before: Vec<InstanceId> = residual.iter().cloned().collect();

        if residual.is_empty() {
            positions.push(PositionTrace {
                position,
                skill_id: skill.skill_id.clone(),
                residual_before,
                skipped: true,
                no_failures: false,
                old_rate: None,
                proposed_prompt: None,
                screen_violation: None,
                new_rate: None,
                decision: None,
                accepted: false,
                residual_after: Vec::new(),
            });
            continue;
        }

        let current = evaluate_prompt(
            &skill,
            &skill.prompt,
            &residual,
            &instances,
            config,
            ctx,
            t,
            position,
            "current",
        )?;
        record_eval(matrix, &skill.skill_id, &current)?;
        let old_rate = current.rate(config.n_eval, residual.len());
        let failures = current.failures();

        let mut trace = PositionTrace {
            position,
            skill_id: skill.skill_id.clone(),
            residual_before,
            skipped: false,
            no_failures: false,
            old_rate: Some(rate_string(&old_rate)),
            proposed_prompt: None,
            screen_violation: None,
            new_rate: None,
            decision: None,
            accepted: false,
            residual_after: Vec::new(),
        };

        if failures.is_empty() {
            // Clean sweep of the residual: nothing to reflect on, and no
            // proposal can beat a rate of 1 (a shorter equal-rate prompt
            // without failure signal is churn, not optimization).
            trace.no_failures = true;
            residual.clear();
            positions.push(trace);
            continue;
        }

        let proposal = ctx
            .optimizer
            .optimize(&skill.prompt, &failures)
            .map_err(|source| EngineError::Optimizer {
                batch: t,
                position,
                source,
            })?;
        trace.proposed_prompt = Some(proposal.clone());

        let screen_verdict = if proposal.is_empty() {
            Err("empty proposal".to_owned())
        } else if proposal.chars().count() > config.max_prompt_len {
            Err(format!(
                "proposal exceeds max_prompt_len {}",
                config.max_prompt_len
            ))
        } else {
            ctx.screen.check(&proposal, &forbidden)
        };

        let solved = match screen_verdict {
            Err(reason) => {
                // Proposal rejected, seed kept, batch continues.
                trace.screen_violation = Some(reason);
                current.solved_ids()
            }
            Ok(()) => {
                let candidate = evaluate_prompt(
                    &skill,
                    &proposal,
                    &residual,
                    &instances,
                    config,
                    ctx,
                    t,
                    position,
                    "proposal",
                )?;
                let new_rate = candidate.rate(config.n_eval, residual.len());
                let decision = accept_update(&skill.prompt, &proposal, old_rate, new_rate);
                trace.new_rate = Some(rate_string(&new_rate));
                trace.decision = Some(decision);
                if decision.accepted() {
                    trace.accepted = true;
                    record_eval(matrix, &skill.skill_id, &candidate)?;
                    accepted_at[skill_idx] = Some(proposal.clone());
                    let mut updated = skill.clone();
                    updated.prompt = proposal;
                    working.replace_at(skill_idx, updated);
                    candidate.solved_ids()
                } else {
                    current.solved_ids()
                }
            }
        };

        residual.retain(|id| !solved.contains(id));
        trace.residual_after = residual.iter().cloned().collect();
        debug_assert!(trace
            .residual_after
            .iter()
            .all(|id| trace.residual_before.contains(id)));
        positions.push(trace);
    }

    // Commit accepted prompts: version increments, parent recorded.
    let mut committed = pool.clone();
    for (skill_idx, accepted) in accepted_at.into_iter().enumerate() {
        if let Some(prompt) = accepted {
            let updated = pool.skills()[skill_idx].committed_update(prompt);
            committed.replace_at(skill_idx, updated);
        }
    }

    Ok((
        committed,
        BatchTrace {
            batch: t,
            ordering: ordering
                .iter()
                .map(|&idx| pool.skills()[idx].skill_id.clone())
                .collect(),
            positions,
        },
    ))
}

/// Full run output: final pool, per-batch traces, and the outcome log.
pub struct RunOutput {
    pub pool: SkillPool,
    pub traces: Vec<BatchTrace>,
    pub matrix: OutcomeMatrix,
}

/// Execute T batches. Batches are sampled uniformly without replacement
/// within a batch and independently across batches from `config.seed`, so
/// runs replay deterministically.
pub fn run(
    pool0: &SkillPool,
    train: &[Instance],
    config: &RunConfig,
    ctx: &EngineCtx,
) -> Result<RunOutput, EngineError> {
    config.validate(pool0, train.len())?;
    for skill in pool0.skills() {
        skill.validate(config.max_prompt_len)?;
    }
    let mut matrix = OutcomeMatrix::new(
        pool0.ids(),
        train.iter().map(|i| i.instance_id.clone()),
    );
    let mut pool = pool0.clone();
    let mut traces = Vec::with_capacity(config.batches);
    for t in 1..=config.batches {
        let batch = sample_batch(train, config, t);
        let (next_pool, trace) = run_batch(&pool, &batch, t, config, ctx, &mut matrix)?;
        pool = next_pool;
        traces.push(trace);
    }
    Ok(RunOutput {
        pool,
        traces,
        matrix,
    })
}

fn sample_batch(train: &[Instance], config: &RunConfig, t: usize) -> Vec<Instance> {
    let seed = derive_seed(&[&config.seed.to_le_bytes(), b"batch", &t.to_le_bytes()]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, train.len(), config.batch_size);
    let mut batch: Vec<Instance> = picked.iter().map(|i| train[i].clone()).collect();
    batch.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
    batch
}
