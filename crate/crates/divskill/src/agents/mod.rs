//! Pluggable executors that run a skill on an instance and return a SQL
//! candidate plus a trajectory: a deterministic synthetic family for tests,
//! and an LLM-backed tool-loop agent.

mod llm;
mod sim;
mod tool_loop;

pub use llm::{
    ChatMessage, ChatRequest, ChatResponse, HttpLlmClient, LlmClient, LlmJudge,
    LlmReflectionOptimizer, ScriptedClient, ToolCallRequest, ToolSchema, TransportError,
    LLM_KEY_ENV,
};
pub use sim::{
    instance_requirements, parse_tags, synthetic_gold, MutationOptimizer, SimExecutor,
    SyntheticSkill,
};
pub use tool_loop::{agent_loop, review_sql, tool_schemas, LlmAgentExecutor, SnippetDirs, ToolEnv};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Instance, Skill};
use crate::exec::{ExecError, ResultTable};
use crate::trajectory::{LogEvent, Trajectory};

/// Per-run resource caps.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budgets {
    pub max_turns: usize,
    pub max_sql_execs: usize,
    pub max_completion_tokens: usize,
    pub temperature: f64,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets {
            max_turns: 12,
            max_sql_execs: 20,
            max_completion_tokens: 64_000,
            temperature: 0.2,
        }
    }
}

impl Budgets {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_turns == 0 || self.max_sql_execs == 0 || self.max_completion_tokens == 0 {
            return Err("budgets must be positive".into());
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err("temperature must be in [0, 2]".into());
        }
        Ok(())
    }
}

/// How a run ended.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Submitted,
    TurnsExhausted,
    SqlBudgetExhausted,
    Aborted(String),
}

/// Result of running one skill on one instance: a candidate (possibly
/// absent), the raw tool-call log, and the extracted trajectory.
/// A trajectory is always present, even on failure.
#[derive(Clone, Debug)]
pub struct CandidateRun {
    pub sql: Option<String>,
    pub log: Vec<LogEvent>,
    pub trajectory: Trajectory,
    /// `None` when no candidate was ever executed.
    pub execution: Option<Result<ResultTable, ExecError>>,
    pub termination: Termination,
}

impl CandidateRun {
    /// Short summary of why this run failed, for optimizer reflections.
    pub fn failure_summary(&self) -> String {
        match (&self.execution, &self.termination) {
            (Some(Err(e)), _) => format!("{}: {e}", e.category()),
            (Some(Ok(table)), _) => format!(
                "result mismatch: got {} row(s) x {} column(s)",
                table.row_count(),
                table.column_count()
            ),
            (None, Termination::Aborted(reason)) => format!("aborted: {reason}"),
            (None, term) => format!("no candidate produced ({term:?})"),
        }
    }
}

#[derive(Debug, Error)]
pub enum ExecutorError {
    #[error("transport failed after retries: {0}")]
    Transport(String),
    #[error("executor misconfigured: {0}")]
    Misconfigured(String),
}

/// An agent equipped with a skill. Implementations must return a trajectory
/// on every run, including failed ones. `seed` makes stochastic executors
/// replayable; deterministic ones may ignore it.
pub trait Executor: Sync {
    fn run(
        &self,
        skill: &Skill,
        instance: &Instance,
        budgets: &Budgets,
        seed: u64,
    ) -> Result<CandidateRun, ExecutorError>;
}
