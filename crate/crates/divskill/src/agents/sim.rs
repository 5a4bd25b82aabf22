//! Deterministic synthetic executor and mutation optimizer.
//!
//! Skills carry capability tags (`cap:<name>`) embedded in their prompt
//! text; instances carry requirement tags (`req:<name>`) in their question.
//! A run succeeds iff the skill's capabilities cover the instance's
//! requirements, then fails independently with probability `noise`. The
//! synthetic path exercises the exact Skill/prompt plumbing the LLM path
//! uses.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::{Instance, Skill};
use crate::exec::ResultTable;
use crate::residual::{FailureExample, OptimizeError, SkillOptimizer};
use crate::trajectory::{
    extract_actions, LogEvent, TOOL_EXECUTE_SQL, TOOL_GET_SQL_PATTERN, TOOL_GET_SQL_TEMPLATES,
    TOOL_LOOKUP_DOCS, TOOL_REVIEW_SQL, TOOL_SUBMIT_FINAL_SQL,
};

use super::{Budgets, CandidateRun, Executor, ExecutorError, Termination};

/// Tags like `cap:join` or `req:window` inside free text. Tag names are
/// lowercase `[a-z0-9_-]` runs.
pub fn parse_tags(text: &str, prefix: &str) -> BTreeSet<String> {
    let marker = format!("{prefix}:");
    let mut tags = BTreeSet::new();
    for token in text.split_whitespace() {
        if let Some(rest) = token.strip_prefix(&marker) {
            let name: String = rest
                .chars()
                .take_while(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || *c == '_' || *c == '-')
                .collect();
            if !name.is_empty() {
                tags.insert(name);
            }
        }
    }
    tags
}

/// Capability view of a skill prompt.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSkill {
    pub capabilities: BTreeSet<String>,
    pub noise: f64,
}

impl SyntheticSkill {
    /// Fixed parser over the prompt text: `cap:` tags plus an optional
    /// `noise:<p>` token overriding the executor default.
    pub fn parse(prompt: &str, default_noise: f64) -> Self {
        let capabilities = parse_tags(prompt, "cap");
        let mut noise = default_noise;
        for token in prompt.split_whitespace() {
            if let Some(rest) = token.strip_prefix("noise:") {
                if let Ok(value) = rest.parse::<f64>() {
                    if (0.0..1.0).contains(&value) {
                        noise = value;
                    }
                }
            }
        }
        SyntheticSkill {
            capabilities,
            noise,
        }
    }
}

/// Requirement tags of an instance's question.
pub fn instance_requirements(instance: &Instance) -> BTreeSet<String> {
    parse_tags(&instance.question, "req")
}

/// The reference table a successful synthetic run must produce.
pub fn synthetic_gold(instance_id: &str) -> ResultTable {
    ResultTable::single_text("answer", &format!("ok:{instance_id}"))
}

fn fold_name(name: &str) -> u32 {
    // FNV-1a, truncated; only used to pick a stable per-capability pattern.
    let mut hash: u32 = 0x811c9dc5;
    for byte in name.as_bytes() {
        hash ^= u32::from(*byte);
        hash = hash.wrapping_mul(0x01000193);
    }
    hash
}

/// Three retrieval-ish tool calls chosen by the capability name, so distinct
/// capability sets induce distinct action sequences.
fn capability_pattern(name: &str) -> [&'static str; 3] {
    const CHOICES: [&str; 4] = [
        TOOL_LOOKUP_DOCS,
        TOOL_GET_SQL_PATTERN,
        TOOL_GET_SQL_TEMPLATES,
        TOOL_REVIEW_SQL,
    ];
    let mut hash = fold_name(name);
    let mut pattern = [CHOICES[0]; 3];
    for slot in &mut pattern {
        *slot = CHOICES[(hash & 3) as usize];
        hash >>= 2;
    }
    pattern
}

/// Deterministic synthetic agent.
#[derive(Clone, Debug, Default)]
pub struct SimExecutor {
    pub default_noise: f64,
}

impl SimExecutor {
    pub fn new(default_noise: f64) -> Self {
        SimExecutor { default_noise }
    }
}

impl Executor for SimExecutor {
    fn run(
        &self,
        skill: &Skill,
        instance: &Instance,
        _budgets: &Budgets,
        seed: u64,
    ) -> Result<CandidateRun, ExecutorError> {
        let synthetic = SyntheticSkill::parse(&skill.prompt, self.default_noise);
        let requirements = instance_requirements(instance);
        let unmet: Vec<&String> = requirements
            .iter()
            .filter(|r| !synthetic.capabilities.contains(*r))
            .collect();
        let covered = unmet.is_empty();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flaky = covered && synthetic.noise > 0.0 && rng.gen::<f64>() < synthetic.noise;
        let success = covered && !flaky;

        let marker = if success {
            format!("ok:{}", instance.instance_id)
        } else if covered {
            format!("flaky:{}", skill.skill_id)
        } else {
            format!(
                "miss:{}",
                unmet
                    .iter()
                    .map(|s| s.as_str())
                    .collect::<Vec<_>>()
                    .join("+")
            )
        };
        let sql = format!("SELECT '{marker}' AS answer");

        // Action sequence is a pure function of (capabilities, requirements).
        let mut log = vec![LogEvent::ToolCall {
            name: TOOL_EXECUTE_SQL.into(),
            argument: "PRAGMA table_list".into(),
            errored: false,
        }];
        for capability in &synthetic.capabilities {
            for tool in capability_pattern(capability) {
                log.push(LogEvent::ToolCall {
                    name: tool.into(),
                    argument: format!("capability {capability}"),
                    errored: false,
                });
            }
        }
        log.push(LogEvent::Draft { sql: sql.clone() });
        log.push(LogEvent::ToolCall {
            name: TOOL_EXECUTE_SQL.into(),
            argument: sql.clone(),
            errored: !covered,
        });
        if !covered {
            for requirement in &unmet {
                log.push(LogEvent::ToolCall {
                    name: TOOL_EXECUTE_SQL.into(),
                    argument: format!("SELECT /* retry {requirement} */ '{marker}' AS answer"),
                    errored: true,
                });
            }
        }
        log.push(LogEvent::ToolCall {
            name: TOOL_SUBMIT_FINAL_SQL.into(),
            argument: sql.clone(),
            errored: false,
        });

        let trajectory = extract_actions(
            &log,
            skill.skill_id.clone(),
            instance.instance_id.clone(),
        )
        .expect("synthetic log uses only known tools");

        Ok(CandidateRun {
            sql: Some(sql),
            log,
            trajectory,
            execution: Some(Ok(ResultTable::single_text("answer", &marker))),
            termination: Termination::Submitted,
        })
    }
}

/// Failure-driven capability mutation: append one `cap:<name>` token for the
/// capability most frequent among the failed instances' unmet requirements
/// (ties broken lexicographically). Never removes capabilities.
#[derive(Clone, Debug, Default)]
pub struct MutationOptimizer;

impl SkillOptimizer for MutationOptimizer {
    fn optimize(&self, prompt: &str, failures: &[FailureExample]) -> Result<String, OptimizeError> {
        if failures.is_empty() {
            return Err(OptimizeError::NoFailures);
        }
        let capabilities = SyntheticSkill::parse(prompt, 0.0).capabilities;
        let mut histogram: BTreeMap<String, usize> = BTreeMap::new();
        for failure in failures {
            for requirement in instance_requirements(&failure.instance) {
                if !capabilities.contains(&requirement) {
                    *histogram.entry(requirement).or_default() += 1;
                }
            }
        }
        // BTreeMap iterates name-ascending, so a strict `>` keeps the
        // lexicographically first name among count ties.
        let mut best: Option<(&String, usize)> = None;
        for (name, &count) in &histogram {
            if best.map(|(_, c)| count > c).unwrap_or(true) {
                best = Some((name, count));
            }
        }
        match best {
            Some((name, _)) => Ok(format!("{prompt} cap:{name}")),
            // Every failure was noise (no unmet requirements): nothing to
            // add, return the prompt unchanged and let the acceptance rule
            // reject it.
            None => Ok(prompt.to_owned()),
        }
    }
}
