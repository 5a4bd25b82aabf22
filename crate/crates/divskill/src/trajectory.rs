//! Behavioral-diversity diagnostics: action extraction from tool-call logs,
//! normalized edit-distance similarity, and pairwise similarity matrices.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{InstanceId, SkillId};

/// Closed alphabet of high-level agent actions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSymbol {
    InspectSchema,
    SampleRows,
    DraftSql,
    Execute,
    Repair,
    LookupDocs,
    GetPattern,
    GetTemplate,
    Review,
    Submit,
}

pub const ACTION_ALPHABET: [ActionSymbol; 10] = [
    ActionSymbol::InspectSchema,
    ActionSymbol::SampleRows,
    ActionSymbol::DraftSql,
    ActionSymbol::Execute,
    ActionSymbol::Repair,
    ActionSymbol::LookupDocs,
    ActionSymbol::GetPattern,
    ActionSymbol::GetTemplate,
    ActionSymbol::Review,
    ActionSymbol::Submit,
];

impl fmt::Display for ActionSymbol {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        let name = match self {
            ActionSymbol::InspectSchema => "inspect_schema",
            ActionSymbol::SampleRows => "sample_rows",
            ActionSymbol::DraftSql => "draft_sql",
            ActionSymbol::Execute => "execute",
            ActionSymbol::Repair => "repair",
            ActionSymbol::LookupDocs => "lookup_docs",
            ActionSymbol::GetPattern => "get_pattern",
            ActionSymbol::GetTemplate => "get_template",
            ActionSymbol::Review => "review",
            ActionSymbol::Submit => "submit",
        };
        f.write_str(name)
    }
}

/// Fixed tool names of the agent environment.
pub const TOOL_EXECUTE_SQL: &str = "execute_sql";
pub const TOOL_LOOKUP_DOCS: &str = "lookup_docs";
pub const TOOL_REVIEW_SQL: &str = "review_sql";
pub const TOOL_GET_SQL_PATTERN: &str = "get_sql_pattern";
pub const TOOL_GET_SQL_TEMPLATES: &str = "get_sql_templates";
pub const TOOL_SUBMIT_FINAL_SQL: &str = "submit_final_sql";

pub fn tool_names() -> [&'static str; 6] {
    [
        TOOL_EXECUTE_SQL,
        TOOL_LOOKUP_DOCS,
        TOOL_REVIEW_SQL,
        TOOL_GET_SQL_PATTERN,
        TOOL_GET_SQL_TEMPLATES,
        TOOL_SUBMIT_FINAL_SQL,
    ]
}

/// One event of a raw agent run log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogEvent {
    ToolCall {
        name: String,
        argument: String,
        errored: bool,
    },
    Draft {
        sql: String,
    },
}

/// Ordered high-level action symbols from one agent run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub skill_id: SkillId,
    pub instance_id: InstanceId,
    pub actions: Vec<ActionSymbol>,
}

#[derive(Debug, Error, PartialEq)]
pub enum TrajectoryError {
    #[error("unknown tool '{0}' in run log")]
    UnknownTool(String),
    #[error("need at least 2 trajectories per instance, found {0}")]
    TooFew(usize),
}

fn is_metadata_query(sql_lower: &str) -> bool {
    sql_lower.trim_start().starts_with("pragma")
        || sql_lower.contains("sqlite_master")
        || sql_lower.contains("information_schema")
}

/// LIMIT-probe heuristic: a small-limit select with no aggregation reads as
/// row sampling.
fn is_limit_probe(sql_lower: &str) -> bool {
    let Some(pos) = sql_lower.find("limit") else {
        return false;
    };
    let after = &sql_lower[pos + "limit".len()..];
    let number: String = after
        .trim_start()
        .chars()
        .take_while(|c| c.is_ascii_digit())
        .collect();
    let Ok(value) = number.parse::<u64>() else {
        return false;
    };
    if value > 20 {
        return false;
    }
    !["count(", "sum(", "avg(", "min(", "max(", "group by"]
        .iter()
        .any(|agg| sql_lower.contains(agg))
}

/// Deterministic mapping from a raw tool-call log to the action alphabet.
///
/// `execute_sql` calls map by precedence: metadata queries read as schema
/// inspection, small LIMIT probes as row sampling, calls issued after a
/// failed execution as repair, anything else as plain execution.
pub fn extract_actions(
    log: &[LogEvent],
    skill_id: SkillId,
    instance_id: InstanceId,
) -> Result<Trajectory, TrajectoryError> {
    let mut actions = Vec::with_capacity(log.len());
    let mut last_exec_errored = false;
    for event in log {
        match event {
            LogEvent::Draft { .. } => actions.push(ActionSymbol::DraftSql),
            LogEvent::ToolCall {
                name,
                argument,
                errored,
            } => {
                let symbol = match name.as_str() {
                    TOOL_EXECUTE_SQL => {
                        let lower = argument.to_lowercase();
                        let symbol = if is_metadata_query(&lower) {
                            ActionSymbol::InspectSchema
                        } else if is_limit_probe(&lower) {
                            ActionSymbol::SampleRows
                        } else if last_exec_errored {
                            ActionSymbol::Repair
                        } else {
                            ActionSymbol::Execute
                        };
                        last_exec_errored = *errored;
                        symbol
                    }
                    TOOL_LOOKUP_DOCS => ActionSymbol::LookupDocs,
                    TOOL_GET_SQL_PATTERN => ActionSymbol::GetPattern,
                    TOOL_GET_SQL_TEMPLATES => ActionSymbol::GetTemplate,
                    TOOL_REVIEW_SQL => ActionSymbol::Review,
                    TOOL_SUBMIT_FINAL_SQL => ActionSymbol::Submit,
                    other => return Err(TrajectoryError::UnknownTool(other.to_owned())),
                };
                actions.push(symbol);
            }
        }
    }
    Ok(Trajectory {
        skill_id,
        instance_id,
        actions,
    })
}

/// Levenshtein distance over any symbol slice, two-row DP.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut previous: Vec<usize> = (0..=b.len()).collect();
    let mut current = vec![0usize; b.len() + 1];
    for (i, item_a) in a.iter().enumerate() {
        current[0] = i + 1;
        for (j, item_b) in b.iter().enumerate() {
            let substitution = previous[j] + usize::from(item_a != item_b);
            current[j + 1] = substitution
                .min(previous[j + 1] + 1)
                .min(current[j] + 1);
        }
        std::mem::swap(&mut previous, &mut current);
    }
    previous[b.len()]
}

/// 1 - lev(a, b) / max(|a|, |b|); two empty trajectories are fully similar.
pub fn normalized_similarity(a: &Trajectory, b: &Trajectory) -> f64 {
    similarity_of(&a.actions, &b.actions)
}

pub fn similarity_of(a: &[ActionSymbol], b: &[ActionSymbol]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(a, b) as f64 / longest as f64
}

/// Symmetric K×K similarity matrix for one instance's trajectories.
pub fn instance_similarity_matrix(
    trajectories: &[Trajectory],
) -> Result<Vec<Vec<f64>>, TrajectoryError> {
    let n = trajectories.len();
    if n < 2 {
        return Err(TrajectoryError::TooFew(n));
    }
    let mut matrix = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let value = normalized_similarity(&trajectories[i], &trajectories[j]);
            matrix[i][j] = value;
            matrix[j][i] = value;
        }
    }
    Ok(matrix)
}

/// Similarity histogram bin width for reports.
pub const HISTOGRAM_BIN_WIDTH: f64 = 0.05;
const HISTOGRAM_BINS: usize = 20;

/// Distribution of pairwise similarities for one skill pair.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairSummary {
    pub skill_a: SkillId,
    pub skill_b: SkillId,
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// 20 bins of width 0.05 over [0, 1]; 1.0 falls in the last bin.
    pub histogram: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub instances: usize,
    pub mean_off_diagonal: f64,
    pub pairs: Vec<PairSummary>,
}

fn bin_of(value: f64) -> usize {
    ((value / HISTOGRAM_BIN_WIDTH) as usize).min(HISTOGRAM_BINS - 1)
}

/// Off-diagonal similarity distributions across instances, per skill pair.
pub fn similarity_report(
    groups: &BTreeMap<InstanceId, Vec<Trajectory>>,
) -> Result<SimilarityReport, TrajectoryError> {
    let mut per_pair: BTreeMap<(SkillId, SkillId), Vec<f64>> = BTreeMap::new();
    let mut usable_instances = 0usize;
    for trajectories in groups.values() {
        if trajectories.len() < 2 {
            log::warn!("similarity_report: instance with {} trajectory(ies) skipped", trajectories.len());
            continue;
        }
        usable_instances += 1;
        for i in 0..trajectories.len() {
            for j in i + 1..trajectories.len() {
                let value = normalized_similarity(&trajectories[i], &trajectories[j]);
                let mut key = (
                    trajectories[i].skill_id.clone(),
                    trajectories[j].skill_id.clone(),
                );
                if key.1 < key.0 {
                    std::mem::swap(&mut key.0, &mut key.1);
                }
                per_pair.entry(key).or_default().push(value);
            }
        }
    }
    if usable_instances == 0 {
        return Err(TrajectoryError::TooFew(0));
    }
    let mut pairs = Vec::with_capacity(per_pair.len());
    let mut grand_sum = 0.0;
    let mut grand_count = 0usize;
    for ((skill_a, skill_b), values) in per_pair {
        let mut histogram = vec![0usize; HISTOGRAM_BINS];
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for &value in &values {
            histogram[bin_of(value)] += 1;
            min = min.min(value);
            max = max.max(value);
            sum += value;
        }
        grand_sum += sum;
        grand_count += values.len();
        pairs.push(PairSummary {
            skill_a,
            skill_b,
            count: values.len(),
            mean: sum / values.len() as f64,
            min,
            max,
            histogram,
        });
    }
    Ok(SimilarityReport {
        instances: usable_instances,
        mean_off_diagonal: grand_sum / grand_count as f64,
        pairs,
    })
}
