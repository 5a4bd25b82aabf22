//! The LLM agent loop: model-call → tool-dispatch turns over a fixed set of
//! six tools, with hard turn and SQL-execution budgets.
//!
//! Skills influence only the system message; the tool set and dispatch logic
//! are identical across skills. One turn is one model call, and at most one
//! tool call is dispatched per turn so a trajectory can never hold more tool
//! actions than `max_turns`.

use std::fs;
use std::path::PathBuf;

use serde_json::Value;

use crate::domain::{Instance, Skill};
use crate::exec::{execute_sql, result_preview, schema_overview, ExecLimits};
use crate::trajectory::{
    extract_actions, LogEvent, TOOL_EXECUTE_SQL, TOOL_GET_SQL_PATTERN, TOOL_GET_SQL_TEMPLATES,
    TOOL_LOOKUP_DOCS, TOOL_REVIEW_SQL, TOOL_SUBMIT_FINAL_SQL,
};

use super::llm::{ChatMessage, ChatRequest, ChatResponse, LlmClient, ToolSchema};
use super::{Budgets, CandidateRun, Executor, ExecutorError, Termination};

/// Local snippet directories backing the retrieval tools.
#[derive(Clone, Debug, Default)]
pub struct SnippetDirs {
    pub docs: Option<PathBuf>,
    pub patterns: Option<PathBuf>,
    pub templates: Option<PathBuf>,
}

/// Everything the tool dispatcher needs for one instance.
pub struct ToolEnv {
    pub db_path: Option<PathBuf>,
    pub limits: ExecLimits,
    pub snippets: SnippetDirs,
}

impl ToolEnv {
    pub fn for_instance(instance: &Instance, limits: ExecLimits, snippets: SnippetDirs) -> Self {
        let db_path = if instance.db.is_empty() {
            None
        } else {
            Some(PathBuf::from(&instance.db))
        };
        ToolEnv {
            db_path,
            limits,
            snippets,
        }
    }
}

fn sql_param_schema(description: &str) -> Value {
    serde_json::json!({
        "type": "object",
        "properties": {"sql": {"type": "string", "description": description}},
        "required": ["sql"]
    })
}

fn query_param_schema(description: &str) -> Value {
    serde_json::json!({
        "type": "object",
        "properties": {"query": {"type": "string", "description": description}},
        "required": ["query"]
    })
}

/// The fixed six tool schemas. Agents cannot add, remove, or modify tools.
pub fn tool_schemas() -> Vec<ToolSchema> {
    vec![
        ToolSchema {
            name: TOOL_EXECUTE_SQL.into(),
            description: "Run SQL against the live database and see the result or error. \
                          Issue at most one tool call per turn."
                .into(),
            parameters: sql_param_schema("statement to execute"),
        },
        ToolSchema {
            name: TOOL_LOOKUP_DOCS.into(),
            description: "Look up SQL documentation snippets by keyword.".into(),
            parameters: query_param_schema("documentation topic"),
        },
        ToolSchema {
            name: TOOL_REVIEW_SQL.into(),
            description: "Get a rule-based review of a draft query.".into(),
            parameters: sql_param_schema("draft to review"),
        },
        ToolSchema {
            name: TOOL_GET_SQL_PATTERN.into(),
            description: "Retrieve a reusable SQL pattern by tag.".into(),
            parameters: query_param_schema("pattern tag"),
        },
        ToolSchema {
            name: TOOL_GET_SQL_TEMPLATES.into(),
            description: "Retrieve SQL templates by tag.".into(),
            parameters: query_param_schema("template tag"),
        },
        ToolSchema {
            name: TOOL_SUBMIT_FINAL_SQL.into(),
            description: "Submit the final SQL answer and finish.".into(),
            parameters: sql_param_schema("final SQL"),
        },
    ]
}

/// Rule-based draft critic: flags `SELECT *`, non-aggregated select columns
/// missing from `GROUP BY`, and unqualified columns in multi-table queries.
/// String heuristics, not a parser; an LLM critic is a drop-in replacement.
pub fn review_sql(sql: &str) -> Vec<String> {
    let lower = sql.to_lowercase();
    let mut findings = Vec::new();
    if lower.contains("select *") {
        findings.push("uses SELECT *; enumerate only the needed columns".to_owned());
    }
    if let Some(group_pos) = lower.find("group by") {
        if let (Some(select_pos), Some(from_pos)) = (lower.find("select"), lower.find("from")) {
            if select_pos < from_pos {
                let select_list = &lower[select_pos + "select".len()..from_pos];
                let group_clause: String = lower[group_pos + "group by".len()..]
                    .chars()
                    .take_while(|c| *c != ';')
                    .collect();
                for item in select_list.split(',') {
                    let item = item.trim();
                    if item.is_empty() || item.contains('(') || item == "*" {
                        continue;
                    }
                    let bare = item.split_whitespace().next().unwrap_or(item);
                    if !group_clause.contains(bare) {
                        findings.push(format!(
                            "column '{bare}' is selected but missing from GROUP BY"
                        ));
                    }
                }
            }
        }
    }
    let table_mentions = lower.matches(" join ").count()
        + usize::from(lower.contains(" from ") && lower.contains(','));
    if table_mentions >= 1 && lower.contains(" join ") {
        if let (Some(select_pos), Some(from_pos)) = (lower.find("select"), lower.find("from")) {
            if select_pos < from_pos {
                let select_list = &lower[select_pos + "select".len()..from_pos];
                let has_unqualified = select_list
                    .split(',')
                    .map(str::trim)
                    .any(|item| !item.is_empty() && !item.contains('.') && !item.contains('('));
                if has_unqualified {
                    findings.push(
                        "query joins multiple tables but selects unqualified columns; alias them"
                            .to_owned(),
                    );
                }
            }
        }
    }
    findings
}

fn serve_snippets(dir: &Option<PathBuf>, query: &str) -> String {
    let Some(dir) = dir else {
        return "no entries found".to_owned();
    };
    let needle = query.to_lowercase();
    let mut hits = Vec::new();
    if let Ok(entries) = fs::read_dir(dir) {
        let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
        paths.sort();
        for path in paths {
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().to_lowercase())
                .unwrap_or_default();
            let matched = needle
                .split_whitespace()
                .any(|token| !token.is_empty() && name.contains(token));
            if matched {
                if let Ok(text) = fs::read_to_string(&path) {
                    hits.push(text);
                }
            }
            if hits.len() >= 3 {
                break;
            }
        }
    }
    if hits.is_empty() {
        "no entries found".to_owned()
    } else {
        hits.join("\n---\n")
    }
}

fn string_arg(arguments: &Value, key: &str) -> Option<String> {
    arguments.get(key).and_then(Value::as_str).map(str::to_owned)
}

/// Pull a plausible SQL draft out of assistant prose: fenced ```sql blocks
/// first, then bare SELECT/WITH statements.
fn extract_draft(content: &str) -> Option<String> {
    if let Some(start) = content.find("```sql") {
        let rest = &content[start + 6..];
        if let Some(end) = rest.find("```") {
            let draft = rest[..end].trim();
            if !draft.is_empty() {
                return Some(draft.to_owned());
            }
        }
    }
    let trimmed = content.trim();
    let lower = trimmed.to_lowercase();
    if lower.starts_with("select") || lower.starts_with("with") {
        return Some(trimmed.to_owned());
    }
    None
}

const MALFORMED_NUDGE: &str = "The previous tool call was malformed. Call one \
of the provided tools with valid JSON arguments, or submit with \
submit_final_sql.";

const CONTINUE_NUDGE: &str = "Continue. When the query is ready, call \
submit_final_sql with the final SQL.";

/// Run the skill-conditioned agent on one instance.
///
/// Terminates on `submit_final_sql`, turn exhaustion, or SQL-execution
/// budget exhaustion; the last two yield the last drafted SQL when one
/// exists. Transport failures abort the attempt (the client retries
/// internally first).
pub fn agent_loop(
    client: &dyn LlmClient,
    skill: &Skill,
    instance: &Instance,
    budgets: &Budgets,
    env: &ToolEnv,
) -> CandidateRun {
    let schema = env
        .db_path
        .as_deref()
        .and_then(|p| schema_overview(p).ok())
        .unwrap_or_default();
    let mut messages = vec![
        ChatMessage::system(&skill.prompt),
        ChatMessage::user(format!(
            "Question: {}\nDialect: {:?}\nSchema:\n{}",
            instance.question, instance.dialect, schema
        )),
    ];
    let mut log: Vec<LogEvent> = Vec::new();
    let mut last_draft: Option<String> = None;
    let mut sql_execs = 0usize;
    let mut nudged_malformed = false;

    let finish = |log: Vec<LogEvent>,
                  sql: Option<String>,
                  execute_final: bool,
                  termination: Termination| {
        let execution = match (&sql, execute_final, env.db_path.as_deref()) {
            (Some(text), true, Some(db)) => Some(execute_sql(db, text, &env.limits)),
            _ => None,
        };
        let trajectory = extract_actions(&log, skill.skill_id.clone(), instance.instance_id.clone())
            .expect("loop only logs known tools");
        CandidateRun {
            sql,
            log,
            trajectory,
            execution,
            termination,
        }
    };

    for _turn in 0..budgets.max_turns {
        let request = ChatRequest {
            model: String::new(), // filled by the client configuration
            messages: messages.clone(),
            tools: tool_schemas(),
            temperature: budgets.temperature,
            max_tokens: budgets.max_completion_tokens,
        };
        let response: ChatResponse = match client.complete(&request) {
            Ok(r) => r,
            Err(error) => {
                return finish(
                    log,
                    last_draft,
                    false,
                    Termination::Aborted(format!("transport: {error}")),
                );
            }
        };

        if let Some(content) = &response.content {
            if let Some(draft) = extract_draft(content) {
                log.push(LogEvent::Draft { sql: draft.clone() });
                last_draft = Some(draft);
            }
            if !content.is_empty() {
                messages.push(ChatMessage {
                    role: "assistant".into(),
                    content: content.clone(),
                });
            }
        }

        let Some(call) = response.tool_calls.first() else {
            messages.push(ChatMessage::user(CONTINUE_NUDGE));
            continue;
        };

        match call.name.as_str() {
            TOOL_SUBMIT_FINAL_SQL => match string_arg(&call.arguments, "sql") {
                Some(sql) => {
                    log.push(LogEvent::ToolCall {
                        name: TOOL_SUBMIT_FINAL_SQL.into(),
                        argument: sql.clone(),
                        errored: false,
                    });
                    return finish(log, Some(sql), true, Termination::Submitted);
                }
                None => {
                    if !nudged_malformed {
                        messages.push(ChatMessage::user(MALFORMED_NUDGE));
                        nudged_malformed = true;
                    } else {
                        messages.push(ChatMessage::tool("error: missing 'sql' argument"));
                    }
                }
            },
            TOOL_EXECUTE_SQL => match string_arg(&call.arguments, "sql") {
                Some(sql) => {
                    if sql_execs == budgets.max_sql_execs {
                        return finish(log, last_draft, true, Termination::SqlBudgetExhausted);
                    }
                    sql_execs += 1;
                    let (result_text, errored) = match env.db_path.as_deref() {
                        Some(db) => match execute_sql(db, &sql, &env.limits) {
                            Ok(table) => (result_preview(&table, 20, 200), false),
                            Err(error) => (format!("error: {error}"), true),
                        },
                        None => ("error: no database attached".to_owned(), true),
                    };
                    log.push(LogEvent::ToolCall {
                        name: TOOL_EXECUTE_SQL.into(),
                        argument: sql.clone(),
                        errored,
                    });
                    last_draft = Some(sql);
                    messages.push(ChatMessage::tool(result_text));
                }
                None => {
                    if !nudged_malformed {
                        messages.push(ChatMessage::user(MALFORMED_NUDGE));
                        nudged_malformed = true;
                    } else {
                        messages.push(ChatMessage::tool("error: missing 'sql' argument"));
                    }
                }
            },
            TOOL_REVIEW_SQL => {
                let sql = string_arg(&call.arguments, "sql").unwrap_or_default();
                let findings = review_sql(&sql);
                let text = if findings.is_empty() {
                    "no findings".to_owned()
                } else {
                    findings.join("\n")
                };
                log.push(LogEvent::ToolCall {
                    name: TOOL_REVIEW_SQL.into(),
                    argument: sql,
                    errored: false,
                });
                messages.push(ChatMessage::tool(text));
            }
            TOOL_LOOKUP_DOCS | TOOL_GET_SQL_PATTERN | TOOL_GET_SQL_TEMPLATES => {
                let query = string_arg(&call.arguments, "query").unwrap_or_default();
                let dir = match call.name.as_str() {
                    TOOL_LOOKUP_DOCS => &env.snippets.docs,
                    TOOL_GET_SQL_PATTERN => &env.snippets.patterns,
                    _ => &env.snippets.templates,
                };
                let text = serve_snippets(dir, &query);
                log.push(LogEvent::ToolCall {
                    name: call.name.clone(),
                    argument: query,
                    errored: false,
                });
                messages.push(ChatMessage::tool(text));
            }
            unknown => {
                // Unknown tool names are malformed calls: one repair nudge,
                // and the exchange still costs a turn.
                if !nudged_malformed {
                    messages.push(ChatMessage::user(MALFORMED_NUDGE));
                    nudged_malformed = true;
                } else {
                    messages.push(ChatMessage::tool(format!("error: unknown tool '{unknown}'")));
                }
            }
        }
    }
    finish(log, last_draft, true, Termination::TurnsExhausted)
}

/// [`Executor`] over an [`LlmClient`], one agent loop per run.
pub struct LlmAgentExecutor<C: LlmClient> {
    pub client: C,
    pub limits: ExecLimits,
    pub snippets: SnippetDirs,
}

impl<C: LlmClient> LlmAgentExecutor<C> {
    pub fn new(client: C) -> Self {
        LlmAgentExecutor {
            client,
            limits: ExecLimits::default(),
            snippets: SnippetDirs::default(),
        }
    }
}

impl<C: LlmClient> Executor for LlmAgentExecutor<C> {
    fn run(
        &self,
        skill: &Skill,
        instance: &Instance,
        budgets: &Budgets,
        _seed: u64,
    ) -> Result<CandidateRun, ExecutorError> {
        let env = ToolEnv::for_instance(instance, self.limits, self.snippets.clone());
        Ok(agent_loop(&self.client, skill, instance, budgets, &env))
    }
}
