//! LLM wire contract and clients.
//!
//! One HTTP shape serves the agent loop, the reflection optimizer, and the
//! pairwise judge: POST `{model, messages, tools, temperature, max_tokens}`,
//! response `{content, tool_calls}`. The API key comes from the
//! `DIVSKILL_LLM_KEY` environment variable; the base URL from configuration.

use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::residual::{FailureExample, OptimizeError, SkillOptimizer};
use crate::selection::{CandidateView, Judge, JudgeContext, JudgeError, Side};

pub const LLM_KEY_ENV: &str = "DIVSKILL_LLM_KEY";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }

    pub fn tool(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "tool".into(),
            content: content.into(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: String,
    pub description: String,
    pub parameters: serde_json::Value,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub tools: Vec<ToolSchema>,
    pub temperature: f64,
    pub max_tokens: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ToolCallRequest {
    pub name: String,
    #[serde(default)]
    pub arguments: serde_json::Value,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ChatResponse {
    #[serde(default)]
    pub content: Option<String>,
    #[serde(default)]
    pub tool_calls: Vec<ToolCallRequest>,
}

impl ChatResponse {
    pub fn text(content: impl Into<String>) -> Self {
        ChatResponse {
            content: Some(content.into()),
            tool_calls: vec![],
        }
    }

    pub fn tool(name: &str, arguments: serde_json::Value) -> Self {
        ChatResponse {
            content: None,
            tool_calls: vec![ToolCallRequest {
                name: name.into(),
                arguments,
            }],
        }
    }
}

#[derive(Clone, Debug, Error)]
pub enum TransportError {
    #[error("http {status}: {body}")]
    Http { status: u16, body: String },
    #[error("network: {0}")]
    Network(String),
    #[error("bad response payload: {0}")]
    Decode(String),
}

/// Model endpoint abstraction; scripted in tests, HTTP in production.
pub trait LlmClient: Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, TransportError>;
}

/// Blocking HTTP client with bounded retry and exponential backoff for
/// transient failures (network errors, 429, 5xx).
pub struct HttpLlmClient {
    pub base_url: String,
    pub model: String,
    api_key: Option<String>,
    max_retries: u32,
    backoff: Duration,
    agent: ureq::Agent,
}

impl HttpLlmClient {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        HttpLlmClient {
            base_url: base_url.into(),
            model: model.into(),
            api_key: std::env::var(LLM_KEY_ENV).ok(),
            max_retries: 3,
            backoff: Duration::from_millis(250),
            agent: ureq::AgentBuilder::new()
                .timeout(Duration::from_secs(600))
                .build(),
        }
    }

    pub fn with_retries(mut self, max_retries: u32, backoff: Duration) -> Self {
        self.max_retries = max_retries;
        self.backoff = backoff;
        self
    }

    fn attempt(&self, request: &ChatRequest) -> Result<ChatResponse, TransportError> {
        let mut call = self.agent.post(&self.base_url);
        if let Some(key) = &self.api_key {
            call = call.set("authorization", &format!("Bearer {key}"));
        }
        let payload = serde_json::to_value(request)
            .map_err(|e| TransportError::Decode(e.to_string()))?;
        match call.send_json(payload) {
            Ok(response) => response
                .into_json::<ChatResponse>()
                .map_err(|e| TransportError::Decode(e.to_string())),
            Err(ureq::Error::Status(status, response)) => Err(TransportError::Http {
                status,
                body: response.into_string().unwrap_or_default(),
            }),
            Err(ureq::Error::Transport(t)) => Err(TransportError::Network(t.to_string())),
        }
    }
}

fn retryable(error: &TransportError) -> bool {
    match error {
        TransportError::Network(_) => true,
        TransportError::Http { status, .. } => *status == 429 || *status >= 500,
        TransportError::Decode(_) => false,
    }
}

impl LlmClient for HttpLlmClient {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, TransportError> {
        let mut delay = self.backoff;
        let mut last = None;
        for attempt in 0..=self.max_retries {
            match self.attempt(request) {
                Ok(response) => return Ok(response),
                Err(error) => {
                    if !retryable(&error) || attempt == self.max_retries {
                        return Err(error);
                    }
                    log::warn!("llm call failed (attempt {}): {error}", attempt + 1);
                    std::thread::sleep(delay);
                    delay *= 2;
                    last = Some(error);
                }
            }
        }
        Err(last.unwrap_or(TransportError::Network("exhausted retries".into())))
    }
}

/// Canned response sequence for tests and fuzzing. Once the script is
/// exhausted it keeps returning an empty text response.
pub struct ScriptedClient {
    script: Mutex<VecDeque<ChatResponse>>,
}

impl ScriptedClient {
    pub fn new(responses: Vec<ChatResponse>) -> Self {
        ScriptedClient {
            script: Mutex::new(responses.into()),
        }
    }
}

impl LlmClient for ScriptedClient {
    fn complete(&self, _request: &ChatRequest) -> Result<ChatResponse, TransportError> {
        Ok(self
            .script
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| ChatResponse::text("")))
    }
}

/// Single reflect-propose call per position: the model sees the current
/// prompt plus failure summaries and returns a refined prompt. Proposals
/// must stay instance- and dialect-agnostic; the engine's lexical screen
/// enforces that mechanically.
pub struct LlmReflectionOptimizer<C: LlmClient> {
    pub client: C,
    pub model: String,
    pub max_tokens: usize,
}

impl<C: LlmClient> LlmReflectionOptimizer<C> {
    pub fn new(client: C, model: impl Into<String>) -> Self {
        LlmReflectionOptimizer {
            client,
            model: model.into(),
            max_tokens: 4_000,
        }
    }
}

const REFLECTION_SYSTEM: &str = "You refine strategy prompts for a SQL-writing \
agent. You will see the current prompt and a sample of failures (question, \
action trajectory, error summary). Respond with ONLY the full revised prompt \
text. Keep it generic: never mention concrete table or column names from the \
failures and never rely on dialect-specific function syntax.";

impl<C: LlmClient> SkillOptimizer for LlmReflectionOptimizer<C> {
    fn optimize(&self, prompt: &str, failures: &[FailureExample]) -> Result<String, OptimizeError> {
        if failures.is_empty() {
            return Err(OptimizeError::NoFailures);
        }
        let mut body = format!("Current prompt:\n{prompt}\n\nFailures:\n");
        for (idx, failure) in failures.iter().take(12).enumerate() {
            let actions: Vec<String> = failure
                .trajectory
                .actions
                .iter()
                .map(|a| a.to_string())
                .collect();
            body.push_str(&format!(
                "{}. question: {}\n   trajectory: {}\n   error: {}\n",
                idx + 1,
                failure.instance.question,
                actions.join(" > "),
                failure.error_summary
            ));
        }
        body.push_str("\nRevised prompt:");
        let request = ChatRequest {
            model: self.model.clone(),
            messages: vec![ChatMessage::system(REFLECTION_SYSTEM), ChatMessage::user(body)],
            tools: vec![],
            temperature: 0.2,
            max_tokens: self.max_tokens,
        };
        let response = self
            .client
            .complete(&request)
            .map_err(|e| OptimizeError::Backend(e.to_string()))?;
        let proposal = response.content.unwrap_or_default().trim().to_owned();
        if proposal.is_empty() {
            return Err(OptimizeError::Backend("empty proposal".into()));
        }
        Ok(proposal)
    }
}

/// Pairwise LLM judge over SQL + execution previews. The interface forbids
/// abstention, so unparseable verdicts fall back to a content-derived coin
/// flip (deterministic in the pair's text).
pub struct LlmJudge<C: LlmClient> {
    pub client: C,
    pub model: String,
}

impl<C: LlmClient> LlmJudge<C> {
    pub fn new(client: C, model: impl Into<String>) -> Self {
        LlmJudge {
            client,
            model: model.into(),
        }
    }
}

const JUDGE_SYSTEM: &str = "You compare two candidate SQL queries for the same \
question. Using the schema and each candidate's execution preview, decide \
which candidate answers the question correctly. Respond with exactly one \
character: A or B.";

impl<C: LlmClient> Judge for LlmJudge<C> {
    fn compare(
        &self,
        context: &JudgeContext,
        a: &CandidateView,
        b: &CandidateView,
    ) -> Result<Side, JudgeError> {
        let body = format!(
            "Question: {}\n\nSchema:\n{}\n\nCandidate A SQL:\n{}\nCandidate A result preview:\n{}\n\nCandidate B SQL:\n{}\nCandidate B result preview:\n{}\n\nAnswer A or B.",
            context.question, context.schema_summary, a.sql, a.preview, b.sql, b.preview
        );
        let request = ChatRequest {
            model: self.model.clone(),
            messages: vec![ChatMessage::system(JUDGE_SYSTEM), ChatMessage::user(body)],
            tools: vec![],
            temperature: 0.0,
            max_tokens: 8,
        };
        let response = self
            .client
            .complete(&request)
            .map_err(|e| JudgeError::Backend(e.to_string()))?;
        let text = response.content.unwrap_or_default().to_uppercase();
        for c in text.chars() {
            match c {
                'A' => return Ok(Side::A),
                'B' => return Ok(Side::B),
                _ => continue,
            }
        }
        // Deterministic internal coin flip on unparseable output.
        let mut hash: u64 = 0xcbf29ce484222325;
        for byte in a.sql.bytes().chain(b.sql.bytes()) {
            hash ^= u64::from(byte);
            hash = hash.wrapping_mul(0x100000001b3);
        }
        Ok(if hash & 1 == 0 { Side::A } else { Side::B })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_wire_shape() {
        let request = ChatRequest {
            model: "m".into(),
            messages: vec![ChatMessage::system("sys"), ChatMessage::user("hi")],
            tools: vec![ToolSchema {
                name: "execute_sql".into(),
                description: "run SQL".into(),
                parameters: serde_json::json!({"type": "object"}),
            }],
            temperature: 0.2,
            max_tokens: 64000,
        };
        let value = serde_json::to_value(&request).unwrap();
        assert_eq!(value["model"], "m");
        assert_eq!(value["messages"][0]["role"], "system");
        assert_eq!(value["messages"][0]["content"], "sys");
        assert_eq!(value["tools"][0]["name"], "execute_sql");
        assert_eq!(value["temperature"], 0.2);
        assert_eq!(value["max_tokens"], 64000);
    }

    #[test]
    fn response_accepts_text_or_tool_calls() {
        let text: ChatResponse = serde_json::from_str(r#"{"content":"hello"}"#).unwrap();
        assert_eq!(text.content.as_deref(), Some("hello"));
        assert!(text.tool_calls.is_empty());

        let calls: ChatResponse = serde_json::from_str(
            r#"{"tool_calls":[{"name":"execute_sql","arguments":{"sql":"SELECT 1"}}]}"#,
        )
        .unwrap();
        assert_eq!(calls.tool_calls.len(), 1);
        assert_eq!(calls.tool_calls[0].name, "execute_sql");
    }

    #[test]
    fn scripted_client_plays_in_order_then_blanks() {
        let client = ScriptedClient::new(vec![
            ChatResponse::text("one"),
            ChatResponse::text("two"),
        ]);
        let request = ChatRequest {
            model: "m".into(),
            messages: vec![],
            tools: vec![],
            temperature: 0.0,
            max_tokens: 1,
        };
        assert_eq!(client.complete(&request).unwrap().content.as_deref(), Some("one"));
        assert_eq!(client.complete(&request).unwrap().content.as_deref(), Some("two"));
        assert_eq!(client.complete(&request).unwrap().content.as_deref(), Some(""));
    }

    #[test]
    fn judge_parses_sides_and_never_abstains() {
        use crate::selection::{CandidateView, JudgeContext};

        let context = JudgeContext {
            question: "q",
            schema_summary: "t(a)",
        };
        let view_a = CandidateView {
            sql: "SELECT 1",
            preview: "1".into(),
            fingerprint: None,
        };
        let view_b = CandidateView {
            sql: "SELECT 2",
            preview: "2".into(),
            fingerprint: None,
        };
        let judge = LlmJudge::new(ScriptedClient::new(vec![ChatResponse::text(" b ")]), "m");
        assert_eq!(judge.compare(&context, &view_a, &view_b).unwrap(), Side::B);
        let judge = LlmJudge::new(ScriptedClient::new(vec![ChatResponse::text("Answer: A")]), "m");
        assert_eq!(judge.compare(&context, &view_a, &view_b).unwrap(), Side::A);
        // Unparseable output still yields a side, deterministically.
        let judge = LlmJudge::new(
            ScriptedClient::new(vec![ChatResponse::text("??"), ChatResponse::text("??")]),
            "m",
        );
        let first = judge.compare(&context, &view_a, &view_b).unwrap();
        let second = judge.compare(&context, &view_a, &view_b).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn reflection_optimizer_returns_the_model_text() {
        use crate::domain::{Dialect, GoldSpec, InstanceId, SkillId};
        use crate::exec::ResultTable;
        use crate::residual::FailureExample;
        use crate::trajectory::Trajectory;

        let failure = FailureExample {
            instance: crate::domain::Instance {
                instance_id: InstanceId::new("x"),
                question: "q".into(),
                db: String::new(),
                gold: GoldSpec::Table(ResultTable::single_text("a", "v")),
                dialect: Dialect::Synthetic,
            },
            trajectory: Trajectory {
                skill_id: SkillId::new("s"),
                instance_id: InstanceId::new("x"),
                actions: vec![],
            },
            error_summary: "schema: no such column".into(),
        };
        let optimizer = LlmReflectionOptimizer::new(
            ScriptedClient::new(vec![ChatResponse::text("  Revised strategy text.  ")]),
            "m",
        );
        let proposal = optimizer.optimize("old", &[failure]).unwrap();
        assert_eq!(proposal, "Revised strategy text.");
        assert!(matches!(
            optimizer.optimize("old", &[]),
            Err(crate::residual::OptimizeError::NoFailures)
        ));
    }

    #[test]
    fn http_client_retries_transient_failures() {
        use std::io::{Read, Write};
        use std::net::TcpListener;

        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            // First request: 500. Second request: success.
            for (status, body) in [
                ("500 Internal Server Error", "{}"),
                ("200 OK", r#"{"content":"ok","tool_calls":[]}"#),
            ] {
                let (mut stream, _) = listener.accept().unwrap();
                let mut buffer = [0u8; 4096];
                let _ = stream.read(&mut buffer).unwrap();
                let response = format!(
                    "HTTP/1.1 {status}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(response.as_bytes()).unwrap();
            }
        });
        let client = HttpLlmClient::new(format!("http://{addr}/"), "m")
            .with_retries(2, Duration::from_millis(1));
        let request = ChatRequest {
            model: "m".into(),
            messages: vec![],
            tools: vec![],
            temperature: 0.0,
            max_tokens: 1,
        };
        let response = client.complete(&request).unwrap();
        assert_eq!(response.content.as_deref(), Some("ok"));
        handle.join().unwrap();
    }

    #[test]
    fn http_client_roundtrip_against_local_server() {
        use std::io::{Read, Write};
        use std::net::TcpListener;

        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buffer = [0u8; 8192];
            let mut seen = Vec::new();
            loop {
                let n = stream.read(&mut buffer).unwrap();
                seen.extend_from_slice(&buffer[..n]);
                let text = String::from_utf8_lossy(&seen);
                if let Some(header_end) = text.find("\r\n\r\n") {
                    let headers = &text[..header_end];
                    let content_length: usize = headers
                        .lines()
                        .find_map(|l| l.to_lowercase().strip_prefix("content-length:").map(|v| v.trim().parse().unwrap()))
                        .unwrap_or(0);
                    if seen.len() >= header_end + 4 + content_length {
                        break;
                    }
                }
            }
            let body = r#"{"content":null,"tool_calls":[{"name":"submit_final_sql","arguments":{"sql":"SELECT 1"}}]}"#;
            let response = format!(
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\n\r\n{}",
                body.len(),
                body
            );
            stream.write_all(response.as_bytes()).unwrap();
            String::from_utf8_lossy(&seen).into_owned()
        });

        let client = HttpLlmClient::new(format!("http://{addr}/v1/chat"), "test-model")
            .with_retries(0, Duration::from_millis(1));
        let request = ChatRequest {
            model: "test-model".into(),
            messages: vec![ChatMessage::user("q")],
            tools: vec![],
            temperature: 0.2,
            max_tokens: 16,
        };
        let response = client.complete(&request).unwrap();
        assert_eq!(response.tool_calls[0].name, "submit_final_sql");

        let raw = handle.join().unwrap();
        assert!(raw.starts_with("POST /v1/chat"));
        assert!(raw.contains("\"model\":\"test-model\""));
    }
}
