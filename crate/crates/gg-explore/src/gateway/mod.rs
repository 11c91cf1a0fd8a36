//! Provider-agnostic LLM access with typed tasks and exact cost accounting.
//!
//! [`LlmGateway`] wraps a [`Provider`] (live HTTP or scripted transcript) and
//! exposes the tasks the pipeline needs. Each task renders its prompt, calls
//! the provider once, and parses a structured block out of the reply; a reply
//! that cannot be parsed is retried exactly once with a corrective
//! instruction appended. Every completed call is recorded in a per-question
//! [`CostLedger`].
//!
//! Requests always carry temperature 0.

mod prompts;
mod provider;

pub use provider::{
    HttpConfig, HttpProvider, Provider, ProviderError, ProviderReply, ScriptError,
    ScriptedProvider,
};

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::guidance::{Association, ClueKind, Keyword};
use crate::kg::normalize_name;

/// The seven call sites of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskTag {
    Rewrite,
    ExtractKeywords,
    MineRelations,
    SelectRelation,
    SelectBranch,
    FinalAnswer,
    DirectAnswer,
}

impl fmt::Display for TaskTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TaskTag::Rewrite => "Rewrite",
            TaskTag::ExtractKeywords => "ExtractKeywords",
            TaskTag::MineRelations => "MineRelations",
            TaskTag::SelectRelation => "SelectRelation",
            TaskTag::SelectBranch => "SelectBranch",
            TaskTag::FinalAnswer => "FinalAnswer",
            TaskTag::DirectAnswer => "DirectAnswer",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub task: TaskTag,
    pub question_id: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
}

impl ChatRequest {
    pub fn new(task: TaskTag, question_id: impl Into<String>, messages: Vec<Message>) -> Self {
        assert!(!messages.is_empty(), "chat request needs messages");
        ChatRequest {
            task,
            question_id: question_id.into(),
            messages,
            temperature: 0.0,
        }
    }
}

/// Token usage of one call. `estimated` is set when the provider did not
/// report usage and the counts were derived as `ceil(characters / 4)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub estimated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub content: String,
    pub usage: Usage,
}

/// Per-question accumulators: call count and token totals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CostLedger {
    llm_calls: u64,
    input_tokens: u64,
    output_tokens: u64,
    total_tokens: u64,
}

impl CostLedger {
    fn record(&mut self, usage: &Usage) {
        self.llm_calls += 1;
        self.input_tokens += usage.input_tokens;
        self.output_tokens += usage.output_tokens;
        self.total_tokens += usage.input_tokens + usage.output_tokens;
    }

    fn absorb(&mut self, other: &CostLedger) {
        self.llm_calls += other.llm_calls;
        self.input_tokens += other.input_tokens;
        self.output_tokens += other.output_tokens;
        self.total_tokens += other.total_tokens;
    }

    pub fn llm_calls(&self) -> u64 {
        self.llm_calls
    }

    pub fn input_tokens(&self) -> u64 {
        self.input_tokens
    }

    pub fn output_tokens(&self) -> u64 {
        self.output_tokens
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }
}

/// Task-layer failures.
#[derive(Debug, Error)]
pub enum GatewayError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("{task}: {detail}")]
    Task { task: TaskTag, detail: String },
    #[error("{task}: {output:?} is not among the offered candidates")]
    Constraint { task: TaskTag, output: String },
}

/// Returns the body of the first fenced code block, if any.
fn fenced_block(content: &str) -> Option<&str> {
    let start = content.find("```")?;
    let after = &content[start + 3..];
    let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
    let body = &after[body_start..];
    let end = body.find("```")?;
    Some(&body[..end])
}

/// Extracts the structured block of a reply: the fenced block when present,
/// otherwise the whole reply.
fn structured_payload(content: &str) -> (&str, bool) {
    match fenced_block(content) {
        Some(body) => (body, true),
        None => (content, false),
    }
}

fn parse_json_object(content: &str) -> Result<serde_json::Value, String> {
    let (payload, fenced) = structured_payload(content);
    serde_json::from_str::<serde_json::Value>(payload.trim()).map_err(|e| {
        if fenced {
            format!("fenced block is not valid JSON: {e}")
        } else {
            format!("reply is not valid JSON: {e}")
        }
    })
}

fn string_array(value: &serde_json::Value, key: &str) -> Result<Vec<String>, String> {
    let arr = value
        .get(key)
        .and_then(|v| v.as_array())
        .ok_or_else(|| format!("missing {key:?} array"))?;
    arr.iter()
        .map(|v| {
            v.as_str()
                .map(str::to_string)
                .ok_or_else(|| format!("{key:?} must contain strings"))
        })
        .collect()
}

/// Shared LLM access point with per-question cost accounting.
pub struct LlmGateway {
    provider: Box<dyn Provider>,
    ledger: Mutex<BTreeMap<String, CostLedger>>,
}

impl LlmGateway {
    pub fn new(provider: Box<dyn Provider>) -> Self {
        LlmGateway {
            provider,
            ledger: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn scripted_from_str(text: &str) -> Result<Self, ScriptError> {
        Ok(Self::new(Box::new(ScriptedProvider::from_json_str(
            text, "<inline>",
        )?)))
    }

    pub fn scripted_from_path(path: impl AsRef<std::path::Path>) -> Result<Self, ScriptError> {
        Ok(Self::new(Box::new(ScriptedProvider::from_path(path)?)))
    }

    pub fn http(config: HttpConfig) -> Self {
        Self::new(Box::new(HttpProvider::new(config)))
    }

    /// Sends one request and records its usage under the request's question.
    pub fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let reply = self.provider.complete(req)?;
        let usage = match reply.usage {
            Some((input_tokens, output_tokens)) => Usage {
                input_tokens,
                output_tokens,
                estimated: false,
            },
            None => {
                let chars: usize = req.messages.iter().map(|m| m.content.chars().count()).sum();
                Usage {
                    input_tokens: chars.div_ceil(4) as u64,
                    output_tokens: reply.content.chars().count().div_ceil(4) as u64,
                    estimated: true,
                }
            }
        };
        self.ledger
            .lock()
            .expect("ledger lock")
            .entry(req.question_id.clone())
            .or_default()
            .record(&usage);
        Ok(ChatResponse {
            content: reply.content,
            usage,
        })
    }

    /// Accumulated counts for one question; zeros when it never called.
    pub fn ledger_snapshot(&self, question_id: &str) -> CostLedger {
        self.ledger
            .lock()
            .expect("ledger lock")
            .get(question_id)
            .copied()
            .unwrap_or_default()
    }

    /// Sum over every question seen so far.
    pub fn ledger_totals(&self) -> CostLedger {
        let ledger = self.ledger.lock().expect("ledger lock");
        let mut total = CostLedger::default();
        for entry in ledger.values() {
            total.absorb(entry);
        }
        total
    }

    /// Runs one structured task: prompt, call, parse; on a parse failure the
    /// call is repeated once with a corrective instruction appended.
    fn run_structured<T>(
        &self,
        task: TaskTag,
        question_id: &str,
        system: &str,
        user: String,
        expected_shape: &str,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<T, GatewayError> {
        let messages = vec![Message::system(system), Message::user(user)];
        let req = ChatRequest::new(task, question_id, messages.clone());
        let first = self.complete(&req)?;
        let why = match parse(&first.content) {
            Ok(value) => return Ok(value),
            Err(why) => why,
        };

        let mut retry_messages = messages;
        retry_messages.push(Message::user(prompts::corrective_user(
            &first.content,
            &why,
            expected_shape,
        )));
        let retry = ChatRequest::new(task, question_id, retry_messages);
        let second = self.complete(&retry)?;
        parse(&second.content).map_err(|why| GatewayError::Task {
            task,
            detail: format!("unparseable after retry: {why}"),
        })
    }

    /// Rewrites a question into one complete declarative statement.
    pub fn rewrite(&self, question_id: &str, question: &str) -> Result<String, GatewayError> {
        self.run_structured(
            TaskTag::Rewrite,
            question_id,
            prompts::REWRITE_SYSTEM,
            prompts::rewrite_user(question),
            "{\"statement\": \"...\"}",
            |content| {
                if let Ok(value) = parse_json_object(content) {
                    return value
                        .get("statement")
                        .and_then(|v| v.as_str())
                        .map(str::to_string)
                        .filter(|s| !s.trim().is_empty())
                        .ok_or_else(|| "missing non-empty \"statement\"".to_string());
                }
                // A bare sentence is acceptable as long as it is not a
                // malformed fenced block.
                if fenced_block(content).is_some() {
                    return Err("fenced block is not valid JSON".to_string());
                }
                let trimmed = content.trim();
                if trimmed.is_empty() {
                    Err("empty reply".to_string())
                } else {
                    Ok(trimmed.to_string())
                }
            },
        )
    }

    /// Extracts grouped keywords from a statement. A well-formed reply with
    /// zero keywords is a task failure, not a parse failure: it is not
    /// retried.
    pub fn extract_keywords(
        &self,
        question_id: &str,
        statement: &str,
    ) -> Result<Vec<Keyword>, GatewayError> {
        let keywords = self.run_structured(
            TaskTag::ExtractKeywords,
            question_id,
            prompts::EXTRACT_SYSTEM,
            prompts::extract_user(statement),
            "{\"keywords\": [{\"label\": \"...\", \"kind\": \"specific|generic\", \"group\": \"g1\"}]}",
            |content| {
                let value = parse_json_object(content)?;
                let arr = value
                    .get("keywords")
                    .and_then(|v| v.as_array())
                    .ok_or_else(|| "missing \"keywords\" array".to_string())?;
                let mut out = Vec::new();
                for item in arr {
                    let label = item
                        .get("label")
                        .and_then(|v| v.as_str())
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .ok_or_else(|| "keyword needs a non-empty \"label\"".to_string())?;
                    let kind = match item.get("kind").and_then(|v| v.as_str()) {
                        Some(k) if k.eq_ignore_ascii_case("specific") => ClueKind::Specific,
                        Some(k) if k.eq_ignore_ascii_case("generic") => ClueKind::Generic,
                        other => {
                            return Err(format!(
                                "keyword kind must be \"specific\" or \"generic\", got {other:?}"
                            ))
                        }
                    };
                    let group = item
                        .get("group")
                        .and_then(|v| v.as_str())
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .ok_or_else(|| "keyword needs a non-empty \"group\"".to_string())?;
                    out.push(Keyword {
                        label: label.to_string(),
                        kind,
                        group: group.to_string(),
                    });
                }
                Ok(out)
            },
        )?;
        if keywords.is_empty() {
            return Err(GatewayError::Task {
                task: TaskTag::ExtractKeywords,
                detail: "no keywords".to_string(),
            });
        }
        Ok(keywords)
    }

    /// Mines associations between the extracted keyword groups. Replies that
    /// reference unknown groups or relate a group to itself are treated as
    /// parse failures and retried.
    pub fn mine_relations(
        &self,
        question_id: &str,
        statement: &str,
        keywords: &[Keyword],
    ) -> Result<Vec<Association>, GatewayError> {
        let known: std::collections::BTreeSet<&str> =
            keywords.iter().map(|k| k.group.as_str()).collect();
        self.run_structured(
            TaskTag::MineRelations,
            question_id,
            prompts::MINE_SYSTEM,
            prompts::mine_user(statement, keywords),
            "{\"associations\": [{\"head_group\": \"g1\", \"label\": \"...\", \"tail_group\": \"g2\"}]}",
            |content| {
                let value = parse_json_object(content)?;
                let arr = value
                    .get("associations")
                    .and_then(|v| v.as_array())
                    .ok_or_else(|| "missing \"associations\" array".to_string())?;
                let mut out = Vec::new();
                for item in arr {
                    let field = |key: &str| {
                        item.get(key)
                            .and_then(|v| v.as_str())
                            .map(str::trim)
                            .map(str::to_string)
                            .ok_or_else(|| format!("association needs string {key:?}"))
                    };
                    let head_group = field("head_group")?;
                    let tail_group = field("tail_group")?;
                    let label = field("label")?;
                    for group in [&head_group, &tail_group] {
                        if !known.contains(group.as_str()) {
                            return Err(format!("unknown group id {group:?}"));
                        }
                    }
                    if head_group == tail_group {
                        return Err(format!("association relates group {head_group:?} to itself"));
                    }
                    out.push(Association {
                        head_group,
                        label,
                        tail_group,
                    });
                }
                Ok(out)
            },
        )
    }

    /// Asks which candidate relation best substitutes into the phrase. The
    /// reply must name one of the candidates, compared exactly first and then
    /// under name normalization.
    pub fn select_relation(
        &self,
        question_id: &str,
        phrase: &str,
        candidates: &[String],
    ) -> Result<String, GatewayError> {
        if candidates.is_empty() {
            return Err(GatewayError::Task {
                task: TaskTag::SelectRelation,
                detail: "empty candidate list".to_string(),
            });
        }
        let picked = self.run_structured(
            TaskTag::SelectRelation,
            question_id,
            prompts::SELECT_RELATION_SYSTEM,
            prompts::select_relation_user(phrase, candidates),
            "{\"relation\": \"...\"}",
            |content| {
                if let Ok(value) = parse_json_object(content) {
                    if let Some(s) = value.get("relation").and_then(|v| v.as_str()) {
                        return Ok(s.trim().to_string());
                    }
                    if let Some(s) = value.as_str() {
                        return Ok(s.trim().to_string());
                    }
                }
                let trimmed = content.trim();
                if trimmed.is_empty() {
                    Err("empty reply".to_string())
                } else {
                    Ok(trimmed.to_string())
                }
            },
        )?;

        if let Some(exact) = candidates.iter().find(|c| **c == picked) {
            return Ok(exact.clone());
        }
        let normalized = normalize_name(&picked);
        if let Some(close) = candidates.iter().find(|c| normalize_name(c) == normalized) {
            return Ok(close.clone());
        }
        Err(GatewayError::Constraint {
            task: TaskTag::SelectRelation,
            output: picked,
        })
    }

    /// Asks which of two phrases better matches the query context; returns 0
    /// or 1.
    pub fn select_branch(
        &self,
        question_id: &str,
        phrase_a: &str,
        phrase_b: &str,
    ) -> Result<usize, GatewayError> {
        self.run_structured(
            TaskTag::SelectBranch,
            question_id,
            prompts::SELECT_BRANCH_SYSTEM,
            prompts::select_branch_user(phrase_a, phrase_b),
            "{\"choice\": 0}",
            |content| {
                let choice = if let Ok(value) = parse_json_object(content) {
                    value
                        .get("choice")
                        .and_then(|v| v.as_u64())
                        .or_else(|| value.as_u64())
                        .ok_or_else(|| "missing integer \"choice\"".to_string())?
                } else {
                    content
                        .trim()
                        .parse::<u64>()
                        .map_err(|_| "reply is neither JSON nor an index".to_string())?
                };
                match choice {
                    0 => Ok(0),
                    1 => Ok(1),
                    other => Err(format!("choice must be 0 or 1, got {other}")),
                }
            },
        )
    }

    /// Answers from retrieved knowledge triples.
    pub fn final_answer(
        &self,
        question_id: &str,
        question: &str,
        knowledge: &[String],
    ) -> Result<Vec<String>, GatewayError> {
        self.run_structured(
            TaskTag::FinalAnswer,
            question_id,
            prompts::FINAL_ANSWER_SYSTEM,
            prompts::final_answer_user(question, knowledge),
            "{\"answers\": [\"...\"]}",
            |content| string_array(&parse_json_object(content)?, "answers"),
        )
    }

    /// Answers without external knowledge (the fallback path).
    pub fn direct_answer(
        &self,
        question_id: &str,
        question: &str,
    ) -> Result<Vec<String>, GatewayError> {
        self.run_structured(
            TaskTag::DirectAnswer,
            question_id,
            prompts::DIRECT_ANSWER_SYSTEM,
            prompts::direct_answer_user(question),
            "{\"answers\": [\"...\"]}",
            |content| string_array(&parse_json_object(content)?, "answers"),
        )
    }
}
