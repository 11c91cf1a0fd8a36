//! Chat providers: a live HTTP client and a scripted transcript replayer.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;

use serde::Deserialize;
use thiserror::Error;

use super::{ChatRequest, TaskTag};

/// Failures while talking to a provider.
#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("transcript exhausted: {key}")]
    TranscriptExhausted { key: String },
    #[error("http request failed: {0}")]
    Http(String),
    #[error("malformed provider response: {0}")]
    Protocol(String),
    #[error("provider configuration: {0}")]
    Config(String),
}

/// Raw provider output: the assistant content plus token usage when the
/// provider reports it.
#[derive(Debug, Clone)]
pub struct ProviderReply {
    pub content: String,
    /// `(input_tokens, output_tokens)`; `None` means the caller estimates.
    pub usage: Option<(u64, u64)>,
}

pub trait Provider: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<ProviderReply, ProviderError>;
}

/// Errors while loading a transcript file.
#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Parse { path: String, reason: String },
}

#[derive(Debug, Deserialize)]
struct RawEntry {
    task: TaskTag,
    response: String,
    usage: RawUsage,
}

#[derive(Debug, Deserialize)]
struct RawUsage {
    input_tokens: u64,
    output_tokens: u64,
}

#[derive(Debug, Clone)]
struct ScriptEntry {
    response: String,
    input_tokens: u64,
    output_tokens: u64,
}

/// Deterministic provider replaying a transcript file. Entries are consumed
/// in file order per `(question_id, task)`; asking beyond the scripted supply
/// is an error that names the exhausted key.
pub struct ScriptedProvider {
    queues: Mutex<BTreeMap<(String, TaskTag), VecDeque<ScriptEntry>>>,
}

impl ScriptedProvider {
    pub fn from_json_str(text: &str, path_label: &str) -> Result<Self, ScriptError> {
        let raw: BTreeMap<String, Vec<RawEntry>> =
            serde_json::from_str(text).map_err(|e| ScriptError::Parse {
                path: path_label.to_string(),
                reason: e.to_string(),
            })?;
        let mut queues: BTreeMap<(String, TaskTag), VecDeque<ScriptEntry>> = BTreeMap::new();
        for (question_id, entries) in raw {
            for entry in entries {
                queues
                    .entry((question_id.clone(), entry.task))
                    .or_default()
                    .push_back(ScriptEntry {
                        response: entry.response,
                        input_tokens: entry.usage.input_tokens,
                        output_tokens: entry.usage.output_tokens,
                    });
            }
        }
        Ok(ScriptedProvider {
            queues: Mutex::new(queues),
        })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ScriptError> {
        let path = path.as_ref();
        let label = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ScriptError::Io {
            path: label.clone(),
            source,
        })?;
        Self::from_json_str(&text, &label)
    }
}

impl Provider for ScriptedProvider {
    fn complete(&self, req: &ChatRequest) -> Result<ProviderReply, ProviderError> {
        let mut queues = self.queues.lock().expect("scripted provider lock");
        let entry = queues
            .get_mut(&(req.question_id.clone(), req.task))
            .and_then(|q| q.pop_front())
            .ok_or_else(|| ProviderError::TranscriptExhausted {
                key: format!("{}/{}", req.question_id, req.task),
            })?;
        Ok(ProviderReply {
            content: entry.response,
            usage: Some((entry.input_tokens, entry.output_tokens)),
        })
    }
}

/// Connection settings for the live provider.
#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
}

impl HttpConfig {
    /// Reads `GG_LLM_BASE_URL`, `GG_LLM_API_KEY` and `GG_LLM_MODEL`.
    pub fn from_env() -> Result<Self, ProviderError> {
        let base_url = std::env::var("GG_LLM_BASE_URL")
            .map_err(|_| ProviderError::Config("GG_LLM_BASE_URL is not set".to_string()))?;
        let model = std::env::var("GG_LLM_MODEL")
            .map_err(|_| ProviderError::Config("GG_LLM_MODEL is not set".to_string()))?;
        Ok(HttpConfig {
            base_url,
            api_key: std::env::var("GG_LLM_API_KEY").ok(),
            model,
        })
    }
}

/// Live provider speaking the chat-completions wire protocol: POST
/// `<base_url>/chat/completions`, content from `choices[0].message.content`,
/// usage from `usage.prompt_tokens` / `usage.completion_tokens`.
pub struct HttpProvider {
    config: HttpConfig,
}

impl HttpProvider {
    pub fn new(config: HttpConfig) -> Self {
        HttpProvider { config }
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }
}

impl Provider for HttpProvider {
    fn complete(&self, req: &ChatRequest) -> Result<ProviderReply, ProviderError> {
        let body = serde_json::json!({
            "model": self.config.model,
            "messages": req.messages,
            "temperature": req.temperature,
        });
        let mut http = ureq::post(self.endpoint())
            .header("content-type", "application/json");
        if let Some(key) = &self.config.api_key {
            http = http.header("authorization", format!("Bearer {key}"));
        }
        let mut response = http
            .send(body.to_string())
            .map_err(|e| ProviderError::Http(e.to_string()))?;
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderError::Http(e.to_string()))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| ProviderError::Protocol(format!("invalid JSON body: {e}")))?;

        let content = value
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .ok_or_else(|| {
                ProviderError::Protocol("missing choices[0].message.content".to_string())
            })?
            .to_string();
        let usage = match (
            value.pointer("/usage/prompt_tokens").and_then(|v| v.as_u64()),
            value
                .pointer("/usage/completion_tokens")
                .and_then(|v| v.as_u64()),
        ) {
            (Some(input), Some(output)) => Some((input, output)),
            _ => None,
        };
        Ok(ProviderReply { content, usage })
    }
}
