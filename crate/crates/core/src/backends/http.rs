//! Client for OpenAI-compatible `/embeddings` and `/chat/completions`
//! endpoints.
//!
//! The wire layer sits behind [`Transport`] so tests can inject a fake
//! server. Requests are retried up to three times with exponential backoff
//! on transport failures and 5xx responses; 4xx responses fail immediately.

use std::sync::Arc;
use std::thread;
use std::time::Duration;

use log::{debug, warn};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};

use super::mock::truncate_tokens;
use super::templates::{render, PromptTemplates};
use super::{pool, BackendConfig, EmbeddingVector, Embedder, Reasoner, ReasoningRequest, Summarizer};

pub const MAX_ATTEMPTS: usize = 3;
pub const DEFAULT_BACKOFF: Duration = Duration::from_millis(250);

#[derive(Debug, Clone)]
pub struct HttpRequest<'a> {
    pub url: &'a str,
    pub api_key: Option<&'a str>,
    pub body: &'a Value,
    pub timeout: Duration,
}

#[derive(Debug, Clone)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

pub trait Transport: Send + Sync {
    /// POSTs a JSON body. `Err` means no HTTP response was received.
    fn post_json(&self, request: &HttpRequest<'_>) -> std::result::Result<HttpResponse, String>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new() -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| Error::Config(format!("cannot build http client: {e}")))?;
        Ok(Self { client })
    }
}

impl Transport for ReqwestTransport {
    fn post_json(&self, request: &HttpRequest<'_>) -> std::result::Result<HttpResponse, String> {
        let mut builder = self.client.post(request.url).timeout(request.timeout).json(request.body);
        if let Some(key) = request.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| e.to_string())?;
        let status = response.status().as_u16();
        let body = response.text().map_err(|e| e.to_string())?;
        Ok(HttpResponse { status, body })
    }
}

pub struct OpenAiClient {
    config: BackendConfig,
    transport: Arc<dyn Transport>,
    templates: PromptTemplates,
    api_key: Option<String>,
    backoff: Duration,
    batch_size: usize,
    reasoning_max_tokens: usize,
}

impl OpenAiClient {
    pub fn new(
        config: BackendConfig,
        transport: Arc<dyn Transport>,
        templates: PromptTemplates,
    ) -> Result<Self> {
        config.validate()?;
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        Ok(Self {
            config,
            transport,
            templates,
            api_key,
            backoff: DEFAULT_BACKOFF,
            batch_size: 16,
            reasoning_max_tokens: 256,
        })
    }

    pub fn with_backoff(mut self, base: Duration) -> Self {
        self.backoff = base;
        self
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn with_batch_size(mut self, n: usize) -> Self {
        self.batch_size = n.max(1);
        self
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.config.endpoint_url.trim_end_matches('/'), path)
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value> {
        let url = self.url(path);
        let timeout = Duration::from_millis(self.config.timeout_ms);
        let auth = if self.api_key.is_some() { "Bearer [REDACTED]" } else { "none" };
        let mut last = None;
        for attempt in 0..MAX_ATTEMPTS {
            if attempt > 0 {
                thread::sleep(self.backoff * (1 << (attempt - 1)));
            }
            debug!("POST {url} (attempt {}) authorization={auth} body={body}", attempt + 1);
            let request = HttpRequest { url: &url, api_key: self.api_key.as_deref(), body, timeout };
            let err = match self.transport.post_json(&request) {
                Ok(resp) if (200..300).contains(&resp.status) => {
                    debug!("{url} -> {} body={}", resp.status, resp.body);
                    return serde_json::from_str(&resp.body).map_err(|e| Error::Backend {
                        status: Some(resp.status),
                        retryable: false,
                        message: format!("unparseable response body: {e}"),
                    });
                }
                Ok(resp) => Error::Backend {
                    status: Some(resp.status),
                    retryable: resp.status >= 500,
                    message: resp.body,
                },
                Err(message) => Error::Backend { status: None, retryable: true, message },
            };
            if !err.is_retryable() {
                return Err(err);
            }
            warn!("{url} attempt {} failed: {err}", attempt + 1);
            last = Some(err);
        }
        Err(last.expect("at least one attempt is made"))
    }

    fn embed_many(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        if let Some(i) = texts.iter().position(|t| t.is_empty()) {
            return Err(Error::BatchItem { index: i, source: Box::new(Error::input("empty text")) });
        }
        let body = json!({ "model": self.config.model_name, "input": texts });
        let value = self.post("embeddings", &body)?;
        let parsed: EmbeddingResponse = serde_json::from_value(value).map_err(|e| Error::Backend {
            status: None,
            retryable: false,
            message: format!("malformed embeddings response: {e}"),
        })?;
        let mut slots: Vec<Option<Vec<f64>>> = vec![None; texts.len()];
        for (pos, item) in parsed.data.into_iter().enumerate() {
            let i = item.index.unwrap_or(pos);
            if let Some(slot) = slots.get_mut(i) {
                *slot = Some(item.embedding);
            }
        }
        slots
            .into_iter()
            .map(|s| {
                s.ok_or_else(|| Error::Backend {
                    status: None,
                    retryable: false,
                    message: "embeddings response is missing an item".into(),
                })
                .and_then(EmbeddingVector::normalized)
            })
            .collect()
    }

    fn chat(&self, prompt: &str, max_tokens: usize) -> Result<String> {
        let body = json!({
            "model": self.config.chat_model(),
            "messages": [{ "role": "user", "content": prompt }],
            "max_tokens": max_tokens,
            "temperature": 0.0,
        });
        let value = self.post("chat/completions", &body)?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(|s| s.trim().to_string())
            .ok_or_else(|| Error::Backend {
                status: None,
                retryable: false,
                message: "chat response has no choices[0].message.content".into(),
            })
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    embedding: Vec<f64>,
    index: Option<usize>,
}

impl Embedder for OpenAiClient {
    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        if text.is_empty() {
            return Err(Error::input("cannot embed empty text"));
        }
        Ok(self.embed_many(&[text])?.remove(0))
    }

    fn max_concurrent(&self) -> usize {
        self.config.max_concurrent
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        let batches: Vec<&[&str]> = texts.chunks(self.batch_size).collect();
        let results = pool::map(&batches, self.config.max_concurrent, |_, b| self.embed_many(b));
        let mut out = Vec::with_capacity(texts.len());
        for (b, r) in results.into_iter().enumerate() {
            let offset = b * self.batch_size;
            match r {
                Ok(vs) => out.extend(vs),
                Err(Error::BatchItem { index, source }) => {
                    return Err(Error::BatchItem { index: offset + index, source })
                }
                Err(e) => return Err(Error::BatchItem { index: offset, source: Box::new(e) }),
            }
        }
        Ok(out)
    }
}

impl Summarizer for OpenAiClient {
    fn summarize(&self, texts: &[&str], max_len: usize) -> Result<String> {
        if texts.is_empty() {
            return Err(Error::input("nothing to summarize"));
        }
        let joined = texts.join("\n\n");
        let prompt = render(
            &self.templates.summarize,
            &[("texts", &joined), ("max_len", &max_len.to_string())],
        );
        let raw = self.chat(&prompt, max_len * 2)?;
        let (text, truncated) = truncate_tokens(&raw, max_len);
        if truncated {
            warn!("summary exceeded {max_len} tokens and was truncated");
        }
        Ok(text)
    }

    fn max_concurrent(&self) -> usize {
        self.config.max_concurrent
    }
}

impl Reasoner for OpenAiClient {
    fn name(&self) -> &str {
        self.config.chat_model()
    }

    fn reason(&self, request: &ReasoningRequest<'_>) -> Result<String> {
        let context = request
            .context
            .iter()
            .enumerate()
            .map(|(i, c)| format!("[{}] {}", i + 1, c))
            .collect::<Vec<_>>()
            .join("\n");
        let prompt = render(
            &self.templates.reasoning,
            &[("question", request.question), ("context", &context), ("answer", request.answer)],
        );
        self.chat(&prompt, self.reasoning_max_tokens)
    }
}
