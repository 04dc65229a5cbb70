//! Embedding, summarization and reasoning providers.
//!
//! Everything downstream talks to the [`Embedder`], [`Summarizer`] and
//! [`Reasoner`] traits. Two implementations ship: a deterministic
//! [`mock::MockBackend`] and an OpenAI-compatible [`http::OpenAiClient`].

pub mod http;
pub mod mock;
pub mod pool;
pub mod templates;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use http::{HttpRequest, HttpResponse, OpenAiClient, ReqwestTransport, Transport};
pub use mock::MockBackend;
pub use templates::PromptTemplates;

/// Unit-norm embedding. Construction normalizes, so every vector handed
/// out by a backend satisfies `|v| = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn normalized(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::input("embedding must have positive dimension"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("embedding contains non-finite values"));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::input("cannot normalize a zero vector"));
        }
        values.iter_mut().for_each(|v| *v /= norm);
        Ok(Self { values })
    }

    /// Wraps values that are already unit norm, without rescaling. Used when
    /// restoring persisted vectors bit-for-bit.
    pub fn from_unit(values: Vec<f64>) -> Result<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if values.is_empty() || (norm - 1.0).abs() > 1e-9 {
            return Err(Error::input(format!("vector is not unit norm (|v| = {norm})")));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector>;

    /// Upper bound on concurrent `embed` calls issued by `embed_batch`.
    fn max_concurrent(&self) -> usize {
        1
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        let results = pool::map(texts, self.max_concurrent(), |_, t| self.embed(t));
        pool::collect_indexed(results)
    }
}

pub trait Summarizer: Send + Sync {
    /// Returns a summary of `texts` no longer than `max_len` tokens.
    fn summarize(&self, texts: &[&str], max_len: usize) -> Result<String>;

    fn max_concurrent(&self) -> usize {
        1
    }
}

/// Inputs for one chain-of-thought explanation request.
#[derive(Debug, Clone)]
pub struct ReasoningRequest<'a> {
    pub question: &'a str,
    pub context: &'a [String],
    pub answer: &'a str,
}

/// Produces a reasoning explanation that justifies a known answer.
pub trait Reasoner: Send + Sync {
    fn name(&self) -> &str;

    fn reason(&self, request: &ReasoningRequest<'_>) -> Result<String>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint_url: String,
    /// Embedding model.
    pub model_name: String,
    /// Chat model used for summaries and reasoning; falls back to `model_name`.
    pub chat_model_name: Option<String>,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_ms: u64,
    pub max_concurrent: usize,
    pub mock_dim: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            endpoint_url: String::new(),
            model_name: "bge-m3".to_string(),
            chat_model_name: None,
            api_key_env: "OPENAI_API_KEY".to_string(),
            timeout_ms: 60_000,
            max_concurrent: 4,
            mock_dim: 64,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kind == BackendKind::Http && self.endpoint_url.trim().is_empty() {
            return Err(Error::Config("http backend requires endpoint_url".into()));
        }
        if self.timeout_ms == 0 || self.max_concurrent == 0 || self.mock_dim == 0 {
            return Err(Error::Config(
                "timeout_ms, max_concurrent and mock_dim must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn chat_model(&self) -> &str {
        self.chat_model_name.as_deref().unwrap_or(&self.model_name)
    }
}

/// The three roles a build or synthesis run needs, resolved from config.
#[derive(Clone)]
pub struct Backends {
    pub embedder: Arc<dyn Embedder>,
    pub summarizer: Arc<dyn Summarizer>,
    pub reasoner: Arc<dyn Reasoner>,
}

impl Backends {
    pub fn from_config(config: &BackendConfig, templates: PromptTemplates) -> Result<Self> {
        config.validate()?;
        Ok(match config.kind {
            BackendKind::Mock => {
                let mock = Arc::new(MockBackend::new(config.mock_dim, config.max_concurrent));
                Self { embedder: mock.clone(), summarizer: mock.clone(), reasoner: mock }
            }
            BackendKind::Http => {
                let transport = Arc::new(ReqwestTransport::new()?);
                let client = Arc::new(OpenAiClient::new(config.clone(), transport, templates)?);
                Self { embedder: client.clone(), summarizer: client.clone(), reasoner: client }
            }
        })
    }
}
