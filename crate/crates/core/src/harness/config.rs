//! Layered settings: defaults, then a TOML file, then `STRATA_*`
//! environment variables. Command-line flags are applied last by the
//! caller.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backends::{BackendConfig, BackendKind, PromptTemplates};
use crate::docmodel::BuildConfig;
use crate::error::{Error, Result};
use crate::prefsynth::SynthConfig;

pub const ENV_PREFIX: &str = "STRATA_";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub build: BuildConfig,
    pub backend: BackendConfig,
    pub synth: SynthConfig,
    /// Directory holding `summarize.txt` / `reasoning.txt` overrides.
    pub templates_dir: Option<PathBuf>,
}

impl Settings {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Defaults, overlaid by `file` when given, then by `env`.
    pub fn layered(file: Option<&Path>, env: &HashMap<String, String>) -> Result<Self> {
        let mut s = match file {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        s.apply_env(env)?;
        Ok(s)
    }

    /// Reads the process environment.
    pub fn from_process(file: Option<&Path>) -> Result<Self> {
        let env: HashMap<String, String> = std::env::vars().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        Self::layered(file, &env)
    }

    pub fn apply_env(&mut self, env: &HashMap<String, String>) -> Result<()> {
        let get = |name: &str| env.get(&format!("{ENV_PREFIX}{name}")).map(String::as_str);
        let b = &mut self.build;
        set(&mut b.large, get("LARGE"), "LARGE")?;
        set(&mut b.small, get("SMALL"), "SMALL")?;
        set(&mut b.n_layers, get("LAYERS"), "LAYERS")?;
        set(&mut b.tau, get("TAU"), "TAU")?;
        set(&mut b.k_edges, get("K_EDGES"), "K_EDGES")?;
        set(&mut b.top_k_retrieval, get("TOP_K"), "TOP_K")?;
        set(&mut b.resolution, get("RESOLUTION"), "RESOLUTION")?;
        set(&mut b.seed, get("SEED"), "SEED")?;
        let k = &mut self.backend;
        if let Some(v) = get("BACKEND") {
            k.kind = parse_backend(v)?;
        }
        if let Some(v) = get("ENDPOINT_URL") {
            k.endpoint_url = v.to_string();
        }
        if let Some(v) = get("MODEL") {
            k.model_name = v.to_string();
        }
        if let Some(v) = get("CHAT_MODEL") {
            k.chat_model_name = Some(v.to_string());
        }
        if let Some(v) = get("API_KEY_ENV") {
            k.api_key_env = v.to_string();
        }
        set(&mut k.timeout_ms, get("TIMEOUT_MS"), "TIMEOUT_MS")?;
        set(&mut k.max_concurrent, get("MAX_CONCURRENT"), "MAX_CONCURRENT")?;
        if let Some(v) = get("TEMPLATES_DIR") {
            self.templates_dir = Some(PathBuf::from(v));
        }
        Ok(())
    }

    pub fn templates(&self) -> Result<PromptTemplates> {
        match &self.templates_dir {
            Some(dir) => PromptTemplates::load_dir(dir),
            None => Ok(PromptTemplates::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.build.validate()?;
        self.backend.validate()
    }
}

pub fn parse_backend(v: &str) -> Result<BackendKind> {
    match v.to_ascii_lowercase().as_str() {
        "mock" => Ok(BackendKind::Mock),
        "http" => Ok(BackendKind::Http),
        other => Err(Error::Config(format!("unknown backend {other:?} (expected mock or http)"))),
    }
}

fn set<T: FromStr>(slot: &mut T, value: Option<&str>, name: &str) -> Result<()>
where
    T::Err: std::fmt::Display,
{
    if let Some(v) = value {
        *slot = v.trim().parse().map_err(|e| Error::Config(format!("{ENV_PREFIX}{name}={v:?}: {e}")))?;
    }
    Ok(())
}
