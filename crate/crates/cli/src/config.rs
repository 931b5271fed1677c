//! One flat key space shared by the TOML config file and the command line.
//! Flags override file values; field names match flag names exactly.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use extrap_core::backend::remote::RemoteBackendConfig;
use extrap_core::eval::{BackendSpec, EvalConfig, DEFAULT_TASKSET_COUNT};
use extrap_core::taskset::TaskSetName;
use extrap_core::{CoreError, Result, WeakeningMethod, DEFAULT_EPSILON};

/// Every setting the tool understands. All fields are optional here;
/// commands fill in their own defaults and echo the resolved result.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct Settings {
    /// Logit backend: "toy" or "remote".
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backend: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// Environment variable that holds the API key; the key itself never
    /// appears in configuration or output.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_logprobs: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_concurrent: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_attempts: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backoff_base_ms: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub end_of_text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tasksets: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub taskset_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alphas: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperatures: Option<Vec<f64>>,
    /// Prompt weakening method: "strip" or "system".
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub system_prompt: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vocab_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_star: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub taskset_paths: Option<BTreeMap<String, PathBuf>>,
}

impl Settings {
    /// Values set in `self` win over `base`.
    pub fn or(self, base: Settings) -> Settings {
        Settings {
            backend: self.backend.or(base.backend),
            base_url: self.base_url.or(base.base_url),
            model: self.model.or(base.model),
            api_key_env: self.api_key_env.or(base.api_key_env),
            cache_dir: self.cache_dir.or(base.cache_dir),
            top_logprobs: self.top_logprobs.or(base.top_logprobs),
            max_concurrent: self.max_concurrent.or(base.max_concurrent),
            max_attempts: self.max_attempts.or(base.max_attempts),
            backoff_base_ms: self.backoff_base_ms.or(base.backoff_base_ms),
            end_of_text: self.end_of_text.or(base.end_of_text),
            tasksets: self.tasksets.or(base.tasksets),
            taskset_count: self.taskset_count.or(base.taskset_count),
            alphas: self.alphas.or(base.alphas),
            temperatures: self.temperatures.or(base.temperatures),
            method: self.method.or(base.method),
            system_prompt: self.system_prompt.or(base.system_prompt),
            seed: self.seed.or(base.seed),
            epsilon: self.epsilon.or(base.epsilon),
            format: self.format.or(base.format),
            out: self.out.or(base.out),
            vocab_size: self.vocab_size.or(base.vocab_size),
            gamma_star: self.gamma_star.or(base.gamma_star),
            sigma: self.sigma.or(base.sigma),
            trials: self.trials.or(base.trials),
            taskset_paths: self.taskset_paths.or(base.taskset_paths),
        }
    }
}

pub fn load_settings(path: &Path) -> Result<Settings> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    toml::from_str(&text).map_err(|e| {
        CoreError::invalid_parameter("config", format!("{}: {e}", path.display()))
    })
}

pub fn backend_spec(s: &Settings) -> Result<BackendSpec> {
    match s.backend.as_deref().unwrap_or("toy") {
        "toy" => Ok(BackendSpec::Toy),
        "remote" => {
            let base_url = s.base_url.clone().ok_or_else(|| {
                CoreError::invalid_parameter("base-url", "the remote backend needs --base-url")
            })?;
            let model = s.model.clone().ok_or_else(|| {
                CoreError::invalid_parameter("model", "the remote backend needs --model")
            })?;
            let mut cfg = RemoteBackendConfig::new(base_url, model);
            if let Some(v) = s.top_logprobs {
                cfg.top_logprobs = v;
            }
            if let Some(v) = s.max_concurrent {
                cfg.max_concurrent = v;
            }
            if let Some(v) = s.max_attempts {
                cfg.max_attempts = v;
            }
            if let Some(v) = s.backoff_base_ms {
                cfg.backoff_base_ms = v;
            }
            cfg.api_key_env = s.api_key_env.clone();
            cfg.cache_dir = s.cache_dir.clone();
            cfg.end_of_text = s.end_of_text.clone();
            Ok(BackendSpec::Remote(cfg))
        }
        other => Err(CoreError::invalid_parameter(
            "backend",
            format!("unknown backend {other:?}; expected toy or remote"),
        )),
    }
}

pub fn weakening_method(s: &Settings) -> Result<WeakeningMethod> {
    match s.method.as_deref().unwrap_or("strip") {
        "strip" => Ok(WeakeningMethod::StripTask),
        "system" => Ok(match &s.system_prompt {
            Some(text) => WeakeningMethod::SystemPrompt {
                system_text: text.clone(),
            },
            None => WeakeningMethod::system_default(),
        }),
        other => Err(CoreError::invalid_parameter(
            "method",
            format!("unknown method {other:?}; expected strip or system"),
        )),
    }
}

/// Builds the harness configuration from fully resolved settings.
pub fn eval_config(s: &Settings) -> Result<EvalConfig> {
    let tasksets: Vec<TaskSetName> = match &s.tasksets {
        Some(list) if !list.is_empty() => list
            .iter()
            .map(|name| name.parse())
            .collect::<Result<_>>()?,
        _ => vec![TaskSetName::StrongLocalPriors],
    };
    let mut taskset_paths = BTreeMap::new();
    if let Some(map) = &s.taskset_paths {
        for (name, path) in map {
            taskset_paths.insert(name.parse::<TaskSetName>()?, path.clone());
        }
    }
    Ok(EvalConfig {
        backend: backend_spec(s)?,
        tasksets,
        taskset_paths,
        taskset_count: s.taskset_count.unwrap_or(DEFAULT_TASKSET_COUNT),
        alphas: s.alphas.clone().unwrap_or_else(|| vec![0.0, 1.0, 2.0]),
        temperatures: s.temperatures.clone().unwrap_or_else(|| vec![1.0]),
        methods: vec![weakening_method(s)?],
        seed: s.seed.unwrap_or(0),
        epsilon: s.epsilon.unwrap_or(DEFAULT_EPSILON),
        out: s.out.clone(),
    })
}
