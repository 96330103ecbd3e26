//! Declarative experiment configuration: one JSON file, flag overrides on top.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use preact_core::envs::{builtin_spec, builtin_specs};
use preact_core::llm::{BudgetedBackend, ChatBackend, LiveBackend, ScriptedPolicy};
use preact_core::{Framework, HistoryPolicy, Retention};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad config file {path}: {message}")]
    BadFile { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
}

/// Trial count and injection knobs for the sampling strategy.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TotConfig {
    /// Candidate turns sampled per round; 1 means the plain loop.
    pub n: usize,
    /// Probability that a turn's predictions are swapped for bank donors.
    pub h: f64,
    /// Prediction bank file, required when `h > 0`.
    pub bank: Option<PathBuf>,
}

impl Default for TotConfig {
    fn default() -> Self {
        TotConfig { n: 1, h: 0.0, bank: None }
    }
}

/// Where completions come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    /// Path to a scripted policy file (rules + default responder).
    Scripted(PathBuf),
    Live(LiveConfig),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiveConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
}

fn default_api_key_env() -> String {
    "OPENAI_API_KEY".to_string()
}

fn default_frameworks() -> Vec<Framework> {
    vec![Framework::PreAct, Framework::ReAct]
}

fn default_modes() -> Vec<String> {
    vec!["0".to_string(), "all".to_string()]
}

fn default_reflexion_trials() -> usize {
    3
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_call_budget() -> u64 {
    1_000_000
}

fn default_workers() -> usize {
    1
}

fn default_max_parse_retries() -> u32 {
    1
}

/// The full experiment grid plus execution knobs. Instances may be exact ids
/// or bare family names; an empty list selects every shipped instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub instances: Vec<String>,
    #[serde(default = "default_frameworks")]
    pub frameworks: Vec<Framework>,
    /// History mode labels: `0`, `1`, or `all`, with an optional `+ref` suffix.
    #[serde(default = "default_modes")]
    pub modes: Vec<String>,
    #[serde(default = "default_reflexion_trials")]
    pub reflexion_trials: usize,
    #[serde(default)]
    pub tot: TotConfig,
    #[serde(default)]
    pub backend: Option<BackendConfig>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_call_budget")]
    pub call_budget: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_max_parse_retries")]
    pub max_parse_retries: u32,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            instances: Vec::new(),
            frameworks: default_frameworks(),
            modes: default_modes(),
            reflexion_trials: default_reflexion_trials(),
            tot: TotConfig::default(),
            backend: None,
            seeds: default_seeds(),
            out_dir: default_out_dir(),
            call_budget: default_call_budget(),
            workers: default_workers(),
            max_parse_retries: default_max_parse_retries(),
        }
    }
}

/// Flag-level overrides; every present field beats the file and the defaults.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub instances: Option<Vec<String>>,
    pub frameworks: Option<Vec<String>>,
    pub modes: Option<Vec<String>>,
    pub reflexion_trials: Option<usize>,
    pub tot_n: Option<usize>,
    pub tot_h: Option<f64>,
    pub bank: Option<PathBuf>,
    pub scripted: Option<PathBuf>,
    pub live_base_url: Option<String>,
    pub live_model: Option<String>,
    pub api_key_env: Option<String>,
    pub seeds: Option<Vec<u64>>,
    pub out_dir: Option<PathBuf>,
    pub call_budget: Option<u64>,
    pub workers: Option<usize>,
    pub max_parse_retries: Option<u32>,
}

pub fn parse_framework(text: &str) -> Result<Framework, ConfigError> {
    match text.to_ascii_lowercase().as_str() {
        "preact" => Ok(Framework::PreAct),
        "react" => Ok(Framework::ReAct),
        "actonly" => Ok(Framework::ActOnly),
        _ => Err(ConfigError::Invalid(format!(
            "unknown framework {text:?}; expected PreAct, ReAct, or ActOnly"
        ))),
    }
}

/// Parses a history mode label such as `0`, `all`, or `1+ref`.
pub fn parse_mode(label: &str) -> Result<HistoryPolicy, ConfigError> {
    let (base, reflections) = match label.strip_suffix("+ref") {
        Some(base) => (base, true),
        None => (label, false),
    };
    let retention = match base {
        "0" => Retention::None,
        "1" => Retention::Last,
        "all" => Retention::All,
        _ => {
            return Err(ConfigError::Invalid(format!(
                "unknown history mode {label:?}; expected 0, 1, or all with an optional +ref suffix"
            )))
        }
    };
    Ok(HistoryPolicy::new(retention, reflections))
}

impl ExperimentConfig {
    /// Loads the file (when given) and layers the overrides on top.
    pub fn load(file: Option<&Path>, overrides: &Overrides) -> Result<Self, ConfigError> {
        let mut config = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| {
                    ConfigError::Unreadable { path: path.to_path_buf(), source }
                })?;
                serde_json::from_str(&text).map_err(|e| ConfigError::BadFile {
                    path: path.to_path_buf(),
                    message: e.to_string(),
                })?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(instances) = &overrides.instances {
            config.instances = instances.clone();
        }
        if let Some(frameworks) = &overrides.frameworks {
            config.frameworks =
                frameworks.iter().map(|f| parse_framework(f)).collect::<Result<_, _>>()?;
        }
        if let Some(modes) = &overrides.modes {
            config.modes = modes.clone();
        }
        if let Some(trials) = overrides.reflexion_trials {
            config.reflexion_trials = trials;
        }
        if let Some(n) = overrides.tot_n {
            config.tot.n = n;
        }
        if let Some(h) = overrides.tot_h {
            config.tot.h = h;
        }
        if let Some(bank) = &overrides.bank {
            config.tot.bank = Some(bank.clone());
        }
        if let Some(script) = &overrides.scripted {
            config.backend = Some(BackendConfig::Scripted(script.clone()));
        } else if overrides.live_base_url.is_some() || overrides.live_model.is_some() {
            let base_url = overrides
                .live_base_url
                .clone()
                .ok_or_else(|| ConfigError::Invalid("--live-model needs --live-base-url".into()))?;
            let model = overrides
                .live_model
                .clone()
                .ok_or_else(|| ConfigError::Invalid("--live-base-url needs --live-model".into()))?;
            let api_key_env =
                overrides.api_key_env.clone().unwrap_or_else(default_api_key_env);
            config.backend = Some(BackendConfig::Live(LiveConfig { base_url, model, api_key_env }));
        }
        if let Some(seeds) = &overrides.seeds {
            config.seeds = seeds.clone();
        }
        if let Some(out_dir) = &overrides.out_dir {
            config.out_dir = out_dir.clone();
        }
        if let Some(budget) = overrides.call_budget {
            config.call_budget = budget;
        }
        if let Some(workers) = overrides.workers {
            config.workers = workers;
        }
        if let Some(retries) = overrides.max_parse_retries {
            config.max_parse_retries = retries;
        }
        Ok(config)
    }

    /// Expands instance selectors into concrete ids, in selector order.
    pub fn resolved_instances(&self) -> Result<Vec<String>, ConfigError> {
        let all = builtin_specs();
        if self.instances.is_empty() {
            return Ok(all.into_iter().map(|s| s.id).collect());
        }
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        for entry in &self.instances {
            let matched: Vec<&str> = if all.iter().any(|s| s.family.to_string() == *entry) {
                all.iter().filter(|s| s.family.to_string() == *entry).map(|s| s.id.as_str()).collect()
            } else if all.iter().any(|s| s.id == *entry) {
                vec![entry.as_str()]
            } else {
                return Err(ConfigError::Invalid(format!(
                    "unknown instance or family {entry:?}"
                )));
            };
            for id in matched {
                if seen.insert(id.to_string()) {
                    out.push(id.to_string());
                }
            }
        }
        Ok(out)
    }

    /// Pre-flight checks shared by the batch commands.
    pub fn validate(&self) -> Result<(), ConfigError> {
        for id in self.resolved_instances()? {
            builtin_spec(&id).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        if self.frameworks.is_empty() {
            return Err(ConfigError::Invalid("frameworks list is empty".into()));
        }
        if self.modes.is_empty() {
            return Err(ConfigError::Invalid("modes list is empty".into()));
        }
        for mode in &self.modes {
            parse_mode(mode)?;
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("seeds list is empty".into()));
        }
        if self.call_budget == 0 {
            return Err(ConfigError::Invalid("call_budget must be positive".into()));
        }
        if self.workers == 0 {
            return Err(ConfigError::Invalid("workers must be at least 1".into()));
        }
        if self.reflexion_trials == 0 {
            return Err(ConfigError::Invalid("reflexion_trials must be at least 1".into()));
        }
        if self.tot.n == 0 {
            return Err(ConfigError::Invalid("tot.n must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.tot.h) {
            return Err(ConfigError::Invalid(format!(
                "tot.h {} outside [0, 1]",
                self.tot.h
            )));
        }
        if self.tot.h > 0.0 && self.tot.bank.is_none() {
            return Err(ConfigError::Invalid("tot.h > 0 requires tot.bank".into()));
        }
        if self.backend.is_none() {
            return Err(ConfigError::Invalid(
                "no backend configured; set \"backend\" in the config or pass --scripted/--live-base-url".into(),
            ));
        }
        Ok(())
    }

    /// Hash of everything that affects produced trajectory bytes. The output
    /// directory and worker count are excluded so relocated or re-parallelized
    /// reruns of one experiment hash identically.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("out_dir");
            map.remove("workers");
        }
        let canonical = serde_json::to_string(&value).expect("value serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        let mut out = String::with_capacity(64);
        for byte in digest {
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }

    /// Builds the configured backend, wrapped with the call budget.
    pub fn build_backend(
        &self,
    ) -> Result<BudgetedBackend<Box<dyn ChatBackend>>, ConfigError> {
        let backend = self
            .backend
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid("no backend configured".into()))?;
        let inner: Box<dyn ChatBackend> = match backend {
            BackendConfig::Scripted(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| {
                    ConfigError::Unreadable { path: path.clone(), source }
                })?;
                Box::new(ScriptedPolicy::from_json(&text).map_err(|message| {
                    ConfigError::BadFile { path: path.clone(), message }
                })?)
            }
            BackendConfig::Live(live) => {
                let key = std::env::var(&live.api_key_env).map_err(|_| {
                    ConfigError::Invalid(format!(
                        "environment variable {} is not set",
                        live.api_key_env
                    ))
                })?;
                Box::new(LiveBackend::new(&live.base_url, &live.model, Some(key)))
            }
        };
        Ok(BudgetedBackend::new(inner, Some(self.call_budget)))
    }
}
