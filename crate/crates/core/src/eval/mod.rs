//! Evaluation harness: (backend × taskset × method × alpha × temperature)
//! grids, the strong-prior detection report, and the synthetic mixture
//! simulation.

pub mod report;
pub mod simulate;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::cache::CacheStats;
use crate::backend::remote::{RemoteBackend, RemoteBackendConfig};
use crate::backend::LogitProvider;
use crate::error::{CoreError, Result};
use crate::logits::{logits_to_distribution, merge_topk, Temperature};
use crate::mixture::{detect_strong_prior, DEFAULT_EPSILON};
use crate::prompt::{weaken, WeakeningMethod};
use crate::strong_priors;
use crate::taskset::{
    generate_strong_local_priors, load_taskset, score_instance_grid, TaskSet, TaskSetName,
};
use crate::util::now_rfc3339;

/// Default instance count for the generated strong-local-priors set: one
/// full pass over the catalog.
pub const DEFAULT_TASKSET_COUNT: usize = 110;

/// Which logit source to evaluate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BackendSpec {
    /// The shipped n-gram model trained on the strong-local-priors corpus.
    Toy,
    Remote(RemoteBackendConfig),
}

impl BackendSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            BackendSpec::Toy => Ok(()),
            BackendSpec::Remote(cfg) => cfg.validate(),
        }
    }

    pub fn build(&self) -> Result<Box<dyn LogitProvider>> {
        match self {
            BackendSpec::Toy => Ok(Box::new(strong_priors::toy_backend())),
            BackendSpec::Remote(cfg) => Ok(Box::new(RemoteBackend::new(cfg.clone())?)),
        }
    }
}

/// The alpha grid used when none is configured: -2.0 to 3.0 in steps of
/// 0.5, which includes the headline values 0, 1 and 2.
pub fn default_alpha_grid() -> Vec<f64> {
    let mut grid: Vec<f64> = (-4..=6).map(|i| i as f64 * 0.5).collect();
    for headline in [0.0, 1.0, 2.0] {
        if !grid.contains(&headline) {
            grid.push(headline);
        }
    }
    grid.sort_by(f64::total_cmp);
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub backend: BackendSpec,
    pub tasksets: Vec<TaskSetName>,
    /// Dataset files by name; strong-local-priors falls back to the
    /// generator when no path is given, every other set requires one.
    #[serde(default)]
    pub taskset_paths: BTreeMap<TaskSetName, PathBuf>,
    /// Instance count for the generated strong-local-priors set.
    pub taskset_count: usize,
    pub alphas: Vec<f64>,
    pub temperatures: Vec<f64>,
    pub methods: Vec<WeakeningMethod>,
    pub seed: u64,
    /// Strong-prior detector threshold.
    pub epsilon: f64,
    /// Report destination; None means standard output.
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            backend: BackendSpec::Toy,
            tasksets: vec![TaskSetName::StrongLocalPriors],
            taskset_paths: BTreeMap::new(),
            taskset_count: DEFAULT_TASKSET_COUNT,
            alphas: default_alpha_grid(),
            temperatures: vec![1.0],
            methods: vec![WeakeningMethod::StripTask],
            seed: 0,
            epsilon: DEFAULT_EPSILON,
            out: None,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        self.backend.validate()?;
        if self.tasksets.is_empty() {
            return Err(CoreError::EmptyInput("tasksets"));
        }
        if self.taskset_count < 1 {
            return Err(CoreError::invalid_parameter(
                "taskset_count",
                "must be at least 1",
            ));
        }
        if self.alphas.is_empty() {
            return Err(CoreError::EmptyInput("alphas"));
        }
        for &alpha in &self.alphas {
            if !alpha.is_finite() {
                return Err(CoreError::invalid_parameter(
                    "alphas",
                    format!("must be finite, got {alpha}"),
                ));
            }
        }
        if self.temperatures.is_empty() {
            return Err(CoreError::EmptyInput("temperatures"));
        }
        for &t in &self.temperatures {
            Temperature::new(t)?;
        }
        if self.methods.is_empty() {
            return Err(CoreError::EmptyInput("methods"));
        }
        for method in &self.methods {
            method.validate()?;
        }
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return Err(CoreError::invalid_parameter(
                "epsilon",
                format!("must be finite and > 0, got {}", self.epsilon),
            ));
        }
        Ok(())
    }

    /// Loads or generates every configured taskset, in config order.
    pub fn resolve_tasksets(&self) -> Result<Vec<TaskSet>> {
        self.tasksets
            .iter()
            .map(|name| match self.taskset_paths.get(name) {
                Some(path) => {
                    let set = load_taskset(path)?;
                    if set.name != *name {
                        return Err(CoreError::invalid_parameter(
                            "taskset_paths",
                            format!("{} holds taskset {:?}, expected {name}", path.display(), set.name.as_str()),
                        ));
                    }
                    Ok(set)
                }
                None if *name == TaskSetName::StrongLocalPriors => {
                    generate_strong_local_priors(self.seed, self.taskset_count)
                }
                None => Err(CoreError::invalid_parameter(
                    "taskset_paths",
                    format!("taskset {name} needs a dataset file (only strong-local-priors can be generated)"),
                )),
            })
            .collect()
    }
}

/// One instance's outcome inside a record: a score, or the error that
/// prevented one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceScore {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One grid cell: every instance of one taskset scored at one
/// (method, alpha, temperature) under one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub model: String,
    pub taskset: TaskSetName,
    /// Weakening method label (`strip-task` / `system-prompt`).
    pub method: String,
    pub alpha: f64,
    pub temperature: f64,
    /// Arithmetic mean over the scored instances (0 when none scored).
    pub mean_pcc: f64,
    /// Per-instance outcomes, sorted by instance id.
    pub scores: Vec<InstanceScore>,
    pub seed: u64,
    pub started_at: String,
    pub finished_at: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache: Option<CacheStats>,
    /// True when any instance failed or the run was canceled mid-cell.
    pub incomplete: bool,
}

impl EvalRecord {
    pub fn recompute_mean(scores: &[InstanceScore]) -> f64 {
        let scored: Vec<f64> = scores.iter().filter_map(|s| s.score).collect();
        if scored.is_empty() {
            0.0
        } else {
            scored.iter().sum::<f64>() / scored.len() as f64
        }
    }
}

/// Runs the whole grid. See [`run_grid_with_cancel`].
pub fn run_grid(cfg: &EvalConfig) -> Result<Vec<EvalRecord>> {
    run_grid_with_cancel(cfg, &AtomicBool::new(false))
}

/// Runs the (taskset × method × alpha × temperature) grid against the
/// configured backend.
///
/// Each (taskset, method) pair walks its instances once, reusing the logit
/// trace across the whole alpha/temperature grid, so backend cost does not
/// grow with grid size. Instances run in parallel on the current rayon
/// pool; outcomes are reassembled in instance-id order, so the result is
/// independent of scheduling.
///
/// A failed instance is recorded with its error instead of aborting the
/// grid; the affected records are flagged incomplete. When `cancel` becomes
/// true, remaining instances and cells are marked canceled and whatever was
/// already computed is returned, so callers can flush partial results.
pub fn run_grid_with_cancel(cfg: &EvalConfig, cancel: &AtomicBool) -> Result<Vec<EvalRecord>> {
    cfg.validate()?;
    let tasksets = cfg.resolve_tasksets()?;
    let provider = cfg.backend.build()?;
    let temps: Vec<Temperature> = cfg
        .temperatures
        .iter()
        .map(|&t| Temperature::new(t))
        .collect::<Result<_>>()?;

    // Per instance: its id and either grid[alpha][temp] scores or the error
    // message that prevented them.
    type InstanceOutcome = (String, std::result::Result<Vec<Vec<f64>>, String>);

    let mut records = Vec::new();
    for set in &tasksets {
        for method in &cfg.methods {
            let started_at = now_rfc3339();
            let outcomes: Vec<InstanceOutcome> = set
                .instances
                .par_iter()
                .map(|instance| {
                    if cancel.load(Ordering::Relaxed) {
                        return (instance.id.clone(), Err(CoreError::Canceled.to_string()));
                    }
                    let grid = score_instance_grid(
                        provider.as_ref(),
                        instance,
                        method,
                        &cfg.alphas,
                        &temps,
                    );
                    (instance.id.clone(), grid.map_err(|e| e.to_string()))
                })
                .collect();
            let finished_at = now_rfc3339();

            for (ai, &alpha) in cfg.alphas.iter().enumerate() {
                for (ti, &temperature) in cfg.temperatures.iter().enumerate() {
                    let mut scores: Vec<InstanceScore> = outcomes
                        .iter()
                        .map(|(id, outcome)| match outcome {
                            Ok(grid) => InstanceScore {
                                id: id.clone(),
                                score: Some(grid[ai][ti]),
                                error: None,
                            },
                            Err(message) => InstanceScore {
                                id: id.clone(),
                                score: None,
                                error: Some(message.clone()),
                            },
                        })
                        .collect();
                    scores.sort_by(|a, b| a.id.cmp(&b.id));
                    let incomplete = scores.iter().any(|s| s.score.is_none());
                    records.push(EvalRecord {
                        model: provider.model_id(),
                        taskset: set.name,
                        method: method.label().to_owned(),
                        alpha,
                        temperature,
                        mean_pcc: EvalRecord::recompute_mean(&scores),
                        scores,
                        seed: cfg.seed,
                        started_at: started_at.clone(),
                        finished_at: finished_at.clone(),
                        cache: provider.cache_stats(),
                        incomplete,
                    });
                }
            }
            if cancel.load(Ordering::Relaxed) {
                return Ok(records);
            }
        }
    }
    Ok(records)
}

/// One instance's strong-prior check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectRecord {
    pub id: String,
    /// Total variation distance between the full-prompt and data-only
    /// next-token distributions at the first completion position.
    pub delta: f64,
    pub is_strong: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectReport {
    pub model: String,
    pub taskset: TaskSetName,
    pub epsilon: f64,
    /// Sorted by instance id.
    pub records: Vec<DetectRecord>,
    pub fraction_flagged: f64,
}

/// Checks every instance of a taskset for a strong local prior by comparing
/// the next-token distribution of the full prompt with that of the data
/// part alone.
pub fn detect_priors_report(
    provider: &dyn LogitProvider,
    taskset: &TaskSet,
    epsilon: f64,
) -> Result<DetectReport> {
    taskset.validate()?;
    let unit = Temperature::new(1.0).expect("constant");
    let mut records = Vec::with_capacity(taskset.instances.len());
    for instance in &taskset.instances {
        let with_id = CoreError::for_instance(&instance.id);
        let full = provider
            .next_logits(&instance.split.reconstruct())
            .map_err(with_id)?;
        let with_id = CoreError::for_instance(&instance.id);
        let weak = provider
            .next_logits(&weaken(&instance.split, &WeakeningMethod::StripTask))
            .map_err(with_id)?;
        let (full, weak) = merge_topk(&full, &weak)?;
        let p_full = logits_to_distribution(&full, unit)?;
        let p_weak = logits_to_distribution(&weak, unit)?;
        let check = detect_strong_prior(&p_full, &p_weak, epsilon)?;
        records.push(DetectRecord {
            id: instance.id.clone(),
            delta: check.delta,
            is_strong: check.is_strong,
        });
    }
    records.sort_by(|a, b| a.id.cmp(&b.id));
    let flagged = records.iter().filter(|r| r.is_strong).count();
    Ok(DetectReport {
        model: provider.model_id(),
        taskset: taskset.name,
        epsilon,
        fraction_flagged: flagged as f64 / records.len() as f64,
        records,
    })
}
