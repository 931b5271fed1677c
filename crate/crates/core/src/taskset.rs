//! Benchmark instances: the schema, a JSONL loader/saver, the deterministic
//! strong-local-priors generator, and class scoring.
//!
//! A dataset file is one JSON object per line. The first line is a header
//! carrying the format tag, the set name, the split rule, and generator
//! metadata; every following line is one instance. Instances may ship a raw
//! `prompt` (split with the set's rule at load time) or pre-split
//! `task`/`data` fields, which take precedence.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::LogitProvider;
use crate::error::{CoreError, Result};
use crate::logits::{
    extrapolate, logits_to_distribution, merge_topk, LogitVector, Temperature, Token,
};
use crate::prompt::{
    builtin_rules, split_prompt_compiled, weaken, SplitPrompt, SplitRule, WeakeningMethod,
};
use crate::strong_priors::{self, CatalogEntry};

/// Format tag expected on the header line of dataset files.
pub const TASKSET_FORMAT: &str = "taskset-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoringMode {
    /// Score of the answer class, normalized over all listed classes.
    #[default]
    NormalizedClasses,
    /// One minus the normalized mass of the forbidden classes.
    ComplementOfForbidden,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskSetName {
    PromptInjection,
    PatternMatchSuppression,
    Redefine,
    StrongLocalPriors,
}

impl TaskSetName {
    pub const ALL: [TaskSetName; 4] = [
        TaskSetName::PromptInjection,
        TaskSetName::PatternMatchSuppression,
        TaskSetName::Redefine,
        TaskSetName::StrongLocalPriors,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TaskSetName::PromptInjection => "prompt-injection",
            TaskSetName::PatternMatchSuppression => "pattern-match-suppression",
            TaskSetName::Redefine => "redefine",
            TaskSetName::StrongLocalPriors => "strong-local-priors",
        }
    }

    /// The shipped split rule for this dataset shape.
    pub fn split_rule(&self) -> SplitRule {
        builtin_rules()
            .into_iter()
            .find(|r| r.dataset == self.as_str())
            .expect("every dataset name has a builtin rule")
    }
}

impl fmt::Display for TaskSetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskSetName {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|n| n.as_str()).collect();
                CoreError::invalid_parameter(
                    "taskset",
                    format!("unknown taskset {s:?}; expected one of {}", names.join(", ")),
                )
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    pub split: SplitPrompt,
    /// Candidate completions, scored with their leading whitespace intact.
    pub classes: Vec<String>,
    /// Index of the correct class; required in normalized mode.
    pub answer_index: Option<usize>,
    pub scoring_mode: ScoringMode,
    /// Completions to avoid; complement mode only, each must be a listed
    /// class.
    pub forbidden: Vec<String>,
}

impl TaskInstance {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(CoreError::EmptyInput("classes"));
        }
        let distinct: BTreeSet<&str> = self.classes.iter().map(String::as_str).collect();
        if distinct.len() != self.classes.len() {
            return Err(CoreError::invalid_parameter(
                "classes",
                "class texts must be distinct",
            ));
        }
        match self.scoring_mode {
            ScoringMode::NormalizedClasses => {
                let index = self.answer_index.ok_or_else(|| {
                    CoreError::invalid_parameter(
                        "answer_index",
                        "required in normalized-classes mode",
                    )
                })?;
                if index >= self.classes.len() {
                    return Err(CoreError::invalid_parameter(
                        "answer_index",
                        format!("{index} out of range for {} classes", self.classes.len()),
                    ));
                }
                if !self.forbidden.is_empty() {
                    return Err(CoreError::invalid_parameter(
                        "forbidden",
                        "only valid in complement-of-forbidden mode",
                    ));
                }
            }
            ScoringMode::ComplementOfForbidden => {
                for f in &self.forbidden {
                    if !self.classes.iter().any(|c| c == f) {
                        return Err(CoreError::invalid_parameter(
                            "forbidden",
                            format!("{f:?} is not a listed class"),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSet {
    pub name: TaskSetName,
    pub instances: Vec<TaskInstance>,
    pub split_rule: SplitRule,
    pub generator_seed: Option<u64>,
}

impl TaskSet {
    pub fn validate(&self) -> Result<()> {
        if self.instances.is_empty() {
            return Err(CoreError::EmptyInput("taskset"));
        }
        let mut seen = BTreeSet::new();
        for instance in &self.instances {
            if !seen.insert(instance.id.as_str()) {
                return Err(CoreError::invalid_parameter(
                    "id",
                    format!("duplicate instance id {:?}", instance.id),
                ));
            }
            instance
                .validate()
                .map_err(CoreError::for_instance(&instance.id))?;
        }
        Ok(())
    }
}

fn instance_from_entry(entry: &CatalogEntry, id: String) -> Result<TaskInstance> {
    Ok(TaskInstance {
        id,
        split: SplitPrompt::new(entry.task.clone(), " ", entry.data.clone())?,
        classes: vec![entry.prior_class.clone(), entry.answer_class.clone()],
        answer_index: Some(1),
        scoring_mode: ScoringMode::NormalizedClasses,
        forbidden: Vec::new(),
    })
}

/// Deterministically samples `count` instances from the built-in catalog
/// (cycling with suffixed ids once the catalog is exhausted) and appends the
/// weight-swapped control instance.
pub fn generate_strong_local_priors(seed: u64, count: usize) -> Result<TaskSet> {
    if count < 1 {
        return Err(CoreError::invalid_parameter("count", "must be at least 1"));
    }
    let mut entries = strong_priors::catalog();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    entries.shuffle(&mut rng);

    let mut instances = Vec::with_capacity(count + 1);
    for i in 0..count {
        let entry = &entries[i % entries.len()];
        let id = if i < entries.len() {
            entry.id.clone()
        } else {
            format!("{}-rep{}", entry.id, i / entries.len() + 1)
        };
        instances.push(instance_from_entry(entry, id)?);
    }
    let control = strong_priors::control_entry();
    let control_id = control.id.clone();
    instances.push(instance_from_entry(&control, control_id)?);

    let set = TaskSet {
        name: TaskSetName::StrongLocalPriors,
        instances,
        split_rule: TaskSetName::StrongLocalPriors.split_rule(),
        generator_seed: Some(seed),
    };
    set.validate()?;
    Ok(set)
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    name: TaskSetName,
    split_rule: SplitRule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generator_seed: Option<u64>,
    /// Version of the tool that wrote the file; informational only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tool: Option<String>,
    /// Effective configuration of the producing run; informational only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    task: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    joiner: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    data: Option<String>,
    classes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    answer_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scoring_mode: Option<ScoringMode>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    forbidden: Vec<String>,
}

/// Serializes a taskset with pre-split task/joiner/data fields, so loading
/// the output never depends on the regex rule.
pub fn to_jsonl(set: &TaskSet) -> Result<String> {
    to_jsonl_with_provenance(set, None, None)
}

/// Same as [`to_jsonl`] but stamps the header record with the producing
/// tool's version and effective configuration.
pub fn to_jsonl_with_provenance(
    set: &TaskSet,
    tool: Option<&str>,
    config: Option<&serde_json::Value>,
) -> Result<String> {
    let mut out = String::new();
    let header = Header {
        format: TASKSET_FORMAT.to_owned(),
        name: set.name,
        split_rule: set.split_rule.clone(),
        generator_seed: set.generator_seed,
        tool: tool.map(str::to_owned),
        config: config.cloned(),
    };
    out.push_str(&serde_json::to_string(&header).expect("header serializes"));
    out.push('\n');
    for instance in &set.instances {
        let record = Record {
            id: Some(instance.id.clone()),
            prompt: None,
            task: Some(instance.split.task.clone()),
            joiner: Some(instance.split.joiner.clone()),
            data: Some(instance.split.data.clone()),
            classes: instance.classes.clone(),
            answer_index: instance.answer_index,
            scoring_mode: Some(instance.scoring_mode),
            forbidden: instance.forbidden.clone(),
        };
        out.push_str(&serde_json::to_string(&record).expect("record serializes"));
        out.push('\n');
    }
    Ok(out)
}

pub fn from_jsonl(text: &str) -> Result<TaskSet> {
    let parse_err = |line: usize, message: String| CoreError::Parse { line, message };

    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());

    let (header_line, header_text) = lines
        .next()
        .ok_or(CoreError::EmptyInput("taskset"))?;
    let header: Header = serde_json::from_str(header_text)
        .map_err(|e| parse_err(header_line, format!("header: {e}")))?;
    if header.format != TASKSET_FORMAT {
        return Err(parse_err(
            header_line,
            format!(
                "unsupported format {:?} (expected {TASKSET_FORMAT:?})",
                header.format
            ),
        ));
    }
    let compiled = header.split_rule.compile()?;

    let mut instances = Vec::new();
    for (line_no, line) in lines {
        let record: Record =
            serde_json::from_str(line).map_err(|e| parse_err(line_no, e.to_string()))?;
        let id = record
            .id
            .clone()
            .unwrap_or_else(|| format!("line-{line_no}"));

        let split = match (&record.task, &record.data) {
            (Some(task), Some(data)) => {
                let joiner = match record.joiner {
                    Some(j) => j,
                    None if task.is_empty() => String::new(),
                    None => " ".to_owned(),
                };
                let split = SplitPrompt::new(task.clone(), joiner, data.clone())
                    .map_err(|e| parse_err(line_no, e.to_string()))?;
                if let Some(prompt) = &record.prompt {
                    if *prompt != split.reconstruct() {
                        return Err(parse_err(
                            line_no,
                            "prompt does not equal task + joiner + data".to_owned(),
                        ));
                    }
                }
                split
            }
            (None, None) => {
                let prompt = record.prompt.as_deref().ok_or_else(|| {
                    parse_err(line_no, "record needs prompt or task + data".to_owned())
                })?;
                split_prompt_compiled(prompt, &header.split_rule, &compiled)
                    .map_err(CoreError::for_instance(&id))?
            }
            _ => {
                return Err(parse_err(
                    line_no,
                    "pre-split records need both task and data".to_owned(),
                ));
            }
        };

        let scoring_mode = record.scoring_mode.unwrap_or_default();
        if scoring_mode == ScoringMode::NormalizedClasses && record.answer_index.is_none() {
            return Err(parse_err(
                line_no,
                "missing field answer_index (required in normalized-classes mode)".to_owned(),
            ));
        }
        let instance = TaskInstance {
            id,
            split,
            classes: record.classes,
            answer_index: record.answer_index,
            scoring_mode,
            forbidden: record.forbidden,
        };
        instance
            .validate()
            .map_err(|e| parse_err(line_no, e.to_string()))?;
        instances.push(instance);
    }

    let set = TaskSet {
        name: header.name,
        instances,
        split_rule: header.split_rule,
        generator_seed: header.generator_seed,
    };
    set.validate()?;
    Ok(set)
}

pub fn load_taskset(path: &Path) -> Result<TaskSet> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    from_jsonl(&text)
}

pub fn save_taskset(set: &TaskSet, path: &Path) -> Result<()> {
    let text = to_jsonl(set)?;
    std::fs::write(path, text).map_err(|e| CoreError::io(path, e))
}

/// Logit pairs along one class continuation. The continuation is forced, so
/// the trace does not depend on alpha or temperature and can be priced once
/// and scored across a whole grid.
struct ClassTrace {
    steps: Vec<(LogitVector, LogitVector, Token)>,
}

fn trace_class(
    provider: &dyn LogitProvider,
    split: &SplitPrompt,
    method: &WeakeningMethod,
    class: &str,
) -> Result<ClassTrace> {
    let tokens = provider.tokenize(class)?;
    if tokens.is_empty() {
        return Err(CoreError::EmptyInput("class text"));
    }
    let mut split = split.clone();
    let mut steps = Vec::with_capacity(tokens.len());
    for token in tokens {
        let full = provider.next_logits(&split.reconstruct())?;
        let weak = provider.next_logits(&weaken(&split, method))?;
        let (full, weak) = merge_topk(&full, &weak)?;
        let text = provider.decode(std::slice::from_ref(&token))?;
        steps.push((full, weak, token));
        split = split.extend(&text);
    }
    Ok(ClassTrace { steps })
}

/// Sum of stepwise extrapolated log probabilities; `-inf` when any step
/// assigns the class token zero probability (possible at T = 0 or off the
/// top-k support).
fn trace_log_prob(trace: &ClassTrace, alpha: f64, temp: Temperature) -> Result<f64> {
    let mut logp = 0.0;
    for (full, weak, token) in &trace.steps {
        let extrapolated = extrapolate(full, weak, alpha)?;
        let dist = logits_to_distribution(&extrapolated, temp)?;
        let p = dist.prob(token);
        if p == 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        logp += p.ln();
    }
    Ok(logp)
}

fn combine_class_scores(instance: &TaskInstance, logps: &[f64]) -> f64 {
    let max = logps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    match instance.scoring_mode {
        ScoringMode::NormalizedClasses => {
            if instance.classes.len() == 1 {
                return 1.0;
            }
            if max == f64::NEG_INFINITY {
                // No listed class is reachable (all probability elsewhere at
                // T = 0): no mass to normalize, no credit.
                return 0.0;
            }
            let z: f64 = logps.iter().map(|l| (l - max).exp()).sum();
            let answer = logps[instance.answer_index.expect("validated")];
            ((answer - max).exp() / z).clamp(0.0, 1.0)
        }
        ScoringMode::ComplementOfForbidden => {
            if max == f64::NEG_INFINITY {
                // Nothing reachable, so in particular nothing forbidden.
                return 1.0;
            }
            let z: f64 = logps.iter().map(|l| (l - max).exp()).sum();
            let forbidden_mass: f64 = instance
                .forbidden
                .iter()
                .map(|f| {
                    let i = instance
                        .classes
                        .iter()
                        .position(|c| c == f)
                        .expect("validated");
                    (logps[i] - max).exp() / z
                })
                .sum();
            (1.0 - forbidden_mass).clamp(0.0, 1.0)
        }
    }
}

/// Scores one instance over a whole (alpha, temperature) grid, reusing one
/// logit trace per class so backend cost is independent of grid size.
/// Returns `scores[alpha_index][temp_index]`.
pub fn score_instance_grid(
    provider: &dyn LogitProvider,
    instance: &TaskInstance,
    method: &WeakeningMethod,
    alphas: &[f64],
    temps: &[Temperature],
) -> Result<Vec<Vec<f64>>> {
    instance
        .validate()
        .map_err(CoreError::for_instance(&instance.id))?;
    method.validate()?;
    let traces: Vec<ClassTrace> = instance
        .classes
        .iter()
        .map(|c| trace_class(provider, &instance.split, method, c))
        .collect::<Result<_>>()
        .map_err(CoreError::for_instance(&instance.id))?;

    let mut out = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let mut row = Vec::with_capacity(temps.len());
        for &temp in temps {
            let logps: Vec<f64> = traces
                .iter()
                .map(|t| trace_log_prob(t, alpha, temp))
                .collect::<Result<_>>()
                .map_err(CoreError::for_instance(&instance.id))?;
            row.push(combine_class_scores(instance, &logps));
        }
        out.push(row);
    }
    Ok(out)
}

/// Probability mass the extrapolated model puts on fulfilling the
/// instruction, in [0, 1].
pub fn score_instance(
    provider: &dyn LogitProvider,
    instance: &TaskInstance,
    method: &WeakeningMethod,
    alpha: f64,
    temp: Temperature,
) -> Result<f64> {
    let grid = score_instance_grid(provider, instance, method, &[alpha], &[temp])?;
    Ok(grid[0][0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{CoverageKind, VocabInfo};
    use std::collections::BTreeMap;

    /// Returns one vector for prompts starting with the task and another
    /// for weakened prompts.
    struct TwoPromptProvider {
        task_marker: String,
        full: LogitVector,
        weak: LogitVector,
    }

    impl LogitProvider for TwoPromptProvider {
        fn next_logits(&self, prefix: &str) -> Result<LogitVector> {
            if prefix.starts_with(&self.task_marker) {
                Ok(self.full.clone())
            } else {
                Ok(self.weak.clone())
            }
        }

        fn tokenize(&self, text: &str) -> Result<Vec<Token>> {
            Ok(vec![Token::new(text)])
        }

        fn decode(&self, tokens: &[Token]) -> Result<String> {
            Ok(tokens.iter().map(Token::as_str).collect())
        }

        fn vocab_info(&self) -> VocabInfo {
            VocabInfo {
                size: Some(2),
                kind: CoverageKind::Full,
            }
        }

        fn model_id(&self) -> String {
            "stub".to_owned()
        }
    }

    fn lv(pairs: &[(&str, f64)]) -> LogitVector {
        LogitVector::full(pairs.iter().map(|(t, l)| (Token::new(*t), *l)).collect()).unwrap()
    }

    fn worked_example_provider() -> TwoPromptProvider {
        TwoPromptProvider {
            task_marker: "Task:".to_owned(),
            full: lv(&[("H", -74.8), ("I", -77.8)]),
            weak: lv(&[("H", -68.1), ("I", -73.8)]),
        }
    }

    fn worked_example_instance() -> TaskInstance {
        TaskInstance {
            id: "worked".to_owned(),
            split: SplitPrompt::new("Task: continue the alphabet.", " ", "A-B-C-D-E-F-G-")
                .unwrap(),
            classes: vec!["H".to_owned(), "I".to_owned()],
            answer_index: Some(1),
            scoring_mode: ScoringMode::NormalizedClasses,
            forbidden: Vec::new(),
        }
    }

    #[test]
    fn worked_example_scores() {
        let provider = worked_example_provider();
        let instance = worked_example_instance();
        let temp = Temperature::new(1.0).unwrap();
        let at_4 =
            score_instance(&provider, &instance, &WeakeningMethod::StripTask, 4.0, temp).unwrap();
        assert!((at_4 - 0.99959).abs() < 5e-5, "alpha=4: {at_4}");
        let at_0 =
            score_instance(&provider, &instance, &WeakeningMethod::StripTask, 0.0, temp).unwrap();
        assert!((at_0 - 0.0474).abs() < 5e-5, "alpha=0: {at_0}");
    }

    #[test]
    fn normalized_class_scores_sum_to_one() {
        let provider = worked_example_provider();
        let mut instance = worked_example_instance();
        let temp = Temperature::new(1.0).unwrap();
        let answer =
            score_instance(&provider, &instance, &WeakeningMethod::StripTask, 2.0, temp).unwrap();
        instance.answer_index = Some(0);
        let other =
            score_instance(&provider, &instance, &WeakeningMethod::StripTask, 2.0, temp).unwrap();
        assert!((answer + other - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_temperature_scores_are_indicator_valued() {
        let provider = worked_example_provider();
        let instance = worked_example_instance();
        let t0 = Temperature::new(0.0).unwrap();
        let at_4 =
            score_instance(&provider, &instance, &WeakeningMethod::StripTask, 4.0, t0).unwrap();
        assert_eq!(at_4, 1.0);
        let at_0 =
            score_instance(&provider, &instance, &WeakeningMethod::StripTask, 0.0, t0).unwrap();
        assert_eq!(at_0, 0.0);
    }

    #[test]
    fn single_class_instance_scores_one() {
        let provider = worked_example_provider();
        let mut instance = worked_example_instance();
        instance.classes = vec!["H".to_owned()];
        instance.answer_index = Some(0);
        for alpha in [-1.5, 0.0, 3.0] {
            let score = score_instance(
                &provider,
                &instance,
                &WeakeningMethod::StripTask,
                alpha,
                Temperature::new(1.0).unwrap(),
            )
            .unwrap();
            assert_eq!(score, 1.0);
        }
    }

    #[test]
    fn complement_mode_is_one_minus_forbidden_mass() {
        let provider = worked_example_provider();
        let mut instance = worked_example_instance();
        instance.scoring_mode = ScoringMode::ComplementOfForbidden;
        instance.answer_index = None;
        instance.forbidden = vec!["H".to_owned()];
        let temp = Temperature::new(1.0).unwrap();
        let score =
            score_instance(&provider, &instance, &WeakeningMethod::StripTask, 4.0, temp).unwrap();
        assert!((score - 0.99959).abs() < 5e-5);
    }

    #[test]
    fn grid_scoring_matches_pointwise_scoring() {
        let provider = worked_example_provider();
        let instance = worked_example_instance();
        let alphas = [0.0, 1.0, 4.0];
        let temps = [Temperature::new(0.5).unwrap(), Temperature::new(1.0).unwrap()];
        let grid = score_instance_grid(
            &provider,
            &instance,
            &WeakeningMethod::StripTask,
            &alphas,
            &temps,
        )
        .unwrap();
        for (ai, &alpha) in alphas.iter().enumerate() {
            for (ti, &temp) in temps.iter().enumerate() {
                let single =
                    score_instance(&provider, &instance, &WeakeningMethod::StripTask, alpha, temp)
                        .unwrap();
                assert_eq!(grid[ai][ti], single);
            }
        }
    }

    #[test]
    fn shift_invariance_of_scores() {
        let provider = worked_example_provider();
        let shifted = TwoPromptProvider {
            task_marker: provider.task_marker.clone(),
            full: provider.full.shifted(37.5).unwrap(),
            weak: provider.weak.shifted(-12.25).unwrap(),
        };
        let instance = worked_example_instance();
        let temp = Temperature::new(1.0).unwrap();
        for alpha in [-2.0, 0.0, 2.0, 4.0] {
            let a =
                score_instance(&provider, &instance, &WeakeningMethod::StripTask, alpha, temp)
                    .unwrap();
            let b =
                score_instance(&shifted, &instance, &WeakeningMethod::StripTask, alpha, temp)
                    .unwrap();
            assert!((a - b).abs() < 1e-9, "alpha={alpha}: {a} vs {b}");
        }
    }

    #[test]
    fn generate_is_deterministic_and_well_formed() {
        let a = generate_strong_local_priors(7, 110).unwrap();
        let b = generate_strong_local_priors(7, 110).unwrap();
        assert_eq!(a, b);
        assert_eq!(to_jsonl(&a).unwrap(), to_jsonl(&b).unwrap());
        assert_eq!(a.instances.len(), 111);
        assert_eq!(a.name, TaskSetName::StrongLocalPriors);
        assert_eq!(a.generator_seed, Some(7));
        assert_eq!(a.instances.last().unwrap().id, "control-skip-B");
        let c = generate_strong_local_priors(8, 110).unwrap();
        assert_ne!(a, c, "different seeds should order instances differently");
    }

    #[test]
    fn generate_cycles_with_fresh_ids() {
        let set = generate_strong_local_priors(3, 250).unwrap();
        assert_eq!(set.instances.len(), 251);
        set.validate().unwrap();
        assert!(set.instances.iter().any(|i| i.id.ends_with("-rep2")));
        assert!(set.instances.iter().any(|i| i.id.ends_with("-rep3")));
    }

    #[test]
    fn generate_rejects_zero_count() {
        assert!(generate_strong_local_priors(0, 0).is_err());
    }

    #[test]
    fn generated_instances_split_under_their_rule() {
        let set = generate_strong_local_priors(11, 20).unwrap();
        let compiled = set.split_rule.compile().unwrap();
        for instance in &set.instances {
            let prompt = instance.split.reconstruct();
            let split = split_prompt_compiled(&prompt, &set.split_rule, &compiled).unwrap();
            assert_eq!(&split, &instance.split, "{}", instance.id);
        }
    }

    #[test]
    fn jsonl_round_trip_preserves_everything() {
        let set = generate_strong_local_priors(42, 25).unwrap();
        let text = to_jsonl(&set).unwrap();
        let reloaded = from_jsonl(&text).unwrap();
        assert_eq!(set, reloaded);
        assert_eq!(to_jsonl(&reloaded).unwrap(), text);
    }

    #[test]
    fn provenance_header_loads_like_a_plain_one() {
        let set = generate_strong_local_priors(3, 2).unwrap();
        let cfg = serde_json::json!({"seed": 3, "taskset-count": 2});
        let text = to_jsonl_with_provenance(&set, Some("0.1.0"), Some(&cfg)).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.contains("\"tool\":\"0.1.0\""), "{header}");
        assert!(header.contains("\"taskset-count\":2"), "{header}");
        assert_eq!(from_jsonl(&text).unwrap(), set);
    }

    fn header_line() -> String {
        let rule = TaskSetName::Redefine.split_rule();
        format!(
            concat!(
                "{{\"format\":\"taskset-v1\",\"name\":\"redefine\",",
                "\"split_rule\":{}}}"
            ),
            serde_json::to_string(&rule).unwrap()
        )
    }

    #[test]
    fn loads_raw_prompts_by_splitting() {
        let prompt = "Swap the meaning of lawful and unlawful. Is fraud lawful? A:";
        let text = format!(
            "{}\n{{\"prompt\":{},\"classes\":[\" Yes\",\" No\"],\"answer_index\":0}}\n",
            header_line(),
            serde_json::to_string(prompt).unwrap()
        );
        let set = from_jsonl(&text).unwrap();
        assert_eq!(set.instances.len(), 1);
        let instance = &set.instances[0];
        assert_eq!(instance.id, "line-2");
        assert_eq!(
            instance.split.task,
            "Swap the meaning of lawful and unlawful."
        );
        assert_eq!(instance.split.data, "Is fraud lawful? A:");
        assert_eq!(instance.classes, vec![" Yes", " No"]);
    }

    #[test]
    fn pre_split_fields_override_the_rule() {
        // The rule would split at the first sentence; explicit fields win.
        let text = format!(
            concat!(
                "{}\n",
                "{{\"id\":\"x\",\"task\":\"\",\"joiner\":\"\",",
                "\"data\":\"Is fraud lawful? A:\",",
                "\"classes\":[\" Yes\",\" No\"],\"answer_index\":1}}\n"
            ),
            header_line()
        );
        let set = from_jsonl(&text).unwrap();
        assert_eq!(set.instances[0].split.task, "");
        assert_eq!(set.instances[0].split.data, "Is fraud lawful? A:");
    }

    #[test]
    fn missing_answer_index_is_a_parse_error_naming_the_field() {
        let text = format!(
            "{}\n{{\"prompt\":\"Do nothing. Input: x\",\"classes\":[\" a\",\" b\"]}}\n",
            header_line()
        );
        let err = from_jsonl(&text).unwrap_err();
        match err {
            CoreError::Parse { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("answer_index"), "{message}");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let text = format!("{}\nnot json\n", header_line());
        let err = from_jsonl(&text).unwrap_err();
        assert!(matches!(err, CoreError::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn empty_file_is_an_empty_taskset_error() {
        assert!(matches!(
            from_jsonl("").unwrap_err(),
            CoreError::EmptyInput("taskset")
        ));
        let header_only = format!("{}\n", header_line());
        assert!(matches!(
            from_jsonl(&header_only).unwrap_err(),
            CoreError::EmptyInput("taskset")
        ));
    }

    #[test]
    fn split_failure_carries_the_instance_id() {
        // No sentence boundary, so the redefine rule cannot split.
        let text = format!(
            "{}\n{{\"id\":\"bad-one\",\"prompt\":\"no sentences here\",\"classes\":[\" a\"],\"answer_index\":0}}\n",
            header_line()
        );
        let err = from_jsonl(&text).unwrap_err();
        assert!(err.to_string().contains("bad-one"), "{err}");
    }

    #[test]
    fn inconsistent_prompt_and_presplit_fields_rejected() {
        let text = format!(
            concat!(
                "{}\n",
                "{{\"prompt\":\"A. B\",\"task\":\"A.\",\"joiner\":\" \",\"data\":\"C\",",
                "\"classes\":[\" a\"],\"answer_index\":0}}\n"
            ),
            header_line()
        );
        let err = from_jsonl(&text).unwrap_err();
        assert!(err.to_string().contains("task + joiner + data"), "{err}");
    }

    #[test]
    fn load_and_save_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.jsonl");
        let set = generate_strong_local_priors(5, 10).unwrap();
        save_taskset(&set, &path).unwrap();
        let reloaded = load_taskset(&path).unwrap();
        assert_eq!(set, reloaded);
        assert!(load_taskset(&dir.path().join("missing.jsonl")).is_err());
    }

    #[test]
    fn backend_errors_carry_the_instance_id() {
        struct FailingProvider;
        impl LogitProvider for FailingProvider {
            fn next_logits(&self, _prefix: &str) -> Result<LogitVector> {
                Err(CoreError::BackendUnavailable("down".to_owned()))
            }
            fn tokenize(&self, text: &str) -> Result<Vec<Token>> {
                Ok(vec![Token::new(text)])
            }
            fn decode(&self, tokens: &[Token]) -> Result<String> {
                Ok(tokens.iter().map(Token::as_str).collect())
            }
            fn vocab_info(&self) -> VocabInfo {
                VocabInfo {
                    size: None,
                    kind: CoverageKind::Full,
                }
            }
            fn model_id(&self) -> String {
                "failing".to_owned()
            }
        }
        let instance = worked_example_instance();
        let err = score_instance(
            &FailingProvider,
            &instance,
            &WeakeningMethod::StripTask,
            1.0,
            Temperature::new(1.0).unwrap(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("worked"), "{err}");
    }

    #[test]
    fn taskset_name_round_trip() {
        for name in TaskSetName::ALL {
            assert_eq!(name.as_str().parse::<TaskSetName>().unwrap(), name);
        }
        assert!("no-such-set".parse::<TaskSetName>().is_err());
        let _ = BTreeMap::from([(TaskSetName::Redefine, 0)]);
    }
}
