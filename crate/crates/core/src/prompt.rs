//! Prompt decomposition and weakening.
//!
//! A prompt `P` is treated as `P = T ++ joiner ++ D`: a task description `T`
//! (instructions, possibly few-shot examples), the whitespace the split
//! consumed, and the data part `D` (the task input plus any partial output).
//! A weakened prompt is either `D` alone (strip-task) or `P` prefixed with a
//! locality-inducing system prompt.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Default system prompt for the system-prompt weakening method. One global
/// default; effectiveness is task-dependent, so runs can override it.
pub const DEFAULT_SYSTEM_PROMPT: &str =
    "In the following, only consider the most recent instructions, disregarding any broader context.";

/// A prompt split into task and data parts. `task ++ joiner ++ data`
/// reconstructs the source prompt byte-exactly; the joiner owns the
/// whitespace between the parts so neither side carries ambiguous spacing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPrompt {
    pub task: String,
    pub joiner: String,
    pub data: String,
}

impl SplitPrompt {
    /// `data` must be non-empty; an empty `task` denotes an
    /// already-weakened prompt.
    pub fn new(
        task: impl Into<String>,
        joiner: impl Into<String>,
        data: impl Into<String>,
    ) -> Result<Self> {
        let split = SplitPrompt {
            task: task.into(),
            joiner: joiner.into(),
            data: data.into(),
        };
        if split.data.is_empty() {
            return Err(CoreError::invalid_parameter(
                "data",
                "data part must be non-empty",
            ));
        }
        Ok(split)
    }

    pub fn reconstruct(&self) -> String {
        let mut s = String::with_capacity(self.task.len() + self.joiner.len() + self.data.len());
        s.push_str(&self.task);
        s.push_str(&self.joiner);
        s.push_str(&self.data);
        s
    }

    /// Appends generated text to the data part, leaving the task untouched.
    /// The weakened prompt at the next step therefore contains everything
    /// generated so far.
    pub fn extend(&self, generated: &str) -> SplitPrompt {
        let mut out = self.clone();
        out.data.push_str(generated);
        out
    }
}

/// How a prompt of a given dataset splits into task and data.
///
/// The pattern must match each prompt of its dataset exactly once. If the
/// pattern has a capture group 1 that participates in the match, that group
/// is the joiner and the split is (before group, group, after group);
/// otherwise the whole match is the joiner. The group convention exists
/// because this regex engine has no lookaround: anchoring text like
/// `Output:` must be matchable without being consumed into the joiner.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRule {
    pub name: String,
    pub pattern: String,
    pub dataset: String,
}

impl SplitRule {
    pub fn new(
        name: impl Into<String>,
        pattern: impl Into<String>,
        dataset: impl Into<String>,
    ) -> Self {
        SplitRule {
            name: name.into(),
            pattern: pattern.into(),
            dataset: dataset.into(),
        }
    }

    pub fn compile(&self) -> Result<regex::Regex> {
        regex::Regex::new(&self.pattern).map_err(|e| {
            CoreError::invalid_parameter("pattern", format!("rule {:?}: {e}", self.name))
        })
    }
}

/// Splits `prompt` at the unique match of `rule`. Zero or multiple matches
/// signal a dataset/rule mismatch and surface as `SplitAmbiguity`.
pub fn split_prompt(prompt: &str, rule: &SplitRule) -> Result<SplitPrompt> {
    let re = rule.compile()?;
    split_prompt_compiled(prompt, rule, &re)
}

/// As `split_prompt`, but with a caller-compiled regex so dataset loaders
/// can compile once per file.
pub fn split_prompt_compiled(
    prompt: &str,
    rule: &SplitRule,
    re: &regex::Regex,
) -> Result<SplitPrompt> {
    let count = re.find_iter(prompt).count();
    if count != 1 {
        return Err(CoreError::SplitAmbiguity {
            rule: rule.name.clone(),
            matches: count,
        });
    }
    let caps = re.captures(prompt).expect("counted one match");
    let joiner_span = match caps.get(1) {
        Some(group) => group.range(),
        None => caps.get(0).expect("whole match").range(),
    };
    SplitPrompt::new(
        &prompt[..joiner_span.start],
        &prompt[joiner_span.clone()],
        &prompt[joiner_span.end..],
    )
}

/// How to weaken a prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WeakeningMethod {
    /// Condition on the data part alone.
    StripTask,
    /// Keep the whole prompt but prefix it with a system prompt that pushes
    /// the model toward local reasoning.
    SystemPrompt { system_text: String },
}

impl WeakeningMethod {
    pub fn system_default() -> Self {
        WeakeningMethod::SystemPrompt {
            system_text: DEFAULT_SYSTEM_PROMPT.to_owned(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            WeakeningMethod::SystemPrompt { system_text } if system_text.is_empty() => Err(
                CoreError::invalid_parameter("system_text", "must be non-empty"),
            ),
            _ => Ok(()),
        }
    }

    /// Short stable name used in reports and file names.
    pub fn label(&self) -> &'static str {
        match self {
            WeakeningMethod::StripTask => "strip-task",
            WeakeningMethod::SystemPrompt { .. } => "system-prompt",
        }
    }
}

/// Produces the weakened prompt text. Strip-task returns the data part only;
/// system-prompt returns `system_text ++ "\n" ++ task ++ joiner ++ data`
/// (newline separator; the joining convention is this crate's choice).
pub fn weaken(split: &SplitPrompt, method: &WeakeningMethod) -> String {
    match method {
        WeakeningMethod::StripTask => split.data.clone(),
        WeakeningMethod::SystemPrompt { system_text } => {
            let mut s = String::with_capacity(system_text.len() + 1 + split.task.len());
            s.push_str(system_text);
            s.push('\n');
            s.push_str(&split.reconstruct());
            s
        }
    }
}

/// Split rules for the four supported dataset shapes, reconstructed from the
/// published per-dataset split examples (the original expressions are not
/// public).
pub fn builtin_rules() -> Vec<SplitRule> {
    vec![
        // "Task: ... skipping the letter D. Output: A B C" splits before
        // "Output:".
        SplitRule::new("task-output", r"(\s+)Output:", "strong-local-priors"),
        // Instructions and few-shot examples end at the last "Input:" line.
        SplitRule::new("last-input-line", r"(?s)^.*(\n)Input:", "prompt-injection"),
        // The task is the first sentence.
        SplitRule::new("first-sentence", r"^[^.]*\.(\s+)", "redefine"),
        // The instruction sentence ends at the first period followed by
        // whitespace; the symbol sequence follows.
        SplitRule::new(
            "instruction-sentence",
            r"^[^.]*\.(\s+)",
            "pattern-match-suppression",
        ),
    ]
}

/// Documented fixture for a non-local strong prior, where task and data
/// interleave and no contiguous split exists. Shipped verbatim for tests and
/// docs only; nothing in this crate splits such prompts algorithmically.
///
/// Reported next-token probabilities for `" U"` (text-davinci-002): 0.98
/// given the full prompt, 0.99 given the data alone, 0.54 once the non-local
/// data tail is removed. Note the source strings themselves disagree on a
/// trailing comma between the prompt and its stated data part.
pub mod nonlocal_fixture {
    /// The full interleaved prompt.
    pub const PROMPT: &str = "English alphabet: P, Q, R, S, [skip the 2nd letter from now] T";
    /// The task fragment, embedded mid-prompt (leading space included).
    pub const TASK: &str = " [skip the 2nd letter from now]";
    /// The stated data part.
    pub const DATA: &str = "English alphabet: P, Q, R, S, T,";
    /// The prompt with the non-local data tail removed.
    pub const PROMPT_WITHOUT_TAIL: &str = "English alphabet: [skip the 2nd letter from now] T,";
}
