//! Contrastive decoding between a full prompt and a weakened copy of it.
//!
//! The pipeline: split a prompt into task and data, weaken it (drop the task
//! or override it with a system prompt), query a backend for next-token
//! logits under both prompts, then sample from `l_full + alpha * (l_full -
//! l_weak)`. Positive alpha amplifies whatever the task contributed to the
//! logits, which counteracts strong local priors picked up from the data.
//!
//! `mixture` holds the distribution-level model that motivates the method,
//! `logits` the vector arithmetic, `prompt` the splitting and weakening,
//! `backend` the logit sources (toy n-gram and OpenAI-compatible remote),
//! `strong_priors` a synthetic corpus with planted trap continuations,
//! `taskset` benchmark instances and scoring, and `eval` the sweep harness.

pub mod backend;
pub mod error;
pub mod eval;
pub mod logits;
pub mod mixture;
pub mod prompt;
pub mod strong_priors;
pub mod taskset;
pub mod util;

pub use error::{CoreError, Result};
pub use logits::{
    extrapolate, logits_to_distribution, merge_topk, Coverage, LogitVector, Temperature, Token,
};
pub use mixture::{
    detect_strong_prior, geometric_mixture, kl_divergence, recover_p_alpha, tv_distance,
    Distribution, MixtureParams, StrongPriorCheck, DEFAULT_EPSILON,
};
pub use prompt::{split_prompt, weaken, SplitPrompt, SplitRule, WeakeningMethod};
