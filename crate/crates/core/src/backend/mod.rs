//! Next-token logit providers and the extrapolating sampling loop.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::logits::{extrapolate, logits_to_distribution, merge_topk, LogitVector, Temperature, Token};
use crate::mixture::Distribution;
use crate::prompt::{weaken, SplitPrompt, WeakeningMethod};

pub mod cache;
pub mod ngram;
pub mod remote;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoverageKind {
    /// The provider returns logits for its whole vocabulary.
    Full,
    /// The provider returns truncated top-k logits.
    TopK,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabInfo {
    /// Vocabulary size, when the provider knows it.
    pub size: Option<usize>,
    pub kind: CoverageKind,
}

/// Something that can score the next token after a text prefix.
///
/// Implementations must be deterministic: the same prefix yields the same
/// `LogitVector`. Remote providers request the most deterministic settings
/// their API offers; any residual nondeterminism is documented on the
/// implementation.
pub trait LogitProvider: Send + Sync {
    fn next_logits(&self, prefix: &str) -> Result<LogitVector>;
    fn tokenize(&self, text: &str) -> Result<Vec<Token>>;
    fn decode(&self, tokens: &[Token]) -> Result<String>;
    fn vocab_info(&self) -> VocabInfo;
    /// Token that terminates generation, if the backend has one.
    fn end_of_text(&self) -> Option<Token> {
        None
    }
    fn model_id(&self) -> String;
    /// Hit/miss counters for backends with a response cache.
    fn cache_stats(&self) -> Option<cache::CacheStats> {
        None
    }
}

/// Samples one token from a distribution via its cumulative mass, walking
/// tokens in canonical order. Uses a single uniform draw per call.
pub fn sample_token(dist: &Distribution, rng: &mut impl Rng) -> Token {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (token, &p) in dist.probs() {
        acc += p;
        if u < acc {
            return token.clone();
        }
    }
    // Floating-point shortfall in the cumulative sum; the draw belongs to
    // the final token.
    dist.probs()
        .keys()
        .next_back()
        .expect("distribution is non-empty")
        .clone()
}

/// Extrapolating ancestral sampling.
///
/// Each step queries the provider on the current prompt and on its weakened
/// variant, merges top-k coverage if needed, extrapolates with `alpha`,
/// converts to a distribution at `temp`, samples with the seeded generator,
/// and extends the data part with the decoded token (so the weakened prompt
/// sees all previously generated tokens). Stops after `max_tokens` tokens or
/// at the provider's end-of-text token, which is not emitted.
pub fn generate(
    provider: &dyn LogitProvider,
    split: &SplitPrompt,
    method: &WeakeningMethod,
    alpha: f64,
    temp: Temperature,
    max_tokens: usize,
    seed: u64,
) -> Result<Vec<Token>> {
    if max_tokens < 1 {
        return Err(CoreError::invalid_parameter(
            "max_tokens",
            "must be at least 1",
        ));
    }
    method.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eot = provider.end_of_text();
    let mut current = split.clone();
    let mut output = Vec::new();

    for step in 0..max_tokens {
        let at_step = |source: CoreError| CoreError::Step {
            step,
            source: Box::new(source),
        };
        let dist = (|| -> Result<Distribution> {
            let l_o = provider.next_logits(&current.reconstruct())?;
            let l_w = provider.next_logits(&weaken(&current, method))?;
            let (l_o, l_w) = merge_topk(&l_o, &l_w)?;
            let l_a = extrapolate(&l_o, &l_w, alpha)?;
            logits_to_distribution(&l_a, temp)
        })()
        .map_err(at_step)?;

        let token = sample_token(&dist, &mut rng);
        if eot.as_ref() == Some(&token) {
            break;
        }
        let text = provider
            .decode(std::slice::from_ref(&token))
            .map_err(|source| CoreError::Step {
                step,
                source: Box::new(source),
            })?;
        current = current.extend(&text);
        output.push(token);
    }

    Ok(output)
}
