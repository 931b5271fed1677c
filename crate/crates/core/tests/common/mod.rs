//! Brute-force recount oracle for the integration suites. Recomputes n-gram
//! probabilities, extrapolated class scores and detector distances by
//! scanning corpus lines directly; shares no counting or scoring code with
//! the library (only the tokenizer, which defines what a token is).

// Each test binary compiles this module separately and uses a subset of it.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use extrap_core::backend::ngram::tokenize_text;
use extrap_core::Token;

pub struct OracleModel {
    lines: Vec<(Vec<Token>, u64)>,
    vocab: BTreeSet<Token>,
    unigram: BTreeMap<Token, u64>,
    unigram_total: u64,
    order: usize,
    smoothing_k: f64,
    backoff: f64,
}

impl OracleModel {
    pub fn new(lines: &[(String, u64)], order: usize, smoothing_k: f64, backoff: f64) -> Self {
        let lines: Vec<(Vec<Token>, u64)> = lines
            .iter()
            .filter(|(_, w)| *w > 0)
            .map(|(l, w)| (tokenize_text(l), *w))
            .collect();
        let mut vocab = BTreeSet::new();
        let mut unigram: BTreeMap<Token, u64> = BTreeMap::new();
        let mut unigram_total = 0;
        for (tokens, weight) in &lines {
            for token in tokens {
                vocab.insert(token.clone());
                *unigram.entry(token.clone()).or_insert(0) += weight;
                unigram_total += weight;
            }
        }
        OracleModel {
            lines,
            vocab,
            unigram,
            unigram_total,
            order,
            smoothing_k,
            backoff,
        }
    }

    pub fn vocab(&self) -> &BTreeSet<Token> {
        &self.vocab
    }

    /// Weighted occurrences of `ngram` as a within-line sliding window.
    pub fn count(&self, ngram: &[Token]) -> u64 {
        self.lines
            .iter()
            .map(|(tokens, weight)| {
                if tokens.len() < ngram.len() || ngram.is_empty() {
                    return 0;
                }
                tokens.windows(ngram.len()).filter(|w| *w == ngram).count() as u64 * weight
            })
            .sum()
    }

    /// Continuation counts after `context`: weighted occurrences of every
    /// (context, next-token) window.
    fn continuations(&self, context: &[Token]) -> (u64, BTreeMap<&Token, u64>) {
        let mut total = 0;
        let mut counts: BTreeMap<&Token, u64> = BTreeMap::new();
        for (tokens, weight) in &self.lines {
            if tokens.len() <= context.len() {
                continue;
            }
            for window in tokens.windows(context.len() + 1) {
                if &window[..context.len()] == context {
                    total += weight;
                    *counts.entry(&window[context.len()]).or_insert(0) += weight;
                }
            }
        }
        (total, counts)
    }

    /// Stupid back-off replayed from its definition: start from the add-k
    /// smoothed unigram, then for each longer seen context replace scores
    /// with relative frequencies where the token was observed and damp by
    /// the back-off factor where it was not; normalize once at the end.
    pub fn next_probs(&self, prefix: &[Token]) -> BTreeMap<Token, f64> {
        let k = self.smoothing_k;
        let denom = self.unigram_total as f64 + k * self.vocab.len() as f64;
        let mut scores: BTreeMap<Token, f64> = self
            .vocab
            .iter()
            .map(|t| {
                let c = self.unigram.get(t).copied().unwrap_or(0) as f64;
                (t.clone(), (c + k) / denom)
            })
            .collect();

        for ctx_len in 1..=(self.order - 1).min(prefix.len()) {
            let context = &prefix[prefix.len() - ctx_len..];
            let (total, counts) = self.continuations(context);
            if total == 0 {
                break;
            }
            for (token, score) in scores.iter_mut() {
                match counts.get(token) {
                    Some(&c) => *score = c as f64 / total as f64,
                    None => *score *= self.backoff,
                }
            }
        }

        let sum: f64 = scores.values().sum();
        for score in scores.values_mut() {
            *score /= sum;
        }
        scores
    }

    pub fn next_probs_for(&self, text: &str) -> BTreeMap<Token, f64> {
        self.next_probs(&tokenize_text(text))
    }
}

/// Half the L1 distance over the union of supports.
pub fn oracle_tv(p: &BTreeMap<Token, f64>, q: &BTreeMap<Token, f64>) -> f64 {
    let keys: BTreeSet<&Token> = p.keys().chain(q.keys()).collect();
    0.5 * keys
        .into_iter()
        .map(|k| (p.get(k).copied().unwrap_or(0.0) - q.get(k).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}

/// Class score recomputed from first principles for single-token classes:
/// extrapolated log-score over the whole vocabulary, Boltzmann at `temp`,
/// then the answer's share of the class mass.
pub fn oracle_instance_score(
    model: &OracleModel,
    full_prompt: &str,
    weak_prompt: &str,
    classes: &[String],
    answer_index: usize,
    alpha: f64,
    temp: f64,
) -> f64 {
    let p_full = model.next_probs_for(full_prompt);
    let p_weak = model.next_probs_for(weak_prompt);
    let logs: BTreeMap<&Token, f64> = p_full
        .iter()
        .map(|(t, pf)| {
            let lf = pf.ln();
            let lw = p_weak[t].ln();
            (t, lf + alpha * (lf - lw))
        })
        .collect();

    let class_prob = |class: &str| -> f64 {
        let token = Token::new(class);
        if temp == 0.0 {
            let winner = logs
                .iter()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(t, _)| (*t).clone())
                .expect("vocab is non-empty");
            return if winner == token { 1.0 } else { 0.0 };
        }
        let max = logs.values().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let z: f64 = logs.values().map(|&v| ((v - max) / temp).exp()).sum();
        match logs.get(&token) {
            Some(&v) => ((v - max) / temp).exp() / z,
            None => 0.0,
        }
    };

    let probs: Vec<f64> = classes.iter().map(|c| class_prob(c)).collect();
    let total: f64 = probs.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    probs[answer_index] / total
}

/// Serves one fixed logit vector for prompts that still start with the task
/// and another for weakened prompts; classes become single pseudo-tokens.
pub struct StubProvider {
    task_marker: String,
    full: extrap_core::LogitVector,
    weak: extrap_core::LogitVector,
}

impl StubProvider {
    pub fn new(
        task_marker: &str,
        full: extrap_core::LogitVector,
        weak: extrap_core::LogitVector,
    ) -> Self {
        StubProvider {
            task_marker: task_marker.to_owned(),
            full,
            weak,
        }
    }
}

impl extrap_core::backend::LogitProvider for StubProvider {
    fn next_logits(&self, prefix: &str) -> extrap_core::Result<extrap_core::LogitVector> {
        if prefix.starts_with(&self.task_marker) {
            Ok(self.full.clone())
        } else {
            Ok(self.weak.clone())
        }
    }

    fn tokenize(&self, text: &str) -> extrap_core::Result<Vec<Token>> {
        Ok(vec![Token::new(text)])
    }

    fn decode(&self, tokens: &[Token]) -> extrap_core::Result<String> {
        Ok(tokens.iter().map(Token::as_str).collect())
    }

    fn vocab_info(&self) -> extrap_core::backend::VocabInfo {
        extrap_core::backend::VocabInfo {
            size: None,
            kind: extrap_core::backend::CoverageKind::Full,
        }
    }

    fn model_id(&self) -> String {
        "stub".to_owned()
    }
}
