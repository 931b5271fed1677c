//! Deterministic n-gram backend: a desk-scale stand-in for a language model.
//!
//! The tokenizer is whitespace/punctuation based with a closed vocabulary
//! built from the corpus, so an independent recount of the corpus reproduces
//! every probability exactly. Scoring uses stupid back-off: the conditional
//! score of a token is its relative frequency under the longest matching
//! context, or `backoff` times the next-shorter context's score when unseen,
//! bottoming out at an add-k smoothed unigram. Scores are normalized over
//! the vocabulary at the top level only.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use crate::backend::{CoverageKind, LogitProvider, VocabInfo};
use crate::error::{CoreError, Result};
use crate::logits::{LogitVector, Token};

/// Back-off factor applied per skipped context level.
pub const DEFAULT_BACKOFF: f64 = 0.4;

fn token_pattern() -> &'static regex::Regex {
    static RE: OnceLock<regex::Regex> = OnceLock::new();
    RE.get_or_init(|| {
        // A token is a run of alphanumerics or a run of other non-space
        // characters, each carrying its leading whitespace; trailing
        // whitespace forms its own token. Concatenating the tokens of any
        // text reproduces it byte-exactly.
        regex::Regex::new(r"\s*[A-Za-z0-9]+|\s*[^\sA-Za-z0-9]+|\s+").expect("static pattern")
    })
}

/// Splits text into tokens. Lossless: `tokenize_text(s).concat() == s`.
pub fn tokenize_text(text: &str) -> Vec<Token> {
    token_pattern()
        .find_iter(text)
        .map(|m| Token::new(m.as_str()))
        .collect()
}

/// Joins tokens back into text.
pub fn decode_tokens(tokens: &[Token]) -> String {
    tokens.iter().map(|t| t.as_str()).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct ContextCounts {
    total: u64,
    counts: BTreeMap<Token, u64>,
}

/// Count-based n-gram model with stupid back-off.
///
/// `contexts` stores sliding-window counts for every context length from 1
/// to `order - 1` (the length is implied by the key); the top level holds
/// the full `order - 1`-token contexts and the shorter levels feed back-off.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    smoothing_k: f64,
    backoff: f64,
    vocab: BTreeSet<Token>,
    unigram_total: u64,
    unigram: BTreeMap<Token, u64>,
    contexts: BTreeMap<Vec<Token>, ContextCounts>,
}

/// Trains on corpus lines, each with weight 1.
pub fn ngram_train<S: AsRef<str>>(corpus: &[S], order: usize, smoothing_k: f64) -> Result<NGramModel> {
    let weighted: Vec<(&str, u64)> = corpus.iter().map(|s| (s.as_ref(), 1)).collect();
    ngram_train_weighted(&weighted, order, smoothing_k)
}

/// Trains on weighted corpus lines; a line with weight `w` counts as `w`
/// verbatim repetitions. Windows never cross line boundaries.
pub fn ngram_train_weighted<S: AsRef<str>>(
    lines: &[(S, u64)],
    order: usize,
    smoothing_k: f64,
) -> Result<NGramModel> {
    if order < 1 {
        return Err(CoreError::invalid_parameter("order", "must be at least 1"));
    }
    if !smoothing_k.is_finite() || smoothing_k <= 0.0 {
        return Err(CoreError::invalid_parameter(
            "smoothing_k",
            format!("must be finite and > 0, got {smoothing_k}"),
        ));
    }

    let mut model = NGramModel {
        order,
        smoothing_k,
        backoff: DEFAULT_BACKOFF,
        vocab: BTreeSet::new(),
        unigram_total: 0,
        unigram: BTreeMap::new(),
        contexts: BTreeMap::new(),
    };

    for (line, weight) in lines {
        if *weight == 0 {
            continue;
        }
        let tokens = tokenize_text(line.as_ref());
        for (i, token) in tokens.iter().enumerate() {
            model.vocab.insert(token.clone());
            model.unigram_total += weight;
            *model.unigram.entry(token.clone()).or_insert(0) += weight;
            for ctx_len in 1..=(order - 1).min(i) {
                let context = &tokens[i - ctx_len..i];
                let entry = model.contexts.entry(context.to_vec()).or_default();
                entry.total += weight;
                *entry.counts.entry(token.clone()).or_insert(0) += weight;
            }
        }
    }

    if model.unigram_total == 0 {
        return Err(CoreError::EmptyInput("corpus"));
    }
    Ok(model)
}

impl NGramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing_k(&self) -> f64 {
        self.smoothing_k
    }

    pub fn backoff(&self) -> f64 {
        self.backoff
    }

    pub fn vocab(&self) -> &BTreeSet<Token> {
        &self.vocab
    }

    /// Raw count for (context, token); context length selects the level.
    pub fn count(&self, context: &[Token], token: &Token) -> u64 {
        if context.is_empty() {
            return self.unigram.get(token).copied().unwrap_or(0);
        }
        self.contexts
            .get(context)
            .and_then(|c| c.counts.get(token).copied())
            .unwrap_or(0)
    }

    /// Smoothed conditional probabilities of every vocab token after
    /// `prefix`, normalized to sum to 1.
    pub fn next_probs(&self, prefix: &[Token]) -> BTreeMap<Token, f64> {
        // Level 1: add-k smoothed unigram.
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

        // Levels 2..=order: replace with relative frequency where the
        // context has seen the token, damp by the back-off factor where it
        // has not. A context unseen at some length is unseen at every longer
        // length, and a fully-unseen level scales all scores uniformly,
        // which normalization cancels; so stop at the first unseen level.
        for ctx_len in 1..=(self.order - 1).min(prefix.len()) {
            let context = &prefix[prefix.len() - ctx_len..];
            let Some(cc) = self.contexts.get(context) else {
                break;
            };
            let total = cc.total as f64;
            for (token, score) in scores.iter_mut() {
                match cc.counts.get(token) {
                    Some(&c) => *score = c as f64 / total,
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

    /// `ln` of the smoothed conditional probabilities; full-vocab coverage.
    pub fn next_logits(&self, prefix: &[Token]) -> Result<LogitVector> {
        let probs = self.next_probs(prefix);
        LogitVector::full(probs.into_iter().map(|(t, p)| (t, p.ln())).collect())
    }

    /// Serializes to the versioned `ngram-v1` text format: one value per
    /// line, tokens JSON-quoted, contexts sorted. Human-diffable.
    pub fn to_text(&self) -> String {
        let quote = |t: &Token| serde_json::to_string(t.as_str()).expect("string to JSON");
        let mut out = String::new();
        out.push_str("ngram-v1\n");
        let _ = writeln!(out, "order {}", self.order);
        let _ = writeln!(out, "smoothing_k {}", self.smoothing_k);
        let _ = writeln!(out, "backoff {}", self.backoff);
        let _ = writeln!(out, "vocab {}", self.vocab.len());
        for token in &self.vocab {
            let _ = writeln!(out, "{}", quote(token));
        }
        let _ = writeln!(out, "unigram {} total {}", self.unigram.len(), self.unigram_total);
        for (token, count) in &self.unigram {
            let _ = writeln!(out, "{} {}", quote(token), count);
        }
        let _ = writeln!(out, "contexts {}", self.contexts.len());
        for (context, cc) in &self.contexts {
            let ctx: Vec<String> = context.iter().map(&quote).collect();
            let _ = writeln!(out, "ctx {} total {}", ctx.join(" "), cc.total);
            for (token, count) in &cc.counts {
                let _ = writeln!(out, "  {} {}", quote(token), count);
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| CoreError::io(path, e))
    }

    pub fn from_text(text: &str) -> Result<NGramModel> {
        Parser::new(text).parse()
    }

    pub fn load(path: &Path) -> Result<NGramModel> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        NGramModel::from_text(text.as_str())
    }
}

struct Parser<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Parser {
            lines: text.lines().enumerate(),
        }
    }

    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        self.lines
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| CoreError::Parse {
                line: 0,
                message: "unexpected end of file".to_owned(),
            })
    }

    fn parse(&mut self) -> Result<NGramModel> {
        let (line, header) = self.next_line()?;
        if header != "ngram-v1" {
            return Err(CoreError::Parse {
                line,
                message: format!("expected header 'ngram-v1', got {header:?}"),
            });
        }
        let order: usize = self.keyed_value("order")?;
        let smoothing_k: f64 = self.keyed_value("smoothing_k")?;
        let backoff: f64 = self.keyed_value("backoff")?;

        let vocab_len: usize = self.keyed_value("vocab")?;
        let mut vocab = BTreeSet::new();
        for _ in 0..vocab_len {
            let (line, text) = self.next_line()?;
            vocab.insert(Token::new(unquote(text.trim(), line)?));
        }

        let (line, header) = self.next_line()?;
        let (uni_len, unigram_total) = parse_pairline(header, "unigram", "total", line)?;
        let mut unigram = BTreeMap::new();
        for _ in 0..uni_len {
            let (line, text) = self.next_line()?;
            let (token, count) = split_token_count(text, line)?;
            unigram.insert(token, count);
        }

        let ctx_len: usize = self.keyed_value("contexts")?;
        let mut contexts = BTreeMap::new();
        for _ in 0..ctx_len {
            let (line, text) = self.next_line()?;
            let rest = text.strip_prefix("ctx ").ok_or_else(|| CoreError::Parse {
                line,
                message: format!("expected 'ctx ...', got {text:?}"),
            })?;
            let (ctx_part, total) = rest.rsplit_once(" total ").ok_or_else(|| CoreError::Parse {
                line,
                message: "missing 'total' in context line".to_owned(),
            })?;
            let total: u64 = total.parse().map_err(|e| CoreError::Parse {
                line,
                message: format!("bad total: {e}"),
            })?;
            let context = split_quoted_tokens(ctx_part, line)?;
            let mut counts = BTreeMap::new();
            let mut seen: u64 = 0;
            while seen < total {
                let (line, text) = self.next_line()?;
                let (token, count) = split_token_count(text.trim_start(), line)?;
                seen += count;
                counts.insert(token, count);
            }
            if seen != total {
                return Err(CoreError::Parse {
                    line,
                    message: format!("context counts sum to {seen}, header says {total}"),
                });
            }
            contexts.insert(context, ContextCounts { total, counts });
        }

        let model = NGramModel {
            order,
            smoothing_k,
            backoff,
            vocab,
            unigram_total,
            unigram,
            contexts,
        };
        if model.order < 1 || model.smoothing_k <= 0.0 || model.unigram_total == 0 {
            return Err(CoreError::Parse {
                line: 0,
                message: "invalid model parameters".to_owned(),
            });
        }
        Ok(model)
    }

    fn keyed_value<T: std::str::FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let (line, text) = self.next_line()?;
        let rest = text
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| CoreError::Parse {
                line,
                message: format!("expected '{key} <value>', got {text:?}"),
            })?;
        rest.split_whitespace()
            .next()
            .unwrap_or("")
            .parse()
            .map_err(|e| CoreError::Parse {
                line,
                message: format!("bad {key}: {e}"),
            })
    }
}

fn unquote(text: &str, line: usize) -> Result<String> {
    serde_json::from_str::<String>(text).map_err(|e| CoreError::Parse {
        line,
        message: format!("bad token literal {text:?}: {e}"),
    })
}

fn parse_pairline(text: &str, key1: &str, key2: &str, line: usize) -> Result<(usize, u64)> {
    let parts: Vec<&str> = text.split_whitespace().collect();
    if parts.len() == 4 && parts[0] == key1 && parts[2] == key2 {
        let a = parts[1].parse().map_err(|e| CoreError::Parse {
            line,
            message: format!("bad {key1}: {e}"),
        })?;
        let b = parts[3].parse().map_err(|e| CoreError::Parse {
            line,
            message: format!("bad {key2}: {e}"),
        })?;
        return Ok((a, b));
    }
    Err(CoreError::Parse {
        line,
        message: format!("expected '{key1} <n> {key2} <n>', got {text:?}"),
    })
}

fn split_token_count(text: &str, line: usize) -> Result<(Token, u64)> {
    let (token_part, count_part) = text.rsplit_once(' ').ok_or_else(|| CoreError::Parse {
        line,
        message: format!("expected '<token> <count>', got {text:?}"),
    })?;
    let count = count_part.parse().map_err(|e| CoreError::Parse {
        line,
        message: format!("bad count: {e}"),
    })?;
    Ok((Token::new(unquote(token_part, line)?), count))
}

fn split_quoted_tokens(text: &str, line: usize) -> Result<Vec<Token>> {
    // JSON string literals contain no unescaped spaces-with-quotes issues:
    // they start and end with '"' and inner quotes are escaped, so splitting
    // on '" "' boundaries via the JSON parser is reliable.
    let mut tokens = Vec::new();
    let mut rest = text.trim();
    while !rest.is_empty() {
        let mut de = serde_json::Deserializer::from_str(rest).into_iter::<String>();
        match de.next() {
            Some(Ok(s)) => {
                let consumed = de.byte_offset();
                tokens.push(Token::new(s));
                rest = rest[consumed..].trim_start();
            }
            _ => {
                return Err(CoreError::Parse {
                    line,
                    message: format!("bad context tokens {text:?}"),
                })
            }
        }
    }
    Ok(tokens)
}

/// `LogitProvider` over a trained n-gram model.
pub struct ToyBackend {
    model: NGramModel,
    id: String,
}

impl ToyBackend {
    pub fn new(model: NGramModel, id: impl Into<String>) -> Self {
        ToyBackend {
            model,
            id: id.into(),
        }
    }

    pub fn model(&self) -> &NGramModel {
        &self.model
    }
}

impl LogitProvider for ToyBackend {
    fn next_logits(&self, prefix: &str) -> Result<LogitVector> {
        self.model.next_logits(&tokenize_text(prefix))
    }

    fn tokenize(&self, text: &str) -> Result<Vec<Token>> {
        Ok(tokenize_text(text))
    }

    fn decode(&self, tokens: &[Token]) -> Result<String> {
        Ok(decode_tokens(tokens))
    }

    fn vocab_info(&self) -> VocabInfo {
        VocabInfo {
            size: Some(self.model.vocab.len()),
            kind: CoverageKind::Full,
        }
    }

    fn model_id(&self) -> String {
        self.id.clone()
    }
}
