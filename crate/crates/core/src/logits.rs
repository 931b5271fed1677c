//! Logit vectors and the extrapolation arithmetic performed on them.
//!
//! The central operation is `extrapolate`: given logits `l_O` from the
//! original prompt and `l_W` from a deliberately weakened prompt, it forms
//! `l_a = l_O + a * (l_O - l_W)`, linearly extrapolating away from the
//! weakened distribution. `a = 0` reproduces the original model, `a = -1`
//! the weakened one.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::mixture::Distribution;

/// A token, identified by its exact text. Lexicographic order on the text is
/// the canonical token order; every deterministic tie-break in this crate
/// ("smallest token id") refers to it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(pub String);

impl Token {
    pub fn new(text: impl Into<String>) -> Self {
        Token(text.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for Token {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Token {
    fn from(s: &str) -> Self {
        Token(s.to_owned())
    }
}

/// Whether a logit vector covers the backend's whole vocabulary or only the
/// top k tokens an API returned. Top-k vectors carry the floor value used
/// for absent tokens when two vectors are merged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Coverage {
    Full,
    TopK { floor: f64 },
}

/// Distance below the smallest stored logit at which the default top-k floor
/// sits. Keeps extrapolation defined for absent tokens while making them
/// effectively unsampleable.
pub const DEFAULT_FLOOR_OFFSET: f64 = 10.0;

/// Map from token to unnormalized log-score. All stored values are finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitVector {
    entries: BTreeMap<Token, f64>,
    coverage: Coverage,
}

impl LogitVector {
    /// A vector covering the full vocabulary of its backend.
    pub fn full(entries: BTreeMap<Token, f64>) -> Result<Self> {
        check_finite(&entries)?;
        Ok(LogitVector {
            entries,
            coverage: Coverage::Full,
        })
    }

    /// A truncated vector with an explicit floor. The floor must not exceed
    /// the smallest stored logit (floor-filled entries sit exactly at it).
    pub fn top_k(entries: BTreeMap<Token, f64>, floor: f64) -> Result<Self> {
        check_finite(&entries)?;
        if !floor.is_finite() {
            return Err(CoreError::invalid_parameter("floor", "must be finite"));
        }
        if let Some(min) = min_value(&entries) {
            if floor > min {
                return Err(CoreError::invalid_parameter(
                    "floor",
                    format!("floor {floor} exceeds smallest stored logit {min}"),
                ));
            }
        }
        Ok(LogitVector {
            entries,
            coverage: Coverage::TopK { floor },
        })
    }

    /// Truncated vector with the floor at its default offset below the
    /// smallest stored logit.
    pub fn top_k_default_floor(entries: BTreeMap<Token, f64>) -> Result<Self> {
        let floor = min_value(&entries).unwrap_or(0.0) - DEFAULT_FLOOR_OFFSET;
        LogitVector::top_k(entries, floor)
    }

    pub fn entries(&self) -> &BTreeMap<Token, f64> {
        &self.entries
    }

    pub fn coverage(&self) -> Coverage {
        self.coverage
    }

    pub fn get(&self, token: &Token) -> Option<f64> {
        self.entries.get(token).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Token with the highest logit, ties broken by smallest token id.
    pub fn argmax(&self) -> Option<&Token> {
        let mut best: Option<(&Token, f64)> = None;
        for (token, &logit) in &self.entries {
            match best {
                Some((_, b)) if logit <= b => {}
                _ => best = Some((token, logit)),
            }
        }
        best.map(|(t, _)| t)
    }

    /// Adds `c` to every entry (and to a top-k floor). Softmax output is
    /// invariant under this shift.
    pub fn shifted(&self, c: f64) -> Result<Self> {
        let entries = self
            .entries
            .iter()
            .map(|(t, &l)| (t.clone(), l + c))
            .collect();
        match self.coverage {
            Coverage::Full => LogitVector::full(entries),
            Coverage::TopK { floor } => LogitVector::top_k(entries, floor + c),
        }
    }
}

fn check_finite(entries: &BTreeMap<Token, f64>) -> Result<()> {
    for (token, value) in entries {
        if !value.is_finite() {
            return Err(CoreError::invalid_parameter(
                "logit",
                format!("non-finite logit {value} for token {token:?}"),
            ));
        }
    }
    Ok(())
}

fn min_value(entries: &BTreeMap<Token, f64>) -> Option<f64> {
    entries.values().copied().fold(None, |acc, v| {
        Some(match acc {
            None => v,
            Some(a) => a.min(v),
        })
    })
}

/// Sampling temperature. Zero means deterministic argmax decoding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(value: f64) -> Result<Self> {
        if !value.is_finite() || value < 0.0 {
            return Err(CoreError::invalid_parameter(
                "temperature",
                format!("must be finite and >= 0, got {value}"),
            ));
        }
        Ok(Temperature(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0.0
    }
}

/// `result[t] = original[t] + alpha * (original[t] - weakened[t])`.
///
/// Both vectors must cover the same token set; run top-k vectors through
/// `merge_topk` first. `alpha = 0` and `alpha = -1` return clones of the
/// inputs so the identity cases are exact rather than rounded.
pub fn extrapolate(
    original: &LogitVector,
    weakened: &LogitVector,
    alpha: f64,
) -> Result<LogitVector> {
    if !alpha.is_finite() {
        return Err(CoreError::invalid_parameter(
            "alpha",
            format!("must be finite, got {alpha}"),
        ));
    }
    check_same_tokens(original, weakened)?;
    if alpha == 0.0 {
        return Ok(original.clone());
    }
    if alpha == -1.0 {
        return Ok(weakened.clone());
    }

    let mut entries = BTreeMap::new();
    for (token, &o) in original.entries() {
        let w = weakened.get(token).expect("token sets checked equal");
        entries.insert(token.clone(), o + alpha * (o - w));
    }
    check_finite(&entries)?;

    let coverage = match (original.coverage(), weakened.coverage()) {
        (Coverage::Full, Coverage::Full) => Coverage::Full,
        (Coverage::TopK { floor: fo }, Coverage::TopK { floor: fw }) => {
            // Extrapolate the floors like any other entry, but never above the
            // smallest real entry: with floors on opposite sides of the
            // entries the formula can overshoot.
            let extrapolated = fo + alpha * (fo - fw);
            let min = min_value(&entries).unwrap_or(extrapolated);
            Coverage::TopK {
                floor: extrapolated.min(min),
            }
        }
        // Mixed coverage over an identical token set carries no usable floor
        // pair; stay truncated with the most conservative valid floor.
        _ => Coverage::TopK {
            floor: min_value(&entries).unwrap_or(0.0),
        },
    };

    Ok(LogitVector { entries, coverage })
}

fn check_same_tokens(a: &LogitVector, b: &LogitVector) -> Result<()> {
    if a.len() == b.len() && a.entries().keys().eq(b.entries().keys()) {
        return Ok(());
    }
    let example = a
        .entries()
        .keys()
        .find(|t| b.get(t).is_none())
        .or_else(|| b.entries().keys().find(|t| a.get(t).is_none()))
        .cloned()
        .unwrap_or_else(|| Token::new(""));
    Err(CoreError::TokenSetMismatch {
        left: a.len(),
        right: b.len(),
        example,
    })
}

/// Extends two top-k vectors to the union of their token sets, filling each
/// side's absent tokens with that side's floor. Anything involving a
/// full-coverage vector passes through unchanged (there is nothing to fill).
pub fn merge_topk(
    original: &LogitVector,
    weakened: &LogitVector,
) -> Result<(LogitVector, LogitVector)> {
    let (fo, fw) = match (original.coverage(), weakened.coverage()) {
        (Coverage::TopK { floor: fo }, Coverage::TopK { floor: fw }) => (fo, fw),
        _ => return Ok((original.clone(), weakened.clone())),
    };

    let fill = |source: &LogitVector, other: &LogitVector, floor: f64| -> Result<LogitVector> {
        let mut entries = source.entries().clone();
        for token in other.entries().keys() {
            entries.entry(token.clone()).or_insert(floor);
        }
        LogitVector::top_k(entries, floor)
    };

    Ok((
        fill(original, weakened, fo)?,
        fill(weakened, original, fw)?,
    ))
}

/// Boltzmann conversion `p ∝ exp(l / T)`, computed with max-subtraction.
/// `T = 0` yields a one-hot on the argmax, ties broken by smallest token id.
pub fn logits_to_distribution(logits: &LogitVector, temp: Temperature) -> Result<Distribution> {
    if logits.is_empty() {
        return Err(CoreError::EmptyInput("logit vector"));
    }

    if temp.is_zero() {
        let winner = logits.argmax().expect("non-empty").clone();
        let probs = logits
            .entries()
            .keys()
            .map(|t| (t.clone(), if *t == winner { 1.0 } else { 0.0 }))
            .collect();
        return Distribution::new(probs);
    }

    let t = temp.value();
    let max = logits
        .entries()
        .values()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: BTreeMap<Token, f64> = logits
        .entries()
        .iter()
        .map(|(token, &l)| (token.clone(), ((l - max) / t).exp()))
        .collect();
    Distribution::from_weights(weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lv(pairs: &[(&str, f64)]) -> LogitVector {
        LogitVector::full(pairs.iter().map(|(t, l)| (Token::from(*t), *l)).collect()).unwrap()
    }

    #[test]
    fn worked_example_flips_argmax() {
        // Alphabet-skip prompt: original favours "H", weakened even more so;
        // at alpha = 4 the extrapolation favours "I".
        let original = lv(&[("H", -74.8), ("I", -77.8)]);
        let weakened = lv(&[("H", -68.1), ("I", -73.8)]);
        let out = extrapolate(&original, &weakened, 4.0).unwrap();
        assert!((out.get(&Token::from("H")).unwrap() - -101.6).abs() < 1e-9);
        assert!((out.get(&Token::from("I")).unwrap() - -93.8).abs() < 1e-9);
        assert_eq!(original.argmax().unwrap().as_str(), "H");
        assert_eq!(out.argmax().unwrap().as_str(), "I");
    }

    #[test]
    fn alpha_zero_is_original_exactly() {
        let o = lv(&[("a", 0.3), ("b", -1.7)]);
        let w = lv(&[("a", 5.1), ("b", 2.2)]);
        assert_eq!(extrapolate(&o, &w, 0.0).unwrap(), o);
    }

    #[test]
    fn alpha_minus_one_is_weakened_exactly() {
        let o = lv(&[("a", 0.3), ("b", -1.7)]);
        let w = lv(&[("a", 5.1), ("b", 2.2)]);
        assert_eq!(extrapolate(&o, &w, -1.0).unwrap(), w);
    }

    #[test]
    fn mismatched_token_sets_error() {
        let o = lv(&[("a", 0.0)]);
        let w = lv(&[("b", 0.0)]);
        let err = extrapolate(&o, &w, 1.0).unwrap_err();
        assert!(matches!(err, CoreError::TokenSetMismatch { .. }), "{err}");
    }

    #[test]
    fn non_finite_alpha_rejected() {
        let o = lv(&[("a", 0.0)]);
        assert!(extrapolate(&o, &o, f64::NAN).is_err());
        assert!(extrapolate(&o, &o, f64::INFINITY).is_err());
    }

    #[test]
    fn merge_fills_with_own_floor() {
        let o = LogitVector::top_k([(Token::from("a"), -1.0)].into(), -10.0).unwrap();
        let w = LogitVector::top_k([(Token::from("b"), -2.0)].into(), -9.0).unwrap();
        let (om, wm) = merge_topk(&o, &w).unwrap();
        assert_eq!(om.get(&Token::from("a")), Some(-1.0));
        assert_eq!(om.get(&Token::from("b")), Some(-10.0));
        assert_eq!(wm.get(&Token::from("a")), Some(-9.0));
        assert_eq!(wm.get(&Token::from("b")), Some(-2.0));
        assert_eq!(om.coverage(), Coverage::TopK { floor: -10.0 });
        assert_eq!(wm.coverage(), Coverage::TopK { floor: -9.0 });
    }

    #[test]
    fn merge_identical_sets_is_noop() {
        let o = LogitVector::top_k([(Token::from("a"), -1.0)].into(), -5.0).unwrap();
        let w = LogitVector::top_k([(Token::from("a"), -2.0)].into(), -6.0).unwrap();
        let (om, wm) = merge_topk(&o, &w).unwrap();
        assert_eq!(om, o);
        assert_eq!(wm, w);
    }

    #[test]
    fn merge_passes_full_coverage_through() {
        let o = lv(&[("a", 1.0)]);
        let w = lv(&[("b", 1.0)]);
        let (om, wm) = merge_topk(&o, &w).unwrap();
        assert_eq!(om, o);
        assert_eq!(wm, w);
    }

    #[test]
    fn merge_api_style_five_token_overlap() {
        // Two 5-token vectors sharing 3 tokens merge to the 7-token union
        // with 2 floor-filled entries per side.
        let o = LogitVector::top_k(
            [
                (Token::from("a"), -1.0),
                (Token::from("b"), -2.0),
                (Token::from("c"), -3.0),
                (Token::from("d"), -4.0),
                (Token::from("e"), -5.0),
            ]
            .into(),
            -15.0,
        )
        .unwrap();
        let w = LogitVector::top_k(
            [
                (Token::from("c"), -1.5),
                (Token::from("d"), -2.5),
                (Token::from("e"), -3.5),
                (Token::from("f"), -4.5),
                (Token::from("g"), -5.5),
            ]
            .into(),
            -15.5,
        )
        .unwrap();
        let (om, wm) = merge_topk(&o, &w).unwrap();
        assert_eq!(om.len(), 7);
        assert_eq!(wm.len(), 7);
        assert_eq!(om.get(&Token::from("f")), Some(-15.0));
        assert_eq!(om.get(&Token::from("g")), Some(-15.0));
        assert_eq!(wm.get(&Token::from("a")), Some(-15.5));
        assert_eq!(wm.get(&Token::from("b")), Some(-15.5));
        // Merged vectors extrapolate without a token-set error.
        assert!(extrapolate(&om, &wm, 2.0).is_ok());
    }

    #[test]
    fn extrapolated_floor_never_exceeds_entries() {
        // Floors -10/-9 extrapolate to -14 at alpha = 4, but entry "a"
        // lands at -42; the result floor must clamp down to it.
        let o = LogitVector::top_k([(Token::from("a"), -10.0)].into(), -10.0).unwrap();
        let w = LogitVector::top_k([(Token::from("a"), -2.0)].into(), -9.0).unwrap();
        let out = extrapolate(&o, &w, 4.0).unwrap();
        let a = out.get(&Token::from("a")).unwrap();
        assert!((a - -42.0).abs() < 1e-9);
        match out.coverage() {
            Coverage::TopK { floor } => assert!(floor <= a),
            other => panic!("expected top-k coverage, got {other:?}"),
        }
    }

    #[test]
    fn boltzmann_uniform_on_equal_logits() {
        let d = logits_to_distribution(
            &lv(&[("a", 1.0), ("b", 1.0), ("c", 1.0)]),
            Temperature::new(1.0).unwrap(),
        )
        .unwrap();
        for token in ["a", "b", "c"] {
            assert!((d.prob(&Token::from(token)) - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn boltzmann_closed_form() {
        let d = logits_to_distribution(
            &lv(&[("a", 0.0), ("b", 3f64.ln())]),
            Temperature::new(1.0).unwrap(),
        )
        .unwrap();
        assert!((d.prob(&Token::from("a")) - 0.25).abs() < 1e-12);
        assert!((d.prob(&Token::from("b")) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn zero_temperature_is_argmax() {
        let d = logits_to_distribution(
            &lv(&[("a", 5.0), ("b", 2.0)]),
            Temperature::new(0.0).unwrap(),
        )
        .unwrap();
        assert_eq!(d.prob(&Token::from("a")), 1.0);
        assert_eq!(d.prob(&Token::from("b")), 0.0);
    }

    #[test]
    fn zero_temperature_ties_break_to_smallest_token() {
        let d = logits_to_distribution(
            &lv(&[("z", 1.0), ("b", 1.0), ("m", 1.0)]),
            Temperature::new(0.0).unwrap(),
        )
        .unwrap();
        assert_eq!(d.prob(&Token::from("b")), 1.0);
    }

    #[test]
    fn empty_logits_rejected() {
        let v = LogitVector::full(BTreeMap::new()).unwrap();
        assert!(logits_to_distribution(&v, Temperature::new(1.0).unwrap()).is_err());
    }

    #[test]
    fn floor_above_min_rejected() {
        let err = LogitVector::top_k([(Token::from("a"), -3.0)].into(), -2.0).unwrap_err();
        assert!(matches!(err, CoreError::InvalidParameter { .. }), "{err}");
    }

    #[test]
    fn non_finite_logit_rejected() {
        let mut m = BTreeMap::new();
        m.insert(Token::from("a"), f64::NAN);
        assert!(LogitVector::full(m).is_err());
    }
}
