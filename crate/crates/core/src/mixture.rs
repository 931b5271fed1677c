//! Probability distributions and the geometric-mixture model behind
//! extrapolation.
//!
//! The model: an LM's next-token distribution is a geometric mixture
//! `p_M ∝ p_C^g * p_L^(1-g)` of a true-continuation component `p_C` and a
//! local-prior component `p_L`. Inverting the mixture gives
//! `p_a ∝ p_M^(1+a) * p_L^(-a)`, which recovers `p_C` exactly at
//! `a* = (1-g)/g`. All products are evaluated in log-space with
//! max-subtraction; the exponentiated forms underflow for realistic logits.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::logits::Token;

/// Sum tolerance for a valid probability vector.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Default threshold for `detect_strong_prior`. The source definition leaves
/// the threshold open ("a predetermined threshold"); 0.05 is this crate's
/// documented default and every caller can override it.
pub const DEFAULT_EPSILON: f64 = 0.05;

/// A normalized probability vector over a token set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    probs: BTreeMap<Token, f64>,
}

impl Distribution {
    /// Validates that entries are finite, non-negative, and sum to 1 within
    /// `SUM_TOLERANCE`.
    pub fn new(probs: BTreeMap<Token, f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(CoreError::EmptyInput("distribution"));
        }
        let mut sum = 0.0;
        for (token, &p) in &probs {
            if !p.is_finite() || p < 0.0 {
                return Err(CoreError::InvalidDistribution(format!(
                    "probability {p} for token {token:?}"
                )));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(CoreError::InvalidDistribution(format!(
                "probabilities sum to {sum}"
            )));
        }
        Ok(Distribution { probs })
    }

    /// Normalizes non-negative weights. The weight sum must be positive.
    pub fn from_weights(weights: BTreeMap<Token, f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(CoreError::EmptyInput("distribution"));
        }
        let mut sum = 0.0;
        for (token, &w) in &weights {
            if !w.is_finite() || w < 0.0 {
                return Err(CoreError::InvalidDistribution(format!(
                    "weight {w} for token {token:?}"
                )));
            }
            sum += w;
        }
        if sum <= 0.0 {
            return Err(CoreError::InvalidDistribution(
                "all weights are zero".to_owned(),
            ));
        }
        let probs = weights.into_iter().map(|(t, w)| (t, w / sum)).collect();
        Ok(Distribution { probs })
    }

    pub fn probs(&self) -> &BTreeMap<Token, f64> {
        &self.probs
    }

    /// Probability of `token`, zero if absent.
    pub fn prob(&self, token: &Token) -> f64 {
        self.probs.get(token).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Most probable token, ties broken by smallest token id.
    pub fn argmax(&self) -> Option<&Token> {
        let mut best: Option<(&Token, f64)> = None;
        for (token, &p) in &self.probs {
            match best {
                Some((_, b)) if p <= b => {}
                _ => best = Some((token, p)),
            }
        }
        best.map(|(t, _)| t)
    }
}

/// Mixture weight and the extrapolation coefficient that inverts it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub gamma: f64,
    pub alpha_star: f64,
}

impl MixtureParams {
    const LINK_TOLERANCE: f64 = 1e-12;

    pub fn from_gamma(gamma: f64) -> Result<Self> {
        if !gamma.is_finite() || gamma <= 0.0 || gamma > 1.0 {
            return Err(CoreError::invalid_parameter(
                "gamma",
                format!("must be in (0, 1], got {gamma}"),
            ));
        }
        Ok(MixtureParams {
            gamma,
            alpha_star: (1.0 - gamma) / gamma,
        })
    }

    /// Validates a (gamma, alpha_star) pair against `alpha* = (1-g)/g`.
    pub fn new(gamma: f64, alpha_star: f64) -> Result<Self> {
        let derived = MixtureParams::from_gamma(gamma)?;
        if alpha_star < 0.0 || (alpha_star - derived.alpha_star).abs() > Self::LINK_TOLERANCE {
            return Err(CoreError::invalid_parameter(
                "alpha_star",
                format!(
                    "inconsistent with gamma {gamma}: expected {}, got {alpha_star}",
                    derived.alpha_star
                ),
            ));
        }
        Ok(MixtureParams { gamma, alpha_star })
    }
}

fn check_same_tokens(a: &Distribution, b: &Distribution) -> Result<()> {
    if a.len() == b.len() && a.probs().keys().eq(b.probs().keys()) {
        return Ok(());
    }
    let example = a
        .probs()
        .keys()
        .find(|t| !b.probs().contains_key(*t))
        .or_else(|| b.probs().keys().find(|t| !a.probs().contains_key(*t)))
        .cloned()
        .unwrap_or_else(|| Token::new(""));
    Err(CoreError::TokenSetMismatch {
        left: a.len(),
        right: b.len(),
        example,
    })
}

/// `result ∝ p_c^gamma * p_l^(1-gamma)`, renormalized.
///
/// Tokens with zero probability are allowed only where both inputs are zero;
/// a zero on exactly one side would silently erase or blow up mass, so it is
/// an error instead.
pub fn geometric_mixture(p_c: &Distribution, p_l: &Distribution, gamma: f64) -> Result<Distribution> {
    if !gamma.is_finite() || !(0.0..=1.0).contains(&gamma) {
        return Err(CoreError::invalid_parameter(
            "gamma",
            format!("must be in [0, 1], got {gamma}"),
        ));
    }
    check_same_tokens(p_c, p_l)?;
    if gamma == 1.0 {
        return Ok(p_c.clone());
    }
    if gamma == 0.0 {
        return Ok(p_l.clone());
    }

    let mut log_weights = BTreeMap::new();
    let mut zeros = BTreeSet::new();
    for (token, &c) in p_c.probs() {
        let l = p_l.prob(token);
        match (c > 0.0, l > 0.0) {
            (true, true) => {
                log_weights.insert(token.clone(), gamma * c.ln() + (1.0 - gamma) * l.ln());
            }
            (false, false) => {
                zeros.insert(token.clone());
            }
            _ => {
                return Err(CoreError::DegenerateSupport {
                    token: token.clone(),
                });
            }
        }
    }
    normalize_log_weights(log_weights, zeros)
}

/// `result ∝ p_m^(1+alpha) * p_l^(-alpha)`, renormalized; the inversion step
/// of the mixture model. `alpha = 0` returns `p_m` and `alpha = -1` returns
/// `p_l`, exactly.
pub fn recover_p_alpha(p_m: &Distribution, p_l: &Distribution, alpha: f64) -> Result<Distribution> {
    if !alpha.is_finite() {
        return Err(CoreError::invalid_parameter(
            "alpha",
            format!("must be finite, got {alpha}"),
        ));
    }
    check_same_tokens(p_m, p_l)?;
    if alpha == 0.0 {
        return Ok(p_m.clone());
    }
    if alpha == -1.0 {
        return Ok(p_l.clone());
    }

    let mut log_weights = BTreeMap::new();
    let mut zeros = BTreeSet::new();
    for (token, &m) in p_m.probs() {
        let l = p_l.prob(token);
        match (m > 0.0, l > 0.0) {
            (true, true) => {
                log_weights.insert(token.clone(), (1.0 + alpha) * m.ln() - alpha * l.ln());
            }
            (false, false) => {
                zeros.insert(token.clone());
            }
            // p_l = 0 with a positive exponent -alpha sends the weight to
            // zero; with alpha > 0 the factor p_l^(-alpha) diverges.
            (true, false) => {
                if alpha > 0.0 {
                    return Err(CoreError::DegenerateSupport {
                        token: token.clone(),
                    });
                }
                zeros.insert(token.clone());
            }
            // p_m = 0: harmless while 1+alpha > 0, divergent below alpha = -1.
            (false, true) => {
                if 1.0 + alpha < 0.0 {
                    return Err(CoreError::DegenerateSupport {
                        token: token.clone(),
                    });
                }
                zeros.insert(token.clone());
            }
        }
    }
    normalize_log_weights(log_weights, zeros)
}

fn normalize_log_weights(
    log_weights: BTreeMap<Token, f64>,
    zeros: BTreeSet<Token>,
) -> Result<Distribution> {
    if log_weights.is_empty() {
        return Err(CoreError::InvalidDistribution(
            "no token has positive weight".to_owned(),
        ));
    }
    let max = log_weights
        .values()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut weights: BTreeMap<Token, f64> = log_weights
        .into_iter()
        .map(|(t, lw)| (t, (lw - max).exp()))
        .collect();
    for token in zeros {
        weights.insert(token, 0.0);
    }
    Distribution::from_weights(weights)
}

/// Total variation distance: half the L1 distance. Tokens missing from one
/// side count as probability zero.
pub fn tv_distance(p: &Distribution, q: &Distribution) -> f64 {
    let mut sum = 0.0;
    for (token, &pp) in p.probs() {
        sum += (pp - q.prob(token)).abs();
    }
    for (token, &qq) in q.probs() {
        if !p.probs().contains_key(token) {
            sum += qq;
        }
    }
    sum / 2.0
}

/// `KL(p || q) = Σ p ln(p/q)` with `0 ln 0 := 0`. An absolute-continuity
/// violation (`p > 0` where `q = 0`) yields infinity as a distinguished
/// value rather than an error. Rounding can push the sum a hair below zero
/// for near-identical inputs; it is clamped to zero.
pub fn kl_divergence(p: &Distribution, q: &Distribution) -> f64 {
    let mut sum = 0.0;
    for (token, &pp) in p.probs() {
        if pp == 0.0 {
            continue;
        }
        let qq = q.prob(token);
        if qq == 0.0 {
            return f64::INFINITY;
        }
        sum += pp * (pp / qq).ln();
    }
    sum.max(0.0)
}

/// Result of a strong-local-prior check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrongPriorCheck {
    pub is_strong: bool,
    pub delta: f64,
}

/// A task induces a strong local prior when the full-prompt and data-only
/// next-token distributions are close: `delta = TV(p_full, p_data_only)`,
/// flagged when `delta <= epsilon`.
pub fn detect_strong_prior(
    p_full: &Distribution,
    p_data_only: &Distribution,
    epsilon: f64,
) -> Result<StrongPriorCheck> {
    if !epsilon.is_finite() || epsilon <= 0.0 {
        return Err(CoreError::invalid_parameter(
            "epsilon",
            format!("must be finite and > 0, got {epsilon}"),
        ));
    }
    let delta = tv_distance(p_full, p_data_only);
    Ok(StrongPriorCheck {
        is_strong: delta <= epsilon,
        delta,
    })
}
