//! Monte-Carlo check of the mixture model: when the evaluated model is an
//! exact geometric mixture, extrapolation at alpha* recovers the true
//! continuation component; logit noise makes large alpha overshoot.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::logits::Token;
use crate::mixture::{geometric_mixture, recover_p_alpha, tv_distance, Distribution, MixtureParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub vocab_size: usize,
    /// Mixture weight of the true-continuation component.
    pub gamma_star: f64,
    pub alphas: Vec<f64>,
    /// Standard deviation of Gaussian noise added to the mixture's logits.
    pub sigma: f64,
    pub trials: usize,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            vocab_size: 16,
            gamma_star: 0.5,
            alphas: super::default_alpha_grid(),
            sigma: 0.0,
            trials: 1000,
            seed: 0,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(CoreError::invalid_parameter(
                "vocab_size",
                "must be at least 2",
            ));
        }
        MixtureParams::from_gamma(self.gamma_star)?;
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
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(CoreError::invalid_parameter(
                "sigma",
                format!("must be finite and >= 0, got {}", self.sigma),
            ));
        }
        if self.trials < 1 {
            return Err(CoreError::invalid_parameter("trials", "must be at least 1"));
        }
        Ok(())
    }
}

/// Aggregate distance to the true component at one alpha.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaOutcome {
    pub alpha: f64,
    pub mean_tv: f64,
    pub max_tv: f64,
    /// Trials on which this alpha minimized TV (ties go to the smaller
    /// alpha).
    pub best_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub config: SimulationConfig,
    /// (1 - gamma*) / gamma*: the coefficient that inverts the mixture.
    pub alpha_star: f64,
    /// One entry per grid alpha, ascending.
    pub outcomes: Vec<AlphaOutcome>,
    /// Grid alpha with the smallest mean TV.
    pub alpha_hat: f64,
}

fn synthetic_token(index: usize, width: usize) -> Token {
    Token::new(format!("t{index:0width$}"))
}

fn draw_simplex(rng: &mut ChaCha8Rng, vocab: usize, width: usize) -> Result<Distribution> {
    // Normalized i.i.d. Exp(1) draws are uniform on the simplex, the least
    // informative generative assumption.
    let weights: BTreeMap<Token, f64> = (0..vocab)
        .map(|i| {
            let w: f64 = rng.sample(Exp1);
            (synthetic_token(i, width), w)
        })
        .collect();
    Distribution::from_weights(weights)
}

fn perturb_logits(p: &Distribution, sigma: f64, rng: &mut ChaCha8Rng) -> Result<Distribution> {
    let weights: BTreeMap<Token, f64> = p
        .probs()
        .iter()
        .map(|(token, &prob)| {
            let noise: f64 = rng.sample(StandardNormal);
            (token.clone(), prob.ln() + sigma * noise)
        })
        .map(|(token, logit)| (token, logit.exp()))
        .collect();
    Distribution::from_weights(weights)
}

/// Draws (p_C, p_L) pairs, mixes them at gamma*, optionally perturbs the
/// mixture's logits, and measures TV(p_alpha, p_C) across the alpha grid.
pub fn simulate_mixture(cfg: &SimulationConfig) -> Result<SimulationReport> {
    cfg.validate()?;
    let params = MixtureParams::from_gamma(cfg.gamma_star)?;
    let mut alphas = cfg.alphas.clone();
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();

    let width = (cfg.vocab_size - 1).to_string().len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sum_tv = vec![0.0f64; alphas.len()];
    let mut max_tv = vec![0.0f64; alphas.len()];
    let mut best_count = vec![0usize; alphas.len()];

    for _ in 0..cfg.trials {
        let p_c = draw_simplex(&mut rng, cfg.vocab_size, width)?;
        let p_l = draw_simplex(&mut rng, cfg.vocab_size, width)?;
        let p_m = geometric_mixture(&p_c, &p_l, cfg.gamma_star)?;
        let p_m = if cfg.sigma > 0.0 {
            perturb_logits(&p_m, cfg.sigma, &mut rng)?
        } else {
            p_m
        };

        let mut best = 0usize;
        let mut best_tv = f64::INFINITY;
        for (i, &alpha) in alphas.iter().enumerate() {
            let p_alpha = recover_p_alpha(&p_m, &p_l, alpha)?;
            let tv = tv_distance(&p_alpha, &p_c);
            sum_tv[i] += tv;
            max_tv[i] = max_tv[i].max(tv);
            if tv < best_tv {
                best_tv = tv;
                best = i;
            }
        }
        best_count[best] += 1;
    }

    let outcomes: Vec<AlphaOutcome> = alphas
        .iter()
        .enumerate()
        .map(|(i, &alpha)| AlphaOutcome {
            alpha,
            mean_tv: sum_tv[i] / cfg.trials as f64,
            max_tv: max_tv[i],
            best_count: best_count[i],
        })
        .collect();
    let alpha_hat = outcomes
        .iter()
        .min_by(|a, b| a.mean_tv.total_cmp(&b.mean_tv))
        .expect("grid non-empty")
        .alpha;

    Ok(SimulationReport {
        config: cfg.clone(),
        alpha_star: params.alpha_star,
        outcomes,
        alpha_hat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config() -> SimulationConfig {
        SimulationConfig {
            vocab_size: 8,
            gamma_star: 0.5,
            alphas: vec![-1.0, 0.0, 1.0, 2.0, 3.0],
            sigma: 0.0,
            trials: 200,
            seed: 7,
        }
    }

    #[test]
    fn noiseless_inversion_is_exact_on_every_trial() {
        let cfg = base_config();
        let report = simulate_mixture(&cfg).unwrap();
        assert_eq!(report.alpha_star, 1.0);
        assert_eq!(report.alpha_hat, 1.0);
        let at_star = report.outcomes.iter().find(|o| o.alpha == 1.0).unwrap();
        assert!(at_star.max_tv <= 1e-9, "max TV {}", at_star.max_tv);
        assert_eq!(at_star.best_count, cfg.trials);
    }

    #[test]
    fn baseline_alpha_zero_keeps_its_distance() {
        let report = simulate_mixture(&base_config()).unwrap();
        let at_zero = report.outcomes.iter().find(|o| o.alpha == 0.0).unwrap();
        // p_0 = p_M sits strictly between the components on every draw.
        assert!(at_zero.mean_tv > 0.0);
        assert_eq!(at_zero.best_count, 0);
    }

    #[test]
    fn noise_makes_overshoot_worse() {
        let mut cfg = base_config();
        cfg.sigma = 0.5;
        cfg.trials = 500;
        let report = simulate_mixture(&cfg).unwrap();
        let mean_at = |alpha: f64| {
            report
                .outcomes
                .iter()
                .find(|o| o.alpha == alpha)
                .unwrap()
                .mean_tv
        };
        assert!(
            mean_at(3.0) > mean_at(1.0),
            "alpha*+2: {}, alpha*: {}",
            mean_at(3.0),
            mean_at(1.0)
        );
    }

    #[test]
    fn simulation_is_deterministic() {
        let cfg = base_config();
        let a = simulate_mixture(&cfg).unwrap();
        let b = simulate_mixture(&cfg).unwrap();
        assert_eq!(a, b);
        let mut other = cfg;
        other.seed = 8;
        assert_ne!(simulate_mixture(&other).unwrap(), a);
    }

    #[test]
    fn gamma_one_needs_no_correction() {
        // gamma* = 1 means no mixing: the mixture already equals the target,
        // so alpha* = 0 and any nonzero alpha moves away from it.
        let mut cfg = base_config();
        cfg.gamma_star = 1.0;
        cfg.trials = 50;
        let report = simulate_mixture(&cfg).unwrap();
        assert_eq!(report.alpha_star, 0.0);
        assert_eq!(report.alpha_hat, 0.0);
        let at_zero = report.outcomes.iter().find(|o| o.alpha == 0.0).unwrap();
        assert!(at_zero.max_tv <= 1e-9, "max TV {}", at_zero.max_tv);
        assert_eq!(at_zero.best_count, 50);
        let at_minus_one = report.outcomes.iter().find(|o| o.alpha == -1.0).unwrap();
        assert!(at_minus_one.mean_tv > 0.0);
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut cfg = base_config();
        cfg.vocab_size = 1;
        assert!(simulate_mixture(&cfg).is_err());
        let mut cfg = base_config();
        cfg.trials = 0;
        assert!(simulate_mixture(&cfg).is_err());
        let mut cfg = base_config();
        cfg.sigma = -0.1;
        assert!(simulate_mixture(&cfg).is_err());
        let mut cfg = base_config();
        cfg.gamma_star = 0.0;
        assert!(simulate_mixture(&cfg).is_err());
    }
}
