//! Model densities: truncated-geometric skip distribution, Poisson
//! observation model, Gamma/Beta population priors, and the per-user
//! marginalized log-likelihood. Everything downstream (simulation,
//! inference, prediction) calls into this module.
//!
//! All heavy expressions are evaluated in log space; the inner sum over
//! skip counts uses log-sum-exp because `(pi * exp(-lambda))^s` underflows
//! in linear space for realistic rates.

use crate::data::CycleHistory;
use crate::error::{ModelError, Result};
use rand::Rng;
use rand_distr::{Beta as BetaSampler, Distribution, Gamma as GammaSampler};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

/// Largest skip probability the model stores. The skip-distribution
/// normalizer divides by 1 - pi^(S+1), so pi must stay strictly below 1.
pub const PI_MAX: f64 = 1.0 - 1e-9;

/// Smallest nonzero skip probability produced by sampling; keeps ln(pi)
/// bounded in score computations.
pub const PI_MIN: f64 = 1e-12;

/// Terms this far (in nats) below the running maximum of a decreasing
/// log-sum-exp tail are dropped; the truncation error is below 1e-18
/// relative even with a thousand dropped terms.
const LSE_TAIL_CUTOFF: f64 = 46.0;

/// Population-level hyperparameters u = [kappa, gamma, alpha, beta]:
/// Gamma(kappa, gamma) prior on the per-user rate lambda and
/// Beta(alpha, beta) prior on the per-user skip probability pi.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// Gamma shape for lambda.
    pub kappa: f64,
    /// Gamma rate for lambda (1/day).
    pub gamma: f64,
    /// Beta shape a for pi.
    pub alpha: f64,
    /// Beta shape b for pi.
    pub beta: f64,
}

impl Hyperparameters {
    pub fn new(kappa: f64, gamma: f64, alpha: f64, beta: f64) -> Result<Self> {
        let u = Hyperparameters {
            kappa,
            gamma,
            alpha,
            beta,
        };
        u.validate()?;
        Ok(u)
    }

    /// Informative default centered on ~30-day cycles with a low skip
    /// probability: [kappa, gamma, alpha, beta] = [180, 6, 2, 20].
    pub fn informative_default() -> Self {
        Hyperparameters {
            kappa: 180.0,
            gamma: 6.0,
            alpha: 2.0,
            beta: 20.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("kappa", self.kappa),
            ("gamma", self.gamma),
            ("alpha", self.alpha),
            ("beta", self.beta),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(ModelError::InvalidParameter(format!(
                    "hyperparameter {name} must be finite and positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Prior mean cycle length, kappa / gamma.
    pub fn mean_cycle_length(&self) -> f64 {
        self.kappa / self.gamma
    }

    /// Prior mean skip probability, alpha / (alpha + beta).
    pub fn mean_skip_probability(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    /// Log-space view used by the optimizer.
    pub fn to_log_array(&self) -> [f64; 4] {
        [
            self.kappa.ln(),
            self.gamma.ln(),
            self.alpha.ln(),
            self.beta.ln(),
        ]
    }

    pub fn from_log_array(log_u: [f64; 4]) -> Result<Self> {
        Hyperparameters::new(
            log_u[0].exp(),
            log_u[1].exp(),
            log_u[2].exp(),
            log_u[3].exp(),
        )
    }
}

/// Per-user parameters theta = [lambda, pi].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserParameters {
    /// Poisson rate of the true cycle length, in days.
    pub lambda: f64,
    /// Per-cycle probability of skipping tracking, in [0, 1).
    pub pi: f64,
}

impl UserParameters {
    pub fn new(lambda: f64, pi: f64) -> Result<Self> {
        let theta = UserParameters { lambda, pi };
        theta.validate()?;
        Ok(theta)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda <= 0.0 {
            return Err(ModelError::InvalidParameter(format!(
                "lambda must be finite and positive, got {}",
                self.lambda
            )));
        }
        if !self.pi.is_finite() || self.pi < 0.0 || self.pi >= 1.0 {
            return Err(ModelError::InvalidParameter(format!(
                "pi must lie in [0, 1), got {}",
                self.pi
            )));
        }
        Ok(())
    }
}

/// Shared numerical configuration: skip truncation S, Monte-Carlo sample
/// count M, predictive grid bound D, and the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Maximum modeled skip count (truncation of the skip distribution).
    pub s_max: u32,
    /// Monte-Carlo sample count M for marginal-likelihood estimates.
    pub mc_samples: usize,
    /// Upper bound D of the predictive grid over next cycle length.
    pub d_max: u32,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mc_samples < 1 {
            return Err(ModelError::InvalidParameter(
                "mc_samples must be at least 1".into(),
            ));
        }
        if self.d_max < 1 {
            return Err(ModelError::InvalidParameter(
                "d_max must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

impl Default for ModelConfig {
    /// S=100, M=1000, D=300. D covers roughly nine skipped cycles at the
    /// default 30-day scale, beyond which predictive mass is negligible.
    fn default() -> Self {
        ModelConfig {
            s_max: 100,
            mc_samples: 1000,
            d_max: 300,
            seed: 0,
        }
    }
}

fn check_pi(pi: f64) -> Result<()> {
    if !pi.is_finite() || !(0.0..1.0).contains(&pi) {
        return Err(ModelError::InvalidParameter(format!(
            "pi must lie in [0, 1), got {pi}"
        )));
    }
    Ok(())
}

/// Truncated-geometric pmf over skip counts s in {0..S}:
/// p(s | pi) = pi^s (1 - pi) / (1 - pi^(S+1)).
///
/// Entries are normalized by their computed sum, so they add to 1 within
/// 1e-12 across the full supported (pi, S) range.
pub fn skip_pmf(pi: f64, s_max: u32) -> Result<Vec<f64>> {
    check_pi(pi)?;
    let n = s_max as usize + 1;
    if pi == 0.0 {
        let mut pmf = vec![0.0; n];
        pmf[0] = 1.0;
        return Ok(pmf);
    }
    let mut pmf = Vec::with_capacity(n);
    let mut weight = 1.0 - pi;
    let mut total = 0.0;
    for _ in 0..n {
        pmf.push(weight);
        total += weight;
        weight *= pi;
    }
    for p in &mut pmf {
        *p /= total;
    }
    Ok(pmf)
}

/// Log-space view of the truncated-geometric skip distribution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SkipDistribution {
    log_pi: f64,
    /// ln(1 - pi) - ln(1 - pi^(S+1))
    log_norm: f64,
    s_max: u32,
}

impl SkipDistribution {
    pub(crate) fn new(pi: f64, s_max: u32) -> Result<Self> {
        check_pi(pi)?;
        let log_pi = pi.ln();
        // 1 - pi^(S+1) via expm1 stays accurate for pi near 1 and collapses
        // to 1 for pi = 0 (expm1(-inf) = -1).
        let log_one_minus_pow = (-((s_max as f64 + 1.0) * log_pi).exp_m1()).ln();
        let log_norm = (-pi).ln_1p() - log_one_minus_pow;
        Ok(SkipDistribution {
            log_pi,
            log_norm,
            s_max,
        })
    }

    pub(crate) fn log_pmf(&self, s: u32) -> f64 {
        debug_assert!(s <= self.s_max);
        if self.log_pi == f64::NEG_INFINITY {
            return if s == 0 { 0.0 } else { f64::NEG_INFINITY };
        }
        f64::from(s) * self.log_pi + self.log_norm
    }

    pub(crate) fn log_norm(&self) -> f64 {
        self.log_norm
    }
}

/// Poisson log-pmf via log-Gamma; no factorial overflow for any d.
pub(crate) fn poisson_log_pmf(d: f64, rate: f64) -> f64 {
    debug_assert!(rate > 0.0);
    d * rate.ln() - rate - ln_gamma(d + 1.0)
}

/// Log-pmf of an observed cycle of d days given rate lambda and s skipped
/// cycles: the sum of s+1 independent Poisson cycles is Poisson with rate
/// lambda * (s + 1).
pub fn observed_cycle_log_pmf(d: u32, lambda: f64, s: u32) -> Result<f64> {
    if !lambda.is_finite() || lambda <= 0.0 {
        return Err(ModelError::InvalidParameter(format!(
            "lambda must be finite and positive, got {lambda}"
        )));
    }
    Ok(poisson_log_pmf(f64::from(d), lambda * f64::from(s + 1)))
}

/// ln sum_{s=0}^{S} exp(d ln(s+1) + s (ln pi - lambda)).
///
/// The term sequence is concave in s (rising to a single peak, then
/// falling); once past the peak and 46 nats below the maximum the tail is
/// dropped.
fn log_skip_series(d: f64, log_pi: f64, lambda: f64, s_max: u32) -> f64 {
    // s = 0 term is exactly 0, also when pi = 0 (no 0 * -inf evaluated).
    let mut max_term = 0.0;
    let mut acc = 1.0;
    if log_pi == f64::NEG_INFINITY {
        return 0.0;
    }
    let coeff = log_pi - lambda;
    for s in 1..=s_max {
        let term = d * f64::from(s + 1).ln() + f64::from(s) * coeff;
        if term > max_term {
            acc = acc * (max_term - term).exp() + 1.0;
            max_term = term;
        } else {
            acc += (term - max_term).exp();
            if term < max_term - LSE_TAIL_CUTOFF {
                break;
            }
        }
    }
    max_term + acc.ln()
}

/// Marginalized per-user log-likelihood ln p(d_i | theta) with the skip
/// count summed out up to S:
///
/// ln p = sum_c [ ln(1-pi) - ln(1-pi^(S+1)) + ln Pois(d_c; lambda)
///                + ln sum_s exp(d_c ln(s+1) + s (ln pi - lambda)) ]
pub fn user_log_likelihood(
    history: &CycleHistory,
    theta: &UserParameters,
    s_max: u32,
) -> Result<f64> {
    if history.is_empty() {
        return Err(ModelError::InvalidData(format!(
            "user {}: cannot evaluate likelihood of an empty history",
            history.user_id
        )));
    }
    theta.validate()?;
    Ok(cycles_log_likelihood(&history.cycles, theta, s_max))
}

/// Likelihood over a raw slice of cycle lengths; used where a training
/// prefix of a history is evaluated without cloning.
pub(crate) fn cycles_log_likelihood(cycles: &[u32], theta: &UserParameters, s_max: u32) -> f64 {
    let skip = SkipDistribution::new(theta.pi, s_max).expect("validated pi");
    let log_pi = theta.pi.ln();
    let log_lambda = theta.lambda.ln();
    let mut total = 0.0;
    for &d in cycles {
        let df = f64::from(d);
        total += skip.log_norm() + df * log_lambda - theta.lambda - ln_gamma(df + 1.0)
            + log_skip_series(df, log_pi, theta.lambda, s_max);
    }
    total
}

/// Gamma(lambda; kappa, gamma) log-density (shape/rate parameterization).
pub(crate) fn gamma_log_pdf(lambda: f64, kappa: f64, gamma: f64) -> f64 {
    kappa * gamma.ln() - ln_gamma(kappa) + (kappa - 1.0) * lambda.ln() - gamma * lambda
}

/// Beta(pi; alpha, beta) log-density. Boundary evaluations never produce
/// NaN: a divergent boundary (pi = 0 with alpha < 1, pi = 1 with beta < 1)
/// is mapped to -inf.
pub(crate) fn beta_log_pdf(pi: f64, alpha: f64, beta: f64) -> f64 {
    let log_norm = ln_gamma(alpha + beta) - ln_gamma(alpha) - ln_gamma(beta);
    let a_term = if pi == 0.0 {
        if alpha == 1.0 {
            0.0
        } else {
            return f64::NEG_INFINITY;
        }
    } else {
        (alpha - 1.0) * pi.ln()
    };
    let b_term = if pi == 1.0 {
        if beta == 1.0 {
            0.0
        } else {
            return f64::NEG_INFINITY;
        }
    } else {
        (beta - 1.0) * (-pi).ln_1p()
    };
    log_norm + a_term + b_term
}

/// Joint log prior density ln p(theta | u) = ln Gamma(lambda; kappa, gamma)
/// + ln Beta(pi; alpha, beta).
pub fn log_prior_density(theta: &UserParameters, u: &Hyperparameters) -> f64 {
    gamma_log_pdf(theta.lambda, u.kappa, u.gamma) + beta_log_pdf(theta.pi, u.alpha, u.beta)
}

/// Gradient of ln p(theta | u) with respect to (ln kappa, ln gamma,
/// ln alpha, ln beta), using digamma for the normalizing constants.
pub fn log_prior_grad_log_scale(theta: &UserParameters, u: &Hyperparameters) -> [f64; 4] {
    let d_kappa = u.gamma.ln() - digamma(u.kappa) + theta.lambda.ln();
    let d_gamma = u.kappa / u.gamma - theta.lambda;
    let psi_ab = digamma(u.alpha + u.beta);
    let d_alpha = psi_ab - digamma(u.alpha) + theta.pi.ln();
    let d_beta = psi_ab - digamma(u.beta) + (-theta.pi).ln_1p();
    [
        u.kappa * d_kappa,
        u.gamma * d_gamma,
        u.alpha * d_alpha,
        u.beta * d_beta,
    ]
}

/// Draw `count` independent theta_m = (lambda_m, pi_m) from the population
/// priors. Deterministic given the generator state; pi draws are clamped
/// into [PI_MIN, PI_MAX] so downstream log computations stay bounded.
pub fn sample_user_params(
    u: &Hyperparameters,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<UserParameters>> {
    u.validate()?;
    if count == 0 {
        return Err(ModelError::InvalidParameter(
            "sample count must be at least 1".into(),
        ));
    }
    let lambda_dist = GammaSampler::new(u.kappa, 1.0 / u.gamma)
        .map_err(|e| ModelError::InvalidParameter(format!("cannot build Gamma sampler: {e}")))?;
    let pi_dist = BetaSampler::new(u.alpha, u.beta)
        .map_err(|e| ModelError::InvalidParameter(format!("cannot build Beta sampler: {e}")))?;
    let mut draws = Vec::with_capacity(count);
    for _ in 0..count {
        let lambda = lambda_dist.sample(rng).max(f64::MIN_POSITIVE);
        let pi = pi_dist.sample(rng).clamp(PI_MIN, PI_MAX);
        draws.push(UserParameters { lambda, pi });
    }
    Ok(draws)
}
