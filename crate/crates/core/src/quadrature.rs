//! Deterministic quadrature of the per-user marginal likelihood
//! integral(integral( p(d_i | lambda, pi, S) p(lambda | kappa, gamma)
//! p(pi | alpha, beta) )), used as the oracle that arbitrates the
//! Monte-Carlo estimator and its gradient.
//!
//! Tensor-product Gauss-Legendre in log space. A call evaluates the rule
//! at the requested resolution and at twice that resolution; if the two
//! disagree beyond `refine_tol` the grid is declared too coarse and an
//! error is returned.

use crate::data::CycleHistory;
use crate::error::{ModelError, Result};
use crate::math::{gauss_legendre, log_sum_exp};
use crate::model::{
    beta_log_pdf, cycles_log_likelihood, gamma_log_pdf, Hyperparameters, UserParameters,
};
use rayon::prelude::*;

/// Integration domain and resolution for the quadrature oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    /// Upper end of the pi interval [0, pi_hi]. Exactly 0 collapses the
    /// skip dimension: the integrand is evaluated at pi = 0 with no Beta
    /// factor (pure Poisson-Gamma marginal).
    pub pi_hi: f64,
    pub n_lambda: usize,
    pub n_pi: usize,
    /// Maximum allowed |change| of the log-marginal when both grid sizes
    /// are doubled.
    pub refine_tol: f64,
}

impl GridSpec {
    /// A domain wide enough for histories near the prior scale: covers the
    /// prior many standard deviations out and the data range with margin.
    pub fn auto(u: &Hyperparameters, history: &CycleHistory) -> Self {
        let prior_mean = u.mean_cycle_length();
        let prior_sd = u.kappa.sqrt() / u.gamma;
        let d_min = history.cycles.iter().copied().min().unwrap_or(1) as f64;
        let d_max = history.cycles.iter().copied().max().unwrap_or(1) as f64;
        let lambda_lo = (0.25 * prior_mean.min(d_min)).max(1e-3);
        let lambda_hi = 1.6 * prior_mean.max(d_max) + 12.0 * prior_sd;
        GridSpec {
            lambda_lo,
            lambda_hi,
            pi_hi: 1.0 - 1e-6,
            n_lambda: 400,
            n_pi: 200,
            refine_tol: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_lo.is_finite() && self.lambda_hi.is_finite())
            || self.lambda_lo <= 0.0
            || self.lambda_hi <= self.lambda_lo
        {
            return Err(ModelError::InvalidParameter(format!(
                "lambda interval [{}, {}] is invalid",
                self.lambda_lo, self.lambda_hi
            )));
        }
        if !(0.0..1.0).contains(&self.pi_hi) {
            return Err(ModelError::InvalidParameter(format!(
                "pi_hi must lie in [0, 1), got {}",
                self.pi_hi
            )));
        }
        if self.n_lambda < 2 || (self.pi_hi > 0.0 && self.n_pi < 2) {
            return Err(ModelError::InvalidParameter(
                "quadrature needs at least 2 nodes per active dimension".into(),
            ));
        }
        if self.refine_tol.is_nan() || self.refine_tol <= 0.0 {
            return Err(ModelError::InvalidParameter(
                "refine_tol must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn eval_2d(
    cycles: &[u32],
    u: &Hyperparameters,
    s_max: u32,
    grid: &GridSpec,
    n_lambda: usize,
    n_pi: usize,
) -> f64 {
    let (lam_nodes, lam_weights) = gauss_legendre(n_lambda, grid.lambda_lo, grid.lambda_hi);
    let (pi_nodes, pi_weights) = gauss_legendre(n_pi, 0.0, grid.pi_hi);
    let log_pi_prior: Vec<f64> = pi_nodes
        .iter()
        .zip(&pi_weights)
        .map(|(&pi, &w)| beta_log_pdf(pi, u.alpha, u.beta) + w.ln())
        .collect();

    let log_terms: Vec<Vec<f64>> = lam_nodes
        .par_iter()
        .zip(lam_weights.par_iter())
        .map(|(&lambda, &w_lambda)| {
            let log_lam_prior = gamma_log_pdf(lambda, u.kappa, u.gamma) + w_lambda.ln();
            pi_nodes
                .iter()
                .zip(&log_pi_prior)
                .map(|(&pi, &log_pi_term)| {
                    let theta = UserParameters { lambda, pi };
                    cycles_log_likelihood(cycles, &theta, s_max) + log_lam_prior + log_pi_term
                })
                .collect()
        })
        .collect();

    let flat: Vec<f64> = log_terms.into_iter().flatten().collect();
    log_sum_exp(&flat)
}

fn eval_1d(cycles: &[u32], u: &Hyperparameters, grid: &GridSpec, n_lambda: usize) -> f64 {
    let (lam_nodes, lam_weights) = gauss_legendre(n_lambda, grid.lambda_lo, grid.lambda_hi);
    let theta_pi = 0.0;
    let log_terms: Vec<f64> = lam_nodes
        .iter()
        .zip(&lam_weights)
        .map(|(&lambda, &w)| {
            let theta = UserParameters {
                lambda,
                pi: theta_pi,
            };
            // pi = 0 reduces the marginalized likelihood to a plain Poisson
            // product; s_max is irrelevant.
            cycles_log_likelihood(cycles, &theta, 0)
                + gamma_log_pdf(lambda, u.kappa, u.gamma)
                + w.ln()
        })
        .collect();
    log_sum_exp(&log_terms)
}

/// Log of the quadrature approximation of p(d_i | u). Returns the value at
/// doubled resolution after checking that doubling changed the result by
/// less than `grid.refine_tol`.
pub fn quadrature_log_marginal(
    history: &CycleHistory,
    u: &Hyperparameters,
    s_max: u32,
    grid: &GridSpec,
) -> Result<f64> {
    if history.is_empty() {
        return Err(ModelError::InvalidData(
            "cannot integrate an empty history".into(),
        ));
    }
    u.validate()?;
    grid.validate()?;
    let (coarse, fine) = if grid.pi_hi == 0.0 {
        (
            eval_1d(&history.cycles, u, grid, grid.n_lambda),
            eval_1d(&history.cycles, u, grid, 2 * grid.n_lambda),
        )
    } else {
        (
            eval_2d(&history.cycles, u, s_max, grid, grid.n_lambda, grid.n_pi),
            eval_2d(
                &history.cycles,
                u,
                s_max,
                grid,
                2 * grid.n_lambda,
                2 * grid.n_pi,
            ),
        )
    };
    let delta = (fine - coarse).abs();
    if !fine.is_finite() {
        return Err(ModelError::Numerical(format!(
            "quadrature produced a non-finite log-marginal ({fine})"
        )));
    }
    if delta >= grid.refine_tol {
        return Err(ModelError::Numerical(format!(
            "quadrature grid too coarse: doubling ({}x{}) -> ({}x{}) moved the log-marginal by {delta:.3e} (tol {:.3e})",
            grid.n_lambda, grid.n_pi, 2 * grid.n_lambda, 2 * grid.n_pi, grid.refine_tol
        )));
    }
    Ok(fine)
}
