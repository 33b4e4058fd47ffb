//! Online per-user posterior-predictive distributions over the next
//! reported cycle length d* and the next skip count s*, conditioned on
//! fitted hyperparameters, the user's history, and the current day of the
//! ongoing cycle.
//!
//! The Monte-Carlo form is an importance-weighted mixture: weights
//! w_m proportional to p(d_i | theta_m) are computed once per user from
//! the training history (the current day enters only through truncation),
//! and the per-sample kernels sum the skip distribution against Poisson
//! components normalized over the finite grid {0..D}.

use crate::data::CycleHistory;
use crate::error::{ModelError, Result};
use crate::math::log_sum_exp;
use crate::model::{
    cycles_log_likelihood, sample_user_params, Hyperparameters, ModelConfig, SkipDistribution,
    UserParameters,
};
use crate::rng::{stream, stream_rng};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_ur, ln_gamma};

/// Skip-weight terms below this log threshold are dropped from kernels;
/// e^-60 is invisible at every tolerance used here.
const LOG_SKIP_CUTOFF: f64 = -60.0;

/// Tail mass below this is treated as an impossible conditioning event.
const MIN_TAIL_MASS: f64 = 1e-300;

/// Prediction mode: trust the next reported cycle (s* fixed to 0) or
/// marginalize possible skips (s* up to S).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SkipMode {
    AssumeNoSkip,
    AllowSkips,
}

impl SkipMode {
    /// CLI / file-format token.
    pub fn as_str(&self) -> &'static str {
        match self {
            SkipMode::AssumeNoSkip => "s0",
            SkipMode::AllowSkips => "sfree",
        }
    }
}

impl std::str::FromStr for SkipMode {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "s0" => Ok(SkipMode::AssumeNoSkip),
            "sfree" => Ok(SkipMode::AllowSkips),
            other => Err(ModelError::InvalidParameter(format!(
                "unknown prediction mode {other:?} (expected \"s0\" or \"sfree\")"
            ))),
        }
    }
}

/// One prediction request: a user's history, fitted hyperparameters, the
/// current day of the ongoing cycle, the mode, and the numerical settings
/// (M, S, D, seed) carried by `config`.
#[derive(Debug, Clone)]
pub struct PredictiveQuery<'a> {
    pub history: &'a CycleHistory,
    pub u_hat: Hyperparameters,
    pub d_current: u32,
    pub mode: SkipMode,
    pub config: ModelConfig,
}

/// Normalized pmf over an integer support (next cycle lengths or skip
/// counts).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDistribution {
    pub support: Vec<u32>,
    pub probabilities: Vec<f64>,
}

impl PredictiveDistribution {
    /// Support value with the highest probability (first one on ties).
    pub fn mode_value(&self) -> u32 {
        let mut best = 0usize;
        for (i, &p) in self.probabilities.iter().enumerate() {
            if p > self.probabilities[best] {
                best = i;
            }
        }
        self.support[best]
    }

    pub fn mean(&self) -> f64 {
        self.support
            .iter()
            .zip(&self.probabilities)
            .map(|(&v, &p)| f64::from(v) * p)
            .sum()
    }
}

/// Per-sample skip component retained in the mixture.
#[derive(Debug, Clone, Copy)]
struct SkipComponent {
    /// ln p(s* | pi_m) under the prediction-mode truncation.
    log_skip_weight: f64,
    /// Poisson rate lambda_m (s* + 1).
    rate: f64,
    /// ln sum_{d=0}^{D} Pois(d; rate): the grid normalizer.
    log_grid_mass: f64,
    s: u32,
}

/// Importance weights of one user's history against the sampled thetas.
#[derive(Debug, Clone)]
pub struct UserWeights {
    /// Normalized weights (sum to 1).
    weights: Vec<f64>,
    /// Effective sample size 1 / sum(w^2).
    pub ess: f64,
}

/// Precomputed predictive machinery for one (u_hat, config, mode) triple.
/// Sample draws, grid-normalized Poisson kernels, and skip components are
/// shared across users; per-user state is just the weight vector.
pub struct PredictiveModel {
    config: ModelConfig,
    mode: SkipMode,
    thetas: Vec<UserParameters>,
    /// kernel[m * (d_max + 1) + d] = sum_{s*} p(s*|pi_m) PoisN(d; rate_{m,s*})
    kernel: Vec<f64>,
    components: Vec<Vec<SkipComponent>>,
}

impl PredictiveModel {
    pub fn new(u_hat: &Hyperparameters, config: &ModelConfig, mode: SkipMode) -> Result<Self> {
        u_hat.validate()?;
        config.validate()?;
        let mut rng = stream_rng(config.seed, &[stream::PREDICT_THETA]);
        let thetas = sample_user_params(u_hat, config.mc_samples, &mut rng)?;
        let s_pred = match mode {
            SkipMode::AssumeNoSkip => 0,
            SkipMode::AllowSkips => config.s_max,
        };
        let grid_len = config.d_max as usize + 1;
        let ln_gamma_table: Vec<f64> = (0..grid_len).map(|d| ln_gamma(d as f64 + 1.0)).collect();

        let mut kernel = vec![0.0; thetas.len() * grid_len];
        let mut components = Vec::with_capacity(thetas.len());
        let mut log_pmf_row = vec![0.0; grid_len];
        for (m, theta) in thetas.iter().enumerate() {
            let skip = SkipDistribution::new(theta.pi, s_pred)?;
            let mut comps = Vec::new();
            for s in 0..=s_pred {
                let log_w = skip.log_pmf(s);
                if log_w < LOG_SKIP_CUTOFF {
                    // Skip weights decay geometrically in s.
                    break;
                }
                let rate = theta.lambda * f64::from(s + 1);
                let log_rate = rate.ln();
                for (d, row) in log_pmf_row.iter_mut().enumerate() {
                    *row = d as f64 * log_rate - rate - ln_gamma_table[d];
                }
                let log_grid_mass = log_sum_exp(&log_pmf_row);
                let row = &mut kernel[m * grid_len..(m + 1) * grid_len];
                for (d, out) in row.iter_mut().enumerate() {
                    *out += (log_w + log_pmf_row[d] - log_grid_mass).exp();
                }
                comps.push(SkipComponent {
                    log_skip_weight: log_w,
                    rate,
                    log_grid_mass,
                    s,
                });
            }
            components.push(comps);
        }
        Ok(PredictiveModel {
            config: *config,
            mode,
            thetas,
            kernel,
            components,
        })
    }

    pub fn mode(&self) -> SkipMode {
        self.mode
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Importance weights of a history: w_m proportional to
    /// p(d_i | theta_m) at the inference truncation S, normalized in log
    /// space. Weights are independent of d_current and reusable across all
    /// conditioning days.
    pub fn user_weights(&self, cycles: &[u32]) -> Result<UserWeights> {
        if cycles.is_empty() {
            return Err(ModelError::InvalidData(
                "cannot weight an empty history".into(),
            ));
        }
        let lls: Vec<f64> = self
            .thetas
            .iter()
            .map(|theta| cycles_log_likelihood(cycles, theta, self.config.s_max))
            .collect();
        let norm = log_sum_exp(&lls);
        if norm == f64::NEG_INFINITY {
            return Err(ModelError::Numerical(
                "history incompatible with prior support".into(),
            ));
        }
        let weights: Vec<f64> = lls.iter().map(|&l| (l - norm).exp()).collect();
        let sq: f64 = weights.iter().map(|w| w * w).sum();
        Ok(UserWeights {
            weights,
            ess: 1.0 / sq,
        })
    }

    /// Posterior mean of the user's rate lambda under the importance
    /// weights: the model's estimate of the user's typical cycle length.
    pub fn posterior_mean_lambda(&self, weights: &UserWeights) -> f64 {
        self.thetas
            .iter()
            .zip(&weights.weights)
            .map(|(theta, &w)| w * theta.lambda)
            .sum()
    }

    /// Unconditional next-cycle pmf over d* in {0..D}, normalized.
    pub fn unconditional_cycle_pmf(&self, weights: &UserWeights) -> Vec<f64> {
        let grid_len = self.config.d_max as usize + 1;
        let mut pmf = vec![0.0; grid_len];
        for (m, &w) in weights.weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let row = &self.kernel[m * grid_len..(m + 1) * grid_len];
            for (out, &k) in pmf.iter_mut().zip(row) {
                *out += w * k;
            }
        }
        let total: f64 = pmf.iter().sum();
        if total > 0.0 {
            for p in &mut pmf {
                *p /= total;
            }
        }
        pmf
    }

    /// Truncate-and-renormalize an unconditional pmf above d_current.
    pub fn conditional_cycle_pmf(
        &self,
        pmf: &[f64],
        d_current: u32,
    ) -> Result<PredictiveDistribution> {
        let d_max = self.config.d_max;
        if d_current >= d_max {
            return Err(ModelError::InvalidParameter(format!(
                "d_current {d_current} must be below the grid bound {d_max}"
            )));
        }
        let lo = d_current as usize + 1;
        let tail: f64 = pmf[lo..].iter().sum();
        if tail.is_nan() || tail <= MIN_TAIL_MASS {
            return Err(ModelError::Numerical(format!(
                "conditioning event numerically impossible: p(d* > {d_current}) = {tail:e}"
            )));
        }
        let support: Vec<u32> = (lo as u32..=d_max).collect();
        let probabilities: Vec<f64> = pmf[lo..].iter().map(|&p| p / tail).collect();
        Ok(PredictiveDistribution {
            support,
            probabilities,
        })
    }

    /// Expected next cycle and grid argmax for every requested day, via a
    /// single suffix pass over the unconditional pmf.
    pub fn expectation_curve(
        &self,
        pmf: &[f64],
        d_currents: &[u32],
    ) -> Result<Vec<PointPrediction>> {
        let d_max = self.config.d_max as usize;
        // suffix_mass[d] = sum_{k >= d} pmf[k]; argmax tracked per suffix.
        // The sentinel argmax points at d_max so every entry stays inside
        // its own suffix; ties resolve to the smallest day.
        let mut suffix_mass = vec![0.0; d_max + 2];
        let mut suffix_weighted = vec![0.0; d_max + 2];
        let mut suffix_argmax = vec![d_max as u32; d_max + 2];
        for d in (0..=d_max).rev() {
            suffix_mass[d] = suffix_mass[d + 1] + pmf[d];
            suffix_weighted[d] = suffix_weighted[d + 1] + d as f64 * pmf[d];
            suffix_argmax[d] = if pmf[d] >= pmf[suffix_argmax[d + 1] as usize] {
                d as u32
            } else {
                suffix_argmax[d + 1]
            };
        }
        d_currents
            .iter()
            .map(|&dc| {
                if dc as usize >= d_max {
                    return Err(ModelError::InvalidParameter(format!(
                        "d_current {dc} must be below the grid bound {d_max}"
                    )));
                }
                let lo = dc as usize + 1;
                let tail = suffix_mass[lo];
                if tail.is_nan() || tail <= MIN_TAIL_MASS {
                    return Err(ModelError::Numerical(format!(
                        "conditioning event numerically impossible: p(d* > {dc}) = {tail:e}"
                    )));
                }
                Ok(PointPrediction {
                    d_current: dc,
                    expected: suffix_weighted[lo] / tail,
                    map: suffix_argmax[lo],
                })
            })
            .collect()
    }

    /// Normalized in-grid survival P(d* > d_current | s*, lambda_m) for
    /// every retained component, shared across users at a given day.
    pub fn survival_table(&self, d_current: u32) -> Result<Vec<Vec<f64>>> {
        let d_max = self.config.d_max;
        if d_current >= d_max {
            return Err(ModelError::InvalidParameter(format!(
                "d_current {d_current} must be below the grid bound {d_max}"
            )));
        }
        Ok(self
            .components
            .iter()
            .map(|comps| {
                comps
                    .iter()
                    .map(|c| component_survival(c, d_current, d_max))
                    .collect()
            })
            .collect())
    }

    /// Posterior over the next skip count:
    /// p(s* | d_i, d* > d_current) proportional to
    /// sum_m w_m p(s*|pi_m) P(d* > d_current | s*, lambda_m).
    pub fn skip_posterior(
        &self,
        weights: &UserWeights,
        d_current: u32,
        survival: &[Vec<f64>],
    ) -> Result<PredictiveDistribution> {
        let s_pred = match self.mode {
            SkipMode::AssumeNoSkip => 0,
            SkipMode::AllowSkips => self.config.s_max,
        };
        let mut mass = vec![0.0; s_pred as usize + 1];
        for ((comps, surv), &w) in self.components.iter().zip(survival).zip(&weights.weights) {
            if w == 0.0 {
                continue;
            }
            for (c, &sv) in comps.iter().zip(surv) {
                mass[c.s as usize] += w * c.log_skip_weight.exp() * sv;
            }
        }
        let total: f64 = mass.iter().sum();
        if total.is_nan() || total <= MIN_TAIL_MASS {
            return Err(ModelError::Numerical(format!(
                "conditioning event numerically impossible at day {d_current}"
            )));
        }
        for p in &mut mass {
            *p /= total;
        }
        Ok(PredictiveDistribution {
            support: (0..=s_pred).collect(),
            probabilities: mass,
        })
    }
}

/// Point predictions for one conditioning day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointPrediction {
    pub d_current: u32,
    /// E[d* | d* > d_current, d_i].
    pub expected: f64,
    /// Grid argmax of the conditional pmf.
    pub map: u32,
}

/// In-grid survival of one Poisson component, (F(D) - F(dc)) / F(D) with
/// F the Poisson CDF. Falls back to log-space suffix summation when the
/// CDF underflows (rates far beyond the grid).
fn component_survival(c: &SkipComponent, d_current: u32, d_max: u32) -> f64 {
    let f_all = gamma_ur(f64::from(d_max) + 1.0, c.rate);
    if f_all > 1e-280 {
        let f_dc = gamma_ur(f64::from(d_current) + 1.0, c.rate);
        ((f_all - f_dc) / f_all).clamp(0.0, 1.0)
    } else {
        let log_rate = c.rate.ln();
        let terms: Vec<f64> = (d_current + 1..=d_max)
            .map(|d| {
                let df = f64::from(d);
                df * log_rate - c.rate - ln_gamma(df + 1.0)
            })
            .collect();
        (log_sum_exp(&terms) - c.log_grid_mass)
            .exp()
            .clamp(0.0, 1.0)
    }
}

fn model_for_query(q: &PredictiveQuery) -> Result<PredictiveModel> {
    PredictiveModel::new(&q.u_hat, &q.config, q.mode)
}

/// Unconditional next-cycle pmf over d* in {0..D} for one user.
pub fn next_cycle_unconditional_pmf(
    history: &CycleHistory,
    u_hat: &Hyperparameters,
    mode: SkipMode,
    config: &ModelConfig,
) -> Result<Vec<f64>> {
    let model = PredictiveModel::new(u_hat, config, mode)?;
    let weights = model.user_weights(&history.cycles)?;
    Ok(model.unconditional_cycle_pmf(&weights))
}

/// Conditional next-cycle pmf over d* > d_current for one query.
pub fn next_cycle_conditional_pmf(q: &PredictiveQuery) -> Result<PredictiveDistribution> {
    let model = model_for_query(q)?;
    let weights = model.user_weights(&q.history.cycles)?;
    let pmf = model.unconditional_cycle_pmf(&weights);
    model.conditional_cycle_pmf(&pmf, q.d_current)
}

/// E[d* | d* > d_current, d_i, u_hat] for one query.
pub fn expected_next_cycle(q: &PredictiveQuery) -> Result<f64> {
    let model = model_for_query(q)?;
    let weights = model.user_weights(&q.history.cycles)?;
    let pmf = model.unconditional_cycle_pmf(&weights);
    Ok(model.expectation_curve(&pmf, &[q.d_current])?[0].expected)
}

/// Posterior over the next skip count for one query.
pub fn skip_posterior(q: &PredictiveQuery) -> Result<PredictiveDistribution> {
    let model = model_for_query(q)?;
    let weights = model.user_weights(&q.history.cycles)?;
    let survival = model.survival_table(q.d_current)?;
    model.skip_posterior(&weights, q.d_current, &survival)
}
