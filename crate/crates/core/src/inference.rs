//! Population hyperparameter fitting by type-II maximum likelihood:
//! Monte-Carlo marginal likelihood, self-normalized score-function
//! gradients, Adam in log-hyperparameter space, and the training loop.

use crate::data::{CycleHistory, Dataset};
use crate::error::{ModelError, Result};
use crate::model::{
    log_prior_grad_log_scale, sample_user_params, user_log_likelihood, Hyperparameters,
};
use crate::rng::{stream, stream_rng};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Training settings. Defaults follow the reference configuration:
/// u0 = [180, 6, 2, 20], S=100, M=1000, minibatches of 100, Adam at
/// learning rate 0.01, at most 1000 epochs, relative-improvement stop at
/// 1e-3.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub init_u: Hyperparameters,
    pub s_max: u32,
    pub mc_samples: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub eps_loss: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            init_u: Hyperparameters::informative_default(),
            s_max: 100,
            mc_samples: 1000,
            learning_rate: 0.01,
            batch_size: 100,
            max_epochs: 1000,
            eps_loss: 1e-3,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self, dataset_size: usize) -> Result<()> {
        self.init_u.validate()?;
        if self.mc_samples < 1 {
            return Err(ModelError::InvalidParameter(
                "mc_samples must be at least 1".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(ModelError::InvalidParameter(
                "learning_rate must be positive".into(),
            ));
        }
        if self.batch_size < 1 || self.batch_size > dataset_size {
            return Err(ModelError::InvalidParameter(format!(
                "batch_size {} must lie in [1, {dataset_size}]",
                self.batch_size
            )));
        }
        if self.max_epochs < 1 {
            return Err(ModelError::InvalidParameter(
                "max_epochs must be at least 1".into(),
            ));
        }
        if !(self.eps_loss.is_finite() && self.eps_loss > 0.0) {
            return Err(ModelError::InvalidParameter(
                "eps_loss must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Outcome of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub u_hat: Hyperparameters,
    /// Full-data mean negative log marginal likelihood per epoch.
    pub trace: Vec<f64>,
    pub epochs_run: usize,
    pub converged: bool,
    /// Present when training aborted early (non-finite gradient or loss);
    /// `u_hat` is then the last valid iterate.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub diagnostic: Option<String>,
}

/// Monte-Carlo estimate of ln p(d_i | u) with a delta-method standard
/// error on the log scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McLogMarginal {
    pub log_marginal: f64,
    /// Approximate standard error of `log_marginal`.
    pub se_log: f64,
    /// True when every sampled theta gave zero likelihood.
    pub degenerate: bool,
}

/// Collapse per-sample log-likelihoods into the log mean plus a
/// delta-method standard error. An all-(-inf) input (every sampled theta
/// gave zero likelihood) yields -inf with the degenerate flag set.
pub(crate) fn mc_from_log_likelihoods(lls: &[f64]) -> McLogMarginal {
    let mut max = f64::NEG_INFINITY;
    for &v in lls {
        if v > max {
            max = v;
        }
    }
    if max == f64::NEG_INFINITY {
        return McLogMarginal {
            log_marginal: f64::NEG_INFINITY,
            se_log: f64::INFINITY,
            degenerate: true,
        };
    }
    let m = lls.len() as f64;
    let scaled: Vec<f64> = lls.iter().map(|&v| (v - max).exp()).collect();
    let mean: f64 = scaled.iter().sum::<f64>() / m;
    let log_marginal = max + mean.ln();
    let se_log = if lls.len() > 1 {
        let var: f64 = scaled.iter().map(|&q| (q - mean) * (q - mean)).sum::<f64>() / (m - 1.0);
        (var / m).sqrt() / mean
    } else {
        f64::INFINITY
    };
    McLogMarginal {
        log_marginal,
        se_log,
        degenerate: false,
    }
}

/// ln[(1/M) sum_m p(d_i | theta_m)] with theta_m drawn from the priors.
pub fn mc_user_log_marginal_detailed(
    history: &CycleHistory,
    u: &Hyperparameters,
    mc_samples: usize,
    s_max: u32,
    rng: &mut impl Rng,
) -> Result<McLogMarginal> {
    let thetas = sample_user_params(u, mc_samples, rng)?;
    let lls: Vec<f64> = thetas
        .iter()
        .map(|theta| user_log_likelihood(history, theta, s_max))
        .collect::<Result<Vec<_>>>()?;
    Ok(mc_from_log_likelihoods(&lls))
}

pub fn mc_user_log_marginal(
    history: &CycleHistory,
    u: &Hyperparameters,
    mc_samples: usize,
    s_max: u32,
    rng: &mut impl Rng,
) -> Result<f64> {
    Ok(mc_user_log_marginal_detailed(history, u, mc_samples, s_max, rng)?.log_marginal)
}

/// Batch gradient of the mean negative log marginal likelihood with
/// respect to (ln kappa, ln gamma, ln alpha, ln beta).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchGradient {
    pub grad: [f64; 4],
    /// Users whose importance weights degenerated (effective sample size
    /// below 2, or all weights zero). Their contribution is still included
    /// except in the all-zero case.
    pub degenerate_users: usize,
    /// Smallest per-user effective sample size in the batch.
    pub min_ess: f64,
}

/// Single-user gradient with delta-method standard errors, for oracle
/// comparisons where the Monte-Carlo uncertainty of the estimate matters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientEstimate {
    /// Gradient of -ln p(d_i | u) in log-hyperparameter space.
    pub grad: [f64; 4],
    /// Per-component standard error of `grad`:
    /// sqrt(sum_m w_m^2 (g_m - G)^2) for the self-normalized estimator.
    pub se: [f64; 4],
    /// Effective sample size of the importance weights.
    pub ess: f64,
}

struct UserGradient {
    grad: [f64; 4],
    ess: f64,
    degenerate: bool,
}

/// Self-normalized weighted prior score of one user: the per-user core of
/// Fisher's identity. `scores[m]` must be the precomputed prior score of
/// theta_m in log-hyperparameter space.
fn weighted_user_score(
    history: &CycleHistory,
    thetas: &[crate::model::UserParameters],
    scores: &[[f64; 4]],
    s_max: u32,
    with_se: bool,
) -> Result<(UserGradient, Option<[f64; 4]>)> {
    let lls: Vec<f64> = thetas
        .iter()
        .map(|theta| user_log_likelihood(history, theta, s_max))
        .collect::<Result<Vec<_>>>()?;
    let mut max = f64::NEG_INFINITY;
    for &v in &lls {
        if v > max {
            max = v;
        }
    }
    if max == f64::NEG_INFINITY {
        // Zero likelihood everywhere: no information, flagged.
        return Ok((
            UserGradient {
                grad: [0.0; 4],
                ess: 0.0,
                degenerate: true,
            },
            with_se.then_some([f64::INFINITY; 4]),
        ));
    }
    let mut total = 0.0;
    let mut sq = 0.0;
    let mut acc = [0.0; 4];
    let weights: Vec<f64> = lls.iter().map(|&ll| (ll - max).exp()).collect();
    for (w, score) in weights.iter().zip(scores) {
        total += w;
        sq += w * w;
        for (a, s) in acc.iter_mut().zip(score) {
            *a += w * s;
        }
    }
    for a in &mut acc {
        *a /= total;
    }
    let ess = total * total / sq;
    let se = if with_se {
        let mut var = [0.0; 4];
        for (w, score) in weights.iter().zip(scores) {
            let wn = w / total;
            for j in 0..4 {
                let d = score[j] - acc[j];
                var[j] += wn * wn * d * d;
            }
        }
        Some([var[0].sqrt(), var[1].sqrt(), var[2].sqrt(), var[3].sqrt()])
    } else {
        None
    };
    Ok((
        UserGradient {
            grad: acc,
            ess,
            degenerate: ess < 2.0,
        },
        se,
    ))
}

/// Self-normalized score-function estimate per user (Fisher's identity):
/// grad ln p(d_i|u) ~= sum_m w_m grad ln p(theta_m|u), with
/// w_m proportional to p(d_i|theta_m) normalized via log-sum-exp. Prior
/// scores are analytic (digamma), mapped to log-parameter space. Returns
/// the negative mean over the batch.
pub fn nll_gradient(
    batch: &[&CycleHistory],
    u: &Hyperparameters,
    mc_samples: usize,
    s_max: u32,
    rng: &mut impl Rng,
) -> Result<BatchGradient> {
    if batch.is_empty() {
        return Err(ModelError::InvalidData(
            "gradient requires a non-empty batch".into(),
        ));
    }
    let thetas = sample_user_params(u, mc_samples, rng)?;
    let scores: Vec<[f64; 4]> = thetas
        .iter()
        .map(|theta| log_prior_grad_log_scale(theta, u))
        .collect();

    let per_user: Vec<Result<UserGradient>> = batch
        .par_iter()
        .map(|history| Ok(weighted_user_score(history, &thetas, &scores, s_max, false)?.0))
        .collect();

    let mut grad = [0.0; 4];
    let mut degenerate_users = 0;
    let mut min_ess = f64::INFINITY;
    for entry in per_user {
        let user = entry?;
        if user.degenerate {
            degenerate_users += 1;
        }
        min_ess = min_ess.min(user.ess);
        for (total, gi) in grad.iter_mut().zip(&user.grad) {
            *total += gi;
        }
    }
    let n = batch.len() as f64;
    for g in &mut grad {
        *g = -*g / n;
    }
    Ok(BatchGradient {
        grad,
        degenerate_users,
        min_ess,
    })
}

/// Single-user variant of `nll_gradient` carrying per-component standard
/// errors; identical point estimate to a one-element batch.
pub fn nll_gradient_detailed(
    history: &CycleHistory,
    u: &Hyperparameters,
    mc_samples: usize,
    s_max: u32,
    rng: &mut impl Rng,
) -> Result<GradientEstimate> {
    let thetas = sample_user_params(u, mc_samples, rng)?;
    let scores: Vec<[f64; 4]> = thetas
        .iter()
        .map(|theta| log_prior_grad_log_scale(theta, u))
        .collect();
    let (user, se) = weighted_user_score(history, &thetas, &scores, s_max, true)?;
    Ok(GradientEstimate {
        grad: [-user.grad[0], -user.grad[1], -user.grad[2], -user.grad[3]],
        se: se.expect("requested"),
        ess: user.ess,
    })
}

/// Adam hyperparameters (bias-corrected variant).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..AdamConfig::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment state; initialize with `AdamState::new()` (zeros,
/// t = 0).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: [f64; 4],
    pub v: [f64; 4],
    pub t: u64,
}

impl AdamState {
    pub fn new() -> Self {
        AdamState::default()
    }
}

/// One bias-corrected Adam update. Rejects non-finite gradients without
/// touching the state.
pub fn adam_step(
    params: [f64; 4],
    grad: [f64; 4],
    state: &mut AdamState,
    config: &AdamConfig,
) -> Result<[f64; 4]> {
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(ModelError::Numerical(format!(
            "non-finite gradient {grad:?}; step rejected"
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let mut out = params;
    for i in 0..4 {
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * grad[i];
        state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
        let m_hat = state.m[i] / (1.0 - config.beta1.powi(t));
        let v_hat = state.v[i] / (1.0 - config.beta2.powi(t));
        out[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
    }
    Ok(out)
}

/// Full-data mean negative log marginal likelihood; per-user theta streams
/// keyed by (seed, epoch, user index) keep the estimate reproducible and
/// independent of worker count.
fn epoch_mean_nll(
    dataset: &Dataset,
    u: &Hyperparameters,
    config: &FitConfig,
    epoch: usize,
) -> Result<f64> {
    let per_user: Vec<f64> = dataset
        .users
        .par_iter()
        .enumerate()
        .map(|(i, history)| {
            let mut rng = stream_rng(config.seed, &[stream::FIT_EVAL, epoch as u64, i as u64]);
            mc_user_log_marginal(history, u, config.mc_samples, config.s_max, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let total: f64 = per_user.iter().sum();
    Ok(-total / dataset.len() as f64)
}

/// Type-II maximum likelihood over shuffled minibatches with Adam in
/// log-hyperparameter space. Stops at `max_epochs` or when the relative
/// improvement of the epoch-mean NLL falls below `eps_loss`. Fresh theta
/// samples are drawn per minibatch from streams keyed by
/// (seed, epoch, batch index), so the run is deterministic given the seed.
pub fn fit(dataset: &Dataset, config: &FitConfig) -> Result<FitResult> {
    if dataset.is_empty() {
        return Err(ModelError::InvalidData(
            "cannot fit an empty dataset".into(),
        ));
    }
    config.validate(dataset.len())?;
    for user in &dataset.users {
        if user.is_empty() {
            return Err(ModelError::InvalidData(format!(
                "user {} has no cycles",
                user.user_id
            )));
        }
    }

    let mut log_u = config.init_u.to_log_array();
    let mut u = config.init_u;
    let mut adam_state = AdamState::new();
    let adam_cfg = AdamConfig::with_learning_rate(config.learning_rate);
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut diagnostic = None;

    'training: for epoch in 0..config.max_epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut stream_rng(
            config.seed,
            &[stream::FIT_SHUFFLE, epoch as u64],
        ));

        for (batch_index, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&CycleHistory> = chunk.iter().map(|&i| &dataset.users[i]).collect();
            let mut rng = stream_rng(
                config.seed,
                &[stream::FIT_BATCH, epoch as u64, batch_index as u64],
            );
            let g = nll_gradient(&batch, &u, config.mc_samples, config.s_max, &mut rng)?;
            match adam_step(log_u, g.grad, &mut adam_state, &adam_cfg) {
                Ok(next) => match Hyperparameters::from_log_array(next) {
                    Ok(next_u) => {
                        log_u = next;
                        u = next_u;
                    }
                    Err(e) => {
                        diagnostic = Some(format!(
                            "epoch {epoch} batch {batch_index}: step left the parameter domain ({e}); keeping last valid iterate"
                        ));
                        break 'training;
                    }
                },
                Err(e) => {
                    diagnostic = Some(format!(
                        "epoch {epoch} batch {batch_index}: {e}; keeping last valid iterate"
                    ));
                    break 'training;
                }
            }
        }

        let nll = epoch_mean_nll(dataset, &u, config, epoch)?;
        if !nll.is_finite() {
            diagnostic = Some(format!(
                "epoch {epoch}: mean NLL diverged to {nll}; keeping last iterate"
            ));
            break 'training;
        }
        trace.push(nll);
        if trace.len() >= 2 {
            let prev = trace[trace.len() - 2];
            let rel = (nll - prev).abs() / prev.abs().max(f64::MIN_POSITIVE);
            if rel < config.eps_loss {
                converged = true;
                break 'training;
            }
        }
    }

    Ok(FitResult {
        u_hat: u,
        epochs_run: trace.len(),
        trace,
        converged,
        diagnostic,
    })
}
