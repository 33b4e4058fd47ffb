//! Synthetic population generation from the full generative process, with
//! ground-truth skip counts retained for recovery experiments.

use crate::data::{CycleHistory, Dataset};
use crate::error::{ModelError, Result};
use crate::model::{skip_pmf, Hyperparameters, PI_MAX, PI_MIN};
use crate::rng::{stream, stream_rng};
use rand::Rng;
use rand_distr::{Beta as BetaSampler, Distribution, Gamma as GammaSampler, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Settings for one simulated population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub u_true: Hyperparameters,
    /// Number of users I.
    pub users: usize,
    /// Cycles per user C.
    pub cycles_per_user: usize,
    /// Skip truncation S.
    pub s_max: u32,
    pub seed: u64,
}

impl SimulationSpec {
    pub fn validate(&self) -> Result<()> {
        self.u_true.validate()?;
        if self.users < 1 {
            return Err(ModelError::InvalidParameter(
                "simulation needs at least 1 user".into(),
            ));
        }
        if self.cycles_per_user < 1 {
            return Err(ModelError::InvalidParameter(
                "simulation needs at least 1 cycle per user".into(),
            ));
        }
        Ok(())
    }
}

/// Side facts about a simulation run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulationReport {
    /// Zero-day cycle draws that were rejected and redrawn.
    pub zero_redraws: u64,
}

fn draw_skip_count(cdf: &[f64], rng: &mut impl Rng) -> u32 {
    let x: f64 = rng.random();
    // cdf is nondecreasing with final entry 1.0.
    match cdf.iter().position(|&c| x <= c) {
        Some(idx) => idx as u32,
        None => (cdf.len() - 1) as u32,
    }
}

/// Generate a population: theta_i from the priors, then per cycle a latent
/// skip count and an observed Poisson cycle length at rate lambda (s+1).
/// Zero-day draws are rejected and redrawn (and counted). Per-user RNG
/// streams are derived from (seed, user index), so output is independent
/// of scheduling order and byte-identical across worker counts.
pub fn simulate_population(spec: &SimulationSpec) -> Result<(Dataset, SimulationReport)> {
    spec.validate()?;
    let id_width = (spec.users.max(2) - 1).to_string().len();
    let per_user: Vec<(CycleHistory, u64)> = (0..spec.users)
        .into_par_iter()
        .map(|i| simulate_user(spec, i, id_width))
        .collect::<Result<Vec<_>>>()?;

    let mut users = Vec::with_capacity(spec.users);
    let mut zero_redraws = 0;
    for (history, redraws) in per_user {
        users.push(history);
        zero_redraws += redraws;
    }
    Ok((Dataset::new(users), SimulationReport { zero_redraws }))
}

fn simulate_user(
    spec: &SimulationSpec,
    index: usize,
    id_width: usize,
) -> Result<(CycleHistory, u64)> {
    let mut rng = stream_rng(spec.seed, &[stream::SIMULATE_USER, index as u64]);
    let u = &spec.u_true;
    let lambda_dist = GammaSampler::new(u.kappa, 1.0 / u.gamma)
        .map_err(|e| ModelError::InvalidParameter(format!("Gamma sampler: {e}")))?;
    let pi_dist = BetaSampler::new(u.alpha, u.beta)
        .map_err(|e| ModelError::InvalidParameter(format!("Beta sampler: {e}")))?;
    let lambda = lambda_dist.sample(&mut rng).max(f64::MIN_POSITIVE);
    let pi = pi_dist.sample(&mut rng).clamp(PI_MIN, PI_MAX);

    let pmf = skip_pmf(pi, spec.s_max)?;
    let mut cdf = pmf;
    let mut acc = 0.0;
    for p in &mut cdf {
        acc += *p;
        *p = acc;
    }
    if let Some(last) = cdf.last_mut() {
        *last = 1.0;
    }

    let mut cycles = Vec::with_capacity(spec.cycles_per_user);
    let mut skips = Vec::with_capacity(spec.cycles_per_user);
    let mut redraws = 0u64;
    for _ in 0..spec.cycles_per_user {
        let s = draw_skip_count(&cdf, &mut rng);
        let rate = lambda * f64::from(s + 1);
        let pois = Poisson::new(rate)
            .map_err(|e| ModelError::Numerical(format!("Poisson sampler at rate {rate}: {e}")))?;
        let mut d: f64 = pois.sample(&mut rng);
        while d < 1.0 {
            redraws += 1;
            d = pois.sample(&mut rng);
        }
        cycles.push(d as u32);
        skips.push(s);
    }
    let history = CycleHistory::with_skips(format!("u{index:0id_width$}"), cycles, skips)?;
    Ok((history, redraws))
}

/// Partition users by whether any of their first `train_len` cycles
/// contains a skip. Requires ground-truth skip counts.
pub fn split_cohorts_by_skip(dataset: &Dataset, train_len: usize) -> Result<(Dataset, Dataset)> {
    let mut ever = Vec::new();
    let mut never = Vec::new();
    for user in &dataset.users {
        match user.ever_skipped(train_len) {
            Some(true) => ever.push(user.clone()),
            Some(false) => never.push(user.clone()),
            None => {
                return Err(ModelError::InvalidData(format!(
                    "user {}: cohort split requires ground-truth skip counts",
                    user.user_id
                )))
            }
        }
    }
    Ok((Dataset::new(ever), Dataset::new(never)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::gauss_legendre;
    use crate::model::{beta_log_pdf, user_log_likelihood, UserParameters};

    fn spec(users: usize, cycles: usize, seed: u64) -> SimulationSpec {
        SimulationSpec {
            u_true: Hyperparameters::informative_default(),
            users,
            cycles_per_user: cycles,
            s_max: 100,
            seed,
        }
    }

    /// E_pi[f(pi)] under Beta(alpha, beta) by Gauss-Legendre quadrature.
    fn beta_expectation(alpha: f64, beta: f64, f: impl Fn(f64) -> f64) -> f64 {
        let (nodes, weights) = gauss_legendre(400, 0.0, 1.0);
        nodes
            .iter()
            .zip(&weights)
            .map(|(&pi, &w)| w * beta_log_pdf(pi, alpha, beta).exp() * f(pi))
            .sum()
    }

    /// Moments of (s+1) under the truncated geometric at a given pi.
    fn skip_plus_one_moment(pi: f64, s_max: u32, power: i32) -> f64 {
        let pmf = skip_pmf(pi, s_max).unwrap();
        pmf.iter()
            .enumerate()
            .map(|(s, &p)| ((s + 1) as f64).powi(power) * p)
            .sum()
    }

    #[test]
    fn deterministic_given_seed() {
        let (a, ra) = simulate_population(&spec(50, 8, 11)).unwrap();
        let (b, rb) = simulate_population(&spec(50, 8, 11)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        let (c, _) = simulate_population(&spec(50, 8, 12)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn observed_mean_matches_compound_moments() {
        // E[d] = E[lambda] * E[s+1]; the (s+1) factor integrates the
        // truncated geometric over the Beta prior numerically.
        let s = spec(10_000, 10, 21);
        let (data, _) = simulate_population(&s).unwrap();
        let mean_splus1 = beta_expectation(2.0, 20.0, |pi| skip_plus_one_moment(pi, 100, 1));
        let expected = 30.0 * mean_splus1;

        let all: Vec<f64> = data
            .users
            .iter()
            .flat_map(|u| u.cycles.iter().map(|&d| f64::from(d)))
            .collect();
        let n = all.len() as f64;
        let mean: f64 = all.iter().sum::<f64>() / n;

        // Var(d) = E[lambda (s+1)] + Var(lambda (s+1)).
        let e_lambda2 = 180.0 * 181.0 / 36.0;
        let e_s2 = beta_expectation(2.0, 20.0, |pi| skip_plus_one_moment(pi, 100, 2));
        let var = expected + e_lambda2 * e_s2 - expected * expected;
        let se = (var / n).sqrt();
        assert!(
            (mean - expected).abs() < 3.0 * se,
            "mean {mean} vs expected {expected} (se {se})"
        );
    }

    #[test]
    fn skip_fraction_matches_integrated_rate() {
        let s = spec(10_000, 10, 33);
        let (data, _) = simulate_population(&s).unwrap();
        let expected = beta_expectation(2.0, 20.0, |pi| 1.0 - skip_pmf(pi, 100).unwrap()[0]);

        let mut skipped = 0usize;
        let mut total = 0usize;
        for user in &data.users {
            for &sk in user.true_skips.as_ref().unwrap() {
                total += 1;
                if sk >= 1 {
                    skipped += 1;
                }
            }
        }
        let frac = skipped as f64 / total as f64;
        let se = (expected * (1.0 - expected) / total as f64).sqrt();
        assert!(
            (frac - expected).abs() < 3.0 * se,
            "fraction {frac} vs expected {expected} (se {se})"
        );
    }

    #[test]
    fn zero_alpha_limit_produces_no_skips() {
        // Tiny alpha pushes pi draws to ~0; with the clamp they stay at
        // PI_MIN and skips essentially never fire.
        let mut s = spec(200, 10, 5);
        s.u_true.alpha = 1e-9;
        let (data, _) = simulate_population(&s).unwrap();
        for user in &data.users {
            assert!(user.true_skips.as_ref().unwrap().iter().all(|&x| x == 0));
        }
    }

    #[test]
    fn simulated_data_has_finite_likelihood_at_truth() {
        let s = spec(100, 10, 7);
        let (data, _) = simulate_population(&s).unwrap();
        // Per-user plug-in estimate of the generating parameters from the
        // ground truth: de-inflate cycles by their skip counts for lambda,
        // take the skip fraction for pi.
        for user in &data.users {
            let skips = user.true_skips.as_ref().unwrap();
            let lambda_hat: f64 = user
                .cycles
                .iter()
                .zip(skips)
                .map(|(&d, &sk)| f64::from(d) / f64::from(sk + 1))
                .sum::<f64>()
                / user.cycles.len() as f64;
            let pi_hat = (skips.iter().filter(|&&sk| sk >= 1).count() as f64 / skips.len() as f64)
                .clamp(0.01, 0.9);
            let theta = UserParameters::new(lambda_hat, pi_hat).unwrap();
            let ll = user_log_likelihood(user, &theta, s.s_max).unwrap();
            assert!(ll.is_finite(), "user {}", user.user_id);
        }
    }

    #[test]
    fn per_user_mean_converges_to_lambda_without_skips() {
        // With skips disabled, the per-user mean of many cycles approaches
        // the user's own lambda: two disjoint 1000-cycle stretches estimate
        // the same limit within 3 sigma of their difference.
        let mut s = spec(30, 2000, 17);
        s.u_true.alpha = 1e-9;
        let (data, _) = simulate_population(&s).unwrap();
        for user in &data.users {
            let half = user.cycles.len() / 2;
            let mean_of = |slice: &[u32]| {
                slice.iter().map(|&d| f64::from(d)).sum::<f64>() / slice.len() as f64
            };
            let a = mean_of(&user.cycles[..half]);
            let b = mean_of(&user.cycles[half..]);
            // Var(mean) = lambda / n per stretch; difference has twice that.
            let se_diff = (2.0 * (0.5 * (a + b)) / half as f64).sqrt();
            assert!(
                (a - b).abs() < 3.0 * se_diff,
                "user {}: stretch means {a} vs {b} (se {se_diff})",
                user.user_id
            );
        }
    }

    #[test]
    fn cohort_split_is_exhaustive_and_disjoint() {
        let s = spec(2000, 10, 3);
        let (data, _) = simulate_population(&s).unwrap();
        let (ever, never) = split_cohorts_by_skip(&data, 10).unwrap();
        assert_eq!(ever.len() + never.len(), data.len());
        for user in &ever.users {
            assert_eq!(user.ever_skipped(10), Some(true));
        }
        for user in &never.users {
            assert_eq!(user.ever_skipped(10), Some(false));
        }
        // Both cohorts should be non-trivial at the default prior.
        assert!(ever.len() > 100, "ever-skipped cohort size {}", ever.len());
        assert!(
            never.len() > 100,
            "never-skipped cohort size {}",
            never.len()
        );
    }

    #[test]
    fn cohort_split_requires_ground_truth() {
        let data = Dataset::new(vec![CycleHistory::new("u0", vec![30, 31]).unwrap()]);
        assert!(split_cohorts_by_skip(&data, 2).is_err());
    }

    #[test]
    fn split_prefix_only_counts_training_cycles() {
        let user = CycleHistory::with_skips("u0", vec![30, 31, 62], vec![0, 0, 1]).unwrap();
        let data = Dataset::new(vec![user]);
        let (ever, never) = split_cohorts_by_skip(&data, 2).unwrap();
        assert!(ever.is_empty());
        assert_eq!(never.len(), 1);
        let (ever, _) = split_cohorts_by_skip(&data, 3).unwrap();
        assert_eq!(ever.len(), 1);
    }
}
