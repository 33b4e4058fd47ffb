//! Metrics, baselines, and the per-day evaluation protocol: RMSE and
//! absolute-error metrics, median-CLD stratification, mean/median
//! baselines, and per-day RMSE curves with eligibility bookkeeping.

use crate::data::{CycleHistory, Dataset};
use crate::error::{ModelError, Result};
use crate::model::{Hyperparameters, ModelConfig};
use crate::predict::{PredictiveModel, SkipMode};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Root mean square error of paired actual/predicted values.
pub fn rmse(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    if actual.is_empty() || actual.len() != predicted.len() {
        return Err(ModelError::InvalidData(format!(
            "rmse needs equal non-empty inputs, got {} and {}",
            actual.len(),
            predicted.len()
        )));
    }
    let sum_sq: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(a, p)| (a - p) * (a - p))
        .sum();
    Ok((sum_sq / actual.len() as f64).sqrt())
}

/// Median with the even-count convention of averaging the two central
/// values.
pub fn median_of(values: &[f64]) -> f64 {
    debug_assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite metric values"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Median cycle length difference: the median of |d_{c+1} - d_c| over a
/// user's consecutive cycles. Needs at least two cycles.
pub fn median_cld(history: &CycleHistory) -> Result<f64> {
    if history.cycles.len() < 2 {
        return Err(ModelError::InvalidData(format!(
            "user {}: median CLD needs at least 2 cycles",
            history.user_id
        )));
    }
    let diffs: Vec<f64> = history
        .cycles
        .windows(2)
        .map(|w| (f64::from(w[1]) - f64::from(w[0])).abs())
        .collect();
    Ok(median_of(&diffs))
}

/// Summary-statistic baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineStatistic {
    Mean,
    Median,
}

/// Baseline point prediction: the mean or median of the training cycles,
/// constant in d_current.
pub fn baseline_predict(history: &CycleHistory, statistic: BaselineStatistic) -> Result<f64> {
    if history.is_empty() {
        return Err(ModelError::InvalidData(format!(
            "user {}: baseline needs a non-empty history",
            history.user_id
        )));
    }
    let values: Vec<f64> = history.cycles.iter().map(|&d| f64::from(d)).collect();
    Ok(match statistic {
        BaselineStatistic::Mean => values.iter().sum::<f64>() / values.len() as f64,
        BaselineStatistic::Median => median_of(&values),
    })
}

/// Predictors compared by the evaluation harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PredictorKind {
    /// Full model, skips marginalized at prediction time.
    AllowSkips,
    /// Model predicting with s* pinned to 0.
    AssumeNoSkip,
    MeanBaseline,
    MedianBaseline,
}

impl PredictorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PredictorKind::AllowSkips => "sfree",
            PredictorKind::AssumeNoSkip => "s0",
            PredictorKind::MeanBaseline => "mean",
            PredictorKind::MedianBaseline => "median",
        }
    }

    pub fn all() -> [PredictorKind; 4] {
        [
            PredictorKind::AllowSkips,
            PredictorKind::AssumeNoSkip,
            PredictorKind::MeanBaseline,
            PredictorKind::MedianBaseline,
        ]
    }
}

impl std::str::FromStr for PredictorKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sfree" => Ok(PredictorKind::AllowSkips),
            "s0" => Ok(PredictorKind::AssumeNoSkip),
            "mean" => Ok(PredictorKind::MeanBaseline),
            "median" => Ok(PredictorKind::MedianBaseline),
            other => Err(ModelError::InvalidParameter(format!(
                "unknown predictor {other:?} (expected sfree|s0|mean|median)"
            ))),
        }
    }
}

/// Which users count at day d_current.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Eligibility {
    /// Only users whose held-out cycle is still ongoing (truth > d_current).
    /// This matches the conditioning event of the per-day predictions and
    /// the scale of the reference day-40 results.
    OngoingOnly,
    /// All held-out users at every day; baselines become flat curves.
    FixedSet,
}

/// Settings for a per-day RMSE curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveOptions {
    /// Train on the first C cycles; the (C+1)-th is the held-out target.
    pub train_cycles: usize,
    pub d_current_grid: Vec<u32>,
    pub models: Vec<PredictorKind>,
    pub eligibility: Eligibility,
}

/// One (model, day) cell of the curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub model: PredictorKind,
    pub d_current: u32,
    pub rmse: f64,
    pub n_evaluated: usize,
    /// Users left out at this day because their held-out cycle had already
    /// completed (OngoingOnly mode only).
    pub n_excluded: usize,
}

/// Per-day RMSE table plus eligibility bookkeeping:
/// users_total = users_evaluated + users_excluded_short, and at each day
/// users_evaluated = n_evaluated + n_excluded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveReport {
    pub points: Vec<CurvePoint>,
    pub users_total: usize,
    /// Users with at least train_cycles + 1 cycles.
    pub users_evaluated: usize,
    /// Users dropped up front for having too few cycles.
    pub users_excluded_short: usize,
}

/// Per-user predictions shared by the curve and the day-0 report.
struct UserPredictions {
    truth: f64,
    /// Point predictions per model, indexed like `options.models`;
    /// per-day vectors for the proposed models, scalars for baselines.
    per_model: Vec<Vec<f64>>,
    median_cld: f64,
}

fn proposed_mode(kind: PredictorKind) -> Option<SkipMode> {
    match kind {
        PredictorKind::AllowSkips => Some(SkipMode::AllowSkips),
        PredictorKind::AssumeNoSkip => Some(SkipMode::AssumeNoSkip),
        _ => None,
    }
}

fn predictions_for_users(
    dataset: &Dataset,
    u_hat: &Hyperparameters,
    config: &ModelConfig,
    options: &CurveOptions,
) -> Result<(Vec<UserPredictions>, usize)> {
    let mut models: Vec<(usize, PredictiveModel)> = Vec::new();
    for (idx, kind) in options.models.iter().enumerate() {
        if let Some(mode) = proposed_mode(*kind) {
            models.push((idx, PredictiveModel::new(u_hat, config, mode)?));
        }
    }

    let eligible: Vec<&CycleHistory> = dataset
        .users
        .iter()
        .filter(|u| u.cycles.len() > options.train_cycles)
        .collect();
    let excluded_short = dataset.len() - eligible.len();

    let per_user: Vec<Result<UserPredictions>> = eligible
        .par_iter()
        .map(|user| {
            let train = &user.cycles[..options.train_cycles];
            let truth = f64::from(user.cycles[options.train_cycles]);
            let train_history = CycleHistory {
                user_id: user.user_id.clone(),
                cycles: train.to_vec(),
                true_skips: None,
            };
            let mut per_model: Vec<Vec<f64>> = vec![Vec::new(); options.models.len()];
            for (idx, kind) in options.models.iter().enumerate() {
                match kind {
                    PredictorKind::MeanBaseline => {
                        per_model[idx] =
                            vec![baseline_predict(&train_history, BaselineStatistic::Mean)?];
                    }
                    PredictorKind::MedianBaseline => {
                        per_model[idx] =
                            vec![baseline_predict(&train_history, BaselineStatistic::Median)?];
                    }
                    _ => {}
                }
            }
            for (idx, model) in &models {
                let weights = model.user_weights(train)?;
                let pmf = model.unconditional_cycle_pmf(&weights);
                let points = model.expectation_curve(&pmf, &options.d_current_grid)?;
                per_model[*idx] = points.into_iter().map(|p| p.expected).collect();
            }
            let median_cld = if train.len() >= 2 {
                median_cld(&train_history)?
            } else {
                0.0
            };
            Ok(UserPredictions {
                truth,
                per_model,
                median_cld,
            })
        })
        .collect();

    let mut users = Vec::with_capacity(per_user.len());
    for u in per_user {
        users.push(u?);
    }
    Ok((users, excluded_short))
}

/// Evaluate every requested model's point prediction against the held-out
/// cycle at each day of the grid. Proposed models re-predict per day via
/// the conditional expectation; baselines are constant per user.
pub fn per_day_rmse_curve(
    dataset: &Dataset,
    u_hat: &Hyperparameters,
    config: &ModelConfig,
    options: &CurveOptions,
) -> Result<CurveReport> {
    if options.train_cycles < 1 {
        return Err(ModelError::InvalidParameter(
            "train_cycles must be at least 1".into(),
        ));
    }
    if options.models.is_empty() || options.d_current_grid.is_empty() {
        return Err(ModelError::InvalidParameter(
            "curve needs at least one model and one day".into(),
        ));
    }
    let (users, excluded_short) = predictions_for_users(dataset, u_hat, config, options)?;
    if users.is_empty() {
        return Err(ModelError::InvalidData(format!(
            "no user has {} + 1 cycles",
            options.train_cycles
        )));
    }

    let mut points = Vec::with_capacity(options.models.len() * options.d_current_grid.len());
    for (day_idx, &dc) in options.d_current_grid.iter().enumerate() {
        let included: Vec<&UserPredictions> = users
            .iter()
            .filter(|u| match options.eligibility {
                Eligibility::OngoingOnly => u.truth > f64::from(dc),
                Eligibility::FixedSet => true,
            })
            .collect();
        let n_excluded = users.len() - included.len();
        for (model_idx, kind) in options.models.iter().enumerate() {
            if included.is_empty() {
                points.push(CurvePoint {
                    model: *kind,
                    d_current: dc,
                    rmse: f64::NAN,
                    n_evaluated: 0,
                    n_excluded,
                });
                continue;
            }
            let actual: Vec<f64> = included.iter().map(|u| u.truth).collect();
            let predicted: Vec<f64> = included
                .iter()
                .map(|u| {
                    let preds = &u.per_model[model_idx];
                    if preds.len() == 1 {
                        preds[0]
                    } else {
                        preds[day_idx]
                    }
                })
                .collect();
            points.push(CurvePoint {
                model: *kind,
                d_current: dc,
                rmse: rmse(&actual, &predicted)?,
                n_evaluated: included.len(),
                n_excluded,
            });
        }
    }
    Ok(CurveReport {
        points,
        users_total: dataset.len(),
        users_evaluated: users.len(),
        users_excluded_short: excluded_short,
    })
}

/// Day-0 per-user record for reports and CLD stratification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserEvaluation {
    pub user_id: String,
    pub median_cld: f64,
    pub actual: f64,
    /// (model, prediction, absolute error) triples.
    pub predictions: Vec<(PredictorKind, f64, f64)>,
}

/// One median-CLD bucket: integer CLD values 0..9 plus a 10+ overflow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CldBucket {
    pub bucket: u32,
    pub label: String,
    pub n_users: usize,
    pub median_abs_error: f64,
    pub rmse: f64,
}

/// Group day-0 absolute errors by the user's (floored) median CLD.
pub fn stratify_by_cld(entries: &[(f64, f64, f64)]) -> Vec<CldBucket> {
    // entries: (median_cld, actual, predicted)
    let mut grouped: Vec<Vec<(f64, f64)>> = vec![Vec::new(); 11];
    for &(cld, actual, predicted) in entries {
        let bucket = (cld.floor() as usize).min(10);
        grouped[bucket].push((actual, predicted));
    }
    grouped
        .into_iter()
        .enumerate()
        .filter(|(_, members)| !members.is_empty())
        .map(|(bucket, members)| {
            let abs_errors: Vec<f64> = members.iter().map(|(a, p)| (a - p).abs()).collect();
            let actual: Vec<f64> = members.iter().map(|(a, _)| *a).collect();
            let predicted: Vec<f64> = members.iter().map(|(_, p)| *p).collect();
            CldBucket {
                bucket: bucket as u32,
                label: if bucket == 10 {
                    "10+".to_string()
                } else {
                    bucket.to_string()
                },
                n_users: members.len(),
                median_abs_error: median_of(&abs_errors),
                rmse: rmse(&actual, &predicted).expect("non-empty bucket"),
            }
        })
        .collect()
}

/// Full day-0 evaluation: per-model RMSE and median absolute error,
/// per-user records, and the CLD stratification of the skip-aware model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub day0: Vec<Day0Summary>,
    pub users: Vec<UserEvaluation>,
    pub cld_buckets: Vec<CldBucket>,
    pub users_total: usize,
    pub users_evaluated: usize,
    pub users_excluded_short: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Day0Summary {
    pub model: PredictorKind,
    pub rmse: f64,
    pub median_abs_error: f64,
    pub n_evaluated: usize,
}

pub fn evaluate_day0(
    dataset: &Dataset,
    u_hat: &Hyperparameters,
    config: &ModelConfig,
    train_cycles: usize,
    models: &[PredictorKind],
) -> Result<EvaluationReport> {
    let options = CurveOptions {
        train_cycles,
        d_current_grid: vec![0],
        models: models.to_vec(),
        eligibility: Eligibility::OngoingOnly,
    };
    let (users, excluded_short) = predictions_for_users(dataset, u_hat, config, &options)?;
    if users.is_empty() {
        return Err(ModelError::InvalidData(format!(
            "no user has {train_cycles} + 1 cycles"
        )));
    }

    let eligible_ids: Vec<String> = dataset
        .users
        .iter()
        .filter(|u| u.cycles.len() > train_cycles)
        .map(|u| u.user_id.clone())
        .collect();

    let mut user_evals = Vec::with_capacity(users.len());
    for (user, id) in users.iter().zip(eligible_ids) {
        let predictions: Vec<(PredictorKind, f64, f64)> = models
            .iter()
            .enumerate()
            .map(|(idx, kind)| {
                let p = user.per_model[idx][0];
                (*kind, p, (user.truth - p).abs())
            })
            .collect();
        user_evals.push(UserEvaluation {
            user_id: id,
            median_cld: user.median_cld,
            actual: user.truth,
            predictions,
        });
    }

    let day0: Vec<Day0Summary> = models
        .iter()
        .enumerate()
        .map(|(idx, kind)| {
            let actual: Vec<f64> = users.iter().map(|u| u.truth).collect();
            let predicted: Vec<f64> = users.iter().map(|u| u.per_model[idx][0]).collect();
            let abs_errors: Vec<f64> = actual
                .iter()
                .zip(&predicted)
                .map(|(a, p)| (a - p).abs())
                .collect();
            Ok(Day0Summary {
                model: *kind,
                rmse: rmse(&actual, &predicted)?,
                median_abs_error: median_of(&abs_errors),
                n_evaluated: users.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    // Stratify the first proposed model in the list (or the first model).
    let strat_idx = models
        .iter()
        .position(|k| proposed_mode(*k).is_some())
        .unwrap_or(0);
    let entries: Vec<(f64, f64, f64)> = users
        .iter()
        .map(|u| (u.median_cld, u.truth, u.per_model[strat_idx][0]))
        .collect();
    let cld_buckets = stratify_by_cld(&entries);

    Ok(EvaluationReport {
        day0,
        users: user_evals,
        cld_buckets,
        users_total: dataset.len(),
        users_evaluated: users.len(),
        users_excluded_short: excluded_short,
    })
}
