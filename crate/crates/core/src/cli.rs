//! Command-line entry point and file formats: dataset CSV ingestion with
//! cohort filters, fitted-model JSON, prediction/evaluation CSV writers,
//! and per-run manifests for reproducibility.
//!
//! Subcommands: simulate | fit | predict | skip-prob | evaluate | curve.
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.

use crate::data::{CycleHistory, Dataset};
use crate::error::{ModelError, Result};
use crate::evaluate::{
    evaluate_day0, per_day_rmse_curve, CurveOptions, CurveReport, Eligibility, EvaluationReport,
    PredictorKind,
};
use crate::inference::{fit, FitConfig, FitResult};
use crate::model::{Hyperparameters, ModelConfig};
use crate::predict::{PredictiveModel, SkipMode};
use crate::rng::{stream, stream_rng};
use crate::simulate::{simulate_population, SimulationSpec};
use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::{Path, PathBuf};

pub const DATASET_CSV_HEADER: &str = "user_id,cycle_index,cycle_length,true_skips";

/// Cohort filters applied at ingestion, in order: age, minimum cycle
/// count, gap exclusion, optional shuffle, truncation to the first k
/// cycles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortFilter {
    /// Drop users with fewer than this many cycles.
    pub min_cycles: usize,
    /// Drop cycles longer than this many days: an observed "cycle" beyond
    /// this length indicates a tracking gap rather than a cycle.
    pub max_gap_days: Option<u32>,
    /// Keep only the first k cycles per user (after optional shuffling).
    pub first_k_cycles: Option<usize>,
    /// The pinned CSV schema carries no age column; requesting an age
    /// filter is rejected at ingest with a data error.
    pub age_range: Option<(u32, u32)>,
}

impl Default for CohortFilter {
    fn default() -> Self {
        CohortFilter {
            min_cycles: 1,
            max_gap_days: None,
            first_k_cycles: None,
            age_range: None,
        }
    }
}

/// Ingestion bookkeeping; users_in = users_kept + users_removed_min_cycles
/// + users_removed_gap_empty.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub users_in: usize,
    pub users_kept: usize,
    pub users_removed_min_cycles: usize,
    /// Users whose cycles all fell to the gap filter.
    pub users_removed_gap_empty: usize,
    pub cycles_in: usize,
    pub cycles_kept: usize,
    pub cycles_removed_gap: usize,
    pub cycles_removed_truncation: usize,
}

/// Read a dataset CSV, validating the schema strictly, then apply the
/// cohort filters. Cycles stay in file order unless `shuffle_seed` is
/// given, in which case each user's cycles are shuffled before the
/// first-k truncation.
pub fn ingest(
    path: &Path,
    filter: &CohortFilter,
    shuffle_seed: Option<u64>,
) -> Result<(Dataset, IngestReport)> {
    let raw = read_dataset_csv(path)?;
    apply_filters(raw, filter, shuffle_seed)
}

pub fn apply_filters(
    raw: Dataset,
    filter: &CohortFilter,
    shuffle_seed: Option<u64>,
) -> Result<(Dataset, IngestReport)> {
    if filter.age_range.is_some() {
        return Err(ModelError::InvalidData(
            "age filtering requested, but the dataset schema carries no age column".into(),
        ));
    }
    if filter.min_cycles < 1 {
        return Err(ModelError::InvalidParameter(
            "min_cycles must be at least 1".into(),
        ));
    }
    if let Some(k) = filter.first_k_cycles {
        if k < 1 {
            return Err(ModelError::InvalidParameter(
                "first_k_cycles must be at least 1".into(),
            ));
        }
    }

    let mut report = IngestReport {
        users_in: raw.len(),
        cycles_in: raw.users.iter().map(|u| u.cycles.len()).sum(),
        ..IngestReport::default()
    };
    let mut kept = Vec::with_capacity(raw.len());
    for (index, mut user) in raw.users.into_iter().enumerate() {
        if user.cycles.len() < filter.min_cycles {
            report.users_removed_min_cycles += 1;
            continue;
        }
        if let Some(max_gap) = filter.max_gap_days {
            let before = user.cycles.len();
            let keep_mask: Vec<bool> = user.cycles.iter().map(|&d| d <= max_gap).collect();
            if keep_mask.iter().any(|&k| !k) {
                user.cycles = user
                    .cycles
                    .iter()
                    .zip(&keep_mask)
                    .filter(|(_, &k)| k)
                    .map(|(&d, _)| d)
                    .collect();
                if let Some(skips) = user.true_skips.take() {
                    user.true_skips = Some(
                        skips
                            .iter()
                            .zip(&keep_mask)
                            .filter(|(_, &k)| k)
                            .map(|(&s, _)| s)
                            .collect(),
                    );
                }
                report.cycles_removed_gap += before - user.cycles.len();
            }
            if user.cycles.is_empty() {
                report.users_removed_gap_empty += 1;
                continue;
            }
        }
        if let Some(seed) = shuffle_seed {
            let mut order: Vec<usize> = (0..user.cycles.len()).collect();
            order.shuffle(&mut stream_rng(
                seed,
                &[stream::INGEST_SHUFFLE, index as u64],
            ));
            user.cycles = order.iter().map(|&i| user.cycles[i]).collect();
            if let Some(skips) = user.true_skips.take() {
                user.true_skips = Some(order.iter().map(|&i| skips[i]).collect());
            }
        }
        if let Some(k) = filter.first_k_cycles {
            if user.cycles.len() > k {
                report.cycles_removed_truncation += user.cycles.len() - k;
                user.cycles.truncate(k);
                if let Some(skips) = user.true_skips.as_mut() {
                    skips.truncate(k);
                }
            }
        }
        report.cycles_kept += user.cycles.len();
        kept.push(user);
    }
    report.users_kept = kept.len();
    Ok((Dataset::new(kept), report))
}

/// Strict reader for the pinned dataset schema:
/// `user_id,cycle_index,cycle_length,true_skips` with 0-based consecutive
/// cycle indices per user and cycle lengths of at least 1 day. Errors cite
/// the offending line number.
pub fn read_dataset_csv(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path)
        .map_err(|e| ModelError::InvalidData(format!("cannot open {}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(file);
    {
        let headers = reader.headers()?;
        let expected: Vec<&str> = DATASET_CSV_HEADER.split(',').collect();
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(ModelError::InvalidData(format!(
                "unexpected header {:?}; expected {DATASET_CSV_HEADER:?}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
    }

    let mut users: Vec<CycleHistory> = Vec::new();
    let mut index_of: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record
            .position()
            .map(|p| p.line().to_string())
            .unwrap_or_else(|| "?".into());
        let parse_u32 = |field: usize, name: &str| -> Result<u32> {
            record
                .get(field)
                .ok_or_else(|| {
                    ModelError::InvalidData(format!("line {line}: missing column {name}"))
                })?
                .trim()
                .parse::<u32>()
                .map_err(|e| {
                    ModelError::InvalidData(format!(
                        "line {line}: column {name} is not a non-negative integer ({e})"
                    ))
                })
        };
        let user_id = record
            .get(0)
            .ok_or_else(|| ModelError::InvalidData(format!("line {line}: missing user_id")))?
            .to_string();
        if user_id.is_empty() {
            return Err(ModelError::InvalidData(format!(
                "line {line}: empty user_id"
            )));
        }
        let cycle_index = parse_u32(1, "cycle_index")?;
        let cycle_length = parse_u32(2, "cycle_length")?;
        if cycle_length < 1 {
            return Err(ModelError::InvalidData(format!(
                "line {line}: cycle_length must be at least 1 day"
            )));
        }
        let skip_field = record.get(3).unwrap_or("").trim();
        let true_skip: Option<u32> = if skip_field.is_empty() {
            None
        } else {
            Some(skip_field.parse::<u32>().map_err(|e| {
                ModelError::InvalidData(format!(
                    "line {line}: column true_skips is not a non-negative integer ({e})"
                ))
            })?)
        };

        let idx = *index_of.entry(user_id.clone()).or_insert_with(|| {
            users.push(CycleHistory {
                user_id,
                cycles: Vec::new(),
                true_skips: None,
            });
            users.len() - 1
        });
        let user = &mut users[idx];
        if cycle_index as usize != user.cycles.len() {
            return Err(ModelError::InvalidData(format!(
                "line {line}: user {} has cycle_index {cycle_index}, expected {} (indices must be 0-based and consecutive)",
                user.user_id,
                user.cycles.len()
            )));
        }
        match (&mut user.true_skips, true_skip) {
            (slot @ None, Some(s)) if user.cycles.is_empty() => {
                *slot = Some(vec![s]);
            }
            (None, Some(_)) => {
                return Err(ModelError::InvalidData(format!(
                    "line {line}: user {} mixes empty and non-empty true_skips",
                    user.user_id
                )));
            }
            (None, None) => {}
            (Some(_), None) => {
                return Err(ModelError::InvalidData(format!(
                    "line {line}: user {} mixes empty and non-empty true_skips",
                    user.user_id
                )));
            }
            (Some(skips), Some(s)) => skips.push(s),
        }
        user.cycles.push(cycle_length);
    }
    Ok(Dataset::new(users))
}

/// Write the pinned dataset schema; `true_skips` is left empty when the
/// dataset has no ground truth.
pub fn write_dataset_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{DATASET_CSV_HEADER}")?;
    for user in &dataset.users {
        for (c, &d) in user.cycles.iter().enumerate() {
            let skip = user
                .true_skips
                .as_ref()
                .map(|s| s[c].to_string())
                .unwrap_or_default();
            writeln!(out, "{},{},{},{}", user.user_id, c, d, skip)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Serialized form of a fitted model: hyperparameters, training trace,
/// and the exact configuration used, so prediction cannot silently
/// mismatch S or D.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModelFile {
    pub kappa: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub trace: Vec<f64>,
    pub epochs_run: usize,
    pub converged: bool,
    pub config_echo: ConfigEcho,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub model: ModelConfig,
    pub fit: FitConfig,
    pub filter: CohortFilter,
    pub shuffle_seed: Option<u64>,
    pub input_path: String,
    pub input_sha256: String,
}

impl FittedModelFile {
    pub fn hyperparameters(&self) -> Result<Hyperparameters> {
        Hyperparameters::new(self.kappa, self.gamma, self.alpha, self.beta)
    }

    pub fn from_fit(result: &FitResult, echo: ConfigEcho) -> Self {
        FittedModelFile {
            kappa: result.u_hat.kappa,
            gamma: result.u_hat.gamma,
            alpha: result.u_hat.alpha,
            beta: result.u_hat.beta,
            trace: result.trace.clone(),
            epochs_run: result.epochs_run,
            converged: result.converged,
            config_echo: echo,
        }
    }
}

pub fn write_fitted_json(fitted: &FittedModelFile, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(fitted)?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}

pub fn read_fitted_json(path: &Path) -> Result<FittedModelFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ModelError::InvalidData(format!("cannot read {}: {e}", path.display())))?;
    let fitted: FittedModelFile = serde_json::from_str(&text)?;
    fitted.hyperparameters()?;
    fitted.config_echo.model.validate()?;
    Ok(fitted)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

/// Per-run manifest: tool version, full argument echo, input digests, and
/// outputs. Contains no timestamps, so reruns are byte-identical.
#[derive(Debug, Clone, Serialize)]
struct Manifest<'a, A: Serialize> {
    tool: &'static str,
    version: &'static str,
    subcommand: &'a str,
    args: &'a A,
    threads: Option<usize>,
    inputs: Vec<ManifestInput>,
    outputs: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
struct ManifestInput {
    path: String,
    sha256: String,
}

fn write_manifest<A: Serialize>(
    subcommand: &str,
    args: &A,
    threads: Option<usize>,
    inputs: &[&Path],
    outputs: &[&Path],
    manifest_path: &Path,
) -> Result<()> {
    let inputs = inputs
        .iter()
        .map(|p| {
            Ok(ManifestInput {
                path: p.display().to_string(),
                sha256: sha256_file(p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        tool: "cyclemodel",
        version: env!("CARGO_PKG_VERSION"),
        subcommand,
        args,
        threads,
        inputs,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(manifest_path, json + "\n")?;
    Ok(())
}

fn default_manifest_path(primary_output: &Path) -> PathBuf {
    let mut name = primary_output
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    name.push_str(".manifest.json");
    primary_output.with_file_name(name)
}

#[derive(Parser, Debug)]
#[command(
    name = "cyclemodel",
    version,
    about = "Hierarchical model of self-tracked cycle lengths with latent skipped tracking: simulate, fit, predict, evaluate"
)]
struct Cli {
    /// Worker threads (default: CYCLEMODEL_THREADS or all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic population with ground-truth skip counts.
    Simulate(SimulateArgs),
    /// Fit population hyperparameters by type-II maximum likelihood.
    Fit(FitArgs),
    /// Per-user conditional next-cycle pmfs and point predictions.
    Predict(PredictArgs),
    /// Per-user posteriors over the next skip count.
    SkipProb(SkipProbArgs),
    /// Day-0 evaluation report with CLD stratification.
    Evaluate(EvaluateArgs),
    /// Per-day RMSE curves for the proposed models and baselines.
    Curve(CurveArgs),
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    /// Number of users I.
    #[arg(long)]
    users: usize,
    /// Cycles per user C.
    #[arg(long)]
    cycles: usize,
    #[arg(long, default_value_t = 180.0)]
    kappa: f64,
    #[arg(long, default_value_t = 6.0)]
    gamma: f64,
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    #[arg(long, default_value_t = 20.0)]
    beta: f64,
    #[arg(long, default_value_t = 100)]
    s_max: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset CSV.
    #[arg(long)]
    out: PathBuf,
    /// Manifest path (default: <out>.manifest.json).
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
struct FilterArgs {
    /// Drop users with fewer than this many cycles.
    #[arg(long, default_value_t = 1)]
    min_cycles: usize,
    /// Drop cycles longer than this many days (tracking-gap exclusion).
    #[arg(long)]
    max_gap_days: Option<u32>,
    /// Keep only the first k cycles per user.
    #[arg(long)]
    first_k: Option<usize>,
    /// Shuffle each user's cycles with this seed before truncation.
    #[arg(long)]
    shuffle_cycles: Option<u64>,
    /// Age range "lo:hi" (rejected: the schema has no age column).
    #[arg(long)]
    age_range: Option<String>,
}

impl FilterArgs {
    fn to_filter(&self) -> Result<CohortFilter> {
        let age_range = match &self.age_range {
            None => None,
            Some(s) => {
                let parts: Vec<&str> = s.split(':').collect();
                if parts.len() != 2 {
                    return Err(ModelError::InvalidParameter(format!(
                        "age range must look like lo:hi, got {s:?}"
                    )));
                }
                let lo = parts[0].parse::<u32>().map_err(|e| {
                    ModelError::InvalidParameter(format!("bad age lower bound: {e}"))
                })?;
                let hi = parts[1].parse::<u32>().map_err(|e| {
                    ModelError::InvalidParameter(format!("bad age upper bound: {e}"))
                })?;
                Some((lo, hi))
            }
        };
        Ok(CohortFilter {
            min_cycles: self.min_cycles,
            max_gap_days: self.max_gap_days,
            first_k_cycles: self.first_k,
            age_range,
        })
    }
}

#[derive(Args, Debug, Serialize)]
struct FitArgs {
    /// Input dataset CSV.
    #[arg(long)]
    input: PathBuf,
    /// Output fitted-model JSON.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    filter: FilterArgs,
    #[arg(long, default_value_t = 180.0)]
    init_kappa: f64,
    #[arg(long, default_value_t = 6.0)]
    init_gamma: f64,
    #[arg(long, default_value_t = 2.0)]
    init_alpha: f64,
    #[arg(long, default_value_t = 20.0)]
    init_beta: f64,
    #[arg(long, default_value_t = 100)]
    s_max: u32,
    #[arg(long, default_value_t = 1000)]
    mc_samples: usize,
    /// Predictive grid bound carried into the fitted model file.
    #[arg(long, default_value_t = 300)]
    d_max: u32,
    #[arg(long, default_value_t = 0.01)]
    learning_rate: f64,
    #[arg(long, default_value_t = 100)]
    batch_size: usize,
    #[arg(long, default_value_t = 1000)]
    max_epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    eps_loss: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct PredictArgs {
    /// Input dataset CSV (training histories).
    #[arg(long)]
    input: PathBuf,
    /// Fitted-model JSON from `fit`.
    #[arg(long)]
    fitted: PathBuf,
    /// Prediction mode: s0 (trust next report) or sfree (marginalize skips).
    #[arg(long)]
    mode: String,
    /// Evaluate conditioning days 0..=this.
    #[arg(long, default_value_t = 40)]
    d_current_max: u32,
    /// Summary CSV: user_id,d_current,mode,expected,map.
    #[arg(long)]
    out_summary: PathBuf,
    /// Optional long-format pmf CSV: user_id,d_current,mode,d_star,probability.
    #[arg(long)]
    out_pmf: Option<PathBuf>,
    /// Emit pmfs only for these users (comma-separated); default all.
    #[arg(long)]
    pmf_users: Option<String>,
    /// Override the theta-sampling seed from the fitted file.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    filter: FilterArgs,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct SkipProbArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    fitted: PathBuf,
    /// Prediction mode (sfree marginalizes skips; s0 is degenerate).
    #[arg(long, default_value = "sfree")]
    mode: String,
    #[arg(long, default_value_t = 40)]
    d_current_max: u32,
    /// Emit skip counts 0..=this.
    #[arg(long, default_value_t = 5)]
    max_s: u32,
    /// Output CSV: user_id,d_current,s_star,probability.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    filter: FilterArgs,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct EvaluateArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    fitted: PathBuf,
    /// Train on the first C cycles, hold out the (C+1)-th.
    #[arg(long, default_value_t = 10)]
    train_cycles: usize,
    /// Day-0 summary CSV per model.
    #[arg(long)]
    out_report: PathBuf,
    /// Per-user long CSV: user_id,model,median_cld,actual,predicted,abs_error.
    #[arg(long)]
    out_users: PathBuf,
    /// Median-CLD bucket CSV.
    #[arg(long)]
    out_buckets: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    filter: FilterArgs,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct CurveArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    fitted: PathBuf,
    #[arg(long, default_value_t = 10)]
    train_cycles: usize,
    /// Evaluate days 0..=this.
    #[arg(long, default_value_t = 40)]
    max_day: u32,
    /// Comma-separated models: sfree,s0,mean,median.
    #[arg(long, default_value = "sfree,s0,mean,median")]
    models: String,
    /// ongoing: evaluate users whose held-out cycle exceeds the day;
    /// fixed: evaluate all held-out users at every day.
    #[arg(long, default_value = "ongoing")]
    eligibility: String,
    /// Output CSV: model,d_current,rmse,n_evaluated,n_excluded.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    filter: FilterArgs,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

/// Run the CLI on the given argv (including the program name). Returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints its own message; keep 0 for --help/--version.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let threads = cli.threads.or_else(|| {
        std::env::var("CYCLEMODEL_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    let outcome = run_with_threads(threads, || dispatch(cli.command, threads));
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Run a closure inside a dedicated rayon pool of `threads` workers (or
/// the default pool when unset). All internal reductions are
/// order-deterministic, so results do not depend on the worker count.
pub fn run_with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match threads {
        None => f(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .expect("thread pool construction")
            .install(f),
    }
}

fn dispatch(command: Command, threads: Option<usize>) -> Result<()> {
    match command {
        Command::Simulate(args) => cmd_simulate(args, threads),
        Command::Fit(args) => cmd_fit(args, threads),
        Command::Predict(args) => cmd_predict(args, threads),
        Command::SkipProb(args) => cmd_skip_prob(args, threads),
        Command::Evaluate(args) => cmd_evaluate(args, threads),
        Command::Curve(args) => cmd_curve(args, threads),
    }
}

fn cmd_simulate(args: SimulateArgs, threads: Option<usize>) -> Result<()> {
    let spec = SimulationSpec {
        u_true: Hyperparameters::new(args.kappa, args.gamma, args.alpha, args.beta)?,
        users: args.users,
        cycles_per_user: args.cycles,
        s_max: args.s_max,
        seed: args.seed,
    };
    let (dataset, report) = simulate_population(&spec)?;
    write_dataset_csv(&dataset, &args.out)?;
    eprintln!(
        "simulated {} users x {} cycles (zero redraws: {})",
        args.users, args.cycles, report.zero_redraws
    );
    let manifest = args
        .manifest
        .clone()
        .unwrap_or_else(|| default_manifest_path(&args.out));
    write_manifest("simulate", &args, threads, &[], &[&args.out], &manifest)?;
    Ok(())
}

fn cmd_fit(args: FitArgs, threads: Option<usize>) -> Result<()> {
    let filter = args.filter.to_filter()?;
    let (dataset, ingest_report) = ingest(&args.input, &filter, args.filter.shuffle_cycles)?;
    if dataset.is_empty() {
        return Err(ModelError::InvalidData(format!(
            "no users left after filtering {} (report: {ingest_report:?})",
            args.input.display()
        )));
    }
    eprintln!("ingest: {ingest_report:?}");
    let config = FitConfig {
        init_u: Hyperparameters::new(
            args.init_kappa,
            args.init_gamma,
            args.init_alpha,
            args.init_beta,
        )?,
        s_max: args.s_max,
        mc_samples: args.mc_samples,
        learning_rate: args.learning_rate,
        batch_size: args.batch_size.min(dataset.len()),
        max_epochs: args.max_epochs,
        eps_loss: args.eps_loss,
        seed: args.seed,
    };
    let result = fit(&dataset, &config)?;
    if let Some(diag) = &result.diagnostic {
        eprintln!("warning: {diag}");
    }
    eprintln!(
        "fit: {} epochs, converged = {}, u_hat = [{:.4}, {:.4}, {:.4}, {:.4}]",
        result.epochs_run,
        result.converged,
        result.u_hat.kappa,
        result.u_hat.gamma,
        result.u_hat.alpha,
        result.u_hat.beta
    );
    let echo = ConfigEcho {
        model: ModelConfig {
            s_max: args.s_max,
            mc_samples: args.mc_samples,
            d_max: args.d_max,
            seed: args.seed,
        },
        fit: config,
        filter,
        shuffle_seed: args.filter.shuffle_cycles,
        input_path: args.input.display().to_string(),
        input_sha256: sha256_file(&args.input)?,
    };
    write_fitted_json(&FittedModelFile::from_fit(&result, echo), &args.out)?;
    let manifest = args
        .manifest
        .clone()
        .unwrap_or_else(|| default_manifest_path(&args.out));
    write_manifest(
        "fit",
        &args,
        threads,
        &[&args.input],
        &[&args.out],
        &manifest,
    )?;
    Ok(())
}

fn load_for_prediction(
    input: &Path,
    fitted_path: &Path,
    filter_args: &FilterArgs,
    seed_override: Option<u64>,
) -> Result<(Dataset, Hyperparameters, ModelConfig)> {
    let filter = filter_args.to_filter()?;
    let (dataset, report) = ingest(input, &filter, filter_args.shuffle_cycles)?;
    if dataset.is_empty() {
        return Err(ModelError::InvalidData(format!(
            "no users left after filtering {} (report: {report:?})",
            input.display()
        )));
    }
    let fitted = read_fitted_json(fitted_path)?;
    let u_hat = fitted.hyperparameters()?;
    let mut config = fitted.config_echo.model;
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    Ok((dataset, u_hat, config))
}

fn cmd_predict(args: PredictArgs, threads: Option<usize>) -> Result<()> {
    let (dataset, u_hat, config) =
        load_for_prediction(&args.input, &args.fitted, &args.filter, args.seed)?;
    let mode: SkipMode = args.mode.parse()?;
    let model = PredictiveModel::new(&u_hat, &config, mode)?;
    let days: Vec<u32> = (0..=args.d_current_max).collect();
    if args.d_current_max >= config.d_max {
        return Err(ModelError::InvalidParameter(format!(
            "d_current_max {} must be below the fitted grid bound {}",
            args.d_current_max, config.d_max
        )));
    }

    let pmf_users: Option<std::collections::HashSet<String>> = args
        .pmf_users
        .as_ref()
        .map(|s| s.split(',').map(|x| x.trim().to_string()).collect());

    use rayon::prelude::*;
    struct UserOut {
        user_id: String,
        points: Vec<crate::predict::PointPrediction>,
        pmf: Option<Vec<f64>>,
    }
    let rows: Vec<UserOut> = dataset
        .users
        .par_iter()
        .map(|user| {
            let weights = model.user_weights(&user.cycles)?;
            let pmf = model.unconditional_cycle_pmf(&weights);
            let points = model.expectation_curve(&pmf, &days)?;
            let keep_pmf = args.out_pmf.is_some()
                && pmf_users
                    .as_ref()
                    .map(|set| set.contains(&user.user_id))
                    .unwrap_or(true);
            Ok(UserOut {
                user_id: user.user_id.clone(),
                points,
                pmf: keep_pmf.then_some(pmf),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut summary = std::io::BufWriter::new(std::fs::File::create(&args.out_summary)?);
    writeln!(summary, "user_id,d_current,mode,expected,map")?;
    for row in &rows {
        for p in &row.points {
            writeln!(
                summary,
                "{},{},{},{:.6},{}",
                row.user_id,
                p.d_current,
                mode.as_str(),
                p.expected,
                p.map
            )?;
        }
    }
    summary.flush()?;

    let mut outputs: Vec<&Path> = vec![&args.out_summary];
    if let Some(pmf_path) = &args.out_pmf {
        let mut out = std::io::BufWriter::new(std::fs::File::create(pmf_path)?);
        writeln!(out, "user_id,d_current,mode,d_star,probability")?;
        for row in rows.iter().filter(|r| r.pmf.is_some()) {
            let pmf = row.pmf.as_ref().unwrap();
            for &dc in &days {
                let lo = dc as usize + 1;
                let tail: f64 = pmf[lo..].iter().sum();
                if tail.is_nan() || tail <= 0.0 {
                    continue;
                }
                for (d, &p) in pmf.iter().enumerate().skip(lo) {
                    writeln!(
                        out,
                        "{},{},{},{},{:.12e}",
                        row.user_id,
                        dc,
                        mode.as_str(),
                        d,
                        p / tail
                    )?;
                }
            }
        }
        out.flush()?;
        outputs.push(pmf_path);
    }

    let manifest = args
        .manifest
        .clone()
        .unwrap_or_else(|| default_manifest_path(&args.out_summary));
    write_manifest(
        "predict",
        &args,
        threads,
        &[&args.input, &args.fitted],
        &outputs,
        &manifest,
    )?;
    Ok(())
}

fn cmd_skip_prob(args: SkipProbArgs, threads: Option<usize>) -> Result<()> {
    let (dataset, u_hat, config) =
        load_for_prediction(&args.input, &args.fitted, &args.filter, args.seed)?;
    let mode: SkipMode = args.mode.parse()?;
    if args.d_current_max >= config.d_max {
        return Err(ModelError::InvalidParameter(format!(
            "d_current_max {} must be below the fitted grid bound {}",
            args.d_current_max, config.d_max
        )));
    }
    let model = PredictiveModel::new(&u_hat, &config, mode)?;
    let days: Vec<u32> = (0..=args.d_current_max).collect();
    let survival_tables: Vec<_> = days
        .iter()
        .map(|&dc| model.survival_table(dc))
        .collect::<Result<Vec<_>>>()?;

    use rayon::prelude::*;
    let rows: Vec<(String, Vec<Vec<f64>>)> = dataset
        .users
        .par_iter()
        .map(|user| {
            let weights = model.user_weights(&user.cycles)?;
            let per_day: Vec<Vec<f64>> = days
                .iter()
                .zip(&survival_tables)
                .map(|(&dc, surv)| {
                    let posterior = model.skip_posterior(&weights, dc, surv)?;
                    Ok(posterior
                        .probabilities
                        .into_iter()
                        .take(args.max_s as usize + 1)
                        .collect())
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((user.user_id.clone(), per_day))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out = std::io::BufWriter::new(std::fs::File::create(&args.out)?);
    writeln!(out, "user_id,d_current,s_star,probability")?;
    for (user_id, per_day) in &rows {
        for (&dc, probs) in days.iter().zip(per_day) {
            for (s, &p) in probs.iter().enumerate() {
                writeln!(out, "{user_id},{dc},{s},{p:.12e}")?;
            }
        }
    }
    out.flush()?;

    let manifest = args
        .manifest
        .clone()
        .unwrap_or_else(|| default_manifest_path(&args.out));
    write_manifest(
        "skip-prob",
        &args,
        threads,
        &[&args.input, &args.fitted],
        &[&args.out],
        &manifest,
    )?;
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs, threads: Option<usize>) -> Result<()> {
    let (dataset, u_hat, mut config) =
        load_for_prediction(&args.input, &args.fitted, &args.filter, args.seed)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let report: EvaluationReport = evaluate_day0(
        &dataset,
        &u_hat,
        &config,
        args.train_cycles,
        &PredictorKind::all(),
    )?;

    let mut out = std::io::BufWriter::new(std::fs::File::create(&args.out_report)?);
    writeln!(out, "model,d_current,rmse,median_abs_error,n_evaluated")?;
    for s in &report.day0 {
        writeln!(
            out,
            "{},0,{:.6},{:.6},{}",
            s.model.as_str(),
            s.rmse,
            s.median_abs_error,
            s.n_evaluated
        )?;
    }
    out.flush()?;

    let mut out = std::io::BufWriter::new(std::fs::File::create(&args.out_users)?);
    writeln!(out, "user_id,model,median_cld,actual,predicted,abs_error")?;
    for u in &report.users {
        for (kind, predicted, abs_error) in &u.predictions {
            writeln!(
                out,
                "{},{},{:.1},{},{:.6},{:.6}",
                u.user_id,
                kind.as_str(),
                u.median_cld,
                u.actual,
                predicted,
                abs_error
            )?;
        }
    }
    out.flush()?;

    let mut out = std::io::BufWriter::new(std::fs::File::create(&args.out_buckets)?);
    writeln!(out, "bucket,n_users,median_abs_error,rmse")?;
    for b in &report.cld_buckets {
        writeln!(
            out,
            "{},{},{:.6},{:.6}",
            b.label, b.n_users, b.median_abs_error, b.rmse
        )?;
    }
    out.flush()?;

    eprintln!(
        "evaluate: {} users evaluated, {} too short",
        report.users_evaluated, report.users_excluded_short
    );
    let manifest = args
        .manifest
        .clone()
        .unwrap_or_else(|| default_manifest_path(&args.out_report));
    write_manifest(
        "evaluate",
        &args,
        threads,
        &[&args.input, &args.fitted],
        &[&args.out_report, &args.out_users, &args.out_buckets],
        &manifest,
    )?;
    Ok(())
}

fn cmd_curve(args: CurveArgs, threads: Option<usize>) -> Result<()> {
    let (dataset, u_hat, mut config) =
        load_for_prediction(&args.input, &args.fitted, &args.filter, args.seed)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let models: Vec<PredictorKind> = args
        .models
        .split(',')
        .map(|s| s.trim().parse())
        .collect::<Result<Vec<_>>>()?;
    let eligibility = match args.eligibility.as_str() {
        "ongoing" => Eligibility::OngoingOnly,
        "fixed" => Eligibility::FixedSet,
        other => {
            return Err(ModelError::InvalidParameter(format!(
                "unknown eligibility {other:?} (expected ongoing|fixed)"
            )))
        }
    };
    let report: CurveReport = per_day_rmse_curve(
        &dataset,
        &u_hat,
        &config,
        &CurveOptions {
            train_cycles: args.train_cycles,
            d_current_grid: (0..=args.max_day).collect(),
            models,
            eligibility,
        },
    )?;

    let mut out = std::io::BufWriter::new(std::fs::File::create(&args.out)?);
    writeln!(out, "model,d_current,rmse,n_evaluated,n_excluded")?;
    for p in &report.points {
        writeln!(
            out,
            "{},{},{:.6},{},{}",
            p.model.as_str(),
            p.d_current,
            p.rmse,
            p.n_evaluated,
            p.n_excluded
        )?;
    }
    out.flush()?;

    eprintln!(
        "curve: {} users evaluated, {} too short",
        report.users_evaluated, report.users_excluded_short
    );
    let manifest = args
        .manifest
        .clone()
        .unwrap_or_else(|| default_manifest_path(&args.out));
    write_manifest(
        "curve",
        &args,
        threads,
        &[&args.input, &args.fitted],
        &[&args.out],
        &manifest,
    )?;
    Ok(())
}
