//! Subcommands of the `coxlin` binary. Every `cmd_*` function runs in-process
//! and returns either a short report or a [`CliError`] carrying the exit code.

pub mod config;
pub mod error;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use coxlin::breslow::{a_n_curve, breslow_plugin, breslow_traditional};
use coxlin::cox::{fit_mple, CoxFit, FitOptions};
use coxlin::data::{load_csv, SurvivalDataset};
use coxlin::experiment::{run_experiment, AnChoice, Claim, ExperimentConfig, HorizonPolicy};
use coxlin::linearization::{
    evaluation_grid, plugin_horizon, remainder_decomposition, variance_estimate, xi_plugin,
    DEFAULT_PHI_THRESHOLD,
};
use coxlin::step::StepCurve;
use coxlin::truth::{
    generate_dataset, reference_truth, BaselineHazard, CovariateLaw, TruthModel,
};

pub use error::CliError;

/// Largest tolerated relative gap between the two Breslow evaluations.
pub const FORM_TOLERANCE: f64 = 1e-10;

#[derive(Parser, Debug)]
#[command(name = "coxlin", version, about = "Cox regression, the Breslow estimator and its linearization")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit the Cox model by maximum partial likelihood.
    Fit(FitArgs),
    /// Breslow cumulative hazard and the A_n curve.
    Breslow(BreslowArgs),
    /// Plug-in influence values and the variance of the Breslow estimator.
    Influence(InfluenceArgs),
    /// Remainder decomposition against a known truth model.
    Decompose(DecomposeArgs),
    /// Monte Carlo rate experiments.
    RateLab(RateLabArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Args, Debug, Clone)]
pub struct OutputArgs {
    /// Directory for the output files (created if missing).
    #[arg(long, env = "COXLIN_OUTPUT_DIR", default_value = ".")]
    pub output_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Args, Debug, Clone)]
pub struct FitArgs {
    /// CSV with header `time,event,z1,...,zp`.
    #[arg(long)]
    pub input: PathBuf,
    /// Convergence tolerance on the score norm.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 50)]
    pub max_iter: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

impl FitArgs {
    fn options(&self) -> FitOptions {
        FitOptions {
            init: None,
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct BreslowArgs {
    #[command(flatten)]
    pub fit: FitArgs,
    /// Comma-separated coefficients; skips fitting.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub beta: Option<Vec<f64>>,
    /// Perturb the plug-in evaluation to exercise the form cross-check.
    #[arg(long, hide = true)]
    pub inject_form_fault: bool,
}

#[derive(Args, Debug, Clone)]
pub struct InfluenceArgs {
    #[command(flatten)]
    pub fit: FitArgs,
    /// Equally spaced evaluation points on [0, M].
    #[arg(long, default_value_t = 512)]
    pub grid_points: usize,
    /// Right end of the grid; defaults to the last time with Phi_n >= 0.05.
    #[arg(long)]
    pub m: Option<f64>,
    /// Also write the full subject-by-grid influence matrix.
    #[arg(long)]
    pub matrix: bool,
}

#[derive(Args, Debug, Clone)]
pub struct DecomposeArgs {
    /// Truth model name: reference, weibull or truncated-normal.
    #[arg(long, default_value = "reference")]
    pub truth: String,
    /// Data to decompose; simulated from the truth when absent.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Sample size for simulated data.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Evaluate at the true coefficients instead of the fitted ones.
    #[arg(long)]
    pub at_truth: bool,
    #[arg(long, default_value_t = 512)]
    pub grid_points: usize,
    /// Right end of the grid; defaults to the last x with Phi(beta0, x) >= 0.05.
    #[arg(long)]
    pub m: Option<f64>,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 50)]
    pub max_iter: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug, Clone, Default)]
pub struct RateLabArgs {
    /// Flat `key = value` experiment file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// lemma1, lemma2 or theorem.
    #[arg(long)]
    pub claim: Option<String>,
    #[arg(long)]
    pub truth: Option<String>,
    /// Comma-separated ascending sample sizes.
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// inv_log or pow:<alpha>.
    #[arg(long)]
    pub a_n: Option<String>,
    #[arg(long)]
    pub grid_points: Option<usize>,
    /// phi:<threshold>, fixed:<M>, or a plain number for a fixed M.
    #[arg(long)]
    pub m: Option<String>,
    #[arg(long, env = "COXLIN_OUTPUT_DIR", default_value = ".")]
    pub output_dir: PathBuf,
}

pub fn truth_by_name(name: &str) -> Result<TruthModel, CliError> {
    let ln2 = 2f64.ln();
    let model = match name {
        "reference" => return Ok(reference_truth()),
        "weibull" => TruthModel::new(
            vec![ln2],
            BaselineHazard::Weibull { shape: 1.5, scale: 1.0 },
            CovariateLaw::Bernoulli { q: 0.5 },
            3.0,
        ),
        "truncated-normal" => TruthModel::new(
            vec![0.5],
            BaselineHazard::Constant { rate: 1.0 },
            CovariateLaw::TruncatedNormal {
                mean: 0.0,
                sd: 1.0,
                lower: -2.0,
                upper: 2.0,
            },
            3.0,
        ),
        other => {
            return Err(CliError::Model(format!(
                "unknown truth model `{other}` (expected reference, weibull or truncated-normal)"
            )))
        }
    };
    Ok(model?)
}

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn write_table(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| num(*v)))?;
    }
    w.flush()?;
    Ok(())
}

fn load(path: &Path) -> Result<SurvivalDataset, CliError> {
    let shown = path.display().to_string();
    load_csv(path).map_err(|e| match CliError::from(e) {
        CliError::Io(m) if !m.starts_with(&shown) => CliError::Io(format!("{shown}: {m}")),
        other => other,
    })
}

/// Shortest representation that parses back to the same value; switches to
/// exponent notation for very small or large magnitudes.
fn num(v: f64) -> String {
    format!("{v:?}")
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub status: String,
    pub converged: bool,
    pub beta_hat: Vec<f64>,
    pub log_partial_likelihood: f64,
    pub score_norm: f64,
    pub information: Vec<Vec<f64>>,
    pub iterations: usize,
    pub tolerance: f64,
    pub n: usize,
    pub events: usize,
}

impl FitReport {
    fn new(fit: &CoxFit, data: &SurvivalDataset) -> Self {
        let info = &fit.information;
        Self {
            status: fit.status.as_str().to_string(),
            converged: fit.is_converged(),
            beta_hat: fit.beta_hat.clone(),
            log_partial_likelihood: fit.log_partial_likelihood,
            score_norm: fit.score_norm,
            information: (0..info.nrows())
                .map(|i| (0..info.ncols()).map(|j| info[(i, j)]).collect())
                .collect(),
            iterations: fit.iterations,
            tolerance: fit.tolerance,
            n: data.len(),
            events: data.event_count(),
        }
    }
}

fn fit_failure(fit: &CoxFit) -> CliError {
    CliError::Model(format!("fit failed: {}", fit.status.as_str()))
}

/// Writes `fit.json` whatever the outcome; fails with exit 2 unless the fit
/// converged.
pub fn cmd_fit(args: &FitArgs) -> Result<FitReport, CliError> {
    let data = load(&args.input)?;
    let fit = fit_mple(&data, &args.options())?;
    let report = FitReport::new(&fit, &data);
    prepare_dir(&args.output.output_dir)?;
    write_json(&args.output.output_dir.join("fit.json"), &report)?;
    if !fit.is_converged() {
        return Err(fit_failure(&fit));
    }
    Ok(report)
}

/// The fitted model, or the no-covariate model when `p = 0`.
fn converged_fit(data: &SurvivalDataset, options: &FitOptions) -> Result<CoxFit, CliError> {
    let fit = if data.covariate_dim() == 0 {
        CoxFit::no_covariates(data)?
    } else {
        fit_mple(data, options)?
    };
    if !fit.is_converged() {
        return Err(fit_failure(&fit));
    }
    Ok(fit)
}

#[derive(Debug, Clone, Serialize)]
pub struct BreslowReport {
    pub beta: Vec<f64>,
    pub form_discrepancy: f64,
    pub last_follow_up: f64,
    pub times: Vec<f64>,
    pub cumulative_hazard: Vec<f64>,
    /// `a_n[k][j]`: component `j` at `times[k]`.
    pub a_n: Vec<Vec<f64>>,
}

pub fn cmd_breslow(args: &BreslowArgs) -> Result<BreslowReport, CliError> {
    let data = load(&args.fit.input)?;
    let p = data.covariate_dim();
    let beta = match &args.beta {
        // Without covariates any all-zero vector means "no coefficients".
        Some(b) if p == 0 && b.iter().all(|v| *v == 0.0) => Vec::new(),
        Some(b) if b.len() != p => {
            return Err(CliError::Model(format!(
                "--beta has {} values but the data have {p} covariates",
                b.len()
            )))
        }
        Some(b) => b.clone(),
        None if p == 0 => Vec::new(),
        None => converged_fit(&data, &args.fit.options())?.beta_hat,
    };

    let classical = breslow_traditional(&data, &beta)?;
    let mut plugin = breslow_plugin(&data, &beta)?;
    if args.inject_form_fault {
        let bumped = plugin.curve.cumulative_values().iter().map(|v| v * (1.0 + 1e-6)).collect();
        plugin.curve = StepCurve::new(plugin.curve.jump_times().to_vec(), bumped)?;
    }
    let discrepancy = classical.relative_discrepancy(&plugin);
    if discrepancy.is_nan() || discrepancy > FORM_TOLERANCE {
        return Err(CliError::SelfCheck(format!(
            "Breslow forms disagree: relative discrepancy {discrepancy:e} exceeds {FORM_TOLERANCE:e}"
        )));
    }

    let a = a_n_curve(&data, &beta)?;
    let times = classical.curve.jump_times().to_vec();
    let report = BreslowReport {
        beta: beta.clone(),
        form_discrepancy: discrepancy,
        last_follow_up: classical.last_follow_up(),
        cumulative_hazard: classical.curve.cumulative_values().to_vec(),
        a_n: times.iter().map(|&t| a.eval(t)).collect(),
        times,
    };

    let dir = &args.fit.output.output_dir;
    prepare_dir(dir)?;
    match args.fit.output.format {
        Format::Json => write_json(&dir.join("breslow.json"), &report)?,
        Format::Csv => {
            let rows: Vec<Vec<f64>> = report
                .times
                .iter()
                .zip(&report.cumulative_hazard)
                .map(|(t, v)| vec![*t, *v])
                .collect();
            write_table(
                &dir.join("breslow.csv"),
                &["time".into(), "cumulative_hazard".into()],
                &rows,
            )?;
            let mut header = vec!["time".to_string()];
            header.extend((1..=p).map(|j| format!("a{j}")));
            let rows: Vec<Vec<f64>> = report
                .times
                .iter()
                .zip(&report.a_n)
                .map(|(t, a)| std::iter::once(*t).chain(a.iter().copied()).collect())
                .collect();
            write_table(&dir.join("a_n.csv"), &header, &rows)?;
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct InfluenceReport {
    pub beta_hat: Vec<f64>,
    pub horizon: f64,
    pub grid: Vec<f64>,
    pub cumulative_hazard: Vec<f64>,
    pub variance: Vec<f64>,
    pub std_error: Vec<f64>,
    pub xi_only_variance: Vec<f64>,
}

pub fn cmd_influence(args: &InfluenceArgs) -> Result<InfluenceReport, CliError> {
    if args.grid_points < 1 {
        return Err(CliError::Model("--grid-points must be at least 1".into()));
    }
    let data = load(&args.fit.input)?;
    let fit = converged_fit(&data, &args.fit.options())?;
    let horizon = match args.m {
        Some(m) => m,
        None => plugin_horizon(&data, &fit.beta_hat, DEFAULT_PHI_THRESHOLD)?,
    };
    let grid = evaluation_grid(horizon, args.grid_points, &[]);
    let infl = xi_plugin(&data, &fit, &grid)?;
    let a = a_n_curve(&data, &fit.beta_hat)?;
    let var = variance_estimate(&data, &fit, &infl, &a)?;
    let lambda = breslow_traditional(&data, &fit.beta_hat)?;
    let report = InfluenceReport {
        beta_hat: fit.beta_hat.clone(),
        horizon,
        cumulative_hazard: grid.iter().map(|&x| lambda.eval(x)).collect(),
        std_error: var.variance.iter().map(|v| v.sqrt()).collect(),
        variance: var.variance,
        xi_only_variance: var.xi_only_variance,
        grid: grid.clone(),
    };

    let dir = &args.fit.output.output_dir;
    prepare_dir(dir)?;
    match args.fit.output.format {
        Format::Json => write_json(&dir.join("influence.json"), &report)?,
        Format::Csv => {
            let rows: Vec<Vec<f64>> = (0..grid.len())
                .map(|k| {
                    vec![
                        grid[k],
                        report.cumulative_hazard[k],
                        report.variance[k],
                        report.std_error[k],
                        report.xi_only_variance[k],
                    ]
                })
                .collect();
            let header = ["x", "cumulative_hazard", "variance", "std_error", "xi_only_variance"];
            write_table(
                &dir.join("influence.csv"),
                &header.map(String::from),
                &rows,
            )?;
        }
    }
    if args.matrix {
        let mut header = vec!["subject".to_string()];
        header.extend(grid.iter().map(|x| num(*x)));
        let rows: Vec<Vec<f64>> = (0..infl.n())
            .map(|i| std::iter::once((i + 1) as f64).chain(infl.row(i).iter().copied()).collect())
            .collect();
        write_table(&dir.join("influence_matrix.csv"), &header, &rows)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct DecomposeSummary {
    pub truth: String,
    pub n: usize,
    pub horizon: f64,
    pub report: coxlin::linearization::DecompositionReport,
}

pub fn cmd_decompose(args: &DecomposeArgs) -> Result<DecomposeSummary, CliError> {
    let truth = truth_by_name(&args.truth)?;
    let data = match (&args.input, args.n) {
        (Some(path), _) => load(path)?,
        (None, Some(n)) => generate_dataset(&truth, n, args.seed)?,
        (None, None) => return Err(CliError::Model("decompose needs --input or --n".into())),
    };
    let fit = if args.at_truth {
        CoxFit::at(&data, &truth.beta0)?
    } else {
        let options = FitOptions {
            init: None,
            tol: args.tol,
            max_iter: args.max_iter,
        };
        converged_fit(&data, &options)?
    };
    let horizon = match args.m {
        Some(m) => m,
        None => truth.default_horizon(DEFAULT_PHI_THRESHOLD)?,
    };
    let events: Vec<f64> = data
        .observations()
        .iter()
        .filter(|o| o.event)
        .map(|o| o.follow_up_time)
        .collect();
    let grid = evaluation_grid(horizon, args.grid_points, &events);
    let report = remainder_decomposition(&data, &fit, &truth, &grid)?;

    let dir = &args.output.output_dir;
    prepare_dir(dir)?;
    let summary = DecomposeSummary {
        truth: args.truth.clone(),
        n: data.len(),
        horizon,
        report,
    };
    match args.output.format {
        Format::Json => write_json(&dir.join("decomposition.json"), &summary)?,
        Format::Csv => {
            let r = &summary.report;
            let mut header: Vec<String> = [
                "x", "t_n1", "t_n2", "b_n", "c_n", "r_n3", "r_n4", "r_n", "mean_xi",
            ]
            .map(String::from)
            .to_vec();
            header.extend((1..=truth.dim()).map(|j| format!("a0_{j}")));
            let rows: Vec<Vec<f64>> = (0..r.grid.len())
                .map(|k| {
                    let mut row = vec![
                        r.grid[k], r.t_n1[k], r.t_n2[k], r.b_n[k], r.c_n[k], r.r_n3[k], r.r_n4[k],
                        r.r_n[k], r.mean_xi[k],
                    ];
                    row.extend_from_slice(&r.a0[k]);
                    row
                })
                .collect();
            write_table(&dir.join("decomposition.csv"), &header, &rows)?;
        }
    }
    Ok(summary)
}

/// Experiment settings after merging the config file with the flags.
fn experiment_config(args: &RateLabArgs) -> Result<(TruthModel, ExperimentConfig), CliError> {
    let file = match &args.config {
        Some(path) => config::load(path)?,
        None => config::ExperimentFile::default(),
    };
    let missing = |what: &str| CliError::Validity(format!("rate-lab needs {what}"));
    let claim: Claim = args
        .claim
        .clone()
        .or(file.claim)
        .ok_or_else(|| missing("a claim (--claim or `claim`)"))?
        .parse()?;
    let sample_sizes = args
        .n
        .clone()
        .or(file.sample_sizes)
        .ok_or_else(|| missing("sample sizes (--n or `sample_sizes`)"))?;
    let replications = args
        .reps
        .or(file.replications)
        .ok_or_else(|| missing("a replication count (--reps or `replications`)"))?;
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let truth_name = args.truth.clone().or(file.truth).unwrap_or_else(|| "reference".into());
    let truth = truth_by_name(&truth_name).map_err(|e| CliError::Validity(e.to_string()))?;

    let mut config = ExperimentConfig::new(claim, sample_sizes, replications, seed);
    if let Some(a) = args.a_n.clone().or(file.a_n) {
        config.a_n = a.parse::<AnChoice>()?;
    }
    if let Some(g) = args.grid_points.or(file.grid_points) {
        config.grid_points = g;
    }
    if let Some(m) = args.m.clone().or(file.m_policy) {
        config.horizon = match m.parse::<f64>() {
            Ok(fixed) => HorizonPolicy::Fixed(fixed),
            Err(_) => m.parse::<HorizonPolicy>()?,
        };
    }
    config.validate()?;
    Ok((truth, config))
}

#[derive(Debug, Clone, Serialize)]
pub struct RateLabReport {
    pub seed: u64,
    pub claim: String,
    pub files: Vec<PathBuf>,
}

/// Runs an experiment and writes `rates.json`, `rates_summary.csv` and one
/// `rates_n<n>.csv` per sample size.
pub fn cmd_rate_lab(args: &RateLabArgs) -> Result<RateLabReport, CliError> {
    let (truth, config) = experiment_config(args)?;
    let result = run_experiment(&truth, &config)?;
    let dir = &args.output_dir;
    prepare_dir(dir)?;
    let mut files = Vec::new();

    let path = dir.join("rates.json");
    write_json(&path, &result)?;
    files.push(path);

    let header: Vec<String> = [
        "n", "retained", "mean", "sd", "median", "q05", "q25", "q75", "q95", "max", "normalized_median",
    ]
    .map(String::from)
    .to_vec();
    let path = dir.join("rates_summary.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(std::iter::once("quantity".to_string()).chain(header.iter().cloned()))?;
    for q in &result.quantities {
        for s in &q.per_n {
            let values = [
                s.n as f64,
                s.retained as f64,
                s.mean,
                s.sd,
                s.median,
                s.q05,
                s.q25,
                s.q75,
                s.q95,
                s.max,
                s.normalized_median,
            ];
            w.write_record(std::iter::once(q.name.clone()).chain(values.iter().map(|v| num(*v))))?;
        }
    }
    w.flush()?;
    files.push(path);

    let mut header = vec!["replicate".to_string()];
    header.extend(result.quantity_names().iter().map(|s| s.to_string()));
    for table in &result.tables {
        let rows: Vec<Vec<f64>> = table
            .replicate
            .iter()
            .zip(&table.values)
            .map(|(r, v)| std::iter::once(*r as f64).chain(v.iter().copied()).collect())
            .collect();
        let path = dir.join(format!("rates_n{}.csv", table.n));
        write_table(&path, &header, &rows)?;
        files.push(path);
    }
    Ok(RateLabReport {
        seed: config.seed,
        claim: config.claim.to_string(),
        files,
    })
}

/// Dispatches a parsed command line and prints a one-line summary.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Fit(a) => {
            let r = cmd_fit(a)?;
            println!("converged in {} iterations: beta_hat = {:?}", r.iterations, r.beta_hat);
        }
        Command::Breslow(a) => {
            let r = cmd_breslow(a)?;
            println!(
                "{} jumps, forms agree to {:e}, beta = {:?}",
                r.times.len(),
                r.form_discrepancy,
                r.beta
            );
        }
        Command::Influence(a) => {
            let r = cmd_influence(a)?;
            println!("{} grid points on [0, {}]", r.grid.len(), r.horizon);
        }
        Command::Decompose(a) => {
            let s = cmd_decompose(a)?;
            let norms = &s.report.sup_norms;
            println!(
                "sup|R_n| = {:e}, sup|mean xi| = {:e}, identity gap = {:e}",
                norms.r_n, norms.mean_xi, norms.identity_gap
            );
        }
        Command::RateLab(a) => {
            let r = cmd_rate_lab(a)?;
            println!("claim {} seed {}: wrote {} files", r.claim, r.seed, r.files.len());
        }
    }
    Ok(())
}
