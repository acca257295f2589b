//! Monte Carlo rate experiments under a known [`TruthModel`].
//!
//! Each replication draws its own dataset from a ChaCha8 stream keyed by
//! `(seed, n, replication)`: the generator is seeded with `seed` and switched
//! to stream `(n << 32) | replication`. Replications run in parallel and are
//! collected in index order, so every summary is bit-identical across runs
//! and thread counts.
//!
//! Rates are read off a least-squares fit of `log(mean sup-norm)` on `log n`.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rayon::prelude::*;
use serde::Serialize;

use crate::breslow::{a_n_curve, breslow_traditional};
use crate::cox::{fit_mple, CoxFit, FitOptions};
use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::linearization::{
    evaluation_grid, remainder_decomposition, variance_estimate, xi_plugin, DecompositionReport,
    DEFAULT_PHI_THRESHOLD,
};
use crate::risk::build_aggregates;
use crate::truth::{generate_dataset_with_rng, SimRng, TruthModel};

pub const DEFAULT_GRID_POINTS: usize = 512;
pub const DEFAULT_EXCLUSION_CAP: f64 = 0.01;

/// The generator for replication `replication` at sample size `n`.
pub fn replication_rng(seed: u64, n: usize, replication: usize) -> SimRng {
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(((n as u64) << 32) | replication as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Claim {
    /// `sup |Phi_n - Phi|` and `sup |D1_n - D1|` at `beta0`.
    Lemma1,
    /// `sup |R_n3|` at `beta0`.
    Lemma2,
    /// `sup |R_n|` with `beta_hat` fitted per replication.
    Theorem,
}

impl Claim {
    pub fn as_str(&self) -> &'static str {
        match self {
            Claim::Lemma1 => "lemma1",
            Claim::Lemma2 => "lemma2",
            Claim::Theorem => "theorem",
        }
    }
}

impl fmt::Display for Claim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Claim {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lemma1" => Ok(Claim::Lemma1),
            "lemma2" => Ok(Claim::Lemma2),
            "theorem" => Ok(Claim::Theorem),
            other => Err(Error::InvalidConfig(format!(
                "unknown claim '{other}' (expected lemma1, lemma2 or theorem)"
            ))),
        }
    }
}

/// The vanishing sequence `a_n` in the normalized statistic `a_n n sup|.|`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum AnChoice {
    /// `1 / ln n`.
    #[default]
    InverseLog,
    /// `n^(-alpha)`.
    Power(f64),
}

impl AnChoice {
    pub fn value(&self, n: usize) -> f64 {
        match *self {
            AnChoice::InverseLog => 1.0 / (n as f64).ln(),
            AnChoice::Power(alpha) => (n as f64).powf(-alpha),
        }
    }
}

impl fmt::Display for AnChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnChoice::InverseLog => f.write_str("inv_log"),
            AnChoice::Power(alpha) => write!(f, "pow:{alpha}"),
        }
    }
}

impl FromStr for AnChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "inv_log" {
            return Ok(AnChoice::InverseLog);
        }
        if let Some(rest) = s.strip_prefix("pow:") {
            if let Ok(alpha) = rest.parse::<f64>() {
                if alpha > 0.0 && alpha.is_finite() {
                    return Ok(AnChoice::Power(alpha));
                }
            }
        }
        Err(Error::InvalidConfig(format!(
            "bad a_n '{s}' (expected inv_log or pow:<alpha> with alpha > 0)"
        )))
    }
}

/// How the right end `M` of the sup-norm grid is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HorizonPolicy {
    /// Largest `M` with `Phi(beta0, M) >= threshold`.
    PhiThreshold(f64),
    Fixed(f64),
}

impl Default for HorizonPolicy {
    fn default() -> Self {
        HorizonPolicy::PhiThreshold(DEFAULT_PHI_THRESHOLD)
    }
}

impl HorizonPolicy {
    pub fn resolve(&self, truth: &TruthModel) -> Result<f64> {
        match *self {
            HorizonPolicy::PhiThreshold(t) => truth.default_horizon(t),
            HorizonPolicy::Fixed(m) if m > 0.0 && m < truth.tau_h() => Ok(m),
            HorizonPolicy::Fixed(m) => Err(Error::InvalidConfig(format!(
                "M = {m} must lie in (0, tau_H = {})",
                truth.tau_h()
            ))),
        }
    }
}

impl fmt::Display for HorizonPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HorizonPolicy::PhiThreshold(t) => write!(f, "phi:{t}"),
            HorizonPolicy::Fixed(m) => write!(f, "fixed:{m}"),
        }
    }
}

impl FromStr for HorizonPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let parsed = if let Some(rest) = s.strip_prefix("phi:") {
            rest.parse().ok().filter(|t: &f64| *t > 0.0).map(HorizonPolicy::PhiThreshold)
        } else if let Some(rest) = s.strip_prefix("fixed:") {
            rest.parse().ok().filter(|m: &f64| *m > 0.0).map(HorizonPolicy::Fixed)
        } else {
            None
        };
        parsed.ok_or_else(|| {
            Error::InvalidConfig(format!(
                "bad M policy '{s}' (expected phi:<threshold> or fixed:<M>)"
            ))
        })
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub claim: Claim,
    pub sample_sizes: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
    pub grid_points: usize,
    pub horizon: HorizonPolicy,
    pub a_n: AnChoice,
    /// Largest tolerated fraction of replications dropped for a failed fit.
    pub exclusion_cap: f64,
    pub fit: FitOptions,
}

impl ExperimentConfig {
    pub fn new(claim: Claim, sample_sizes: Vec<usize>, replications: usize, seed: u64) -> Self {
        Self {
            claim,
            sample_sizes,
            replications,
            seed,
            grid_points: DEFAULT_GRID_POINTS,
            horizon: HorizonPolicy::default(),
            a_n: AnChoice::default(),
            exclusion_cap: DEFAULT_EXCLUSION_CAP,
            fit: FitOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.sample_sizes.is_empty() {
            return bad("no sample sizes".into());
        }
        if self.sample_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return bad("sample sizes must be strictly ascending".into());
        }
        if self.sample_sizes[0] < 2 || *self.sample_sizes.last().unwrap() >= 1 << 32 {
            return bad("sample sizes must lie in [2, 2^32)".into());
        }
        if self.replications == 0 || self.replications >= 1 << 32 {
            return bad("replications must lie in [1, 2^32)".into());
        }
        if self.grid_points < 2 {
            return bad("grid_points must be at least 2".into());
        }
        if !(0.0..1.0).contains(&self.exclusion_cap) {
            return bad("exclusion cap must lie in [0, 1)".into());
        }
        Ok(())
    }

    /// Largest number of excluded replications allowed per sample size.
    pub fn max_excluded(&self) -> usize {
        (self.exclusion_cap * self.replications as f64).floor() as usize
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleSummary {
    pub n: usize,
    pub retained: usize,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub q05: f64,
    pub q25: f64,
    pub q75: f64,
    pub q95: f64,
    pub max: f64,
    /// Normalization factor times the median.
    pub normalized_median: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct QuantityResult {
    pub name: String,
    /// `sqrt_n` or `a_n_times_n`.
    pub normalization: String,
    pub per_n: Vec<SampleSummary>,
    /// Least-squares slope of `log mean` on `log n`; absent with one sample size.
    pub fitted_slope: Option<f64>,
    /// Absent with fewer than three sample sizes.
    pub slope_se: Option<f64>,
    /// Largest over smallest normalized median across sample sizes.
    pub normalized_median_ratio: f64,
}

/// Per-replication values at one sample size, in replication order.
#[derive(Debug, Clone)]
pub struct ReplicateTable {
    pub n: usize,
    pub replicate: Vec<usize>,
    /// `values[r][q]` for retained replication `r` and quantity `q`.
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RateExperimentResult {
    pub claim: Claim,
    pub truth: TruthModel,
    pub sample_sizes: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
    pub grid_points: usize,
    pub horizon_policy: String,
    pub horizon: f64,
    pub a_n: String,
    /// `log10(n_max / n_min)`.
    pub decades_spanned: f64,
    /// Replications dropped at each sample size (non-converged fits or an
    /// empty risk set at `M`).
    pub excluded: Vec<usize>,
    pub exclusion_cap: f64,
    pub quantities: Vec<QuantityResult>,
    #[serde(skip)]
    pub tables: Vec<ReplicateTable>,
}

impl RateExperimentResult {
    pub fn quantity(&self, name: &str) -> Option<&QuantityResult> {
        self.quantities.iter().find(|q| q.name == name)
    }

    pub fn quantity_names(&self) -> Vec<&str> {
        self.quantities.iter().map(|q| q.name.as_str()).collect()
    }
}

#[derive(Clone, Copy)]
enum Normalization {
    SqrtN,
    AnTimesN,
}

impl Normalization {
    fn label(self) -> &'static str {
        match self {
            Normalization::SqrtN => "sqrt_n",
            Normalization::AnTimesN => "a_n_times_n",
        }
    }

    fn factor(self, n: usize, a_n: AnChoice) -> f64 {
        match self {
            Normalization::SqrtN => (n as f64).sqrt(),
            Normalization::AnTimesN => a_n.value(n) * n as f64,
        }
    }
}

fn tracked(claim: Claim) -> &'static [(&'static str, Normalization)] {
    use Normalization::*;
    match claim {
        Claim::Lemma1 => &[("sup_phi", SqrtN), ("sup_d1", SqrtN)],
        Claim::Lemma2 => &[("sup_r_n3", AnTimesN), ("sup_r_n4", AnTimesN)],
        Claim::Theorem => &[
            ("sup_r_n", AnTimesN),
            ("sup_mean_xi", SqrtN),
            ("sup_r_n_at_beta0", AnTimesN),
            ("sup_t_n1", SqrtN),
        ],
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Slope and its standard error from the least-squares fit of `log y` on
/// `log n`. The slope needs two points, the standard error three.
pub fn log_log_slope(sample_sizes: &[usize], values: &[f64]) -> (Option<f64>, Option<f64>) {
    let k = sample_sizes.len();
    if k < 2 || values.len() != k || values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return (None, None);
    }
    let xs: Vec<f64> = sample_sizes.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let mx = xs.iter().sum::<f64>() / k as f64;
    let my = ys.iter().sum::<f64>() / k as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    if k < 3 {
        return (Some(slope), None);
    }
    let rss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - my - slope * (x - mx)).powi(2))
        .sum();
    (Some(slope), Some((rss / (k - 2) as f64 / sxx).sqrt()))
}

fn event_times_up_to(data: &SurvivalDataset, m: f64) -> Vec<f64> {
    data.observations()
        .iter()
        .filter(|o| o.event && o.follow_up_time <= m)
        .map(|o| o.follow_up_time)
        .collect()
}

/// Exact `sup_{[0, M]} |Phi_n(beta0, .) - Phi(beta0, .)|` and the same for
/// `D1`: on each segment between jumps the empirical side is constant and
/// the population side monotone, so the grid is completed by both one-sided
/// values at every jump inside `[0, M]`.
fn lemma1_sups(data: &SurvivalDataset, truth: &TruthModel, m: f64, grid_points: usize) -> Result<Vec<f64>> {
    let agg = build_aggregates(data, &truth.beta0)?;
    let nf = data.len() as f64;
    let p = truth.dim();
    let zeros = vec![0.0; p];
    let (mut sup_phi, mut sup_d1) = (0.0f64, 0.0f64);
    let mut compare = |x: f64, s0: f64, s1: &[f64]| {
        sup_phi = sup_phi.max((s0 / nf - truth.phi(x)).abs());
        for (a, d) in s1.iter().zip(truth.d1(x)) {
            sup_d1 = sup_d1.max((a / nf - d).abs());
        }
    };
    for x in evaluation_grid(m, grid_points, &[]) {
        let k = agg.index_at_or_after(x);
        if k < agg.len() {
            compare(x, agg.s0_at(k), agg.s1_at(k));
        } else {
            compare(x, 0.0, &zeros);
        }
    }
    for k in 0..agg.len() {
        let t = agg.distinct_times()[k];
        if t > m {
            break;
        }
        compare(t, agg.s0_at(k), agg.s1_at(k));
        if k + 1 < agg.len() {
            compare(t, agg.s0_at(k + 1), agg.s1_at(k + 1));
        } else {
            compare(t, 0.0, &zeros);
        }
    }
    Ok(vec![sup_phi, sup_d1])
}

fn decomposition(
    data: &SurvivalDataset,
    fit: &CoxFit,
    truth: &TruthModel,
    m: f64,
    grid_points: usize,
) -> Result<Option<DecompositionReport>> {
    let grid = evaluation_grid(m, grid_points, &event_times_up_to(data, m));
    match remainder_decomposition(data, fit, truth, &grid) {
        Ok(r) => Ok(Some(r)),
        // No follow-up reaches M: the grid leaves the empirical support.
        Err(Error::OutOfRange { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// One replication; `None` when it must be excluded.
fn replicate(
    config: &ExperimentConfig,
    truth: &TruthModel,
    m: f64,
    n: usize,
    rep: usize,
) -> Result<Option<Vec<f64>>> {
    let mut rng = replication_rng(config.seed, n, rep);
    let data = generate_dataset_with_rng(truth, n, &mut rng)?;
    match config.claim {
        Claim::Lemma1 => lemma1_sups(&data, truth, m, config.grid_points).map(Some),
        Claim::Lemma2 => {
            let fit = CoxFit::at(&data, &truth.beta0)?;
            Ok(decomposition(&data, &fit, truth, m, config.grid_points)?
                .map(|r| vec![r.sup_norms.r_n3, r.sup_norms.r_n4]))
        }
        Claim::Theorem => {
            let fit = match fit_mple(&data, &config.fit) {
                Ok(f) if f.is_converged() => f,
                Ok(_) | Err(Error::NotConverged(_)) | Err(Error::SingularInformation) => return Ok(None),
                Err(e) => return Err(e),
            };
            Ok(decomposition(&data, &fit, truth, m, config.grid_points)?.map(|r| {
                let s = r.sup_norms;
                vec![s.r_n, s.mean_xi, s.r_n_at_beta0, s.t_n1]
            }))
        }
    }
}

fn summarize(n: usize, values: &[f64], factor: f64) -> SampleSummary {
    let k = values.len();
    let mean = values.iter().sum::<f64>() / k as f64;
    let sd = if k > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = quantile(&sorted, 0.5);
    SampleSummary {
        n,
        retained: k,
        mean,
        sd,
        median,
        q05: quantile(&sorted, 0.05),
        q25: quantile(&sorted, 0.25),
        q75: quantile(&sorted, 0.75),
        q95: quantile(&sorted, 0.95),
        max: sorted[k - 1],
        normalized_median: factor * median,
    }
}

/// Runs the experiment described by `config`.
pub fn run_experiment(truth: &TruthModel, config: &ExperimentConfig) -> Result<RateExperimentResult> {
    config.validate()?;
    let m = config.horizon.resolve(truth)?;
    let jobs: Vec<(usize, usize)> = config
        .sample_sizes
        .iter()
        .flat_map(|&n| (0..config.replications).map(move |r| (n, r)))
        .collect();
    let outcomes: Vec<Result<Option<Vec<f64>>>> = jobs
        .par_iter()
        .map(|&(n, r)| replicate(config, truth, m, n, r))
        .collect();

    let mut tables = Vec::with_capacity(config.sample_sizes.len());
    let mut excluded = Vec::with_capacity(config.sample_sizes.len());
    let mut outcomes = outcomes.into_iter();
    for &n in &config.sample_sizes {
        let mut table = ReplicateTable {
            n,
            replicate: Vec::new(),
            values: Vec::new(),
        };
        let mut dropped = 0;
        for rep in 0..config.replications {
            match outcomes.next().expect("one outcome per job")? {
                Some(v) => {
                    table.replicate.push(rep);
                    table.values.push(v);
                }
                None => dropped += 1,
            }
        }
        if dropped > config.max_excluded() || table.values.is_empty() {
            return Err(Error::ExclusionCap {
                n,
                excluded: dropped,
                replications: config.replications,
                cap: config.max_excluded(),
            });
        }
        excluded.push(dropped);
        tables.push(table);
    }

    let quantities = tracked(config.claim)
        .iter()
        .enumerate()
        .map(|(q, &(name, norm))| {
            let per_n: Vec<SampleSummary> = tables
                .iter()
                .map(|t| {
                    let column: Vec<f64> = t.values.iter().map(|v| v[q]).collect();
                    summarize(t.n, &column, norm.factor(t.n, config.a_n))
                })
                .collect();
            let means: Vec<f64> = per_n.iter().map(|s| s.mean).collect();
            let (fitted_slope, slope_se) = log_log_slope(&config.sample_sizes, &means);
            let normalized: Vec<f64> = per_n.iter().map(|s| s.normalized_median).collect();
            let hi = normalized.iter().copied().fold(f64::MIN, f64::max);
            let lo = normalized.iter().copied().fold(f64::MAX, f64::min);
            QuantityResult {
                name: name.to_string(),
                normalization: norm.label().to_string(),
                per_n,
                fitted_slope,
                slope_se,
                normalized_median_ratio: hi / lo,
            }
        })
        .collect();

    let first = config.sample_sizes[0] as f64;
    let last = *config.sample_sizes.last().unwrap() as f64;
    Ok(RateExperimentResult {
        claim: config.claim,
        truth: truth.clone(),
        sample_sizes: config.sample_sizes.clone(),
        replications: config.replications,
        seed: config.seed,
        grid_points: config.grid_points,
        horizon_policy: config.horizon.to_string(),
        horizon: m,
        a_n: config.a_n.to_string(),
        decades_spanned: (last / first).log10(),
        excluded,
        exclusion_cap: config.exclusion_cap,
        quantities,
        tables,
    })
}

pub fn lemma1_experiment(
    truth: &TruthModel,
    sample_sizes: &[usize],
    replications: usize,
    seed: u64,
) -> Result<RateExperimentResult> {
    run_experiment(
        truth,
        &ExperimentConfig::new(Claim::Lemma1, sample_sizes.to_vec(), replications, seed),
    )
}

pub fn lemma2_experiment(
    truth: &TruthModel,
    sample_sizes: &[usize],
    replications: usize,
    a_n: AnChoice,
    seed: u64,
) -> Result<RateExperimentResult> {
    let mut config = ExperimentConfig::new(Claim::Lemma2, sample_sizes.to_vec(), replications, seed);
    config.a_n = a_n;
    run_experiment(truth, &config)
}

pub fn theorem_rate_experiment(
    truth: &TruthModel,
    sample_sizes: &[usize],
    replications: usize,
    a_n: AnChoice,
    seed: u64,
) -> Result<RateExperimentResult> {
    let mut config = ExperimentConfig::new(Claim::Theorem, sample_sizes.to_vec(), replications, seed);
    config.a_n = a_n;
    run_experiment(truth, &config)
}

/// Monte Carlo check of the plug-in variance at a few points.
#[derive(Debug, Clone, Serialize)]
pub struct VarianceCalibration {
    pub n: usize,
    pub replications: usize,
    pub seed: u64,
    pub points: Vec<f64>,
    /// Sample variance over replications of `sqrt(n) (Lambda_n(x) - Lambda_0(x))`.
    pub monte_carlo: Vec<f64>,
    /// Mean over replications of `n v_hat(x)`.
    pub plugin_mean: Vec<f64>,
    /// Standard deviation over replications of `n v_hat(x)`.
    pub plugin_sd: Vec<f64>,
    /// Mean over replications of `n` times the `xi`-only variance.
    pub xi_only_mean: Vec<f64>,
    /// `plugin_mean / monte_carlo - 1`.
    pub relative_error: Vec<f64>,
    pub excluded: usize,
}

/// One replication: scaled errors, `n v_hat` and `n` times the `xi`-only variance.
type CalibrationDraw = (Vec<f64>, Vec<f64>, Vec<f64>);

pub fn variance_calibration(
    truth: &TruthModel,
    n: usize,
    replications: usize,
    points: &[f64],
    seed: u64,
) -> Result<VarianceCalibration> {
    if replications < 2 {
        return Err(Error::InvalidConfig("variance calibration needs two replications".into()));
    }
    let options = FitOptions::default();
    let outcomes: Vec<Result<Option<CalibrationDraw>>> = (0..replications)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replication_rng(seed, n, rep);
            let data = generate_dataset_with_rng(truth, n, &mut rng)?;
            let fit = fit_mple(&data, &options)?;
            if !fit.is_converged() {
                return Ok(None);
            }
            let lambda = breslow_traditional(&data, &fit.beta_hat)?;
            let infl = xi_plugin(&data, &fit, points)?;
            let a = a_n_curve(&data, &fit.beta_hat)?;
            let v = variance_estimate(&data, &fit, &infl, &a)?;
            let root_n = (n as f64).sqrt();
            let scaled: Vec<f64> = points
                .iter()
                .map(|&x| root_n * (lambda.eval(x) - truth.cumulative_baseline_hazard(x)))
                .collect();
            let nf = n as f64;
            Ok(Some((
                scaled,
                v.variance.iter().map(|s| nf * s).collect(),
                v.xi_only_variance.iter().map(|s| nf * s).collect(),
            )))
        })
        .collect();

    let mut kept = Vec::new();
    let mut excluded = 0;
    for o in outcomes {
        match o? {
            Some(v) => kept.push(v),
            None => excluded += 1,
        }
    }
    let cap = (DEFAULT_EXCLUSION_CAP * replications as f64).floor() as usize;
    if excluded > cap || kept.len() < 2 {
        return Err(Error::ExclusionCap {
            n,
            excluded,
            replications,
            cap,
        });
    }
    let k = kept.len() as f64;
    let mean_of = |f: &dyn Fn(&CalibrationDraw) -> f64| kept.iter().map(f).sum::<f64>() / k;
    let var_of = |f: &dyn Fn(&CalibrationDraw) -> f64| {
        let mu = mean_of(f);
        kept.iter().map(|r| (f(r) - mu).powi(2)).sum::<f64>() / (k - 1.0)
    };
    let mut result = VarianceCalibration {
        n,
        replications,
        seed,
        points: points.to_vec(),
        monte_carlo: Vec::new(),
        plugin_mean: Vec::new(),
        plugin_sd: Vec::new(),
        xi_only_mean: Vec::new(),
        relative_error: Vec::new(),
        excluded,
    };
    for j in 0..points.len() {
        let mc = var_of(&|r| r.0[j]);
        let plug = mean_of(&|r| r.1[j]);
        result.monte_carlo.push(mc);
        result.plugin_mean.push(plug);
        result.plugin_sd.push(var_of(&|r| r.1[j]).sqrt());
        result.xi_only_mean.push(mean_of(&|r| r.2[j]));
        result.relative_error.push(plug / mc - 1.0);
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::truth::reference_truth;
    use rand::Rng;

    #[test]
    fn slope_of_exact_power_law() {
        let ns = [100, 200, 400, 800];
        let ys: Vec<f64> = ns.iter().map(|&n| 3.0 * (n as f64).powf(-0.5)).collect();
        let (slope, se) = log_log_slope(&ns, &ys);
        assert!((slope.unwrap() + 0.5).abs() < 1e-12);
        assert!(se.unwrap() < 1e-12);
        assert_eq!(log_log_slope(&[10, 20], &[1.0, 0.5]).1, None);
        assert_eq!(log_log_slope(&[10], &[1.0]), (None, None));
    }

    #[test]
    fn parsers_round_trip() {
        for s in ["inv_log", "pow:0.25"] {
            assert_eq!(s.parse::<AnChoice>().unwrap().to_string(), s);
        }
        assert!("pow:-1".parse::<AnChoice>().is_err());
        for s in ["phi:0.05", "fixed:1.5"] {
            assert_eq!(s.parse::<HorizonPolicy>().unwrap().to_string(), s);
        }
        assert_eq!("theorem".parse::<Claim>().unwrap(), Claim::Theorem);
        assert!("lemma3".parse::<Claim>().is_err());
    }

    #[test]
    fn streams_are_distinct_and_reproducible() {
        let a: u64 = replication_rng(1, 100, 0).random();
        let b: u64 = replication_rng(1, 100, 1).random();
        let c: u64 = replication_rng(1, 200, 0).random();
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, replication_rng(1, 100, 0).random::<u64>());
    }

    #[test]
    fn config_validation() {
        let truth = reference_truth();
        let mut c = ExperimentConfig::new(Claim::Lemma1, vec![200, 100], 2, 0);
        assert!(run_experiment(&truth, &c).is_err());
        c.sample_sizes = vec![100, 200];
        c.replications = 0;
        assert!(run_experiment(&truth, &c).is_err());
        c.replications = 1;
        c.horizon = HorizonPolicy::Fixed(3.5);
        assert!(run_experiment(&truth, &c).is_err());
    }

    #[test]
    fn single_replication_still_fits_a_slope() {
        let truth = reference_truth();
        let r = lemma1_experiment(&truth, &[100, 200, 400], 1, 3).unwrap();
        let q = r.quantity("sup_phi").unwrap();
        assert!(q.fitted_slope.is_some());
        assert!(q.slope_se.is_some());
        assert_eq!(r.tables[0].values.len(), 1);
    }

    #[test]
    fn theorem_run_is_deterministic() {
        let truth = reference_truth();
        let a = theorem_rate_experiment(&truth, &[100, 200], 4, AnChoice::InverseLog, 11).unwrap();
        let b = theorem_rate_experiment(&truth, &[100, 200], 4, AnChoice::InverseLog, 11).unwrap();
        assert_eq!(a.tables[1].values, b.tables[1].values);
        assert_eq!(a.quantity_names(), ["sup_r_n", "sup_mean_xi", "sup_r_n_at_beta0", "sup_t_n1"]);
    }
}
