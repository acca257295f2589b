//! Analytic Cox data-generating designs.
//!
//! A [`TruthModel`] pairs a baseline hazard with a closed-form cumulative
//! hazard, a covariate law, and uniform censoring on `(0, tau_c)`. Because the
//! survival-time support is unbounded for the baselines offered here, the
//! follow-up support ends at `tau_H = tau_c < tau_F`. Every population
//! functional needed by the linearization (`Phi`, `D1`, `H^uc`, `A_0`, and the
//! integral of `lambda_0 / Phi`) is computed from the closed forms or by
//! adaptive quadrature.

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Observation, SurvivalDataset};
use crate::error::{Error, Result};
use crate::quadrature;

pub type SimRng = ChaCha8Rng;

/// Tolerance used for every truth-side quadrature.
pub const QUAD_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineHazard {
    Constant { rate: f64 },
    /// `Lambda_0(x) = (x / scale)^shape`.
    Weibull { shape: f64, scale: f64 },
}

impl BaselineHazard {
    pub fn hazard(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        match *self {
            BaselineHazard::Constant { rate } => rate,
            BaselineHazard::Weibull { shape, scale } => {
                shape / scale * (x / scale).powf(shape - 1.0)
            }
        }
    }

    pub fn cumulative(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match *self {
            BaselineHazard::Constant { rate } => rate * x,
            BaselineHazard::Weibull { shape, scale } => (x / scale).powf(shape),
        }
    }

    pub fn inverse_cumulative(&self, y: f64) -> f64 {
        match *self {
            BaselineHazard::Constant { rate } => y / rate,
            BaselineHazard::Weibull { shape, scale } => scale * y.powf(1.0 / shape),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateLaw {
    Bernoulli { q: f64 },
    Discrete { points: Vec<Vec<f64>>, probs: Vec<f64> },
    TruncatedNormal { mean: f64, sd: f64, lower: f64, upper: f64 },
}

impl CovariateLaw {
    fn dim(&self) -> usize {
        match self {
            CovariateLaw::Bernoulli { .. } | CovariateLaw::TruncatedNormal { .. } => 1,
            CovariateLaw::Discrete { points, .. } => points.first().map_or(0, Vec::len),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TruthModel {
    pub beta0: Vec<f64>,
    pub baseline: BaselineHazard,
    pub covariates: CovariateLaw,
    pub censoring_horizon: f64,
    /// Expectations over Z reduce to a weighted sum over these atoms (exact
    /// for discrete laws, a composite Kronrod rule for the truncated normal).
    #[serde(skip)]
    support: Vec<(Vec<f64>, f64)>,
}

/// Composite 15-point Kronrod rule on `[a, b]` with `panels` panels.
fn kronrod_nodes(a: f64, b: f64, panels: usize) -> Vec<(f64, f64)> {
    const X: [f64; 8] = [
        0.991_455_371_120_812_6,
        0.949_107_912_342_758_5,
        0.864_864_423_359_769_1,
        0.741_531_185_599_394_4,
        0.586_087_235_467_691_1,
        0.405_845_151_377_397_2,
        0.207_784_955_007_898_5,
        0.0,
    ];
    const W: [f64; 8] = [
        0.022_935_322_010_529_22,
        0.063_092_092_629_978_55,
        0.104_790_010_322_250_2,
        0.140_653_259_715_525_9,
        0.169_004_726_639_267_9,
        0.190_350_578_064_785_4,
        0.204_432_940_075_298_9,
        0.209_482_141_084_727_8,
    ];
    let width = (b - a) / panels as f64;
    let mut nodes = Vec::with_capacity(panels * 15);
    for k in 0..panels {
        let c = a + (k as f64 + 0.5) * width;
        let h = 0.5 * width;
        nodes.push((c, W[7] * h));
        for j in 0..7 {
            nodes.push((c - h * X[j], W[j] * h));
            nodes.push((c + h * X[j], W[j] * h));
        }
    }
    nodes
}

impl TruthModel {
    pub fn new(
        beta0: Vec<f64>,
        baseline: BaselineHazard,
        covariates: CovariateLaw,
        censoring_horizon: f64,
    ) -> Result<Self> {
        let bad = |m: &str| Err(Error::InvalidTruth(m.to_string()));
        if !(censoring_horizon.is_finite() && censoring_horizon > 0.0) {
            return bad("censoring horizon must be positive and finite");
        }
        match baseline {
            BaselineHazard::Constant { rate } if !(rate > 0.0 && rate.is_finite()) => {
                return bad("constant hazard rate must be positive")
            }
            BaselineHazard::Weibull { shape, scale }
                if !(shape > 0.0 && scale > 0.0 && shape.is_finite() && scale.is_finite()) =>
            {
                return bad("Weibull shape and scale must be positive")
            }
            _ => {}
        }
        if covariates.dim() != beta0.len() {
            return Err(Error::Dimension {
                expected: covariates.dim(),
                found: beta0.len(),
            });
        }
        let support = match &covariates {
            CovariateLaw::Bernoulli { q } => {
                if !(0.0..=1.0).contains(q) {
                    return bad("Bernoulli probability outside [0, 1]");
                }
                vec![(vec![0.0], 1.0 - q), (vec![1.0], *q)]
            }
            CovariateLaw::Discrete { points, probs } => {
                if points.is_empty() || points.len() != probs.len() {
                    return bad("discrete law needs one probability per support point");
                }
                if points.iter().any(|p| p.len() != beta0.len()) {
                    return bad("discrete support points have inconsistent dimension");
                }
                let total: f64 = probs.iter().sum();
                if probs.iter().any(|p| *p < 0.0) || (total - 1.0).abs() > 1e-12 {
                    return bad("discrete probabilities must be nonnegative and sum to 1");
                }
                points.iter().cloned().zip(probs.iter().copied()).collect()
            }
            CovariateLaw::TruncatedNormal {
                mean,
                sd,
                lower,
                upper,
            } => {
                if !(sd > &0.0 && lower < upper && lower.is_finite() && upper.is_finite()) {
                    return bad("truncated normal needs sd > 0 and finite lower < upper");
                }
                let density = |z: f64| (-0.5 * ((z - mean) / sd).powi(2)).exp();
                let nodes = kronrod_nodes(*lower, *upper, 64);
                let mass: f64 = nodes.iter().map(|(z, w)| w * density(*z)).sum();
                let normal_mass = mass / (sd * (2.0 * std::f64::consts::PI).sqrt());
                if normal_mass < 1e-6 {
                    return bad("truncation interval carries negligible normal mass");
                }
                nodes
                    .into_iter()
                    .map(|(z, w)| (vec![z], w * density(z) / mass))
                    .collect()
            }
        };
        let model = Self {
            beta0,
            baseline,
            covariates,
            censoring_horizon,
            support,
        };
        model.check_moment_condition()?;
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.beta0.len()
    }

    /// `tau_H`, the end of the follow-up support.
    pub fn tau_h(&self) -> f64 {
        self.censoring_horizon
    }

    /// `exp(beta0'z)`.
    pub fn risk_weight(&self, z: &[f64]) -> f64 {
        z.iter().zip(&self.beta0).map(|(a, b)| a * b).sum::<f64>().exp()
    }

    /// `E[f(Z)]` under the covariate law.
    pub fn expect<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        self.support.iter().map(|(z, p)| p * f(z)).sum()
    }

    /// Finite `E[|Z|^2 exp(2 beta'Z)]` for beta within 0.1 of beta0 in every
    /// coordinate direction.
    fn check_moment_condition(&self) -> Result<()> {
        for eps in [-0.1, 0.0, 0.1] {
            let m = self.expect(|z| {
                let norm2: f64 = z.iter().map(|v| v * v).sum();
                let eta: f64 = z.iter().zip(&self.beta0).map(|(a, b)| a * (b + eps)).sum();
                norm2 * (2.0 * eta).exp()
            });
            if !m.is_finite() {
                return Err(Error::InvalidTruth(
                    "E[|Z|^2 exp(2 beta'Z)] is not finite near beta0".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn censoring_survival(&self, x: f64) -> f64 {
        if x <= 0.0 {
            1.0
        } else {
            (1.0 - x / self.censoring_horizon).max(0.0)
        }
    }

    pub fn baseline_hazard(&self, x: f64) -> f64 {
        self.baseline.hazard(x)
    }

    pub fn cumulative_baseline_hazard(&self, x: f64) -> f64 {
        self.baseline.cumulative(x)
    }

    /// `Phi(beta0, x) = E[exp(beta0'Z) P(T >= x | Z)]`.
    pub fn phi(&self, x: f64) -> f64 {
        let sc = self.censoring_survival(x);
        if sc == 0.0 {
            return 0.0;
        }
        let cum = self.baseline.cumulative(x);
        sc * self.expect(|z| {
            let w = self.risk_weight(z);
            w * (-cum * w).exp()
        })
    }

    /// `D1(beta0, x) = E[Z exp(beta0'Z) P(T >= x | Z)]`.
    pub fn d1(&self, x: f64) -> Vec<f64> {
        let p = self.dim();
        let sc = self.censoring_survival(x);
        let cum = self.baseline.cumulative(x);
        let mut out = vec![0.0; p];
        if sc == 0.0 {
            return out;
        }
        for (z, prob) in &self.support {
            let w = self.risk_weight(z);
            let c = prob * sc * w * (-cum * w).exp();
            for (o, zi) in out.iter_mut().zip(z) {
                *o += c * zi;
            }
        }
        out
    }

    /// `H^uc(x) = P(T <= x, Delta = 1) = int_0^x Phi(beta0, u) lambda_0(u) du`.
    pub fn sub_distribution_uncensored(&self, x: f64) -> Result<f64> {
        let upper = x.min(self.censoring_horizon);
        if upper <= 0.0 {
            return Ok(0.0);
        }
        quadrature::integrate(|u| self.phi(u) * self.baseline_hazard(u), 0.0, upper, QUAD_TOL)
    }

    /// `P(X <= C)`.
    pub fn event_probability(&self) -> Result<f64> {
        self.sub_distribution_uncensored(self.censoring_horizon)
    }

    /// `int_0^x lambda_0(u) / Phi(beta0, u) du`; requires `x < tau_H`.
    pub fn hazard_over_phi_integral(&self, x: f64) -> Result<f64> {
        self.require_inside(x)?;
        if x <= 0.0 {
            return Ok(0.0);
        }
        quadrature::integrate(|u| self.baseline_hazard(u) / self.phi(u), 0.0, x, QUAD_TOL)
    }

    /// `A_0(x) = int_0^x D1(beta0, u) lambda_0(u) / Phi(beta0, u) du`.
    pub fn a0(&self, x: f64) -> Result<Vec<f64>> {
        self.require_inside(x)?;
        let p = self.dim();
        if x <= 0.0 {
            return Ok(vec![0.0; p]);
        }
        quadrature::integrate_vec(
            |u, out| {
                let r = self.baseline_hazard(u) / self.phi(u);
                for (o, d) in out.iter_mut().zip(self.d1(u)) {
                    *o = d * r;
                }
            },
            0.0,
            x,
            p,
            1e-10,
        )
    }

    /// The influence function
    /// `xi(t, delta, z; x) = -exp(beta0'z) int_0^{x ^ t} lambda_0/Phi du + delta {t <= x} / Phi(t)`.
    pub fn xi(&self, t: f64, event: bool, z: &[f64], x: f64) -> Result<f64> {
        let integral = self.hazard_over_phi_integral(x.min(t).max(0.0))?;
        let jump = if event && t <= x {
            self.require_inside(t)?;
            1.0 / self.phi(t)
        } else {
            0.0
        };
        Ok(-self.risk_weight(z) * integral + jump)
    }

    fn require_inside(&self, x: f64) -> Result<()> {
        if x >= self.censoring_horizon || !x.is_finite() {
            Err(Error::OutOfRange {
                x,
                reason: format!("Phi(beta0, x) = 0 for x >= tau_H = {}", self.censoring_horizon),
            })
        } else {
            Ok(())
        }
    }

    /// Largest `M` with `Phi(beta0, M) >= threshold`, by bisection.
    pub fn default_horizon(&self, threshold: f64) -> Result<f64> {
        if self.phi(0.0) < threshold {
            return Err(Error::InvalidTruth(format!(
                "Phi(beta0, 0) = {} is below the threshold {threshold}",
                self.phi(0.0)
            )));
        }
        let (mut lo, mut hi) = (0.0, self.censoring_horizon);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.phi(mid) >= threshold {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * self.censoring_horizon {
                break;
            }
        }
        Ok(lo)
    }

    pub fn sample_covariates<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match &self.covariates {
            CovariateLaw::Bernoulli { q } => {
                let u: f64 = rng.random();
                vec![if u < *q { 1.0 } else { 0.0 }]
            }
            CovariateLaw::Discrete { points, probs } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (pt, pr) in points.iter().zip(probs) {
                    acc += pr;
                    if u < acc {
                        return pt.clone();
                    }
                }
                points.last().unwrap().clone()
            }
            CovariateLaw::TruncatedNormal {
                mean,
                sd,
                lower,
                upper,
            } => loop {
                let g: f64 = rng.sample(StandardNormal);
                let z = mean + sd * g;
                if (*lower..=*upper).contains(&z) {
                    break vec![z];
                }
            },
        }
    }

    /// Draws one `(T, Delta, Z)`: covariates first, then the survival time by
    /// inverting `Lambda_0` at `-ln(U) / exp(beta0'Z)`, then `C ~ U(0, tau_c)`.
    pub fn sample_observation<R: Rng + ?Sized>(&self, rng: &mut R) -> Observation {
        let z = self.sample_covariates(rng);
        let u: f64 = rng.sample(Open01);
        let x = self.baseline.inverse_cumulative(-u.ln() / self.risk_weight(&z));
        let v: f64 = rng.sample(Open01);
        let c = self.censoring_horizon * v;
        Observation::new(x.min(c), x <= c, z)
    }
}

/// `Z ~ Bernoulli(1/2)`, `beta0 = ln 2`, `lambda_0 = 1`, `C ~ U(0, 3)`, for which
/// `Phi(beta0, x) = (1 - x/3)(e^{-x} + 2 e^{-2x}) / 2` and
/// `D1(beta0, x) = (1 - x/3) e^{-2x}` on `[0, 3]`.
pub fn reference_truth() -> TruthModel {
    TruthModel::new(
        vec![2f64.ln()],
        BaselineHazard::Constant { rate: 1.0 },
        CovariateLaw::Bernoulli { q: 0.5 },
        3.0,
    )
    .expect("reference design is valid")
}

pub fn generate_dataset_with_rng<R: Rng + ?Sized>(
    truth: &TruthModel,
    n: usize,
    rng: &mut R,
) -> Result<SurvivalDataset> {
    if n == 0 {
        return Err(Error::Empty("sample size"));
    }
    let observations = (0..n).map(|_| truth.sample_observation(rng)).collect();
    SurvivalDataset::new(observations)
}

/// Deterministic in `(truth, n, seed)`.
pub fn generate_dataset(truth: &TruthModel, n: usize, seed: u64) -> Result<SurvivalDataset> {
    let mut rng = SimRng::seed_from_u64(seed);
    generate_dataset_with_rng(truth, n, &mut rng)
}
