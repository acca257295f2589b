//! Maximum partial likelihood for the Cox model.
//!
//! Ties use the Breslow convention: every event at time `t` shares the full
//! risk-set denominator `sum_{T_j >= t} exp(beta'Z_j)`, which is the same
//! aggregation the Breslow estimator uses for its `d_i` numerators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::risk::{build_aggregates_shifted, linear_predictors, RiskAggregates};

/// Above this linear predictor the denominators are evaluated as
/// `max + log(sum exp(eta - max))`.
const LSE_THRESHOLD: f64 = 700.0;
const SEPARATION_NORM: f64 = 30.0;
const MAX_HALVINGS: usize = 30;
const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    MaxIterations,
    SeparationDetected,
    SingularInformation,
}

impl FitStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            FitStatus::Converged => "converged",
            FitStatus::MaxIterations => "max_iterations",
            FitStatus::SeparationDetected => "separation_detected",
            FitStatus::SingularInformation => "singular_information",
        }
    }
}

impl std::fmt::Display for FitStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct CoxFit {
    pub beta_hat: Vec<f64>,
    pub log_partial_likelihood: f64,
    pub score_norm: f64,
    /// Observed information, minus the Hessian of the log partial likelihood.
    pub information: DMatrix<f64>,
    pub iterations: usize,
    pub status: FitStatus,
    pub tolerance: f64,
}

impl CoxFit {
    pub fn is_converged(&self) -> bool {
        self.status == FitStatus::Converged
    }

    /// Degenerate "fit" for a no-covariate dataset: nothing to estimate, so the
    /// plug-in machinery can run with an empty coefficient vector.
    pub fn no_covariates(data: &SurvivalDataset) -> Result<Self> {
        if data.covariate_dim() != 0 {
            return Err(Error::Dimension {
                expected: 0,
                found: data.covariate_dim(),
            });
        }
        Ok(Self {
            beta_hat: Vec::new(),
            log_partial_likelihood: f64::NAN,
            score_norm: 0.0,
            information: DMatrix::zeros(0, 0),
            iterations: 0,
            status: FitStatus::Converged,
            tolerance: 0.0,
        })
    }

    /// A fit pinned at a known coefficient (for example the true one),
    /// carrying the likelihood diagnostics evaluated there.
    pub fn at(data: &SurvivalDataset, beta: &[f64]) -> Result<Self> {
        let eval = evaluate(data, beta)?;
        Ok(Self {
            beta_hat: beta.to_vec(),
            log_partial_likelihood: eval.log_lik,
            score_norm: eval.score.norm(),
            information: eval.information,
            iterations: 0,
            status: FitStatus::Converged,
            tolerance: f64::INFINITY,
        })
    }
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub init: Option<Vec<f64>>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            init: None,
            tol: 1e-10,
            max_iter: 50,
        }
    }
}

struct Evaluation {
    log_lik: f64,
    score: DVector<f64>,
    information: DMatrix<f64>,
}

fn require_covariates(data: &SurvivalDataset, what: &'static str) -> Result<()> {
    if data.covariate_dim() == 0 {
        Err(Error::NoCovariates(what))
    } else {
        Ok(())
    }
}

fn stabilized_aggregates(data: &SurvivalDataset, beta: &[f64]) -> Result<(RiskAggregates, f64)> {
    let eta = linear_predictors(data, beta)?;
    let max = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shift = if max > LSE_THRESHOLD { max } else { 0.0 };
    Ok((build_aggregates_shifted(data, beta, shift)?, shift))
}

fn evaluate(data: &SurvivalDataset, beta: &[f64]) -> Result<Evaluation> {
    let p = data.covariate_dim();
    let (agg, shift) = stabilized_aggregates(data, beta)?;
    let eta = linear_predictors(data, beta)?;

    let mut log_lik = 0.0;
    let mut score = DVector::zeros(p);
    for (o, e) in data.observations().iter().zip(&eta) {
        if o.event {
            log_lik += e;
            for (s, z) in score.iter_mut().zip(&o.covariates) {
                *s += z;
            }
        }
    }

    let mut information = DMatrix::zeros(p, p);
    for k in 0..agg.len() {
        let d = agg.event_counts()[k];
        if d == 0 {
            continue;
        }
        let d = d as f64;
        let s0 = agg.s0_at(k);
        log_lik -= d * (shift + s0.ln());
        let mean: Vec<f64> = agg.s1_at(k).iter().map(|v| v / s0).collect();
        let s2 = agg.s2_at(k);
        for a in 0..p {
            score[a] -= d * mean[a];
            for b in 0..p {
                information[(a, b)] += d * (s2[a * p + b] / s0 - mean[a] * mean[b]);
            }
        }
    }
    // Exact symmetry regardless of rounding order.
    let information = (&information + information.transpose()) * 0.5;
    Ok(Evaluation {
        log_lik,
        score,
        information,
    })
}

/// `l(beta) = sum_{events} [beta'Z_i - log sum_{T_j >= T_i} exp(beta'Z_j)]`.
pub fn log_partial_likelihood(data: &SurvivalDataset, beta: &[f64]) -> Result<f64> {
    require_covariates(data, "the partial likelihood")?;
    Ok(evaluate(data, beta)?.log_lik)
}

/// Score vector and observed information at `beta`.
pub fn score_and_information(
    data: &SurvivalDataset,
    beta: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    require_covariates(data, "the score")?;
    let e = evaluate(data, beta)?;
    Ok((e.score, e.information))
}

/// Per-subject score residuals; they sum to the total score.
///
/// `U_i = delta_i (Z_i - Zbar(T_i)) - exp(beta'Z_i) sum_{u <= T_i} (Z_i - Zbar(u)) d_u / S0(u)`
pub fn score_residuals(data: &SurvivalDataset, beta: &[f64]) -> Result<Vec<Vec<f64>>> {
    require_covariates(data, "score residuals")?;
    let p = data.covariate_dim();
    let (agg, shift) = stabilized_aggregates(data, beta)?;
    let eta = linear_predictors(data, beta)?;

    let k_len = agg.len();
    let mut hazard = vec![0.0; k_len];
    let mut weighted_mean = vec![0.0; k_len * p];
    let mut h = 0.0;
    let mut q = vec![0.0; p];
    for k in 0..k_len {
        let d = agg.event_counts()[k] as f64;
        if d > 0.0 {
            let s0 = agg.s0_at(k);
            h += d / s0;
            for (qa, s1) in q.iter_mut().zip(agg.s1_at(k)) {
                *qa += d * s1 / (s0 * s0);
            }
        }
        hazard[k] = h;
        weighted_mean[k * p..(k + 1) * p].copy_from_slice(&q);
    }

    let residuals = data
        .observations()
        .iter()
        .zip(&eta)
        .map(|(o, e)| {
            let k = agg
                .index_of(o.follow_up_time)
                .expect("every follow-up time is a distinct time");
            let w = (e - shift).exp();
            let s0 = agg.s0_at(k);
            let s1 = agg.s1_at(k);
            (0..p)
                .map(|a| {
                    let own = if o.event { o.covariates[a] - s1[a] / s0 } else { 0.0 };
                    own - w * (o.covariates[a] * hazard[k] - weighted_mean[k * p + a])
                })
                .collect()
        })
        .collect();
    Ok(residuals)
}

fn is_singular(information: &DMatrix<f64>) -> bool {
    if information.iter().any(|v| !v.is_finite()) {
        return true;
    }
    let eig = SymmetricEigen::new(information.clone()).eigenvalues;
    let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    !(min > 0.0 && max / min <= MAX_CONDITION)
}

fn newton_step(information: &DMatrix<f64>, score: &DVector<f64>) -> Option<DVector<f64>> {
    information.clone().cholesky().map(|c| c.solve(score))
}

/// Newton-Raphson with step halving. The returned status, not an error,
/// reports separation, singular information, or exhausted iterations.
pub fn fit_mple(data: &SurvivalDataset, options: &FitOptions) -> Result<CoxFit> {
    require_covariates(data, "fitting")?;
    let p = data.covariate_dim();
    let mut beta = options.init.clone().unwrap_or_else(|| vec![0.0; p]);
    if beta.len() != p {
        return Err(Error::Dimension {
            expected: p,
            found: beta.len(),
        });
    }
    let mut current = evaluate(data, &beta)?;
    let mut iterations = 0;

    let status = loop {
        if is_singular(&current.information) {
            break FitStatus::SingularInformation;
        }
        let step = match newton_step(&current.information, &current.score) {
            Some(s) => s,
            None => break FitStatus::SingularInformation,
        };
        let beta_norm = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
        // A small score with a large Newton step means the likelihood is still
        // climbing along a flat direction.
        let step_small = step.norm() <= 1e-4 * (1.0 + beta_norm);
        if current.score.norm() <= options.tol && step_small {
            break FitStatus::Converged;
        }
        if iterations >= options.max_iter {
            break FitStatus::MaxIterations;
        }

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let candidate: Vec<f64> = beta
                .iter()
                .zip(step.iter())
                .map(|(b, s)| b + scale * s)
                .collect();
            if let Ok(eval) = evaluate(data, &candidate) {
                // Near the optimum the likelihood gain drops below its rounding
                // error; a tie then defers to the score norm.
                let slack = 64.0 * f64::EPSILON * (1.0 + current.log_lik.abs());
                let ascent = eval.log_lik > current.log_lik
                    || (eval.log_lik >= current.log_lik - slack
                        && eval.score.norm() < current.score.norm());
                if eval.log_lik.is_finite() && ascent {
                    accepted = Some((candidate, eval));
                    break;
                }
            }
            scale *= 0.5;
        }
        let Some((next_beta, next)) = accepted else {
            // No ascent possible in floating point: we are at the optimum to
            // working precision, or stuck.
            break if current.score.norm() <= options.tol {
                FitStatus::Converged
            } else {
                FitStatus::MaxIterations
            };
        };
        let increased = next.log_lik > current.log_lik;
        beta = next_beta;
        current = next;
        iterations += 1;
        let norm = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
        if norm > SEPARATION_NORM && increased {
            break FitStatus::SeparationDetected;
        }
    };

    Ok(CoxFit {
        beta_hat: beta,
        log_partial_likelihood: current.log_lik,
        score_norm: current.score.norm(),
        information: current.information,
        iterations,
        status,
        tolerance: options.tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::validate_dataset;

    fn three_point() -> SurvivalDataset {
        validate_dataset(vec![
            (1.0, true, vec![1.0]),
            (2.0, true, vec![0.0]),
            (3.0, true, vec![1.0]),
        ])
        .unwrap()
    }

    #[test]
    fn loglik_at_zero() {
        let l = log_partial_likelihood(&three_point(), &[0.0]).unwrap();
        assert!((l + 6f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn loglik_at_optimum_matches_hand_value() {
        let b = -(2f64.ln()) / 2.0;
        let r = std::f64::consts::FRAC_1_SQRT_2;
        // Summands written out from the three risk sets.
        let hand = (b - (2.0 * r + 1.0).ln()) + (0.0 - (r + 1.0).ln()) + (b - r.ln());
        let l = log_partial_likelihood(&three_point(), &[b]).unwrap();
        assert!((l - hand).abs() < 1e-14, "{l} vs {hand}");
        assert!((l - (-1.7627471740390859)).abs() < 1e-14);
    }

    #[test]
    fn identical_covariates_give_flat_likelihood() {
        let d = validate_dataset(vec![
            (1.0, true, vec![2.0]),
            (2.0, false, vec![2.0]),
            (3.0, true, vec![2.0]),
        ])
        .unwrap();
        let l0 = log_partial_likelihood(&d, &[0.0]).unwrap();
        for b in [-3.0, 0.5, 4.0] {
            assert!((log_partial_likelihood(&d, &[b]).unwrap() - l0).abs() < 1e-12);
        }
        let fit = fit_mple(&d, &FitOptions::default()).unwrap();
        assert_eq!(fit.status, FitStatus::SingularInformation);
    }

    #[test]
    fn score_examples() {
        let (u, i) = score_and_information(&three_point(), &[0.0]).unwrap();
        assert!((u[0] + 1.0 / 6.0).abs() < 1e-15);
        // Risk-set variances 2/9 + 1/4 + 0.
        assert!((i[(0, 0)] - (2.0 / 9.0 + 0.25)).abs() < 1e-15);
        let (u, _) = score_and_information(&three_point(), &[-(2f64.ln()) / 2.0]).unwrap();
        assert!(u[0].abs() < 1e-12);
    }

    #[test]
    fn fit_three_point() {
        let fit = fit_mple(&three_point(), &FitOptions::default()).unwrap();
        assert_eq!(fit.status, FitStatus::Converged);
        assert!((fit.beta_hat[0] + 2f64.ln() / 2.0).abs() < 1e-10);
        assert!(fit.score_norm <= 1e-10);
        assert!(fit.iterations < 10);
    }

    #[test]
    fn separation() {
        let d = validate_dataset(vec![(1.0, true, vec![1.0]), (2.0, true, vec![0.0])]).unwrap();
        let fit = fit_mple(&d, &FitOptions::default()).unwrap();
        assert_eq!(fit.status, FitStatus::SeparationDetected);
        assert!(fit.beta_hat[0] > 30.0);
    }

    #[test]
    fn zero_covariate_is_singular() {
        let d = validate_dataset(vec![
            (1.0, true, vec![0.0]),
            (2.0, true, vec![0.0]),
            (3.0, false, vec![0.0]),
        ])
        .unwrap();
        let fit = fit_mple(&d, &FitOptions::default()).unwrap();
        assert_eq!(fit.status, FitStatus::SingularInformation);
    }

    #[test]
    fn no_covariates_rejected() {
        let d = validate_dataset(vec![(1.0, true, vec![])]).unwrap();
        assert!(matches!(log_partial_likelihood(&d, &[]), Err(Error::NoCovariates(_))));
        assert!(matches!(fit_mple(&d, &FitOptions::default()), Err(Error::NoCovariates(_))));
        assert!(CoxFit::no_covariates(&d).unwrap().is_converged());
    }

    #[test]
    fn huge_linear_predictors_are_stabilized() {
        let base = three_point();
        let shifted = base.shifted(&[1000.0]).unwrap();
        let b = -(2f64.ln()) / 2.0;
        let (u, _) = score_and_information(&shifted, &[b]).unwrap();
        assert!(u[0].abs() < 1e-9);
        let fit = fit_mple(
            &shifted,
            &FitOptions {
                init: Some(vec![0.9]),
                ..FitOptions::default()
            },
        )
        .unwrap();
        assert_eq!(fit.status, FitStatus::Converged);
        assert!((fit.beta_hat[0] - b).abs() < 1e-9);
    }

    #[test]
    fn residuals_sum_to_score() {
        let d = validate_dataset(
            (0..30)
                .map(|i| {
                    let f = i as f64;
                    (1.0 + (f * 1.3).cos().abs() * 4.0, i % 4 != 1, vec![(0.7 * f).sin(), (f % 3.0) - 1.0])
                })
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let beta = [0.4, -0.3];
        let (u, _) = score_and_information(&d, &beta).unwrap();
        let r = score_residuals(&d, &beta).unwrap();
        for a in 0..2 {
            let s: f64 = r.iter().map(|v| v[a]).sum();
            assert!((s - u[a]).abs() < 1e-12, "{s} vs {}", u[a]);
        }
    }
}
