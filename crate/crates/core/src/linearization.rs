//! Asymptotic linear representation of the Breslow estimator.
//!
//! For `x` in `[0, M]` with `M < tau_H`,
//!
//! ```text
//! Lambda_n(x) - Lambda_0(x) = mean_i xi(T_i, Delta_i, Z_i; x) - (beta_hat - beta0)' A_0(x) + R_n(x)
//! xi(t, delta, z; x)        = -exp(beta0'z) int_0^{x ^ t} lambda_0/Phi du + delta {t <= x} / Phi(t)
//! ```
//!
//! The coefficient term enters with a minus sign because
//! `d Lambda_n(beta, x) / d beta = -A_n(x)`.
//!
//! Two evaluations of `xi` are kept apart: [`xi_truth`] integrates
//! `lambda_0 / Phi` by quadrature against a [`TruthModel`], [`xi_plugin`] replaces
//! the integral by a sum over the Breslow jumps and `Phi` by `Phi_n(beta_hat, .)`.
//! [`remainder_decomposition`] splits `Lambda_n(beta0, .) - Lambda_0` into
//! `B_n + C_n + R_n3 + R_n4` with every population integral done by quadrature
//! using `delta dP(u) = Phi(beta0, u) lambda_0(u) du`.

use nalgebra::DVector;
use serde::Serialize;

use crate::breslow::{breslow_traditional, PluginACurve};
use crate::cox::{score_residuals, CoxFit};
use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::quadrature;
use crate::risk::{build_aggregates, linear_predictors};
use crate::truth::TruthModel;

/// Total absolute tolerance for the quadratures in this module.
pub const DECOMPOSITION_TOL: f64 = 1e-10;

/// Default lower bound on `Phi` (or `Phi_n`) at the right end `M` of the grid.
pub const DEFAULT_PHI_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InfluenceMode {
    Plugin,
    Truth,
}

/// `n x |grid|` matrix of influence values, row-major by subject.
#[derive(Debug, Clone)]
pub struct InfluenceMatrix {
    pub grid: Vec<f64>,
    pub mode: InfluenceMode,
    n: usize,
    values: Vec<f64>,
}

impl InfluenceMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn value(&self, i: usize, k: usize) -> f64 {
        self.values[i * self.grid.len() + k]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let g = self.grid.len();
        &self.values[i * g..(i + 1) * g]
    }

    pub fn column(&self, k: usize) -> impl Iterator<Item = f64> + Clone + '_ {
        let g = self.grid.len();
        (0..self.n).map(move |i| self.values[i * g + k])
    }

    pub fn column_means(&self) -> Vec<f64> {
        (0..self.grid.len())
            .map(|k| self.column(k).sum::<f64>() / self.n as f64)
            .collect()
    }

    /// Sample standard deviation of each column (`n - 1` denominator).
    pub fn column_sds(&self) -> Vec<f64> {
        (0..self.grid.len())
            .map(|k| sample_variance(self.column(k), self.n).sqrt())
            .collect()
    }
}

fn sample_variance(values: impl Iterator<Item = f64> + Clone, n: usize) -> f64 {
    let mean = values.clone().sum::<f64>() / n as f64;
    values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0)
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Empty("evaluation grid"));
    }
    if let Some(&x) = grid.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(Error::OutOfRange {
            x,
            reason: "grid points must be finite and nonnegative".into(),
        });
    }
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidConfig("grid must be sorted ascending".into()));
    }
    Ok(())
}

/// Plug-in influence values
/// `-exp(beta_hat'Z_i) sum_{event times u <= x ^ T_i} dLambda_n(u) / Phi_n(beta_hat, u) + Delta_i {T_i <= x} / Phi_n(beta_hat, T_i)`.
/// Column means vanish identically.
pub fn xi_plugin(data: &SurvivalDataset, fit: &CoxFit, grid: &[f64]) -> Result<InfluenceMatrix> {
    if !fit.is_converged() {
        return Err(Error::NotConverged(fit.status.to_string()));
    }
    check_grid(grid)?;
    let beta = &fit.beta_hat;
    let agg = build_aggregates(data, beta)?;
    let n = data.len();
    let nf = n as f64;
    if let Some(&x) = grid.iter().find(|&&x| agg.phi_n(x) == 0.0) {
        return Err(Error::OutOfRange {
            x,
            reason: "empty risk set: plug-in influence undefined".into(),
        });
    }

    // Cumulative sum over event times of dLambda_n(u) / Phi_n(u) = d n / s0^2.
    let mut event_times = Vec::new();
    let mut cumulative = Vec::new();
    let mut acc = 0.0;
    for k in 0..agg.len() {
        let d = agg.event_counts()[k];
        if d > 0 {
            let s0 = agg.s0_at(k);
            acc += (d as f64 / s0) / (s0 / nf);
            event_times.push(agg.distinct_times()[k]);
            cumulative.push(acc);
        }
    }
    let at_or_before = |y: f64| -> f64 {
        let k = event_times.partition_point(|&t| t <= y);
        if k == 0 {
            0.0
        } else {
            cumulative[k - 1]
        }
    };
    let grid_levels: Vec<f64> = grid.iter().map(|&x| at_or_before(x)).collect();

    let eta = linear_predictors(data, beta)?;
    let g = grid.len();
    let mut values = vec![0.0; n * g];
    for (i, o) in data.observations().iter().enumerate() {
        let w = eta[i].exp();
        let own_level = at_or_before(o.follow_up_time);
        let inv_phi = if o.event {
            1.0 / agg.phi_n(o.follow_up_time)
        } else {
            0.0
        };
        let row = &mut values[i * g..(i + 1) * g];
        for (k, &x) in grid.iter().enumerate() {
            let level = if x < o.follow_up_time { grid_levels[k] } else { own_level };
            let jump = if o.event && o.follow_up_time <= x { inv_phi } else { 0.0 };
            row[k] = -w * level + jump;
        }
    }
    Ok(InfluenceMatrix {
        grid: grid.to_vec(),
        mode: InfluenceMode::Plugin,
        n,
        values,
    })
}

fn sorted_knots(mut points: Vec<f64>) -> Vec<f64> {
    points.push(0.0);
    points.sort_by(f64::total_cmp);
    points.dedup();
    points
}

fn knot_index(knots: &[f64], x: f64) -> usize {
    let k = knots.partition_point(|&t| t < x);
    debug_assert!(knots[k] == x);
    k
}

fn require_inside_truth(truth: &TruthModel, grid: &[f64]) -> Result<()> {
    let last = *grid.last().unwrap();
    if last >= truth.tau_h() {
        return Err(Error::OutOfRange {
            x: last,
            reason: format!("grid must stay below tau_H = {}", truth.tau_h()),
        });
    }
    Ok(())
}

/// Influence values under the true model, `int_0^y lambda_0/Phi du` by
/// adaptive quadrature.
pub fn xi_truth(data: &SurvivalDataset, truth: &TruthModel, grid: &[f64]) -> Result<InfluenceMatrix> {
    check_grid(grid)?;
    require_inside_truth(truth, grid)?;
    if data.covariate_dim() != truth.dim() {
        return Err(Error::Dimension {
            expected: truth.dim(),
            found: data.covariate_dim(),
        });
    }
    let x_max = *grid.last().unwrap();
    let mut points = grid.to_vec();
    points.extend(
        data.observations()
            .iter()
            .map(|o| o.follow_up_time)
            .filter(|&t| t <= x_max),
    );
    let knots = sorted_knots(points);
    let psi = quadrature::cumulative_vec(
        |u, out| out[0] = truth.baseline_hazard(u) / truth.phi(u),
        &knots,
        1,
        0.1 * DECOMPOSITION_TOL,
    )?;

    let n = data.len();
    let g = grid.len();
    let grid_psi: Vec<f64> = grid.iter().map(|&x| psi[knot_index(&knots, x)]).collect();
    let eta = linear_predictors(data, &truth.beta0)?;
    let mut values = vec![0.0; n * g];
    for (i, o) in data.observations().iter().enumerate() {
        let w = eta[i].exp();
        let t = o.follow_up_time;
        let (own_psi, inv_phi) = if t <= x_max {
            (psi[knot_index(&knots, t)], 1.0 / truth.phi(t))
        } else {
            (f64::NAN, 0.0)
        };
        let row = &mut values[i * g..(i + 1) * g];
        for (k, &x) in grid.iter().enumerate() {
            let level = if x < t { grid_psi[k] } else { own_psi };
            let jump = if o.event && t <= x { inv_phi } else { 0.0 };
            row[k] = -w * level + jump;
        }
    }
    Ok(InfluenceMatrix {
        grid: grid.to_vec(),
        mode: InfluenceMode::Truth,
        n,
        values,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct VarianceEstimate {
    pub grid: Vec<f64>,
    /// Estimated variance of `Lambda_n(x)`, coefficient uncertainty included.
    pub variance: Vec<f64>,
    /// The same from the `xi` term alone.
    pub xi_only_variance: Vec<f64>,
}

/// Plug-in variance of `Lambda_n(x)`:
/// `(1/n) Var_i[xi_i(x) - l_i' A_n(x)]` where `l_i = n I^{-1} U_i` is the
/// per-subject influence of `beta_hat` built from score residuals `U_i`.
/// Without covariates only the `xi` term remains.
pub fn variance_estimate(
    data: &SurvivalDataset,
    fit: &CoxFit,
    infl: &InfluenceMatrix,
    a_curve: &PluginACurve,
) -> Result<VarianceEstimate> {
    let n = infl.n();
    if n < 2 || data.len() != n {
        return Err(Error::Variance("needs at least two subjects matching the influence matrix"));
    }
    if !fit.is_converged() {
        return Err(Error::NotConverged(fit.status.to_string()));
    }
    let p = data.covariate_dim();
    let g = infl.grid.len();
    let nf = n as f64;

    let coefficient_influence: Vec<Vec<f64>> = if p == 0 {
        Vec::new()
    } else {
        if a_curve.components.len() != p {
            return Err(Error::Dimension {
                expected: p,
                found: a_curve.components.len(),
            });
        }
        let chol = fit
            .information
            .clone()
            .cholesky()
            .ok_or(Error::SingularInformation)?;
        score_residuals(data, &fit.beta_hat)?
            .into_iter()
            .map(|u| (chol.solve(&DVector::from_vec(u)) * nf).data.into())
            .collect()
    };

    let a_grid: Vec<Vec<f64>> = infl.grid.iter().map(|&x| a_curve.eval(x)).collect();
    let mut variance = Vec::with_capacity(g);
    let mut xi_only = Vec::with_capacity(g);
    for k in 0..g {
        let combined = (0..n).map(|i| {
            let correction: f64 = if p == 0 {
                0.0
            } else {
                coefficient_influence[i]
                    .iter()
                    .zip(&a_grid[k])
                    .map(|(l, a)| l * a)
                    .sum()
            };
            infl.value(i, k) - correction
        });
        variance.push(sample_variance(combined, n) / nf);
        xi_only.push(sample_variance(infl.column(k), n) / nf);
    }
    Ok(VarianceEstimate {
        grid: infl.grid.clone(),
        variance,
        xi_only_variance: xi_only,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SupNorms {
    pub t_n1: f64,
    pub t_n2: f64,
    pub b_n: f64,
    pub c_n: f64,
    pub r_n3: f64,
    pub r_n4: f64,
    pub r_n: f64,
    pub mean_xi: f64,
    /// `sup |R_n3 + R_n4|`, the remainder when `beta_hat = beta0`.
    pub r_n_at_beta0: f64,
    /// `sup |T_n2 - (B_n + C_n + R_n3 + R_n4)|`.
    pub identity_gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecompositionReport {
    pub grid: Vec<f64>,
    pub beta_hat: Vec<f64>,
    pub beta0: Vec<f64>,
    /// `Lambda_n(beta_hat, x) - Lambda_n(beta0, x)`.
    pub t_n1: Vec<f64>,
    /// `Lambda_n(beta0, x) - Lambda_0(x)`.
    pub t_n2: Vec<f64>,
    pub b_n: Vec<f64>,
    pub c_n: Vec<f64>,
    pub r_n3: Vec<f64>,
    pub r_n4: Vec<f64>,
    /// `Lambda_n(x) - Lambda_0(x) - mean xi(x) + (beta_hat - beta0)' A_0(x)`.
    pub r_n: Vec<f64>,
    pub mean_xi: Vec<f64>,
    pub a0: Vec<Vec<f64>>,
    pub sup_norms: SupNorms,
}

fn sup_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Evaluates every term of the proof's decomposition on `grid`.
///
/// Requires a converged fit and a grid inside the region where both
/// `Phi(beta0, .)` and `Phi_n(beta0, .)` are positive.
pub fn remainder_decomposition(
    data: &SurvivalDataset,
    fit: &CoxFit,
    truth: &TruthModel,
    grid: &[f64],
) -> Result<DecompositionReport> {
    if !fit.is_converged() {
        return Err(Error::NotConverged(fit.status.to_string()));
    }
    check_grid(grid)?;
    require_inside_truth(truth, grid)?;
    let p = truth.dim();
    if data.covariate_dim() != p || fit.beta_hat.len() != p {
        return Err(Error::Dimension {
            expected: p,
            found: data.covariate_dim(),
        });
    }
    let beta0 = &truth.beta0;
    let beta_hat = &fit.beta_hat;
    let x_max = *grid.last().unwrap();
    let agg0 = build_aggregates(data, beta0)?;
    if agg0.phi_n(x_max) == 0.0 {
        return Err(Error::OutOfRange {
            x: x_max,
            reason: "beyond the last follow-up time".into(),
        });
    }
    let n = data.len();
    let nf = n as f64;

    let distinct_inside: Vec<f64> = agg0
        .distinct_times()
        .iter()
        .copied()
        .filter(|&t| t <= x_max)
        .collect();
    let mut points = grid.to_vec();
    points.extend_from_slice(&distinct_inside);
    let knots = sorted_knots(points);

    // Population integrals segment by segment; Phi_n(beta0, .) is constant on
    // each (knots[j-1], knots[j]] and equals its value at the right end.
    // Components: B, C, R3, R4 (dP parts), psi = int lambda_0/Phi, A_0.
    let dim = 5 + p;
    let span = x_max.max(f64::MIN_POSITIVE);
    let mut cumulative = vec![0.0; knots.len() * dim];
    let mut running = vec![0.0; dim];
    for j in 1..knots.len() {
        let (a, b) = (knots[j - 1], knots[j]);
        let phi_n = agg0.phi_n(b);
        let piece = quadrature::integrate_vec(
            |u, out| {
                let phi = truth.phi(u);
                let lambda = truth.baseline_hazard(u);
                let dp = phi * lambda;
                out[0] = (phi - phi_n) / (phi * phi) * dp;
                out[1] = dp / phi;
                out[2] = (1.0 / phi_n - 1.0 / phi) * dp;
                out[3] = (phi - phi_n).powi(2) / (phi * phi * phi_n) * dp;
                out[4] = lambda / phi;
                for (o, d) in out[5..].iter_mut().zip(truth.d1(u)) {
                    *o = d * lambda / phi;
                }
            },
            a,
            b,
            dim,
            DECOMPOSITION_TOL * (b - a) / span,
        )?;
        for c in 0..dim {
            running[c] += piece[c];
        }
        cumulative[j * dim..(j + 1) * dim].copy_from_slice(&running);
    }
    let integral = |x: f64, c: usize| cumulative[knot_index(&knots, x) * dim + c];

    // Empirical sums over events, grouped by distinct event time.
    let obs = data.observations();
    let mut event_times: Vec<f64> = Vec::new();
    let mut emp_c: Vec<f64> = Vec::new();
    let mut emp_r3: Vec<f64> = Vec::new();
    let (mut acc_c, mut acc_r3) = (0.0, 0.0);
    let eta0 = linear_predictors(data, beta0)?;
    // Prefix sums of exp(beta0'Z_i) psi(T_i) over T_i in the grid range.
    let mut weight_times: Vec<f64> = Vec::new();
    let mut weighted_psi: Vec<f64> = Vec::new();
    let mut acc_w = 0.0;
    for &i in data.time_order() {
        let t = obs[i].follow_up_time;
        if t > x_max {
            break;
        }
        if obs[i].event {
            let inv_phi = 1.0 / truth.phi(t);
            acc_c += inv_phi / nf;
            acc_r3 += (1.0 / agg0.phi_n(t) - inv_phi) / nf;
            if event_times.last() == Some(&t) {
                *emp_c.last_mut().unwrap() = acc_c;
                *emp_r3.last_mut().unwrap() = acc_r3;
            } else {
                event_times.push(t);
                emp_c.push(acc_c);
                emp_r3.push(acc_r3);
            }
        }
        acc_w += eta0[i].exp() * integral(t, 4);
        if weight_times.last() == Some(&t) {
            *weighted_psi.last_mut().unwrap() = acc_w;
        } else {
            weight_times.push(t);
            weighted_psi.push(acc_w);
        }
    }
    let step_at = |times: &[f64], vals: &[f64], x: f64, strict: bool| -> f64 {
        let k = if strict {
            times.partition_point(|&t| t < x)
        } else {
            times.partition_point(|&t| t <= x)
        };
        if k == 0 {
            0.0
        } else {
            vals[k - 1]
        }
    };

    let lambda_hat = breslow_traditional(data, beta_hat)?;
    let lambda_beta0 = breslow_traditional(data, beta0)?;
    let shift: Vec<f64> = beta_hat.iter().zip(beta0).map(|(a, b)| a - b).collect();

    let g = grid.len();
    let mut report = DecompositionReport {
        grid: grid.to_vec(),
        beta_hat: beta_hat.clone(),
        beta0: beta0.clone(),
        t_n1: Vec::with_capacity(g),
        t_n2: Vec::with_capacity(g),
        b_n: Vec::with_capacity(g),
        c_n: Vec::with_capacity(g),
        r_n3: Vec::with_capacity(g),
        r_n4: Vec::with_capacity(g),
        r_n: Vec::with_capacity(g),
        mean_xi: Vec::with_capacity(g),
        a0: Vec::with_capacity(g),
        sup_norms: SupNorms {
            t_n1: 0.0,
            t_n2: 0.0,
            b_n: 0.0,
            c_n: 0.0,
            r_n3: 0.0,
            r_n4: 0.0,
            r_n: 0.0,
            mean_xi: 0.0,
            r_n_at_beta0: 0.0,
            identity_gap: 0.0,
        },
    };
    let mut at_beta0 = Vec::with_capacity(g);
    let mut gap = Vec::with_capacity(g);
    for &x in grid {
        let truth_cum = truth.cumulative_baseline_hazard(x);
        let lam_hat = lambda_hat.eval(x);
        let lam_0n = lambda_beta0.eval(x);
        let c_emp = step_at(&event_times, &emp_c, x, false);
        let r3_emp = step_at(&event_times, &emp_r3, x, false);

        let t_n1 = lam_hat - lam_0n;
        let t_n2 = lam_0n - truth_cum;
        let b_n = integral(x, 0);
        let c_n = c_emp - integral(x, 1);
        let r_n3 = r3_emp - integral(x, 2);
        let r_n4 = integral(x, 3);

        let psi_x = integral(x, 4);
        let risk_weight = agg0.phi_n(x) * nf;
        let before = step_at(&weight_times, &weighted_psi, x, true);
        let mean_xi = -(before + psi_x * risk_weight) / nf + c_emp;

        let a0: Vec<f64> = (0..p).map(|c| integral(x, 5 + c)).collect();
        let linear_beta: f64 = shift.iter().zip(&a0).map(|(s, a)| s * a).sum();
        let r_n = lam_hat - truth_cum - mean_xi + linear_beta;

        gap.push(t_n2 - (b_n + c_n + r_n3 + r_n4));
        at_beta0.push(r_n3 + r_n4);
        report.t_n1.push(t_n1);
        report.t_n2.push(t_n2);
        report.b_n.push(b_n);
        report.c_n.push(c_n);
        report.r_n3.push(r_n3);
        report.r_n4.push(r_n4);
        report.r_n.push(r_n);
        report.mean_xi.push(mean_xi);
        report.a0.push(a0);
    }
    report.sup_norms = SupNorms {
        t_n1: sup_abs(&report.t_n1),
        t_n2: sup_abs(&report.t_n2),
        b_n: sup_abs(&report.b_n),
        c_n: sup_abs(&report.c_n),
        r_n3: sup_abs(&report.r_n3),
        r_n4: sup_abs(&report.r_n4),
        r_n: sup_abs(&report.r_n),
        mean_xi: sup_abs(&report.mean_xi),
        r_n_at_beta0: sup_abs(&at_beta0),
        identity_gap: sup_abs(&gap),
    };
    Ok(report)
}

/// `E[xi(T, Delta, Z; x)]` under the truth law: the event part integrates
/// `xi(t, 1, z; x)` against the sub-density `f(t | z) G(t)` on `[0, x]`, the
/// censored part against `S(t | z) g_C(t)`; past `x` the value is constant and
/// only `P(T > x | z)` is needed. Zero in exact arithmetic.
pub fn expected_xi(truth: &TruthModel, x: f64) -> Result<f64> {
    require_inside_truth(truth, &[x])?;
    let censoring_density = 1.0 / truth.censoring_horizon;
    let psi_x = truth.hazard_over_phi_integral(x)?;
    let failure = std::cell::RefCell::new(None);
    let value = truth.expect(|z| {
        let w = truth.risk_weight(z);
        let survival = |t: f64| (-w * truth.cumulative_baseline_hazard(t)).exp();
        let inside = quadrature::integrate(
            |t| {
                let f = w * truth.baseline_hazard(t) * survival(t);
                let on_event = truth.xi(t, true, z, x).unwrap_or(f64::NAN);
                let on_censor = truth.xi(t, false, z, x).unwrap_or(f64::NAN);
                f * truth.censoring_survival(t) * on_event + survival(t) * censoring_density * on_censor
            },
            0.0,
            x,
            1e-11,
        );
        match inside {
            Ok(v) => v - w * psi_x * survival(x) * truth.censoring_survival(x),
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        }
    });
    match failure.into_inner() {
        Some(e) => Err(e),
        None => Ok(value),
    }
}

/// `points` equally spaced values on `[0, m]` merged with the `extra` points
/// that fall inside, sorted and deduplicated.
pub fn evaluation_grid(m: f64, points: usize, extra: &[f64]) -> Vec<f64> {
    let mut grid: Vec<f64> = match points {
        0 => Vec::new(),
        1 => vec![m],
        _ => (0..points)
            .map(|k| m * k as f64 / (points - 1) as f64)
            .collect(),
    };
    grid.extend(extra.iter().copied().filter(|&x| (0.0..=m).contains(&x)));
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Largest distinct follow-up time with `Phi_n(beta, t) >= threshold`.
pub fn plugin_horizon(data: &SurvivalDataset, beta: &[f64], threshold: f64) -> Result<f64> {
    let agg = build_aggregates(data, beta)?;
    let nf = data.len() as f64;
    (0..agg.len())
        .rev()
        .find(|&k| agg.s0_at(k) / nf >= threshold)
        .map(|k| agg.distinct_times()[k])
        .ok_or_else(|| {
            Error::InvalidConfig(format!("Phi_n never reaches the threshold {threshold}"))
        })
}
