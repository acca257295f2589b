//! The Breslow estimator of the baseline cumulative hazard.
//!
//! Two independent evaluations are provided and cross-checked in tests:
//! the classical form, one jump `d_k / S0(t_k)` per distinct event time, and
//! the plug-in form `(1/n) sum_{events, T_i <= x} 1 / Phi_n(beta, T_i)`.
//! They agree up to rounding because the `1/n` of the empirical measure
//! cancels the `1/n` inside `Phi_n`.

use crate::data::SurvivalDataset;
use crate::error::Result;
use crate::risk::build_aggregates;
use crate::step::StepCurve;

#[derive(Debug, Clone)]
pub struct BaselineCumHazEstimate {
    pub curve: StepCurve,
    pub beta_used: Vec<f64>,
    last_follow_up: f64,
}

impl BaselineCumHazEstimate {
    /// Right-continuous evaluation; constant past the last follow-up time
    /// (see [`is_extrapolated`](Self::is_extrapolated)).
    pub fn eval(&self, x: f64) -> f64 {
        self.curve.eval(x)
    }

    /// True when `x` lies beyond the last follow-up time, where the empirical
    /// risk set is empty and the estimator is only extended as a constant.
    pub fn is_extrapolated(&self, x: f64) -> bool {
        x > self.last_follow_up
    }

    pub fn last_follow_up(&self) -> f64 {
        self.last_follow_up
    }

    /// Largest discrepancy between two estimates over the union of their jump
    /// points, relative to `1 + max value`.
    pub fn relative_discrepancy(&self, other: &Self) -> f64 {
        let scale = 1.0 + self.curve.last_value().abs().max(other.curve.last_value().abs());
        self.curve
            .jump_times()
            .iter()
            .chain(other.curve.jump_times())
            .map(|&x| (self.eval(x) - other.eval(x)).abs())
            .fold(0.0, f64::max)
            / scale
    }
}

/// Classical form: jumps `d_k / sum_{T_j >= t_k} exp(beta'Z_j)` at each
/// distinct uncensored time.
pub fn breslow_traditional(data: &SurvivalDataset, beta: &[f64]) -> Result<BaselineCumHazEstimate> {
    let agg = build_aggregates(data, beta)?;
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut cumulative = 0.0;
    for k in 0..agg.len() {
        let d = agg.event_counts()[k];
        if d > 0 {
            cumulative += d as f64 / agg.s0_at(k);
            times.push(agg.distinct_times()[k]);
            values.push(cumulative);
        }
    }
    Ok(BaselineCumHazEstimate {
        curve: StepCurve::new(times, values)?,
        beta_used: beta.to_vec(),
        last_follow_up: data.max_time(),
    })
}

/// Plug-in form: integrates `delta {u <= x} / Phi_n(beta, u)` against the
/// empirical measure, one atom of mass `1/n` per subject.
pub fn breslow_plugin(data: &SurvivalDataset, beta: &[f64]) -> Result<BaselineCumHazEstimate> {
    let agg = build_aggregates(data, beta)?;
    let mass = 1.0 / data.len() as f64;
    let obs = data.observations();
    let mut times: Vec<f64> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut cumulative = 0.0;
    for &i in data.time_order() {
        let o = &obs[i];
        if !o.event {
            continue;
        }
        cumulative += mass / agg.phi_n(o.follow_up_time);
        if times.last() == Some(&o.follow_up_time) {
            *values.last_mut().unwrap() = cumulative;
        } else {
            times.push(o.follow_up_time);
            values.push(cumulative);
        }
    }
    Ok(BaselineCumHazEstimate {
        curve: StepCurve::new(times, values)?,
        beta_used: beta.to_vec(),
        last_follow_up: data.max_time(),
    })
}

/// `A_n(x) = (1/n) sum_{events, T_i <= x} D1_n(beta, T_i) / Phi_n(beta, T_i)^2`,
/// one step curve per covariate. It equals minus the beta-gradient of the
/// Breslow estimator at fixed `x`.
#[derive(Debug, Clone)]
pub struct PluginACurve {
    pub components: Vec<StepCurve>,
    pub beta_used: Vec<f64>,
}

impl PluginACurve {
    pub fn eval(&self, x: f64) -> Vec<f64> {
        self.components.iter().map(|c| c.eval(x)).collect()
    }

    /// No covariates: the curve has no components.
    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

pub fn a_n_curve(data: &SurvivalDataset, beta: &[f64]) -> Result<PluginACurve> {
    let p = data.covariate_dim();
    if p == 0 {
        return Ok(PluginACurve {
            components: Vec::new(),
            beta_used: Vec::new(),
        });
    }
    let agg = build_aggregates(data, beta)?;
    let n = data.len() as f64;
    let mut times = Vec::new();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); p];
    let mut cumulative = vec![0.0; p];
    for k in 0..agg.len() {
        let d = agg.event_counts()[k];
        if d == 0 {
            continue;
        }
        // d events each contribute (1/n) (s1/n) / (s0/n)^2 = s1 / s0^2.
        let s0 = agg.s0_at(k);
        for (a, s1) in agg.s1_at(k).iter().enumerate() {
            cumulative[a] += d as f64 * (s1 / n) / ((s0 / n) * (s0 / n)) / n;
            cols[a].push(cumulative[a]);
        }
        times.push(agg.distinct_times()[k]);
    }
    let components = cols
        .into_iter()
        .map(|v| StepCurve::signed(times.clone(), v, 0.0))
        .collect::<Result<Vec<_>>>()?;
    Ok(PluginACurve {
        components,
        beta_used: beta.to_vec(),
    })
}
