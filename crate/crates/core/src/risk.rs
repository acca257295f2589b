//! Risk-set functionals at every distinct follow-up time.
//!
//! For a fixed `beta`, the suffix sums
//!
//! ```text
//! s0[k] = sum_{j: T_j >= t_k} exp(beta'Z_j)
//! s1[k] = sum_{j: T_j >= t_k} Z_j exp(beta'Z_j)
//! s2[k] = sum_{j: T_j >= t_k} Z_j Z_j' exp(beta'Z_j)
//! ```
//!
//! are accumulated in one backward pass over the time-sorted sample. The
//! empirical functionals are `Phi_n(beta, x) = s0[k]/n` with `t_k` the first
//! distinct time `>= x` (the risk indicator `{u >= x}` is weak), and likewise
//! `D1_n = s1/n`, `D2_n = s2/n`.

use nalgebra::DMatrix;

use crate::data::SurvivalDataset;
use crate::error::{Error, Result};

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    #[inline]
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub(crate) fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[derive(Debug, Clone)]
pub struct RiskAggregates {
    beta: Vec<f64>,
    distinct_times: Vec<f64>,
    event_counts: Vec<usize>,
    s0: Vec<f64>,
    s1: Vec<f64>,
    s2: Vec<f64>,
    n: usize,
    p: usize,
    log_scale: f64,
}

/// Linear predictors `beta'Z_i` in row order.
pub fn linear_predictors(data: &SurvivalDataset, beta: &[f64]) -> Result<Vec<f64>> {
    if beta.len() != data.covariate_dim() {
        return Err(Error::Dimension {
            expected: data.covariate_dim(),
            found: beta.len(),
        });
    }
    Ok(data
        .observations()
        .iter()
        .map(|o| o.covariates.iter().zip(beta).map(|(z, b)| z * b).sum())
        .collect())
}

/// Builds the suffix-sum tables at `beta`. Any `exp(beta'Z_j)` that overflows
/// is an error.
pub fn build_aggregates(data: &SurvivalDataset, beta: &[f64]) -> Result<RiskAggregates> {
    let eta = linear_predictors(data, beta)?;
    if let Some(&bad) = eta.iter().find(|e| !e.exp().is_finite()) {
        return Err(Error::Overflow {
            linear_predictor: bad,
        });
    }
    Ok(accumulate(data, beta, &eta, 0.0))
}

/// Same tables with every weight scaled by `exp(-shift)`. Ratios such as
/// `s1/s0` are unaffected; used by the partial likelihood when `beta'Z` is
/// large.
pub(crate) fn build_aggregates_shifted(
    data: &SurvivalDataset,
    beta: &[f64],
    shift: f64,
) -> Result<RiskAggregates> {
    let eta = linear_predictors(data, beta)?;
    if let Some(&bad) = eta.iter().find(|e| !(*e - shift).exp().is_finite()) {
        return Err(Error::Overflow {
            linear_predictor: bad,
        });
    }
    Ok(accumulate(data, beta, &eta, shift))
}

fn accumulate(data: &SurvivalDataset, beta: &[f64], eta: &[f64], shift: f64) -> RiskAggregates {
    let p = data.covariate_dim();
    let obs = data.observations();
    let order = data.time_order();

    let mut distinct_times = Vec::new();
    let mut event_counts = Vec::new();
    let mut s0 = Vec::new();
    let mut s1 = Vec::new();
    let mut s2 = Vec::new();

    let mut acc0 = CompensatedSum::default();
    let mut acc1 = vec![CompensatedSum::default(); p];
    let mut acc2 = vec![CompensatedSum::default(); p * (p + 1) / 2];

    let mut idx = order.len();
    while idx > 0 {
        let t = obs[order[idx - 1]].follow_up_time;
        let mut events = 0;
        while idx > 0 && obs[order[idx - 1]].follow_up_time == t {
            let i = order[idx - 1];
            let w = (eta[i] - shift).exp();
            let z = &obs[i].covariates;
            acc0.add(w);
            let mut tri = 0;
            for a in 0..p {
                let wz = w * z[a];
                acc1[a].add(wz);
                for b in a..p {
                    acc2[tri].add(wz * z[b]);
                    tri += 1;
                }
            }
            if obs[i].event {
                events += 1;
            }
            idx -= 1;
        }
        distinct_times.push(t);
        event_counts.push(events);
        s0.push(acc0.value());
        s1.extend(acc1.iter().map(CompensatedSum::value));
        let mut full = vec![0.0; p * p];
        let mut tri = 0;
        for a in 0..p {
            for b in a..p {
                let v = acc2[tri].value();
                full[a * p + b] = v;
                full[b * p + a] = v;
                tri += 1;
            }
        }
        s2.extend(full);
    }

    // Built from the largest time down; flip to ascending order.
    distinct_times.reverse();
    event_counts.reverse();
    s0.reverse();
    let k = distinct_times.len();
    let s1 = reverse_blocks(s1, p, k);
    let s2 = reverse_blocks(s2, p * p, k);

    RiskAggregates {
        beta: beta.to_vec(),
        distinct_times,
        event_counts,
        s0,
        s1,
        s2,
        n: data.len(),
        p,
        log_scale: shift,
    }
}

fn reverse_blocks(v: Vec<f64>, block: usize, count: usize) -> Vec<f64> {
    if block == 0 {
        return v;
    }
    let mut out = Vec::with_capacity(v.len());
    for k in (0..count).rev() {
        out.extend_from_slice(&v[k * block..(k + 1) * block]);
    }
    out
}

impl RiskAggregates {
    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn distinct_times(&self) -> &[f64] {
        &self.distinct_times
    }

    /// Number of uncensored observations at each distinct time.
    pub fn event_counts(&self) -> &[usize] {
        &self.event_counts
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn covariate_dim(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.distinct_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distinct_times.is_empty()
    }

    pub fn s0(&self) -> &[f64] {
        &self.s0
    }

    pub fn s0_at(&self, k: usize) -> f64 {
        self.s0[k]
    }

    pub fn s1_at(&self, k: usize) -> &[f64] {
        &self.s1[k * self.p..(k + 1) * self.p]
    }

    /// Row-major `p x p` block at distinct time `k`.
    pub fn s2_at(&self, k: usize) -> &[f64] {
        let b = self.p * self.p;
        &self.s2[k * b..(k + 1) * b]
    }

    /// Index of the first distinct time `>= x`; `len()` if there is none.
    pub fn index_at_or_after(&self, x: f64) -> usize {
        self.distinct_times.partition_point(|&t| t < x)
    }

    /// Index of the distinct time equal to `t`, if any.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let k = self.index_at_or_after(t);
        (k < self.len() && self.distinct_times[k] == t).then_some(k)
    }

    fn unscale(&self) -> f64 {
        if self.log_scale == 0.0 {
            1.0
        } else {
            self.log_scale.exp()
        }
    }

    /// `Phi_n(beta, x) = (1/n) sum_{T_j >= x} exp(beta'Z_j)`: left-continuous,
    /// nonincreasing, zero past the largest follow-up time.
    pub fn phi_n(&self, x: f64) -> f64 {
        let k = self.index_at_or_after(x);
        if k == self.len() {
            0.0
        } else {
            self.s0[k] * self.unscale() / self.n as f64
        }
    }

    /// `D1_n(beta, x)`, the beta-gradient of `phi_n` at fixed `x`.
    pub fn d1_n(&self, x: f64) -> Vec<f64> {
        let k = self.index_at_or_after(x);
        if k == self.len() {
            return vec![0.0; self.p];
        }
        let c = self.unscale() / self.n as f64;
        self.s1_at(k).iter().map(|v| v * c).collect()
    }

    /// `D2_n(beta, x)`, the beta-Hessian of `phi_n` at fixed `x`. Symmetric by
    /// construction.
    pub fn d2_n(&self, x: f64) -> DMatrix<f64> {
        let p = self.p;
        let k = self.index_at_or_after(x);
        if k == self.len() {
            return DMatrix::zeros(p, p);
        }
        let c = self.unscale() / self.n as f64;
        DMatrix::from_row_slice(p, p, self.s2_at(k)).map(|v| v * c)
    }
}
