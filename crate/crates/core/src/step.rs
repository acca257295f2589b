use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Right-continuous step function: the value at `x` is `cumulative_values[k]`
/// for the largest `k` with `jump_times[k] <= x`, else `value_before_first`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCurve {
    jump_times: Vec<f64>,
    cumulative_values: Vec<f64>,
    value_before_first: f64,
}

impl StepCurve {
    /// Nondecreasing curve starting from 0 (cumulative hazards).
    pub fn new(jump_times: Vec<f64>, cumulative_values: Vec<f64>) -> Result<Self> {
        let curve = Self::signed(jump_times, cumulative_values, 0.0)?;
        let mut prev = curve.value_before_first;
        for (k, &v) in curve.cumulative_values.iter().enumerate() {
            if v < prev {
                return Err(Error::InvalidCurve(format!(
                    "value {v} at index {k} decreases from {prev}"
                )));
            }
            prev = v;
        }
        Ok(curve)
    }

    /// Step function with arbitrary (finite) levels, e.g. one coordinate of a
    /// vector-valued cumulative sum whose increments can be negative.
    pub fn signed(
        jump_times: Vec<f64>,
        cumulative_values: Vec<f64>,
        value_before_first: f64,
    ) -> Result<Self> {
        if jump_times.len() != cumulative_values.len() {
            return Err(Error::InvalidCurve(format!(
                "{} jump times but {} values",
                jump_times.len(),
                cumulative_values.len()
            )));
        }
        if jump_times.iter().any(|t| !t.is_finite())
            || cumulative_values.iter().any(|v| !v.is_finite())
            || !value_before_first.is_finite()
        {
            return Err(Error::InvalidCurve("non-finite entry".into()));
        }
        if let Some(w) = jump_times.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::InvalidCurve(format!(
                "jump times not strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(Self {
            jump_times,
            cumulative_values,
            value_before_first,
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let k = self.jump_times.partition_point(|&t| t <= x);
        if k == 0 {
            self.value_before_first
        } else {
            self.cumulative_values[k - 1]
        }
    }

    /// Value just before `x` (left limit).
    pub fn eval_left(&self, x: f64) -> f64 {
        let k = self.jump_times.partition_point(|&t| t < x);
        if k == 0 {
            self.value_before_first
        } else {
            self.cumulative_values[k - 1]
        }
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn cumulative_values(&self) -> &[f64] {
        &self.cumulative_values
    }

    pub fn value_before_first(&self) -> f64 {
        self.value_before_first
    }

    pub fn last_value(&self) -> f64 {
        self.cumulative_values
            .last()
            .copied()
            .unwrap_or(self.value_before_first)
    }

    /// Jump sizes, one per jump time.
    pub fn increments(&self) -> Vec<f64> {
        let mut prev = self.value_before_first;
        self.cumulative_values
            .iter()
            .map(|&v| {
                let d = v - prev;
                prev = v;
                d
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.jump_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jump_times.is_empty()
    }
}
