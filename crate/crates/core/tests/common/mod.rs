#![allow(dead_code)]

use coxlin::data::{validate_dataset, SurvivalDataset};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Random right-censored data with deliberately tied follow-up times:
/// times are drawn on a coarse lattice so several subjects share each value.
pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, p: usize) -> SurvivalDataset {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let lattice = (n / 3).max(2);
    loop {
        let rows: Vec<(f64, bool, Vec<f64>)> = (0..n)
            .map(|_| {
                let t = (rng.random_range(1..=lattice) as f64) * 0.25;
                let event = rng.random_bool(0.7);
                let z = (0..p).map(|_| normal.sample(rng)).collect();
                (t, event, z)
            })
            .collect();
        if rows.iter().any(|r| r.1) {
            return validate_dataset(rows).unwrap();
        }
    }
}

pub fn random_beta(rng: &mut ChaCha8Rng, p: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, 0.5).unwrap();
    (0..p).map(|_| normal.sample(rng)).collect()
}

/// `|a - b| <= tol * max(1, |b|)`.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}
