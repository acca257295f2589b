mod common;

use common::random_dataset;
use coxlin::breslow::breslow_traditional;
use coxlin::cox::{fit_mple, CoxFit, FitOptions};
use coxlin::experiment::log_log_slope;
use coxlin::linearization::{
    evaluation_grid, expected_xi, remainder_decomposition, xi_plugin, xi_truth,
};
use coxlin::truth::{generate_dataset, reference_truth, BaselineHazard, CovariateLaw, TruthModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn closed_phi(x: f64) -> f64 {
    0.5 * (1.0 - x / 3.0) * ((-x).exp() + 2.0 * (-2.0 * x).exp())
}

fn de(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    quadrature::integrate(f, a, b, 1e-13).integral
}

/// `E[xi(T, Delta, Z; x)]` for the reference design by nested double
/// exponential quadrature over the joint law of `(T, Delta)` given `Z`.
fn oracle_expected_xi(x: f64) -> f64 {
    let psi = |y: f64| de(|u| 1.0 / closed_phi(u), 0.0, y);
    let mut total = 0.0;
    for z in [0.0, 1.0] {
        let w: f64 = 2f64.powf(z);
        let surv = move |t: f64| (-w * t).exp();
        let cens = |t: f64| 1.0 - t / 3.0;
        let xi = |t: f64, event: bool| {
            -w * psi(t.min(x)) + if event && t <= x { 1.0 / closed_phi(t) } else { 0.0 }
        };
        let density = |t: f64| {
            w * surv(t) * cens(t) * xi(t, true) + surv(t) * (1.0 / 3.0) * xi(t, false)
        };
        total += 0.5 * (de(density, 0.0, x) + de(density, x, 3.0));
    }
    total
}

#[test]
fn influence_has_mean_zero() {
    let truth = reference_truth();
    for x in [0.5, 1.0, 1.5, 2.0] {
        let oracle = oracle_expected_xi(x);
        let library = expected_xi(&truth, x).unwrap();
        assert!(oracle.abs() < 1e-6, "oracle {oracle} at {x}");
        assert!(library.abs() < 1e-6, "library {library} at {x}");
    }
}

#[test]
fn no_covariate_special_case() {
    // beta0 = 0 removes the covariate from the hazard, so
    // 1 - H(t) = e^{-t}(1 - t/3) and dH^uc(t) = e^{-t}(1 - t/3) dt.
    let truth = TruthModel::new(
        vec![0.0],
        BaselineHazard::Constant { rate: 1.0 },
        CovariateLaw::Bernoulli { q: 0.5 },
        3.0,
    )
    .unwrap();
    let tail = |t: f64| (-t).exp() * (1.0 - t / 3.0);
    let special = |t: f64, event: bool, x: f64| {
        -de(|u| tail(u) / (tail(u) * tail(u)), 0.0, t.min(x))
            + if event && t <= x { 1.0 / tail(t) } else { 0.0 }
    };
    let data = generate_dataset(&truth, 60, 12).unwrap();
    let grid = [0.3, 1.0, 2.2];
    let m = xi_truth(&data, &truth, &grid).unwrap();
    for (i, o) in data.observations().iter().enumerate() {
        for (k, &x) in grid.iter().enumerate() {
            let expected = special(o.follow_up_time, o.event, x);
            assert!((m.value(i, k) - expected).abs() < 1e-9, "{} vs {expected}", m.value(i, k));
        }
    }
}

#[test]
fn zero_follow_up_has_no_integral_part() {
    let truth = reference_truth();
    for event in [true, false] {
        let v = truth.xi(0.0, event, &[1.0], 1.0).unwrap();
        let expected = if event { 1.0 / 1.5 } else { 0.0 };
        assert!((v - expected).abs() < 1e-15);
    }
}

#[test]
fn truth_columns_are_centered_at_scale() {
    let truth = reference_truth();
    let data = generate_dataset(&truth, 10_000, 99).unwrap();
    let m = truth.default_horizon(0.05).unwrap();
    let grid = evaluation_grid(m, 512, &[]);
    let infl = xi_truth(&data, &truth, &grid).unwrap();
    let root_n = (data.len() as f64).sqrt();
    let means = infl.column_means();
    let sds = infl.column_sds();
    let inside = means
        .iter()
        .zip(&sds)
        .filter(|(mu, sd)| mu.abs() <= 3.0 * **sd / root_n + 1e-15)
        .count();
    assert!(inside as f64 >= 0.95 * grid.len() as f64, "{inside} of {}", grid.len());
}

#[test]
fn plugin_columns_sum_to_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut done = 0;
    while done < 20 {
        let data = random_dataset(&mut rng, 150, 2);
        let fit = fit_mple(&data, &FitOptions::default()).unwrap();
        if !fit.is_converged() {
            continue;
        }
        let grid: Vec<f64> = (1..=8).map(|k| k as f64 * 0.25 * (data.max_time() / 2.5)).collect();
        let infl = xi_plugin(&data, &fit, &grid).unwrap();
        let scale = breslow_traditional(&data, &fit.beta_hat).unwrap().curve.last_value();
        for mean in infl.column_means() {
            assert!(mean.abs() <= 1e-12 * (1.0 + scale), "{mean}");
        }
        done += 1;
    }
}

#[test]
fn plugin_influence_approaches_the_truth() {
    let truth = reference_truth();
    let m = truth.default_horizon(0.05).unwrap();
    let grid = evaluation_grid(m, 64, &[]);
    let sizes = [250, 500, 1000, 2000, 4000];
    let mut errors = Vec::new();
    for &n in &sizes {
        let mut total = 0.0;
        let reps = 5;
        for r in 0..reps {
            let data = generate_dataset(&truth, n, 1000 + r).unwrap();
            let fit = fit_mple(&data, &FitOptions::default()).unwrap();
            let plug = xi_plugin(&data, &fit, &grid).unwrap();
            let exact = xi_truth(&data, &truth, &grid).unwrap();
            let mut sum = 0.0;
            for i in 0..n {
                for k in 0..grid.len() {
                    sum += (plug.value(i, k) - exact.value(i, k)).abs();
                }
            }
            total += sum / (n * grid.len()) as f64;
        }
        errors.push(total / reps as f64);
    }
    let (slope, _) = log_log_slope(&sizes, &errors);
    assert!(slope.unwrap() <= -0.4, "slope {:?} errors {errors:?}", slope);
}

#[test]
fn decomposition_identity_on_simulated_data() {
    let truth = reference_truth();
    let m = truth.default_horizon(0.05).unwrap();
    for seed in 0..5 {
        let data = generate_dataset(&truth, 1000, 400 + seed).unwrap();
        let fit = fit_mple(&data, &FitOptions::default()).unwrap();
        let events: Vec<f64> = data
            .observations()
            .iter()
            .filter(|o| o.event)
            .map(|o| o.follow_up_time)
            .collect();
        let grid = evaluation_grid(m, 512, &events);
        let r = remainder_decomposition(&data, &fit, &truth, &grid).unwrap();
        assert!(r.sup_norms.identity_gap <= 1e-8, "{}", r.sup_norms.identity_gap);

        // The remainder recomputed from its definition with independent pieces.
        let lambda = breslow_traditional(&data, &fit.beta_hat).unwrap();
        let coarse: Vec<f64> = grid.iter().copied().step_by(37).collect();
        let means = xi_truth(&data, &truth, &coarse).unwrap().column_means();
        for (j, &x) in coarse.iter().enumerate() {
            let k = grid.iter().position(|&g| g == x).unwrap();
            let a0 = truth.a0(x).unwrap();
            let linear = (fit.beta_hat[0] - truth.beta0[0]) * a0[0];
            let direct = lambda.eval(x) - x - means[j] + linear;
            assert!((r.r_n[k] - direct).abs() < 1e-9, "{} vs {direct}", r.r_n[k]);
            assert!((r.mean_xi[k] - means[j]).abs() < 1e-9);
        }

        let pinned = CoxFit::at(&data, &truth.beta0).unwrap();
        let r0 = remainder_decomposition(&data, &pinned, &truth, &grid).unwrap();
        assert!(r0.t_n1.iter().all(|v| *v == 0.0));
    }
}

#[test]
fn decomposition_rejects_bad_inputs() {
    let truth = reference_truth();
    let data = generate_dataset(&truth, 200, 3).unwrap();
    let fit = fit_mple(&data, &FitOptions::default()).unwrap();
    assert!(remainder_decomposition(&data, &fit, &truth, &[0.5, 3.0]).is_err());
    let separated = coxlin::data::validate_dataset(vec![
        (1.0, true, vec![1.0]),
        (2.0, true, vec![0.0]),
    ])
    .unwrap();
    let bad = fit_mple(&separated, &FitOptions::default()).unwrap();
    assert!(remainder_decomposition(&separated, &bad, &truth, &[0.5]).is_err());
}
