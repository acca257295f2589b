//! Adaptive Gauss-Kronrod (7/15) quadrature, scalar and vector valued, plus
//! cumulative integration over a sorted set of knots.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_DEPTH: usize = 60;

/// One 15-point Kronrod panel on `[a, b]`; fills `kronrod` and returns the
/// largest component of `|kronrod - gauss|`.
fn panel<F>(f: &mut F, a: f64, b: f64, dim: usize, fx: &mut [f64], kronrod: &mut [f64], gauss: &mut [f64]) -> f64
where
    F: FnMut(f64, &mut [f64]),
{
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    kronrod.iter_mut().for_each(|v| *v = 0.0);
    gauss.iter_mut().for_each(|v| *v = 0.0);

    f(center, fx);
    for c in 0..dim {
        kronrod[c] += WGK[7] * fx[c];
        gauss[c] += WG[3] * fx[c];
    }
    for j in 0..7 {
        let dx = half * XGK[j];
        for x in [center - dx, center + dx] {
            f(x, fx);
            for c in 0..dim {
                kronrod[c] += WGK[j] * fx[c];
                if j % 2 == 1 {
                    gauss[c] += WG[j / 2] * fx[c];
                }
            }
        }
    }
    let mut err: f64 = 0.0;
    for c in 0..dim {
        kronrod[c] *= half;
        gauss[c] *= half;
        err = err.max((kronrod[c] - gauss[c]).abs());
    }
    err
}

/// Integrates a `dim`-valued function over `[a, b]` to absolute tolerance
/// `tol` (on the largest component), bisecting panels that fail.
pub fn integrate_vec<F>(mut f: F, a: f64, b: f64, dim: usize, tol: f64) -> Result<Vec<f64>>
where
    F: FnMut(f64, &mut [f64]),
{
    let mut total = vec![0.0; dim];
    if a == b {
        return Ok(total);
    }
    let mut fx = vec![0.0; dim];
    let mut kr = vec![0.0; dim];
    let mut ga = vec![0.0; dim];
    let mut stack = vec![(a, b, tol, 0usize)];
    while let Some((lo, hi, local_tol, depth)) = stack.pop() {
        let err = panel(&mut f, lo, hi, dim, &mut fx, &mut kr, &mut ga);
        let magnitude = kr.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let floor = 64.0 * f64::EPSILON * magnitude;
        if !err.is_finite() || kr.iter().any(|v| !v.is_finite()) {
            return Err(Error::Quadrature { a: lo, b: hi, estimate: err });
        }
        if err <= local_tol.max(floor) {
            for c in 0..dim {
                total[c] += kr[c];
            }
        } else if depth >= MAX_DEPTH {
            return Err(Error::Quadrature { a: lo, b: hi, estimate: err });
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((mid, hi, 0.5 * local_tol, depth + 1));
            stack.push((lo, mid, 0.5 * local_tol, depth + 1));
        }
    }
    Ok(total)
}

pub fn integrate<F>(mut f: F, a: f64, b: f64, tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    integrate_vec(|x, out| out[0] = f(x), a, b, 1, tol).map(|v| v[0])
}

/// Cumulative integrals `int_{knots[0]}^{knots[k]} f` for every knot, each
/// segment integrated adaptively. Returns a row-major `knots.len() x dim`
/// table. The tolerance budget is split across segments by length.
pub fn cumulative_vec<F>(mut f: F, knots: &[f64], dim: usize, tol: f64) -> Result<Vec<f64>>
where
    F: FnMut(f64, &mut [f64]),
{
    let mut out = vec![0.0; knots.len() * dim];
    if knots.len() < 2 {
        return Ok(out);
    }
    let span = knots[knots.len() - 1] - knots[0];
    let mut running = vec![0.0; dim];
    for k in 1..knots.len() {
        let (a, b) = (knots[k - 1], knots[k]);
        if b > a {
            let seg_tol = if span > 0.0 { tol * (b - a) / span } else { tol };
            let piece = integrate_vec(&mut f, a, b, dim, seg_tol)?;
            for c in 0..dim {
                running[c] += piece[c];
            }
        }
        out[k * dim..(k + 1) * dim].copy_from_slice(&running);
    }
    Ok(out)
}
