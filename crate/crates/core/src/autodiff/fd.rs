//! Central finite-difference oracles.
//!
//! These never touch the tape and exist to check [`grad`](super::grad) and
//! [`hvp`](super::hvp) independently, both in tests and in the CLI's
//! gradient-check harness.

use super::{grad, ScalarField};
use crate::error::Result;

/// Central differences of `f` with per-coordinate step `1e-5·max(1, |u_i|)`.
pub fn fd_grad<F: ScalarField>(f: &F, u: &[f64]) -> Vec<f64> {
    fd_grad_of(|x| f.eval(x), u, 1e-5)
}

/// Central differences of an arbitrary scalar function.
pub fn fd_grad_of(mut f: impl FnMut(&[f64]) -> f64, u: &[f64], rel_step: f64) -> Vec<f64> {
    let mut x = u.to_vec();
    (0..u.len())
        .map(|i| {
            let h = rel_step * u[i].abs().max(1.0);
            x[i] = u[i] + h;
            let up = f(&x);
            x[i] = u[i] - h;
            let down = f(&x);
            x[i] = u[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `(∇f(u + εv̂) − ∇f(u − εv̂)) / 2ε · ‖v‖∞` with `v̂ = v/‖v‖∞` and
/// `ε = 1e-5·(1 + ‖u‖∞)`. Uses exact gradients, so the only error is the
/// O(ε²) truncation.
pub fn fd_hvp<F: ScalarField>(f: &F, u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    let vmax = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if vmax == 0.0 {
        return Ok(vec![0.0; u.len()]);
    }
    let umax = u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let eps = 1e-5 * (1.0 + umax);
    let shifted = |sign: f64| -> Vec<f64> {
        u.iter()
            .zip(v)
            .map(|(&a, &b)| a + sign * eps * b / vmax)
            .collect()
    };
    let gp = grad(f, &shifted(1.0))?;
    let gm = grad(f, &shifted(-1.0))?;
    Ok(gp
        .iter()
        .zip(gm.iter())
        .map(|(p, m)| (p - m) / (2.0 * eps) * vmax)
        .collect())
}

/// `‖a − b‖ / max(‖b‖, floor)`.
pub fn rel_l2_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let nb: f64 = b.iter().map(|y| y * y).sum();
    diff.sqrt() / nb.sqrt().max(floor)
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let ab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    ab / (na * nb)
}
