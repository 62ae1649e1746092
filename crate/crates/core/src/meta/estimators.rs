use log::warn;

use super::{Counters, TaskGradient};
use crate::autodiff::{self, dot, ParamVector, ScalarField};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::odesolve::{solve_adjoint, solve_forward, GradientFlow, SolverConfig};

/// A-MAML: forward gradient flow on the train loss, `λ(T) = ∇L_val(u(T))`,
/// backward Heun sweep with exact HVPs; returns `λ(0)`.
pub fn adjoint_grad<F: ScalarField, G: ScalarField>(
    train: &F,
    val: &G,
    theta: &[f64],
    solver: &SolverConfig,
) -> Result<TaskGradient> {
    let flow = GradientFlow::new(train);
    adjoint_grad_with(train, val, theta, solver, |u, v| {
        flow.jacobian_product(u, v)
    })
}

/// [`adjoint_grad`] with a caller-supplied `H(u)·v`, used by verification
/// harnesses to inject faults into the backward sweep.
pub fn adjoint_grad_with<F, G, J>(
    train: &F,
    val: &G,
    theta: &[f64],
    solver: &SolverConfig,
    jvp: J,
) -> Result<TaskGradient>
where
    F: ScalarField,
    G: ScalarField,
    J: FnMut(&[f64], &[f64]) -> Result<ParamVector>,
{
    check_dim("initialization", train.dim(), theta.len())?;
    check_dim("validation loss", train.dim(), val.dim())?;
    let d = theta.len();
    let flow = GradientFlow::new(train);
    let fwd = solve_forward(&flow, theta, solver)?;
    let (val_loss, lambda_t) = autodiff::value_and_grad(val, fwd.grid.last())?;
    let adj = solve_adjoint(jvp, &fwd.grid, &lambda_t)?;
    let work = fwd.stats.workspace_vectors.max(adj.workspace_vectors + 1);
    Ok(TaskGradient {
        grad: adj.lambda.into_inner(),
        val_loss,
        counters: Counters {
            grad_calls: fwd.stats.rhs_evals + 1,
            hvp_calls: adj.hvp_calls,
            forward_steps: fwd.stats.accepted_steps,
            peak_state_floats: fwd.grid.stored_floats() + work * d,
        },
    })
}

fn gd_steps<F: ScalarField>(
    train: &F,
    theta: &[f64],
    alpha: f64,
    k: usize,
    mut keep: impl FnMut(&[f64]),
) -> Result<Vec<f64>> {
    let mut u = theta.to_vec();
    for _ in 0..k {
        keep(&u);
        let g = autodiff::grad(train, &u)?;
        for (ui, gi) in u.iter_mut().zip(g.iter()) {
            *ui -= alpha * gi;
        }
        check_finite("inner state", &u)?;
    }
    Ok(u)
}

fn check_inputs<F: ScalarField, G: ScalarField>(
    train: &F,
    val: &G,
    theta: &[f64],
    k: usize,
) -> Result<()> {
    check_dim("initialization", train.dim(), theta.len())?;
    check_dim("validation loss", train.dim(), val.dim())?;
    if k == 0 {
        return Err(Error::config("inner_steps must be at least 1"));
    }
    Ok(())
}

/// Exact gradient through `K` GD steps `u_{k+1} = u_k − α∇L_tr(u_k)`:
/// `v_K = ∇L_val(u_K)`, `v_k = v_{k+1} − α·∇²L_tr(u_k)·v_{k+1}`, returns `v_0`.
pub fn unrolled_grad<F: ScalarField, G: ScalarField>(
    train: &F,
    val: &G,
    theta: &[f64],
    alpha: f64,
    k: usize,
) -> Result<TaskGradient> {
    check_inputs(train, val, theta, k)?;
    let d = theta.len();
    let mut states = Vec::with_capacity(k);
    let psi = gd_steps(train, theta, alpha, k, |u| states.push(u.to_vec()))?;
    let (val_loss, v) = autodiff::value_and_grad(val, &psi)?;
    let mut v = v.into_inner();
    for u in states.iter().rev() {
        let hv = autodiff::hvp(train, u, &v)?;
        for (vi, hi) in v.iter_mut().zip(hv.iter()) {
            *vi -= alpha * hi;
        }
    }
    Ok(TaskGradient {
        grad: v,
        val_loss,
        counters: Counters {
            grad_calls: k + 1,
            hvp_calls: k,
            forward_steps: k,
            peak_state_floats: (k + 1) * d + 2 * d,
        },
    })
}

/// `∇L_val(ψ_K)` with the trajectory Jacobian dropped.
pub fn fomaml_grad<F: ScalarField, G: ScalarField>(
    train: &F,
    val: &G,
    theta: &[f64],
    alpha: f64,
    k: usize,
) -> Result<TaskGradient> {
    check_inputs(train, val, theta, k)?;
    let psi = gd_steps(train, theta, alpha, k, |_| {})?;
    let (val_loss, g) = autodiff::value_and_grad(val, &psi)?;
    Ok(TaskGradient {
        grad: g.into_inner(),
        val_loss,
        counters: Counters {
            grad_calls: k + 1,
            hvp_calls: 0,
            forward_steps: k,
            peak_state_floats: 2 * theta.len(),
        },
    })
}

/// `∇L_val(ψ_K) − θ`, the per-task Reptile direction as used here; batch
/// averaging happens in the outer loop.
pub fn reptile_grad<F: ScalarField, G: ScalarField>(
    train: &F,
    val: &G,
    theta: &[f64],
    alpha: f64,
    k: usize,
) -> Result<TaskGradient> {
    let mut out = fomaml_grad(train, val, theta, alpha, k)?;
    for (g, t) in out.grad.iter_mut().zip(theta) {
        *g -= t;
    }
    Ok(out)
}

/// Implicit gradient: `K` GD steps on `L_tr + (λ/2)‖u − θ‖²`, then
/// `cg_steps` of conjugate gradient on `(I + ∇²L_tr(ψ)/λ)·g = ∇L_val(ψ)`.
pub fn imaml_grad<F: ScalarField, G: ScalarField>(
    train: &F,
    val: &G,
    theta: &[f64],
    alpha: f64,
    k: usize,
    prox: f64,
    cg_steps: usize,
) -> Result<TaskGradient> {
    check_inputs(train, val, theta, k)?;
    if prox.is_nan() || prox <= 0.0 {
        return Err(Error::config("prox_strength must be positive"));
    }
    let d = theta.len();
    let mut psi = theta.to_vec();
    for _ in 0..k {
        let g = autodiff::grad(train, &psi)?;
        for i in 0..d {
            psi[i] -= alpha * (g[i] + prox * (psi[i] - theta[i]));
        }
        check_finite("inner state", &psi)?;
    }
    let (val_loss, b) = autodiff::value_and_grad(val, &psi)?;
    let op = |p: &[f64]| -> Result<Vec<f64>> {
        let hp = autodiff::hvp(train, &psi, p)?;
        Ok(p.iter().zip(hp.iter()).map(|(x, h)| x + h / prox).collect())
    };
    let cg = conjugate_gradient(op, &b, cg_steps)?;
    Ok(TaskGradient {
        grad: cg.solution,
        val_loss,
        counters: Counters {
            grad_calls: k + 1,
            hvp_calls: cg.iterations,
            forward_steps: k,
            peak_state_floats: 7 * d,
        },
    })
}

pub(crate) struct CgOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
}

/// Plain CG from `x₀ = 0`. On non-positive curvature the iterate with the
/// smallest residual seen so far is returned.
pub(crate) fn conjugate_gradient(
    mut op: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    b: &[f64],
    max_iters: usize,
) -> Result<CgOutcome> {
    let d = b.len();
    let mut x = vec![0.0; d];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    let b_norm = rs.sqrt();
    let mut best = (x.clone(), b_norm);
    let mut iterations = 0;
    if b_norm == 0.0 {
        return Ok(CgOutcome {
            solution: x,
            iterations,
        });
    }
    for _ in 0..max_iters {
        let ap = op(&p)?;
        iterations += 1;
        let curvature = dot(&p, &ap);
        if curvature.is_nan() || curvature <= 0.0 {
            warn!(
                "conjugate gradient breakdown: pᵀAp = {curvature:e} after {iterations} iterations"
            );
            return Ok(CgOutcome {
                solution: best.0,
                iterations,
            });
        }
        let step = rs / curvature;
        for i in 0..d {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        let rs_new = dot(&r, &r);
        if rs_new.sqrt() < best.1 {
            best = (x.clone(), rs_new.sqrt());
        }
        if rs_new.sqrt() <= 1e-14 * b_norm {
            break;
        }
        let beta = rs_new / rs;
        for i in 0..d {
            p[i] = r[i] + beta * p[i];
        }
        rs = rs_new;
    }
    Ok(CgOutcome {
        solution: x,
        iterations,
    })
}
