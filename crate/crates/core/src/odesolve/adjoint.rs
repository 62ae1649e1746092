use super::TrajectoryGrid;
use crate::autodiff::ParamVector;
use crate::error::{check_dim, check_finite, Error, Result};

#[derive(Debug, Clone)]
pub struct AdjointSolve {
    /// `λ(0)`.
    pub lambda: ParamVector,
    pub hvp_calls: usize,
    /// Length-`d` work vectors held during the sweep.
    pub workspace_vectors: usize,
}

/// Backward modified-Euler (Heun) sweep of `dλ/dt = −H(u)λ` from `λ(T)`.
///
/// For `j = J−1 … 0`:
///
/// ```text
/// λ̃_j = λ_{j+1} + h·H(u_{j+1})·λ_{j+1}
/// λ_j = λ_{j+1} + (h/2)·[H(u_{j+1})·λ_{j+1} + H(u_j)·λ̃_j]
/// ```
///
/// `jvp(u, v)` must return `H(u)·v`. Exactly two products per step are
/// requested, always at stored grid states; the loss itself is never
/// evaluated here.
pub fn solve_adjoint<G>(mut jvp: G, grid: &TrajectoryGrid, lambda_t: &[f64]) -> Result<AdjointSolve>
where
    G: FnMut(&[f64], &[f64]) -> Result<ParamVector>,
{
    check_dim("terminal adjoint", grid.dim(), lambda_t.len())?;
    check_finite("terminal adjoint", lambda_t)?;
    if grid.times().is_empty() {
        return Err(Error::config("empty trajectory grid"));
    }
    let h = grid.step();
    let d = grid.dim();
    let mut lambda = lambda_t.to_vec();
    let mut trial = vec![0.0; d];
    let mut calls = 0;
    for j in (0..grid.intervals()).rev() {
        let a = jvp(grid.state(j + 1), &lambda)?;
        check_dim("jacobian product", d, a.len())?;
        for i in 0..d {
            trial[i] = lambda[i] + h * a[i];
        }
        let b = jvp(grid.state(j), &trial)?;
        check_dim("jacobian product", d, b.len())?;
        calls += 2;
        for i in 0..d {
            lambda[i] += 0.5 * h * (a[i] + b[i]);
        }
        if lambda.iter().any(|x| !x.is_finite()) {
            return Err(Error::AdjointDivergence { step: j });
        }
    }
    Ok(AdjointSolve {
        lambda: ParamVector::from_vec_unchecked(lambda),
        hvp_calls: calls,
        workspace_vectors: 4,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::odesolve::{solve_forward, FnField, Method, SolverConfig};

    fn scalar_jvp(c: f64) -> impl FnMut(&[f64], &[f64]) -> Result<ParamVector> {
        move |_u, v| Ok(ParamVector::from_vec_unchecked(vec![c * v[0]]))
    }

    #[test]
    fn single_heun_step() {
        let grid = TrajectoryGrid::from_states(0.5, &[vec![1.0], vec![0.6]]).unwrap();
        let out = solve_adjoint(scalar_jvp(-1.0), &grid, &[1.0]).unwrap();
        // λ̃ = 1 − 0.5 = 0.5; λ₀ = 1 + 0.25·(−1 − 0.5) = 0.625
        assert_eq!(out.lambda[0], 0.625);
        assert_eq!(out.hvp_calls, 2);
    }

    #[test]
    fn frozen_adjoint() {
        let states: Vec<Vec<f64>> = (0..8).map(|j| vec![j as f64, -1.0]).collect();
        let grid = TrajectoryGrid::from_states(0.1, &states).unwrap();
        let zero = |_: &[f64], v: &[f64]| Ok(ParamVector::zeros(v.len()));
        let out = solve_adjoint(zero, &grid, &[0.3, -2.0]).unwrap();
        assert_eq!(&*out.lambda, &[0.3, -2.0]);
        assert_eq!(out.hvp_calls, 14);
    }

    /// L = ½u², J = ½u(T)²: dJ/dθ = θ e^{−2T}.
    fn scalar_pipeline(h: f64) -> f64 {
        let field = FnField::new(1, |u: &[f64], out: &mut [f64]| out[0] = -u[0]);
        let cfg = SolverConfig::new(Method::Rk45, 1.0, h);
        let sol = solve_forward(&field, &[1.0], &cfg).unwrap();
        let lambda_t = sol.grid.last().to_vec();
        solve_adjoint(scalar_jvp(-1.0), &sol.grid, &lambda_t)
            .unwrap()
            .lambda[0]
    }

    #[test]
    fn closed_form_adjoint_is_second_order() {
        let exact = (-2.0f64).exp();
        let errs: Vec<f64> = [0.1, 0.05, 0.025]
            .iter()
            .map(|&h| (scalar_pipeline(h) - exact).abs())
            .collect();
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((3.5..=4.5).contains(&ratio), "{errs:?}");
        }
        assert!((scalar_pipeline(0.001) - exact).abs() / exact < 1e-6);
    }

    #[test]
    fn divergence_reports_step() {
        let grid = TrajectoryGrid::from_states(1.0, &vec![vec![0.0]; 6]).unwrap();
        let err = solve_adjoint(scalar_jvp(1e200), &grid, &[1e200]).unwrap_err();
        assert!(matches!(err, Error::AdjointDivergence { step: 4 }), "{err}");
    }

    #[test]
    fn dimension_mismatch() {
        let grid = TrajectoryGrid::from_states(1.0, &[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(solve_adjoint(scalar_jvp(1.0), &grid, &[1.0]).is_err());
    }
}
