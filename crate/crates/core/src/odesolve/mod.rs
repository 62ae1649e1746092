//! Forward integration of the gradient-flow ODE `du/dt = f(u)` onto a
//! uniform time grid, and the backward modified-Euler sweep of the adjoint
//! ODE `dλ/dt = −H(u)λ` over that grid.

mod adjoint;
mod explicit;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use adjoint::{solve_adjoint, AdjointSolve};
pub use explicit::solve_forward;

use crate::autodiff::{self, ParamVector, ScalarField};
use crate::error::{check_dim, Error, Result};

/// Autonomous vector field `u ↦ f(u)`.
pub trait VectorField: Sync {
    fn dim(&self) -> usize;

    fn eval(&self, u: &[f64], out: &mut [f64]) -> Result<()>;
}

/// `f(u) = −∇L(u)` for a loss `L`.
#[derive(Debug, Clone)]
pub struct GradientFlow<F> {
    loss: F,
}

impl<F: ScalarField> GradientFlow<F> {
    pub fn new(loss: F) -> Self {
        GradientFlow { loss }
    }

    pub fn loss(&self) -> &F {
        &self.loss
    }

    /// Dynamics Jacobian product `H(u)·v = −∇²L(u)·v`.
    pub fn jacobian_product(&self, u: &[f64], v: &[f64]) -> Result<ParamVector> {
        let mut h = autodiff::hvp(&self.loss, u, v)?;
        h.iter_mut().for_each(|x| *x = -*x);
        Ok(h)
    }
}

impl<F: ScalarField> VectorField for GradientFlow<F> {
    fn dim(&self) -> usize {
        self.loss.dim()
    }

    fn eval(&self, u: &[f64], out: &mut [f64]) -> Result<()> {
        let g = autodiff::grad(&self.loss, u)?;
        for (o, gi) in out.iter_mut().zip(g.iter()) {
            *o = -gi;
        }
        Ok(())
    }
}

/// Closure-backed field, mostly for tests and closed-form hooks.
pub struct FnField<G> {
    dim: usize,
    f: G,
}

impl<G: Fn(&[f64], &mut [f64]) + Sync> FnField<G> {
    pub fn new(dim: usize, f: G) -> Self {
        FnField { dim, f }
    }
}

impl<G: Fn(&[f64], &mut [f64]) + Sync> VectorField for FnField<G> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, u: &[f64], out: &mut [f64]) -> Result<()> {
        (self.f)(u, out);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Dormand–Prince 5(4) with adaptive steps and dense output.
    #[default]
    Rk45,
    /// Classical fixed-step RK4 at the grid step.
    Rk4,
    /// Fixed-step forward Euler at the grid step; identical to gradient
    /// descent with step size `grid_step`.
    ForwardEuler,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    #[serde(default)]
    pub method: Method,
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_atol")]
    pub atol: f64,
    pub grid_step: f64,
    pub horizon: f64,
}

fn default_rtol() -> f64 {
    1e-6
}

fn default_atol() -> f64 {
    1e-8
}

impl SolverConfig {
    pub fn new(method: Method, horizon: f64, grid_step: f64) -> Self {
        SolverConfig {
            method,
            rtol: default_rtol(),
            atol: default_atol(),
            grid_step,
            horizon,
        }
    }

    /// Number of grid intervals `J = T/h`; rejects horizons the grid does not
    /// cover exactly (relative tolerance 1e-9).
    pub fn grid_intervals(&self) -> Result<usize> {
        let (t, h) = (self.horizon, self.grid_step);
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::config(format!("horizon must be positive, got {t}")));
        }
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::config(format!(
                "grid step must be positive, got {h}"
            )));
        }
        if h > t * (1.0 + 1e-9) {
            return Err(Error::config(format!("grid step {h} exceeds horizon {t}")));
        }
        let ratio = t / h;
        let j = ratio.round();
        if (ratio - j).abs() > 1e-9 * ratio {
            return Err(Error::config(format!(
                "horizon {t} is not an integer multiple of grid step {h}"
            )));
        }
        Ok(j as usize)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid_intervals()?;
        if self.method == Method::Rk45 && !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(Error::config("rtol and atol must be positive"));
        }
        Ok(())
    }
}

/// States `u_j` at `t_j = j·h`, `j = 0..=J`, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryGrid {
    step: f64,
    dim: usize,
    times: Vec<f64>,
    states: Vec<f64>,
}

impl TrajectoryGrid {
    pub(crate) fn with_capacity(step: f64, dim: usize, intervals: usize) -> Self {
        TrajectoryGrid {
            step,
            dim,
            times: Vec::with_capacity(intervals + 1),
            states: Vec::with_capacity((intervals + 1) * dim),
        }
    }

    pub(crate) fn push(&mut self, t: f64, state: &[f64]) {
        debug_assert_eq!(state.len(), self.dim);
        self.times.push(t);
        self.states.extend_from_slice(state);
    }

    /// Builds a grid from explicit states, e.g. a recorded GD trajectory.
    pub fn from_states(step: f64, states: &[Vec<f64>]) -> Result<Self> {
        let dim = states.first().map_or(0, Vec::len);
        if dim == 0 || step.is_nan() || step <= 0.0 {
            return Err(Error::config(
                "trajectory grid needs states and a positive step",
            ));
        }
        let mut grid = TrajectoryGrid::with_capacity(step, dim, states.len() - 1);
        for (j, s) in states.iter().enumerate() {
            check_dim("trajectory state", dim, s.len())?;
            crate::error::check_finite("trajectory state", s)?;
            grid.push(j as f64 * step, s);
        }
        Ok(grid)
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `J`, the number of intervals.
    pub fn intervals(&self) -> usize {
        self.times.len().saturating_sub(1)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn state(&self, j: usize) -> &[f64] {
        &self.states[j * self.dim..(j + 1) * self.dim]
    }

    pub fn last(&self) -> &[f64] {
        self.state(self.intervals())
    }

    /// Floats held by the stored trajectory, `(J+1)·d`.
    pub fn stored_floats(&self) -> usize {
        self.states.len()
    }

    /// Writes `t,idx,value`, one row per state component.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,idx,value")?;
        for (j, t) in self.times.iter().enumerate() {
            for (i, v) in self.state(j).iter().enumerate() {
                writeln!(w, "{t},{i},{v}")?;
            }
        }
        Ok(())
    }
}

/// Work done by one forward solve.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForwardStats {
    pub rhs_evals: usize,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    /// Length-`d` work vectors the integrator keeps alive besides the grid.
    pub workspace_vectors: usize,
}

#[derive(Debug, Clone)]
pub struct ForwardSolve {
    pub grid: TrajectoryGrid,
    pub stats: ForwardStats,
}
