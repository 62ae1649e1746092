use super::{ForwardSolve, ForwardStats, Method, SolverConfig, TrajectoryGrid, VectorField};
use crate::error::{check_dim, check_finite, Error, Result};

/// Integrates `du/dt = f(u)`, `u(0) = u0` over `[0, T]` and returns the
/// states on the uniform `h`-grid.
pub fn solve_forward<V: VectorField>(
    field: &V,
    u0: &[f64],
    cfg: &SolverConfig,
) -> Result<ForwardSolve> {
    cfg.validate()?;
    check_dim("initial state", field.dim(), u0.len())?;
    check_finite("initial state", u0)?;
    let intervals = cfg.grid_intervals()?;
    match cfg.method {
        Method::ForwardEuler => euler(field, u0, cfg.grid_step, intervals),
        Method::Rk4 => rk4(field, u0, cfg.grid_step, intervals),
        Method::Rk45 => dopri5(field, u0, cfg, intervals),
    }
}

fn grid_time(j: usize, h: f64) -> f64 {
    j as f64 * h
}

fn euler<V: VectorField>(field: &V, u0: &[f64], h: f64, intervals: usize) -> Result<ForwardSolve> {
    let d = u0.len();
    let mut grid = TrajectoryGrid::with_capacity(h, d, intervals);
    let mut y = u0.to_vec();
    let mut k = vec![0.0; d];
    grid.push(0.0, &y);
    for j in 1..=intervals {
        field.eval(&y, &mut k)?;
        for (yi, ki) in y.iter_mut().zip(&k) {
            *yi += h * ki;
        }
        check_finite("state", &y)?;
        grid.push(grid_time(j, h), &y);
    }
    Ok(ForwardSolve {
        grid,
        stats: ForwardStats {
            rhs_evals: intervals,
            accepted_steps: intervals,
            rejected_steps: 0,
            workspace_vectors: 2,
        },
    })
}

fn rk4<V: VectorField>(field: &V, u0: &[f64], h: f64, intervals: usize) -> Result<ForwardSolve> {
    let d = u0.len();
    let mut grid = TrajectoryGrid::with_capacity(h, d, intervals);
    let mut y = u0.to_vec();
    let mut tmp = vec![0.0; d];
    let [mut k1, mut k2, mut k3, mut k4] = std::array::from_fn(|_| vec![0.0; d]);
    grid.push(0.0, &y);
    for j in 1..=intervals {
        field.eval(&y, &mut k1)?;
        axpy_into(&mut tmp, &y, 0.5 * h, &k1);
        field.eval(&tmp, &mut k2)?;
        axpy_into(&mut tmp, &y, 0.5 * h, &k2);
        field.eval(&tmp, &mut k3)?;
        axpy_into(&mut tmp, &y, h, &k3);
        field.eval(&tmp, &mut k4)?;
        for i in 0..d {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        check_finite("state", &y)?;
        grid.push(grid_time(j, h), &y);
    }
    Ok(ForwardSolve {
        grid,
        stats: ForwardStats {
            rhs_evals: 4 * intervals,
            accepted_steps: intervals,
            rejected_steps: 0,
            workspace_vectors: 6,
        },
    })
}

fn axpy_into(out: &mut [f64], y: &[f64], a: f64, x: &[f64]) {
    for ((o, yi), xi) in out.iter_mut().zip(y).zip(x) {
        *o = yi + a * xi;
    }
}

// Dormand–Prince 5(4) tableau.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
// 5th minus embedded 4th order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Continuous extension (4th order).
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

struct Stages {
    k: [Vec<f64>; 7],
}

impl Stages {
    /// Dense output at fraction `s ∈ [0, 1]` of the step `y → y_new`.
    fn interpolate<'a>(
        &'a self,
        y: &'a [f64],
        y_new: &'a [f64],
        h: f64,
        s: f64,
    ) -> impl Iterator<Item = f64> + 'a {
        let [k1, _, k3, k4, k5, k6, k7] = &self.k;
        let s1 = 1.0 - s;
        (0..y.len()).map(move |i| {
            let ydiff = y_new[i] - y[i];
            let bspl = h * k1[i] - ydiff;
            let r4 = ydiff - h * k7[i] - bspl;
            let r5 =
                h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
            y[i] + s * (ydiff + s1 * (bspl + s * (r4 + s1 * r5)))
        })
    }
}

fn dopri5<V: VectorField>(
    field: &V,
    u0: &[f64],
    cfg: &SolverConfig,
    intervals: usize,
) -> Result<ForwardSolve> {
    let d = u0.len();
    let t_end = cfg.horizon;
    let h_grid = cfg.grid_step;
    let (rtol, atol) = (cfg.rtol, cfg.atol);

    let mut grid = TrajectoryGrid::with_capacity(h_grid, d, intervals);
    let mut stats = ForwardStats {
        workspace_vectors: 9,
        ..ForwardStats::default()
    };
    let mut y = u0.to_vec();
    // Stage arguments are assembled in `y_new`; its final content is the
    // 5th-order solution.
    let mut y_new = vec![0.0; d];
    let mut st = Stages {
        k: std::array::from_fn(|_| vec![0.0; d]),
    };

    grid.push(0.0, &y);
    let mut next = 1;

    field.eval(&y, &mut st.k[0])?;
    stats.rhs_evals += 1;

    let scale = |a: f64, b: f64| atol + rtol * a.abs().max(b.abs());

    // Initial step (Hairer–Wanner heuristic).
    let mut h = {
        let rms =
            |v: &mut dyn Iterator<Item = f64>| (v.map(|x| x * x).sum::<f64>() / d as f64).sqrt();
        let d0 = rms(&mut y.iter().map(|&yi| yi / scale(yi, yi)));
        let d1 = rms(&mut y.iter().zip(&st.k[0]).map(|(&yi, fi)| fi / scale(yi, yi)));
        let h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        let h0 = h0.min(t_end);
        axpy_into(&mut y_new, &y, h0, &st.k[0]);
        let (head, tail) = st.k.split_at_mut(1);
        field.eval(&y_new, &mut tail[0])?;
        stats.rhs_evals += 1;
        let d2 = rms(&mut (0..d).map(|i| (tail[0][i] - head[0][i]) / scale(y[i], y[i]))) / h0;
        let m = d1.max(d2);
        let h1 = if m <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / m).powf(0.2)
        };
        (100.0 * h0).min(h1).min(t_end)
    };

    let mut t = 0.0;
    let mut last_rejected = false;
    while t < t_end {
        let last = t + h >= t_end * (1.0 - 1e-12);
        if last {
            h = t_end - t;
        }
        if h <= 1e-14 * t_end.max(1.0) {
            return Err(Error::StepUnderflow { time: t, step: h });
        }

        stage(&mut y_new, &y, h, &[(A21, &st.k[0])]);
        eval_stage(field, &y_new, &mut st.k, 1)?;
        stage(&mut y_new, &y, h, &[(A31, &st.k[0]), (A32, &st.k[1])]);
        eval_stage(field, &y_new, &mut st.k, 2)?;
        stage(
            &mut y_new,
            &y,
            h,
            &[(A41, &st.k[0]), (A42, &st.k[1]), (A43, &st.k[2])],
        );
        eval_stage(field, &y_new, &mut st.k, 3)?;
        stage(
            &mut y_new,
            &y,
            h,
            &[
                (A51, &st.k[0]),
                (A52, &st.k[1]),
                (A53, &st.k[2]),
                (A54, &st.k[3]),
            ],
        );
        eval_stage(field, &y_new, &mut st.k, 4)?;
        stage(
            &mut y_new,
            &y,
            h,
            &[
                (A61, &st.k[0]),
                (A62, &st.k[1]),
                (A63, &st.k[2]),
                (A64, &st.k[3]),
                (A65, &st.k[4]),
            ],
        );
        eval_stage(field, &y_new, &mut st.k, 5)?;
        stage(
            &mut y_new,
            &y,
            h,
            &[
                (A71, &st.k[0]),
                (A73, &st.k[2]),
                (A74, &st.k[3]),
                (A75, &st.k[4]),
                (A76, &st.k[5]),
            ],
        );
        eval_stage(field, &y_new, &mut st.k, 6)?;
        stats.rhs_evals += 6;

        let [k1, _, k3, k4, k5, k6, k7] = &st.k;
        let err = ((0..d)
            .map(|i| {
                let e = h
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                (e / scale(y[i], y_new[i])).powi(2)
            })
            .sum::<f64>()
            / d as f64)
            .sqrt();
        if !err.is_finite() {
            return Err(Error::non_finite(
                format!("local error estimate at t={t:.6e}"),
                err,
            ));
        }

        if err <= 1.0 {
            check_finite("state", &y_new)?;
            let t_new = if last { t_end } else { t + h };
            while next <= intervals {
                let tj = if next == intervals {
                    t_end
                } else {
                    grid_time(next, h_grid)
                };
                if tj > t_new + 1e-12 * t_end {
                    break;
                }
                if next == intervals || (tj - t_new).abs() <= 1e-12 * t_end {
                    grid.push(tj, &y_new);
                } else {
                    let s = (tj - t) / h;
                    grid.times.push(tj);
                    grid.states.extend(st.interpolate(&y, &y_new, h, s));
                }
                next += 1;
            }
            std::mem::swap(&mut y, &mut y_new);
            st.k.swap(0, 6);
            t = t_new;
            stats.accepted_steps += 1;
            let fac = (SAFETY * err.powf(-0.2)).clamp(FAC_MIN, FAC_MAX);
            h *= if last_rejected { fac.min(1.0) } else { fac };
            last_rejected = false;
        } else {
            stats.rejected_steps += 1;
            h *= (SAFETY * err.powf(-0.2)).clamp(FAC_MIN, 1.0);
            last_rejected = true;
        }
    }
    debug_assert_eq!(grid.intervals(), intervals);
    Ok(ForwardSolve { grid, stats })
}

fn stage(out: &mut [f64], y: &[f64], h: f64, terms: &[(f64, &Vec<f64>)]) {
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (a, k) in terms {
            acc += a * k[i];
        }
        *o = y[i] + h * acc;
    }
}

fn eval_stage<V: VectorField>(
    field: &V,
    arg: &[f64],
    k: &mut [Vec<f64>; 7],
    slot: usize,
) -> Result<()> {
    field.eval(arg, &mut k[slot])
}
