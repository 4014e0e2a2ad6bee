//! Adaptive Dormand-Prince 4(5) solver with dense output.
//!
//! Used only to generate ground truth and to score recovered trajectories;
//! inference itself never calls a numerical solver.

use crate::error::{Error, Result};
use crate::models::OdeSystem;

#[derive(Debug, Clone)]
pub struct SolveConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_steps: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            abs_tol: 1e-8,
            max_steps: 100_000,
        }
    }
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// Error coefficients: 5th-order weights minus the embedded 4th-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
// Dense-output coefficients.
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

struct DenseSegment {
    t_old: f64,
    h: f64,
    cont: [Vec<f64>; 5],
}

impl DenseSegment {
    fn eval(&self, t: f64, out: &mut [f64]) {
        let theta = (t - self.t_old) / self.h;
        let theta1 = 1.0 - theta;
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.cont[0][i]
                + theta
                    * (self.cont[1][i]
                        + theta1
                            * (self.cont[2][i]
                                + theta * (self.cont[3][i] + theta1 * self.cont[4][i])));
        }
    }
}

/// Integrate the system from `grid[0]` and return states at every grid time
/// (rows = grid points, row-major with `dim_state` entries per row).
pub fn solve(
    model: &dyn OdeSystem,
    theta: &[f64],
    x0: &[f64],
    grid: &[f64],
    config: &SolveConfig,
) -> Result<Vec<Vec<f64>>> {
    if grid.is_empty() {
        return Ok(Vec::new());
    }
    for w in grid.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidConfig(
                "output grid must be strictly increasing".into(),
            ));
        }
    }
    let dim = model.dim_state();
    let t0 = grid[0];
    let t_end = *grid.last().unwrap();
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(grid.len());
    out.push(x0.to_vec());
    if grid.len() == 1 {
        return Ok(out);
    }

    let mut t = t0;
    let mut y = x0.to_vec();
    let mut k: [Vec<f64>; 7] = std::array::from_fn(|_| vec![0.0; dim]);
    model.f(&y, theta, t, &mut k[0]);

    let mut h = initial_step(model, theta, &y, &k[0], t, t_end, config);
    let mut y_stage = vec![0.0; dim];
    let mut y_new = vec![0.0; dim];
    let mut grid_idx = 1usize;
    let mut facold: f64 = 1e-4;
    const SAFE: f64 = 0.9;
    const BETA: f64 = 0.04;
    const EXPO1: f64 = 0.2 - BETA * 0.75;
    const FAC_MIN: f64 = 0.2; // max shrink per step
    const FAC_MAX: f64 = 10.0; // max growth per step

    let mut steps = 0usize;
    while t < t_end {
        if steps >= config.max_steps {
            return Err(Error::StepLimit {
                max_steps: config.max_steps,
                last_time: t,
            });
        }
        steps += 1;
        if t + h > t_end {
            h = t_end - t;
        }

        for s in 1..7 {
            for i in 0..dim {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += A[s][j] * kj[i];
                }
                y_stage[i] = y[i] + h * acc;
            }
            model.f(&y_stage, theta, t + C[s] * h, &mut k[s]);
        }
        // Stage 7 evaluates at the 5th-order solution (FSAL).
        y_new.copy_from_slice(&y_stage);

        let mut err = 0.0;
        for i in 0..dim {
            let mut e = 0.0;
            for (j, kj) in k.iter().enumerate() {
                e += E[j] * kj[i];
            }
            e *= h;
            let sc = config.abs_tol + config.rel_tol * y[i].abs().max(y_new[i].abs());
            err += (e / sc) * (e / sc);
        }
        err = (err / dim as f64).sqrt();
        if !err.is_finite() {
            err = 2.0; // force rejection and shrink on overflow
        }

        let fac11 = err.powf(EXPO1);
        if err <= 1.0 {
            let fac = (fac11 / facold.powf(BETA) / SAFE).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            facold = err.max(1e-4);
            // Dense output for grid points inside this step.
            if grid_idx < grid.len() && grid[grid_idx] <= t + h {
                let seg = dense_segment(&y, &y_new, &k, h).with_origin(t);
                while grid_idx < grid.len() && grid[grid_idx] <= t + h + 1e-14 * h.abs() {
                    let mut row = vec![0.0; dim];
                    seg.eval(grid[grid_idx].min(t + h), &mut row);
                    out.push(row);
                    grid_idx += 1;
                }
            }
            t += h;
            std::mem::swap(&mut y, &mut y_new);
            // FSAL: the last stage is f at the accepted point.
            let (head, tail) = k.split_at_mut(6);
            head[0].copy_from_slice(&tail[0]);
            if !y.iter().all(|v| v.is_finite()) {
                return Err(Error::StepLimit {
                    max_steps: config.max_steps,
                    last_time: t,
                });
            }
            h /= fac;
        } else {
            h /= (fac11 / SAFE).min(1.0 / FAC_MIN);
        }
        if h.abs() < 1e-14 * t.abs().max(1.0) {
            return Err(Error::StepLimit {
                max_steps: config.max_steps,
                last_time: t,
            });
        }
    }
    // Endpoint may remain if it fell exactly on the last step boundary.
    while grid_idx < grid.len() {
        out.push(y.clone());
        grid_idx += 1;
    }
    Ok(out)
}

fn dense_segment(y: &[f64], y_new: &[f64], k: &[Vec<f64>; 7], h: f64) -> DenseSegment {
    let dim = y.len();
    let mut cont: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; dim]);
    for i in 0..dim {
        let ydiff = y_new[i] - y[i];
        let bspl = h * k[0][i] - ydiff;
        cont[0][i] = y[i];
        cont[1][i] = ydiff;
        cont[2][i] = bspl;
        cont[3][i] = ydiff - h * k[6][i] - bspl;
        let mut acc = 0.0;
        for (j, kj) in k.iter().enumerate() {
            acc += D[j] * kj[i];
        }
        cont[4][i] = h * acc;
    }
    DenseSegment {
        t_old: 0.0,
        h,
        cont,
    }
}

impl DenseSegment {
    fn with_origin(mut self, t_old: f64) -> Self {
        self.t_old = t_old;
        self
    }
}

fn initial_step(
    model: &dyn OdeSystem,
    theta: &[f64],
    y: &[f64],
    f0: &[f64],
    t: f64,
    t_end: f64,
    config: &SolveConfig,
) -> f64 {
    let dim = y.len();
    let sc: Vec<f64> = y
        .iter()
        .map(|&v| config.abs_tol + config.rel_tol * v.abs())
        .collect();
    let d0 = (y.iter().zip(&sc).map(|(v, s)| (v / s) * (v / s)).sum::<f64>() / dim as f64).sqrt();
    let d1 = (f0.iter().zip(&sc).map(|(v, s)| (v / s) * (v / s)).sum::<f64>() / dim as f64).sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let h0 = h0.min(t_end - t);
    // One explicit Euler probe to estimate the second derivative scale.
    let y1: Vec<f64> = y.iter().zip(f0).map(|(v, f)| v + h0 * f).collect();
    let mut f1 = vec![0.0; dim];
    model.f(&y1, theta, t + h0, &mut f1);
    let d2 = (f1
        .iter()
        .zip(f0)
        .zip(&sc)
        .map(|((a, b), s)| ((a - b) / s) * ((a - b) / s))
        .sum::<f64>()
        / dim as f64)
        .sqrt()
        / h0;
    let max_d = d1.max(d2);
    let h1 = if max_d <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / max_d).powf(0.2)
    };
    (100.0 * h0).min(h1).min(t_end - t)
}

/// Per-component and total trajectory discrepancy
/// `sqrt(integral of (x_rec - x_true)^2 dt)` on a uniform grid, with the
/// integral taken as a Riemann sum.
#[derive(Debug, Clone)]
pub struct TrajectoryRmse {
    pub per_component: Vec<f64>,
    pub total: f64,
    /// Set when the reconstructed trajectory blew up; RMSEs are +inf.
    pub blew_up: bool,
}

pub fn trajectory_rmse(
    model: &dyn OdeSystem,
    theta_rec: &[f64],
    x0_rec: &[f64],
    theta_true: &[f64],
    x0_true: &[f64],
    interval: (f64, f64),
    n_grid: usize,
) -> Result<TrajectoryRmse> {
    if n_grid < 100 {
        return Err(Error::InvalidConfig("n_grid must be at least 100".into()));
    }
    let dim = model.dim_state();
    let (lo, hi) = interval;
    let grid: Vec<f64> = (0..n_grid)
        .map(|g| lo + (hi - lo) * g as f64 / (n_grid - 1) as f64)
        .collect();
    let config = SolveConfig::default();
    let truth = solve(model, theta_true, x0_true, &grid, &config)?;
    let rec = match solve(model, theta_rec, x0_rec, &grid, &config) {
        Ok(r) => r,
        Err(Error::StepLimit { .. }) => {
            return Ok(TrajectoryRmse {
                per_component: vec![f64::INFINITY; dim],
                total: f64::INFINITY,
                blew_up: true,
            });
        }
        Err(e) => return Err(e),
    };
    let dt = (hi - lo) / (n_grid - 1) as f64;
    let mut sq = vec![0.0; dim];
    for g in 0..n_grid - 1 {
        for i in 0..dim {
            let d = rec[g][i] - truth[g][i];
            sq[i] += d * d * dt;
        }
    }
    let total = sq.iter().sum::<f64>().sqrt();
    Ok(TrajectoryRmse {
        per_component: sq.iter().map(|v| v.sqrt()).collect(),
        total,
        blew_up: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{fn_model, lv_model, FiniteDiffJacobians, OdeSystem};
    use approx::assert_relative_eq;

    fn scalar_exp() -> FiniteDiffJacobians<impl Fn(&[f64], &[f64], f64, &mut [f64]) + Send + Sync>
    {
        FiniteDiffJacobians {
            name: "exp".into(),
            dim_state: 1,
            dim_params: 0,
            f: |x: &[f64], _: &[f64], _: f64, out: &mut [f64]| out[0] = x[0],
            param_positive: vec![],
            poly_degree: 1,
        }
    }

    #[test]
    fn exponential_solution_to_high_accuracy() {
        let model = scalar_exp();
        let grid = [0.0, 0.25, 0.5, 1.0];
        let config = SolveConfig {
            rel_tol: 1e-10,
            abs_tol: 1e-10,
            max_steps: 100_000,
        };
        let traj = solve(&model, &[], &[1.0], &grid, &config).unwrap();
        for (g, &t) in grid.iter().enumerate() {
            assert_relative_eq!(traj[g][0], t.exp(), max_relative = 1e-8);
        }
    }

    #[test]
    fn zero_field_is_constant() {
        let model = FiniteDiffJacobians {
            name: "zero".into(),
            dim_state: 2,
            dim_params: 0,
            f: |_: &[f64], _: &[f64], _: f64, out: &mut [f64]| out.fill(0.0),
            param_positive: vec![],
            poly_degree: 1,
        };
        let grid: Vec<f64> = (0..11).map(|i| i as f64).collect();
        let traj = solve(&model, &[], &[3.0, -4.0], &grid, &SolveConfig::default()).unwrap();
        for row in traj {
            assert_eq!(row, vec![3.0, -4.0]);
        }
    }

    #[test]
    fn lv_equilibrium_stays_fixed() {
        let model = lv_model();
        let grid: Vec<f64> = (0..21).map(|i| i as f64).collect();
        let traj = solve(
            model.as_ref(),
            &[1.0, 1.0, 1.0, 1.0],
            &[1.0, 1.0],
            &grid,
            &SolveConfig::default(),
        )
        .unwrap();
        for row in traj {
            assert_relative_eq!(row[0], 1.0, epsilon = 1e-7);
            assert_relative_eq!(row[1], 1.0, epsilon = 1e-7);
        }
    }

    #[test]
    fn tolerance_halving_shows_high_order() {
        let model = scalar_exp();
        let grid = [0.0, 1.0];
        let mut errs = Vec::new();
        for tol in [1e-6, 1e-8, 1e-10] {
            let config = SolveConfig {
                rel_tol: tol,
                abs_tol: tol,
                max_steps: 100_000,
            };
            let traj = solve(&model, &[], &[1.0], &grid, &config).unwrap();
            errs.push((traj[1][0] - 1f64.exp()).abs());
        }
        // Error should fall at least proportionally with the tolerance.
        assert!(errs[1] < errs[0].max(1e-15));
        assert!(errs[2] <= errs[1].max(1e-13));
        assert!(errs[2] < 1e-9);
    }

    #[test]
    fn identical_parameters_give_zero_rmse() {
        let model = fn_model();
        let theta = [0.2, 0.2, 3.0];
        let x0 = [-1.0, 1.0];
        let r = trajectory_rmse(
            model.as_ref(),
            &theta,
            &x0,
            &theta,
            &x0,
            (0.0, 20.0),
            2001,
        )
        .unwrap();
        assert!(!r.blew_up);
        assert!(r.total < 1e-6, "total {}", r.total);
    }

    #[test]
    fn rmse_is_symmetric() {
        let model = fn_model();
        let a = ([0.2, 0.2, 3.0], [-1.0, 1.0]);
        let b = ([0.25, 0.15, 2.8], [-0.9, 1.1]);
        let r_ab = trajectory_rmse(model.as_ref(), &a.0, &a.1, &b.0, &b.1, (0.0, 20.0), 501)
            .unwrap();
        let r_ba = trajectory_rmse(model.as_ref(), &b.0, &b.1, &a.0, &a.1, (0.0, 20.0), 501)
            .unwrap();
        assert_relative_eq!(r_ab.total, r_ba.total, max_relative = 1e-12);
    }

    #[test]
    fn blow_up_is_flagged_not_crashed() {
        let model = FiniteDiffJacobians {
            name: "blowup".into(),
            dim_state: 1,
            dim_params: 0,
            f: |x: &[f64], _: &[f64], _: f64, out: &mut [f64]| out[0] = x[0] * x[0],
            param_positive: vec![],
            poly_degree: 2,
        };
        // x' = x^2 from x(0)=1 blows up at t=1; truth from x(0)=-1 is fine.
        let r = trajectory_rmse(&model, &[], &[1.0], &[], &[-1.0], (0.0, 5.0), 200).unwrap();
        assert!(r.blew_up);
        assert!(r.total.is_infinite());
    }

    #[test]
    fn step_limit_is_reported() {
        let model = scalar_exp();
        let config = SolveConfig {
            rel_tol: 1e-12,
            abs_tol: 1e-12,
            max_steps: 3,
        };
        match solve(&model, &[], &[1.0], &[0.0, 100.0], &config) {
            Err(Error::StepLimit { last_time, .. }) => assert!(last_time < 100.0),
            other => panic!("expected step limit, got {other:?}"),
        }
    }
}
