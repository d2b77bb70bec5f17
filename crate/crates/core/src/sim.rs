//! Time-domain verification: linear and nonlinear step responses and the
//! scalar metrics used to compare tuned controllers.

use crate::error::{Error, Result};
use crate::gridmodel::{CoupledGrid, OperatingPoint};
use crate::lti::StateSpace;
use nalgebra::{DMatrix, DVector};

/// Default integration step (s).
pub const DEFAULT_DT: f64 = 1e-3;

/// Sampled multi-output trajectory; `y[(k, i)]` is output `i` at `t[k]`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub y: DMatrix<f64>,
}

impl Trajectory {
    pub fn n_outputs(&self) -> usize {
        self.y.ncols()
    }

    pub fn output(&self, i: usize) -> DVector<f64> {
        self.y.column(i).into_owned()
    }
}

/// Step response of a linear model from zero initial state: the input jumps
/// from zero to `w` at t = 0. Classic fourth-order Runge-Kutta with a fixed
/// step.
pub fn step_response_linear(
    sys: &StateSpace,
    w: &DVector<f64>,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory> {
    if w.len() != sys.n_inputs() {
        return Err(Error::DimensionMismatch(
            "step amplitude does not match the input count".into(),
        ));
    }
    if !(dt > 0.0 && t_end > 0.0) {
        return Err(Error::InvalidModel("time step and horizon must be positive".into()));
    }
    let n_steps = (t_end / dt).round() as usize;
    let bw = &sys.b * w;
    let dw = &sys.d * w;
    let mut x = DVector::<f64>::zeros(sys.n_states());
    let mut t = Vec::with_capacity(n_steps + 1);
    let mut y = DMatrix::<f64>::zeros(n_steps + 1, sys.n_outputs());
    let deriv = |x: &DVector<f64>| &sys.a * x + &bw;
    for k in 0..=n_steps {
        t.push(k as f64 * dt);
        let yk = &sys.c * &x + &dw;
        y.row_mut(k).copy_from(&yk.transpose());
        if k < n_steps {
            let k1 = deriv(&x);
            let k2 = deriv(&(&x + &k1 * (dt / 2.0)));
            let k3 = deriv(&(&x + &k2 * (dt / 2.0)));
            let k4 = deriv(&(&x + &k3 * dt));
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        }
    }
    Ok(Trajectory { t, y })
}

const ALG_TOL: f64 = 1e-10;
const ALG_MAX_ITER: usize = 30;

fn solve_algebraic(
    grid: &CoupledGrid,
    x: &DVector<f64>,
    z0: &DVector<f64>,
    w: &DVector<f64>,
    t: f64,
) -> Result<DVector<f64>> {
    let mut z = z0.clone();
    for _ in 0..ALG_MAX_ITER {
        let r = grid.algebraic_residual(x, &z, w);
        let rn = r.amax();
        if rn < ALG_TOL {
            return Ok(z);
        }
        let hz = grid.algebraic_jacobian(x, &z);
        let step = hz.lu().solve(&(-r)).ok_or(Error::AlgebraicNewtonFailure {
            t,
            residual: rn,
        })?;
        z += step;
    }
    let rn = grid.algebraic_residual(x, &z, w).amax();
    Err(Error::AlgebraicNewtonFailure { t, residual: rn })
}

/// Nonlinear step response of the coupled grid around an operating point:
/// the disturbance inputs jump from zero to `w` at t = 0. Differential
/// states advance by Runge-Kutta while the network equations are re-solved
/// by Newton at every stage. Outputs are the filtered inverter frequency
/// deviations, matching the linearized model.
pub fn simulate_nonlinear(
    grid: &CoupledGrid,
    op: &OperatingPoint,
    w: &DVector<f64>,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory> {
    if w.len() != grid.n_inputs() {
        return Err(Error::DimensionMismatch(
            "step amplitude does not match the disturbance count".into(),
        ));
    }
    let (mut x, mut z) = grid.equilibrium_vectors(op);
    let n_steps = (t_end / dt).round() as usize;
    let n_inv = grid.droop.len();
    let mut t = Vec::with_capacity(n_steps + 1);
    let mut y = DMatrix::<f64>::zeros(n_steps + 1, n_inv);
    for k in 0..=n_steps {
        let tk = k as f64 * dt;
        t.push(tk);
        for i in 0..n_inv {
            y[(k, i)] = x[3 * i] - op.omega_ss;
        }
        if k < n_steps {
            // Partitioned RK4: each stage re-solves the algebraic network.
            let stage = |xs: &DVector<f64>, zg: &DVector<f64>| -> Result<(DVector<f64>, DVector<f64>)> {
                let zs = solve_algebraic(grid, xs, zg, w, tk)?;
                Ok((grid.state_derivative(xs, &zs, op.omega_ss), zs))
            };
            let (k1, z1) = stage(&x, &z)?;
            let (k2, z2) = stage(&(&x + &k1 * (dt / 2.0)), &z1)?;
            let (k3, z3) = stage(&(&x + &k2 * (dt / 2.0)), &z2)?;
            let (k4, z4) = stage(&(&x + &k3 * dt), &z3)?;
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
            z = z4;
        }
    }
    Ok(Trajectory { t, y })
}

/// Scalar characterization of one output channel of a step response.
#[derive(Debug, Clone, Copy)]
pub struct ResponseMetrics {
    pub final_value: f64,
    /// Peak deviation beyond the final value, relative to the step size.
    pub overshoot: f64,
    /// Last time the response leaves the two-percent band around the final
    /// value.
    pub settling_time: f64,
    /// Integrated squared deviation from the final value after the first
    /// peak.
    pub oscillation_energy: f64,
}

/// Fraction of the trajectory tail used to estimate the steady state.
const TAIL_FRACTION: f64 = 0.1;
const SETTLE_BAND: f64 = 0.02;

/// Characterize one output channel; errors with `NoSteadyState` when the
/// trajectory tail still drifts by more than two percent of the step size.
pub fn response_metrics(traj: &Trajectory, output: usize) -> Result<ResponseMetrics> {
    let y = traj.output(output);
    let n = y.len();
    if n < 10 {
        return Err(Error::InvalidModel("trajectory too short for metrics".into()));
    }
    let tail_start = ((n as f64) * (1.0 - TAIL_FRACTION)) as usize;
    let tail = y.rows(tail_start, n - tail_start);
    let final_value = tail.mean();
    let initial = y[0];
    let step = (final_value - initial).abs();
    let scale = step.max(final_value.abs()).max(1e-12);
    let drift = tail.max() - tail.min();
    if drift > SETTLE_BAND * scale {
        return Err(Error::NoSteadyState);
    }

    // First local extremum of the deviation from final value.
    let dev: Vec<f64> = y.iter().map(|v| v - final_value).collect();
    let mut first_peak = n - 1;
    for k in 1..n - 1 {
        if dev[k].abs() >= dev[k - 1].abs() && dev[k].abs() > dev[k + 1].abs() {
            first_peak = k;
            break;
        }
    }

    // Overshoot: worst excursion past the final value in the direction of
    // the step, relative to the step size.
    let overshoot = if step > 1e-12 {
        let dir = (final_value - initial).signum();
        let worst = y
            .iter()
            .skip(1)
            .fold(f64::NEG_INFINITY, |m, &v| m.max(dir * (v - final_value)));
        (worst / step).max(0.0)
    } else {
        0.0
    };

    let band = SETTLE_BAND * scale;
    let mut settling_time = 0.0;
    for k in (0..n).rev() {
        if dev[k].abs() > band {
            settling_time = traj.t[(k + 1).min(n - 1)];
            break;
        }
    }

    let dt = traj.t[1] - traj.t[0];
    let oscillation_energy: f64 = dev[first_peak..].iter().map(|d| d * d * dt).sum();

    Ok(ResponseMetrics {
        final_value,
        overshoot,
        settling_time,
        oscillation_energy,
    })
}
