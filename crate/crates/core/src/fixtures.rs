//! Reference systems used by the test suites and the bundled demo
//! configuration: an analytic two-by-two benchmark plant and a small
//! droop-controlled microgrid.

use crate::blocks::DroopInverter;
use crate::error::{Error, Result};
use crate::gridmodel::{CoupledGrid, Line, Network, StaticProsumer};
use crate::lti::StateSpace;
use nalgebra::DMatrix;

/// Controllable-canonical realization of `num(s)/den(s)` with a monic
/// denominator; the numerator degree must be strictly smaller. Coefficients
/// ascending.
pub fn tf_to_ss(num: &[f64], den: &[f64]) -> Result<StateSpace> {
    let n = den.len() - 1;
    if n == 0 || num.len() > n {
        return Err(Error::InvalidModel(
            "transfer function must be strictly proper".into(),
        ));
    }
    let lead = den[n];
    if lead.abs() < 1e-300 {
        return Err(Error::InvalidModel("denominator leading coefficient is zero".into()));
    }
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n - 1 {
        a[(i, i + 1)] = 1.0;
    }
    for j in 0..n {
        a[(n - 1, j)] = -den[j] / lead;
    }
    let mut b = DMatrix::<f64>::zeros(n, 1);
    b[(n - 1, 0)] = 1.0 / lead;
    let mut c = DMatrix::<f64>::zeros(1, n);
    for (j, &cj) in num.iter().enumerate() {
        c[(0, j)] = cj;
    }
    StateSpace::new(a, b, c, DMatrix::zeros(1, 1))
}

/// Stack SISO realizations entry-wise into a MIMO system: `entries[i][j]`
/// is the channel from input `j` to output `i`.
pub fn assemble_mimo(entries: &[Vec<StateSpace>]) -> Result<StateSpace> {
    let ny = entries.len();
    let nw = entries[0].len();
    let n: usize = entries.iter().flatten().map(|s| s.n_states()).sum();
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut b = DMatrix::<f64>::zeros(n, nw);
    let mut c = DMatrix::<f64>::zeros(ny, n);
    let mut d = DMatrix::<f64>::zeros(ny, nw);
    let mut o = 0;
    for (i, row) in entries.iter().enumerate() {
        if row.len() != nw {
            return Err(Error::DimensionMismatch("ragged entry matrix".into()));
        }
        for (j, s) in row.iter().enumerate() {
            let ns = s.n_states();
            a.view_mut((o, o), (ns, ns)).copy_from(&s.a);
            b.view_mut((o, j), (ns, 1)).copy_from(&s.b);
            c.view_mut((i, o), (1, ns)).copy_from(&s.c);
            d[(i, j)] += s.d[(0, 0)];
            o += ns;
        }
    }
    StateSpace::new(a, b, c, d)
}

/// Nine-state two-input, two-output benchmark with analytically known
/// poles and frequency response:
///
/// ```text
/// G11 = (s + 2) / ((s + 1)(s + 3))
/// G12 = (s - 3) / (s^2 + 3 s + 3)
/// G21 = (s^2 + 4 s + 10) / ((s + 3)(s^2 + s + 1))
/// G22 = (s + 4) / ((s + 1)(s + 2))
/// ```
pub fn two_by_two_benchmark() -> StateSpace {
    let g11 = tf_to_ss(&[2.0, 1.0], &[3.0, 4.0, 1.0]).unwrap();
    let g12 = tf_to_ss(&[-3.0, 1.0], &[3.0, 3.0, 1.0]).unwrap();
    let g21 = tf_to_ss(&[10.0, 4.0, 1.0], &[3.0, 4.0, 4.0, 1.0]).unwrap();
    let g22 = tf_to_ss(&[4.0, 1.0], &[2.0, 3.0, 1.0]).unwrap();
    assemble_mimo(&[vec![g11, g12], vec![g21, g22]]).unwrap()
}

/// Distinct pole locations of [`two_by_two_benchmark`].
pub fn two_by_two_benchmark_poles() -> Vec<nalgebra::Complex<f64>> {
    let j = nalgebra::Complex::new(0.0, 1.0);
    let r32 = 3.0_f64.sqrt() / 2.0;
    vec![
        nalgebra::Complex::new(-1.0, 0.0),
        nalgebra::Complex::new(-2.0, 0.0),
        nalgebra::Complex::new(-3.0, 0.0),
        nalgebra::Complex::new(-1.5, 0.0) + j * r32,
        nalgebra::Complex::new(-1.5, 0.0) - j * r32,
        nalgebra::Complex::new(-0.5, 0.0) + j * r32,
        nalgebra::Complex::new(-0.5, 0.0) - j * r32,
    ]
}

/// Three-bus demonstration microgrid: two droop inverters feeding one
/// constant-power load bus whose (P, Q) deviations are the disturbance.
/// The initial droop settings are intentionally sluggish (high gain, slow
/// filters over lightly resistive lines) so that tuning has room to both
/// tighten the worst-case frequency deviation and damp the load-step
/// oscillation.
pub fn demo_microgrid() -> CoupledGrid {
    let net = Network::from_lines(
        3,
        &[Line::new(0, 2, 0.002, 0.08), Line::new(1, 2, 0.003, 0.10)],
    )
    .unwrap();
    let inv = DroopInverter::new(0.08, 0.031, 0.5, 0.5).unwrap();
    CoupledGrid::new(
        net,
        vec![(0, inv.clone()), (1, inv)],
        vec![(2, StaticProsumer { p: -0.6, q: -0.2 })],
        vec![2],
    )
    .unwrap()
}
