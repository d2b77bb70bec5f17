//! Small dense-block SDP kernel: minimize `c^T x` subject to affine LMI
//! blocks `F0 + sum_i x_i Fi >= 0` and scalar affine inequalities. Backed by
//! a primal-dual interior-point conic solver.

use crate::error::{Error, Result};
use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::DMatrix;

/// One linear-matrix-inequality block `F(x) = f0 + sum x_i * fi >= 0`.
/// `coeffs` pairs a variable index with its (symmetric) coefficient matrix.
#[derive(Debug, Clone)]
pub struct LmiBlock {
    pub f0: DMatrix<f64>,
    pub coeffs: Vec<(usize, DMatrix<f64>)>,
}

/// Scalar inequality `constant + sum coef_i * x_i >= 0`.
#[derive(Debug, Clone)]
pub struct ScalarIneq {
    pub constant: f64,
    pub coeffs: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct SdpProblem {
    pub n_vars: usize,
    /// Objective vector `c` (minimized).
    pub objective: Vec<f64>,
    pub lmi_blocks: Vec<LmiBlock>,
    pub scalar_ineqs: Vec<ScalarIneq>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    /// Iteration cap hit; the returned iterate is the best available.
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub status: SdpStatus,
}

fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Scaled upper-triangle vectorization matching the solver's PSD cone layout.
fn mat_to_svec(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let sqrt2 = std::f64::consts::SQRT_2;
    let mut v = Vec::with_capacity(svec_len(n));
    for col in 0..n {
        for row in 0..=col {
            if row == col {
                v.push(m[(row, col)]);
            } else {
                v.push(0.5 * (m[(row, col)] + m[(col, row)]) * sqrt2);
            }
        }
    }
    v
}

/// Default interior-point iteration cap.
pub const DEFAULT_MAX_ITER: u32 = 200;

/// Solve the SDP with the given relative duality-gap tolerance.
pub fn solve_sdp(p: &SdpProblem, tol: f64) -> Result<SdpSolution> {
    if p.objective.len() != p.n_vars {
        return Err(Error::DimensionMismatch(
            "objective length != n_vars".into(),
        ));
    }

    // Constraint layout: nonnegative rows first, then PSD triangle blocks.
    // Clarabel form: A x + s = b, s in K, with s = b - A x.
    let mut rows_i: Vec<usize> = Vec::new();
    let mut cols_j: Vec<usize> = Vec::new();
    let mut vals: Vec<f64> = Vec::new();
    let mut b: Vec<f64> = Vec::new();
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
    let mut row = 0usize;

    if !p.scalar_ineqs.is_empty() {
        for ineq in &p.scalar_ineqs {
            b.push(ineq.constant);
            for &(var, coef) in &ineq.coeffs {
                if var >= p.n_vars {
                    return Err(Error::DimensionMismatch("variable index out of range".into()));
                }
                if coef != 0.0 {
                    rows_i.push(row);
                    cols_j.push(var);
                    vals.push(-coef);
                }
            }
            row += 1;
        }
        cones.push(SupportedConeT::NonnegativeConeT(p.scalar_ineqs.len()));
    }

    for blk in &p.lmi_blocks {
        let n = blk.f0.nrows();
        if blk.f0.ncols() != n {
            return Err(Error::DimensionMismatch("LMI block not square".into()));
        }
        b.extend(mat_to_svec(&blk.f0));
        for (var, fi) in &blk.coeffs {
            if *var >= p.n_vars || fi.nrows() != n || fi.ncols() != n {
                return Err(Error::DimensionMismatch("bad LMI coefficient".into()));
            }
            for (k, v) in mat_to_svec(fi).into_iter().enumerate() {
                if v != 0.0 {
                    rows_i.push(row + k);
                    cols_j.push(*var);
                    vals.push(-v);
                }
            }
        }
        row += svec_len(n);
        cones.push(SupportedConeT::PSDTriangleConeT(n));
    }

    let a = CscMatrix::new_from_triplets(row, p.n_vars, rows_i, cols_j, vals);
    let pmat = CscMatrix::<f64>::zeros((p.n_vars, p.n_vars));

    let settings = DefaultSettings {
        verbose: false,
        max_iter: DEFAULT_MAX_ITER,
        tol_gap_rel: tol,
        tol_gap_abs: tol,
        ..DefaultSettings::default()
    };
    let mut solver = DefaultSolver::new(&pmat, &p.objective, &a, &b, &cones, settings);
    solver.solve();

    let status = match solver.solution.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => SdpStatus::Optimal,
        SolverStatus::MaxIterations | SolverStatus::MaxTime | SolverStatus::InsufficientProgress => {
            SdpStatus::MaxIter
        }
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            SdpStatus::Infeasible
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SdpStatus::Infeasible,
        other => return Err(Error::SolverFailure(format!("{other:?}"))),
    };

    Ok(SdpSolution {
        x: solver.solution.x.clone(),
        objective: solver.solution.obj_val,
        status,
    })
}
