//! The convex trust-region subproblem: linearize the parameter dependency of
//! the frequency response around the previous iterate and minimize the bound
//! `gamma` subject to the sampled LMI constraints, box bounds, and trust
//! region.

pub mod sdp;

use crate::error::{Error, Result};
use crate::lti::{self, C64, FrequencyGrid, StateSpace};
use crate::param::ParamSystem;
use nalgebra::{Complex, DMatrix};
use sdp::{LmiBlock, ScalarIneq, SdpProblem, SdpStatus};

/// First-order model of `G(K, j omega)` around an anchor parameter vector:
/// base responses plus parameter sensitivities per sampled frequency.
#[derive(Debug, Clone)]
pub struct AffineResponseModel {
    pub anchor: Vec<f64>,
    pub omegas: Vec<f64>,
    /// `base[mu]` is `G(anchor, j omega_mu)`.
    pub base: Vec<DMatrix<C64>>,
    /// `sens[mu][i]` is `dG/dK_i` at `(anchor, j omega_mu)`.
    pub sens: Vec<Vec<DMatrix<C64>>>,
}

impl AffineResponseModel {
    /// Linearized response `G_L(K, j omega_mu)`.
    pub fn response_at(&self, mu: usize, k: &[f64]) -> DMatrix<C64> {
        let mut g = self.base[mu].clone();
        for (i, s) in self.sens[mu].iter().enumerate() {
            let dk = Complex::new(k[i] - self.anchor[i], 0.0);
            g += s * dk;
        }
        g
    }

    /// Max over frequencies of the linearized largest singular value.
    pub fn grid_sup(&self, k: &[f64]) -> f64 {
        (0..self.omegas.len())
            .map(|mu| lti::sigma_max_mat(&self.response_at(mu, k)))
            .fold(0.0, f64::max)
    }
}

/// Build the affine response model: base responses by direct evaluation,
/// sensitivities by central matrix differences propagated through the
/// resolvent identity.
pub fn linearize_response(
    sys: &ParamSystem,
    k_anchor: &[f64],
    grid: &FrequencyGrid,
) -> Result<AffineResponseModel> {
    sys.check_bounds(k_anchor)?;
    let base_sys = sys.realize_unchecked(k_anchor);
    let n_p = sys.n_params();

    // Central differences of the state-space matrices per parameter.
    let mut d_mats: Vec<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> =
        Vec::with_capacity(n_p);
    for i in 0..n_p {
        let h = (1e-6 * k_anchor[i].abs()).max(1e-8);
        let mut kp = k_anchor.to_vec();
        let mut km = k_anchor.to_vec();
        kp[i] += h;
        km[i] -= h;
        let sp = sys.realize_unchecked(&kp);
        let sm = sys.realize_unchecked(&km);
        let inv2h = 1.0 / (2.0 * h);
        d_mats.push((
            (&sp.a - &sm.a) * inv2h,
            (&sp.b - &sm.b) * inv2h,
            (&sp.c - &sm.c) * inv2h,
            (&sp.d - &sm.d) * inv2h,
        ));
    }

    let to_c = |m: &DMatrix<f64>| m.map(|x| C64::new(x, 0.0));
    let cc = to_c(&base_sys.c);
    let n = base_sys.n_states();

    let mut base = Vec::with_capacity(grid.len());
    let mut sens = Vec::with_capacity(grid.len());
    for omega in grid.iter() {
        if n == 0 {
            let g0 = to_c(&base_sys.d);
            let mut row = Vec::with_capacity(n_p);
            for (_, _, _, dd) in &d_mats {
                row.push(to_c(dd));
            }
            base.push(g0);
            sens.push(row);
            continue;
        }
        let mut m = DMatrix::<C64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = C64::new(-base_sys.a[(i, j)], 0.0);
            }
            m[(i, i)] += C64::new(0.0, omega);
        }
        let lu = m.lu();
        let diag = lu.u().map_diagonal(|x| x.norm());
        let (dmin, dmax) = diag
            .iter()
            .fold((f64::INFINITY, 0.0_f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if dmax <= 0.0 || dmin / dmax < 100.0 * f64::EPSILON {
            return Err(Error::SingularAtFrequency { omega });
        }
        // X = (jwI - A)^{-1} B
        let x = lu
            .solve(&to_c(&base_sys.b))
            .ok_or(Error::SingularAtFrequency { omega })?;
        let g0 = &cc * &x + to_c(&base_sys.d);

        let mut row = Vec::with_capacity(n_p);
        for (da, db, dc, dd) in &d_mats {
            // dG = C R (dA) R B + C R dB + dC R B + dD, with R = (jwI - A)^{-1}.
            // Note d(jwI - A)^{-1} = R dA R.
            let r_da_x = lu
                .solve(&(to_c(da) * &x))
                .ok_or(Error::SingularAtFrequency { omega })?;
            let r_db = lu
                .solve(&to_c(db))
                .ok_or(Error::SingularAtFrequency { omega })?;
            let dg = &cc * r_da_x + &cc * r_db + to_c(dc) * &x + to_c(dd);
            row.push(dg);
        }
        base.push(g0);
        sens.push(row);
    }

    Ok(AffineResponseModel {
        anchor: k_anchor.to_vec(),
        omegas: grid.iter().collect(),
        base,
        sens,
    })
}

/// Subproblem data: affine model(s), bounds, trust region, solver tolerance.
#[derive(Debug, Clone)]
pub struct SubproblemSpec<'a> {
    pub models: &'a [AffineResponseModel],
    pub k_min: &'a [f64],
    pub k_max: &'a [f64],
    pub delta_k: &'a [f64],
    pub tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubproblemStatus {
    Optimal,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct SubproblemSolution {
    pub k_next: Vec<f64>,
    pub gamma: f64,
    pub status: SubproblemStatus,
}

/// Default relative duality-gap tolerance of the kernel.
pub const DEFAULT_SDP_TOL: f64 = 1e-7;

/// Solve `min gamma` over the linearized sampled constraints of all models,
/// subject to the parameter box and trust region. Variables are
/// `x = [gamma, dK]` with `dK = K - anchor`.
pub fn solve_subproblem(spec: &SubproblemSpec) -> Result<SubproblemSolution> {
    let models = spec.models;
    if models.is_empty() {
        return Err(Error::InvalidModel("no affine models given".into()));
    }
    let anchor = &models[0].anchor;
    let n_p = anchor.len();
    for m in models {
        if m.anchor != *anchor {
            return Err(Error::InvalidModel(
                "scenario models must share one anchor".into(),
            ));
        }
    }
    if spec.k_min.len() != n_p || spec.k_max.len() != n_p || spec.delta_k.len() != n_p {
        return Err(Error::DimensionMismatch("bounds/trust-region length".into()));
    }
    if spec.delta_k.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::InvalidModel("trust region must be positive".into()));
    }

    let n_vars = 1 + n_p;
    let mut lmi_blocks = Vec::new();
    for model in models {
        for mu in 0..model.omegas.len() {
            let g0 = &model.base[mu];
            let (ny, nw) = (g0.nrows(), g0.ncols());
            let dim = ny + nw;
            // Phi with gamma = 0 as constant part.
            let phi0 = lti::phi_constraint(
                &lti::FreqResponse {
                    omega: model.omegas[mu],
                    g: g0.clone(),
                },
                0.0,
            );
            let f0 = lti::realify_hermitian(&phi0)?;
            let mut coeffs = Vec::with_capacity(1 + n_p);
            coeffs.push((0, DMatrix::<f64>::identity(2 * dim, 2 * dim)));
            for i in 0..n_p {
                let si = &model.sens[mu][i];
                let mut phi_i = DMatrix::<C64>::zeros(dim, dim);
                for r in 0..ny {
                    for c in 0..nw {
                        phi_i[(r, ny + c)] = si[(r, c)];
                        phi_i[(ny + c, r)] = si[(r, c)].conj();
                    }
                }
                coeffs.push((1 + i, lti::realify_hermitian(&phi_i)?));
            }
            lmi_blocks.push(LmiBlock { f0, coeffs });
        }
    }

    // Box and trust region on dK, intersected componentwise.
    let mut scalar_ineqs = Vec::with_capacity(2 * n_p);
    for i in 0..n_p {
        let lo = (spec.k_min[i] - anchor[i]).max(-spec.delta_k[i]);
        let hi = (spec.k_max[i] - anchor[i]).min(spec.delta_k[i]);
        if lo > hi {
            return Err(Error::InvalidModel(format!(
                "anchor outside box for parameter {i}"
            )));
        }
        // dK_i - lo >= 0 and hi - dK_i >= 0.
        scalar_ineqs.push(ScalarIneq {
            constant: -lo,
            coeffs: vec![(1 + i, 1.0)],
        });
        scalar_ineqs.push(ScalarIneq {
            constant: hi,
            coeffs: vec![(1 + i, -1.0)],
        });
    }

    let mut objective = vec![0.0; n_vars];
    objective[0] = 1.0;
    let problem = SdpProblem {
        n_vars,
        objective,
        lmi_blocks,
        scalar_ineqs,
    };
    let sol = sdp::solve_sdp(&problem, spec.tol)?;
    let status = match sol.status {
        SdpStatus::Optimal => SubproblemStatus::Optimal,
        SdpStatus::MaxIter => SubproblemStatus::MaxIter,
        // The anchor itself is feasible for any gamma above the base sup, so
        // an infeasibility certificate can only be a solver artifact.
        SdpStatus::Infeasible => return Err(Error::SubproblemInfeasible),
    };

    let gamma = sol.x[0];
    let mut k_next: Vec<f64> = (0..n_p).map(|i| anchor[i] + sol.x[1 + i]).collect();
    // Clamp away interior-point epsilon violations; box and trust region are
    // satisfied exactly.
    for i in 0..n_p {
        let lo = anchor[i] + (spec.k_min[i] - anchor[i]).max(-spec.delta_k[i]);
        let hi = anchor[i] + (spec.k_max[i] - anchor[i]).min(spec.delta_k[i]);
        k_next[i] = k_next[i].clamp(lo, hi);
    }
    Ok(SubproblemSolution {
        k_next,
        gamma,
        status,
    })
}

/// Bounded-real-lemma feasibility through the SDP kernel. Decision variables
/// are the Lyapunov matrix `P` (symmetric) and a slack `t`; the LMI pair
/// `-M(P) + tI >= 0`, `P + tI >= 0` is strictly feasible with `t < 0` iff
/// the lemma holds.
pub fn brl_feasible(sys: &StateSpace, gamma: f64, cap: usize) -> Result<bool> {
    let n = sys.n_states();
    if n > cap {
        return Err(Error::SizeCap { n, cap });
    }
    let (ny, nw) = (sys.n_outputs(), sys.n_inputs());
    let dim = n + nw + ny;
    let n_psym = n * (n + 1) / 2;
    let n_vars = n_psym + 1; // P entries then t
    let t_var = n_psym;

    // Symmetric basis E_kl for P.
    let mut coeffs_m: Vec<(usize, DMatrix<f64>)> = Vec::with_capacity(n_vars);
    let mut coeffs_p: Vec<(usize, DMatrix<f64>)> = Vec::with_capacity(n_vars);
    let mut var = 0usize;
    for l in 0..n {
        for k in 0..=l {
            let mut e = DMatrix::<f64>::zeros(n, n);
            e[(k, l)] = 1.0;
            e[(l, k)] = 1.0;
            // Contribution of P = e to -M(P): top-left -(A^T e + e A),
            // -(e B) and its transpose.
            let mut f = DMatrix::<f64>::zeros(dim, dim);
            let tl = -(sys.a.transpose() * &e + &e * &sys.a);
            f.view_mut((0, 0), (n, n)).copy_from(&tl);
            let pb = -(&e * &sys.b);
            f.view_mut((0, n), (n, nw)).copy_from(&pb);
            f.view_mut((n, 0), (nw, n)).copy_from(&pb.transpose());
            coeffs_m.push((var, f));

            let mut fp = DMatrix::<f64>::zeros(n, n);
            fp[(k, l)] = 1.0;
            fp[(l, k)] = 1.0;
            coeffs_p.push((var, fp));
            var += 1;
        }
    }
    // t I on both blocks.
    coeffs_m.push((t_var, DMatrix::identity(dim, dim)));
    coeffs_p.push((t_var, DMatrix::identity(n, n)));

    // Constant part of -M(P): gamma on the (w, y) diagonal, -C, -D couplings.
    let mut f0 = DMatrix::<f64>::zeros(dim, dim);
    for i in 0..nw {
        f0[(n + i, n + i)] = gamma;
    }
    for i in 0..ny {
        f0[(n + nw + i, n + nw + i)] = gamma;
    }
    for i in 0..ny {
        for j in 0..n {
            f0[(n + nw + i, j)] = -sys.c[(i, j)];
            f0[(j, n + nw + i)] = -sys.c[(i, j)];
        }
        for j in 0..nw {
            f0[(n + nw + i, n + j)] = -sys.d[(i, j)];
            f0[(n + j, n + nw + i)] = -sys.d[(i, j)];
        }
    }

    let mut scalar_ineqs = vec![
        // t >= -1 keeps the homogeneous direction bounded.
        ScalarIneq {
            constant: 1.0,
            coeffs: vec![(t_var, 1.0)],
        },
    ];
    // trace(P) <= rho bounds the Lyapunov scale.
    let rho = 1e6 * n as f64;
    let mut tr_coeffs = Vec::new();
    let mut v = 0usize;
    for l in 0..n {
        for k in 0..=l {
            if k == l {
                tr_coeffs.push((v, -1.0));
            }
            v += 1;
        }
    }
    scalar_ineqs.push(ScalarIneq {
        constant: rho,
        coeffs: tr_coeffs,
    });

    let mut objective = vec![0.0; n_vars];
    objective[t_var] = 1.0;
    let problem = SdpProblem {
        n_vars,
        objective,
        lmi_blocks: vec![
            LmiBlock {
                f0,
                coeffs: coeffs_m,
            },
            LmiBlock {
                f0: DMatrix::zeros(n, n),
                coeffs: coeffs_p,
            },
        ],
        scalar_ineqs,
    };
    let sol = sdp::solve_sdp(&problem, 1e-9)?;
    match sol.status {
        SdpStatus::Infeasible => Ok(false),
        _ => Ok(sol.x[t_var] < -1e-9),
    }
}
