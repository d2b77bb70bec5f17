//! Dense state-space systems: frequency response, poles, stability and the
//! H-infinity norm, plus the complex LMI building blocks used by the sampled
//! synthesis program.

use crate::error::{Error, Result};
use nalgebra::{Complex, DMatrix};
#[cfg(test)]
use nalgebra::DVector;

pub type C64 = Complex<f64>;

/// Continuous-time state-space realization `(A, B, C, D)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl StateSpace {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n || c.ncols() != n || d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "inconsistent dimensions: A {}x{}, B {}x{}, C {}x{}, D {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                c.nrows(),
                c.ncols(),
                d.nrows(),
                d.ncols()
            )));
        }
        for m in [&a, &b, &c, &d] {
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidModel("non-finite matrix entry".into()));
            }
        }
        Ok(Self { a, b, c, d })
    }

    /// Static gain system `y = D w` with no states.
    pub fn from_static(d: DMatrix<f64>) -> Self {
        let ny = d.nrows();
        let nw = d.ncols();
        Self {
            a: DMatrix::zeros(0, 0),
            b: DMatrix::zeros(0, nw),
            c: DMatrix::zeros(ny, 0),
            d,
        }
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }
}

/// Frequency-response sample `G(j omega)`.
#[derive(Debug, Clone)]
pub struct FreqResponse {
    pub omega: f64,
    pub g: DMatrix<C64>,
}

/// Poles of a realization, repeated per multiplicity.
#[derive(Debug, Clone)]
pub struct PoleSet {
    pub poles: Vec<C64>,
}

impl PoleSet {
    pub fn max_real_part(&self) -> f64 {
        self.poles.iter().map(|p| p.re).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// How an H-infinity norm value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HinfMethod {
    Bisection,
    Grid,
}

/// Result of an H-infinity norm computation. For unstable systems the norm is
/// reported as the `+inf` sentinel with `stable = false`.
#[derive(Debug, Clone)]
pub struct HinfResult {
    pub norm: f64,
    pub peak_omega: f64,
    pub stable: bool,
    pub method: HinfMethod,
}

/// Ordered, deduplicated set of sampling frequencies in rad/s.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGrid {
    omegas: Vec<f64>,
}

impl FrequencyGrid {
    pub fn new(mut omegas: Vec<f64>) -> Result<Self> {
        if omegas.is_empty() {
            return Err(Error::InvalidModel("frequency grid is empty".into()));
        }
        if omegas.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidModel(
                "frequency grid entries must be finite and non-negative".into(),
            ));
        }
        omegas.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut grid = Self { omegas: Vec::new() };
        for w in omegas {
            grid.push_dedup(w);
        }
        Ok(grid)
    }

    /// Logarithmically spaced grid over `[lo, hi]`.
    pub fn log_space(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo > 0.0 && hi > lo && n >= 2) {
            return Err(Error::InvalidModel("invalid log grid bounds".into()));
        }
        let (llo, lhi) = (lo.ln(), hi.ln());
        let omegas = (0..n)
            .map(|i| (llo + (lhi - llo) * i as f64 / (n - 1) as f64).exp())
            .collect();
        Self::new(omegas)
    }

    /// Insert a frequency, deduplicating within relative 1e-6.
    pub fn insert(&mut self, omega: f64) {
        if !omega.is_finite() || omega < 0.0 {
            return;
        }
        let pos = self
            .omegas
            .partition_point(|w| *w < omega);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1e-300);
        if pos > 0 && close(self.omegas[pos - 1], omega) {
            return;
        }
        if pos < self.omegas.len() && close(self.omegas[pos], omega) {
            return;
        }
        self.omegas.insert(pos, omega);
    }

    fn push_dedup(&mut self, omega: f64) {
        match self.omegas.last() {
            Some(&last)
                if (omega - last).abs() <= 1e-6 * omega.abs().max(last.abs()).max(1e-300) => {}
            _ => self.omegas.push(omega),
        }
    }

    pub fn len(&self) -> usize {
        self.omegas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.omegas.iter().copied()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.omegas
    }
}

/// Relative reciprocal-condition threshold below which `(jwI - A)` is treated
/// as singular (pole on the grid point).
const SINGULAR_RCOND: f64 = 100.0 * f64::EPSILON;

fn complex_a(sys: &StateSpace, omega: f64) -> DMatrix<C64> {
    let n = sys.n_states();
    let mut m = DMatrix::<C64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = C64::new(-sys.a[(i, j)], 0.0);
        }
        m[(i, i)] += C64::new(0.0, omega);
    }
    m
}

/// Evaluate `G(j omega) = C (j omega I - A)^{-1} B + D` by linear solve.
pub fn eval_freq(sys: &StateSpace, omega: f64) -> Result<FreqResponse> {
    let n = sys.n_states();
    let (ny, nw) = (sys.n_outputs(), sys.n_inputs());
    if n == 0 {
        return Ok(FreqResponse {
            omega,
            g: sys.d.map(|x| C64::new(x, 0.0)),
        });
    }
    let m = complex_a(sys, omega);
    let lu = m.lu();
    // Pivot-ratio estimate of the reciprocal condition number.
    let diag = lu.u().map_diagonal(|x| x.norm());
    let (dmin, dmax) = diag
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if dmax <= 0.0 || dmin / dmax < SINGULAR_RCOND {
        return Err(Error::SingularAtFrequency { omega });
    }
    let bc = sys.b.map(|x| C64::new(x, 0.0));
    let x = lu
        .solve(&bc)
        .ok_or(Error::SingularAtFrequency { omega })?;
    let mut g = sys.d.map(|x| C64::new(x, 0.0));
    for i in 0..ny {
        for j in 0..nw {
            let mut acc = C64::new(0.0, 0.0);
            for k in 0..n {
                acc += C64::new(sys.c[(i, k)], 0.0) * x[(k, j)];
            }
            g[(i, j)] += acc;
        }
    }
    Ok(FreqResponse { omega, g })
}

/// Largest singular value of a complex matrix.
pub fn sigma_max(resp: &FreqResponse) -> f64 {
    sigma_max_mat(&resp.g)
}

pub fn sigma_max_mat(g: &DMatrix<C64>) -> f64 {
    if g.is_empty() {
        return 0.0;
    }
    g.clone()
        .singular_values()
        .iter()
        .fold(0.0_f64, |m, &s| m.max(s))
}

/// Maximum Francis-QR sweeps before an eigenvalue attempt is abandoned.
const MAX_QR_ITERS: usize = 10_000;

/// Eigenvalues of a general real matrix, robust against the rare
/// non-convergence of the shifted QR iteration on structured matrices
/// (e.g. Hamiltonians with near-imaginary-axis spectra). Each retry applies
/// a deterministic random orthogonal similarity, which leaves the spectrum
/// unchanged but breaks the structure that stalls the iteration.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<C64>> {
    let n = m.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let check = |ev: nalgebra::DVector<C64>| -> Result<Vec<C64>> {
        if ev.iter().any(|l| !l.re.is_finite() || !l.im.is_finite()) {
            return Err(Error::EigenFailure);
        }
        Ok(ev.iter().copied().collect())
    };
    if let Some(s) = nalgebra::linalg::Schur::try_new(m.clone(), f64::EPSILON, MAX_QR_ITERS) {
        return check(s.complex_eigenvalues());
    }
    let mut seed = 0x9e37_79b9_7f4a_7c15_u64;
    let mut next = move || {
        seed ^= seed << 13;
        seed ^= seed >> 7;
        seed ^= seed << 17;
        (seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    for _ in 0..4 {
        let g = DMatrix::<f64>::from_fn(n, n, |_, _| next());
        let q = g.qr().q();
        let sim = &q * m * q.transpose();
        if let Some(s) = nalgebra::linalg::Schur::try_new(sim, f64::EPSILON, MAX_QR_ITERS) {
            return check(s.complex_eigenvalues());
        }
    }
    Err(Error::EigenFailure)
}

/// Realization poles: eigenvalues of `A`, repeated per multiplicity.
pub fn poles(sys: &StateSpace) -> Result<PoleSet> {
    if sys.n_states() == 0 {
        return Ok(PoleSet { poles: Vec::new() });
    }
    Ok(PoleSet {
        poles: eigenvalues(&sys.a)?,
    })
}

/// True iff all eigenvalues of `A` satisfy `Re(lambda) < -margin`.
pub fn is_stable(sys: &StateSpace, margin: f64) -> bool {
    debug_assert!(margin >= 0.0);
    if sys.n_states() == 0 {
        return true;
    }
    match poles(sys) {
        Ok(ps) => ps.max_real_part() < -margin,
        Err(_) => false,
    }
}

/// Max over the grid of `sigma_max(G(j omega))`; a lower bound on the true
/// norm for stable systems. Grid points sitting on poles contribute `+inf`.
pub fn hinf_norm_grid(sys: &StateSpace, grid: &FrequencyGrid) -> HinfResult {
    let mut best = (0.0_f64, 0.0_f64);
    for w in grid.iter() {
        let s = match eval_freq(sys, w) {
            Ok(resp) => sigma_max(&resp),
            Err(_) => f64::INFINITY,
        };
        if s > best.0 {
            best = (s, w);
        }
    }
    HinfResult {
        norm: best.0,
        peak_omega: best.1,
        stable: is_stable(sys, 0.0),
        method: HinfMethod::Grid,
    }
}

/// Frequencies at which `H(gamma)` has purely imaginary eigenvalues, i.e.
/// frequencies where `sigma_max(G(jw))` crosses `gamma`.
fn hamiltonian_crossings(sys: &StateSpace, gamma: f64) -> Option<Vec<f64>> {
    let n = sys.n_states();
    if n == 0 {
        return Some(Vec::new());
    }
    let (ny, nw) = (sys.n_outputs(), sys.n_inputs());
    // R = gamma^2 I - D^T D must be positive definite (gamma > sigma_max(D)).
    let mut r = DMatrix::<f64>::identity(nw, nw) * (gamma * gamma);
    r -= sys.d.transpose() * &sys.d;
    let r_inv = r.clone().try_inverse()?;
    let dtc = sys.d.transpose() * &sys.c;
    let a_hat = &sys.a + &sys.b * &r_inv * &dtc;
    let g_blk = &sys.b * &r_inv * sys.b.transpose();
    let s_mid = DMatrix::<f64>::identity(ny, ny) + &sys.d * &r_inv * sys.d.transpose();
    let q_blk = sys.c.transpose() * s_mid * &sys.c;

    let mut h = DMatrix::<f64>::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(&a_hat);
    h.view_mut((0, n), (n, n)).copy_from(&g_blk);
    h.view_mut((n, 0), (n, n)).copy_from(&(-&q_blk));
    h.view_mut((n, n), (n, n)).copy_from(&(-a_hat.transpose()));

    let scale = h.amax().max(1.0);
    let ev = eigenvalues(&h).ok()?;
    let tol = 1e-8 * scale.max(1.0) + 1e-10;
    let mut ws: Vec<f64> = ev
        .iter()
        .filter(|l| l.re.abs() < tol && l.im >= 0.0)
        .map(|l| l.im)
        .collect();
    ws.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Some(ws)
}

/// H-infinity norm by Hamiltonian-eigenvalue bisection.
///
/// For unstable systems the result carries `stable = false` and the `+inf`
/// norm sentinel (the frequency-domain definition is only valid for stable
/// systems).
pub fn hinf_norm_bisect(sys: &StateSpace, tol: f64) -> HinfResult {
    if !is_stable(sys, 0.0) {
        return HinfResult {
            norm: f64::INFINITY,
            peak_omega: 0.0,
            stable: false,
            method: HinfMethod::Bisection,
        };
    }
    let sigma_d = sigma_max_mat(&sys.d.map(|x| C64::new(x, 0.0)));
    if sys.n_states() == 0 || sys.b.ncols() == 0 || sys.c.nrows() == 0 {
        return HinfResult {
            norm: sigma_d,
            peak_omega: 0.0,
            stable: true,
            method: HinfMethod::Bisection,
        };
    }

    // Bracket: lower from a coarse grid (a valid lower bound), upper x10.
    let coarse = coarse_grid_for(sys);
    let mut lo = sigma_d;
    let mut peak_w = 0.0;
    for w in coarse {
        if let Ok(resp) = eval_freq(sys, w) {
            let s = sigma_max(&resp);
            if s > lo {
                lo = s;
                peak_w = w;
            }
        }
    }
    let mut hi = (lo.max(1e-12)) * 10.0;
    // Ensure the upper end is truly above the norm.
    for _ in 0..60 {
        match hamiltonian_crossings(sys, hi) {
            Some(ws) if ws.is_empty() => break,
            _ => hi *= 10.0,
        }
    }

    if lo <= 0.0 {
        // Zero transfer matrix.
        return HinfResult {
            norm: 0.0,
            peak_omega: 0.0,
            stable: true,
            method: HinfMethod::Bisection,
        };
    }

    let mut candidates: Vec<f64> = vec![peak_w];
    while hi - lo > tol * lo {
        let gamma = 0.5 * (lo + hi);
        let gamma_safe = gamma.max(sigma_d * (1.0 + 1e-12));
        match hamiltonian_crossings(sys, gamma_safe) {
            Some(ws) if !ws.is_empty() => {
                // Midpoints of crossing intervals straddle the peaks.
                candidates.clear();
                candidates.extend(ws.windows(2).map(|p| 0.5 * (p[0] + p[1])));
                candidates.extend(ws.iter().copied());
                lo = gamma;
            }
            _ => hi = gamma,
        }
    }

    let mut best = (lo, peak_w);
    for w in candidates {
        if let Ok(resp) = eval_freq(sys, w) {
            let s = sigma_max(&resp);
            if s > best.0 {
                best = (s, w);
            }
        }
    }
    HinfResult {
        norm: best.0.max(0.5 * (lo + hi)).max(lo),
        peak_omega: best.1,
        stable: true,
        method: HinfMethod::Bisection,
    }
}

fn coarse_grid_for(sys: &StateSpace) -> Vec<f64> {
    // Span the pole frequencies by two decades on each side.
    let ps = poles(sys).map(|p| p.poles).unwrap_or_default();
    let mut fmin = f64::INFINITY;
    let mut fmax = 0.0_f64;
    for p in &ps {
        let m = p.norm();
        if m > 1e-12 {
            fmin = fmin.min(m);
            fmax = fmax.max(m);
        }
    }
    if !fmin.is_finite() || fmax <= 0.0 {
        fmin = 1e-2;
        fmax = 1e2;
    }
    let lo = (fmin * 1e-2).max(1e-12);
    let hi = fmax * 1e2;
    let mut v: Vec<f64> = (0..64)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / 63.0).exp())
        .collect();
    v.push(0.0);
    v
}

/// Assemble the frequency-sampled constraint block
/// `[[gamma I, G], [G^*, gamma I]]`; positive definite iff
/// `sigma_max(G) < gamma`.
pub fn phi_constraint(resp: &FreqResponse, gamma: f64) -> DMatrix<C64> {
    let (ny, nw) = (resp.g.nrows(), resp.g.ncols());
    let n = ny + nw;
    let mut m = DMatrix::<C64>::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = C64::new(gamma, 0.0);
    }
    for i in 0..ny {
        for j in 0..nw {
            m[(i, ny + j)] = resp.g[(i, j)];
            m[(ny + j, i)] = resp.g[(i, j)].conj();
        }
    }
    m
}

/// Map a Hermitian matrix `M = X + jY` to the real symmetric matrix
/// `[[X, -Y], [Y, X]]`, which is positive definite iff `M` is. Each
/// eigenvalue's multiplicity doubles.
pub fn realify_hermitian(m: &DMatrix<C64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::DimensionMismatch("realify: matrix not square".into()));
    }
    let scale = m.iter().map(|x| x.norm()).fold(0.0_f64, f64::max).max(1.0);
    let mut defect = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            defect = defect.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    if defect > 1e-8 * scale {
        return Err(Error::NotHermitian { defect });
    }
    let mut r = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let x = m[(i, j)].re;
            let y = m[(i, j)].im;
            r[(i, j)] = x;
            r[(n + i, n + j)] = x;
            r[(i, n + j)] = -y;
            r[(n + i, j)] = y;
        }
    }
    Ok(r)
}

/// True iff a symmetric matrix is positive definite (Cholesky test).
pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    m.clone().cholesky().is_some()
}

/// Bounded-real-lemma feasibility check via the SDP kernel: returns true iff
/// a Lyapunov matrix `P > 0` certifying stability and `||G|| < gamma` exists.
/// Oracle use only; capped state dimension.
pub fn brl_verify(sys: &StateSpace, gamma: f64) -> Result<bool> {
    crate::subproblem::brl_feasible(sys, gamma, 12)
}

/// PBH detectability scan: returns eigenvalues of `A` with
/// `Re(lambda) >= 0` at which `[A - lambda I; C]` loses column rank
/// (relative rank tolerance 1e-8). Empty result means detectable.
pub fn detectability_defects(sys: &StateSpace) -> Result<Vec<C64>> {
    let n = sys.n_states();
    if n == 0 {
        return Ok(Vec::new());
    }
    let ps = poles(sys)?;
    let ny = sys.n_outputs();
    let mut defects = Vec::new();
    for &lam in &ps.poles {
        if lam.re < 0.0 {
            continue;
        }
        let mut m = DMatrix::<C64>::zeros(n + ny, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = C64::new(sys.a[(i, j)], 0.0);
            }
            m[(i, i)] -= lam;
        }
        for i in 0..ny {
            for j in 0..n {
                m[(n + i, j)] = C64::new(sys.c[(i, j)], 0.0);
            }
        }
        let sv = m.singular_values();
        let smax = sv.iter().fold(0.0_f64, |a, &b| a.max(b));
        let smin = sv.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        if smin < 1e-8 * smax.max(1.0) {
            defects.push(lam);
        }
    }
    Ok(defects)
}
