//! Network model for droop-controlled grids: admittance assembly, power
//! flow, droop equilibrium, linearization of the coupled
//! differential-algebraic system and removal of the uniform-angle zero mode.

use crate::blocks::DroopInverter;
use crate::error::{Error, Result};
use crate::lti::StateSpace;
use crate::param::ParamSystem;
use nalgebra::{DMatrix, DVector};

/// A branch between two buses, series impedance `r + j x` plus an optional
/// total shunt susceptance `b_sh` split between both ends (per-unit).
#[derive(Debug, Clone)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    pub b_sh: f64,
}

impl Line {
    pub fn new(from: usize, to: usize, r: f64, x: f64) -> Self {
        Self {
            from,
            to,
            r,
            x,
            b_sh: 0.0,
        }
    }
}

/// Bus-admittance representation `Y = G + jB` of a network.
#[derive(Debug, Clone)]
pub struct Network {
    pub n_bus: usize,
    pub g: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl Network {
    pub fn from_lines(n_bus: usize, lines: &[Line]) -> Result<Self> {
        let mut g = DMatrix::<f64>::zeros(n_bus, n_bus);
        let mut b = DMatrix::<f64>::zeros(n_bus, n_bus);
        for l in lines {
            if l.from >= n_bus || l.to >= n_bus || l.from == l.to {
                return Err(Error::InvalidModel(format!(
                    "line endpoints ({}, {}) invalid for {n_bus} buses",
                    l.from, l.to
                )));
            }
            let z2 = l.r * l.r + l.x * l.x;
            if z2 <= 0.0 {
                return Err(Error::InvalidModel("line impedance is zero".into()));
            }
            let (gs, bs) = (l.r / z2, -l.x / z2);
            g[(l.from, l.from)] += gs;
            g[(l.to, l.to)] += gs;
            g[(l.from, l.to)] -= gs;
            g[(l.to, l.from)] -= gs;
            b[(l.from, l.from)] += bs + 0.5 * l.b_sh;
            b[(l.to, l.to)] += bs + 0.5 * l.b_sh;
            b[(l.from, l.to)] -= bs;
            b[(l.to, l.from)] -= bs;
        }
        Ok(Self { n_bus, g, b })
    }

    /// Active/reactive injection at bus `i` for the given phasor profile.
    pub fn injection(&self, i: usize, v: &DVector<f64>, theta: &DVector<f64>) -> (f64, f64) {
        let mut p = 0.0;
        let mut q = 0.0;
        for j in 0..self.n_bus {
            let d = theta[i] - theta[j];
            let (sd, cd) = d.sin_cos();
            p += v[i] * v[j] * (self.g[(i, j)] * cd + self.b[(i, j)] * sd);
            q += v[i] * v[j] * (self.g[(i, j)] * sd - self.b[(i, j)] * cd);
        }
        (p, q)
    }

    /// Partial derivatives of (P_i, Q_i) with respect to (theta_j, V_j).
    /// Returned as four closures' worth of dense values packed in a struct.
    pub fn injection_jacobian(&self, v: &DVector<f64>, theta: &DVector<f64>) -> FlowJacobian {
        let n = self.n_bus;
        let mut dp_dth = DMatrix::zeros(n, n);
        let mut dp_dv = DMatrix::zeros(n, n);
        let mut dq_dth = DMatrix::zeros(n, n);
        let mut dq_dv = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let d = theta[i] - theta[j];
                let (sd, cd) = d.sin_cos();
                let gij = self.g[(i, j)];
                let bij = self.b[(i, j)];
                if i != j {
                    dp_dth[(i, j)] = v[i] * v[j] * (gij * sd - bij * cd);
                    dp_dth[(i, i)] += v[i] * v[j] * (-gij * sd + bij * cd);
                    dq_dth[(i, j)] = -v[i] * v[j] * (gij * cd + bij * sd);
                    dq_dth[(i, i)] += v[i] * v[j] * (gij * cd + bij * sd);
                    dp_dv[(i, j)] = v[i] * (gij * cd + bij * sd);
                    dq_dv[(i, j)] = v[i] * (gij * sd - bij * cd);
                }
                dp_dv[(i, i)] += v[j] * (gij * cd + bij * sd);
                dq_dv[(i, i)] += v[j] * (gij * sd - bij * cd);
            }
            dp_dv[(i, i)] += v[i] * self.g[(i, i)];
            dq_dv[(i, i)] -= v[i] * self.b[(i, i)];
        }
        FlowJacobian {
            dp_dth,
            dp_dv,
            dq_dth,
            dq_dv,
        }
    }
}

/// Flow sensitivities: rows are buses (P then Q), columns are bus angles
/// and magnitudes.
#[derive(Debug, Clone)]
pub struct FlowJacobian {
    pub dp_dth: DMatrix<f64>,
    pub dp_dv: DMatrix<f64>,
    pub dq_dth: DMatrix<f64>,
    pub dq_dv: DMatrix<f64>,
}

/// Constant-power prosumer at a static bus (positive = injection).
#[derive(Debug, Clone, Copy)]
pub struct StaticProsumer {
    pub p: f64,
    pub q: f64,
}

/// Converged operating point of the network.
#[derive(Debug, Clone)]
pub struct OperatingPoint {
    pub theta: DVector<f64>,
    pub v: DVector<f64>,
    /// Steady-state frequency (pu); 0 slot frequency mismatch for plain
    /// slack-bus power flow.
    pub omega_ss: f64,
    pub p_inj: DVector<f64>,
    pub q_inj: DVector<f64>,
}

/// Power-balance residual of the network equations at the given profile:
/// `[P(V, theta) - p_spec; Q(V, theta) - q_spec]`.
pub fn power_flow_residual(
    net: &Network,
    v: &DVector<f64>,
    theta: &DVector<f64>,
    p_spec: &DVector<f64>,
    q_spec: &DVector<f64>,
) -> DVector<f64> {
    let n = net.n_bus;
    let mut r = DVector::zeros(2 * n);
    for i in 0..n {
        let (p, q) = net.injection(i, v, theta);
        r[i] = p - p_spec[i];
        r[n + i] = q - q_spec[i];
    }
    r
}

const PF_TOL: f64 = 1e-10;
const PF_MAX_ITER: usize = 50;

/// Classic slack-bus Newton power flow: bus `slack` holds theta = 0 and
/// V = 1; all other buses are constant-(P, Q). Flat start.
pub fn solve_power_flow(
    net: &Network,
    p_spec: &DVector<f64>,
    q_spec: &DVector<f64>,
    slack: usize,
) -> Result<OperatingPoint> {
    let n = net.n_bus;
    if slack >= n || p_spec.len() != n || q_spec.len() != n {
        return Err(Error::DimensionMismatch(
            "power flow specification does not match the bus count".into(),
        ));
    }
    let mut theta = DVector::zeros(n);
    let mut v = DVector::from_element(n, 1.0);
    let others: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let m = others.len();
    for it in 0..=PF_MAX_ITER {
        let mut r = DVector::<f64>::zeros(2 * m);
        for (k, &i) in others.iter().enumerate() {
            let (p, q) = net.injection(i, &v, &theta);
            r[k] = p - p_spec[i];
            r[m + k] = q - q_spec[i];
        }
        let rn = r.amax();
        if rn < PF_TOL {
            let mut p_inj = DVector::zeros(n);
            let mut q_inj = DVector::zeros(n);
            for i in 0..n {
                let (p, q) = net.injection(i, &v, &theta);
                p_inj[i] = p;
                q_inj[i] = q;
            }
            return Ok(OperatingPoint {
                theta,
                v,
                omega_ss: 1.0,
                p_inj,
                q_inj,
            });
        }
        if it == PF_MAX_ITER {
            return Err(Error::NonConvergence {
                iters: PF_MAX_ITER,
                residual: rn,
            });
        }
        let fj = net.injection_jacobian(&v, &theta);
        let mut jac = DMatrix::<f64>::zeros(2 * m, 2 * m);
        for (k, &i) in others.iter().enumerate() {
            for (l, &j) in others.iter().enumerate() {
                jac[(k, l)] = fj.dp_dth[(i, j)];
                jac[(k, m + l)] = fj.dp_dv[(i, j)];
                jac[(m + k, l)] = fj.dq_dth[(i, j)];
                jac[(m + k, m + l)] = fj.dq_dv[(i, j)];
            }
        }
        let step = jac.lu().solve(&(-r)).ok_or(Error::SingularAlgebraicJacobian)?;
        for (k, &i) in others.iter().enumerate() {
            theta[i] += step[k];
            v[i] += step[m + k];
        }
    }
    unreachable!()
}

/// Grid of droop inverters and constant-power prosumers on a common
/// network; every bus must carry exactly one prosumer.
#[derive(Debug, Clone)]
pub struct CoupledGrid {
    pub network: Network,
    /// (bus, inverter), ascending bus index.
    pub droop: Vec<(usize, DroopInverter)>,
    /// (bus, prosumer), ascending bus index.
    pub stat: Vec<(usize, StaticProsumer)>,
    /// Static buses (subset of `stat`) whose (P, Q) deviations act as
    /// disturbance inputs, ascending.
    pub disturbance_buses: Vec<usize>,
}

impl CoupledGrid {
    pub fn new(
        network: Network,
        mut droop: Vec<(usize, DroopInverter)>,
        mut stat: Vec<(usize, StaticProsumer)>,
        disturbance_buses: Vec<usize>,
    ) -> Result<Self> {
        droop.sort_by_key(|(b, _)| *b);
        stat.sort_by_key(|(b, _)| *b);
        let mut covered = vec![false; network.n_bus];
        for &(b, _) in droop.iter() {
            if b >= network.n_bus || covered[b] {
                return Err(Error::UnmodeledBus { bus: b });
            }
            covered[b] = true;
        }
        for &(b, _) in stat.iter() {
            if b >= network.n_bus || covered[b] {
                return Err(Error::UnmodeledBus { bus: b });
            }
            covered[b] = true;
        }
        if let Some(bus) = covered.iter().position(|c| !c) {
            return Err(Error::UnmodeledBus { bus });
        }
        for &d in &disturbance_buses {
            if !stat.iter().any(|&(b, _)| b == d) {
                return Err(Error::InvalidModel(format!(
                    "disturbance bus {d} is not a static bus"
                )));
            }
        }
        if droop.is_empty() {
            return Err(Error::InvalidModel("grid needs at least one inverter".into()));
        }
        for (_, inv) in &droop {
            inv.validate()?;
        }
        Ok(Self {
            network,
            droop,
            stat,
            disturbance_buses,
        })
    }

    pub fn n_states(&self) -> usize {
        3 * self.droop.len()
    }

    pub fn n_alg(&self) -> usize {
        2 * self.stat.len()
    }

    pub fn n_inputs(&self) -> usize {
        2 * self.disturbance_buses.len()
    }

    /// Tunable labels: per inverter bus ascending, (K_P, K_Q, T_f, T_v).
    pub fn param_names(&self) -> Vec<String> {
        self.droop
            .iter()
            .flat_map(|(b, _)| {
                ["K_P", "K_Q", "T_f", "T_v"]
                    .iter()
                    .map(move |p| format!("bus{b}.{p}"))
            })
            .collect()
    }

    pub fn param_values(&self) -> Vec<f64> {
        self.droop
            .iter()
            .flat_map(|(_, inv)| inv.params())
            .collect()
    }

    fn with_params(&self, k: &[f64]) -> CoupledGrid {
        let mut g = self.clone();
        for (i, (_, inv)) in g.droop.iter_mut().enumerate() {
            inv.k_p = k[4 * i];
            inv.k_q = k[4 * i + 1];
            inv.t_f = k[4 * i + 2];
            inv.t_v = k[4 * i + 3];
        }
        g
    }

    /// Full bus phasor profile from differential states and algebraic
    /// unknowns: droop buses carry their internal (theta, V) states, static
    /// buses the algebraic phasors.
    pub fn assemble_phasors(
        &self,
        x: &DVector<f64>,
        z: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>) {
        let n = self.network.n_bus;
        let mut theta = DVector::zeros(n);
        let mut v = DVector::zeros(n);
        for (i, &(bus, _)) in self.droop.iter().enumerate() {
            theta[bus] = x[3 * i + 1];
            v[bus] = x[3 * i + 2];
        }
        for (j, &(bus, _)) in self.stat.iter().enumerate() {
            theta[bus] = z[2 * j];
            v[bus] = z[2 * j + 1];
        }
        (theta, v)
    }

    /// Differential right-hand side `f(x, z)` in a reference frame rotating
    /// at `omega_frame`.
    pub fn state_derivative(
        &self,
        x: &DVector<f64>,
        z: &DVector<f64>,
        omega_frame: f64,
    ) -> DVector<f64> {
        let (theta, v) = self.assemble_phasors(x, z);
        let mut dx = DVector::zeros(self.n_states());
        for (i, &(bus, ref inv)) in self.droop.iter().enumerate() {
            let (p, q) = self.network.injection(bus, &v, &theta);
            let wf = x[3 * i];
            let vi = x[3 * i + 2];
            dx[3 * i] = (inv.omega_set(p) - wf) / inv.t_f;
            dx[3 * i + 1] = inv.omega_base * (wf - omega_frame);
            dx[3 * i + 2] = (inv.v_set(q) - vi) / inv.t_v;
        }
        dx
    }

    /// Algebraic residual `h(x, z, w) = 0`: power balance at static buses,
    /// with disturbance deviations `w` added to the specified injections.
    pub fn algebraic_residual(
        &self,
        x: &DVector<f64>,
        z: &DVector<f64>,
        w: &DVector<f64>,
    ) -> DVector<f64> {
        let (theta, v) = self.assemble_phasors(x, z);
        let mut r = DVector::zeros(self.n_alg());
        for (j, &(bus, sp)) in self.stat.iter().enumerate() {
            let (p, q) = self.network.injection(bus, &v, &theta);
            let (mut ps, mut qs) = (sp.p, sp.q);
            if let Some(d) = self.disturbance_buses.iter().position(|&b| b == bus) {
                ps += w[2 * d];
                qs += w[2 * d + 1];
            }
            r[2 * j] = p - ps;
            r[2 * j + 1] = q - qs;
        }
        r
    }

    /// Jacobian of the algebraic residual with respect to `z`.
    pub fn algebraic_jacobian(&self, x: &DVector<f64>, z: &DVector<f64>) -> DMatrix<f64> {
        let (theta, v) = self.assemble_phasors(x, z);
        let fj = self.network.injection_jacobian(&v, &theta);
        let mut hz = DMatrix::zeros(self.n_alg(), self.n_alg());
        for (j, &(bi, _)) in self.stat.iter().enumerate() {
            for (l, &(bj, _)) in self.stat.iter().enumerate() {
                hz[(2 * j, 2 * l)] = fj.dp_dth[(bi, bj)];
                hz[(2 * j, 2 * l + 1)] = fj.dp_dv[(bi, bj)];
                hz[(2 * j + 1, 2 * l)] = fj.dq_dth[(bi, bj)];
                hz[(2 * j + 1, 2 * l + 1)] = fj.dq_dv[(bi, bj)];
            }
        }
        hz
    }

    /// Solve the droop equilibrium: angles (reference bus fixed at zero),
    /// all magnitudes and the shared steady-state frequency. The reference
    /// is the first inverter bus.
    pub fn equilibrium(&self) -> Result<OperatingPoint> {
        let n = self.network.n_bus;
        let ref_bus = self.droop[0].0;
        // Unknowns: theta at all buses except ref (n - 1), V at all buses
        // (n), omega_ss (1). Equations: P and Q balance/droop at each bus.
        let free_theta: Vec<usize> = (0..n).filter(|&i| i != ref_bus).collect();
        let nu = free_theta.len() + n + 1;
        let mut u = DVector::<f64>::zeros(nu);
        for k in 0..n {
            u[free_theta.len() + k] = 1.0;
        }
        u[nu - 1] = 1.0;

        let unpack = |u: &DVector<f64>| {
            let mut theta = DVector::zeros(n);
            for (k, &i) in free_theta.iter().enumerate() {
                theta[i] = u[k];
            }
            let v = DVector::from_iterator(n, (0..n).map(|k| u[free_theta.len() + k]));
            (theta, v, u[nu - 1])
        };

        let residual = |u: &DVector<f64>| -> DVector<f64> {
            let (theta, v, w_ss) = unpack(u);
            let mut r = DVector::zeros(2 * n);
            let mut row = 0;
            for &(bus, ref inv) in &self.droop {
                let (p, q) = self.network.injection(bus, &v, &theta);
                r[row] = inv.omega_set(p) - w_ss;
                r[row + 1] = inv.v_set(q) - v[bus];
                row += 2;
            }
            for &(bus, sp) in &self.stat {
                let (p, q) = self.network.injection(bus, &v, &theta);
                r[row] = p - sp.p;
                r[row + 1] = q - sp.q;
                row += 2;
            }
            r
        };

        // Square system: 2n balance/droop equations against (n - 1) free
        // angles, n magnitudes and the shared frequency.
        for it in 0..=PF_MAX_ITER {
            let r = residual(&u);
            let rn = r.amax();
            if rn < PF_TOL {
                let (theta, v, w_ss) = unpack(&u);
                let mut p_inj = DVector::zeros(n);
                let mut q_inj = DVector::zeros(n);
                for i in 0..n {
                    let (p, q) = self.network.injection(i, &v, &theta);
                    p_inj[i] = p;
                    q_inj[i] = q;
                }
                return Ok(OperatingPoint {
                    theta,
                    v,
                    omega_ss: w_ss,
                    p_inj,
                    q_inj,
                });
            }
            if it == PF_MAX_ITER {
                return Err(Error::NonConvergence {
                    iters: PF_MAX_ITER,
                    residual: rn,
                });
            }
            // Forward-difference Jacobian of the (small) equilibrium system.
            let m = r.len();
            let mut jac = DMatrix::<f64>::zeros(m, nu);
            let h = 1e-7;
            for c in 0..nu {
                let mut up = u.clone();
                up[c] += h;
                let rp = residual(&up);
                for rr in 0..m {
                    jac[(rr, c)] = (rp[rr] - r[rr]) / h;
                }
            }
            let step = jac
                .clone()
                .svd(true, true)
                .solve(&(-r), 1e-12)
                .map_err(|_| Error::SingularAlgebraicJacobian)?;
            u += step;
        }
        unreachable!()
    }

    /// Equilibrium differential state and algebraic vectors for simulation.
    pub fn equilibrium_vectors(&self, op: &OperatingPoint) -> (DVector<f64>, DVector<f64>) {
        let mut x = DVector::zeros(self.n_states());
        for (i, &(bus, _)) in self.droop.iter().enumerate() {
            x[3 * i] = op.omega_ss;
            x[3 * i + 1] = op.theta[bus];
            x[3 * i + 2] = op.v[bus];
        }
        let mut z = DVector::zeros(self.n_alg());
        for (j, &(bus, _)) in self.stat.iter().enumerate() {
            z[2 * j] = op.theta[bus];
            z[2 * j + 1] = op.v[bus];
        }
        (x, z)
    }

    /// Small-signal model at the operating point: analytic Jacobians of the
    /// coupled system, algebraic variables eliminated through the network
    /// Jacobian. Inputs are the disturbance deviations, outputs the
    /// filtered inverter frequencies.
    pub fn linearize(&self, op: &OperatingPoint) -> Result<StateSpace> {
        let nx = self.n_states();
        let nz = self.n_alg();
        let nw = self.n_inputs();
        let fj = self.network.injection_jacobian(&op.v, &op.theta);

        // Column index of (theta, V) at a bus within the combined
        // differential + algebraic phasor coordinates.
        let col_of = |bus: usize| -> (usize, bool) {
            if let Some(i) = self.droop.iter().position(|&(b, _)| b == bus) {
                (3 * i + 1, true) // theta state column; V is +1
            } else {
                let j = self.stat.iter().position(|&(b, _)| b == bus).unwrap();
                (2 * j, false)
            }
        };

        // Sensitivity of (P_i, Q_i) to all phasor coordinates, split into
        // state part (nx) and algebraic part (nz).
        let flow_rows = |bus: usize| -> (DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>) {
            let mut px = DVector::zeros(nx);
            let mut pz = DVector::zeros(nz);
            let mut qx = DVector::zeros(nx);
            let mut qz = DVector::zeros(nz);
            for j in 0..self.network.n_bus {
                let (c, is_state) = col_of(j);
                if is_state {
                    px[c] += fj.dp_dth[(bus, j)];
                    px[c + 1] += fj.dp_dv[(bus, j)];
                    qx[c] += fj.dq_dth[(bus, j)];
                    qx[c + 1] += fj.dq_dv[(bus, j)];
                } else {
                    pz[c] += fj.dp_dth[(bus, j)];
                    pz[c + 1] += fj.dp_dv[(bus, j)];
                    qz[c] += fj.dq_dth[(bus, j)];
                    qz[c + 1] += fj.dq_dv[(bus, j)];
                }
            }
            (px, pz, qx, qz)
        };

        let mut fx = DMatrix::<f64>::zeros(nx, nx);
        let mut fz = DMatrix::<f64>::zeros(nx, nz);
        for (i, &(bus, ref inv)) in self.droop.iter().enumerate() {
            let (px, pz, qx, qz) = flow_rows(bus);
            let r_wf = 3 * i;
            let r_th = 3 * i + 1;
            let r_v = 3 * i + 2;
            // d(omega_f)/dt = (omega_c - K_P P - omega_f) / T_f
            for c in 0..nx {
                fx[(r_wf, c)] = -inv.k_p / inv.t_f * px[c];
                fx[(r_v, c)] = -inv.k_q / inv.t_v * qx[c];
            }
            fx[(r_wf, r_wf)] += -1.0 / inv.t_f;
            fx[(r_v, r_v)] += -1.0 / inv.t_v;
            fx[(r_th, r_wf)] = inv.omega_base;
            for c in 0..nz {
                fz[(r_wf, c)] = -inv.k_p / inv.t_f * pz[c];
                fz[(r_v, c)] = -inv.k_q / inv.t_v * qz[c];
            }
        }

        let mut hx = DMatrix::<f64>::zeros(nz, nx);
        let hz = {
            let mut hz = DMatrix::<f64>::zeros(nz, nz);
            for (j, &(bus, _)) in self.stat.iter().enumerate() {
                let (px, pz, qx, qz) = flow_rows(bus);
                for c in 0..nx {
                    hx[(2 * j, c)] = px[c];
                    hx[(2 * j + 1, c)] = qx[c];
                }
                for c in 0..nz {
                    hz[(2 * j, c)] = pz[c];
                    hz[(2 * j + 1, c)] = qz[c];
                }
            }
            hz
        };
        let mut hw = DMatrix::<f64>::zeros(nz, nw);
        for (d, &bus) in self.disturbance_buses.iter().enumerate() {
            let j = self.stat.iter().position(|&(b, _)| b == bus).unwrap();
            hw[(2 * j, 2 * d)] = -1.0;
            hw[(2 * j + 1, 2 * d + 1)] = -1.0;
        }

        let (a, b) = if nz > 0 {
            let hz_lu = hz.clone().lu();
            if hz_lu.determinant().abs() < 1e-12 {
                return Err(Error::SingularAlgebraicJacobian);
            }
            let hz_inv_hx = hz_lu.solve(&hx).ok_or(Error::SingularAlgebraicJacobian)?;
            let hz_inv_hw = hz_lu.solve(&hw).ok_or(Error::SingularAlgebraicJacobian)?;
            (&fx - &fz * &hz_inv_hx, -(&fz * &hz_inv_hw))
        } else {
            (fx, DMatrix::zeros(nx, nw))
        };

        // Outputs: filtered frequency of every inverter.
        let mut c = DMatrix::<f64>::zeros(self.droop.len(), nx);
        for i in 0..self.droop.len() {
            c[(i, 3 * i)] = 1.0;
        }
        let d = DMatrix::zeros(self.droop.len(), nw);
        StateSpace::new(a, b, c, d)
    }

    /// Parameterized small-signal family over the droop tunables. Each
    /// realization re-solves the equilibrium so the operating point tracks
    /// the parameters.
    pub fn param_system(&self) -> Result<ParamSystem> {
        let names = self.param_names();
        let (lo, hi): (Vec<f64>, Vec<f64>) = self
            .droop
            .iter()
            .flat_map(|(_, inv)| {
                let b = &inv.bounds;
                [b.k_p, b.k_q, b.t_f, b.t_v]
            })
            .unzip();
        // Fail fast at the nominal parameters.
        let op0 = self.equilibrium()?;
        self.linearize(&op0)?;
        let grid = self.clone();
        ParamSystem::new(names, lo, hi, move |k: &[f64]| {
            let g = grid.with_params(k);
            let op = g
                .equilibrium()
                .expect("droop equilibrium failed inside the parameter box");
            g.linearize(&op)
                .expect("linearization failed inside the parameter box")
        })
    }

    /// Like [`CoupledGrid::param_system`], but with the structural
    /// uniform-angle zero mode removed from every realization, making the
    /// family suitable for norm computation and tuning.
    pub fn reduced_param_system(&self) -> Result<ParamSystem> {
        let full = self.param_system()?;
        let names = full.param_names.clone();
        let lo = full.k_min.clone();
        let hi = full.k_max.clone();
        ParamSystem::new(names, lo, hi, move |k: &[f64]| {
            let sys = full.realize_unchecked(k);
            remove_zero_mode(&sys).expect("expected exactly one zero mode")
        })
    }
}

const ZERO_MODE_TOL: f64 = 1e-8;

/// Remove the single structural zero eigenvalue (uniform angle shift) by a
/// similarity transform aligned with its eigenvector. All other eigenvalues
/// are preserved; the transfer function is unchanged because the mode is
/// unobservable from the frequency outputs.
pub fn remove_zero_mode(sys: &StateSpace) -> Result<StateSpace> {
    let n = sys.n_states();
    if n == 0 {
        return Err(Error::NoZeroMode);
    }
    let scale = sys.a.amax().max(1.0);
    let eigs = crate::lti::eigenvalues(&sys.a)?;
    let zero_count = eigs.iter().filter(|l| l.norm() < ZERO_MODE_TOL * scale).count();
    match zero_count {
        0 => return Err(Error::NoZeroMode),
        1 => {}
        count => return Err(Error::MultipleZeroModes { count }),
    }
    // Kernel direction from the SVD of A.
    let svd = sys.a.clone().svd(true, true);
    let v_t = svd.v_t.as_ref().unwrap();
    let kernel: DVector<f64> = v_t.row(n - 1).transpose();

    // Orthonormal basis [v, Q2] via QR of [v | I].
    let mut m = DMatrix::<f64>::zeros(n, n + 1);
    m.column_mut(0).copy_from(&kernel);
    m.view_mut((0, 1), (n, n))
        .copy_from(&DMatrix::identity(n, n));
    let qr = m.qr();
    let q = qr.q();
    let t = q.columns(0, n).into_owned();

    let t_lu = t.clone().lu();
    let at = t_lu
        .solve(&(&sys.a * &t))
        .ok_or(Error::SingularAlgebraicJacobian)?;
    let bt = t_lu
        .solve(&sys.b)
        .ok_or(Error::SingularAlgebraicJacobian)?;
    let ct = &sys.c * &t;

    let a_r = at.view((1, 1), (n - 1, n - 1)).into_owned();
    let b_r = bt.rows(1, n - 1).into_owned();
    let c_r = ct.columns(1, n - 1).into_owned();
    StateSpace::new(a_r, b_r, c_r, sys.d.clone())
}
