//! Generic SISO transfer-function blocks and block-diagram composition with
//! declared tunable parameters, sufficient to assemble standard AVR, PSS and
//! governor controller diagrams as well as droop-inverter prosumers.

use crate::error::{Error, Result};
use crate::lti::StateSpace;
use crate::param::ParamSystem;
use nalgebra::DMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// `y = K u`
    Gain,
    /// `1/s`
    Integrator,
    /// `K / (1 + T s)`
    FirstOrderLag,
    /// `(1 + T_num s) / (1 + T_den s)`
    LeadLag,
    /// `K T_w s / (1 + T_w s)`
    Washout,
    /// `1 / (1 + A_1 s + A_2 s^2)`
    Notch,
    /// Saturation; identity in linearization.
    Limiter,
}

/// A SISO block with named parameters; a subset may be tagged tunable with
/// box bounds.
#[derive(Debug, Clone)]
pub struct Block {
    pub name: String,
    pub kind: BlockKind,
    params: Vec<(String, f64)>,
    tunable: Vec<(String, f64, f64)>,
}

impl Block {
    fn raw(name: &str, kind: BlockKind, params: &[(&str, f64)]) -> Self {
        Self {
            name: name.to_string(),
            kind,
            params: params.iter().map(|(n, v)| (n.to_string(), *v)).collect(),
            tunable: Vec::new(),
        }
    }

    pub fn gain(name: &str, k: f64) -> Self {
        Self::raw(name, BlockKind::Gain, &[("K", k)])
    }

    pub fn integrator(name: &str) -> Self {
        Self::raw(name, BlockKind::Integrator, &[])
    }

    pub fn first_order_lag(name: &str, k: f64, t: f64) -> Self {
        Self::raw(name, BlockKind::FirstOrderLag, &[("K", k), ("T", t)])
    }

    pub fn lead_lag(name: &str, t_num: f64, t_den: f64) -> Self {
        Self::raw(name, BlockKind::LeadLag, &[("T_num", t_num), ("T_den", t_den)])
    }

    pub fn washout(name: &str, k: f64, t_w: f64) -> Self {
        Self::raw(name, BlockKind::Washout, &[("K", k), ("T_w", t_w)])
    }

    pub fn notch(name: &str, a1: f64, a2: f64) -> Self {
        Self::raw(name, BlockKind::Notch, &[("A_1", a1), ("A_2", a2)])
    }

    pub fn limiter(name: &str, min: f64, max: f64) -> Self {
        Self::raw(name, BlockKind::Limiter, &[("min", min), ("max", max)])
    }

    /// Tag a parameter tunable with box bounds.
    pub fn with_tunable(mut self, param: &str, min: f64, max: f64) -> Self {
        self.tunable.push((param.to_string(), min, max));
        self
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
    }

    pub fn tunable_tags(&self) -> impl Iterator<Item = &str> {
        self.tunable.iter().map(|(n, _, _)| n.as_str())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |p: &str| -> Result<()> {
            match self.param(p) {
                Some(v) if v > 0.0 => Ok(()),
                Some(v) => Err(Error::InvalidModel(format!(
                    "block '{}': {p} must be > 0, got {v}",
                    self.name
                ))),
                None => Err(Error::InvalidModel(format!(
                    "block '{}': missing parameter {p}",
                    self.name
                ))),
            }
        };
        match self.kind {
            BlockKind::Gain | BlockKind::Integrator => {}
            BlockKind::FirstOrderLag => positive("T")?,
            BlockKind::LeadLag => {
                positive("T_den")?;
                if self.param("T_num").is_none() {
                    return Err(Error::InvalidModel(format!(
                        "block '{}': missing parameter T_num",
                        self.name
                    )));
                }
            }
            BlockKind::Washout => positive("T_w")?,
            BlockKind::Notch => {
                positive("A_2")?;
                positive("A_1")?;
            }
            BlockKind::Limiter => {
                let (lo, hi) = (self.param("min"), self.param("max"));
                match (lo, hi) {
                    (Some(lo), Some(hi)) if lo < hi => {}
                    _ => {
                        return Err(Error::InvalidModel(format!(
                            "block '{}': limiter requires min < max",
                            self.name
                        )))
                    }
                }
            }
        }
        for (tag, lo, hi) in &self.tunable {
            if self.param(tag).is_none() {
                return Err(Error::InvalidModel(format!(
                    "block '{}': tunable tag '{tag}' has no matching parameter",
                    self.name
                )));
            }
            if !(lo <= hi) {
                return Err(Error::InvalidModel(format!(
                    "block '{}': tunable '{tag}' bounds inverted",
                    self.name
                )));
            }
        }
        Ok(())
    }

    fn with_overrides(&self, overrides: &[(String, f64)]) -> Block {
        let mut b = self.clone();
        for (name, value) in overrides {
            if let Some(slot) = b.params.iter_mut().find(|(n, _)| n == name) {
                slot.1 = *value;
            }
        }
        b
    }
}

/// Minimal state-space realization of a single block. Limiters realize as
/// identity (small-signal linearization).
pub fn block_to_ss(b: &Block) -> Result<StateSpace> {
    b.validate()?;
    let p = |name: &str| b.param(name).unwrap();
    let sys = match b.kind {
        BlockKind::Gain => StateSpace::from_static(DMatrix::from_element(1, 1, p("K"))),
        BlockKind::Limiter => StateSpace::from_static(DMatrix::from_element(1, 1, 1.0)),
        BlockKind::Integrator => StateSpace::new(
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
        )?,
        BlockKind::FirstOrderLag => {
            let (k, t) = (p("K"), p("T"));
            StateSpace::new(
                DMatrix::from_element(1, 1, -1.0 / t),
                DMatrix::from_element(1, 1, k / t),
                DMatrix::from_element(1, 1, 1.0),
                DMatrix::zeros(1, 1),
            )?
        }
        BlockKind::LeadLag => {
            let (tn, td) = (p("T_num"), p("T_den"));
            StateSpace::new(
                DMatrix::from_element(1, 1, -1.0 / td),
                DMatrix::from_element(1, 1, 1.0 / td),
                DMatrix::from_element(1, 1, 1.0 - tn / td),
                DMatrix::from_element(1, 1, tn / td),
            )?
        }
        BlockKind::Washout => {
            let (k, tw) = (p("K"), p("T_w"));
            StateSpace::new(
                DMatrix::from_element(1, 1, -1.0 / tw),
                DMatrix::from_element(1, 1, 1.0 / tw),
                DMatrix::from_element(1, 1, -k),
                DMatrix::from_element(1, 1, k),
            )?
        }
        BlockKind::Notch => {
            let (a1, a2) = (p("A_1"), p("A_2"));
            StateSpace::new(
                DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0 / a2, -a1 / a2]),
                DMatrix::from_column_slice(2, 1, &[0.0, 1.0 / a2]),
                DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
                DMatrix::zeros(1, 1),
            )?
        }
    };
    Ok(sys)
}

/// Where a summing-junction term takes its signal from.
#[derive(Debug, Clone, PartialEq)]
pub enum Signal {
    /// External diagram input port.
    Input(String),
    /// Output of a named block.
    Block(String),
}

/// One weighted term of a summing junction.
#[derive(Debug, Clone)]
pub struct Term {
    pub signal: Signal,
    pub gain: f64,
}

impl Term {
    pub fn input(name: &str) -> Self {
        Self {
            signal: Signal::Input(name.to_string()),
            gain: 1.0,
        }
    }

    pub fn block(name: &str) -> Self {
        Self {
            signal: Signal::Block(name.to_string()),
            gain: 1.0,
        }
    }

    pub fn scaled(mut self, gain: f64) -> Self {
        self.gain *= gain;
        self
    }

    pub fn negated(self) -> Self {
        self.scaled(-1.0)
    }
}

/// Directed block-diagram with summing junctions and named external ports.
#[derive(Debug, Clone, Default)]
pub struct BlockDiagram {
    inputs: Vec<String>,
    blocks: Vec<Block>,
    block_inputs: Vec<Vec<Term>>,
    outputs: Vec<(String, Vec<Term>)>,
}

impl BlockDiagram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_input(&mut self, name: &str) -> &mut Self {
        self.inputs.push(name.to_string());
        self
    }

    /// Add a block whose input is the weighted sum of the given terms.
    pub fn add_block(&mut self, block: Block, input: Vec<Term>) -> &mut Self {
        self.blocks.push(block);
        self.block_inputs.push(input);
        self
    }

    pub fn add_output(&mut self, name: &str, terms: Vec<Term>) -> &mut Self {
        self.outputs.push((name.to_string(), terms));
        self
    }

    fn block_index(&self, name: &str) -> Result<usize> {
        self.blocks
            .iter()
            .position(|b| b.name == name)
            .ok_or_else(|| Error::InvalidModel(format!("unknown block '{name}'")))
    }

    fn input_index(&self, name: &str) -> Result<usize> {
        self.inputs
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::InvalidModel(format!("unknown input '{name}'")))
    }

    fn validate(&self) -> Result<()> {
        if self.outputs.is_empty() {
            return Err(Error::InvalidModel("diagram has no outputs".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for b in &self.blocks {
            b.validate()?;
            if !seen.insert(b.name.clone()) {
                return Err(Error::InvalidModel(format!(
                    "duplicate block name '{}'",
                    b.name
                )));
            }
        }
        for terms in self
            .block_inputs
            .iter()
            .chain(self.outputs.iter().map(|(_, t)| t))
        {
            for t in terms {
                match &t.signal {
                    Signal::Input(n) => {
                        self.input_index(n)?;
                    }
                    Signal::Block(n) => {
                        self.block_index(n)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Tunable parameter labels `block.param` in lexicographic order.
    pub fn tunable_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .blocks
            .iter()
            .flat_map(|b| {
                b.tunable
                    .iter()
                    .map(move |(p, _, _)| format!("{}.{}", b.name, p))
            })
            .collect();
        names.sort();
        names
    }

    fn tunable_bounds(&self) -> (Vec<String>, Vec<f64>, Vec<f64>) {
        let mut entries: Vec<(String, f64, f64)> = self
            .blocks
            .iter()
            .flat_map(|b| {
                b.tunable
                    .iter()
                    .map(move |(p, lo, hi)| (format!("{}.{}", b.name, p), *lo, *hi))
            })
            .collect();
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        let names = entries.iter().map(|e| e.0.clone()).collect();
        let lo = entries.iter().map(|e| e.1).collect();
        let hi = entries.iter().map(|e| e.2).collect();
        (names, lo, hi)
    }

    /// Compose the diagram at the given tunable values (paired with
    /// `tunable_names` order) into one state-space system whose inputs and
    /// outputs follow the declared port order.
    fn realize(&self, k: &[f64]) -> Result<StateSpace> {
        let (names, _, _) = self.tunable_bounds();
        let realized: Vec<StateSpace> = self
            .blocks
            .iter()
            .map(|b| {
                let overrides: Vec<(String, f64)> = b
                    .tunable
                    .iter()
                    .map(|(p, _, _)| {
                        let label = format!("{}.{}", b.name, p);
                        let idx = names.iter().position(|n| *n == label).unwrap();
                        (p.clone(), k[idx])
                    })
                    .collect();
                block_to_ss(&b.with_overrides(&overrides))
            })
            .collect::<Result<_>>()?;

        let nb = self.blocks.len();
        let n_ext = self.inputs.len();
        let n_states: usize = realized.iter().map(|s| s.n_states()).sum();
        let offsets: Vec<usize> = realized
            .iter()
            .scan(0usize, |acc, s| {
                let o = *acc;
                *acc += s.n_states();
                Some(o)
            })
            .collect();

        // Stacked block dynamics: x' = Ad x + Bd u_b, y_b = Cd x + Dd u_b.
        let mut ad = DMatrix::<f64>::zeros(n_states, n_states);
        let mut bd = DMatrix::<f64>::zeros(n_states, nb);
        let mut cd = DMatrix::<f64>::zeros(nb, n_states);
        let mut dd = DMatrix::<f64>::zeros(nb, nb);
        for (bi, s) in realized.iter().enumerate() {
            let o = offsets[bi];
            let ns = s.n_states();
            ad.view_mut((o, o), (ns, ns)).copy_from(&s.a);
            bd.view_mut((o, bi), (ns, 1)).copy_from(&s.b);
            cd.view_mut((bi, o), (1, ns)).copy_from(&s.c);
            dd[(bi, bi)] = s.d[(0, 0)];
        }

        // Summing junctions: u_b = M y_b + N u_ext.
        let mut m = DMatrix::<f64>::zeros(nb, nb);
        let mut nmat = DMatrix::<f64>::zeros(nb, n_ext);
        for (bi, terms) in self.block_inputs.iter().enumerate() {
            for t in terms {
                match &t.signal {
                    Signal::Block(name) => m[(bi, self.block_index(name)?)] += t.gain,
                    Signal::Input(name) => nmat[(bi, self.input_index(name)?)] += t.gain,
                }
            }
        }

        // Close the algebraic loop: (I - Dd M) y_b = Cd x + Dd N u.
        let closure = DMatrix::<f64>::identity(nb, nb) - &dd * &m;
        let lu = closure.lu();
        let det = lu.determinant().abs();
        if det < 1e-9 {
            return Err(Error::IllPosedLoop);
        }
        let y_x = lu
            .solve(&cd)
            .ok_or(Error::IllPosedLoop)?;
        let y_u = lu
            .solve(&(&dd * &nmat))
            .ok_or(Error::IllPosedLoop)?;

        // u_b = M y_b + N u.
        let u_x = &m * &y_x;
        let u_u = &m * &y_u + &nmat;

        let a = &ad + &bd * &u_x;
        let b = &bd * &u_u;

        // External outputs from block outputs and feedthrough of inputs.
        let n_out = self.outputs.len();
        let mut p = DMatrix::<f64>::zeros(n_out, nb);
        let mut q = DMatrix::<f64>::zeros(n_out, n_ext);
        for (oi, (_, terms)) in self.outputs.iter().enumerate() {
            for t in terms {
                match &t.signal {
                    Signal::Block(name) => p[(oi, self.block_index(name)?)] += t.gain,
                    Signal::Input(name) => q[(oi, self.input_index(name)?)] += t.gain,
                }
            }
        }
        let c = &p * &y_x;
        let d = &p * &y_u + &q;
        StateSpace::new(a, b, c, d)
    }

    /// Assemble into a parameterized family over the declared tunables.
    pub fn assemble(&self) -> Result<ParamSystem> {
        self.validate()?;
        let (names, lo, hi) = self.tunable_bounds();
        // Fail fast on ill-posed loops at the nominal parameter values.
        let nominal: Vec<f64> = {
            let mut v = Vec::with_capacity(names.len());
            for label in &names {
                let (bname, pname) = label.split_once('.').unwrap();
                let b = &self.blocks[self.block_index(bname)?];
                v.push(b.param(pname).unwrap());
            }
            v
        };
        self.realize(&nominal)?;
        let diagram = self.clone();
        ParamSystem::new(names, lo, hi, move |k: &[f64]| {
            diagram
                .realize(k)
                .expect("diagram realization failed inside the parameter box")
        })
    }
}

/// Grid-forming droop inverter data (per-unit).
#[derive(Debug, Clone)]
pub struct DroopInverter {
    /// Frequency droop gain (pu frequency per pu active power).
    pub k_p: f64,
    /// Voltage droop gain (pu voltage per pu reactive power).
    pub k_q: f64,
    /// Frequency droop filter time constant (s).
    pub t_f: f64,
    /// Voltage droop filter time constant (s).
    pub t_v: f64,
    /// Frequency setpoint at zero load (pu).
    pub omega_c: f64,
    /// Voltage setpoint at zero reactive generation (pu).
    pub v_c: f64,
    /// Apparent power rating (VA), the per-unit base of this prosumer.
    pub rating: f64,
    /// Angle base (rad/s) converting pu frequency deviation to rad.
    pub omega_base: f64,
    /// Tuning box for (K_P, K_Q, T_f, T_v).
    pub bounds: DroopBounds,
}

#[derive(Debug, Clone)]
pub struct DroopBounds {
    pub k_p: (f64, f64),
    pub k_q: (f64, f64),
    pub t_f: (f64, f64),
    pub t_v: (f64, f64),
}

impl Default for DroopBounds {
    fn default() -> Self {
        // Filter constants restricted to values above 50 ms.
        Self {
            k_p: (0.005, 0.08),
            k_q: (0.005, 0.08),
            t_f: (0.05, 0.5),
            t_v: (0.05, 0.5),
        }
    }
}

/// Minimum filter time constant (50 ms).
pub const MIN_FILTER_TIME: f64 = 0.05;

impl DroopInverter {
    pub fn new(k_p: f64, k_q: f64, t_f: f64, t_v: f64) -> Result<Self> {
        let inv = Self {
            k_p,
            k_q,
            t_f,
            t_v,
            omega_c: 1.0,
            v_c: 1.0,
            rating: 55_000.0,
            omega_base: 100.0 * std::f64::consts::PI,
            bounds: DroopBounds::default(),
        };
        inv.validate()?;
        Ok(inv)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k_p > 0.0 && self.k_q > 0.0) {
            return Err(Error::InvalidModel("droop gains must be positive".into()));
        }
        if self.t_f < MIN_FILTER_TIME || self.t_v < MIN_FILTER_TIME {
            return Err(Error::InvalidModel(format!(
                "filter time constants must be >= {MIN_FILTER_TIME} s"
            )));
        }
        Ok(())
    }

    /// Frequency droop setpoint (Eq. of the frequency droop law).
    pub fn omega_set(&self, p_p: f64) -> f64 {
        self.omega_c - self.k_p * p_p
    }

    /// Voltage droop setpoint.
    pub fn v_set(&self, q_p: f64) -> f64 {
        self.v_c - self.k_q * q_p
    }

    pub fn params(&self) -> [f64; 4] {
        [self.k_p, self.k_q, self.t_f, self.t_v]
    }
}

/// Standalone 3-state small-signal droop prosumer: inputs are active and
/// reactive power deviations `(P_p, Q_p)`, outputs `(theta, V, omega)`.
/// States: filtered frequency, internal angle, internal voltage.
pub fn droop_inverter_model(inv: &DroopInverter) -> Result<ParamSystem> {
    inv.validate()?;
    let omega_base = inv.omega_base;
    let b = &inv.bounds;
    ParamSystem::new(
        vec!["K_P".into(), "K_Q".into(), "T_f".into(), "T_v".into()],
        vec![b.k_p.0, b.k_q.0, b.t_f.0, b.t_v.0],
        vec![b.k_p.1, b.k_q.1, b.t_f.1, b.t_v.1],
        move |k: &[f64]| {
            let (k_p, k_q, t_f, t_v) = (k[0], k[1], k[2], k[3]);
            let a = DMatrix::from_row_slice(
                3,
                3,
                &[
                    -1.0 / t_f, 0.0, 0.0, //
                    omega_base, 0.0, 0.0, //
                    0.0, 0.0, -1.0 / t_v,
                ],
            );
            let bm = DMatrix::from_row_slice(
                3,
                2,
                &[
                    -k_p / t_f, 0.0, //
                    0.0, 0.0, //
                    0.0, -k_q / t_v,
                ],
            );
            // Outputs: theta, V, omega.
            let c = DMatrix::from_row_slice(
                3,
                3,
                &[
                    0.0, 1.0, 0.0, //
                    0.0, 0.0, 1.0, //
                    1.0, 0.0, 0.0,
                ],
            );
            StateSpace::new(a, bm, c, DMatrix::zeros(3, 2)).unwrap()
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::{eval_freq, FrequencyGrid, hinf_norm_grid};
    use approx::assert_relative_eq;

    #[test]
    fn lag_realization() {
        let b = Block::first_order_lag("lag", 1.0, 0.1);
        let s = block_to_ss(&b).unwrap();
        assert_relative_eq!(s.a[(0, 0)], -10.0, epsilon = 1e-12);
        assert_relative_eq!(s.b[(0, 0)], 10.0, epsilon = 1e-12);
        assert_relative_eq!(s.c[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(s.d[(0, 0)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn gain_is_static() {
        let s = block_to_ss(&Block::gain("ka", 800.0)).unwrap();
        assert_eq!(s.n_states(), 0);
        assert_relative_eq!(s.d[(0, 0)], 800.0, epsilon = 1e-12);
    }

    #[test]
    fn washout_high_frequency_limit() {
        let s = block_to_ss(&Block::washout("w", 1.0, 10.0)).unwrap();
        // 10 s / (10 s + 1): unity at high frequency, zero at DC.
        let hi = eval_freq(&s, 1e6).unwrap();
        assert_relative_eq!(hi.g[(0, 0)].re, 1.0, epsilon = 1e-6);
        let dc = eval_freq(&s, 0.0).unwrap();
        assert_relative_eq!(dc.g[(0, 0)].norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn tunable_tag_must_exist() {
        let b = Block::gain("g", 1.0).with_tunable("nope", 0.0, 1.0);
        assert!(b.validate().is_err());
    }

    #[test]
    fn assemble_single_lag_matches_block() {
        let mut d = BlockDiagram::new();
        d.add_input("u");
        d.add_block(
            Block::first_order_lag("lag", 1.0, 0.5).with_tunable("T", 0.05, 1.0),
            vec![Term::input("u")],
        );
        d.add_output("y", vec![Term::block("lag")]);
        let fam = d.assemble().unwrap();
        assert_eq!(fam.param_names, vec!["lag.T"]);
        let sys = fam.realize(&[0.1]).unwrap();
        let direct = block_to_ss(&Block::first_order_lag("lag", 1.0, 0.1)).unwrap();
        assert_relative_eq!(sys.a[(0, 0)], direct.a[(0, 0)], epsilon = 1e-12);
        assert_relative_eq!(sys.b[(0, 0)], direct.b[(0, 0)], epsilon = 1e-12);
    }

    /// IEEE PSS 1A style chain: gain -> washout -> two lead-lags -> lag.
    fn pss_chain() -> BlockDiagram {
        let mut d = BlockDiagram::new();
        d.add_input("domega");
        d.add_block(Block::gain("ks", 5.0), vec![Term::input("domega")]);
        d.add_block(Block::washout("wash", 1.0, 10.0), vec![Term::block("ks")]);
        d.add_block(
            Block::lead_lag("ll1", 0.5, 0.05),
            vec![Term::block("wash")],
        );
        d.add_block(Block::lead_lag("ll2", 0.5, 0.05), vec![Term::block("ll1")]);
        d.add_block(
            Block::first_order_lag("sensor", 1.0, 0.02),
            vec![Term::block("ll2")],
        );
        d.add_output("vs", vec![Term::block("sensor")]);
        d
    }

    #[test]
    fn pss_chain_dc_gain_is_zero() {
        let fam = pss_chain().assemble().unwrap();
        let sys = fam.realize(&[]).unwrap();
        let dc = eval_freq(&sys, 0.0).unwrap();
        assert_relative_eq!(dc.g[(0, 0)].norm(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn cascade_realization_is_minimal() {
        let fam = pss_chain().assemble().unwrap();
        // 4 dynamic blocks (washout, 2 lead-lags, sensor lag); gain adds none.
        assert_eq!(fam.realize(&[]).unwrap().n_states(), 4);
    }

    #[test]
    fn exac4_affine_in_gain() {
        // Transducer lag -> lead-lag -> gain+lag cascade: response is linear
        // in the AVR gain K_A.
        let build = |ka: f64| {
            let mut d = BlockDiagram::new();
            d.add_input("verr");
            d.add_block(
                Block::first_order_lag("tr", 1.0, 0.02),
                vec![Term::input("verr")],
            );
            d.add_block(Block::lead_lag("dgr", 1.0, 10.0), vec![Term::block("tr")]);
            d.add_block(
                Block::gain("ka", ka).with_tunable("K", 10.0, 1000.0),
                vec![Term::block("dgr")],
            );
            d.add_block(
                Block::first_order_lag("ta", 1.0, 0.015),
                vec![Term::block("ka")],
            );
            d.add_output("efd", vec![Term::block("ta")]);
            d
        };
        let fam = build(200.0).assemble().unwrap();
        let omega = 3.0;
        let g = |ka: f64| {
            eval_freq(&fam.realize(&[ka]).unwrap(), omega).unwrap().g[(0, 0)]
        };
        let h = 1.0;
        let analytic = (g(200.0 + h) - g(200.0 - h)) / nalgebra::Complex::new(2.0 * h, 0.0);
        // Affine dependence: slope from a big central difference is exact.
        let wide = (g(400.0) - g(100.0)) / nalgebra::Complex::new(300.0, 0.0);
        assert_relative_eq!(analytic.re, wide.re, max_relative = 1e-9);
        assert_relative_eq!(analytic.im, wide.im, max_relative = 1e-9);
    }

    #[test]
    fn unity_gain_delay_free_loop_rejected() {
        let mut d = BlockDiagram::new();
        d.add_input("u");
        // g = 1 feeding back on itself with unity gain: ill-posed.
        d.add_block(
            Block::gain("g", 1.0),
            vec![Term::input("u"), Term::block("g")],
        );
        d.add_output("y", vec![Term::block("g")]);
        assert!(matches!(d.assemble(), Err(Error::IllPosedLoop)));
    }

    #[test]
    fn tunable_ordering_is_deterministic() {
        let mut d = BlockDiagram::new();
        d.add_input("u");
        d.add_block(
            Block::first_order_lag("b2", 1.0, 0.1).with_tunable("T", 0.05, 1.0),
            vec![Term::input("u")],
        );
        d.add_block(
            Block::gain("a1", 2.0).with_tunable("K", 0.1, 10.0),
            vec![Term::block("b2")],
        );
        d.add_output("y", vec![Term::block("a1")]);
        let fam = d.assemble().unwrap();
        assert_eq!(fam.param_names, vec!["a1.K", "b2.T"]);
    }

    /// Polynomial in s with real coefficients, ascending order.
    #[derive(Clone, Debug)]
    struct Poly(Vec<f64>);

    impl Poly {
        fn mul(&self, o: &Poly) -> Poly {
            let mut c = vec![0.0; self.0.len() + o.0.len() - 1];
            for (i, a) in self.0.iter().enumerate() {
                for (j, b) in o.0.iter().enumerate() {
                    c[i + j] += a * b;
                }
            }
            Poly(c)
        }

        fn add(&self, o: &Poly) -> Poly {
            let n = self.0.len().max(o.0.len());
            let mut c = vec![0.0; n];
            for (i, a) in self.0.iter().enumerate() {
                c[i] += a;
            }
            for (i, b) in o.0.iter().enumerate() {
                c[i] += b;
            }
            Poly(c)
        }

        fn eval(&self, s: nalgebra::Complex<f64>) -> nalgebra::Complex<f64> {
            self.0
                .iter()
                .rev()
                .fold(nalgebra::Complex::new(0.0, 0.0), |acc, &c| acc * s + c)
        }
    }

    #[derive(Clone, Debug)]
    struct Rational {
        num: Poly,
        den: Poly,
    }

    impl Rational {
        fn lag(k: f64, t: f64) -> Self {
            Self {
                num: Poly(vec![k]),
                den: Poly(vec![1.0, t]),
            }
        }

        fn lead_lag(tn: f64, td: f64) -> Self {
            Self {
                num: Poly(vec![1.0, tn]),
                den: Poly(vec![1.0, td]),
            }
        }

        fn series(&self, o: &Rational) -> Rational {
            Rational {
                num: self.num.mul(&o.num),
                den: self.den.mul(&o.den),
            }
        }

        fn parallel(&self, o: &Rational) -> Rational {
            Rational {
                num: self.num.mul(&o.den).add(&o.num.mul(&self.den)),
                den: self.den.mul(&o.den),
            }
        }

        /// Unity negative feedback around `self`.
        fn feedback(&self) -> Rational {
            Rational {
                num: self.num.clone(),
                den: self.den.add(&self.num),
            }
        }

        fn eval(&self, omega: f64) -> nalgebra::Complex<f64> {
            let s = nalgebra::Complex::new(0.0, omega);
            self.num.eval(s) / self.den.eval(s)
        }
    }

    const ORACLE_OMEGAS: [f64; 5] = [0.0, 0.3, 1.0, 4.7, 30.0];

    fn compare_with_rational(d: &BlockDiagram, expected: &Rational) {
        let sys = d.assemble().unwrap().realize(&[]).unwrap();
        for w in ORACLE_OMEGAS {
            let got = eval_freq(&sys, w).unwrap().g[(0, 0)];
            let want = expected.eval(w);
            assert_relative_eq!(got.re, want.re, epsilon = 1e-10, max_relative = 1e-10);
            assert_relative_eq!(got.im, want.im, epsilon = 1e-10, max_relative = 1e-10);
        }
    }

    #[test]
    fn series_matches_rational_composition() {
        let mut d = BlockDiagram::new();
        d.add_input("u");
        d.add_block(Block::first_order_lag("l1", 2.0, 0.3), vec![Term::input("u")]);
        d.add_block(Block::lead_lag("l2", 0.8, 0.1), vec![Term::block("l1")]);
        d.add_output("y", vec![Term::block("l2")]);
        let expected = Rational::lag(2.0, 0.3).series(&Rational::lead_lag(0.8, 0.1));
        compare_with_rational(&d, &expected);
    }

    #[test]
    fn parallel_matches_rational_composition() {
        let mut d = BlockDiagram::new();
        d.add_input("u");
        d.add_block(Block::first_order_lag("l1", 1.5, 0.2), vec![Term::input("u")]);
        d.add_block(Block::first_order_lag("l2", -0.7, 2.0), vec![Term::input("u")]);
        d.add_output("y", vec![Term::block("l1"), Term::block("l2")]);
        let expected = Rational::lag(1.5, 0.2).parallel(&Rational::lag(-0.7, 2.0));
        compare_with_rational(&d, &expected);
    }

    #[test]
    fn feedback_matches_rational_composition() {
        // Gain -> lag inside a unity negative-feedback loop.
        let mut d = BlockDiagram::new();
        d.add_input("u");
        d.add_block(Block::gain("k", 4.0), vec![Term::input("u"), Term::block("p").negated()]);
        d.add_block(Block::first_order_lag("p", 1.0, 0.5), vec![Term::block("k")]);
        d.add_output("y", vec![Term::block("p")]);
        let expected = Rational::lag(4.0, 0.5).feedback();
        compare_with_rational(&d, &expected);
    }

    #[test]
    fn droop_setpoints() {
        let inv = DroopInverter::new(0.02, 0.031, 0.1, 0.1).unwrap();
        assert_relative_eq!(inv.omega_set(0.5), 0.99, epsilon = 1e-12);
        assert_relative_eq!(inv.v_set(0.0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn droop_filter_floor_enforced() {
        assert!(DroopInverter::new(0.02, 0.031, 0.04, 0.1).is_err());
        assert!(DroopInverter::new(-0.02, 0.031, 0.1, 0.1).is_err());
    }

    #[test]
    fn droop_model_shape() {
        let inv = DroopInverter::new(0.02, 0.031, 0.1, 0.1).unwrap();
        let fam = droop_inverter_model(&inv).unwrap();
        let sys = fam.realize(&inv.params()).unwrap();
        assert_eq!(sys.n_states(), 3);
        assert_eq!(sys.n_inputs(), 2);
        assert_eq!(sys.n_outputs(), 3);
        // Standalone model carries the droop integrator: grid diagnostic
        // still works away from omega = 0.
        let g = FrequencyGrid::new(vec![1.0, 10.0]).unwrap();
        let r = hinf_norm_grid(&sys, &g);
        assert!(r.norm.is_finite());
    }
}
