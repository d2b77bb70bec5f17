//! Command implementations behind the `gridtune` binary: TOML-configured
//! analysis, tuning and simulation runs that write CSV artifacts plus a
//! reproducibility manifest into an output directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use gridtune::blocks::DroopInverter;
use gridtune::fixtures::{demo_microgrid, two_by_two_benchmark};
use gridtune::gridmodel::{CoupledGrid, Line, Network, StaticProsumer};
use gridtune::lti::{
    eval_freq, hinf_norm_bisect, poles, sigma_max, FrequencyGrid, StateSpace,
};
use gridtune::param::ParamSystem;
use gridtune::sim::{response_metrics, simulate_nonlinear, step_response_linear};
use gridtune::tuner::{safeguard_check, tune, TuneConfig};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Errors split by exit code: configuration problems exit with 2,
/// numerical failures with 3.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<gridtune::Error> for CliError {
    fn from(e: gridtune::Error) -> Self {
        CliError::Numerical(e.to_string())
    }
}

fn io_err(e: std::io::Error) -> CliError {
    CliError::Config(format!("i/o: {e}"))
}

// ---------------------------------------------------------------------------
// Configuration schema
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub system: SystemConfig,
    /// Overrides for tunable parameters by label (e.g. `"bus0.K_P"`); the
    /// file written by `tune` round-trips through this table.
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub tune: TuneSection,
    #[serde(default)]
    pub simulate: SimSection,
    #[serde(default)]
    pub analyze: AnalyzeSection,
    /// Recorded in the manifest; reserved for randomized workflows.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemConfig {
    /// Bundled three-bus two-inverter example.
    DemoMicrogrid,
    /// Fixed two-by-two analytic benchmark (analysis only).
    Benchmark,
    /// Droop network described inline.
    Network {
        lines: Vec<LineCfg>,
        inverters: Vec<InverterCfg>,
        loads: Vec<LoadCfg>,
        #[serde(default)]
        disturbance_buses: Vec<usize>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineCfg {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InverterCfg {
    pub bus: usize,
    pub k_p: f64,
    pub k_q: f64,
    pub t_f: f64,
    pub t_v: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadCfg {
    pub bus: usize,
    pub p: f64,
    pub q: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridCfg {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for GridCfg {
    fn default() -> Self {
        Self {
            lo: 1e-2,
            hi: 2e2,
            points: 60,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneSection {
    /// Initial trust region as a fraction of each parameter's box width.
    pub delta_k0_rel: f64,
    pub alpha: f64,
    pub k_max: usize,
    pub conv_tol: f64,
    pub grid: GridCfg,
}

impl Default for TuneSection {
    fn default() -> Self {
        Self {
            delta_k0_rel: 0.5,
            alpha: 0.7,
            k_max: 60,
            conv_tol: 1e-4,
            grid: GridCfg::default(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub t_end: f64,
    pub dt: f64,
    /// Step amplitude per disturbance input; padded with zeros.
    pub step: Vec<f64>,
    /// Also run the nonlinear model (network systems only).
    pub nonlinear: bool,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            t_end: 20.0,
            dt: 1e-3,
            step: vec![-0.05],
            nonlinear: true,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeSection {
    pub sweep: GridCfg,
}

impl Default for AnalyzeSection {
    fn default() -> Self {
        Self {
            sweep: GridCfg {
                lo: 1e-2,
                hi: 2e2,
                points: 200,
            },
        }
    }
}

pub fn load_config(path: &Path) -> Result<(Config, String), CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg: Config =
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok((cfg, text))
}

// ---------------------------------------------------------------------------
// System construction
// ---------------------------------------------------------------------------

/// The concrete object a run operates on: either a fixed plant or a
/// tunable droop network.
pub enum RunSystem {
    Fixed(StateSpace),
    Grid(CoupledGrid),
}

pub fn build_system(cfg: &Config) -> Result<RunSystem, CliError> {
    let mut sys = match &cfg.system {
        SystemConfig::Benchmark => RunSystem::Fixed(two_by_two_benchmark()),
        SystemConfig::DemoMicrogrid => RunSystem::Grid(demo_microgrid()),
        SystemConfig::Network {
            lines,
            inverters,
            loads,
            disturbance_buses,
        } => {
            let n_bus = lines
                .iter()
                .flat_map(|l| [l.from, l.to])
                .chain(inverters.iter().map(|i| i.bus))
                .chain(loads.iter().map(|l| l.bus))
                .max()
                .map(|m| m + 1)
                .ok_or_else(|| CliError::Config("empty network".into()))?;
            let net_lines: Vec<Line> = lines
                .iter()
                .map(|l| Line::new(l.from, l.to, l.r, l.x))
                .collect();
            let network = Network::from_lines(n_bus, &net_lines)
                .map_err(|e| CliError::Config(e.to_string()))?;
            let droop = inverters
                .iter()
                .map(|i| {
                    DroopInverter::new(i.k_p, i.k_q, i.t_f, i.t_v)
                        .map(|inv| (i.bus, inv))
                        .map_err(|e| CliError::Config(e.to_string()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let stat = loads
                .iter()
                .map(|l| (l.bus, StaticProsumer { p: l.p, q: l.q }))
                .collect();
            let grid = CoupledGrid::new(network, droop, stat, disturbance_buses.clone())
                .map_err(|e| CliError::Config(e.to_string()))?;
            RunSystem::Grid(grid)
        }
    };
    if let RunSystem::Grid(grid) = &mut sys {
        apply_param_overrides(grid, &cfg.params)?;
    } else if !cfg.params.is_empty() {
        return Err(CliError::Config(
            "parameter overrides require a tunable system".into(),
        ));
    }
    Ok(sys)
}

fn apply_param_overrides(
    grid: &mut CoupledGrid,
    overrides: &BTreeMap<String, f64>,
) -> Result<(), CliError> {
    if overrides.is_empty() {
        return Ok(());
    }
    let names = grid.param_names();
    let mut values = grid.param_values();
    for (name, v) in overrides {
        let idx = names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| CliError::Config(format!("unknown parameter '{name}'")))?;
        values[idx] = *v;
    }
    for (i, (_, inv)) in grid.droop.iter_mut().enumerate() {
        inv.k_p = values[4 * i];
        inv.k_q = values[4 * i + 1];
        inv.t_f = values[4 * i + 2];
        inv.t_v = values[4 * i + 3];
        inv.validate().map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(())
}

fn tunable_family(sys: &RunSystem) -> Result<(ParamSystem, Vec<f64>, Vec<String>), CliError> {
    match sys {
        RunSystem::Fixed(_) => Err(CliError::Config(
            "this system has no tunable parameters".into(),
        )),
        RunSystem::Grid(g) => {
            let fam = g.reduced_param_system()?;
            Ok((fam, g.param_values(), g.param_names()))
        }
    }
}

fn analysis_model(sys: &RunSystem) -> Result<StateSpace, CliError> {
    match sys {
        RunSystem::Fixed(s) => Ok(s.clone()),
        RunSystem::Grid(g) => {
            let fam = g.reduced_param_system()?;
            Ok(fam.realize(&g.param_values())?)
        }
    }
}

// ---------------------------------------------------------------------------
// Output helpers
// ---------------------------------------------------------------------------

/// Shortest round-trip decimal formatting keeps artifacts deterministic.
fn fmt(v: f64) -> String {
    let mut s = String::new();
    write!(s, "{v}").unwrap();
    s
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Config(e.to_string()))?;
    w.write_record(header)
        .map_err(|e| CliError::Config(e.to_string()))?;
    for row in rows {
        w.write_record(row)
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub outputs: Vec<String>,
}

fn write_manifest(
    out_dir: &Path,
    command: &str,
    config_text: &str,
    seed: u64,
    outputs: &[&str],
) -> Result<(), CliError> {
    let mut hasher = Sha256::new();
    hasher.update(config_text.as_bytes());
    let manifest = RunManifest {
        tool_version: TOOL_VERSION.to_string(),
        command: command.to_string(),
        config_sha256: format!("{:x}", hasher.finalize()),
        seed,
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
    };
    let json =
        serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Config(e.to_string()))?;
    fs::write(out_dir.join("manifest.json"), json + "\n").map_err(io_err)?;
    Ok(())
}

fn ensure_out_dir(out_dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out_dir).map_err(io_err)
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

/// Pole map, singular-value sweep and worst-case norm of the configured
/// system at its current parameters.
pub fn cmd_analyze(config_path: &Path, out_dir: &Path) -> Result<(), CliError> {
    let (cfg, text) = load_config(config_path)?;
    ensure_out_dir(out_dir)?;
    let sys = build_system(&cfg)?;
    let model = analysis_model(&sys)?;

    let ps = poles(&model)?;
    let pole_rows: Vec<Vec<String>> = ps
        .poles
        .iter()
        .map(|p| vec![fmt(p.re), fmt(p.im)])
        .collect();
    write_csv(&out_dir.join("poles.csv"), &["re", "im"], &pole_rows)?;

    let sweep = FrequencyGrid::log_space(cfg.analyze.sweep.lo, cfg.analyze.sweep.hi, cfg.analyze.sweep.points)?;
    let mut sweep_rows = Vec::new();
    for w in sweep.iter() {
        let r = eval_freq(&model, w)?;
        sweep_rows.push(vec![fmt(w), fmt(sigma_max(&r))]);
    }
    write_csv(
        &out_dir.join("sigma_sweep.csv"),
        &["omega", "sigma_max"],
        &sweep_rows,
    )?;

    let norm = hinf_norm_bisect(&model, 1e-6);
    write_csv(
        &out_dir.join("summary.csv"),
        &["hinf_norm", "peak_omega", "stable", "max_pole_re"],
        &[vec![
            fmt(norm.norm),
            fmt(norm.peak_omega),
            norm.stable.to_string(),
            fmt(ps.max_real_part()),
        ]],
    )?;

    write_manifest(
        out_dir,
        "analyze",
        &text,
        cfg.seed,
        &["poles.csv", "sigma_sweep.csv", "summary.csv"],
    )
}

/// Run the iterative tuner and write the per-iteration trace plus a
/// parameter file that can be fed back as `[params]` overrides.
pub fn cmd_tune(config_path: &Path, out_dir: &Path) -> Result<(), CliError> {
    let (cfg, text) = load_config(config_path)?;
    ensure_out_dir(out_dir)?;
    let sys = build_system(&cfg)?;
    let (fam, k0, names) = tunable_family(&sys)?;

    let t = &cfg.tune;
    if !(t.delta_k0_rel > 0.0) {
        return Err(CliError::Config("delta_k0_rel must be positive".into()));
    }
    let delta: Vec<f64> = fam
        .k_min
        .iter()
        .zip(&fam.k_max)
        .map(|(lo, hi)| t.delta_k0_rel * (hi - lo))
        .collect();
    let grid = FrequencyGrid::log_space(t.grid.lo, t.grid.hi, t.grid.points)?;
    let mut tc = TuneConfig::new(delta, grid);
    tc.alpha = t.alpha;
    tc.k_max = t.k_max;
    tc.conv_tol = t.conv_tol;

    let report = tune(&fam, &k0, &tc)?;
    log::info!(
        "tuning finished after {} iterations: {} -> {}",
        report.iterations.len(),
        report.norm_initial,
        report.norm_final
    );

    let mut header: Vec<&str> = vec![
        "iter",
        "accepted",
        "gamma_subproblem",
        "norm_candidate",
        "grid_len",
    ];
    let name_cols: Vec<String> = names.iter().map(|n| format!("k[{n}]")).collect();
    header.extend(name_cols.iter().map(|s| s.as_str()));
    let rows: Vec<Vec<String>> = report
        .iterations
        .iter()
        .map(|r| {
            let mut row = vec![
                r.iter.to_string(),
                r.accepted.to_string(),
                fmt(r.gamma_subproblem),
                fmt(r.norm_candidate),
                r.grid_len.to_string(),
            ];
            row.extend(r.k_candidate.iter().map(|v| fmt(*v)));
            row
        })
        .collect();
    write_csv(&out_dir.join("tune_trace.csv"), &header, &rows)?;

    write_csv(
        &out_dir.join("tune_summary.csv"),
        &["norm_initial", "norm_final", "iterations", "safeguard"],
        &[vec![
            fmt(report.norm_initial),
            fmt(report.norm_final),
            report.iterations.len().to_string(),
            safeguard_check(std::slice::from_ref(&fam), &report).to_string(),
        ]],
    )?;

    // Round-trippable parameter file.
    let mut out = String::from("[params]\n");
    for (name, v) in names.iter().zip(&report.k_final) {
        writeln!(out, "\"{name}\" = {}", fmt(*v)).unwrap();
    }
    fs::write(out_dir.join("tuned_params.toml"), out).map_err(io_err)?;

    write_manifest(
        out_dir,
        "tune",
        &text,
        cfg.seed,
        &["tune_trace.csv", "tune_summary.csv", "tuned_params.toml"],
    )
}

/// Step-response simulation of the configured system (linear, and
/// nonlinear for network systems) plus response metrics per output.
pub fn cmd_simulate(config_path: &Path, out_dir: &Path) -> Result<(), CliError> {
    let (cfg, text) = load_config(config_path)?;
    ensure_out_dir(out_dir)?;
    let sys = build_system(&cfg)?;
    let model = analysis_model(&sys)?;

    let s = &cfg.simulate;
    let mut w = DVector::zeros(model.n_inputs());
    if s.step.len() > model.n_inputs() {
        return Err(CliError::Config(format!(
            "step has {} entries but the system has {} inputs",
            s.step.len(),
            model.n_inputs()
        )));
    }
    for (i, v) in s.step.iter().enumerate() {
        w[i] = *v;
    }

    let traj = step_response_linear(&model, &w, s.t_end, s.dt)?;
    let traj_csv = |tr: &gridtune::sim::Trajectory| -> Vec<Vec<String>> {
        tr.t.iter()
            .enumerate()
            .map(|(k, t)| {
                let mut row = vec![fmt(*t)];
                row.extend((0..tr.n_outputs()).map(|i| fmt(tr.y[(k, i)])));
                row
            })
            .collect()
    };
    let mut header = vec!["t".to_string()];
    header.extend((0..traj.n_outputs()).map(|i| format!("y{i}")));
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    write_csv(
        &out_dir.join("trajectory_linear.csv"),
        &header_refs,
        &traj_csv(&traj),
    )?;
    let mut outputs = vec!["trajectory_linear.csv", "metrics.csv"];

    if let (RunSystem::Grid(g), true) = (&sys, s.nonlinear) {
        let op = g.equilibrium()?;
        let nl = simulate_nonlinear(g, &op, &w, s.t_end, s.dt)?;
        // Nonlinear outputs omit the zero-mode-free model's internals but
        // share the frequency-deviation channels.
        let mut h = vec!["t".to_string()];
        h.extend((0..nl.n_outputs()).map(|i| format!("y{i}")));
        let hr: Vec<&str> = h.iter().map(|s| s.as_str()).collect();
        write_csv(&out_dir.join("trajectory_nonlinear.csv"), &hr, &traj_csv(&nl))?;
        outputs.push("trajectory_nonlinear.csv");
    }

    let mut metric_rows = Vec::new();
    for i in 0..traj.n_outputs() {
        match response_metrics(&traj, i) {
            Ok(m) => metric_rows.push(vec![
                i.to_string(),
                fmt(m.final_value),
                fmt(m.overshoot),
                fmt(m.settling_time),
                fmt(m.oscillation_energy),
            ]),
            Err(gridtune::Error::NoSteadyState) => metric_rows.push(vec![
                i.to_string(),
                "nan".into(),
                "nan".into(),
                "nan".into(),
                "nan".into(),
            ]),
            Err(e) => return Err(e.into()),
        }
    }
    write_csv(
        &out_dir.join("metrics.csv"),
        &[
            "output",
            "final_value",
            "overshoot",
            "settling_time",
            "oscillation_energy",
        ],
        &metric_rows,
    )?;

    write_manifest(out_dir, "simulate", &text, cfg.seed, &outputs)
}
