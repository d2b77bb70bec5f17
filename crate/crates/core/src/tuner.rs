//! Iterative tuning of structured controller parameters: repeatedly
//! linearize the closed-loop frequency response in the parameters, solve a
//! convex semidefinite subproblem over a frequency grid, and accept the
//! step only if an independent norm computation certifies strict
//! improvement. Rejections shrink the trust region and refine the grid.

use crate::error::{Error, Result};
use crate::lti::{hinf_norm_bisect, poles, FrequencyGrid, HinfResult};
use crate::param::ParamSystem;
use crate::subproblem::{linearize_response, solve_subproblem, SubproblemSpec, DEFAULT_SDP_TOL};

/// Stability margin required of every accepted iterate.
pub const STABILITY_MARGIN: f64 = 1e-9;

/// Bisection tolerance used for the acceptance-test norms.
pub const NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct TuneConfig {
    /// Initial trust region half-width per parameter.
    pub delta_k0: Vec<f64>,
    /// Trust-region shrink factor on rejection.
    pub alpha: f64,
    /// Maximum outer iterations.
    pub k_max: usize,
    /// Initial frequency grid.
    pub grid0: FrequencyGrid,
    /// Relative improvement below which an accepted step counts toward
    /// convergence; three consecutive such steps terminate.
    pub conv_tol: f64,
}

impl TuneConfig {
    pub fn new(delta_k0: Vec<f64>, grid0: FrequencyGrid) -> Self {
        Self {
            delta_k0,
            alpha: 0.7,
            k_max: 100,
            grid0,
            conv_tol: 1e-4,
        }
    }

    fn validate(&self, n_params: usize) -> Result<()> {
        if self.delta_k0.len() != n_params {
            return Err(Error::DimensionMismatch(
                "trust-region width does not match the parameter count".into(),
            ));
        }
        if !self.delta_k0.iter().all(|d| *d > 0.0) {
            return Err(Error::InvalidModel("trust region must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidModel(
                "shrink factor must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Why a rejected step was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    /// A candidate closed loop was unstable.
    Unstable,
    /// The certified norm did not strictly decrease.
    NoDecrease,
}

/// One outer iteration of the tuning loop.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iter: usize,
    /// Candidate produced by the convex subproblem.
    pub k_candidate: Vec<f64>,
    /// Subproblem optimum (linearized bound).
    pub gamma_subproblem: f64,
    /// Worst certified norm over all scenarios at the candidate
    /// (infinite if some scenario is unstable).
    pub norm_candidate: f64,
    pub accepted: bool,
    pub rejection: Option<Rejection>,
    /// Trust-region width in effect when the subproblem was solved.
    pub delta_k: Vec<f64>,
    pub grid_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Relative improvement stayed below `conv_tol` for three consecutive
    /// accepted iterations.
    Converged,
    /// Iteration budget exhausted.
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct TuneReport {
    pub k_initial: Vec<f64>,
    pub k_final: Vec<f64>,
    /// Worst-case certified norm at the initial and final parameters.
    pub norm_initial: f64,
    pub norm_final: f64,
    pub iterations: Vec<IterationRecord>,
    pub termination: Termination,
    /// Final (possibly refined) frequency grid.
    pub grid: FrequencyGrid,
}

impl TuneReport {
    /// Parameters and certified norms of the accepted trajectory, starting
    /// from the initial point.
    pub fn accepted_norms(&self) -> Vec<f64> {
        let mut v = vec![self.norm_initial];
        v.extend(
            self.iterations
                .iter()
                .filter(|r| r.accepted)
                .map(|r| r.norm_candidate),
        );
        v
    }
}

/// Certified worst-case norm over scenarios: infinite if any scenario is
/// unstable at `k`.
fn certified_norm(scenarios: &[ParamSystem], k: &[f64]) -> Result<(f64, Vec<HinfResult>)> {
    let mut worst = 0.0_f64;
    let mut results = Vec::with_capacity(scenarios.len());
    for s in scenarios {
        let sys = s.realize(k)?;
        let r = hinf_norm_bisect(&sys, NORM_TOL);
        worst = worst.max(r.norm);
        results.push(r);
    }
    Ok((worst, results))
}

/// Extend the grid after a rejection: imaginary parts of any unstable
/// candidate poles plus the certified peak frequencies of the incumbent.
pub fn refine_grid(
    grid: &mut FrequencyGrid,
    scenarios: &[ParamSystem],
    k_candidate: &[f64],
    incumbent: &[HinfResult],
) -> Result<()> {
    for s in scenarios {
        let sys = s.realize(k_candidate)?;
        let ps = poles(&sys)?;
        for p in &ps.poles {
            if p.re >= -STABILITY_MARGIN {
                let w = p.im.abs();
                if w > 0.0 {
                    grid.insert(w);
                }
            }
        }
    }
    for r in incumbent {
        if r.peak_omega > 0.0 {
            grid.insert(r.peak_omega);
        }
    }
    Ok(())
}

/// Post-hoc certificate over a tuning trace: every accepted iterate keeps
/// all scenarios stable and the certified norms decrease strictly.
pub fn safeguard_check(scenarios: &[ParamSystem], report: &TuneReport) -> bool {
    let mut prev = f64::INFINITY;
    let mut points: Vec<Vec<f64>> = vec![report.k_initial.clone()];
    points.extend(
        report
            .iterations
            .iter()
            .filter(|r| r.accepted)
            .map(|r| r.k_candidate.clone()),
    );
    for k in &points {
        let Ok((norm, results)) = certified_norm(scenarios, k) else {
            return false;
        };
        if results.iter().any(|r| !r.stable) {
            return false;
        }
        if !(norm < prev) && prev.is_finite() {
            return false;
        }
        prev = norm;
    }
    true
}

/// Tune one parameterized closed loop; see [`tune_multi`].
pub fn tune(system: &ParamSystem, k0: &[f64], config: &TuneConfig) -> Result<TuneReport> {
    tune_multi(std::slice::from_ref(system), k0, config)
}

const NO_PROGRESS_WINDOW: usize = 10;
const NO_PROGRESS_SHRINK: f64 = 1e-9;
const CONV_STREAK: usize = 3;

/// Tune shared parameters against several scenarios simultaneously: the
/// subproblem bounds the worst frequency response over all of them and a
/// step is accepted only if the certified worst-case norm strictly
/// decreases while every scenario stays stable.
pub fn tune_multi(
    scenarios: &[ParamSystem],
    k0: &[f64],
    config: &TuneConfig,
) -> Result<TuneReport> {
    if scenarios.is_empty() {
        return Err(Error::InvalidModel("no scenarios to tune against".into()));
    }
    let n_p = scenarios[0].n_params();
    for s in scenarios {
        if s.n_params() != n_p {
            return Err(Error::DimensionMismatch(
                "scenarios disagree on the parameter count".into(),
            ));
        }
        s.check_bounds(k0)?;
    }
    config.validate(n_p)?;

    // The initial parameters must stabilize every scenario.
    let (mut best_norm, mut best_results) = certified_norm(scenarios, k0)?;
    if let Some(bad) = best_results.iter().find(|r| !r.stable) {
        let _ = bad;
        let max_re = scenarios
            .iter()
            .map(|s| {
                let sys = s.realize(k0).unwrap();
                poles(&sys).map(|p| p.max_real_part()).unwrap_or(f64::NAN)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        return Err(Error::InitialUnstable { max_re });
    }
    let norm_initial = best_norm;

    let mut k = k0.to_vec();
    let mut delta = config.delta_k0.clone();
    let mut grid = config.grid0.clone();
    let mut iterations = Vec::new();
    let mut conv_streak = 0usize;
    let mut reject_streak = 0usize;
    let mut termination = Termination::MaxIterations;

    for iter in 1..=config.k_max {
        let models: Vec<_> = scenarios
            .iter()
            .map(|s| linearize_response(s, &k, &grid))
            .collect::<Result<_>>()?;
        let sol = solve_subproblem(&SubproblemSpec {
            models: &models,
            k_min: &scenarios[0].k_min,
            k_max: &scenarios[0].k_max,
            delta_k: &delta,
            tol: DEFAULT_SDP_TOL,
        })?;

        let (cand_norm, cand_results) = certified_norm(scenarios, &sol.k_next)?;
        let all_stable = cand_results.iter().all(|r| r.stable);
        let accepted = all_stable && cand_norm < best_norm;

        let rejection = if accepted {
            None
        } else if !all_stable {
            Some(Rejection::Unstable)
        } else {
            Some(Rejection::NoDecrease)
        };
        iterations.push(IterationRecord {
            iter,
            k_candidate: sol.k_next.clone(),
            gamma_subproblem: sol.gamma,
            norm_candidate: cand_norm,
            accepted,
            rejection,
            delta_k: delta.clone(),
            grid_len: grid.len(),
        });

        if accepted {
            let rel = (best_norm - cand_norm) / best_norm;
            k = sol.k_next;
            best_norm = cand_norm;
            best_results = cand_results;
            reject_streak = 0;
            if rel < config.conv_tol {
                conv_streak += 1;
                if conv_streak >= CONV_STREAK {
                    termination = Termination::Converged;
                    break;
                }
            } else {
                conv_streak = 0;
            }
        } else {
            // A stable candidate whose certified norm ties the incumbent to
            // within the convergence tolerance is a stall at an optimum,
            // not a failure: count it toward convergence.
            if all_stable && cand_norm <= best_norm * (1.0 + config.conv_tol) {
                conv_streak += 1;
                if conv_streak >= CONV_STREAK {
                    termination = Termination::Converged;
                    break;
                }
            } else {
                conv_streak = 0;
            }
            reject_streak += 1;
            for d in delta.iter_mut() {
                *d *= config.alpha;
            }
            refine_grid(&mut grid, scenarios, &sol.k_next, &best_results)?;
            let shrunk = delta
                .iter()
                .zip(&config.delta_k0)
                .all(|(d, d0)| *d < NO_PROGRESS_SHRINK * d0);
            if reject_streak >= NO_PROGRESS_WINDOW && shrunk {
                return Err(Error::NoProgress {
                    rejections: reject_streak,
                });
            }
        }
    }

    Ok(TuneReport {
        k_initial: k0.to_vec(),
        k_final: k,
        norm_initial,
        norm_final: best_norm,
        iterations,
        termination,
        grid,
    })
}
