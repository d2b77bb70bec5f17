//! Crate-wide error type.

/// Errors raised by model construction, analysis and tuning.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    /// `jw*I - A` is numerically singular: a pole sits on (or too close to)
    /// the requested frequency.
    #[error("system is singular at omega = {omega} rad/s (pole on the grid point)")]
    SingularAtFrequency { omega: f64 },

    /// The eigenvalue solver did not converge.
    #[error("eigenvalue computation failed")]
    EigenFailure,

    /// A stable system was required.
    #[error("system is not stable (max Re(lambda) = {max_re})")]
    NotStable { max_re: f64 },

    /// Matrix deviates from Hermitian symmetry beyond tolerance.
    #[error("matrix is not Hermitian (asymmetry {defect})")]
    NotHermitian { defect: f64 },

    /// Oracle-only routine invoked on a system above its size cap.
    #[error("state dimension {n} exceeds the size cap {cap}")]
    SizeCap { n: usize, cap: usize },

    /// A delay-free algebraic loop with unity gain makes the diagram ill-posed.
    #[error("block diagram has an ill-posed (delay-free) algebraic loop")]
    IllPosedLoop,

    /// Invalid block or diagram data.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// Newton power-flow iteration did not converge.
    #[error("power flow did not converge after {iters} iterations (residual {residual})")]
    NonConvergence { iters: usize, residual: f64 },

    /// A dynamic bus has no prosumer model attached.
    #[error("bus {bus} is marked dynamic but has no prosumer model")]
    UnmodeledBus { bus: usize },

    /// Algebraic Jacobian of the power flow is singular at the operating point.
    #[error("algebraic Jacobian is singular at the operating point")]
    SingularAlgebraicJacobian,

    /// More than one near-zero eigenmode: the network model is inconsistent.
    #[error("found {count} near-zero eigenmodes, expected exactly one")]
    MultipleZeroModes { count: usize },

    /// No near-zero eigenmode present; reduction is not applicable.
    #[error("no near-zero eigenmode present")]
    NoZeroMode,

    /// SDP subproblem reported primal/dual infeasibility.
    #[error("subproblem reported infeasible, which contradicts the feasible start")]
    SubproblemInfeasible,

    /// SDP solver failure (numerical breakdown).
    #[error("SDP solver failed: {0}")]
    SolverFailure(String),

    /// Initial parameter vector does not stabilize the system.
    #[error("initial parameterization is unstable (max Re(lambda) = {max_re})")]
    InitialUnstable { max_re: f64 },

    /// Trust region collapsed without any accepted step.
    #[error("no progress: last {rejections} iterations rejected with collapsed trust region")]
    NoProgress { rejections: usize },

    /// Newton solve of the algebraic network equations failed mid-transient.
    #[error("algebraic Newton solve failed at t = {t} s (residual {residual})")]
    AlgebraicNewtonFailure { t: f64, residual: f64 },

    /// Trajectory never settles; step metrics are undefined.
    #[error("trajectory does not reach a steady state")]
    NoSteadyState,

    /// Parameter vector violates its box bounds.
    #[error("parameter '{name}' = {value} outside box [{min}, {max}]")]
    ParamOutOfBounds {
        name: String,
        value: f64,
        min: f64,
        max: f64,
    },

    /// Dimension mismatch in user-supplied data.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;
