//! Parameterized state-space families: the map from a tunable parameter
//! vector to `(A(K), B(K), C, D)` with box bounds.

use crate::error::{Error, Result};
use crate::lti::StateSpace;
use std::sync::Arc;

type EvalFn = dyn Fn(&[f64]) -> StateSpace + Send + Sync;

/// A family of state-space systems indexed by a tunable parameter vector,
/// together with box bounds and stable parameter naming/ordering.
#[derive(Clone)]
pub struct ParamSystem {
    eval: Arc<EvalFn>,
    pub param_names: Vec<String>,
    pub k_min: Vec<f64>,
    pub k_max: Vec<f64>,
}

impl std::fmt::Debug for ParamSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamSystem")
            .field("param_names", &self.param_names)
            .field("k_min", &self.k_min)
            .field("k_max", &self.k_max)
            .finish()
    }
}

impl ParamSystem {
    pub fn new(
        param_names: Vec<String>,
        k_min: Vec<f64>,
        k_max: Vec<f64>,
        eval: impl Fn(&[f64]) -> StateSpace + Send + Sync + 'static,
    ) -> Result<Self> {
        let n = param_names.len();
        if k_min.len() != n || k_max.len() != n {
            return Err(Error::DimensionMismatch(
                "parameter names and bounds must have equal length".into(),
            ));
        }
        for i in 0..n {
            if !(k_min[i] <= k_max[i]) {
                return Err(Error::InvalidModel(format!(
                    "bound for '{}' is inverted: [{}, {}]",
                    param_names[i], k_min[i], k_max[i]
                )));
            }
        }
        Ok(Self {
            eval: Arc::new(eval),
            param_names,
            k_min,
            k_max,
        })
    }

    /// Parameter-free family (fixed system).
    pub fn constant(sys: StateSpace) -> Self {
        Self {
            eval: Arc::new(move |_: &[f64]| sys.clone()),
            param_names: Vec::new(),
            k_min: Vec::new(),
            k_max: Vec::new(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.param_names.len()
    }

    pub fn check_bounds(&self, k: &[f64]) -> Result<()> {
        if k.len() != self.n_params() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                k.len()
            )));
        }
        let tol = 1e-9;
        for i in 0..k.len() {
            let span = (self.k_max[i] - self.k_min[i]).abs().max(1.0);
            if k[i] < self.k_min[i] - tol * span || k[i] > self.k_max[i] + tol * span {
                return Err(Error::ParamOutOfBounds {
                    name: self.param_names[i].clone(),
                    value: k[i],
                    min: self.k_min[i],
                    max: self.k_max[i],
                });
            }
        }
        Ok(())
    }

    /// Evaluate the family at an in-bounds parameter vector.
    pub fn realize(&self, k: &[f64]) -> Result<StateSpace> {
        self.check_bounds(k)?;
        Ok((self.eval)(k))
    }

    /// Evaluate without bound checks (internal use, e.g. finite differencing
    /// where the probe point may sit a half-step outside the box).
    pub(crate) fn realize_unchecked(&self, k: &[f64]) -> StateSpace {
        (self.eval)(k)
    }

    /// Clamp a parameter vector onto the box.
    pub fn clamp(&self, k: &[f64]) -> Vec<f64> {
        k.iter()
            .enumerate()
            .map(|(i, &v)| v.clamp(self.k_min[i], self.k_max[i]))
            .collect()
    }
}
