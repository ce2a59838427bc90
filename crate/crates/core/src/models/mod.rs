//! DDE system descriptions consumed by the posterior, the solver and the benchmarks.
//!
//! A model exposes its drift `f(t, x(t), x_lag, theta)` together with the three
//! partial-derivative blocks the posterior gradient needs. Delays are ordinary
//! entries of the parameter vector; each [`LagChannel`] names the component it
//! reads and the parameters whose sum gives its delay.

mod hutchinson;
mod lac_operon;
mod sird;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::Smoothness;

pub use hutchinson::HutchinsonLog;
pub use lac_operon::LacOperon;
pub use sird::SirdDelayed;

/// Prior on a single parameter, expressed on its natural scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Prior {
    /// Improper flat prior on `(0, inf)`.
    UniformPositive,
    Uniform {
        lower: f64,
        upper: f64,
    },
    Normal {
        mean: f64,
        sd: f64,
    },
}

impl Prior {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Prior::UniformPositive => Ok(()),
            Prior::Uniform { lower, upper } if lower.is_finite() && upper.is_finite() && lower < upper => Ok(()),
            Prior::Normal { mean, sd } if mean.is_finite() && sd.is_finite() && sd > 0.0 => Ok(()),
            other => Err(Error::domain(format!("invalid prior {other:?}"))),
        }
    }

    pub fn log_density(&self, v: f64) -> f64 {
        match *self {
            Prior::UniformPositive => {
                if v > 0.0 {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            Prior::Uniform { lower, upper } => {
                if v >= lower && v <= upper {
                    -(upper - lower).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Prior::Normal { mean, sd } => {
                let z = (v - mean) / sd;
                -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            }
        }
    }

    /// Derivative of [`Prior::log_density`] inside the support.
    pub fn grad_log_density(&self, v: f64) -> f64 {
        match *self {
            Prior::UniformPositive | Prior::Uniform { .. } => 0.0,
            Prior::Normal { mean, sd } => -(v - mean) / (sd * sd),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub prior: Prior,
    /// Sampled on the log scale.
    pub positive: bool,
    pub is_delay: bool,
    /// Starting value for initialization.
    pub init: f64,
    /// Box searched when screening starting points.
    pub search: (f64, f64),
}

impl ParamSpec {
    pub fn rate(name: &str, init: f64, search: (f64, f64)) -> Self {
        ParamSpec {
            name: name.to_string(),
            prior: Prior::UniformPositive,
            positive: true,
            is_delay: false,
            init,
            search,
        }
    }

    pub fn delay(name: &str, init: f64, search: (f64, f64)) -> Self {
        ParamSpec {
            is_delay: true,
            ..ParamSpec::rate(name, init, search)
        }
    }
}

/// One delayed read: component `component` evaluated at `t - sum(theta[delays])`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LagChannel {
    pub component: usize,
    pub delays: Vec<usize>,
}

impl LagChannel {
    pub fn delay(&self, theta: &[f64]) -> f64 {
        self.delays.iter().map(|&d| theta[d]).sum()
    }
}

/// Map from the modeled scale to the scale on which results are reported.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationTransform {
    Identity,
    Exp,
}

impl ObservationTransform {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            ObservationTransform::Identity => v,
            ObservationTransform::Exp => v.exp(),
        }
    }
}

/// Reference setting used by the benchmarks and the `simulate` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthFixture {
    pub theta: Vec<f64>,
    pub x0: Vec<f64>,
    pub noise_sd: Vec<f64>,
    pub noise_known: bool,
    pub obs_times: Vec<f64>,
    pub t_end: f64,
    pub nu: Smoothness,
    pub level: u32,
}

/// Preallocated partial-derivative blocks, row-major with one row per equation.
#[derive(Clone, Debug, PartialEq)]
pub struct Partials {
    pub m: usize,
    pub lags: usize,
    pub params: usize,
    /// `df_i / dx_k` at `i * m + k`.
    pub dx: Vec<f64>,
    /// `df_i / dlag_c` at `i * lags + c`.
    pub dlag: Vec<f64>,
    /// `df_i / dtheta_p` at `i * params + p`, holding the lagged inputs fixed.
    pub dtheta: Vec<f64>,
}

impl Partials {
    pub fn for_model(model: &dyn DdeModel) -> Self {
        let m = model.dim();
        let lags = model.lags().len();
        let params = model.params().len();
        Partials {
            m,
            lags,
            params,
            dx: vec![0.0; m * m],
            dlag: vec![0.0; m * lags],
            dtheta: vec![0.0; m * params],
        }
    }

    pub fn clear(&mut self) {
        self.dx.iter_mut().for_each(|v| *v = 0.0);
        self.dlag.iter_mut().for_each(|v| *v = 0.0);
        self.dtheta.iter_mut().for_each(|v| *v = 0.0);
    }

    pub(crate) fn set_dx(&mut self, i: usize, k: usize, v: f64) {
        self.dx[i * self.m + k] = v;
    }

    pub(crate) fn set_dlag(&mut self, i: usize, c: usize, v: f64) {
        self.dlag[i * self.lags + c] = v;
    }

    pub(crate) fn set_dtheta(&mut self, i: usize, p: usize, v: f64) {
        self.dtheta[i * self.params + p] = v;
    }
}

/// A delay differential system `x_i'(t) = f_i(x(t), x_lag(t), theta, t)` with
/// constant history `x(t) = x(0)` for `t <= 0`.
///
/// Implement this trait and add a factory to a [`ModelRegistry`] to make a
/// custom system available to the pipeline and the CLI.
pub trait DdeModel: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn components(&self) -> &[String];
    fn params(&self) -> &[ParamSpec];
    fn lags(&self) -> &[LagChannel];

    /// Drift at time `t`; `lagged[c]` holds lag channel `c`.
    fn drift(&self, t: f64, x: &[f64], lagged: &[f64], theta: &[f64], out: &mut [f64]);

    /// Fill all entries of `p` (entries not written are expected to be zero).
    fn partials(&self, t: f64, x: &[f64], lagged: &[f64], theta: &[f64], p: &mut Partials);

    fn transform(&self) -> ObservationTransform {
        ObservationTransform::Identity
    }

    fn truth(&self) -> Option<TruthFixture> {
        None
    }

    fn dim(&self) -> usize {
        self.components().len()
    }

    fn param_index(&self, name: &str) -> Option<usize> {
        self.params().iter().position(|p| p.name == name)
    }
}

type Factory = Arc<dyn Fn() -> Arc<dyn DdeModel> + Send + Sync>;

/// Name-addressable collection of model factories.
#[derive(Clone, Default)]
pub struct ModelRegistry {
    factories: BTreeMap<String, Factory>,
}

impl fmt::Debug for ModelRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelRegistry").field("models", &self.names()).finish()
    }
}

impl ModelRegistry {
    pub fn with_builtins() -> Self {
        let mut r = ModelRegistry::default();
        r.register("hutchinson-log", || Arc::new(HutchinsonLog::new()));
        r.register("lac-operon", || Arc::new(LacOperon::new()));
        r.register("sird-delayed", || Arc::new(SirdDelayed::new()));
        r
    }

    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn() -> Arc<dyn DdeModel> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Arc::new(factory));
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn DdeModel>> {
        self.factories.get(name).map(|f| f()).ok_or_else(|| {
            Error::domain(format!(
                "unknown model '{name}'; registered models: {}",
                self.names().join(", ")
            ))
        })
    }

    pub fn names(&self) -> Vec<String> {
        self.factories.keys().cloned().collect()
    }
}

/// Look up one of the built-in models by name.
pub fn builtin(name: &str) -> Result<Arc<dyn DdeModel>> {
    ModelRegistry::with_builtins().get(name)
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_prior_density_difference() {
        let p = Prior::Normal { mean: 3.5, sd: 1.0 };
        assert!((p.log_density(3.5) - p.log_density(2.5) - 0.5).abs() < 1e-15);
        assert!((p.grad_log_density(2.5) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_priors_have_bounded_support() {
        assert_eq!(Prior::UniformPositive.log_density(-1.0), f64::NEG_INFINITY);
        let u = Prior::Uniform { lower: 0.0, upper: 5.0 };
        assert!((u.log_density(2.0) + 5f64.ln()).abs() < 1e-15);
        assert_eq!(u.log_density(5.5), f64::NEG_INFINITY);
        assert!(Prior::Normal { mean: 0.0, sd: 0.0 }.validate().is_err());
    }

    #[test]
    fn registry_lists_builtins_and_rejects_unknown() {
        let r = ModelRegistry::with_builtins();
        assert_eq!(r.names(), vec!["hutchinson-log", "lac-operon", "sird-delayed"]);
        let err = r.get("nope").unwrap_err().to_string();
        assert!(err.contains("hutchinson-log") && err.contains("sird-delayed"));
    }

    #[test]
    fn custom_models_can_be_registered() {
        let mut r = ModelRegistry::with_builtins();
        r.register("hutch-copy", || Arc::new(HutchinsonLog::new()));
        assert_eq!(r.get("hutch-copy").unwrap().dim(), 1);
    }

    #[test]
    fn every_builtin_has_consistent_shapes() {
        for name in ModelRegistry::with_builtins().names() {
            let m = builtin(&name).unwrap();
            let truth = m.truth().unwrap();
            assert_eq!(truth.theta.len(), m.params().len());
            assert_eq!(truth.x0.len(), m.dim());
            assert_eq!(truth.noise_sd.len(), m.dim());
            for c in m.lags() {
                assert!(c.component < m.dim());
                assert!(c.delays.iter().all(|&d| m.params()[d].is_delay));
            }
            let mut out = vec![0.0; m.dim()];
            let lag: Vec<f64> = m.lags().iter().map(|c| truth.x0[c.component]).collect();
            m.drift(0.0, &truth.x0, &lag, &truth.theta, &mut out);
            assert!(out.iter().all(|v| v.is_finite()));
        }
    }
}
