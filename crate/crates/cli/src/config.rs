//! Run configuration: a TOML document plus `--set key=value` overrides.
//!
//! Every key is optional. Keys not listed here are rejected.
//!
//! ```toml
//! model = "hutchinson-log"        # built-in model name
//! seed = 0                        # single source of randomness
//! scheme = "linear-interpolation" # or "conditional-expectation"
//! nu = "2.5"                      # "2.01" or "2.5"; default from the model
//! level = 2                       # grid refinements; default from the model
//! observations = "obs.csv"        # fit and stability
//! known_noise = { N = 0.1 }       # by component; others are sampled
//!
//! [hmc]                           # see HmcConfig
//! iterations = 40000
//! burn_in = 20000
//! leapfrog_steps = 20
//! thin = 10
//!
//! [priors.tau]                    # by parameter name
//! kind = "uniform"
//! lower = 0.0
//! upper = 5.0
//!
//! [simulation]                    # simulate, solve and benchmark
//! replicates = 20
//! step = 0.01
//! # theta, x0, obs_times, t_end, noise_sd, noise_known override the model's reference setting
//!
//! [stability]
//! levels = [2, 3]                 # default: level and level + 1
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use magidde::bench::SimulationSpec;
use magidde::hmc::HmcConfig;
use magidde::kernels::Smoothness;
use magidde::models::{DdeModel, ModelRegistry, Prior, TruthFixture};
use magidde::pipeline::{FixedHyperparameters, InferenceConfig};
use magidde::posterior::HistoryScheme;
use serde::Deserialize;

use crate::CliError;

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub replicates: Option<usize>,
    /// Solver step for `solve` and for the truth trajectory of `simulate`.
    pub step: Option<f64>,
    pub theta: Option<Vec<f64>>,
    pub x0: Option<Vec<f64>>,
    pub obs_times: Option<Vec<f64>>,
    pub t_end: Option<f64>,
    pub noise_sd: Option<Vec<f64>>,
    pub noise_known: Option<bool>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilitySection {
    pub levels: Option<(u32, u32)>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: String,
    pub seed: u64,
    pub scheme: HistoryScheme,
    pub nu: Option<Smoothness>,
    pub level: Option<u32>,
    pub observations: Option<PathBuf>,
    pub known_noise: BTreeMap<String, f64>,
    pub priors: BTreeMap<String, Prior>,
    pub hyperparameters: BTreeMap<String, FixedHyperparameters>,
    pub unobserved_init: BTreeMap<String, f64>,
    pub hmc: HmcConfig,
    pub simulation: SimulationSection,
    pub stability: StabilitySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: "hutchinson-log".into(),
            seed: 0,
            scheme: HistoryScheme::default(),
            nu: None,
            level: None,
            observations: None,
            known_noise: BTreeMap::new(),
            priors: BTreeMap::new(),
            hyperparameters: BTreeMap::new(),
            unobserved_init: BTreeMap::new(),
            hmc: HmcConfig::default(),
            simulation: SimulationSection::default(),
            stability: StabilitySection::default(),
        }
    }
}

/// Parse the right-hand side of `key=value` as a TOML value, falling back to
/// a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got '{assignment}'")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("malformed key '{key}'")));
    }
    let mut table = doc;
    for part in &path[..path.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("'{part}' in '{key}' is not a table")))?;
    }
    table.insert(path[path.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    /// Read `path` (if given), apply overrides in order and validate keys.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                toml::from_str::<toml::Table>(&text)
                    .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Usage(format!("invalid config: {}", e.message())))?;
        cfg.hmc.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        for prior in cfg.priors.values() {
            prior.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        }
        Ok(cfg)
    }

    pub fn model(&self) -> Result<Arc<dyn DdeModel>, CliError> {
        ModelRegistry::with_builtins()
            .get(&self.model)
            .map_err(|e| CliError::Usage(e.to_string()))
    }

    fn reference(&self, model: &dyn DdeModel) -> Option<TruthFixture> {
        model.truth()
    }

    pub fn inference(&self, model: &dyn DdeModel) -> InferenceConfig {
        let truth = self.reference(model);
        InferenceConfig {
            model: self.model.clone(),
            level: self.level.or(truth.as_ref().map(|t| t.level)).unwrap_or(0),
            nu: self.nu.or(truth.as_ref().map(|t| t.nu)).unwrap_or(Smoothness::Nu201),
            scheme: self.scheme,
            hmc: self.hmc.clone(),
            known_noise: self.known_noise.clone(),
            priors: self.priors.clone(),
            hyperparameters: self.hyperparameters.clone(),
            unobserved_init: self.unobserved_init.clone(),
            initial_theta: None,
            seed: self.seed,
        }
    }

    /// Simulation setting: the model's reference values with any overrides.
    pub fn simulation(&self, model: &dyn DdeModel) -> Result<SimulationSpec, CliError> {
        let s = &self.simulation;
        let truth = self.reference(model);
        let need = |v: Option<Vec<f64>>, from: Option<Vec<f64>>, what: &str| {
            v.or(from)
                .ok_or_else(|| CliError::Usage(format!("simulation.{what} is required for model '{}'", self.model)))
        };
        let t = truth.as_ref();
        let spec = SimulationSpec {
            theta: need(s.theta.clone(), t.map(|t| t.theta.clone()), "theta")?,
            x0: need(s.x0.clone(), t.map(|t| t.x0.clone()), "x0")?,
            obs_times: need(s.obs_times.clone(), t.map(|t| t.obs_times.clone()), "obs_times")?,
            t_end: s
                .t_end
                .or(t.map(|t| t.t_end))
                .ok_or_else(|| CliError::Usage("simulation.t_end is required".into()))?,
            noise_sd: need(s.noise_sd.clone(), t.map(|t| t.noise_sd.clone()), "noise_sd")?,
            noise_known: s.noise_known.or(t.map(|t| t.noise_known)).unwrap_or(false),
            replicates: s.replicates.unwrap_or(20),
            base_seed: self.seed,
            inference: self.inference(model),
        };
        if spec.theta.len() != model.params().len()
            || spec.x0.len() != model.dim()
            || spec.noise_sd.len() != model.dim()
        {
            return Err(CliError::Usage(format!(
                "simulation settings do not match the shape of '{}'",
                self.model
            )));
        }
        Ok(spec.with_known_noise(model))
    }

    pub fn step(&self) -> f64 {
        self.simulation.step.unwrap_or(0.01)
    }

    pub fn stability_levels(&self, model: &dyn DdeModel) -> (u32, u32) {
        let base = self.inference(model).level;
        self.stability.levels.unwrap_or((base, base + 1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_come_from_the_model() {
        let cfg = RunConfig::load(None, &[]).unwrap();
        let model = cfg.model().unwrap();
        let inf = cfg.inference(model.as_ref());
        assert_eq!((inf.level, inf.nu), (2, Smoothness::Nu25));
        assert_eq!(cfg.simulation(model.as_ref()).unwrap().obs_times.len(), 16);
    }

    #[test]
    fn overrides_reach_nested_tables() {
        let sets = [
            "hmc.iterations=500".to_string(),
            "hmc.burn_in=100".to_string(),
            "model=sird-delayed".to_string(),
            "priors.h.kind=\"normal\"".to_string(),
            "priors.h.mean=3.0".to_string(),
            "priors.h.sd=0.5".to_string(),
            "scheme=conditional-expectation".to_string(),
        ];
        let cfg = RunConfig::load(None, &sets).unwrap();
        assert_eq!(cfg.hmc.iterations, 500);
        assert_eq!(cfg.model, "sird-delayed");
        assert_eq!(cfg.priors["h"], Prior::Normal { mean: 3.0, sd: 0.5 });
        assert_eq!(cfg.scheme, HistoryScheme::ConditionalExpectation);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_usage_errors() {
        for bad in ["colour=1", "hmc.speed=2", "hmc.iterations=-3", "nu=\"3.0\"", "novalue"] {
            let err = RunConfig::load(None, &[bad.to_string()]).unwrap_err();
            assert!(matches!(err, CliError::Usage(_)), "{bad}: {err:?}");
        }
        let cfg = RunConfig::load(None, &["model=\"nope\"".into()]).unwrap();
        let msg = cfg.model().unwrap_err().to_string();
        assert!(msg.contains("hutchinson-log") && msg.contains("lac-operon"), "{msg}");
    }
}
