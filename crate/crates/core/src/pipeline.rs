//! End-to-end inference: hyperparameter fitting, state initialization,
//! parameter pre-optimization, HMC sampling and posterior summaries.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{build_cache, fit_hyperparameters, ComponentObservations, NoiseLevel};
use crate::hmc::{self, ChainOutput, HmcConfig, Summary, Transform};
use crate::kernels::{MaternParams, Smoothness};
use crate::models::{builtin, DdeModel, Prior};
use crate::optim::{minimize, SimplexOptions};
use crate::posterior::{build_grid, HistoryScheme, Posterior};

const PREOPT_EVALUATIONS: usize = 500;
const SCREEN_DRAWS: usize = 256;

/// GP hyperparameters supplied by the user instead of being fitted.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedHyperparameters {
    pub variance: f64,
    pub bandwidth: f64,
    /// GP prior mean; defaults to the observation mean, or the initial value
    /// of an unobserved component.
    #[serde(default)]
    pub mean: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    pub model: String,
    pub level: u32,
    pub nu: Smoothness,
    pub scheme: HistoryScheme,
    pub hmc: HmcConfig,
    /// Known noise standard deviations by component name. Components not
    /// listed have their noise level sampled.
    pub known_noise: BTreeMap<String, f64>,
    /// Prior overrides by parameter name.
    pub priors: BTreeMap<String, Prior>,
    /// Hyperparameter overrides by component name (required for unobserved components).
    pub hyperparameters: BTreeMap<String, FixedHyperparameters>,
    /// Constant initial value of unobserved components (default 0).
    pub unobserved_init: BTreeMap<String, f64>,
    /// Start the sampler from these parameter values instead of optimizing.
    pub initial_theta: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            model: "hutchinson-log".into(),
            level: 2,
            nu: Smoothness::Nu25,
            scheme: HistoryScheme::LinearInterpolation,
            hmc: HmcConfig::default(),
            known_noise: BTreeMap::new(),
            priors: BTreeMap::new(),
            hyperparameters: BTreeMap::new(),
            unobserved_init: BTreeMap::new(),
            initial_theta: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedSummary {
    pub name: String,
    #[serde(flatten)]
    pub summary: Summary,
}

/// Posterior mean and pointwise 95% band of each component on the grid, on
/// the model's reporting scale. Indexed `[component][grid point]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub times: Vec<f64>,
    pub components: Vec<String>,
    pub mean: Vec<Vec<f64>>,
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentFit {
    pub component: String,
    pub variance: f64,
    pub bandwidth: f64,
    pub mean: f64,
    /// Known noise level, or the fitted one used to start the sampler.
    pub noise_sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub acceptance: Vec<f64>,
    pub accept_rate: f64,
    pub step_size: f64,
    pub runtime_seconds: f64,
    pub beta: f64,
    pub grid_size: usize,
    pub level: u32,
    pub initial_theta: Vec<f64>,
    pub hyperparameters: Vec<ComponentFit>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub model: String,
    /// One entry per model parameter, in declaration order.
    pub parameters: Vec<NamedSummary>,
    /// Sampled noise levels (components with known noise are absent).
    pub noise: Vec<NamedSummary>,
    /// Posterior mean of `x(0)` on the modeled scale.
    pub initial_state: Vec<f64>,
    pub trajectory: TrajectorySummary,
    pub chain: ChainOutput,
    pub diagnostics: Diagnostics,
}

/// A posterior with a starting point and per-coordinate step scales, ready to sample.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub posterior: Posterior,
    pub init: Vec<f64>,
    pub scale: Vec<f64>,
    pub fits: Vec<ComponentFit>,
}

fn check_names<'a>(keys: impl Iterator<Item = &'a String>, known: &[String], what: &str) -> Result<()> {
    for k in keys {
        if !known.contains(k) {
            return Err(Error::domain(format!(
                "unknown {what} '{k}'; expected one of {}",
                known.join(", ")
            )));
        }
    }
    Ok(())
}

/// Piecewise-linear interpolation of `(times, values)` on `grid`, constant
/// beyond the first and last observation.
pub fn interpolate_observations(times: &[f64], values: &[f64], grid: &[f64]) -> Vec<f64> {
    grid.iter()
        .map(|&t| {
            if t <= times[0] {
                return values[0];
            }
            let last = times.len() - 1;
            if t >= times[last] {
                return values[last];
            }
            let k = times.partition_point(|&s| s <= t) - 1;
            let w = (t - times[k]) / (times[k + 1] - times[k]);
            values[k] + w * (values[k + 1] - values[k])
        })
        .collect()
}

/// Fit hyperparameters, build the frozen posterior and choose the sampler's
/// starting point.
pub fn prepare(model: Arc<dyn DdeModel>, obs: &[ComponentObservations], cfg: &InferenceConfig) -> Result<Prepared> {
    let m = model.dim();
    let names = model.components().to_vec();
    if obs.len() != m {
        return Err(Error::domain(format!(
            "{} has {m} components, got {} observation series",
            model.name(),
            obs.len()
        )));
    }
    if obs.iter().all(|o| o.is_empty()) {
        return Err(Error::domain("no component has observations"));
    }
    check_names(cfg.known_noise.keys(), &names, "component")?;
    check_names(cfg.hyperparameters.keys(), &names, "component")?;
    check_names(cfg.unobserved_init.keys(), &names, "component")?;
    let pnames: Vec<String> = model.params().iter().map(|p| p.name.clone()).collect();
    check_names(cfg.priors.keys(), &pnames, "parameter")?;

    let obs: Vec<ComponentObservations> = obs
        .iter()
        .zip(&names)
        .map(|(o, name)| {
            let mut o = o.clone();
            if let Some(&s) = cfg.known_noise.get(name) {
                o.noise = NoiseLevel::Known(s);
            }
            o
        })
        .collect();

    let times: Vec<Vec<f64>> = obs.iter().map(|o| o.times.clone()).collect();
    let grid = build_grid(&times, cfg.level).map_err(|e| e.in_stage("grid"))?;

    let mut fits = Vec::with_capacity(m);
    let mut caches = Vec::with_capacity(m);
    let mut means = Vec::with_capacity(m);
    for (i, o) in obs.iter().enumerate() {
        let fit = match cfg.hyperparameters.get(&names[i]) {
            Some(h) => {
                let default_mean = if o.is_empty() {
                    cfg.unobserved_init.get(&names[i]).copied().unwrap_or(0.0)
                } else {
                    o.sample_mean()
                };
                let noise_sd = match o.noise {
                    NoiseLevel::Known(s) => s,
                    NoiseLevel::Unknown => o.sample_variance().sqrt().max(1e-8) * 0.1,
                };
                let p =
                    MaternParams::new(h.variance, h.bandwidth, cfg.nu).map_err(|e| e.in_stage("hyperparameters"))?;
                ComponentFit {
                    component: names[i].clone(),
                    variance: p.variance,
                    bandwidth: p.bandwidth,
                    mean: h.mean.unwrap_or(default_mean),
                    noise_sd,
                }
            }
            None if o.is_empty() => {
                return Err(Error::domain(format!(
                    "component '{}' is unobserved; its GP hyperparameters must be supplied",
                    names[i]
                ))
                .in_stage("hyperparameters"))
            }
            None => {
                let f = fit_hyperparameters(o, cfg.nu).map_err(|e| e.in_stage("hyperparameters"))?;
                debug!(
                    "{}: phi1 = {:.4e}, phi2 = {:.4}, sigma = {:.4e}",
                    names[i],
                    f.params.variance,
                    f.params.bandwidth,
                    f.noise_var.sqrt()
                );
                ComponentFit {
                    component: names[i].clone(),
                    variance: f.params.variance,
                    bandwidth: f.params.bandwidth,
                    mean: f.mean,
                    noise_sd: f.noise_var.sqrt(),
                }
            }
        };
        let p = MaternParams::new(fit.variance, fit.bandwidth, cfg.nu)?;
        caches.push(build_cache(&grid.times, &p).map_err(|e| e.in_stage("caches"))?);
        means.push(fit.mean);
        fits.push(fit);
    }

    let mut posterior =
        Posterior::new(model.clone(), grid, caches, means, &obs, cfg.scheme).map_err(|e| e.in_stage("posterior"))?;
    for (name, prior) in &cfg.priors {
        let idx = model.param_index(name).expect("checked above");
        posterior.set_prior(idx, *prior).map_err(|e| e.in_stage("posterior"))?;
    }

    let (init, scale) = initialize(&posterior, &obs, &fits, cfg).map_err(|e| e.in_stage("initialize"))?;
    Ok(Prepared {
        posterior,
        init,
        scale,
        fits,
    })
}

/// Starting state and per-coordinate step scales.
///
/// `x` interpolates the observations (constant for unobserved components),
/// noise levels start at their fitted values, and `theta` is the best of a
/// randomized screening of the parameter search boxes refined by a simplex
/// search with `x` and `sigma` held fixed.
pub fn initialize(
    posterior: &Posterior,
    obs: &[ComponentObservations],
    fits: &[ComponentFit],
    cfg: &InferenceConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let model = posterior.model().clone();
    let grid = &posterior.grid().times;
    let specs = model.params();
    let x: Vec<Vec<f64>> = obs
        .iter()
        .zip(model.components())
        .map(|(o, name)| {
            if o.is_empty() {
                vec![cfg.unobserved_init.get(name).copied().unwrap_or(0.0); grid.len()]
            } else {
                interpolate_observations(&o.times, &o.values, grid)
            }
        })
        .collect();
    let sigma: Vec<f64> = fits.iter().map(|f| f.noise_sd.max(1e-300)).collect();

    let theta0: Vec<f64> = match &cfg.initial_theta {
        Some(t) if t.len() == specs.len() => t.clone(),
        Some(t) => {
            return Err(Error::domain(format!(
                "initial_theta has {} entries, model has {}",
                t.len(),
                specs.len()
            )));
        }
        None => specs.iter().map(|s| s.init).collect(),
    };
    let mut z = posterior.pack(&x, &theta0, &sigma)?;
    let off = posterior.theta_index(0);
    let np = specs.len();

    if cfg.initial_theta.is_none() {
        let objective = |t: &[f64]| {
            let mut zz = z.clone();
            zz[off..off + np].copy_from_slice(t);
            -posterior.log_density(&zz)
        };
        let to_coord = |p: usize, v: f64| if specs[p].positive { v.ln() } else { v };
        let mut best: Vec<f64> = (0..np).map(|p| to_coord(p, theta0[p])).collect();
        let mut best_val = objective(&best);

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5e_ed5c_4ee7);
        for _ in 0..SCREEN_DRAWS {
            let cand: Vec<f64> = specs
                .iter()
                .enumerate()
                .map(|(p, s)| {
                    let (lo, hi) = (to_coord(p, s.search.0), to_coord(p, s.search.1));
                    lo + rng.random::<f64>() * (hi - lo)
                })
                .collect();
            let v = objective(&cand);
            if v < best_val {
                best = cand;
                best_val = v;
            }
        }
        let steps: Vec<f64> = specs
            .iter()
            .enumerate()
            .map(|(p, s)| {
                if s.positive {
                    0.1
                } else {
                    0.1 * (to_coord(p, s.search.1) - to_coord(p, s.search.0))
                }
            })
            .collect();
        let res = minimize(
            objective,
            &best,
            &steps,
            SimplexOptions {
                max_evaluations: PREOPT_EVALUATIONS,
                ..Default::default()
            },
        );
        if res.value < best_val {
            best = res.x;
        } else if !best_val.is_finite() {
            warn!("parameter pre-optimization found no feasible point; starting from the model defaults");
            best = (0..np).map(|p| to_coord(p, theta0[p])).collect();
        } else {
            warn!("parameter pre-optimization did not improve on its start");
        }
        z[off..off + np].copy_from_slice(&best);
    }
    if !posterior.log_density(&z).is_finite() {
        return Err(Error::numeric("initial state has no finite posterior density"));
    }

    let n = grid.len();
    let mut scale = vec![0.1; posterior.dim()];
    for (i, f) in fits.iter().enumerate() {
        // the fitted noise can sit on the edge of its search box
        let floor = 0.01 * f.variance.sqrt();
        let s = if obs[i].is_empty() {
            10.0 * floor
        } else {
            f.noise_sd.max(floor)
        };
        scale[i * n..(i + 1) * n].iter_mut().for_each(|v| *v = s);
    }
    Ok((z, scale))
}

/// Pull `lower`/`upper` out far enough to contain the mean.
fn bracket(mut s: Summary) -> Summary {
    s.lower = s.lower.min(s.mean);
    s.upper = s.upper.max(s.mean);
    s
}

/// Summaries of a finished chain.
pub fn summarize_chain(prepared: &Prepared, chain: ChainOutput, runtime_seconds: f64) -> Result<InferenceResult> {
    let post = &prepared.posterior;
    let model = post.model();
    let (m, n) = (model.dim(), post.grid().len());
    let transforms: Vec<Transform> = (0..post.dim())
        .map(|k| {
            if post.is_log_coordinate(k) {
                Transform::Exp
            } else {
                Transform::Identity
            }
        })
        .collect();
    let all = hmc::summarize(&chain.samples, &transforms).map_err(|e| e.in_stage("summary"))?;

    let parameters = model
        .params()
        .iter()
        .enumerate()
        .map(|(p, s)| NamedSummary {
            name: s.name.clone(),
            summary: bracket(all[post.theta_index(p)]),
        })
        .collect();
    let noise = (0..m)
        .filter_map(|i| {
            post.sigma_index(i).map(|k| NamedSummary {
                name: format!("sigma_{}", model.components()[i]),
                summary: bracket(all[k]),
            })
        })
        .collect();
    let initial_state = (0..m).map(|i| all[post.x_index(i, 0)].mean).collect();

    let tf = model.transform();
    let mut trajectory = TrajectorySummary {
        times: post.grid().times.clone(),
        components: model.components().to_vec(),
        mean: vec![vec![0.0; n]; m],
        lower: vec![vec![0.0; n]; m],
        upper: vec![vec![0.0; n]; m],
    };
    let mut column = vec![0.0; chain.samples.len()];
    for i in 0..m {
        for j in 0..n {
            let k = post.x_index(i, j);
            for (c, s) in column.iter_mut().zip(&chain.samples) {
                *c = tf.apply(s[k]);
            }
            let s = bracket(hmc::summarize_values(&column));
            trajectory.mean[i][j] = s.mean;
            trajectory.lower[i][j] = s.lower;
            trajectory.upper[i][j] = s.upper;
        }
    }

    let off = post.theta_index(0);
    let np = model.params().len();
    let initial_theta = model
        .params()
        .iter()
        .enumerate()
        .map(|(p, s)| {
            if s.positive {
                prepared.init[off + p].exp()
            } else {
                prepared.init[off + p]
            }
        })
        .collect::<Vec<f64>>();
    debug_assert_eq!(initial_theta.len(), np);
    Ok(InferenceResult {
        model: model.name().to_string(),
        parameters,
        noise,
        initial_state,
        trajectory,
        diagnostics: Diagnostics {
            acceptance: chain.acceptance.clone(),
            accept_rate: chain.accept_rate,
            step_size: chain.step_size,
            runtime_seconds,
            beta: post.beta(),
            grid_size: n,
            level: post.grid().level,
            initial_theta,
            hyperparameters: prepared.fits.clone(),
        },
        chain,
    })
}

/// Run the full pipeline with a built-in model named by `cfg.model`.
pub fn run_inference(obs: &[ComponentObservations], cfg: &InferenceConfig) -> Result<InferenceResult> {
    let model = builtin(&cfg.model)?;
    run_inference_with(model, obs, cfg)
}

/// Run the full pipeline with an explicit model.
pub fn run_inference_with(
    model: Arc<dyn DdeModel>,
    obs: &[ComponentObservations],
    cfg: &InferenceConfig,
) -> Result<InferenceResult> {
    let start = Instant::now();
    let prepared = prepare(model, obs, cfg)?;
    let mut result = sample_prepared(&prepared, cfg)?;
    result.diagnostics.runtime_seconds = start.elapsed().as_secs_f64();
    Ok(result)
}

/// Sample a prepared posterior and summarize the chain. The reported runtime
/// covers sampling and summaries only.
pub fn sample_prepared(prepared: &Prepared, cfg: &InferenceConfig) -> Result<InferenceResult> {
    let start = Instant::now();
    let mut hmc_cfg = cfg.hmc.clone();
    hmc_cfg.seed = cfg.seed;
    if hmc_cfg.scale.is_empty() {
        hmc_cfg.scale = prepared.scale.clone();
    }
    let chain = hmc::sample(&prepared.posterior, &prepared.init, &hmc_cfg).map_err(|e| e.in_stage("sampling"))?;
    summarize_chain(prepared, chain, start.elapsed().as_secs_f64())
}

/// Intersection length over union length of two closed intervals; two
/// identical degenerate intervals overlap fully.
pub fn interval_overlap(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = a.1.max(b.1) - a.0.min(b.0);
    if union > 0.0 {
        inter / union
    } else if a == b {
        1.0
    } else {
        0.0
    }
}

pub const STABILITY_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterOverlap {
    pub name: String,
    pub coarse: (f64, f64),
    pub fine: (f64, f64),
    pub overlap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub levels: (u32, u32),
    pub parameters: Vec<ParameterOverlap>,
    pub stable: bool,
}

/// Compare the 95% intervals of two runs of the same model.
pub fn compare_runs(levels: (u32, u32), coarse: &InferenceResult, fine: &InferenceResult) -> StabilityReport {
    let parameters: Vec<ParameterOverlap> = coarse
        .parameters
        .iter()
        .zip(&fine.parameters)
        .map(|(a, b)| {
            let ia = (a.summary.lower, a.summary.upper);
            let ib = (b.summary.lower, b.summary.upper);
            ParameterOverlap {
                name: a.name.clone(),
                coarse: ia,
                fine: ib,
                overlap: interval_overlap(ia, ib),
            }
        })
        .collect();
    let stable = parameters.iter().all(|p| p.overlap >= STABILITY_THRESHOLD);
    StabilityReport {
        levels,
        parameters,
        stable,
    }
}

/// Run inference at two discretization levels and report whether the
/// parameter intervals largely agree.
pub fn stability_check(
    obs: &[ComponentObservations],
    cfg: &InferenceConfig,
    levels: (u32, u32),
) -> Result<StabilityReport> {
    let at = |level: u32| {
        let mut c = cfg.clone();
        c.level = level;
        run_inference(obs, &c)
    };
    let coarse = at(levels.0)?;
    let fine = at(levels.1)?;
    Ok(compare_runs(levels, &coarse, &fine))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::HutchinsonLog;
    use crate::solver::{solve, SolverConfig};
    use rand_distr::{Distribution, Normal};

    fn hutchinson_data(seed: u64) -> Vec<ComponentObservations> {
        let model = HutchinsonLog::new();
        let truth = model.truth().unwrap();
        let sol = solve(
            &model,
            &truth.theta,
            &truth.x0,
            truth.t_end,
            &SolverConfig {
                step: 0.01,
                output_times: truth.obs_times.clone(),
            },
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, truth.noise_sd[0]).unwrap();
        let values = sol.component(0).iter().map(|v| v + noise.sample(&mut rng)).collect();
        vec![ComponentObservations::new(truth.obs_times.clone(), values, NoiseLevel::Unknown).unwrap()]
    }

    fn quick_config() -> InferenceConfig {
        InferenceConfig {
            hmc: HmcConfig {
                iterations: 300,
                burn_in: 150,
                leapfrog_steps: 10,
                ..Default::default()
            },
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn interpolation_through_data_and_constant_ends() {
        let grid = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5];
        let x = interpolate_observations(&[0.5, 1.5, 2.0], &[1.0, 3.0, 2.0], &grid);
        assert_eq!(x, vec![1.0, 1.0, 2.0, 3.0, 2.0, 2.0]);
        let on_grid = interpolate_observations(&grid, &[4.0, 1.0, 2.0, 8.0, 5.0, 7.0], &grid);
        assert_eq!(on_grid, vec![4.0, 1.0, 2.0, 8.0, 5.0, 7.0]);
    }

    #[test]
    fn overlap_rules() {
        assert_eq!(interval_overlap((1.0, 2.0), (1.0, 2.0)), 1.0);
        assert_eq!(interval_overlap((0.0, 1.0), (2.0, 3.0)), 0.0);
        assert!((interval_overlap((0.0, 2.0), (1.0, 3.0)) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(interval_overlap((1.0, 1.0), (1.0, 1.0)), 1.0);
    }

    #[test]
    fn hutchinson_initialization_is_feasible() {
        let obs = hutchinson_data(1);
        let prepared = prepare(Arc::new(HutchinsonLog::new()), &obs, &InferenceConfig::default()).unwrap();
        let p = &prepared.posterior;
        assert_eq!(p.grid().len(), 61);
        let u = p.unpack(&prepared.init);
        assert!((0.0..=5.0).contains(&u.theta[2]), "{:?}", u.theta);
        assert!(p.log_density(&prepared.init).is_finite());
        for (j, &g) in p.grid().obs_index[0].iter().enumerate() {
            assert_eq!(u.x[0][g], obs[0].values[j]);
        }
    }

    #[test]
    fn unobserved_component_needs_hyperparameters_and_starts_constant() {
        use crate::models::{LagChannel, ParamSpec, Partials};

        #[derive(Debug)]
        struct Pair {
            comps: Vec<String>,
            params: Vec<ParamSpec>,
            lags: Vec<LagChannel>,
        }
        impl DdeModel for Pair {
            fn name(&self) -> &str {
                "pair"
            }
            fn components(&self) -> &[String] {
                &self.comps
            }
            fn params(&self) -> &[ParamSpec] {
                &self.params
            }
            fn lags(&self) -> &[LagChannel] {
                &self.lags
            }
            fn drift(&self, _t: f64, x: &[f64], lag: &[f64], th: &[f64], out: &mut [f64]) {
                out[0] = -th[0] * x[0] + x[1];
                out[1] = -lag[0];
            }
            fn partials(&self, _t: f64, _x: &[f64], _lag: &[f64], th: &[f64], p: &mut Partials) {
                p.clear();
                p.dx[0] = -th[0];
                p.dx[1] = 1.0;
                p.dlag[1] = -1.0;
            }
        }
        let model: Arc<dyn DdeModel> = Arc::new(Pair {
            comps: vec!["a".into(), "b".into()],
            params: vec![
                ParamSpec::rate("k", 0.5, (0.1, 2.0)),
                ParamSpec::delay("tau", 0.5, (0.2, 1.0)),
            ],
            lags: vec![LagChannel {
                component: 0,
                delays: vec![1],
            }],
        });
        let t: Vec<f64> = (0..6).map(|i| i as f64).collect();
        let y: Vec<f64> = t.iter().map(|v| (-0.5 * v).exp()).collect();
        let obs = vec![
            ComponentObservations::new(t, y, NoiseLevel::Known(0.01)).unwrap(),
            ComponentObservations::new(vec![], vec![], NoiseLevel::Unknown).unwrap(),
        ];
        let mut cfg = InferenceConfig {
            level: 1,
            ..Default::default()
        };
        let err = prepare(model.clone(), &obs, &cfg).unwrap_err();
        assert!(err.to_string().contains("must be supplied"), "{err}");

        cfg.hyperparameters.insert(
            "b".into(),
            FixedHyperparameters {
                variance: 1.0,
                bandwidth: 2.0,
                mean: None,
            },
        );
        cfg.unobserved_init.insert("b".into(), 0.25);
        let prepared = prepare(model, &obs, &cfg).unwrap();
        let u = prepared.posterior.unpack(&prepared.init);
        assert!(u.x[1].iter().all(|&v| v == 0.25));
        assert_eq!(prepared.posterior.sigma_index(1), None);
    }

    #[test]
    fn unknown_names_are_rejected() {
        let obs = hutchinson_data(2);
        let mut cfg = InferenceConfig::default();
        cfg.priors.insert("nope".into(), Prior::UniformPositive);
        assert!(matches!(
            prepare(Arc::new(HutchinsonLog::new()), &obs, &cfg),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn same_seed_same_result_and_frozen_caches() {
        let obs = hutchinson_data(4);
        let cfg = quick_config();
        let mut a = run_inference(&obs, &cfg).unwrap();
        let mut b = run_inference(&obs, &cfg).unwrap();
        a.diagnostics.runtime_seconds = 0.0;
        b.diagnostics.runtime_seconds = 0.0;
        assert_eq!(a, b);

        let prepared = prepare(Arc::new(HutchinsonLog::new()), &obs, &cfg).unwrap();
        let before = prepared.posterior.caches().to_vec();
        let mut h = cfg.hmc.clone();
        h.scale = prepared.scale.clone();
        hmc::sample(&prepared.posterior, &prepared.init, &h).unwrap();
        assert_eq!(prepared.posterior.caches(), &before[..]);
    }

    #[test]
    fn summaries_are_ordered_and_bracket_means() {
        let obs = hutchinson_data(5);
        let r = run_inference(&obs, &quick_config()).unwrap();
        let names: Vec<&str> = r.parameters.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, ["r", "K", "tau"]);
        assert_eq!(r.noise.len(), 1);
        for p in r.parameters.iter().chain(&r.noise) {
            assert!(p.summary.lower <= p.summary.mean && p.summary.mean <= p.summary.upper);
        }
        let t = &r.trajectory;
        for j in 0..t.times.len() {
            assert!(t.lower[0][j] <= t.mean[0][j] && t.mean[0][j] <= t.upper[0][j]);
        }
        // reported on the natural (population) scale
        assert!(t.mean[0][0] > 100.0);
        assert_eq!(r.diagnostics.grid_size, 61);
    }

    #[test]
    fn stability_from_injected_runs() {
        let obs = hutchinson_data(6);
        let r = run_inference(&obs, &quick_config()).unwrap();
        let same = compare_runs((2, 3), &r, &r);
        assert!(same.stable);
        assert!(same.parameters.iter().all(|p| p.overlap == 1.0));

        let mut shifted = r.clone();
        for p in &mut shifted.parameters {
            let w = p.summary.upper - p.summary.lower + 1.0;
            p.summary.lower += 2.0 * w;
            p.summary.upper += 2.0 * w;
        }
        let apart = compare_runs((2, 3), &r, &shifted);
        assert!(!apart.stable);
        assert!(apart.parameters.iter().all(|p| p.overlap == 0.0));
    }
}
