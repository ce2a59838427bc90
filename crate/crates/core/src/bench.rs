//! Simulation studies: synthetic datasets from a truth fixture, replicated
//! inference and the aggregate error tables.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{ComponentObservations, NoiseLevel};
use crate::models::{builtin, DdeModel};
use crate::pipeline::{run_inference_with, InferenceConfig, InferenceResult};
use crate::solver::{solve, SolverConfig};

/// Everything needed to generate and analyse a batch of synthetic datasets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub theta: Vec<f64>,
    pub x0: Vec<f64>,
    pub obs_times: Vec<f64>,
    pub t_end: f64,
    pub noise_sd: Vec<f64>,
    /// Pass the simulation noise levels to the sampler as known.
    pub noise_known: bool,
    pub replicates: usize,
    pub base_seed: u64,
    pub inference: InferenceConfig,
}

impl SimulationSpec {
    /// Spec built from the model's truth fixture; the inference config's
    /// level and smoothness are taken from the fixture as well.
    pub fn from_truth(
        model: &dyn DdeModel,
        replicates: usize,
        base_seed: u64,
        mut inference: InferenceConfig,
    ) -> Result<Self> {
        let truth = model
            .truth()
            .ok_or_else(|| Error::domain(format!("model '{}' has no truth fixture", model.name())))?;
        inference.model = model.name().to_string();
        inference.level = truth.level;
        inference.nu = truth.nu;
        let spec = SimulationSpec {
            theta: truth.theta,
            x0: truth.x0,
            obs_times: truth.obs_times,
            t_end: truth.t_end,
            noise_sd: truth.noise_sd,
            noise_known: truth.noise_known,
            replicates,
            base_seed,
            inference,
        };
        Ok(spec.with_known_noise(model))
    }

    /// Copy the simulation noise levels into the inference config when they
    /// are meant to be known.
    pub fn with_known_noise(mut self, model: &dyn DdeModel) -> Self {
        if self.noise_known {
            for (name, s) in model.components().iter().zip(&self.noise_sd) {
                self.inference.known_noise.insert(name.clone(), *s);
            }
        }
        self
    }

    fn validate(&self, model: &dyn DdeModel) -> Result<()> {
        let m = model.dim();
        if self.theta.len() != model.params().len() || self.x0.len() != m || self.noise_sd.len() != m {
            return Err(Error::domain(format!(
                "simulation spec does not match the shape of '{}'",
                model.name()
            )));
        }
        if self.noise_sd.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::domain("noise levels must be finite and >= 0"));
        }
        if self.obs_times.is_empty() || self.obs_times.iter().any(|&t| t < 0.0 || t > self.t_end) {
            return Err(Error::domain("observation times must lie in [0, t_end]"));
        }
        Ok(())
    }
}

/// Seed of replicate `index`, derived from the base seed by a splitmix64 step.
pub fn replicate_seed(base: u64, index: usize) -> u64 {
    let mut z = base.wrapping_add((index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Largest step the solver accepts for these parameters, capped at 0.01.
pub fn solver_step(model: &dyn DdeModel, theta: &[f64]) -> f64 {
    model
        .lags()
        .iter()
        .map(|c| c.delay(theta))
        .filter(|&d| d > 0.0)
        .fold(0.04, f64::min)
        / 4.0
}

/// Noisy observations of the true trajectory for replicate `index`.
pub fn simulate_dataset(
    model: &dyn DdeModel,
    spec: &SimulationSpec,
    index: usize,
) -> Result<Vec<ComponentObservations>> {
    spec.validate(model)?;
    let cfg = SolverConfig {
        step: solver_step(model, &spec.theta),
        output_times: spec.obs_times.clone(),
    };
    let sol = solve(model, &spec.theta, &spec.x0, spec.t_end, &cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(replicate_seed(spec.base_seed, index));
    (0..model.dim())
        .map(|i| {
            let sd = spec.noise_sd[i];
            let values = sol
                .component(i)
                .iter()
                .map(|v| v + sd * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let noise = if spec.noise_known {
                NoiseLevel::Known(sd)
            } else {
                NoiseLevel::Unknown
            };
            ComponentObservations::new(spec.obs_times.clone(), values, noise)
        })
        .collect()
}

/// RMSE on the reporting scale, over all components and `obs_times`, between
/// the trajectories implied by the estimates and by the truth. Both are
/// solved with the same step.
pub fn trajectory_rmse(
    model: &dyn DdeModel,
    estimate: (&[f64], &[f64]),
    truth: (&[f64], &[f64]),
    obs_times: &[f64],
    t_end: f64,
) -> Result<f64> {
    let step = solver_step(model, estimate.0).min(solver_step(model, truth.0));
    let cfg = SolverConfig {
        step,
        output_times: obs_times.to_vec(),
    };
    let a = solve(model, estimate.0, estimate.1, t_end, &cfg)?;
    let b = solve(model, truth.0, truth.1, t_end, &cfg)?;
    let tf = model.transform();
    let mut sum = 0.0;
    let mut count = 0usize;
    for (ra, rb) in a.values.iter().zip(&b.values) {
        for (va, vb) in ra.iter().zip(rb) {
            sum += (tf.apply(*va) - tf.apply(*vb)).powi(2);
            count += 1;
        }
    }
    let rmse = (sum / count as f64).sqrt();
    if rmse.is_finite() {
        Ok(rmse)
    } else {
        Err(Error::Integration {
            time: t_end,
            reason: "trajectory under the estimates is not finite".into(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplicateStatus {
    Ok,
    /// Estimates are usable but their trajectory could not be solved.
    TrajectoryDiverged,
    /// The sampler never moved or produced non-finite estimates.
    SamplerDiverged,
    Failed(String),
}

impl ReplicateStatus {
    pub fn label(&self) -> &'static str {
        match self {
            ReplicateStatus::Ok => "ok",
            ReplicateStatus::TrajectoryDiverged => "trajectory_diverged",
            ReplicateStatus::SamplerDiverged => "sampler_diverged",
            ReplicateStatus::Failed(_) => "failed",
        }
    }

    /// Whether the replicate contributes to the parameter means.
    pub fn has_estimates(&self) -> bool {
        matches!(self, ReplicateStatus::Ok | ReplicateStatus::TrajectoryDiverged)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub replicate: usize,
    pub seed: u64,
    /// Posterior means; empty when inference failed.
    pub estimates: Vec<f64>,
    pub posterior_sd: Vec<f64>,
    pub trajectory_rmse: f64,
    pub runtime_seconds: f64,
    pub accept_rate: f64,
    pub status: ReplicateStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub model: String,
    pub parameters: Vec<String>,
    pub truth: Vec<f64>,
    pub mean_estimate: Vec<f64>,
    pub rmse: Vec<f64>,
    /// Mean over replicates whose trajectory could be solved.
    pub mean_trajectory_rmse: f64,
    pub mean_runtime_seconds: f64,
    /// Replicates excluded from the parameter means.
    pub failures: usize,
    pub rows: Vec<ReplicateRow>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

impl BenchReport {
    /// Aggregate per-replicate rows (in any order).
    pub fn from_rows(model: &dyn DdeModel, truth: &[f64], mut rows: Vec<ReplicateRow>) -> Self {
        rows.sort_by_key(|r| r.replicate);
        let good: Vec<&ReplicateRow> = rows.iter().filter(|r| r.status.has_estimates()).collect();
        let np = truth.len();
        let mean_estimate: Vec<f64> = (0..np).map(|p| mean(good.iter().map(|r| r.estimates[p]))).collect();
        let rmse = (0..np)
            .map(|p| mean(good.iter().map(|r| (r.estimates[p] - truth[p]).powi(2))).sqrt())
            .collect();
        let mean_trajectory_rmse = mean(
            good.iter()
                .filter(|r| r.trajectory_rmse.is_finite())
                .map(|r| r.trajectory_rmse),
        );
        let mean_runtime_seconds = mean(rows.iter().map(|r| r.runtime_seconds));
        BenchReport {
            model: model.name().to_string(),
            parameters: model.params().iter().map(|p| p.name.clone()).collect(),
            truth: truth.to_vec(),
            mean_estimate,
            rmse,
            mean_trajectory_rmse,
            mean_runtime_seconds,
            failures: rows.len() - good.len(),
            rows,
        }
    }

    /// Per-replicate rows as CSV.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["replicate".to_string(), "seed".to_string()];
        header.extend(self.parameters.iter().map(|p| format!("{p}_estimate")));
        header.extend(self.parameters.iter().map(|p| format!("{p}_truth")));
        header.extend(["trajectory_rmse", "runtime_seconds", "status"].map(String::from));
        let csv_err = |e: csv::Error| Error::numeric(format!("csv: {e}"));
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = vec![r.replicate.to_string(), r.seed.to_string()];
            for p in 0..self.parameters.len() {
                rec.push(r.estimates.get(p).map_or(String::new(), |v| v.to_string()));
            }
            rec.extend(self.truth.iter().map(|v| v.to_string()));
            rec.push(r.trajectory_rmse.to_string());
            rec.push(format!("{:.3}", r.runtime_seconds));
            rec.push(r.status.label().to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::numeric(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Aligned text table of the aggregate results.
    pub fn to_table(&self) -> String {
        let width = self.parameters.iter().map(String::len).max().unwrap_or(0).max(9);
        let mut s = format!(
            "{:<width$}  {:>12}  {:>12}  {:>12}\n",
            "parameter", "truth", "mean", "rmse"
        );
        for p in 0..self.parameters.len() {
            s += &format!(
                "{:<width$}  {:>12.5}  {:>12.5}  {:>12.5}\n",
                self.parameters[p], self.truth[p], self.mean_estimate[p], self.rmse[p]
            );
        }
        s += &format!("trajectory rmse: {:.4}\n", self.mean_trajectory_rmse);
        s += &format!("mean runtime:    {:.2} s\n", self.mean_runtime_seconds);
        s += &format!("replicates:      {} ({} failed)\n", self.rows.len(), self.failures);
        s
    }
}

fn run_replicate(model: &Arc<dyn DdeModel>, spec: &SimulationSpec, index: usize) -> ReplicateRow {
    let seed = replicate_seed(spec.base_seed, index);
    let start = Instant::now();
    let mut row = ReplicateRow {
        replicate: index,
        seed,
        estimates: Vec::new(),
        posterior_sd: Vec::new(),
        trajectory_rmse: f64::NAN,
        runtime_seconds: 0.0,
        accept_rate: 0.0,
        status: ReplicateStatus::Ok,
    };
    let fitted: Result<InferenceResult> = simulate_dataset(model.as_ref(), spec, index).and_then(|obs| {
        let mut cfg = spec.inference.clone();
        cfg.seed = seed;
        run_inference_with(model.clone(), &obs, &cfg)
    });
    row.runtime_seconds = start.elapsed().as_secs_f64();
    let res = match fitted {
        Ok(r) => r,
        Err(e) => {
            log::warn!("replicate {index}: {e}");
            row.status = ReplicateStatus::Failed(e.to_string());
            return row;
        }
    };
    row.estimates = res.parameters.iter().map(|p| p.summary.mean).collect();
    row.posterior_sd = res.parameters.iter().map(|p| p.summary.sd).collect();
    row.accept_rate = res.diagnostics.accept_rate;
    if res.diagnostics.accept_rate == 0.0 || row.estimates.iter().any(|v| !v.is_finite()) {
        row.status = ReplicateStatus::SamplerDiverged;
        return row;
    }
    match trajectory_rmse(
        model.as_ref(),
        (&row.estimates, &res.initial_state),
        (&spec.theta, &spec.x0),
        &spec.obs_times,
        spec.t_end,
    ) {
        Ok(v) => row.trajectory_rmse = v,
        Err(e) => {
            log::warn!("replicate {index}: trajectory under the estimates failed: {e}");
            row.trajectory_rmse = f64::INFINITY;
            row.status = ReplicateStatus::TrajectoryDiverged;
        }
    }
    row
}

/// Simulate, fit and score every replicate on a pool of `workers` threads.
pub fn run_study_with(model: Arc<dyn DdeModel>, spec: &SimulationSpec, workers: usize) -> Result<BenchReport> {
    spec.validate(model.as_ref())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::numeric(format!("thread pool: {e}")))?;
    let rows: Vec<ReplicateRow> = pool.install(|| {
        (0..spec.replicates)
            .into_par_iter()
            .map(|i| run_replicate(&model, spec, i))
            .collect()
    });
    Ok(BenchReport::from_rows(model.as_ref(), &spec.theta, rows))
}

/// [`run_study_with`] for the built-in model named in the inference config.
pub fn run_study(spec: &SimulationSpec, workers: usize) -> Result<BenchReport> {
    run_study_with(builtin(&spec.inference.model)?, spec, workers)
}
