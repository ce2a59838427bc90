//! Fixed-step RK4 method-of-steps integrator for DDEs with constant history.
//!
//! Delayed values are read from the history `x(0)` when `t - tau <= 0` and by
//! linear interpolation of the computed solution otherwise. Used for
//! synthetic data and trajectory scoring only; the sampler never calls it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::DdeModel;

/// States larger than this in magnitude count as a blow-up.
const OVERFLOW: f64 = 1e150;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub step: f64,
    /// Times at which the solution is reported; must lie in `[0, t_end]`.
    pub output_times: Vec<f64>,
}

impl SolverConfig {
    /// Report on the uniform grid `0, step, ..., t_end`.
    pub fn uniform(step: f64, t_end: f64) -> Self {
        let n = (t_end / step - 1e-9).ceil().max(0.0) as usize;
        let h = if n == 0 { 0.0 } else { t_end / n as f64 };
        SolverConfig {
            step,
            output_times: (0..=n).map(|i| i as f64 * h).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolvedTrajectory {
    pub model: String,
    pub theta: Vec<f64>,
    pub x0: Vec<f64>,
    pub times: Vec<f64>,
    /// `values[j][i]` is component `i` at `times[j]`.
    pub values: Vec<Vec<f64>>,
}

impl SolvedTrajectory {
    pub fn component(&self, i: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[i]).collect()
    }
}

struct Buffer {
    m: usize,
    h: f64,
    data: Vec<f64>,
}

impl Buffer {
    fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.m..(k + 1) * self.m]
    }

    /// Component `c` at time `s`, using rows `0..=last` only.
    fn lookup(&self, c: usize, s: f64, last: usize) -> f64 {
        let pos = s / self.h;
        let i = pos.floor() as usize;
        if i >= last {
            return self.data[last * self.m + c];
        }
        let w = pos - i as f64;
        let a = self.data[i * self.m + c];
        let b = self.data[(i + 1) * self.m + c];
        a + w * (b - a)
    }
}

pub fn solve(
    model: &dyn DdeModel,
    theta: &[f64],
    x0: &[f64],
    t_end: f64,
    cfg: &SolverConfig,
) -> Result<SolvedTrajectory> {
    let m = model.dim();
    if theta.len() != model.params().len() || x0.len() != m {
        return Err(Error::domain(format!(
            "{} expects {} parameters and {} initial values",
            model.name(),
            model.params().len(),
            m
        )));
    }
    if theta.iter().chain(x0).any(|v| !v.is_finite()) {
        return Err(Error::domain("parameters and initial state must be finite"));
    }
    if !(t_end.is_finite() && t_end > 0.0) {
        return Err(Error::domain(format!("integration span must be positive, got {t_end}")));
    }
    if !(cfg.step.is_finite() && cfg.step > 0.0) {
        return Err(Error::domain(format!("step size must be positive, got {}", cfg.step)));
    }
    if cfg
        .output_times
        .iter()
        .any(|&t| !(0.0..=t_end * (1.0 + 1e-12)).contains(&t))
    {
        return Err(Error::domain("output times must lie within the integration span"));
    }
    let delays: Vec<f64> = model.lags().iter().map(|c| c.delay(theta)).collect();
    if delays.iter().any(|&d| d < 0.0) {
        return Err(Error::domain("delays must be non-negative"));
    }
    let min_delay = delays
        .iter()
        .copied()
        .filter(|&d| d > 0.0)
        .fold(f64::INFINITY, f64::min);
    if cfg.step > min_delay / 4.0 * (1.0 + 1e-12) {
        return Err(Error::domain(format!(
            "step {} exceeds a quarter of the smallest delay {min_delay}",
            cfg.step
        )));
    }

    let nsteps = (t_end / cfg.step - 1e-9).ceil() as usize;
    let h = t_end / nsteps as f64;
    let mut buf = Buffer {
        m,
        h,
        data: Vec::with_capacity((nsteps + 1) * m),
    };
    buf.data.extend_from_slice(x0);

    let channels = model.lags();
    let mut lagged = vec![0.0; channels.len()];
    let mut ks = vec![vec![0.0; m]; 4];
    let mut stage = vec![0.0; m];
    let mut x = x0.to_vec();

    for k in 0..nsteps {
        let t = k as f64 * h;
        for s in 0..4 {
            let (dt, coef) = match s {
                0 => (0.0, 0.0),
                1 | 2 => (0.5 * h, 0.5 * h),
                _ => (h, h),
            };
            for i in 0..m {
                stage[i] = if s == 0 { x[i] } else { x[i] + coef * ks[s - 1][i] };
            }
            let ts = t + dt;
            for (l, (ch, &tau)) in lagged.iter_mut().zip(channels.iter().zip(&delays)) {
                *l = if tau == 0.0 {
                    stage[ch.component]
                } else if ts - tau <= 0.0 {
                    x0[ch.component]
                } else {
                    buf.lookup(ch.component, ts - tau, k)
                };
            }
            model.drift(ts, &stage, &lagged, theta, &mut ks[s]);
        }
        for i in 0..m {
            x[i] += h / 6.0 * (ks[0][i] + 2.0 * ks[1][i] + 2.0 * ks[2][i] + ks[3][i]);
        }
        if x.iter().any(|v| !v.is_finite() || v.abs() > OVERFLOW) {
            return Err(Error::Integration {
                time: t + h,
                reason: format!("non-finite or overflowing state {x:?}"),
            });
        }
        buf.data.extend_from_slice(&x);
    }

    let values = cfg
        .output_times
        .iter()
        .map(|&t| {
            let pos = (t / h).min(nsteps as f64);
            let i = (pos.floor() as usize).min(nsteps);
            if i == nsteps {
                return buf.row(nsteps).to_vec();
            }
            let w = pos - i as f64;
            buf.row(i)
                .iter()
                .zip(buf.row(i + 1))
                .map(|(a, b)| a + w * (b - a))
                .collect()
        })
        .collect();

    Ok(SolvedTrajectory {
        model: model.name().to_string(),
        theta: theta.to_vec(),
        x0: x0.to_vec(),
        times: cfg.output_times.clone(),
        values,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ConvergenceEstimate {
    /// Both step sizes reproduce the reference exactly.
    Exact,
    Order(f64),
}

/// Observed order from runs at `h` and `h/2` against an `h/8` reference,
/// compared on the `h` grid.
pub fn convergence_order(
    model: &dyn DdeModel,
    theta: &[f64],
    x0: &[f64],
    t_end: f64,
    h: f64,
) -> Result<ConvergenceEstimate> {
    let grid = SolverConfig::uniform(h, t_end).output_times;
    let run = |step: f64| {
        solve(
            model,
            theta,
            x0,
            t_end,
            &SolverConfig {
                step,
                output_times: grid.clone(),
            },
        )
    };
    let reference = run(h / 8.0)?;
    let err = |sol: &SolvedTrajectory| {
        sol.values
            .iter()
            .flatten()
            .zip(reference.values.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    };
    let e1 = err(&run(h)?);
    let e2 = err(&run(h / 2.0)?);
    if e1 == 0.0 && e2 == 0.0 {
        return Ok(ConvergenceEstimate::Exact);
    }
    Ok(ConvergenceEstimate::Order((e1 / e2).log2()))
}
