//! Tempered manifold-constrained log-posterior over `(x(I), theta, log sigma)`
//! and its analytic gradient.
//!
//! For component `i` with `u = x_i - mu_i`, `r = f_i(x, x_hat(I - tau), theta) - m_i u`:
//!
//! ```text
//! log p = log pi(theta) + log|Jacobian|
//!       + (1/beta) sum_i [ -1/2 (n log 2pi + log|C_i| + u' C_i^{-1} u)
//!                          -1/2 (n log 2pi + log|zeta_i| + r' zeta_i^{-1} r) ]
//!       + sum_i sum_{j in gamma_i} log N(y_ij | x_i(t_j), sigma_i^2)
//! ```
//!
//! Positive parameters and unknown noise levels live on the log scale in the
//! flattened state; `x_hat(I - tau)` comes from the linear-interpolation
//! operator by default.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{ComponentObservations, GpComponentCache, NoiseLevel};
use crate::interp::{
    build_conditional_operator, build_linear_operator, ConditionalExpectationOperator, HistoryOperator,
};
use crate::linalg::{dot, matvec, matvec_t};
use crate::models::{DdeModel, Partials, Prior};

const MAX_GRID_POINTS: usize = 1_000_000;
/// Allowed misfit of an observation time, in units of the candidate spacing.
const DIVISOR_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscretizationGrid {
    pub times: Vec<f64>,
    /// Grid index of each observation time, per component.
    pub obs_index: Vec<Vec<usize>>,
    pub beta: f64,
    pub spacing: f64,
    pub level: u32,
}

impl DiscretizationGrid {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

fn is_multiple(t: f64, d: f64) -> bool {
    let r = t / d;
    (r - r.round()).abs() <= DIVISOR_TOL
}

/// Uniform grid from 0 through the last observation time whose spacing divides
/// every observation time, refined `level` times by halving.
pub fn build_grid(obs_times: &[Vec<f64>], level: u32) -> Result<DiscretizationGrid> {
    if obs_times.is_empty() || obs_times.iter().all(|t| t.is_empty()) {
        return Err(Error::domain("at least one observation time is required"));
    }
    let mut all: Vec<f64> = obs_times.iter().flatten().copied().collect();
    if all.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(Error::domain("observation times must be finite and >= 0"));
    }
    all.push(0.0);
    all.sort_by(f64::total_cmp);
    all.dedup();
    let end = *all.last().unwrap();
    let cap = MAX_GRID_POINTS as f64;

    let base = if all.len() == 1 {
        1.0
    } else {
        let min_gap = all.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        let mut k = 1.0;
        loop {
            let d = min_gap / k;
            if end / d + 1.0 > cap {
                return Err(Error::domain(format!(
                    "no common spacing for the observation times within {MAX_GRID_POINTS} grid points"
                )));
            }
            if all.iter().all(|&t| is_multiple(t, d)) {
                break d;
            }
            k += 1.0;
        }
    };
    let spacing = base / 2f64.powi(level as i32);
    let count = (end / spacing).round() as usize + 1;
    if count > MAX_GRID_POINTS {
        return Err(Error::domain(format!(
            "grid of {count} points exceeds the cap of {MAX_GRID_POINTS}"
        )));
    }
    let mut times: Vec<f64> = (0..count).map(|i| i as f64 * spacing).collect();
    let mut obs_index = Vec::with_capacity(obs_times.len());
    for comp in obs_times {
        let mut idx = Vec::with_capacity(comp.len());
        for &t in comp {
            let j = (t / spacing).round() as usize;
            times[j] = t;
            idx.push(j);
        }
        if idx.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::domain(
                "observation times must be strictly increasing per component",
            ));
        }
        obs_index.push(idx);
    }
    let n_obs: usize = obs_index.iter().map(Vec::len).sum();
    let beta = (obs_times.len() * count) as f64 / n_obs as f64;
    Ok(DiscretizationGrid {
        times,
        obs_index,
        beta,
        spacing,
        level,
    })
}

/// How `x(I - tau)` is approximated from `x(I)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HistoryScheme {
    #[default]
    LinearInterpolation,
    ConditionalExpectation,
}

/// Individual log-density terms before tempering.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Terms {
    pub gp_prior: f64,
    pub manifold: f64,
    pub likelihood: f64,
    /// Parameter priors plus log-scale Jacobians.
    pub prior: f64,
}

/// A point of the sampler together with its log-density and gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorState {
    pub z: Vec<f64>,
    pub log_density: f64,
    pub gradient: Vec<f64>,
}

/// State split back into its natural-scale pieces.
#[derive(Clone, Debug, PartialEq)]
pub struct Unpacked {
    pub x: Vec<Vec<f64>>,
    pub theta: Vec<f64>,
    /// Noise standard deviation per component (known values passed through).
    pub sigma: Vec<f64>,
}

enum HistoryMap {
    Linear(HistoryOperator),
    Conditional(ConditionalExpectationOperator),
}

impl HistoryMap {
    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            HistoryMap::Linear(op) => op.apply_into(x, out),
            HistoryMap::Conditional(op) => op.apply_into(x, out),
        }
    }

    fn apply_transpose_add(&self, v: &[f64], out: &mut [f64]) {
        match self {
            HistoryMap::Linear(op) => op.apply_transpose_add(v, out),
            HistoryMap::Conditional(op) => op.apply_transpose_add(v, out),
        }
    }

    fn tau_jacobian_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            HistoryMap::Linear(op) => op.tau_jacobian_into(x, out),
            HistoryMap::Conditional(op) => op.tau_jacobian_into(x, out),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Posterior {
    model: Arc<dyn DdeModel>,
    grid: DiscretizationGrid,
    caches: Vec<GpComponentCache>,
    means: Vec<f64>,
    obs_values: Vec<Vec<f64>>,
    noise: Vec<NoiseLevel>,
    priors: Vec<Prior>,
    scheme: HistoryScheme,
    beta: f64,
    /// Flattened index of each component's log sigma, when sampled.
    sigma_slot: Vec<Option<usize>>,
    dim: usize,
}

impl Posterior {
    /// `observations[i]` must have been placed on `grid` by [`build_grid`].
    pub fn new(
        model: Arc<dyn DdeModel>,
        grid: DiscretizationGrid,
        caches: Vec<GpComponentCache>,
        means: Vec<f64>,
        observations: &[ComponentObservations],
        scheme: HistoryScheme,
    ) -> Result<Self> {
        let m = model.dim();
        let n = grid.len();
        if caches.len() != m || means.len() != m || observations.len() != m || grid.obs_index.len() != m {
            return Err(Error::domain(format!(
                "{} expects {m} components throughout",
                model.name()
            )));
        }
        if caches.iter().any(|c| c.grid != grid.times) {
            return Err(Error::domain("GP caches must be built on the discretization grid"));
        }
        for (i, obs) in observations.iter().enumerate() {
            if obs.len() != grid.obs_index[i].len() {
                return Err(Error::domain(format!(
                    "component {i}: observations do not match the grid"
                )));
            }
            if let NoiseLevel::Known(s) = obs.noise {
                if !(s > 0.0) && !obs.is_empty() {
                    return Err(Error::domain(format!("component {i}: known noise level must be > 0")));
                }
            }
        }
        let p = model.params().len();
        let mut next = m * n + p;
        let sigma_slot = observations
            .iter()
            .map(|o| match o.noise {
                NoiseLevel::Unknown if !o.is_empty() => {
                    next += 1;
                    Some(next - 1)
                }
                _ => None,
            })
            .collect();
        let priors: Vec<Prior> = model.params().iter().map(|s| s.prior).collect();
        Ok(Posterior {
            beta: grid.beta,
            model,
            caches,
            means,
            obs_values: observations.iter().map(|o| o.values.clone()).collect(),
            noise: observations.iter().map(|o| o.noise).collect(),
            priors,
            scheme,
            sigma_slot,
            dim: next,
            grid,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn model(&self) -> &Arc<dyn DdeModel> {
        &self.model
    }

    pub fn grid(&self) -> &DiscretizationGrid {
        &self.grid
    }

    pub fn caches(&self) -> &[GpComponentCache] {
        &self.caches
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn scheme(&self) -> HistoryScheme {
        self.scheme
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn priors(&self) -> &[Prior] {
        &self.priors
    }

    /// Override the tempering factor.
    pub fn set_beta(&mut self, beta: f64) -> Result<()> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::domain(format!("tempering factor must be > 0, got {beta}")));
        }
        self.beta = beta;
        Ok(())
    }

    pub fn set_scheme(&mut self, scheme: HistoryScheme) {
        self.scheme = scheme;
    }

    pub fn set_prior(&mut self, param: usize, prior: Prior) -> Result<()> {
        prior.validate()?;
        let spec = &self.model.params()[param];
        if spec.positive && matches!(prior, Prior::Uniform { lower, .. } if lower < 0.0) {
            return Err(Error::domain(format!("{}: prior support must be positive", spec.name)));
        }
        self.priors[param] = prior;
        Ok(())
    }

    /// Flattened index of trajectory value `x_i(t_j)`.
    pub fn x_index(&self, i: usize, j: usize) -> usize {
        i * self.grid.len() + j
    }

    pub fn theta_index(&self, p: usize) -> usize {
        self.model.dim() * self.grid.len() + p
    }

    pub fn sigma_index(&self, i: usize) -> Option<usize> {
        self.sigma_slot[i]
    }

    /// Pack natural-scale values into the sampler's coordinates.
    pub fn pack(&self, x: &[Vec<f64>], theta: &[f64], sigma: &[f64]) -> Result<Vec<f64>> {
        let (m, n) = (self.model.dim(), self.grid.len());
        if x.len() != m
            || x.iter().any(|r| r.len() != n)
            || theta.len() != self.model.params().len()
            || sigma.len() != m
        {
            return Err(Error::domain("state pieces have the wrong shape"));
        }
        let mut z = Vec::with_capacity(self.dim);
        for row in x {
            z.extend_from_slice(row);
        }
        for (v, spec) in theta.iter().zip(self.model.params()) {
            if spec.positive {
                if !(*v > 0.0) {
                    return Err(Error::domain(format!("{} must be positive, got {v}", spec.name)));
                }
                z.push(v.ln());
            } else {
                z.push(*v);
            }
        }
        for (i, slot) in self.sigma_slot.iter().enumerate() {
            if slot.is_some() {
                if !(sigma[i] > 0.0) {
                    return Err(Error::domain(format!("noise level of component {i} must be positive")));
                }
                z.push(sigma[i].ln());
            }
        }
        Ok(z)
    }

    pub fn unpack(&self, z: &[f64]) -> Unpacked {
        let (m, n) = (self.model.dim(), self.grid.len());
        let x = (0..m).map(|i| z[i * n..(i + 1) * n].to_vec()).collect();
        let theta = self.theta_natural(z);
        let sigma = (0..m)
            .map(|i| match (self.sigma_slot[i], self.noise[i]) {
                (Some(s), _) => z[s].exp(),
                (None, NoiseLevel::Known(s)) => s,
                (None, NoiseLevel::Unknown) => f64::NAN,
            })
            .collect();
        Unpacked { x, theta, sigma }
    }

    fn theta_natural(&self, z: &[f64]) -> Vec<f64> {
        let off = self.model.dim() * self.grid.len();
        self.model
            .params()
            .iter()
            .enumerate()
            .map(|(p, s)| if s.positive { z[off + p].exp() } else { z[off + p] })
            .collect()
    }

    /// Whether coordinate `k` is stored on the log scale.
    pub fn is_log_coordinate(&self, k: usize) -> bool {
        let off = self.model.dim() * self.grid.len();
        if k < off {
            false
        } else if k < off + self.model.params().len() {
            self.model.params()[k - off].positive
        } else {
            true
        }
    }

    pub fn log_density(&self, z: &[f64]) -> f64 {
        self.evaluate(z, None).map_or(f64::NEG_INFINITY, |t| self.combine(&t))
    }

    /// Log-density with its gradient written into `grad`; returns `-inf`
    /// (leaving `grad` unspecified) outside the support.
    pub fn log_density_and_gradient(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        self.evaluate(z, Some(grad))
            .map_or(f64::NEG_INFINITY, |t| self.combine(&t))
    }

    pub fn state(&self, z: Vec<f64>) -> PosteriorState {
        let mut gradient = vec![0.0; self.dim];
        let log_density = self.log_density_and_gradient(&z, &mut gradient);
        PosteriorState {
            z,
            log_density,
            gradient,
        }
    }

    /// Untempered terms at `z`; `None` outside the support.
    pub fn terms(&self, z: &[f64]) -> Option<Terms> {
        self.evaluate(z, None)
    }

    fn combine(&self, t: &Terms) -> f64 {
        let v = t.prior + (t.gp_prior + t.manifold) / self.beta + t.likelihood;
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }

    fn history_map(&self, channel: usize, tau: f64) -> Result<HistoryMap> {
        let ch = &self.model.lags()[channel];
        Ok(match self.scheme {
            HistoryScheme::LinearInterpolation => HistoryMap::Linear(build_linear_operator(&self.grid.times, tau)?),
            HistoryScheme::ConditionalExpectation => HistoryMap::Conditional(build_conditional_operator(
                &self.caches[ch.component],
                tau,
                self.means[ch.component],
            )?),
        })
    }

    fn evaluate(&self, z: &[f64], grad: Option<&mut [f64]>) -> Option<Terms> {
        assert_eq!(z.len(), self.dim, "state has the wrong dimension");
        if z.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let model = self.model.as_ref();
        let (m, n) = (model.dim(), self.grid.len());
        let specs = model.params();
        let np = specs.len();
        let channels = model.lags();
        let nl = channels.len();
        let off = m * n;
        let inv_beta = 1.0 / self.beta;
        let ln2pi = (2.0 * PI).ln();

        let theta = self.theta_natural(z);
        if theta.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let mut terms = Terms::default();
        for (p, spec) in specs.iter().enumerate() {
            terms.prior += self.priors[p].log_density(theta[p]);
            if spec.positive {
                terms.prior += z[off + p];
            }
        }
        if !terms.prior.is_finite() {
            return None;
        }

        let x = |i: usize| &z[i * n..(i + 1) * n];
        let maps: Vec<HistoryMap> = channels
            .iter()
            .enumerate()
            .map(|(k, ch)| self.history_map(k, ch.delay(&theta)))
            .collect::<Result<_>>()
            .ok()?;
        let mut lagged = vec![0.0; nl * n];
        for (k, ch) in channels.iter().enumerate() {
            maps[k].apply_into(x(ch.component), &mut lagged[k * n..(k + 1) * n]);
        }

        // drift and (optionally) partials at every grid point
        let mut drift = vec![0.0; m * n];
        let mut parts: Vec<Partials> = Vec::new();
        let mut xs = vec![0.0; m];
        let mut ls = vec![0.0; nl];
        let mut fs = vec![0.0; m];
        for j in 0..n {
            for i in 0..m {
                xs[i] = z[i * n + j];
            }
            for k in 0..nl {
                ls[k] = lagged[k * n + j];
            }
            let t = self.grid.times[j];
            model.drift(t, &xs, &ls, &theta, &mut fs);
            for i in 0..m {
                drift[i * n + j] = fs[i];
            }
            if grad.is_some() {
                let mut pt = Partials::for_model(model);
                model.partials(t, &xs, &ls, &theta, &mut pt);
                parts.push(pt);
            }
        }
        if drift.iter().any(|v| !v.is_finite()) {
            return None;
        }

        // Gaussian GP terms
        let mut a = vec![0.0; m * n];
        let mut v = vec![0.0; m * n];
        let mut u = vec![0.0; n];
        let mut mu = vec![0.0; n];
        let mut r = vec![0.0; n];
        for i in 0..m {
            let c = &self.caches[i];
            for (uj, xj) in u.iter_mut().zip(x(i)) {
                *uj = xj - self.means[i];
            }
            let ai = &mut a[i * n..(i + 1) * n];
            matvec(&c.c_inv, &u, ai);
            terms.gp_prior += -0.5 * (n as f64 * ln2pi + c.log_det_c + dot(&u, ai));
            matvec(&c.m, &u, &mut mu);
            for j in 0..n {
                r[j] = drift[i * n + j] - mu[j];
            }
            let vi = &mut v[i * n..(i + 1) * n];
            matvec(&c.zeta_inv, &r, vi);
            terms.manifold += -0.5 * (n as f64 * ln2pi + c.log_det_zeta + dot(&r, vi));
        }

        // likelihood
        let mut sigma = vec![f64::NAN; m];
        for i in 0..m {
            let idx = &self.grid.obs_index[i];
            if idx.is_empty() {
                continue;
            }
            let s = match (self.sigma_slot[i], self.noise[i]) {
                (Some(slot), _) => {
                    terms.prior += z[slot];
                    z[slot].exp()
                }
                (None, NoiseLevel::Known(s)) => s,
                (None, NoiseLevel::Unknown) => unreachable!("unknown noise always has a slot"),
            };
            sigma[i] = s;
            let rss: f64 = idx
                .iter()
                .zip(&self.obs_values[i])
                .map(|(&j, y)| (z[i * n + j] - y).powi(2))
                .sum();
            let cnt = idx.len() as f64;
            terms.likelihood += -cnt * s.ln() - 0.5 * cnt * ln2pi - 0.5 * rss / (s * s);
        }

        let Some(g) = grad else {
            return Some(terms);
        };
        g.iter_mut().for_each(|e| *e = 0.0);

        // x: GP prior and the m u part of the manifold residual
        let mut tmp = vec![0.0; n];
        for i in 0..m {
            let c = &self.caches[i];
            matvec_t(&c.m, &v[i * n..(i + 1) * n], &mut tmp);
            for j in 0..n {
                g[i * n + j] = inv_beta * (tmp[j] - a[i * n + j]);
            }
        }
        // x and theta through the drift
        let mut gtheta = vec![0.0; np];
        let mut w = vec![0.0; nl * n];
        for (j, pt) in parts.iter().enumerate() {
            for i2 in 0..m {
                let vj = v[i2 * n + j];
                if vj == 0.0 {
                    continue;
                }
                for i in 0..m {
                    g[i * n + j] -= inv_beta * vj * pt.dx[i2 * m + i];
                }
                for k in 0..nl {
                    w[k * n + j] += vj * pt.dlag[i2 * nl + k];
                }
                for (p, gt) in gtheta.iter_mut().enumerate() {
                    *gt -= inv_beta * vj * pt.dtheta[i2 * np + p];
                }
            }
        }
        // delayed path: S^T w into x and tau-sensitivities into the delays
        let mut back = vec![0.0; n];
        let mut slope = vec![0.0; n];
        for (k, ch) in channels.iter().enumerate() {
            let wk = &w[k * n..(k + 1) * n];
            back.iter_mut().for_each(|e| *e = 0.0);
            maps[k].apply_transpose_add(wk, &mut back);
            let c = ch.component;
            for j in 0..n {
                g[c * n + j] -= inv_beta * back[j];
            }
            maps[k].tau_jacobian_into(x(c), &mut slope);
            let dtau = dot(wk, &slope);
            for &d in &ch.delays {
                gtheta[d] -= inv_beta * dtau;
            }
        }
        for (p, spec) in specs.iter().enumerate() {
            let mut gp = gtheta[p] + self.priors[p].grad_log_density(theta[p]);
            if spec.positive {
                gp = gp * theta[p] + 1.0;
            }
            g[off + p] = gp;
        }
        // likelihood
        for i in 0..m {
            let idx = &self.grid.obs_index[i];
            if idx.is_empty() {
                continue;
            }
            let s2 = sigma[i] * sigma[i];
            let mut rss = 0.0;
            for (&j, y) in idx.iter().zip(&self.obs_values[i]) {
                let e = z[i * n + j] - y;
                g[i * n + j] -= e / s2;
                rss += e * e;
            }
            if let Some(slot) = self.sigma_slot[i] {
                g[slot] = -(idx.len() as f64) + rss / s2 + 1.0;
            }
        }
        Some(terms)
    }
}
