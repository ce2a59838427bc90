//! GP prior machinery: marginal-likelihood fitting of per-component
//! hyperparameters and the frozen conditional matrices of the derivative GP.
//!
//! Given a grid `I` and kernel `K`, the derivative process conditioned on the
//! trajectory values is Gaussian with
//!
//! ```text
//! E[x'(I) | x(I)]   = m (x(I) - mu),     m = 'K(I,I) C^{-1},   C = K(I,I)
//! Cov[x'(I) | x(I)] = zeta = K''(I,I) - 'K(I,I) C^{-1} K'(I,I)
//! ```

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{build_kernel_set, symmetrize, MaternParams, Smoothness, NUGGET};
use crate::linalg::{cholesky_with_jitter, log_det, mvn_log_density};
use crate::optim::{minimize, SimplexOptions};

/// Observation noise of one component.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum NoiseLevel {
    /// Known standard deviation.
    Known(f64),
    Unknown,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComponentObservations {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub noise: NoiseLevel,
}

impl ComponentObservations {
    pub fn new(times: Vec<f64>, values: Vec<f64>, noise: NoiseLevel) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::domain(format!(
                "{} observation times but {} values",
                times.len(),
                values.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::domain("observation times must be strictly increasing"));
        }
        if times.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::domain("observations must be finite"));
        }
        if let NoiseLevel::Known(s) = noise {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::domain(format!("known noise level must be >= 0, got {s}")));
            }
        }
        Ok(ComponentObservations { times, values, noise })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn sample_mean(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.values.iter().sum::<f64>() / self.values.len() as f64
        }
    }

    pub fn sample_variance(&self) -> f64 {
        let n = self.values.len();
        if n < 2 {
            return 0.0;
        }
        let mean = self.sample_mean();
        self.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    }
}

/// Log-density of `y` under `N(0, K(times, times) + noise_var I)`.
pub fn log_marginal_likelihood(obs: &ComponentObservations, p: &MaternParams, noise_var: f64) -> Result<f64> {
    if obs.is_empty() {
        return Err(Error::domain("marginal likelihood needs at least one observation"));
    }
    if !(noise_var.is_finite() && noise_var >= 0.0) {
        return Err(Error::domain(format!("noise variance must be >= 0, got {noise_var}")));
    }
    let set = build_kernel_set(&obs.times, &obs.times, p)?;
    let mut cov = set.k;
    for i in 0..cov.nrows() {
        cov[(i, i)] += noise_var;
    }
    let (ch, _) = cholesky_with_jitter(&cov, 0.0)?;
    let y = DVector::from_column_slice(&obs.values);
    Ok(mvn_log_density(&ch, &y))
}

/// Result of marginal-likelihood maximization for one component.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperparameterFit {
    pub params: MaternParams,
    /// Observation noise variance (fixed at the input value when known).
    pub noise_var: f64,
    /// Sample mean removed before fitting; the GP prior mean.
    pub mean: f64,
    pub log_likelihood: f64,
}

const FIT_STARTS: usize = 8;
const FIT_SEED: u64 = 0x6d61_7465_726e;

/// Fit `(phi_1, phi_2)` and, when unknown, the noise variance by maximizing the
/// marginal likelihood of the mean-centered observations.
///
/// Derivative-free simplex search in log-parameters from eight log-uniform
/// starts: `phi_2` between the smallest observation gap and the time span,
/// `phi_1` between 0.01x and 100x the sample variance, `sigma^2` between 1e-6x
/// and 1x the sample variance.
pub fn fit_hyperparameters(obs: &ComponentObservations, nu: Smoothness) -> Result<HyperparameterFit> {
    let known = match obs.noise {
        NoiseLevel::Known(s) => Some(s * s),
        NoiseLevel::Unknown => None,
    };
    let min_obs = if known.is_some() { 3 } else { 5 };
    if obs.len() < min_obs {
        return Err(Error::domain(format!(
            "hyperparameter fitting needs at least {min_obs} observations, got {}",
            obs.len()
        )));
    }
    let mean = obs.sample_mean();
    let centered = ComponentObservations {
        times: obs.times.clone(),
        values: obs.values.iter().map(|v| v - mean).collect(),
        noise: obs.noise,
    };
    let var = obs.sample_variance().max(1e-300);
    let span = obs.times[obs.len() - 1] - obs.times[0];
    let min_gap = obs.times.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);

    // Search box in log space; the simplex treats anything outside as infeasible.
    let lo = [(1e-4 * var).ln(), (0.5 * min_gap).ln(), (1e-10 * var).ln()];
    let hi = [(1e4 * var).ln(), (10.0 * span).ln(), (10.0 * var).ln()];
    let dims = if known.is_some() { 2 } else { 3 };

    let objective = |z: &[f64]| -> f64 {
        if z.iter().zip(&lo).zip(&hi).any(|((v, l), h)| v < l || v > h) {
            return f64::INFINITY;
        }
        let Ok(p) = MaternParams::new(z[0].exp(), z[1].exp(), nu) else {
            return f64::INFINITY;
        };
        let nv = known.unwrap_or_else(|| z[2].exp());
        match log_marginal_likelihood(&centered, &p, nv) {
            Ok(v) => -v,
            Err(_) => f64::INFINITY,
        }
    };

    let start_lo = [(0.01 * var).ln(), min_gap.ln(), (1e-6 * var).ln()];
    let start_hi = [(100.0 * var).ln(), span.max(min_gap).ln(), var.ln()];
    let mut rng = ChaCha8Rng::seed_from_u64(FIT_SEED);
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut improved = false;
    for _ in 0..FIT_STARTS {
        let z0: Vec<f64> = (0..dims)
            .map(|d| start_lo[d] + rng.random::<f64>() * (start_hi[d] - start_lo[d]))
            .collect();
        let f0 = objective(&z0);
        let res = minimize(
            objective,
            &z0,
            &vec![0.5; dims],
            SimplexOptions {
                max_evaluations: 1500,
                f_tol: 1e-12,
                x_tol: 1e-7,
            },
        );
        if res.value.is_finite() && (!f0.is_finite() || res.value < f0) {
            improved = true;
        }
        if res.value.is_finite() && best.as_ref().is_none_or(|(_, v)| res.value < *v) {
            best = Some((res.x, res.value));
        }
    }
    let Some((z, value)) = best else {
        return Err(Error::FitStalled {
            best_log_params: vec![],
            best_value: f64::NEG_INFINITY,
        });
    };
    if !improved {
        return Err(Error::FitStalled {
            best_log_params: z,
            best_value: -value,
        });
    }
    Ok(HyperparameterFit {
        params: MaternParams::new(z[0].exp(), z[1].exp(), nu)?,
        noise_var: known.unwrap_or_else(|| z[2].exp()),
        mean,
        log_likelihood: -value,
    })
}

/// Frozen per-component matrices of the GP prior and its derivative process on a grid.
///
/// `c` includes the diagonal nugget, so `m c = 'K` holds exactly. `zeta` is the
/// raw Schur complement; its inverse and log-determinant include a nugget of
/// `1e-7 * K''(0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GpComponentCache {
    pub grid: Vec<f64>,
    pub params: MaternParams,
    pub c: DMatrix<f64>,
    pub c_inv: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub zeta: DMatrix<f64>,
    pub zeta_inv: DMatrix<f64>,
    pub log_det_c: f64,
    pub log_det_zeta: f64,
}

pub fn build_cache(grid: &[f64], p: &MaternParams) -> Result<GpComponentCache> {
    if grid.is_empty() {
        return Err(Error::domain("cache grid must be non-empty"));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::domain("cache grid must be sorted and distinct"));
    }
    let set = build_kernel_set(grid, grid, p)?;
    let n = grid.len();
    let mut c = set.k;
    for i in 0..n {
        c[(i, i)] += p.nugget();
    }
    let (c_chol, c_jit) = cholesky_with_jitter(&c, 0.0)?;
    if c_jit > 0.0 {
        for i in 0..n {
            c[(i, i)] += c_jit;
        }
    }
    // m^T = C^{-1} 'K^T = C^{-1} K'
    let m = c_chol.solve(&set.kp).transpose();
    let mut zeta = &set.kpp - &m * &set.kp;
    symmetrize(&mut zeta);
    let (zeta_chol, _) = cholesky_with_jitter(&zeta, NUGGET * p.derivative_variance())?;
    let mut c_inv = c_chol.inverse();
    symmetrize(&mut c_inv);
    let mut zeta_inv = zeta_chol.inverse();
    symmetrize(&mut zeta_inv);
    Ok(GpComponentCache {
        grid: grid.to_vec(),
        params: *p,
        log_det_c: log_det(&c_chol),
        log_det_zeta: log_det(&zeta_chol),
        c,
        c_inv,
        m,
        zeta,
        zeta_inv,
    })
}

/// Draw a zero-mean GP path at `times` through a symmetric eigendecomposition
/// of the covariance (tiny negative eigenvalues are clamped to zero).
pub fn sample_path<R: Rng + ?Sized>(times: &[f64], p: &MaternParams, rng: &mut R) -> Result<Vec<f64>> {
    let sampler = PathSampler::new(times, p)?;
    Ok(sampler.draw(rng))
}

/// Reusable square-root factor for repeated GP path draws at fixed times.
#[derive(Clone, Debug)]
pub struct PathSampler {
    root: DMatrix<f64>,
}

impl PathSampler {
    pub fn new(times: &[f64], p: &MaternParams) -> Result<Self> {
        let set = build_kernel_set(times, times, p)?;
        let eig = SymmetricEigen::new(set.k);
        let mut root = eig.eigenvectors;
        for (j, lam) in eig.eigenvalues.iter().enumerate() {
            let s = lam.max(0.0).sqrt();
            root.column_mut(j).scale_mut(s);
        }
        Ok(PathSampler { root })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z = DVector::from_fn(self.root.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
        (&self.root * z).as_slice().to_vec()
    }
}
