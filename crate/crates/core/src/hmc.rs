//! Hamiltonian Monte Carlo with identity mass, per-coordinate step scaling and
//! burn-in step-size adaptation toward a target acceptance band.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posterior::Posterior;

/// A differentiable log-density.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Log-density at `z` with its gradient written to `grad`. Non-finite
    /// return values mark points outside the support.
    fn log_density_and_gradient(&self, z: &[f64], grad: &mut [f64]) -> f64;
}

impl LogDensity for Posterior {
    fn dim(&self) -> usize {
        Posterior::dim(self)
    }

    fn log_density_and_gradient(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        Posterior::log_density_and_gradient(self, z, grad)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub leapfrog_steps: usize,
    pub step_size: f64,
    /// Per-coordinate multiplier of the step size; empty means all ones.
    pub scale: Vec<f64>,
    pub acceptance_band: (f64, f64),
    pub adapt_window: usize,
    /// Re-estimate `scale` from the chain's spread at 20%, 40% and 60% of burn-in.
    pub adapt_scale: bool,
    /// Search for a workable initial step size before sampling.
    pub initial_step_search: bool,
    /// Keep every `thin`-th post-burn-in draw.
    pub thin: usize,
    /// Not read from configuration files; the pipeline sets it from the run seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        HmcConfig {
            iterations: 40_000,
            burn_in: 20_000,
            leapfrog_steps: 20,
            step_size: 0.05,
            scale: Vec::new(),
            acceptance_band: (0.6, 0.9),
            adapt_window: 100,
            adapt_scale: true,
            initial_step_search: true,
            thin: 1,
            seed: 0,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::domain("burn-in must be shorter than the total iteration count"));
        }
        if self.leapfrog_steps == 0 {
            return Err(Error::domain("at least one leapfrog step is required"));
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::domain("initial step size must be positive"));
        }
        if self.scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::domain("step-size scales must be positive"));
        }
        let (lo, hi) = self.acceptance_band;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(Error::domain("acceptance band must satisfy 0 < low < high < 1"));
        }
        if self.adapt_window == 0 || self.thin == 0 {
            return Err(Error::domain("adaptation window and thinning must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainOutput {
    /// Post-burn-in draws (thinned).
    pub samples: Vec<Vec<f64>>,
    pub log_density: Vec<f64>,
    /// Mean acceptance probability per adaptation window over the whole run.
    pub acceptance: Vec<f64>,
    /// Fraction of post-burn-in proposals accepted.
    pub accept_rate: f64,
    /// `|H(end) - H(start)|` per post-burn-in proposal (infinite when diverged).
    pub energy_error: Vec<f64>,
    pub step_size: f64,
    pub scale: Vec<f64>,
}

/// `steps` leapfrog updates with per-coordinate step sizes `eps`.
///
/// `grad` must hold the gradient at `z` on entry and holds the gradient at the
/// final position on exit. Returns the final log-density, or `None` as soon as
/// a non-finite value appears.
pub fn leapfrog<T: LogDensity + ?Sized>(
    target: &T,
    z: &mut [f64],
    p: &mut [f64],
    grad: &mut [f64],
    eps: &[f64],
    steps: usize,
) -> Option<f64> {
    let mut logp = f64::NAN;
    for _ in 0..steps {
        for k in 0..z.len() {
            p[k] += 0.5 * eps[k] * grad[k];
            z[k] += eps[k] * p[k];
        }
        logp = target.log_density_and_gradient(z, grad);
        if !logp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return None;
        }
        for k in 0..z.len() {
            p[k] += 0.5 * eps[k] * grad[k];
        }
    }
    Some(logp)
}

/// Online mean and variance per coordinate.
struct Spread {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Spread {
    fn new(d: usize) -> Self {
        Spread {
            count: 0.0,
            mean: vec![0.0; d],
            m2: vec![0.0; d],
        }
    }

    fn push(&mut self, z: &[f64]) {
        self.count += 1.0;
        for ((&v, mean), m2) in z.iter().zip(&mut self.mean).zip(&mut self.m2) {
            let d = v - *mean;
            *mean += d / self.count;
            *m2 += d * (v - *mean);
        }
    }

    fn sd(&self, k: usize) -> f64 {
        if self.count < 2.0 {
            0.0
        } else {
            (self.m2[k] / (self.count - 1.0)).sqrt()
        }
    }
}

struct Proposal {
    z: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
    accept_prob: f64,
    energy_error: f64,
}

fn propose<T: LogDensity + ?Sized>(
    target: &T,
    z: &[f64],
    grad: &[f64],
    logp: f64,
    eps: &[f64],
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> Proposal {
    let d = z.len();
    let mut p: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let h0 = -logp + 0.5 * p.iter().map(|v| v * v).sum::<f64>();
    let mut zn = z.to_vec();
    let mut gn = grad.to_vec();
    match leapfrog(target, &mut zn, &mut p, &mut gn, eps, steps) {
        Some(lp) => {
            let h1 = -lp + 0.5 * p.iter().map(|v| v * v).sum::<f64>();
            let dh = h1 - h0;
            let accept_prob = if dh.is_finite() { (-dh).exp().min(1.0) } else { 0.0 };
            Proposal {
                z: zn,
                grad: gn,
                logp: lp,
                accept_prob,
                energy_error: dh.abs(),
            }
        }
        None => Proposal {
            z: zn,
            grad: gn,
            logp: f64::NEG_INFINITY,
            accept_prob: 0.0,
            energy_error: f64::INFINITY,
        },
    }
}

/// Double or halve `eps` until the acceptance probability of a full
/// `steps`-step proposal crosses one half.
#[allow(clippy::too_many_arguments)]
fn initial_step<T: LogDensity + ?Sized>(
    target: &T,
    z: &[f64],
    grad: &[f64],
    logp: f64,
    eps: f64,
    scale: &[f64],
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let steps_for = |e: f64| scale.iter().map(|s| e * s).collect::<Vec<f64>>();
    let mut e = eps;
    let first = propose(target, z, grad, logp, &steps_for(e), steps, rng).accept_prob;
    let up = first > 0.5;
    for _ in 0..60 {
        let next = if up { e * 2.0 } else { e * 0.5 };
        let a = propose(target, z, grad, logp, &steps_for(next), steps, rng).accept_prob;
        e = next;
        if (up && a < 0.5) || (!up && a > 0.5) {
            break;
        }
    }
    if up {
        e * 0.5
    } else {
        e
    }
}

/// Run one chain from `init`. Deterministic given `cfg.seed`.
pub fn sample<T: LogDensity + ?Sized>(target: &T, init: &[f64], cfg: &HmcConfig) -> Result<ChainOutput> {
    cfg.validate()?;
    let d = target.dim();
    if init.len() != d {
        return Err(Error::domain(format!(
            "initial state has {} entries, target has {d}",
            init.len()
        )));
    }
    let mut scale = if cfg.scale.is_empty() {
        vec![1.0; d]
    } else {
        cfg.scale.clone()
    };
    if scale.len() != d {
        return Err(Error::domain(
            "step-size scale length does not match the target dimension",
        ));
    }
    let mut z = init.to_vec();
    let mut grad = vec![0.0; d];
    let mut logp = target.log_density_and_gradient(&z, &mut grad);
    if !logp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::domain("initial state has no finite log-density"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut eps = cfg.step_size;
    if cfg.initial_step_search {
        eps = initial_step(target, &z, &grad, logp, eps, &scale, cfg.leapfrog_steps, &mut rng);
    }
    let rescale_at: Vec<usize> = if cfg.adapt_scale {
        [0.2, 0.4, 0.6]
            .iter()
            .map(|f| (f * cfg.burn_in as f64) as usize)
            .filter(|&i| i >= 10)
            .collect()
    } else {
        Vec::new()
    };
    let mut spread = Spread::new(d);

    let kept = (cfg.iterations - cfg.burn_in).div_ceil(cfg.thin);
    let mut out = ChainOutput {
        samples: Vec::with_capacity(kept),
        log_density: Vec::with_capacity(kept),
        acceptance: Vec::new(),
        accept_rate: 0.0,
        energy_error: Vec::with_capacity(cfg.iterations - cfg.burn_in),
        step_size: eps,
        scale: Vec::new(),
    };
    let mut window_sum = 0.0;
    let mut accepted_after = 0usize;
    let mut step_vec: Vec<f64> = scale.iter().map(|s| eps * s).collect();

    for it in 0..cfg.iterations {
        let prop = propose(target, &z, &grad, logp, &step_vec, cfg.leapfrog_steps, &mut rng);
        let u: f64 = rng.random();
        let accepted = u < prop.accept_prob;
        if accepted {
            z = prop.z;
            grad = prop.grad;
            logp = prop.logp;
        }
        window_sum += prop.accept_prob;

        if it < cfg.burn_in {
            if cfg.adapt_scale {
                spread.push(&z);
            }
            if (it + 1) % cfg.adapt_window == 0 {
                let rate = window_sum / cfg.adapt_window as f64;
                if rate > cfg.acceptance_band.1 {
                    eps *= 1.05;
                } else if rate < cfg.acceptance_band.0 {
                    eps *= 0.95;
                }
            }
            if rescale_at.contains(&(it + 1)) {
                let mut log_ratio = 0.0;
                for (k, s) in scale.iter_mut().enumerate() {
                    let sd = spread.sd(k);
                    let new = if sd.is_finite() && sd > 0.0 {
                        sd.clamp(*s * 1e-3, *s * 1e3)
                    } else {
                        *s
                    };
                    log_ratio += (*s / new).ln();
                    *s = new;
                }
                // keep the typical absolute step length unchanged
                eps *= (log_ratio / d as f64).exp();
                if cfg.initial_step_search {
                    eps = initial_step(target, &z, &grad, logp, eps, &scale, cfg.leapfrog_steps, &mut rng);
                }
                spread = Spread::new(d);
            }
            step_vec = scale.iter().map(|s| eps * s).collect();
        } else {
            if accepted {
                accepted_after += 1;
            }
            out.energy_error.push(prop.energy_error);
            if (it - cfg.burn_in).is_multiple_of(cfg.thin) {
                out.samples.push(z.clone());
                out.log_density.push(logp);
            }
        }
        if (it + 1) % cfg.adapt_window == 0 {
            out.acceptance.push(window_sum / cfg.adapt_window as f64);
            window_sum = 0.0;
        }
    }
    out.accept_rate = accepted_after as f64 / (cfg.iterations - cfg.burn_in) as f64;
    out.step_size = eps;
    out.scale = scale;
    Ok(out)
}

/// Scale on which a coordinate is reported.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transform {
    Identity,
    Exp,
}

impl Transform {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Transform::Identity => v,
            Transform::Exp => v.exp(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Linear-interpolation (type 7) empirical quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Summary of one stream of values already on the reporting scale.
pub fn summarize_values(values: &[f64]) -> Summary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Summary {
        mean,
        sd,
        lower: quantile_sorted(&sorted, 0.025),
        upper: quantile_sorted(&sorted, 0.975),
    }
}

/// Per-coordinate mean, standard deviation and 95% interval after mapping each
/// coordinate through its transform.
pub fn summarize(samples: &[Vec<f64>], transforms: &[Transform]) -> Result<Vec<Summary>> {
    let Some(first) = samples.first() else {
        return Err(Error::domain("cannot summarize an empty chain"));
    };
    if transforms.len() != first.len() {
        return Err(Error::domain("one transform per coordinate is required"));
    }
    Ok((0..first.len())
        .map(|k| {
            let vals: Vec<f64> = samples.iter().map(|s| transforms[k].apply(s[k])).collect();
            summarize_values(&vals)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Gaussian {
        dim: usize,
        /// Precision matrix, row-major.
        prec: Vec<f64>,
    }

    impl Gaussian {
        fn standard(dim: usize) -> Self {
            let mut prec = vec![0.0; dim * dim];
            for i in 0..dim {
                prec[i * dim + i] = 1.0;
            }
            Gaussian { dim, prec }
        }

        fn correlated(rho: f64) -> Self {
            let det = 1.0 - rho * rho;
            Gaussian {
                dim: 2,
                prec: vec![1.0 / det, -rho / det, -rho / det, 1.0 / det],
            }
        }
    }

    impl LogDensity for Gaussian {
        fn dim(&self) -> usize {
            self.dim
        }
        fn log_density_and_gradient(&self, z: &[f64], grad: &mut [f64]) -> f64 {
            let d = self.dim;
            let mut q = 0.0;
            for i in 0..d {
                let row: f64 = (0..d).map(|j| self.prec[i * d + j] * z[j]).sum();
                grad[i] = -row;
                q += z[i] * row;
            }
            -0.5 * q
        }
    }

    fn energy_after_one_step(eps: f64) -> f64 {
        let g = Gaussian::standard(1);
        let mut z = [0.7];
        let mut p = [0.4];
        let mut grad = [-0.7];
        let h0 = 0.5 * (0.7f64 * 0.7 + 0.4 * 0.4);
        let lp = leapfrog(&g, &mut z, &mut p, &mut grad, &[eps], 1).unwrap();
        (-lp + 0.5 * p[0] * p[0] - h0).abs()
    }

    #[test]
    fn one_step_energy_error_is_third_order() {
        let ratio = energy_after_one_step(0.1) / energy_after_one_step(0.05);
        assert!((ratio - 8.0).abs() < 0.5, "{ratio}");
    }

    #[test]
    fn zero_step_leaves_state_unchanged() {
        let g = Gaussian::standard(3);
        let mut z = [0.1, -0.2, 0.3];
        let mut p = [1.0, 2.0, 3.0];
        let mut grad = [-0.1, 0.2, -0.3];
        leapfrog(&g, &mut z, &mut p, &mut grad, &[0.0; 3], 5).unwrap();
        assert_eq!(z, [0.1, -0.2, 0.3]);
    }

    #[test]
    fn leapfrog_is_reversible() {
        let g = Gaussian::correlated(0.5);
        let z0 = [0.3, -1.2];
        let p0 = [0.8, 0.1];
        let mut z = z0;
        let mut p = p0;
        let mut grad = [0.0; 2];
        g.log_density_and_gradient(&z, &mut grad);
        leapfrog(&g, &mut z, &mut p, &mut grad, &[0.1, 0.07], 20).unwrap();
        p.iter_mut().for_each(|v| *v = -*v);
        leapfrog(&g, &mut z, &mut p, &mut grad, &[0.1, 0.07], 20).unwrap();
        for k in 0..2 {
            assert!((z[k] - z0[k]).abs() < 1e-10);
            assert!((p[k] + p0[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn recovers_standard_normal_moments() {
        let g = Gaussian::standard(10);
        let cfg = HmcConfig {
            iterations: 20_000,
            burn_in: 2_000,
            leapfrog_steps: 10,
            step_size: 0.2,
            seed: 11,
            ..Default::default()
        };
        let out = sample(&g, &[0.5; 10], &cfg).unwrap();
        assert_eq!(out.samples.len(), 18_000);
        let s = summarize(&out.samples, &[Transform::Identity; 10]).unwrap();
        for c in s {
            assert!(c.mean.abs() <= 0.05, "{c:?}");
            assert!((c.sd * c.sd - 1.0).abs() <= 0.1, "{c:?}");
        }
        let last_burn_in = out.acceptance[cfg.burn_in / cfg.adapt_window - 1];
        assert!((0.55..=0.95).contains(&last_burn_in), "{last_burn_in}");
    }

    #[test]
    fn recovers_correlation() {
        let g = Gaussian::correlated(0.9);
        let cfg = HmcConfig {
            iterations: 20_000,
            burn_in: 2_000,
            leapfrog_steps: 10,
            step_size: 0.1,
            seed: 5,
            ..Default::default()
        };
        let out = sample(&g, &[0.0, 0.0], &cfg).unwrap();
        let n = out.samples.len() as f64;
        let mean = |k: usize| out.samples.iter().map(|s| s[k]).sum::<f64>() / n;
        let (m0, m1) = (mean(0), mean(1));
        let cov = out.samples.iter().map(|s| (s[0] - m0) * (s[1] - m1)).sum::<f64>() / n;
        let var = |k: usize, m: f64| out.samples.iter().map(|s| (s[k] - m).powi(2)).sum::<f64>() / n;
        let rho = cov / (var(0, m0) * var(1, m1)).sqrt();
        assert!((rho - 0.9).abs() <= 0.05, "{rho}");
    }

    #[test]
    fn identical_seeds_give_identical_chains() {
        let g = Gaussian::standard(2);
        let cfg = HmcConfig {
            iterations: 500,
            burn_in: 200,
            leapfrog_steps: 5,
            step_size: 0.3,
            seed: 99,
            adapt_scale: true,
            initial_step_search: true,
            ..Default::default()
        };
        let a = sample(&g, &[0.1, 0.2], &cfg).unwrap();
        let b = sample(&g, &[0.1, 0.2], &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_configs_and_states() {
        let g = Gaussian::standard(1);
        let bad = HmcConfig {
            iterations: 10,
            burn_in: 10,
            ..Default::default()
        };
        assert!(sample(&g, &[0.0], &bad).is_err());
        struct Flat;
        impl LogDensity for Flat {
            fn dim(&self) -> usize {
                1
            }
            fn log_density_and_gradient(&self, _z: &[f64], g: &mut [f64]) -> f64 {
                g[0] = 0.0;
                f64::NEG_INFINITY
            }
        }
        let cfg = HmcConfig {
            iterations: 10,
            burn_in: 5,
            ..Default::default()
        };
        assert!(matches!(sample(&Flat, &[0.0], &cfg), Err(Error::Domain(_))));
    }

    #[test]
    fn summary_rules() {
        let constant = vec![vec![2.5]; 10];
        let s = summarize(&constant, &[Transform::Identity]).unwrap()[0];
        assert_eq!((s.mean, s.lower, s.upper), (2.5, 2.5, 2.5));

        let ramp: Vec<Vec<f64>> = (1..=1000).map(|i| vec![i as f64]).collect();
        let s = summarize(&ramp, &[Transform::Identity]).unwrap()[0];
        assert!((s.lower - 25.975).abs() < 1e-12);
        assert!((s.upper - 975.025).abs() < 1e-12);

        let logs: Vec<Vec<f64>> = [1.0f64, 2.0, 4.0].iter().map(|v| vec![v.ln()]).collect();
        let s = summarize(&logs, &[Transform::Exp]).unwrap()[0];
        assert!((s.mean - 7.0 / 3.0).abs() < 1e-12);
        assert!(summarize(&[], &[]).is_err());
    }
}
