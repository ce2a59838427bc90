//! Matern covariance and the derivative kernels used by the derivative GP.
//!
//! For a stationary kernel `K(s, t) = k(|s - t|)` the three derivative kernels
//! follow from the radial profile `k(d)` and its first two derivatives:
//!
//! * `'K  = dK/ds      =  k'(d) sign(s - t)`
//! * `K'  = dK/dt      = -k'(d) sign(s - t)`
//! * `K'' = d2K/ds dt  = -k''(d)`
//!
//! The general-order profile uses `d/dz [z^v K_v(z)] = -z^v K_{v-1}(z)`, so
//! every derivative is a combination of Bessel functions from one ladder.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{bessel_k_ladder_scaled, gamma};

/// Relative distance below which the profile switches to its Taylor branch.
const SMALL_LAG: f64 = 1e-8;

/// Diagonal nugget, relative to the kernel variance, added before factorizing.
pub const NUGGET: f64 = 1e-7;

/// Matern smoothness. Only orders giving twice-differentiable sample paths are offered.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Smoothness {
    #[serde(rename = "2.01")]
    Nu201,
    #[serde(rename = "2.5")]
    Nu25,
}

impl Smoothness {
    pub fn value(self) -> f64 {
        match self {
            Smoothness::Nu201 => 2.01,
            Smoothness::Nu25 => 2.5,
        }
    }

    pub fn from_value(nu: f64) -> Result<Self> {
        if (nu - 2.01).abs() < 1e-12 {
            Ok(Smoothness::Nu201)
        } else if (nu - 2.5).abs() < 1e-12 {
            Ok(Smoothness::Nu25)
        } else {
            Err(Error::domain(format!(
                "Matern smoothness must be 2.01 or 2.5, got {nu}"
            )))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaternParams {
    /// Signal variance (phi_1).
    pub variance: f64,
    /// Bandwidth in time units (phi_2).
    pub bandwidth: f64,
    pub nu: Smoothness,
}

impl MaternParams {
    pub fn new(variance: f64, bandwidth: f64, nu: Smoothness) -> Result<Self> {
        let p = MaternParams {
            variance,
            bandwidth,
            nu,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.variance.is_finite() && self.variance > 0.0) {
            return Err(Error::domain(format!(
                "Matern variance must be positive and finite, got {}",
                self.variance
            )));
        }
        if !(self.bandwidth.is_finite() && self.bandwidth > 0.0) {
            return Err(Error::domain(format!(
                "Matern bandwidth must be positive and finite, got {}",
                self.bandwidth
            )));
        }
        Ok(())
    }

    /// `d2K/ds dt` at zero lag: `phi_1 nu / ((nu - 1) phi_2^2)`.
    pub fn derivative_variance(&self) -> f64 {
        zero_lag_curvature(self.nu.value(), self.variance, self.bandwidth)
    }

    pub fn nugget(&self) -> f64 {
        NUGGET * self.variance
    }
}

/// Radial profile `(k(d), k'(d), k''(d))` for `d >= 0`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Profile {
    pub k: f64,
    pub dk: f64,
    pub d2k: f64,
}

fn zero_lag_curvature(nu: f64, variance: f64, bandwidth: f64) -> f64 {
    variance * nu / ((nu - 1.0) * bandwidth * bandwidth)
}

fn small_lag_profile(nu: f64, d: f64, variance: f64, bandwidth: f64) -> Profile {
    let c2 = -zero_lag_curvature(nu, variance, bandwidth);
    Profile {
        k: variance + 0.5 * c2 * d * d,
        dk: c2 * d,
        d2k: c2,
    }
}

fn profile_nu25(d: f64, variance: f64, bandwidth: f64) -> Profile {
    let s5 = 5f64.sqrt();
    let u = s5 * d / bandwidth;
    let e = (-u).exp();
    Profile {
        k: variance * (1.0 + u + u * u / 3.0) * e,
        dk: -variance * (s5 / bandwidth) * u * (1.0 + u) / 3.0 * e,
        d2k: -variance * 5.0 / (3.0 * bandwidth * bandwidth) * (1.0 + u - u * u) * e,
    }
}

/// General real-order profile through the Bessel ladder. Requires `nu >= 1.5`.
pub(crate) fn profile_general(nu: f64, d: f64, variance: f64, bandwidth: f64) -> Profile {
    debug_assert!(nu >= 1.5);
    if d < SMALL_LAG * bandwidth {
        return small_lag_profile(nu, d, variance, bandwidth);
    }
    let a = (2.0 * nu).sqrt() / bandwidth;
    let z = a * d;
    let norm = variance * 2f64.powf(1.0 - nu) / gamma(nu);
    let (ladder, _) = bessel_k_ladder_scaled(nu, z);
    let top = ladder.len() - 1;
    // z^nu K_{nu-i}(z), recombined in log space to keep the e^{-z} factor exact.
    let log_pow = nu * z.ln() - z;
    let w = log_pow.exp();
    let zk_nu = w * ladder[top];
    let zk_nu1 = w * ladder[top - 1];
    let zk_nu2 = w * ladder[top - 2];
    Profile {
        k: norm * zk_nu,
        dk: -norm * a * zk_nu1,
        d2k: -norm * a * a * (zk_nu1 / z - zk_nu2),
    }
}

pub(crate) fn profile(d: f64, p: &MaternParams) -> Profile {
    match p.nu {
        Smoothness::Nu25 => {
            if d < SMALL_LAG * p.bandwidth {
                small_lag_profile(2.5, d, p.variance, p.bandwidth)
            } else {
                profile_nu25(d, p.variance, p.bandwidth)
            }
        }
        Smoothness::Nu201 => profile_general(2.01, d, p.variance, p.bandwidth),
    }
}

fn check_times(s: f64, t: f64) -> Result<()> {
    if s.is_finite() && t.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "kernel arguments must be finite, got ({s}, {t})"
        )))
    }
}

/// Matern covariance `K(s, t)`.
pub fn matern(s: f64, t: f64, p: &MaternParams) -> Result<f64> {
    check_times(s, t)?;
    p.validate()?;
    Ok(profile((s - t).abs(), p).k)
}

/// Partial derivatives of a covariance kernel at a point pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelDerivatives {
    /// `dK/ds`
    pub ds: f64,
    /// `dK/dt`
    pub dt: f64,
    /// `d2K/ds dt`
    pub dsdt: f64,
}

#[inline]
pub(crate) fn derivatives_from_profile(delta: f64, pr: &Profile) -> KernelDerivatives {
    let sign = if delta > 0.0 {
        1.0
    } else if delta < 0.0 {
        -1.0
    } else {
        0.0
    };
    KernelDerivatives {
        ds: pr.dk * sign,
        dt: -pr.dk * sign,
        dsdt: -pr.d2k,
    }
}

pub fn matern_derivatives(s: f64, t: f64, p: &MaternParams) -> Result<KernelDerivatives> {
    check_times(s, t)?;
    p.validate()?;
    let delta = s - t;
    Ok(derivatives_from_profile(delta, &profile(delta.abs(), p)))
}

/// `K`, `K'`, `'K` and `K''` evaluated on a grid pair; rows follow `grid_a`
/// (the `s` argument), columns follow `grid_b` (the `t` argument).
#[derive(Clone, Debug, PartialEq)]
pub struct KernelMatrixSet {
    pub k: DMatrix<f64>,
    /// `dK/dt`
    pub kp: DMatrix<f64>,
    /// `dK/ds`
    pub pk: DMatrix<f64>,
    /// `d2K/ds dt`
    pub kpp: DMatrix<f64>,
}

pub fn build_kernel_set(grid_a: &[f64], grid_b: &[f64], p: &MaternParams) -> Result<KernelMatrixSet> {
    if grid_a.is_empty() || grid_b.is_empty() {
        return Err(Error::domain("kernel grids must be non-empty"));
    }
    if let Some(bad) = grid_a.iter().chain(grid_b).find(|v| !v.is_finite()) {
        return Err(Error::domain(format!("kernel grid contains non-finite time {bad}")));
    }
    p.validate()?;
    let (na, nb) = (grid_a.len(), grid_b.len());
    let mut set = KernelMatrixSet {
        k: DMatrix::zeros(na, nb),
        kp: DMatrix::zeros(na, nb),
        pk: DMatrix::zeros(na, nb),
        kpp: DMatrix::zeros(na, nb),
    };
    for (i, &s) in grid_a.iter().enumerate() {
        for (j, &t) in grid_b.iter().enumerate() {
            let delta = s - t;
            let pr = profile(delta.abs(), p);
            let dv = derivatives_from_profile(delta, &pr);
            set.k[(i, j)] = pr.k;
            set.kp[(i, j)] = dv.dt;
            set.pk[(i, j)] = dv.ds;
            set.kpp[(i, j)] = dv.dsdt;
        }
    }
    if grid_a == grid_b {
        symmetrize(&mut set.k);
        symmetrize(&mut set.kpp);
    }
    Ok(set)
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(v: f64, b: f64, nu: Smoothness) -> MaternParams {
        MaternParams::new(v, b, nu).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn zero_lag_returns_variance() {
        let p = params(2.0, 1.0, Smoothness::Nu25);
        assert_eq!(matern(1.0, 1.0, &p).unwrap(), 2.0);
        let p = params(2.0, 1.0, Smoothness::Nu201);
        assert_eq!(matern(1.0, 1.0, &p).unwrap(), 2.0);
    }

    #[test]
    fn nu25_unit_lag_hand_value() {
        let p = params(1.0, 1.0, Smoothness::Nu25);
        let s5 = 5f64.sqrt();
        let want = (1.0 + s5 + 5.0 / 3.0) * (-s5).exp();
        assert!(rel(matern(0.0, 1.0, &p).unwrap(), want) < 1e-14);
    }

    #[test]
    #[allow(clippy::excessive_precision)]
    fn nu201_matches_arbitrary_precision_oracle() {
        // 40-digit evaluation of phi_1 2^{1-nu}/Gamma(nu) z^nu K_nu(z) and its lag derivatives.
        let p = params(1.0, 1.0, Smoothness::Nu201);
        let cases = [
            (
                0.3,
                0.921_900_743_668_303_571_32,
                -0.467_985_900_096_244_595_3,
                -1.005_017_071_422_281_902_6,
            ),
            (
                1.0,
                0.507_909_917_584_404_991_86,
                -0.559_893_281_524_454_677_97,
                0.350_920_158_485_454_939_79,
            ),
            (
                4.0,
                0.005_901_740_479_505_297_238,
                -0.009_913_492_000_054_320_589_9,
                0.016_240_310_267_570_282_851,
            ),
        ];
        for (d, k, dk, d2k) in cases {
            assert!(rel(matern(0.0, d, &p).unwrap(), k) < 1e-9, "k at {d}");
            let pr = profile(d, &p);
            assert!(rel(pr.dk, dk) < 1e-9, "dk at {d}");
            assert!(rel(pr.d2k, d2k) < 1e-9, "d2k at {d}");
        }
    }

    #[test]
    fn general_path_agrees_with_closed_form_at_nu25() {
        for &d in &[1e-9, 1e-4, 0.01, 0.3, 1.0, 2.7, 9.0, 40.0] {
            for &b in &[0.3, 1.0, 5.0] {
                let closed = if d < SMALL_LAG * b {
                    small_lag_profile(2.5, d, 1.7, b)
                } else {
                    profile_nu25(d, 1.7, b)
                };
                let general = profile_general(2.5, d, 1.7, b);
                for (a, g) in [
                    (closed.k, general.k),
                    (closed.dk, general.dk),
                    (closed.d2k, general.d2k),
                ] {
                    assert!((a - g).abs() <= 1e-8 * a.abs().max(1e-290), "d={d} b={b}: {a} vs {g}");
                }
            }
        }
    }

    #[test]
    fn nu15_cross_derivative_at_zero_lag() {
        // d2K/ds dt at s = t equals 3 sigma^2 / rho^2 for nu = 3/2.
        let (sigma2, rho) = (1.3, 0.7);
        let pr = profile_general(1.5, 0.0, sigma2, rho);
        let dv = derivatives_from_profile(0.0, &pr);
        assert!(rel(dv.dsdt, 3.0 * sigma2 / (rho * rho)) < 1e-14);
        // Away from zero the general path reproduces the nu = 3/2 closed form.
        let d = 0.4;
        let u = 3f64.sqrt() * d / rho;
        let want = sigma2 * (1.0 + u) * (-u).exp();
        assert!(rel(profile_general(1.5, d, sigma2, rho).k, want) < 1e-10);
    }

    #[test]
    fn derivatives_vanish_at_zero_lag() {
        for nu in [Smoothness::Nu201, Smoothness::Nu25] {
            let p = params(1.5, 2.0, nu);
            let dv = matern_derivatives(3.0, 3.0, &p).unwrap();
            assert_eq!(dv.ds, 0.0);
            assert_eq!(dv.dt, 0.0);
            assert!(dv.dsdt > 0.0);
            assert!(rel(dv.dsdt, p.derivative_variance()) < 1e-14);
        }
    }

    #[test]
    fn non_finite_inputs_are_rejected() {
        let p = params(1.0, 1.0, Smoothness::Nu25);
        assert!(matches!(matern(f64::NAN, 0.0, &p), Err(Error::Domain(_))));
        assert!(matches!(
            matern_derivatives(0.0, f64::INFINITY, &p),
            Err(Error::Domain(_))
        ));
        assert!(MaternParams::new(0.0, 1.0, Smoothness::Nu25).is_err());
        assert!(MaternParams::new(1.0, -1.0, Smoothness::Nu25).is_err());
        assert!(Smoothness::from_value(1.5).is_err());
    }

    #[test]
    fn kernel_value_is_positive_and_decreasing() {
        for nu in [Smoothness::Nu201, Smoothness::Nu25] {
            let p = params(1.0, 1.3, nu);
            let mut prev = f64::INFINITY;
            for i in 0..200 {
                let v = matern(0.0, i as f64 * 0.05, &p).unwrap();
                assert!(v > 0.0 && v < prev);
                prev = v;
            }
        }
    }

    #[test]
    fn single_point_kernel_set() {
        let p = params(2.0, 1.0, Smoothness::Nu25);
        let set = build_kernel_set(&[0.0], &[0.0], &p).unwrap();
        assert_eq!(set.k[(0, 0)], 2.0);
        assert_eq!(set.kp[(0, 0)], 0.0);
        assert_eq!(set.pk[(0, 0)], 0.0);
        assert!(rel(set.kpp[(0, 0)], p.derivative_variance()) < 1e-14);
    }

    #[test]
    fn kernel_set_entries_match_pointwise_calls() {
        let p = params(1.2, 0.9, Smoothness::Nu201);
        let set = build_kernel_set(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0], &p).unwrap();
        assert_eq!(set.k[(0, 2)], matern(0.0, 2.0, &p).unwrap());
        assert_eq!(set.k, set.k.transpose());
        assert_eq!(set.pk, set.kp.transpose());
        for i in 0..3 {
            assert_eq!(set.kp[(i, i)], 0.0);
        }
        let cross = build_kernel_set(&[0.0, 1.0], &[0.5], &p).unwrap();
        assert_eq!(cross.k.shape(), (2, 1));
        for (i, &s) in [0.0, 1.0].iter().enumerate() {
            let dv = matern_derivatives(s, 0.5, &p).unwrap();
            assert_eq!(cross.k[(i, 0)], matern(s, 0.5, &p).unwrap());
            assert_eq!(cross.pk[(i, 0)], dv.ds);
            assert_eq!(cross.kp[(i, 0)], dv.dt);
            assert_eq!(cross.kpp[(i, 0)], dv.dsdt);
        }
        assert!(build_kernel_set(&[], &[0.0], &p).is_err());
    }
}
