use super::{DdeModel, LagChannel, ObservationTransform, ParamSpec, Partials, TruthFixture};
use crate::kernels::Smoothness;

/// Log-transformed Hutchinson equation
/// `N'(t) = r (1 - exp(N(t - tau)) / (1000 K))`.
#[derive(Clone, Debug)]
pub struct HutchinsonLog {
    components: Vec<String>,
    params: Vec<ParamSpec>,
    lags: Vec<LagChannel>,
}

impl HutchinsonLog {
    pub fn new() -> Self {
        HutchinsonLog {
            components: vec!["N".into()],
            params: vec![
                ParamSpec::rate("r", 0.5, (0.05, 3.0)),
                ParamSpec::rate("K", 1.5, (0.2, 10.0)),
                ParamSpec::delay("tau", 2.0, (0.25, 8.0)),
            ],
            lags: vec![LagChannel {
                component: 0,
                delays: vec![2],
            }],
        }
    }
}

impl Default for HutchinsonLog {
    fn default() -> Self {
        Self::new()
    }
}

impl DdeModel for HutchinsonLog {
    fn name(&self) -> &str {
        "hutchinson-log"
    }

    fn components(&self) -> &[String] {
        &self.components
    }

    fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    fn lags(&self) -> &[LagChannel] {
        &self.lags
    }

    fn drift(&self, _t: f64, _x: &[f64], lagged: &[f64], theta: &[f64], out: &mut [f64]) {
        let (r, k) = (theta[0], theta[1]);
        out[0] = r * (1.0 - lagged[0].exp() / (1000.0 * k));
    }

    fn partials(&self, _t: f64, _x: &[f64], lagged: &[f64], theta: &[f64], p: &mut Partials) {
        let (r, k) = (theta[0], theta[1]);
        let ratio = lagged[0].exp() / (1000.0 * k);
        p.set_dx(0, 0, 0.0);
        p.set_dlag(0, 0, -r * ratio);
        p.set_dtheta(0, 0, 1.0 - ratio);
        p.set_dtheta(0, 1, r * ratio / k);
        p.set_dtheta(0, 2, 0.0);
    }

    fn transform(&self) -> ObservationTransform {
        ObservationTransform::Exp
    }

    fn truth(&self) -> Option<TruthFixture> {
        Some(TruthFixture {
            theta: vec![0.8, 2.0, 3.0],
            x0: vec![3500f64.ln()],
            noise_sd: vec![0.1],
            noise_known: false,
            obs_times: (0..16).map(|i| 2.0 * i as f64).collect(),
            t_end: 30.0,
            nu: Smoothness::Nu25,
            level: 2,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::testing::check_partials;

    #[test]
    fn hand_substitution() {
        let m = HutchinsonLog::new();
        let n0 = 3500f64.ln();
        let mut out = [0.0];
        m.drift(0.0, &[n0], &[n0], &[0.8, 2.0, 3.0], &mut out);
        assert!((out[0] + 0.6).abs() < 1e-12);
    }

    #[test]
    fn drift_increases_with_carrying_capacity() {
        let m = HutchinsonLog::new();
        let mut p = Partials::for_model(&m);
        m.partials(0.0, &[8.0], &[8.0], &[0.8, 2.0, 3.0], &mut p);
        assert!(p.dtheta[1] > 0.0);
    }

    #[test]
    fn truth_fixture() {
        let t = HutchinsonLog::new().truth().unwrap();
        assert_eq!(t.theta, vec![0.8, 2.0, 3.0]);
        assert_eq!(t.x0, vec![3500f64.ln()]);
        assert_eq!(t.noise_sd, vec![0.1]);
        assert_eq!(t.obs_times.len(), 16);
    }

    #[test]
    fn partials_match_finite_differences() {
        check_partials(&HutchinsonLog::new(), 1e-5);
    }
}
