use super::{DdeModel, LagChannel, ParamSpec, Partials, Prior, TruthFixture};
use crate::kernels::Smoothness;

/// Delayed SIRD model on population proportions. Only `(I, R, D)` are
/// modeled; `S = 1 - I - R - D` is substituted into the infection term.
#[derive(Clone, Debug)]
pub struct SirdDelayed {
    components: Vec<String>,
    params: Vec<ParamSpec>,
    lags: Vec<LagChannel>,
}

impl SirdDelayed {
    pub fn new() -> Self {
        let mut h = ParamSpec::delay("h", 3.5, (0.5, 7.0));
        h.prior = Prior::Normal { mean: 3.5, sd: 1.0 };
        SirdDelayed {
            components: vec!["I".into(), "R".into(), "D".into()],
            params: vec![
                ParamSpec::rate("beta", 0.05, (1e-3, 0.5)),
                h,
                ParamSpec::rate("mu_d", 1e-3, (1e-5, 0.05)),
                ParamSpec::rate("lambda", 0.05, (1e-3, 0.5)),
            ],
            lags: vec![LagChannel {
                component: 0,
                delays: vec![1],
            }],
        }
    }

    /// Susceptible fraction implied by a modeled state.
    pub fn susceptible(x: &[f64]) -> f64 {
        1.0 - x[0] - x[1] - x[2]
    }
}

impl Default for SirdDelayed {
    fn default() -> Self {
        Self::new()
    }
}

impl DdeModel for SirdDelayed {
    fn name(&self) -> &str {
        "sird-delayed"
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

    fn drift(&self, _t: f64, x: &[f64], lagged: &[f64], th: &[f64], out: &mut [f64]) {
        let (beta, mu_d, lambda) = (th[0], th[2], th[3]);
        let s = Self::susceptible(x);
        out[0] = beta * s * lagged[0] - (mu_d + lambda) * x[0];
        out[1] = lambda * x[0];
        out[2] = mu_d * x[0];
    }

    fn partials(&self, _t: f64, x: &[f64], lagged: &[f64], th: &[f64], p: &mut Partials) {
        p.clear();
        let (beta, mu_d, lambda) = (th[0], th[2], th[3]);
        let s = Self::susceptible(x);
        let il = lagged[0];
        p.set_dx(0, 0, -beta * il - (mu_d + lambda));
        p.set_dx(0, 1, -beta * il);
        p.set_dx(0, 2, -beta * il);
        p.set_dlag(0, 0, beta * s);
        p.set_dtheta(0, 0, s * il);
        p.set_dtheta(0, 2, -x[0]);
        p.set_dtheta(0, 3, -x[0]);
        p.set_dx(1, 0, lambda);
        p.set_dtheta(1, 3, x[0]);
        p.set_dx(2, 0, mu_d);
        p.set_dtheta(2, 2, x[0]);
    }

    fn truth(&self) -> Option<TruthFixture> {
        Some(TruthFixture {
            theta: vec![0.0254, 3.0, 3.3e-4, 0.0751],
            x0: vec![0.0145, 0.0053, 7.485e-5],
            noise_sd: vec![3.473e-4, 3.4756e-4, 2.1557e-7],
            noise_known: false,
            obs_times: (0..30).map(|i| i as f64).collect(),
            t_end: 29.0,
            nu: Smoothness::Nu201,
            level: 1,
        })
    }
}
