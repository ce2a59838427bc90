use super::{DdeModel, LagChannel, ParamSpec, Partials, TruthFixture};
use crate::kernels::Smoothness;

// Known constants of the induction model.
const K1: f64 = 2.52e4;
const K: f64 = 7200.0;
const HILL: i32 = 2;
const GAMMA0: f64 = 7.25e-7;
const GAMMA_M: f64 = 0.411;
const GAMMA_B: f64 = 8.33e-4;
const ALPHA_A: f64 = 1.76e4;
const K_L: f64 = 0.97;
const BETA_A: f64 = 2.15e4;
const K_A: f64 = 1.95;
const ALPHA_L: f64 = 2880.0;
const L_E: f64 = 0.08;
const K_LE: f64 = 0.26;
const BETA_L1: f64 = 2.65e3;
const K_L1: f64 = 1.81;
const BETA_L2: f64 = 1.76e4;
const GAMMA_L: f64 = 0.0;
const GAMMA_P: f64 = 0.65;

// state and parameter indices
const M: usize = 0;
const B: usize = 1;
const A: usize = 2;
const L: usize = 3;
const P: usize = 4;
const TAU_B: usize = 0;
const TAU_M: usize = 1;
const TAU_P: usize = 2;
const GAMMA_A: usize = 3;
const ALPHA_M: usize = 4;
const ALPHA_B: usize = 5;
const ALPHA_P: usize = 6;
const MU: usize = 7;

/// Five-component lac operon induction model with transcription and
/// translation delays. Lag channels: `A(t - tau_M)`, `M(t - tau_B)` and
/// `M(t - tau_B - tau_P)`.
#[derive(Clone, Debug)]
pub struct LacOperon {
    components: Vec<String>,
    params: Vec<ParamSpec>,
    lags: Vec<LagChannel>,
}

impl LacOperon {
    pub fn new() -> Self {
        LacOperon {
            components: ["M", "B", "A", "L", "P"].iter().map(|s| s.to_string()).collect(),
            params: vec![
                ParamSpec::delay("tau_B", 1.0, (0.1, 5.0)),
                ParamSpec::delay("tau_M", 0.5, (0.02, 2.0)),
                ParamSpec::delay("tau_P", 1.0, (0.1, 4.0)),
                ParamSpec::rate("gamma_A", 0.5, (0.05, 5.0)),
                ParamSpec::rate("alpha_M", 1e-3, (1e-4, 1e-2)),
                ParamSpec::rate("alpha_B", 0.01, (1e-3, 0.1)),
                ParamSpec::rate("alpha_P", 5.0, (0.5, 50.0)),
                ParamSpec::rate("mu", 0.02, (1e-3, 0.2)),
            ],
            lags: vec![
                LagChannel {
                    component: A,
                    delays: vec![TAU_M],
                },
                LagChannel {
                    component: M,
                    delays: vec![TAU_B],
                },
                LagChannel {
                    component: M,
                    delays: vec![TAU_B, TAU_P],
                },
            ],
        }
    }
}

impl Default for LacOperon {
    fn default() -> Self {
        Self::new()
    }
}

/// Hill-type induction factor `(1 + K1 q^n) / (K + K1 q^n)` and its derivative in `q`.
fn induction(q: f64) -> (f64, f64) {
    let qn = q.powi(HILL);
    let den = K + K1 * qn;
    let g = (1.0 + K1 * qn) / den;
    let dg = K1 * HILL as f64 * q.powi(HILL - 1) * (K - 1.0) / (den * den);
    (g, dg)
}

impl DdeModel for LacOperon {
    fn name(&self) -> &str {
        "lac-operon"
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
        let mu = th[MU];
        let (a_lag, m_lag_b, m_lag_p) = (lagged[0], lagged[1], lagged[2]);
        let (g, _) = induction((-mu * th[TAU_M]).exp() * a_lag);
        out[M] = th[ALPHA_M] * g + GAMMA0 - (GAMMA_M + mu) * x[M];
        out[B] = th[ALPHA_B] * (-mu * th[TAU_B]).exp() * m_lag_b - (GAMMA_B + mu) * x[B];
        out[A] = ALPHA_A * x[B] * x[L] / (K_L + x[L]) - BETA_A * x[B] * x[A] / (K_A + x[A]) - (th[GAMMA_A] + mu) * x[A];
        out[L] = ALPHA_L * x[P] * L_E / (K_LE + L_E)
            - BETA_L1 * x[P] * x[L] / (K_L1 + x[L])
            - BETA_L2 * x[B] * x[L] / (K_L + x[L])
            - (GAMMA_L + mu) * x[L];
        out[P] = th[ALPHA_P] * (-mu * (th[TAU_B] + th[TAU_P])).exp() * m_lag_p - (GAMMA_P + mu) * x[P];
    }

    fn partials(&self, _t: f64, x: &[f64], lagged: &[f64], th: &[f64], p: &mut Partials) {
        p.clear();
        let mu = th[MU];
        let (a_lag, m_lag_b, m_lag_p) = (lagged[0], lagged[1], lagged[2]);

        // M equation
        let em = (-mu * th[TAU_M]).exp();
        let q = em * a_lag;
        let (g, dg) = induction(q);
        p.set_dx(M, M, -(GAMMA_M + mu));
        p.set_dlag(M, 0, th[ALPHA_M] * dg * em);
        p.set_dtheta(M, ALPHA_M, g);
        p.set_dtheta(M, TAU_M, -th[ALPHA_M] * dg * mu * q);
        p.set_dtheta(M, MU, -th[ALPHA_M] * dg * th[TAU_M] * q - x[M]);

        // B equation
        let eb = (-mu * th[TAU_B]).exp();
        let drive_b = th[ALPHA_B] * eb * m_lag_b;
        p.set_dx(B, B, -(GAMMA_B + mu));
        p.set_dlag(B, 1, th[ALPHA_B] * eb);
        p.set_dtheta(B, ALPHA_B, eb * m_lag_b);
        p.set_dtheta(B, TAU_B, -mu * drive_b);
        p.set_dtheta(B, MU, -th[TAU_B] * drive_b - x[B]);

        // A equation
        let (a, b, l) = (x[A], x[B], x[L]);
        p.set_dx(A, B, ALPHA_A * l / (K_L + l) - BETA_A * a / (K_A + a));
        p.set_dx(A, L, ALPHA_A * b * K_L / (K_L + l).powi(2));
        p.set_dx(A, A, -BETA_A * b * K_A / (K_A + a).powi(2) - (th[GAMMA_A] + mu));
        p.set_dtheta(A, GAMMA_A, -a);
        p.set_dtheta(A, MU, -a);

        // L equation
        let pp = x[P];
        p.set_dx(L, P, ALPHA_L * L_E / (K_LE + L_E) - BETA_L1 * l / (K_L1 + l));
        p.set_dx(
            L,
            L,
            -BETA_L1 * pp * K_L1 / (K_L1 + l).powi(2) - BETA_L2 * b * K_L / (K_L + l).powi(2) - (GAMMA_L + mu),
        );
        p.set_dx(L, B, -BETA_L2 * l / (K_L + l));
        p.set_dtheta(L, MU, -l);

        // P equation
        let tau_bp = th[TAU_B] + th[TAU_P];
        let ep = (-mu * tau_bp).exp();
        let drive_p = th[ALPHA_P] * ep * m_lag_p;
        p.set_dx(P, P, -(GAMMA_P + mu));
        p.set_dlag(P, 2, th[ALPHA_P] * ep);
        p.set_dtheta(P, ALPHA_P, ep * m_lag_p);
        p.set_dtheta(P, TAU_B, -mu * drive_p);
        p.set_dtheta(P, TAU_P, -mu * drive_p);
        p.set_dtheta(P, MU, -tau_bp * drive_p - pp);
    }

    fn truth(&self) -> Option<TruthFixture> {
        let mut obs_times: Vec<f64> = (0..=8).map(|i| 0.25 * i as f64).collect();
        obs_times.extend((3..=10).map(|i| i as f64));
        obs_times.extend((6..=10).map(|i| 2.0 * i as f64));
        obs_times.push(25.0);
        Some(TruthFixture {
            theta: vec![2.0, 0.1, 0.83, 0.52, 9.97e-4, 0.0166, 10.0, 0.0226],
            x0: vec![6.26e-4, 0.0, 0.038, 0.372, 0.0149],
            noise_sd: vec![3e-5, 1e-5, 0.02, 0.01, 5e-4],
            noise_known: true,
            obs_times,
            t_end: 25.0,
            nu: Smoothness::Nu201,
            level: 0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::testing::check_partials;

    #[test]
    fn truth_fixture_values() {
        let t = LacOperon::new().truth().unwrap();
        assert_eq!(t.theta[TAU_B], 2.0);
        assert_eq!(t.theta[TAU_M], 0.1);
        assert_eq!(t.theta[TAU_P], 0.83);
        assert_eq!(t.theta[GAMMA_A], 0.52);
        assert_eq!(t.theta[MU], 0.0226);
        assert_eq!(t.theta[ALPHA_B], 0.0166);
        assert_eq!(t.theta[ALPHA_P], 10.0);
        assert_eq!(t.obs_times.len(), 23);
        assert_eq!(t.noise_sd, vec![3e-5, 1e-5, 0.02, 0.01, 5e-4]);
        assert_eq!((K1, K, HILL, GAMMA0, GAMMA_M), (2.52e4, 7200.0, 2, 7.25e-7, 0.411));
    }

    #[test]
    fn permease_equation_without_delay_or_decay() {
        let m = LacOperon::new();
        let mut th = m.truth().unwrap().theta;
        th[MU] = 0.0;
        let x = [0.002, 0.001, 0.05, 0.3, 0.02];
        let lag = [x[A], x[M], x[M]];
        let mut out = [0.0; 5];
        m.drift(0.0, &x, &lag, &th, &mut out);
        assert!((out[P] - (th[ALPHA_P] * x[M] - GAMMA_P * x[P])).abs() < 1e-15);
    }

    #[test]
    fn permease_delay_enters_only_through_the_sum() {
        let m = LacOperon::new();
        let mut pt = Partials::for_model(&m);
        let th = m.truth().unwrap().theta;
        m.partials(0.0, &[1e-3, 1e-3, 0.04, 0.3, 0.02], &[0.04, 1e-3, 1e-3], &th, &mut pt);
        let row = |i: usize| &pt.dtheta[i * 8..(i + 1) * 8];
        assert_eq!(row(P)[TAU_B], row(P)[TAU_P]);
        assert_eq!(row(B)[TAU_P], 0.0);
        assert_eq!(m.lags()[2].delays, vec![TAU_B, TAU_P]);
    }

    #[test]
    fn partials_match_finite_differences() {
        check_partials(&LacOperon::new(), 1e-5);
    }
}
