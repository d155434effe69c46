//! Data generators for the four simulation scenarios and their true
//! cumulative hazards and cumulative incidence functions.
//!
//! Cause 1 has hazard `exp(-0.5 z1)`. Cause 2 has the Gompertz hazard
//! `exp(-0.5 (z2 + 1) + 0.2 t)` in scenario 1 and the Weibull hazard
//! `eta lambda^eta exp(-0.5 z2) t^(eta - 1)` with `lambda = 0.5` and
//! `eta = 0.5, 2, 0.1` in scenarios 2, 3, 4. Latent failure times are
//! independent given covariates, censoring is exponential with rate 0.4 plus
//! administrative censoring at `tau = 2`, and a failure's cause is observed
//! with probability `expit(theta0 + theta1 T + theta2 z1 + theta3 z2)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SubjectRecord};
use crate::error::{Error, Result};

const BETA1: f64 = -0.5;
const GOMPERTZ_BETA: f64 = 0.5;
const GOMPERTZ_NU: f64 = 0.2;
const WEIBULL_LAMBDA: f64 = 0.5;
const WEIBULL_BETA: f64 = -0.5;

/// The three missingness mechanisms, from lightest to heaviest.
pub const THETAS: [[f64; 4]; 3] = [[0.7, 1.0, -1.0, 1.0], [-0.2, 1.0, -1.0, 1.0], [-0.8, 1.0, -1.0, 1.0]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: u8,
    pub n: usize,
    pub theta: [f64; 4],
    pub replicates: usize,
    pub seed: u64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_censoring_rate")]
    pub censoring_rate: f64,
}

fn default_tau() -> f64 {
    2.0
}

fn default_censoring_rate() -> f64 {
    0.4
}

impl ScenarioConfig {
    pub fn new(scenario: u8, n: usize, theta: [f64; 4]) -> Result<Self> {
        let c = Self { scenario, n, theta, replicates: 1, seed: 0, tau: 2.0, censoring_rate: 0.4 };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.scenario) {
            return Err(Error::InvalidArgument(format!("scenario must be 1..4, got {}", self.scenario)));
        }
        if self.n == 0 {
            return Err(Error::InvalidArgument("n must be positive".into()));
        }
        if self.theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("theta must be finite".into()));
        }
        if !(self.tau > 0.0) || !(self.censoring_rate >= 0.0) {
            return Err(Error::InvalidArgument("tau must be positive and the censoring rate nonnegative".into()));
        }
        Ok(())
    }

    /// Weibull shape of cause 2, or `None` for the Gompertz scenario.
    pub fn weibull_shape(&self) -> Option<f64> {
        match self.scenario {
            2 => Some(0.5),
            3 => Some(2.0),
            4 => Some(0.1),
            _ => None,
        }
    }

    /// True coefficients `(z1, z2)` of cause `j` (zero-based).
    pub fn true_beta(&self, j: usize) -> [f64; 2] {
        match (j, self.scenario) {
            (0, _) => [BETA1, 0.0],
            (_, 1) => [0.0, -GOMPERTZ_BETA],
            _ => [0.0, WEIBULL_BETA],
        }
    }

    /// True baseline hazard of cause `j` at `t`.
    pub fn baseline_hazard(&self, j: usize, t: f64) -> f64 {
        match (j, self.weibull_shape()) {
            (0, _) => 1.0,
            (_, None) => (-GOMPERTZ_BETA + GOMPERTZ_NU * t).exp(),
            (_, Some(eta)) => eta * WEIBULL_LAMBDA.powf(eta) * t.powf(eta - 1.0),
        }
    }

    /// True cumulative baseline hazard of cause `j` at `t`.
    pub fn baseline_cumhaz(&self, j: usize, t: f64) -> f64 {
        match (j, self.weibull_shape()) {
            (0, _) => t,
            (_, None) => (-GOMPERTZ_BETA).exp() * (GOMPERTZ_NU * t).exp_m1() / GOMPERTZ_NU,
            (_, Some(eta)) => (WEIBULL_LAMBDA * t).powf(eta),
        }
    }

    /// True cumulative hazard of cause `j` at covariate `z0`.
    pub fn cumhaz(&self, j: usize, t: f64, z0: &[f64]) -> f64 {
        let b = self.true_beta(j);
        self.baseline_cumhaz(j, t) * (b[0] * z0[0] + b[1] * z0[1]).exp()
    }

    /// True cumulative incidence of cause `j` at `(t, z0)`, by Gauss-Legendre
    /// quadrature after the substitution `s = t v^m` that removes the
    /// Weibull singularity at zero.
    pub fn cif(&self, j: usize, t: f64, z0: &[f64]) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let m = self.weibull_shape().map_or(1.0, |eta| (1.0 / eta).max(1.0));
        let bj = self.true_beta(j);
        let rj = (bj[0] * z0[0] + bj[1] * z0[1]).exp();
        let integrand = |v: f64| {
            let s = t * v.powf(m);
            let ds = t * m * v.powf(m - 1.0);
            let total = self.cumhaz(0, s, z0) + self.cumhaz(1, s, z0);
            // hazard times Jacobian, written to stay finite as v -> 0
            let hj = match (j, self.weibull_shape()) {
                (1, Some(eta)) => {
                    eta * WEIBULL_LAMBDA.powf(eta) * t.powf(eta) * m * v.powf(m * eta - 1.0)
                }
                _ => self.baseline_hazard(j, s) * ds,
            };
            rj * hj * (-total).exp()
        };
        gauss_legendre(integrand, 0.0, 1.0, 200)
    }

    /// Logit of `pi_1` implied by the hazards, in the working form
    /// `(1, t, z1, z2)` for scenario 1 and `(1, log t, z1, z2)` otherwise.
    pub fn implied_logit(&self) -> [f64; 4] {
        match self.weibull_shape() {
            None => [GOMPERTZ_BETA, -GOMPERTZ_NU, BETA1, GOMPERTZ_BETA],
            Some(eta) => [-(eta * WEIBULL_LAMBDA.powf(eta)).ln(), 1.0 - eta, BETA1, -WEIBULL_BETA],
        }
    }

    /// Draws the latent cause-2 time given `z2` from a unit exponential `e`.
    fn cause2_time(&self, z2: f64, e: f64) -> f64 {
        match self.weibull_shape() {
            None => {
                let a = -GOMPERTZ_BETA * (z2 + 1.0);
                (GOMPERTZ_NU * e / a.exp()).ln_1p() / GOMPERTZ_NU
            }
            Some(eta) => (e / (WEIBULL_LAMBDA.powf(eta) * (WEIBULL_BETA * z2).exp())).powf(1.0 / eta),
        }
    }
}

/// Five-point Gauss-Legendre on `panels` equal panels of `[a, b]`.
fn gauss_legendre(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    const X: [f64; 5] = [0.0, -0.538_469_310_105_683, 0.538_469_310_105_683, -0.906_179_845_938_664, 0.906_179_845_938_664];
    const W: [f64; 5] = [
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
        0.236_926_885_056_189_1,
    ];
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|p| {
            let mid = a + (p as f64 + 0.5) * h;
            X.iter().zip(&W).map(|(x, w)| w * f(mid + 0.5 * h * x)).sum::<f64>() * 0.5 * h
        })
        .sum()
}

/// Generator for replicate `index`: ChaCha8 seeded with `config.seed`, on stream `index`.
pub fn replicate_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// One subject's full (partly unobserved) outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentSubject {
    pub z: [f64; 2],
    pub failure_time: f64,
    pub cause: usize,
    pub censoring_time: f64,
}

fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Dataset for replicate `index` of `config`.
pub fn generate_dataset(config: &ScenarioConfig, index: usize) -> Result<Dataset> {
    generate_with_causes(config, index).map(|(ds, _)| ds)
}

/// Dataset for replicate `index` together with every failure's true cause
/// (`None` for censored subjects).
pub fn generate_with_causes(config: &ScenarioConfig, index: usize) -> Result<(Dataset, Vec<Option<usize>>)> {
    config.validate()?;
    let mut rng = replicate_rng(config.seed, index);
    let th = config.theta;
    let mut causes = Vec::with_capacity(config.n);
    let records = (0..config.n)
        .map(|_| {
            let s = draw_subject(config, &mut rng);
            let follow = s.censoring_time.min(config.tau);
            if s.failure_time <= follow {
                let t = s.failure_time;
                let p_obs = expit(th[0] + th[1] * t + th[2] * s.z[0] + th[3] * s.z[1]);
                let observed = rng.random_bool(p_obs);
                causes.push(Some(s.cause));
                SubjectRecord::failure(t, observed.then_some(s.cause), s.z.to_vec(), vec![])
            } else {
                causes.push(None);
                SubjectRecord::censored(follow, s.z.to_vec(), vec![])
            }
        })
        .collect();
    let ds = Dataset::new(records, 2, vec!["z1".into(), "z2".into()], vec![], Some(config.tau))?;
    Ok((ds, causes))
}

/// Covariates, latent failure time and cause, and censoring time of one subject.
pub fn draw_subject(config: &ScenarioConfig, rng: &mut impl Rng) -> LatentSubject {
    let z1: f64 = rng.random();
    let z2 = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
    let e1: f64 = Exp1.sample(rng);
    let e2: f64 = Exp1.sample(rng);
    let ec: f64 = Exp1.sample(rng);
    let t1 = e1 / (BETA1 * z1).exp();
    let t2 = config.cause2_time(z2, e2);
    let censoring_time = if config.censoring_rate > 0.0 { ec / config.censoring_rate } else { f64::INFINITY };
    let (failure_time, cause) = if t1 <= t2 { (t1, 0) } else { (t2, 1) };
    LatentSubject { z: [z1, z2], failure_time, cause, censoring_time }
}

/// Realized censoring, cause split and missingness of a dataset, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RealizedRates {
    pub censored_pct: f64,
    /// Cause-1 share among failures (true causes when known, else complete cases).
    pub cause1_pct: f64,
    /// Missing causes among failures.
    pub missing_pct: f64,
}

pub fn realized_rates(ds: &Dataset, true_causes: Option<&[Option<usize>]>) -> RealizedRates {
    let n = ds.len() as f64;
    let fails = ds.n_failures() as f64;
    let recs = ds.records();
    let (c1, denom) = match true_causes {
        Some(tc) => (tc.iter().filter(|c| **c == Some(0)).count() as f64, fails),
        None => (
            recs.iter().filter(|r| r.cause == Some(0)).count() as f64,
            recs.iter().filter(|r| r.is_complete_failure()).count() as f64,
        ),
    };
    let missing = recs.iter().filter(|r| r.is_missing_cause()).count() as f64;
    let pct = |a: f64, b: f64| if b > 0.0 { 100.0 * a / b } else { f64::NAN };
    RealizedRates { censored_pct: pct(n - fails, n), cause1_pct: pct(c1, denom), missing_pct: pct(missing, fails) }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ks_distance(mut sample: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
        sample.sort_by(|a, b| a.total_cmp(b));
        let n = sample.len() as f64;
        sample
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn invalid_scenario_rejected() {
        assert!(ScenarioConfig::new(0, 10, THETAS[0]).is_err());
        assert!(ScenarioConfig::new(5, 10, THETAS[0]).is_err());
        assert!(ScenarioConfig::new(3, 0, THETAS[0]).is_err());
    }

    #[test]
    fn replicates_are_reproducible_and_distinct() {
        let mut c = ScenarioConfig::new(1, 50, THETAS[1]).unwrap();
        c.seed = 17;
        let a = generate_dataset(&c, 3).unwrap();
        let b = generate_dataset(&c, 3).unwrap();
        assert_eq!(a.records(), b.records());
        assert_ne!(a.records(), generate_dataset(&c, 4).unwrap().records());
    }

    #[test]
    fn latent_times_match_closed_form_cdfs() {
        // conditional on z2 = 1 for cause 2, z1 integrated for cause 1
        for scenario in 1..=4u8 {
            let c = ScenarioConfig::new(scenario, 1, THETAS[0]).unwrap();
            let mut rng = replicate_rng(5, scenario as usize);
            let mut t1 = Vec::new();
            let mut t2 = Vec::new();
            while t2.len() < 100_000 {
                let z1: f64 = rng.random();
                let e1: f64 = Exp1.sample(&mut rng);
                let e2: f64 = Exp1.sample(&mut rng);
                if t1.len() < 100_000 {
                    t1.push((z1, e1 / (BETA1 * z1).exp()));
                }
                t2.push(c.cause2_time(1.0, e2));
            }
            // cause 1 given z1 is exponential: use the probability integral transform
            let u: Vec<f64> = t1.iter().map(|&(z1, t)| 1.0 - (-t * (BETA1 * z1).exp()).exp()).collect();
            assert!(ks_distance(u, |x| x.clamp(0.0, 1.0)) < 0.01);
            let cdf2 = |t: f64| 1.0 - (-c.cumhaz(1, t, &[0.0, 1.0])).exp();
            let d2 = ks_distance(t2, cdf2);
            assert!(d2 < 0.01, "scenario {scenario}: KS {d2}");
        }
    }

    #[test]
    fn cif_quadrature_matches_closed_forms() {
        // the CIFs must add up to 1 - S(t), which is available in closed form
        for scenario in 1..=4u8 {
            let c = ScenarioConfig::new(scenario, 1, THETAS[0]).unwrap();
            for &t in &[0.05, 0.5, 1.0, 2.0] {
                for z in [[0.0, 0.0], [0.5, 1.0], [1.0, 1.0]] {
                    let sum = c.cif(0, t, &z) + c.cif(1, t, &z);
                    let surv = (-(c.cumhaz(0, t, &z) + c.cumhaz(1, t, &z))).exp();
                    assert!((sum - (1.0 - surv)).abs() < 1e-9, "scenario {scenario} t {t}: {sum} vs {}", 1.0 - surv);
                }
            }
        }
        // near zero the cause-1 CIF is ~ t e^{-0.5 z1}
        let c = ScenarioConfig::new(1, 1, THETAS[0]).unwrap();
        assert!((c.cif(0, 1e-6, &[1.0, 0.0]) / 1e-6 - (-0.5f64).exp()).abs() < 1e-5);
    }

    #[test]
    fn admin_censoring_and_record_shape() {
        let mut c = ScenarioConfig::new(3, 2000, THETAS[2]).unwrap();
        c.seed = 1;
        let ds = generate_dataset(&c, 0).unwrap();
        assert!(ds.records().iter().all(|r| r.time <= 2.0 && r.covariates.len() == 2));
        assert!(ds.records().iter().any(|r| r.is_missing_cause()));
        let r = realized_rates(&ds, None);
        assert!(r.censored_pct > 0.0 && r.missing_pct > 0.0 && r.cause1_pct > 0.0);
        let (again, causes) = generate_with_causes(&c, 0).unwrap();
        assert_eq!(again.records(), ds.records());
        for (rec, tc) in ds.records().iter().zip(&causes) {
            assert_eq!(rec.event, tc.is_some());
            if let Some(c) = rec.cause {
                assert_eq!(Some(c), *tc);
            }
        }
    }
}
