//! Monte Carlo study harness: repeated generation, fitting and inference,
//! aggregated into bias / MCSD / ASE / coverage / MSE tables.

use rand::RngCore;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::analysis::{analyze, Analysis};
use crate::bands::{band_cif, band_cumhaz, Band, BandRequest, BandTarget, BandWeight, DomainRule};
use crate::cif::loglog_interval;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::grammar::TermGrammar;
use crate::influence::{cif_influence, InfluenceProcess};
use crate::simulation::{generate_with_causes, realized_rates, replicate_rng, RealizedRates, ScenarioConfig};

/// Band settings for the coverage part of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyBands {
    pub b: usize,
    pub weight: BandWeight,
    pub c1: f64,
    pub c2: f64,
}

impl Default for StudyBands {
    fn default() -> Self {
        Self { b: 1000, weight: BandWeight::EqualPrecision, c1: 0.1, c2: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub scenario: ScenarioConfig,
    /// Working cause-probability model.
    #[serde(default = "default_grammar")]
    pub grammar: Vec<String>,
    /// Times at which `Lambda_1` and `F_1` are evaluated.
    #[serde(default = "default_times")]
    pub time_points: Vec<f64>,
    #[serde(default = "default_z0")]
    pub z0: Vec<Vec<f64>>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Simultaneous band coverage for `Lambda_1` and `F_1(.; z0[0])`.
    #[serde(default)]
    pub bands: Option<StudyBands>,
    /// Keep per-replicate results in the summary.
    #[serde(default)]
    pub keep_replicates: bool,
}

fn default_grammar() -> Vec<String> {
    ["1", "t", "z1", "z2"].map(String::from).to_vec()
}

fn default_times() -> Vec<f64> {
    vec![0.2, 0.5, 1.0, 1.5]
}

fn default_z0() -> Vec<Vec<f64>> {
    vec![vec![0.5, 1.0]]
}

fn default_alpha() -> f64 {
    0.05
}

impl StudyConfig {
    pub fn new(scenario: ScenarioConfig) -> Self {
        Self {
            scenario,
            grammar: default_grammar(),
            time_points: default_times(),
            z0: default_z0(),
            alpha: default_alpha(),
            bands: None,
            keep_replicates: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.scenario.replicates == 0 {
            return Err(Error::InvalidArgument("replicates must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.z0.iter().any(|z| z.len() != 2) {
            return Err(Error::DimensionMismatch { expected: 2, got: self.z0.iter().map(Vec::len).find(|&l| l != 2).unwrap() });
        }
        if let Some(b) = &self.bands {
            if self.z0.is_empty() {
                return Err(Error::InvalidArgument("band coverage needs at least one z0".into()));
            }
            BandRequest { b: b.b, weight: b.weight, domain: DomainRule::QuantileClip { c1: b.c1, c2: b.c2 }, ..BandRequest::new(BandTarget::Cumhaz, 0) }
                .validate()?;
        }
        Ok(())
    }

    /// Names and true values of the tracked estimands, in reporting order.
    pub fn estimands(&self) -> Vec<(String, f64)> {
        let sc = &self.scenario;
        let mut out = Vec::new();
        for j in 0..2 {
            for (m, name) in ["z1", "z2"].iter().enumerate() {
                out.push((format!("beta{}_{name}", j + 1), sc.true_beta(j)[m]));
            }
        }
        for &t in &self.time_points {
            out.push((format!("Lambda1({t})"), sc.baseline_cumhaz(0, t)));
        }
        for z in &self.z0 {
            for &t in &self.time_points {
                out.push((format!("F1({t};{},{})", z[0], z[1]), sc.cif(0, t, z)));
            }
        }
        out
    }

    fn band_names(&self) -> Vec<String> {
        match (&self.bands, self.z0.first()) {
            (Some(_), Some(z)) => vec!["Lambda1".into(), format!("F1(.;{},{})", z[0], z[1])],
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateResult {
    pub index: usize,
    pub error: Option<String>,
    pub estimates: Vec<f64>,
    pub se: Vec<f64>,
    pub covered: Vec<bool>,
    pub band_covered: Vec<bool>,
    pub rates: RealizedRates,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimandSummary {
    pub name: String,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    /// Sample SD over replicates; absent with fewer than two replicates.
    pub mcsd: Option<f64>,
    pub ase: f64,
    pub cp: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandSummary {
    pub name: String,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudySummary {
    pub scenario: u8,
    pub n: usize,
    pub theta: [f64; 4],
    pub seed: u64,
    pub replicates: usize,
    pub failed: usize,
    pub estimands: Vec<EstimandSummary>,
    pub bands: Vec<BandSummary>,
    pub censored_pct: f64,
    pub cause1_pct: f64,
    pub missing_pct: f64,
    pub per_replicate: Option<Vec<ReplicateResult>>,
}

impl StudySummary {
    pub fn estimand(&self, name: &str) -> Option<&EstimandSummary> {
        self.estimands.iter().find(|e| e.name == name)
    }
}

/// Seed of the multiplier draws for the bands of replicate `index`.
pub fn band_seed(seed: u64, index: usize) -> u64 {
    replicate_rng(seed ^ 0x9e37_79b9_7f4a_7c15, index).next_u64()
}

/// Does a step band cover an increasing continuous curve over its whole domain?
/// On `[t_g, t_{g+1})` the band is constant while the truth runs from
/// `truth(t_g)` up to `truth(t_{g+1})`.
pub fn band_covers(band: &Band, truth: impl Fn(f64) -> f64) -> bool {
    let m = band.grid.len();
    (0..m).all(|g| {
        let lo_ok = band.lower[g] <= truth(band.grid[g]);
        let right = if g + 1 < m { band.grid[g + 1] } else { band.grid[g] };
        lo_ok && truth(right) <= band.upper[g]
    })
}

fn log_interval(est: f64, se: f64, z: f64) -> (f64, f64) {
    if est > 0.0 {
        let d = z * se / est;
        (est * (-d).exp(), est * d.exp())
    } else {
        (est - z * se, est + z * se)
    }
}

fn step_at(grid: &[f64], values: &[f64], t: f64) -> (f64, Option<usize>) {
    match grid.partition_point(|&g| g <= t) {
        0 => (0.0, None),
        m => (values[m - 1], Some(m - 1)),
    }
}

fn replicate(config: &StudyConfig, grammar: &TermGrammar, index: usize, exec: Exec) -> ReplicateResult {
    let (ds, causes) = match generate_with_causes(&config.scenario, index) {
        Ok(v) => v,
        Err(e) => {
            return ReplicateResult {
                index,
                error: Some(e.to_string()),
                estimates: vec![],
                se: vec![],
                covered: vec![],
                band_covered: vec![],
                rates: RealizedRates { censored_pct: f64::NAN, cause1_pct: f64::NAN, missing_pct: f64::NAN },
            }
        }
    };
    let rates = realized_rates(&ds, Some(&causes));
    match replicate_estimates(config, grammar, &ds, index, exec) {
        Ok((estimates, se, covered, band_covered)) => {
            ReplicateResult { index, error: None, estimates, se, covered, band_covered, rates }
        }
        Err(e) => ReplicateResult {
            index,
            error: Some(e.to_string()),
            estimates: vec![],
            se: vec![],
            covered: vec![],
            band_covered: vec![],
            rates,
        },
    }
}

type Estimates = (Vec<f64>, Vec<f64>, Vec<bool>, Vec<bool>);

fn replicate_estimates(config: &StudyConfig, grammar: &TermGrammar, ds: &Dataset, index: usize, exec: Exec) -> Result<Estimates> {
    let an: Analysis = analyze(ds, grammar, Exec::Sequential)?;
    let truths = config.estimands();
    let z = Normal::standard().inverse_cdf(1.0 - config.alpha / 2.0);
    let mut est = Vec::with_capacity(truths.len());
    let mut se = Vec::with_capacity(truths.len());
    let mut covered = Vec::with_capacity(truths.len());
    let mut push = |e: f64, s: f64, (lo, hi): (f64, f64), truth: f64| {
        est.push(e);
        se.push(s);
        covered.push(lo <= truth && truth <= hi);
    };
    let mut k = 0;
    for j in 0..2 {
        let s = an.beta_se(j);
        for m in 0..2 {
            let b = an.fit.cause(j).beta[m];
            push(b, s[m], (b - z * s[m], b + z * s[m]), truths[k].1);
            k += 1;
        }
    }
    let ch = &an.influence.cumhaz[0];
    let ch_se = ch.se();
    for &t in &config.time_points {
        let (e, g) = step_at(ch.grid(), ch.lambda(), t);
        let s = g.map_or(0.0, |g| ch_se[g]);
        push(e, s, log_interval(e, s, z), truths[k].1);
        k += 1;
    }
    let mut cifs = Vec::new();
    for z0 in &config.z0 {
        let ci = cif_influence(&an.influence, z0)?;
        let rn = (ci.n() as f64).sqrt();
        for &t in &config.time_points {
            let (e, g) = step_at(ci.grid(), ci.cif(0), t);
            let s = g.map_or(0.0, |g| ci.sigma_cif(0)[g] / rn);
            let iv = loglog_interval(e, s, config.alpha).unwrap_or((e - z * s, e + z * s));
            push(e, s, iv, truths[k].1);
            k += 1;
        }
        cifs.push(ci);
    }
    let mut band_covered = Vec::new();
    if let (Some(b), Some(ci)) = (&config.bands, cifs.first()) {
        let seed = band_seed(config.scenario.seed, index);
        let base = BandRequest {
            alpha: config.alpha,
            weight: b.weight,
            b: b.b,
            domain: DomainRule::QuantileClip { c1: b.c1, c2: b.c2 },
            seed,
            ..BandRequest::new(BandTarget::Cumhaz, 0)
        };
        let sc = &config.scenario;
        let lam = band_cumhaz(&an.influence, &base, exec)?;
        band_covered.push(band_covers(&lam, |t| sc.baseline_cumhaz(0, t)));
        let z0 = ci.z0().to_vec();
        let req = BandRequest { target: BandTarget::Cif(z0.clone()), ..base };
        let fb = band_cif(ci, &req, exec)?;
        band_covered.push(band_covers(&fb, |t| sc.cif(0, t, &z0)));
    }
    Ok((est, se, covered, band_covered))
}

/// Runs `config.scenario.replicates` replicates and aggregates them.
/// Fails with [`Error::StudyAborted`] when more than 2% of replicates fail.
pub fn run_study(config: &StudyConfig, exec: Exec) -> Result<StudySummary> {
    config.validate()?;
    let grammar = TermGrammar::parse(&config.grammar, &["z1".to_string(), "z2".to_string()], &[])?;
    let reps = config.scenario.replicates;
    let results = exec.map(reps, |i| replicate(config, &grammar, i, Exec::Sequential));
    let failed = results.iter().filter(|r| r.error.is_some()).count();
    if failed as f64 > 0.02 * reps as f64 {
        return Err(Error::StudyAborted { failed, total: reps });
    }
    let ok: Vec<&ReplicateResult> = results.iter().filter(|r| r.error.is_none()).collect();
    let r = ok.len() as f64;
    let estimands = config
        .estimands()
        .into_iter()
        .enumerate()
        .map(|(k, (name, truth))| {
            let mean = ok.iter().map(|x| x.estimates[k]).sum::<f64>() / r;
            let mcsd = (ok.len() >= 2)
                .then(|| (ok.iter().map(|x| (x.estimates[k] - mean).powi(2)).sum::<f64>() / (r - 1.0)).sqrt());
            EstimandSummary {
                name,
                truth,
                mean,
                bias: mean - truth,
                mcsd,
                ase: ok.iter().map(|x| x.se[k]).sum::<f64>() / r,
                cp: ok.iter().filter(|x| x.covered[k]).count() as f64 / r,
                mse: ok.iter().map(|x| (x.estimates[k] - truth).powi(2)).sum::<f64>() / r,
            }
        })
        .collect();
    let bands = config
        .band_names()
        .into_iter()
        .enumerate()
        .map(|(k, name)| BandSummary { name, coverage: ok.iter().filter(|x| x.band_covered[k]).count() as f64 / r })
        .collect();
    let all = results.iter().filter(|x| !x.rates.censored_pct.is_nan());
    let cnt = all.clone().count() as f64;
    let avg = |f: fn(&RealizedRates) -> f64| all.clone().map(|x| f(&x.rates)).sum::<f64>() / cnt;
    Ok(StudySummary {
        scenario: config.scenario.scenario,
        n: config.scenario.n,
        theta: config.scenario.theta,
        seed: config.scenario.seed,
        replicates: reps,
        failed,
        estimands,
        bands,
        censored_pct: avg(|r| r.censored_pct),
        cause1_pct: avg(|r| r.cause1_pct),
        missing_pct: avg(|r| r.missing_pct),
        per_replicate: config.keep_replicates.then_some(results),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::THETAS;

    fn small(reps: usize) -> StudyConfig {
        let mut sc = ScenarioConfig::new(1, 200, THETAS[0]).unwrap();
        sc.replicates = reps;
        sc.seed = 42;
        StudyConfig::new(sc)
    }

    #[test]
    fn single_replicate_has_no_mcsd() {
        let s = run_study(&small(1), Exec::Sequential).unwrap();
        let b = s.estimand("beta1_z1").unwrap();
        assert!(b.mcsd.is_none());
        assert!((b.bias - (b.mean - (-0.5))).abs() < 1e-15);
        assert_eq!(s.failed, 0);
    }

    #[test]
    fn aggregation_identities_and_determinism() {
        let mut cfg = small(12);
        cfg.keep_replicates = true;
        cfg.bands = Some(StudyBands { b: 200, ..StudyBands::default() });
        let a = run_study(&cfg, Exec::Sequential).unwrap();
        let b = run_study(&cfg, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        let r = a.replicates as f64;
        for e in &a.estimands {
            let sd = e.mcsd.unwrap();
            // MSE = Bias^2 + (R - 1)/R MCSD^2
            assert!((e.mse - (e.bias * e.bias + (r - 1.0) / r * sd * sd)).abs() < 1e-12, "{e:?}");
            assert!((0.0..=1.0).contains(&e.cp));
        }
        assert_eq!(a.bands.len(), 2);
        assert!(a.missing_pct > 0.0 && a.censored_pct > 0.0);
    }

    #[test]
    fn band_cover_checks_right_ends() {
        let band = Band {
            grid: vec![1.0, 2.0],
            estimate: vec![1.0, 2.0],
            lower: vec![0.5, 1.5],
            upper: vec![1.8, 2.5],
            c_alpha: 1.0,
            b_used: 100,
            domain: (1.0, 2.0),
            weight: BandWeight::EqualPrecision,
            alpha: 0.05,
            seed: 0,
            degenerate: false,
        };
        assert!(band_covers(&band, |t| 0.9 * t));
        // truth reaches 2.0 just before t = 2 while the upper limit there is 1.8
        assert!(!band_covers(&band, |t| t));
    }
}
