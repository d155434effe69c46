//! Simultaneous confidence bands by multiplier resampling of influence
//! functions.
//!
//! For replicate `b` the multipliers `xi_1..xi_n` are standard normal draws
//! from a ChaCha8 generator seeded with the request seed and switched to
//! stream `b`, so a band depends only on `(seed, B)` and never on how the
//! replicates are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::influence::{covariate_cumhaz_influence, CifInfluence, InfluenceProcess, InfluenceSet};

/// Weight function of the band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandWeight {
    /// `q = theta / sigma` (after the transform's derivative).
    #[serde(alias = "ep")]
    EqualPrecision,
    /// `q = theta / (1 + sigma^2)`.
    #[serde(alias = "hw")]
    HallWellner,
}

impl BandWeight {
    pub fn label(self) -> &'static str {
        match self {
            BandWeight::EqualPrecision => "ep",
            BandWeight::HallWellner => "hw",
        }
    }

    // |q(t) g'(theta(t))| as a function of sigma(t)
    fn scale(self, sigma: f64) -> f64 {
        match self {
            BandWeight::EqualPrecision => 1.0 / sigma,
            BandWeight::HallWellner => 1.0 / (1.0 + sigma * sigma),
        }
    }
}

/// How the time range of the band is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainRule {
    /// From the first to the last jump.
    EventRange,
    /// `[t1, t2]` with `sigma^2 / (1 + sigma^2)` nearest to `c1` and `c2`.
    QuantileClip { c1: f64, c2: f64 },
}

impl Default for DomainRule {
    fn default() -> Self {
        DomainRule::QuantileClip { c1: 0.1, c2: 0.9 }
    }
}

/// Which estimator the band is for.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BandTarget {
    Cumhaz,
    CumhazAtZ0(Vec<f64>),
    Cif(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandRequest {
    pub target: BandTarget,
    /// Zero-based cause index.
    pub cause: usize,
    pub alpha: f64,
    pub weight: BandWeight,
    pub b: usize,
    pub domain: DomainRule,
    pub seed: u64,
}

impl BandRequest {
    pub fn new(target: BandTarget, cause: usize) -> Self {
        Self {
            target,
            cause,
            alpha: 0.05,
            weight: BandWeight::EqualPrecision,
            b: 1000,
            domain: DomainRule::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.b < 100 {
            return Err(Error::InvalidArgument(format!("B must be at least 100, got {}", self.b)));
        }
        if let DomainRule::QuantileClip { c1, c2 } = self.domain {
            if !(0.0 < c1 && c1 < c2 && c2 < 1.0) {
                return Err(Error::InvalidArgument(format!("clip needs 0 < c1 < c2 < 1, got {c1}, {c2}")));
            }
        }
        Ok(())
    }
}

/// A simultaneous band on the grid points of its domain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Band {
    pub grid: Vec<f64>,
    pub estimate: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub c_alpha: f64,
    pub b_used: usize,
    pub domain: (f64, f64),
    pub weight: BandWeight,
    pub alpha: f64,
    pub seed: u64,
    /// All multiplier suprema were zero.
    pub degenerate: bool,
}

impl Band {
    /// Band limits at `t`, if `t` lies within the domain.
    pub fn at(&self, t: f64) -> Option<(f64, f64)> {
        if t < self.domain.0 || t > self.domain.1 {
            return None;
        }
        let m = self.grid.partition_point(|&g| g <= t).checked_sub(1)?;
        Some((self.lower[m], self.upper[m]))
    }
}

/// The `n` standard normal multipliers of replicate `replicate`.
pub fn multiplier_draws(seed: u64, replicate: usize, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// `sup_t |scale(t) W_b(t)|` for `b = 0..B`, with
/// `W_b(t) = n^{-1/2} sum_i infl_i(t) xi_ib`. Grid points with zero scale are ignored.
pub fn multiplier_sup<P: InfluenceProcess + ?Sized>(process: &P, scale: &[f64], b: usize, seed: u64, exec: Exec) -> Vec<f64> {
    let n = process.n();
    let rn = (n as f64).sqrt();
    exec.map(b, |r| {
        let xi = multiplier_draws(seed, r, n);
        process
            .multiplier_sum(&xi)
            .iter()
            .zip(scale)
            .filter(|(_, &s)| s != 0.0)
            .fold(0.0f64, |m, (w, s)| m.max((s * w / rn).abs()))
    })
}

/// Order statistic `ceil((1 - alpha) B)` of the suprema.
pub fn critical_value(sups: &[f64], alpha: f64) -> f64 {
    if sups.is_empty() {
        return 0.0;
    }
    let mut s = sups.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let r = ((1.0 - alpha) * s.len() as f64).ceil() as usize;
    s[r.clamp(1, s.len()) - 1]
}

#[derive(Debug, Clone, Copy)]
enum Transform {
    Log,
    LogLog,
}

impl Transform {
    fn defined(self, v: f64) -> bool {
        match self {
            Transform::Log => v > 0.0,
            Transform::LogLog => v > 0.0 && v < 1.0,
        }
    }

    // limits of g^{-1}[g(v) -/+ d] where d = c sigma-ish / (sqrt(n) q)
    fn limits(self, v: f64, d: f64) -> (f64, f64) {
        match self {
            Transform::Log => (v * (-d).exp(), v * d.exp()),
            Transform::LogLog => (v.powf(d.exp()), v.powf((-d).exp())),
        }
    }

    // |g'(v)| times v-dependent part of q, leaving only the sigma-dependent part
    fn q(self, v: f64) -> f64 {
        match self {
            Transform::Log => v,
            Transform::LogLog => (v * v.ln()).abs(),
        }
    }
}

/// Indices of the grid kept by the domain rule, before the transform check.
fn domain_indices(clip_sigma: &[f64], rule: DomainRule) -> Result<(usize, usize)> {
    if clip_sigma.is_empty() {
        return Err(Error::EmptyBandDomain);
    }
    match rule {
        DomainRule::EventRange => Ok((0, clip_sigma.len() - 1)),
        DomainRule::QuantileClip { c1, c2 } => {
            let nearest = |c: f64| {
                let mut best = 0;
                let mut dist = f64::INFINITY;
                for (g, s) in clip_sigma.iter().enumerate() {
                    let v = s * s;
                    let d = (v / (1.0 + v) - c).abs();
                    if d < dist {
                        dist = d;
                        best = g;
                    }
                }
                best
            };
            let (a, b) = (nearest(c1), nearest(c2));
            if a > b {
                return Err(Error::EmptyBandDomain);
            }
            Ok((a, b))
        }
    }
}

fn construct<P: InfluenceProcess + ?Sized>(
    process: &P,
    clip_sigma: &[f64],
    transform: Transform,
    req: &BandRequest,
    exec: Exec,
) -> Result<Band> {
    req.validate()?;
    let grid = process.grid();
    let est = process.estimate();
    let sigma = process.sigma();
    if !est.iter().any(|&v| transform.defined(v)) {
        return Err(Error::BandUndefined("estimate is zero (or one) on the whole grid".into()));
    }
    let (a, b) = domain_indices(clip_sigma, req.domain)?;
    let all_zero = sigma.iter().all(|&s| s == 0.0);
    let keep: Vec<bool> = (0..grid.len())
        .map(|g| {
            g >= a
                && g <= b
                && transform.defined(est[g])
                && (all_zero || req.weight == BandWeight::HallWellner || sigma[g] > 0.0)
        })
        .collect();
    if !keep.iter().any(|&k| k) {
        return Err(Error::EmptyBandDomain);
    }
    let scale: Vec<f64> = (0..grid.len())
        .map(|g| if keep[g] && sigma[g] > 0.0 { req.weight.scale(sigma[g]) } else if keep[g] && all_zero { 1.0 } else { 0.0 })
        .collect();
    let sups = if all_zero { vec![0.0; req.b] } else { multiplier_sup(process, &scale, req.b, req.seed, exec) };
    let degenerate = sups.iter().all(|&s| s == 0.0);
    let c_alpha = critical_value(&sups, req.alpha);
    let rn = (process.n() as f64).sqrt();
    let mut band = Band {
        grid: Vec::new(),
        estimate: Vec::new(),
        lower: Vec::new(),
        upper: Vec::new(),
        c_alpha,
        b_used: req.b,
        domain: (0.0, 0.0),
        weight: req.weight,
        alpha: req.alpha,
        seed: req.seed,
        degenerate,
    };
    for g in (0..grid.len()).filter(|&g| keep[g]) {
        let v = est[g];
        // q(t) = transform.q(v) * scale(sigma); d = c / (sqrt(n) q) on the g-scale
        let d = if degenerate { 0.0 } else { c_alpha / (rn * transform.q(v) * scale[g]) };
        let (lo, hi) = transform.limits(v, d);
        band.grid.push(grid[g]);
        band.estimate.push(v);
        band.lower.push(lo);
        band.upper.push(hi);
    }
    band.domain = (band.grid[0], *band.grid.last().unwrap());
    Ok(band)
}

/// Band for `Lambda_j(t)` or `Lambda_j(t; z0)` on the log scale.
pub fn band_cumhaz(set: &InfluenceSet, req: &BandRequest, exec: Exec) -> Result<Band> {
    let base = set
        .cumhaz
        .get(req.cause)
        .ok_or_else(|| Error::InvalidArgument(format!("cause {} out of range", req.cause + 1)))?;
    match &req.target {
        BandTarget::Cumhaz => {
            let sigma = base.sigma();
            construct(base, &sigma, Transform::Log, req, exec)
        }
        BandTarget::CumhazAtZ0(z0) => {
            let c = covariate_cumhaz_influence(set, req.cause, z0)?;
            let sigma = c.sigma();
            construct(&c, &sigma, Transform::Log, req, exec)
        }
        BandTarget::Cif(_) => Err(Error::InvalidArgument("use band_cif for cumulative incidence bands".into())),
    }
}

/// Band for `F_j(t; z0)` on the log(-log) scale. The clipped domain uses the
/// standard error of `Lambda_j(t; z0)`.
pub fn band_cif(infl: &CifInfluence<'_>, req: &BandRequest, exec: Exec) -> Result<Band> {
    if req.cause >= infl.k() {
        return Err(Error::InvalidArgument(format!("cause {} out of range", req.cause + 1)));
    }
    if let BandTarget::Cif(z0) = &req.target {
        if z0.as_slice() != infl.z0() {
            return Err(Error::InvalidArgument("band z0 differs from the influence z0".into()));
        }
    }
    let process = infl.process(req.cause);
    construct(&process, infl.sigma_cumhaz(req.cause), Transform::LogLog, req, exec)
}
