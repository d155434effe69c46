//! Maximum pseudo-partial-likelihood estimation of the proportional
//! cause-specific hazards model.
//!
//! Failures with an unobserved cause enter every cause's partial
//! likelihood with weight `pi_j(W, gamma_hat)`; complete cases and
//! censorings keep their 0/1 indicators. Ties use the Breslow convention and
//! the risk set at `t` is `{i : X_i >= t}`.

use nalgebra::DMatrix;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::grammar::design_row;
use crate::linalg::{condition_ratio, dot, max_abs, solve_spd};
use crate::missingness::MissingnessFit;
use crate::step::StepFunction;

const SCORE_TOL: f64 = 1e-9;
const MAX_ITER: usize = 100;
const MAX_HALVINGS: usize = 20;
const DIVERGENCE_BOUND: f64 = 50.0;
const RANK_TOL: f64 = 1e-12;

/// Imputed cause indicators `w_ij = R_i Delta_ij + (1 - R_i) Delta_i pi_j(W_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CauseWeights {
    w: DMatrix<f64>,
}

impl CauseWeights {
    /// Wraps an `n x k` weight matrix; rows must be nonnegative.
    pub fn from_matrix(w: DMatrix<f64>) -> Result<Self> {
        if w.iter().any(|&v| !(v >= 0.0) || v > 1.0) {
            return Err(Error::InvalidArgument("cause weights must lie in [0, 1]".into()));
        }
        Ok(Self { w })
    }

    /// Weights when every failure's cause is observed.
    pub fn observed(dataset: &Dataset) -> Result<Self> {
        let mut w = DMatrix::zeros(dataset.len(), dataset.k());
        for (i, r) in dataset.records().iter().enumerate() {
            if r.is_missing_cause() {
                return Err(Error::InvalidData(format!("record {i} has an unobserved cause")));
            }
            if let Some(c) = r.cause {
                w[(i, c)] = 1.0;
            }
        }
        Ok(Self { w })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn k(&self) -> usize {
        self.w.ncols()
    }

    /// Total weight of cause `j`, i.e. the imputed number of cause-`j` failures.
    pub fn total(&self, j: usize) -> f64 {
        self.w.column(j).sum()
    }
}

/// Imputes cause indicators for the failures with unobserved cause.
pub fn cause_weights(dataset: &Dataset, mfit: &MissingnessFit) -> Result<CauseWeights> {
    if mfit.k() != dataset.k() {
        return Err(Error::DimensionMismatch { expected: dataset.k(), got: mfit.k() });
    }
    let mut w = DMatrix::zeros(dataset.len(), dataset.k());
    for (i, r) in dataset.records().iter().enumerate() {
        if !r.event {
            continue;
        }
        match r.cause {
            Some(c) => w[(i, c)] = 1.0,
            None => {
                let row = design_row(mfit.grammar(), r)?;
                for (j, p) in mfit.probabilities_at_row(&row).into_iter().enumerate() {
                    w[(i, j)] = p;
                }
            }
        }
    }
    Ok(CauseWeights { w })
}

/// Subjects grouped by tied observation time, ascending.
#[derive(Debug, Clone)]
pub(crate) struct RiskSets {
    pub n: usize,
    pub p: usize,
    /// Row-major `n x p` covariates.
    pub z: Vec<f64>,
    /// Subject indices sorted by time.
    pub order: Vec<usize>,
    /// `order[groups[g].0..groups[g].1]` share time `group_time[g]`.
    pub groups: Vec<(usize, usize)>,
    pub group_time: Vec<f64>,
    /// Group index of each subject.
    pub group_of: Vec<usize>,
}

impl RiskSets {
    pub fn new(dataset: &Dataset) -> Self {
        let n = dataset.len();
        let p = dataset.p();
        let recs = dataset.records();
        let z = recs.iter().flat_map(|r| r.covariates.iter().copied()).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| recs[a].time.total_cmp(&recs[b].time));
        let mut groups = Vec::new();
        let mut group_time = Vec::new();
        let mut group_of = vec![0; n];
        let mut start = 0;
        while start < n {
            let t = recs[order[start]].time;
            let mut end = start;
            while end < n && recs[order[end]].time == t {
                group_of[order[end]] = groups.len();
                end += 1;
            }
            groups.push((start, end));
            group_time.push(t);
            start = end;
        }
        Self { n, p, z, order, groups, group_time, group_of }
    }

    pub fn z(&self, i: usize) -> &[f64] {
        &self.z[i * self.p..(i + 1) * self.p]
    }

    fn max_linear_predictor(&self, beta: &[f64]) -> f64 {
        (0..self.n).map(|i| dot(beta, self.z(i))).fold(f64::NEG_INFINITY, f64::max).max(0.0)
    }
}

/// Risk-set summary at one time with positive weighted failures.
#[derive(Debug, Clone)]
pub(crate) struct EventPoint {
    pub group: usize,
    pub time: f64,
    /// Total failure weight at this time.
    pub events: f64,
    /// `S0(t) = sum_{X_l >= t} exp(beta' Z_l)`.
    pub s0: f64,
    /// `E(t) = S1(t) / S0(t)`.
    pub mean: Vec<f64>,
    /// `S2(t) / S0(t) - E(t)^{x2}`, row-major `p x p`.
    pub var: Vec<f64>,
}

/// Per-cause weighted failure totals at each time group.
pub(crate) fn group_events(rs: &RiskSets, w: &[f64]) -> Vec<f64> {
    rs.groups
        .iter()
        .map(|&(a, b)| rs.order[a..b].iter().map(|&i| w[i]).sum())
        .collect()
}

/// Descending sweep over the risk sets at `beta`, returning one entry per
/// time with positive failure weight, in ascending time order.
pub(crate) fn event_points(rs: &RiskSets, events: &[f64], beta: &[f64], with_var: bool) -> Result<Vec<EventPoint>> {
    let p = rs.p;
    let shift = rs.max_linear_predictor(beta);
    let mut s0 = 0.0;
    let mut s1 = vec![0.0; p];
    let mut s2 = vec![0.0; if with_var { p * p } else { 0 }];
    let mut out = Vec::new();
    for g in (0..rs.groups.len()).rev() {
        let (a, b) = rs.groups[g];
        for &i in &rs.order[a..b] {
            let zi = rs.z(i);
            let e = (dot(beta, zi) - shift).exp();
            s0 += e;
            for r in 0..p {
                s1[r] += e * zi[r];
                if with_var {
                    for c in 0..p {
                        s2[r * p + c] += e * zi[r] * zi[c];
                    }
                }
            }
        }
        let d = events[g];
        if d > 0.0 {
            if !(s0 > 0.0) {
                return Err(Error::EmptyRiskSet(rs.group_time[g]));
            }
            let mean: Vec<f64> = s1.iter().map(|v| v / s0).collect();
            let var = if with_var {
                let mut v = vec![0.0; p * p];
                for r in 0..p {
                    for c in 0..p {
                        v[r * p + c] = s2[r * p + c] / s0 - mean[r] * mean[c];
                    }
                }
                v
            } else {
                Vec::new()
            };
            out.push(EventPoint { group: g, time: rs.group_time[g], events: d, s0: s0 * shift.exp(), mean, var });
        }
    }
    out.reverse();
    Ok(out)
}

fn score_from_points(rs: &RiskSets, w: &[f64], points: &[EventPoint]) -> (Vec<f64>, DMatrix<f64>) {
    let p = rs.p;
    let n = rs.n as f64;
    let mut score = vec![0.0; p];
    let mut h = DMatrix::zeros(p, p);
    for pt in points {
        let (a, b) = rs.groups[pt.group];
        for &i in &rs.order[a..b] {
            if w[i] > 0.0 {
                score.iter_mut().zip(rs.z(i)).for_each(|(s, z)| *s += w[i] * z);
            }
        }
        for r in 0..p {
            score[r] -= pt.events * pt.mean[r];
            for c in 0..p {
                h[(r, c)] += pt.events * pt.var[r * p + c];
            }
        }
    }
    score.iter_mut().for_each(|s| *s /= n);
    (score, h / n)
}

/// Pseudo-score `G_j(beta)` and the negative of its Jacobian, both scaled by `1/n`.
pub fn pseudo_score(dataset: &Dataset, weights: &CauseWeights, j: usize, beta: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
    check_weights(dataset, weights)?;
    if beta.len() != dataset.p() {
        return Err(Error::DimensionMismatch { expected: dataset.p(), got: beta.len() });
    }
    let rs = RiskSets::new(dataset);
    let w: Vec<f64> = weights.w.column(j).iter().copied().collect();
    let ev = group_events(&rs, &w);
    let pts = event_points(&rs, &ev, beta, true)?;
    Ok(score_from_points(&rs, &w, &pts))
}

fn check_weights(dataset: &Dataset, weights: &CauseWeights) -> Result<()> {
    if weights.n() != dataset.len() || weights.k() != dataset.k() {
        return Err(Error::DimensionMismatch { expected: dataset.len(), got: weights.n() });
    }
    for (i, r) in dataset.records().iter().enumerate() {
        let s: f64 = weights.w.row(i).sum();
        let expect = f64::from(u8::from(r.event));
        if (s - expect).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("weights of record {i} sum to {s}, expected {expect}")));
        }
    }
    Ok(())
}

/// Fit for one cause.
#[derive(Debug, Clone)]
pub struct CauseFit {
    pub beta: Vec<f64>,
    /// Breslow cumulative baseline hazard.
    pub baseline: StepFunction,
    /// `n^{-1}` times the negative pseudo-score Jacobian at `beta`.
    pub hessian: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Max-norm of the pseudo-score at return.
    pub score_norm: f64,
}

/// Per-cause coefficient estimates and baseline hazards.
#[derive(Debug, Clone)]
pub struct CauseSpecificFit {
    pub causes: Vec<CauseFit>,
    pub weights: CauseWeights,
}

impl CauseSpecificFit {
    pub fn k(&self) -> usize {
        self.causes.len()
    }

    pub fn n(&self) -> usize {
        self.weights.n()
    }

    pub fn cause(&self, j: usize) -> &CauseFit {
        &self.causes[j]
    }
}

/// First stage weights from `mfit`, then one pseudo-partial-likelihood fit per cause.
pub fn fit_mpple(dataset: &Dataset, mfit: &MissingnessFit) -> Result<CauseSpecificFit> {
    let weights = cause_weights(dataset, mfit)?;
    fit_with_weights(dataset, weights, Exec::default())
}

/// Solves the weighted score equations cause by cause.
pub fn fit_with_weights(dataset: &Dataset, weights: CauseWeights, exec: Exec) -> Result<CauseSpecificFit> {
    check_weights(dataset, &weights)?;
    let rs = RiskSets::new(dataset);
    let causes = exec
        .map(dataset.k(), |j| fit_cause(&rs, &weights, j))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(CauseSpecificFit { causes, weights })
}

fn fit_cause(rs: &RiskSets, weights: &CauseWeights, j: usize) -> Result<CauseFit> {
    let w: Vec<f64> = weights.w.column(j).iter().copied().collect();
    if !(w.iter().sum::<f64>() > 0.0) {
        return Err(Error::DegenerateCause { cause: j + 1 });
    }
    let ev = group_events(rs, &w);
    let p = rs.p;
    let mut beta = vec![0.0; p];
    let eval = |beta: &[f64]| -> Result<(Vec<f64>, DMatrix<f64>)> {
        let pts = event_points(rs, &ev, beta, true)?;
        Ok(score_from_points(rs, &w, &pts))
    };
    let mut iterations = 0;
    let (mut score, mut h) = eval(&beta)?;
    if rs.z.iter().any(|&v| v != 0.0) {
        if condition_ratio(&h) < RANK_TOL {
            return Err(Error::Singular(format!(
                "pseudo-score Jacobian for cause {} (covariates constant among its failures)",
                j + 1
            )));
        }
        let mut norm = max_abs(&score);
        let mut converged = norm < SCORE_TOL;
        let mut polish = converged;
        while iterations < MAX_ITER && (!converged || polish) {
            let delta = solve_spd(&h, &score, &format!("pseudo-score Jacobian for cause {}", j + 1))?;
            let mut step = 1.0;
            let mut next = None;
            for _ in 0..=MAX_HALVINGS {
                let cand: Vec<f64> = beta.iter().zip(&delta).map(|(b, d)| b + step * d).collect();
                let (s, hh) = eval(&cand)?;
                let nn = max_abs(&s);
                if nn.is_finite() && nn <= norm {
                    next = Some((cand, s, hh, nn));
                    break;
                }
                step *= 0.5;
            }
            iterations += 1;
            let Some((cand, s, hh, nn)) = next else {
                if converged {
                    break;
                }
                return Err(Error::NotConverged { what: format!("pseudo-likelihood for cause {}", j + 1), iterations });
            };
            beta = cand;
            score = s;
            h = hh;
            norm = nn;
            if max_abs(&beta) > DIVERGENCE_BOUND {
                return Err(Error::Divergence { cause: j + 1, bound: DIVERGENCE_BOUND });
            }
            if converged {
                polish = false;
            } else if norm < SCORE_TOL {
                converged = true;
                polish = true;
            }
        }
        if !converged {
            return Err(Error::NotConverged { what: format!("pseudo-likelihood for cause {}", j + 1), iterations });
        }
    }
    let pts = event_points(rs, &ev, &beta, false)?;
    let baseline = StepFunction::from_jumps(
        pts.iter().map(|pt| pt.time).collect(),
        &pts.iter().map(|pt| pt.events / pt.s0).collect::<Vec<_>>(),
    );
    let score_norm = max_abs(&score);
    Ok(CauseFit { beta, baseline, hessian: h, iterations, converged: true, score_norm })
}

/// `Lambda_j(t; z0) = Lambda_j(t) exp(beta_j' z0)`.
pub fn cumhaz_at_covariate(fit: &CauseSpecificFit, j: usize, z0: &[f64]) -> Result<StepFunction> {
    let cf = fit.causes.get(j).ok_or_else(|| Error::InvalidArgument(format!("cause index {j} out of range")))?;
    if z0.len() != cf.beta.len() {
        return Err(Error::DimensionMismatch { expected: cf.beta.len(), got: z0.len() });
    }
    Ok(cf.baseline.scaled(dot(&cf.beta, z0).exp()))
}
