//! Empirical influence functions of the coefficient, cumulative hazard and
//! cumulative incidence estimators, including the correction for the
//! estimated cause-probability model.
//!
//! Scaling convention: an influence `infl_i` of an estimator `theta_hat`
//! satisfies `sqrt(n) (theta_hat - theta) ~ n^{-1/2} sum_i infl_i`, so the
//! standard error is `sqrt(n^{-1} sum_i infl_i^2) / sqrt(n)`.
//!
//! The cumulative-hazard influences are kept in a compact per-subject /
//! per-grid-point form; a value `infl_i(t)` costs `O(p + dim gamma)` and the
//! multiplier sum `sum_i xi_i infl_i(t)` over the whole grid costs
//! `O(n + G)` rather than `O(n G)`.

use nalgebra::DMatrix;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::grammar::design_row;
use crate::linalg::{dot, inverse_spd};
use crate::missingness::MissingnessFit;
use crate::mpple::{event_points, group_events, CauseSpecificFit, EventPoint, RiskSets};
use crate::step::merge_grids;

/// A family of per-subject influence functions on a time grid, together
/// with the estimate it linearizes.
pub trait InfluenceProcess: Sync {
    fn n(&self) -> usize;
    fn grid(&self) -> &[f64];
    fn estimate(&self) -> &[f64];
    /// `sqrt(n^{-1} sum_i infl_i(t)^2)` at each grid point.
    fn sigma(&self) -> Vec<f64>;
    /// `sum_i xi_i infl_i(t)` at each grid point.
    fn multiplier_sum(&self, xi: &[f64]) -> Vec<f64>;
}

/// Influence functions stored as an explicit `n x G` matrix.
#[derive(Debug, Clone)]
pub struct DenseInfluence {
    pub grid: Vec<f64>,
    pub estimate: Vec<f64>,
    pub values: DMatrix<f64>,
}

impl InfluenceProcess for DenseInfluence {
    fn n(&self) -> usize {
        self.values.nrows()
    }
    fn grid(&self) -> &[f64] {
        &self.grid
    }
    fn estimate(&self) -> &[f64] {
        &self.estimate
    }
    fn sigma(&self) -> Vec<f64> {
        let n = self.n() as f64;
        self.values.column_iter().map(|c| (c.norm_squared() / n).sqrt()).collect()
    }
    fn multiplier_sum(&self, xi: &[f64]) -> Vec<f64> {
        self.values.column_iter().map(|c| c.iter().zip(xi).map(|(a, b)| a * b).sum()).collect()
    }
}

/// Influence of `beta_hat_j` for every cause.
#[derive(Debug, Clone)]
pub struct BetaInfluence {
    /// Per cause, `n x p` matrix of `psi_ij`.
    pub psi: Vec<DMatrix<f64>>,
    /// Per cause, `p x dim(gamma)` correction matrix `R_j`.
    pub r: Vec<DMatrix<f64>>,
    /// Per cause, `Sigma_j = n^{-1} sum_i (psi_ij + R_j omega_i)^{x2}`.
    pub sigma: Vec<DMatrix<f64>>,
    /// Per cause, `n x p` matrix of `psi_ij + R_j omega_i`.
    pub total: Vec<DMatrix<f64>>,
}

impl BetaInfluence {
    pub fn n(&self) -> usize {
        self.psi.first().map_or(0, |m| m.nrows())
    }

    /// `sqrt(diag(Sigma_j) / n)`.
    pub fn se(&self, j: usize) -> Vec<f64> {
        let n = self.n() as f64;
        let s = &self.sigma[j];
        (0..s.nrows()).map(|r| (s[(r, r)] / n).max(0.0).sqrt()).collect()
    }
}

/// Failures with unobserved cause: design-row probabilities and gradients
/// of `pi_j` for each cause.
struct MissingInfo {
    subjects: Vec<usize>,
    /// Per missing subject, per cause, gradient of pi_j.
    grads: Vec<Vec<Vec<f64>>>,
}

fn missing_info(dataset: &Dataset, mfit: &MissingnessFit) -> Result<MissingInfo> {
    let mut out = MissingInfo { subjects: Vec::new(), grads: Vec::new() };
    for (i, r) in dataset.records().iter().enumerate() {
        if r.is_missing_cause() {
            let row = design_row(mfit.grammar(), r)?;
            let probs = mfit.probabilities_at_row(&row);
            out.subjects.push(i);
            out.grads.push((0..mfit.k()).map(|j| mfit.gradient_at_row(&row, &probs, j)).collect());
        }
    }
    Ok(out)
}

/// Quantities shared by the coefficient and cumulative-hazard influences of one cause.
struct CauseContext {
    points: Vec<EventPoint>,
    /// Per time group, index of the last event point at or before it.
    upto: Vec<Option<usize>>,
    /// Per event point, jump of the Breslow estimator.
    dlambda: Vec<f64>,
    risk: Vec<f64>,
}

fn cause_context(rs: &RiskSets, fit: &CauseSpecificFit, j: usize) -> Result<CauseContext> {
    let w: Vec<f64> = fit.weights.matrix().column(j).iter().copied().collect();
    let beta = &fit.cause(j).beta;
    let points = event_points(rs, &group_events(rs, &w), beta, false)?;
    let mut upto = vec![None; rs.groups.len()];
    let mut k = 0;
    let mut last = None;
    for (g, slot) in upto.iter_mut().enumerate() {
        while k < points.len() && points[k].group <= g {
            last = Some(k);
            k += 1;
        }
        *slot = last;
    }
    let dlambda = points.iter().map(|pt| pt.events / pt.s0).collect();
    let risk = (0..rs.n).map(|i| dot(beta, rs.z(i)).exp()).collect();
    Ok(CauseContext { points, upto, dlambda, risk })
}

fn check_inputs(dataset: &Dataset, mfit: &MissingnessFit, fit: &CauseSpecificFit) -> Result<()> {
    if fit.n() != dataset.len() || mfit.omega().nrows() != dataset.len() {
        return Err(Error::DimensionMismatch { expected: dataset.len(), got: fit.n() });
    }
    if fit.k() != dataset.k() || mfit.k() != dataset.k() {
        return Err(Error::DimensionMismatch { expected: dataset.k(), got: fit.k() });
    }
    Ok(())
}

/// `psi_ij`, `R_j` and `Sigma_j` for every cause.
pub fn compute_beta_influence(dataset: &Dataset, mfit: &MissingnessFit, fit: &CauseSpecificFit) -> Result<BetaInfluence> {
    check_inputs(dataset, mfit, fit)?;
    let rs = RiskSets::new(dataset);
    let miss = missing_info(dataset, mfit)?;
    let mut out = BetaInfluence { psi: Vec::new(), r: Vec::new(), sigma: Vec::new(), total: Vec::new() };
    for j in 0..fit.k() {
        let ctx = cause_context(&rs, fit, j)?;
        let (psi, r) = beta_influence_cause(&rs, fit, j, &ctx, &miss, mfit.dim())?;
        let total = &psi + mfit.omega() * r.transpose();
        let sigma = total.transpose() * &total / rs.n as f64;
        out.psi.push(psi);
        out.r.push(r);
        out.sigma.push(sigma);
        out.total.push(total);
    }
    Ok(out)
}

fn beta_influence_cause(
    rs: &RiskSets,
    fit: &CauseSpecificFit,
    j: usize,
    ctx: &CauseContext,
    miss: &MissingInfo,
    dim_gamma: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let p = rs.p;
    let n = rs.n;
    let h = &fit.cause(j).hessian;
    if h.iter().all(|&v| v == 0.0) {
        // all covariates zero: beta is fixed at 0 and carries no variability
        return Ok((DMatrix::zeros(n, p), DMatrix::zeros(p, dim_gamma)));
    }
    let hinv = inverse_spd(h, &format!("information matrix for cause {}", j + 1))?;
    // cumulative dLambda and E dLambda over event points
    let mut a0 = Vec::with_capacity(ctx.points.len());
    let mut a1 = Vec::with_capacity(ctx.points.len() * p);
    let (mut c0, mut c1) = (0.0, vec![0.0; p]);
    for (pt, dl) in ctx.points.iter().zip(&ctx.dlambda) {
        c0 += dl;
        c1.iter_mut().zip(&pt.mean).for_each(|(c, e)| *c += e * dl);
        a0.push(c0);
        a1.extend_from_slice(&c1);
    }
    let mut raw = DMatrix::zeros(n, p);
    for i in 0..n {
        let zi = rs.z(i);
        let g = rs.group_of[i];
        let wij = fit.weights.get(i, j);
        if let Some(k) = ctx.upto[g] {
            let pt = &ctx.points[k];
            let at_event = wij > 0.0 && pt.group == g;
            for r in 0..p {
                let mut v = -ctx.risk[i] * (zi[r] * a0[k] - a1[k * p + r]);
                if at_event {
                    v += wij * (zi[r] - pt.mean[r]);
                }
                raw[(i, r)] = v;
            }
        }
    }
    let psi = raw * hinv.transpose();

    let mut corr = DMatrix::zeros(p, dim_gamma);
    for (&i, grads) in miss.subjects.iter().zip(&miss.grads) {
        let g = rs.group_of[i];
        // a cause weight that underflowed to zero leaves no jump; its gradient is zero too
        let Some(k) = ctx.upto[g].filter(|&k| ctx.points[k].group == g) else {
            continue;
        };
        let zi = rs.z(i);
        for r in 0..p {
            let d = zi[r] - ctx.points[k].mean[r];
            for (c, gr) in grads[j].iter().enumerate() {
                corr[(r, c)] += d * gr;
            }
        }
    }
    let r = hinv * corr / n as f64;
    Ok((psi, r))
}

/// Influence of the Breslow estimator `Lambda_hat_j(t)` on the cause-`j` jump grid,
/// `phi_ij(t) + R*_j(t) omega_i`.
#[derive(Debug, Clone)]
pub struct CumhazInfluence {
    cause: usize,
    n: usize,
    p: usize,
    q: usize,
    beta: Vec<f64>,
    grid: Vec<f64>,
    lambda: Vec<f64>,
    /// Cumulative `sum dLambda / S0`.
    b: Vec<f64>,
    /// Cumulative `sum E dLambda`, row-major `G x p`.
    a1: Vec<f64>,
    /// `R*_j(t)`, row-major `G x q`.
    r_star: Vec<f64>,
    /// Grid index of the last jump at or before `X_i`.
    last: Vec<Option<usize>>,
    /// `n w_ij / S0(X_i)` for subjects whose failure carries cause-`j` weight.
    jump: Vec<f64>,
    risk: Vec<f64>,
    /// `psi_ij + R_j omega_i`, row-major `n x p`.
    eta: Vec<f64>,
    /// Row-major `n x q`.
    omega: Vec<f64>,
    sigma: Vec<f64>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// `phi_ij(t)` and `R*_j(t)` for every cause.
pub fn compute_cumhaz_influence(
    dataset: &Dataset,
    mfit: &MissingnessFit,
    fit: &CauseSpecificFit,
    beta_infl: &BetaInfluence,
) -> Result<Vec<CumhazInfluence>> {
    check_inputs(dataset, mfit, fit)?;
    let rs = RiskSets::new(dataset);
    let miss = missing_info(dataset, mfit)?;
    let omega = row_major(mfit.omega());
    (0..fit.k())
        .map(|j| {
            let ctx = cause_context(&rs, fit, j)?;
            let mut ci = cumhaz_cause(&rs, fit, j, &ctx, &miss, mfit.dim(), &beta_infl.total[j], omega.clone())?;
            ci.sigma = ci.compute_sigma();
            Ok(ci)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn cumhaz_cause(
    rs: &RiskSets,
    fit: &CauseSpecificFit,
    j: usize,
    ctx: &CauseContext,
    miss: &MissingInfo,
    q: usize,
    eta: &DMatrix<f64>,
    omega: Vec<f64>,
) -> Result<CumhazInfluence> {
    let n = rs.n;
    let p = rs.p;
    let gsize = ctx.points.len();
    let grid: Vec<f64> = ctx.points.iter().map(|pt| pt.time).collect();
    let mut lambda = Vec::with_capacity(gsize);
    let mut b = Vec::with_capacity(gsize);
    let mut a1 = Vec::with_capacity(gsize * p);
    let (mut cl, mut cb, mut ca) = (0.0, 0.0, vec![0.0; p]);
    for (pt, dl) in ctx.points.iter().zip(&ctx.dlambda) {
        cl += dl;
        cb += dl / pt.s0;
        ca.iter_mut().zip(&pt.mean).for_each(|(c, e)| *c += e * dl);
        lambda.push(cl);
        b.push(cb);
        a1.extend_from_slice(&ca);
    }
    let mut dr = vec![0.0; gsize * q];
    for (&i, grads) in miss.subjects.iter().zip(&miss.grads) {
        let g = rs.group_of[i];
        let Some(k) = ctx.upto[g].filter(|&k| ctx.points[k].group == g) else {
            continue;
        };
        let s0 = ctx.points[k].s0;
        dr[k * q..(k + 1) * q].iter_mut().zip(&grads[j]).for_each(|(d, g)| *d += g / s0);
    }
    for k in 1..gsize {
        for c in 0..q {
            dr[k * q + c] += dr[(k - 1) * q + c];
        }
    }
    let mut last = vec![None; n];
    let mut jump = vec![0.0; n];
    for i in 0..n {
        let g = rs.group_of[i];
        last[i] = ctx.upto[g];
        let wij = fit.weights.get(i, j);
        if let Some(k) = ctx.upto[g] {
            if wij > 0.0 && ctx.points[k].group == g {
                jump[i] = n as f64 * wij / ctx.points[k].s0;
            }
        }
    }
    Ok(CumhazInfluence {
        cause: j,
        n,
        p,
        q,
        beta: fit.cause(j).beta.clone(),
        grid,
        lambda,
        b,
        a1,
        r_star: dr,
        last,
        jump,
        risk: ctx.risk.clone(),
        eta: row_major(eta),
        omega,
        sigma: Vec::new(),
    })
}

impl CumhazInfluence {
    pub fn cause(&self) -> usize {
        self.cause
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    /// `Lambda_hat_j` on the grid.
    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn r_star(&self, g: usize) -> &[f64] {
        &self.r_star[g * self.q..(g + 1) * self.q]
    }

    fn eta(&self, i: usize) -> &[f64] {
        &self.eta[i * self.p..(i + 1) * self.p]
    }

    fn omega(&self, i: usize) -> &[f64] {
        &self.omega[i * self.q..(i + 1) * self.q]
    }

    /// `phi_ij(t_g)`, without the cause-probability correction.
    pub fn phi(&self, i: usize, g: usize) -> f64 {
        let Some(li) = self.last[i] else {
            return -dot(self.eta(i), &self.a1[g * self.p..(g + 1) * self.p]);
        };
        let mut v = -(self.n as f64) * self.risk[i] * self.b[li.min(g)];
        if li <= g {
            v += self.jump[i];
        }
        v - dot(self.eta(i), &self.a1[g * self.p..(g + 1) * self.p])
    }

    /// `phi_ij(t_g) + R*_j(t_g) omega_i`.
    pub fn value(&self, i: usize, g: usize) -> f64 {
        self.phi(i, g) + dot(self.r_star(g), self.omega(i))
    }

    pub fn column(&self, g: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.value(i, g)).collect()
    }

    fn compute_sigma(&self) -> Vec<f64> {
        let n = self.n as f64;
        (0..self.grid.len())
            .map(|g| ((0..self.n).map(|i| self.value(i, g).powi(2)).sum::<f64>() / n).sqrt())
            .collect()
    }

    /// `n^{-1} sum_i infl_i(t_g) infl_i(t_h)`.
    pub fn covariance(&self, g: usize, h: usize) -> f64 {
        (0..self.n).map(|i| self.value(i, g) * self.value(i, h)).sum::<f64>() / self.n as f64
    }

    /// Standard error of `Lambda_hat_j(t_g)`.
    pub fn se(&self) -> Vec<f64> {
        let rn = (self.n as f64).sqrt();
        self.sigma.iter().map(|s| s / rn).collect()
    }

    pub fn to_dense(&self) -> DenseInfluence {
        let mut m = DMatrix::zeros(self.n, self.grid.len());
        for g in 0..self.grid.len() {
            for i in 0..self.n {
                m[(i, g)] = self.value(i, g);
            }
        }
        DenseInfluence { grid: self.grid.clone(), estimate: self.lambda.clone(), values: m }
    }

    /// `sum_i xi_i eta_i` and `sum_i xi_i omega_i`.
    fn weighted_eta_omega(&self, xi: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut se = vec![0.0; self.p];
        let mut so = vec![0.0; self.q];
        for (i, &x) in xi.iter().enumerate() {
            se.iter_mut().zip(self.eta(i)).for_each(|(s, e)| *s += x * e);
            so.iter_mut().zip(self.omega(i)).for_each(|(s, o)| *s += x * o);
        }
        (se, so)
    }

    fn multiplier_with(&self, xi: &[f64], xi_eta: &[f64], xi_omega: &[f64]) -> Vec<f64> {
        let gsize = self.grid.len();
        let nn = self.n as f64;
        // subjects bucketed by `last`: jumps land at `last`, compensators stop there
        let mut jump_at = vec![0.0; gsize];
        let mut frozen_at = vec![0.0; gsize];
        let mut active_from = vec![0.0; gsize];
        for i in 0..self.n {
            if let Some(li) = self.last[i] {
                jump_at[li] += xi[i] * self.jump[i];
                frozen_at[li] += xi[i] * self.risk[i] * self.b[li];
                active_from[li] += xi[i] * self.risk[i];
            }
        }
        // active(g) = sum over subjects with last >= g
        let mut active = vec![0.0; gsize];
        let mut acc = 0.0;
        for g in (0..gsize).rev() {
            acc += active_from[g];
            active[g] = acc;
        }
        let mut out = Vec::with_capacity(gsize);
        let (mut jumps, mut frozen) = (0.0, 0.0);
        for g in 0..gsize {
            jumps += jump_at[g];
            // subjects with last == g are counted in `active[g]` with b[g]
            let comp = frozen + self.b[g] * active[g];
            frozen += frozen_at[g];
            let v = jumps - nn * comp - dot(xi_eta, &self.a1[g * self.p..(g + 1) * self.p])
                + dot(self.r_star(g), xi_omega);
            out.push(v);
        }
        out
    }
}

impl InfluenceProcess for CumhazInfluence {
    fn n(&self) -> usize {
        self.n
    }
    fn grid(&self) -> &[f64] {
        &self.grid
    }
    fn estimate(&self) -> &[f64] {
        &self.lambda
    }
    fn sigma(&self) -> Vec<f64> {
        self.sigma.clone()
    }
    fn multiplier_sum(&self, xi: &[f64]) -> Vec<f64> {
        let (se, so) = self.weighted_eta_omega(xi);
        self.multiplier_with(xi, &se, &so)
    }
}

/// Coefficient, cumulative hazard and correction influences for all causes.
#[derive(Debug, Clone)]
pub struct InfluenceSet {
    pub beta: BetaInfluence,
    pub cumhaz: Vec<CumhazInfluence>,
}

impl InfluenceSet {
    pub fn compute(dataset: &Dataset, mfit: &MissingnessFit, fit: &CauseSpecificFit) -> Result<Self> {
        let beta = compute_beta_influence(dataset, mfit, fit)?;
        let cumhaz = compute_cumhaz_influence(dataset, mfit, fit, &beta)?;
        Ok(Self { beta, cumhaz })
    }

    pub fn n(&self) -> usize {
        self.beta.n()
    }

    pub fn k(&self) -> usize {
        self.cumhaz.len()
    }
}

/// Influence of `Lambda_hat_j(t; z0)` on the cause-`j` grid.
#[derive(Debug, Clone)]
pub struct CovariateCumhaz<'a> {
    base: &'a CumhazInfluence,
    z0: Vec<f64>,
    factor: f64,
    estimate: Vec<f64>,
    sigma: Vec<f64>,
}

/// `phi^Lambda_ij(t; z0) = [z0'(psi + R omega) Lambda(t) + phi(t) + R*(t) omega] exp(beta' z0)`.
pub fn covariate_cumhaz_influence<'a>(set: &'a InfluenceSet, j: usize, z0: &[f64]) -> Result<CovariateCumhaz<'a>> {
    let base = set.cumhaz.get(j).ok_or_else(|| Error::InvalidArgument(format!("cause index {j} out of range")))?;
    if z0.len() != base.p {
        return Err(Error::DimensionMismatch { expected: base.p, got: z0.len() });
    }
    let factor = dot(&base.beta, z0).exp();
    let estimate = base.lambda.iter().map(|l| l * factor).collect();
    let mut c = CovariateCumhaz { base, z0: z0.to_vec(), factor, estimate, sigma: Vec::new() };
    let n = base.n as f64;
    c.sigma = (0..base.grid.len())
        .map(|g| ((0..base.n).map(|i| c.value(i, g).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    Ok(c)
}

impl CovariateCumhaz<'_> {
    pub fn value(&self, i: usize, g: usize) -> f64 {
        let b = self.base;
        self.factor * (dot(&self.z0, b.eta(i)) * b.lambda[g] + b.value(i, g))
    }

    pub fn column(&self, g: usize) -> Vec<f64> {
        (0..self.base.n).map(|i| self.value(i, g)).collect()
    }

    pub fn se(&self) -> Vec<f64> {
        let rn = (self.base.n as f64).sqrt();
        self.sigma.iter().map(|s| s / rn).collect()
    }
}

impl InfluenceProcess for CovariateCumhaz<'_> {
    fn n(&self) -> usize {
        self.base.n
    }
    fn grid(&self) -> &[f64] {
        &self.base.grid
    }
    fn estimate(&self) -> &[f64] {
        &self.estimate
    }
    fn sigma(&self) -> Vec<f64> {
        self.sigma.clone()
    }
    fn multiplier_sum(&self, xi: &[f64]) -> Vec<f64> {
        let (se, so) = self.base.weighted_eta_omega(xi);
        let zt = dot(&self.z0, &se);
        self.base
            .multiplier_with(xi, &se, &so)
            .into_iter()
            .zip(&self.base.lambda)
            .map(|(v, l)| self.factor * (zt * l + v))
            .collect()
    }
}

/// Influence of the covariate-specific cumulative incidence functions of all
/// causes, on the merged jump grid.
#[derive(Debug, Clone)]
pub struct CifInfluence<'a> {
    set: &'a InfluenceSet,
    z0: Vec<f64>,
    grid: Vec<f64>,
    factor: Vec<f64>,
    /// Per cause, per merged grid point: index into the cause grid.
    idx: Vec<Vec<Option<usize>>>,
    /// Per cause, `Lambda_l(t; z0)` on the merged grid.
    cumhaz: Vec<Vec<f64>>,
    /// `exp(-sum_l Lambda_l(t_{m-1}; z0))`.
    surv_before: Vec<f64>,
    cif: Vec<Vec<f64>>,
    sigma_cif: Vec<Vec<f64>>,
    sigma_cumhaz: Vec<Vec<f64>>,
    max_abs_sum: f64,
}

/// Builds the cumulative incidence influences `phi^F_ij(t; z0)` for all causes.
pub fn cif_influence<'a>(set: &'a InfluenceSet, z0: &[f64]) -> Result<CifInfluence<'a>> {
    let k = set.k();
    let p = set.cumhaz[0].p;
    if z0.len() != p {
        return Err(Error::DimensionMismatch { expected: p, got: z0.len() });
    }
    let grid = merge_grids(set.cumhaz.iter().map(|c| c.grid.as_slice()));
    let factor: Vec<f64> = set.cumhaz.iter().map(|c| dot(&c.beta, z0).exp()).collect();
    let mut idx = vec![Vec::with_capacity(grid.len()); k];
    let mut cumhaz = vec![Vec::with_capacity(grid.len()); k];
    for (l, c) in set.cumhaz.iter().enumerate() {
        let mut pos = 0;
        for &t in &grid {
            while pos < c.grid.len() && c.grid[pos] <= t {
                pos += 1;
            }
            let id = pos.checked_sub(1);
            idx[l].push(id);
            cumhaz[l].push(id.map_or(0.0, |g| c.lambda[g] * factor[l]));
        }
    }
    let mut surv_before = Vec::with_capacity(grid.len());
    let mut cif = vec![Vec::with_capacity(grid.len()); k];
    let mut acc = vec![0.0; k];
    for m in 0..grid.len() {
        let prev_total: f64 = if m == 0 { 0.0 } else { (0..k).map(|l| cumhaz[l][m - 1]).sum() };
        let s = (-prev_total).exp();
        surv_before.push(s);
        for j in 0..k {
            let d = cumhaz[j][m] - if m == 0 { 0.0 } else { cumhaz[j][m - 1] };
            acc[j] += s * d;
            cif[j].push(acc[j]);
        }
    }
    let mut out = CifInfluence {
        set,
        z0: z0.to_vec(),
        grid,
        factor,
        idx,
        cumhaz,
        surv_before,
        cif,
        sigma_cif: Vec::new(),
        sigma_cumhaz: Vec::new(),
        max_abs_sum: 0.0,
    };
    let m = out.grid.len();
    let n = set.n() as f64;
    let mut ss_f = vec![vec![0.0; m]; k];
    let mut ss_l = vec![vec![0.0; m]; k];
    let mut max_sum = 0.0f64;
    out.sweep(|mi, phi_f, phi_l| {
        for j in 0..k {
            ss_f[j][mi] = (phi_f[j].iter().map(|v| v * v).sum::<f64>() / n).sqrt();
            ss_l[j][mi] = (phi_l[j].iter().map(|v| v * v).sum::<f64>() / n).sqrt();
            max_sum = max_sum.max(phi_f[j].iter().sum::<f64>().abs());
        }
    });
    out.sigma_cif = ss_f;
    out.sigma_cumhaz = ss_l;
    out.max_abs_sum = max_sum;
    Ok(out)
}

impl<'a> CifInfluence<'a> {
    pub fn z0(&self) -> &[f64] {
        &self.z0
    }

    pub fn k(&self) -> usize {
        self.cif.len()
    }

    pub fn n(&self) -> usize {
        self.set.n()
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// `F_hat_j(t; z0)` on the merged grid.
    pub fn cif(&self, j: usize) -> &[f64] {
        &self.cif[j]
    }

    /// `Lambda_hat_j(t; z0)` on the merged grid.
    pub fn cumhaz(&self, j: usize) -> &[f64] {
        &self.cumhaz[j]
    }

    /// `sqrt(n^{-1} sum_i phi^F_ij(t; z0)^2)` on the merged grid.
    pub fn sigma_cif(&self, j: usize) -> &[f64] {
        &self.sigma_cif[j]
    }

    /// `sqrt(n^{-1} sum_i phi^Lambda_ij(t; z0)^2)` on the merged grid.
    pub fn sigma_cumhaz(&self, j: usize) -> &[f64] {
        &self.sigma_cumhaz[j]
    }

    /// Largest `|sum_i phi^F_ij(t; z0)|` over causes and grid points.
    pub fn max_abs_column_sum(&self) -> f64 {
        self.max_abs_sum
    }

    fn lambda_value(&self, l: usize, i: usize, m: usize) -> f64 {
        let c = &self.set.cumhaz[l];
        match self.idx[l][m] {
            None => 0.0,
            Some(g) => self.factor[l] * (dot(&self.z0, c.eta(i)) * c.lambda[g] + c.value(i, g)),
        }
    }

    /// Walks the merged grid, handing `visit(m, phi_F, phi_Lambda)` the
    /// per-cause influence columns at each grid point.
    pub fn sweep(&self, mut visit: impl FnMut(usize, &[Vec<f64>], &[Vec<f64>])) {
        let k = self.k();
        let n = self.n();
        let mut prev_l = vec![vec![0.0; n]; k];
        let mut cur_l = vec![vec![0.0; n]; k];
        let mut phi_f = vec![vec![0.0; n]; k];
        let mut prev_sum = vec![0.0; n];
        for m in 0..self.grid.len() {
            for l in 0..k {
                let changed = m == 0 || self.idx[l][m] != self.idx[l][m - 1];
                if changed {
                    for i in 0..n {
                        cur_l[l][i] = self.lambda_value(l, i, m);
                    }
                } else {
                    cur_l[l].copy_from_slice(&prev_l[l]);
                }
            }
            let s = self.surv_before[m];
            for j in 0..k {
                let dl = self.cumhaz[j][m] - if m == 0 { 0.0 } else { self.cumhaz[j][m - 1] };
                for i in 0..n {
                    phi_f[j][i] += s * (cur_l[j][i] - prev_l[j][i]) - s * dl * prev_sum[i];
                }
            }
            visit(m, &phi_f, &cur_l);
            for i in 0..n {
                prev_sum[i] = (0..k).map(|l| cur_l[l][i]).sum();
            }
            std::mem::swap(&mut prev_l, &mut cur_l);
        }
    }

    /// Dense `n x M` matrix of `phi^F_ij(t; z0)` for one cause.
    pub fn to_dense(&self, j: usize) -> DenseInfluence {
        let mut values = DMatrix::zeros(self.n(), self.grid.len());
        self.sweep(|m, f, _| values.column_mut(m).copy_from_slice(&f[j]));
        DenseInfluence { grid: self.grid.clone(), estimate: self.cif[j].clone(), values }
    }

    /// Multiplier sums `sum_i xi_i phi^F_ij(t; z0)` for every cause.
    pub fn multiplier_sums(&self, xi: &[f64]) -> Vec<Vec<f64>> {
        let k = self.k();
        let lam: Vec<Vec<f64>> = (0..k)
            .map(|l| {
                let c = &self.set.cumhaz[l];
                let (se, so) = c.weighted_eta_omega(xi);
                let zt = dot(&self.z0, &se);
                let base = c.multiplier_with(xi, &se, &so);
                self.idx[l]
                    .iter()
                    .map(|id| id.map_or(0.0, |g| self.factor[l] * (zt * c.lambda[g] + base[g])))
                    .collect()
            })
            .collect();
        let mut out = vec![Vec::with_capacity(self.grid.len()); k];
        let mut acc = vec![0.0; k];
        for m in 0..self.grid.len() {
            let s = self.surv_before[m];
            let prev_sum: f64 = if m == 0 { 0.0 } else { (0..k).map(|l| lam[l][m - 1]).sum() };
            for j in 0..k {
                let prev = if m == 0 { 0.0 } else { lam[j][m - 1] };
                let dl = self.cumhaz[j][m] - if m == 0 { 0.0 } else { self.cumhaz[j][m - 1] };
                acc[j] += s * (lam[j][m] - prev) - s * dl * prev_sum;
                out[j].push(acc[j]);
            }
        }
        out
    }

    /// The cumulative incidence influence of one cause as an [`InfluenceProcess`].
    pub fn process(&'a self, j: usize) -> CifProcess<'a> {
        CifProcess { cif: self, cause: j }
    }
}

/// One cause's view of a [`CifInfluence`].
#[derive(Debug, Clone, Copy)]
pub struct CifProcess<'a> {
    cif: &'a CifInfluence<'a>,
    cause: usize,
}

impl InfluenceProcess for CifProcess<'_> {
    fn n(&self) -> usize {
        self.cif.n()
    }
    fn grid(&self) -> &[f64] {
        &self.cif.grid
    }
    fn estimate(&self) -> &[f64] {
        &self.cif.cif[self.cause]
    }
    fn sigma(&self) -> Vec<f64> {
        self.cif.sigma_cif[self.cause].clone()
    }
    fn multiplier_sum(&self, xi: &[f64]) -> Vec<f64> {
        self.cif.multiplier_sums(xi).swap_remove(self.cause)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::analyze;
    use crate::cif::predict_cif;
    use crate::data::SubjectRecord;
    use crate::exec::Exec;
    use crate::grammar::TermGrammar;
    use crate::missingness::fit_cause_probability;
    use crate::mpple::fit_mpple;
    use crate::simulation::{generate_dataset, ScenarioConfig, THETAS};
    use approx::assert_relative_eq;

    fn fixture(seed: u64, n: usize, theta: usize, round: bool) -> (Dataset, TermGrammar) {
        let mut c = ScenarioConfig::new(1, n, THETAS[theta]).unwrap();
        c.seed = seed;
        let ds = generate_dataset(&c, 0).unwrap();
        let ds = if round {
            // coarsen times to create ties across causes and with censorings
            let recs = ds
                .records()
                .iter()
                .map(|r| SubjectRecord { time: ((r.time * 20.0).ceil() / 20.0).min(2.0), ..r.clone() })
                .collect();
            Dataset::new(recs, 2, ds.covariate_names().to_vec(), vec![], Some(2.0)).unwrap()
        } else {
            ds
        };
        let g = TermGrammar::parse(&["1", "t", "z1", "z2"], ds.covariate_names(), &[]).unwrap();
        (ds, g)
    }

    fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn influences_sum_to_zero() {
        for (seed, round) in [(1, false), (2, true), (3, true)] {
            let (ds, g) = fixture(seed, 300, 1, round);
            let an = analyze(&ds, &g, Exec::Sequential).unwrap();
            let n = ds.len() as f64;
            let tol = 1e-8 * n;
            for j in 0..2 {
                for c in an.influence.beta.psi[j].column_iter() {
                    assert!(c.sum().abs() < tol);
                }
                for c in an.influence.beta.total[j].column_iter() {
                    assert!(c.sum().abs() < tol);
                }
                let ch = &an.influence.cumhaz[j];
                for gi in 0..ch.grid().len() {
                    assert!(ch.column(gi).iter().sum::<f64>().abs() < tol);
                }
                let cz = covariate_cumhaz_influence(&an.influence, j, &[0.5, 1.0]).unwrap();
                for gi in 0..ch.grid().len() {
                    assert!(cz.column(gi).iter().sum::<f64>().abs() < tol);
                }
            }
            let ci = cif_influence(&an.influence, &[0.5, 1.0]).unwrap();
            assert!(ci.max_abs_column_sum() < tol, "{}", ci.max_abs_column_sum());
        }
    }

    #[test]
    fn compact_multipliers_match_dense() {
        let (ds, g) = fixture(4, 150, 2, true);
        let an = analyze(&ds, &g, Exec::Sequential).unwrap();
        let xi = crate::bands::multiplier_draws(8, 0, ds.len());
        let check = |compact: Vec<f64>, dense: &DenseInfluence| {
            let d = dense.multiplier_sum(&xi);
            for (a, b) in compact.iter().zip(&d) {
                assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()), "{a} vs {b}");
            }
        };
        for j in 0..2 {
            let ch = &an.influence.cumhaz[j];
            let dense = ch.to_dense();
            check(ch.multiplier_sum(&xi), &dense);
            for (a, b) in ch.sigma().iter().zip(dense.sigma()) {
                assert_relative_eq!(*a, b, max_relative = 1e-12);
            }
            assert_relative_eq!(ch.covariance(3, 3), ch.sigma()[3].powi(2), max_relative = 1e-12);
            let cz = covariate_cumhaz_influence(&an.influence, j, &[0.3, 1.0]).unwrap();
            let mut dz = DMatrix::zeros(ds.len(), ch.grid().len());
            for gi in 0..ch.grid().len() {
                dz.column_mut(gi).copy_from_slice(&cz.column(gi));
            }
            check(cz.multiplier_sum(&xi), &DenseInfluence { grid: vec![], estimate: vec![], values: dz });
        }
        let ci = cif_influence(&an.influence, &[0.3, 1.0]).unwrap();
        for j in 0..2 {
            let dense = ci.to_dense(j);
            check(ci.process(j).multiplier_sum(&xi), &dense);
            for (a, b) in ci.sigma_cif(j).iter().zip(dense.sigma()) {
                assert_relative_eq!(*a, b, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn zero_z0_reduces_to_baseline_influence() {
        let (ds, g) = fixture(5, 120, 0, false);
        let an = analyze(&ds, &g, Exec::Sequential).unwrap();
        let cz = covariate_cumhaz_influence(&an.influence, 0, &[0.0, 0.0]).unwrap();
        let ch = &an.influence.cumhaz[0];
        for gi in [0, 5, ch.grid().len() - 1] {
            assert_eq!(cz.column(gi), ch.column(gi));
        }
    }

    #[test]
    fn no_missingness_kills_corrections() {
        let (ds, g) = fixture(6, 150, 0, false);
        let recs: Vec<SubjectRecord> = ds
            .records()
            .iter()
            .map(|r| if r.is_missing_cause() { SubjectRecord::censored(r.time, r.covariates.clone(), vec![]) } else { r.clone() })
            .collect();
        let ds = Dataset::new(recs, 2, ds.covariate_names().to_vec(), vec![], None).unwrap();
        let an = analyze(&ds, &g, Exec::Sequential).unwrap();
        for j in 0..2 {
            assert!(an.influence.beta.r[j].iter().all(|&v| v == 0.0));
            assert_eq!(an.influence.beta.psi[j], an.influence.beta.total[j]);
            let ch = &an.influence.cumhaz[j];
            for gi in 0..ch.grid().len() {
                assert!(ch.r_star(gi).iter().all(|&v| v == 0.0));
                assert_eq!(ch.value(7, gi), ch.phi(7, gi));
            }
        }
    }

    #[test]
    fn hand_two_jump_instance() {
        // A fails from cause 1 at t = 1, B from cause 2 at t = 2, C censored at 3; no covariate effect
        let recs = vec![
            SubjectRecord::failure(1.0, Some(0), vec![0.0], vec![]),
            SubjectRecord::failure(2.0, Some(1), vec![0.0], vec![]),
            SubjectRecord::censored(3.0, vec![0.0], vec![]),
        ];
        let ds = Dataset::new(recs, 2, vec!["z".into()], vec![], None).unwrap();
        let g = TermGrammar::parse(&["1"], ds.covariate_names(), &[]).unwrap();
        let an = analyze(&ds, &g, Exec::Sequential).unwrap();
        let c1 = an.influence.cumhaz[0].column(0);
        for (a, b) in c1.iter().zip([2.0 / 3.0, -1.0 / 3.0, -1.0 / 3.0]) {
            assert_relative_eq!(*a, b, epsilon = 1e-14);
        }
        let c2 = an.influence.cumhaz[1].column(0);
        for (a, b) in c2.iter().zip([0.0, 0.75, -0.75]) {
            assert_relative_eq!(*a, b, epsilon = 1e-14);
        }
        let ci = cif_influence(&an.influence, &[0.0]).unwrap();
        assert_eq!(ci.grid(), &[1.0, 2.0]);
        let f2 = ci.to_dense(1);
        let s = (-1.0f64 / 3.0).exp();
        // left limits: survival and the summed hazard influences are taken at t = 1
        let expected = [-s / 3.0, s * 11.0 / 12.0, -s * 7.0 / 12.0];
        for i in 0..3 {
            assert_eq!(f2.values[(i, 0)], 0.0);
            assert_relative_eq!(f2.values[(i, 1)], expected[i], epsilon = 1e-14);
        }
        let f1 = ci.to_dense(0);
        for i in 0..3 {
            assert_relative_eq!(f1.values[(i, 0)], c1[i], epsilon = 1e-14);
            assert_relative_eq!(f1.values[(i, 1)], c1[i], epsilon = 1e-14);
        }
        assert_relative_eq!(ci.cif(1)[1], s * 0.5, epsilon = 1e-15);
    }

    #[test]
    fn jackknife_oracle() {
        // leave-one-out pseudo-values (n - 1)(theta_hat - theta_hat_{-i}) approximate
        // infl_i up to an O(1/n) remainder (about 5% at n = 200, 1.4% at n = 800)
        let (ds, g) = fixture(7, 300, 1, false);
        let n = ds.len();
        let an = analyze(&ds, &g, Exec::Sequential).unwrap();
        let z0 = [0.5, 1.0];
        let times = [0.3, 0.8, 1.4];
        let full_cif = predict_cif(&an.fit, &z0).unwrap();
        let ci = cif_influence(&an.influence, &z0).unwrap();
        let cz = covariate_cumhaz_influence(&an.influence, 0, &z0).unwrap();
        let ch = &an.influence.cumhaz[0];
        let at = |grid: &[f64], t: f64| grid.partition_point(|&x| x <= t) - 1;

        let mut jack_beta = vec![Vec::new(); 2];
        let mut jack_lam = vec![Vec::new(); times.len()];
        let mut jack_lz = vec![Vec::new(); times.len()];
        let mut jack_f = vec![Vec::new(); times.len()];
        for i in 0..n {
            let keep: Vec<usize> = (0..n).filter(|&l| l != i).collect();
            let sub = ds.subset(&keep).unwrap();
            let mf = fit_cause_probability(&sub, &g).unwrap();
            let cf = fit_mpple(&sub, &mf).unwrap();
            let m1 = (n - 1) as f64;
            for (m, jb) in jack_beta.iter_mut().enumerate() {
                jb.push(m1 * (an.fit.cause(0).beta[m] - cf.cause(0).beta[m]));
            }
            let fz = predict_cif(&cf, &z0).unwrap();
            let lz_full = crate::mpple::cumhaz_at_covariate(&an.fit, 0, &z0).unwrap();
            let lz_sub = crate::mpple::cumhaz_at_covariate(&cf, 0, &z0).unwrap();
            for (k, &t) in times.iter().enumerate() {
                jack_lam[k].push(m1 * (an.fit.cause(0).baseline.eval(t) - cf.cause(0).baseline.eval(t)));
                jack_lz[k].push(m1 * (lz_full.eval(t) - lz_sub.eval(t)));
                jack_f[k].push(m1 * (full_cif[0].eval(t) - fz[0].eval(t)));
            }
        }
        let mut worst = 0.0f64;
        for (m, jb) in jack_beta.iter().enumerate() {
            let infl: Vec<f64> = an.influence.beta.total[0].column(m).iter().copied().collect();
            worst = worst.max(rel_diff(jb, &infl));
            // dropping the cause-probability correction is clearly detected
            let psi: Vec<f64> = an.influence.beta.psi[0].column(m).iter().copied().collect();
            assert!(rel_diff(jb, &psi) > 0.2);
        }
        for (k, &t) in times.iter().enumerate() {
            worst = worst.max(rel_diff(&jack_lam[k], &ch.column(at(ch.grid(), t))));
            worst = worst.max(rel_diff(&jack_lz[k], &cz.column(at(ch.grid(), t))));
            let col = ci.to_dense(0);
            let mi = at(ci.grid(), t);
            let infl: Vec<f64> = col.values.column(mi).iter().copied().collect();
            worst = worst.max(rel_diff(&jack_f[k], &infl));
        }
        assert!(worst < 0.05, "worst relative L2 discrepancy {worst}");
    }
}
