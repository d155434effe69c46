//! Cumulative-residual goodness-of-fit test for the cause-probability model.
//!
//! The process is `n^{-1} sum_i R_i Delta_i 1{X_i <= t} [Delta_ij - pi_j(W_i, gamma_hat)]`.
//! Its null distribution is approximated by multiplier resampling of the
//! per-subject terms `R_i Delta_i 1{X_i <= t}[Delta_ij - pi_ij] - C_j(t)' omega_i`,
//! where `C_j(t) = n^{-1} sum_i R_i Delta_i 1{X_i <= t} dpi_j/dgamma` accounts
//! for estimating `gamma`.

use serde::Serialize;

use crate::bands::{critical_value, multiplier_draws};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::grammar::design_row;
use crate::linalg::dot;
use crate::missingness::MissingnessFit;
use crate::step::StepFunction;

#[derive(Debug, Clone, Serialize)]
pub struct GofResult {
    /// Zero-based cause index.
    pub cause: usize,
    /// Distinct complete-case failure times.
    pub grid: Vec<f64>,
    pub process: Vec<f64>,
    pub p_value: f64,
    /// `sqrt(n) sup_t |process(t)|`.
    pub sup_obs: f64,
    pub c_alpha: f64,
    /// `c_alpha / sqrt(n)`; the null band is `[-half_width, half_width]`.
    pub half_width: f64,
    pub alpha: f64,
    pub b: usize,
    pub seed: u64,
}

/// Residual pieces on the complete-case grid.
struct Residuals {
    n: usize,
    grid: Vec<f64>,
    /// Per subject: grid index and residual `Delta_ij - pi_ij` (complete cases only).
    terms: Vec<(usize, usize, f64)>,
    /// Cumulative `C_j(t)`, row-major `G x dim`.
    c: Vec<f64>,
    dim: usize,
}

fn residuals(dataset: &Dataset, mfit: &MissingnessFit, j: usize) -> Result<Residuals> {
    if j >= dataset.k() || mfit.k() != dataset.k() {
        return Err(Error::InvalidArgument(format!("cause {} out of range", j + 1)));
    }
    let n = dataset.len();
    let mut cases = Vec::new();
    for (i, r) in dataset.records().iter().enumerate() {
        if r.is_complete_failure() {
            cases.push((i, r.time));
        }
    }
    let mut grid: Vec<f64> = cases.iter().map(|c| c.1).collect();
    grid.sort_by(|a, b| a.total_cmp(b));
    grid.dedup();
    let dim = mfit.dim();
    let mut dc = vec![0.0; grid.len() * dim];
    let mut terms = Vec::with_capacity(cases.len());
    for (i, t) in cases {
        let r = &dataset.records()[i];
        let row = design_row(mfit.grammar(), r)?;
        let probs = mfit.probabilities_at_row(&row);
        let grad = mfit.gradient_at_row(&row, &probs, j);
        let g = grid.partition_point(|&x| x < t);
        let obs = if r.cause == Some(j) { 1.0 } else { 0.0 };
        terms.push((i, g, obs - probs[j]));
        dc[g * dim..(g + 1) * dim].iter_mut().zip(&grad).for_each(|(d, v)| *d += v / n as f64);
    }
    for g in 1..grid.len() {
        for c in 0..dim {
            dc[g * dim + c] += dc[(g - 1) * dim + c];
        }
    }
    Ok(Residuals { n, grid, terms, c: dc, dim })
}

/// The cumulative residual process for cause `j` as a step function.
pub fn residual_process(dataset: &Dataset, mfit: &MissingnessFit, j: usize) -> Result<StepFunction> {
    let res = residuals(dataset, mfit, j)?;
    let mut jumps = vec![0.0; res.grid.len()];
    for &(_, g, e) in &res.terms {
        jumps[g] += e / res.n as f64;
    }
    Ok(StepFunction::from_jumps(res.grid, &jumps))
}

/// Supremum test and null band for the cause-`j` residual process.
pub fn gof_test(
    dataset: &Dataset,
    mfit: &MissingnessFit,
    j: usize,
    b: usize,
    alpha: f64,
    seed: u64,
    exec: Exec,
) -> Result<GofResult> {
    if b < 100 {
        return Err(Error::InvalidArgument(format!("B must be at least 100, got {b}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let res = residuals(dataset, mfit, j)?;
    let n = res.n;
    let rn = (n as f64).sqrt();
    let gsize = res.grid.len();
    let mut jumps = vec![0.0; gsize];
    for &(_, g, e) in &res.terms {
        jumps[g] += e / n as f64;
    }
    let process = StepFunction::from_jumps(res.grid.clone(), &jumps).values().to_vec();
    let sup_obs = rn * process.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let omega = mfit.omega();
    let sups = exec.map(b, |rep| {
        let xi = multiplier_draws(seed, rep, n);
        let mut bucket = vec![0.0; gsize];
        for &(i, g, e) in &res.terms {
            bucket[g] += xi[i] * e;
        }
        let mut xo = vec![0.0; res.dim];
        for (i, x) in xi.iter().enumerate() {
            for (c, v) in xo.iter_mut().enumerate() {
                *v += x * omega[(i, c)];
            }
        }
        let mut acc = 0.0;
        let mut sup = 0.0f64;
        for g in 0..gsize {
            acc += bucket[g];
            let w = (acc - dot(&res.c[g * res.dim..(g + 1) * res.dim], &xo)) / rn;
            sup = sup.max(w.abs());
        }
        sup
    });
    let exceed = sups.iter().filter(|&&s| s >= sup_obs).count();
    let c_alpha = critical_value(&sups, alpha);
    Ok(GofResult {
        cause: j,
        grid: res.grid,
        process,
        p_value: (1 + exceed) as f64 / (b + 1) as f64,
        sup_obs,
        c_alpha,
        half_width: c_alpha / rn,
        alpha,
        b,
        seed,
    })
}
