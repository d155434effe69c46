//! Covariate-specific cumulative incidence functions
//! `F_j(t; z0) = sum_{s <= t} exp[-sum_l Lambda_l(s-; z0)] dLambda_j(s; z0)`
//! on the merged jump grid of all causes.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::bands::Band;
use crate::error::{Error, Result};
use crate::influence::CifInfluence;
use crate::linalg::dot;
use crate::mpple::CauseSpecificFit;
use crate::step::{merge_grids, StepFunction};

/// Estimated cumulative incidence for one cause at one covariate vector.
#[derive(Debug, Clone)]
pub struct CifCurve {
    pub cause: usize,
    pub z0: Vec<f64>,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub se: Option<Vec<f64>>,
    /// Pointwise interval on the log(-log) scale; `None` where `F = 0` or `F = 1`.
    pub pointwise: Option<Vec<Option<(f64, f64)>>>,
    pub band: Option<Band>,
}

impl CifCurve {
    pub fn step(&self) -> StepFunction {
        StepFunction::new(self.grid.clone(), self.values.clone())
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self.grid.partition_point(|&g| g <= t) {
            0 => 0.0,
            m => self.values[m - 1],
        }
    }
}

/// Plug-in CIF for every cause from per-cause cumulative hazards already
/// evaluated at `z0` (each on its own jump grid).
pub fn cif_from_cumhaz(cumhaz: &[StepFunction]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let grid = merge_grids(cumhaz.iter().map(|c| c.times()));
    let k = cumhaz.len();
    let on_grid: Vec<Vec<f64>> = cumhaz.iter().map(|c| c.eval_many(&grid)).collect();
    let mut out = vec![Vec::with_capacity(grid.len()); k];
    let mut acc = vec![0.0; k];
    let mut prev = vec![0.0; k];
    for m in 0..grid.len() {
        let s = (-prev.iter().sum::<f64>()).exp();
        for j in 0..k {
            acc[j] += s * (on_grid[j][m] - prev[j]);
            out[j].push(acc[j]);
        }
        for j in 0..k {
            prev[j] = on_grid[j][m];
        }
    }
    (grid, out)
}

fn check_z0(fit: &CauseSpecificFit, z0: &[f64]) -> Result<()> {
    let p = fit.cause(0).beta.len();
    if z0.len() != p {
        return Err(Error::DimensionMismatch { expected: p, got: z0.len() });
    }
    Ok(())
}

/// `F_hat_j(t; z0)` for all causes on the merged grid.
pub fn predict_cif(fit: &CauseSpecificFit, z0: &[f64]) -> Result<Vec<CifCurve>> {
    check_z0(fit, z0)?;
    let cumhaz: Vec<StepFunction> =
        fit.causes.iter().map(|c| c.baseline.scaled(dot(&c.beta, z0).exp())).collect();
    let (grid, values) = cif_from_cumhaz(&cumhaz);
    Ok(values
        .into_iter()
        .enumerate()
        .map(|(cause, values)| CifCurve {
            cause,
            z0: z0.to_vec(),
            grid: grid.clone(),
            values,
            se: None,
            pointwise: None,
            band: None,
        })
        .collect())
}

/// Pointwise `1 - alpha` interval for `F` on the log(-log) scale.
pub fn loglog_interval(f: f64, se: f64, alpha: f64) -> Option<(f64, f64)> {
    if !(f > 0.0 && f < 1.0) || !se.is_finite() {
        return None;
    }
    let z = Normal::standard().inverse_cdf(1.0 - alpha / 2.0);
    let d = z * se / (f * f.ln()).abs();
    Some((f.powf(d.exp()), f.powf((-d).exp())))
}

/// CIF curves with influence-function standard errors and pointwise intervals.
pub fn cif_with_uncertainty(infl: &CifInfluence<'_>, alpha: f64) -> Result<Vec<CifCurve>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let rn = (infl.n() as f64).sqrt();
    Ok((0..infl.k())
        .map(|j| {
            let values = infl.cif(j).to_vec();
            let se: Vec<f64> = infl.sigma_cif(j).iter().map(|s| s / rn).collect();
            let pointwise = values.iter().zip(&se).map(|(&f, &s)| loglog_interval(f, s, alpha)).collect();
            CifCurve {
                cause: j,
                z0: infl.z0().to_vec(),
                grid: infl.grid().to_vec(),
                values,
                se: Some(se),
                pointwise: Some(pointwise),
                band: None,
            }
        })
        .collect())
}
