//! Serializable reports and plot-ready CSV outputs. Numbers are written with
//! Rust's shortest round-trip formatting, so outputs are byte-stable.

use std::path::Path;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::analysis::Analysis;
use crate::bands::Band;
use crate::cif::CifCurve;
use crate::data::Dataset;
use crate::error::Result;
use crate::gof::GofResult;
use crate::study::StudySummary;

#[derive(Debug, Clone, Serialize)]
pub struct CoefficientReport {
    pub covariate: String,
    pub beta: f64,
    pub se: f64,
    pub hazard_ratio: f64,
    pub hr_lower: f64,
    pub hr_upper: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CauseReport {
    /// One-based cause label.
    pub cause: usize,
    pub coefficients: Vec<CoefficientReport>,
    pub iterations: usize,
    pub converged: bool,
    pub score_norm: f64,
    pub weighted_events: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub n: usize,
    pub failures: usize,
    pub missing_causes: usize,
    pub alpha: f64,
    pub causes: Vec<CauseReport>,
}

/// Coefficients, standard errors and hazard ratios with `1 - alpha` Wald intervals.
pub fn fit_report(dataset: &Dataset, an: &Analysis, alpha: f64) -> FitReport {
    let z = Normal::standard().inverse_cdf(1.0 - alpha / 2.0);
    let causes = (0..an.fit.k())
        .map(|j| {
            let cf = an.fit.cause(j);
            let se = an.beta_se(j);
            let coefficients = dataset
                .covariate_names()
                .iter()
                .zip(cf.beta.iter().zip(&se))
                .map(|(name, (&b, &s))| CoefficientReport {
                    covariate: name.clone(),
                    beta: b,
                    se: s,
                    hazard_ratio: b.exp(),
                    hr_lower: (b - z * s).exp(),
                    hr_upper: (b + z * s).exp(),
                })
                .collect();
            CauseReport {
                cause: j + 1,
                coefficients,
                iterations: cf.iterations,
                converged: cf.converged,
                score_norm: cf.score_norm,
                weighted_events: an.fit.weights.total(j),
            }
        })
        .collect();
    FitReport {
        n: dataset.len(),
        failures: dataset.n_failures(),
        missing_causes: dataset.records().iter().filter(|r| r.is_missing_cause()).count(),
        alpha,
        causes,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Columns `cause, time, dLambda, Lambda`.
pub fn write_baseline_csv(path: impl AsRef<Path>, an: &Analysis) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["cause", "time", "dLambda", "Lambda"])?;
    for (j, cf) in an.fit.causes.iter().enumerate() {
        let b = &cf.baseline;
        for ((t, d), l) in b.times().iter().zip(b.jumps()).zip(b.values()) {
            w.write_record([(j + 1).to_string(), t.to_string(), d.to_string(), l.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Columns `cause, time, cif, se, lower_pt, upper_pt` followed by one
/// `lower_band_<w>, upper_band_<w>` pair per supplied band (`w` = weight
/// label), or a single `lower_band, upper_band` pair when `bands` has one
/// entry per curve of a single weight. Cells outside a band's domain are empty.
pub fn write_cif_csv(path: impl AsRef<Path>, curves: &[CifCurve], bands: &[(&str, Vec<Option<Band>>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ["cause", "time", "cif", "se", "lower_pt", "upper_pt"].map(String::from).to_vec();
    if bands.len() == 1 {
        header.extend(["lower_band".to_string(), "upper_band".to_string()]);
    } else {
        for (label, _) in bands {
            header.extend([format!("lower_band_{label}"), format!("upper_band_{label}")]);
        }
    }
    w.write_record(&header)?;
    for (c, curve) in curves.iter().enumerate() {
        for (m, (&t, &f)) in curve.grid.iter().zip(&curve.values).enumerate() {
            let se = curve.se.as_ref().map(|s| s[m]);
            let pt = curve.pointwise.as_ref().and_then(|p| p[m]);
            let mut row = vec![
                (curve.cause + 1).to_string(),
                t.to_string(),
                f.to_string(),
                opt(se),
                opt(pt.map(|p| p.0)),
                opt(pt.map(|p| p.1)),
            ];
            for (_, per_curve) in bands {
                let lim = per_curve.get(c).and_then(|b| b.as_ref()).and_then(|b| band_at_grid(b, t));
                row.push(opt(lim.map(|l| l.0)));
                row.push(opt(lim.map(|l| l.1)));
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn band_at_grid(b: &Band, t: f64) -> Option<(f64, f64)> {
    let m = b.grid.iter().position(|&g| g == t)?;
    Some((b.lower[m], b.upper[m]))
}

/// Columns `cause, time, estimate, lower, upper`.
pub fn write_band_csv(path: impl AsRef<Path>, cause: usize, band: &Band) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["cause", "time", "estimate", "lower", "upper"])?;
    for g in 0..band.grid.len() {
        w.write_record([
            (cause + 1).to_string(),
            band.grid[g].to_string(),
            band.estimate[g].to_string(),
            band.lower[g].to_string(),
            band.upper[g].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `time, residual, band_lower, band_upper`.
pub fn write_gof_csv(path: impl AsRef<Path>, gof: &GofResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["time", "residual", "band_lower", "band_upper"])?;
    for (t, r) in gof.grid.iter().zip(&gof.process) {
        w.write_record([t.to_string(), r.to_string(), (-gof.half_width).to_string(), gof.half_width.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per estimand (bias, MCSD, ASE, coverage, MSE) plus one row per band coverage.
pub fn write_study_csv(path: impl AsRef<Path>, s: &StudySummary) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "scenario", "n", "theta", "replicates", "failed", "estimand", "truth", "bias", "mcsd", "ase", "cp", "mse",
        "censored_pct", "cause1_pct", "missing_pct",
    ])?;
    let theta = s.theta.map(|v| v.to_string()).join(" ");
    let head = [s.scenario.to_string(), s.n.to_string(), theta, s.replicates.to_string(), s.failed.to_string()];
    let tail = [s.censored_pct.to_string(), s.cause1_pct.to_string(), s.missing_pct.to_string()];
    for e in &s.estimands {
        let mid = [
            e.name.clone(),
            e.truth.to_string(),
            e.bias.to_string(),
            opt(e.mcsd),
            e.ase.to_string(),
            e.cp.to_string(),
            e.mse.to_string(),
        ];
        w.write_record(head.iter().chain(&mid).chain(&tail))?;
    }
    for b in &s.bands {
        let mid = [format!("band:{}", b.name), String::new(), String::new(), String::new(), String::new(), b.coverage.to_string(), String::new()];
        w.write_record(head.iter().chain(&mid).chain(&tail))?;
    }
    w.flush()?;
    Ok(())
}

/// Per-replicate estimates, standard errors and interval coverage.
pub fn write_replicates_csv(path: impl AsRef<Path>, s: &StudySummary, names: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["replicate", "estimand", "estimate", "se", "covered", "error"])?;
    for r in s.per_replicate.iter().flatten() {
        if let Some(e) = &r.error {
            w.write_record([r.index.to_string(), String::new(), String::new(), String::new(), String::new(), e.clone()])?;
            continue;
        }
        for (k, name) in names.iter().enumerate() {
            w.write_record([
                r.index.to_string(),
                name.clone(),
                r.estimates[k].to_string(),
                r.se[k].to_string(),
                u8::from(r.covered[k]).to_string(),
                String::new(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
