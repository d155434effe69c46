//! Parametric model for the cause of failure given `W = (T, Z, A)`, fitted
//! by maximum likelihood on complete cases.
//!
//! For `k` causes the model is a generalized logit with the last cause as
//! reference: `gamma` stacks `k - 1` coefficient blocks, one per
//! non-reference cause, each the length of the term grammar. With `k = 2`
//! this is the ordinary binary logit for cause 1.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::data::{Dataset, SubjectRecord};
use crate::error::{Error, Result};
use crate::grammar::{design_row, TermGrammar};
use crate::linalg::{condition_ratio, inverse_spd, max_abs, solve_spd};

const SCORE_TOL: f64 = 1e-8;
const MAX_ITER: usize = 100;
const MAX_HALVINGS: usize = 20;
const SEPARATION_BOUND: f64 = 50.0;
const RANK_TOL: f64 = 1e-12;

/// Fitted cause-probability model together with the per-subject
/// influence vectors of its coefficients.
#[derive(Debug, Clone)]
pub struct MissingnessFit {
    gamma: Vec<f64>,
    grammar: TermGrammar,
    k: usize,
    fisher_info: DMatrix<f64>,
    omega: DMatrix<f64>,
    loglik: f64,
    converged: bool,
    iterations: usize,
    trace: Vec<f64>,
}

impl MissingnessFit {
    /// Log-likelihood at the start and after each accepted step.
    pub fn loglik_trace(&self) -> &[f64] {
        &self.trace
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn grammar(&self) -> &TermGrammar {
        &self.grammar
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Length of `gamma`.
    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    /// Total (not per-subject) Fisher information at the estimate.
    pub fn fisher_info(&self) -> &DMatrix<f64> {
        &self.fisher_info
    }

    /// `n x dim` matrix of influence vectors; row `i` is zero unless subject
    /// `i` is a complete-case failure.
    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn loglik(&self) -> f64 {
        self.loglik
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Model-based standard errors from the inverse information.
    pub fn standard_errors(&self) -> Result<Vec<f64>> {
        let inv = inverse_spd(&self.fisher_info, "cause-probability information")?;
        Ok((0..self.dim()).map(|i| inv[(i, i)].max(0.0).sqrt()).collect())
    }

    /// Cause probabilities at a design row.
    pub fn probabilities_at_row(&self, row: &[f64]) -> Vec<f64> {
        probabilities(&self.gamma, self.k, row)
    }

    /// Gradient of the cause-`j` probability with respect to `gamma`.
    pub fn gradient_at_row(&self, row: &[f64], probs: &[f64], j: usize) -> Vec<f64> {
        probability_gradient(self.k, row, probs, j)
    }

    pub fn report(&self) -> Result<MissingnessReport> {
        Ok(MissingnessReport {
            terms: self.grammar.to_strings(),
            reference_cause: self.k,
            gamma: self.gamma.clone(),
            se: self.standard_errors()?,
            loglik: self.loglik,
            iterations: self.iterations,
            converged: self.converged,
        })
    }
}

/// Serializable summary of a [`MissingnessFit`].
#[derive(Debug, Clone, Serialize)]
pub struct MissingnessReport {
    pub terms: Vec<String>,
    /// One-based label of the reference cause.
    pub reference_cause: usize,
    pub gamma: Vec<f64>,
    pub se: Vec<f64>,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn probabilities(gamma: &[f64], k: usize, row: &[f64]) -> Vec<f64> {
    let d = row.len();
    let mut eta: Vec<f64> = (0..k - 1)
        .map(|l| gamma[l * d..(l + 1) * d].iter().zip(row).map(|(g, w)| g * w).sum())
        .collect();
    eta.push(0.0);
    let m = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for e in &mut eta {
        *e = (*e - m).exp();
        total += *e;
    }
    eta.iter_mut().for_each(|e| *e /= total);
    eta
}

// d pi_j / d gamma_l = pi_j (1{j = l} - pi_l) w  for the non-reference blocks l.
fn probability_gradient(k: usize, row: &[f64], probs: &[f64], j: usize) -> Vec<f64> {
    let d = row.len();
    let mut g = vec![0.0; (k - 1) * d];
    for l in 0..k - 1 {
        let c = probs[j] * (f64::from(u8::from(j == l)) - probs[l]);
        g[l * d..(l + 1) * d].iter_mut().zip(row).for_each(|(gi, w)| *gi = c * w);
    }
    g
}

struct CompleteCases {
    rows: Vec<Vec<f64>>,
    causes: Vec<usize>,
    subjects: Vec<usize>,
}

fn complete_cases(dataset: &Dataset, grammar: &TermGrammar) -> Result<CompleteCases> {
    let mut cc = CompleteCases { rows: Vec::new(), causes: Vec::new(), subjects: Vec::new() };
    for (i, r) in dataset.records().iter().enumerate() {
        if let (true, Some(c)) = (r.is_complete_failure(), r.cause) {
            cc.rows.push(design_row(grammar, r)?);
            cc.causes.push(c);
            cc.subjects.push(i);
        }
    }
    Ok(cc)
}

struct Evaluation {
    loglik: f64,
    score: Vec<f64>,
    info: DMatrix<f64>,
}

fn evaluate(gamma: &[f64], k: usize, cc: &CompleteCases) -> Evaluation {
    let d = gamma.len() / (k - 1);
    let dim = gamma.len();
    let mut loglik = 0.0;
    let mut score = vec![0.0; dim];
    let mut info = DMatrix::zeros(dim, dim);
    for (row, &c) in cc.rows.iter().zip(&cc.causes) {
        let pi = probabilities(gamma, k, row);
        loglik += pi[c].ln();
        for l in 0..k - 1 {
            let resid = f64::from(u8::from(c == l)) - pi[l];
            for a in 0..d {
                score[l * d + a] += resid * row[a];
            }
            for m in 0..k - 1 {
                let v = pi[l] * (f64::from(u8::from(l == m)) - pi[m]);
                for a in 0..d {
                    for b in 0..d {
                        info[(l * d + a, m * d + b)] += v * row[a] * row[b];
                    }
                }
            }
        }
    }
    Evaluation { loglik, score, info }
}

/// Maximum likelihood fit of the cause-probability model on complete cases.
pub fn fit_cause_probability(dataset: &Dataset, grammar: &TermGrammar) -> Result<MissingnessFit> {
    let k = dataset.k();
    let cc = complete_cases(dataset, grammar)?;
    for cause in 0..k {
        if !cc.causes.contains(&cause) {
            return Err(Error::NoCompleteCases { cause: cause + 1 });
        }
    }
    let dim = (k - 1) * grammar.len();
    let mut gamma = vec![0.0; dim];
    let mut eval = evaluate(&gamma, k, &cc);
    if condition_ratio(&eval.info) < RANK_TOL {
        return Err(Error::RankDeficient("cause-probability design over complete cases".into()));
    }

    let mut trace = vec![eval.loglik];
    let mut iterations = 0;
    let mut converged = max_abs(&eval.score) < SCORE_TOL;
    // One extra Newton step after the tolerance is met pushes the score
    // down to rounding level.
    let mut polish = converged;
    while iterations < MAX_ITER && (!converged || polish) {
        let delta = solve_spd(&eval.info, &eval.score, "cause-probability information")?;
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand: Vec<f64> = gamma.iter().zip(&delta).map(|(g, d)| g + step * d).collect();
            let ev = evaluate(&cand, k, &cc);
            if ev.loglik.is_finite() && ev.loglik >= eval.loglik - 1e-12 * (1.0 + eval.loglik.abs()) {
                accepted = Some((cand, ev));
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        let Some((cand, ev)) = accepted else {
            if converged {
                break;
            }
            return Err(Error::NotConverged { what: "cause-probability model".into(), iterations });
        };
        gamma = cand;
        eval = ev;
        trace.push(eval.loglik);
        if max_abs(&gamma) > SEPARATION_BOUND {
            return Err(Error::Separation { bound: SEPARATION_BOUND });
        }
        if converged {
            polish = false;
        } else if max_abs(&eval.score) < SCORE_TOL {
            converged = true;
            polish = true;
        }
    }
    if !converged {
        return Err(Error::NotConverged { what: "cause-probability model".into(), iterations });
    }
    if condition_ratio(&eval.info) < RANK_TOL {
        return Err(Error::RankDeficient("information singular at the estimate".into()));
    }
    let omega = omega_matrix(&gamma, k, &eval.info, &cc, dataset.len())?;
    Ok(MissingnessFit {
        gamma,
        grammar: grammar.clone(),
        k,
        fisher_info: eval.info,
        omega,
        loglik: eval.loglik,
        converged,
        iterations,
        trace,
    })
}

// omega_i = (I / n)^{-1} U_i, so that sqrt(n)(gamma_hat - gamma) ~ n^{-1/2} sum_i omega_i.
fn omega_matrix(gamma: &[f64], k: usize, info: &DMatrix<f64>, cc: &CompleteCases, n: usize) -> Result<DMatrix<f64>> {
    let dim = gamma.len();
    let d = dim / (k - 1);
    let inv = inverse_spd(info, "cause-probability information")? * n as f64;
    let mut omega = DMatrix::zeros(n, dim);
    let mut u = vec![0.0; dim];
    for ((row, &c), &i) in cc.rows.iter().zip(&cc.causes).zip(&cc.subjects) {
        let pi = probabilities(gamma, k, row);
        for l in 0..k - 1 {
            let resid = f64::from(u8::from(c == l)) - pi[l];
            for a in 0..d {
                u[l * d + a] = resid * row[a];
            }
        }
        for r in 0..dim {
            omega[(i, r)] = (0..dim).map(|s| inv[(r, s)] * u[s]).sum();
        }
    }
    Ok(omega)
}

/// Recomputes the per-subject influence vectors of a fit on `dataset`.
pub fn influence_omega(fit: &MissingnessFit, dataset: &Dataset) -> Result<DMatrix<f64>> {
    let cc = complete_cases(dataset, &fit.grammar)?;
    omega_matrix(&fit.gamma, fit.k, &fit.fisher_info, &cc, dataset.len())
}

/// Cause probabilities for a failure record.
pub fn predict_pi(fit: &MissingnessFit, record: &SubjectRecord) -> Result<Vec<f64>> {
    let row = design_row(&fit.grammar, record)?;
    Ok(fit.probabilities_at_row(&row))
}

/// Analytic gradient of the probability of cause `j` (zero-based) with
/// respect to the stacked coefficients.
pub fn pi_gradient(fit: &MissingnessFit, record: &SubjectRecord, j: usize) -> Result<Vec<f64>> {
    if j >= fit.k {
        return Err(Error::InvalidArgument(format!("cause index {j} out of range")));
    }
    let row = design_row(&fit.grammar, record)?;
    let probs = fit.probabilities_at_row(&row);
    Ok(fit.gradient_at_row(&row, &probs, j))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intercept_only(counts: &[usize]) -> (Dataset, TermGrammar) {
        let mut recs = Vec::new();
        for (c, &m) in counts.iter().enumerate() {
            for i in 0..m {
                recs.push(SubjectRecord::failure(1.0 + i as f64, Some(c), vec![0.0], vec![]));
            }
        }
        recs.push(SubjectRecord::censored(3.0, vec![0.0], vec![]));
        recs.push(SubjectRecord::failure(2.5, None, vec![0.0], vec![]));
        let ds = Dataset::new(recs, counts.len(), vec!["z".into()], vec![], None).unwrap();
        let g = TermGrammar::parse(&["1"], ds.covariate_names(), &[]).unwrap();
        (ds, g)
    }

    #[test]
    fn balanced_intercept_is_zero() {
        let (ds, g) = intercept_only(&[10, 10]);
        let fit = fit_cause_probability(&ds, &g).unwrap();
        assert!(fit.gamma()[0].abs() < 1e-12);
        // converged at the start; at most the single polishing step is taken
        assert!(fit.iterations() <= 1);
    }

    #[test]
    fn intercept_is_empirical_logit() {
        let (ds, g) = intercept_only(&[15, 5]);
        let fit = fit_cause_probability(&ds, &g).unwrap();
        assert_relative_eq!(fit.gamma()[0], 3f64.ln(), epsilon = 1e-10);
        // the multinomial version recovers log(n_j / n_k)
        let (ds, g) = intercept_only(&[6, 3, 12]);
        let fit = fit_cause_probability(&ds, &g).unwrap();
        assert_relative_eq!(fit.gamma()[0], 0.5f64.ln(), epsilon = 1e-10);
        assert_relative_eq!(fit.gamma()[1], 0.25f64.ln(), epsilon = 1e-10);
    }

    #[test]
    fn no_complete_case_for_a_cause() {
        let (ds, g) = intercept_only(&[5, 0]);
        assert!(matches!(fit_cause_probability(&ds, &g), Err(Error::NoCompleteCases { cause: 2 })));
    }

    #[test]
    fn separation_is_reported() {
        let mut recs = Vec::new();
        for i in 0..20 {
            let z = i as f64;
            recs.push(SubjectRecord::failure(1.0, Some(usize::from(i >= 10)), vec![z], vec![]));
        }
        let ds = Dataset::new(recs, 2, vec!["z".into()], vec![], None).unwrap();
        let g = TermGrammar::parse(&["1", "z"], ds.covariate_names(), &[]).unwrap();
        assert!(matches!(fit_cause_probability(&ds, &g), Err(Error::Separation { .. })));
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let mut recs = Vec::new();
        for i in 0..20 {
            recs.push(SubjectRecord::failure(1.0 + i as f64, Some(i % 2), vec![1.0, 2.0], vec![]));
        }
        let ds = Dataset::new(recs, 2, vec!["z1".into(), "z2".into()], vec![], None).unwrap();
        let g = TermGrammar::parse(&["1", "z1"], ds.covariate_names(), &[]).unwrap();
        assert!(matches!(fit_cause_probability(&ds, &g), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn probability_identities() {
        let row = [1.0, 2.0];
        let p = probabilities(&[0.0, 0.0, 0.0, 0.0], 3, &row);
        p.iter().for_each(|&v| assert_relative_eq!(v, 1.0 / 3.0, epsilon = 1e-15));
        let p = probabilities(&[3f64.ln(), 0.0], 2, &[1.0, 0.0]);
        assert_relative_eq!(p[0], 0.75, epsilon = 1e-15);
        assert_relative_eq!(p[1], 0.25, epsilon = 1e-15);
        let g = probability_gradient(2, &row, &[0.5, 0.5], 0);
        assert_eq!(g, vec![0.25, 0.5]);
        let g2 = probability_gradient(2, &row, &[0.5, 0.5], 1);
        assert_eq!(g2, vec![-0.25, -0.5]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let k = rng.random_range(2..5);
            let d = 3;
            let gamma: Vec<f64> = (0..(k - 1) * d).map(|_| rng.random_range(-3.0..3.0)).collect();
            let row: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let p = probabilities(&gamma, k, &row);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let k = rng.random_range(2..5);
            let d = 3;
            let gamma: Vec<f64> = (0..(k - 1) * d).map(|_| rng.random_range(-1.5..1.5)).collect();
            let row: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let p = probabilities(&gamma, k, &row);
            for j in 0..k {
                let g = probability_gradient(k, &row, &p, j);
                let h = 1e-6;
                for r in 0..gamma.len() {
                    let mut up = gamma.clone();
                    let mut dn = gamma.clone();
                    up[r] += h;
                    dn[r] -= h;
                    let fd = (probabilities(&up, k, &row)[j] - probabilities(&dn, k, &row)[j]) / (2.0 * h);
                    assert!((fd - g[r]).abs() <= 1e-6 * fd.abs().max(1e-3), "{fd} vs {}", g[r]);
                }
            }
        }
    }

    fn random_instance(seed: u64, k: usize, n: usize) -> (Dataset, TermGrammar) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let recs = (0..n)
            .map(|_| {
                let z = rng.random_range(-1.0..1.0);
                let t = rng.random_range(0.1..2.0);
                SubjectRecord::failure(t, Some(rng.random_range(0..k)), vec![z], vec![])
            })
            .collect();
        let ds = Dataset::new(recs, k, vec!["z".into()], vec![], None).unwrap();
        let g = TermGrammar::parse(&["1", "t", "z"], ds.covariate_names(), &[]).unwrap();
        (ds, g)
    }

    #[test]
    fn score_and_information_match_finite_differences() {
        for (seed, k) in [(1u64, 2usize), (2, 3)] {
            let (ds, g) = random_instance(seed, k, 30);
            let cc = complete_cases(&ds, &g).unwrap();
            let dim = (k - 1) * g.len();
            let gamma: Vec<f64> = (0..dim).map(|i| 0.1 * i as f64 - 0.2).collect();
            let ev = evaluate(&gamma, k, &cc);
            let h = 1e-5;
            for r in 0..dim {
                let mut up = gamma.clone();
                let mut dn = gamma.clone();
                up[r] += h;
                dn[r] -= h;
                let eu = evaluate(&up, k, &cc);
                let ed = evaluate(&dn, k, &cc);
                let fd = (eu.loglik - ed.loglik) / (2.0 * h);
                assert!((fd - ev.score[r]).abs() <= 1e-6 * fd.abs().max(1.0));
                for s in 0..dim {
                    let fd2 = -(eu.score[s] - ed.score[s]) / (2.0 * h);
                    assert!((fd2 - ev.info[(r, s)]).abs() <= 1e-6 * fd2.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn omega_sums_to_zero_and_vanishes_off_complete_cases() {
        let (ds, g) = intercept_only(&[12, 7]);
        let fit = fit_cause_probability(&ds, &g).unwrap();
        let n = ds.len();
        for (i, r) in ds.records().iter().enumerate() {
            if !r.is_complete_failure() {
                assert!(fit.omega().row(i).iter().all(|&v| v == 0.0));
            }
        }
        for (seed, k) in [(5u64, 2usize), (6, 3)] {
            let (ds, g) = random_instance(seed, k, 80);
            let fit = fit_cause_probability(&ds, &g).unwrap();
            for c in 0..fit.dim() {
                assert!(fit.omega().column(c).sum().abs() < 1e-8);
            }
            let again = influence_omega(&fit, &ds).unwrap();
            assert_eq!(&again, fit.omega());
        }
        assert_eq!(fit.omega().nrows(), n);
    }

    #[test]
    fn loglik_is_monotone_along_iterations() {
        let (ds, g) = random_instance(9, 3, 60);
        let fit = fit_cause_probability(&ds, &g).unwrap();
        let tr = fit.loglik_trace();
        assert!(tr.len() >= 2);
        for w in tr.windows(2) {
            assert!(w[1] >= w[0] - 1e-12 * (1.0 + w[0].abs()), "{w:?}");
        }
        assert_eq!(*tr.last().unwrap(), fit.loglik());
        assert!(fit.converged());
    }
}
