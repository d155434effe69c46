//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use mpple::{Dataset, SubjectRecord};

/// Classical Cox partial log-likelihood for one cause, Breslow ties, p = 1.
pub fn cox_loglik(ds: &Dataset, cause: usize, beta: f64) -> f64 {
    let recs = ds.records();
    recs.iter()
        .filter(|r| r.cause == Some(cause))
        .map(|ri| {
            let s0: f64 = recs.iter().filter(|l| l.time >= ri.time).map(|l| (beta * l.covariates[0]).exp()).sum();
            beta * ri.covariates[0] - s0.ln()
        })
        .sum()
}

pub fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    while b - a > 1e-12 {
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
    }
    0.5 * (a + b)
}

/// Classical robust (score-residual) standard error of the Cox estimate, p = 1.
pub fn robust_cox_se(ds: &Dataset, cause: usize, beta: f64) -> f64 {
    let recs = ds.records();
    let s = |t: f64, d: i32| -> f64 {
        recs.iter().filter(|l| l.time >= t).map(|l| l.covariates[0].powi(d) * (beta * l.covariates[0]).exp()).sum()
    };
    let fails: Vec<&SubjectRecord> = recs.iter().filter(|r| r.cause == Some(cause)).collect();
    let info: f64 = fails
        .iter()
        .map(|f| {
            let (s0, s1, s2) = (s(f.time, 0), s(f.time, 1), s(f.time, 2));
            s2 / s0 - (s1 / s0).powi(2)
        })
        .sum();
    let resid: Vec<f64> = recs
        .iter()
        .map(|ri| {
            let zi = ri.covariates[0];
            let mut u = 0.0;
            if ri.cause == Some(cause) {
                u += zi - s(ri.time, 1) / s(ri.time, 0);
            }
            for f in fails.iter().filter(|f| f.time <= ri.time) {
                let (s0, s1) = (s(f.time, 0), s(f.time, 1));
                u -= (beta * zi).exp() * (zi - s1 / s0) / s0;
            }
            u
        })
        .collect();
    (resid.iter().map(|u| u * u).sum::<f64>()).sqrt() / info
}

/// One covariate, two fully observed causes, 25% censoring; `ties` rounds
/// times to a coarse grid.
pub fn cox_dataset(seed: u64, n: usize, ties: bool) -> Dataset {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let recs: Vec<SubjectRecord> = (0..n)
        .map(|_| {
            let z: f64 = rng.random_range(-1.0..1.0);
            let mut t = -rng.random::<f64>().ln() / (0.8 * z).exp();
            if ties {
                t = (t * 10.0).ceil() / 10.0;
            }
            if rng.random_bool(0.25) {
                SubjectRecord::censored(t, vec![z], vec![])
            } else {
                SubjectRecord::failure(t, Some(usize::from(rng.random_bool(0.4))), vec![z], vec![])
            }
        })
        .collect();
    Dataset::new(recs, 2, vec!["z".into()], vec![], None).unwrap()
}
