//! The full estimation pipeline: cause-probability model, pseudo-likelihood
//! fits and influence functions.

use crate::data::Dataset;
use crate::error::Result;
use crate::exec::Exec;
use crate::grammar::TermGrammar;
use crate::influence::InfluenceSet;
use crate::missingness::{fit_cause_probability, MissingnessFit};
use crate::mpple::{cause_weights, fit_with_weights, CauseSpecificFit};

#[derive(Debug, Clone)]
pub struct Analysis {
    pub missingness: MissingnessFit,
    pub fit: CauseSpecificFit,
    pub influence: InfluenceSet,
}

impl Analysis {
    /// Standard errors of `beta_hat_j`.
    pub fn beta_se(&self, j: usize) -> Vec<f64> {
        self.influence.beta.se(j)
    }
}

/// Fits the cause-probability model with `grammar`, then every cause, then
/// computes all influence functions.
pub fn analyze(dataset: &Dataset, grammar: &TermGrammar, exec: Exec) -> Result<Analysis> {
    let missingness = fit_cause_probability(dataset, grammar)?;
    let weights = cause_weights(dataset, &missingness)?;
    let fit = fit_with_weights(dataset, weights, exec)?;
    let influence = InfluenceSet::compute(dataset, &missingness, &fit)?;
    Ok(Analysis { missingness, fit, influence })
}
