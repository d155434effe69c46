//! Proportional cause-specific hazards regression with a missing-at-random
//! cause of failure, fitted by maximum partial pseudo-likelihood, with
//! influence-function standard errors, covariate-specific cumulative
//! incidence prediction, multiplier confidence bands and a goodness-of-fit
//! test for the cause-probability model.

pub mod analysis;
pub mod bands;
pub mod cif;
pub mod data;
pub mod error;
pub mod exec;
pub mod gof;
pub mod grammar;
pub mod influence;
pub(crate) mod linalg;
pub mod missingness;
pub mod mpple;
pub mod report;
pub mod simulation;
pub mod step;
pub mod study;

pub use data::{load_dataset, write_dataset, Dataset, Schema, SubjectRecord};
pub use error::{Error, ErrorKind, Result};
pub use exec::Exec;
pub use grammar::{design_row, Term, TermGrammar};
pub use influence::{
    cif_influence, compute_beta_influence, compute_cumhaz_influence, covariate_cumhaz_influence, BetaInfluence,
    CifInfluence, CumhazInfluence, DenseInfluence, InfluenceProcess, InfluenceSet,
};
pub use missingness::{fit_cause_probability, MissingnessFit, MissingnessReport};
pub use mpple::{cause_weights, cumhaz_at_covariate, fit_mpple, fit_with_weights, CauseFit, CauseSpecificFit, CauseWeights};
pub use step::StepFunction;
pub use analysis::{analyze, Analysis};
pub use bands::{band_cif, band_cumhaz, Band, BandRequest, BandTarget, BandWeight, DomainRule};
pub use cif::{cif_with_uncertainty, predict_cif, CifCurve};
pub use gof::{gof_test, residual_process, GofResult};
pub use simulation::{generate_dataset, ScenarioConfig};
pub use study::{run_study, StudyConfig, StudySummary};
