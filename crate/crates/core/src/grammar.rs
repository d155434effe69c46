//! Term grammar for the regressors of the cause-probability model.

use std::fmt;

use crate::data::SubjectRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    Intercept,
    Covariate { name: String, index: usize },
    Auxiliary { name: String, index: usize },
    /// Failure time `t`.
    Time,
    /// `log(t)`.
    LogTime,
    /// `max(t - knot, 0)`.
    Hinge { knot: f64 },
}

impl Term {
    fn is_time_dependent(&self) -> bool {
        matches!(self, Term::Time | Term::LogTime | Term::Hinge { .. })
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Intercept => write!(f, "1"),
            Term::Covariate { name, .. } | Term::Auxiliary { name, .. } => write!(f, "{name}"),
            Term::Time => write!(f, "t"),
            Term::LogTime => write!(f, "log(t)"),
            Term::Hinge { knot } => write!(f, "pw(t,{knot})"),
        }
    }
}

/// Ordered list of terms; the intercept always comes first.
#[derive(Debug, Clone, PartialEq)]
pub struct TermGrammar {
    terms: Vec<Term>,
}

impl TermGrammar {
    pub fn new(terms: Vec<Term>) -> Result<Self> {
        if terms.first() != Some(&Term::Intercept) {
            return Err(Error::InvalidTerm("the intercept `1` must be the first term".into()));
        }
        if terms.iter().filter(|t| **t == Term::Intercept).count() > 1 {
            return Err(Error::InvalidTerm("duplicate intercept".into()));
        }
        Ok(Self { terms })
    }

    /// Parses term strings such as `"1"`, `"t"`, `"log(t)"`, `"pw(t,12)"`
    /// or a column name, resolved against covariates first, then auxiliaries.
    pub fn parse<S: AsRef<str>>(specs: &[S], covariate_names: &[String], auxiliary_names: &[String]) -> Result<Self> {
        let terms = specs
            .iter()
            .map(|s| parse_term(s.as_ref(), covariate_names, auxiliary_names))
            .collect::<Result<Vec<_>>>()?;
        Self::new(terms)
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn has_time_terms(&self) -> bool {
        self.terms.iter().any(Term::is_time_dependent)
    }

    pub fn to_strings(&self) -> Vec<String> {
        self.terms.iter().map(ToString::to_string).collect()
    }
}

fn parse_term(raw: &str, covariates: &[String], auxiliaries: &[String]) -> Result<Term> {
    let s: String = raw.chars().filter(|c| !c.is_whitespace()).collect();
    match s.as_str() {
        "1" => return Ok(Term::Intercept),
        "t" => return Ok(Term::Time),
        "log(t)" => return Ok(Term::LogTime),
        _ => {}
    }
    if let Some(inner) = s.strip_prefix("pw(t,").and_then(|r| r.strip_suffix(')')) {
        let knot: f64 = inner.parse().map_err(|_| Error::InvalidTerm(raw.to_string()))?;
        if !(knot > 0.0) || !knot.is_finite() {
            return Err(Error::InvalidTerm(format!("{raw}: knot must be positive")));
        }
        return Ok(Term::Hinge { knot });
    }
    if let Some(index) = covariates.iter().position(|c| *c == s) {
        return Ok(Term::Covariate { name: s, index });
    }
    if let Some(index) = auxiliaries.iter().position(|c| *c == s) {
        return Ok(Term::Auxiliary { name: s, index });
    }
    if s.contains('(') {
        Err(Error::InvalidTerm(raw.to_string()))
    } else {
        Err(Error::UnknownColumn(s))
    }
}

/// Evaluates the grammar at a record, in term order.
pub fn design_row(grammar: &TermGrammar, record: &SubjectRecord) -> Result<Vec<f64>> {
    let mut row = vec![0.0; grammar.len()];
    design_row_into(grammar, record, &mut row)?;
    Ok(row)
}

pub(crate) fn design_row_into(grammar: &TermGrammar, record: &SubjectRecord, out: &mut [f64]) -> Result<()> {
    let t = record.time;
    for (slot, term) in out.iter_mut().zip(&grammar.terms) {
        if term.is_time_dependent() && !record.event {
            return Err(Error::TimeTermOnCensored);
        }
        *slot = match term {
            Term::Intercept => 1.0,
            Term::Covariate { name, index } => *record
                .covariates
                .get(*index)
                .ok_or_else(|| Error::UnknownColumn(name.clone()))?,
            Term::Auxiliary { name, index } => *record
                .auxiliaries
                .get(*index)
                .ok_or_else(|| Error::UnknownColumn(name.clone()))?,
            Term::Time => t,
            Term::LogTime => {
                if t <= 0.0 {
                    return Err(Error::LogOfNonPositive(t));
                }
                t.ln()
            }
            Term::Hinge { knot } => (t - knot).max(0.0),
        };
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names() -> (Vec<String>, Vec<String>) {
        (vec!["z1".into(), "z2".into()], vec!["a1".into()])
    }

    fn rec(time: f64) -> SubjectRecord {
        SubjectRecord::failure(time, Some(0), vec![0.4, 1.0], vec![7.0])
    }

    #[test]
    fn linear_time_row() {
        let (z, a) = names();
        let g = TermGrammar::parse(&["1", "t", "z1", "z2"], &z, &a).unwrap();
        assert_eq!(design_row(&g, &rec(2.0)).unwrap(), vec![1.0, 2.0, 0.4, 1.0]);
    }

    #[test]
    fn log_and_hinge() {
        let (z, a) = names();
        let g = TermGrammar::parse(&["1", "log(t)"], &z, &a).unwrap();
        assert_eq!(design_row(&g, &rec(1.0)).unwrap(), vec![1.0, 0.0]);
        let g = TermGrammar::parse(&["1", "pw(t, 12)", "a1"], &z, &a).unwrap();
        assert_eq!(design_row(&g, &rec(15.0)).unwrap(), vec![1.0, 3.0, 7.0]);
        assert_eq!(design_row(&g, &rec(5.0)).unwrap(), vec![1.0, 0.0, 7.0]);
    }

    #[test]
    fn errors() {
        let (z, a) = names();
        assert!(matches!(TermGrammar::parse(&["1", "z9"], &z, &a), Err(Error::UnknownColumn(_))));
        assert!(TermGrammar::parse(&["t", "1"], &z, &a).is_err());
        assert!(TermGrammar::parse(&["1", "t", "1"], &z, &a).is_err());
        assert!(TermGrammar::parse(&["1", "pw(t,-1)"], &z, &a).is_err());
        let g = TermGrammar::parse(&["1", "log(t)"], &z, &a).unwrap();
        let mut r = rec(1.0);
        r.time = 0.0;
        assert!(matches!(design_row(&g, &r), Err(Error::LogOfNonPositive(_))));
        let c = SubjectRecord::censored(1.0, vec![0.0, 0.0], vec![0.0]);
        assert!(matches!(design_row(&g, &c), Err(Error::TimeTermOnCensored)));
    }

    #[test]
    fn round_trips_through_strings() {
        let (z, a) = names();
        let specs = ["1", "t", "log(t)", "pw(t,12)", "z2", "a1"];
        let g = TermGrammar::parse(&specs, &z, &a).unwrap();
        assert_eq!(g.to_strings(), specs);
    }
}
