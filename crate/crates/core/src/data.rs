//! Subject-level records, dataset validation and CSV ingestion.
//!
//! Causes are stored as zero-based indices (`0..k`). Files use one-based
//! cause codes, with `NA` or an empty field marking an unobserved cause.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One subject's observed data: follow-up time, failure indicator, whether
/// the cause was observed, the cause itself, model covariates and auxiliary
/// covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub time: f64,
    pub event: bool,
    pub cause_observed: bool,
    /// Zero-based cause index; present iff `event && cause_observed`.
    pub cause: Option<usize>,
    pub covariates: Vec<f64>,
    pub auxiliaries: Vec<f64>,
}

impl SubjectRecord {
    pub fn censored(time: f64, covariates: Vec<f64>, auxiliaries: Vec<f64>) -> Self {
        Self { time, event: false, cause_observed: true, cause: None, covariates, auxiliaries }
    }

    /// A failure; `cause = None` means the cause was not observed.
    pub fn failure(time: f64, cause: Option<usize>, covariates: Vec<f64>, auxiliaries: Vec<f64>) -> Self {
        Self { time, event: true, cause_observed: cause.is_some(), cause, covariates, auxiliaries }
    }

    /// Failure with an observed cause.
    pub fn is_complete_failure(&self) -> bool {
        self.event && self.cause_observed
    }

    /// Failure with an unobserved cause.
    pub fn is_missing_cause(&self) -> bool {
        self.event && !self.cause_observed
    }

    fn check(&self, k: usize) -> std::result::Result<(), String> {
        if !self.time.is_finite() || self.time < 0.0 {
            return Err(format!("time must be finite and nonnegative, got {}", self.time));
        }
        if self.event && self.time == 0.0 {
            return Err("failure at time 0".into());
        }
        match (self.event, self.cause_observed, self.cause) {
            (false, true, None) => Ok(()),
            (false, false, _) => Err("censored record must have cause_observed = 1".into()),
            (false, true, Some(_)) => Err("censored record carries a cause".into()),
            (true, true, Some(c)) if c < k => Ok(()),
            (true, true, Some(c)) => Err(format!("cause {} outside 1..{k}", c + 1)),
            (true, true, None) => Err("observed cause is missing".into()),
            (true, false, None) => Ok(()),
            (true, false, Some(_)) => Err("unobserved cause carries a value".into()),
        }
    }
}

/// Validated, immutable collection of subject records.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<SubjectRecord>,
    k: usize,
    covariate_names: Vec<String>,
    auxiliary_names: Vec<String>,
    tau: f64,
}

impl Dataset {
    /// Validates records; `tau` defaults to the largest observed time and
    /// records beyond an explicit `tau` are rejected.
    pub fn new(
        records: Vec<SubjectRecord>,
        k: usize,
        covariate_names: Vec<String>,
        auxiliary_names: Vec<String>,
        tau: Option<f64>,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyData);
        }
        if k < 2 {
            return Err(Error::InvalidData(format!("need at least 2 causes, got {k}")));
        }
        let p = covariate_names.len();
        let q = auxiliary_names.len();
        for (i, r) in records.iter().enumerate() {
            if r.covariates.len() != p || r.auxiliaries.len() != q {
                return Err(Error::InvalidData(format!(
                    "record {i}: expected {p} covariates and {q} auxiliaries, got {} and {}",
                    r.covariates.len(),
                    r.auxiliaries.len()
                )));
            }
            if r.covariates.iter().chain(&r.auxiliaries).any(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!("record {i}: non-finite covariate")));
            }
            r.check(k).map_err(|m| Error::InvalidData(format!("record {i}: {m}")))?;
        }
        let max_time = records.iter().map(|r| r.time).fold(0.0, f64::max);
        let tau = match tau {
            None => max_time,
            Some(t) if !(t > 0.0) || !t.is_finite() => {
                return Err(Error::InvalidData(format!("tau must be positive, got {t}")))
            }
            Some(t) => {
                if let Some(i) = records.iter().position(|r| r.time > t) {
                    return Err(Error::InvalidData(format!(
                        "record {i}: time {} exceeds tau = {t}",
                        records[i].time
                    )));
                }
                t
            }
        };
        if !(tau > 0.0) {
            return Err(Error::InvalidData("all observation times are zero".into()));
        }
        Ok(Self { records, k, covariate_names, auxiliary_names, tau })
    }

    pub fn records(&self) -> &[SubjectRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Number of causes.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of model covariates.
    pub fn p(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn auxiliary_names(&self) -> &[String] {
        &self.auxiliary_names
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn n_failures(&self) -> usize {
        self.records.iter().filter(|r| r.event).count()
    }

    /// Dataset made of the records at `indices` (repeats allowed), keeping
    /// names, `k` and `tau`.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let records = indices.iter().map(|&i| self.records[i].clone()).collect();
        Self::new(
            records,
            self.k,
            self.covariate_names.clone(),
            self.auxiliary_names.clone(),
            Some(self.tau),
        )
    }

    /// Copy with every covariate column `m` multiplied by `scale[m]`.
    pub fn with_scaled_covariates(&self, scale: &[f64]) -> Result<Self> {
        if scale.len() != self.p() {
            return Err(Error::DimensionMismatch { expected: self.p(), got: scale.len() });
        }
        let records = self
            .records
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.covariates.iter_mut().zip(scale).for_each(|(z, c)| *z *= c);
                r
            })
            .collect();
        Ok(Self { records, ..self.clone() })
    }

    /// Column means of the covariates.
    pub fn covariate_means(&self) -> Vec<f64> {
        let n = self.len() as f64;
        let mut m = vec![0.0; self.p()];
        for r in &self.records {
            m.iter_mut().zip(&r.covariates).for_each(|(a, z)| *a += z / n);
        }
        m
    }
}

/// Column mapping for CSV input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub time: String,
    pub event: String,
    pub cause: String,
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default)]
    pub auxiliaries: Vec<String>,
    /// Number of causes; defaults to the largest observed cause code.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub tau: Option<f64>,
}

impl Schema {
    /// Schema matching the layout written by [`write_dataset`].
    pub fn for_dataset(ds: &Dataset) -> Self {
        Self {
            time: "time".into(),
            event: "event".into(),
            cause: "cause".into(),
            covariates: ds.covariate_names.clone(),
            auxiliaries: ds.auxiliary_names.clone(),
            k: Some(ds.k),
            tau: Some(ds.tau),
        }
    }
}

fn is_missing_token(s: &str) -> bool {
    s.is_empty() || s == "NA"
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers.iter().position(|h| h.trim() == name).ok_or_else(|| Error::UnknownColumn(name.to_string()))
}

/// Reads and validates a dataset from a CSV file with a header row.
pub fn load_dataset(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let time_col = column(&headers, &schema.time)?;
    let event_col = column(&headers, &schema.event)?;
    let cause_col = column(&headers, &schema.cause)?;
    let cov_cols = schema.covariates.iter().map(|c| column(&headers, c)).collect::<Result<Vec<_>>>()?;
    let aux_cols = schema.auxiliaries.iter().map(|c| column(&headers, c)).collect::<Result<Vec<_>>>()?;

    let mut records = Vec::new();
    let mut max_cause = 0usize;
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let bad = |msg: String| Error::MalformedRow { row: line, msg };
        let field = |c: usize| row.get(c).unwrap_or("");
        let num = |c: usize, what: &str| -> Result<f64> {
            field(c)
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(format!("non-numeric {what} `{}`", field(c))))
        };
        let time = num(time_col, "time")?;
        if time < 0.0 {
            return Err(bad(format!("negative time {time}")));
        }
        let event = match field(event_col) {
            "0" => false,
            "1" => true,
            other => return Err(bad(format!("event must be 0 or 1, got `{other}`"))),
        };
        let raw_cause = field(cause_col);
        let cause = if is_missing_token(raw_cause) {
            None
        } else {
            let c: usize = raw_cause.parse().map_err(|_| bad(format!("invalid cause `{raw_cause}`")))?;
            if c == 0 {
                return Err(bad("cause codes start at 1".into()));
            }
            if let Some(k) = schema.k {
                if c > k {
                    return Err(bad(format!("cause {c} outside 1..{k}")));
                }
            }
            max_cause = max_cause.max(c);
            Some(c - 1)
        };
        if !event && cause.is_some() {
            return Err(bad("censored row carries a cause".into()));
        }
        if event && time == 0.0 {
            return Err(bad("failure at time 0".into()));
        }
        if let Some(tau) = schema.tau {
            if time > tau {
                return Err(bad(format!("time {time} exceeds tau = {tau}")));
            }
        }
        let covariates = cov_cols.iter().zip(&schema.covariates).map(|(&c, n)| num(c, n)).collect::<Result<_>>()?;
        let auxiliaries = aux_cols.iter().zip(&schema.auxiliaries).map(|(&c, n)| num(c, n)).collect::<Result<_>>()?;
        records.push(if event {
            SubjectRecord::failure(time, cause, covariates, auxiliaries)
        } else {
            SubjectRecord::censored(time, covariates, auxiliaries)
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyData);
    }
    let k = schema.k.unwrap_or(max_cause);
    Dataset::new(records, k, schema.covariates.clone(), schema.auxiliaries.clone(), schema.tau)
}

/// Writes a dataset as CSV with columns `time,event,cause,<covariates>,<auxiliaries>`.
/// Numbers use the shortest representation that reads back exactly.
pub fn write_dataset(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["time".to_string(), "event".into(), "cause".into()];
    header.extend(ds.covariate_names.iter().cloned());
    header.extend(ds.auxiliary_names.iter().cloned());
    w.write_record(&header)?;
    for r in &ds.records {
        let mut row = vec![
            r.time.to_string(),
            u8::from(r.event).to_string(),
            r.cause.map_or_else(|| "NA".to_string(), |c| (c + 1).to_string()),
        ];
        row.extend(r.covariates.iter().chain(&r.auxiliaries).map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
