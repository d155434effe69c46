//! JSON run configuration, merged with command-line flags (flags win).

use std::path::Path;

use mpple::bands::{BandWeight, DomainRule};
use mpple::Schema;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<String>,
    pub schema: Option<Schema>,
    /// Cause-probability model terms. Defaults to `1`, `t`, then every
    /// covariate and auxiliary column.
    pub grammar: Option<Vec<String>>,
    pub z0: Option<Vec<Vec<f64>>>,
    pub alpha: Option<f64>,
    #[serde(rename = "B")]
    pub b: Option<usize>,
    pub seed: Option<u64>,
    pub weight: Option<Vec<BandWeight>>,
    pub clip: Option<[f64; 2]>,
    /// Band target for `band`: `cumhaz`, `cumhaz_at_z0` or `cif`.
    pub target: Option<String>,
    /// One-based cause label.
    pub cause: Option<usize>,
    pub scenario: Option<u8>,
    pub n: Option<usize>,
    pub theta: Option<[f64; 4]>,
    pub replicates: Option<usize>,
    pub time_points: Option<Vec<f64>>,
    /// Track simultaneous-band coverage in `simulate`.
    pub bands: Option<bool>,
    pub keep_replicates: Option<bool>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(0.05)
    }

    pub fn b(&self) -> usize {
        self.b.unwrap_or(1000)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn domain(&self) -> DomainRule {
        match self.clip {
            Some([c1, c2]) => DomainRule::QuantileClip { c1, c2 },
            None => DomainRule::default(),
        }
    }

    /// Zero-based cause index from the one-based label.
    pub fn cause_index(&self, k: usize) -> Result<Option<usize>, CliError> {
        match self.cause {
            None => Ok(None),
            Some(c) if (1..=k).contains(&c) => Ok(Some(c - 1)),
            Some(c) => Err(CliError::Config(format!("cause must be in 1..={k}, got {c}"))),
        }
    }

    /// Stable hash of the effective configuration.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn parse_weight(s: &str) -> Result<BandWeight, String> {
    match s {
        "ep" => Ok(BandWeight::EqualPrecision),
        "hw" => Ok(BandWeight::HallWellner),
        other => Err(format!("unknown weight `{other}` (expected ep or hw)")),
    }
}
