//! Run configuration merged from defaults, a JSON config file and flags.
//!
//! Precedence is flag > file > default, resolved once before any command
//! runs. The environment is only consulted by the remote oracle.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use semplan_core::cost::{OptimizerConfig, SelectivityModel};
use serde::{Deserialize, Serialize};

use crate::oracle::{OracleError, OracleSpec};
use crate::pipeline::StatsMode;

pub const DEFAULT_ORACLE: &str = "mock:seed=42,sel=0.2";

/// Contents of a config file. Every field is optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub alpha: Option<f64>,
    pub oracle: Option<String>,
    pub seed: Option<u64>,
    pub data: Option<String>,
    pub catalog: Option<PathBuf>,
    pub stats: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub verbose: Option<u8>,
    pub statistics: Option<StatsMode>,
    pub parallel: Option<bool>,
    pub model: Option<SelectivityModel>,
    pub optimizer: Option<OptimizerConfig>,
    /// Selectivity hints keyed by bound predicate template.
    pub selectivities: BTreeMap<String, f64>,
}

/// Values given on the command line.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Flags {
    pub alpha: Option<f64>,
    pub oracle: Option<String>,
    pub seed: Option<u64>,
    pub data: Option<String>,
    pub catalog: Option<PathBuf>,
    pub stats: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub verbose: Option<u8>,
    pub statistics: Option<StatsMode>,
    pub parallel: Option<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: SelectivityModel,
    pub optimizer: OptimizerConfig,
    pub oracle: OracleSpec,
    pub data: Option<String>,
    pub catalog: Option<PathBuf>,
    pub stats: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub verbose: u8,
    pub statistics: StatsMode,
    pub parallel: bool,
    pub selectivities: BTreeMap<String, f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("{0}")]
    Invalid(String),
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }
}

impl RunConfig {
    pub fn resolve(file: FileConfig, flags: Flags) -> Result<RunConfig, ConfigError> {
        let mut optimizer = file.optimizer.unwrap_or_default();
        if let Some(a) = flags.alpha.or(file.alpha) {
            optimizer.alpha = a;
        }
        let model = file.model.unwrap_or_default();
        model.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        optimizer.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;

        let text = flags
            .oracle
            .or(file.oracle)
            .unwrap_or_else(|| DEFAULT_ORACLE.to_string());
        let mut oracle = OracleSpec::parse(&text)?;
        if let (OracleSpec::Mock(m), Some(seed)) = (&mut oracle, flags.seed.or(file.seed)) {
            m.seed = seed;
        }
        for (t, s) in &file.selectivities {
            if !(*s > 0.0 && *s <= 1.0) {
                return Err(ConfigError::Invalid(format!(
                    "selectivity of `{t}` must be in (0, 1], got {s}"
                )));
            }
        }
        Ok(RunConfig {
            model,
            optimizer,
            oracle,
            data: flags.data.or(file.data),
            catalog: flags.catalog.or(file.catalog),
            stats: flags.stats.or(file.stats),
            out: flags.out.or(file.out),
            verbose: flags.verbose.or(file.verbose).unwrap_or(0),
            statistics: flags.statistics.or(file.statistics).unwrap_or_default(),
            parallel: flags.parallel.or(file.parallel).unwrap_or(false),
            selectivities: file.selectivities,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let file: FileConfig =
            serde_json::from_str(r#"{"alpha": 0.5, "seed": 7, "oracle": "mock:sel=0.3", "verbose": 2}"#).unwrap();
        let flags = Flags {
            alpha: Some(0.01),
            ..Flags::default()
        };
        let c = RunConfig::resolve(file, flags).unwrap();
        assert_eq!(c.optimizer.alpha, 0.01);
        assert_eq!(c.verbose, 2);
        let OracleSpec::Mock(m) = &c.oracle else { panic!() };
        assert_eq!((m.seed, m.selectivity), (7, 0.3));

        let d = RunConfig::resolve(FileConfig::default(), Flags::default()).unwrap();
        assert_eq!(d.optimizer, OptimizerConfig::default());
        assert_eq!(d.statistics, StatsMode::Exact);
        let OracleSpec::Mock(m) = &d.oracle else { panic!() };
        assert_eq!((m.seed, m.selectivity), (42, 0.2));
    }

    #[test]
    fn bad_values_are_rejected() {
        let bad = Flags {
            alpha: Some(-1.0),
            ..Flags::default()
        };
        assert!(RunConfig::resolve(FileConfig::default(), bad).is_err());
        assert!(serde_json::from_str::<FileConfig>(r#"{"alpah": 1}"#).is_err());
    }
}
