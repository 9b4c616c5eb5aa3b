use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use multiblank::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::RunConfig;

pub const REPORT_FORMAT: &str = "multiblank-run-report/v1";

/// Machine-readable record of one command invocation.
///
/// Everything except `timing` is a deterministic function of the
/// configuration and inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format: String,
    pub command: String,
    pub passed: bool,
    pub config: RunConfig,
    pub metrics: BTreeMap<String, Value>,
    /// Output file names, relative to the output directory.
    pub artifacts: BTreeMap<String, String>,
    pub timing: Timing,
}

/// Wall-clock measurements; excluded when comparing reports across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Timing {
    pub started_unix_ms: u128,
    pub wall_seconds: f64,
    #[serde(default)]
    pub details: BTreeMap<String, f64>,
}

impl Timing {
    pub fn start() -> Self {
        let started_unix_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0);
        Self {
            started_unix_ms,
            ..Self::default()
        }
    }
}

impl RunReport {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            format: REPORT_FORMAT.to_string(),
            command: command.to_string(),
            passed: true,
            config: config.clone(),
            metrics: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            timing: Timing::start(),
        }
    }

    pub fn metric(&mut self, name: &str, value: impl Serialize) {
        let value = serde_json::to_value(value).expect("metric serializes");
        self.metrics.insert(name.to_string(), value);
    }

    /// Fails if any numeric metric is NaN or infinite.
    pub fn check_finite(&self) -> Result<()> {
        fn finite(v: &Value) -> bool {
            match v {
                Value::Number(n) => n.as_f64().is_some_and(f64::is_finite),
                Value::Array(items) => items.iter().all(finite),
                Value::Object(map) => map.values().all(finite),
                _ => true,
            }
        }
        match self.metrics.iter().find(|(_, v)| !finite(v) || v.is_null()) {
            Some((name, _)) => Err(Error::Usage(format!("metric {name} is not finite"))),
            None => Ok(()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let report: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: bad report: {e}", path.display())))?;
        if report.format != REPORT_FORMAT {
            return Err(Error::Config(format!(
                "{}: unsupported report format {:?}",
                path.display(),
                report.format
            )));
        }
        Ok(report)
    }

    /// The report as JSON with `timing` removed, for run-to-run comparison.
    pub fn deterministic_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        if let Value::Object(map) = &mut v {
            map.remove("timing");
        }
        serde_json::to_string_pretty(&v).expect("report serializes")
    }
}
