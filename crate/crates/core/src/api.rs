//! JSON request and response bodies of the HTTP service, and the blocking
//! handlers behind them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::{flag_table, load_run_config, ProbeConfig};
use crate::error::{Error, Result};
use crate::federation::CompressionRatios;
use crate::report::CompareRow;
use crate::runner::{execute_compare, execute_probe, execute_run};

/// A config file's text plus flag overrides, resolved server-side.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfigSource {
    /// Contents of a config file or run manifest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_toml: Option<String>,
    /// Raw flag values by config key; these win over the file.
    #[serde(default)]
    pub flags: BTreeMap<String, String>,
}

impl ConfigSource {
    fn flag_table(&self) -> toml::Table {
        flag_table(self.flags.iter().map(|(k, v)| (k.as_str(), v.clone())))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResponse {
    pub config_hash: String,
    pub metrics_csv: String,
    pub summary: String,
    pub manifest_toml: String,
    pub final_metric: Option<f64>,
    pub ratios: Option<CompressionRatios>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResponse {
    pub config_hash: String,
    pub report: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareEntry {
    pub label: String,
    #[serde(flatten)]
    pub source: ConfigSource,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CompareRequest {
    pub entries: Vec<CompareEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareResponse {
    pub table: String,
    pub rows: Vec<CompareRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
}

/// Error body: `kind` is [`Error::kind`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

impl From<&Error> for ErrorBody {
    fn from(e: &Error) -> Self {
        Self {
            error: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

/// HTTP status for an error: 400 for bad input, 422 for runs that failed,
/// 500 for I/O trouble on the server.
pub fn status_code(e: &Error) -> u16 {
    match e {
        Error::Config { .. } | Error::Parse(_) | Error::InvalidArgument(_) | Error::DimensionMismatch { .. } => 400,
        Error::Io(_) => 500,
        _ => 422,
    }
}

pub fn run(req: &ConfigSource) -> Result<RunResponse> {
    let cfg = load_run_config(req.config_toml.as_deref(), &req.flag_table())?;
    let out = execute_run(&cfg)?;
    Ok(RunResponse {
        config_hash: out.manifest.config_hash.clone(),
        final_metric: out.result.final_metric(),
        ratios: out.ratios,
        metrics_csv: out.metrics_csv,
        summary: out.summary,
        manifest_toml: out.manifest_toml,
    })
}

pub fn probe(req: &ConfigSource) -> Result<ProbeResponse> {
    let cfg = ProbeConfig::resolve(req.config_toml.as_deref(), &req.flag_table())?;
    let out = execute_probe(&cfg)?;
    Ok(ProbeResponse {
        config_hash: out.config_hash,
        report: out.text,
    })
}

pub fn compare(req: &CompareRequest) -> Result<CompareResponse> {
    let entries = req
        .entries
        .iter()
        .map(|e| {
            let cfg = load_run_config(e.source.config_toml.as_deref(), &e.source.flag_table())?;
            Ok((e.label.clone(), cfg))
        })
        .collect::<Result<Vec<_>>>()?;
    let out = execute_compare(&entries)?;
    Ok(CompareResponse {
        table: out.table,
        rows: out.rows,
    })
}
