//! Text artifacts: the metrics table, run summaries, probe reports and
//! comparison tables.
//!
//! Tables are comma-separated with a fixed header. Summaries are flat
//! `key = value` lines. Floats are written in Rust's shortest round-trip
//! form, so parsing an emitted file reproduces the values exactly; missing
//! values are empty fields.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::{CompressionRatios, ExperimentResult, RoundMetrics};

pub const METRICS_HEADER: &str = "epoch,round,train_loss,eval_metric,up_floats,down_floats";
pub const COMPARE_HEADER: &str = "label,algorithm,metric,final_metric,upload_ratio,download_ratio,overall_ratio";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_opt(field: &str, line: usize) -> Result<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse()
        .map(Some)
        .map_err(|_| Error::Parse(format!("line {line}: bad number `{field}`")))
}

fn parse_int<T: std::str::FromStr>(field: &str, line: usize) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::Parse(format!("line {line}: bad integer `{field}`")))
}

pub fn write_metrics(rows: &[RoundMetrics]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.epoch,
            r.round,
            opt(r.train_loss),
            opt(r.eval_metric),
            r.up_floats,
            r.down_floats
        );
    }
    out
}

pub fn parse_metrics(text: &str) -> Result<Vec<RoundMetrics>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(METRICS_HEADER) => {}
        other => {
            return Err(Error::Parse(format!(
                "metrics header must be `{METRICS_HEADER}`, got {other:?}"
            )))
        }
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let n = i + 2;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(Error::Parse(format!("line {n}: expected 6 fields, got {}", f.len())));
            }
            Ok(RoundMetrics {
                epoch: parse_int(f[0], n)?,
                round: parse_int(f[1], n)?,
                train_loss: parse_opt(f[2], n)?,
                eval_metric: parse_opt(f[3], n)?,
                up_floats: parse_int(f[4], n)?,
                down_floats: parse_int(f[5], n)?,
            })
        })
        .collect()
}

/// Ordered `key = value` pairs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KeyValues(pub Vec<(String, String)>);

impl KeyValues {
    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.0.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key).and_then(|v| v.parse().ok())
    }

    pub fn render(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.split_once(" = ")
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .ok_or_else(|| Error::Parse(format!("expected `key = value`, got `{l}`")))
            })
            .collect::<Result<_>>()
            .map(KeyValues)
    }
}

/// Summary block of a run.
pub fn run_summary(result: &ExperimentResult, ratios: Option<&CompressionRatios>, config_hash: &str) -> KeyValues {
    let t = result.ledger.totals();
    let mut kv = KeyValues::default();
    kv.push("algorithm", result.algorithm);
    kv.push("metric", &result.metric_name);
    kv.push("big_dim", result.big_dim);
    kv.push("rounds", result.rows.len());
    kv.push("initial_metric", opt(result.initial_metric));
    kv.push("final_metric", opt(result.final_metric()));
    kv.push("final_train_loss", opt(result.rows.last().and_then(|r| r.train_loss)));
    kv.push("upload_floats", t.upload_floats);
    kv.push("download_floats", t.download_floats);
    kv.push("participations", t.participations);
    kv.push("gradient_steps", t.steps);
    kv.push("upload_ratio", opt(ratios.map(|r| r.upload)));
    kv.push("download_ratio", opt(ratios.map(|r| r.download)));
    kv.push("overall_ratio", opt(ratios.map(|r| r.overall)));
    kv.push("config_hash", config_hash);
    kv
}

/// A comma-separated table followed by a blank line and a summary block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub header: String,
    pub records: Vec<Vec<String>>,
    pub summary: KeyValues,
}

impl Report {
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.header);
        out.push('\n');
        for r in &self.records {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out.push('\n');
        out.push_str(&self.summary.render());
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (table, summary) = text
            .split_once("\n\n")
            .ok_or_else(|| Error::Parse("report lacks a summary block".into()))?;
        let mut lines = table.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("report lacks a header".into()))?
            .to_string();
        let width = header.split(',').count();
        let records = lines
            .map(|l| {
                let r: Vec<String> = l.split(',').map(str::to_string).collect();
                if r.len() == width {
                    Ok(r)
                } else {
                    Err(Error::Parse(format!("record `{l}` does not match header `{header}`")))
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            header,
            records,
            summary: KeyValues::parse(summary)?,
        })
    }

    /// Column `name` parsed as floats.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let idx = self
            .header
            .split(',')
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse(format!("no column `{name}`")))?;
        self.records
            .iter()
            .map(|r| r[idx].parse().map_err(|_| Error::Parse(format!("bad number `{}`", r[idx]))))
            .collect()
    }
}

/// One row of a comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub label: String,
    pub algorithm: String,
    pub metric: String,
    pub final_metric: Option<f64>,
    pub ratios: Option<CompressionRatios>,
}

pub fn write_compare(rows: &[CompareRow]) -> String {
    let mut out = String::from(COMPARE_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.label,
            r.algorithm,
            r.metric,
            opt(r.final_metric),
            opt(r.ratios.map(|x| x.upload)),
            opt(r.ratios.map(|x| x.download)),
            opt(r.ratios.map(|x| x.overall)),
        );
    }
    out
}
