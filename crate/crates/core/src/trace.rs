//! Run traces: one row per agent update, written as CSV with a `#` metadata
//! preamble, and JSON summaries.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const COLUMNS: [&str; 10] = ["k_global", "t_s", "agent", "mu", "z", "p_g", "omega", "v", "err_oracle", "residual"];

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceMeta {
    pub algorithm: String,
    pub seed: u64,
    pub config_hash: String,
    pub version: String,
}

impl TraceMeta {
    pub fn new(algorithm: &str, seed: u64) -> Self {
        Self { algorithm: algorithm.into(), seed, config_hash: String::new(), version: VERSION.into() }
    }
}

/// `agent` is 0-based in memory and written 1-based.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub k_global: u64,
    pub t_s: Option<f64>,
    pub agent: Option<usize>,
    pub mu: f64,
    pub z: Option<f64>,
    pub p_g: f64,
    pub omega: Option<f64>,
    pub v: Option<f64>,
    pub err_oracle: Option<f64>,
    pub residual: Option<f64>,
    /// Values for `Trace::extra_columns`, same order.
    pub extra: Vec<f64>,
}

impl TraceRow {
    pub fn new(k_global: u64, agent: usize, mu: f64, p_g: f64) -> Self {
        Self {
            k_global,
            t_s: None,
            agent: Some(agent),
            mu,
            z: None,
            p_g,
            omega: None,
            v: None,
            err_oracle: None,
            residual: None,
            extra: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub meta: Option<TraceMeta>,
    pub extra_columns: Vec<String>,
    pub rows: Vec<TraceRow>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Trace {
    pub fn new(meta: TraceMeta) -> Self {
        Self { meta: Some(meta), extra_columns: Vec::new(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: TraceRow) {
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn set_config_hash(&mut self, hash: &str) {
        if let Some(m) = self.meta.as_mut() {
            m.config_hash = hash.to_string();
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), TraceError> {
        if let Some(m) = &self.meta {
            writeln!(out, "# algorithm={}", m.algorithm)?;
            writeln!(out, "# seed={}", m.seed)?;
            writeln!(out, "# config_hash={}", m.config_hash)?;
            writeln!(out, "# version={}", m.version)?;
        }
        let mut w = csv::Writer::from_writer(out);
        let header: Vec<&str> = COLUMNS.iter().copied().chain(self.extra_columns.iter().map(String::as_str)).collect();
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.k_global.to_string(),
                cell(r.t_s),
                r.agent.map(|a| (a + 1).to_string()).unwrap_or_else(|| "all".into()),
                r.mu.to_string(),
                cell(r.z),
                r.p_g.to_string(),
                cell(r.omega),
                cell(r.v),
                cell(r.err_oracle),
                cell(r.residual),
            ];
            rec.extend(r.extra.iter().map(|x| x.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// Last row of each agent, in agent order.
    pub fn last_per_agent(&self, n: usize) -> Vec<Option<&TraceRow>> {
        let mut out = vec![None; n];
        for r in self.rows.iter().rev() {
            if let Some(a) = r.agent {
                if a < n && out[a].is_none() {
                    out[a] = Some(r);
                }
            }
            if out.iter().all(Option::is_some) {
                break;
            }
        }
        out
    }
}

#[derive(Serialize)]
struct JsonTrace<'a> {
    meta: &'a Option<TraceMeta>,
    columns: Vec<&'a str>,
    rows: Vec<JsonRow<'a>>,
}

#[derive(Serialize)]
struct JsonRow<'a> {
    k_global: u64,
    t_s: Option<f64>,
    /// 1-based; `null` for whole-system rows.
    agent: Option<usize>,
    mu: f64,
    z: Option<f64>,
    p_g: f64,
    omega: Option<f64>,
    v: Option<f64>,
    err_oracle: Option<f64>,
    residual: Option<f64>,
    extra: &'a [f64],
}

impl Trace {
    /// Same content as the CSV, as one JSON object.
    pub fn write_json<W: Write>(&self, out: W) -> Result<(), TraceError> {
        let doc = JsonTrace {
            meta: &self.meta,
            columns: COLUMNS.iter().copied().chain(self.extra_columns.iter().map(String::as_str)).collect(),
            rows: self
                .rows
                .iter()
                .map(|r| JsonRow {
                    k_global: r.k_global,
                    t_s: r.t_s,
                    agent: r.agent.map(|a| a + 1),
                    mu: r.mu,
                    z: r.z,
                    p_g: r.p_g,
                    omega: r.omega,
                    v: r.v,
                    err_oracle: r.err_oracle,
                    residual: r.residual,
                    extra: &r.extra,
                })
                .collect(),
        };
        serde_json::to_writer(out, &doc)?;
        Ok(())
    }
}

pub fn write_json<W: Write, T: Serialize>(out: W, value: &T) -> Result<(), TraceError> {
    serde_json::to_writer_pretty(out, value)?;
    Ok(())
}
