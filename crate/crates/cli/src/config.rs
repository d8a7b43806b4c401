//! Settings file, `--set` overrides and value parsers shared by subcommands.
//!
//! The file is TOML. Top-level keys apply everywhere; tables hold the
//! settings of one role:
//!
//! ```toml
//! data_dir = "/var/lib/labnet"
//! format = "table"
//!
//! [serve]
//! listen = "0.0.0.0:8086"
//! registry = "/etc/labnet/nodes.txt"
//! ```

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::ValueEnum;
use labnet_core::clock::{parse_time, secs_to_ns};
use serde::Deserialize;

use crate::Usage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Table,
    Csv,
    Json,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Settings {
    pub data_dir: PathBuf,
    pub format: Format,
    /// Base URL of a running query service, used by `query --url` style commands.
    pub url: Option<String>,
    pub token: Option<String>,
    pub serve: ServeSettings,
    pub collector: CollectorSettings,
    pub simulate: SimulateSettings,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("labnet-data"),
            format: Format::Table,
            url: None,
            token: None,
            serve: ServeSettings::default(),
            collector: CollectorSettings::default(),
            simulate: SimulateSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServeSettings {
    pub listen: String,
    pub threads: usize,
    pub ui_dir: Option<PathBuf>,
    pub alert_period_s: f64,
    pub retention_days: Option<f64>,
    pub max_bytes: Option<u64>,
    pub fsync: bool,
    /// Registry of nodes to poll from inside the server process.
    pub registry: Option<PathBuf>,
}

impl Default for ServeSettings {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8086".into(),
            threads: 4,
            ui_dir: None,
            alert_period_s: 1.0,
            retention_days: None,
            max_bytes: None,
            fsync: false,
            registry: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollectorSettings {
    pub registry: Option<PathBuf>,
    pub bind: String,
    pub target: Option<String>,
}

impl Default for CollectorSettings {
    fn default() -> Self {
        Self {
            registry: None,
            bind: "0.0.0.0:0".into(),
            target: None,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSettings {
    pub timescale: f64,
    pub target: Option<String>,
}

/// Reads the settings file (if any) and applies `key=value` overrides on top.
pub fn load(path: Option<&Path>, overrides: &[String]) -> anyhow::Result<Settings> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            text.parse::<toml::Table>()
                .map_err(|e| Usage(format!("config {}: {}", p.display(), e.message())))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let settings: Settings = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Usage(format!("config: {}", e.message())))?;
    Ok(settings)
}

fn apply_override(table: &mut toml::Table, raw: &str) -> Result<(), Usage> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| Usage(format!("--set {raw:?}: expected key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Usage(format!("--set {raw:?}: empty key")));
    }
    let value = value.trim();
    let parsed = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let (last, parents) = path.split_last().expect("non-empty");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Usage(format!("--set {raw:?}: {p} is not a table")))?;
    }
    cur.insert(last.to_string(), parsed);
    Ok(())
}

/// Parses `90`, `90s`, `500ms`, `15m`, `2.5h` or `7d` into seconds.
pub fn parse_duration(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let split = s
        .find(|c: char| !(c.is_ascii_digit() || c == '.'))
        .unwrap_or(s.len());
    let (num, unit) = s.split_at(split);
    let n: f64 = num.parse().map_err(|_| format!("invalid duration {s:?}"))?;
    let scale = match unit {
        "" | "s" => 1.0,
        "ms" => 1e-3,
        "m" | "min" => 60.0,
        "h" => 3600.0,
        "d" => 86_400.0,
        _ => return Err(format!("invalid duration {s:?}: unknown unit {unit:?}")),
    };
    let secs = n * scale;
    if secs.is_finite() {
        Ok(secs)
    } else {
        Err(format!("invalid duration {s:?}"))
    }
}

/// Epoch nanoseconds, RFC 3339, `now`, or `now-<duration>`.
pub fn parse_instant(s: &str, now_ns: i64) -> Result<i64, String> {
    let s = s.trim();
    if s == "now" {
        return Ok(now_ns);
    }
    if let Some(ago) = s.strip_prefix("now-") {
        return Ok(now_ns - secs_to_ns(parse_duration(ago)?));
    }
    parse_time(s)
}
