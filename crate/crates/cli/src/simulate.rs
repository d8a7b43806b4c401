use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{ArgGroup, Args};
use labnet_core::alert::rfc3339;
use labnet_core::sim::{builtin_names, ScenarioConfig, SimReport, Simulation};
use labnet_core::sink::HttpSink;
use labnet_core::Store;
use serde::Serialize;

use crate::config::{parse_duration, Format};
use crate::output::{self, num, Table};
use crate::{Ctx, Usage};

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("what").required(true).args(["scenario", "list"])))]
pub struct SimulateArgs {
    /// Built-in scenario name or path to a scenario file
    scenario: Option<String>,

    /// List the built-in scenarios
    #[arg(long)]
    list: bool,

    /// Print the scenario definition instead of running it
    #[arg(long)]
    print: bool,

    /// Simulated time to cover [default: the scenario's duration]
    #[arg(long, value_name = "DURATION", value_parser = parse_duration)]
    duration: Option<f64>,

    /// Simulated seconds per wall-clock second; 0 runs as fast as possible
    #[arg(long, value_name = "FACTOR")]
    timescale: Option<f64>,

    /// Override the scenario seed
    #[arg(long)]
    seed: Option<u64>,

    /// Store directory to write into [default: data_dir setting]
    #[arg(long, value_name = "DIR", conflicts_with = "target")]
    data: Option<PathBuf>,

    /// Send points to a query service instead of a local store
    #[arg(long, value_name = "URL")]
    target: Option<String>,

    /// Bearer token for the query service
    #[arg(long, env = "LABNET_TOKEN", hide_env_values = true)]
    token: Option<String>,
}

fn load_scenario(name: &str) -> anyhow::Result<ScenarioConfig> {
    if builtin_names().any(|b| b == name) {
        return Ok(ScenarioConfig::builtin(name)?);
    }
    let path = Path::new(name);
    if !path.exists() {
        let known: Vec<_> = builtin_names().collect();
        return Err(Usage(format!(
            "{name:?} is neither a built-in scenario ({}) nor a file",
            known.join(", ")
        ))
        .into());
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {name}"))?;
    ScenarioConfig::parse(&text).with_context(|| name.to_string())
}

#[derive(Serialize)]
struct RunSummary<'a> {
    scenario: &'a str,
    seed: u64,
    start_ns: i64,
    end_ns: i64,
    delivery_efficiency: Option<f64>,
    alert_events: usize,
    #[serde(flatten)]
    report: &'a SimReport,
}

pub fn run(ctx: &Ctx, a: SimulateArgs) -> anyhow::Result<()> {
    if a.list {
        let mut t = Table::new(["scenario", "description"]);
        for name in builtin_names() {
            let cfg = ScenarioConfig::builtin(name)?;
            t.row([name.to_string(), cfg.description]);
        }
        return Ok(output::print(&t.render())?);
    }
    let mut cfg = load_scenario(a.scenario.as_deref().expect("required by arg group"))?;
    if let Some(d) = a.duration {
        if d <= 0.0 {
            return Err(Usage("--duration must be positive".into()).into());
        }
        cfg = cfg.with_duration(d);
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.print {
        return Ok(output::print(&cfg.to_toml())?);
    }
    let timescale = a.timescale.unwrap_or(ctx.settings.simulate.timescale);
    if !(timescale.is_finite() && timescale >= 0.0) {
        return Err(Usage(format!("--timescale {timescale} must be >= 0")).into());
    }
    let (name, seed) = (cfg.name.clone(), cfg.seed);
    let mut sim = match a.target.or_else(|| ctx.settings.simulate.target.clone()) {
        Some(url) => {
            let token = a.token.or_else(|| ctx.settings.token.clone());
            Simulation::new(cfg, Arc::new(HttpSink::new(&url, token, Duration::from_secs(10))))?
        }
        None => {
            let dir = a.data.unwrap_or_else(|| ctx.settings.data_dir.clone());
            let store = Store::open(&dir).with_context(|| format!("opening store {}", dir.display()))?;
            Simulation::with_store(cfg, Arc::new(store))?
        }
    };
    if timescale > 0.0 {
        sim = sim.paced(timescale);
    }
    sim.run()?;
    let (start, end) = (sim.origin_ns(), sim.end_ns());
    let delivery = sim.delivery_report(start, end).and_then(|d| d.aggregate);
    let status = sim.collector_status().unwrap_or_default();
    let undelivered = status.pending_points as u64 + status.dropped_points;
    let report = sim.report();
    let summary = RunSummary {
        scenario: &name,
        seed,
        start_ns: start,
        end_ns: end,
        delivery_efficiency: delivery,
        alert_events: report.events.len(),
        report,
    };
    match ctx.format {
        Format::Json => output::print_json(&summary)?,
        Format::Csv | Format::Table => {
            let rows = [
                ("scenario", name.clone()),
                ("seed", seed.to_string()),
                ("start", format!("{} ({start})", rfc3339(start))),
                ("end", format!("{} ({end})", rfc3339(end))),
                ("polls", report.polls.to_string()),
                ("responses", report.responses.to_string()),
                ("delivery_efficiency", delivery.map_or("-".into(), num)),
                ("node_points", report.node_points.to_string()),
                ("experiment_points", report.experiment_points.to_string()),
                ("write_errors", report.write_errors.to_string()),
                ("alert_passes", report.alert_passes.to_string()),
                ("alert_events", report.events.len().to_string()),
                ("interlock_commands", report.commands.len().to_string()),
            ];
            let text = if ctx.format == Format::Csv {
                let mut s = String::from("key,value\n");
                for (k, v) in rows {
                    s.push_str(&format!("{k},\"{v}\"\n"));
                }
                s
            } else {
                let mut t = Table::new(["key", "value"]).left();
                for (k, v) in rows {
                    t.row([k.to_string(), v]);
                }
                t.render()
            };
            output::print(&text)?;
        }
    }
    if report.write_errors > 0 || undelivered > 0 {
        bail!(
            "{} experiment points and {undelivered} node points were not written{}",
            report.write_errors,
            status.storage_error.map(|e| format!(" (last error: {e})")).unwrap_or_default()
        );
    }
    Ok(())
}
