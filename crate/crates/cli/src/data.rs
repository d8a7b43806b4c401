use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Subcommand};
use labnet_core::alert::rfc3339;
use labnet_core::api::{frames_to_csv, FrameDoc, QueryDoc};
use labnet_core::clock::secs_to_ns;
use labnet_core::storage::Aggregator;
use labnet_core::{SeriesFrame, Store};
use serde::Serialize;

use crate::config::{parse_duration, Format};
use crate::output::{self, Table};
use crate::source::{open_existing, SelectArgs, Source};
use crate::{Ctx, SourceArgs};

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[command(flatten)]
    source: SourceArgs,

    #[command(flatten)]
    select: SelectArgs,

    /// Aggregate into buckets: mean, min, max or last
    #[arg(long, value_name = "AGG", requires = "bucket")]
    agg: Option<Aggregator>,

    /// Bucket width, e.g. 60s or 1h
    #[arg(long, value_name = "DURATION", value_parser = parse_duration, requires = "agg")]
    bucket: Option<f64>,

    /// At most this many points per series
    #[arg(long, value_name = "N")]
    limit: Option<usize>,
}

pub fn query(ctx: &Ctx, args: QueryArgs) -> anyhow::Result<()> {
    let source = Source::open(ctx, &args.source)?;
    let frames = source.select(&args.select, |mut q| {
        if let (Some(a), Some(b)) = (args.agg, args.bucket) {
            q = q.aggregate(a, secs_to_ns(b));
        }
        q.limit = args.limit;
        q
    })?;
    match ctx.format {
        Format::Table => {
            let mut t = Table::new(["series", "time", "value"]);
            for f in &frames {
                let key = f.key.to_string();
                for (ts, v) in f.iter() {
                    t.row([key.clone(), rfc3339(ts), output::num(v)]);
                }
            }
            output::print(&t.render())?;
        }
        Format::Csv => output::print(&frames_to_csv(&frames))?,
        Format::Json => output::print_json(&QueryDoc {
            frames: frames.iter().map(FrameDoc::from).collect(),
        })?,
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Directory to write the CSV files into
    #[arg(long, value_name = "DIR")]
    out: PathBuf,

    #[command(flatten)]
    source: SourceArgs,

    #[command(flatten)]
    select: SelectArgs,
}

/// One series as `time,value` CSV with the key and unit in comment lines.
pub fn series_csv(f: &SeriesFrame) -> String {
    let mut out = format!("# series: {}\n", f.key);
    if let Some(u) = &f.unit {
        let _ = writeln!(out, "# unit: {u}");
    }
    out.push_str("time,value\n");
    for (t, v) in f.iter() {
        let _ = writeln!(out, "{t},{v}");
    }
    out
}

fn file_stem(key: &str) -> String {
    let s: String = key
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect();
    s.trim_matches('_').to_string()
}

#[derive(Serialize)]
struct Exported {
    series: String,
    file: String,
    points: usize,
}

pub fn export(ctx: &Ctx, args: ExportArgs) -> anyhow::Result<()> {
    let source = Source::open(ctx, &args.source)?;
    let frames = source.select(&args.select, |q| q)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut used = BTreeSet::new();
    let mut done = Vec::new();
    for f in &frames {
        let key = f.key.to_string();
        let stem = file_stem(&key);
        let mut name = format!("{stem}.csv");
        let mut n = 2;
        while !used.insert(name.clone()) {
            name = format!("{stem}-{n}.csv");
            n += 1;
        }
        let path = args.out.join(&name);
        std::fs::write(&path, series_csv(f)).with_context(|| format!("writing {}", path.display()))?;
        done.push(Exported {
            series: key,
            file: path.display().to_string(),
            points: f.len(),
        });
    }
    match ctx.format {
        Format::Json => output::print_json(&done),
        Format::Csv => {
            let mut s = String::from("series,file,points\n");
            for e in &done {
                let _ = writeln!(s, "\"{}\",\"{}\",{}", e.series.replace('"', "\"\""), e.file, e.points);
            }
            Ok(output::print(&s)?)
        }
        Format::Table => {
            let mut t = Table::new(["series", "file", "points"]);
            for e in &done {
                t.row([e.series.clone(), e.file.clone(), e.points.to_string()]);
            }
            Ok(output::print(&t.render())?)
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum SnapshotCommand {
    /// Copy the store into an empty directory, with a checksum manifest
    Save {
        /// Destination directory (must be empty or absent)
        dest: PathBuf,
        /// Store directory [default: data_dir setting]
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
    },
    /// Verify a snapshot and recreate the store from it
    Restore {
        /// Snapshot directory
        src: PathBuf,
        /// Store directory to create [default: data_dir setting]
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
    },
}

pub fn snapshot(ctx: &Ctx, cmd: SnapshotCommand) -> anyhow::Result<()> {
    match cmd {
        SnapshotCommand::Save { dest, data } => {
            let dir = data.unwrap_or_else(|| ctx.settings.data_dir.clone());
            let store = open_existing(&dir, true)?;
            let m = store
                .snapshot(&dest)
                .with_context(|| format!("writing snapshot to {}", dest.display()))?;
            println!("saved {} points in {} files to {}", m.points, m.files.len(), dest.display());
        }
        SnapshotCommand::Restore { src, data } => {
            let dir = data.unwrap_or_else(|| ctx.settings.data_dir.clone());
            let store = Store::restore(&src, &dir)
                .with_context(|| format!("restoring {} into {}", src.display(), dir.display()))?;
            println!("restored {} points into {}", store.point_count()?, dir.display());
        }
    }
    Ok(())
}
