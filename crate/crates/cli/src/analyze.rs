use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Subcommand};
use labnet_core::analysis::{
    align, cross_correlation, frames_from_csv, grid_rate, pearson_matrix, psd, summarize, AlignedMatrix,
    Interpolation, PsdParams, StabilitySummary, Window,
};
use labnet_core::SeriesFrame;
use serde::Serialize;

use crate::config::{parse_duration, Format};
use crate::output::{self, num, Table};
use crate::source::{SelectArgs, Source};
use crate::{Ctx, SourceArgs, Usage};

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Pearson correlation matrix of the selected series
    Corr(CorrArgs),
    /// Correlation of two series over a range of lags
    Xcorr(XcorrArgs),
    /// Welch power spectral density of one series
    Psd(PsdArgs),
    /// Mean and sample standard deviation of each series
    Summary(SummaryArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    #[command(flatten)]
    source: SourceArgs,

    #[command(flatten)]
    select: SelectArgs,

    /// Read series from a CSV file, as written by export or query --format csv (repeatable)
    #[arg(long, value_name = "FILE")]
    input: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Spacing of the common time grid
    #[arg(long, value_name = "DURATION", value_parser = parse_duration, default_value = "20s")]
    step: f64,

    /// Resampling onto the grid: linear, nearest or previous
    #[arg(long, value_name = "METHOD", default_value = "linear")]
    interp: Interpolation,
}

#[derive(Debug, Args)]
pub struct CorrArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Debug, Args)]
pub struct XcorrArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    grid: GridArgs,

    /// Largest lag to try, in grid steps
    #[arg(long, value_name = "STEPS", default_value_t = 30)]
    max_lag: usize,
}

#[derive(Debug, Args)]
pub struct PsdArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    grid: GridArgs,

    /// Samples per segment [default: smallest power of two >= n/8]
    #[arg(long, value_name = "N")]
    segment: Option<usize>,

    /// Fraction of overlap between segments
    #[arg(long, value_name = "FRACTION", default_value_t = 0.5)]
    overlap: f64,

    /// Segment window: hann or rectangular
    #[arg(long, default_value = "hann")]
    window: Window,
}

#[derive(Debug, Args)]
pub struct SummaryArgs {
    #[command(flatten)]
    input: InputArgs,
}

pub fn run(ctx: &Ctx, cmd: AnalyzeCommand) -> anyhow::Result<()> {
    match cmd {
        AnalyzeCommand::Corr(a) => corr(ctx, a),
        AnalyzeCommand::Xcorr(a) => xcorr(ctx, a),
        AnalyzeCommand::Psd(a) => spectrum(ctx, a),
        AnalyzeCommand::Summary(a) => summary(ctx, a),
    }
}

/// Reads a CSV file; a leading `# series:` comment names a single series.
fn read_csv(path: &PathBuf) -> anyhow::Result<Vec<SeriesFrame>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let comment = |tag: &str| {
        text.lines()
            .take_while(|l| l.starts_with('#'))
            .find_map(|l| l.strip_prefix(tag).map(|v| v.trim().to_string()))
    };
    let name = comment("# series:").unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "value".into())
    });
    let mut frames = frames_from_csv(&text, &name).with_context(|| format!("parsing {}", path.display()))?;
    if let (1, Some(u)) = (frames.len(), comment("# unit:")) {
        frames[0].unit = Some(u);
    }
    Ok(frames)
}

fn load(ctx: &Ctx, a: &InputArgs) -> anyhow::Result<Vec<SeriesFrame>> {
    let mut frames = Vec::new();
    if !(a.select.is_empty() && !a.input.is_empty()) {
        frames = Source::open(ctx, &a.source)?.select(&a.select, |q| q)?;
    }
    for p in &a.input {
        frames.extend(read_csv(p)?);
    }
    if frames.is_empty() {
        bail!("no series selected");
    }
    Ok(frames)
}

fn aligned(ctx: &Ctx, a: &InputArgs, g: &GridArgs) -> anyhow::Result<AlignedMatrix> {
    let frames = load(ctx, a)?;
    Ok(align(&frames, g.step, g.interp)?)
}

fn corr(ctx: &Ctx, a: CorrArgs) -> anyhow::Result<()> {
    let m = aligned(ctx, &a.input, &a.grid)?;
    let c = pearson_matrix(&m)?;
    match ctx.format {
        Format::Csv => output::print(&c.to_csv())?,
        Format::Json => output::print_json(&c)?,
        Format::Table => {
            let mut out = String::new();
            for (i, n) in c.names.iter().enumerate() {
                let _ = writeln!(out, "[{i}] {n}");
            }
            let _ = writeln!(out, "n = {} samples at {} s\n", c.n, num(a.grid.step));
            let mut t = Table::new(std::iter::once(String::new()).chain((0..c.names.len()).map(|i| format!("[{i}]"))));
            for (i, row) in c.r.iter().enumerate() {
                t.row(std::iter::once(format!("[{i}]")).chain(row.iter().map(|r| format!("{r:.3}"))));
            }
            out.push_str(&t.render());
            output::print(&out)?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct XcorrDoc<'a> {
    x: &'a str,
    y: &'a str,
    step_s: f64,
    #[serde(flatten)]
    result: &'a labnet_core::analysis::CrossCorrelation,
}

fn xcorr(ctx: &Ctx, a: XcorrArgs) -> anyhow::Result<()> {
    let m = aligned(ctx, &a.input, &a.grid)?;
    if m.columns.len() != 2 {
        return Err(Usage(format!("xcorr needs exactly two series, got {}", m.columns.len())).into());
    }
    let (x, y) = (&m.columns[0], &m.columns[1]);
    let max_lag = a.max_lag.min(m.rows().saturating_sub(2));
    let cc = cross_correlation(&x.values, &y.values, max_lag)?;
    match ctx.format {
        Format::Csv => output::print(&cc.to_csv())?,
        Format::Json => output::print_json(&XcorrDoc {
            x: &x.name,
            y: &y.name,
            step_s: a.grid.step,
            result: &cc,
        })?,
        Format::Table => {
            let mut out = format!(
                "x: {}\ny: {}\nbest lag {} steps ({} s), r = {:.3}\n\n",
                x.name,
                y.name,
                cc.best_lag,
                num(cc.best_lag as f64 * a.grid.step),
                cc.best_r
            );
            let mut t = Table::new(["lag", "lag_s", "r"]);
            for (k, r) in cc.lags.iter().zip(&cc.r) {
                t.row([k.to_string(), num(*k as f64 * a.grid.step), format!("{r:.4}")]);
            }
            out.push_str(&t.render());
            output::print(&out)?;
        }
    }
    Ok(())
}

fn spectrum(ctx: &Ctx, a: PsdArgs) -> anyhow::Result<()> {
    let m = aligned(ctx, &a.input, &a.grid)?;
    if m.columns.len() != 1 {
        return Err(Usage(format!("psd needs exactly one series, got {}", m.columns.len())).into());
    }
    let col = &m.columns[0];
    let params = PsdParams {
        segment_length: a.segment,
        overlap: a.overlap,
        window: a.window,
    };
    let s = psd(&col.values, grid_rate(&m), &params)?;
    match ctx.format {
        Format::Csv => output::print(&s.to_csv(col.unit.as_deref()))?,
        Format::Json => output::print_json(&s)?,
        Format::Table => {
            let (pf, pp) = s.peak();
            let mut out = format!(
                "{}\n{} segments of {} samples, overlap {}, {:?} window, {} Hz\npeak {} Hz ({}), total power {}\n\n",
                col.name,
                s.segments,
                s.segment_length,
                s.overlap,
                s.window,
                num(s.sample_rate),
                num(pf),
                num(pp),
                num(s.total_power())
            );
            let u = col.unit.as_deref().unwrap_or("unit");
            let mut t = Table::new(["frequency_hz".to_string(), format!("power_{u}^2_per_hz")]);
            for (f, p) in s.frequencies.iter().zip(&s.power) {
                t.row([num(*f), num(*p)]);
            }
            out.push_str(&t.render());
            output::print(&out)?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct SummaryDoc {
    series: String,
    #[serde(flatten)]
    summary: StabilitySummary,
}

fn summary(ctx: &Ctx, a: SummaryArgs) -> anyhow::Result<()> {
    let frames = load(ctx, &a.input)?;
    let (start, end) = a.input.select.range()?;
    let mut docs = Vec::new();
    for f in &frames {
        let s = summarize(f, start, end).with_context(|| f.key.to_string())?;
        docs.push(SummaryDoc {
            series: f.key.to_string(),
            summary: s,
        });
    }
    match ctx.format {
        Format::Json => output::print_json(&docs)?,
        Format::Csv => {
            let mut out = String::from("series,mean,std,count,unit\n");
            for d in &docs {
                let s = &d.summary;
                let _ = writeln!(
                    out,
                    "\"{}\",{},{},{},{}",
                    d.series.replace('"', "\"\""),
                    s.mean,
                    s.std,
                    s.count,
                    s.unit.as_deref().unwrap_or("")
                );
            }
            output::print(&out)?;
        }
        Format::Table => {
            let mut out = String::new();
            for d in &docs {
                let s = &d.summary;
                if docs.len() > 1 {
                    let _ = write!(out, "{}  ", d.series);
                }
                let _ = write!(out, "mean={} std={} n={}", num(s.mean), num(s.std), s.count);
                if let Some(u) = &s.unit {
                    let _ = write!(out, " unit={u}");
                }
                out.push('\n');
            }
            output::print(&out)?;
        }
    }
    Ok(())
}
