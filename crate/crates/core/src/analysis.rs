//! Alignment, correlation, spectral and stability analysis of stored series.

use std::fmt::Write as _;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::clock::{ns_to_secs, secs_to_ns};
use crate::storage::{SeriesFrame, SeriesKey};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("series time ranges do not overlap")]
    NoOverlap,
    #[error("series {0} has fewer than two points")]
    SingletonSeries(String),
    #[error("series {0} has zero variance")]
    ZeroVariance(String),
    #[error("need at least {need} samples, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("fewer than two points in the window")]
    InsufficientData,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("csv line {line}: {reason}")]
    Csv { line: u64, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Linear,
    Nearest,
    Previous,
}

impl std::str::FromStr for Interpolation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "linear" => Ok(Self::Linear),
            "nearest" => Ok(Self::Nearest),
            "previous" => Ok(Self::Previous),
            _ => Err(format!("unknown interpolation {s:?} (linear, nearest, previous)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignedColumn {
    pub name: String,
    pub unit: Option<String>,
    pub values: Vec<f64>,
    /// True where the cell is an actual sample, false where interpolated.
    pub observed: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignedMatrix {
    pub step_ns: i64,
    pub times: Vec<i64>,
    pub columns: Vec<AlignedColumn>,
}

impl AlignedMatrix {
    pub fn rows(&self) -> usize {
        self.times.len()
    }

    pub fn column(&self, name: &str) -> Option<&AlignedColumn> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("time");
        for c in &self.columns {
            let _ = write!(out, ",{}", csv_field(&c.name));
        }
        out.push('\n');
        for (i, t) in self.times.iter().enumerate() {
            let _ = write!(out, "{t}");
            for c in &self.columns {
                let _ = write!(out, ",{}", c.values[i]);
            }
            out.push('\n');
        }
        out
    }
}

fn key_from_name(name: &str) -> SeriesKey {
    name.parse().unwrap_or_else(|_| SeriesKey {
        measurement: name.to_string(),
        tags: Vec::new(),
        field: "value".into(),
    })
}

/// Reads series back from CSV: `time,value` (one series, called `name`),
/// `series,time,value`, or an aligned matrix `time,<series>,...`. Lines
/// starting with `#` are skipped; times are epoch nanoseconds.
pub fn frames_from_csv(text: &str, name: &str) -> Result<Vec<SeriesFrame>, AnalysisError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let err = |line: u64, reason: String| AnalysisError::Csv { line, reason };
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| err(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let long = header.len() == 3 && header[0] == "series" && header[1] == "time";
    if (!long && header[0] != "time") || header.len() < 2 {
        return Err(err(1, format!("unrecognised header {header:?}")));
    }
    let mut order: Vec<String> = Vec::new();
    let mut points: std::collections::BTreeMap<String, Vec<(i64, f64)>> = Default::default();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |i: usize| -> Result<f64, AnalysisError> {
            rec.get(i)
                .and_then(|v| v.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(line, format!("column {} is not a finite number", i + 1)))
        };
        let time = |i: usize| -> Result<i64, AnalysisError> {
            rec.get(i)
                .and_then(|v| v.parse::<i64>().ok())
                .ok_or_else(|| err(line, format!("column {} is not an integer time", i + 1)))
        };
        let mut push = |series: &str, t: i64, v: f64| {
            if !points.contains_key(series) {
                order.push(series.to_string());
            }
            points.entry(series.to_string()).or_default().push((t, v));
        };
        if long {
            let series = rec.get(0).unwrap_or_default().to_string();
            push(&series, time(1)?, num(2)?);
        } else if header.len() == 2 && header[1] == "value" {
            push(name, time(0)?, num(1)?);
        } else {
            let t = time(0)?;
            for (i, col) in header.iter().enumerate().skip(1) {
                push(col, t, num(i)?);
            }
        }
    }
    Ok(order
        .iter()
        .map(|s| SeriesFrame::from_points(key_from_name(s), points.remove(s).unwrap_or_default()))
        .collect())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn interpolate(f: &SeriesFrame, t: i64, method: Interpolation) -> (f64, bool) {
    let i = f.times.partition_point(|&x| x < t);
    if f.times.get(i) == Some(&t) {
        return (f.values[i], true);
    }
    // Grid points lie inside the series' range, so both neighbours exist.
    let (t0, t1) = (f.times[i - 1], f.times[i]);
    let (v0, v1) = (f.values[i - 1], f.values[i]);
    let v = match method {
        Interpolation::Previous => v0,
        Interpolation::Nearest => {
            if t - t0 <= t1 - t {
                v0
            } else {
                v1
            }
        }
        Interpolation::Linear => {
            let w = (t - t0) as f64 / (t1 - t0) as f64;
            v0 + (v1 - v0) * w
        }
    };
    (v, false)
}

/// Resamples `frames` onto a common regular grid spanning the intersection
/// of their time ranges, starting at the latest first sample.
pub fn align(
    frames: &[SeriesFrame],
    step_s: f64,
    method: Interpolation,
) -> Result<AlignedMatrix, AnalysisError> {
    let step_ns = secs_to_ns(step_s);
    if step_ns <= 0 {
        return Err(AnalysisError::InvalidParameter("step must be positive".into()));
    }
    if frames.is_empty() {
        return Err(AnalysisError::InvalidParameter("no series to align".into()));
    }
    for f in frames {
        if f.len() < 2 {
            return Err(AnalysisError::SingletonSeries(f.key.to_string()));
        }
    }
    let start = frames.iter().map(|f| f.times[0]).max().expect("non-empty");
    let end = frames
        .iter()
        .map(|f| *f.times.last().expect("two points"))
        .min()
        .expect("non-empty");
    if start > end {
        return Err(AnalysisError::NoOverlap);
    }
    let n = ((end - start) / step_ns) as usize + 1;
    let times: Vec<i64> = (0..n as i64).map(|i| start + i * step_ns).collect();
    let columns = frames
        .iter()
        .map(|f| {
            let (values, observed) = times.iter().map(|&t| interpolate(f, t, method)).unzip();
            AlignedColumn {
                name: f.key.to_string(),
                unit: f.unit.clone(),
                values,
                observed,
            }
        })
        .collect();
    Ok(AlignedMatrix {
        step_ns,
        times,
        columns,
    })
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Pearson coefficient with population moments; `None` if either input is
/// constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len().min(y.len());
    if n < 2 {
        return None;
    }
    let (x, y) = (&x[..n], &y[..n]);
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    pub r: Vec<Vec<f64>>,
    pub n: usize,
}

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.names.iter().position(|n| n == a)?;
        let j = self.names.iter().position(|n| n == b)?;
        Some(self.r[i][j])
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# pearson correlation, n = {}\nseries", self.n);
        for n in &self.names {
            let _ = write!(out, ",{}", csv_field(n));
        }
        out.push('\n');
        for (name, row) in self.names.iter().zip(&self.r) {
            out.push_str(&csv_field(name));
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn pearson_matrix(m: &AlignedMatrix) -> Result<CorrelationMatrix, AnalysisError> {
    if m.rows() < 2 {
        return Err(AnalysisError::TooShort {
            need: 2,
            got: m.rows(),
        });
    }
    let k = m.columns.len();
    let mut centered = Vec::with_capacity(k);
    let mut sums_sq = Vec::with_capacity(k);
    for c in &m.columns {
        let mu = mean(&c.values);
        let d: Vec<f64> = c.values.iter().map(|v| v - mu).collect();
        let ss: f64 = d.iter().map(|v| v * v).sum();
        if ss == 0.0 {
            return Err(AnalysisError::ZeroVariance(c.name.clone()));
        }
        sums_sq.push(ss);
        centered.push(d);
    }
    let mut r = vec![vec![0.0; k]; k];
    for i in 0..k {
        r[i][i] = 1.0;
        for j in i + 1..k {
            let sxy: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
            let v = (sxy / (sums_sq[i] * sums_sq[j]).sqrt()).clamp(-1.0, 1.0);
            r[i][j] = v;
            r[j][i] = v;
        }
    }
    Ok(CorrelationMatrix {
        names: m.columns.iter().map(|c| c.name.clone()).collect(),
        r,
        n: m.rows(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossCorrelation {
    pub lags: Vec<i64>,
    pub r: Vec<f64>,
    pub best_lag: i64,
    pub best_r: f64,
}

impl CrossCorrelation {
    pub fn to_csv(&self) -> String {
        let mut out = format!("# best lag {} samples, r = {}\nlag,r\n", self.best_lag, self.best_r);
        for (k, r) in self.lags.iter().zip(&self.r) {
            let _ = writeln!(out, "{k},{r}");
        }
        out
    }
}

/// Pearson r between `x[i]` and `y[i + k]` over their overlap, for every lag
/// `k` in `[-max_lag, max_lag]`. A positive best lag means `y` trails `x`.
pub fn cross_correlation(
    x: &[f64],
    y: &[f64],
    max_lag: usize,
) -> Result<CrossCorrelation, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::InvalidParameter(format!(
            "series lengths differ ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n <= 2 * max_lag || n < 3 {
        return Err(AnalysisError::TooShort {
            need: (2 * max_lag + 1).max(3),
            got: n,
        });
    }
    if pearson(x, x).is_none() {
        return Err(AnalysisError::ZeroVariance("x".into()));
    }
    if pearson(y, y).is_none() {
        return Err(AnalysisError::ZeroVariance("y".into()));
    }
    let m = max_lag as i64;
    let lags: Vec<i64> = (-m..=m).collect();
    let r: Vec<f64> = lags
        .iter()
        .map(|&k| {
            let (xs, ys) = if k >= 0 {
                let k = k as usize;
                (&x[..n - k], &y[k..])
            } else {
                let k = (-k) as usize;
                (&x[k..], &y[..n - k])
            };
            pearson(xs, ys).unwrap_or(0.0)
        })
        .collect();
    // Visit lags by increasing |k| so ties go to the smallest shift.
    let mut order: Vec<usize> = (0..lags.len()).collect();
    order.sort_by_key(|&i| (lags[i].abs(), lags[i]));
    let mut best = order[0];
    for &i in &order[1..] {
        if r[i] > r[best] {
            best = i;
        }
    }
    Ok(CrossCorrelation {
        best_lag: lags[best],
        best_r: r[best],
        lags,
        r,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Rectangular,
    Hann,
}

impl std::str::FromStr for Window {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rectangular" | "rect" | "boxcar" => Ok(Self::Rectangular),
            "hann" => Ok(Self::Hann),
            _ => Err(format!("unknown window {s:?} (rectangular, hann)")),
        }
    }
}

impl Window {
    fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Self::Rectangular => vec![1.0; len],
            // Periodic Hann, as used for spectral averaging.
            Self::Hann => (0..len)
                .map(|i| {
                    let s = (std::f64::consts::PI * i as f64 / len as f64).sin();
                    s * s
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdParams {
    /// Samples per segment; `None` picks the smallest power of two ≥ n/8.
    pub segment_length: Option<usize>,
    pub overlap: f64,
    pub window: Window,
}

impl Default for PsdParams {
    fn default() -> Self {
        Self {
            segment_length: None,
            overlap: 0.5,
            window: Window::Hann,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumEstimate {
    pub frequencies: Vec<f64>,
    /// One-sided power spectral density, unit²/Hz.
    pub power: Vec<f64>,
    pub sample_rate: f64,
    pub segment_length: usize,
    pub overlap: f64,
    pub window: Window,
    pub segments: usize,
}

impl SpectrumEstimate {
    pub fn bin_width(&self) -> f64 {
        self.sample_rate / self.segment_length as f64
    }

    /// Total power: the integral of the density over frequency.
    pub fn total_power(&self) -> f64 {
        self.power.iter().sum::<f64>() * self.bin_width()
    }

    pub fn peak(&self) -> (f64, f64) {
        let i = (0..self.power.len())
            .max_by(|&a, &b| self.power[a].total_cmp(&self.power[b]))
            .expect("non-empty spectrum");
        (self.frequencies[i], self.power[i])
    }

    pub fn to_csv(&self, unit: Option<&str>) -> String {
        let u = unit.unwrap_or("unit");
        let mut out = format!(
            "# welch psd: segment {} samples, overlap {}, window {:?}, sample rate {} Hz, {} segments\nfrequency_hz,power_{u}^2_per_hz\n",
            self.segment_length, self.overlap, self.window, self.sample_rate, self.segments
        );
        for (f, p) in self.frequencies.iter().zip(&self.power) {
            let _ = writeln!(out, "{f},{p}");
        }
        out
    }
}

pub fn default_segment_length(n: usize) -> usize {
    n.div_ceil(8).max(2).next_power_of_two().min(n)
}

/// Averaged-periodogram (Welch) estimate of the one-sided PSD.
pub fn psd(x: &[f64], sample_rate: f64, params: &PsdParams) -> Result<SpectrumEstimate, AnalysisError> {
    let n = x.len();
    if !(sample_rate.is_finite() && sample_rate > 0.0) {
        return Err(AnalysisError::InvalidParameter("sample rate must be positive".into()));
    }
    if !(0.0..=0.9).contains(&params.overlap) {
        return Err(AnalysisError::InvalidParameter("overlap must be in [0, 0.9]".into()));
    }
    let len = params.segment_length.unwrap_or_else(|| default_segment_length(n));
    if len < 2 || len > n {
        return Err(AnalysisError::TooShort {
            need: len.max(2),
            got: n,
        });
    }
    let step = ((len as f64 * (1.0 - params.overlap)).round() as usize).max(1);
    let w = params.window.coefficients(len);
    let w_energy: f64 = w.iter().map(|v| v * v).sum();
    let fft = FftPlanner::new().plan_fft_forward(len);
    let bins = len / 2 + 1;
    let mut acc = vec![0.0; bins];
    let mut segments = 0;
    let mut buf = vec![Complex::new(0.0, 0.0); len];
    let mut start = 0;
    while start + len <= n {
        let seg = &x[start..start + len];
        let mu = mean(seg);
        for (b, (v, wi)) in buf.iter_mut().zip(seg.iter().zip(&w)) {
            *b = Complex::new((v - mu) * wi, 0.0);
        }
        fft.process(&mut buf);
        for (a, c) in acc.iter_mut().zip(&buf) {
            *a += c.norm_sqr();
        }
        segments += 1;
        start += step;
    }
    let scale = 1.0 / (sample_rate * w_energy * segments as f64);
    let power = acc
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let one_sided = if k == 0 || (len % 2 == 0 && k == len / 2) { 1.0 } else { 2.0 };
            a * scale * one_sided
        })
        .collect();
    let frequencies = (0..bins).map(|k| k as f64 * sample_rate / len as f64).collect();
    Ok(SpectrumEstimate {
        frequencies,
        power,
        sample_rate,
        segment_length: len,
        overlap: params.overlap,
        window: params.window,
        segments,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilitySummary {
    pub start: i64,
    pub end: i64,
    pub mean: f64,
    /// Sample standard deviation (n − 1 divisor).
    pub std: f64,
    pub unit: Option<String>,
    pub count: usize,
}

/// Mean ± sample standard deviation of the points in `[start, end)`.
pub fn summarize(frame: &SeriesFrame, start: i64, end: i64) -> Result<StabilitySummary, AnalysisError> {
    let w = frame.window(start, end);
    if w.len() < 2 {
        return Err(AnalysisError::InsufficientData);
    }
    let mu = mean(&w.values);
    let ss: f64 = w.values.iter().map(|v| (v - mu) * (v - mu)).sum();
    Ok(StabilitySummary {
        start,
        end,
        mean: mu,
        std: (ss / (w.len() - 1) as f64).sqrt(),
        unit: frame.unit.clone(),
        count: w.len(),
    })
}

/// Sample rate in Hz implied by an aligned grid.
pub fn grid_rate(m: &AlignedMatrix) -> f64 {
    1.0 / ns_to_secs(m.step_ns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::NANOS_PER_SEC;
    use crate::storage::SeriesKey;
    use std::collections::BTreeMap;

    fn frame(name: &str, pts: &[(i64, f64)]) -> SeriesFrame {
        SeriesFrame::from_points(
            SeriesKey::new(name, &BTreeMap::new(), "v"),
            pts.iter().map(|(t, v)| (t * NANOS_PER_SEC, *v)),
        )
    }

    #[test]
    fn linear_midpoint() {
        let m = align(&[frame("a", &[(0, 0.0), (20, 2.0)])], 10.0, Interpolation::Linear).unwrap();
        assert_eq!(m.columns[0].values, vec![0.0, 1.0, 2.0]);
        assert_eq!(m.columns[0].observed, vec![true, false, true]);
        let prev = align(&[frame("a", &[(0, 0.0), (20, 2.0)])], 10.0, Interpolation::Previous).unwrap();
        assert_eq!(prev.columns[0].values[1], 0.0);
    }

    #[test]
    fn alignment_errors() {
        assert!(matches!(
            align(&[frame("a", &[(0, 1.0)])], 1.0, Interpolation::Linear),
            Err(AnalysisError::SingletonSeries(_))
        ));
        let r = align(
            &[frame("a", &[(0, 1.0), (1, 2.0)]), frame("b", &[(5, 1.0), (6, 2.0)])],
            1.0,
            Interpolation::Linear,
        );
        assert_eq!(r, Err(AnalysisError::NoOverlap));
    }

    #[test]
    fn pearson_basics() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(pearson(&x, &x), Some(1.0));
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(pearson(&x, &neg), Some(-1.0));
        assert_eq!(pearson(&x, &[1.0; 4]), None);
    }

    #[test]
    fn shifted_copy_gives_lag_three() {
        let x: Vec<f64> = (0..200).map(|i| ((i * 7919) % 101) as f64).collect();
        let mut y = vec![0.0; 200];
        for i in 3..200 {
            y[i] = x[i - 3];
        }
        let cc = cross_correlation(&x, &y, 10).unwrap();
        assert_eq!(cc.best_lag, 3);
        assert!((cc.best_r - 1.0).abs() < 1e-12);
        assert_eq!(cross_correlation(&x, &x, 10).unwrap().best_lag, 0);
        assert!(matches!(cross_correlation(&x[..5], &y[..5], 3), Err(AnalysisError::TooShort { .. })));
    }

    #[test]
    fn summarize_examples() {
        let s = summarize(&frame("a", &[(0, 1.0), (1, 2.0), (2, 3.0)]), 0, i64::MAX).unwrap();
        assert_eq!((s.mean, s.std, s.count), (2.0, 1.0, 3));
        let s = summarize(&frame("a", &[(0, 1.0), (1, 1.0), (2, 1.0)]), 0, i64::MAX).unwrap();
        assert_eq!((s.mean, s.std), (1.0, 0.0));
        assert_eq!(summarize(&frame("a", &[(0, 1.0), (1, 1.0)]), 0, NANOS_PER_SEC), Err(AnalysisError::InsufficientData));
    }

    #[test]
    fn sine_peak_and_constant() {
        let x: Vec<f64> = (0..1024).map(|i| (2.0 * std::f64::consts::PI * 0.1 * i as f64).sin()).collect();
        let s = psd(&x, 1.0, &PsdParams::default()).unwrap();
        assert_eq!(s.segment_length, 128);
        let (f, p) = s.peak();
        assert!((f - 0.1).abs() <= s.bin_width() / 2.0);
        let mut sorted = s.power.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        assert!(10.0 * (p / median).log10() >= 20.0);
        assert!(s.frequencies.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(*s.frequencies.last().unwrap(), 0.5);

        let c = psd(&[3.0; 256], 1.0, &PsdParams::default()).unwrap();
        assert!(c.power.iter().all(|p| *p < 1e-20));
    }

    #[test]
    fn default_segment_lengths() {
        assert_eq!(default_segment_length(2000), 256);
        assert_eq!(default_segment_length(1024), 128);
        assert_eq!(default_segment_length(5), 2);
    }
}
