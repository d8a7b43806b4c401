//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use std::collections::BTreeMap;

use labnet_core::sim::ScenarioConfig;
use labnet_core::storage::Aggregator;
use labnet_core::{DataPoint, NodePayload, Reading};
use rand::Rng;

/// Pearson r by direct summation of the covariance definition.
pub fn direct_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..x.len() {
        cov += (x[i] - mx) * (y[i] - my) / n;
        vx += (x[i] - mx).powi(2) / n;
        vy += (y[i] - my).powi(2) / n;
    }
    cov / (vx.sqrt() * vy.sqrt())
}

/// One-sided periodogram of a single segment by an O(n²) DFT, scaled to
/// unit²/Hz with the given window.
pub fn naive_periodogram(x: &[f64], fs: f64, window: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let xs: Vec<f64> = x.iter().zip(window).map(|(v, w)| (v - mean) * w).collect();
    let u: f64 = window.iter().map(|w| w * w).sum();
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, v) in xs.iter().enumerate() {
                let a = -2.0 * std::f64::consts::PI * (k * j) as f64 / n as f64;
                re += v * a.cos();
                im += v * a.sin();
            }
            let p = (re * re + im * im) / (fs * u);
            if k == 0 || (n % 2 == 0 && k == n / 2) {
                p
            } else {
                2.0 * p
            }
        })
        .collect()
}

/// Linear interpolation by scanning for the bracketing pair.
pub fn brute_linear(times: &[i64], values: &[f64], t: i64) -> f64 {
    for i in 0..times.len() {
        if times[i] == t {
            return values[i];
        }
    }
    for i in 0..times.len() - 1 {
        if times[i] < t && t < times[i + 1] {
            let f = (t - times[i]) as f64 / (times[i + 1] - times[i]) as f64;
            return values[i] + (values[i + 1] - values[i]) * f;
        }
    }
    panic!("{t} outside series range");
}

/// Sample mean and (n − 1) standard deviation, two-pass.
pub fn two_pass(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

/// Reference watchdog: fires when at least `timeout` has passed.
pub fn ref_watchdog(last: i64, now: i64, timeout_ns: i64) -> bool {
    now - last >= timeout_ns
}

/// Reference interlock machine written as an explicit transition table.
/// State is (tripped, cause) with cause 0 none, 1 below, 2 above; output
/// 0 none, 1 amplifier off, 2 amplifier on.
pub fn ref_interlock(tripped: bool, v: f64, min: f64, max: f64, margin: f64, latching: bool) -> (bool, u8, u8) {
    let below = v < min;
    let above = v > max;
    let in_band = v >= min + margin && v <= max - margin;
    match (tripped, below, above, latching, in_band) {
        (false, true, _, _, _) => (true, 1, 1),
        (false, false, true, _, _) => (true, 2, 1),
        (false, false, false, _, _) => (false, 0, 0),
        (true, _, _, true, _) => (true, u8::MAX, 0),
        (true, _, _, false, true) => (false, 0, 2),
        (true, _, _, false, false) => (true, u8::MAX, 0),
    }
}

/// Naive mirror of a series store: last write wins, half-open ranges.
#[derive(Default)]
pub struct Mirror(pub BTreeMap<String, BTreeMap<i64, f64>>);

impl Mirror {
    pub fn insert(&mut self, series: &str, t: i64, v: f64) {
        self.0.entry(series.to_string()).or_default().insert(t, v);
    }

    pub fn range(&self, series: &str, start: i64, end: i64) -> Vec<(i64, f64)> {
        self.0
            .get(series)
            .map(|m| m.iter().filter(|(t, _)| **t >= start && **t < end).map(|(t, v)| (*t, *v)).collect())
            .unwrap_or_default()
    }
}

/// Two labs fed from one 150 mW source, seed interlock at [20, 40] mW, and a
/// 50% seed-power sag on Lab02 at `sag_at_s`.
pub fn interlock_scenario(sag_at_s: f64) -> ScenarioConfig {
    let text = format!(
        r#"
name = "sag"
seed = 7
duration_s = 3600
step_s = 1
poll_interval_s = 20
alert_period_s = 20

[[signal]]
name = "source"
kind = "constant"
base = 150.0
noise_std = 0.2
unit = "mW"

[laser]
source = "source"
labs = ["Lab02", "Lab03"]
fiber_efficiency = [0.2, 0.2]
amp_gain = 50
amp_max_mw = 2000

[laser.interlock]
min = 20
max = 40

[[fault]]
kind = "seed-power-sag"
at_s = {sag_at_s}
lab = "Lab02"
depth = 0.5
duration_s = 600

[[node]]
room = "Lab02"
device = "Dev01"
sensors = [
  {{ measurement = "laser", field = "seed", signal = "seed:Lab02" }},
  {{ measurement = "laser", field = "amp_output", signal = "amp:Lab02" }},
]

[[node]]
room = "Lab03"
device = "Dev01"
sensors = [
  {{ measurement = "laser", field = "seed", signal = "seed:Lab03" }},
  {{ measurement = "laser", field = "amp_output", signal = "amp:Lab03" }},
]
"#
    );
    ScenarioConfig::parse(&text).unwrap()
}

const NAME_POOL: &[char] = &[
    'a', 'b', 'z', 'A', 'Q', '0', '7', '_', '-', '.', ' ', ',', '=', '\\', '"', '\'', '/', '°', 'µ', '#',
];

/// Random non-empty name over an alphabet heavy in characters that need
/// escaping in the line format.
pub fn random_name<R: Rng>(rng: &mut R) -> String {
    let n = rng.gen_range(1..12);
    (0..n).map(|_| NAME_POOL[rng.gen_range(0..NAME_POOL.len())]).collect()
}

pub fn random_location_id<R: Rng>(rng: &mut R) -> String {
    const POOL: &[u8] = b"abcXYZ019_-";
    let n = rng.gen_range(1..10);
    (0..n).map(|_| POOL[rng.gen_range(0..POOL.len())] as char).collect()
}

fn random_payload_name<R: Rng>(rng: &mut R) -> String {
    const POOL: &[u8] = b"abcXYZ019_-.#/()[]";
    let n = rng.gen_range(1..10);
    (0..n).map(|_| POOL[rng.gen_range(0..POOL.len())] as char).collect()
}

/// Finite float drawn from raw bit patterns, decimal readings and edge values.
pub fn random_finite<R: Rng>(rng: &mut R) -> f64 {
    match rng.gen_range(0..4) {
        0 => loop {
            let v = f64::from_bits(rng.gen());
            if v.is_finite() {
                return v;
            }
        },
        1 => (rng.gen_range(-100_000i64..100_000) as f64) / 10.0,
        2 => rng.gen_range(1e-12..1e-8),
        _ => [0.0, -0.0, f64::MIN_POSITIVE, f64::MAX, f64::MIN, 5e-324, 1e16, 1e-5][rng.gen_range(0..8)],
    }
}

pub fn random_point<R: Rng>(rng: &mut R) -> DataPoint {
    let mut p = DataPoint::new(random_name(rng)).at(rng.gen());
    for _ in 0..rng.gen_range(0..4) {
        p = p.tag(random_name(rng), random_name(rng));
    }
    for _ in 0..rng.gen_range(1..5) {
        p = p.field(random_name(rng), random_finite(rng));
    }
    p
}

pub fn random_payload<R: Rng>(rng: &mut R) -> NodePayload {
    let mut readings: Vec<Reading> = Vec::new();
    for _ in 0..rng.gen_range(0..8) {
        let r = Reading::new(random_payload_name(rng), random_payload_name(rng), random_finite(rng));
        if !readings.iter().any(|x| x.measurement == r.measurement && x.field == r.field) {
            readings.push(r);
        }
    }
    NodePayload {
        room_id: random_location_id(rng),
        device_id: random_location_id(rng),
        sequence: rng.gen(),
        readings,
    }
}

/// Groups points into `width`-wide buckets aligned to multiples of the width.
pub fn bucket(points: &[(i64, f64)], width: i64, agg: Aggregator) -> Vec<(i64, f64)> {
    let mut buckets: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for &(t, v) in points {
        buckets.entry(t.div_euclid(width) * width).or_default().push(v);
    }
    buckets
        .into_iter()
        .map(|(b, vs)| {
            let v = match agg {
                Aggregator::Mean => vs.iter().sum::<f64>() / vs.len() as f64,
                Aggregator::Min => vs.iter().cloned().fold(f64::INFINITY, f64::min),
                Aggregator::Max => vs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                Aggregator::Last => *vs.last().unwrap(),
            };
            (b, v)
        })
        .collect()
}

pub type FlatFrame = (String, String, Vec<(i64, f64)>);

/// Same series, same times, values equal to a relative 1e-9.
pub fn frames_close(a: &[FlatFrame], b: &[FlatFrame]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.0 == y.0
                && x.1 == y.1
                && x.2.len() == y.2.len()
                && x.2
                    .iter()
                    .zip(&y.2)
                    .all(|(p, q)| p.0 == q.0 && (p.1 - q.1).abs() <= 1e-9 * p.1.abs().max(1.0))
        })
}
