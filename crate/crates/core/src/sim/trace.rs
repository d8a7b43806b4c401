use std::collections::BTreeMap;
use std::f64::consts::TAU;

use parking_lot::RwLock;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::scenario::{Fault, FaultKind, LaserChainConfig, Regime, ScenarioConfig, SignalDef};
use super::SimError;
use crate::clock::secs_to_ns;
use crate::node::{Environment, SensorKind, Unit};

const COUPLING_STREAM: u64 = 1 << 32;

/// Every generated signal sampled on the scenario grid, plus its nominal
/// (noise-free, fault-free) value.
#[derive(Debug, Clone, PartialEq)]
pub struct Traces {
    pub origin_ns: i64,
    pub step_ns: i64,
    names: Vec<String>,
    units: Vec<Unit>,
    index: BTreeMap<String, usize>,
    values: Vec<Vec<f64>>,
    nominal: Vec<Vec<f64>>,
}

impl Traces {
    pub fn len(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn unit(&self, name: &str) -> Option<Unit> {
        self.index.get(name).map(|&i| self.units[i])
    }

    pub fn series(&self, name: &str) -> Option<&[f64]> {
        self.index.get(name).map(|&i| self.values[i].as_slice())
    }

    pub fn nominal_series(&self, name: &str) -> Option<&[f64]> {
        self.index.get(name).map(|&i| self.nominal[i].as_slice())
    }

    pub fn time_at(&self, k: usize) -> i64 {
        self.origin_ns + k as i64 * self.step_ns
    }

    /// Grid index holding the value at `t_ns` (sample-and-hold).
    pub fn index_at(&self, t_ns: i64) -> usize {
        let k = (t_ns - self.origin_ns).max(0) / self.step_ns;
        (k as usize).min(self.len().saturating_sub(1))
    }

    pub fn value(&self, name: &str, t_ns: i64) -> Option<f64> {
        self.series(name).map(|s| s[self.index_at(t_ns)])
    }

    pub fn nominal(&self, name: &str, t_ns: i64) -> Option<f64> {
        self.nominal_series(name).map(|s| s[self.index_at(t_ns)])
    }

    fn push(&mut self, name: String, unit: Unit, values: Vec<f64>, nominal: Vec<f64>) {
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.units.push(unit);
        self.values.push(values);
        self.nominal.push(nominal);
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn base_signal(def: &SignalDef, regimes: &[&Regime], n: usize, step_s: f64, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let m = &def.model;
    let mut values = Vec::with_capacity(n);
    let mut nominal = Vec::with_capacity(n);
    let mut walk = 0.0;
    for k in 0..n {
        let t = k as f64 * step_s;
        let active = regimes.iter().find(|r| r.contains(t));
        let base = active.and_then(|r| r.base).unwrap_or(m.base);
        let noise = active.and_then(|r| r.noise_std).unwrap_or(m.noise_std);
        let det = match &m.kind {
            SensorKind::Constant | SensorKind::RandomWalk | SensorKind::Coupled { .. } => base,
            SensorKind::Drift { rate_per_hour } => {
                base + active.and_then(|r| r.rate_per_hour).unwrap_or(*rate_per_hour) * t / 3600.0
            }
            SensorKind::Sine { amplitude, period_s } => {
                base + active.and_then(|r| r.amplitude).unwrap_or(*amplitude) * (TAU * t / period_s).sin()
            }
        };
        let z: f64 = StandardNormal.sample(rng);
        let v = if matches!(m.kind, SensorKind::RandomWalk) {
            walk += noise * z;
            det + walk
        } else {
            det + noise * z
        };
        values.push(v);
        nominal.push(base);
    }
    (values, nominal)
}

/// Per-lab taps of the laser chain before any interlock action.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainTaps {
    pub lab: String,
    pub seed: Vec<f64>,
    pub amp: Vec<f64>,
}

fn fiber_factor(faults: &[Fault], lab: &str, t: f64) -> f64 {
    let mut f = 1.0;
    for fault in faults {
        let (start, end) = fault.window_s();
        if t < start || t >= end {
            continue;
        }
        match &fault.kind {
            FaultKind::FiberCouplingDrift { lab: l, change, ramp_s } if l == lab => {
                let progress = if *ramp_s > 0.0 { ((t - start) / ramp_s).min(1.0) } else { 1.0 };
                f *= 1.0 + change * progress;
            }
            FaultKind::SeedPowerSag { lab: l, depth, .. } if l == lab => f *= 1.0 - depth,
            _ => {}
        }
    }
    f
}

/// Propagates the source power through fibers and amplifiers: each seed is
/// `source × efficiency(t)`, each output `gain × seed` clamped to
/// `[0, amp_max_mw]`.
pub fn laser_chain(cfg: &LaserChainConfig, source: &[f64], step_s: f64, faults: &[Fault]) -> Vec<ChainTaps> {
    let labs = cfg.labs.len() as f64;
    cfg.labs
        .iter()
        .zip(&cfg.fiber_efficiency)
        .enumerate()
        .map(|(i, (lab, &eff))| {
            let phase = TAU * i as f64 / labs;
            let seed: Vec<f64> = source
                .iter()
                .enumerate()
                .map(|(k, &p)| {
                    let t = k as f64 * step_s;
                    let drift = 1.0 + cfg.drift_amplitude * (TAU * t / cfg.drift_period_s + phase).sin();
                    p * eff * drift * fiber_factor(faults, lab, t)
                })
                .collect();
            let amp = seed.iter().map(|s| (cfg.amp_gain * s).clamp(0.0, cfg.amp_max_mw)).collect();
            ChainTaps { lab: lab.clone(), seed, amp }
        })
        .collect()
}

/// Builds every trace of a scenario. A given config always yields the same
/// traces, bit for bit.
pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<Traces, SimError> {
    cfg.validate()?;
    let order = cfg.coupling_order()?;
    let n = cfg.samples();
    let mut values: Vec<Option<(Vec<f64>, Vec<f64>)>> = vec![None; cfg.signals.len()];
    let index: BTreeMap<&str, usize> = cfg.signals.iter().enumerate().map(|(i, s)| (s.name.as_str(), i)).collect();

    for &i in &order {
        let def = &cfg.signals[i];
        let regimes: Vec<&Regime> = cfg.regimes.iter().filter(|r| r.target == def.name).collect();
        let mut rng = rng_for(cfg.seed, i as u64 + 1);
        let (mut v, mut nom) = base_signal(def, &regimes, n, cfg.step_s, &mut rng);
        for (ci, c) in cfg.couplings.iter().enumerate().filter(|(_, c)| c.target == def.name) {
            let s = index[c.source.as_str()];
            let (sv, sn) = values[s].as_ref().expect("sources precede targets");
            let src_base = cfg.signals[s].model.base;
            let lag = (c.lag_s / cfg.step_s).round() as usize;
            let mut rng = rng_for(cfg.seed, COUPLING_STREAM + ci as u64);
            for k in 0..n {
                let j = k.saturating_sub(lag);
                let z: f64 = StandardNormal.sample(&mut rng);
                v[k] += c.gain * (sv[j] - src_base) + c.noise_std * z;
                nom[k] += c.gain * (sn[j] - src_base);
            }
        }
        values[i] = Some((v, nom));
    }

    let mut traces = Traces {
        origin_ns: cfg.origin_ns()?,
        step_ns: secs_to_ns(cfg.step_s),
        names: Vec::new(),
        units: Vec::new(),
        index: BTreeMap::new(),
        values: Vec::new(),
        nominal: Vec::new(),
    };
    let mut values: Vec<(Vec<f64>, Vec<f64>)> = values.into_iter().map(|v| v.expect("all generated")).collect();
    if let Some(l) = &cfg.laser {
        let s = index[l.source.as_str()];
        let taps = laser_chain(l, &values[s].0, cfg.step_s, &cfg.faults);
        for (tap, &eff) in taps.into_iter().zip(&l.fiber_efficiency) {
            let seed_nom: Vec<f64> = values[s].1.iter().map(|p| p * eff).collect();
            let amp_nom = seed_nom.iter().map(|p| (l.amp_gain * p).clamp(0.0, l.amp_max_mw)).collect();
            traces.push(LaserChainConfig::seed_signal(&tap.lab), Unit::Milliwatt, tap.seed, seed_nom);
            traces.push(LaserChainConfig::amp_signal(&tap.lab), Unit::Milliwatt, tap.amp, amp_nom);
        }
    }
    for (def, (v, nom)) in cfg.signals.iter().zip(values.drain(..)) {
        traces.push(def.name.clone(), def.model.unit, v, nom);
    }
    Ok(traces)
}

/// Scenario traces as seen by node agents, with amplifier outputs gated by
/// interlock commands.
#[derive(Debug)]
pub struct SimEnvironment {
    traces: std::sync::Arc<Traces>,
    labs: Vec<String>,
    /// Per lab, `(time, amplifier off)` transitions in time order.
    commands: RwLock<Vec<Vec<(i64, bool)>>>,
}

impl SimEnvironment {
    pub fn new(traces: std::sync::Arc<Traces>, labs: Vec<String>) -> Self {
        let commands = RwLock::new(vec![Vec::new(); labs.len()]);
        Self { traces, labs, commands }
    }

    pub fn traces(&self) -> &Traces {
        &self.traces
    }

    pub fn set_amplifier_off(&self, lab: &str, at_ns: i64, off: bool) {
        if let Some(i) = self.labs.iter().position(|l| l == lab) {
            let mut c = self.commands.write();
            let list = &mut c[i];
            let pos = list.partition_point(|&(t, _)| t <= at_ns);
            list.insert(pos, (at_ns, off));
        }
    }

    pub fn amplifier_off(&self, lab: &str, t_ns: i64) -> bool {
        let Some(i) = self.labs.iter().position(|l| l == lab) else { return false };
        let c = self.commands.read();
        let list = &c[i];
        let pos = list.partition_point(|&(t, _)| t <= t_ns);
        pos > 0 && list[pos - 1].1
    }

    /// Value of a signal minus its nominal value.
    pub fn deviation(&self, name: &str, t_ns: i64) -> Option<f64> {
        Some(self.signal(name, t_ns)? - self.traces.nominal(name, t_ns)?)
    }
}

impl Environment for SimEnvironment {
    fn signal(&self, name: &str, t_ns: i64) -> Option<f64> {
        if let Some(lab) = name.strip_prefix("amp:") {
            if self.amplifier_off(lab, t_ns) {
                return self.traces.series(name).map(|_| 0.0);
            }
        }
        self.traces.value(name, t_ns)
    }
}
