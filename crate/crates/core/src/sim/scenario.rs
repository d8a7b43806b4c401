//! Scenario files.
//!
//! A scenario is a TOML document; see `docs/scenarios.md` for the schema and
//! the `scenarios/` directory of this crate for the bundled examples.

use std::collections::{BTreeMap, BTreeSet};

use petgraph::algo::toposort;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::alert::{AlertRule, Selector};
use crate::clock::NANOS_PER_SEC;
use crate::node::{SensorKind, SensorModel, Unit};
use crate::wire::is_location_id;

pub const DEFAULT_START: &str = "2020-06-01T00:00:00Z";

fn default_start() -> String {
    DEFAULT_START.into()
}

fn default_step() -> f64 {
    20.0
}

fn default_interval() -> f64 {
    20.0
}

fn default_eval_period() -> f64 {
    20.0
}

/// An independent environmental signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalDef {
    pub name: String,
    #[serde(flatten)]
    pub model: SensorModel,
}

/// `target(t) += gain · (source(t − lag) − source base) + N(0, noise_std)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Coupling {
    pub source: String,
    pub target: String,
    pub gain: f64,
    #[serde(default)]
    pub lag_s: f64,
    #[serde(default)]
    pub noise_std: f64,
}

/// Parameter overrides applied to a signal or experiment inside `[start, end)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Regime {
    #[serde(default)]
    pub label: String,
    pub target: String,
    pub start_s: f64,
    pub end_s: f64,
    pub base: Option<f64>,
    pub noise_std: Option<f64>,
    pub amplitude: Option<f64>,
    pub rate_per_hour: Option<f64>,
}

impl Regime {
    pub fn contains(&self, elapsed_s: f64) -> bool {
        elapsed_s >= self.start_s && elapsed_s < self.end_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FaultKind {
    /// Scales one lab's fiber efficiency by `1 + change`, reached linearly
    /// over `ramp_s`.
    FiberCouplingDrift {
        lab: String,
        change: f64,
        #[serde(default)]
        ramp_s: f64,
    },
    /// Drops each answer of `node` (`Room/Dev`) with `probability`.
    DatagramLoss {
        node: String,
        probability: f64,
        duration_s: f64,
    },
    NodeFreeze { node: String, duration_s: f64 },
    /// Scales one lab's seed power by `1 - depth`.
    SeedPowerSag {
        lab: String,
        depth: f64,
        duration_s: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fault {
    pub at_s: f64,
    #[serde(flatten)]
    pub kind: FaultKind,
}

impl Fault {
    pub fn window_s(&self) -> (f64, f64) {
        let end = match &self.kind {
            FaultKind::FiberCouplingDrift { .. } => f64::INFINITY,
            FaultKind::DatagramLoss { duration_s, .. } | FaultKind::NodeFreeze { duration_s, .. } => {
                self.at_s + duration_s
            }
            FaultKind::SeedPowerSag { duration_s, .. } => {
                duration_s.map_or(f64::INFINITY, |d| self.at_s + d)
            }
        };
        (self.at_s, end)
    }
}

/// One sensor of a simulated node: either a view of a scenario signal or a
/// free-standing model sampled by the node itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorDef {
    pub measurement: String,
    pub field: String,
    pub signal: Option<String>,
    #[serde(flatten)]
    pub model: Option<SensorModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDef {
    pub room: String,
    pub device: String,
    pub interval_s: Option<f64>,
    pub sensors: Vec<SensorDef>,
}

impl NodeDef {
    pub fn name(&self) -> String {
        format!("{}/{}", self.room, self.device)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterlockDef {
    pub min: f64,
    pub max: f64,
    pub margin: Option<f64>,
    #[serde(default)]
    pub latching: bool,
    #[serde(default = "default_laser_measurement")]
    pub measurement: String,
    #[serde(default = "default_seed_field")]
    pub field: String,
}

fn default_laser_measurement() -> String {
    "laser".into()
}

fn default_seed_field() -> String {
    "seed".into()
}

/// Shared laser: one source split over fibers to one amplifier per lab.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaserChainConfig {
    /// Name of the signal that is the central source power.
    pub source: String,
    pub labs: Vec<String>,
    pub fiber_efficiency: Vec<f64>,
    /// Relative amplitude of the slow polarisation drift of each fiber.
    #[serde(default)]
    pub drift_amplitude: f64,
    #[serde(default = "default_drift_period")]
    pub drift_period_s: f64,
    pub amp_gain: f64,
    pub amp_max_mw: f64,
    pub interlock: Option<InterlockDef>,
}

fn default_drift_period() -> f64 {
    6.0 * 3600.0
}

impl LaserChainConfig {
    pub fn seed_signal(lab: &str) -> String {
        format!("seed:{lab}")
    }

    pub fn amp_signal(lab: &str) -> String {
        format!("amp:{lab}")
    }

    pub fn interlock_rule_id(lab: &str) -> String {
        format!("seed-interlock-{lab}")
    }

    /// One interlock rule per lab, watching that lab's seed readings.
    pub fn interlock_rules(&self) -> Vec<AlertRule> {
        let Some(il) = &self.interlock else { return Vec::new() };
        self.labs
            .iter()
            .map(|lab| {
                let sel = Selector {
                    measurement: il.measurement.clone(),
                    tags: BTreeMap::from([(crate::wire::ROOM_TAG.to_string(), lab.clone())]),
                    field: il.field.clone(),
                };
                let mut r = AlertRule::interlock(&Self::interlock_rule_id(lab), sel, il.min, il.max, il.latching);
                if let crate::alert::RuleKind::Interlock { margin, .. } = &mut r.kind {
                    *margin = il.margin;
                }
                r
            })
            .collect()
    }
}

/// Linear response of an observable to environment deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sensitivity {
    pub signal: String,
    pub per_unit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PositionModel {
    pub signal: String,
    pub per_unit: f64,
    #[serde(default)]
    pub base: f64,
    #[serde(default)]
    pub noise_std: f64,
}

/// Phenomenological experiment. Atom numbers are in units of 10⁶.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentModel {
    pub name: String,
    pub room: String,
    pub device: String,
    pub cycle_s: f64,
    pub base_atoms: f64,
    #[serde(default)]
    pub shot_noise: f64,
    #[serde(default)]
    pub atom_sensitivity: Vec<Sensitivity>,
    pub cloud_h: Option<PositionModel>,
    pub cloud_v: Option<PositionModel>,
    #[serde(default = "default_experiment_measurement")]
    pub measurement: String,
}

fn default_experiment_measurement() -> String {
    "experiment".into()
}

impl ExperimentModel {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Invalid(format!("experiment {}: {m}", self.name)));
        if !(self.cycle_s > 0.0 && self.cycle_s.is_finite()) {
            return bad("cycle_s must be > 0".into());
        }
        if !(self.shot_noise >= 0.0 && self.shot_noise.is_finite() && self.base_atoms.is_finite()) {
            return bad("base_atoms and shot_noise must be finite, shot_noise >= 0".into());
        }
        let positions = self.cloud_h.iter().chain(&self.cloud_v);
        for p in positions {
            if !(p.per_unit.is_finite() && p.base.is_finite() && p.noise_std >= 0.0 && p.noise_std.is_finite()) {
                return bad(format!("position model on {} is not finite", p.signal));
            }
        }
        if let Some(s) = self.atom_sensitivity.iter().find(|s| !s.per_unit.is_finite()) {
            return bad(format!("sensitivity to {} is not finite", s.signal));
        }
        if !is_location_id(&self.room) || !is_location_id(&self.device) {
            return bad("room and device must be location ids".into());
        }
        Ok(())
    }

    /// Signals this model reads.
    pub fn inputs(&self) -> impl Iterator<Item = &str> {
        self.atom_sensitivity
            .iter()
            .map(|s| s.signal.as_str())
            .chain(self.cloud_h.iter().chain(&self.cloud_v).map(|p| p.signal.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub seed: u64,
    pub duration_s: f64,
    /// Resolution of the generated traces.
    #[serde(default = "default_step")]
    pub step_s: f64,
    #[serde(default = "default_start")]
    pub start: String,
    /// Collector interval for nodes that do not set their own.
    #[serde(default = "default_interval")]
    pub poll_interval_s: f64,
    #[serde(default = "default_eval_period")]
    pub alert_period_s: f64,
    #[serde(default, rename = "signal")]
    pub signals: Vec<SignalDef>,
    #[serde(default, rename = "coupling")]
    pub couplings: Vec<Coupling>,
    #[serde(default, rename = "regime")]
    pub regimes: Vec<Regime>,
    #[serde(default, rename = "fault")]
    pub faults: Vec<Fault>,
    #[serde(default, rename = "node")]
    pub nodes: Vec<NodeDef>,
    pub laser: Option<LaserChainConfig>,
    #[serde(default, rename = "experiment")]
    pub experiments: Vec<ExperimentModel>,
}

const BUILTIN: &[(&str, &str)] = &[
    ("default", include_str!("../../scenarios/default.toml")),
    ("fig3_correlations", include_str!("../../scenarios/fig3_correlations.toml")),
    ("fig4_ac_stability", include_str!("../../scenarios/fig4_ac_stability.toml")),
];

pub fn builtin_names() -> impl Iterator<Item = &'static str> {
    BUILTIN.iter().map(|(n, _)| *n)
}

pub fn builtin_text(name: &str) -> Option<&'static str> {
    BUILTIN.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, SimError> {
        let cfg: Self = toml::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn builtin(name: &str) -> Result<Self, SimError> {
        let text = builtin_text(name).ok_or_else(|| SimError::UnknownScenario(name.into()))?;
        Self::parse(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn origin_ns(&self) -> Result<i64, SimError> {
        chrono::DateTime::parse_from_rfc3339(&self.start)
            .ok()
            .and_then(|d| d.timestamp_nanos_opt())
            .ok_or_else(|| SimError::Invalid(format!("start {:?} is not an RFC 3339 time", self.start)))
    }

    pub fn duration_ns(&self) -> i64 {
        (self.duration_s * NANOS_PER_SEC as f64).round() as i64
    }

    /// Number of trace samples covering `[0, duration)`.
    pub fn samples(&self) -> usize {
        ((self.duration_s / self.step_s).ceil() as usize).max(1)
    }

    /// The same scenario cut to `duration_s`; later faults are dropped and
    /// regimes clipped.
    pub fn with_duration(mut self, duration_s: f64) -> Self {
        self.duration_s = duration_s;
        self.faults.retain(|f| f.at_s < duration_s);
        self.regimes.retain(|r| r.start_s < duration_s);
        for r in &mut self.regimes {
            r.end_s = r.end_s.min(duration_s);
        }
        self
    }

    /// Names of the laser-chain taps, if a chain is configured.
    pub fn chain_signals(&self) -> Vec<String> {
        self.laser
            .iter()
            .flat_map(|l| {
                l.labs
                    .iter()
                    .flat_map(|lab| [LaserChainConfig::seed_signal(lab), LaserChainConfig::amp_signal(lab)])
            })
            .collect()
    }

    pub fn signal(&self, name: &str) -> Option<&SignalDef> {
        self.signals.iter().find(|s| s.name == name)
    }

    pub fn unit_of(&self, name: &str) -> Option<Unit> {
        if let Some(s) = self.signal(name) {
            return Some(s.model.unit);
        }
        self.chain_signals().iter().any(|c| c == name).then_some(Unit::Milliwatt)
    }

    /// Signal indices in an order where every coupling source precedes its
    /// target.
    pub fn coupling_order(&self) -> Result<Vec<usize>, SimError> {
        let mut g = DiGraph::<usize, ()>::new();
        let ids: Vec<_> = (0..self.signals.len()).map(|i| g.add_node(i)).collect();
        let index: BTreeMap<&str, usize> = self
            .signals
            .iter()
            .enumerate()
            .map(|(i, s)| (s.name.as_str(), i))
            .collect();
        for c in &self.couplings {
            let (Some(&s), Some(&t)) = (index.get(c.source.as_str()), index.get(c.target.as_str())) else {
                let missing = if index.contains_key(c.source.as_str()) { &c.target } else { &c.source };
                return Err(SimError::UnknownSignal(missing.clone()));
            };
            g.add_edge(ids[s], ids[t], ());
        }
        toposort(&g, None)
            .map(|order| order.into_iter().map(|n| g[n]).collect())
            .map_err(|cycle| SimError::CyclicCoupling(self.signals[g[cycle.node_id()]].name.clone()))
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Invalid(m));
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad("duration_s must be > 0".into());
        }
        if !(self.step_s > 0.0 && self.step_s.is_finite()) {
            return bad("step_s must be > 0".into());
        }
        if self.samples() > 50_000_000 {
            return bad("duration_s / step_s is too large".into());
        }
        for p in [self.poll_interval_s, self.alert_period_s] {
            if !(p > 0.0 && p.is_finite()) {
                return bad("poll_interval_s and alert_period_s must be > 0".into());
            }
        }
        self.origin_ns()?;

        let chain = self.chain_signals();
        let mut names = BTreeSet::new();
        for s in &self.signals {
            if s.name.is_empty() || s.name.contains(':') {
                return bad(format!("signal name {:?} is empty or contains ':'", s.name));
            }
            if !names.insert(s.name.as_str()) {
                return bad(format!("duplicate signal {}", s.name));
            }
            if matches!(s.model.kind, SensorKind::Coupled { .. }) {
                return bad(format!("signal {}: use a [[coupling]] table instead of kind = coupled", s.name));
            }
            s.model.validate().map_err(|e| SimError::Invalid(format!("signal {}: {e}", s.name)))?;
        }
        let known = |n: &str| names.contains(n) || chain.iter().any(|c| c == n);

        for c in &self.couplings {
            if !(c.gain.is_finite() && c.noise_std >= 0.0 && c.noise_std.is_finite() && c.lag_s >= 0.0) {
                return bad(format!("coupling {} -> {}: gain, noise_std and lag_s must be finite, lag_s >= 0", c.source, c.target));
            }
            let steps = c.lag_s / self.step_s;
            if (steps - steps.round()).abs() > 1e-9 {
                return bad(format!("coupling {} -> {}: lag_s must be a multiple of step_s", c.source, c.target));
            }
        }
        self.coupling_order()?;

        let experiments: BTreeSet<&str> = self.experiments.iter().map(|e| e.name.as_str()).collect();
        for r in &self.regimes {
            if !(0.0 <= r.start_s && r.start_s < r.end_s && r.end_s <= self.duration_s) {
                return bad(format!("regime {:?} on {}: window must lie within the duration", r.label, r.target));
            }
            if !names.contains(r.target.as_str()) && !experiments.contains(r.target.as_str()) {
                return Err(SimError::UnknownSignal(r.target.clone()));
            }
            if r.noise_std.is_some_and(|n| !(n >= 0.0 && n.is_finite())) {
                return bad(format!("regime {:?}: noise_std must be >= 0", r.label));
            }
        }

        if let Some(l) = &self.laser {
            if !names.contains(l.source.as_str()) {
                return Err(SimError::UnknownSignal(l.source.clone()));
            }
            if l.labs.is_empty() || l.labs.len() != l.fiber_efficiency.len() {
                return bad("laser: labs and fiber_efficiency must be non-empty and of equal length".into());
            }
            if l.fiber_efficiency.iter().any(|e| !(0.0..=1.0).contains(e)) {
                return bad("laser: fiber efficiencies must lie in [0, 1]".into());
            }
            if !(l.amp_gain >= 0.0 && l.amp_max_mw >= 0.0 && l.drift_period_s > 0.0 && l.drift_amplitude.abs() < 1.0) {
                return bad("laser: amp_gain, amp_max_mw >= 0, drift_period_s > 0, |drift_amplitude| < 1".into());
            }
            if let Some(il) = &l.interlock {
                if !(il.min < il.max) {
                    return bad("laser interlock: min must be below max".into());
                }
            }
        }

        let mut node_names = BTreeSet::new();
        for n in &self.nodes {
            if !is_location_id(&n.room) || !is_location_id(&n.device) {
                return bad(format!("node {}: room and device must be location ids", n.name()));
            }
            if !node_names.insert(n.name()) {
                return bad(format!("duplicate node {}", n.name()));
            }
            if n.interval_s.is_some_and(|i| !(i > 0.0 && i.is_finite())) {
                return bad(format!("node {}: interval_s must be > 0", n.name()));
            }
            for s in &n.sensors {
                match (&s.signal, &s.model) {
                    (Some(sig), None) if known(sig) => {}
                    (Some(sig), None) => return Err(SimError::UnknownSignal(sig.clone())),
                    (None, Some(m)) => m
                        .validate()
                        .map_err(|e| SimError::Invalid(format!("node {}: {e}", n.name())))?,
                    _ => {
                        return bad(format!(
                            "node {} sensor {} {}: give either signal or an inline model",
                            n.name(),
                            s.measurement,
                            s.field
                        ))
                    }
                }
            }
        }

        for f in &self.faults {
            if !(f.at_s >= 0.0 && f.at_s < self.duration_s) {
                return bad(format!("fault at {} s lies outside the duration", f.at_s));
            }
            let lab_known = |lab: &str| self.laser.as_ref().is_some_and(|l| l.labs.iter().any(|x| x == lab));
            match &f.kind {
                FaultKind::FiberCouplingDrift { lab, change, ramp_s } => {
                    if !lab_known(lab) {
                        return bad(format!("fiber-coupling-drift: unknown lab {lab}"));
                    }
                    if !(*change > -1.0 && change.is_finite() && *ramp_s >= 0.0) {
                        return bad("fiber-coupling-drift: change must be > -1 and ramp_s >= 0".into());
                    }
                }
                FaultKind::SeedPowerSag { lab, depth, duration_s } => {
                    if !lab_known(lab) {
                        return bad(format!("seed-power-sag: unknown lab {lab}"));
                    }
                    if !(0.0..=1.0).contains(depth) || duration_s.is_some_and(|d| !(d > 0.0)) {
                        return bad("seed-power-sag: depth must lie in [0, 1] and duration_s > 0".into());
                    }
                }
                FaultKind::DatagramLoss { node, probability, duration_s } => {
                    if !node_names.contains(node) {
                        return bad(format!("datagram-loss: unknown node {node}"));
                    }
                    if !(0.0..=1.0).contains(probability) || !(*duration_s > 0.0) {
                        return bad("datagram-loss: probability must lie in [0, 1] and duration_s > 0".into());
                    }
                }
                FaultKind::NodeFreeze { node, duration_s } => {
                    if !node_names.contains(node) {
                        return bad(format!("node-freeze: unknown node {node}"));
                    }
                    if !(*duration_s > 0.0) {
                        return bad("node-freeze: duration_s must be > 0".into());
                    }
                }
            }
        }

        let mut exp_names = BTreeSet::new();
        for e in &self.experiments {
            e.validate()?;
            if !exp_names.insert(e.name.as_str()) || names.contains(e.name.as_str()) {
                return bad(format!("experiment name {} is not unique", e.name));
            }
            if let Some(s) = e.inputs().find(|s| !known(s)) {
                return Err(SimError::UnknownSignal(s.to_string()));
            }
        }
        Ok(())
    }
}

/// Gain that plants correlation `r` between a source of std `source_std`
/// and a target carrying independent noise of std `noise_std`:
/// `r = g·σs / √(g²σs² + σn²)`.
pub fn gain_for_correlation(r: f64, source_std: f64, noise_std: f64) -> f64 {
    r * noise_std / (source_std * (1.0 - r * r).sqrt())
}

/// Inverse of [`gain_for_correlation`].
pub fn planted_correlation(gain: f64, source_std: f64, noise_std: f64) -> f64 {
    let s = gain * source_std;
    s / (s * s + noise_std * noise_std).sqrt()
}
