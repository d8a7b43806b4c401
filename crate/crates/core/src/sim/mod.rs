//! Simulated laboratories: scenario traces, a shared laser chain, faults and
//! an experiment that pushes its results, all driven on a simulated clock.

mod experiment;
mod scenario;
mod trace;

use std::collections::BTreeMap;
use std::io;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use experiment::{effective_model, experiment_cycle, ATOM_FIELD, CLOUD_H_FIELD, CLOUD_V_FIELD};
pub use scenario::{
    builtin_names, builtin_text, gain_for_correlation, planted_correlation, Coupling, ExperimentModel, Fault,
    FaultKind, InterlockDef, LaserChainConfig, NodeDef, PositionModel, Regime, ScenarioConfig, SensorDef,
    Sensitivity, SignalDef, DEFAULT_START,
};
pub use trace::{generate_scenario, laser_chain, ChainTaps, SimEnvironment, Traces};

use crate::alert::{put_rule, AlertEngine, AlertEvent, AmplifierCommand, Notifier, RuleStoreError, UreqPoster};
use crate::clock::{secs_to_ns, Clock, ManualClock};
use crate::collector::{Collector, CollectorStatus, DeliveryReport, InProcessTransport, RegistryEntry};
use crate::node::{LossInjector, NodeAgent, NodeConfig, NodeError, SensorKind, SensorModel};
use crate::sink::PointSink;
use crate::storage::{StorageError, Store};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("scenario does not parse: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("unknown signal {0:?}")]
    UnknownSignal(String),
    #[error("couplings form a cycle through {0:?}")]
    CyclicCoupling(String),
    #[error("no built-in scenario named {0:?}")]
    UnknownScenario(String),
    #[error(transparent)]
    Node(#[from] NodeError),
    #[error(transparent)]
    Rules(#[from] RuleStoreError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Totals for a (partial) run.
#[derive(Debug, Clone, Default, Serialize)]
pub struct SimReport {
    pub now_ns: i64,
    pub poll_cycles: u64,
    pub polls: u64,
    pub responses: u64,
    pub node_points: u64,
    pub experiment_points: u64,
    pub write_errors: u64,
    pub alert_passes: u64,
    #[serde(skip)]
    pub events: Vec<AlertEvent>,
    pub commands: Vec<(String, AmplifierCommand, i64)>,
}

struct ExperimentRunner {
    model: ExperimentModel,
    rng: ChaCha8Rng,
    next_ns: i64,
    cycle_ns: i64,
}

struct Alerts {
    store: Arc<Store>,
    engine: AlertEngine,
    next_ns: i64,
    period_ns: i64,
    labs: BTreeMap<String, String>,
}

/// Deterministic closed-loop run of a scenario: node agents behind an
/// in-process transport, the collector, the experiments and optionally the
/// alert engine, all on one manual clock.
pub struct Simulation {
    config: ScenarioConfig,
    env: Arc<SimEnvironment>,
    clock: ManualClock,
    collector: Option<Collector<InProcessTransport>>,
    sink: Arc<dyn PointSink>,
    experiments: Vec<ExperimentRunner>,
    alerts: Option<Alerts>,
    /// `(time, node, loss probability)`, sorted by time.
    loss_changes: Vec<(i64, usize, f64)>,
    origin_ns: i64,
    end_ns: i64,
    pace: Option<(f64, Instant)>,
    report: SimReport,
}

fn node_seed(seed: u64, i: usize) -> u64 {
    seed ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl Simulation {
    /// Points from nodes and experiments go to `sink`; no alerting.
    pub fn new(config: ScenarioConfig, sink: Arc<dyn PointSink>) -> Result<Self, SimError> {
        let traces = Arc::new(generate_scenario(&config)?);
        let origin = traces.origin_ns;
        let labs = config.laser.as_ref().map(|l| l.labs.clone()).unwrap_or_default();
        let env = Arc::new(SimEnvironment::new(traces, labs));
        let clock = ManualClock::new(origin);
        let node_index: BTreeMap<String, usize> =
            config.nodes.iter().enumerate().map(|(i, n)| (n.name(), i)).collect();

        let mut agents = Vec::new();
        let mut registry = Vec::new();
        for (i, n) in config.nodes.iter().enumerate() {
            let mut nc = NodeConfig::pull(&n.room, &n.device, "127.0.0.1:0".parse().expect("literal"));
            nc.seed = node_seed(config.seed, i);
            nc.origin_ns = Some(origin);
            for s in &n.sensors {
                let model = match (&s.signal, &s.model) {
                    (Some(sig), _) => SensorModel {
                        kind: SensorKind::Coupled {
                            source: sig.clone(),
                            gain: 1.0,
                        },
                        base: 0.0,
                        noise_std: 0.0,
                        unit: config.unit_of(sig).expect("validated signal"),
                    },
                    (None, Some(m)) => m.clone(),
                    (None, None) => unreachable!("validated sensor"),
                };
                nc = nc.sensor(&s.measurement, &s.field, model);
            }
            agents.push(NodeAgent::new(nc, origin)?);
            let interval = n.interval_s.unwrap_or(config.poll_interval_s);
            registry.push(RegistryEntry::new(&n.room, &n.device, "in-process", interval));
        }

        let mut loss_changes = Vec::new();
        for f in &config.faults {
            let (start, end) = f.window_s();
            let at = |s: f64| origin + secs_to_ns(s);
            match &f.kind {
                FaultKind::NodeFreeze { node, .. } => agents[node_index[node]].freeze(at(start), at(end)),
                FaultKind::DatagramLoss { node, probability, .. } => {
                    let i = node_index[node];
                    loss_changes.push((at(start), i, *probability));
                    loss_changes.push((at(end), i, 0.0));
                }
                _ => {}
            }
        }
        loss_changes.sort_by(|a, b| a.0.cmp(&b.0));

        let collector = (!agents.is_empty()).then(|| {
            let dyn_env: Arc<dyn crate::node::Environment> = env.clone();
            Collector::new(
                registry,
                InProcessTransport::new(agents, dyn_env),
                Arc::new(clock.clone()),
                sink.clone(),
            )
        });

        let experiments = config
            .experiments
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream((1 << 40) + i as u64);
                ExperimentRunner {
                    model: m.clone(),
                    rng,
                    next_ns: origin,
                    cycle_ns: secs_to_ns(m.cycle_s),
                }
            })
            .collect();

        Ok(Self {
            origin_ns: origin,
            end_ns: origin + config.duration_ns(),
            config,
            env,
            clock,
            collector,
            sink,
            experiments,
            alerts: None,
            loss_changes,
            pace: None,
            report: SimReport {
                now_ns: origin,
                ..SimReport::default()
            },
        })
    }

    /// Writes into `store` and evaluates its alert rules every
    /// `alert_period_s`. The laser interlock rules, if configured, are
    /// installed into the store first.
    pub fn with_store(config: ScenarioConfig, store: Arc<Store>) -> Result<Self, SimError> {
        let mut sim = Self::new(config, store.clone())?;
        for node in &sim.config.nodes {
            for s in &node.sensors {
                let unit = match (&s.model, &s.signal) {
                    (Some(m), _) => Some(m.unit),
                    (None, Some(sig)) => sim.config.unit_of(sig),
                    (None, None) => None,
                };
                if let Some(u) = unit {
                    store.set_unit(&s.measurement, &s.field, u.label())?;
                }
            }
        }
        let mut labs = BTreeMap::new();
        if let Some(l) = &sim.config.laser {
            for rule in l.interlock_rules() {
                put_rule(&store, rule)?;
            }
            for lab in &l.labs {
                labs.insert(LaserChainConfig::interlock_rule_id(lab), lab.clone());
            }
        }
        sim.alerts = Some(Alerts {
            store,
            engine: AlertEngine::new(Notifier::new(Arc::new(UreqPoster::default()))),
            next_ns: sim.origin_ns,
            period_ns: secs_to_ns(sim.config.alert_period_s),
            labs,
        });
        Ok(sim)
    }

    /// Paces the run against the wall clock at `scale` simulated seconds per
    /// wall second.
    pub fn paced(mut self, scale: f64) -> Self {
        self.pace = (scale > 0.0).then(|| (scale, Instant::now()));
        self
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn environment(&self) -> &Arc<SimEnvironment> {
        &self.env
    }

    pub fn traces(&self) -> &Traces {
        self.env.traces()
    }

    pub fn clock(&self) -> &ManualClock {
        &self.clock
    }

    pub fn origin_ns(&self) -> i64 {
        self.origin_ns
    }

    pub fn end_ns(&self) -> i64 {
        self.end_ns
    }

    pub fn report(&self) -> &SimReport {
        &self.report
    }

    pub fn alert_engine(&self) -> Option<&AlertEngine> {
        self.alerts.as_ref().map(|a| &a.engine)
    }

    pub fn collector_status(&self) -> Option<CollectorStatus> {
        self.collector.as_ref().map(|c| c.status_handle().read().clone())
    }

    pub fn delivery_report(&self, start_ns: i64, end_ns: i64) -> Option<DeliveryReport> {
        self.collector.as_ref().map(|c| c.delivery_report(start_ns, end_ns))
    }

    fn next_event(&self) -> Option<i64> {
        let collector = self.collector.as_ref().and_then(|c| c.next_due_ns());
        let exp = self.experiments.iter().map(|e| e.next_ns).min();
        let alerts = self.alerts.as_ref().map(|a| a.next_ns);
        let loss = self.loss_changes.first().map(|l| l.0);
        [collector, exp, alerts, loss].into_iter().flatten().min()
    }

    fn wait_for(&self, t_ns: i64) {
        if let Some((scale, started)) = self.pace {
            let target = started + Duration::from_secs_f64(t_ns.saturating_sub(self.origin_ns).max(0) as f64 / 1e9 / scale);
            let now = Instant::now();
            if target > now {
                std::thread::sleep(target - now);
            }
        }
    }

    /// Advances to the next scheduled event before `until_ns` and handles
    /// everything due then. Returns `false` once nothing is left.
    pub fn step(&mut self, until_ns: i64) -> Result<bool, SimError> {
        let until = until_ns.min(self.end_ns);
        let Some(now) = self.next_event().filter(|&t| t < until) else {
            return Ok(false);
        };
        self.wait_for(now);
        self.clock.set(now.max(self.clock.now_ns()));
        self.report.now_ns = now;

        while self.loss_changes.first().is_some_and(|l| l.0 <= now) {
            let (_, node, p) = self.loss_changes.remove(0);
            if let Some(c) = self.collector.as_mut() {
                c.transport_mut().loss[node] = if p > 0.0 {
                    LossInjector::new(p, node_seed(self.config.seed, node) ^ now as u64)
                } else {
                    LossInjector::none()
                };
            }
        }

        if let Some(c) = self.collector.as_mut() {
            if c.next_due_ns().is_some_and(|d| d <= now) {
                let r = c.poll_cycle()?;
                self.report.poll_cycles += 1;
                self.report.polls += r.polled as u64;
                self.report.responses += r.responses as u64;
                self.report.node_points += r.forwarded as u64;
            }
        }

        for e in &mut self.experiments {
            if e.next_ns > now {
                continue;
            }
            let elapsed_s = (e.next_ns - self.origin_ns) as f64 / 1e9;
            let model = effective_model(&e.model, &self.config.regimes, elapsed_s);
            let env = &self.env;
            let at = e.next_ns;
            let point = experiment_cycle(&model, |s| env.deviation(s, at), at, &mut e.rng)?;
            match self.sink.write_points(std::slice::from_ref(&point)) {
                Ok(_) => self.report.experiment_points += 1,
                Err(err) => {
                    self.report.write_errors += 1;
                    log::warn!("experiment {}: {err}", model.name);
                }
            }
            e.next_ns += e.cycle_ns;
        }

        if let Some(a) = self.alerts.as_mut() {
            if a.next_ns <= now {
                let pass = a.engine.evaluate_store(&a.store, now)?;
                self.report.alert_passes += 1;
                for (rule, cmd, at) in &pass.commands {
                    if let Some(lab) = a.labs.get(rule) {
                        self.env
                            .set_amplifier_off(lab, *at, *cmd == AmplifierCommand::AmplifierOff);
                    }
                }
                self.report.commands.extend(pass.commands);
                self.report.events.extend(pass.events);
                a.next_ns += a.period_ns;
            }
        }
        Ok(true)
    }

    /// Runs every event before `until_ns` (or the end of the scenario).
    pub fn run_until(&mut self, until_ns: i64) -> Result<&SimReport, SimError> {
        while self.step(until_ns)? {}
        Ok(&self.report)
    }

    pub fn run(&mut self) -> Result<&SimReport, SimError> {
        self.run_until(self.end_ns)
    }
}
