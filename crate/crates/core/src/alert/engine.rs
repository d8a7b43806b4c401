//! Periodic evaluation of the persisted rule set.

use std::collections::{BTreeMap, VecDeque};

use parking_lot::Mutex;
use serde::Serialize;

use super::notify::{NotifyOutcome, NotifySink};
use super::{
    evaluate_rate, evaluate_threshold, interlock_reset, interlock_step, AlertEvent, AlertRule,
    AmplifierCommand, DeliveryRecord, EventState, InterlockMode, InterlockState, Notifier,
    RateOutcome, RuleError, RuleKind,
};
use crate::clock::secs_to_ns;
use crate::storage::{SeriesFrame, SeriesQuery, StorageError, Store};

pub const RULES_META: &str = "alerts.json";
const EVENT_CAPACITY: usize = 1_000;

static RULES_LOCK: Mutex<()> = Mutex::new(());

#[derive(Debug, thiserror::Error)]
pub enum RuleStoreError {
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Invalid(#[from] RuleError),
    #[error("stored rules are unreadable: {0}")]
    Corrupt(String),
}

fn read_rules(store: &Store) -> Result<Vec<AlertRule>, RuleStoreError> {
    match store.read_meta(RULES_META)? {
        None => Ok(Vec::new()),
        Some(text) => serde_json::from_str(&text).map_err(|e| RuleStoreError::Corrupt(e.to_string())),
    }
}

fn write_rules(store: &Store, rules: &[AlertRule]) -> Result<(), RuleStoreError> {
    let text = serde_json::to_string_pretty(rules).expect("serializable");
    Ok(store.write_meta(RULES_META, &text)?)
}

pub fn load_rules(store: &Store) -> Result<Vec<AlertRule>, RuleStoreError> {
    let _g = RULES_LOCK.lock();
    read_rules(store)
}

/// Creates or replaces a rule. An empty id is assigned `rule-<n>`. Returns
/// the stored rule and whether it was new.
pub fn put_rule(store: &Store, mut rule: AlertRule) -> Result<(AlertRule, bool), RuleStoreError> {
    let _g = RULES_LOCK.lock();
    let mut rules = read_rules(store)?;
    if rule.id.is_empty() {
        let n = rules
            .iter()
            .filter_map(|r| r.id.strip_prefix("rule-")?.parse::<u64>().ok())
            .max()
            .map_or(1, |n| n + 1);
        rule.id = format!("rule-{n}");
    }
    rule.validate()?;
    let created = match rules.iter_mut().find(|r| r.id == rule.id) {
        Some(r) => {
            *r = rule.clone();
            false
        }
        None => {
            rules.push(rule.clone());
            true
        }
    };
    write_rules(store, &rules)?;
    Ok((rule, created))
}

/// Removes a rule; false when no rule had that id.
pub fn delete_rule(store: &Store, id: &str) -> Result<bool, RuleStoreError> {
    let _g = RULES_LOCK.lock();
    let mut rules = read_rules(store)?;
    let before = rules.len();
    rules.retain(|r| r.id != id);
    if rules.len() == before {
        return Ok(false);
    }
    write_rules(store, &rules)?;
    Ok(true)
}

#[derive(Debug, Clone, Default)]
struct Runtime {
    firing: bool,
    interlock: InterlockState,
    stale: u64,
    last_sample_ns: Option<i64>,
    next_due_ns: Option<i64>,
    last_value: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RuleStatus {
    pub rule: AlertRule,
    pub firing: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interlock: Option<InterlockState>,
    pub stale: u64,
    pub last_value: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct PassReport {
    pub evaluated: usize,
    pub events: Vec<AlertEvent>,
    pub commands: Vec<(String, AmplifierCommand, i64)>,
    pub deliveries: Vec<DeliveryRecord>,
}

pub struct AlertEngine {
    rules: Vec<AlertRule>,
    runtime: BTreeMap<String, Runtime>,
    notifier: Notifier,
    events: VecDeque<AlertEvent>,
}

impl AlertEngine {
    pub fn new(notifier: Notifier) -> Self {
        Self {
            rules: Vec::new(),
            runtime: BTreeMap::new(),
            notifier,
            events: VecDeque::new(),
        }
    }

    /// Replaces the rule set. Runtime state survives for ids that remain;
    /// interlock state is dropped when a rule stops being an interlock.
    pub fn set_rules(&mut self, rules: Vec<AlertRule>) {
        self.runtime.retain(|id, _| rules.iter().any(|r| &r.id == id));
        for r in &rules {
            if let Some(rt) = self.runtime.get_mut(&r.id) {
                if !matches!(r.kind, RuleKind::Interlock { .. }) {
                    rt.interlock = InterlockState::default();
                }
            }
        }
        self.rules = rules;
    }

    pub fn rules(&self) -> &[AlertRule] {
        &self.rules
    }

    /// Re-reads the persisted rules, then evaluates every due rule.
    pub fn evaluate_store(&mut self, store: &Store, now_ns: i64) -> Result<PassReport, RuleStoreError> {
        self.set_rules(load_rules(store)?);
        Ok(self.evaluate(store, now_ns)?)
    }

    fn frames(store: &Store, rule: &AlertRule, start: i64, now_ns: i64) -> Result<Vec<SeriesFrame>, StorageError> {
        if start > now_ns {
            return Ok(Vec::new());
        }
        let mut q = SeriesQuery::new(&rule.selector.measurement, start, now_ns.saturating_add(1))
            .field(&rule.selector.field);
        for (k, v) in &rule.selector.tags {
            q = q.tag(k, v);
        }
        store.query(&q)
    }

    /// Evaluates the current rule set against `store` without reloading it.
    pub fn evaluate(&mut self, store: &Store, now_ns: i64) -> Result<PassReport, StorageError> {
        let mut report = PassReport::default();
        for rule in self.rules.clone() {
            let rt = self.runtime.entry(rule.id.clone()).or_default();
            if rt.next_due_ns.is_some_and(|d| d > now_ns) {
                continue;
            }
            rt.next_due_ns = Some(now_ns + rule.period_ns());
            report.evaluated += 1;
            let mut events = Vec::new();
            match &rule.kind {
                RuleKind::Threshold { .. } | RuleKind::Interlock { .. } => {
                    let start = rt
                        .last_sample_ns
                        .map_or(now_ns.saturating_sub(rule.period_ns()), |t| t.saturating_add(1));
                    let frames = Self::frames(store, &rule, start, now_ns)?;
                    if frames.iter().all(|f| f.is_empty()) {
                        rt.stale += 1;
                        continue;
                    }
                    let last = frames.iter().filter_map(|f| f.times.last()).max().copied();
                    rt.last_sample_ns = last.max(rt.last_sample_ns);
                    rt.last_value = frames
                        .iter()
                        .filter(|f| f.times.last().copied() == last)
                        .find_map(|f| f.values.last().copied());
                    if let Some(params) = rule.interlock_params() {
                        let mut samples: Vec<(i64, f64)> = frames.iter().flat_map(|f| f.iter()).collect();
                        samples.sort_by_key(|s| s.0);
                        for (t, v) in samples {
                            let before = rt.interlock;
                            let (next, cmd) = interlock_step(before, &params, v, t);
                            rt.interlock = next;
                            if let Some(cmd) = cmd {
                                report.commands.push((rule.id.clone(), cmd, t));
                                events.push(interlock_event(&rule, &next, cmd, v, t));
                            }
                        }
                        rt.firing = rt.interlock.mode == InterlockMode::Tripped;
                    } else {
                        events = evaluate_threshold(&rule, &frames, &mut rt.firing);
                    }
                }
                RuleKind::Rate { lookback_s, .. } => {
                    let start = now_ns.saturating_sub(secs_to_ns(*lookback_s));
                    let frames = Self::frames(store, &rule, start, now_ns)?;
                    match evaluate_rate(&rule, &frames, &mut rt.firing) {
                        RateOutcome::InsufficientData => rt.stale += 1,
                        RateOutcome::Evaluated {
                            slope_per_min,
                            events: ev,
                        } => {
                            rt.last_value = Some(slope_per_min);
                            events = ev;
                        }
                    }
                }
            }
            let sink = rule
                .sink
                .as_deref()
                .map_or(Ok(NotifySink::Console), NotifySink::parse)
                .unwrap_or(NotifySink::Console);
            for e in events {
                if let NotifyOutcome::Delivered(r) = self.notifier.notify(&e, &sink, now_ns) {
                    report.deliveries.push(r);
                }
                self.push_event(e.clone());
                report.events.push(e);
            }
        }
        report.deliveries.extend(self.notifier.retry_pending(now_ns));
        Ok(report)
    }

    fn push_event(&mut self, e: AlertEvent) {
        if self.events.len() >= EVENT_CAPACITY {
            self.events.pop_front();
        }
        self.events.push_back(e);
    }

    /// Re-arms a tripped interlock by hand.
    pub fn reset_interlock(&mut self, rule_id: &str, now_ns: i64) -> Option<AmplifierCommand> {
        let rule = self.rules.iter().find(|r| r.id == rule_id)?.clone();
        rule.interlock_params()?;
        let rt = self.runtime.entry(rule.id.clone()).or_default();
        let (next, cmd) = interlock_reset(rt.interlock, now_ns);
        rt.interlock = next;
        rt.firing = false;
        if let Some(c) = cmd {
            let e = interlock_event(&rule, &next, c, f64::NAN, now_ns);
            let e = AlertEvent {
                values: Vec::new(),
                message: "interlock reset by operator".into(),
                ..e
            };
            self.push_event(e);
        }
        cmd
    }

    pub fn status(&self) -> Vec<RuleStatus> {
        self.rules
            .iter()
            .map(|r| {
                let rt = self.runtime.get(&r.id).cloned().unwrap_or_default();
                RuleStatus {
                    rule: r.clone(),
                    firing: rt.firing,
                    interlock: r.interlock_params().map(|_| rt.interlock),
                    stale: rt.stale,
                    last_value: rt.last_value,
                }
            })
            .collect()
    }

    pub fn active_count(&self) -> usize {
        self.runtime.values().filter(|r| r.firing).count()
    }

    /// Events with `at_ns >= since`, oldest first.
    pub fn events_since(&self, since: i64) -> Vec<AlertEvent> {
        self.events.iter().filter(|e| e.at_ns >= since).cloned().collect()
    }

    pub fn notifier(&self) -> &Notifier {
        &self.notifier
    }
}

fn interlock_event(
    rule: &AlertRule,
    state: &InterlockState,
    cmd: AmplifierCommand,
    value: f64,
    at_ns: i64,
) -> AlertEvent {
    let (st, message) = match cmd {
        AmplifierCommand::AmplifierOff => (
            EventState::Firing,
            format!(
                "interlock tripped ({:?}) at {} = {value}: amplifier off",
                state.cause.expect("tripped"),
                rule.selector.field
            ),
        ),
        AmplifierCommand::AmplifierOn => (
            EventState::Resolved,
            format!("interlock re-armed at {} = {value}: amplifier on", rule.selector.field),
        ),
    };
    AlertEvent {
        rule_id: rule.id.clone(),
        at_ns,
        values: vec![value],
        state: st,
        message,
    }
}
