//! Alert rules: static thresholds, rate-of-change limits and the seed-power
//! interlock.

mod engine;
mod notify;

pub use engine::{
    delete_rule, load_rules, put_rule, AlertEngine, PassReport, RuleStatus, RuleStoreError,
    RULES_META,
};
pub use notify::{
    log_line, rfc3339, DeliveryRecord, HttpPoster, Notifier, NotifyOutcome, NotifySink,
    UreqPoster, WebhookBody,
};

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::clock::NANOS_PER_SEC;
use crate::storage::{SeriesFrame, SeriesKey};

pub const DEFAULT_PERIOD_S: f64 = 20.0;
pub const DEFAULT_RATE_LOOKBACK_S: f64 = 600.0;
/// Default interlock hysteresis as a fraction of the allowed range.
pub const DEFAULT_MARGIN_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid rule: {0}")]
pub struct RuleError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = ">=", alias = "≥")]
    Ge,
    #[serde(rename = "<=", alias = "≤")]
    Le,
}

impl Comparator {
    /// True when `value` violates the rule, e.g. `value > limit` for `>`.
    pub fn violated(self, value: f64, limit: f64) -> bool {
        match self {
            Self::Gt => value > limit,
            Self::Lt => value < limit,
            Self::Ge => value >= limit,
            Self::Le => value <= limit,
        }
    }
}

impl fmt::Display for Comparator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Gt => ">",
            Self::Lt => "<",
            Self::Ge => ">=",
            Self::Le => "<=",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selector {
    pub measurement: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tags: BTreeMap<String, String>,
    pub field: String,
}

impl Selector {
    pub fn matches(&self, key: &SeriesKey) -> bool {
        key.measurement == self.measurement
            && key.field == self.field
            && self.tags.iter().all(|(k, v)| key.tag(k) == Some(v.as_str()))
    }
}

fn default_lookback() -> f64 {
    DEFAULT_RATE_LOOKBACK_S
}

fn default_latching() -> bool {
    true
}

fn default_period() -> f64 {
    DEFAULT_PERIOD_S
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RuleKind {
    Threshold {
        comparator: Comparator,
        limit: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        unit: Option<String>,
    },
    Rate {
        /// Largest allowed |slope|, in units per minute.
        max_per_min: f64,
        #[serde(default = "default_lookback")]
        lookback_s: f64,
    },
    Interlock {
        min: f64,
        max: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        margin: Option<f64>,
        #[serde(default = "default_latching")]
        latching: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertRule {
    #[serde(default)]
    pub id: String,
    pub selector: Selector,
    #[serde(flatten)]
    pub kind: RuleKind,
    #[serde(default = "default_period")]
    pub period_s: f64,
    /// `console`, `log:<path>` or `webhook:<url>`; console when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sink: Option<String>,
}

impl AlertRule {
    pub fn threshold(id: &str, selector: Selector, comparator: Comparator, limit: f64) -> Self {
        Self {
            id: id.into(),
            selector,
            kind: RuleKind::Threshold {
                comparator,
                limit,
                unit: None,
            },
            period_s: DEFAULT_PERIOD_S,
            sink: None,
        }
    }

    pub fn rate(id: &str, selector: Selector, max_per_min: f64, lookback_s: f64) -> Self {
        Self {
            id: id.into(),
            selector,
            kind: RuleKind::Rate {
                max_per_min,
                lookback_s,
            },
            period_s: DEFAULT_PERIOD_S,
            sink: None,
        }
    }

    pub fn interlock(id: &str, selector: Selector, min: f64, max: f64, latching: bool) -> Self {
        Self {
            id: id.into(),
            selector,
            kind: RuleKind::Interlock {
                min,
                max,
                margin: None,
                latching,
            },
            period_s: DEFAULT_PERIOD_S,
            sink: None,
        }
    }

    pub fn period_ns(&self) -> i64 {
        (self.period_s * NANOS_PER_SEC as f64).round() as i64
    }

    pub fn validate(&self) -> Result<(), RuleError> {
        let bad = |m: String| Err(RuleError(m));
        if !crate::wire::is_location_id(&self.id) {
            return bad(format!("id {:?} must be non-empty [A-Za-z0-9_-]", self.id));
        }
        if self.selector.measurement.is_empty() || self.selector.field.is_empty() {
            return bad("selector needs a measurement and a field".into());
        }
        if !(self.period_s.is_finite() && self.period_s > 0.0) {
            return bad(format!("period_s must be positive, got {}", self.period_s));
        }
        if let Some(s) = &self.sink {
            NotifySink::parse(s).map_err(RuleError)?;
        }
        match &self.kind {
            RuleKind::Threshold { limit, .. } if !limit.is_finite() => bad("limit must be finite".into()),
            RuleKind::Rate {
                max_per_min,
                lookback_s,
            } => {
                if !(max_per_min.is_finite() && *max_per_min >= 0.0) {
                    bad("max_per_min must be finite and non-negative".into())
                } else if !(lookback_s.is_finite() && *lookback_s >= 2.0 * self.period_s) {
                    bad(format!(
                        "lookback_s ({lookback_s}) must be at least two evaluation periods"
                    ))
                } else {
                    Ok(())
                }
            }
            RuleKind::Interlock { .. } => {
                let p = self.interlock_params().expect("interlock rule");
                if !(p.min.is_finite() && p.max.is_finite() && p.min < p.max) {
                    bad("interlock needs finite min < max".into())
                } else if !(p.margin.is_finite() && p.margin >= 0.0) {
                    bad("margin must be non-negative".into())
                } else if p.min + p.margin > p.max - p.margin {
                    bad("margin leaves no re-arm band".into())
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    pub fn interlock_params(&self) -> Option<InterlockParams> {
        match self.kind {
            RuleKind::Interlock {
                min,
                max,
                margin,
                latching,
            } => Some(InterlockParams {
                min,
                max,
                margin: margin.unwrap_or(DEFAULT_MARGIN_FRACTION * (max - min)),
                latching,
            }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventState {
    Firing,
    Resolved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertEvent {
    pub rule_id: String,
    /// Time of the sample that caused the event.
    pub at_ns: i64,
    pub values: Vec<f64>,
    pub state: EventState,
    pub message: String,
}

/// Replays threshold samples in time order. Samples sharing a timestamp are
/// judged together: the rule is violated there if any of them violates.
pub fn evaluate_threshold(
    rule: &AlertRule,
    frames: &[SeriesFrame],
    firing: &mut bool,
) -> Vec<AlertEvent> {
    let RuleKind::Threshold {
        comparator,
        limit,
        ref unit,
    } = rule.kind
    else {
        return Vec::new();
    };
    let unit = unit.as_deref().unwrap_or("");
    let mut by_time: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for f in frames {
        for (t, v) in f.iter() {
            by_time.entry(t).or_default().push(v);
        }
    }
    let mut events = Vec::new();
    for (t, values) in by_time {
        let violated = values.iter().any(|&v| comparator.violated(v, limit));
        if violated != *firing {
            *firing = violated;
            let worst = values
                .iter()
                .copied()
                .find(|&v| comparator.violated(v, limit) == violated)
                .expect("at least one sample");
            let message = if violated {
                format!("{} = {worst}{unit} {comparator} {limit}{unit}", rule.selector.field)
            } else {
                format!("{} = {worst}{unit} back within limit {limit}{unit}", rule.selector.field)
            };
            events.push(AlertEvent {
                rule_id: rule.id.clone(),
                at_ns: t,
                values,
                state: if violated {
                    EventState::Firing
                } else {
                    EventState::Resolved
                },
                message,
            });
        }
    }
    events
}

/// Least-squares slope of `values` against `times` (ns), in units per minute.
/// `None` with fewer than two distinct timestamps.
pub fn slope_per_minute(times: &[i64], values: &[f64]) -> Option<f64> {
    let n = times.len().min(values.len());
    if n < 2 {
        return None;
    }
    let t0 = times[0];
    let x: Vec<f64> = times[..n]
        .iter()
        .map(|&t| (t - t0) as f64 / (60.0 * NANOS_PER_SEC as f64))
        .collect();
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = values[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (xi, yi) in x.iter().zip(&values[..n]) {
        sxy += (xi - mx) * (yi - my);
        sxx += (xi - mx) * (xi - mx);
    }
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Outcome of a rate evaluation; `InsufficientData` when no matching series
/// has two samples in the lookback window.
#[derive(Debug, Clone, PartialEq)]
pub enum RateOutcome {
    Evaluated {
        slope_per_min: f64,
        events: Vec<AlertEvent>,
    },
    InsufficientData,
}

/// Evaluates the steepest matching series over `frames`, which must already
/// be restricted to the lookback window.
pub fn evaluate_rate(rule: &AlertRule, frames: &[SeriesFrame], firing: &mut bool) -> RateOutcome {
    let RuleKind::Rate { max_per_min, .. } = rule.kind else {
        return RateOutcome::InsufficientData;
    };
    let mut steepest: Option<(f64, i64)> = None;
    for f in frames {
        if let Some(s) = slope_per_minute(&f.times, &f.values) {
            let last = *f.times.last().expect("two samples");
            if steepest.map_or(true, |(b, _)| s.abs() > b.abs()) {
                steepest = Some((s, last));
            }
        }
    }
    let Some((slope, at_ns)) = steepest else {
        return RateOutcome::InsufficientData;
    };
    let violated = slope.abs() > max_per_min;
    let mut events = Vec::new();
    if violated != *firing {
        *firing = violated;
        events.push(AlertEvent {
            rule_id: rule.id.clone(),
            at_ns,
            values: vec![slope],
            state: if violated {
                EventState::Firing
            } else {
                EventState::Resolved
            },
            message: format!(
                "{} changing at {slope:.4}/min (limit {max_per_min}/min)",
                rule.selector.field
            ),
        });
    }
    RateOutcome::Evaluated {
        slope_per_min: slope,
        events,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterlockParams {
    pub min: f64,
    pub max: f64,
    pub margin: f64,
    pub latching: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterlockMode {
    Armed,
    Tripped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripCause {
    BelowMin,
    AboveMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterlockState {
    pub mode: InterlockMode,
    pub last_transition_ns: i64,
    pub cause: Option<TripCause>,
}

impl Default for InterlockState {
    fn default() -> Self {
        Self {
            mode: InterlockMode::Armed,
            last_transition_ns: 0,
            cause: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmplifierCommand {
    AmplifierOff,
    AmplifierOn,
}

/// One step of the seed-power interlock. Out of `[min, max]` trips an armed
/// interlock; a tripped non-latching interlock re-arms only inside
/// `[min + margin, max - margin]`; a latching one waits for [`interlock_reset`].
pub fn interlock_step(
    state: InterlockState,
    p: &InterlockParams,
    value: f64,
    at_ns: i64,
) -> (InterlockState, Option<AmplifierCommand>) {
    match state.mode {
        InterlockMode::Armed => {
            let cause = if value < p.min {
                Some(TripCause::BelowMin)
            } else if value > p.max {
                Some(TripCause::AboveMax)
            } else {
                None
            };
            match cause {
                Some(c) => (
                    InterlockState {
                        mode: InterlockMode::Tripped,
                        last_transition_ns: at_ns,
                        cause: Some(c),
                    },
                    Some(AmplifierCommand::AmplifierOff),
                ),
                None => (state, None),
            }
        }
        InterlockMode::Tripped => {
            let guarded = value >= p.min + p.margin && value <= p.max - p.margin;
            if !p.latching && guarded {
                (
                    InterlockState {
                        mode: InterlockMode::Armed,
                        last_transition_ns: at_ns,
                        cause: None,
                    },
                    Some(AmplifierCommand::AmplifierOn),
                )
            } else {
                (state, None)
            }
        }
    }
}

/// Manual reset of a tripped interlock.
pub fn interlock_reset(
    state: InterlockState,
    at_ns: i64,
) -> (InterlockState, Option<AmplifierCommand>) {
    match state.mode {
        InterlockMode::Armed => (state, None),
        InterlockMode::Tripped => (
            InterlockState {
                mode: InterlockMode::Armed,
                last_transition_ns: at_ns,
                cause: None,
            },
            Some(AmplifierCommand::AmplifierOn),
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sel() -> Selector {
        Selector {
            measurement: "temperature".into(),
            tags: BTreeMap::new(),
            field: "T1".into(),
        }
    }

    fn frame(values: &[f64], step_s: i64) -> SeriesFrame {
        let key = SeriesKey::new("temperature", &BTreeMap::new(), "T1");
        SeriesFrame::from_points(
            key,
            values
                .iter()
                .enumerate()
                .map(|(i, v)| (i as i64 * step_s * NANOS_PER_SEC, *v)),
        )
    }

    #[test]
    fn threshold_fires_at_third_sample() {
        let rule = AlertRule::threshold("hot", sel(), Comparator::Gt, 30.0);
        let mut firing = false;
        let ev = evaluate_threshold(&rule, &[frame(&[28.0, 29.0, 31.0], 20)], &mut firing);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].at_ns, 40 * NANOS_PER_SEC);
        assert_eq!(ev[0].state, EventState::Firing);
        assert!(firing);
        let mut firing = false;
        assert!(evaluate_threshold(&rule, &[frame(&[1.0, 2.0], 20)], &mut firing).is_empty());
    }

    #[test]
    fn rate_ramp_and_flat() {
        let rule = AlertRule::rate("bake", sel(), 1.0, 600.0);
        // 2 °C/min sampled every 20 s.
        let ramp: Vec<f64> = (0..30).map(|i| 20.0 + i as f64 * 2.0 / 3.0).collect();
        let mut firing = false;
        let RateOutcome::Evaluated { slope_per_min, events } = evaluate_rate(&rule, &[frame(&ramp, 20)], &mut firing)
        else {
            panic!("insufficient data")
        };
        assert!((slope_per_min - 2.0).abs() < 1e-9);
        assert_eq!(events[0].state, EventState::Firing);
        let mut firing = false;
        let out = evaluate_rate(&rule, &[frame(&[5.0; 30], 20)], &mut firing);
        assert!(matches!(out, RateOutcome::Evaluated { ref events, .. } if events.is_empty()));
        assert_eq!(evaluate_rate(&rule, &[frame(&[5.0], 20)], &mut firing), RateOutcome::InsufficientData);
    }

    #[test]
    fn interlock_examples() {
        let p = InterlockParams {
            min: 10.0,
            max: 20.0,
            margin: 0.5,
            latching: false,
        };
        let armed = InterlockState::default();
        let (s, cmd) = interlock_step(armed, &p, 9.0, 5);
        assert_eq!((s.mode, s.cause, cmd), (InterlockMode::Tripped, Some(TripCause::BelowMin), Some(AmplifierCommand::AmplifierOff)));
        assert_eq!(interlock_step(armed, &p, 15.0, 5), (armed, None));
        // Inside the range but within the margin: stays tripped.
        assert_eq!(interlock_step(s, &p, 10.2, 6).1, None);
        assert_eq!(interlock_step(s, &p, 15.0, 6).1, Some(AmplifierCommand::AmplifierOn));
        let latched = InterlockParams { latching: true, ..p };
        assert_eq!(interlock_step(s, &latched, 15.0, 6), (s, None));
        assert_eq!(interlock_reset(s, 7).1, Some(AmplifierCommand::AmplifierOn));
    }

    #[test]
    fn rule_json_shapes() {
        let text = r#"{"id":"seed","selector":{"measurement":"laser","tags":{"RoomID":"Lab03"},"field":"seed_mW"},
                       "kind":"interlock","min":8,"max":12}"#;
        let rule: AlertRule = serde_json::from_str(text).unwrap();
        rule.validate().unwrap();
        let p = rule.interlock_params().unwrap();
        assert!((p.margin - 0.2).abs() < 1e-12);
        assert!(p.latching);
        assert_eq!(rule.period_s, 20.0);
        let back: AlertRule = serde_json::from_str(&serde_json::to_string(&rule).unwrap()).unwrap();
        assert_eq!(back, rule);

        let ge: AlertRule = serde_json::from_str(
            r#"{"id":"a","selector":{"measurement":"m","field":"f"},"kind":"threshold","comparator":"≥","limit":1}"#,
        )
        .unwrap();
        assert_eq!(ge.kind, RuleKind::Threshold { comparator: Comparator::Ge, limit: 1.0, unit: None });
    }

    #[test]
    fn invalid_rules() {
        let mut r = AlertRule::rate("r", sel(), 1.0, 30.0);
        assert!(r.validate().is_err());
        r.kind = RuleKind::Rate { max_per_min: 1.0, lookback_s: 40.0 };
        r.validate().unwrap();
        assert!(AlertRule::interlock("i", sel(), 5.0, 5.0, true).validate().is_err());
        assert!(AlertRule::threshold("", sel(), Comparator::Gt, 1.0).validate().is_err());
        assert!(AlertRule::threshold("t", sel(), Comparator::Gt, f64::INFINITY).validate().is_err());
        let mut s = AlertRule::threshold("t", sel(), Comparator::Gt, 1.0);
        s.sink = Some("pager:x".into());
        assert!(s.validate().is_err());
    }
}
