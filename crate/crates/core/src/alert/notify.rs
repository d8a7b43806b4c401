//! Delivery of alert events to the console, a log file or a webhook.

use std::collections::{BTreeSet, VecDeque};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{AlertEvent, EventState};
use crate::retry::Backoff;

/// Give up on an event after this many failed attempts.
pub const MAX_ATTEMPTS: u32 = 8;
const RECORD_CAPACITY: usize = 1_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NotifySink {
    Console,
    Log(PathBuf),
    Webhook(String),
}

impl NotifySink {
    pub fn parse(spec: &str) -> Result<Self, String> {
        match spec.split_once(':') {
            _ if spec == "console" => Ok(Self::Console),
            Some(("log", path)) if !path.is_empty() => Ok(Self::Log(path.into())),
            Some(("webhook", url)) if url.starts_with("http://") || url.starts_with("https://") => {
                Ok(Self::Webhook(url.into()))
            }
            _ => Err(format!(
                "sink {spec:?} is not one of console, log:<path>, webhook:<http url>"
            )),
        }
    }

    pub fn id(&self) -> String {
        match self {
            Self::Console => "console".into(),
            Self::Log(p) => format!("log:{}", p.display()),
            Self::Webhook(u) => format!("webhook:{u}"),
        }
    }
}

/// JSON body posted to webhooks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WebhookBody {
    pub rule_id: String,
    pub state: EventState,
    /// RFC 3339, UTC.
    pub at: String,
    pub at_ns: i64,
    pub values: Vec<f64>,
    pub message: String,
}

impl WebhookBody {
    pub fn from_event(e: &AlertEvent) -> Self {
        Self {
            rule_id: e.rule_id.clone(),
            state: e.state,
            at: rfc3339(e.at_ns),
            at_ns: e.at_ns,
            values: e.values.clone(),
            message: e.message.clone(),
        }
    }
}

pub fn rfc3339(ns: i64) -> String {
    chrono::DateTime::from_timestamp_nanos(ns).to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub fn log_line(e: &AlertEvent) -> String {
    let state = match e.state {
        EventState::Firing => "firing",
        EventState::Resolved => "resolved",
    };
    format!("{} {} {} {}", rfc3339(e.at_ns), e.rule_id, state, e.message)
}

pub trait HttpPoster: Send + Sync {
    /// Posts a JSON body and returns the HTTP status.
    fn post_json(&self, url: &str, body: &str) -> Result<u16, String>;
}

pub struct UreqPoster {
    agent: ureq::Agent,
}

impl UreqPoster {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent }
    }
}

impl Default for UreqPoster {
    fn default() -> Self {
        Self::new(Duration::from_secs(5))
    }
}

impl HttpPoster for UreqPoster {
    fn post_json(&self, url: &str, body: &str) -> Result<u16, String> {
        self.agent
            .post(url)
            .header("Content-Type", "application/json")
            .send(body)
            .map(|r| r.status().as_u16())
            .map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeliveryRecord {
    pub rule_id: String,
    pub at_ns: i64,
    pub sink: String,
    pub attempts: u32,
    pub delivered: bool,
    pub last_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NotifyOutcome {
    /// Same (rule, time) already handled.
    Suppressed,
    Delivered(DeliveryRecord),
    /// First attempt failed; retried by [`Notifier::retry_pending`].
    Queued,
}

struct Pending {
    event: AlertEvent,
    sink: NotifySink,
    attempts: u32,
    last_error: String,
    backoff: Backoff,
    next_ns: i64,
}

/// At-least-once delivery with retry and duplicate suppression.
pub struct Notifier {
    poster: Arc<dyn HttpPoster>,
    seen: BTreeSet<(String, i64)>,
    pending: Vec<Pending>,
    records: VecDeque<DeliveryRecord>,
    backoff: Backoff,
}

impl Notifier {
    pub fn new(poster: Arc<dyn HttpPoster>) -> Self {
        Self {
            poster,
            seen: BTreeSet::new(),
            pending: Vec::new(),
            records: VecDeque::new(),
            backoff: Backoff::default(),
        }
    }

    pub fn with_backoff(mut self, backoff: Backoff) -> Self {
        self.backoff = backoff;
        self
    }

    fn send(&self, event: &AlertEvent, sink: &NotifySink) -> Result<(), String> {
        match sink {
            NotifySink::Console => {
                eprintln!("ALERT {}", log_line(event));
                Ok(())
            }
            NotifySink::Log(path) => OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .and_then(|mut f| writeln!(f, "{}", log_line(event)))
                .map_err(|e| e.to_string()),
            NotifySink::Webhook(url) => {
                let body = serde_json::to_string(&WebhookBody::from_event(event))
                    .expect("serializable");
                match self.poster.post_json(url, &body)? {
                    s if (200..300).contains(&s) => Ok(()),
                    s => Err(format!("webhook answered {s}")),
                }
            }
        }
    }

    fn record(&mut self, r: DeliveryRecord) -> DeliveryRecord {
        if self.records.len() >= RECORD_CAPACITY {
            self.records.pop_front();
        }
        self.records.push_back(r.clone());
        r
    }

    pub fn notify(&mut self, event: &AlertEvent, sink: &NotifySink, now_ns: i64) -> NotifyOutcome {
        if !self.seen.insert((event.rule_id.clone(), event.at_ns)) {
            return NotifyOutcome::Suppressed;
        }
        match self.send(event, sink) {
            Ok(()) => NotifyOutcome::Delivered(self.record(DeliveryRecord {
                rule_id: event.rule_id.clone(),
                at_ns: event.at_ns,
                sink: sink.id(),
                attempts: 1,
                delivered: true,
                last_error: None,
            })),
            Err(e) => {
                log::warn!("alert {} via {}: {e}", event.rule_id, sink.id());
                let mut backoff = self.backoff.clone();
                let delay = backoff.fail();
                self.pending.push(Pending {
                    event: event.clone(),
                    sink: sink.clone(),
                    attempts: 1,
                    last_error: e,
                    backoff,
                    next_ns: now_ns.saturating_add(delay),
                });
                NotifyOutcome::Queued
            }
        }
    }

    /// Retries due deliveries; returns records for those that finished,
    /// successfully or by giving up.
    pub fn retry_pending(&mut self, now_ns: i64) -> Vec<DeliveryRecord> {
        let mut done = Vec::new();
        let mut still = Vec::new();
        for mut p in std::mem::take(&mut self.pending) {
            if p.next_ns > now_ns {
                still.push(p);
                continue;
            }
            p.attempts += 1;
            match self.send(&p.event, &p.sink) {
                Ok(()) => done.push(DeliveryRecord {
                    rule_id: p.event.rule_id.clone(),
                    at_ns: p.event.at_ns,
                    sink: p.sink.id(),
                    attempts: p.attempts,
                    delivered: true,
                    last_error: None,
                }),
                Err(e) if p.attempts >= MAX_ATTEMPTS => done.push(DeliveryRecord {
                    rule_id: p.event.rule_id.clone(),
                    at_ns: p.event.at_ns,
                    sink: p.sink.id(),
                    attempts: p.attempts,
                    delivered: false,
                    last_error: Some(e),
                }),
                Err(e) => {
                    p.last_error = e;
                    p.next_ns = now_ns.saturating_add(p.backoff.fail());
                    still.push(p);
                }
            }
        }
        self.pending = still;
        done.into_iter().map(|r| self.record(r)).collect()
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn pending_errors(&self) -> Vec<(String, String)> {
        self.pending
            .iter()
            .map(|p| (p.event.rule_id.clone(), p.last_error.clone()))
            .collect()
    }

    pub fn records(&self) -> impl Iterator<Item = &DeliveryRecord> {
        self.records.iter()
    }
}
