//! Central collector: polls pull nodes over UDP, stamps their readings on
//! arrival and forwards them to a [`PointSink`], keeping per-node delivery
//! accounting.

use std::collections::{BTreeMap, VecDeque};
use std::io::{self, ErrorKind};
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::RwLock;
use serde::Serialize;

use crate::clock::{secs_to_ns, Clock};
use crate::node::{encode_poll, parse_ack, Environment, LossInjector, NodeAgent};
use crate::retry::{Backoff, RetryQueue, DEFAULT_QUEUE_CAPACITY};
use crate::sink::PointSink;
use crate::wire::{decode_node_payload, payload_to_points, DataPoint};

pub const DEFAULT_INTERVAL_S: f64 = 20.0;
/// Upper bound on the per-node response timeout.
pub const MAX_RESPONSE_TIMEOUT_S: f64 = 5.0;
/// Poll outcomes kept for windowed delivery reports.
const POLL_LOG_CAPACITY: usize = 1 << 20;

#[derive(Debug, thiserror::Error)]
pub enum CollectorError {
    #[error("registry line {line}: {reason}")]
    Registry { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct NodeCounters {
    pub polls_sent: u64,
    pub responses_received: u64,
    pub parse_failures: u64,
    pub timeouts: u64,
    pub gaps_detected: u64,
    pub missing_sequences: u64,
    pub resets_detected: u64,
    pub duplicates: u64,
}

#[derive(Debug, Clone)]
pub struct RegistryEntry {
    pub room_id: String,
    pub device_id: String,
    pub address: String,
    pub interval_s: f64,
    pub last_sequence: Option<u32>,
    pub counters: NodeCounters,
    resolved: Option<SocketAddr>,
    next_due_ns: Option<i64>,
}

impl RegistryEntry {
    pub fn new(room_id: &str, device_id: &str, address: &str, interval_s: f64) -> Self {
        Self {
            room_id: room_id.into(),
            device_id: device_id.into(),
            address: address.into(),
            interval_s,
            last_sequence: None,
            counters: NodeCounters::default(),
            resolved: None,
            next_due_ns: None,
        }
    }

    pub fn name(&self) -> String {
        format!("{}/{}", self.room_id, self.device_id)
    }

    /// `interval / 2`, capped at five seconds.
    pub fn response_timeout_ns(&self) -> i64 {
        secs_to_ns((self.interval_s / 2.0).min(MAX_RESPONSE_TIMEOUT_S))
    }
}

/// Parses a registry file: one node per line, `room device host:port
/// interval_s`. Blank lines and `#` comments are skipped.
pub fn parse_registry(text: &str) -> Result<Vec<RegistryEntry>, CollectorError> {
    let mut out: Vec<RegistryEntry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |reason: String| CollectorError::Registry { line: i + 1, reason };
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [room, device, addr, interval] = parts[..] else {
            return Err(err(format!("expected 4 columns, found {}", parts.len())));
        };
        for id in [room, device] {
            if !crate::wire::is_location_id(id) {
                return Err(err(format!("invalid identifier {id:?}")));
            }
        }
        let interval_s: f64 = interval
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite() && *v >= 0.001)
            .ok_or_else(|| err(format!("invalid interval {interval:?} (minimum 0.001 s)")))?;
        if !addr.contains(':') {
            return Err(err(format!("address {addr:?} has no port")));
        }
        if out.iter().any(|e| e.room_id == room && e.device_id == device) {
            return Err(err(format!("duplicate node {room}/{device}")));
        }
        out.push(RegistryEntry::new(room, device, addr, interval_s));
    }
    Ok(out)
}

pub fn render_registry(entries: &[RegistryEntry]) -> String {
    entries
        .iter()
        .map(|e| format!("{} {} {} {}\n", e.room_id, e.device_id, e.address, e.interval_s))
        .collect()
}

/// One poll of one node within a cycle.
#[derive(Debug, Clone)]
pub struct Poll {
    pub node: usize,
    pub token: u64,
    pub datagram: Vec<u8>,
    pub timeout_ns: i64,
}

#[derive(Debug, Clone)]
pub struct Arrival {
    pub node: usize,
    pub datagram: Vec<u8>,
    pub at_ns: i64,
}

/// Sends a cycle's polls and gathers the answers. Implementations may talk to
/// the nodes concurrently; the collector only needs the arrivals back.
pub trait PollTransport: Send {
    fn exchange(
        &mut self,
        registry: &mut [RegistryEntry],
        polls: &[Poll],
        clock: &dyn Clock,
    ) -> io::Result<Vec<Arrival>>;
}

/// Real UDP transport over one unconnected socket.
pub struct UdpTransport {
    socket: UdpSocket,
}

impl UdpTransport {
    pub fn bind(addr: &str) -> io::Result<Self> {
        Ok(Self {
            socket: UdpSocket::bind(addr)?,
        })
    }

    fn drain_stale(&self) -> io::Result<()> {
        self.socket.set_nonblocking(true)?;
        let mut buf = [0u8; 2048];
        while self.socket.recv_from(&mut buf).is_ok() {}
        self.socket.set_nonblocking(false)
    }
}

impl PollTransport for UdpTransport {
    fn exchange(
        &mut self,
        registry: &mut [RegistryEntry],
        polls: &[Poll],
        clock: &dyn Clock,
    ) -> io::Result<Vec<Arrival>> {
        self.drain_stale()?;
        let started = Instant::now();
        let mut by_addr: BTreeMap<SocketAddr, usize> = BTreeMap::new();
        let mut deadlines = BTreeMap::new();
        for p in polls {
            let entry = &mut registry[p.node];
            let addr = match entry.resolved {
                Some(a) => a,
                None => match entry.address.to_socket_addrs().ok().and_then(|mut a| a.next()) {
                    Some(a) => {
                        entry.resolved = Some(a);
                        a
                    }
                    None => {
                        log::warn!("{}: cannot resolve {}", entry.name(), entry.address);
                        continue;
                    }
                },
            };
            if let Err(e) = self.socket.send_to(&p.datagram, addr) {
                log::warn!("{}: send failed: {e}", entry.name());
                continue;
            }
            by_addr.insert(addr, p.node);
            deadlines.insert(p.node, started + clock.to_wall(p.timeout_ns));
        }

        let mut arrivals = Vec::new();
        let mut buf = [0u8; 2048];
        while !deadlines.is_empty() {
            let last = *deadlines.values().max().expect("non-empty");
            let now = Instant::now();
            if now >= last {
                break;
            }
            self.socket
                .set_read_timeout(Some((last - now).max(Duration::from_micros(100))))?;
            match self.socket.recv_from(&mut buf) {
                Ok((n, from)) => {
                    let Some(&node) = by_addr.get(&from) else { continue };
                    let Some(deadline) = deadlines.get(&node) else { continue };
                    if Instant::now() > *deadline {
                        continue;
                    }
                    arrivals.push(Arrival {
                        node,
                        datagram: buf[..n].to_vec(),
                        at_ns: clock.now_ns(),
                    });
                    deadlines.remove(&node);
                }
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
                // ICMP port-unreachable from a dead node surfaces here on some platforms.
                Err(e) if e.kind() == ErrorKind::ConnectionReset => {}
                Err(e) => return Err(e),
            }
        }
        Ok(arrivals)
    }
}

/// Deterministic transport that calls node agents directly, applying
/// per-node datagram loss to the answers.
pub struct InProcessTransport {
    pub agents: Vec<NodeAgent>,
    pub loss: Vec<LossInjector>,
    env: Arc<dyn Environment>,
}

impl InProcessTransport {
    /// `agents[i]` answers polls addressed to registry entry `i`.
    pub fn new(agents: Vec<NodeAgent>, env: Arc<dyn Environment>) -> Self {
        let loss = agents.iter().map(|_| LossInjector::none()).collect();
        Self { agents, loss, env }
    }

    pub fn with_loss(mut self, probability: f64, seed: u64) -> Self {
        self.loss = (0..self.agents.len())
            .map(|i| LossInjector::new(probability, seed.wrapping_add(i as u64)))
            .collect();
        self
    }
}

impl PollTransport for InProcessTransport {
    fn exchange(
        &mut self,
        _registry: &mut [RegistryEntry],
        polls: &[Poll],
        clock: &dyn Clock,
    ) -> io::Result<Vec<Arrival>> {
        let now = clock.now_ns();
        let mut arrivals = Vec::new();
        for p in polls {
            let Some(agent) = self.agents.get_mut(p.node) else { continue };
            agent.watchdog(now);
            let Some(reply) = agent.handle_poll(&p.datagram, now, self.env.as_ref()) else {
                continue;
            };
            if self.loss[p.node].drop_next() {
                continue;
            }
            arrivals.push(Arrival {
                node: p.node,
                datagram: reply,
                at_ns: now,
            });
        }
        Ok(arrivals)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PollOutcome {
    Response,
    Timeout,
    ParseFailure,
}

#[derive(Debug, Clone, Copy)]
struct PollRecord {
    node: usize,
    at_ns: i64,
    outcome: PollOutcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GapRecord {
    pub node: String,
    pub detected_ns: i64,
    /// Inclusive range of sequence numbers that never arrived.
    pub first_missing: u32,
    pub last_missing: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeDelivery {
    pub node: String,
    pub polls: u64,
    pub responses: u64,
    pub efficiency: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeliveryReport {
    pub window_start: i64,
    pub window_end: i64,
    pub nodes: Vec<NodeDelivery>,
    pub aggregate: Option<f64>,
    pub gaps: Vec<GapRecord>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct CycleReport {
    pub polled: usize,
    pub responses: usize,
    pub points: usize,
    pub forwarded: usize,
    pub pending: usize,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct NodeStatus {
    pub node: String,
    pub address: String,
    pub counters: NodeCounters,
    pub efficiency: Option<f64>,
}

/// Snapshot of collector health, shared with the query service.
#[derive(Debug, Clone, Default, Serialize)]
pub struct CollectorStatus {
    pub cycles: u64,
    pub last_cycle_ns: Option<i64>,
    pub storage_ok: bool,
    pub storage_error: Option<String>,
    pub pending_points: usize,
    pub dropped_points: u64,
    pub nodes: Vec<NodeStatus>,
}

pub type StatusHandle = Arc<RwLock<CollectorStatus>>;

pub struct Collector<T: PollTransport> {
    registry: Vec<RegistryEntry>,
    transport: T,
    clock: Arc<dyn Clock>,
    sink: Arc<dyn PointSink>,
    queue: RetryQueue<DataPoint>,
    log: VecDeque<PollRecord>,
    gaps: VecDeque<GapRecord>,
    next_token: u64,
    cycles: u64,
    status: StatusHandle,
}

impl<T: PollTransport> Collector<T> {
    pub fn new(
        registry: Vec<RegistryEntry>,
        transport: T,
        clock: Arc<dyn Clock>,
        sink: Arc<dyn PointSink>,
    ) -> Self {
        let status = Arc::new(RwLock::new(CollectorStatus {
            storage_ok: true,
            ..CollectorStatus::default()
        }));
        let c = Self {
            registry,
            transport,
            clock,
            sink,
            queue: RetryQueue::new(DEFAULT_QUEUE_CAPACITY, Backoff::default()),
            log: VecDeque::new(),
            gaps: VecDeque::new(),
            next_token: 1,
            cycles: 0,
            status,
        };
        c.publish_status(None);
        c
    }

    pub fn registry(&self) -> &[RegistryEntry] {
        &self.registry
    }

    pub fn transport_mut(&mut self) -> &mut T {
        &mut self.transport
    }

    pub fn status_handle(&self) -> StatusHandle {
        self.status.clone()
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Earliest time any node is due.
    pub fn next_due_ns(&self) -> Option<i64> {
        self.registry
            .iter()
            .map(|e| e.next_due_ns.unwrap_or(i64::MIN))
            .min()
    }

    /// Polls every node due at `now`, then forwards whatever arrived.
    pub fn poll_cycle(&mut self) -> io::Result<CycleReport> {
        let now = self.clock.now_ns();
        let mut polls = Vec::new();
        for (i, e) in self.registry.iter_mut().enumerate() {
            if e.next_due_ns.is_some_and(|d| d > now) {
                continue;
            }
            let interval = secs_to_ns(e.interval_s);
            let due = e.next_due_ns.unwrap_or(now);
            // Skip missed slots instead of bursting to catch up.
            let behind = ((now - due) / interval).max(0);
            e.next_due_ns = Some(due + (behind + 1) * interval);
            let token = self.next_token;
            self.next_token += 1;
            polls.push(Poll {
                node: i,
                token,
                datagram: encode_poll(token),
                timeout_ns: e.response_timeout_ns(),
            });
        }
        let arrivals = if polls.is_empty() {
            Vec::new()
        } else {
            self.transport
                .exchange(&mut self.registry, &polls, self.clock.as_ref())?
        };

        let mut report = CycleReport {
            polled: polls.len(),
            ..CycleReport::default()
        };
        let mut by_node: BTreeMap<usize, &Arrival> = BTreeMap::new();
        for a in &arrivals {
            by_node.entry(a.node).or_insert(a);
        }
        let mut batch = Vec::new();
        for p in &polls {
            let outcome = match by_node.get(&p.node) {
                None => PollOutcome::Timeout,
                Some(a) => match self.accept(p, a) {
                    Some(points) => {
                        batch.extend(points);
                        PollOutcome::Response
                    }
                    None => PollOutcome::ParseFailure,
                },
            };
            let c = &mut self.registry[p.node].counters;
            c.polls_sent += 1;
            match outcome {
                PollOutcome::Response => {
                    c.responses_received += 1;
                    report.responses += 1;
                }
                PollOutcome::Timeout => c.timeouts += 1,
                PollOutcome::ParseFailure => c.parse_failures += 1,
            }
            if self.log.len() >= POLL_LOG_CAPACITY {
                self.log.pop_front();
            }
            self.log.push_back(PollRecord {
                node: p.node,
                at_ns: now,
                outcome,
            });
        }
        report.points = batch.len();
        report.forwarded = self.forward(batch);
        report.pending = self.queue.len();
        self.cycles += 1;
        self.publish_status(Some(now));
        Ok(report)
    }

    /// Decodes one answer; `None` when it is not a valid payload from the
    /// polled node. Returns no points for a duplicate sequence number.
    fn accept(&mut self, poll: &Poll, arrival: &Arrival) -> Option<Vec<DataPoint>> {
        let entry = &mut self.registry[poll.node];
        let (token, payload) = parse_ack(&arrival.datagram).ok()?;
        if token != poll.token {
            return None;
        }
        let payload = decode_node_payload(payload).ok()?;
        if payload.room_id != entry.room_id || payload.device_id != entry.device_id {
            return None;
        }
        let seq = payload.sequence;
        let c = &mut entry.counters;
        match entry.last_sequence {
            Some(last) if seq == last.wrapping_add(1) => {}
            None => {}
            Some(last) if seq == 0 && last != 0 => c.resets_detected += 1,
            Some(last) if seq > last => {
                c.gaps_detected += 1;
                c.missing_sequences += u64::from(seq - last - 1);
                let gap = GapRecord {
                    node: entry.name(),
                    detected_ns: arrival.at_ns,
                    first_missing: last + 1,
                    last_missing: seq - 1,
                };
                if self.gaps.len() >= POLL_LOG_CAPACITY {
                    self.gaps.pop_front();
                }
                self.gaps.push_back(gap);
            }
            Some(_) => {
                c.duplicates += 1;
                return Some(Vec::new());
            }
        }
        entry.last_sequence = Some(seq);
        Some(payload_to_points(&payload, arrival.at_ns))
    }

    /// Queues `batch` behind anything still pending and tries to deliver the
    /// whole queue as one atomic write. Returns points written now.
    pub fn forward(&mut self, batch: Vec<DataPoint>) -> usize {
        for p in batch {
            self.queue.push(p);
        }
        let now = self.clock.now_ns();
        let sink = self.sink.clone();
        match self
            .queue
            .try_flush(now, |pts| sink.write_points(pts).map(|_| ()))
        {
            Some(Ok(n)) => {
                let mut s = self.status.write();
                s.storage_ok = true;
                s.storage_error = None;
                n
            }
            Some(Err(e)) => {
                log::warn!("storage unavailable, {} points queued: {e}", self.queue.len());
                let mut s = self.status.write();
                s.storage_ok = false;
                s.storage_error = Some(e.to_string());
                0
            }
            None => 0,
        }
    }

    pub fn delivery_report(&self, window_start: i64, window_end: i64) -> DeliveryReport {
        let mut polls = vec![0u64; self.registry.len()];
        let mut responses = vec![0u64; self.registry.len()];
        for r in self
            .log
            .iter()
            .filter(|r| (window_start..window_end).contains(&r.at_ns))
        {
            polls[r.node] += 1;
            if r.outcome == PollOutcome::Response {
                responses[r.node] += 1;
            }
        }
        let ratio = |r: u64, p: u64| (p > 0).then(|| r as f64 / p as f64);
        let nodes = self
            .registry
            .iter()
            .enumerate()
            .map(|(i, e)| NodeDelivery {
                node: e.name(),
                polls: polls[i],
                responses: responses[i],
                efficiency: ratio(responses[i], polls[i]),
            })
            .collect();
        DeliveryReport {
            window_start,
            window_end,
            nodes,
            aggregate: ratio(responses.iter().sum(), polls.iter().sum()),
            gaps: self
                .gaps
                .iter()
                .filter(|g| (window_start..window_end).contains(&g.detected_ns))
                .cloned()
                .collect(),
        }
    }

    fn publish_status(&self, last_cycle: Option<i64>) {
        let mut s = self.status.write();
        s.cycles = self.cycles;
        if last_cycle.is_some() {
            s.last_cycle_ns = last_cycle;
        }
        s.pending_points = self.queue.len();
        s.dropped_points = self.queue.dropped();
        s.nodes = self
            .registry
            .iter()
            .map(|e| NodeStatus {
                node: e.name(),
                address: e.address.clone(),
                counters: e.counters,
                efficiency: (e.counters.polls_sent > 0).then(|| {
                    e.counters.responses_received as f64 / e.counters.polls_sent as f64
                }),
            })
            .collect();
    }

    /// Polls on schedule until `stop` is set, sleeping between cycles.
    pub fn run(&mut self, stop: &AtomicBool) -> io::Result<()> {
        while !stop.load(Ordering::Relaxed) {
            let now = self.clock.now_ns();
            match self.next_due_ns() {
                Some(due) if due > now => {
                    let wait = self.clock.to_wall(due - now).min(Duration::from_millis(200));
                    std::thread::sleep(wait);
                }
                Some(_) => {
                    self.poll_cycle()?;
                }
                None => std::thread::sleep(Duration::from_millis(200)),
            }
        }
        Ok(())
    }
}
