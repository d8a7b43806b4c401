use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{NodeConfig, NodeMode};
use super::sensor::Environment;
use super::{encode_ack, parse_poll, watchdog_tick, NodeError, WatchdogAction};
use crate::clock::ns_to_secs;
use crate::retry::{Backoff, RetryQueue, DEFAULT_QUEUE_CAPACITY};
use crate::sink::{PointSink, SinkError};
use crate::wire::{encode_node_payload, payload_to_points, DataPoint, NodePayload, Reading};

/// Outcome of one push cycle or pending flush.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PushReport {
    pub sampled: usize,
    pub delivered: usize,
    pub pending: usize,
    /// Points evicted from the full queue during this call.
    pub dropped: u64,
    pub error: Option<SinkError>,
}

/// State of one measurement node.
#[derive(Debug)]
pub struct NodeAgent {
    config: NodeConfig,
    sequence: u32,
    last_contact_ns: i64,
    malformed: u64,
    sample_errors: u64,
    resets: u64,
    rng: ChaCha8Rng,
    walks: Vec<f64>,
    origin_ns: Option<i64>,
    frozen: Vec<(i64, i64)>,
    queue: RetryQueue<DataPoint>,
}

impl NodeAgent {
    pub fn new(config: NodeConfig, now_ns: i64) -> Result<Self, NodeError> {
        config.validate()?;
        let walks = vec![0.0; config.sensors.len()];
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            origin_ns: config.origin_ns,
            sequence: 0,
            last_contact_ns: now_ns,
            malformed: 0,
            sample_errors: 0,
            resets: 0,
            walks,
            frozen: Vec::new(),
            queue: RetryQueue::new(DEFAULT_QUEUE_CAPACITY, Backoff::default()),
            config,
        })
    }

    pub fn config(&self) -> &NodeConfig {
        &self.config
    }

    /// Sequence number the next payload will carry.
    pub fn next_sequence(&self) -> u32 {
        self.sequence
    }

    pub fn malformed_requests(&self) -> u64 {
        self.malformed
    }

    pub fn resets(&self) -> u64 {
        self.resets
    }

    pub fn last_contact_ns(&self) -> i64 {
        self.last_contact_ns
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn dropped(&self) -> u64 {
        self.queue.dropped()
    }

    /// Makes the node unresponsive during `[start, end)`, as a hung device.
    pub fn freeze(&mut self, start_ns: i64, end_ns: i64) {
        self.frozen.push((start_ns, end_ns));
    }

    pub fn is_frozen(&self, now_ns: i64) -> bool {
        self.frozen.iter().any(|&(s, e)| (s..e).contains(&now_ns))
    }

    /// Reads every bound sensor at `sim_time_ns` and collates the readings
    /// into one payload, advancing the sequence counter.
    pub fn sample_sensors(
        &mut self,
        sim_time_ns: i64,
        env: &dyn Environment,
    ) -> Result<NodePayload, NodeError> {
        let origin = *self.origin_ns.get_or_insert(sim_time_ns);
        let elapsed_s = ns_to_secs(sim_time_ns - origin);
        let mut readings = Vec::with_capacity(self.config.sensors.len());
        for (binding, walk) in self.config.sensors.iter().zip(self.walks.iter_mut()) {
            let value = binding
                .model
                .sample(elapsed_s, sim_time_ns, env, &mut self.rng, walk)?;
            readings.push(Reading::new(&binding.measurement, &binding.field, value));
        }
        let payload = NodePayload {
            room_id: self.config.room_id.clone(),
            device_id: self.config.device_id.clone(),
            sequence: self.sequence,
            readings,
        };
        self.sequence = self.sequence.wrapping_add(1);
        Ok(payload)
    }

    /// Answers one poll datagram. Malformed requests are dropped silently and
    /// counted; a frozen node drops everything.
    pub fn handle_poll(
        &mut self,
        request: &[u8],
        sim_time_ns: i64,
        env: &dyn Environment,
    ) -> Option<Vec<u8>> {
        if self.is_frozen(sim_time_ns) {
            return None;
        }
        let Some(token) = parse_poll(request) else {
            self.malformed += 1;
            return None;
        };
        self.last_contact_ns = self.last_contact_ns.max(sim_time_ns);
        let encoded = self
            .sample_sensors(sim_time_ns, env)
            .and_then(|p| encode_node_payload(&p).map_err(NodeError::from));
        match encoded {
            Ok(bytes) => Some(encode_ack(token, &bytes)),
            Err(e) => {
                self.sample_errors += 1;
                log::warn!("{}/{}: {e}", self.config.room_id, self.config.device_id);
                None
            }
        }
    }

    /// Runs the watchdog; on reset the sequence restarts at zero and the
    /// contact timer restarts at `now_ns`. Socket re-initialisation is the
    /// caller's job.
    pub fn watchdog(&mut self, now_ns: i64) -> WatchdogAction {
        if self.is_frozen(now_ns) {
            return WatchdogAction::None;
        }
        let now = now_ns.max(self.last_contact_ns);
        let action = watchdog_tick(self.last_contact_ns, now, self.config.watchdog_timeout_s);
        if action == WatchdogAction::Reset {
            self.sequence = 0;
            self.last_contact_ns = now;
            self.resets += 1;
        }
        action
    }

    /// Samples, queues the resulting points, and tries to deliver everything
    /// queued. Failed deliveries stay queued, oldest first, and are retried
    /// after an exponential backoff.
    pub fn push_cycle(
        &mut self,
        sim_time_ns: i64,
        env: &dyn Environment,
        sink: &dyn PointSink,
    ) -> Result<PushReport, NodeError> {
        if self.config.mode != NodeMode::Push {
            return Err(NodeError::WrongMode("push"));
        }
        let payload = self.sample_sensors(sim_time_ns, env)?;
        let points = payload_to_points(&payload, sim_time_ns);
        let before = self.queue.dropped();
        let sampled = points.len();
        for p in points {
            self.queue.push(p);
        }
        let mut report = self.flush_pending(sim_time_ns, sink);
        report.sampled = sampled;
        report.dropped += self.queue.dropped() - before;
        Ok(report)
    }

    /// Retries delivery of queued points if the backoff allows it.
    pub fn flush_pending(&mut self, now_ns: i64, sink: &dyn PointSink) -> PushReport {
        let mut report = PushReport::default();
        match self
            .queue
            .try_flush(now_ns, |pts| sink.write_points(pts).map(|_| ()))
        {
            Some(Ok(n)) => report.delivered = n,
            Some(Err(e)) => report.error = Some(e),
            None => {}
        }
        report.pending = self.queue.len();
        report
    }

    /// Queues a point produced elsewhere (e.g. an analysis result) for push.
    pub fn enqueue(&mut self, point: DataPoint) -> bool {
        self.queue.push(point).is_some()
    }

    pub fn next_retry_ns(&self) -> i64 {
        self.queue.next_attempt_ns()
    }
}

#[cfg(test)]
mod tests {
    use super::super::sensor::{NoEnvironment, SensorKind, SensorModel, Unit};
    use super::*;
    use crate::clock::NANOS_PER_SEC;
    use crate::sink::MemorySink;
    use crate::wire::decode_node_payload;
    use parking_lot::Mutex;

    fn pull_config() -> NodeConfig {
        NodeConfig::pull("Lab03", "Dev01", "127.0.0.1:0".parse().unwrap())
            .sensor("temperature", "T1", SensorModel::constant(21.6, Unit::Celsius))
            .sensor("temperature", "T2", SensorModel::constant(22.8, Unit::Celsius))
            .sensor("temperature", "T3", SensorModel::constant(25.2, Unit::Celsius))
    }

    #[test]
    fn samples_constant_sensors() {
        let mut a = NodeAgent::new(pull_config(), 0).unwrap();
        let p = a.sample_sensors(0, &NoEnvironment).unwrap();
        assert_eq!(p.readings.len(), 3);
        assert_eq!(p.readings[0].value, 21.6);
        assert!(p.readings.iter().all(|r| r.measurement == "temperature"));
        assert_eq!(a.sample_sensors(1, &NoEnvironment).unwrap().sequence, 1);
    }

    #[test]
    fn poll_round_trip_and_sequence() {
        let mut a = NodeAgent::new(pull_config(), 0).unwrap();
        let r1 = a.handle_poll(b"POLL 42", 0, &NoEnvironment).unwrap();
        let r2 = a.handle_poll(b"POLL 43", NANOS_PER_SEC, &NoEnvironment).unwrap();
        let (tok, body) = super::super::parse_ack(&r1).unwrap();
        assert_eq!(tok, 42);
        let p1 = decode_node_payload(body).unwrap();
        let p2 = decode_node_payload(super::super::parse_ack(&r2).unwrap().1).unwrap();
        assert_eq!(p2.sequence, p1.sequence + 1);
        assert_eq!(a.last_contact_ns(), NANOS_PER_SEC);
    }

    #[test]
    fn garbage_is_dropped_and_counted() {
        let mut a = NodeAgent::new(pull_config(), 0).unwrap();
        assert!(a.handle_poll(b"\x00\xffjunk", 0, &NoEnvironment).is_none());
        assert_eq!(a.malformed_requests(), 1);
        assert_eq!(a.next_sequence(), 0);
    }

    #[test]
    fn watchdog_reset_zeroes_sequence() {
        let mut a = NodeAgent::new(pull_config(), 0).unwrap();
        a.handle_poll(b"POLL 1", 0, &NoEnvironment).unwrap();
        assert_eq!(a.watchdog(59 * NANOS_PER_SEC), WatchdogAction::None);
        assert_eq!(a.watchdog(60 * NANOS_PER_SEC), WatchdogAction::Reset);
        assert_eq!(a.next_sequence(), 0);
        assert_eq!(a.resets(), 1);
        assert_eq!(a.watchdog(61 * NANOS_PER_SEC), WatchdogAction::None);
    }

    #[test]
    fn frozen_node_is_silent() {
        let mut a = NodeAgent::new(pull_config(), 0).unwrap();
        a.freeze(10, 20);
        assert!(a.handle_poll(b"POLL 1", 15, &NoEnvironment).is_none());
        assert_eq!(a.malformed_requests(), 0);
        assert!(a.handle_poll(b"POLL 1", 20, &NoEnvironment).is_some());
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let cfg = pull_config().sensor(
            "pressure",
            "P1",
            SensorModel {
                kind: SensorKind::RandomWalk,
                base: 1.0,
                noise_std: 0.1,
                unit: Unit::Millibar,
            },
        );
        let run = || {
            let mut a = NodeAgent::new(cfg.clone(), 0).unwrap();
            (0..50)
                .map(|i| a.sample_sensors(i, &NoEnvironment).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    /// Sink that fails while `down` is set.
    #[derive(Default)]
    struct Flaky {
        down: Mutex<bool>,
        inner: MemorySink,
    }

    impl PointSink for Flaky {
        fn write_points(&self, points: &[DataPoint]) -> Result<usize, SinkError> {
            if *self.down.lock() {
                return Err(SinkError::Unavailable("down".into()));
            }
            self.inner.write_points(points)
        }
    }

    fn push_config() -> NodeConfig {
        NodeConfig::push("Lab01", "Ana01", "http://127.0.0.1:1/write", 20.0).sensor(
            "atoms",
            "N",
            SensorModel::constant(2.2, Unit::Dimensionless),
        )
    }

    #[test]
    fn push_healthy_endpoint() {
        let sink = MemorySink::default();
        let mut a = NodeAgent::new(push_config(), 0).unwrap();
        let r = a.push_cycle(0, &NoEnvironment, &sink).unwrap();
        assert_eq!((r.sampled, r.delivered, r.pending), (1, 1, 0));
        assert_eq!(sink.len(), 1);
    }

    #[test]
    fn push_recovers_in_order_after_outage() {
        let sink = Flaky::default();
        *sink.down.lock() = true;
        let mut a = NodeAgent::new(push_config(), 0).unwrap();
        let step = 20 * NANOS_PER_SEC;
        for i in 0..3 {
            let r = a.push_cycle(i * step, &NoEnvironment, &sink).unwrap();
            assert_eq!(r.delivered, 0);
        }
        assert_eq!(a.pending(), 3);
        *sink.down.lock() = false;
        let r = a.flush_pending(3 * step, &sink);
        assert_eq!(r.delivered, 3);
        let ts: Vec<_> = sink.inner.points().iter().map(|p| p.timestamp.unwrap()).collect();
        assert_eq!(ts, vec![0, step, 2 * step]);
    }

    #[test]
    fn push_queue_bound_drops_oldest() {
        let sink = Flaky::default();
        *sink.down.lock() = true;
        let mut a = NodeAgent::new(push_config(), 0).unwrap();
        for i in 0..10_000 {
            a.enqueue(DataPoint::new("atoms").field("N", 1.0).at(i));
        }
        assert_eq!(a.dropped(), 0);
        let r = a.push_cycle(10_000, &NoEnvironment, &sink).unwrap();
        assert_eq!(r.dropped, 1);
        assert_eq!(a.dropped(), 1);
        assert_eq!(a.pending(), 10_000);
    }

    #[test]
    fn pull_node_cannot_push() {
        let mut a = NodeAgent::new(pull_config(), 0).unwrap();
        assert!(matches!(
            a.push_cycle(0, &NoEnvironment, &MemorySink::default()),
            Err(NodeError::WrongMode(_))
        ));
    }
}
