//! Threads that run a [`NodeAgent`] against real sockets.

use std::io::ErrorKind;
use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::agent::NodeAgent;
use super::config::{NodeConfig, NodeMode};
use super::sensor::Environment;
use super::{NodeError, WatchdogAction};
use crate::clock::{secs_to_ns, Clock};
use crate::sink::PointSink;

/// Drops outgoing datagrams with a fixed Bernoulli probability.
#[derive(Debug)]
pub struct LossInjector {
    probability: f64,
    rng: ChaCha8Rng,
}

impl LossInjector {
    pub fn new(probability: f64, seed: u64) -> Self {
        Self {
            probability: probability.clamp(0.0, 1.0),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn none() -> Self {
        Self::new(0.0, 0)
    }

    /// True when the next datagram should be lost.
    pub fn drop_next(&mut self) -> bool {
        self.probability > 0.0 && self.rng.gen::<f64>() < self.probability
    }
}

#[derive(Debug, Default)]
pub struct NodeStats {
    pub requests: AtomicU64,
    pub responses: AtomicU64,
    pub lost: AtomicU64,
    pub malformed: AtomicU64,
    pub resets: AtomicU64,
    pub pushed: AtomicU64,
    pub push_failures: AtomicU64,
}

/// Handle to a running node thread. Dropping it stops the node.
pub struct NodeServer {
    addr: Option<SocketAddr>,
    stats: Arc<NodeStats>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl NodeServer {
    /// Bound UDP address (pull nodes only).
    pub fn local_addr(&self) -> Option<SocketAddr> {
        self.addr
    }

    pub fn stats(&self) -> &NodeStats {
        &self.stats
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for NodeServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

const MAX_TICK: Duration = Duration::from_millis(20);

fn bind(addr: SocketAddr, tick: Duration) -> std::io::Result<UdpSocket> {
    let socket = UdpSocket::bind(addr)?;
    socket.set_read_timeout(Some(tick))?;
    Ok(socket)
}

/// Starts a pull node answering polls on its configured listen address.
pub fn spawn_pull_node(
    config: NodeConfig,
    clock: Arc<dyn Clock>,
    env: Arc<dyn Environment>,
    mut loss: LossInjector,
) -> Result<NodeServer, NodeError> {
    if config.mode != NodeMode::Pull {
        return Err(NodeError::WrongMode("pull"));
    }
    let listen = config.listen.ok_or(NodeError::WrongMode("pull"))?;
    let watchdog_wall = clock.to_wall(secs_to_ns(config.watchdog_timeout_s));
    let tick = (watchdog_wall / 4).clamp(Duration::from_millis(1), MAX_TICK);
    let socket = bind(listen, tick)?;
    let addr = socket.local_addr()?;
    let mut agent = NodeAgent::new(config, clock.now_ns())?;
    let stats = Arc::new(NodeStats::default());
    let stop = Arc::new(AtomicBool::new(false));

    let thread = {
        let stats = stats.clone();
        let stop = stop.clone();
        std::thread::Builder::new()
            .name(format!("node-{}", agent.config().device_id))
            .spawn(move || {
                let mut socket = Some(socket);
                let mut buf = [0u8; 2048];
                while !stop.load(Ordering::Relaxed) {
                    let Some(sock) = socket.as_ref() else {
                        socket = bind(addr, tick).ok();
                        if socket.is_none() {
                            std::thread::sleep(tick);
                        }
                        continue;
                    };
                    match sock.recv_from(&mut buf) {
                        Ok((n, from)) => {
                            stats.requests.fetch_add(1, Ordering::Relaxed);
                            let before = agent.malformed_requests();
                            if let Some(resp) = agent.handle_poll(&buf[..n], clock.now_ns(), &*env) {
                                if loss.drop_next() {
                                    stats.lost.fetch_add(1, Ordering::Relaxed);
                                } else if sock.send_to(&resp, from).is_ok() {
                                    stats.responses.fetch_add(1, Ordering::Relaxed);
                                }
                            }
                            stats
                                .malformed
                                .fetch_add(agent.malformed_requests() - before, Ordering::Relaxed);
                        }
                        Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
                        Err(e) => log::debug!("node recv: {e}"),
                    }
                    if agent.watchdog(clock.now_ns()) == WatchdogAction::Reset {
                        stats.resets.fetch_add(1, Ordering::Relaxed);
                        log::info!("{}: watchdog reset", agent.config().device_id);
                        // Re-initialise the link: close and rebind the same port.
                        socket = None;
                    }
                }
            })?
    };

    Ok(NodeServer {
        addr: Some(addr),
        stats,
        stop,
        thread: Some(thread),
    })
}

/// Starts a push node that samples every `push_interval_s` of clock time and
/// submits to `sink`, retrying failed batches with backoff.
pub fn spawn_push_node(
    config: NodeConfig,
    clock: Arc<dyn Clock>,
    env: Arc<dyn Environment>,
    sink: Arc<dyn PointSink>,
) -> Result<NodeServer, NodeError> {
    if config.mode != NodeMode::Push {
        return Err(NodeError::WrongMode("push"));
    }
    let interval_ns = secs_to_ns(config.push_interval_s);
    let mut agent = NodeAgent::new(config, clock.now_ns())?;
    let stats = Arc::new(NodeStats::default());
    let stop = Arc::new(AtomicBool::new(false));
    let thread = {
        let stats = stats.clone();
        let stop = stop.clone();
        std::thread::Builder::new()
            .name(format!("push-{}", agent.config().device_id))
            .spawn(move || {
                let mut next_cycle = clock.now_ns();
                while !stop.load(Ordering::Relaxed) {
                    let now = clock.now_ns();
                    let report = if now >= next_cycle {
                        next_cycle += interval_ns;
                        agent.push_cycle(now, &*env, &*sink).ok()
                    } else if agent.pending() > 0 && now >= agent.next_retry_ns() {
                        Some(agent.flush_pending(now, &*sink))
                    } else {
                        None
                    };
                    if let Some(r) = report {
                        stats.pushed.fetch_add(r.delivered as u64, Ordering::Relaxed);
                        if r.error.is_some() {
                            stats.push_failures.fetch_add(1, Ordering::Relaxed);
                        }
                    }
                    let wait = clock.to_wall((next_cycle - clock.now_ns()).max(0));
                    std::thread::sleep(wait.min(MAX_TICK));
                }
            })?
    };
    Ok(NodeServer {
        addr: None,
        stats,
        stop,
        thread: Some(thread),
    })
}
