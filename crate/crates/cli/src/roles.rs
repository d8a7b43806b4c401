use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use clap::Args;
use labnet_core::alert::{AlertEngine, Notifier, UreqPoster};
use labnet_core::api::{Api, ApiServer};
use labnet_core::clock::secs_to_ns;
use labnet_core::collector::{parse_registry, Collector, StatusHandle, UdpTransport};
use labnet_core::node::{spawn_pull_node, spawn_push_node, LossInjector, NoEnvironment, NodeConfig, NodeMode};
use labnet_core::sink::HttpSink;
use labnet_core::storage::{RetentionPolicy, StoreOptions};
use labnet_core::{Clock, PointSink, Store, SystemClock};
use parking_lot::Mutex;

use crate::config::parse_duration;
use crate::output::{self, num, Table};
use crate::Ctx;

const HTTP_TIMEOUT: Duration = Duration::from_secs(5);

/// Calls `tick` about every `period` until `duration` (if any) has passed.
fn run_for(duration: Option<f64>, period: Duration, mut tick: impl FnMut() -> anyhow::Result<()>) -> anyhow::Result<()> {
    let deadline = duration.map(|d| Instant::now() + Duration::from_secs_f64(d.max(0.0)));
    loop {
        let now = Instant::now();
        if deadline.is_some_and(|d| now >= d) {
            return Ok(());
        }
        let wait = deadline.map_or(period, |d| period.min(d - now));
        std::thread::sleep(wait);
        tick()?;
    }
}

#[derive(Debug, Args)]
pub struct NodeArgs {
    /// Node configuration file (key = value lines)
    #[arg(value_name = "NODE_CONFIG")]
    node_config: PathBuf,

    /// Stop after this long [default: run until killed]
    #[arg(long, value_name = "DURATION", value_parser = parse_duration)]
    duration: Option<f64>,

    /// Drop this fraction of poll answers (fault injection)
    #[arg(long, value_name = "P", default_value_t = 0.0)]
    loss: f64,

    /// Bearer token for pushing to the query service
    #[arg(long, env = "LABNET_TOKEN", hide_env_values = true)]
    token: Option<String>,
}

pub fn node(ctx: &Ctx, a: NodeArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&a.node_config).with_context(|| format!("reading {}", a.node_config.display()))?;
    let cfg = NodeConfig::parse(&text).map_err(|e| crate::Usage(format!("{}: {e}", a.node_config.display())))?;
    if !(0.0..=1.0).contains(&a.loss) {
        return Err(crate::Usage(format!("--loss {} is not a probability", a.loss)).into());
    }
    let name = format!("{}/{}", cfg.room_id, cfg.device_id);
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let server = match cfg.mode {
        NodeMode::Pull => {
            let seed = cfg.seed;
            let node = spawn_pull_node(cfg, clock, Arc::new(NoEnvironment), LossInjector::new(a.loss, seed))?;
            let addr = node.local_addr().context("node has no listen address")?;
            println!("node {name} answering polls on {addr}");
            node
        }
        NodeMode::Push => {
            let target = cfg.push_target.clone().context("push mode needs push_target")?;
            let token = a.token.or_else(|| ctx.settings.token.clone());
            let sink = Arc::new(HttpSink::new(&target, token, HTTP_TIMEOUT));
            println!("node {name} pushing to {target} every {} s", num(cfg.push_interval_s));
            spawn_push_node(cfg, clock, Arc::new(NoEnvironment), sink)?
        }
    };
    std::io::stdout().flush()?;
    run_for(a.duration, Duration::from_millis(200), || Ok(()))?;
    let s = server.stats();
    let r = |v: &std::sync::atomic::AtomicU64| v.load(Ordering::Relaxed).to_string();
    println!(
        "requests={} responses={} lost={} malformed={} resets={} pushed={} push_failures={}",
        r(&s.requests),
        r(&s.responses),
        r(&s.lost),
        r(&s.malformed),
        r(&s.resets),
        r(&s.pushed),
        r(&s.push_failures)
    );
    server.stop();
    Ok(())
}

#[derive(Debug, Args)]
pub struct CollectorArgs {
    /// Node registry: one "room device host:port interval_s" line per node
    #[arg(long, value_name = "FILE")]
    registry: Option<PathBuf>,

    /// Local UDP address to poll from
    #[arg(long, value_name = "ADDR")]
    bind: Option<String>,

    /// Forward to a query service at this URL instead of a local store
    #[arg(long, value_name = "URL", conflicts_with = "data")]
    target: Option<String>,

    /// Local store directory [default: data_dir setting]
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,

    /// Bearer token for the query service
    #[arg(long, env = "LABNET_TOKEN", hide_env_values = true)]
    token: Option<String>,

    /// Stop after this long [default: run until killed]
    #[arg(long, value_name = "DURATION", value_parser = parse_duration)]
    duration: Option<f64>,
}

fn read_registry(path: &PathBuf) -> anyhow::Result<Vec<labnet_core::collector::RegistryEntry>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let entries = parse_registry(&text).map_err(|e| crate::Usage(format!("{}: {e}", path.display())))?;
    if entries.is_empty() {
        bail!("{}: no nodes registered", path.display());
    }
    Ok(entries)
}

/// Runs `collector` on its own thread until `stop` is set.
fn spawn_collector(
    mut collector: Collector<UdpTransport>,
    stop: Arc<AtomicBool>,
) -> std::io::Result<std::thread::JoinHandle<std::io::Result<()>>> {
    std::thread::Builder::new()
        .name("collector".into())
        .spawn(move || collector.run(&stop))
}

pub fn collector(ctx: &Ctx, a: CollectorArgs) -> anyhow::Result<()> {
    let cs = &ctx.settings.collector;
    let registry = a
        .registry
        .or_else(|| cs.registry.clone())
        .ok_or_else(|| crate::Usage("--registry is required".into()))?;
    let entries = read_registry(&registry)?;
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let sink: Arc<dyn PointSink> = match a.target.or_else(|| cs.target.clone()) {
        Some(url) => Arc::new(HttpSink::new(&url, a.token.or_else(|| ctx.settings.token.clone()), HTTP_TIMEOUT)),
        None => {
            let dir = a.data.unwrap_or_else(|| ctx.settings.data_dir.clone());
            Arc::new(Store::open(&dir).with_context(|| format!("opening store {}", dir.display()))?)
        }
    };
    let bind = a.bind.unwrap_or_else(|| cs.bind.clone());
    let transport = UdpTransport::bind(&bind).with_context(|| format!("binding {bind}"))?;
    let collector = Collector::new(entries, transport, clock.clone(), sink);
    let status = collector.status_handle();
    let started = clock.now_ns();
    let stop = Arc::new(AtomicBool::new(false));
    let handle = spawn_collector(collector, stop.clone())?;
    run_for(a.duration, Duration::from_millis(200), || {
        if handle.is_finished() {
            bail!("collector stopped");
        }
        Ok(())
    })?;
    stop.store(true, Ordering::SeqCst);
    handle.join().expect("collector thread")?;
    print_status(ctx, &status, started)
}

fn print_status(ctx: &Ctx, status: &StatusHandle, started: i64) -> anyhow::Result<()> {
    let s = status.read().clone();
    if ctx.format == crate::config::Format::Json {
        return output::print_json(&s);
    }
    let mut t = Table::new(["node", "address", "polls", "responses", "efficiency"]);
    for n in &s.nodes {
        t.row([
            n.node.clone(),
            n.address.clone(),
            n.counters.polls_sent.to_string(),
            n.counters.responses_received.to_string(),
            n.efficiency.map_or("-".into(), num),
        ]);
    }
    log::info!("collector ran {} cycles since {started}", s.cycles);
    Ok(output::print(&t.render())?)
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// HTTP listen address [default: serve.listen setting]
    #[arg(long, value_name = "ADDR")]
    listen: Option<String>,

    /// Store directory [default: data_dir setting]
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,

    /// Also poll the nodes in this registry
    #[arg(long, value_name = "FILE")]
    registry: Option<PathBuf>,

    /// Require this bearer token on API calls
    #[arg(long, env = "LABNET_TOKEN", hide_env_values = true)]
    token: Option<String>,

    /// Directory of dashboard assets served under /ui
    #[arg(long, value_name = "DIR")]
    ui_dir: Option<PathBuf>,

    /// Stop after this long [default: run until killed]
    #[arg(long, value_name = "DURATION", value_parser = parse_duration)]
    duration: Option<f64>,
}

pub fn serve(ctx: &Ctx, a: ServeArgs) -> anyhow::Result<()> {
    let ss = &ctx.settings.serve;
    let dir = a.data.unwrap_or_else(|| ctx.settings.data_dir.clone());
    let opts = StoreOptions {
        fsync: ss.fsync,
        ..StoreOptions::default()
    };
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let store = Arc::new(
        Store::open_with(&dir, opts)
            .with_context(|| format!("opening store {}", dir.display()))?
            .with_clock(clock.clone()),
    );
    let engine = Arc::new(Mutex::new(AlertEngine::new(Notifier::new(Arc::new(UreqPoster::new(HTTP_TIMEOUT))))));
    let mut api = Api::new(store.clone(), clock.clone())
        .with_engine(engine.clone())
        .with_token(a.token.or_else(|| ctx.settings.token.clone()))
        .with_ui_dir(a.ui_dir.or_else(|| ss.ui_dir.clone()));

    let stop = Arc::new(AtomicBool::new(false));
    let mut collector = None;
    if let Some(reg) = a.registry.or_else(|| ss.registry.clone()) {
        let entries = read_registry(&reg)?;
        let bind = &ctx.settings.collector.bind;
        let transport = UdpTransport::bind(bind).with_context(|| format!("binding {bind}"))?;
        let c = Collector::new(entries, transport, clock.clone(), store.clone());
        api = api.with_collector(c.status_handle());
        collector = Some(spawn_collector(c, stop.clone())?);
    }

    let listen = a.listen.unwrap_or_else(|| ss.listen.clone());
    let server = ApiServer::start(Arc::new(api), &listen, ss.threads).with_context(|| format!("listening on {listen}"))?;
    println!("serving http://{} from {}", server.local_addr(), dir.display());
    std::io::stdout().flush()?;

    let retention = RetentionPolicy {
        max_age_ns: ss.retention_days.map(|d| secs_to_ns(d * 86_400.0)),
        max_bytes: ss.max_bytes,
    };
    let retain = retention.max_age_ns.is_some() || retention.max_bytes.is_some();
    let mut last_retention = Instant::now();
    let period = Duration::from_secs_f64(ss.alert_period_s.max(0.05));
    let result = run_for(a.duration, period, || {
        let now = clock.now_ns();
        if let Err(e) = engine.lock().evaluate_store(&store, now) {
            log::warn!("alert pass failed: {e}");
        }
        if retain && last_retention.elapsed() >= Duration::from_secs(3600) {
            last_retention = Instant::now();
            match store.apply_retention(&retention, now) {
                Ok(n) => log::info!("retention removed {n} points"),
                Err(e) => log::warn!("retention failed: {e}"),
            }
        }
        if collector.as_ref().is_some_and(|h| h.is_finished()) {
            bail!("collector stopped");
        }
        Ok(())
    });
    stop.store(true, Ordering::SeqCst);
    server.shutdown();
    if let Some(h) = collector {
        if let Ok(Err(e)) = h.join() {
            log::warn!("collector: {e}");
        }
    }
    store.flush()?;
    result
}
