use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use labnet_core::collector::{Collector, RegistryEntry, UdpTransport};
use labnet_core::node::{spawn_pull_node, LossInjector, NoEnvironment, NodeConfig, SensorModel, Unit};
use labnet_core::sink::MemorySink;
use labnet_core::{Clock, ScaledClock};

#[test]
fn loopback_polling_with_a_dead_node() {
    let clock: Arc<dyn Clock> = Arc::new(ScaledClock::new(1_700_000_000_000_000_000, 10.0));
    let mut nodes = Vec::new();
    let mut registry = Vec::new();
    for i in 0..3 {
        let dev = format!("Dev{i:02}");
        let cfg = NodeConfig::pull("Lab03", &dev, "127.0.0.1:0".parse().unwrap())
            .sensor("temperature", "T1", SensorModel::constant(21.5, Unit::Celsius))
            .sensor("pressure", "P1", SensorModel::constant(1.2e-10, Unit::Millibar));
        let node = spawn_pull_node(cfg, clock.clone(), Arc::new(NoEnvironment), LossInjector::none()).unwrap();
        let addr = node.local_addr().unwrap();
        registry.push(RegistryEntry::new("Lab03", &dev, &addr.to_string(), 1.0));
        nodes.push(node);
    }
    // Nothing listens here.
    let dead = std::net::UdpSocket::bind("127.0.0.1:0").unwrap();
    let dead_addr = dead.local_addr().unwrap();
    drop(dead);
    registry.push(RegistryEntry::new("Lab03", "Dead", &dead_addr.to_string(), 1.0));

    let sink = Arc::new(MemorySink::default());
    let mut collector = Collector::new(
        registry,
        UdpTransport::bind("127.0.0.1:0").unwrap(),
        clock.clone(),
        sink.clone(),
    );
    let status = collector.status_handle();
    let stop = Arc::new(AtomicBool::new(false));
    let runner = {
        let stop = stop.clone();
        thread::spawn(move || {
            collector.run(&stop).unwrap();
            collector
        })
    };
    thread::sleep(Duration::from_millis(2_000));
    stop.store(true, Ordering::Relaxed);
    let collector = runner.join().unwrap();

    let report = collector.delivery_report(i64::MIN, i64::MAX);
    let polls = report.nodes[0].polls;
    assert!(polls >= 15, "only {polls} cycles");
    for n in &report.nodes[..3] {
        assert_eq!(n.efficiency, Some(1.0), "{n:?}");
        // Live nodes keep the 1 s cadence despite the dead one.
        assert!(n.polls.abs_diff(polls) <= 1);
    }
    assert_eq!(report.nodes[3].efficiency, Some(0.0));
    assert!(report.aggregate.unwrap() < 1.0);
    let st = status.read();
    assert_eq!(st.nodes[3].counters.timeouts, st.nodes[3].counters.polls_sent);
    assert_eq!(sink.len() as u64, 2 * report.nodes[..3].iter().map(|n| n.responses).sum::<u64>());
}
