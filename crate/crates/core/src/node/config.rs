//! Node configuration and its flat `key = value` file format.
//!
//! ```text
//! # comment
//! room_id = Lab03
//! device_id = Dev01
//! mode = pull
//! listen = 127.0.0.1:9101
//! watchdog_timeout_s = 60
//! sensor = temperature T1 °C constant base=21.6 noise=0.05
//! sensor = temperature T2 °C sine base=20 amplitude=1.2 period=86400
//! ```
//!
//! `sensor` may repeat; every other key appears at most once.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::net::SocketAddr;

use super::sensor::{SensorKind, SensorModel, Unit};
use super::NodeError;
use crate::wire::is_location_id;

/// Default watchdog timeout: three missed polls at the 20 s collection interval.
pub const DEFAULT_WATCHDOG_TIMEOUT_S: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeMode {
    /// Answers collector polls.
    Pull,
    /// Submits its own points to the write endpoint.
    Push,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorBinding {
    pub measurement: String,
    pub field: String,
    pub model: SensorModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeConfig {
    pub room_id: String,
    pub device_id: String,
    pub mode: NodeMode,
    pub listen: Option<SocketAddr>,
    pub sensors: Vec<SensorBinding>,
    pub watchdog_timeout_s: f64,
    pub push_target: Option<String>,
    pub push_interval_s: f64,
    pub seed: u64,
    /// Zero point for drift and sine generators; defaults to the first sample.
    pub origin_ns: Option<i64>,
}

impl NodeConfig {
    pub fn pull(room_id: &str, device_id: &str, listen: SocketAddr) -> Self {
        Self {
            room_id: room_id.into(),
            device_id: device_id.into(),
            mode: NodeMode::Pull,
            listen: Some(listen),
            sensors: Vec::new(),
            watchdog_timeout_s: DEFAULT_WATCHDOG_TIMEOUT_S,
            push_target: None,
            push_interval_s: 20.0,
            seed: 0,
            origin_ns: None,
        }
    }

    pub fn push(room_id: &str, device_id: &str, target: &str, interval_s: f64) -> Self {
        Self {
            mode: NodeMode::Push,
            listen: None,
            push_target: Some(target.into()),
            push_interval_s: interval_s,
            ..Self::pull(room_id, device_id, "127.0.0.1:0".parse().expect("literal"))
        }
    }

    pub fn sensor(mut self, measurement: &str, field: &str, model: SensorModel) -> Self {
        self.sensors.push(SensorBinding {
            measurement: measurement.into(),
            field: field.into(),
            model,
        });
        self
    }

    pub fn validate(&self) -> Result<(), NodeError> {
        for (what, id) in [("room_id", &self.room_id), ("device_id", &self.device_id)] {
            if !is_location_id(id) {
                return Err(NodeError::Config(format!("invalid {what} {id:?}")));
            }
        }
        match self.mode {
            NodeMode::Pull if self.listen.is_none() => {
                return Err(NodeError::Config("pull mode requires listen".into()))
            }
            NodeMode::Push if self.push_target.is_none() => {
                return Err(NodeError::Config("push mode requires push_target".into()))
            }
            NodeMode::Push if !(self.push_interval_s > 0.0) => {
                return Err(NodeError::Config("push_interval_s must be > 0".into()))
            }
            _ => {}
        }
        if !(self.watchdog_timeout_s > 0.0) {
            return Err(NodeError::Config("watchdog_timeout_s must be > 0".into()));
        }
        let mut seen = BTreeSet::new();
        for s in &self.sensors {
            if !seen.insert((&s.measurement, &s.field)) {
                return Err(NodeError::Config(format!(
                    "duplicate sensor {} {}",
                    s.measurement, s.field
                )));
            }
            s.model.validate()?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, NodeError> {
        let mut room_id = None;
        let mut device_id = None;
        let mut mode = NodeMode::Pull;
        let mut listen = None;
        let mut sensors = Vec::new();
        let mut watchdog = DEFAULT_WATCHDOG_TIMEOUT_S;
        let mut push_target = None;
        let mut push_interval = 20.0;
        let mut seed = 0;
        let mut origin = None;
        let mut seen = BTreeSet::new();

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| NodeError::Config(format!("line {}: {msg}", lineno + 1));
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err("expected key = value".into()))?;
            if key != "sensor" && !seen.insert(key.to_string()) {
                return Err(err(format!("duplicate key {key:?}")));
            }
            let num = |v: &str| v.parse::<f64>().map_err(|_| err(format!("{key}: not a number")));
            match key {
                "room_id" => room_id = Some(value.to_string()),
                "device_id" => device_id = Some(value.to_string()),
                "mode" => {
                    mode = match value {
                        "pull" => NodeMode::Pull,
                        "push" => NodeMode::Push,
                        _ => return Err(err(format!("unknown mode {value:?}"))),
                    }
                }
                "listen" => {
                    listen = Some(value.parse().map_err(|_| err("listen: bad address".into()))?)
                }
                "watchdog_timeout_s" => watchdog = num(value)?,
                "push_target" => push_target = Some(value.to_string()),
                "push_interval_s" => push_interval = num(value)?,
                "seed" => seed = value.parse().map_err(|_| err("seed: not an integer".into()))?,
                "origin_ns" => {
                    origin = Some(value.parse().map_err(|_| err("origin_ns: not an integer".into()))?)
                }
                "sensor" => sensors.push(parse_sensor(value).map_err(|e| err(e.to_string()))?),
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }

        let cfg = NodeConfig {
            room_id: room_id.ok_or_else(|| NodeError::Config("missing room_id".into()))?,
            device_id: device_id.ok_or_else(|| NodeError::Config("missing device_id".into()))?,
            mode,
            listen,
            sensors,
            watchdog_timeout_s: watchdog,
            push_target,
            push_interval_s: push_interval,
            seed,
            origin_ns: origin,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form; `parse(render(c)) == c`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "room_id = {}", self.room_id);
        let _ = writeln!(out, "device_id = {}", self.device_id);
        match self.mode {
            NodeMode::Pull => out.push_str("mode = pull\n"),
            NodeMode::Push => out.push_str("mode = push\n"),
        }
        if let Some(l) = self.listen {
            let _ = writeln!(out, "listen = {l}");
        }
        let _ = writeln!(out, "watchdog_timeout_s = {}", self.watchdog_timeout_s);
        if let Some(t) = &self.push_target {
            let _ = writeln!(out, "push_target = {t}");
        }
        let _ = writeln!(out, "push_interval_s = {}", self.push_interval_s);
        let _ = writeln!(out, "seed = {}", self.seed);
        if let Some(o) = self.origin_ns {
            let _ = writeln!(out, "origin_ns = {o}");
        }
        for s in &self.sensors {
            let m = &s.model;
            let _ = write!(out, "sensor = {} {} {} ", s.measurement, s.field, m.unit);
            match &m.kind {
                SensorKind::Constant => out.push_str("constant"),
                SensorKind::Drift { rate_per_hour } => {
                    let _ = write!(out, "drift rate={rate_per_hour}");
                }
                SensorKind::Sine {
                    amplitude,
                    period_s,
                } => {
                    let _ = write!(out, "sine amplitude={amplitude} period={period_s}");
                }
                SensorKind::RandomWalk => out.push_str("random-walk"),
                SensorKind::Coupled { source, gain } => {
                    let _ = write!(out, "coupled source={source} gain={gain}");
                }
            }
            let _ = writeln!(out, " base={} noise={}", m.base, m.noise_std);
        }
        out
    }
}

fn parse_sensor(spec: &str) -> Result<SensorBinding, NodeError> {
    let mut words = spec.split_whitespace();
    let mut next = |what: &str| {
        words
            .next()
            .ok_or_else(|| NodeError::Config(format!("sensor: missing {what}")))
    };
    let measurement = next("measurement")?.to_string();
    let field = next("field")?.to_string();
    let unit: Unit = next("unit")?.parse()?;
    let kind_word = next("kind")?.to_string();

    let mut base = None;
    let mut noise = 0.0;
    let mut rate = None;
    let mut amplitude = None;
    let mut period = None;
    let mut source = None;
    let mut gain = None;
    for kv in words {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| NodeError::Config(format!("sensor: expected key=value, got {kv:?}")))?;
        let num = || {
            v.parse::<f64>()
                .map_err(|_| NodeError::Config(format!("sensor: {k} is not a number")))
        };
        match k {
            "base" => base = Some(num()?),
            "noise" => noise = num()?,
            "rate" => rate = Some(num()?),
            "amplitude" => amplitude = Some(num()?),
            "period" => period = Some(num()?),
            "source" => source = Some(v.to_string()),
            "gain" => gain = Some(num()?),
            other => return Err(NodeError::Config(format!("sensor: unknown parameter {other:?}"))),
        }
    }
    let need = |o: Option<f64>, what: &str| {
        o.ok_or_else(|| NodeError::Config(format!("sensor: {kind_word} needs {what}")))
    };
    let kind = match kind_word.as_str() {
        "constant" => SensorKind::Constant,
        "drift" => SensorKind::Drift {
            rate_per_hour: need(rate, "rate")?,
        },
        "sine" => SensorKind::Sine {
            amplitude: need(amplitude, "amplitude")?,
            period_s: need(period, "period")?,
        },
        "random-walk" => SensorKind::RandomWalk,
        "coupled" => SensorKind::Coupled {
            source: source
                .ok_or_else(|| NodeError::Config("sensor: coupled needs source".into()))?,
            gain: need(gain, "gain")?,
        },
        other => return Err(NodeError::Config(format!("sensor: unknown kind {other:?}"))),
    };
    Ok(SensorBinding {
        measurement,
        field,
        model: SensorModel {
            kind,
            base: need(base, "base")?,
            noise_std: noise,
            unit,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# central lab thermocouples
room_id = Lab03
device_id = Dev01
mode = pull
listen = 127.0.0.1:9101
sensor = temperature T1 °C constant base=21.6
sensor = temperature T2 °C sine base=20 amplitude=1.2 period=86400 noise=0.1
sensor = pressure P1 mbar drift base=1.2e-10 rate=1e-12
";

    #[test]
    fn parses_sample() {
        let c = NodeConfig::parse(SAMPLE).unwrap();
        assert_eq!(c.room_id, "Lab03");
        assert_eq!(c.sensors.len(), 3);
        assert_eq!(c.watchdog_timeout_s, 60.0);
        assert_eq!(c.sensors[1].model.noise_std, 0.1);
        assert_eq!(NodeConfig::parse(&c.render()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(NodeConfig::parse("room_id = a\ndevice_id = b\n").is_err(), "pull without listen");
        assert!(NodeConfig::parse("room_id = a\ndevice_id = b\nmode = push\n").is_err());
        assert!(NodeConfig::parse(&format!("{SAMPLE}colour = red\n")).is_err());
        assert!(NodeConfig::parse(&format!("{SAMPLE}sensor = temperature T1 °C constant base=1\n")).is_err());
        assert!(NodeConfig::parse(&format!("{SAMPLE}room_id = b\n")).is_err());
        assert!(NodeConfig::parse(&format!("{SAMPLE}sensor = t X °C constant base=1 noise=-1\n")).is_err());
        assert!(NodeConfig::parse("room_id = Lab 03\ndevice_id = b\nlisten = 127.0.0.1:1\n").is_err());
    }
}
