use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::NodeError;

/// Unit label attached to a sensor; fixed per sensor kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "°C")]
    Celsius,
    #[serde(rename = "mbar")]
    Millibar,
    #[serde(rename = "mW")]
    Milliwatt,
    #[serde(rename = "mT")]
    Millitesla,
    #[serde(rename = "1")]
    Dimensionless,
}

impl Unit {
    pub fn label(self) -> &'static str {
        match self {
            Unit::Celsius => "°C",
            Unit::Millibar => "mbar",
            Unit::Milliwatt => "mW",
            Unit::Millitesla => "mT",
            Unit::Dimensionless => "1",
        }
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Unit {
    type Err = NodeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "°C" | "degC" | "C" => Unit::Celsius,
            "mbar" => Unit::Millibar,
            "mW" => Unit::Milliwatt,
            "mT" => Unit::Millitesla,
            "1" | "" | "dimensionless" => Unit::Dimensionless,
            other => return Err(NodeError::Config(format!("unknown unit {other:?}"))),
        })
    }
}

/// Signal shape of a simulated sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SensorKind {
    Constant,
    /// Linear drift, in units per hour.
    Drift { rate_per_hour: f64 },
    Sine { amplitude: f64, period_s: f64 },
    /// Gaussian steps of `noise_std` accumulated sample to sample.
    RandomWalk,
    /// `base + gain · source(t)`, where `source` is a scenario signal.
    Coupled { source: String, gain: f64 },
}

/// Phenomenological stand-in for a physical sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorModel {
    #[serde(flatten)]
    pub kind: SensorKind,
    pub base: f64,
    #[serde(default)]
    pub noise_std: f64,
    pub unit: Unit,
}

/// Source of scenario signals that coupled sensors read from.
pub trait Environment: Send + Sync {
    fn signal(&self, name: &str, t_ns: i64) -> Option<f64>;
}

/// Environment with no signals.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoEnvironment;

impl Environment for NoEnvironment {
    fn signal(&self, _: &str, _: i64) -> Option<f64> {
        None
    }
}

impl<E: Environment + ?Sized> Environment for std::sync::Arc<E> {
    fn signal(&self, name: &str, t_ns: i64) -> Option<f64> {
        (**self).signal(name, t_ns)
    }
}

impl SensorModel {
    pub fn constant(base: f64, unit: Unit) -> Self {
        Self {
            kind: SensorKind::Constant,
            base,
            noise_std: 0.0,
            unit,
        }
    }

    pub fn with_noise(mut self, std: f64) -> Self {
        self.noise_std = std;
        self
    }

    pub fn validate(&self) -> Result<(), NodeError> {
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(NodeError::Config(format!(
                "noise std must be finite and >= 0, got {}",
                self.noise_std
            )));
        }
        if let SensorKind::Sine { period_s, .. } = self.kind {
            if !(period_s > 0.0) {
                return Err(NodeError::Config("sine period must be > 0".into()));
            }
        }
        Ok(())
    }

    /// Noise-free value at `elapsed_s` seconds after the node's origin.
    pub fn deterministic_value(
        &self,
        elapsed_s: f64,
        t_ns: i64,
        env: &dyn Environment,
    ) -> Result<f64, NodeError> {
        Ok(match &self.kind {
            SensorKind::Constant | SensorKind::RandomWalk => self.base,
            SensorKind::Drift { rate_per_hour } => self.base + rate_per_hour * elapsed_s / 3600.0,
            SensorKind::Sine {
                amplitude,
                period_s,
            } => self.base + amplitude * (std::f64::consts::TAU * elapsed_s / period_s).sin(),
            SensorKind::Coupled { source, gain } => {
                let s = env
                    .signal(source, t_ns)
                    .ok_or_else(|| NodeError::UnknownCouplingSource(source.clone()))?;
                self.base + gain * s
            }
        })
    }

    /// Draws one reading. `walk` is the binding's accumulated random-walk
    /// offset and is only touched by the random-walk kind.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        elapsed_s: f64,
        t_ns: i64,
        env: &dyn Environment,
        rng: &mut R,
        walk: &mut f64,
    ) -> Result<f64, NodeError> {
        let value = self.deterministic_value(elapsed_s, t_ns, env)?;
        let noise = if self.noise_std > 0.0 {
            Normal::new(0.0, self.noise_std)
                .expect("validated std")
                .sample(rng)
        } else {
            0.0
        };
        if matches!(self.kind, SensorKind::RandomWalk) {
            *walk += noise;
            Ok(value + *walk)
        } else {
            Ok(value + noise)
        }
    }
}
