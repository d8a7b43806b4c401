//! Destinations for stamped points: the store itself, or the HTTP write
//! endpoint of a remote store.

use std::time::Duration;

use crate::wire::{encode_line, DataPoint};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SinkError {
    #[error("sink unavailable: {0}")]
    Unavailable(String),
    #[error("sink rejected batch: {0}")]
    Rejected(String),
}

/// Something that accepts batches of stamped points atomically: either the
/// whole batch is written or none of it is.
pub trait PointSink: Send + Sync {
    fn write_points(&self, points: &[DataPoint]) -> Result<usize, SinkError>;
}

impl<S: PointSink + ?Sized> PointSink for std::sync::Arc<S> {
    fn write_points(&self, points: &[DataPoint]) -> Result<usize, SinkError> {
        (**self).write_points(points)
    }
}

/// In-memory sink, mostly for tests and dry runs.
#[derive(Debug, Default)]
pub struct MemorySink {
    points: parking_lot::Mutex<Vec<DataPoint>>,
}

impl MemorySink {
    pub fn points(&self) -> Vec<DataPoint> {
        self.points.lock().clone()
    }

    pub fn len(&self) -> usize {
        self.points.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl PointSink for MemorySink {
    fn write_points(&self, points: &[DataPoint]) -> Result<usize, SinkError> {
        self.points.lock().extend_from_slice(points);
        Ok(points.len())
    }
}

/// Posts batches to a remote `POST /write` endpoint as line protocol.
pub struct HttpSink {
    url: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl HttpSink {
    /// `base` is the server root, e.g. `http://10.0.0.5:8086`.
    pub fn new(base: &str, token: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            url: format!("{}/write", base.trim_end_matches('/')),
            token,
            agent,
        }
    }
}

impl PointSink for HttpSink {
    fn write_points(&self, points: &[DataPoint]) -> Result<usize, SinkError> {
        let mut body = String::new();
        for p in points {
            body.push_str(&encode_line(p).map_err(|e| SinkError::Rejected(e.to_string()))?);
            body.push('\n');
        }
        let mut req = self.agent.post(&self.url).header("Content-Type", "text/plain; charset=utf-8");
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req.send(body).map_err(|e| SinkError::Unavailable(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().unwrap_or_default();
        match status {
            200 => serde_json::from_str::<crate::api::WriteReport>(&text)
                .map(|r| r.accepted)
                .or(Ok(points.len())),
            201..=299 => Ok(points.len()),
            400 | 413 => Err(SinkError::Rejected(format!("{status}: {text}"))),
            _ => Err(SinkError::Unavailable(format!("{status}: {text}"))),
        }
    }
}
