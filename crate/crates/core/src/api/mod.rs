//! HTTP API over the store: line-protocol writes, series queries, health,
//! alert rules, dashboard layouts and the dashboard's static assets.
//!
//! [`Api::handle`] maps one request to one response and holds no per-request
//! state; [`ApiServer`] runs it behind an HTTP/1.1 listener.

mod dashboards;
mod server;

use std::collections::BTreeMap;
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use dashboards::{
    delete_dashboard, load_dashboards, put_dashboard, DashboardError, DashboardLayout, Panel, PanelQuery,
    DASHBOARDS_META,
};
pub use server::ApiServer;

use crate::alert::{delete_rule, load_rules, put_rule, AlertEngine, AlertRule, RuleStoreError};
use crate::clock::{parse_time, secs_to_ns, Clock};
use crate::collector::StatusHandle;
use crate::storage::{Aggregator, SeriesFrame, SeriesQuery, StorageError, Store};
use crate::wire::{parse_line, WireError};

/// Largest accepted request body.
pub const MAX_BODY_BYTES: usize = 1 << 20;

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub status: u16,
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<usize>,
}

impl ApiError {
    pub fn new(status: u16, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            code: code.into(),
            message: message.into(),
            line: None,
            column: None,
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(400, "bad_request", message)
    }

    fn not_found(what: &str) -> Self {
        Self::new(404, "not_found", format!("{what} not found"))
    }
}

impl From<StorageError> for ApiError {
    fn from(e: StorageError) -> Self {
        match e {
            StorageError::DiskFull => Self::new(507, "disk_full", e.to_string()),
            StorageError::InvalidQuery(m) => Self::new(400, "invalid_query", m),
            StorageError::ReadOnly => Self::new(503, "read_only", e.to_string()),
            StorageError::MetaName(_) => Self::bad_request(e.to_string()),
            other => Self::new(500, "storage_error", other.to_string()),
        }
    }
}

impl From<RuleStoreError> for ApiError {
    fn from(e: RuleStoreError) -> Self {
        match e {
            RuleStoreError::Storage(s) => s.into(),
            RuleStoreError::Invalid(r) => Self::new(400, "invalid_rule", r.0),
            RuleStoreError::Corrupt(m) => Self::new(500, "corrupt_rules", m),
        }
    }
}

impl From<DashboardError> for ApiError {
    fn from(e: DashboardError) -> Self {
        match e {
            DashboardError::Storage(s) => s.into(),
            DashboardError::Invalid(m) => Self::new(400, "invalid_dashboard", m),
            DashboardError::Corrupt(m) => Self::new(500, "corrupt_dashboards", m),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ApiRequest {
    pub method: String,
    /// Path and query string, as sent.
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl ApiRequest {
    pub fn new(method: &str, url: &str) -> Self {
        Self {
            method: method.into(),
            url: url.into(),
            ..Self::default()
        }
    }

    pub fn header(mut self, name: &str, value: &str) -> Self {
        self.headers.push((name.into(), value.into()));
        self
    }

    pub fn body(mut self, body: impl Into<Vec<u8>>) -> Self {
        self.body = body.into();
        self
    }

    pub fn header_value(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    fn path_and_params(&self) -> (&str, Vec<(String, String)>) {
        let (path, query) = self.url.split_once('?').unwrap_or((&self.url, ""));
        let params = form_urlencoded::parse(query.as_bytes()).into_owned().collect();
        (path, params)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiResponse {
    pub status: u16,
    pub content_type: Option<String>,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl ApiResponse {
    fn empty(status: u16) -> Self {
        Self {
            status,
            content_type: None,
            headers: Vec::new(),
            body: Vec::new(),
        }
    }

    fn json<T: Serialize>(status: u16, value: &T) -> Self {
        Self {
            status,
            content_type: Some("application/json".into()),
            headers: Vec::new(),
            body: serde_json::to_vec(value).expect("serializable"),
        }
    }

    fn text(status: u16, content_type: &str, body: impl Into<Vec<u8>>) -> Self {
        Self {
            status,
            content_type: Some(content_type.into()),
            headers: Vec::new(),
            body: body.into(),
        }
    }

    pub fn error(e: &ApiError) -> Self {
        Self::json(e.status, e)
    }

    pub fn body_str(&self) -> &str {
        std::str::from_utf8(&self.body).unwrap_or("")
    }
}

/// Rejected line of a partially accepted write.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineError {
    pub line: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<usize>,
    pub message: String,
}

/// Body of a `200` answer to a write with rejected lines.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriteReport {
    pub accepted: usize,
    pub rejected: Vec<LineError>,
}

/// One frame of a `GET /query` answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDoc {
    pub series: String,
    pub measurement: String,
    pub tags: BTreeMap<String, String>,
    pub field: String,
    pub unit: Option<String>,
    pub time: Vec<i64>,
    pub value: Vec<f64>,
}

impl From<&SeriesFrame> for FrameDoc {
    fn from(f: &SeriesFrame) -> Self {
        Self {
            series: f.key.to_string(),
            measurement: f.key.measurement.clone(),
            tags: f.key.tags.iter().cloned().collect(),
            field: f.key.field.clone(),
            unit: f.unit.clone(),
            time: f.times.clone(),
            value: f.values.clone(),
        }
    }
}

impl FrameDoc {
    pub fn into_frame(self) -> SeriesFrame {
        let key = crate::storage::SeriesKey::new(&self.measurement, &self.tags, &self.field);
        SeriesFrame {
            key,
            unit: self.unit,
            times: self.time,
            values: self.value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryDoc {
    pub frames: Vec<FrameDoc>,
}

/// Renders frames as CSV: `time,value` for one series, `series,time,value`
/// otherwise. Times are epoch nanoseconds.
pub fn frames_to_csv(frames: &[SeriesFrame]) -> String {
    let mut out = String::new();
    if frames.len() == 1 {
        out.push_str("time,value\n");
        for (t, v) in frames[0].iter() {
            out.push_str(&format!("{t},{v}\n"));
        }
    } else {
        out.push_str("series,time,value\n");
        for f in frames {
            let key = f.key.to_string().replace('"', "\"\"");
            for (t, v) in f.iter() {
                out.push_str(&format!("\"{key}\",{t},{v}\n"));
            }
        }
    }
    out
}

/// Builds a [`SeriesQuery`] from `GET /query` parameters.
pub fn query_from_params(params: &[(String, String)]) -> Result<SeriesQuery, ApiError> {
    let mut measurement = None;
    let (mut start, mut end) = (0, i64::MAX);
    let mut tags = BTreeMap::new();
    let mut fields = Vec::new();
    let mut agg = None;
    let mut bucket = None;
    let mut limit = None;
    for (k, v) in params {
        let time = |v: &str| parse_time(v).map_err(|m| ApiError::new(400, "invalid_query", m));
        match k.as_str() {
            "measurement" => measurement = Some(v.clone()),
            "field" => fields.push(v.clone()),
            "start" => start = time(v)?,
            "end" => end = time(v)?,
            "agg" => agg = Some(v.parse::<Aggregator>().map_err(|m| ApiError::new(400, "invalid_query", m))?),
            "bucket_s" => {
                let b: f64 = v
                    .parse()
                    .ok()
                    .filter(|b: &f64| *b > 0.0 && b.is_finite())
                    .ok_or_else(|| ApiError::new(400, "invalid_query", format!("bucket_s {v:?} is not a positive number")))?;
                bucket = Some(secs_to_ns(b));
            }
            "limit" => {
                limit = Some(
                    v.parse::<usize>()
                        .map_err(|_| ApiError::new(400, "invalid_query", format!("limit {v:?} is not a count")))?,
                )
            }
            "format" => {}
            k if k.starts_with("tag.") && k.len() > 4 => {
                tags.insert(k[4..].to_string(), v.clone());
            }
            other => return Err(ApiError::new(400, "invalid_query", format!("unknown parameter {other:?}"))),
        }
    }
    let measurement = measurement.ok_or_else(|| ApiError::new(400, "invalid_query", "measurement is required"))?;
    let mut q = SeriesQuery::new(&measurement, start, end);
    q.tags = tags;
    q.fields = fields;
    q.limit = limit;
    match (agg, bucket) {
        (Some(a), Some(b)) => q = q.aggregate(a, b),
        (None, None) => {}
        _ => return Err(ApiError::new(400, "invalid_query", "agg and bucket_s must be given together")),
    }
    q.validate().map_err(|m| ApiError::new(400, "invalid_query", m))?;
    Ok(q)
}

#[derive(Debug, Default)]
struct Counters {
    writes: AtomicU64,
    lines_accepted: AtomicU64,
    lines_rejected: AtomicU64,
    queries: AtomicU64,
    errors: AtomicU64,
}

/// Everything a request handler may look at.
pub struct Api {
    store: Arc<Store>,
    clock: Arc<dyn Clock>,
    started: Instant,
    counters: Counters,
    collector: Option<StatusHandle>,
    engine: Option<Arc<Mutex<AlertEngine>>>,
    token: Option<String>,
    ui_dir: Option<PathBuf>,
}

const UI_PLACEHOLDER: &str = "<!doctype html>
<html><head><meta charset=\"utf-8\"><title>labnet</title></head>
<body><h1>labnet</h1>
<p>The dashboard bundle is not installed. Start the server with <code>--ui-dir</code> pointing at a built bundle.</p>
<ul><li><a href=\"/health\">/health</a></li><li><a href=\"/alerts\">/alerts</a></li><li><a href=\"/dashboards\">/dashboards</a></li></ul>
</body></html>
";

fn content_type_for(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).unwrap_or("") {
        "html" | "htm" => "text/html; charset=utf-8",
        "js" | "mjs" => "text/javascript",
        "css" => "text/css",
        "json" | "map" => "application/json",
        "svg" => "image/svg+xml",
        "png" => "image/png",
        "ico" => "image/x-icon",
        "woff2" => "font/woff2",
        "txt" => "text/plain; charset=utf-8",
        _ => "application/octet-stream",
    }
}

impl Api {
    pub fn new(store: Arc<Store>, clock: Arc<dyn Clock>) -> Self {
        Self {
            store,
            clock,
            started: Instant::now(),
            counters: Counters::default(),
            collector: None,
            engine: None,
            token: None,
            ui_dir: None,
        }
    }

    pub fn with_collector(mut self, status: StatusHandle) -> Self {
        self.collector = Some(status);
        self
    }

    pub fn with_engine(mut self, engine: Arc<Mutex<AlertEngine>>) -> Self {
        self.engine = Some(engine);
        self
    }

    /// Requires `Authorization: Bearer <token>` on everything except
    /// `GET /health` and `/ui`.
    pub fn with_token(mut self, token: Option<String>) -> Self {
        self.token = token.filter(|t| !t.is_empty());
        self
    }

    pub fn with_ui_dir(mut self, dir: Option<PathBuf>) -> Self {
        self.ui_dir = dir;
        self
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn handle(&self, req: &ApiRequest) -> ApiResponse {
        let resp = match self.route(req) {
            Ok(r) => r,
            Err(e) => ApiResponse::error(&e),
        };
        if resp.status >= 400 {
            self.counters.errors.fetch_add(1, Ordering::Relaxed);
        }
        resp
    }

    fn authorized(&self, req: &ApiRequest) -> bool {
        let Some(token) = &self.token else { return true };
        req.header_value("authorization")
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t.trim() == token)
    }

    fn route(&self, req: &ApiRequest) -> Result<ApiResponse, ApiError> {
        let (path, params) = req.path_and_params();
        let segments: Vec<&str> = path.trim_matches('/').split('/').filter(|s| !s.is_empty()).collect();
        let method = req.method.as_str();
        let public = matches!((method, segments.first()), ("GET", Some(&"health")) | (_, Some(&"ui")));
        if !public && !self.authorized(req) {
            return Err(ApiError::new(401, "unauthorized", "missing or wrong bearer token"));
        }
        match (method, segments.as_slice()) {
            ("POST", ["write"]) => self.write(req),
            ("GET", ["query"]) => self.query(req, &params),
            ("GET", ["health"]) => Ok(self.health()),
            ("GET", ["alerts"]) => self.list_rules(),
            ("POST", ["alerts"]) => self.create_rule(req),
            ("GET", ["alerts", id]) => self.get_rule(id),
            ("PUT", ["alerts", id]) => self.update_rule(id, req),
            ("DELETE", ["alerts", id]) => {
                if delete_rule(&self.store, id)? {
                    Ok(ApiResponse::empty(204))
                } else {
                    Err(ApiError::not_found(&format!("rule {id}")))
                }
            }
            ("POST", ["alerts", id, "reset"]) => self.reset_rule(id),
            ("GET", ["events"]) => self.events(&params),
            ("GET", ["dashboards"]) => Ok(ApiResponse::json(200, &load_dashboards(&self.store)?)),
            ("POST", ["dashboards"]) => self.create_dashboard(req),
            ("GET", ["dashboards", id]) => load_dashboards(&self.store)?
                .into_iter()
                .find(|d| d.id == *id)
                .map(|d| ApiResponse::json(200, &d))
                .ok_or_else(|| ApiError::not_found(&format!("dashboard {id}"))),
            ("PUT", ["dashboards", id]) => self.update_dashboard(id, req),
            ("DELETE", ["dashboards", id]) => {
                if delete_dashboard(&self.store, id)? {
                    Ok(ApiResponse::empty(204))
                } else {
                    Err(ApiError::not_found(&format!("dashboard {id}")))
                }
            }
            ("GET", ["ui", rest @ ..]) => self.static_asset(rest),
            (_, ["write" | "query" | "health" | "alerts" | "events" | "dashboards" | "ui", ..]) => {
                Err(ApiError::new(405, "method_not_allowed", format!("{method} is not supported on {path}")))
            }
            _ => Err(ApiError::not_found(&format!("route {path}"))),
        }
    }

    fn write(&self, req: &ApiRequest) -> Result<ApiResponse, ApiError> {
        self.counters.writes.fetch_add(1, Ordering::Relaxed);
        if req.body.len() > MAX_BODY_BYTES {
            return Err(ApiError::new(
                413,
                "payload_too_large",
                format!("body exceeds {MAX_BODY_BYTES} bytes"),
            ));
        }
        let text = std::str::from_utf8(&req.body)
            .map_err(|e| ApiError::new(400, "invalid_encoding", format!("body is not UTF-8: {e}")))?;
        let mut points = Vec::new();
        let mut line_of = Vec::new();
        let mut rejected = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            match parse_line(line) {
                Ok(p) => {
                    points.push(p);
                    line_of.push(i + 1);
                }
                Err(e) => rejected.push(line_error(i + 1, &e)),
            }
        }
        let outcome = if points.is_empty() {
            Default::default()
        } else {
            self.store.write(points, self.clock.now_ns())?
        };
        for (idx, e) in &outcome.rejected {
            rejected.push(line_error(line_of[*idx], e));
        }
        rejected.sort_by_key(|e| e.line);
        self.counters
            .lines_accepted
            .fetch_add(outcome.accepted as u64, Ordering::Relaxed);
        self.counters
            .lines_rejected
            .fetch_add(rejected.len() as u64, Ordering::Relaxed);

        if rejected.is_empty() {
            let mut r = ApiResponse::empty(204);
            r.headers.push(("X-Labnet-Accepted".into(), outcome.accepted.to_string()));
            return Ok(r);
        }
        if outcome.accepted == 0 {
            let first = &rejected[0];
            return Err(ApiError {
                status: 400,
                code: "invalid_line".into(),
                message: format!("line {}: {}", first.line, first.message),
                line: Some(first.line),
                column: first.column,
            });
        }
        Ok(ApiResponse::json(
            200,
            &WriteReport {
                accepted: outcome.accepted,
                rejected,
            },
        ))
    }

    fn query(&self, req: &ApiRequest, params: &[(String, String)]) -> Result<ApiResponse, ApiError> {
        self.counters.queries.fetch_add(1, Ordering::Relaxed);
        let q = query_from_params(params)?;
        let frames = self.store.query(&q)?;
        let wants_csv = params.iter().any(|(k, v)| k == "format" && v == "csv")
            || req.header_value("accept").is_some_and(|a| a.contains("text/csv"));
        if let Some((_, f)) = params.iter().find(|(k, v)| k == "format" && v != "csv" && v != "json") {
            return Err(ApiError::new(400, "invalid_query", format!("unknown format {f:?}")));
        }
        if wants_csv {
            return Ok(ApiResponse::text(200, "text/csv", frames_to_csv(&frames)));
        }
        let doc = QueryDoc {
            frames: frames.iter().map(FrameDoc::from).collect(),
        };
        Ok(ApiResponse::json(200, &doc))
    }

    fn health(&self) -> ApiResponse {
        let c = &self.counters;
        let collector = self.collector.as_ref().map(|s| {
            let s = s.read();
            json!({
                "cycles": s.cycles,
                "storage_ok": s.storage_ok,
                "pending_points": s.pending_points,
                "dropped_points": s.dropped_points,
                "nodes": s.nodes.iter().map(|n| json!({
                    "node": n.node,
                    "efficiency": n.efficiency,
                    "polls_sent": n.counters.polls_sent,
                    "responses_received": n.counters.responses_received,
                })).collect::<Vec<_>>(),
            })
        });
        let active = self.engine.as_ref().map_or(0, |e| e.lock().active_count());
        ApiResponse::json(
            200,
            &json!({
                "status": "ok",
                "uptime_s": self.started.elapsed().as_secs_f64(),
                "writes": c.writes.load(Ordering::Relaxed),
                "lines_accepted": c.lines_accepted.load(Ordering::Relaxed),
                "lines_rejected": c.lines_rejected.load(Ordering::Relaxed),
                "queries": c.queries.load(Ordering::Relaxed),
                "errors": c.errors.load(Ordering::Relaxed),
                "storage": self.store.stats(),
                "collector": collector,
                "active_alerts": active,
            }),
        )
    }

    fn parse_body<T: serde::de::DeserializeOwned>(req: &ApiRequest) -> Result<T, ApiError> {
        serde_json::from_slice(&req.body).map_err(|e| {
            let mut err = ApiError::new(400, "invalid_json", e.to_string());
            err.line = Some(e.line());
            err.column = Some(e.column());
            err
        })
    }

    fn list_rules(&self) -> Result<ApiResponse, ApiError> {
        let rules = load_rules(&self.store)?;
        let Some(engine) = &self.engine else {
            return Ok(ApiResponse::json(200, &rules));
        };
        let status = engine.lock().status();
        let docs: Vec<_> = rules
            .iter()
            .map(|r| {
                let s = status.iter().find(|s| s.rule.id == r.id);
                let mut v = serde_json::to_value(r).expect("serializable");
                v["firing"] = json!(s.is_some_and(|s| s.firing));
                v["last_value"] = json!(s.and_then(|s| s.last_value));
                v
            })
            .collect();
        Ok(ApiResponse::json(200, &docs))
    }

    fn get_rule(&self, id: &str) -> Result<ApiResponse, ApiError> {
        load_rules(&self.store)?
            .into_iter()
            .find(|r| r.id == id)
            .map(|r| ApiResponse::json(200, &r))
            .ok_or_else(|| ApiError::not_found(&format!("rule {id}")))
    }

    fn create_rule(&self, req: &ApiRequest) -> Result<ApiResponse, ApiError> {
        let rule: AlertRule = Self::parse_body(req)?;
        if !rule.id.is_empty() && load_rules(&self.store)?.iter().any(|r| r.id == rule.id) {
            return Err(ApiError::new(409, "conflict", format!("rule {} exists", rule.id)));
        }
        let (rule, _) = put_rule(&self.store, rule)?;
        Ok(ApiResponse::json(201, &rule))
    }

    fn update_rule(&self, id: &str, req: &ApiRequest) -> Result<ApiResponse, ApiError> {
        let mut rule: AlertRule = Self::parse_body(req)?;
        if !rule.id.is_empty() && rule.id != id {
            return Err(ApiError::bad_request(format!("body id {} does not match path id {id}", rule.id)));
        }
        if !load_rules(&self.store)?.iter().any(|r| r.id == id) {
            return Err(ApiError::not_found(&format!("rule {id}")));
        }
        rule.id = id.to_string();
        let (rule, _) = put_rule(&self.store, rule)?;
        Ok(ApiResponse::json(200, &rule))
    }

    fn reset_rule(&self, id: &str) -> Result<ApiResponse, ApiError> {
        let engine = self
            .engine
            .as_ref()
            .ok_or_else(|| ApiError::new(503, "no_engine", "alert engine is not running"))?;
        let mut engine = engine.lock();
        if !engine.rules().iter().any(|r| r.id == id) {
            return Err(ApiError::not_found(&format!("rule {id}")));
        }
        let cmd = engine.reset_interlock(id, self.clock.now_ns());
        Ok(ApiResponse::json(200, &json!({ "id": id, "command": cmd })))
    }

    fn events(&self, params: &[(String, String)]) -> Result<ApiResponse, ApiError> {
        let since = match params.iter().find(|(k, _)| k == "since") {
            Some((_, v)) => parse_time(v).map_err(ApiError::bad_request)?,
            None => i64::MIN,
        };
        let events = self.engine.as_ref().map(|e| e.lock().events_since(since)).unwrap_or_default();
        Ok(ApiResponse::json(200, &events))
    }

    fn create_dashboard(&self, req: &ApiRequest) -> Result<ApiResponse, ApiError> {
        let d: DashboardLayout = Self::parse_body(req)?;
        if !d.id.is_empty() && load_dashboards(&self.store)?.iter().any(|x| x.id == d.id) {
            return Err(ApiError::new(409, "conflict", format!("dashboard {} exists", d.id)));
        }
        let (d, _) = put_dashboard(&self.store, d)?;
        Ok(ApiResponse::json(201, &d))
    }

    fn update_dashboard(&self, id: &str, req: &ApiRequest) -> Result<ApiResponse, ApiError> {
        let mut d: DashboardLayout = Self::parse_body(req)?;
        if !d.id.is_empty() && d.id != id {
            return Err(ApiError::bad_request(format!("body id {} does not match path id {id}", d.id)));
        }
        if !load_dashboards(&self.store)?.iter().any(|x| x.id == id) {
            return Err(ApiError::not_found(&format!("dashboard {id}")));
        }
        d.id = id.to_string();
        let (d, _) = put_dashboard(&self.store, d)?;
        Ok(ApiResponse::json(200, &d))
    }

    fn static_asset(&self, rest: &[&str]) -> Result<ApiResponse, ApiError> {
        let rel: PathBuf = if rest.is_empty() { PathBuf::from("index.html") } else { rest.iter().collect() };
        if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
            return Err(ApiError::not_found("asset"));
        }
        if let Some(dir) = &self.ui_dir {
            let path = dir.join(&rel);
            if path.is_file() {
                let body = std::fs::read(&path).map_err(|e| ApiError::new(500, "io_error", e.to_string()))?;
                return Ok(ApiResponse::text(200, content_type_for(&path), body));
            }
        }
        if rel == Path::new("index.html") {
            return Ok(ApiResponse::text(200, "text/html; charset=utf-8", UI_PLACEHOLDER));
        }
        Err(ApiError::not_found(&format!("asset {}", rel.display())))
    }
}

fn line_error(line: usize, e: &WireError) -> LineError {
    let column = match e {
        WireError::Line { column, .. } => Some(*column),
        _ => None,
    };
    LineError {
        line,
        column,
        message: e.to_string(),
    }
}
