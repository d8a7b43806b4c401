//! Text formats spoken on the wire.
//!
//! Two grammars live here:
//!
//! * the node payload, the location-stamped datagram a measurement node sends
//!   back to the collector:
//!   `room;device;seq|meas:key=val,key=val|meas:key=val`
//! * the line format the store ingests and exports, one point per line:
//!   `meas,tag=v,tag=v field=v,field=v 1600000000000000000`
//!
//! Both decoders are total over arbitrary input: they return a value or a
//! structured error and never panic.

use std::collections::BTreeMap;
use std::fmt::Write as _;

/// Upper bound for one encoded node payload; keeps a response inside a single
/// unfragmented datagram.
pub const MAX_PAYLOAD_BYTES: usize = 1400;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WireError {
    #[error("payload of {size} bytes exceeds the {MAX_PAYLOAD_BYTES} byte datagram limit")]
    OversizePayload { size: usize },
    #[error("invalid {what} {value:?}")]
    InvalidIdentifier { what: &'static str, value: String },
    #[error("invalid payload: {0}")]
    InvalidPayload(String),
    #[error("parse error at offset {offset}: {reason}")]
    Parse { offset: usize, reason: String },
    #[error("parse error at column {column}: {reason}")]
    Line { column: usize, reason: String },
    #[error("point has no timestamp")]
    MissingTimestamp,
    #[error("invalid point: {0}")]
    InvalidPoint(String),
}

/// One timestamped, tagged measurement record.
///
/// Tags and fields are kept in sorted maps so the canonical encoding never
/// depends on construction order.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPoint {
    pub measurement: String,
    pub tags: BTreeMap<String, String>,
    pub fields: BTreeMap<String, f64>,
    /// Nanoseconds since the Unix epoch. Absent on ingress until stamped.
    pub timestamp: Option<i64>,
}

impl DataPoint {
    pub fn new(measurement: impl Into<String>) -> Self {
        Self {
            measurement: measurement.into(),
            tags: BTreeMap::new(),
            fields: BTreeMap::new(),
            timestamp: None,
        }
    }

    pub fn tag(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.tags.insert(key.into(), value.into());
        self
    }

    pub fn field(mut self, key: impl Into<String>, value: f64) -> Self {
        self.fields.insert(key.into(), value);
        self
    }

    pub fn at(mut self, timestamp: i64) -> Self {
        self.timestamp = Some(timestamp);
        self
    }

    /// Assigns `now` if the point has no timestamp yet. An existing stamp is
    /// never replaced.
    pub fn stamp(&mut self, now: i64) -> i64 {
        *self.timestamp.get_or_insert(now)
    }

    pub fn validate(&self) -> Result<(), WireError> {
        check_name("measurement", &self.measurement)?;
        for (k, v) in &self.tags {
            check_name("tag key", k)?;
            check_name("tag value", v)?;
        }
        if self.fields.is_empty() {
            return Err(WireError::InvalidPoint("no fields".into()));
        }
        for (k, v) in &self.fields {
            check_name("field key", k)?;
            if !v.is_finite() {
                return Err(WireError::InvalidPoint(format!("field {k} is not finite")));
            }
        }
        Ok(())
    }
}

fn check_name(what: &'static str, s: &str) -> Result<(), WireError> {
    if s.is_empty() || s.chars().any(char::is_control) {
        return Err(WireError::InvalidIdentifier {
            what,
            value: s.to_string(),
        });
    }
    Ok(())
}

/// One sensor reading inside a node payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Reading {
    pub measurement: String,
    pub field: String,
    pub value: f64,
}

impl Reading {
    pub fn new(measurement: impl Into<String>, field: impl Into<String>, value: f64) -> Self {
        Self {
            measurement: measurement.into(),
            field: field.into(),
            value,
        }
    }
}

/// The location-stamped string a pull node returns for one poll.
#[derive(Debug, Clone, PartialEq)]
pub struct NodePayload {
    pub room_id: String,
    pub device_id: String,
    pub sequence: u32,
    pub readings: Vec<Reading>,
}

impl NodePayload {
    pub fn validate(&self) -> Result<(), WireError> {
        if !is_location_id(&self.room_id) {
            return Err(WireError::InvalidIdentifier {
                what: "room id",
                value: self.room_id.clone(),
            });
        }
        if !is_location_id(&self.device_id) {
            return Err(WireError::InvalidIdentifier {
                what: "device id",
                value: self.device_id.clone(),
            });
        }
        let mut seen = std::collections::BTreeSet::new();
        for r in &self.readings {
            if !is_payload_name(&r.measurement) {
                return Err(WireError::InvalidIdentifier {
                    what: "measurement",
                    value: r.measurement.clone(),
                });
            }
            if !is_payload_name(&r.field) {
                return Err(WireError::InvalidIdentifier {
                    what: "field key",
                    value: r.field.clone(),
                });
            }
            if !r.value.is_finite() {
                return Err(WireError::InvalidPayload(format!(
                    "{}:{} is not finite",
                    r.measurement, r.field
                )));
            }
            if !seen.insert((r.measurement.as_str(), r.field.as_str())) {
                return Err(WireError::InvalidPayload(format!(
                    "duplicate reading {}:{}",
                    r.measurement, r.field
                )));
            }
        }
        Ok(())
    }
}

/// `[A-Za-z0-9_-]+`
pub fn is_location_id(s: &str) -> bool {
    !s.is_empty()
        && s
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

fn is_payload_name_byte(b: u8) -> bool {
    b.is_ascii_graphic() && !matches!(b, b';' | b'|' | b':' | b',' | b'=' | b'\\')
}

fn is_payload_name(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(is_payload_name_byte)
}

/// Shortest decimal rendering that parses back to the same `f64`.
///
/// Plain notation inside `[1e-5, 1e16)`, exponent notation outside it so very
/// large or small readings (vacuum pressures in mbar) stay compact.
pub fn format_float(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-5..1e16).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn parse_float(s: &str) -> Option<f64> {
    // Restrict to a plain decimal alphabet so "inf", "NaN" and friends are out.
    if s.is_empty()
        || !s
            .bytes()
            .all(|b| b.is_ascii_digit() || matches!(b, b'.' | b'-' | b'+' | b'e' | b'E'))
    {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

pub fn encode_node_payload(payload: &NodePayload) -> Result<Vec<u8>, WireError> {
    payload.validate()?;
    let mut out = format!(
        "{};{};{}|",
        payload.room_id, payload.device_id, payload.sequence
    );
    let mut current: Option<&str> = None;
    for r in &payload.readings {
        if current == Some(r.measurement.as_str()) {
            out.push(',');
        } else {
            if current.is_some() {
                out.push('|');
            }
            out.push_str(&r.measurement);
            out.push(':');
            current = Some(&r.measurement);
        }
        let _ = write!(out, "{}={}", r.field, format_float(r.value));
    }
    if out.len() > MAX_PAYLOAD_BYTES {
        return Err(WireError::OversizePayload { size: out.len() });
    }
    Ok(out.into_bytes())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, reason: impl Into<String>) -> WireError {
        WireError::Parse {
            offset: self.pos,
            reason: reason.into(),
        }
    }

    /// Consumes bytes while `accept` holds and returns them as text.
    fn take_while(&mut self, accept: impl Fn(u8) -> bool) -> &'a str {
        let start = self.pos;
        while self.pos < self.buf.len() && accept(self.buf[self.pos]) {
            self.pos += 1;
        }
        // Non-UTF-8 input degrades to an empty token, which callers reject.
        std::str::from_utf8(&self.buf[start..self.pos]).unwrap_or_default()
    }

    fn expect(&mut self, b: u8, what: &str) -> Result<(), WireError> {
        match self.buf.get(self.pos) {
            Some(&c) if c == b => {
                self.pos += 1;
                Ok(())
            }
            Some(&c) => Err(self.err(format!("expected {what}, found byte 0x{c:02x}"))),
            None => Err(self.err(format!("expected {what}, found end of input"))),
        }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.buf.len()
    }
}

pub fn decode_node_payload(raw: &[u8]) -> Result<NodePayload, WireError> {
    if raw.len() > MAX_PAYLOAD_BYTES {
        return Err(WireError::OversizePayload { size: raw.len() });
    }
    let mut c = Cursor { buf: raw, pos: 0 };
    let id_byte = |b: u8| b.is_ascii_alphanumeric() || b == b'_' || b == b'-';

    let room = c.take_while(id_byte);
    if room.is_empty() {
        return Err(c.err("empty room id"));
    }
    c.expect(b';', "';' after room id")?;
    let device = c.take_while(id_byte);
    if device.is_empty() {
        return Err(c.err("empty device id"));
    }
    c.expect(b';', "';' after device id")?;
    let seq_start = c.pos;
    let seq_text = c.take_while(|b| b.is_ascii_digit());
    let sequence: u32 = seq_text.parse().map_err(|_| WireError::Parse {
        offset: seq_start,
        reason: "sequence is not a 32-bit unsigned integer".into(),
    })?;
    c.expect(b'|', "'|' after sequence")?;

    let mut readings = Vec::new();
    if !c.at_end() {
        loop {
            let measurement = c.take_while(is_payload_name_byte);
            if measurement.is_empty() {
                return Err(c.err("empty measurement name"));
            }
            c.expect(b':', "':' after measurement")?;
            loop {
                let field = c.take_while(is_payload_name_byte);
                if field.is_empty() {
                    return Err(c.err("empty field key"));
                }
                c.expect(b'=', "'=' after field key")?;
                let value_start = c.pos;
                let text = c.take_while(|b| !matches!(b, b',' | b'|'));
                let value = parse_float(text).ok_or_else(|| WireError::Parse {
                    offset: value_start,
                    reason: format!("invalid float {text:?}"),
                })?;
                readings.push(Reading::new(measurement, field, value));
                if c.at_end() || c.buf[c.pos] == b'|' {
                    break;
                }
                c.expect(b',', "','")?;
            }
            if c.at_end() {
                break;
            }
            c.expect(b'|', "'|'")?;
        }
    }

    let payload = NodePayload {
        room_id: room.to_string(),
        device_id: device.to_string(),
        sequence,
        readings,
    };
    payload.validate().map_err(|e| WireError::Parse {
        offset: raw.len(),
        reason: e.to_string(),
    })?;
    Ok(payload)
}

/// Tag key for the room half of the location stamp.
pub const ROOM_TAG: &str = "RoomID";
/// Tag key for the device half of the location stamp.
pub const DEVICE_TAG: &str = "DevID";

/// Expands a payload into one point per distinct measurement, tagged with the
/// location stamp and stamped with the arrival time.
pub fn payload_to_points(payload: &NodePayload, received_at: i64) -> Vec<DataPoint> {
    let mut by_measurement: BTreeMap<&str, DataPoint> = BTreeMap::new();
    for r in &payload.readings {
        by_measurement
            .entry(&r.measurement)
            .or_insert_with(|| {
                DataPoint::new(r.measurement.clone())
                    .tag(ROOM_TAG, payload.room_id.clone())
                    .tag(DEVICE_TAG, payload.device_id.clone())
                    .at(received_at)
            })
            .fields
            .insert(r.field.clone(), r.value);
    }
    by_measurement.into_values().collect()
}

fn push_escaped(out: &mut String, s: &str, specials: &[char]) {
    for ch in s.chars() {
        if ch == '\\' || specials.contains(&ch) {
            out.push('\\');
        }
        out.push(ch);
    }
}

const MEASUREMENT_SPECIALS: &[char] = &[',', ' '];
const KEY_SPECIALS: &[char] = &[',', '=', ' '];

pub fn encode_line(point: &DataPoint) -> Result<String, WireError> {
    let ts = point.timestamp.ok_or(WireError::MissingTimestamp)?;
    point.validate()?;
    let mut out = String::with_capacity(64);
    push_escaped(&mut out, &point.measurement, MEASUREMENT_SPECIALS);
    for (k, v) in &point.tags {
        out.push(',');
        push_escaped(&mut out, k, KEY_SPECIALS);
        out.push('=');
        push_escaped(&mut out, v, KEY_SPECIALS);
    }
    out.push(' ');
    for (i, (k, v)) in point.fields.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        push_escaped(&mut out, k, KEY_SPECIALS);
        out.push('=');
        out.push_str(&format_float(*v));
    }
    let _ = write!(out, " {ts}");
    Ok(out)
}

struct LineScanner<'a> {
    chars: std::iter::Peekable<std::str::CharIndices<'a>>,
    len: usize,
}

impl<'a> LineScanner<'a> {
    fn column(&mut self) -> usize {
        self.chars.peek().map_or(self.len, |(i, _)| *i) + 1
    }

    fn err(&mut self, reason: impl Into<String>) -> WireError {
        WireError::Line {
            column: self.column(),
            reason: reason.into(),
        }
    }

    /// Reads an escaped token up to (not including) the first unescaped
    /// delimiter.
    fn token(&mut self, delims: &[char]) -> Result<String, WireError> {
        let mut out = String::new();
        while let Some(&(_, ch)) = self.chars.peek() {
            if delims.contains(&ch) {
                break;
            }
            self.chars.next();
            if ch == '\\' {
                match self.chars.next() {
                    Some((_, esc)) => out.push(esc),
                    None => return Err(self.err("dangling escape")),
                }
            } else {
                out.push(ch);
            }
        }
        Ok(out)
    }

    fn peek(&mut self) -> Option<char> {
        self.chars.peek().map(|(_, c)| *c)
    }
}

pub fn parse_line(line: &str) -> Result<DataPoint, WireError> {
    if let Some(pos) = line.find(['\n', '\r']) {
        return Err(WireError::Line {
            column: pos + 1,
            reason: "embedded line break".into(),
        });
    }
    let mut s = LineScanner {
        chars: line.char_indices().peekable(),
        len: line.len(),
    };

    let measurement = s.token(&[',', ' '])?;
    if measurement.is_empty() {
        return Err(s.err("empty measurement"));
    }
    let mut point = DataPoint::new(measurement);

    if s.peek() == Some(',') {
        loop {
            s.chars.next();
            let key = s.token(&['=', ',', ' '])?;
            if key.is_empty() {
                return Err(s.err("empty tag key"));
            }
            match s.peek() {
                Some('=') => {
                    s.chars.next();
                }
                None => return Err(s.err("no fields")),
                Some(_) => return Err(s.err(format!("tag {key:?} has no value"))),
            }
            let value = s.token(&[',', ' ', '='])?;
            if value.is_empty() {
                return Err(s.err("empty tag value"));
            }
            if s.peek() == Some('=') {
                return Err(s.err("unescaped '=' in tag value"));
            }
            if point.tags.insert(key.clone(), value).is_some() {
                return Err(s.err(format!("duplicate tag key {key:?}")));
            }
            if s.peek() != Some(',') {
                break;
            }
        }
    }

    match s.peek() {
        Some(' ') => {
            s.chars.next();
        }
        None => return Err(s.err("no fields")),
        Some(_) => return Err(s.err("expected ' ' before fields")),
    }

    loop {
        let key = s.token(&['=', ',', ' '])?;
        if key.is_empty() {
            return Err(s.err("empty field key"));
        }
        if s.peek() != Some('=') {
            return Err(s.err(format!("field {key:?} has no value")));
        }
        s.chars.next();
        let col = s.column();
        let raw = s.token(&[',', ' '])?;
        let value = parse_float(&raw).ok_or_else(|| WireError::Line {
            column: col,
            reason: format!("invalid float {raw:?}"),
        })?;
        if point.fields.insert(key.clone(), value).is_some() {
            return Err(s.err(format!("duplicate field key {key:?}")));
        }
        if s.peek() != Some(',') {
            break;
        }
        s.chars.next();
    }

    if s.peek() == Some(' ') {
        s.chars.next();
        let col = s.column();
        let rest: String = s.chars.by_ref().map(|(_, c)| c).collect();
        let ts = rest
            .parse::<i64>()
            .ok()
            .filter(|_| !rest.starts_with('+'))
            .ok_or_else(|| WireError::Line {
                column: col,
                reason: format!("invalid timestamp {rest:?}"),
            })?;
        point.timestamp = Some(ts);
    }

    point.validate().map_err(|e| WireError::Line {
        column: line.len() + 1,
        reason: e.to_string(),
    })?;
    Ok(point)
}
