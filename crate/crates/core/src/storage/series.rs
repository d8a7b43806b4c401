use std::collections::BTreeMap;
use std::fmt;

use crate::wire::DataPoint;

/// Identity of one stored column: measurement, sorted tag set, field key.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SeriesKey {
    pub measurement: String,
    /// Sorted by key, no duplicates.
    pub tags: Vec<(String, String)>,
    pub field: String,
}

impl SeriesKey {
    pub fn new(measurement: &str, tags: &BTreeMap<String, String>, field: &str) -> Self {
        Self {
            measurement: measurement.to_string(),
            tags: tags.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
            field: field.to_string(),
        }
    }

    /// One key per field of the point.
    pub fn for_point(point: &DataPoint) -> impl Iterator<Item = (SeriesKey, f64)> + '_ {
        point
            .fields
            .iter()
            .map(|(f, v)| (SeriesKey::new(&point.measurement, &point.tags, f), *v))
    }

    pub fn tag(&self, key: &str) -> Option<&str> {
        self.tags
            .binary_search_by(|(k, _)| k.as_str().cmp(key))
            .ok()
            .map(|i| self.tags[i].1.as_str())
    }

    /// Canonical byte encoding; two keys are equal iff these are equal.
    pub fn canonical(&self) -> String {
        self.to_string()
    }
}

fn escape(out: &mut fmt::Formatter<'_>, s: &str, specials: &[char]) -> fmt::Result {
    for ch in s.chars() {
        if ch == '\\' || specials.contains(&ch) {
            out.write_str("\\")?;
        }
        write!(out, "{ch}")?;
    }
    Ok(())
}

/// `measurement,tag=v,... field`, escaped as in the line format.
impl fmt::Display for SeriesKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        escape(f, &self.measurement, &[',', ' '])?;
        for (k, v) in &self.tags {
            f.write_str(",")?;
            escape(f, k, &[',', '=', ' '])?;
            f.write_str("=")?;
            escape(f, v, &[',', '=', ' '])?;
        }
        f.write_str(" ")?;
        escape(f, &self.field, &[',', '=', ' '])
    }
}

/// Inverse of the `Display` form.
impl std::str::FromStr for SeriesKey {
    type Err = crate::wire::WireError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let p = crate::wire::parse_line(&format!("{s}=0"))?;
        let field = p.fields.keys().next().expect("one field");
        if p.fields.len() != 1 {
            return Err(crate::wire::WireError::InvalidPoint(format!("{s:?} names more than one field")));
        }
        Ok(SeriesKey::new(&p.measurement, &p.tags, field))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    Mean,
    Min,
    Max,
    Last,
}

impl Aggregator {
    pub fn apply(self, values: &[f64]) -> Option<f64> {
        if values.is_empty() {
            return None;
        }
        Some(match self {
            Aggregator::Mean => values.iter().sum::<f64>() / values.len() as f64,
            Aggregator::Min => values.iter().copied().fold(f64::INFINITY, f64::min),
            Aggregator::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Aggregator::Last => *values.last().expect("non-empty"),
        })
    }
}

impl std::str::FromStr for Aggregator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Self::Mean),
            "min" => Ok(Self::Min),
            "max" => Ok(Self::Max),
            "last" => Ok(Self::Last),
            other => Err(format!("unknown aggregator {other:?}")),
        }
    }
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregator::Mean => "mean",
            Aggregator::Min => "min",
            Aggregator::Max => "max",
            Aggregator::Last => "last",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Aggregation {
    pub aggregator: Aggregator,
    pub bucket_ns: i64,
}

/// Start of the epoch-aligned bucket containing `t`.
pub fn bucket_start(t: i64, bucket_ns: i64) -> i64 {
    t - t.rem_euclid(bucket_ns)
}

/// Structured time-range query over one measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesQuery {
    pub measurement: String,
    pub tags: BTreeMap<String, String>,
    /// Empty selects every field.
    pub fields: Vec<String>,
    /// Inclusive.
    pub start: i64,
    /// Exclusive.
    pub end: i64,
    pub aggregation: Option<Aggregation>,
    pub limit: Option<usize>,
}

impl SeriesQuery {
    pub fn new(measurement: &str, start: i64, end: i64) -> Self {
        Self {
            measurement: measurement.to_string(),
            tags: BTreeMap::new(),
            fields: Vec::new(),
            start,
            end,
            aggregation: None,
            limit: None,
        }
    }

    pub fn tag(mut self, k: &str, v: &str) -> Self {
        self.tags.insert(k.into(), v.into());
        self
    }

    pub fn field(mut self, f: &str) -> Self {
        self.fields.push(f.into());
        self
    }

    pub fn aggregate(mut self, aggregator: Aggregator, bucket_ns: i64) -> Self {
        self.aggregation = Some(Aggregation {
            aggregator,
            bucket_ns,
        });
        self
    }

    pub fn limit(mut self, n: usize) -> Self {
        self.limit = Some(n);
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.measurement.is_empty() {
            return Err("measurement is required".into());
        }
        if self.start >= self.end {
            return Err(format!("empty range: start {} >= end {}", self.start, self.end));
        }
        if let Some(a) = self.aggregation {
            if a.bucket_ns <= 0 {
                return Err("bucket width must be positive".into());
            }
        }
        Ok(())
    }

    pub fn matches(&self, key: &SeriesKey) -> bool {
        key.measurement == self.measurement
            && (self.fields.is_empty() || self.fields.iter().any(|f| *f == key.field))
            && self.tags.iter().all(|(k, v)| key.tag(k) == Some(v.as_str()))
    }
}

/// Time-ordered slice of one series.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFrame {
    pub key: SeriesKey,
    pub unit: Option<String>,
    /// Strictly increasing.
    pub times: Vec<i64>,
    pub values: Vec<f64>,
}

impl SeriesFrame {
    pub fn new(key: SeriesKey, unit: Option<String>) -> Self {
        Self {
            key,
            unit,
            times: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds a frame from unsorted samples; later duplicates win.
    pub fn from_points(key: SeriesKey, points: impl IntoIterator<Item = (i64, f64)>) -> Self {
        let map: BTreeMap<i64, f64> = points.into_iter().collect();
        Self {
            key,
            unit: None,
            times: map.keys().copied().collect(),
            values: map.values().copied().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.times.iter().copied().zip(self.values.iter().copied())
    }

    /// Sub-frame over `[start, end)`.
    pub fn window(&self, start: i64, end: i64) -> SeriesFrame {
        let lo = self.times.partition_point(|&t| t < start);
        let hi = self.times.partition_point(|&t| t < end);
        SeriesFrame {
            key: self.key.clone(),
            unit: self.unit.clone(),
            times: self.times[lo..hi].to_vec(),
            values: self.values[lo..hi].to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_key_is_sorted_and_escaped() {
        let p = DataPoint::new("beam power")
            .tag("RoomID", "Lab03")
            .tag("DevID", "Dev01")
            .field("P 1", 1.0);
        let (key, _) = SeriesKey::for_point(&p).next().unwrap();
        assert_eq!(key.canonical(), r"beam\ power,DevID=Dev01,RoomID=Lab03 P\ 1");
        assert_eq!(key.tag("RoomID"), Some("Lab03"));
        assert_eq!(key.tag("Nope"), None);
    }

    #[test]
    fn buckets_align_to_epoch() {
        assert_eq!(bucket_start(61, 60), 60);
        assert_eq!(bucket_start(-1, 60), -60);
        assert_eq!(bucket_start(0, 60), 0);
    }

    #[test]
    fn query_validation() {
        assert!(SeriesQuery::new("t", 5, 5).validate().is_err());
        assert!(SeriesQuery::new("t", 0, 5).aggregate(Aggregator::Mean, 0).validate().is_err());
        assert!(SeriesQuery::new("t", 0, 5).validate().is_ok());
    }

    #[test]
    fn frame_window_is_half_open() {
        let f = SeriesFrame::from_points(
            SeriesKey::new("t", &BTreeMap::new(), "x"),
            [(0, 1.0), (20, 2.0), (40, 3.0)],
        );
        assert_eq!(f.window(0, 40).values, vec![1.0, 2.0]);
    }
}
