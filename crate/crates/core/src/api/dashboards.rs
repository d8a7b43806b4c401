//! Dashboard layouts, persisted next to the alert rules.

use std::collections::BTreeMap;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::clock::secs_to_ns;
use crate::storage::{Aggregator, SeriesQuery, StorageError, Store};

pub const DASHBOARDS_META: &str = "dashboards.json";

static LOCK: Mutex<()> = Mutex::new(());

fn default_refresh() -> f64 {
    30.0
}

/// One series selection of a panel, in the same terms as `GET /query`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelQuery {
    pub measurement: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tags: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agg: Option<Aggregator>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bucket_s: Option<f64>,
}

impl PanelQuery {
    pub fn to_query(&self, start: i64, end: i64) -> Result<SeriesQuery, String> {
        let mut q = SeriesQuery::new(&self.measurement, start, end);
        q.tags = self.tags.clone();
        if let Some(f) = &self.field {
            q = q.field(f);
        }
        match (self.agg, self.bucket_s) {
            (Some(a), Some(b)) if b > 0.0 && b.is_finite() => q = q.aggregate(a, secs_to_ns(b)),
            (None, None) => {}
            _ => return Err("agg and bucket_s go together and bucket_s must be > 0".into()),
        }
        q.validate()?;
        Ok(q)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Panel {
    pub title: String,
    pub queries: Vec<PanelQuery>,
    #[serde(default = "default_refresh")]
    pub refresh_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DashboardLayout {
    #[serde(default)]
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub panels: Vec<Panel>,
}

impl DashboardLayout {
    pub fn validate(&self) -> Result<(), String> {
        if self.name.trim().is_empty() {
            return Err("name must not be empty".into());
        }
        for (i, p) in self.panels.iter().enumerate() {
            if p.queries.is_empty() {
                return Err(format!("panel {i} has no queries"));
            }
            if !(p.refresh_s > 0.0 && p.refresh_s.is_finite()) {
                return Err(format!("panel {i}: refresh_s must be > 0"));
            }
            if p.threshold.is_some_and(|t| !t.is_finite()) {
                return Err(format!("panel {i}: threshold must be finite"));
            }
            for q in &p.queries {
                q.to_query(0, 1).map_err(|e| format!("panel {i}: {e}"))?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DashboardError {
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("invalid dashboard: {0}")]
    Invalid(String),
    #[error("stored dashboards are unreadable: {0}")]
    Corrupt(String),
}

fn read(store: &Store) -> Result<Vec<DashboardLayout>, DashboardError> {
    match store.read_meta(DASHBOARDS_META)? {
        None => Ok(Vec::new()),
        Some(t) => serde_json::from_str(&t).map_err(|e| DashboardError::Corrupt(e.to_string())),
    }
}

fn write(store: &Store, all: &[DashboardLayout]) -> Result<(), DashboardError> {
    let text = serde_json::to_string_pretty(all).expect("serializable");
    Ok(store.write_meta(DASHBOARDS_META, &text)?)
}

pub fn load_dashboards(store: &Store) -> Result<Vec<DashboardLayout>, DashboardError> {
    let _g = LOCK.lock();
    read(store)
}

/// Creates or replaces a layout; an empty id gets `dash-N`. Returns the
/// stored layout and whether it is new.
pub fn put_dashboard(store: &Store, mut d: DashboardLayout) -> Result<(DashboardLayout, bool), DashboardError> {
    d.validate().map_err(DashboardError::Invalid)?;
    let _g = LOCK.lock();
    let mut all = read(store)?;
    if d.id.is_empty() {
        let n = (1..).find(|n| !all.iter().any(|x| x.id == format!("dash-{n}"))).expect("free id");
        d.id = format!("dash-{n}");
    }
    let created = match all.iter_mut().find(|x| x.id == d.id) {
        Some(x) => {
            *x = d.clone();
            false
        }
        None => {
            all.push(d.clone());
            true
        }
    };
    write(store, &all)?;
    Ok((d, created))
}

pub fn delete_dashboard(store: &Store, id: &str) -> Result<bool, DashboardError> {
    let _g = LOCK.lock();
    let mut all = read(store)?;
    let before = all.len();
    all.retain(|d| d.id != id);
    if all.len() == before {
        return Ok(false);
    }
    write(store, &all)?;
    Ok(true)
}
