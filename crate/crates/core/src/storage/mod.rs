//! Embedded time-series store.
//!
//! Writes go to an append-only log and an in-memory table; the table is
//! flushed into immutable columnar segments (delta-of-delta timestamps,
//! XOR-packed values). Readers take a cheap point-in-time view and never
//! block the writer for longer than it takes to clone a few `Arc`s.
//!
//! Directory layout:
//!
//! ```text
//! <dir>/VERSION            "labnet-store 1"
//! <dir>/MANIFEST           live segment list
//! <dir>/wal.log            write-ahead log for the in-memory table
//! <dir>/segments/*.seg     immutable segments
//! <dir>/meta/*.json        metadata (alert rules, dashboards, units, ...)
//! ```

mod codec;
mod estimate;
mod segment;
mod series;
mod snapshot;
mod wal;

pub use estimate::{estimate_storage, BYTES_PER_POINT_CEILING};
pub use segment::SEGMENT_VERSION;
pub use series::{bucket_start, Aggregation, Aggregator, SeriesFrame, SeriesKey, SeriesQuery};
pub use snapshot::{ManifestEntry, SnapshotManifest};

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};

use crate::clock::{Clock, SystemClock};
use crate::sink::{PointSink, SinkError};
use crate::wire::{DataPoint, WireError};
use segment::{encode_segment, Segment};
use wal::Wal;

pub const STORE_VERSION: &str = "labnet-store 1";

#[derive(Debug, thiserror::Error)]
pub enum StorageError {
    #[error("disk full")]
    DiskFull,
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt store: {0}")]
    Corrupt(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("store is read-only")]
    ReadOnly,
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error("invalid metadata name {0:?}")]
    MetaName(String),
}

fn io_err(e: io::Error) -> StorageError {
    if e.kind() == io::ErrorKind::StorageFull {
        StorageError::DiskFull
    } else {
        StorageError::Io(e)
    }
}

#[derive(Debug, Clone)]
pub struct StoreOptions {
    /// In-memory points that trigger a flush to a new segment.
    pub flush_threshold: usize,
    /// Segment count that triggers a full compaction after a flush.
    pub max_segments: usize,
    /// `fsync` the log on every write. Without it, acknowledged writes survive
    /// a process crash but not a power cut.
    pub fsync: bool,
    pub read_only: bool,
}

impl Default for StoreOptions {
    fn default() -> Self {
        Self {
            flush_threshold: 100_000,
            max_segments: 16,
            fsync: false,
            read_only: false,
        }
    }
}

/// Result of a write: how many points went in and which were refused.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct WriteOutcome {
    pub accepted: usize,
    pub rejected: Vec<(usize, WireError)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RetentionPolicy {
    pub max_age_ns: Option<i64>,
    /// Cap on the compacted size of retained data.
    pub max_bytes: Option<u64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DownsampleReport {
    /// Raw points removed.
    pub replaced: usize,
    /// Aggregate points written in their place.
    pub aggregates: usize,
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct StoreStats {
    pub series: usize,
    pub points: usize,
    pub segments: usize,
    pub memtable_points: usize,
    pub disk_bytes: u64,
    pub points_written: u64,
    pub queries: u64,
}

type SeriesMap = BTreeMap<i64, f64>;

#[derive(Clone, Default)]
struct State {
    segments: Vec<Arc<Segment>>,
    mem: BTreeMap<SeriesKey, Arc<SeriesMap>>,
    mem_points: usize,
    units: Arc<BTreeMap<(String, String), String>>,
}

impl State {
    fn keys(&self) -> BTreeSet<&SeriesKey> {
        let mut keys: BTreeSet<&SeriesKey> = self.mem.keys().collect();
        for s in &self.segments {
            keys.extend(s.keys());
        }
        keys
    }

    /// Merged points of one series in `[start, last]`; later segments override
    /// earlier ones and the memtable overrides all.
    fn collect(&self, key: &SeriesKey, start: i64, last: i64) -> Result<SeriesMap, StorageError> {
        let mut out = SeriesMap::new();
        for seg in &self.segments {
            let Some(block) = seg.block(key) else { continue };
            if block.max_ts < start || block.min_ts > last {
                continue;
            }
            let (ts, vals) = seg
                .read(key)
                .map_err(|e| StorageError::Corrupt(format!("segment {}: {e}", seg.id)))?
                .expect("block present");
            let lo = ts.partition_point(|&t| t < start);
            let hi = ts.partition_point(|&t| t <= last);
            out.extend(ts[lo..hi].iter().copied().zip(vals[lo..hi].iter().copied()));
        }
        if let Some(m) = self.mem.get(key) {
            out.extend(m.range(start..=last).map(|(t, v)| (*t, *v)));
        }
        Ok(out)
    }

    fn all_series(&self) -> Result<Vec<(SeriesKey, Vec<i64>, Vec<f64>)>, StorageError> {
        let mut out = Vec::new();
        for key in self.keys() {
            let m = self.collect(key, i64::MIN, i64::MAX)?;
            if !m.is_empty() {
                out.push((key.clone(), m.keys().copied().collect(), m.values().copied().collect()));
            }
        }
        Ok(out)
    }
}

struct Writer {
    wal: Option<Wal>,
    next_segment: u64,
    downsample_marks: BTreeMap<String, i64>,
}

/// Handle to an open store. `Sync`: share it behind an `Arc`.
pub struct Store {
    dir: PathBuf,
    opts: StoreOptions,
    state: RwLock<Arc<State>>,
    writer: Mutex<Writer>,
    points_written: AtomicU64,
    queries: AtomicU64,
    clock: Arc<dyn Clock>,
}

fn segment_file(id: u64) -> String {
    format!("{id:08}.seg")
}

/// Writes `bytes` to `path` via a temporary file and rename.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn valid_meta_name(name: &str) -> bool {
    !name.is_empty()
        && !name.starts_with('.')
        && name
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b'.'))
}

fn read_manifest(dir: &Path) -> Result<(u64, Vec<u64>), StorageError> {
    let text = match fs::read_to_string(dir.join("MANIFEST")) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok((1, Vec::new())),
        Err(e) => return Err(e.into()),
    };
    let mut lines = text.lines();
    if lines.next() != Some(STORE_VERSION) {
        return Err(StorageError::Corrupt("unsupported MANIFEST version".into()));
    }
    let mut next = 1;
    let mut ids = Vec::new();
    for line in lines {
        let bad = || StorageError::Corrupt(format!("bad MANIFEST line {line:?}"));
        match line.split_once(' ') {
            Some(("next_segment", n)) => next = n.parse().map_err(|_| bad())?,
            Some(("segment", f)) => ids.push(
                f.strip_suffix(".seg")
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(bad)?,
            ),
            _ => return Err(bad()),
        }
    }
    Ok((next, ids))
}

fn render_manifest(next: u64, segments: &[Arc<Segment>]) -> String {
    let mut out = format!("{STORE_VERSION}\nnext_segment {next}\n");
    for s in segments {
        out.push_str(&format!("segment {}\n", segment_file(s.id)));
    }
    out
}

impl Store {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StorageError> {
        Self::open_with(dir, StoreOptions::default())
    }

    pub fn open_with(dir: impl AsRef<Path>, opts: StoreOptions) -> Result<Self, StorageError> {
        let dir = dir.as_ref().to_path_buf();
        if !opts.read_only {
            fs::create_dir_all(dir.join("segments"))?;
            fs::create_dir_all(dir.join("meta"))?;
            let version = dir.join("VERSION");
            if !version.exists() {
                write_atomic(&version, format!("{STORE_VERSION}\n").as_bytes())?;
            }
        }
        if let Ok(v) = fs::read_to_string(dir.join("VERSION")) {
            if v.trim() != STORE_VERSION {
                return Err(StorageError::Corrupt(format!("unsupported store version {v:?}")));
            }
        }

        let (next_segment, ids) = read_manifest(&dir)?;
        let mut segments = Vec::new();
        for id in &ids {
            let bytes = fs::read(dir.join("segments").join(segment_file(*id)))?;
            let seg = Segment::from_bytes(*id, bytes)
                .map_err(|e| StorageError::Corrupt(format!("segment {id}: {e}")))?;
            segments.push(Arc::new(seg));
        }
        if !opts.read_only {
            // Segments not in the manifest are leftovers of an interrupted flush
            // or rewrite.
            if let Ok(entries) = fs::read_dir(dir.join("segments")) {
                for entry in entries.flatten() {
                    let name = entry.file_name().to_string_lossy().to_string();
                    let live = name
                        .strip_suffix(".seg")
                        .and_then(|s| s.parse::<u64>().ok())
                        .is_some_and(|id| ids.contains(&id));
                    if !live {
                        let _ = fs::remove_file(entry.path());
                    }
                }
            }
        }

        let wal_path = dir.join("wal.log");
        let (wal, replayed) = if opts.read_only {
            (None, wal::replay(&wal_path)?.0)
        } else {
            let (w, p) = Wal::open(&wal_path, opts.fsync)?;
            (Some(w), p)
        };

        let mut state = State {
            segments,
            ..State::default()
        };
        for p in &replayed {
            apply_point(&mut state, p);
        }

        let store = Self {
            opts,
            state: RwLock::new(Arc::new(state)),
            writer: Mutex::new(Writer {
                wal,
                next_segment,
                downsample_marks: BTreeMap::new(),
            }),
            points_written: AtomicU64::new(0),
            queries: AtomicU64::new(0),
            clock: Arc::new(SystemClock),
            dir,
        };
        if let Some(text) = store.read_meta("units.json")? {
            let units: Vec<(String, String, String)> = serde_json::from_str(&text)
                .map_err(|e| StorageError::Corrupt(format!("units.json: {e}")))?;
            let map = units.into_iter().map(|(m, f, u)| ((m, f), u)).collect();
            Arc::make_mut(&mut *store.state.write()).units = Arc::new(map);
        }
        if let Some(text) = store.read_meta("downsample.json")? {
            store.writer.lock().downsample_marks = serde_json::from_str(&text)
                .map_err(|e| StorageError::Corrupt(format!("downsample.json: {e}")))?;
        }
        Ok(store)
    }

    /// Clock used to stamp points that arrive without a timestamp.
    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn snapshot_state(&self) -> Arc<State> {
        self.state.read().clone()
    }

    /// Stamps unstamped points with `now`, validates each point and writes
    /// the valid ones. Invalid points are reported by index; the rest are
    /// still written. Durable on return.
    pub fn write(&self, points: Vec<DataPoint>, now: i64) -> Result<WriteOutcome, StorageError> {
        let mut outcome = WriteOutcome::default();
        let mut valid = Vec::with_capacity(points.len());
        for (i, mut p) in points.into_iter().enumerate() {
            p.stamp(now);
            match p.validate() {
                Ok(()) => valid.push(p),
                Err(e) => outcome.rejected.push((i, e)),
            }
        }
        outcome.accepted = valid.len();
        self.write_valid(&valid)?;
        Ok(outcome)
    }

    fn write_valid(&self, points: &[DataPoint]) -> Result<(), StorageError> {
        if points.is_empty() {
            return Ok(());
        }
        let mut w = self.writer.lock();
        let wal = w.wal.as_mut().ok_or(StorageError::ReadOnly)?;
        wal.append(points).map_err(io_err)?;
        let flush = {
            let mut guard = self.state.write();
            let st = Arc::make_mut(&mut guard);
            for p in points {
                apply_point(st, p);
            }
            st.mem_points >= self.opts.flush_threshold
        };
        self.points_written
            .fetch_add(points.len() as u64, Ordering::Relaxed);
        if flush {
            self.flush_locked(&mut w)?;
        }
        Ok(())
    }

    /// Writes an all-or-nothing batch of stamped points.
    pub fn write_batch(&self, points: &[DataPoint]) -> Result<usize, StorageError> {
        let now = self.clock.now_ns();
        let mut owned = Vec::with_capacity(points.len());
        for (i, p) in points.iter().enumerate() {
            let mut p = p.clone();
            p.stamp(now);
            p.validate()
                .map_err(|e| StorageError::InvalidQuery(format!("point {i}: {e}")))?;
            owned.push(p);
        }
        self.write_valid(&owned)?;
        Ok(owned.len())
    }

    /// Moves the in-memory table into a new segment and empties the log.
    pub fn flush(&self) -> Result<(), StorageError> {
        let mut w = self.writer.lock();
        if w.wal.is_none() {
            return Err(StorageError::ReadOnly);
        }
        self.flush_locked(&mut w)
    }

    fn flush_locked(&self, w: &mut Writer) -> Result<(), StorageError> {
        self.flush_memtable(w)?;
        if self.snapshot_state().segments.len() > self.opts.max_segments {
            self.rewrite_locked(w, |_, t, v| (t, v))?;
        }
        Ok(())
    }

    fn flush_memtable(&self, w: &mut Writer) -> Result<(), StorageError> {
        let snap = self.snapshot_state();
        if snap.mem.is_empty() {
            return Ok(());
        }
        let cols: Vec<(SeriesKey, Vec<i64>, Vec<f64>)> = snap
            .mem
            .iter()
            .map(|(k, m)| (k.clone(), m.keys().copied().collect(), m.values().copied().collect()))
            .collect();
        let seg = self.write_segment(w, &cols)?;
        let mut segments = snap.segments.clone();
        segments.push(Arc::new(seg));
        write_atomic(
            &self.dir.join("MANIFEST"),
            render_manifest(w.next_segment, &segments).as_bytes(),
        )
        .map_err(io_err)?;
        {
            let mut guard = self.state.write();
            let st = Arc::make_mut(&mut guard);
            st.segments = segments;
            st.mem.clear();
            st.mem_points = 0;
        }
        if let Some(wal) = w.wal.as_mut() {
            wal.reset().map_err(io_err)?;
        }
        Ok(())
    }

    fn write_segment(
        &self,
        w: &mut Writer,
        cols: &[(SeriesKey, Vec<i64>, Vec<f64>)],
    ) -> Result<Segment, StorageError> {
        let id = w.next_segment;
        w.next_segment += 1;
        let bytes = encode_segment(cols.iter().map(|(k, t, v)| (k, &t[..], &v[..])));
        write_atomic(&self.dir.join("segments").join(segment_file(id)), &bytes).map_err(io_err)?;
        Segment::from_bytes(id, bytes).map_err(|e| StorageError::Corrupt(e.to_string()))
    }

    /// Flushes, then replaces every segment by one new segment holding
    /// `transform(key, times, values)` for each series.
    fn rewrite_locked(
        &self,
        w: &mut Writer,
        mut transform: impl FnMut(&SeriesKey, Vec<i64>, Vec<f64>) -> (Vec<i64>, Vec<f64>),
    ) -> Result<(), StorageError> {
        self.flush_memtable(w)?;
        let snap = self.snapshot_state();
        let cols: Vec<_> = snap
            .all_series()?
            .into_iter()
            .map(|(k, t, v)| {
                let (t, v) = transform(&k, t, v);
                (k, t, v)
            })
            .filter(|(_, t, _)| !t.is_empty())
            .collect();
        let seg = Arc::new(self.write_segment(w, &cols)?);
        let segments = vec![seg];
        write_atomic(
            &self.dir.join("MANIFEST"),
            render_manifest(w.next_segment, &segments).as_bytes(),
        )
        .map_err(io_err)?;
        Arc::make_mut(&mut self.state.write()).segments = segments;
        for old in &snap.segments {
            let _ = fs::remove_file(self.dir.join("segments").join(segment_file(old.id)));
        }
        Ok(())
    }

    /// Merges all data into a single segment.
    pub fn compact(&self) -> Result<(), StorageError> {
        let mut w = self.writer.lock();
        if w.wal.is_none() {
            return Err(StorageError::ReadOnly);
        }
        self.rewrite_locked(&mut w, |_, t, v| (t, v))
    }

    pub fn query(&self, q: &SeriesQuery) -> Result<Vec<SeriesFrame>, StorageError> {
        q.validate().map_err(StorageError::InvalidQuery)?;
        self.queries.fetch_add(1, Ordering::Relaxed);
        let snap = self.snapshot_state();
        let mut frames = Vec::new();
        for key in snap.keys() {
            if !q.matches(key) {
                continue;
            }
            let points = snap.collect(key, q.start, q.end - 1)?;
            if points.is_empty() {
                continue;
            }
            let unit = snap
                .units
                .get(&(key.measurement.clone(), key.field.clone()))
                .cloned();
            let mut frame = SeriesFrame::new(key.clone(), unit);
            match q.aggregation {
                None => {
                    frame.times = points.keys().copied().collect();
                    frame.values = points.values().copied().collect();
                }
                Some(agg) => {
                    let (t, v) = aggregate(points.iter().map(|(t, v)| (*t, *v)), agg);
                    frame.times = t;
                    frame.values = v;
                }
            }
            if let Some(n) = q.limit {
                frame.times.truncate(n);
                frame.values.truncate(n);
            }
            frames.push(frame);
        }
        Ok(frames)
    }

    /// Every stored series key.
    pub fn series_keys(&self) -> Vec<SeriesKey> {
        self.snapshot_state().keys().into_iter().cloned().collect()
    }

    /// Replaces raw points older than `older_than` (rounded down to a bucket
    /// boundary) with one aggregate per epoch-aligned bucket. Idempotent: a
    /// span that has been downsampled once is never aggregated again.
    pub fn downsample(
        &self,
        measurement: &str,
        older_than: i64,
        bucket_ns: i64,
        aggregator: Aggregator,
    ) -> Result<DownsampleReport, StorageError> {
        if bucket_ns <= 0 {
            return Err(StorageError::InvalidQuery("bucket width must be positive".into()));
        }
        let mut w = self.writer.lock();
        if w.wal.is_none() {
            return Err(StorageError::ReadOnly);
        }
        let cutoff = bucket_start(older_than, bucket_ns);
        let mark = w.downsample_marks.get(measurement).copied().unwrap_or(i64::MIN);
        if cutoff <= mark {
            return Ok(DownsampleReport::default());
        }
        let snap = self.snapshot_state();
        let any = snap.keys().into_iter().any(|k| {
            k.measurement == measurement
                && snap.collect(k, mark, cutoff - 1).is_ok_and(|m| !m.is_empty())
        });
        let mut report = DownsampleReport::default();
        if any {
            self.rewrite_locked(&mut w, |key, t, v| {
                if key.measurement != measurement {
                    return (t, v);
                }
                let lo = t.partition_point(|&x| x < mark);
                let hi = t.partition_point(|&x| x < cutoff);
                if lo == hi {
                    return (t, v);
                }
                let (at, av) = aggregate(
                    t[lo..hi].iter().copied().zip(v[lo..hi].iter().copied()),
                    Aggregation {
                        aggregator,
                        bucket_ns,
                    },
                );
                report.replaced += hi - lo;
                report.aggregates += at.len();
                let mut nt = t[..lo].to_vec();
                let mut nv = v[..lo].to_vec();
                nt.extend(at);
                nv.extend(av);
                nt.extend_from_slice(&t[hi..]);
                nv.extend_from_slice(&v[hi..]);
                (nt, nv)
            })?;
        }
        w.downsample_marks.insert(measurement.to_string(), cutoff);
        let text = serde_json::to_string(&w.downsample_marks).expect("serializable");
        self.write_meta("downsample.json", &text)?;
        Ok(report)
    }

    /// Deletes the oldest data until the policy holds. Deletion is by a single
    /// global time cutoff, so every series loses a time prefix.
    pub fn apply_retention(
        &self,
        policy: &RetentionPolicy,
        now: i64,
    ) -> Result<usize, StorageError> {
        if policy.max_age_ns.is_none() && policy.max_bytes.is_none() {
            return Err(StorageError::InvalidQuery("empty retention policy".into()));
        }
        let mut w = self.writer.lock();
        if w.wal.is_none() {
            return Err(StorageError::ReadOnly);
        }
        let snap = self.snapshot_state();
        let all = snap.all_series()?;
        let mut cutoff = policy
            .max_age_ns
            .map_or(i64::MIN, |age| now.saturating_sub(age));

        if let Some(cap) = policy.max_bytes {
            let size_from = |c: i64| -> u64 {
                let cols: Vec<_> = all
                    .iter()
                    .map(|(k, t, v)| {
                        let lo = t.partition_point(|&x| x < c);
                        (k, &t[lo..], &v[lo..])
                    })
                    .collect();
                encode_segment(cols).len() as u64
            };
            if size_from(cutoff) > cap {
                let mut stamps: Vec<i64> = all
                    .iter()
                    .flat_map(|(_, t, _)| t.iter().copied())
                    .filter(|&t| t >= cutoff)
                    .collect();
                stamps.sort_unstable();
                stamps.dedup();
                // Smallest cutoff (one past a stored stamp) whose survivors fit.
                let idx = stamps.partition_point(|&s| size_from(s.saturating_add(1)) > cap);
                cutoff = stamps
                    .get(idx)
                    .map_or(i64::MAX, |s| s.saturating_add(1));
            }
        }

        let deleted: usize = all
            .iter()
            .map(|(_, t, _)| t.partition_point(|&x| x < cutoff))
            .sum();
        if deleted > 0 {
            self.rewrite_locked(&mut w, |_, t, v| {
                let lo = t.partition_point(|&x| x < cutoff);
                (t[lo..].to_vec(), v[lo..].to_vec())
            })?;
        }
        Ok(deleted)
    }

    /// Records the unit label reported for `measurement`/`field`.
    pub fn set_unit(&self, measurement: &str, field: &str, unit: &str) -> Result<(), StorageError> {
        let _w = self.writer.lock();
        let units = {
            let mut guard = self.state.write();
            let st = Arc::make_mut(&mut guard);
            Arc::make_mut(&mut st.units).insert((measurement.into(), field.into()), unit.into());
            st.units.clone()
        };
        let list: Vec<_> = units.iter().map(|((m, f), u)| (m, f, u)).collect();
        self.write_meta("units.json", &serde_json::to_string(&list).expect("serializable"))
    }

    pub fn read_meta(&self, name: &str) -> Result<Option<String>, StorageError> {
        if !valid_meta_name(name) {
            return Err(StorageError::MetaName(name.into()));
        }
        match fs::read_to_string(self.dir.join("meta").join(name)) {
            Ok(t) => Ok(Some(t)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn write_meta(&self, name: &str, contents: &str) -> Result<(), StorageError> {
        if self.opts.read_only {
            return Err(StorageError::ReadOnly);
        }
        if !valid_meta_name(name) {
            return Err(StorageError::MetaName(name.into()));
        }
        write_atomic(&self.dir.join("meta").join(name), contents.as_bytes()).map_err(io_err)
    }

    /// Total bytes of every file under the store directory.
    pub fn disk_bytes(&self) -> u64 {
        fn walk(p: &Path) -> u64 {
            let Ok(entries) = fs::read_dir(p) else { return 0 };
            entries
                .flatten()
                .map(|e| match e.metadata() {
                    Ok(m) if m.is_dir() => walk(&e.path()),
                    Ok(m) => m.len(),
                    Err(_) => 0,
                })
                .sum()
        }
        walk(&self.dir)
    }

    /// Distinct stored points. Exact; merges overlapping segments.
    pub fn point_count(&self) -> Result<usize, StorageError> {
        let snap = self.snapshot_state();
        Ok(snap.all_series()?.iter().map(|(_, t, _)| t.len()).sum())
    }

    pub fn stats(&self) -> StoreStats {
        let snap = self.snapshot_state();
        StoreStats {
            series: snap.keys().len(),
            points: snap.segments.iter().map(|s| s.point_count()).sum::<usize>() + snap.mem_points,
            segments: snap.segments.len(),
            memtable_points: snap.mem_points,
            disk_bytes: self.disk_bytes(),
            points_written: self.points_written.load(Ordering::Relaxed),
            queries: self.queries.load(Ordering::Relaxed),
        }
    }

    /// Writes a consistent point-in-time copy of the store to `dest`.
    pub fn snapshot(&self, dest: impl AsRef<Path>) -> Result<SnapshotManifest, StorageError> {
        let snap = self.snapshot_state();
        snapshot::write(self, &snap.all_series()?, dest.as_ref())
    }

    /// Verifies a snapshot against its manifest, copies it to `dest` and opens it.
    pub fn restore(src: impl AsRef<Path>, dest: impl AsRef<Path>) -> Result<Store, StorageError> {
        snapshot::restore(src.as_ref(), dest.as_ref())?;
        Store::open(dest)
    }
}

fn apply_point(st: &mut State, p: &DataPoint) {
    let ts = p.timestamp.expect("stored points are stamped");
    for (key, v) in SeriesKey::for_point(p) {
        let series = st.mem.entry(key).or_default();
        if Arc::make_mut(series).insert(ts, v).is_none() {
            st.mem_points += 1;
        }
    }
}

/// Buckets sorted samples into epoch-aligned buckets, omitting empty ones.
fn aggregate(points: impl Iterator<Item = (i64, f64)>, agg: Aggregation) -> (Vec<i64>, Vec<f64>) {
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut current: Option<i64> = None;
    let mut bucket = Vec::new();
    for (t, v) in points {
        let b = bucket_start(t, agg.bucket_ns);
        if current != Some(b) {
            if let Some(cb) = current {
                times.push(cb);
                values.push(agg.aggregator.apply(&bucket).expect("non-empty bucket"));
            }
            bucket.clear();
            current = Some(b);
        }
        bucket.push(v);
    }
    if let Some(cb) = current {
        times.push(cb);
        values.push(agg.aggregator.apply(&bucket).expect("non-empty bucket"));
    }
    (times, values)
}

impl PointSink for Store {
    fn write_points(&self, points: &[DataPoint]) -> Result<usize, SinkError> {
        self.write_batch(points).map_err(|e| match e {
            StorageError::InvalidQuery(m) => SinkError::Rejected(m),
            other => SinkError::Unavailable(other.to_string()),
        })
    }
}
