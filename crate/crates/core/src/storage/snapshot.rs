//! Point-in-time backups.
//!
//! A snapshot directory is a complete store (one compacted segment plus
//! metadata) with an extra `SNAPSHOT` file listing every file's SHA-256:
//!
//! ```text
//! labnet-snapshot 1
//! points 5400
//! <sha256-hex>  <points or ->  <relative path>
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::segment::encode_segment;
use super::series::SeriesKey;
use super::{write_atomic, Store, StorageError, STORE_VERSION};

const HEADER: &str = "labnet-snapshot 1";
pub const MANIFEST_FILE: &str = "SNAPSHOT";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    /// Points held by the file, for segment files.
    pub points: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SnapshotManifest {
    pub points: usize,
    pub files: Vec<ManifestEntry>,
}

impl SnapshotManifest {
    pub fn render(&self) -> String {
        let mut out = format!("{HEADER}\npoints {}\n", self.points);
        for f in &self.files {
            let pts = f.points.map_or("-".to_string(), |p| p.to_string());
            out.push_str(&format!("{}  {}  {}\n", f.sha256, pts, f.path));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, StorageError> {
        let bad = |m: &str| StorageError::Snapshot(format!("bad manifest: {m}"));
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(bad("missing header"));
        }
        let points = lines
            .next()
            .and_then(|l| l.strip_prefix("points "))
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| bad("missing point count"))?;
        let mut files = Vec::new();
        for line in lines {
            let mut parts = line.splitn(3, "  ");
            let (Some(sha), Some(pts), Some(path)) = (parts.next(), parts.next(), parts.next())
            else {
                return Err(bad(line));
            };
            if sha.len() != 64 || !sha.bytes().all(|b| b.is_ascii_hexdigit()) {
                return Err(bad(line));
            }
            if path.split('/').any(|c| c.is_empty() || c == "." || c == "..") {
                return Err(bad(line));
            }
            let points = match pts {
                "-" => None,
                n => Some(n.parse().map_err(|_| bad(line))?),
            };
            files.push(ManifestEntry {
                path: path.to_string(),
                sha256: sha.to_string(),
                points,
            });
        }
        Ok(Self { points, files })
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn ensure_empty_dir(dir: &Path) -> Result<(), StorageError> {
    if dir.exists() && fs::read_dir(dir)?.next().is_some() {
        return Err(StorageError::Snapshot(format!(
            "destination {} is not empty",
            dir.display()
        )));
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

pub(super) fn write(
    store: &Store,
    series: &[(SeriesKey, Vec<i64>, Vec<f64>)],
    dest: &Path,
) -> Result<SnapshotManifest, StorageError> {
    ensure_empty_dir(dest)?;
    fs::create_dir_all(dest.join("segments"))?;
    fs::create_dir_all(dest.join("meta"))?;

    let mut manifest = SnapshotManifest::default();
    let mut put = |rel: &str, bytes: &[u8], points: Option<usize>| -> Result<(), StorageError> {
        write_atomic(&dest.join(rel), bytes)?;
        manifest.files.push(ManifestEntry {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
            points,
        });
        Ok(())
    };

    let points: usize = series.iter().map(|(_, t, _)| t.len()).sum();
    let mut store_manifest = format!("{STORE_VERSION}\nnext_segment 2\n");
    if points > 0 {
        let seg = encode_segment(series.iter().map(|(k, t, v)| (k, &t[..], &v[..])));
        put("segments/00000001.seg", &seg, Some(points))?;
        store_manifest.push_str("segment 00000001.seg\n");
    }
    put("VERSION", format!("{STORE_VERSION}\n").as_bytes(), None)?;
    put("MANIFEST", store_manifest.as_bytes(), None)?;

    let mut meta: Vec<PathBuf> = match fs::read_dir(store.dir().join("meta")) {
        Ok(entries) => entries.flatten().map(|e| e.path()).collect(),
        Err(_) => Vec::new(),
    };
    meta.sort();
    for path in meta {
        let name = path.file_name().expect("entry name").to_string_lossy().to_string();
        if name.ends_with(".tmp") || !path.is_file() {
            continue;
        }
        put(&format!("meta/{name}"), &fs::read(&path)?, None)?;
    }

    manifest.points = points;
    write_atomic(&dest.join(MANIFEST_FILE), manifest.render().as_bytes())?;
    Ok(manifest)
}

/// Verifies every file of the snapshot at `src` and copies it into `dest`.
pub(super) fn restore(src: &Path, dest: &Path) -> Result<SnapshotManifest, StorageError> {
    let text = fs::read_to_string(src.join(MANIFEST_FILE))?;
    let manifest = SnapshotManifest::parse(&text)?;
    let mut contents = Vec::with_capacity(manifest.files.len());
    for f in &manifest.files {
        let bytes = fs::read(src.join(&f.path))?;
        if sha256_hex(&bytes) != f.sha256 {
            return Err(StorageError::Snapshot(format!("checksum mismatch for {}", f.path)));
        }
        contents.push(bytes);
    }
    ensure_empty_dir(dest)?;
    for (f, bytes) in manifest.files.iter().zip(&contents) {
        let path = dest.join(&f.path);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        write_atomic(&path, bytes)?;
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip() {
        let m = SnapshotManifest {
            points: 3,
            files: vec![
                ManifestEntry {
                    path: "segments/00000001.seg".into(),
                    sha256: "a".repeat(64),
                    points: Some(3),
                },
                ManifestEntry {
                    path: "meta/alerts.json".into(),
                    sha256: "b".repeat(64),
                    points: None,
                },
            ],
        };
        assert_eq!(SnapshotManifest::parse(&m.render()).unwrap(), m);
    }

    #[test]
    fn manifest_rejects_escaping_paths() {
        let text = format!("{HEADER}\npoints 0\n{}  -  ../etc/passwd\n", "a".repeat(64));
        assert!(SnapshotManifest::parse(&text).is_err());
    }
}
