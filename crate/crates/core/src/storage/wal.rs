//! Append-only write-ahead log.
//!
//! Each record is `len:u32le | crc32:u32le | payload`, the payload being the
//! batch's points in the line format, newline separated. Replay stops at the
//! first torn or corrupt record.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::wire::{encode_line, parse_line, DataPoint};

pub struct Wal {
    file: File,
    len: u64,
    fsync: bool,
}

/// Reads every intact record; returns the points and the byte length of the
/// intact prefix.
pub fn replay(path: &Path) -> io::Result<(Vec<DataPoint>, u64)> {
    let mut buf = Vec::new();
    match File::open(path) {
        Ok(mut f) => {
            f.read_to_end(&mut buf)?;
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
        Err(e) => return Err(e),
    }
    let mut points = Vec::new();
    let mut pos = 0usize;
    while pos + 8 <= buf.len() {
        let len = u32::from_le_bytes(buf[pos..pos + 4].try_into().expect("4 bytes")) as usize;
        let crc = u32::from_le_bytes(buf[pos + 4..pos + 8].try_into().expect("4 bytes"));
        let Some(payload) = buf.get(pos + 8..pos + 8 + len) else {
            break;
        };
        if crc32fast::hash(payload) != crc {
            break;
        }
        let Ok(text) = std::str::from_utf8(payload) else {
            break;
        };
        let parsed: Result<Vec<_>, _> = text.lines().map(parse_line).collect();
        match parsed {
            Ok(p) => points.extend(p),
            Err(_) => break,
        }
        pos += 8 + len;
    }
    if pos < buf.len() {
        log::warn!(
            "{}: discarding {} bytes of torn log tail",
            path.display(),
            buf.len() - pos
        );
    }
    Ok((points, pos as u64))
}

impl Wal {
    /// Opens (creating if needed) and truncates any torn tail.
    pub fn open(path: &Path, fsync: bool) -> io::Result<(Self, Vec<DataPoint>)> {
        let (points, good) = replay(path)?;
        let mut file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .read(true)
            .write(true)
            .open(path)?;
        file.set_len(good)?;
        file.seek(SeekFrom::Start(good))?;
        Ok((
            Self {
                file,
                len: good,
                fsync,
            },
            points,
        ))
    }

    /// Appends one batch as a single record. Points must be stamped.
    pub fn append(&mut self, points: &[DataPoint]) -> io::Result<()> {
        if points.is_empty() {
            return Ok(());
        }
        let mut payload = String::with_capacity(points.len() * 64);
        for (i, p) in points.iter().enumerate() {
            if i > 0 {
                payload.push('\n');
            }
            let line = encode_line(p).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
            payload.push_str(&line);
        }
        let mut record = Vec::with_capacity(payload.len() + 8);
        record.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        record.extend_from_slice(&crc32fast::hash(payload.as_bytes()).to_le_bytes());
        record.extend_from_slice(payload.as_bytes());
        if let Err(e) = self.file.write_all(&record) {
            // Drop whatever part of the record made it out.
            let _ = self.file.set_len(self.len);
            let _ = self.file.seek(SeekFrom::Start(self.len));
            return Err(e);
        }
        if self.fsync {
            self.file.sync_data()?;
        }
        self.len += record.len() as u64;
        Ok(())
    }

    /// Empties the log once its contents are safely in a segment.
    pub fn reset(&mut self) -> io::Result<()> {
        self.file.set_len(0)?;
        self.file.seek(SeekFrom::Start(0))?;
        if self.fsync {
            self.file.sync_data()?;
        }
        self.len = 0;
        Ok(())
    }
}
