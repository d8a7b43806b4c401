//! Immutable columnar segment files.
//!
//! ```text
//! "LNSG" | version:u8 | series_count:varint
//! per series (sorted by key):
//!   measurement:str | tag_count:varint | (key:str value:str)* | field:str
//!   count:varint | min_ts:zigzag | max_ts:zigzag | ts_len:varint | val_len:varint
//!   ts_bytes | val_bytes
//! crc32:u32le over everything above
//! ```
//! `str` is a varint byte length followed by UTF-8 bytes.

use std::collections::BTreeMap;
use std::ops::Range;

use super::codec::{
    decode_timestamps, decode_values, encode_timestamps, encode_values, get_varint, put_varint,
    unzigzag, zigzag, CodecError,
};
use super::series::SeriesKey;

const MAGIC: &[u8; 4] = b"LNSG";
pub const SEGMENT_VERSION: u8 = 1;

#[derive(Debug, Clone)]
pub struct BlockRef {
    pub count: usize,
    pub min_ts: i64,
    pub max_ts: i64,
    ts: Range<usize>,
    vals: Range<usize>,
}

#[derive(Debug)]
pub struct Segment {
    pub id: u64,
    bytes: Vec<u8>,
    index: BTreeMap<SeriesKey, BlockRef>,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_varint(out, s.len() as u64);
    out.extend_from_slice(s.as_bytes());
}

fn get_str(buf: &[u8], pos: &mut usize) -> Result<String, CodecError> {
    let len = get_varint(buf, pos)? as usize;
    let end = pos.checked_add(len).ok_or(CodecError("string length overflow"))?;
    let bytes = buf.get(*pos..end).ok_or(CodecError("truncated string"))?;
    *pos = end;
    String::from_utf8(bytes.to_vec()).map_err(|_| CodecError("string is not UTF-8"))
}

/// Encodes series columns into segment bytes. Each series' timestamps must be
/// strictly increasing; empty series are skipped.
pub fn encode_segment<'a>(
    series: impl IntoIterator<Item = (&'a SeriesKey, &'a [i64], &'a [f64])>,
) -> Vec<u8> {
    let series: Vec<_> = series.into_iter().filter(|(_, t, _)| !t.is_empty()).collect();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(SEGMENT_VERSION);
    put_varint(&mut out, series.len() as u64);
    let mut ts_buf = Vec::new();
    let mut val_buf = Vec::new();
    for (key, ts, vals) in series {
        debug_assert_eq!(ts.len(), vals.len());
        debug_assert!(ts.windows(2).all(|w| w[0] < w[1]));
        put_str(&mut out, &key.measurement);
        put_varint(&mut out, key.tags.len() as u64);
        for (k, v) in &key.tags {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        put_str(&mut out, &key.field);
        ts_buf.clear();
        val_buf.clear();
        encode_timestamps(ts, &mut ts_buf);
        encode_values(vals, &mut val_buf);
        put_varint(&mut out, ts.len() as u64);
        put_varint(&mut out, zigzag(ts[0]));
        put_varint(&mut out, zigzag(ts[ts.len() - 1]));
        put_varint(&mut out, ts_buf.len() as u64);
        put_varint(&mut out, val_buf.len() as u64);
        out.extend_from_slice(&ts_buf);
        out.extend_from_slice(&val_buf);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

impl Segment {
    pub fn from_bytes(id: u64, bytes: Vec<u8>) -> Result<Self, CodecError> {
        if bytes.len() < MAGIC.len() + 1 + 4 {
            return Err(CodecError("segment too short"));
        }
        let (body, crc) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body).to_le_bytes() != crc {
            return Err(CodecError("segment checksum mismatch"));
        }
        if &body[..4] != MAGIC {
            return Err(CodecError("bad segment magic"));
        }
        if body[4] != SEGMENT_VERSION {
            return Err(CodecError("unsupported segment version"));
        }
        let mut pos = 5;
        let n = get_varint(body, &mut pos)?;
        let mut index = BTreeMap::new();
        for _ in 0..n {
            let measurement = get_str(body, &mut pos)?;
            let ntags = get_varint(body, &mut pos)?;
            let mut tags = Vec::new();
            for _ in 0..ntags {
                tags.push((get_str(body, &mut pos)?, get_str(body, &mut pos)?));
            }
            let field = get_str(body, &mut pos)?;
            let count = get_varint(body, &mut pos)? as usize;
            let min_ts = unzigzag(get_varint(body, &mut pos)?);
            let max_ts = unzigzag(get_varint(body, &mut pos)?);
            let ts_len = get_varint(body, &mut pos)? as usize;
            let val_len = get_varint(body, &mut pos)? as usize;
            let ts = pos..pos.checked_add(ts_len).ok_or(CodecError("length overflow"))?;
            let vals = ts.end..ts.end.checked_add(val_len).ok_or(CodecError("length overflow"))?;
            if vals.end > body.len() {
                return Err(CodecError("truncated block"));
            }
            pos = vals.end;
            let key = SeriesKey {
                measurement,
                tags,
                field,
            };
            index.insert(
                key,
                BlockRef {
                    count,
                    min_ts,
                    max_ts,
                    ts,
                    vals,
                },
            );
        }
        if pos != body.len() {
            return Err(CodecError("trailing segment bytes"));
        }
        Ok(Self { id, bytes, index })
    }

    pub fn keys(&self) -> impl Iterator<Item = &SeriesKey> {
        self.index.keys()
    }

    pub fn block(&self, key: &SeriesKey) -> Option<&BlockRef> {
        self.index.get(key)
    }

    pub fn read(&self, key: &SeriesKey) -> Result<Option<(Vec<i64>, Vec<f64>)>, CodecError> {
        let Some(b) = self.index.get(key) else {
            return Ok(None);
        };
        let ts = decode_timestamps(&self.bytes[b.ts.clone()], b.count)?;
        let vals = decode_values(&self.bytes[b.vals.clone()], b.count)?;
        Ok(Some((ts, vals)))
    }

    pub fn point_count(&self) -> usize {
        self.index.values().map(|b| b.count).sum()
    }
}
