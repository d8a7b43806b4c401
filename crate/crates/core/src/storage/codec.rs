//! Column codecs for segment blocks.
//!
//! Timestamps: zigzag varints of the first value, the first delta, then
//! delta-of-deltas (a regular cadence costs one byte per point).
//! Values: XOR against the previous value with leading/trailing-zero
//! windows, bit-packed.

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("corrupt block: {0}")]
pub struct CodecError(pub &'static str);

pub fn zigzag(v: i64) -> u64 {
    ((v << 1) ^ (v >> 63)) as u64
}

pub fn unzigzag(v: u64) -> i64 {
    ((v >> 1) as i64) ^ -((v & 1) as i64)
}

pub fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

pub fn get_varint(buf: &[u8], pos: &mut usize) -> Result<u64, CodecError> {
    let mut v = 0u64;
    for shift in (0..64).step_by(7) {
        let b = *buf.get(*pos).ok_or(CodecError("truncated varint"))?;
        *pos += 1;
        v |= u64::from(b & 0x7f) << shift;
        if b & 0x80 == 0 {
            return Ok(v);
        }
    }
    Err(CodecError("varint too long"))
}

pub fn encode_timestamps(ts: &[i64], out: &mut Vec<u8>) {
    let mut prev = 0i64;
    let mut prev_delta = 0i64;
    for (i, &t) in ts.iter().enumerate() {
        match i {
            0 => put_varint(out, zigzag(t)),
            1 => {
                prev_delta = t.wrapping_sub(prev);
                put_varint(out, zigzag(prev_delta));
            }
            _ => {
                let delta = t.wrapping_sub(prev);
                put_varint(out, zigzag(delta.wrapping_sub(prev_delta)));
                prev_delta = delta;
            }
        }
        prev = t;
    }
}

pub fn decode_timestamps(buf: &[u8], count: usize) -> Result<Vec<i64>, CodecError> {
    let mut pos = 0;
    let mut out = Vec::with_capacity(count);
    let mut prev = 0i64;
    let mut delta = 0i64;
    for i in 0..count {
        let v = unzigzag(get_varint(buf, &mut pos)?);
        let t = match i {
            0 => v,
            1 => {
                delta = v;
                prev.wrapping_add(delta)
            }
            _ => {
                delta = delta.wrapping_add(v);
                prev.wrapping_add(delta)
            }
        };
        out.push(t);
        prev = t;
    }
    if pos != buf.len() {
        return Err(CodecError("trailing timestamp bytes"));
    }
    Ok(out)
}

struct BitWriter {
    bytes: Vec<u8>,
    used: u32,
}

impl BitWriter {
    fn write(&mut self, value: u64, bits: u32) {
        for i in (0..bits).rev() {
            if self.used == 0 {
                self.bytes.push(0);
            }
            let bit = ((value >> i) & 1) as u8;
            let last = self.bytes.last_mut().expect("pushed above");
            *last |= bit << (7 - self.used);
            self.used = (self.used + 1) % 8;
        }
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl BitReader<'_> {
    fn read(&mut self, bits: u32) -> Result<u64, CodecError> {
        let mut v = 0u64;
        for _ in 0..bits {
            let byte = *self
                .bytes
                .get(self.pos / 8)
                .ok_or(CodecError("truncated value block"))?;
            let bit = (byte >> (7 - (self.pos % 8))) & 1;
            v = (v << 1) | u64::from(bit);
            self.pos += 1;
        }
        Ok(v)
    }
}

pub fn encode_values(values: &[f64], out: &mut Vec<u8>) {
    let mut w = BitWriter {
        bytes: Vec::with_capacity(values.len() * 4),
        used: 0,
    };
    let mut prev = 0u64;
    // (leading, trailing) zero counts of the last explicit window.
    let mut window: Option<(u32, u32)> = None;
    for (i, v) in values.iter().enumerate() {
        let bits = v.to_bits();
        if i == 0 {
            w.write(bits, 64);
            prev = bits;
            continue;
        }
        let xor = bits ^ prev;
        prev = bits;
        if xor == 0 {
            w.write(0, 1);
            continue;
        }
        w.write(1, 1);
        let lead = xor.leading_zeros().min(31);
        let trail = xor.trailing_zeros();
        match window {
            Some((pl, pt)) if lead >= pl && trail >= pt => {
                w.write(0, 1);
                w.write(xor >> pt, 64 - pl - pt);
            }
            _ => {
                let len = 64 - lead - trail;
                w.write(1, 1);
                w.write(u64::from(lead), 5);
                w.write(u64::from(len - 1), 6);
                w.write(xor >> trail, len);
                window = Some((lead, trail));
            }
        }
    }
    out.extend_from_slice(&w.bytes);
}

pub fn decode_values(buf: &[u8], count: usize) -> Result<Vec<f64>, CodecError> {
    let mut r = BitReader { bytes: buf, pos: 0 };
    let mut out = Vec::with_capacity(count);
    let mut prev = 0u64;
    let mut window: Option<(u32, u32)> = None;
    for i in 0..count {
        if i == 0 {
            prev = r.read(64)?;
        } else if r.read(1)? == 1 {
            if r.read(1)? == 1 {
                let lead = r.read(5)? as u32;
                let len = r.read(6)? as u32 + 1;
                if lead + len > 64 {
                    return Err(CodecError("bad xor window"));
                }
                window = Some((lead, 64 - lead - len));
            }
            let (lead, trail) = window.ok_or(CodecError("xor window reused before set"))?;
            prev ^= r.read(64 - lead - trail)? << trail;
        }
        out.push(f64::from_bits(prev));
    }
    if r.pos.div_ceil(8) != buf.len() {
        return Err(CodecError("trailing value bytes"));
    }
    Ok(out)
}
