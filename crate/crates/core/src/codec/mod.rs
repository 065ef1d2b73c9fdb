//! Elias integer coding and the variable-length wire format for quantized
//! gradients.
//!
//! A quantized gradient is sent as its 64-bit norm followed by a walk over
//! the nonzero coordinates: `Elias(gap)`, one sign bit (`1` = positive) and
//! `Elias(level)` per nonzero, where the first gap is the 1-based position.
//! The payload ends with a gap that lands one past the last coordinate.

mod bits;
mod elias;

pub use bits::{BitReader, BitString};
pub use elias::{elias_append, elias_decode, elias_encode, elias_length, iterated_log_sum};

use crate::error::{Error, Result};
use crate::quantizer::QuantizedGradient;

/// Bits used for the norm header.
pub const FLOAT_BITS: usize = 64;

/// Wire format version; version 1 carries a 64-bit IEEE-754 norm.
pub const WIRE_VERSION: u8 = 1;

/// Bytes before the payload in a framed message.
pub const FRAME_HEADER_BITS: usize = 8 + 16 + 32 + 64;

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedGradient {
    /// IEEE-754 bits of the norm.
    pub header: u64,
    pub payload: BitString,
    /// `64 + |payload|`.
    pub total_bits: usize,
}

impl EncodedGradient {
    pub fn norm(&self) -> f64 {
        f64::from_bits(self.header)
    }
}

pub fn encode_gradient(q: &QuantizedGradient) -> Result<EncodedGradient> {
    q.validate()?;
    let d = q.dim() as u64;
    let mut payload = BitString::new();
    let mut last = 0u64;
    for (i, (&level, &sign)) in q.levels.iter().zip(&q.signs).enumerate() {
        if level == 0 {
            continue;
        }
        let pos = i as u64 + 1;
        elias_append(&mut payload, pos - last)?;
        payload.push(sign > 0);
        elias_append(&mut payload, u64::from(level))?;
        last = pos;
    }
    elias_append(&mut payload, d + 1 - last)?;
    let total_bits = FLOAT_BITS + payload.len();
    Ok(EncodedGradient { header: q.norm.to_bits(), payload, total_bits })
}

pub fn decode_gradient(e: &EncodedGradient, d: usize, s: u32) -> Result<QuantizedGradient> {
    let norm = e.norm();
    if !(norm.is_finite() && norm >= 0.0) {
        return Err(Error::Decode(format!("invalid norm {norm}")));
    }
    let mut q = QuantizedGradient::zero(d, s);
    q.norm = norm;
    let mut r = e.payload.reader();
    let end = d as u64 + 1;
    let mut pos = 0u64;
    loop {
        let (gap, _) = elias_decode(&mut r)?;
        pos = pos
            .checked_add(gap)
            .filter(|&p| p <= end)
            .ok_or_else(|| Error::Decode(format!("position past dimension {d}")))?;
        if pos == end {
            break;
        }
        let sign = if r.read_bit()? { 1 } else { -1 };
        let (level, _) = elias_decode(&mut r)?;
        if level > u64::from(s) {
            return Err(Error::Decode(format!("level {level} exceeds s = {s}")));
        }
        let i = (pos - 1) as usize;
        q.signs[i] = sign;
        q.levels[i] = level as u32;
    }
    if r.remaining() != 0 {
        return Err(Error::Decode(format!("{} trailing payload bits", r.remaining())));
    }
    Ok(q)
}

/// `[8-bit version][16-bit s][32-bit d][64-bit norm][payload][zero pad]`.
pub fn to_wire(e: &EncodedGradient, d: usize, s: u32) -> Result<Vec<u8>> {
    if s > u32::from(u16::MAX) {
        return Err(Error::arg(format!("s = {s} does not fit the 16-bit wire field")));
    }
    let d32 = u32::try_from(d).map_err(|_| Error::arg(format!("d = {d} does not fit 32 bits")))?;
    let mut b = BitString::new();
    b.push_bits(u64::from(WIRE_VERSION), 8);
    b.push_bits(u64::from(s), 16);
    b.push_bits(u64::from(d32), 32);
    b.push_bits(e.header, 64);
    b.extend(&e.payload);
    Ok(b.as_bytes().to_vec())
}

/// Parses a framed message, returning `(d, s, tuple)`.
pub fn from_wire(bytes: &[u8]) -> Result<(usize, u32, QuantizedGradient)> {
    if bytes.len() * 8 < FRAME_HEADER_BITS {
        return Err(Error::Decode("frame shorter than its header".into()));
    }
    let all = BitString::from_bytes(bytes.to_vec(), bytes.len() * 8);
    let mut r = all.reader();
    let version = r.read_bits(8)? as u8;
    if version != WIRE_VERSION {
        return Err(Error::Decode(format!("unsupported wire version {version}")));
    }
    let s = r.read_bits(16)? as u32;
    let d = r.read_bits(32)? as usize;
    let header = r.read_bits(64)?;
    // The payload is self-delimiting; walk it once to find where it ends.
    let start = r.position();
    let mut probe = r;
    let end = d as u64 + 1;
    let mut pos = 0u64;
    loop {
        let (gap, _) = elias_decode(&mut probe)?;
        pos = pos
            .checked_add(gap)
            .filter(|&p| p <= end)
            .ok_or_else(|| Error::Decode(format!("position past dimension {d}")))?;
        if pos == end {
            break;
        }
        probe.read_bit()?;
        elias_decode(&mut probe)?;
    }
    let mut payload = BitString::new();
    for i in start..probe.position() {
        payload.push(all.get(i));
    }
    let pad = probe.remaining();
    if pad >= 8 || probe.read_bits(pad as u32)? != 0 {
        return Err(Error::Decode("frame padding is not a zero-filled final byte".into()));
    }
    let total_bits = FLOAT_BITS + payload.len();
    let e = EncodedGradient { header, payload, total_bits };
    let q = decode_gradient(&e, d, s.max(1))?;
    Ok((d, s, q))
}

/// Outcome of [`bit_budget_bound`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BitBudget {
    Bound(f64),
    /// `s² + √d > d/2`.
    NotApplicable,
}

impl BitBudget {
    pub fn value(self) -> Option<f64> {
        match self {
            BitBudget::Bound(v) => Some(v),
            BitBudget::NotApplicable => None,
        }
    }
}

/// `64 + (3 + 1.5·C·log₂(2(s²+d)/(s²+√d)))·(s²+√d)`, defined when
/// `s² + √d ≤ d/2`.
pub fn bit_budget_bound(d: usize, s: u32, c: f64) -> BitBudget {
    let d = d as f64;
    let s2 = f64::from(s) * f64::from(s);
    let m = s2 + d.sqrt();
    if m > d / 2.0 {
        return BitBudget::NotApplicable;
    }
    let inner = 3.0 + 1.5 * c * (2.0 * (s2 + d) / m).log2();
    BitBudget::Bound(FLOAT_BITS as f64 + inner * m)
}

/// Overhead constant `C = max_k (|Elias(k)| − 1) / log₂ k` over every
/// integer a payload for `(d, s)` can carry, `2 ≤ k ≤ max(d + 1, s)`.
pub fn calibrated_constant(d: usize, s: u32) -> f64 {
    let top = (d as u64 + 1).max(u64::from(s));
    (2..=top)
        .map(|k| (elias_length(k) - 1) as f64 / (k as f64).log2())
        .fold(0.0, f64::max)
}
