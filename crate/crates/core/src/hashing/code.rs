//! Packed binary codes.
//!
//! Code files: magic "SAKECOD1" | count u32 | bits u32 | count × ceil(bits/8)
//! bytes, bit `b` of a code stored in byte `b / 8` at position `b % 8`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CODES_MAGIC: &[u8; 8] = b"SAKECOD1";

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryCode {
    bits: usize,
    words: Vec<u64>,
}

impl BinaryCode {
    pub fn from_bits(bits: &[bool]) -> Self {
        let mut words = vec![0u64; bits.len().div_ceil(64)];
        for (i, _) in bits.iter().enumerate().filter(|(_, b)| **b) {
            words[i / 64] |= 1 << (i % 64);
        }
        BinaryCode { bits: bits.len(), words }
    }

    pub fn len(&self) -> usize {
        self.bits
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    pub fn bit(&self, i: usize) -> bool {
        i < self.bits && self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn to_bits(&self) -> Vec<bool> {
        (0..self.bits).map(|i| self.bit(i)).collect()
    }

    fn to_bytes(&self) -> Vec<u8> {
        let n = self.bits.div_ceil(8);
        self.words.iter().flat_map(|w| w.to_le_bytes()).take(n).collect()
    }

    fn from_bytes(bytes: &[u8], bits: usize) -> Option<Self> {
        // Padding bits past `bits` must be zero so equal codes compare equal.
        if !bits.is_multiple_of(8) && bytes.last().is_some_and(|&b| b >> (bits % 8) != 0) {
            return None;
        }
        let mut words = vec![0u64; bits.div_ceil(64)];
        for (i, &b) in bytes.iter().enumerate() {
            words[i / 8] |= (b as u64) << (8 * (i % 8));
        }
        Some(BinaryCode { bits, words })
    }
}

/// Number of differing bits.
pub fn hamming_distance(a: &BinaryCode, b: &BinaryCode) -> Result<u32> {
    if a.bits != b.bits {
        return Err(Error::contract(
            "hamming_distance",
            format!("code lengths differ: {} vs {}", a.bits, b.bits),
        ));
    }
    Ok(a.words.iter().zip(&b.words).map(|(x, y)| (x ^ y).count_ones()).sum())
}

pub fn encode_codes(codes: &[BinaryCode]) -> Result<Vec<u8>> {
    let bits = codes.first().map_or(0, |c| c.bits);
    if codes.iter().any(|c| c.bits != bits) {
        return Err(Error::contract("encode_codes", "codes have different lengths"));
    }
    let mut buf = Vec::with_capacity(16 + codes.len() * bits.div_ceil(8));
    buf.extend_from_slice(CODES_MAGIC);
    buf.extend_from_slice(&(codes.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(bits as u32).to_le_bytes());
    for c in codes {
        buf.extend_from_slice(&c.to_bytes());
    }
    Ok(buf)
}

pub fn decode_codes(bytes: &[u8], origin: &Path) -> Result<Vec<BinaryCode>> {
    let bad = |d: &str| Error::format(origin, d);
    if bytes.len() < 16 || &bytes[..8] != CODES_MAGIC {
        return Err(bad("missing SAKECOD1 header"));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let bits = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let stride = bits.div_ceil(8);
    let body = &bytes[16..];
    if body.len() != count * stride {
        return Err(bad(&format!("expected {} code bytes, found {}", count * stride, body.len())));
    }
    if stride == 0 {
        return Ok(vec![BinaryCode::from_bits(&[]); count]);
    }
    body.chunks_exact(stride)
        .map(|c| BinaryCode::from_bytes(c, bits).ok_or_else(|| bad("nonzero padding bits")))
        .collect()
}

pub fn write_codes(codes: &[BinaryCode], path: &Path) -> Result<()> {
    std::fs::write(path, encode_codes(codes)?).map_err(|e| Error::io(path, e))
}

pub fn read_codes(path: &Path) -> Result<Vec<BinaryCode>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_codes(&bytes, path)
}
