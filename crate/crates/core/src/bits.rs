//! MSB-first bit packing used by the fixed-width codecs.

use std::fmt;

use serde::{Deserialize, Serialize};

/// A fixed-length bit string. Bit 0 is the most significant bit of byte 0.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BitString {
    bytes: Vec<u8>,
    len: usize,
}

impl BitString {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bit(&self, index: usize) -> bool {
        assert!(index < self.len, "bit {index} out of range {}", self.len);
        self.bytes[index / 8] & (0x80 >> (index % 8)) != 0
    }

    pub fn count_ones(&self) -> usize {
        self.bytes.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn from_bytes(bytes: Vec<u8>, len: usize) -> Option<Self> {
        if bytes.len() != len.div_ceil(8) {
            return None;
        }
        let mut s = BitString { bytes, len };
        // padding bits past `len` are always zero
        if !len.is_multiple_of(8) {
            let last = s.bytes.len() - 1;
            s.bytes[last] &= 0xffu8 << (8 - len % 8);
        }
        Some(s)
    }

    pub fn set(&mut self, index: usize, value: bool) {
        assert!(index < self.len);
        let mask = 0x80 >> (index % 8);
        if value {
            self.bytes[index / 8] |= mask;
        } else {
            self.bytes[index / 8] &= !mask;
        }
    }

    pub fn to_hex(&self) -> String {
        self.bytes.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitString({} bits, {})", self.len, self.to_hex())
    }
}

#[derive(Debug, Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    len: usize,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn push_bit(&mut self, bit: bool) {
        if self.len.is_multiple_of(8) {
            self.bytes.push(0);
        }
        if bit {
            let last = self.bytes.len() - 1;
            self.bytes[last] |= 0x80 >> (self.len % 8);
        }
        self.len += 1;
    }

    /// Writes the low `width` bits of `value`, most significant first.
    pub fn write_uint(&mut self, value: u128, width: u32) {
        assert!(width <= 128);
        debug_assert!(width == 128 || value >> width == 0, "{value} does not fit in {width} bits");
        for i in (0..width).rev() {
            self.push_bit((value >> i) & 1 == 1);
        }
    }

    /// Writes `data` left-aligned in a `width`-bit field, zero padded.
    pub fn write_bytes(&mut self, data: &[u8], width: u32) {
        assert!(data.len() * 8 <= width as usize, "{} bytes exceed {width} bits", data.len());
        for &byte in data {
            self.write_uint(byte.into(), 8);
        }
        for _ in 0..(width as usize - data.len() * 8) {
            self.push_bit(false);
        }
    }

    pub fn finish(self) -> BitString {
        BitString { bytes: self.bytes, len: self.len }
    }
}

pub struct BitReader<'a> {
    bits: &'a BitString,
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(bits: &'a BitString) -> Self {
        BitReader { bits, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.bits.len() - self.pos
    }

    pub fn read_uint(&mut self, width: u32) -> Option<u128> {
        if width > 128 || self.remaining() < width as usize {
            return None;
        }
        let mut v = 0u128;
        for _ in 0..width {
            v = (v << 1) | u128::from(self.bits.bit(self.pos));
            self.pos += 1;
        }
        Some(v)
    }

    /// Reads a `width`-bit field as bytes and strips the zero padding.
    pub fn read_bytes(&mut self, width: u32) -> Option<Vec<u8>> {
        if !width.is_multiple_of(8) || self.remaining() < width as usize {
            return None;
        }
        let mut out = Vec::with_capacity(width as usize / 8);
        for _ in 0..width / 8 {
            out.push(self.read_uint(8)? as u8);
        }
        while out.last() == Some(&0) {
            out.pop();
        }
        Some(out)
    }
}
