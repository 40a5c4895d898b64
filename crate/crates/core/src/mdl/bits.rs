use bitvec::prelude::*;

use super::{MdlError, Result};

pub type Bits = BitVec<u8, Msb0>;

pub(crate) fn ceil_log2(n: u64) -> u64 {
    crate::interpret::ceil_log2(n)
}

/// Length of the Elias gamma codeword for `n >= 1`.
pub fn gamma_len(n: u64) -> u64 {
    assert!(n >= 1, "gamma code needs a positive integer");
    2 * (63 - u64::from(n.leading_zeros())) + 1
}

/// Length of the count code, gamma of `n + 1`.
pub fn count_len(n: u64) -> u64 {
    gamma_len(n + 1)
}

/// Receives fixed-width symbols. Costs sum the widths; the encoder writes
/// the bits. Sharing one walk between both keeps them equal by construction.
pub(crate) trait Sink {
    fn put(&mut self, value: u64, width: u64);

    fn gamma(&mut self, n: u64) {
        let w = gamma_len(n);
        let body = (w - 1) / 2;
        self.put(0, body);
        self.put(n, body + 1);
    }

    fn count(&mut self, n: u64) {
        self.gamma(n + 1);
    }
}

#[derive(Debug, Default)]
pub(crate) struct Counter(pub u64);

impl Sink for Counter {
    fn put(&mut self, _value: u64, width: u64) {
        self.0 += width;
    }
}

#[derive(Debug, Default)]
pub struct BitWriter {
    bits: Bits,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> u64 {
        self.bits.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn into_bits(self) -> Bits {
        self.bits
    }
}

impl Sink for BitWriter {
    /// Writes the low `width` bits of `value`, most significant first.
    fn put(&mut self, value: u64, width: u64) {
        assert!(width <= 64);
        debug_assert!(width == 64 || value >> width == 0, "value {value} does not fit {width} bits");
        for i in (0..width).rev() {
            self.bits.push((value >> i) & 1 == 1);
        }
    }
}

pub struct BitReader<'a> {
    bits: &'a BitSlice<u8, Msb0>,
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(bits: &'a BitSlice<u8, Msb0>) -> Self {
        BitReader { bits, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.bits.len() - self.pos
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn read(&mut self, width: u64) -> Result<u64> {
        assert!(width <= 64);
        let width = width as usize;
        if self.remaining() < width {
            return Err(MdlError::Truncated { at: self.bits.len() });
        }
        let mut v = 0u64;
        for b in &self.bits[self.pos..self.pos + width] {
            v = (v << 1) | u64::from(*b);
        }
        self.pos += width;
        Ok(v)
    }

    pub fn read_gamma(&mut self) -> Result<u64> {
        let mut zeros = 0u64;
        loop {
            if self.read(1)? == 1 {
                break;
            }
            zeros += 1;
            if zeros > 63 {
                return Err(MdlError::Corrupt(format!("gamma prefix too long at bit {}", self.pos)));
            }
        }
        let rest = self.read(zeros)?;
        Ok((1 << zeros) | rest)
    }

    pub fn read_count(&mut self) -> Result<u64> {
        Ok(self.read_gamma()? - 1)
    }
}

pub const MAGIC: &[u8; 4] = b"CMDL";

/// Wraps a payload in the byte container: magic, version, pad length,
/// then the payload packed big-endian and zero-padded to a whole byte.
pub fn pack(payload: &BitSlice<u8, Msb0>, version: u8) -> Vec<u8> {
    let pad = (8 - payload.len() % 8) % 8;
    let mut bits: Bits = payload.to_bitvec();
    bits.resize(payload.len() + pad, false);
    let mut out = Vec::with_capacity(6 + bits.len() / 8);
    out.extend_from_slice(MAGIC);
    out.push(version);
    out.push(pad as u8);
    out.extend_from_slice(bits.as_raw_slice());
    out
}

/// Inverse of [`pack`]; checks magic, version and padding.
pub fn unpack(bytes: &[u8], version: u8) -> Result<Bits> {
    if bytes.len() < 6 {
        return Err(MdlError::Truncated { at: bytes.len() * 8 });
    }
    if &bytes[..4] != MAGIC {
        return Err(MdlError::BadMagic);
    }
    if bytes[4] != version {
        return Err(MdlError::VersionMismatch { found: bytes[4], expected: version });
    }
    if bytes[5] & !0b111 != 0 {
        return Err(MdlError::Corrupt("pad-length byte uses reserved bits".into()));
    }
    let pad = (bytes[5] & 0b111) as usize;
    let mut bits: Bits = BitVec::from_slice(&bytes[6..]);
    if pad > bits.len() || bits[bits.len() - pad..].any() {
        return Err(MdlError::Corrupt("nonzero padding".into()));
    }
    bits.truncate(bits.len() - pad);
    Ok(bits)
}
