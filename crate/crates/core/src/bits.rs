//! MSB-first bit I/O over byte buffers.

/// Largest single write: the accumulator holds fewer than 8 pending bits.
pub(crate) const MAX_WRITE: u32 = 56;

#[derive(Debug, Default)]
pub(crate) struct BitWriter {
    bytes: Vec<u8>,
    acc: u64,
    filled: u32,
    written: u64,
}

impl BitWriter {
    #[cfg(test)]
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(bytes: usize) -> Self {
        BitWriter {
            bytes: Vec::with_capacity(bytes),
            ..Self::default()
        }
    }

    /// Appends the low `n` bits of `value`, most significant first.
    #[inline]
    pub fn write_bits(&mut self, value: u64, n: u32) {
        debug_assert!(n <= MAX_WRITE);
        if n == 0 {
            return;
        }
        let value = value & ((1u64 << n) - 1);
        self.acc = (self.acc << n) | value;
        self.filled += n;
        self.written += n as u64;
        while self.filled >= 8 {
            self.filled -= 8;
            self.bytes.push((self.acc >> self.filled) as u8);
        }
        self.acc &= (1u64 << self.filled) - 1;
    }

    #[cfg(test)]
    pub fn write_bit(&mut self, bit: bool) {
        self.write_bits(bit as u64, 1);
    }

    /// `q` one-bits followed by a zero-bit.
    pub fn write_unary(&mut self, mut q: u64) {
        while q >= 32 {
            self.write_bits(u32::MAX as u64, 32);
            q -= 32;
        }
        self.write_bits(((1u64 << q) - 1) << 1, q as u32 + 1);
    }

    pub fn bits_written(&self) -> u64 {
        self.written
    }

    /// Zero-pads to a byte boundary and returns the bytes.
    pub fn finish(mut self) -> Vec<u8> {
        if self.filled > 0 {
            self.bytes.push((self.acc << (8 - self.filled)) as u8);
        }
        self.bytes
    }
}

pub(crate) struct BitReader<'a> {
    bytes: &'a [u8],
    pos: u64,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        BitReader { bytes, pos: 0 }
    }

    pub fn position(&self) -> u64 {
        self.pos
    }

    pub fn remaining(&self) -> u64 {
        self.bytes.len() as u64 * 8 - self.pos
    }

    /// Up to 64 bits starting at the current position, MSB-aligned and
    /// zero-filled past the end of the buffer.
    #[inline]
    fn window(&self) -> u64 {
        let start = (self.pos >> 3) as usize;
        if let Some(chunk) = self.bytes.get(start..start + 8) {
            return u64::from_be_bytes(chunk.try_into().unwrap()) << (self.pos & 7);
        }
        let mut buf = [0u8; 8];
        let avail = self.bytes.len().saturating_sub(start).min(8);
        buf[..avail].copy_from_slice(&self.bytes[start..start + avail]);
        u64::from_be_bytes(buf) << (self.pos & 7)
    }

    #[inline]
    pub fn read_bits(&mut self, n: u32) -> Option<u64> {
        debug_assert!(n <= 32);
        if self.remaining() < n as u64 {
            return None;
        }
        if n == 0 {
            return Some(0);
        }
        let v = self.window() >> (64 - n);
        self.pos += n as u64;
        Some(v)
    }

    /// One Rice code: a unary quotient followed by `n` raw bits. Returns
    /// `(quotient, raw)`; the quotient may exceed `limit` as in
    /// [`read_unary`](Self::read_unary), in which case `raw` is 0.
    #[inline]
    pub fn read_rice(&mut self, n: u32, limit: u64) -> Option<(u64, u64)> {
        let remaining = self.remaining();
        let w = self.window();
        let ones = w.leading_ones();
        if (ones + 1 + n) as u64 <= remaining.min(57) {
            let raw = if n == 0 { 0 } else { (w << (ones + 1)) >> (64 - n) };
            self.pos += (ones + 1 + n) as u64;
            return Some((ones as u64, raw));
        }
        let q = self.read_unary(limit)?;
        if q > limit {
            return Some((q, 0));
        }
        Some((q, self.read_bits(n)?))
    }

    /// Counts one-bits up to the terminating zero, which is consumed. Stops
    /// early, returning a count above `limit`, once the count exceeds it.
    pub fn read_unary(&mut self, limit: u64) -> Option<u64> {
        let mut q = 0u64;
        loop {
            let remaining = self.remaining();
            if remaining == 0 {
                return None;
            }
            // the window holds at least 57 valid bits when that many remain
            let valid = remaining.min(57);
            let ones = (self.window().leading_ones() as u64).min(valid);
            q += ones;
            self.pos += ones;
            if ones < valid {
                self.pos += 1;
                return Some(q);
            }
            if q > limit {
                return Some(q);
            }
        }
    }
}
