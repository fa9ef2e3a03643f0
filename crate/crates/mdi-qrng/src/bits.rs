//! Word-packed bit buffers and deterministic bit sources.
//!
//! Bit order convention, used everywhere in this crate: bit `i` of a buffer
//! lives in word `i / 64` at position `i % 64` (LSB first). Serialized to
//! bytes this is the little-endian packing: bit `i` of a file is bit `i % 8`
//! of byte `i / 8`.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Growable packed bit buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitBuf {
    words: Vec<u64>,
    len: usize,
}

impl BitBuf {
    pub fn new() -> Self {
        Self { words: Vec::new(), len: 0 }
    }

    /// All-zero buffer of `len` bits.
    pub fn zeros(len: usize) -> Self {
        Self { words: vec![0; len.div_ceil(64)], len }
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut buf = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                buf.set(i, true);
            }
        }
        buf
    }

    /// Interprets bytes in little-endian bit order; `len` may trim the tail.
    pub fn from_bytes(bytes: &[u8], len: usize) -> Self {
        assert!(len <= bytes.len() * 8, "len exceeds supplied bytes");
        let mut words = vec![0u64; len.div_ceil(64)];
        for (i, &b) in bytes.iter().enumerate() {
            if i * 8 >= len {
                break;
            }
            words[i / 8] |= (b as u64) << ((i % 8) * 8);
        }
        let mut buf = Self { words, len };
        buf.mask_tail();
        buf
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.len.div_ceil(8)];
        for (i, byte) in out.iter_mut().enumerate() {
            *byte = (self.words[i / 8] >> ((i % 8) * 8)) as u8;
        }
        out
    }

    /// Deterministic pseudorandom bits from an explicit seed.
    pub fn random(seed: u64, len: usize) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut words = vec![0u64; len.div_ceil(64)];
        for w in &mut words {
            *w = rng.next_u64();
        }
        let mut buf = Self { words, len };
        buf.mask_tail();
        buf
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, v: bool) {
        debug_assert!(i < self.len);
        let mask = 1u64 << (i % 64);
        if v {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    pub fn push(&mut self, v: bool) {
        if self.len % 64 == 0 {
            self.words.push(0);
        }
        self.len += 1;
        let i = self.len - 1;
        if v {
            self.words[i / 64] |= 1u64 << (i % 64);
        }
    }

    pub fn extend_from(&mut self, other: &BitBuf) {
        for i in 0..other.len {
            self.push(other.get(i));
        }
    }

    pub fn count_ones(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// Calls `f(i)` for every set bit, in ascending order.
    pub fn for_each_one(&self, mut f: impl FnMut(usize)) {
        for (wi, &w) in self.words.iter().enumerate() {
            let mut w = w;
            while w != 0 {
                let b = w.trailing_zeros() as usize;
                f(wi * 64 + b);
                w &= w - 1;
            }
        }
    }

    /// XORs the window `[start, start + len)` of `self` into `dst` at bit 0.
    /// `dst` must hold at least `len` bits; bits of `dst` beyond `len` in the
    /// last touched word may be clobbered with window tail bits, so callers
    /// mask on read-out.
    pub fn xor_window_into(&self, start: usize, len: usize, dst: &mut [u64]) {
        debug_assert!(start + len <= self.len);
        let n_words = len.div_ceil(64);
        debug_assert!(dst.len() >= n_words);
        let w0 = start / 64;
        let shift = start % 64;
        if shift == 0 {
            for i in 0..n_words {
                dst[i] ^= self.words[w0 + i];
            }
        } else {
            for (i, d) in dst.iter_mut().enumerate().take(n_words) {
                let lo = self.words[w0 + i] >> shift;
                let hi = self
                    .words
                    .get(w0 + i + 1)
                    .map_or(0, |w| w << (64 - shift));
                *d ^= lo | hi;
            }
        }
    }

    /// Extracts `[start, start + len)` as a new buffer.
    pub fn slice(&self, start: usize, len: usize) -> BitBuf {
        assert!(start + len <= self.len);
        let mut words = vec![0u64; len.div_ceil(64)];
        self.xor_window_into(start, len, &mut words);
        let mut buf = Self { words, len };
        buf.mask_tail();
        buf
    }

    fn mask_tail(&mut self) {
        let r = self.len % 64;
        if r != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << r) - 1;
            }
        }
    }
}

impl Default for BitBuf {
    fn default() -> Self {
        Self::new()
    }
}

/// A stream of seed bits with exact consumption accounting.
pub trait BitSource {
    /// Draws one bit; `None` when the source is exhausted.
    fn next_bit(&mut self) -> Option<bool>;

    /// Total bits handed out so far.
    fn bits_consumed(&self) -> u64;

    /// Draws `k <= 64` bits as an integer, first bit drawn becoming the most
    /// significant. `None` if the source runs out mid-draw.
    fn draw(&mut self, k: u32) -> Option<u64> {
        debug_assert!(k <= 64);
        let mut v = 0u64;
        for _ in 0..k {
            v = (v << 1) | self.next_bit()? as u64;
        }
        Some(v)
    }
}

/// Finite source backed by a buffer; exhausts at the end.
pub struct BufferBitSource {
    buf: BitBuf,
    pos: usize,
}

impl BufferBitSource {
    pub fn new(buf: BitBuf) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

impl BitSource for BufferBitSource {
    fn next_bit(&mut self) -> Option<bool> {
        if self.pos >= self.buf.len() {
            return None;
        }
        let b = self.buf.get(self.pos);
        self.pos += 1;
        Some(b)
    }

    fn bits_consumed(&self) -> u64 {
        self.pos as u64
    }
}

/// Unbounded deterministic source driven by a seeded stream cipher.
/// Bits come off each generated word LSB first.
pub struct ChaChaBitSource {
    rng: ChaCha12Rng,
    cache: u64,
    cache_bits: u32,
    consumed: u64,
}

impl ChaChaBitSource {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha12Rng::seed_from_u64(seed), cache: 0, cache_bits: 0, consumed: 0 }
    }
}

impl BitSource for ChaChaBitSource {
    fn next_bit(&mut self) -> Option<bool> {
        if self.cache_bits == 0 {
            self.cache = self.rng.next_u64();
            self.cache_bits = 64;
        }
        let b = self.cache & 1 == 1;
        self.cache >>= 1;
        self.cache_bits -= 1;
        self.consumed += 1;
        Some(b)
    }

    fn bits_consumed(&self) -> u64 {
        self.consumed
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_round_trip_is_little_endian() {
        let buf = BitBuf::from_bytes(&[0b0000_0001, 0b1000_0000], 16);
        assert!(buf.get(0));
        assert!(!buf.get(1));
        assert!(buf.get(15));
        assert_eq!(buf.to_bytes(), vec![0b0000_0001, 0b1000_0000]);
    }

    #[test]
    fn window_xor_matches_bitwise() {
        let src = BitBuf::random(7, 300);
        for &(start, len) in &[(0usize, 64usize), (3, 130), (65, 70), (130, 170), (299, 1)] {
            let mut words = vec![0u64; len.div_ceil(64)];
            src.xor_window_into(start, len, &mut words);
            for i in 0..len {
                let got = (words[i / 64] >> (i % 64)) & 1 == 1;
                assert_eq!(got, src.get(start + i), "start={start} len={len} i={i}");
            }
        }
    }

    #[test]
    fn draw_assembles_msb_first() {
        // bits 1,0,1,1 -> 0b1011
        let mut src = BufferBitSource::new(BitBuf::from_bits(&[true, false, true, true]));
        assert_eq!(src.draw(4), Some(0b1011));
        assert_eq!(src.bits_consumed(), 4);
        assert_eq!(src.draw(1), None);
    }

    #[test]
    fn chacha_source_is_deterministic() {
        let mut a = ChaChaBitSource::new(42);
        let mut b = ChaChaBitSource::new(42);
        for _ in 0..200 {
            assert_eq!(a.next_bit(), b.next_bit());
        }
        assert_eq!(a.bits_consumed(), 200);
    }

    #[test]
    fn for_each_one_visits_ascending() {
        let buf = BitBuf::from_bits(&[false, true, false, false, true, true]);
        let mut seen = Vec::new();
        buf.for_each_one(|i| seen.push(i));
        assert_eq!(seen, vec![1, 4, 5]);
    }
}
