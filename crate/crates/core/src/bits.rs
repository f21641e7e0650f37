//! Packed bit strings, seeded randomness and GF(2) helpers.
//!
//! Bit `i` of a [`BitString`] lives in word `i / 64` at bit position `i % 64`
//! (little-endian within each word), so index 0 is the first transmitted bit.
//! The byte serialization follows the same rule: bit `i` is bit `i % 8` of
//! byte `i / 8`.

use std::fmt;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BitError {
    #[error("length mismatch: {left} vs {right} bits")]
    LengthMismatch { left: usize, right: usize },
    #[error("bit index {index} out of range for length {len}")]
    OutOfRange { index: usize, len: usize },
    #[error("serialized bit string truncated: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("serialized bit string has nonzero padding bits")]
    DirtyPadding,
}

const WORD: usize = 64;

#[inline]
fn words_for(len: usize) -> usize {
    len.div_ceil(WORD)
}

/// A sequence of bits with an exact length.
///
/// Padding bits in the final word are kept at zero, so derived equality and
/// hashing only see the `len` addressable bits.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct BitString {
    words: Vec<u64>,
    len: usize,
}

impl BitString {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn zeros(len: usize) -> Self {
        Self { words: vec![0; words_for(len)], len }
    }

    pub fn ones(len: usize) -> Self {
        let mut s = Self { words: vec![u64::MAX; words_for(len)], len };
        s.clear_padding();
        s
    }

    pub fn with_capacity(bits: usize) -> Self {
        Self { words: Vec::with_capacity(words_for(bits)), len: 0 }
    }

    /// Builds from raw words; bits beyond `len` are cleared.
    pub fn from_words(mut words: Vec<u64>, len: usize) -> Self {
        words.resize(words_for(len), 0);
        let mut s = Self { words, len };
        s.clear_padding();
        s
    }

    pub fn from_bools<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let mut s = Self::new();
        for b in bits {
            s.push(b);
        }
        s
    }

    /// Parses a string of `'0'`/`'1'` characters; other characters are skipped.
    pub fn from_bit_str(text: &str) -> Self {
        Self::from_bools(text.chars().filter_map(|c| match c {
            '0' => Some(false),
            '1' => Some(true),
            _ => None,
        }))
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    fn clear_padding(&mut self) {
        let rem = self.len % WORD;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    pub fn get(&self, index: usize) -> Result<bool, BitError> {
        if index >= self.len {
            return Err(BitError::OutOfRange { index, len: self.len });
        }
        Ok(self.bit(index))
    }

    /// Unchecked-by-`Result` access; panics when out of range.
    #[inline]
    pub fn bit(&self, index: usize) -> bool {
        assert!(index < self.len, "bit index {index} out of range for length {}", self.len);
        (self.words[index / WORD] >> (index % WORD)) & 1 == 1
    }

    pub fn set(&mut self, index: usize, value: bool) -> Result<(), BitError> {
        if index >= self.len {
            return Err(BitError::OutOfRange { index, len: self.len });
        }
        let mask = 1u64 << (index % WORD);
        if value {
            self.words[index / WORD] |= mask;
        } else {
            self.words[index / WORD] &= !mask;
        }
        Ok(())
    }

    pub fn flip(&mut self, index: usize) -> Result<(), BitError> {
        if index >= self.len {
            return Err(BitError::OutOfRange { index, len: self.len });
        }
        self.words[index / WORD] ^= 1u64 << (index % WORD);
        Ok(())
    }

    pub fn push(&mut self, value: bool) {
        if self.len.is_multiple_of(WORD) {
            self.words.push(0);
        }
        if value {
            self.words[self.len / WORD] |= 1u64 << (self.len % WORD);
        }
        self.len += 1;
    }

    pub fn extend_from(&mut self, other: &BitString) {
        if self.len.is_multiple_of(WORD) {
            self.words.extend_from_slice(&other.words);
            self.len += other.len;
            return;
        }
        for b in other.iter() {
            self.push(b);
        }
    }

    pub fn truncate(&mut self, len: usize) {
        if len >= self.len {
            return;
        }
        self.len = len;
        self.words.truncate(words_for(len));
        self.clear_padding();
    }

    /// Copy of bits `[start, start + len)`.
    pub fn slice(&self, start: usize, len: usize) -> Result<BitString, BitError> {
        let end = start.checked_add(len).ok_or(BitError::OutOfRange { index: usize::MAX, len: self.len })?;
        if end > self.len {
            return Err(BitError::OutOfRange { index: end - 1, len: self.len });
        }
        if start.is_multiple_of(WORD) {
            let w0 = start / WORD;
            return Ok(Self::from_words(self.words[w0..w0 + words_for(len)].to_vec(), len));
        }
        Ok(Self::from_bools((start..end).map(|i| self.bit(i))))
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.bit(i))
    }

    /// Number of set bits.
    pub fn weight(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Parity of the bitwise AND with `other` (the GF(2) inner product).
    pub fn dot(&self, other: &BitString) -> Result<bool, BitError> {
        check_len(self, other)?;
        let acc = self.words.iter().zip(&other.words).fold(0u64, |acc, (a, b)| acc ^ (a & b));
        Ok(acc.count_ones() & 1 == 1)
    }

    /// Length-prefixed byte serialization: 64-bit LE length, then
    /// `ceil(len / 8)` bytes with the final byte's high bits zero.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n_bytes = self.len.div_ceil(8);
        let mut out = Vec::with_capacity(8 + n_bytes);
        out.extend_from_slice(&(self.len as u64).to_le_bytes());
        out.extend(self.words.iter().flat_map(|w| w.to_le_bytes()).take(n_bytes));
        out
    }

    /// Inverse of [`to_bytes`](Self::to_bytes). Returns the string and the
    /// number of bytes consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<(BitString, usize), BitError> {
        if bytes.len() < 8 {
            return Err(BitError::Truncated { needed: 8, have: bytes.len() });
        }
        let len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
        let n_bytes = len.div_ceil(8);
        let needed = 8usize.checked_add(n_bytes).ok_or(BitError::Truncated { needed: usize::MAX, have: bytes.len() })?;
        if bytes.len() < needed {
            return Err(BitError::Truncated { needed, have: bytes.len() });
        }
        let body = &bytes[8..needed];
        if !len.is_multiple_of(8) && body[n_bytes - 1] >> (len % 8) != 0 {
            return Err(BitError::DirtyPadding);
        }
        let words = body
            .chunks(8)
            .map(|c| {
                let mut w = [0u8; 8];
                w[..c.len()].copy_from_slice(c);
                u64::from_le_bytes(w)
            })
            .collect();
        Ok((Self::from_words(words, len), needed))
    }

    /// Raw packed bytes without the length prefix (bit `i` at byte `i / 8`, bit `i % 8`).
    pub fn to_packed_bytes(&self) -> Vec<u8> {
        self.words.iter().flat_map(|w| w.to_le_bytes()).take(self.len.div_ceil(8)).collect()
    }

    pub fn from_packed_bytes(bytes: &[u8]) -> Self {
        let words = bytes
            .chunks(8)
            .map(|c| {
                let mut w = [0u8; 8];
                w[..c.len()].copy_from_slice(c);
                u64::from_le_bytes(w)
            })
            .collect();
        Self::from_words(words, bytes.len() * 8)
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len <= 128 {
            write!(f, "BitString({self})")
        } else {
            write!(f, "BitString(len={}, weight={})", self.len, self.weight())
        }
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.iter() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

fn check_len(a: &BitString, b: &BitString) -> Result<(), BitError> {
    if a.len != b.len {
        return Err(BitError::LengthMismatch { left: a.len, right: b.len });
    }
    Ok(())
}

pub fn xor(a: &BitString, b: &BitString) -> Result<BitString, BitError> {
    check_len(a, b)?;
    let words = a.words.iter().zip(&b.words).map(|(x, y)| x ^ y).collect();
    Ok(BitString { words, len: a.len })
}

pub fn hamming_distance(a: &BitString, b: &BitString) -> Result<usize, BitError> {
    check_len(a, b)?;
    Ok(a.words.iter().zip(&b.words).map(|(x, y)| (x ^ y).count_ones() as usize).sum())
}

/// Name recorded in reports for the generator behind [`SeededRng`].
pub const RNG_ALGORITHM: &str = "ChaCha20 (rand_chacha, seed_from_u64)";

/// Deterministic generator: identical seeds give identical streams on every
/// platform.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha20Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self { seed, inner: ChaCha20Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn algorithm(&self) -> &'static str {
        RNG_ALGORITHM
    }

    /// Independent child stream, used to hand disjoint work to other owners.
    pub fn fork(&mut self) -> SeededRng {
        SeededRng::new(self.inner.next_u64())
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// `count` uniformly random bits, one 64-bit draw per storage word.
pub fn random_bits(count: usize, rng: &mut SeededRng) -> BitString {
    let words = (0..words_for(count)).map(|_| rng.next_u64()).collect();
    BitString::from_words(words, count)
}

/// Bernoulli draw helper shared by the simulators.
#[inline]
pub(crate) fn bernoulli(rng: &mut SeededRng, p: f64) -> bool {
    if p <= 0.0 {
        false
    } else if p >= 1.0 {
        true
    } else {
        rng.random_bool(p)
    }
}
