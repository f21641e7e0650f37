//! Toeplitz-hash privacy amplification and final key verification.
//!
//! A Toeplitz matrix with `n_rows x n_cols` entries is fixed by
//! `n_cols + n_rows - 1` seed bits: `T[i][j] = seed[i - j + n_cols - 1]`.
//! Reversing the input turns each output bit into the parity of a sliding
//! window of the seed against that reversed input,
//! `out[i] = parity(seed[i .. i + n_cols] & rev(input))`, which the fast path
//! evaluates a word at a time.

use rayon::prelude::*;
use thiserror::Error;

use crate::bits::{random_bits, BitError, BitString, SeededRng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrivacyError {
    #[error("toeplitz seed has {got} bits, expected n_cols + n_rows - 1 = {expected}")]
    SeedLength { got: usize, expected: usize },
    #[error("toeplitz output rows {n_rows} exceed input columns {n_cols}")]
    TooManyRows { n_rows: usize, n_cols: usize },
    #[error("input has {got} bits, matrix has {expected} columns")]
    InputLength { got: usize, expected: usize },
    #[error("negative or non-finite ratio r = {0}")]
    BadRatio(f64),
    #[error("verification check length {check_len} exceeds key length {key_len}")]
    CheckTooLong { check_len: usize, key_len: usize },
    #[error(transparent)]
    Bits(#[from] BitError),
}

/// Public description of one Toeplitz hash.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToeplitzSpec {
    n_cols: usize,
    n_rows: usize,
    seed_bits: BitString,
}

impl ToeplitzSpec {
    pub fn new(n_cols: usize, n_rows: usize, seed_bits: BitString) -> Result<Self, PrivacyError> {
        if n_rows > n_cols {
            return Err(PrivacyError::TooManyRows { n_rows, n_cols });
        }
        let expected = seed_len(n_cols, n_rows);
        if seed_bits.len() != expected {
            return Err(PrivacyError::SeedLength { got: seed_bits.len(), expected });
        }
        Ok(Self { n_cols, n_rows, seed_bits })
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn seed_bits(&self) -> &BitString {
        &self.seed_bits
    }

    /// `T[i][j]`.
    pub fn entry(&self, i: usize, j: usize) -> bool {
        self.seed_bits.bit(i + self.n_cols - 1 - j)
    }

    /// Seed announcement payload: n_cols (u64 LE), n_rows (u64 LE), then the
    /// seed bits in the length-prefixed bit-string encoding.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 + self.seed_bits.len().div_ceil(8));
        out.extend_from_slice(&(self.n_cols as u64).to_le_bytes());
        out.extend_from_slice(&(self.n_rows as u64).to_le_bytes());
        out.extend_from_slice(&self.seed_bits.to_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PrivacyError> {
        if bytes.len() < 16 {
            return Err(BitError::Truncated { needed: 16, have: bytes.len() }.into());
        }
        let n_cols = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
        let n_rows = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let (seed_bits, _) = BitString::from_bytes(&bytes[16..])?;
        Self::new(n_cols, n_rows, seed_bits)
    }
}

fn seed_len(n_cols: usize, n_rows: usize) -> usize {
    if n_rows == 0 {
        n_cols.saturating_sub(1)
    } else {
        n_cols + n_rows - 1
    }
}

/// Fresh public seed for compressing `n` bits to `floor(r n)`.
pub fn make_spec(n: usize, r: f64, rng: &mut SeededRng) -> Result<ToeplitzSpec, PrivacyError> {
    if !(r >= 0.0 && r.is_finite()) {
        return Err(PrivacyError::BadRatio(r));
    }
    let n_rows = (r * n as f64).floor() as usize;
    make_spec_rows(n, n_rows, rng)
}

pub fn make_spec_rows(n_cols: usize, n_rows: usize, rng: &mut SeededRng) -> Result<ToeplitzSpec, PrivacyError> {
    if n_rows > n_cols {
        return Err(PrivacyError::TooManyRows { n_rows, n_cols });
    }
    let seed = random_bits(seed_len(n_cols, n_rows), rng);
    ToeplitzSpec::new(n_cols, n_rows, seed)
}

fn reversed(input: &BitString) -> BitString {
    let n = input.len();
    BitString::from_bools((0..n).map(|k| input.bit(n - 1 - k)))
}

/// Word-aligned view of the seed shifted left by `shift` bits.
fn shifted_words(seed: &BitString, shift: usize) -> Vec<u64> {
    let w = seed.words();
    let mut out = Vec::with_capacity(w.len() + 1);
    for k in 0..w.len() {
        let lo = w[k] >> shift;
        let hi = if shift == 0 { 0 } else { w.get(k + 1).map_or(0, |x| x << (64 - shift)) };
        out.push(lo | hi);
    }
    out.push(0);
    out
}

/// `T * input` over GF(2).
pub fn toeplitz_hash(spec: &ToeplitzSpec, input: &BitString) -> Result<BitString, PrivacyError> {
    if input.len() != spec.n_cols {
        return Err(PrivacyError::InputLength { got: input.len(), expected: spec.n_cols });
    }
    if spec.n_rows == 0 {
        return Ok(BitString::new());
    }
    let rev = reversed(input);
    let rev_words = rev.words();
    let shifts: Vec<Vec<u64>> = (0..64.min(spec.n_rows)).map(|s| shifted_words(&spec.seed_bits, s)).collect();

    // Rows are independent; 64 at a time so each task fills one output word.
    let n_out_words = spec.n_rows.div_ceil(64);
    let words: Vec<u64> = (0..n_out_words)
        .into_par_iter()
        .map(|ow| {
            let mut word = 0u64;
            let rows = (spec.n_rows - ow * 64).min(64);
            for b in 0..rows {
                let i = ow * 64 + b;
                let window = &shifts[i % 64][i / 64..];
                let acc = rev_words.iter().zip(window).fold(0u64, |acc, (x, y)| acc ^ (x & y));
                word |= u64::from(acc.count_ones() & 1) << b;
            }
            word
        })
        .collect();
    Ok(BitString::from_words(words, spec.n_rows))
}

/// Dense matrix-vector product, one entry at a time.
pub fn toeplitz_hash_dense(spec: &ToeplitzSpec, input: &BitString) -> Result<BitString, PrivacyError> {
    if input.len() != spec.n_cols {
        return Err(PrivacyError::InputLength { got: input.len(), expected: spec.n_cols });
    }
    Ok(BitString::from_bools((0..spec.n_rows).map(|i| {
        (0..spec.n_cols).fold(false, |acc, j| acc ^ (spec.entry(i, j) & input.bit(j)))
    })))
}

pub const DEFAULT_CHECK_LEN: usize = 64;

/// Tag published by the verifying party: a `check_len`-bit Toeplitz hash of
/// the whole key under a fresh public seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerificationTag {
    pub spec: ToeplitzSpec,
    pub tag: BitString,
}

pub fn verification_tag(key: &BitString, check_len: usize, rng: &mut SeededRng) -> Result<VerificationTag, PrivacyError> {
    if check_len > key.len() {
        return Err(PrivacyError::CheckTooLong { check_len, key_len: key.len() });
    }
    let spec = make_spec_rows(key.len(), check_len, rng)?;
    let tag = toeplitz_hash(&spec, key)?;
    Ok(VerificationTag { spec, tag })
}

/// Checks a received tag against the local key.
pub fn verify_tag(key: &BitString, tag: &VerificationTag) -> Result<bool, PrivacyError> {
    Ok(toeplitz_hash(&tag.spec, key)? == tag.tag)
}

/// Both-sides check that two keys agree; `false` means abort.
pub fn verification_check(
    key_a: &BitString,
    key_b: &BitString,
    check_len: usize,
    rng: &mut SeededRng,
) -> Result<bool, PrivacyError> {
    if key_a.len() != key_b.len() {
        return Err(BitError::LengthMismatch { left: key_a.len(), right: key_b.len() }.into());
    }
    let tag = verification_tag(key_a, check_len, rng)?;
    verify_tag(key_b, &tag)
}
