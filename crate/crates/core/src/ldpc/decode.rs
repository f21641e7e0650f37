//! Sum-product syndrome decoding over a binary symmetric channel.
//!
//! Log-likelihoods are positive for bit 0. A check with target syndrome bit 1
//! flips the sign of its outgoing messages. All messages are clipped to
//! [`LLR_CLIP`].

use super::{syndrome, LdpcError, SparseParityMatrix};
use crate::bits::BitString;

pub const LLR_CLIP: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoderConfig {
    pub max_iters: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self { max_iters: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeResult {
    pub corrected: BitString,
    pub converged: bool,
    pub iterations: usize,
    pub syndrome_matched: bool,
}

#[inline]
fn clip(x: f64) -> f64 {
    x.clamp(-LLR_CLIP, LLR_CLIP)
}

/// `2 atanh(p)`; `p = +-1` yields `+-inf`, which the caller clips.
#[inline]
fn atanh2(p: f64) -> f64 {
    ((1.0 + p) / (1.0 - p)).ln()
}

fn check_dims(h: &SparseParityMatrix, received: &BitString, target: &BitString, q: f64) -> Result<(), LdpcError> {
    if received.len() != h.n_cols() {
        return Err(LdpcError::Dimension { what: "received", got: received.len(), expected: h.n_cols() });
    }
    if target.len() != h.n_rows() {
        return Err(LdpcError::Dimension { what: "target_syndrome", got: target.len(), expected: h.n_rows() });
    }
    if !(q > 0.0 && q < 0.5) {
        return Err(LdpcError::BadParameters(format!("crossover probability {q} not in (0, 0.5)")));
    }
    Ok(())
}

pub(crate) fn channel_llrs(received: &BitString, q: f64, known: usize) -> Vec<f64> {
    let mag = ((1.0 - q) / q).ln().min(LLR_CLIP);
    // The trailing `known` positions are public padding.
    let first_known = received.len() - known;
    (0..received.len())
        .map(|i| {
            let m = if i >= first_known { LLR_CLIP } else { mag };
            if received.bit(i) {
                -m
            } else {
                m
            }
        })
        .collect()
}

fn hard_decision(llr: &[f64]) -> BitString {
    BitString::from_bools(llr.iter().map(|&l| l < 0.0))
}

fn finish(h: &SparseParityMatrix, llr: &[f64], target: &BitString, iterations: usize) -> (DecodeResult, bool) {
    let corrected = hard_decision(llr);
    let matched = syndrome(h, &corrected).expect("dimensions checked") == *target;
    (DecodeResult { corrected, converged: matched, iterations, syndrome_matched: matched }, matched)
}

/// Extrinsic check messages for one check from its incoming messages.
#[inline]
fn check_update(incoming: &[f64], flip: bool, out: &mut [f64], scratch: &mut Vec<f64>) {
    let d = incoming.len();
    scratch.clear();
    scratch.extend(incoming.iter().map(|&t| (0.5 * t).tanh()));
    // Prefix/suffix products exclude each edge without dividing.
    let sign = if flip { -1.0 } else { 1.0 };
    let mut prefix = 1.0;
    for i in 0..d {
        out[i] = prefix;
        prefix *= scratch[i];
    }
    let mut suffix = 1.0;
    for i in (0..d).rev() {
        out[i] = clip(sign * atanh2(out[i] * suffix));
        suffix *= scratch[i];
    }
}

/// Layered schedule: checks are processed one at a time and each one's
/// updated messages are folded into the variable posteriors immediately.
pub fn decode_bp_serial(
    h: &SparseParityMatrix,
    received: &BitString,
    target_syndrome: &BitString,
    q: f64,
    max_iters: usize,
) -> Result<DecodeResult, LdpcError> {
    decode_serial_with_known(h, received, target_syndrome, q, max_iters, 0)
}

pub(crate) fn decode_serial_with_known(
    h: &SparseParityMatrix,
    received: &BitString,
    target: &BitString,
    q: f64,
    max_iters: usize,
    known: usize,
) -> Result<DecodeResult, LdpcError> {
    check_dims(h, received, target, q)?;
    let mut posterior = channel_llrs(received, q, known);
    let (res, done) = finish(h, &posterior, target, 0);
    if done || max_iters == 0 {
        return Ok(res);
    }
    let offsets: Vec<usize> = std::iter::once(0)
        .chain(h.rows().iter().scan(0, |acc, r| {
            *acc += r.len();
            Some(*acc)
        }))
        .collect();
    let mut msgs = vec![0.0f64; h.n_edges()];
    let mut extrinsic = Vec::new();
    let mut incoming = Vec::new();
    let mut outgoing = Vec::new();
    let mut scratch = Vec::new();
    for iter in 1..=max_iters {
        for (c, row) in h.rows().iter().enumerate() {
            let edges = &mut msgs[offsets[c]..offsets[c + 1]];
            extrinsic.clear();
            extrinsic.extend(row.iter().zip(edges.iter()).map(|(&v, &m)| posterior[v as usize] - m));
            // Only the check input is clipped; the posterior keeps the exact
            // sum of channel value and check messages.
            incoming.clear();
            incoming.extend(extrinsic.iter().map(|&x| clip(x)));
            outgoing.resize(row.len(), 0.0);
            check_update(&incoming, target.bit(c), &mut outgoing, &mut scratch);
            for (k, &v) in row.iter().enumerate() {
                edges[k] = outgoing[k];
                posterior[v as usize] = extrinsic[k] + outgoing[k];
            }
        }
        let (res, done) = finish(h, &posterior, target, iter);
        if done || iter == max_iters {
            return Ok(res);
        }
    }
    unreachable!("loop returns on the last iteration")
}

/// Flooding schedule: every check updates from the same snapshot, then every
/// variable. Used as the comparison baseline for the layered decoder.
pub fn decode_bp_flooding(
    h: &SparseParityMatrix,
    received: &BitString,
    target_syndrome: &BitString,
    q: f64,
    max_iters: usize,
) -> Result<DecodeResult, LdpcError> {
    check_dims(h, received, target_syndrome, q)?;
    let channel = channel_llrs(received, q, 0);
    let mut posterior = channel.clone();
    let (res, done) = finish(h, &posterior, target_syndrome, 0);
    if done || max_iters == 0 {
        return Ok(res);
    }
    let mut msgs: Vec<Vec<f64>> = h.rows().iter().map(|r| vec![0.0; r.len()]).collect();
    let mut incoming = Vec::new();
    let mut scratch = Vec::new();
    for iter in 1..=max_iters {
        for (c, row) in h.rows().iter().enumerate() {
            incoming.clear();
            incoming.extend(row.iter().zip(&msgs[c]).map(|(&v, &m)| clip(posterior[v as usize] - m)));
            let mut out = vec![0.0; row.len()];
            check_update(&incoming, target_syndrome.bit(c), &mut out, &mut scratch);
            msgs[c] = out;
        }
        posterior.copy_from_slice(&channel);
        for (row, m) in h.rows().iter().zip(&msgs) {
            for (&v, &x) in row.iter().zip(m) {
                posterior[v as usize] += x;
            }
        }
        let (res, done) = finish(h, &posterior, target_syndrome, iter);
        if done || iter == max_iters {
            return Ok(res);
        }
    }
    unreachable!("loop returns on the last iteration")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::{bernoulli, random_bits, xor, SeededRng};
    use crate::ldpc::{peg_construct, DegreeDistribution};

    fn small() -> SparseParityMatrix {
        SparseParityMatrix::from_rows(6, vec![vec![0, 1, 3], vec![1, 2, 4], vec![0, 2, 5]], 0.5).unwrap()
    }

    /// Minimum-weight error pattern(s) `e` with `H e = s`, by enumeration.
    fn coset_leaders(h: &SparseParityMatrix, s: &BitString) -> (usize, Vec<BitString>) {
        let n = h.n_cols();
        let mut best = usize::MAX;
        let mut leaders = Vec::new();
        for v in 0u32..(1 << n) {
            let e = BitString::from_bools((0..n).map(|i| v >> i & 1 == 1));
            if syndrome(h, &e).unwrap() != *s {
                continue;
            }
            let w = e.weight();
            if w < best {
                best = w;
                leaders.clear();
            }
            if w == best {
                leaders.push(e);
            }
        }
        (best, leaders)
    }

    fn bsc(x: &BitString, q: f64, rng: &mut SeededRng) -> BitString {
        BitString::from_bools(x.iter().map(|b| b ^ bernoulli(rng, q)))
    }

    #[test]
    fn consistent_input_returns_immediately() {
        let h = peg_construct(200, 0.5, &DegreeDistribution::default_rate_half(), &mut SeededRng::new(1)).unwrap();
        let x = random_bits(200, &mut SeededRng::new(2));
        let s = syndrome(&h, &x).unwrap();
        let r = decode_bp_serial(&h, &x, &s, 0.06, 100).unwrap();
        assert!(r.converged && r.iterations <= 1);
        assert_eq!(r.corrected, x);
    }

    #[test]
    fn single_flips_match_exhaustive_ml_on_explicit_code() {
        let h = small();
        let mut rng = SeededRng::new(5);
        for _ in 0..8 {
            let bob = random_bits(6, &mut rng);
            let s_bob = syndrome(&h, &bob).unwrap();
            for pos in 0..6 {
                let mut alice = bob.clone();
                alice.flip(pos).unwrap();
                let diff = xor(&syndrome(&h, &alice).unwrap(), &s_bob).unwrap();
                let (w, leaders) = coset_leaders(&h, &diff);
                assert_eq!((w, leaders.len()), (1, 1));
                let ml = xor(&alice, &leaders[0]).unwrap();
                let r = decode_bp_serial(&h, &alice, &s_bob, 0.06, 50).unwrap();
                assert!(r.converged);
                assert_eq!(r.corrected, ml);
                assert_eq!(r.corrected, bob);
            }
        }
    }

    #[test]
    fn eight_bit_peg_code_agrees_with_ml_where_unique() {
        let h = peg_construct(8, 0.5, &DegreeDistribution::regular(3, 6), &mut SeededRng::new(1)).unwrap();
        let mut rng = SeededRng::new(6);
        for _ in 0..10 {
            let bob = random_bits(8, &mut rng);
            let s_bob = syndrome(&h, &bob).unwrap();
            for pos in 0..8 {
                let mut alice = bob.clone();
                alice.flip(pos).unwrap();
                let diff = xor(&syndrome(&h, &alice).unwrap(), &s_bob).unwrap();
                let (_, leaders) = coset_leaders(&h, &diff);
                let r = decode_bp_serial(&h, &alice, &s_bob, 0.06, 50).unwrap();
                if r.converged {
                    assert_eq!(syndrome(&h, &r.corrected).unwrap(), s_bob);
                }
                if leaders.len() == 1 {
                    assert_eq!(r.corrected, xor(&alice, &leaders[0]).unwrap());
                }
            }
        }
    }

    #[test]
    fn failure_contract_at_high_noise() {
        let h = peg_construct(1000, 0.5, &DegreeDistribution::default_rate_half(), &mut SeededRng::new(9)).unwrap();
        let mut rng = SeededRng::new(10);
        for _ in 0..5 {
            let a = random_bits(1000, &mut rng);
            let b = random_bits(1000, &mut rng);
            let r = decode_bp_serial(&h, &a, &syndrome(&h, &b).unwrap(), 0.45, 5).unwrap();
            assert_eq!(r.converged, r.syndrome_matched);
            if !r.converged {
                assert_ne!(syndrome(&h, &r.corrected).unwrap(), syndrome(&h, &b).unwrap());
            }
            assert!(r.iterations <= 5);
        }
    }

    #[test]
    fn moderate_noise_decodes() {
        let n = 4000;
        let h = peg_construct(n, 0.5, &DegreeDistribution::default_rate_half(), &mut SeededRng::new(12)).unwrap();
        let mut rng = SeededRng::new(13);
        let mut ok = 0;
        for _ in 0..20 {
            let bob = random_bits(n, &mut rng);
            let alice = bsc(&bob, 0.04, &mut rng);
            let s = syndrome(&h, &bob).unwrap();
            let r = decode_bp_serial(&h, &alice, &s, 0.04, 100).unwrap();
            if r.converged {
                assert_eq!(syndrome(&h, &r.corrected).unwrap(), s);
                ok += usize::from(r.corrected == bob);
            }
        }
        assert!(ok >= 19, "{ok}/20");
    }

    #[test]
    fn serial_converges_at_least_as_often_as_flooding() {
        let n = 2000;
        let iters = 12;
        let h = peg_construct(n, 0.5, &DegreeDistribution::default_rate_half(), &mut SeededRng::new(20)).unwrap();
        let mut rng = SeededRng::new(21);
        let (mut serial, mut flood) = (0, 0);
        for _ in 0..40 {
            let bob = random_bits(n, &mut rng);
            let alice = bsc(&bob, 0.065, &mut rng);
            let s = syndrome(&h, &bob).unwrap();
            serial += usize::from(decode_bp_serial(&h, &alice, &s, 0.065, iters).unwrap().converged);
            flood += usize::from(decode_bp_flooding(&h, &alice, &s, 0.065, iters).unwrap().converged);
        }
        assert!(serial >= flood, "serial {serial} < flooding {flood}");
    }

    #[test]
    fn dimension_errors() {
        let h = small();
        assert!(decode_bp_serial(&h, &BitString::zeros(5), &BitString::zeros(3), 0.1, 10).is_err());
        assert!(decode_bp_serial(&h, &BitString::zeros(6), &BitString::zeros(2), 0.1, 10).is_err());
        assert!(decode_bp_serial(&h, &BitString::zeros(6), &BitString::zeros(3), 0.5, 10).is_err());
        assert!(decode_bp_flooding(&h, &BitString::zeros(6), &BitString::zeros(4), 0.1, 10).is_err());
    }
}
