//! BB84 orchestration: Alice and Bob as two sequential state machines that
//! only talk through their [`Endpoint`]s.
//!
//! Message flow for one batch:
//!
//! ```text
//! Alice                                  Bob
//!   PHOTON_BLOCK (emitted pulses)  ->        repeated per block until the
//!                                  <-  BASIS_ANNOUNCE (valid mask, bases)
//!   SIFT_INDICES (matched mask)    ->        accumulation target is met
//!   QBER_SAMPLE (positions, bits)  ->
//!                                  <-  QBER_VALUE (errors, sample size)
//!                                  <-  SYNDROME x sub-blocks
//!   TOEPLITZ_SEED | RETRY | ABORT  ->
//!   VERIFY_HASH                    ->
//!                                  <-  CONFIRM | ABORT
//! ```
//!
//! Bob's key is the reference: Alice decodes towards Bob's syndromes.

use std::fmt;
use std::time::Duration;

use rand::seq::index;
use thiserror::Error;

use crate::bits::{hamming_distance, random_bits, BitError, BitString, SeededRng};
use crate::finite_key::{self, FiniteKeyError, FiniteKeyParams, SecretFraction, SecurityBudget};
use crate::ldpc::{self, peg_construct, DegreeDistribution, LdpcError, SparseParityMatrix};
use crate::link::{memory_pair, Endpoint, Frame, LinkError, MsgType, Transport, DEFAULT_TIMEOUT};
use crate::privacy::{self, PrivacyError, ToeplitzSpec, VerificationTag};
use crate::source::{detect_pulses, emit_pulses, DetectionRecord, Emission, SourceError, SourceModel};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("choice {0} out of range 0..=3")]
    BadChoice(u8),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("peer aborted: {0}")]
    PeerAbort(String),
    #[error("final key verification failed")]
    VerificationFailed,
    #[error("sample fraction {0} leaves no bits to sample")]
    EmptySample(f64),
    #[error(transparent)]
    Bits(#[from] BitError),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Ldpc(#[from] LdpcError),
    #[error(transparent)]
    FiniteKey(#[from] FiniteKeyError),
    #[error(transparent)]
    Privacy(#[from] PrivacyError),
    #[error(transparent)]
    Link(#[from] LinkError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Basis {
    /// Horizontal / vertical.
    HV,
    /// Right / left circular.
    RL,
}

impl Basis {
    pub fn from_bit(b: bool) -> Self {
        if b {
            Basis::RL
        } else {
            Basis::HV
        }
    }

    pub fn bit(self) -> bool {
        self == Basis::RL
    }
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Basis::HV => "HV",
            Basis::RL => "RL",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarization {
    H,
    V,
    R,
    L,
}

/// `0 -> (HV, 0, H)`, `1 -> (HV, 1, V)`, `2 -> (RL, 0, R)`, `3 -> (RL, 1, L)`.
pub fn encode_choice(choice: u8) -> Result<(Basis, bool, Polarization), SessionError> {
    Ok(match choice {
        0 => (Basis::HV, false, Polarization::H),
        1 => (Basis::HV, true, Polarization::V),
        2 => (Basis::RL, false, Polarization::R),
        3 => (Basis::RL, true, Polarization::L),
        c => return Err(SessionError::BadChoice(c)),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Sifted {
    pub indices: Vec<u64>,
    pub alice_bits: BitString,
    pub bob_bits: BitString,
}

/// Keeps valid records whose bases agree, in pulse order.
pub fn sift(records: &[DetectionRecord]) -> Sifted {
    let mut out = Sifted::default();
    for r in records.iter().filter(|r| r.valid && r.alice_basis == r.bob_basis) {
        out.indices.push(r.pulse_index);
        out.alice_bits.push(r.alice_bit);
        out.bob_bits.push(r.bob_bit().expect("valid record has a bit"));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct QberEstimate {
    pub q_estimate: f64,
    pub m_used: usize,
    pub errors: usize,
    pub remaining_alice: BitString,
    pub remaining_bob: BitString,
}

/// `floor(len * fraction)` distinct positions, drawn uniformly, as a mask.
pub fn sample_mask(len: usize, fraction: f64, rng: &mut SeededRng) -> Result<BitString, SessionError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(SessionError::Config(format!("sample fraction {fraction} not in (0, 1)")));
    }
    let m = (len as f64 * fraction).floor() as usize;
    if m == 0 {
        return Err(SessionError::EmptySample(fraction));
    }
    let mut mask = BitString::zeros(len);
    for i in index::sample(rng, len, m) {
        mask.set(i, true)?;
    }
    Ok(mask)
}

/// Bits of `s` where `mask` is clear (`keep = false`) or set (`keep = true`).
fn select(s: &BitString, mask: &BitString, keep: bool) -> BitString {
    BitString::from_bools(s.iter().zip(mask.iter()).filter(|&(_, m)| m == keep).map(|(b, _)| b))
}

pub fn estimate_qber(
    alice_bits: &BitString,
    bob_bits: &BitString,
    sample_fraction: f64,
    rng: &mut SeededRng,
) -> Result<QberEstimate, SessionError> {
    if alice_bits.len() != bob_bits.len() {
        return Err(BitError::LengthMismatch { left: alice_bits.len(), right: bob_bits.len() }.into());
    }
    let mask = sample_mask(alice_bits.len(), sample_fraction, rng)?;
    let errors = hamming_distance(&select(alice_bits, &mask, true), &select(bob_bits, &mask, true))?;
    let m_used = mask.weight();
    Ok(QberEstimate {
        q_estimate: errors as f64 / m_used as f64,
        m_used,
        errors,
        remaining_alice: select(alice_bits, &mask, false),
        remaining_bob: select(bob_bits, &mask, false),
    })
}

/// Code construction and decoder settings shared by both parties.
#[derive(Debug, Clone, PartialEq)]
pub struct LdpcConfig {
    pub n_block: usize,
    pub code_rate: f64,
    pub distribution: DegreeDistribution,
    pub seed: u64,
    pub max_iters: usize,
    pub workers: usize,
}

impl Default for LdpcConfig {
    fn default() -> Self {
        Self {
            n_block: 10_000,
            code_rate: 0.5,
            distribution: DegreeDistribution::default_rate_half(),
            seed: 1,
            max_iters: 100,
            workers: 8,
        }
    }
}

impl LdpcConfig {
    pub fn build(&self) -> Result<SparseParityMatrix, LdpcError> {
        peg_construct(self.n_block, self.code_rate, &self.distribution, &mut SeededRng::new(self.seed))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub session_id: u64,
    pub block_pulses: usize,
    /// Valid detections to accumulate before post-processing.
    pub target_valid_bits: usize,
    /// When set, keep accumulating until the sifted key has this many bits
    /// and truncate it to exactly this length.
    pub sifted_key_length: Option<usize>,
    pub t_transmit: f64,
    pub t_process: f64,
    pub qber_sample_fraction: f64,
    pub security: SecurityBudget,
    pub ldpc: LdpcConfig,
    pub check_len: usize,
    /// Fresh batches to try after a reconciliation failure before aborting.
    pub max_retries: usize,
    pub timeout: Duration,
    /// Test hook: flip this bit of Bob's reconciled key.
    pub corrupt_reconciled_bit: Option<usize>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            session_id: 1,
            block_pulses: 1_000_000,
            target_valid_bits: 4_000_000,
            sifted_key_length: None,
            t_transmit: 2.0,
            t_process: 7.0,
            qber_sample_fraction: 0.5,
            security: SecurityBudget::default(),
            ldpc: LdpcConfig::default(),
            check_len: privacy::DEFAULT_CHECK_LEN,
            max_retries: 0,
            timeout: DEFAULT_TIMEOUT,
            corrupt_reconciled_bit: None,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self, model: &SourceModel) -> Result<(), SessionError> {
        model.validate()?;
        self.security.validate()?;
        let bad = |m: String| Err(SessionError::Config(m));
        if self.block_pulses == 0 {
            return bad("block_pulses must be positive".into());
        }
        if !(self.qber_sample_fraction > 0.0 && self.qber_sample_fraction < 1.0) {
            return bad(format!("qber_sample_fraction {} not in (0, 1)", self.qber_sample_fraction));
        }
        if !(self.t_transmit > 0.0) || !(self.t_process >= 0.0) {
            return bad("t_transmit must be positive and t_process nonnegative".into());
        }
        if model.clock_rate > 0.0 {
            let expected = self.block_pulses as f64 / model.clock_rate;
            if ((expected - self.t_transmit) / self.t_transmit).abs() > 1e-6 {
                return bad(format!(
                    "block of {} pulses at {} Hz lasts {expected} s, but t_transmit = {}",
                    self.block_pulses, model.clock_rate, self.t_transmit
                ));
            }
        }
        if self.ldpc.workers == 0 {
            return bad("ldpc workers must be >= 1".into());
        }
        if model.p_det == 0.0 {
            return bad("p_det = 0 never accumulates a key".into());
        }
        Ok(())
    }
}

/// Raw and bounded (zero processing delay) rates in bits/s.
pub fn compute_rates(raw_bits: u64, blocks: u64, config: &SessionConfig) -> Result<(f64, f64), SessionError> {
    if blocks == 0 {
        return Err(SessionError::Config("zero blocks".into()));
    }
    let b = blocks as f64;
    let raw = raw_bits as f64 / (b * (config.t_transmit + config.t_process));
    let bounded = raw_bits as f64 / (b * config.t_transmit);
    Ok((raw, bounded))
}

/// One row of results: the published run columns first, then counts.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionReport {
    pub clock_rate: f64,
    pub detection_rate: f64,
    pub raw_key_length: u64,
    pub raw_key_rate: f64,
    pub bounded_raw_key_rate: f64,
    pub qber: f64,
    pub secret_key_length: u64,
    pub secret_key_rate: f64,
    pub bounded_secret_key_rate: f64,
    pub blocks: u64,
    pub valid_detections: u64,
    pub sifted_bits: u64,
    pub m: u64,
    pub r_raw: f64,
    pub r: f64,
    pub syndrome_bits: u64,
    pub attempts: u32,
}

pub const REPORT_CSV_HEADER: &str = "clock_rate,detection_rate,raw_key_length,raw_key_rate,bounded_raw_key_rate,qber,\
secret_key_length,secret_key_rate,bounded_secret_key_rate,blocks,valid_detections,sifted_bits,m,r_raw,r,syndrome_bits,attempts";

impl SessionReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.clock_rate,
            self.detection_rate,
            self.raw_key_length,
            self.raw_key_rate,
            self.bounded_raw_key_rate,
            self.qber,
            self.secret_key_length,
            self.secret_key_rate,
            self.bounded_secret_key_rate,
            self.blocks,
            self.valid_detections,
            self.sifted_bits,
            self.m,
            self.r_raw,
            self.r,
            self.syndrome_bits,
            self.attempts
        )
    }
}

/// What one party walks away with.
#[derive(Debug, Clone)]
pub struct PartyOutcome {
    pub key: BitString,
    pub report: SessionReport,
    pub syndrome_bits: u64,
}

// ---- payload helpers ------------------------------------------------------

fn bitstrings(payload: &[u8], count: usize) -> Result<Vec<BitString>, SessionError> {
    let mut out = Vec::with_capacity(count);
    let mut at = 0;
    for _ in 0..count {
        let (s, used) = BitString::from_bytes(&payload[at..])?;
        at += used;
        out.push(s);
    }
    if at != payload.len() {
        return Err(SessionError::Protocol(format!("{} trailing payload bytes", payload.len() - at)));
    }
    Ok(out)
}

fn concat(parts: &[&BitString]) -> Vec<u8> {
    parts.iter().flat_map(|p| p.to_bytes()).collect()
}

fn u64_pair(payload: &[u8]) -> Result<(u64, u64), SessionError> {
    if payload.len() != 16 {
        return Err(SessionError::Protocol(format!("expected 16-byte payload, got {}", payload.len())));
    }
    Ok((
        u64::from_le_bytes(payload[..8].try_into().expect("8 bytes")),
        u64::from_le_bytes(payload[8..].try_into().expect("8 bytes")),
    ))
}

fn expect(ep: &mut Endpoint, want: &[MsgType]) -> Result<Frame, SessionError> {
    let f = ep.receive()?;
    if f.msg_type == MsgType::Abort {
        return Err(SessionError::PeerAbort(String::from_utf8_lossy(&f.payload).into_owned()));
    }
    if !want.contains(&f.msg_type) {
        let names: Vec<_> = want.iter().map(|t| t.name()).collect();
        return Err(SessionError::Protocol(format!("expected {}, got {}", names.join("|"), f.msg_type.name())));
    }
    Ok(f)
}

/// Runs `body`; on a local failure tells the peer before returning the error.
fn with_abort<T>(ep: &mut Endpoint, body: impl FnOnce(&mut Endpoint) -> Result<T, SessionError>) -> Result<T, SessionError> {
    let out = body(ep);
    if let Err(e) = &out {
        if !matches!(e, SessionError::PeerAbort(_) | SessionError::Link(_) | SessionError::VerificationFailed) {
            let _ = ep.send(MsgType::Abort, e.to_string().into_bytes());
        }
    }
    out
}

// ---- shared bookkeeping -----------------------------------------------------

#[derive(Debug, Default)]
struct Tally {
    blocks: u64,
    valid: u64,
    attempts: u32,
    syndrome_bits: u64,
}

fn keep_accumulating(cfg: &SessionConfig, valid: u64, sifted: usize) -> bool {
    valid < cfg.target_valid_bits as u64 || cfg.sifted_key_length.is_some_and(|l| sifted < l)
}

fn security(
    cfg: &SessionConfig,
    model: &SourceModel,
    n: usize,
    m: usize,
    q: f64,
    code_rate: f64,
) -> Result<SecretFraction, SessionError> {
    let a = finite_key::correction_a(model.p_det, model.p_det * model.multiphoton_ratio)?;
    let params = FiniteKeyParams::new(n as u64, m as u64, q.min(0.5), code_rate, a);
    Ok(finite_key::secret_fraction(&params, &cfg.security)?)
}

fn decoder_q(q: f64) -> f64 {
    q.clamp(1e-6, 0.499)
}

#[allow(clippy::too_many_arguments)]
fn report(
    cfg: &SessionConfig,
    model: &SourceModel,
    tally: &Tally,
    sifted: usize,
    n: usize,
    m: usize,
    q: f64,
    sf: &SecretFraction,
    key_len: usize,
) -> Result<SessionReport, SessionError> {
    let (raw, bounded) = compute_rates(n as u64, tally.blocks, cfg)?;
    let (sk, sk_bounded) = compute_rates(key_len as u64, tally.blocks, cfg)?;
    Ok(SessionReport {
        clock_rate: model.clock_rate,
        detection_rate: tally.valid as f64 / (tally.blocks as f64 * cfg.t_transmit),
        raw_key_length: n as u64,
        raw_key_rate: raw,
        bounded_raw_key_rate: bounded,
        qber: q,
        secret_key_length: key_len as u64,
        secret_key_rate: sk,
        bounded_secret_key_rate: sk_bounded,
        blocks: tally.blocks,
        valid_detections: tally.valid,
        sifted_bits: sifted as u64,
        m: m as u64,
        r_raw: sf.r_raw,
        r: sf.r,
        syndrome_bits: tally.syndrome_bits,
        attempts: tally.attempts,
    })
}

// ---- Alice ------------------------------------------------------------------

pub fn run_alice(
    cfg: &SessionConfig,
    model: &SourceModel,
    h: &SparseParityMatrix,
    ep: &mut Endpoint,
    rng: &mut SeededRng,
) -> Result<PartyOutcome, SessionError> {
    cfg.validate(model)?;
    with_abort(ep, |ep| alice_inner(cfg, model, h, ep, rng))
}

fn alice_inner(
    cfg: &SessionConfig,
    model: &SourceModel,
    h: &SparseParityMatrix,
    ep: &mut Endpoint,
    rng: &mut SeededRng,
) -> Result<PartyOutcome, SessionError> {
    let mut tally = Tally::default();
    loop {
        tally.attempts += 1;
        let mut key = BitString::new();
        let mut valid = 0u64;
        while keep_accumulating(cfg, valid, key.len()) {
            let raw = random_bits(2 * cfg.block_pulses, rng);
            let choices: Vec<u8> =
                (0..cfg.block_pulses).map(|i| u8::from(raw.bit(2 * i)) | u8::from(raw.bit(2 * i + 1)) << 1).collect();
            let emissions = emit_pulses(model, &choices, rng)?;
            ep.send(MsgType::PhotonBlock, emissions.iter().map(|e| e.to_byte()).collect())?;

            let f = expect(ep, &[MsgType::BasisAnnounce])?;
            let parts = bitstrings(&f.payload, 2)?;
            let (valid_mask, bob_bases) = (&parts[0], &parts[1]);
            if valid_mask.len() != cfg.block_pulses || bob_bases.len() != valid_mask.weight() {
                return Err(SessionError::Protocol("basis announcement has wrong shape".into()));
            }
            let mut matched = BitString::with_capacity(bob_bases.len());
            let mut k = 0;
            for (i, &choice) in choices.iter().enumerate() {
                if !valid_mask.bit(i) {
                    continue;
                }
                let (basis, bit, _) = encode_choice(choice)?;
                let same = basis.bit() == bob_bases.bit(k);
                matched.push(same);
                if same {
                    key.push(bit);
                }
                k += 1;
            }
            ep.send(MsgType::SiftIndices, matched.to_bytes())?;
            valid += bob_bases.len() as u64;
            tally.valid += bob_bases.len() as u64;
            tally.blocks += 1;
        }
        if let Some(l) = cfg.sifted_key_length {
            key.truncate(l);
        }
        let sifted = key.len();

        let mask = sample_mask(key.len(), cfg.qber_sample_fraction, rng)?;
        ep.send(MsgType::QberSample, concat(&[&mask, &select(&key, &mask, true)]))?;
        let (errors, m) = u64_pair(&expect(ep, &[MsgType::QberValue])?.payload)?;
        if m != mask.weight() as u64 {
            return Err(SessionError::Protocol(format!("peer sampled {m} bits, expected {}", mask.weight())));
        }
        let q = errors as f64 / m as f64;
        let key = select(&key, &mask, false);
        let n = key.len();
        let sf = security(cfg, model, n, m as usize, q, h.code_rate())?;
        if sf.r <= 0.0 {
            let rep = report(cfg, model, &tally, sifted, n, m as usize, q, &sf, 0)?;
            return Ok(PartyOutcome { key: BitString::new(), report: rep, syndrome_bits: tally.syndrome_bits });
        }

        let n_sub = n.div_ceil(h.n_cols());
        let mut syndromes = Vec::with_capacity(n_sub);
        for _ in 0..n_sub {
            let f = expect(ep, &[MsgType::Syndrome])?;
            let s = bitstrings(&f.payload, 1)?.remove(0);
            if s.len() != h.n_rows() {
                return Err(SessionError::Protocol(format!("syndrome of {} bits, code has {} rows", s.len(), h.n_rows())));
            }
            tally.syndrome_bits += s.len() as u64;
            syndromes.push(s);
        }
        let reconciled = match ldpc::reconcile(&key, &syndromes, h, decoder_q(q), cfg.ldpc.workers, cfg.ldpc.max_iters) {
            Ok(r) => r.key,
            Err(LdpcError::ReconciliationFailed { .. }) if (tally.attempts as usize) <= cfg.max_retries => {
                ep.send(MsgType::Retry, Vec::new())?;
                continue;
            }
            Err(e) => return Err(e.into()),
        };

        let spec = privacy::make_spec(n, sf.r, rng)?;
        ep.send(MsgType::ToeplitzSeed, spec.to_bytes())?;
        let final_key = privacy::toeplitz_hash(&spec, &reconciled)?;

        if !final_key.is_empty() {
            let tag = privacy::verification_tag(&final_key, cfg.check_len.min(final_key.len()), rng)?;
            ep.send(MsgType::VerifyHash, concat_tag(&tag))?;
            match ep.receive()? {
                f if f.msg_type == MsgType::Confirm => {}
                f if f.msg_type == MsgType::Abort => return Err(SessionError::VerificationFailed),
                f => return Err(SessionError::Protocol(format!("expected CONFIRM|ABORT, got {}", f.msg_type.name()))),
            }
        }
        let rep = report(cfg, model, &tally, sifted, n, m as usize, q, &sf, final_key.len())?;
        return Ok(PartyOutcome { key: final_key, report: rep, syndrome_bits: tally.syndrome_bits });
    }
}

fn concat_tag(tag: &VerificationTag) -> Vec<u8> {
    let mut out = tag.spec.to_bytes();
    out.extend_from_slice(&tag.tag.to_bytes());
    out
}

fn parse_tag(payload: &[u8]) -> Result<VerificationTag, SessionError> {
    // Spec bytes: two u64 then a length-prefixed bit string.
    if payload.len() < 24 {
        return Err(SessionError::Protocol("verification payload too short".into()));
    }
    let seed_len = u64::from_le_bytes(payload[16..24].try_into().expect("8 bytes")) as usize;
    let split = 24 + seed_len.div_ceil(8);
    if payload.len() < split {
        return Err(SessionError::Protocol("verification payload truncated".into()));
    }
    let spec = ToeplitzSpec::from_bytes(&payload[..split])?;
    let tag = bitstrings(&payload[split..], 1)?.remove(0);
    Ok(VerificationTag { spec, tag })
}

// ---- Bob --------------------------------------------------------------------

pub fn run_bob(
    cfg: &SessionConfig,
    model: &SourceModel,
    h: &SparseParityMatrix,
    ep: &mut Endpoint,
    rng: &mut SeededRng,
) -> Result<PartyOutcome, SessionError> {
    cfg.validate(model)?;
    with_abort(ep, |ep| bob_inner(cfg, model, h, ep, rng))
}

fn bob_inner(
    cfg: &SessionConfig,
    model: &SourceModel,
    h: &SparseParityMatrix,
    ep: &mut Endpoint,
    rng: &mut SeededRng,
) -> Result<PartyOutcome, SessionError> {
    let mut tally = Tally::default();
    loop {
        tally.attempts += 1;
        let mut key = BitString::new();
        let mut valid = 0u64;
        while keep_accumulating(cfg, valid, key.len()) {
            let f = expect(ep, &[MsgType::PhotonBlock])?;
            if f.payload.len() != cfg.block_pulses {
                return Err(SessionError::Protocol(format!("photon block of {} pulses", f.payload.len())));
            }
            let emissions: Vec<Emission> = f.payload.iter().map(|&b| Emission::from_byte(b)).collect::<Result<_, _>>()?;
            let bases = random_bits(cfg.block_pulses, rng);
            let detections = detect_pulses(model, &emissions, &bases, rng)?;
            let valid_mask = BitString::from_bools(detections.iter().map(|d| d.valid()));
            let valid_dets: Vec<_> = detections.iter().filter(|d| d.valid()).collect();
            let valid_bases = BitString::from_bools(valid_dets.iter().map(|d| d.bob_basis.bit()));
            ep.send(MsgType::BasisAnnounce, concat(&[&valid_mask, &valid_bases]))?;

            let matched = bitstrings(&expect(ep, &[MsgType::SiftIndices])?.payload, 1)?.remove(0);
            if matched.len() != valid_dets.len() {
                return Err(SessionError::Protocol("sift mask has wrong length".into()));
            }
            for (d, keep) in valid_dets.iter().zip(matched.iter()) {
                if keep {
                    key.push(d.bit().expect("valid"));
                }
            }
            valid += valid_dets.len() as u64;
            tally.valid += valid_dets.len() as u64;
            tally.blocks += 1;
        }
        if let Some(l) = cfg.sifted_key_length {
            key.truncate(l);
        }
        let sifted = key.len();

        let parts = bitstrings(&expect(ep, &[MsgType::QberSample])?.payload, 2)?;
        let (mask, alice_sample) = (&parts[0], &parts[1]);
        if mask.len() != key.len() || alice_sample.len() != mask.weight() {
            return Err(SessionError::Protocol("QBER sample has wrong shape".into()));
        }
        let errors = hamming_distance(&select(&key, mask, true), alice_sample)?;
        let m = alice_sample.len();
        let mut payload = (errors as u64).to_le_bytes().to_vec();
        payload.extend_from_slice(&(m as u64).to_le_bytes());
        ep.send(MsgType::QberValue, payload)?;
        let q = errors as f64 / m as f64;
        let mut key = select(&key, mask, false);
        let n = key.len();
        let sf = security(cfg, model, n, m, q, h.code_rate())?;
        if sf.r <= 0.0 {
            let rep = report(cfg, model, &tally, sifted, n, m, q, &sf, 0)?;
            return Ok(PartyOutcome { key: BitString::new(), report: rep, syndrome_bits: tally.syndrome_bits });
        }

        for s in ldpc::bob_syndromes(h, &key)? {
            tally.syndrome_bits += s.len() as u64;
            ep.send(MsgType::Syndrome, s.to_bytes())?;
        }
        let f = expect(ep, &[MsgType::ToeplitzSeed, MsgType::Retry])?;
        if f.msg_type == MsgType::Retry {
            continue;
        }
        if let Some(i) = cfg.corrupt_reconciled_bit {
            key.flip(i % n)?;
        }
        let spec = ToeplitzSpec::from_bytes(&f.payload)?;
        if spec.n_cols() != n {
            return Err(SessionError::Protocol(format!("toeplitz matrix has {} columns, key has {n}", spec.n_cols())));
        }
        let final_key = privacy::toeplitz_hash(&spec, &key)?;

        if !final_key.is_empty() {
            let tag = parse_tag(&expect(ep, &[MsgType::VerifyHash])?.payload)?;
            if !privacy::verify_tag(&final_key, &tag)? {
                ep.send(MsgType::Abort, b"verification hash mismatch".to_vec())?;
                return Err(SessionError::VerificationFailed);
            }
            ep.send(MsgType::Confirm, Vec::new())?;
        }
        let rep = report(cfg, model, &tally, sifted, n, m, q, &sf, final_key.len())?;
        return Ok(PartyOutcome { key: final_key, report: rep, syndrome_bits: tally.syndrome_bits });
    }
}

// ---- both parties in one process ------------------------------------------

#[derive(Debug, Clone)]
pub struct SessionOutput {
    pub secret_key_alice: BitString,
    pub secret_key_bob: BitString,
    pub report: SessionReport,
}

/// Runs Alice and Bob on two threads over the given transports.
pub fn run_session_over(
    config: &SessionConfig,
    model: &SourceModel,
    h: &SparseParityMatrix,
    link: (Box<dyn Transport>, Box<dyn Transport>),
    rng_a: &mut SeededRng,
    rng_b: &mut SeededRng,
) -> Result<SessionOutput, SessionError> {
    config.validate(model)?;
    let mut ep_a = Endpoint::new(link.0, config.session_id);
    let mut ep_b = Endpoint::new(link.1, config.session_id);
    let (a, b) = std::thread::scope(|s| {
        let bob = s.spawn(|| run_bob(config, model, h, &mut ep_b, rng_b));
        let alice = run_alice(config, model, h, &mut ep_a, rng_a);
        (alice, bob.join().expect("bob thread panicked"))
    });
    let (a, b) = match (a, b) {
        (Ok(a), Ok(b)) => (a, b),
        // Prefer the side that saw the failure first-hand.
        (Err(SessionError::PeerAbort(_)), Err(e)) | (Err(e), _) | (_, Err(e)) => return Err(e),
    };
    if a.key != b.key {
        return Err(SessionError::VerificationFailed);
    }
    debug_assert_eq!(a.report, b.report);
    Ok(SessionOutput { secret_key_alice: a.key, secret_key_bob: b.key, report: a.report })
}

/// In-process session with a fresh in-memory link and a freshly built code.
pub fn run_session(
    config: &SessionConfig,
    model: &SourceModel,
    rng_a: &mut SeededRng,
    rng_b: &mut SeededRng,
) -> Result<SessionOutput, SessionError> {
    let h = config.ldpc.build()?;
    let (ta, tb) = memory_pair(config.timeout);
    run_session_over(config, model, &h, (Box::new(ta), Box::new(tb)), rng_a, rng_b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::simulate_pulse_train;
    use rand::Rng;

    #[test]
    fn choice_table() {
        assert_eq!(encode_choice(0).unwrap(), (Basis::HV, false, Polarization::H));
        assert_eq!(encode_choice(1).unwrap(), (Basis::HV, true, Polarization::V));
        assert_eq!(encode_choice(2).unwrap(), (Basis::RL, false, Polarization::R));
        assert_eq!(encode_choice(3).unwrap(), (Basis::RL, true, Polarization::L));
        assert!(matches!(encode_choice(4), Err(SessionError::BadChoice(4))));
    }

    fn records(n: usize, matched: Option<bool>, seed: u64) -> Vec<DetectionRecord> {
        let model = SourceModel { p_det: 1.0, multiphoton_ratio: 0.0, pol_error_prob: 0.0, ..Default::default() };
        let mut rng = SeededRng::new(seed);
        let ch: Vec<u8> = (0..n).map(|_| rng.random_range(0..4u8)).collect();
        let bases = match matched {
            Some(true) => BitString::from_bools(ch.iter().map(|&c| c >= 2)),
            Some(false) => BitString::from_bools(ch.iter().map(|&c| c < 2)),
            None => random_bits(n, &mut rng),
        };
        simulate_pulse_train(&model, n, &ch, &bases, &mut rng).unwrap()
    }

    #[test]
    fn sift_examples() {
        let all = records(1000, Some(true), 1);
        let s = sift(&all);
        assert_eq!(s.indices.len(), 1000);
        assert_eq!(s.alice_bits, s.bob_bits);
        assert!(sift(&records(1000, Some(false), 2)).indices.is_empty());
        let n = 1_000_000;
        let kept = sift(&records(n, None, 3)).indices.len() as f64 / n as f64;
        assert!((kept - 0.5).abs() <= 3.0 * (0.25 / n as f64).sqrt(), "{kept}");
    }

    #[test]
    fn sift_drops_invalid_records() {
        let mut recs = records(10, Some(true), 4);
        recs[3].valid = false;
        recs[3].clicks = (true, true);
        let s = sift(&recs);
        assert_eq!(s.indices, vec![0, 1, 2, 4, 5, 6, 7, 8, 9]);
    }

    #[test]
    fn qber_examples() {
        let mut rng = SeededRng::new(5);
        let a = random_bits(1000, &mut rng);
        let e = estimate_qber(&a, &a, 0.5, &mut rng).unwrap();
        assert_eq!((e.q_estimate, e.m_used), (0.0, 500));
        let inv = crate::bits::xor(&a, &BitString::ones(1000)).unwrap();
        let e = estimate_qber(&a, &inv, 0.5, &mut rng).unwrap();
        assert_eq!(e.q_estimate, 1.0);
        assert_eq!(e.remaining_alice.len(), 500);
        assert!(estimate_qber(&a, &a.slice(0, 10).unwrap(), 0.5, &mut rng).is_err());
        assert!(matches!(
            estimate_qber(&a.slice(0, 1).unwrap(), &a.slice(0, 1).unwrap(), 0.5, &mut rng),
            Err(SessionError::EmptySample(_))
        ));
        assert!(estimate_qber(&a, &a, 1.0, &mut rng).is_err());
    }

    #[test]
    fn qber_concentrates_and_removal_is_aligned() {
        let n = 2_000_000;
        let q = 0.06;
        let mut rng = SeededRng::new(6);
        let a = random_bits(n, &mut rng);
        let b = BitString::from_bools(a.iter().map(|x| x ^ crate::bits::bernoulli(&mut rng, q)));
        let e = estimate_qber(&a, &b, 0.5, &mut rng).unwrap();
        let tol = 3.0 * (q * (1.0 - q) / 1e6).sqrt();
        assert!((e.q_estimate - q).abs() <= tol, "{}", e.q_estimate);
        assert_eq!(e.remaining_alice.len(), e.remaining_bob.len());
        let rest = hamming_distance(&e.remaining_alice, &e.remaining_bob).unwrap() as f64 / e.remaining_bob.len() as f64;
        assert!((rest - e.q_estimate).abs() <= 2.0 * tol);
    }

    #[test]
    fn rates_from_published_runs() {
        let cfg = SessionConfig::default();
        // A raw rate of 88 bits/s over 9 s per block is 792 bits per block.
        let (raw, bounded) = compute_rates(792, 1, &cfg).unwrap();
        assert!((raw - 88.0).abs() < 1e-9 && (bounded - 396.0).abs() < 1e-9);
        let (raw, bounded) = compute_rates(504, 1, &cfg).unwrap();
        assert!((raw - 56.0).abs() < 1e-9 && (bounded - 252.0).abs() < 1e-9);
        let zero_delay = SessionConfig { t_process: 0.0, ..Default::default() };
        let (raw, bounded) = compute_rates(1234, 3, &zero_delay).unwrap();
        assert_eq!(raw, bounded);
        assert!(compute_rates(1, 0, &cfg).is_err());
    }

    #[test]
    fn config_validation() {
        let model = SourceModel::default();
        assert!(SessionConfig::default().validate(&model).is_ok());
        let mismatched = SessionConfig { block_pulses: 1000, ..Default::default() };
        assert!(mismatched.validate(&model).is_err());
        let frac = SessionConfig { qber_sample_fraction: 0.0, ..Default::default() };
        assert!(frac.validate(&model).is_err());
    }
}
