//! Single-photon source, free-space channel and gated detector simulation.
//!
//! The simulation is split the way the hardware is: Alice's side decides per
//! pulse whether a photon reaches Bob at all and whether it carried more than
//! one photon ([`emit_pulses`]); Bob's side turns those arrivals into clicks on
//! his two APDs given his basis choice ([`detect_pulses`]). A 40 ns gate is one
//! dark-click Bernoulli trial per detector per pulse.

use std::fmt::Write as _;

use thiserror::Error;

use crate::bits::{bernoulli, BitString, SeededRng};
use crate::session::{encode_choice, Basis};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SourceError {
    #[error("invalid source model: {0}")]
    InvalidModel(String),
    #[error("length mismatch: {what} has {got}, expected {expected}")]
    LengthMismatch { what: &'static str, got: usize, expected: usize },
    #[error("alice choice {0} out of range 0..=3")]
    BadChoice(u8),
    #[error("negative optical power {0}")]
    NegativePower(f64),
    #[error("saturation power must be positive, got {0}")]
    BadSaturationPower(f64),
    #[error("no detected pulses to estimate from")]
    NoDetections,
    #[error("malformed emission byte {0:#04x}")]
    BadEmission(u8),
}

/// Source, channel and detector parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceModel {
    /// Pulses per second.
    pub clock_rate: f64,
    /// Probability Bob registers at least one photon in a pulse.
    pub p_det: f64,
    /// P_m / p_det.
    pub multiphoton_ratio: f64,
    /// Dark-click probability per detector per gate.
    pub dark_count_prob: f64,
    /// Probability a matched-basis photon exits the wrong PBS port.
    pub pol_error_prob: f64,
    /// Mean photon number per pulse at the source (metadata).
    pub mu: f64,
    /// g2(0) of the source (metadata).
    pub g2_0: f64,
    /// Saturation count rate, counts/s.
    pub i_sat: f64,
    /// Saturation power, microwatts.
    pub p_sat: f64,
}

impl Default for SourceModel {
    fn default() -> Self {
        Self {
            clock_rate: 5.0e5,
            p_det: 0.003,
            multiphoton_ratio: 0.015,
            dark_count_prob: 0.0,
            pol_error_prob: 0.06,
            mu: 0.012,
            g2_0: 0.08,
            i_sat: 5.08e5,
            p_sat: 217.0,
        }
    }
}

impl SourceModel {
    pub fn validate(&self) -> Result<(), SourceError> {
        let bad = |msg: String| Err(SourceError::InvalidModel(msg));
        if !(0.0..=1.0).contains(&self.p_det) {
            return bad(format!("p_det = {} not in [0, 1]", self.p_det));
        }
        if !(0.0..1.0).contains(&self.multiphoton_ratio) {
            return bad(format!("multiphoton_ratio = {} not in [0, 1)", self.multiphoton_ratio));
        }
        if !(0.0..=0.5).contains(&self.pol_error_prob) {
            return bad(format!("pol_error_prob = {} not in [0, 0.5]", self.pol_error_prob));
        }
        if !(0.0..=1.0).contains(&self.dark_count_prob) {
            return bad(format!("dark_count_prob = {} not in [0, 1]", self.dark_count_prob));
        }
        for (name, v) in [
            ("clock_rate", self.clock_rate),
            ("mu", self.mu),
            ("g2_0", self.g2_0),
            ("i_sat", self.i_sat),
            ("p_sat", self.p_sat),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be a finite nonnegative number"));
            }
        }
        Ok(())
    }
}

/// Count rate of the emitter under pump power `power`: `i_sat * P / (P + p_sat)`.
pub fn saturation_count_rate(power: f64, i_sat: f64, p_sat: f64) -> Result<f64, SourceError> {
    if power < 0.0 || power.is_nan() {
        return Err(SourceError::NegativePower(power));
    }
    if !(p_sat > 0.0) {
        return Err(SourceError::BadSaturationPower(p_sat));
    }
    Ok(i_sat * power / (power + p_sat))
}

/// What leaves Alice's side for one pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Emission {
    pub choice: u8,
    /// A photon reaches Bob's analyser.
    pub signal: bool,
    pub multiphoton: bool,
}

impl Emission {
    /// One byte: bits 0..2 choice, bit 2 signal, bit 3 multiphoton.
    pub fn to_byte(self) -> u8 {
        self.choice | (u8::from(self.signal) << 2) | (u8::from(self.multiphoton) << 3)
    }

    pub fn from_byte(b: u8) -> Result<Self, SourceError> {
        if b & 0xF0 != 0 {
            return Err(SourceError::BadEmission(b));
        }
        let e = Self { choice: b & 0b11, signal: b & 0b100 != 0, multiphoton: b & 0b1000 != 0 };
        if e.multiphoton && !e.signal {
            return Err(SourceError::BadEmission(b));
        }
        Ok(e)
    }
}

/// Bob's view of one gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Detection {
    pub bob_basis: Basis,
    pub clicks: (bool, bool),
}

impl Detection {
    pub fn valid(&self) -> bool {
        self.clicks.0 != self.clicks.1
    }

    /// Bit value of a valid detection: detector 1 means bit 1.
    pub fn bit(&self) -> Option<bool> {
        self.valid().then_some(self.clicks.1)
    }
}

/// Per-pulse outcome with both parties' settings, for analysis and debugging.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectionRecord {
    pub pulse_index: u64,
    pub alice_choice: u8,
    pub alice_basis: Basis,
    pub alice_bit: bool,
    pub bob_basis: Basis,
    pub clicks: (bool, bool),
    /// Exactly one detector clicked.
    pub valid: bool,
    pub multiphoton: bool,
}

impl DetectionRecord {
    pub fn bob_bit(&self) -> Option<bool> {
        self.valid.then_some(self.clicks.1)
    }

    pub fn detected(&self) -> bool {
        self.clicks.0 || self.clicks.1
    }
}

/// Alice's half of the optical channel: photon arrival and multiphoton flag.
pub fn emit_pulses(
    model: &SourceModel,
    alice_choices: &[u8],
    rng: &mut SeededRng,
) -> Result<Vec<Emission>, SourceError> {
    model.validate()?;
    alice_choices
        .iter()
        .map(|&choice| {
            if choice > 3 {
                return Err(SourceError::BadChoice(choice));
            }
            let signal = bernoulli(rng, model.p_det);
            let multiphoton = signal && bernoulli(rng, model.multiphoton_ratio);
            Ok(Emission { choice, signal, multiphoton })
        })
        .collect()
}

/// Bob's half: polarising beam splitter, two gated APDs and their dark clicks.
pub fn detect_pulses(
    model: &SourceModel,
    emissions: &[Emission],
    bob_basis_bits: &BitString,
    rng: &mut SeededRng,
) -> Result<Vec<Detection>, SourceError> {
    model.validate()?;
    if emissions.len() != bob_basis_bits.len() {
        return Err(SourceError::LengthMismatch {
            what: "bob_basis_bits",
            got: bob_basis_bits.len(),
            expected: emissions.len(),
        });
    }
    let mut out = Vec::with_capacity(emissions.len());
    for (i, e) in emissions.iter().enumerate() {
        let bob_basis = Basis::from_bit(bob_basis_bits.bit(i));
        let (alice_basis, alice_bit, _) = encode_choice(e.choice).map_err(|_| SourceError::BadChoice(e.choice))?;
        let mut clicks = [false; 2];
        if e.signal {
            let photons = if e.multiphoton { 2 } else { 1 };
            for _ in 0..photons {
                let port = if alice_basis == bob_basis {
                    alice_bit ^ bernoulli(rng, model.pol_error_prob)
                } else {
                    bernoulli(rng, 0.5)
                };
                clicks[usize::from(port)] = true;
            }
        }
        for c in clicks.iter_mut() {
            if bernoulli(rng, model.dark_count_prob) {
                *c = true;
            }
        }
        out.push(Detection { bob_basis, clicks: (clicks[0], clicks[1]) });
    }
    Ok(out)
}

/// Full pulse train as seen by an omniscient observer.
pub fn simulate_pulse_train(
    model: &SourceModel,
    n_pulses: usize,
    alice_choices: &[u8],
    bob_basis_bits: &BitString,
    rng: &mut SeededRng,
) -> Result<Vec<DetectionRecord>, SourceError> {
    if alice_choices.len() != n_pulses {
        return Err(SourceError::LengthMismatch { what: "alice_choices", got: alice_choices.len(), expected: n_pulses });
    }
    if bob_basis_bits.len() != n_pulses {
        return Err(SourceError::LengthMismatch {
            what: "bob_basis_bits",
            got: bob_basis_bits.len(),
            expected: n_pulses,
        });
    }
    let emissions = emit_pulses(model, alice_choices, rng)?;
    let detections = detect_pulses(model, &emissions, bob_basis_bits, rng)?;
    Ok(combine(0, &emissions, &detections))
}

/// Joins the two halves into records, numbering pulses from `first_index`.
pub fn combine(first_index: u64, emissions: &[Emission], detections: &[Detection]) -> Vec<DetectionRecord> {
    emissions
        .iter()
        .zip(detections)
        .enumerate()
        .map(|(i, (e, d))| {
            let (alice_basis, alice_bit, _) = encode_choice(e.choice).expect("emission choices are validated");
            DetectionRecord {
                pulse_index: first_index + i as u64,
                alice_choice: e.choice,
                alice_basis,
                alice_bit,
                bob_basis: d.bob_basis,
                clicks: d.clicks,
                valid: d.valid(),
                multiphoton: e.multiphoton,
            }
        })
        .collect()
}

/// Fraction of detected pulses that carried a multiphoton emission.
pub fn estimate_multiphoton_ratio(records: &[DetectionRecord]) -> Result<f64, SourceError> {
    let (detected, multi) = records
        .iter()
        .filter(|r| r.detected())
        .fold((0usize, 0usize), |(d, m), r| (d + 1, m + usize::from(r.multiphoton)));
    if detected == 0 {
        return Err(SourceError::NoDetections);
    }
    Ok(multi as f64 / detected as f64)
}

pub const RECORD_CSV_HEADER: &str =
    "pulse_index,alice_choice,alice_basis,alice_bit,bob_basis,detector0,detector1,valid,multiphoton";

/// One line per record under [`RECORD_CSV_HEADER`]; booleans as 0/1.
pub fn records_to_csv(records: &[DetectionRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 24 + RECORD_CSV_HEADER.len() + 1);
    out.push_str(RECORD_CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.pulse_index,
            r.alice_choice,
            r.alice_basis,
            u8::from(r.alice_bit),
            r.bob_basis,
            u8::from(r.clicks.0),
            u8::from(r.clicks.1),
            u8::from(r.valid),
            u8::from(r.multiphoton)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::random_bits;
    use proptest::prelude::*;
    use rand::Rng;

    fn ideal() -> SourceModel {
        SourceModel { p_det: 1.0, dark_count_prob: 0.0, pol_error_prob: 0.0, multiphoton_ratio: 0.0, ..Default::default() }
    }

    fn choices(n: usize, rng: &mut SeededRng) -> Vec<u8> {
        (0..n).map(|_| rng.random_range(0..4u8)).collect()
    }

    #[test]
    fn saturation_examples() {
        assert_eq!(saturation_count_rate(0.0, 5.08e5, 217.0).unwrap(), 0.0);
        assert!((saturation_count_rate(217.0, 5.08e5, 217.0).unwrap() - 2.54e5).abs() < 1e-6);
        let ten = saturation_count_rate(2170.0, 5.08e5, 217.0).unwrap();
        assert!((ten - 4.618e5).abs() <= 0.001e5, "{ten}");
        assert!(matches!(saturation_count_rate(-1.0, 5.08e5, 217.0), Err(SourceError::NegativePower(_))));
        assert!(saturation_count_rate(1.0, 5.08e5, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn saturation_monotone_and_bounded(a in 0.0f64..1e7, b in 0.0f64..1e7) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let f = |p| saturation_count_rate(p, 5.08e5, 217.0).unwrap();
            prop_assert!(f(lo) <= f(hi));
            prop_assert!(f(hi) <= 5.08e5);
        }
    }

    #[test]
    fn noiseless_matched_bases_are_deterministic() {
        let mut rng = SeededRng::new(3);
        let ch = choices(2000, &mut rng);
        let bases = BitString::from_bools(ch.iter().map(|&c| c >= 2));
        let recs = simulate_pulse_train(&ideal(), ch.len(), &ch, &bases, &mut rng).unwrap();
        assert!(recs.iter().all(|r| r.valid && r.bob_bit() == Some(r.alice_bit)));
    }

    #[test]
    fn no_photons_no_clicks() {
        let model = SourceModel { p_det: 0.0, dark_count_prob: 0.0, ..Default::default() };
        let mut rng = SeededRng::new(4);
        let ch = choices(5000, &mut rng);
        let bases = random_bits(5000, &mut rng);
        let recs = simulate_pulse_train(&model, 5000, &ch, &bases, &mut rng).unwrap();
        assert_eq!(recs.iter().filter(|r| r.valid).count(), 0);
    }

    #[test]
    fn mismatched_bases_agree_half_the_time() {
        let n = 100_000;
        let mut rng = SeededRng::new(5);
        let ch = choices(n, &mut rng);
        let bases = BitString::from_bools(ch.iter().map(|&c| c < 2));
        let recs = simulate_pulse_train(&ideal(), n, &ch, &bases, &mut rng).unwrap();
        let agree = recs.iter().filter(|r| r.bob_bit() == Some(r.alice_bit)).count() as f64 / n as f64;
        assert!((agree - 0.5).abs() <= 3.0 * (0.25f64 / n as f64).sqrt(), "{agree}");
    }

    #[test]
    fn detection_rate_and_qber_converge() {
        let n = 400_000;
        let q = 0.07;
        let model = SourceModel { p_det: 0.2, multiphoton_ratio: 0.0, pol_error_prob: q, ..Default::default() };
        let mut rng = SeededRng::new(6);
        let ch = choices(n, &mut rng);
        let bases = random_bits(n, &mut rng);
        let recs = simulate_pulse_train(&model, n, &ch, &bases, &mut rng).unwrap();
        let valid = recs.iter().filter(|r| r.valid).count() as f64;
        let sigma = (0.2 * 0.8 / n as f64).sqrt();
        assert!((valid / n as f64 - 0.2).abs() <= 3.0 * sigma);
        let matched: Vec<_> = recs.iter().filter(|r| r.valid && r.alice_basis == r.bob_basis).collect();
        let errs = matched.iter().filter(|r| r.bob_bit() != Some(r.alice_bit)).count() as f64;
        let m = matched.len() as f64;
        assert!((errs / m - q).abs() <= 3.0 * (q * (1.0 - q) / m).sqrt());
    }

    #[test]
    fn double_clicks_are_never_valid() {
        let model = SourceModel { p_det: 0.5, multiphoton_ratio: 0.3, dark_count_prob: 0.05, ..Default::default() };
        let mut rng = SeededRng::new(8);
        let ch = choices(50_000, &mut rng);
        let bases = random_bits(50_000, &mut rng);
        let recs = simulate_pulse_train(&model, 50_000, &ch, &bases, &mut rng).unwrap();
        assert!(recs.iter().any(|r| r.clicks == (true, true)));
        for r in &recs {
            assert_eq!(r.valid, r.clicks.0 ^ r.clicks.1);
        }
    }

    #[test]
    fn multiphoton_estimator() {
        let mut rec = DetectionRecord {
            pulse_index: 0,
            alice_choice: 0,
            alice_basis: Basis::HV,
            alice_bit: false,
            bob_basis: Basis::HV,
            clicks: (true, false),
            valid: true,
            multiphoton: false,
        };
        let plain = vec![rec; 10];
        assert_eq!(estimate_multiphoton_ratio(&plain).unwrap(), 0.0);
        let mut half = plain.clone();
        for r in half.iter_mut().take(5) {
            r.multiphoton = true;
        }
        assert_eq!(estimate_multiphoton_ratio(&half).unwrap(), 0.5);
        rec.clicks = (false, false);
        rec.valid = false;
        assert_eq!(estimate_multiphoton_ratio(&[rec]), Err(SourceError::NoDetections));
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let mut rng = SeededRng::new(1);
        let err = simulate_pulse_train(&ideal(), 3, &[0, 1], &BitString::zeros(3), &mut rng).unwrap_err();
        assert!(matches!(err, SourceError::LengthMismatch { .. }));
        assert!(simulate_pulse_train(&ideal(), 2, &[0, 1], &BitString::zeros(3), &mut rng).is_err());
        assert!(matches!(
            simulate_pulse_train(&ideal(), 1, &[4], &BitString::zeros(1), &mut rng),
            Err(SourceError::BadChoice(4))
        ));
    }

    #[test]
    fn invalid_models_are_rejected() {
        for m in [
            SourceModel { p_det: 1.5, ..Default::default() },
            SourceModel { multiphoton_ratio: 1.0, ..Default::default() },
            SourceModel { pol_error_prob: 0.6, ..Default::default() },
            SourceModel { clock_rate: -1.0, ..Default::default() },
        ] {
            assert!(m.validate().is_err());
        }
        assert!(SourceModel::default().validate().is_ok());
    }

    #[test]
    fn emission_bytes_round_trip() {
        for b in 0u8..16 {
            match Emission::from_byte(b) {
                Ok(e) => assert_eq!(e.to_byte(), b),
                Err(_) => assert!(b & 0b1000 != 0 && b & 0b100 == 0),
            }
        }
        assert!(Emission::from_byte(0x10).is_err());
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let mut rng = SeededRng::new(2);
        let recs = simulate_pulse_train(&ideal(), 3, &[0, 1, 3], &BitString::from_bit_str("001"), &mut rng).unwrap();
        let csv = records_to_csv(&recs);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], RECORD_CSV_HEADER);
        assert_eq!(lines[1], "0,0,HV,0,HV,1,0,1,0");
        assert_eq!(lines[3], "2,3,RL,1,RL,0,1,1,0");
    }
}
