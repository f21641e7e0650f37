use std::fmt;
use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use qkd_core::bits::{BitString, SeededRng};
use qkd_core::finite_key::{self, CurvePoint, FiniteKeyParams, SecurityBudget};
use qkd_core::ldpc::{self, SparseParityMatrix};
use qkd_core::link::{memory_pair, Audit, Direction, Endpoint, Frame, TcpTransport, Transport};
use qkd_core::session::{self, PartyOutcome, SessionConfig, SessionError, REPORT_CSV_HEADER};
use qkd_core::source::SourceModel;
use rand::Rng;

use crate::config::RunConfig;

// ---- calc -------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct CalcArgs {
    pub n: u64,
    pub m: u64,
    pub q: f64,
    pub rate: f64,
    pub a: f64,
    pub budget: SecurityBudget,
}

impl Default for CalcArgs {
    fn default() -> Self {
        Self { n: 1_000_000, m: 1_000_000, q: 0.06, rate: 0.5, a: 0.985, budget: SecurityBudget::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calc {
    pub xi: f64,
    pub q_upper: f64,
    pub delta: f64,
    pub r_raw: f64,
    pub r: f64,
    pub secret_key_length: u64,
    /// Undefined at q = 0.
    pub f_e: Option<f64>,
}

pub fn calc(args: &CalcArgs) -> Result<Calc> {
    let params = FiniteKeyParams::new(args.n, args.m, args.q, args.rate, args.a);
    let sf = finite_key::secret_fraction(&params, &args.budget)?;
    Ok(Calc {
        xi: sf.xi,
        q_upper: sf.q_upper,
        delta: sf.delta,
        r_raw: sf.r_raw,
        r: sf.r,
        secret_key_length: finite_key::secret_key_length(args.n, sf.r),
        f_e: finite_key::reconciliation_efficiency(args.rate, args.q).ok(),
    })
}

impl fmt::Display for Calc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "xi = {}", self.xi)?;
        writeln!(f, "q_upper = {}", self.q_upper)?;
        writeln!(f, "delta = {}", self.delta)?;
        writeln!(f, "r_raw = {}", self.r_raw)?;
        writeln!(f, "r = {}", self.r)?;
        writeln!(f, "secret_key_length = {}", self.secret_key_length)?;
        match self.f_e {
            Some(v) => writeln!(f, "f_e = {v}"),
            None => writeln!(f, "f_e = undefined"),
        }
    }
}

// ---- curve ------------------------------------------------------------------

/// `points` values from `n_min` to `n_max`, evenly spaced in log n.
pub fn log_spaced(n_min: u64, n_max: u64, points: usize) -> Result<Vec<u64>> {
    ensure!(points > 0, "empty n range: zero points");
    ensure!(n_min >= 1 && n_min <= n_max, "empty n range: [{n_min}, {n_max}]");
    if points == 1 || n_min == n_max {
        ensure!(n_min == n_max, "a single point needs n_min == n_max");
        return Ok(vec![n_min]);
    }
    let (lo, hi) = ((n_min as f64).ln(), (n_max as f64).ln());
    let mut out: Vec<u64> = (0..points)
        .map(|i| (lo + (hi - lo) * i as f64 / (points - 1) as f64).exp().round() as u64)
        .collect();
    out[0] = n_min;
    out[points - 1] = n_max;
    out.dedup();
    Ok(out)
}

pub fn curve(qs: &[f64], ns: &[u64], budget: &SecurityBudget, rate: f64, a: f64) -> Result<Vec<CurvePoint>> {
    ensure!(!qs.is_empty(), "empty q list");
    ensure!(!ns.is_empty(), "empty n range");
    let points = finite_key::r_vs_n_curve(qs, ns, budget, rate, a);
    if let Some(p) = points.iter().find(|p| p.result.is_err()) {
        let e = p.result.as_ref().unwrap_err();
        bail!("q = {}, n = {}: {e}", p.q, p.n);
    }
    Ok(points)
}

// ---- run --------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Mode {
    InProcess,
    /// Waits for the peer and plays Bob.
    Listen(String),
    /// Dials the peer and plays Alice.
    Connect(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Party {
    Alice,
    Bob,
}

impl Party {
    pub fn name(self) -> &'static str {
        match self {
            Party::Alice => "alice",
            Party::Bob => "bob",
        }
    }
}

/// Alice's and Bob's generators, both derived from one seed so either
/// process of a two-process run can reproduce its own stream.
pub fn party_rngs(seed: u64) -> (SeededRng, SeededRng) {
    let mut master = SeededRng::new(seed);
    let a = master.fork();
    let b = master.fork();
    (a, b)
}

pub struct PartyRun {
    pub party: Party,
    pub result: Result<PartyOutcome, SessionError>,
    pub sent: Audit,
    pub received: Audit,
    pub transcript: Vec<(Direction, Frame)>,
}

pub struct RunResult {
    pub seed: u64,
    pub config_sha256: String,
    pub parties: Vec<PartyRun>,
}

impl RunResult {
    pub fn party(&self, p: Party) -> Option<&PartyRun> {
        self.parties.iter().find(|r| r.party == p)
    }

    /// First failure, if any.
    pub fn error(&self) -> Option<&SessionError> {
        let errs: Vec<_> = self.parties.iter().filter_map(|p| p.result.as_ref().err()).collect();
        errs.iter().find(|e| !matches!(e, SessionError::PeerAbort(_))).or(errs.first()).copied()
    }
}

fn play(
    party: Party,
    cfg: &SessionConfig,
    model: &SourceModel,
    h: &SparseParityMatrix,
    transport: Box<dyn Transport>,
    rng: &mut SeededRng,
) -> PartyRun {
    let mut ep = Endpoint::new(transport, cfg.session_id);
    ep.record_transcript();
    let result = match party {
        Party::Alice => session::run_alice(cfg, model, h, &mut ep, rng),
        Party::Bob => session::run_bob(cfg, model, h, &mut ep, rng),
    };
    let transcript = ep.take_transcript();
    PartyRun { party, result, sent: ep.sent.clone(), received: ep.received.clone(), transcript }
}

/// Runs one or both parties per `mode`. Session failures are reported in the
/// result, setup failures as errors.
pub fn run(config: &RunConfig, seed: u64, mode: &Mode) -> Result<RunResult> {
    let cfg = config.session()?;
    let model = config.source_model();
    let h = config.matrix(&cfg)?;
    let (mut rng_a, mut rng_b) = party_rngs(seed);
    let parties = match mode {
        Mode::InProcess => {
            let (ta, tb) = memory_pair(cfg.timeout);
            let (cfg, model, h) = (&cfg, &model, &h);
            std::thread::scope(|s| {
                let bob = s.spawn(move || play(Party::Bob, cfg, model, h, Box::new(tb), &mut rng_b));
                let alice = play(Party::Alice, cfg, model, h, Box::new(ta), &mut rng_a);
                vec![alice, bob.join().expect("bob thread panicked")]
            })
        }
        Mode::Listen(addr) => {
            let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
            let t = TcpTransport::accept(&listener, cfg.timeout)?;
            vec![play(Party::Bob, &cfg, &model, &h, Box::new(t), &mut rng_b)]
        }
        Mode::Connect(addr) => {
            let t = TcpTransport::connect(addr.as_str(), cfg.timeout)?;
            vec![play(Party::Alice, &cfg, &model, &h, Box::new(t), &mut rng_a)]
        }
    };
    Ok(RunResult { seed, config_sha256: config.sha256(), parties })
}

pub fn random_seed() -> u64 {
    rand::rng().random()
}

pub const RUN_REPORT_HEADER_EXTRA: &str = "party,seed,config_sha256";

/// Writes key files, report, audit and transcript into `out`.
pub fn write_run(result: &RunResult, config: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut written = Vec::new();
    let mut put = |name: &str, bytes: &[u8]| -> Result<()> {
        let p = out.join(name);
        fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))?;
        written.push(p);
        Ok(())
    };
    put("config.toml", config.to_toml().as_bytes())?;

    let mut report = format!("{REPORT_CSV_HEADER},{RUN_REPORT_HEADER_EXTRA}\n");
    let mut audit = String::from("party,direction,msg_type,frames,payload_bytes\n");
    let mut transcript = String::from("party,direction,sequence,msg_type,payload_bytes\n");
    for p in &result.parties {
        if let Ok(o) = &p.result {
            put(&format!("{}.key", p.party.name()), &o.key.to_bytes())?;
            report.push_str(&format!("{},{},{},{}\n", o.report.csv_row(), p.party.name(), result.seed, result.config_sha256));
        }
        for (dir, a) in [("sent", &p.sent), ("received", &p.received)] {
            for (t, n) in &a.frames {
                let bytes = a.payload_bytes.get(t).copied().unwrap_or(0);
                audit.push_str(&format!("{},{dir},{},{n},{bytes}\n", p.party.name(), t.name()));
            }
        }
        for (d, f) in &p.transcript {
            let dir = match d {
                Direction::Sent => "sent",
                Direction::Received => "received",
            };
            transcript.push_str(&format!("{},{dir},{},{},{}\n", p.party.name(), f.sequence, f.msg_type.name(), f.payload.len()));
        }
    }
    put("report.csv", report.as_bytes())?;
    put("audit.csv", audit.as_bytes())?;
    put("transcript.csv", transcript.as_bytes())?;
    Ok(written)
}

pub fn read_key(path: &Path) -> Result<BitString> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let (key, used) = BitString::from_bytes(&bytes).with_context(|| format!("parsing key file {}", path.display()))?;
    ensure!(used == bytes.len(), "{}: trailing bytes after key", path.display());
    Ok(key)
}

// ---- otp --------------------------------------------------------------------

/// XORs `input` with the leading `8 * input.len()` key bits. Encryption and
/// decryption are the same operation.
pub fn otp(key: &BitString, input: &[u8]) -> Result<Vec<u8>> {
    let need = input.len() * 8;
    ensure!(key.len() >= need, "key has {} bits, input needs {need}", key.len());
    let pad = key.slice(0, need)?.to_packed_bytes();
    Ok(input.iter().zip(pad).map(|(a, b)| a ^ b).collect())
}

pub fn otp_files(key_path: &Path, input: &Path, output: &Path) -> Result<()> {
    let key = read_key(key_path)?;
    let data = fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    let out = otp(&key, &data)?;
    fs::write(output, out).with_context(|| format!("writing {}", output.display()))
}

// ---- ldpc-bench -------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub q: f64,
    pub trials: usize,
    pub converged: usize,
    pub success_rate: f64,
    pub mean_iterations: f64,
    /// Converged blocks whose syndrome does not match; must be zero.
    pub syndrome_violations: usize,
    /// Converged blocks that landed on the wrong word.
    pub undetected_errors: usize,
}

pub const BENCH_CSV_HEADER: &str = "q,trials,converged,success_rate,mean_iterations,syndrome_violations,undetected_errors";

impl BenchRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.q,
            self.trials,
            self.converged,
            self.success_rate,
            self.mean_iterations,
            self.syndrome_violations,
            self.undetected_errors
        )
    }
}

/// Frame success of the serial decoder on a binary symmetric channel.
pub fn ldpc_bench(h: &SparseParityMatrix, qs: &[f64], trials: usize, max_iters: usize, seed: u64) -> Result<Vec<BenchRow>> {
    ensure!(trials > 0, "trials must be positive");
    let mut rng = SeededRng::new(seed);
    let mut rows = Vec::with_capacity(qs.len());
    for &q in qs {
        ensure!((0.0..=0.5).contains(&q), "q = {q} not in [0, 0.5]");
        let mut row = BenchRow {
            q,
            trials,
            converged: 0,
            success_rate: 0.0,
            mean_iterations: 0.0,
            syndrome_violations: 0,
            undetected_errors: 0,
        };
        let mut iters = 0usize;
        for _ in 0..trials {
            let bob = qkd_core::bits::random_bits(h.n_cols(), &mut rng);
            let alice = BitString::from_bools(bob.iter().map(|b| b ^ rng.random_bool(q)));
            let target = ldpc::syndrome(h, &bob)?;
            let res = ldpc::decode_bp_serial(h, &alice, &target, q.clamp(1e-6, 0.499), max_iters)?;
            iters += res.iterations;
            if res.converged {
                row.converged += 1;
                if ldpc::syndrome(h, &res.corrected)? != target {
                    row.syndrome_violations += 1;
                }
                if res.corrected != bob {
                    row.undetected_errors += 1;
                }
            }
        }
        row.success_rate = row.converged as f64 / trials as f64;
        row.mean_iterations = iters as f64 / trials as f64;
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calc_defaults() {
        let c = calc(&CalcArgs::default()).unwrap();
        assert!((c.xi - 0.005_251_2).abs() < 1e-6);
        assert!((c.delta - 0.042_234_4).abs() < 1e-6);
        assert_eq!(c.secret_key_length, 96_290);
        assert!((c.f_e.unwrap() - 1.526_97).abs() < 1e-4);
        let text = c.to_string();
        assert!(text.contains("secret_key_length = 96290"));
    }

    #[test]
    fn calc_zero_key_and_domain_errors() {
        let c = calc(&CalcArgs { n: 10_000, m: 10_000, q: 0.03, ..Default::default() }).unwrap();
        assert_eq!(c.secret_key_length, 0);
        let err = calc(&CalcArgs { q: -0.1, ..Default::default() }).unwrap_err();
        assert!(err.to_string().contains('q'), "{err}");
        let err = calc(&CalcArgs { a: 1.5, ..Default::default() }).unwrap_err();
        assert!(err.to_string().contains('A') || err.to_string().contains("a_correction"), "{err}");
    }

    #[test]
    fn log_spacing() {
        assert_eq!(log_spaced(1_000, 100_000_000, 6).unwrap(), vec![1_000, 10_000, 100_000, 1_000_000, 10_000_000, 100_000_000]);
        assert_eq!(log_spaced(5, 5, 1).unwrap(), vec![5]);
        assert!(log_spaced(10, 1, 3).is_err());
        assert!(log_spaced(10, 100, 0).is_err());
        assert!(curve(&[0.05], &[], &SecurityBudget::default(), 0.5, 0.985).is_err());
    }

    #[test]
    fn curve_is_monotone_in_n() {
        let ns = log_spaced(1_000, 100_000_000, 26).unwrap();
        let pts = curve(&[0.02, 0.05, 0.08], &ns, &SecurityBudget::default(), 0.5, 0.985).unwrap();
        for q in pts.chunks(ns.len()) {
            let r: Vec<f64> = q.iter().map(|p| p.result.as_ref().unwrap().r_raw).collect();
            assert!(r.windows(2).all(|w| w[1] >= w[0]), "{r:?}");
        }
        let one = curve(&[0.06], &[1_000_000], &SecurityBudget::default(), 0.5, 0.985).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].result.as_ref().unwrap().r, calc(&CalcArgs::default()).unwrap().r);
    }

    #[test]
    fn otp_round_trip_and_errors() {
        let key = qkd_core::bits::random_bits(68_516, &mut SeededRng::new(1));
        let plain: Vec<u8> = (0..6_000u32).map(|i| (i * 7 % 251) as u8).collect();
        let cipher = otp(&key, &plain).unwrap();
        assert_ne!(cipher, plain);
        assert_eq!(otp(&key, &cipher).unwrap(), plain);
        assert!(otp(&key, &[]).unwrap().is_empty());
        assert!(otp(&key.slice(0, 100).unwrap(), &plain).is_err());
    }

    #[test]
    fn bench_extremes() {
        let h = ldpc::peg_construct(1_000, 0.5, &ldpc::DegreeDistribution::default_rate_half(), &mut SeededRng::new(1)).unwrap();
        let rows = ldpc_bench(&h, &[0.001, 0.45], 10, 100, 3).unwrap();
        assert_eq!(rows[0].success_rate, 1.0);
        assert_eq!(rows[1].success_rate, 0.0);
        assert!(rows.iter().all(|r| r.syndrome_violations == 0));
        assert_eq!(rows, ldpc_bench(&h, &[0.001, 0.45], 10, 100, 3).unwrap());
    }

    #[test]
    fn party_rngs_are_reproducible_and_distinct() {
        use rand::RngCore;
        let (mut a, mut b) = party_rngs(9);
        let (mut a2, _) = party_rngs(9);
        let x = a.next_u64();
        assert_eq!(x, a2.next_u64());
        assert_ne!(x, b.next_u64());
    }
}
