use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use qkd_cli::commands::{self, CalcArgs, Mode, BENCH_CSV_HEADER};
use qkd_cli::config::{budget, RunConfig};
use qkd_core::finite_key::{self, SecurityBudget};
use qkd_core::ldpc::{peg_construct, DegreeDistribution, SparseParityMatrix};
use qkd_core::SeededRng;

#[derive(Parser)]
#[command(name = "qkd", version, about = "BB84 key distribution simulator and finite-key calculator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Eps {
    /// Total security parameter, split evenly unless all four parts are given.
    #[arg(long, default_value_t = 1e-10)]
    eps: f64,
    #[arg(long)]
    eps_smooth: Option<f64>,
    #[arg(long)]
    eps_pa: Option<f64>,
    #[arg(long)]
    eps_ec: Option<f64>,
    #[arg(long)]
    eps_pe: Option<f64>,
}

impl Eps {
    fn budget(&self) -> Result<SecurityBudget> {
        budget(self.eps, self.eps_smooth, self.eps_pa, self.eps_ec, self.eps_pe)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Secret fraction and key length for one parameter set.
    Calc {
        #[arg(long, default_value_t = 1_000_000)]
        n: u64,
        /// Sample size used for the QBER estimate; defaults to n.
        #[arg(long)]
        m: Option<u64>,
        #[arg(long, default_value_t = 0.06)]
        q: f64,
        #[arg(long, default_value_t = 0.5)]
        rate: f64,
        /// Multiphoton correction (p_det - P_m) / p_det.
        #[arg(long = "A", default_value_t = 0.985)]
        a: f64,
        #[command(flatten)]
        eps: Eps,
    },
    /// r against n for several QBERs, as CSV.
    Curve {
        #[arg(long, value_delimiter = ',', default_value = "0.02,0.05,0.08")]
        q: Vec<f64>,
        #[arg(long, default_value_t = 1_000)]
        n_min: u64,
        #[arg(long, default_value_t = 100_000_000)]
        n_max: u64,
        /// Number of log-spaced n values.
        #[arg(long, default_value_t = 41)]
        points: usize,
        #[arg(long, default_value_t = 0.5)]
        rate: f64,
        #[arg(long = "A", default_value_t = 0.985)]
        a: f64,
        #[command(flatten)]
        eps: Eps,
        /// Output CSV; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulated end-to-end session. Both parties in-process by default;
    /// `--listen` plays Bob and `--connect` plays Alice.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Drawn from OS entropy when absent; always written to the report.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, conflicts_with = "connect")]
        listen: Option<String>,
        #[arg(long)]
        connect: Option<String>,
        /// Output directory for keys, report, audit and transcript.
        #[arg(long, default_value = "qkd-run")]
        out: PathBuf,
    },
    /// One-time pad with a key file written by `run`.
    Otp {
        #[command(subcommand)]
        op: OtpOp,
    },
    /// Decoder frame success on a binary symmetric channel, as CSV.
    LdpcBench {
        #[arg(long, default_value_t = 10_000)]
        n_block: usize,
        #[arg(long, default_value_t = 0.5)]
        rate: f64,
        #[arg(long, value_delimiter = ',', default_value = "0.02,0.04,0.06,0.08")]
        q: Vec<f64>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 100)]
        max_iters: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Matrix text file; otherwise a PEG code with the default profile.
        #[arg(long)]
        matrix: Option<PathBuf>,
        /// Also write the matrix used to this path.
        #[arg(long)]
        save_matrix: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum OtpOp {
    Encrypt(OtpFiles),
    Decrypt(OtpFiles),
}

#[derive(Args)]
struct OtpFiles {
    #[arg(long)]
    key: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn emit(text: &str, out: Option<&PathBuf>) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Calc { n, m, q, rate, a, eps } => {
            let args = CalcArgs { n, m: m.unwrap_or(n), q, rate, a, budget: eps.budget()? };
            print!("{}", commands::calc(&args)?);
        }
        Command::Curve { q, n_min, n_max, points, rate, a, eps, out } => {
            let ns = commands::log_spaced(n_min, n_max, points)?;
            let pts = commands::curve(&q, &ns, &eps.budget()?, rate, a)?;
            emit(&finite_key::curve_to_csv(&pts), out.as_ref())?;
        }
        Command::Run { config, seed, listen, connect, out } => {
            let cfg = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::default(),
            };
            let mode = match (listen, connect) {
                (Some(a), _) => Mode::Listen(a),
                (_, Some(a)) => Mode::Connect(a),
                _ => Mode::InProcess,
            };
            let seed = seed.unwrap_or_else(commands::random_seed);
            let result = commands::run(&cfg, seed, &mode)?;
            commands::write_run(&result, &cfg, &out)?;
            eprintln!("seed {seed}, outputs in {}", out.display());
            if let Some(e) = result.error() {
                eprintln!("error: session failed: {e}");
                return Ok(ExitCode::FAILURE);
            }
            if let (Some(a), Some(b)) = (result.party(commands::Party::Alice), result.party(commands::Party::Bob)) {
                let (ka, kb) = (&a.result.as_ref().unwrap().key, &b.result.as_ref().unwrap().key);
                if ka != kb {
                    eprintln!("error: keys differ");
                    return Ok(ExitCode::FAILURE);
                }
            }
            for p in &result.parties {
                let rep = &p.result.as_ref().unwrap().report;
                println!("{} secret_key_length = {} qber = {} n = {}", p.party.name(), rep.secret_key_length, rep.qber, rep.raw_key_length);
            }
        }
        Command::Otp { op } => {
            let f = match op {
                OtpOp::Encrypt(f) | OtpOp::Decrypt(f) => f,
            };
            commands::otp_files(&f.key, &f.input, &f.out)?;
        }
        Command::LdpcBench { n_block, rate, q, trials, max_iters, seed, matrix, save_matrix, out } => {
            let h = match matrix {
                Some(p) => SparseParityMatrix::from_text(&std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?)?,
                None => {
                    let dist = DegreeDistribution::default_rate_half();
                    peg_construct(n_block, rate, &dist, &mut SeededRng::new(seed))?
                }
            };
            if let Some(p) = save_matrix {
                std::fs::write(&p, h.to_text()).with_context(|| format!("writing {}", p.display()))?;
            }
            let rows = commands::ldpc_bench(&h, &q, trials, max_iters, seed)?;
            let mut text = format!("{BENCH_CSV_HEADER}\n");
            for r in rows {
                text.push_str(&r.csv_row());
                text.push('\n');
            }
            emit(&text, out.as_ref())?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
