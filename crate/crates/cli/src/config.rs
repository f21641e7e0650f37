//! Flat TOML run configuration. Every key is optional; absent keys take the
//! built-in defaults.
//!
//! ```toml
//! p_det = 0.5
//! pol_error_prob = 0.06
//! sifted_key_length = 2000000
//! n_block = 10000
//! eps = 1e-10
//! ```

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use qkd_core::finite_key::SecurityBudget;
use qkd_core::ldpc::{DegreeDistribution, SparseParityMatrix};
use qkd_core::session::{LdpcConfig, SessionConfig};
use qkd_core::source::SourceModel;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    // source
    pub clock_rate: Option<f64>,
    pub p_det: Option<f64>,
    pub multiphoton_ratio: Option<f64>,
    pub dark_count_prob: Option<f64>,
    pub pol_error_prob: Option<f64>,
    pub mu: Option<f64>,
    pub g2_0: Option<f64>,
    pub i_sat: Option<f64>,
    pub p_sat: Option<f64>,

    // session
    pub session_id: Option<u64>,
    pub block_pulses: Option<usize>,
    pub target_valid_bits: Option<usize>,
    pub sifted_key_length: Option<usize>,
    /// Defaults to `block_pulses / clock_rate`.
    pub t_transmit: Option<f64>,
    pub t_process: Option<f64>,
    pub qber_sample_fraction: Option<f64>,
    pub check_len: Option<usize>,
    pub max_retries: Option<usize>,
    pub timeout_secs: Option<f64>,
    pub corrupt_reconciled_bit: Option<usize>,

    // security
    pub eps: Option<f64>,
    pub eps_smooth: Option<f64>,
    pub eps_pa: Option<f64>,
    pub eps_ec: Option<f64>,
    pub eps_pe: Option<f64>,

    // reconciliation
    pub n_block: Option<usize>,
    pub code_rate: Option<f64>,
    /// Edge-perspective profile, e.g. `"2:0.3,3:0.7"`.
    pub variable_degrees: Option<String>,
    pub check_degrees: Option<String>,
    pub ldpc_seed: Option<u64>,
    pub max_iters: Option<usize>,
    pub workers: Option<usize>,
    /// Load the parity-check matrix from this file instead of building it.
    pub matrix_file: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Canonical TOML echo of what was given.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serialises")
    }

    pub fn sha256(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn source_model(&self) -> SourceModel {
        let d = SourceModel::default();
        SourceModel {
            clock_rate: self.clock_rate.unwrap_or(d.clock_rate),
            p_det: self.p_det.unwrap_or(d.p_det),
            multiphoton_ratio: self.multiphoton_ratio.unwrap_or(d.multiphoton_ratio),
            dark_count_prob: self.dark_count_prob.unwrap_or(d.dark_count_prob),
            pol_error_prob: self.pol_error_prob.unwrap_or(d.pol_error_prob),
            mu: self.mu.unwrap_or(d.mu),
            g2_0: self.g2_0.unwrap_or(d.g2_0),
            i_sat: self.i_sat.unwrap_or(d.i_sat),
            p_sat: self.p_sat.unwrap_or(d.p_sat),
        }
    }

    pub fn security(&self) -> Result<SecurityBudget> {
        let eps = self.eps.unwrap_or(SecurityBudget::default().eps_total);
        budget(eps, self.eps_smooth, self.eps_pa, self.eps_ec, self.eps_pe)
    }

    pub fn distribution(&self) -> Result<DegreeDistribution> {
        let d = DegreeDistribution::default_rate_half();
        let side = |s: &Option<String>, dflt: Vec<(usize, f64)>| -> Result<_> {
            Ok(match s {
                Some(text) => DegreeDistribution::parse_side(text)?,
                None => dflt,
            })
        };
        Ok(DegreeDistribution {
            variable_degrees: side(&self.variable_degrees, d.variable_degrees)?,
            check_degrees: side(&self.check_degrees, d.check_degrees)?,
        })
    }

    pub fn session(&self) -> Result<SessionConfig> {
        let d = SessionConfig::default();
        let model = self.source_model();
        let block_pulses = self.block_pulses.unwrap_or(d.block_pulses);
        let ld = LdpcConfig::default();
        let ldpc = LdpcConfig {
            n_block: self.n_block.unwrap_or(ld.n_block),
            code_rate: self.code_rate.unwrap_or(ld.code_rate),
            distribution: self.distribution()?,
            seed: self.ldpc_seed.unwrap_or(ld.seed),
            max_iters: self.max_iters.unwrap_or(ld.max_iters),
            workers: self.workers.unwrap_or(ld.workers),
        };
        let cfg = SessionConfig {
            session_id: self.session_id.unwrap_or(d.session_id),
            block_pulses,
            target_valid_bits: self.target_valid_bits.unwrap_or(d.target_valid_bits),
            sifted_key_length: self.sifted_key_length.or(d.sifted_key_length),
            t_transmit: self.t_transmit.unwrap_or(block_pulses as f64 / model.clock_rate),
            t_process: self.t_process.unwrap_or(d.t_process),
            qber_sample_fraction: self.qber_sample_fraction.unwrap_or(d.qber_sample_fraction),
            security: self.security()?,
            ldpc,
            check_len: self.check_len.unwrap_or(d.check_len),
            max_retries: self.max_retries.unwrap_or(d.max_retries),
            timeout: self.timeout_secs.map(Duration::from_secs_f64).unwrap_or(d.timeout),
            corrupt_reconciled_bit: self.corrupt_reconciled_bit,
        };
        cfg.validate(&model)?;
        Ok(cfg)
    }

    /// The configured matrix file, or a PEG construction from the LDPC keys.
    pub fn matrix(&self, session: &SessionConfig) -> Result<SparseParityMatrix> {
        match &self.matrix_file {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let h = SparseParityMatrix::from_text(&text).with_context(|| format!("parsing {}", path.display()))?;
                if h.n_cols() != session.ldpc.n_block {
                    bail!("matrix file has {} columns but n_block = {}", h.n_cols(), session.ldpc.n_block);
                }
                Ok(h)
            }
            None => Ok(session.ldpc.build()?),
        }
    }
}

/// `eps` split evenly, or the four explicit parts (which must all be given).
pub fn budget(
    eps: f64,
    smooth: Option<f64>,
    pa: Option<f64>,
    ec: Option<f64>,
    pe: Option<f64>,
) -> Result<SecurityBudget> {
    Ok(match (smooth, pa, ec, pe) {
        (None, None, None, None) => SecurityBudget::even(eps)?,
        (Some(s), Some(a), Some(e), Some(p)) => SecurityBudget::custom(eps, s, a, e, p)?,
        _ => bail!("give all four of eps_smooth, eps_pa, eps_ec, eps_pe or none"),
    })
}
