//! Finite-key secret fraction for BB84 with a multiphoton correction.
//!
//! All logarithms are base 2. With `m` bits spent on parameter estimation the
//! observed QBER is widened to `Q^u = Q + xi(m)`, and the secret fraction is
//!
//! ```text
//! r = A (1 - h(Q^u / A)) - (1 - R_c) - delta(n)
//! ```
//!
//! where `A = 1 - P_m / p_det` and `delta(n)` is the finite-size penalty.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FiniteKeyError {
    #[error("parameter `{name}` = {value} is outside {range}")]
    Domain { name: &'static str, value: f64, range: &'static str },
    #[error("security budget components sum to {sum:e}, expected eps = {total:e}")]
    BudgetMismatch { sum: f64, total: f64 },
    #[error("multiphoton probability {p_m} must be below detection probability {p_det}")]
    MultiphotonExceedsDetection { p_m: f64, p_det: f64 },
}

fn domain(name: &'static str, value: f64, range: &'static str) -> FiniteKeyError {
    FiniteKeyError::Domain { name, value, range }
}

fn open_unit(name: &'static str, v: f64) -> Result<(), FiniteKeyError> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(domain(name, v, "(0, 1)"))
    }
}

/// Split of the total failure probability `eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecurityBudget {
    pub eps_total: f64,
    pub eps_smooth: f64,
    pub eps_pa: f64,
    pub eps_ec: f64,
    pub eps_pe: f64,
}

impl SecurityBudget {
    /// Equal split, each component `eps / 4`.
    pub fn even(eps: f64) -> Result<Self, FiniteKeyError> {
        let part = eps / 4.0;
        let b = Self { eps_total: eps, eps_smooth: part, eps_pa: part, eps_ec: part, eps_pe: part };
        b.validate()?;
        Ok(b)
    }

    pub fn custom(eps_total: f64, eps_smooth: f64, eps_pa: f64, eps_ec: f64, eps_pe: f64) -> Result<Self, FiniteKeyError> {
        let b = Self { eps_total, eps_smooth, eps_pa, eps_ec, eps_pe };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), FiniteKeyError> {
        open_unit("eps", self.eps_total)?;
        open_unit("eps_smooth", self.eps_smooth)?;
        open_unit("eps_pa", self.eps_pa)?;
        open_unit("eps_ec", self.eps_ec)?;
        open_unit("eps_pe", self.eps_pe)?;
        let sum = self.eps_smooth + self.eps_pa + self.eps_ec + self.eps_pe;
        if ((sum - self.eps_total) / self.eps_total).abs() > 1e-3 {
            return Err(FiniteKeyError::BudgetMismatch { sum, total: self.eps_total });
        }
        Ok(())
    }
}

impl Default for SecurityBudget {
    fn default() -> Self {
        Self::even(1e-10).expect("1e-10 is a valid budget")
    }
}

/// Inputs to [`secret_fraction`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteKeyParams {
    /// Reconciled key length.
    pub n: u64,
    /// Bits sacrificed for parameter estimation.
    pub m: u64,
    pub q_observed: f64,
    pub code_rate: f64,
    pub a_correction: f64,
    pub d_outcomes: u32,
}

impl FiniteKeyParams {
    pub fn new(n: u64, m: u64, q_observed: f64, code_rate: f64, a_correction: f64) -> Self {
        Self { n, m, q_observed, code_rate, a_correction, d_outcomes: 2 }
    }

    pub fn validate(&self) -> Result<(), FiniteKeyError> {
        if self.n < 1 {
            return Err(domain("n", self.n as f64, ">= 1"));
        }
        if self.m < 1 {
            return Err(domain("m", self.m as f64, ">= 1"));
        }
        if !(0.0..=0.5).contains(&self.q_observed) {
            return Err(domain("q", self.q_observed, "[0, 0.5]"));
        }
        open_unit("rate", self.code_rate)?;
        if !(self.a_correction > 0.0 && self.a_correction <= 1.0) {
            return Err(domain("A", self.a_correction, "(0, 1]"));
        }
        if self.d_outcomes != 2 {
            return Err(domain("d", f64::from(self.d_outcomes), "{2}"));
        }
        Ok(())
    }
}

/// `h(x) = -x log2 x - (1 - x) log2 (1 - x)`, with `h(0) = h(1) = 0`.
pub fn binary_entropy(x: f64) -> Result<f64, FiniteKeyError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(domain("x", x, "[0, 1]"));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(0.0);
    }
    Ok(-x * x.log2() - (1.0 - x) * (1.0 - x).log2())
}

/// Statistical widening of the QBER estimated from `m` samples.
pub fn xi(m: u64, eps_pe: f64, d: u32) -> Result<f64, FiniteKeyError> {
    if m < 1 {
        return Err(domain("m", m as f64, ">= 1"));
    }
    open_unit("eps_pe", eps_pe)?;
    if d < 1 {
        return Err(domain("d", f64::from(d), ">= 1"));
    }
    let m = m as f64;
    let numer = 2.0 * (1.0 / eps_pe).log2() + f64::from(d) * (m + 1.0).log2();
    Ok(0.5 * (numer / m).sqrt())
}

/// Upper bound on the QBER and whether it has crossed 1/2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QberUpper {
    pub value: f64,
    /// `q + xi >= 0.5`: no key can be extracted.
    pub saturated: bool,
}

pub fn qber_upper(q: f64, xi_value: f64) -> Result<QberUpper, FiniteKeyError> {
    if !(q >= 0.0) {
        return Err(domain("q", q, ">= 0"));
    }
    if !(xi_value >= 0.0) {
        return Err(domain("xi", xi_value, ">= 0"));
    }
    let value = q + xi_value;
    Ok(QberUpper { value, saturated: value >= 0.5 })
}

/// `A = (p_det - P_m) / p_det`.
pub fn correction_a(p_det: f64, p_m: f64) -> Result<f64, FiniteKeyError> {
    if !(p_det > 0.0 && p_det <= 1.0) {
        return Err(domain("p_det", p_det, "(0, 1]"));
    }
    if !(p_m >= 0.0) {
        return Err(domain("p_m", p_m, ">= 0"));
    }
    if p_m >= p_det {
        return Err(FiniteKeyError::MultiphotonExceedsDetection { p_m, p_det });
    }
    Ok(1.0 - p_m / p_det)
}

/// Finite-size penalty
/// `7 sqrt(log2(2/eps_smooth) / n) + (2 log2(1/eps_pa) + log2(2/eps_ec)) / n`.
pub fn delta_penalty(n: u64, eps_smooth: f64, eps_pa: f64, eps_ec: f64) -> Result<f64, FiniteKeyError> {
    if n < 1 {
        return Err(domain("n", n as f64, ">= 1"));
    }
    open_unit("eps_smooth", eps_smooth)?;
    open_unit("eps_pa", eps_pa)?;
    open_unit("eps_ec", eps_ec)?;
    let n = n as f64;
    Ok(7.0 * ((2.0 / eps_smooth).log2() / n).sqrt() + (2.0 * (1.0 / eps_pa).log2() + (2.0 / eps_ec).log2()) / n)
}

/// Every intermediate of one secret-fraction evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecretFraction {
    pub xi: f64,
    pub q_upper: f64,
    pub delta: f64,
    /// Signed formula value; `-inf` when `Q^u / A > 1` leaves the entropy undefined.
    pub r_raw: f64,
    /// `max(r_raw, 0)`.
    pub r: f64,
}

pub fn secret_fraction(params: &FiniteKeyParams, budget: &SecurityBudget) -> Result<SecretFraction, FiniteKeyError> {
    params.validate()?;
    budget.validate()?;
    let xi = xi(params.m, budget.eps_pe, params.d_outcomes)?;
    let q_upper = qber_upper(params.q_observed, xi)?.value;
    let delta = delta_penalty(params.n, budget.eps_smooth, budget.eps_pa, budget.eps_ec)?;
    let a = params.a_correction;
    let ratio = q_upper / a;
    let r_raw = if ratio > 1.0 {
        f64::NEG_INFINITY
    } else {
        a * (1.0 - binary_entropy(ratio)?) - leakage(params.code_rate) - delta
    };
    Ok(SecretFraction { xi, q_upper, delta, r_raw, r: r_raw.max(0.0) })
}

fn leakage(code_rate: f64) -> f64 {
    1.0 - code_rate
}

/// `floor(r * n)`.
pub fn secret_key_length(n: u64, r: f64) -> u64 {
    if !(r > 0.0) {
        return 0;
    }
    (r * n as f64).floor() as u64
}

/// `f_E = (1 - R_c) / h(Q)`.
pub fn reconciliation_efficiency(code_rate: f64, q: f64) -> Result<f64, FiniteKeyError> {
    if !(q > 0.0 && q < 0.5) {
        return Err(domain("q", q, "(0, 0.5)"));
    }
    if !(0.0..=1.0).contains(&code_rate) {
        return Err(domain("rate", code_rate, "[0, 1]"));
    }
    Ok(leakage(code_rate) / binary_entropy(q)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub q: f64,
    pub n: u64,
    pub result: Result<SecretFraction, FiniteKeyError>,
}

/// Evaluates the grid `q_values x n_values` with `m = n`, q-major in input order.
pub fn r_vs_n_curve(
    q_values: &[f64],
    n_values: &[u64],
    budget: &SecurityBudget,
    code_rate: f64,
    a_correction: f64,
) -> Vec<CurvePoint> {
    q_values
        .iter()
        .flat_map(|&q| {
            n_values.iter().map(move |&n| CurvePoint {
                q,
                n,
                result: secret_fraction(&FiniteKeyParams::new(n, n, q, code_rate, a_correction), budget),
            })
        })
        .collect()
}

pub const CURVE_CSV_HEADER: &str = "q,n,r_raw,r";

/// CSV rows for [`r_vs_n_curve`]; rows with a domain error carry `NaN`.
pub fn curve_to_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from(CURVE_CSV_HEADER);
    out.push('\n');
    for p in points {
        let (raw, r) = match &p.result {
            Ok(s) => (s.r_raw, s.r),
            Err(_) => (f64::NAN, f64::NAN),
        };
        out.push_str(&format!("{},{},{},{}\n", p.q, p.n, raw, r));
    }
    out
}
