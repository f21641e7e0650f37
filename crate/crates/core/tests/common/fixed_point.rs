//! Fixed-point big-integer evaluation of the finite-key formulas, 256
//! fractional bits. Shares no code with the f64 implementation.
#![allow(dead_code)]

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use qkd_core::finite_key::{FiniteKeyParams, SecurityBudget};

const P: u64 = 256;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Fx(BigInt);

pub fn one() -> BigInt {
    BigInt::one() << P
}

impl Fx {
    pub fn int(v: u64) -> Fx {
        Fx(BigInt::from(v) << P)
    }

    /// Exact conversion: every finite f64 is `mantissa * 2^exp`.
    pub fn from_f64(x: f64) -> Fx {
        assert!(x.is_finite());
        if x == 0.0 {
            return Fx(BigInt::zero());
        }
        let bits = x.abs().to_bits();
        let exp = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        let (mant, e) = if exp == 0 { (frac, -1074) } else { (frac | (1 << 52), exp - 1075) };
        let shift = e + P as i64;
        let v = if shift >= 0 { BigInt::from(mant) << shift as u64 } else { BigInt::from(mant) >> (-shift) as u64 };
        Fx(if x < 0.0 { -v } else { v })
    }

    pub fn to_f64(&self) -> f64 {
        // Keep 80 significant bits, then scale.
        let bits = self.0.bits() as i64;
        let drop = (bits - 80).max(0);
        let top = (&self.0 >> drop as u64).to_f64().unwrap();
        top * 2f64.powi((drop - P as i64) as i32)
    }

    pub fn add(&self, o: &Fx) -> Fx {
        Fx(&self.0 + &o.0)
    }
    pub fn sub(&self, o: &Fx) -> Fx {
        Fx(&self.0 - &o.0)
    }
    pub fn mul(&self, o: &Fx) -> Fx {
        Fx((&self.0 * &o.0) >> P)
    }
    pub fn div(&self, o: &Fx) -> Fx {
        Fx((&self.0 << P) / &o.0)
    }
    pub fn sqrt(&self) -> Fx {
        assert!(!self.0.is_negative());
        Fx((&self.0 << P).sqrt())
    }

    /// Binary logarithm by repeated squaring.
    pub fn log2(&self) -> Fx {
        assert!(self.0.is_positive());
        let k = self.0.bits() as i64 - 1 - P as i64;
        let mut y = if k >= 0 { self.0.clone() >> k as u64 } else { self.0.clone() << (-k) as u64 };
        let two = one() << 1u32;
        let mut frac = BigInt::zero();
        for i in 1..=P {
            y = (&y * &y) >> P;
            if y >= two {
                y >>= 1u32;
                frac += BigInt::one() << (P - i);
            }
        }
        Fx((BigInt::from(k) << P) + frac)
    }
}

pub fn h(x: &Fx) -> Fx {
    if x.0.is_zero() || x.0 == one() {
        return Fx(BigInt::zero());
    }
    let o = Fx(one());
    let y = o.sub(x);
    Fx(BigInt::zero()).sub(&x.mul(&x.log2())).sub(&y.mul(&y.log2()))
}

pub struct Oracle {
    pub xi: Fx,
    pub q_upper: Fx,
    pub delta: Fx,
    pub r_raw: Fx,
    pub entropy: Fx,
}

pub fn oracle(p: &FiniteKeyParams, b: &SecurityBudget) -> Oracle {
    let o = Fx(one());
    let m = Fx::int(p.m);
    let n = Fx::int(p.n);
    let inv = |e: f64| o.div(&Fx::from_f64(e));
    let xi_inner = Fx::int(2)
        .mul(&inv(b.eps_pe).log2())
        .add(&Fx::int(p.d_outcomes as u64).mul(&Fx::int(p.m + 1).log2()))
        .div(&m);
    let xi = xi_inner.sqrt().div(&Fx::int(2));
    let q_upper = Fx::from_f64(p.q_observed).add(&xi);
    let two_over = |e: f64| Fx::int(2).div(&Fx::from_f64(e));
    let delta = Fx::int(7)
        .mul(&two_over(b.eps_smooth).log2().div(&n).sqrt())
        .add(&Fx::int(2).mul(&inv(b.eps_pa).log2()).add(&two_over(b.eps_ec).log2()).div(&n));
    let a = Fx::from_f64(p.a_correction);
    let entropy = h(&q_upper.div(&a));
    let r_raw = a.mul(&o.sub(&entropy)).sub(&o.sub(&Fx::from_f64(p.code_rate))).sub(&delta);
    Oracle { xi, q_upper, delta, r_raw, entropy }
}

