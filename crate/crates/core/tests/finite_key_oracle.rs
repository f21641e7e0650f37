use qkd_core::bits::SeededRng;
use qkd_core::finite_key::{self, FiniteKeyParams, SecurityBudget};
use rand::Rng;

#[path = "common/fixed_point.rs"]
mod fixed_point;

use fixed_point::{h, oracle, Fx};

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

#[test]
fn oracle_self_check() {
    let x = Fx::from_f64(0.06);
    assert!((h(&x).to_f64() - 0.327_444_9).abs() < 1e-7);
    assert!((Fx::int(8).log2().to_f64() - 3.0).abs() < 1e-60);
    assert!((Fx::int(2).sqrt().to_f64() - std::f64::consts::SQRT_2).abs() < 1e-15);
    assert_eq!(Fx::from_f64(-0.375).to_f64(), -0.375);
}

#[test]
fn thousand_random_draws_agree() {
    let mut rng = SeededRng::new(2024);
    let mut checked = 0;
    for _ in 0..1000 {
        let n = 10f64.powf(rng.random_range(3.0..12.0)) as u64;
        let m = 10f64.powf(rng.random_range(3.0..9.0)) as u64;
        let q = rng.random_range(0.0..0.2);
        let rate = rng.random_range(0.3..0.9);
        let a = rng.random_range(0.9..1.0);
        let eps = 10f64.powf(rng.random_range(-15.0..-3.0));
        let budget = SecurityBudget::even(eps).unwrap();
        let params = FiniteKeyParams::new(n, m, q, rate, a);
        let got = finite_key::secret_fraction(&params, &budget).unwrap();
        let want = oracle(&params, &budget);

        assert!(rel(got.xi, want.xi.to_f64()) <= 1e-9, "xi {n} {m} {q}");
        assert!(rel(got.delta, want.delta.to_f64()) <= 1e-9, "delta {n}");
        assert!(rel(got.q_upper, want.q_upper.to_f64()) <= 1e-9);
        if want.q_upper.to_f64() / a > 1.0 {
            assert_eq!(got.r_raw, f64::NEG_INFINITY);
            assert_eq!(got.r, 0.0);
            continue;
        }
        let hq = finite_key::binary_entropy(got.q_upper / a).unwrap();
        assert!((hq - want.entropy.to_f64()).abs() <= 1e-9 * want.entropy.to_f64().max(1e-300));
        // r is a difference of O(1) terms; measure error against their scale.
        let scale = a * (1.0 - want.entropy.to_f64()) + (1.0 - rate) + want.delta.to_f64();
        assert!((got.r_raw - want.r_raw.to_f64()).abs() <= 1e-9 * scale, "r {n} {m} {q} {rate} {a} {eps}");
        assert_eq!(got.r, got.r_raw.max(0.0));
        checked += 1;
    }
    assert!(checked > 500);
}

#[test]
fn frozen_reference_values() {
    let b = SecurityBudget::even(1e-10).unwrap();
    let r = |n, q| finite_key::secret_fraction(&FiniteKeyParams::new(n, n, q, 0.5, 0.985), &b).unwrap();
    assert!((r(1_000_000, 0.06).r_raw - 0.096_290_4).abs() < 1e-6);
    assert_eq!(finite_key::secret_key_length(1_000_000, r(1_000_000, 0.06).r), 96_290);
    let o = oracle(&FiniteKeyParams::new(1_000_000, 1_000_000, 0.06, 0.5, 0.985), &b);
    assert!((o.r_raw.to_f64() - 0.096_290_4).abs() < 1e-6);
    assert!((r(100_000, 0.05).r_raw - 0.001_015).abs() < 2e-6);
    assert!(r(10_000, 0.03).r == 0.0 && r(100_000, 0.08).r == 0.0);
}
