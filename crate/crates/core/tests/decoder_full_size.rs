use qkd_core::bits::{hamming_distance, random_bits, BitString, SeededRng};
use qkd_core::ldpc::{decode_bp_flooding, decode_bp_serial, peg_construct, syndrome, DegreeDistribution};
use rand::Rng;

/// Well inside the (3,6) threshold every block should decode, in a handful
/// of layered iterations, and never fewer often than the flooding schedule.
#[test]
fn default_code_decodes_every_block_at_five_percent() {
    let h = peg_construct(10_000, 0.5, &DegreeDistribution::default_rate_half(), &mut SeededRng::new(1)).unwrap();
    let mut rng = SeededRng::new(77);
    let (mut serial_iters, mut flood_iters) = (0, 0);
    for _ in 0..100 {
        let bob = random_bits(10_000, &mut rng);
        let alice = BitString::from_bools(bob.iter().map(|b| b ^ rng.random_bool(0.05)));
        let target = syndrome(&h, &bob).unwrap();
        let s = decode_bp_serial(&h, &alice, &target, 0.05, 100).unwrap();
        assert!(s.converged, "serial failed with {} channel errors", hamming_distance(&alice, &bob).unwrap());
        assert_eq!(syndrome(&h, &s.corrected).unwrap(), target);
        assert_eq!(s.corrected, bob);
        serial_iters += s.iterations;
        let f = decode_bp_flooding(&h, &alice, &target, 0.05, 100).unwrap();
        assert!(f.converged);
        flood_iters += f.iterations;
    }
    assert!(serial_iters < flood_iters, "{serial_iters} vs {flood_iters}");
}
