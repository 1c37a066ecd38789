use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use vfl_core::codec::scaled_units;
use vfl_core::{EncodingBounds, FieldScalar, FixedPointCodec, Precision};

fn codec(dp: u8, max_abs: f64, clients: u32) -> FixedPointCodec {
    FixedPointCodec::new(Precision::new(dp).unwrap(), EncodingBounds::new(max_abs, clients)).unwrap()
}

fn pow10(dp: u8) -> BigInt {
    BigInt::from(10u64.pow(dp as u32))
}

// round(x * 10^dp), half away from zero, on the exact binary value of x.
fn oracle_units(x: f64, dp: u8) -> BigInt {
    let exact = BigRational::from_float(x).unwrap() * BigRational::from_integer(pow10(dp));
    exact.round().to_integer()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn scaled_units_matches_rational_oracle(x in -1.0e6f64..1.0e6, dp in 1u8..=12) {
        let got = scaled_units(x, dp).unwrap();
        prop_assert_eq!(BigInt::from(got), oracle_units(x, dp));
    }

    #[test]
    fn roundtrip_error_is_at_most_half_an_ulp_of_precision(x in -10.0f64..10.0, dp in 1u8..=8) {
        let c = codec(dp, 10.0, 8);
        let back = c.decode(c.encode(x).unwrap()).unwrap();
        prop_assert!((back - x).abs() <= 0.5 * 10f64.powi(-(dp as i32)) * (1.0 + 1e-9));
    }

    #[test]
    fn sign_symmetry(x in -10.0f64..10.0, dp in 1u8..=8) {
        let c = codec(dp, 10.0, 8);
        prop_assert_eq!(c.encode(-x).unwrap(), -c.encode(x).unwrap());
    }

    #[test]
    fn additive_homomorphism_is_exact(xs in prop::collection::vec(-10.0f64..10.0, 1..=64), dp in 1u8..=8) {
        let c = codec(dp, 10.0, 64);
        let sum: FieldScalar = xs.iter().map(|&x| c.encode(x).unwrap()).sum();
        let expected: BigInt = xs.iter().map(|&x| oracle_units(x, dp)).sum();
        prop_assert_eq!(BigInt::from(c.decode_units(sum).unwrap()), expected);
    }
}

#[test]
fn hundred_random_reals_sum_exactly() {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let c = codec(4, 10.0, 100);
    let xs: Vec<f64> = (0..100).map(|_| rng.gen_range(-10.0..=10.0)).collect();
    let sum: FieldScalar = xs.iter().map(|&x| c.encode(x).unwrap()).sum();
    let expected: BigInt = xs.iter().map(|&x| oracle_units(x, 4)).sum();
    assert_eq!(BigInt::from(c.decode_units(sum).unwrap()), expected);
}

#[test]
fn five_client_means_match_rational_oracle() {
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    for dp in [2u8, 4, 6] {
        let c = codec(dp, 10.0, 5);
        for _ in 0..200 {
            let xs: Vec<f64> = (0..5).map(|_| rng.gen_range(-10.0..=10.0)).collect();
            let sum: FieldScalar = xs.iter().map(|&x| c.encode(x).unwrap()).sum();
            let got = c.divide_by_count(sum, 5).unwrap();

            let total: BigInt = xs.iter().map(|&x| oracle_units(x, dp)).sum();
            let exact_mean = BigRational::new(total.clone(), pow10(dp) * BigInt::from(5));
            let err = (BigRational::from_float(got).unwrap() - &exact_mean).abs();
            assert!(err.to_f64().unwrap() <= 10f64.powi(-(dp as i32)), "dp {dp}");

            // The fixed-point mean rounds exactly like the rational one.
            let rounded = c.mean(sum, 5).unwrap().rounded_units();
            let oracle = (exact_mean * BigRational::from_integer(pow10(dp))).round().to_integer();
            assert_eq!(BigInt::from(rounded), oracle);
        }
    }
}

#[test]
fn decode_of_zero_and_extremes() {
    let c = codec(4, 10.0, 3);
    assert!(c.decode(FieldScalar::ZERO).unwrap().is_zero());
    let top: FieldScalar = (0..3).map(|_| c.encode(10.0).unwrap()).sum();
    assert_eq!(c.decode(top).unwrap(), 30.0);
    let bottom: FieldScalar = (0..3).map(|_| c.encode(-10.0).unwrap()).sum();
    assert_eq!(c.decode(bottom).unwrap(), -30.0);
    assert!(c.decode(top + FieldScalar::ONE).is_err());
}
