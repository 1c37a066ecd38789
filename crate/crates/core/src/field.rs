//! Scalar field of BLS12-381, the single arithmetic domain shared by the
//! fixed-point codec, the pairwise masks and the authenticator exponents.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Neg, Sub, SubAssign};

use blstrs::Scalar;
use ff::Field;
use rand::RngCore;

/// Size in bytes of a canonical little-endian field element encoding.
pub const FIELD_BYTES: usize = 32;

/// Modulus `p` of the scalar field, big-endian hex.
pub const MODULUS_HEX: &str = "73eda753299d7d483339d80809a1d80553bda402fffe5bfeffffffff00000001";

/// An element of F_p in canonical reduced form.
#[derive(Clone, Copy, PartialEq, Eq, Default)]
pub struct FieldScalar(pub(crate) Scalar);

impl std::hash::Hash for FieldScalar {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.to_bytes_le().hash(state);
    }
}

impl FieldScalar {
    pub const ZERO: FieldScalar = FieldScalar(Scalar::ZERO);
    pub const ONE: FieldScalar = FieldScalar(Scalar::ONE);

    pub fn from_u64(v: u64) -> Self {
        FieldScalar(Scalar::from(v))
    }

    pub fn from_u128(v: u128) -> Self {
        let limbs = [v as u64, (v >> 64) as u64, 0, 0];
        // Anything below 2^128 is far below p.
        FieldScalar(Option::from(Scalar::from_u64s_le(&limbs)).expect("u128 < p"))
    }

    /// Modular embedding of a signed integer: negative values map to p - |v|.
    pub fn from_i128(v: i128) -> Self {
        let mag = FieldScalar::from_u128(v.unsigned_abs());
        if v < 0 {
            -mag
        } else {
            mag
        }
    }

    /// Centered lift into (-(p-1)/2, (p-1)/2], or `None` when the lifted
    /// value does not fit in an `i128`.
    pub fn to_i128_centered(&self) -> Option<i128> {
        if let Some(v) = le_bytes_to_i128(&self.0.to_bytes_le()) {
            return Some(v);
        }
        le_bytes_to_i128(&(-self.0).to_bytes_le()).map(|v| -v)
    }

    pub fn random<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        FieldScalar(Scalar::random(rng))
    }

    /// Reduces 512 uniform bits modulo p. The statistical distance from
    /// uniform is below 2^-256.
    pub fn from_uniform_bytes(bytes: &[u8; 64]) -> Self {
        let two_128 = Scalar::from_u64s_le(&[0, 0, 1, 0]).unwrap();
        let mut acc = Scalar::ZERO;
        for chunk in bytes.chunks_exact(16).rev() {
            let lo = u64::from_le_bytes(chunk[..8].try_into().unwrap());
            let hi = u64::from_le_bytes(chunk[8..].try_into().unwrap());
            let limb = Scalar::from_u64s_le(&[lo, hi, 0, 0]).unwrap();
            acc = acc * two_128 + limb;
        }
        FieldScalar(acc)
    }

    /// Canonical decoding; rejects values `>= p`.
    pub fn from_bytes_le(bytes: &[u8; FIELD_BYTES]) -> Option<Self> {
        Option::from(Scalar::from_bytes_le(bytes)).map(FieldScalar)
    }

    pub fn to_bytes_le(&self) -> [u8; FIELD_BYTES] {
        self.0.to_bytes_le()
    }

    pub fn is_zero(&self) -> bool {
        bool::from(self.0.is_zero())
    }

    pub fn inner(&self) -> &Scalar {
        &self.0
    }
}

fn le_bytes_to_i128(bytes: &[u8; FIELD_BYTES]) -> Option<i128> {
    if bytes[16..].iter().any(|&b| b != 0) {
        return None;
    }
    let v = u128::from_le_bytes(bytes[..16].try_into().unwrap());
    i128::try_from(v).ok()
}

impl From<Scalar> for FieldScalar {
    fn from(s: Scalar) -> Self {
        FieldScalar(s)
    }
}

impl From<FieldScalar> for Scalar {
    fn from(s: FieldScalar) -> Self {
        s.0
    }
}

impl fmt::Debug for FieldScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.to_i128_centered() {
            Some(v) => write!(f, "FieldScalar({v})"),
            None => {
                let mut be = self.0.to_bytes_le();
                be.reverse();
                write!(f, "FieldScalar(0x{})", hex::encode(be))
            }
        }
    }
}

impl Add for FieldScalar {
    type Output = FieldScalar;
    fn add(self, rhs: FieldScalar) -> FieldScalar {
        FieldScalar(self.0 + rhs.0)
    }
}

impl Sub for FieldScalar {
    type Output = FieldScalar;
    fn sub(self, rhs: FieldScalar) -> FieldScalar {
        FieldScalar(self.0 - rhs.0)
    }
}

impl Neg for FieldScalar {
    type Output = FieldScalar;
    fn neg(self) -> FieldScalar {
        FieldScalar(-self.0)
    }
}

impl AddAssign for FieldScalar {
    fn add_assign(&mut self, rhs: FieldScalar) {
        self.0 += rhs.0;
    }
}

impl SubAssign for FieldScalar {
    fn sub_assign(&mut self, rhs: FieldScalar) {
        self.0 -= rhs.0;
    }
}

impl Sum for FieldScalar {
    fn sum<I: Iterator<Item = FieldScalar>>(iter: I) -> Self {
        iter.fold(FieldScalar::ZERO, |a, b| a + b)
    }
}

impl<'a> Sum<&'a FieldScalar> for FieldScalar {
    fn sum<I: Iterator<Item = &'a FieldScalar>>(iter: I) -> Self {
        iter.fold(FieldScalar::ZERO, |a, b| a + *b)
    }
}
