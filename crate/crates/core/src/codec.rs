//! Fixed-point embedding of real-valued model updates into F_p.
//!
//! A real `x` is rounded (half away from zero) to `dp` decimal places and the
//! resulting integer `round(x * 10^dp)` is embedded modularly, so negative
//! values land at `p - |v|`. Field addition then matches integer addition as
//! long as every partial sum stays inside the declared [`EncodingBounds`];
//! decoding uses the centered lift and fails loudly when it does not.

use thiserror::Error;

use crate::field::FieldScalar;

/// Largest supported number of decimal places.
pub const MAX_DECIMAL_PLACES: u8 = 12;

/// Decimal places used when none are configured.
pub const DEFAULT_DECIMAL_PLACES: u8 = 4;

// Sums are lifted into i128; keep a bit of headroom below 2^127.
// (p - 1) / 2 is far larger, so this is the binding limit.
const MAX_SUM_UNITS: i128 = 1 << 125;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("decimal places must be in 1..={MAX_DECIMAL_PLACES}, got {0}")]
    InvalidPrecision(u8),
    #[error("invalid encoding bounds: {0}")]
    InvalidBounds(String),
    #[error("value {value} exceeds the encodable magnitude {max_abs}")]
    Overflow { value: f64, max_abs: f64 },
    #[error("value is not finite")]
    NotFinite,
    #[error("decoded value lies outside the declared bounds (wraparound or misconfiguration)")]
    DecodeRange,
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
}

/// Number of decimal places kept when embedding reals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Precision {
    decimal_places: u8,
}

impl Precision {
    pub fn new(decimal_places: u8) -> Result<Self, CodecError> {
        if !(1..=MAX_DECIMAL_PLACES).contains(&decimal_places) {
            return Err(CodecError::InvalidPrecision(decimal_places));
        }
        Ok(Precision { decimal_places })
    }

    pub fn decimal_places(&self) -> u8 {
        self.decimal_places
    }

    /// `10^decimal_places`.
    pub fn scale(&self) -> u64 {
        10u64.pow(self.decimal_places as u32)
    }
}

impl Default for Precision {
    fn default() -> Self {
        Precision {
            decimal_places: DEFAULT_DECIMAL_PLACES,
        }
    }
}

/// Declared magnitude limits. Nothing is inferred from the data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodingBounds {
    pub max_abs_value: f64,
    pub max_clients: u32,
}

impl EncodingBounds {
    pub fn new(max_abs_value: f64, max_clients: u32) -> Self {
        EncodingBounds {
            max_abs_value,
            max_clients,
        }
    }
}

/// Rounds `x * 10^dp` half away from zero using the exact binary value of
/// `x`, so no error is introduced by a floating-point multiplication.
///
/// Returns `None` when the result does not fit in an `i128`.
pub fn scaled_units(x: f64, decimal_places: u8) -> Option<i128> {
    if !x.is_finite() {
        return None;
    }
    if x == 0.0 {
        return Some(0);
    }
    let bits = x.to_bits();
    let negative = bits >> 63 == 1;
    let biased_exp = ((bits >> 52) & 0x7ff) as i32;
    let fraction = bits & ((1u64 << 52) - 1);
    // |x| = mantissa * 2^exp
    let (mantissa, exp) = if biased_exp == 0 {
        (fraction, -1074)
    } else {
        (fraction | (1u64 << 52), biased_exp - 1075)
    };
    let product = mantissa as u128 * 10u128.pow(decimal_places as u32);
    let magnitude = if exp >= 0 {
        let shift = exp as u32;
        if shift >= product.leading_zeros() {
            return None;
        }
        product << shift
    } else {
        let shift = (-exp) as u32;
        if shift >= 128 {
            // product < 2^93, so the quotient is below one half.
            0
        } else {
            let quotient = product >> shift;
            let remainder = product & ((1u128 << shift) - 1);
            let half = 1u128 << (shift - 1);
            quotient + u128::from(remainder >= half)
        }
    };
    let magnitude = i128::try_from(magnitude).ok()?;
    Some(if negative { -magnitude } else { magnitude })
}

/// Integer division rounded half away from zero.
pub fn div_round_half_away(numerator: i128, denominator: i128) -> i128 {
    debug_assert!(denominator > 0);
    let q = numerator / denominator;
    let r = numerator % denominator;
    if 2 * r.abs() >= denominator {
        q + numerator.signum()
    } else {
        q
    }
}

/// Encoder/decoder for one precision and one set of bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointCodec {
    precision: Precision,
    bounds: EncodingBounds,
    max_abs_units: i128,
    max_sum_units: i128,
}

impl FixedPointCodec {
    pub fn new(precision: Precision, bounds: EncodingBounds) -> Result<Self, CodecError> {
        if !(bounds.max_abs_value.is_finite() && bounds.max_abs_value > 0.0) {
            return Err(CodecError::InvalidBounds(
                "max_abs_value must be positive and finite".into(),
            ));
        }
        if bounds.max_clients == 0 {
            return Err(CodecError::InvalidBounds("max_clients must be positive".into()));
        }
        let max_abs_units = scaled_units(bounds.max_abs_value, precision.decimal_places())
            .ok_or_else(|| CodecError::InvalidBounds("max_abs_value too large".into()))?;
        let max_sum_units = max_abs_units
            .checked_mul(bounds.max_clients as i128)
            .filter(|&v| v < MAX_SUM_UNITS)
            .ok_or_else(|| {
                CodecError::InvalidBounds("max_clients * max_abs_value * scale exceeds the representable range".into())
            })?;
        Ok(FixedPointCodec {
            precision,
            bounds,
            max_abs_units,
            max_sum_units,
        })
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn bounds(&self) -> EncodingBounds {
        self.bounds
    }

    /// Integer representative of `x` before field embedding.
    pub fn to_units(&self, x: f64) -> Result<i128, CodecError> {
        if !x.is_finite() {
            return Err(CodecError::NotFinite);
        }
        if x.abs() > self.bounds.max_abs_value {
            return Err(CodecError::Overflow {
                value: x,
                max_abs: self.bounds.max_abs_value,
            });
        }
        let units = scaled_units(x, self.precision.decimal_places()).ok_or(CodecError::NotFinite)?;
        debug_assert!(units.abs() <= self.max_abs_units);
        Ok(units)
    }

    pub fn encode(&self, x: f64) -> Result<FieldScalar, CodecError> {
        self.to_units(x).map(FieldScalar::from_i128)
    }

    pub fn encode_slice(&self, xs: &[f64]) -> Result<Vec<FieldScalar>, CodecError> {
        xs.iter().map(|&x| self.encode(x)).collect()
    }

    /// Centered lift of `v`, checked against the aggregate bound.
    pub fn decode_units(&self, v: FieldScalar) -> Result<i128, CodecError> {
        v.to_i128_centered()
            .filter(|u| u.abs() <= self.max_sum_units)
            .ok_or(CodecError::DecodeRange)
    }

    pub fn decode(&self, v: FieldScalar) -> Result<f64, CodecError> {
        Ok(self.decode_units(v)? as f64 / self.precision.scale() as f64)
    }

    /// `decode(v) / n`, with the division carried out on the decoded value.
    pub fn divide_by_count(&self, v: FieldScalar, n: u32) -> Result<f64, CodecError> {
        Ok(self.mean(v, n)?.to_f64())
    }

    /// Exact mean `decode(v) / n` kept as a fixed-point fraction.
    pub fn mean(&self, v: FieldScalar, n: u32) -> Result<FixedMean, CodecError> {
        if n == 0 {
            return Err(CodecError::InvalidArgument("count must be positive"));
        }
        Ok(FixedMean {
            sum_units: self.decode_units(v)?,
            count: n,
            precision: self.precision,
        })
    }
}

/// `sum_units / (count * 10^dp)`, held exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedMean {
    pub sum_units: i128,
    pub count: u32,
    pub precision: Precision,
}

impl FixedMean {
    /// Nearest binary64 value (one rounding step while the operands are
    /// exactly representable).
    pub fn to_f64(&self) -> f64 {
        self.sum_units as f64 / (self.count as f64 * self.precision.scale() as f64)
    }

    /// The mean rounded half away from zero to `dp` places, in units of 10^-dp.
    pub fn rounded_units(&self) -> i128 {
        div_round_half_away(self.sum_units, self.count as i128)
    }

    pub fn rounded_f64(&self) -> f64 {
        self.rounded_units() as f64 / self.precision.scale() as f64
    }
}
