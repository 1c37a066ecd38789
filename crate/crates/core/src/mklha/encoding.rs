//! Canonical byte encodings (compressed points) and key files.

use std::collections::BTreeMap;

use blstrs::{G1Affine, G2Affine};
use group::prime::PrimeCurveAffine;

use super::{
    AggregatedAuthenticator, Authenticator, Identity, IdentityComponent, MklhaError, SecretKey, VerificationKey,
    CURVE_NAME,
};

pub const G1_BYTES: usize = 48;
pub const G2_BYTES: usize = 96;
/// Λ and C in G1, S in G2.
pub const AUTHENTICATOR_BYTES: usize = 2 * G1_BYTES + G2_BYTES;

const AGG_ENTRY_BYTES: usize = 4 + 2 * G1_BYTES;

const VK_HEADER: &str = "vfl-vk v1";
const SK_HEADER: &str = "vfl-sk v1";

/// Checks applied to every decoded point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[allow(clippy::manual_non_exhaustive)]
pub enum PointValidation {
    /// On-curve and prime-order subgroup membership.
    #[default]
    Full,
    /// On-curve only. Exists so the self-test can prove that disabling the
    /// subgroup check is detected; never use it on untrusted input.
    #[doc(hidden)]
    SkipSubgroupCheck,
}

fn g1_from_bytes(bytes: &[u8], validation: PointValidation) -> Result<G1Affine, MklhaError> {
    let arr: &[u8; G1_BYTES] = bytes.try_into().map_err(|_| MklhaError::Malformed("G1 point length"))?;
    let p = match validation {
        PointValidation::Full => G1Affine::from_compressed(arr),
        PointValidation::SkipSubgroupCheck => G1Affine::from_compressed_unchecked(arr),
    };
    Option::from(p).ok_or(MklhaError::Malformed("invalid G1 point"))
}

fn g2_from_bytes(bytes: &[u8], validation: PointValidation) -> Result<G2Affine, MklhaError> {
    let arr: &[u8; G2_BYTES] = bytes.try_into().map_err(|_| MklhaError::Malformed("G2 point length"))?;
    let p = match validation {
        PointValidation::Full => G2Affine::from_compressed(arr),
        PointValidation::SkipSubgroupCheck => G2Affine::from_compressed_unchecked(arr),
    };
    Option::from(p).ok_or(MklhaError::Malformed("invalid G2 point"))
}

/// A valid compressed curve point outside the prime-order subgroup.
/// Fixture for tests that check subgroup validation.
#[doc(hidden)]
pub fn off_subgroup_g1_bytes() -> [u8; G1_BYTES] {
    for x in 1u8..=255 {
        let mut bytes = [0u8; G1_BYTES];
        bytes[0] = 0x80; // compressed flag
        bytes[G1_BYTES - 1] = x;
        if let Some(p) = Option::<G1Affine>::from(G1Affine::from_compressed_unchecked(&bytes)) {
            if !bool::from(p.is_torsion_free()) {
                return bytes;
            }
        }
    }
    unreachable!("small x values always include non-subgroup points")
}

impl Authenticator {
    pub fn to_bytes(&self) -> [u8; AUTHENTICATOR_BYTES] {
        let mut out = [0u8; AUTHENTICATOR_BYTES];
        out[..G1_BYTES].copy_from_slice(&self.lambda.to_compressed());
        out[G1_BYTES..2 * G1_BYTES].copy_from_slice(&self.commit.to_compressed());
        out[2 * G1_BYTES..].copy_from_slice(&self.s.to_compressed());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MklhaError> {
        Self::from_bytes_with(bytes, PointValidation::Full)
    }

    pub fn from_bytes_with(bytes: &[u8], validation: PointValidation) -> Result<Self, MklhaError> {
        if bytes.len() != AUTHENTICATOR_BYTES {
            return Err(MklhaError::Malformed("authenticator length"));
        }
        Ok(Authenticator {
            lambda: g1_from_bytes(&bytes[..G1_BYTES], validation)?,
            commit: g1_from_bytes(&bytes[G1_BYTES..2 * G1_BYTES], validation)?,
            s: g2_from_bytes(&bytes[2 * G1_BYTES..], validation)?,
        })
    }
}

impl AggregatedAuthenticator {
    /// `count:u32le || (id:u32le, Λ, C)* || S_agg`, entries in ascending id order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&(self.per_identity.len() as u32).to_le_bytes());
        for (id, c) in &self.per_identity {
            out.extend_from_slice(&id.0.to_le_bytes());
            out.extend_from_slice(&c.lambda.to_compressed());
            out.extend_from_slice(&c.commit.to_compressed());
        }
        out.extend_from_slice(&self.s_agg.to_compressed());
        out
    }

    pub fn encoded_len(&self) -> usize {
        4 + self.per_identity.len() * AGG_ENTRY_BYTES + G2_BYTES
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MklhaError> {
        if bytes.len() < 4 {
            return Err(MklhaError::Malformed("aggregate header"));
        }
        let count = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
        let expected = count
            .checked_mul(AGG_ENTRY_BYTES)
            .and_then(|n| n.checked_add(4 + G2_BYTES))
            .ok_or(MklhaError::Malformed("aggregate length"))?;
        if bytes.len() != expected {
            return Err(MklhaError::Malformed("aggregate length"));
        }
        let mut per_identity = BTreeMap::new();
        let mut last: Option<u32> = None;
        for entry in bytes[4..4 + count * AGG_ENTRY_BYTES].chunks_exact(AGG_ENTRY_BYTES) {
            let id = u32::from_le_bytes(entry[..4].try_into().unwrap());
            if last.is_some_and(|l| l >= id) {
                return Err(MklhaError::Malformed("aggregate identities not strictly ascending"));
            }
            last = Some(id);
            per_identity.insert(
                Identity(id),
                IdentityComponent {
                    lambda: g1_from_bytes(&entry[4..4 + G1_BYTES], PointValidation::Full)?,
                    commit: g1_from_bytes(&entry[4 + G1_BYTES..], PointValidation::Full)?,
                },
            );
        }
        let s_agg = g2_from_bytes(&bytes[4 + count * AGG_ENTRY_BYTES..], PointValidation::Full)?;
        Ok(AggregatedAuthenticator { per_identity, s_agg })
    }
}

impl VerificationKey {
    pub fn to_bytes(&self) -> [u8; G2_BYTES] {
        self.0.to_compressed()
    }

    /// Rejects off-curve, non-subgroup and identity points.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MklhaError> {
        let p = g2_from_bytes(bytes, PointValidation::Full)?;
        if bool::from(p.is_identity()) {
            return Err(MklhaError::Malformed("verification key is the identity"));
        }
        Ok(VerificationKey(p))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_bytes())
    }

    pub fn from_hex(s: &str) -> Result<Self, MklhaError> {
        let bytes = hex::decode(s.trim()).map_err(|_| MklhaError::Malformed("verification key hex"))?;
        Self::from_bytes(&bytes)
    }
}

/// Key file: header line `vfl-vk v1 bls12-381`, then one hex point per line.
pub fn verification_key_file_contents(keys: &[VerificationKey]) -> String {
    let mut out = format!("{VK_HEADER} {CURVE_NAME}\n");
    for vk in keys {
        out.push_str(&vk.to_hex());
        out.push('\n');
    }
    out
}

pub fn parse_verification_key_file(contents: &str) -> Result<Vec<VerificationKey>, MklhaError> {
    let body = check_header(contents, VK_HEADER)?;
    body.map(|line| VerificationKey::from_hex(line).map_err(|e| MklhaError::KeyFile(e.to_string())))
        .collect()
}

/// Secret key file: header `vfl-sk v1 bls12-381`, then the little-endian
/// scalar in hex.
pub fn secret_key_file_contents(sk: &SecretKey) -> String {
    format!("{SK_HEADER} {CURVE_NAME}\n{}\n", hex::encode(sk.to_bytes()))
}

pub fn parse_secret_key_file(contents: &str) -> Result<SecretKey, MklhaError> {
    let mut body = check_header(contents, SK_HEADER)?;
    let line = body
        .next()
        .ok_or_else(|| MklhaError::KeyFile("missing key line".into()))?;
    if body.next().is_some() {
        return Err(MklhaError::KeyFile("trailing data after secret key".into()));
    }
    let bytes: [u8; 32] = hex::decode(line)
        .ok()
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| MklhaError::KeyFile("secret key must be 32 hex-encoded bytes".into()))?;
    SecretKey::from_bytes(&bytes)
}

fn check_header<'a>(contents: &'a str, header: &str) -> Result<impl Iterator<Item = &'a str>, MklhaError> {
    let mut lines = contents.lines();
    let first = lines.next().ok_or_else(|| MklhaError::KeyFile("empty file".into()))?;
    let expected = format!("{header} {CURVE_NAME}");
    if first.trim_end() != expected {
        return Err(MklhaError::KeyFile(format!(
            "expected header `{expected}`, found `{first}`"
        )));
    }
    Ok(lines.map(str::trim).filter(|l| !l.is_empty()))
}
