//! Identity-based multi-key linearly homomorphic authenticator over BLS12-381.
//!
//! Each client authenticates a column `x` of length `d` under its own key `a`:
//!
//! ```text
//! C = f^r * prod_i h_i^{x_i}          hiding vector commitment
//! Λ = (H(label) * C)^a                binds C to the signer and the label
//! S = g2^r                            randomness witness
//! ```
//!
//! Aggregation keeps `(Λ_u, C_u)` per identity and multiplies the `S_u`.
//! Verification of a claimed sum `x_sum` checks every identity component
//! against the registered key and then
//! `e(prod_u C_u / prod_i h_i^{x_sum,i}, g2) = e(f, S_agg)`.
//! Written additively below, as the curve library does.

mod encoding;
pub(crate) mod msm;

use std::collections::BTreeMap;
use std::fmt;

use blstrs::{Bls12, G1Affine, G1Projective, G2Affine, G2Prepared, G2Projective, Scalar};
use group::prime::PrimeCurveAffine;
use group::{Curve, Group};
use pairing::{MillerLoopResult, MultiMillerLoop};
use rand::{CryptoRng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::FieldScalar;

pub use encoding::{
    off_subgroup_g1_bytes, parse_secret_key_file, parse_verification_key_file, secret_key_file_contents,
    verification_key_file_contents, PointValidation, AUTHENTICATOR_BYTES, G1_BYTES, G2_BYTES,
};

pub const CURVE_NAME: &str = "bls12-381";

/// The only security level this curve provides.
pub const SECURITY_LEVEL: u32 = 128;

const DST_SLOT: &[u8] = b"VFL/slot/";
const DST_BLIND: &[u8] = b"VFL/blind/";
const DST_LABEL: &[u8] = b"VFL/label/";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MklhaError {
    #[error("unsupported security level {0} (only {SECURITY_LEVEL} is available on {CURVE_NAME})")]
    UnsupportedSecurityLevel(u32),
    #[error("column length must be at least 1")]
    EmptyDimension,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("key generation failed: {0}")]
    KeyGeneration(String),
    #[error("cannot aggregate an empty set of authenticators")]
    EmptyAggregation,
    #[error("identity {0} appears more than once")]
    DuplicateIdentity(Identity),
    #[error("malformed encoding: {0}")]
    Malformed(&'static str),
    #[error("invalid key file: {0}")]
    KeyFile(String),
}

/// A client identity, unique within one deployment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Identity(pub u32);

impl fmt::Display for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

fn tagged_message(session_tag: &[u8], suffix: &[u8]) -> Vec<u8> {
    let mut msg = Vec::with_capacity(4 + session_tag.len() + suffix.len());
    msg.extend_from_slice(&(session_tag.len() as u32).to_le_bytes());
    msg.extend_from_slice(session_tag);
    msg.extend_from_slice(suffix);
    msg
}

fn slot_generator(session_tag: &[u8], index: u64) -> G1Projective {
    G1Projective::hash_to_curve(&tagged_message(session_tag, &index.to_le_bytes()), DST_SLOT, &[])
}

/// Public parameters. Deterministic in `(security_level, d, session_tag)`:
/// every party recomputes them instead of trusting a copy.
#[derive(Clone)]
pub struct PublicParams {
    security_level: u32,
    session_tag: Vec<u8>,
    g1: G1Affine,
    g2: G2Affine,
    neg_g2: G2Prepared,
    blinding: G1Affine,
    slots: Vec<G1Affine>,
}

impl PublicParams {
    /// Derives `h_1..h_d` and `f` by hash-to-curve with domain separation, so
    /// no discrete-log relation between them is known to anyone. Slot
    /// derivation runs on the current rayon pool.
    pub fn setup(security_level: u32, d: usize, session_tag: &[u8]) -> Result<Self, MklhaError> {
        if security_level != SECURITY_LEVEL {
            return Err(MklhaError::UnsupportedSecurityLevel(security_level));
        }
        if d == 0 {
            return Err(MklhaError::EmptyDimension);
        }
        let projective: Vec<G1Projective> = (0..d as u64)
            .into_par_iter()
            .map(|i| slot_generator(session_tag, i))
            .collect();
        let mut slots = vec![G1Affine::identity(); d];
        G1Projective::batch_normalize(&projective, &mut slots);
        let blinding = G1Projective::hash_to_curve(&tagged_message(session_tag, &[]), DST_BLIND, &[]).to_affine();
        let g2 = G2Affine::generator();
        Ok(PublicParams {
            security_level,
            session_tag: session_tag.to_vec(),
            g1: G1Affine::generator(),
            g2,
            neg_g2: G2Prepared::from(-g2),
            blinding,
            slots,
        })
    }

    /// Parameters for the first `d` slots. Slot `i` does not depend on the
    /// column length, so this equals `setup(λ, d, tag)`.
    pub fn truncated(&self, d: usize) -> Result<Self, MklhaError> {
        if d == 0 {
            return Err(MklhaError::EmptyDimension);
        }
        if d > self.slots.len() {
            return Err(MklhaError::DimensionMismatch {
                expected: self.slots.len(),
                got: d,
            });
        }
        let mut pp = self.clone();
        pp.slots.truncate(d);
        Ok(pp)
    }

    pub fn dimension(&self) -> usize {
        self.slots.len()
    }

    pub fn security_level(&self) -> u32 {
        self.security_level
    }

    pub fn session_tag(&self) -> &[u8] {
        &self.session_tag
    }

    pub fn g1(&self) -> &G1Affine {
        &self.g1
    }

    pub fn g2(&self) -> &G2Affine {
        &self.g2
    }

    pub fn blinding_base(&self) -> &G1Affine {
        &self.blinding
    }

    pub fn slots(&self) -> &[G1Affine] {
        &self.slots
    }

    fn check_len(&self, got: usize) -> Result<(), MklhaError> {
        if got != self.slots.len() {
            return Err(MklhaError::DimensionMismatch {
                expected: self.slots.len(),
                got,
            });
        }
        Ok(())
    }

    /// `prod_i h_i^{x_i}` split over `parts` sub-columns.
    pub fn commit_message(&self, x: &[FieldScalar], parts: usize) -> Result<G1Projective, MklhaError> {
        self.check_len(x.len())?;
        Ok(msm::msm_partitioned(&self.slots, x, parts))
    }
}

impl fmt::Debug for PublicParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PublicParams")
            .field("curve", &CURVE_NAME)
            .field("security_level", &self.security_level)
            .field("session_tag", &hex::encode(&self.session_tag))
            .field("d", &self.slots.len())
            .finish()
    }
}

impl PartialEq for PublicParams {
    fn eq(&self, other: &Self) -> bool {
        self.security_level == other.security_level
            && self.session_tag == other.session_tag
            && self.g1 == other.g1
            && self.g2 == other.g2
            && self.blinding == other.blinding
            && self.slots == other.slots
    }
}

/// What an authenticator is bound to besides the signer: session, round and
/// column. Prevents replaying authenticators across rounds or columns.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Label {
    pub session_tag: Vec<u8>,
    pub round: u64,
    pub column: u32,
}

impl Label {
    pub fn new(session_tag: &[u8], round: u64, column: u32) -> Self {
        Label {
            session_tag: session_tag.to_vec(),
            round,
            column,
        }
    }

    /// `H1(label)`.
    pub fn to_g1(&self) -> G1Projective {
        let mut suffix = [0u8; 12];
        suffix[..8].copy_from_slice(&self.round.to_le_bytes());
        suffix[8..].copy_from_slice(&self.column.to_le_bytes());
        G1Projective::hash_to_curve(&tagged_message(&self.session_tag, &suffix), DST_LABEL, &[])
    }
}

/// Identity-specific signing exponent, never zero.
#[derive(Clone, PartialEq, Eq)]
pub struct SecretKey(Scalar);

impl SecretKey {
    pub fn from_scalar(a: FieldScalar) -> Result<Self, MklhaError> {
        if a.is_zero() {
            return Err(MklhaError::KeyGeneration("secret key must be nonzero".into()));
        }
        Ok(SecretKey(a.into()))
    }

    pub fn to_bytes(&self) -> [u8; 32] {
        self.0.to_bytes_le()
    }

    pub fn from_bytes(bytes: &[u8; 32]) -> Result<Self, MklhaError> {
        let a = FieldScalar::from_bytes_le(bytes).ok_or(MklhaError::Malformed("non-canonical scalar"))?;
        SecretKey::from_scalar(a)
    }

    pub fn verification_key(&self) -> VerificationKey {
        VerificationKey((G2Projective::generator() * self.0).to_affine())
    }

    /// The identity component `Λ = (H(label) * C)^a` for a given commitment.
    pub fn sign_commitment(&self, label: &Label, commit: &G1Affine) -> G1Affine {
        ((label.to_g1() + G1Projective::from(commit)) * self.0).to_affine()
    }
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretKey(<redacted>)")
    }
}

/// `g2^a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerificationKey(pub(crate) G2Affine);

impl VerificationKey {
    pub fn point(&self) -> &G2Affine {
        &self.0
    }
}

/// Samples a fresh nonzero key. `id` is accepted for interface fidelity; the
/// binding between identity and key lives on the bulletin board.
pub fn keygen<R: RngCore + CryptoRng + ?Sized>(
    _pp: &PublicParams,
    _id: Identity,
    rng: &mut R,
) -> Result<(SecretKey, VerificationKey), MklhaError> {
    loop {
        let mut wide = [0u8; 64];
        rng.try_fill_bytes(&mut wide)
            .map_err(|e| MklhaError::KeyGeneration(e.to_string()))?;
        let a = FieldScalar::from_uniform_bytes(&wide);
        if a.is_zero() {
            continue;
        }
        let sk = SecretKey(a.into());
        let vk = sk.verification_key();
        return Ok((sk, vk));
    }
}

/// Per-client, per-column authenticator `(Λ, C, S)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Authenticator {
    pub lambda: G1Affine,
    pub commit: G1Affine,
    pub s: G2Affine,
}

/// Authenticates `x` under `sk` with fresh blinding randomness.
pub fn auth<R: RngCore + CryptoRng + ?Sized>(
    pp: &PublicParams,
    sk: &SecretKey,
    label: &Label,
    x: &[FieldScalar],
    rng: &mut R,
) -> Result<Authenticator, MklhaError> {
    auth_partitioned(pp, sk, label, x, 1, rng)
}

/// [`auth`] with the commitment MSM split into `parts` sub-columns.
pub fn auth_partitioned<R: RngCore + CryptoRng + ?Sized>(
    pp: &PublicParams,
    sk: &SecretKey,
    label: &Label,
    x: &[FieldScalar],
    parts: usize,
    rng: &mut R,
) -> Result<Authenticator, MklhaError> {
    pp.check_len(x.len())?;
    let r = FieldScalar::random(rng);
    auth_with_blinding(pp, sk, label, x, r, parts)
}

/// Deterministic core of [`auth`]; `r` must be uniform for context hiding.
#[doc(hidden)]
pub fn auth_with_blinding(
    pp: &PublicParams,
    sk: &SecretKey,
    label: &Label,
    x: &[FieldScalar],
    r: FieldScalar,
    parts: usize,
) -> Result<Authenticator, MklhaError> {
    let message = pp.commit_message(x, parts)?;
    let r: Scalar = r.into();
    let commit = G1Projective::from(pp.blinding) * r + message;
    let lambda = (label.to_g1() + commit) * sk.0;
    let s = G2Projective::generator() * r;
    Ok(Authenticator {
        lambda: lambda.to_affine(),
        commit: commit.to_affine(),
        s: s.to_affine(),
    })
}

fn pairing_product_is_one(terms: &[(G1Affine, G2Prepared)]) -> bool {
    let refs: Vec<(&G1Affine, &G2Prepared)> = terms.iter().map(|(p, q)| (p, q)).collect();
    bool::from(Bls12::multi_miller_loop(&refs).final_exponentiation().is_identity())
}

/// Per-identity screening: `e(Λ, g2) = e(H(label) * C, vk)`.
pub fn verify_single(pp: &PublicParams, vk: &VerificationKey, label: &Label, sigma: &Authenticator) -> bool {
    identity_component_holds(pp, vk, &label.to_g1(), &sigma.lambda, &sigma.commit)
}

fn identity_component_holds(
    pp: &PublicParams,
    vk: &VerificationKey,
    label_point: &G1Projective,
    lambda: &G1Affine,
    commit: &G1Affine,
) -> bool {
    let base = (label_point + G1Projective::from(commit)).to_affine();
    pairing_product_is_one(&[(*lambda, pp.neg_g2.clone()), (base, G2Prepared::from(vk.0))])
}

/// `(Λ_u, C_u)` retained per identity inside an aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdentityComponent {
    pub lambda: G1Affine,
    pub commit: G1Affine,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggregatedAuthenticator {
    pub per_identity: BTreeMap<Identity, IdentityComponent>,
    pub s_agg: G2Affine,
}

impl AggregatedAuthenticator {
    pub fn identities(&self) -> impl Iterator<Item = Identity> + '_ {
        self.per_identity.keys().copied()
    }
}

/// Homomorphic evaluation of the sum. Uses public data only.
pub fn eval<'a, I>(sigmas: I) -> Result<AggregatedAuthenticator, MklhaError>
where
    I: IntoIterator<Item = (Identity, &'a Authenticator)>,
{
    let mut per_identity = BTreeMap::new();
    let mut s_agg = G2Projective::identity();
    for (id, sigma) in sigmas {
        let component = IdentityComponent {
            lambda: sigma.lambda,
            commit: sigma.commit,
        };
        if per_identity.insert(id, component).is_some() {
            return Err(MklhaError::DuplicateIdentity(id));
        }
        s_agg += G2Projective::from(sigma.s);
    }
    if per_identity.is_empty() {
        return Err(MklhaError::EmptyAggregation);
    }
    Ok(AggregatedAuthenticator {
        per_identity,
        s_agg: s_agg.to_affine(),
    })
}

/// How the per-identity clause of verification is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VerificationMode {
    /// One random linear combination over all identities: |S| + 1 pairings.
    #[default]
    Batched,
    /// Two pairings per identity; reports which identities fail.
    Strict,
}

/// Outcome of [`verify_detailed`].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VerifyReport {
    pub key_set_matches: bool,
    pub identities_valid: bool,
    pub sum_valid: bool,
    /// Filled in strict mode only.
    pub failed_identities: Vec<Identity>,
}

impl VerifyReport {
    pub fn accepted(&self) -> bool {
        self.key_set_matches && self.identities_valid && self.sum_valid
    }
}

/// Accepts iff `agg` authenticates `x_sum` as the sum of columns signed by
/// exactly the identities in `vks` under `label`.
pub fn verify(
    pp: &PublicParams,
    vks: &BTreeMap<Identity, VerificationKey>,
    label: &Label,
    x_sum: &[FieldScalar],
    agg: &AggregatedAuthenticator,
) -> Result<bool, MklhaError> {
    let mut rng = rand::thread_rng();
    verify_detailed(pp, vks, label, x_sum, agg, VerificationMode::Batched, &mut rng).map(|r| r.accepted())
}

pub fn verify_detailed<R: RngCore + CryptoRng + ?Sized>(
    pp: &PublicParams,
    vks: &BTreeMap<Identity, VerificationKey>,
    label: &Label,
    x_sum: &[FieldScalar],
    agg: &AggregatedAuthenticator,
    mode: VerificationMode,
    rng: &mut R,
) -> Result<VerifyReport, MklhaError> {
    pp.check_len(x_sum.len())?;
    let mut report = VerifyReport::default();
    if !vks.keys().eq(agg.per_identity.keys()) || vks.is_empty() {
        return Ok(report);
    }
    report.key_set_matches = true;

    let label_point = label.to_g1();
    match mode {
        VerificationMode::Batched => {
            report.identities_valid = batched_identity_check(pp, vks, &label_point, agg, rng);
        }
        VerificationMode::Strict => {
            report.failed_identities = agg
                .per_identity
                .iter()
                .filter(|(id, c)| !identity_component_holds(pp, &vks[id], &label_point, &c.lambda, &c.commit))
                .map(|(id, _)| *id)
                .collect();
            report.identities_valid = report.failed_identities.is_empty();
        }
    }

    let parts = rayon::current_num_threads();
    let message = pp.commit_message(x_sum, parts)?;
    let commit_sum: G1Projective = agg.per_identity.values().map(|c| G1Projective::from(c.commit)).sum();
    let lhs = (commit_sum - message).to_affine();
    report.sum_valid = pairing_product_is_one(&[
        (lhs, G2Prepared::from(pp.g2)),
        (
            (-G1Projective::from(pp.blinding)).to_affine(),
            G2Prepared::from(agg.s_agg),
        ),
    ]);
    Ok(report)
}

// prod_u e(Λ_u, g2)^{ρ_u} = prod_u e(H * C_u, vk_u)^{ρ_u} for random 128-bit ρ_u.
fn batched_identity_check<R: RngCore + CryptoRng + ?Sized>(
    pp: &PublicParams,
    vks: &BTreeMap<Identity, VerificationKey>,
    label_point: &G1Projective,
    agg: &AggregatedAuthenticator,
    rng: &mut R,
) -> bool {
    let coefficients: Vec<Scalar> = agg
        .per_identity
        .keys()
        .map(|_| {
            let mut bytes = [0u8; 16];
            rng.fill_bytes(&mut bytes);
            Scalar::from_u64s_le(&[
                u64::from_le_bytes(bytes[..8].try_into().unwrap()),
                u64::from_le_bytes(bytes[8..].try_into().unwrap()),
                0,
                0,
            ])
            .unwrap()
        })
        .collect();

    let lambdas: Vec<G1Affine> = agg.per_identity.values().map(|c| c.lambda).collect();
    let rho: Vec<FieldScalar> = coefficients.iter().copied().map(FieldScalar::from).collect();
    let combined = msm::msm(&lambdas, &rho).to_affine();

    let mut terms = Vec::with_capacity(agg.per_identity.len() + 1);
    terms.push((combined, pp.neg_g2.clone()));
    let mut bases = Vec::with_capacity(agg.per_identity.len());
    for ((_, c), rho) in agg.per_identity.iter().zip(&coefficients) {
        bases.push((label_point + G1Projective::from(c.commit)) * rho);
    }
    let mut affine = vec![G1Affine::identity(); bases.len()];
    G1Projective::batch_normalize(&bases, &mut affine);
    for (base, (id, _)) in affine.into_iter().zip(agg.per_identity.iter()) {
        terms.push((base, G2Prepared::from(vks[id].0)));
    }
    pairing_product_is_one(&terms)
}

#[cfg(test)]
mod tests;
