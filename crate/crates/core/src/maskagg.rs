//! Pairwise-mask secure aggregation over F_p.
//!
//! Client `u` adds `r_u = sum_{v > u} PRG(z_uv) - sum_{v < u} PRG(z_uv)` to its
//! update. Every stream enters the total once with each sign, so the masks
//! vanish from the sum over the active set.

use std::collections::{BTreeMap, BTreeSet};

use rand::{CryptoRng, RngCore};
use rayon::prelude::*;
use thiserror::Error;

use crate::field::FieldScalar;
use crate::mklha::Identity;

pub const SEED_BYTES: usize = 32;

/// Header of the binary pairwise-secrets file.
pub const SECRETS_FILE_HEADER: &[u8] = b"vfl-pw v1\n";

const RECORD_BYTES: usize = 4 + 4 + SEED_BYTES;
const STREAM_CONTEXT: &[u8] = b"VFL/mask/";
const SCALAR_WIDE_BYTES: u64 = 64;
const PAR_CHUNK: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MaskError {
    #[error("client {owner} has no pairwise secret for active peer {peer}")]
    MissingSecret { owner: Identity, peer: Identity },
    #[error("client {0} is not in the active set")]
    NotActive(Identity),
    #[error("expected {expected} masked vectors, got {got}")]
    CountMismatch { expected: usize, got: usize },
    #[error("masked vectors have inconsistent lengths")]
    LengthMismatch,
    #[error("malformed secrets file: {0}")]
    SecretsFile(String),
}

/// Shared seed `z_{u,v}` as held by `owner`. `z_{u,v} = z_{v,u}`.
#[derive(Clone, PartialEq, Eq)]
pub struct PairwiseSecret {
    pub owner: Identity,
    pub peer: Identity,
    pub seed: [u8; SEED_BYTES],
}

impl std::fmt::Debug for PairwiseSecret {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PairwiseSecret")
            .field("owner", &self.owner)
            .field("peer", &self.peer)
            .finish_non_exhaustive()
    }
}

/// Source of pairwise seeds. Provisioned secrets implement it; a key
/// agreement protocol could too.
pub trait SeedSource {
    fn owner(&self) -> Identity;
    fn seed_for(&self, peer: Identity) -> Option<&[u8; SEED_BYTES]>;
}

/// One client's view of its pairwise seeds.
#[derive(Clone, Default)]
pub struct PairwiseSecrets {
    owner: Identity,
    seeds: BTreeMap<Identity, [u8; SEED_BYTES]>,
}

impl PairwiseSecrets {
    /// Collects the records that involve `owner`, from either side.
    pub fn for_client(owner: Identity, records: &[PairwiseSecret]) -> Self {
        let seeds = records
            .iter()
            .filter_map(|r| {
                if r.owner == owner {
                    Some((r.peer, r.seed))
                } else if r.peer == owner {
                    Some((r.owner, r.seed))
                } else {
                    None
                }
            })
            .collect();
        PairwiseSecrets { owner, seeds }
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }
}

impl SeedSource for PairwiseSecrets {
    fn owner(&self) -> Identity {
        self.owner
    }

    fn seed_for(&self, peer: Identity) -> Option<&[u8; SEED_BYTES]> {
        self.seeds.get(&peer)
    }
}

/// Trusted-setup provisioning: one uniform seed per unordered pair, stored
/// with `owner < peer` and sorted.
pub fn provision<R: RngCore + CryptoRng + ?Sized>(ids: &BTreeSet<Identity>, rng: &mut R) -> Vec<PairwiseSecret> {
    let ids: Vec<Identity> = ids.iter().copied().collect();
    let mut out = Vec::with_capacity(ids.len() * ids.len().saturating_sub(1) / 2);
    for (i, &u) in ids.iter().enumerate() {
        for &v in &ids[i + 1..] {
            let mut seed = [0u8; SEED_BYTES];
            rng.fill_bytes(&mut seed);
            out.push(PairwiseSecret {
                owner: u,
                peer: v,
                seed,
            });
        }
    }
    out
}

fn stream_reader(seed: &[u8; SEED_BYTES], round: u64, column: u32) -> blake3::OutputReader {
    let mut hasher = blake3::Hasher::new_keyed(seed);
    hasher.update(STREAM_CONTEXT);
    hasher.update(&round.to_le_bytes());
    hasher.update(&column.to_le_bytes());
    hasher.finalize_xof()
}

/// Stream elements `offset..offset + out.len()`. Element `i` reduces XOF
/// output bytes `64 i .. 64 (i + 1)`, so any range can be produced
/// independently of the others.
pub fn fill_mask_stream(seed: &[u8; SEED_BYTES], round: u64, column: u32, offset: usize, out: &mut [FieldScalar]) {
    let mut reader = stream_reader(seed, round, column);
    reader.set_position(offset as u64 * SCALAR_WIDE_BYTES);
    let mut wide = [0u8; SCALAR_WIDE_BYTES as usize];
    for slot in out {
        reader.fill(&mut wide);
        *slot = FieldScalar::from_uniform_bytes(&wide);
    }
}

/// Expands `(seed, round, column)` into `len` field elements.
pub fn derive_mask_stream(seed: &[u8; SEED_BYTES], round: u64, column: u32, len: usize) -> Vec<FieldScalar> {
    let mut out = vec![FieldScalar::ZERO; len];
    fill_mask_stream(seed, round, column, 0, &mut out);
    out
}

/// `x + r_u` over the active set, elementwise in F_p.
pub fn mask<S: SeedSource + Sync + ?Sized>(
    x: &[FieldScalar],
    secrets: &S,
    active: &BTreeSet<Identity>,
    round: u64,
    column: u32,
) -> Result<Vec<FieldScalar>, MaskError> {
    let owner = secrets.owner();
    if !active.contains(&owner) {
        return Err(MaskError::NotActive(owner));
    }
    // (seed, +1 for v > u, -1 for v < u)
    let mut peers = Vec::with_capacity(active.len().saturating_sub(1));
    for &peer in active.iter().filter(|&&v| v != owner) {
        let seed = secrets.seed_for(peer).ok_or(MaskError::MissingSecret { owner, peer })?;
        peers.push((seed, peer > owner));
    }

    let mut out = x.to_vec();
    out.par_chunks_mut(PAR_CHUNK)
        .enumerate()
        .for_each(|(chunk_idx, chunk)| {
            let mut stream = vec![FieldScalar::ZERO; chunk.len()];
            for &(seed, add) in &peers {
                fill_mask_stream(seed, round, column, chunk_idx * PAR_CHUNK, &mut stream);
                for (o, s) in chunk.iter_mut().zip(&stream) {
                    if add {
                        *o += *s;
                    } else {
                        *o -= *s;
                    }
                }
            }
        });
    Ok(out)
}

/// Elementwise sum of one masked vector per active client.
pub fn unmask_sum<V: AsRef<[FieldScalar]>>(
    masked: &[V],
    active: &BTreeSet<Identity>,
) -> Result<Vec<FieldScalar>, MaskError> {
    if masked.len() != active.len() || masked.is_empty() {
        return Err(MaskError::CountMismatch {
            expected: active.len(),
            got: masked.len(),
        });
    }
    let len = masked[0].as_ref().len();
    if masked.iter().any(|m| m.as_ref().len() != len) {
        return Err(MaskError::LengthMismatch);
    }
    let mut sum = masked[0].as_ref().to_vec();
    for m in &masked[1..] {
        sum.par_iter_mut()
            .zip(m.as_ref().par_iter())
            .for_each(|(a, b)| *a += *b);
    }
    Ok(sum)
}

/// Binary secrets file: header, then `(u:u32le, v:u32le, seed)` records
/// sorted by `(min(u, v), max(u, v))`.
pub fn encode_secrets_file(records: &[PairwiseSecret]) -> Vec<u8> {
    let mut sorted: Vec<&PairwiseSecret> = records.iter().collect();
    sorted.sort_by_key(|r| (r.owner.min(r.peer), r.owner.max(r.peer)));
    let mut out = Vec::with_capacity(SECRETS_FILE_HEADER.len() + sorted.len() * RECORD_BYTES);
    out.extend_from_slice(SECRETS_FILE_HEADER);
    for r in sorted {
        out.extend_from_slice(&r.owner.0.to_le_bytes());
        out.extend_from_slice(&r.peer.0.to_le_bytes());
        out.extend_from_slice(&r.seed);
    }
    out
}

pub fn decode_secrets_file(bytes: &[u8]) -> Result<Vec<PairwiseSecret>, MaskError> {
    let body = bytes
        .strip_prefix(SECRETS_FILE_HEADER)
        .ok_or_else(|| MaskError::SecretsFile("missing `vfl-pw v1` header".into()))?;
    if body.len() % RECORD_BYTES != 0 {
        return Err(MaskError::SecretsFile("truncated record".into()));
    }
    let mut out = Vec::with_capacity(body.len() / RECORD_BYTES);
    let mut seen = BTreeSet::new();
    let mut last_key = None;
    for rec in body.chunks_exact(RECORD_BYTES) {
        let owner = Identity(u32::from_le_bytes(rec[..4].try_into().unwrap()));
        let peer = Identity(u32::from_le_bytes(rec[4..8].try_into().unwrap()));
        if owner == peer {
            return Err(MaskError::SecretsFile(format!("self-pair for client {owner}")));
        }
        let key = (owner.min(peer), owner.max(peer));
        if last_key.is_some_and(|k| k > key) {
            return Err(MaskError::SecretsFile("records not sorted".into()));
        }
        if !seen.insert(key) {
            return Err(MaskError::SecretsFile(format!("duplicate pair ({}, {})", key.0, key.1)));
        }
        last_key = Some(key);
        out.push(PairwiseSecret {
            owner,
            peer,
            seed: rec[8..].try_into().unwrap(),
        });
    }
    Ok(out)
}
