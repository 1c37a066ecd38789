//! One aggregation round: client preparation, aggregation, client
//! verification and averaging.
//!
//! Matrices are `d x m` and stored column-major, since a column is the unit
//! of masking and authentication.

mod round;
mod wire;

use std::collections::{BTreeMap, BTreeSet};

use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::board::BoardError;
use crate::codec::{CodecError, EncodingBounds, FixedMean, FixedPointCodec, Precision};
use crate::field::FieldScalar;
use crate::maskagg::{self, MaskError, PairwiseSecrets};
use crate::mklha::{
    self, AggregatedAuthenticator, Authenticator, Identity, Label, MklhaError, PublicParams, SecretKey,
    VerificationKey, VerificationMode, CURVE_NAME, SECURITY_LEVEL,
};

pub use round::{
    run_round, ClientState, MessageRecord, Phase, PhaseTimings, RoundOptions, RoundOutcome, RoundTranscript, World,
    AGGREGATOR,
};
pub use wire::WireError;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("invalid session configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Mklha(#[from] MklhaError),
    #[error(transparent)]
    Board(#[from] BoardError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("update from {0} was made under a different session configuration")]
    ConfigHashMismatch(Identity),
    #[error("update from {owner} is for round {got}, expected {expected}")]
    RoundMismatch { owner: Identity, expected: u64, got: u64 },
    #[error("update from {0}, which is not in the active set")]
    UnexpectedClient(Identity),
    #[error("more than one update from {0}")]
    DuplicateClient(Identity),
    #[error("no update from active client {0}")]
    MissingClient(Identity),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("message channel closed before the round finished")]
    ChannelClosed,
}

/// Dense matrix in column-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T> Matrix<T> {
    pub fn from_column_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, ProtocolError> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(ProtocolError::Shape(format!(
                "{} entries for a {rows} x {cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn from_columns(columns: Vec<Vec<T>>) -> Result<Self, ProtocolError> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(ProtocolError::Shape("columns of different lengths".into()));
        }
        Ok(Matrix {
            rows,
            cols,
            data: columns.into_iter().flatten().collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> &T {
        &self.data[col * self.rows + row]
    }

    pub fn get_mut(&mut self, row: usize, col: usize) -> &mut T {
        &mut self.data[col * self.rows + row]
    }

    pub fn column(&self, j: usize) -> &[T] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn column_mut(&mut self, j: usize) -> &mut [T] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[T]> {
        // chunks_exact panics on a zero chunk size
        self.data.chunks(self.rows.max(1)).take(self.cols)
    }

    pub fn as_column_major(&self) -> &[T] {
        &self.data
    }

    pub fn swap_columns(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        let (lo, hi) = (a.min(b), a.max(b));
        let (left, right) = self.data.split_at_mut(hi * self.rows);
        left[lo * self.rows..(lo + 1) * self.rows].swap_with_slice(&mut right[..self.rows]);
    }
}

/// Parameters every party must agree on before a round.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub d: usize,
    pub m: usize,
    pub precision: Precision,
    pub bounds: EncodingBounds,
    /// Active set, strictly ascending.
    pub active: Vec<Identity>,
    pub session_tag: Vec<u8>,
    /// Sub-columns per column for parallel authentication.
    pub subcolumns: usize,
}

impl SessionConfig {
    pub fn new(
        d: usize,
        m: usize,
        precision: Precision,
        bounds: EncodingBounds,
        active: impl IntoIterator<Item = Identity>,
        session_tag: impl Into<Vec<u8>>,
        subcolumns: usize,
    ) -> Result<Self, ProtocolError> {
        let set: BTreeSet<Identity> = active.into_iter().collect();
        let cfg = SessionConfig {
            d,
            m,
            precision,
            bounds,
            active: set.into_iter().collect(),
            session_tag: session_tag.into(),
            subcolumns,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        let bad = |s: &str| Err(ProtocolError::Config(s.to_string()));
        if self.d == 0 || self.m == 0 {
            return bad("d and m must be positive");
        }
        if u32::try_from(self.m).is_err() {
            return bad("m must fit in 32 bits");
        }
        if self.active.is_empty() {
            return bad("active set is empty");
        }
        if !self.active.windows(2).all(|w| w[0] < w[1]) {
            return bad("active set must be strictly ascending");
        }
        if self.subcolumns == 0 || self.subcolumns > self.d {
            return bad("subcolumns must be in 1..=d");
        }
        if self.active.len() > self.bounds.max_clients as usize {
            return bad("active set exceeds bounds.max_clients");
        }
        self.codec()?;
        Ok(())
    }

    pub fn codec(&self) -> Result<FixedPointCodec, ProtocolError> {
        Ok(FixedPointCodec::new(self.precision, self.bounds)?)
    }

    pub fn active_set(&self) -> BTreeSet<Identity> {
        self.active.iter().copied().collect()
    }

    pub fn label(&self, round: u64, column: usize) -> Label {
        Label::new(&self.session_tag, round, column as u32)
    }

    /// SHA-256 over a canonical encoding of every field.
    pub fn config_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"vfl-session v1\0");
        h.update(CURVE_NAME.as_bytes());
        h.update(SECURITY_LEVEL.to_le_bytes());
        h.update((self.d as u64).to_le_bytes());
        h.update((self.m as u64).to_le_bytes());
        h.update([self.precision.decimal_places()]);
        h.update(self.bounds.max_abs_value.to_bits().to_le_bytes());
        h.update(self.bounds.max_clients.to_le_bytes());
        h.update((self.active.len() as u64).to_le_bytes());
        for id in &self.active {
            h.update(id.0.to_le_bytes());
        }
        h.update((self.session_tag.len() as u64).to_le_bytes());
        h.update(&self.session_tag);
        h.update((self.subcolumns as u64).to_le_bytes());
        h.finalize().into()
    }

    /// Public parameters for this session.
    pub fn public_params(&self) -> Result<PublicParams, ProtocolError> {
        Ok(PublicParams::setup(SECURITY_LEVEL, self.d, &self.session_tag)?)
    }

    fn check_shape<T>(&self, m: &Matrix<T>) -> Result<(), ProtocolError> {
        if m.rows() != self.d || m.cols() != self.m {
            return Err(ProtocolError::Shape(format!(
                "expected {} x {}, got {} x {}",
                self.d,
                self.m,
                m.rows(),
                m.cols()
            )));
        }
        Ok(())
    }
}

/// A client's update after encoding and masking.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedMatrix {
    pub entries: Matrix<FieldScalar>,
    pub round: u64,
    pub owner: Identity,
}

/// Phase 1 message. Authenticator `j` covers the plain encoded column `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub masked: MaskedMatrix,
    pub authenticators: Vec<Authenticator>,
    pub owner: Identity,
    pub round: u64,
    pub config_hash: [u8; 32],
}

/// Phase 2 broadcast.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateResult {
    pub x_agg: Matrix<FieldScalar>,
    pub sigma_agg: Vec<AggregatedAuthenticator>,
    pub round: u64,
    pub active: Vec<Identity>,
}

/// The exact average `sum / |S|` of every entry.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedModel {
    pub sums: Matrix<i128>,
    pub count: u32,
    pub precision: Precision,
}

impl AveragedModel {
    pub fn mean(&self, row: usize, col: usize) -> FixedMean {
        FixedMean {
            sum_units: *self.sums.get(row, col),
            count: self.count,
            precision: self.precision,
        }
    }

    /// Entries as `decode(sum) / |S|`.
    pub fn to_f64(&self) -> Matrix<f64> {
        Matrix::from_fn(self.sums.rows(), self.sums.cols(), |i, j| self.mean(i, j).to_f64())
    }

    /// Entries rounded half away from zero to the session precision, in
    /// units of `10^-dp`.
    pub fn rounded_units(&self) -> Matrix<i128> {
        Matrix::from_fn(self.sums.rows(), self.sums.cols(), |i, j| {
            self.mean(i, j).rounded_units()
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub round: u64,
    /// `check_j` per column.
    pub columns: Vec<bool>,
    /// Set when the result was rejected before any column was checked.
    pub malformed: Option<String>,
    /// Present iff every column accepted.
    pub model: Option<AveragedModel>,
}

impl Verdict {
    pub fn accepted(&self) -> bool {
        self.malformed.is_none() && !self.columns.is_empty() && self.columns.iter().all(|&c| c)
    }

    pub fn failing_columns(&self) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, ok)| !**ok)
            .map(|(j, _)| j)
            .collect()
    }

    fn malformed(cfg: &SessionConfig, round: u64, reason: String) -> Self {
        Verdict {
            round,
            columns: vec![false; cfg.m],
            malformed: Some(reason),
            model: None,
        }
    }
}

/// Phase 1: encode, mask each column, authenticate each plain column.
/// Nothing is produced if any entry is out of bounds.
#[allow(clippy::too_many_arguments)]
pub fn client_prepare<R: RngCore + CryptoRng + ?Sized>(
    cfg: &SessionConfig,
    pp: &PublicParams,
    owner: Identity,
    sk: &SecretKey,
    secrets: &PairwiseSecrets,
    plain: &Matrix<f64>,
    round: u64,
    rng: &mut R,
) -> Result<ClientUpdate, ProtocolError> {
    cfg.check_shape(plain)?;
    if pp.dimension() != cfg.d {
        return Err(ProtocolError::Shape("public parameters do not match d".into()));
    }
    let codec = cfg.codec()?;
    let encoded = codec.encode_slice(plain.as_column_major())?;
    let encoded = Matrix::from_column_major(cfg.d, cfg.m, encoded)?;
    let active = cfg.active_set();

    let seeds: Vec<[u8; 32]> = (0..cfg.m)
        .map(|_| {
            let mut s = [0u8; 32];
            rng.fill_bytes(&mut s);
            s
        })
        .collect();

    let per_column: Vec<(Vec<FieldScalar>, Authenticator)> = (0..cfg.m)
        .into_par_iter()
        .map(|j| {
            let x = encoded.column(j);
            let masked = maskagg::mask(x, secrets, &active, round, j as u32)?;
            let mut col_rng = ChaCha20Rng::from_seed(seeds[j]);
            let sigma = mklha::auth_partitioned(pp, sk, &cfg.label(round, j), x, cfg.subcolumns, &mut col_rng)?;
            Ok((masked, sigma))
        })
        .collect::<Result<_, ProtocolError>>()?;

    let (columns, authenticators): (Vec<_>, Vec<_>) = per_column.into_iter().unzip();
    Ok(ClientUpdate {
        masked: MaskedMatrix {
            entries: Matrix::from_columns(columns)?,
            round,
            owner,
        },
        authenticators,
        owner,
        round,
        config_hash: cfg.config_hash(),
    })
}

/// Phase 2: unmask the column sums and evaluate the authenticators. Takes
/// only masked data and authenticators.
pub fn aggregate(cfg: &SessionConfig, round: u64, updates: &[ClientUpdate]) -> Result<AggregateResult, ProtocolError> {
    let expected_hash = cfg.config_hash();
    let active = cfg.active_set();
    let mut by_owner: BTreeMap<Identity, &ClientUpdate> = BTreeMap::new();
    for u in updates {
        if u.config_hash != expected_hash {
            return Err(ProtocolError::ConfigHashMismatch(u.owner));
        }
        if u.round != round || u.masked.round != round {
            return Err(ProtocolError::RoundMismatch {
                owner: u.owner,
                expected: round,
                got: u.round,
            });
        }
        if !active.contains(&u.owner) || u.masked.owner != u.owner {
            return Err(ProtocolError::UnexpectedClient(u.owner));
        }
        cfg.check_shape(&u.masked.entries)?;
        if u.authenticators.len() != cfg.m {
            return Err(ProtocolError::Shape(format!(
                "{} authenticators from {}, expected {}",
                u.authenticators.len(),
                u.owner,
                cfg.m
            )));
        }
        if by_owner.insert(u.owner, u).is_some() {
            return Err(ProtocolError::DuplicateClient(u.owner));
        }
    }
    if let Some(missing) = active.iter().find(|id| !by_owner.contains_key(id)) {
        return Err(ProtocolError::MissingClient(*missing));
    }

    let ordered: Vec<&ClientUpdate> = by_owner.into_values().collect();
    let per_column: Vec<(Vec<FieldScalar>, AggregatedAuthenticator)> = (0..cfg.m)
        .into_par_iter()
        .map(|j| {
            let masked: Vec<&[FieldScalar]> = ordered.iter().map(|u| u.masked.entries.column(j)).collect();
            let sum = maskagg::unmask_sum(&masked, &active)?;
            let sigma = mklha::eval(ordered.iter().map(|u| (u.owner, &u.authenticators[j])))?;
            Ok((sum, sigma))
        })
        .collect::<Result<_, ProtocolError>>()?;

    let (columns, sigma_agg): (Vec<_>, Vec<_>) = per_column.into_iter().unzip();
    Ok(AggregateResult {
        x_agg: Matrix::from_columns(columns)?,
        sigma_agg,
        round,
        active: cfg.active.clone(),
    })
}

/// Phase 3: verify every column against board keys and, on full
/// acceptance, average. Keys come only from `snapshot`; the active set comes
/// from the configuration, never from the result.
pub fn client_verify(
    cfg: &SessionConfig,
    pp: &PublicParams,
    snapshot: &BTreeMap<Identity, VerificationKey>,
    round: u64,
    result: &AggregateResult,
) -> Result<Verdict, ProtocolError> {
    let vks: BTreeMap<Identity, VerificationKey> = cfg
        .active
        .iter()
        .map(|id| {
            snapshot
                .get(id)
                .map(|vk| (*id, *vk))
                .ok_or(ProtocolError::Board(BoardError::MissingKey(*id)))
        })
        .collect::<Result<_, _>>()?;

    if result.round != round {
        return Ok(Verdict::malformed(
            cfg,
            round,
            format!("result is for round {}", result.round),
        ));
    }
    if result.active != cfg.active {
        return Ok(Verdict::malformed(
            cfg,
            round,
            "active set differs from the session".into(),
        ));
    }
    if result.x_agg.rows() != cfg.d || result.x_agg.cols() != cfg.m || result.sigma_agg.len() != cfg.m {
        return Ok(Verdict::malformed(cfg, round, "result has the wrong shape".into()));
    }

    let columns: Vec<bool> = (0..cfg.m)
        .into_par_iter()
        .map(|j| {
            let mut rng = rand::thread_rng();
            mklha::verify_detailed(
                pp,
                &vks,
                &cfg.label(round, j),
                result.x_agg.column(j),
                &result.sigma_agg[j],
                VerificationMode::Batched,
                &mut rng,
            )
            .map(|r| r.accepted())
        })
        .collect::<Result<_, MklhaError>>()?;

    let mut verdict = Verdict {
        round,
        columns,
        malformed: None,
        model: None,
    };
    if verdict.accepted() {
        let codec = cfg.codec()?;
        let count = cfg.active.len() as u32;
        let sums = result
            .x_agg
            .as_column_major()
            .iter()
            .map(|&v| codec.mean(v, count).map(|m| m.sum_units))
            .collect::<Result<Vec<_>, _>>()?;
        verdict.model = Some(AveragedModel {
            sums: Matrix::from_column_major(cfg.d, cfg.m, sums)?,
            count,
            precision: cfg.precision,
        });
    }
    Ok(verdict)
}
