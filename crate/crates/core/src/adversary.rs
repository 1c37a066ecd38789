//! Malicious aggregator. Every manipulation uses public data, the messages
//! the aggregator legitimately received, and keys the adversary generates
//! itself. Honest secret keys and pairwise seeds are out of reach by
//! construction: [`AdversaryView`] does not carry them.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use blstrs::G2Projective;
use group::Curve;
use rand::{CryptoRng, Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::board::BulletinBoard;
use crate::field::FieldScalar;
use crate::mklha::{self, Identity, IdentityComponent, PublicParams};
use crate::protocol::{
    run_round, AggregateResult, ClientUpdate, Matrix, ProtocolError, RoundOptions, SessionConfig, World,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TamperMode {
    /// `x' = x + e` on one column.
    AddE,
    /// `x' = e` on one column.
    ReplaceWithE,
    /// Adds `e` and a matching authenticator under a key that is not on the board.
    InjectForgedSigner,
    /// Drops one client's component while still claiming the full active set.
    OmitClient,
    /// Re-signs one client's commitment under the adversary's key.
    WrongKeySet,
    /// Serves the previous round's aggregate as the current one.
    ReplayPreviousRound,
    /// Exchanges two columns together with their authenticators.
    SwapColumns,
}

impl TamperMode {
    pub const ALL: [TamperMode; 7] = [
        TamperMode::AddE,
        TamperMode::ReplaceWithE,
        TamperMode::InjectForgedSigner,
        TamperMode::OmitClient,
        TamperMode::WrongKeySet,
        TamperMode::ReplayPreviousRound,
        TamperMode::SwapColumns,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TamperMode::AddE => "add-e",
            TamperMode::ReplaceWithE => "replace-with-e",
            TamperMode::InjectForgedSigner => "inject-forged-signer",
            TamperMode::OmitClient => "omit-client",
            TamperMode::WrongKeySet => "wrong-key-set",
            TamperMode::ReplayPreviousRound => "replay-previous-round",
            TamperMode::SwapColumns => "swap-columns",
        }
    }
}

impl fmt::Display for TamperMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown tamper mode `{0}`")]
pub struct UnknownTamperMode(pub String);

impl FromStr for TamperMode {
    type Err = UnknownTamperMode;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        TamperMode::ALL
            .into_iter()
            .find(|m| m.name() == norm || m.name().replace('-', "") == norm)
            .ok_or_else(|| UnknownTamperMode(s.to_string()))
    }
}

/// A manipulation and its optional parameters. Unset parameters are sampled
/// by the adversary.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TamperSpec {
    pub mode: Option<TamperMode>,
    /// Length-`d` offset or replacement for the target column.
    pub e: Option<Vec<FieldScalar>>,
    pub target_client: Option<Identity>,
    pub target_column: Option<usize>,
}

impl TamperSpec {
    pub fn new(mode: TamperMode) -> Self {
        TamperSpec {
            mode: Some(mode),
            ..Default::default()
        }
    }

    pub fn with_e(mut self, e: Vec<FieldScalar>) -> Self {
        self.e = Some(e);
        self
    }

    pub fn with_target_client(mut self, id: Identity) -> Self {
        self.target_client = Some(id);
        self
    }

    pub fn with_target_column(mut self, j: usize) -> Self {
        self.target_column = Some(j);
        self
    }
}

/// What the aggregator can see.
pub struct AdversaryView<'a> {
    pub cfg: &'a SessionConfig,
    pub pp: &'a PublicParams,
    pub updates: &'a [ClientUpdate],
    pub previous: Option<&'a AggregateResult>,
    pub board: &'a dyn BulletinBoard,
}

fn nonzero_vector<R: RngCore + ?Sized>(d: usize, rng: &mut R) -> Vec<FieldScalar> {
    loop {
        let e: Vec<FieldScalar> = (0..d).map(|_| FieldScalar::random(rng)).collect();
        if e.iter().any(|v| !v.is_zero()) {
            return e;
        }
    }
}

// Smallest-from-the-top identity that is neither active nor registered.
fn unregistered_identity(view: &AdversaryView<'_>) -> Identity {
    let taken: BTreeSet<Identity> = view
        .board
        .entries()
        .into_iter()
        .map(|e| e.id)
        .chain(view.cfg.active.iter().copied())
        .collect();
    (0..=u32::MAX)
        .rev()
        .map(Identity)
        .find(|id| !taken.contains(id))
        .expect("identity space exhausted")
}

/// Returns the manipulated broadcast. Never fails: when a mode cannot apply
/// (no previous round to replay, fewer than two columns to swap) it falls
/// back to adding a random nonzero `e`, which is still an attack.
pub fn apply<R: RngCore + CryptoRng + ?Sized>(
    spec: &TamperSpec,
    mut result: AggregateResult,
    view: &AdversaryView<'_>,
    rng: &mut R,
) -> AggregateResult {
    let Some(mode) = spec.mode else {
        return result;
    };
    let cols = result.x_agg.cols();
    let d = result.x_agg.rows();
    if cols == 0 || d == 0 {
        return result;
    }
    let column = spec.target_column.unwrap_or_else(|| rng.gen_range(0..cols)) % cols;
    let e = spec
        .e
        .clone()
        .filter(|e| e.len() == d)
        .unwrap_or_else(|| nonzero_vector(d, rng));
    let target_client = spec
        .target_client
        .filter(|id| result.active.contains(id))
        .unwrap_or_else(|| result.active[rng.gen_range(0..result.active.len())]);

    match mode {
        TamperMode::AddE => add_e(&mut result, column, &e),
        TamperMode::ReplaceWithE => result.x_agg.column_mut(column).copy_from_slice(&e),
        TamperMode::InjectForgedSigner => {
            let forger = unregistered_identity(view);
            let (sk, _vk) = mklha::keygen(view.pp, forger, rng).expect("adversary keygen");
            let label = view.cfg.label(result.round, column);
            if let Ok(forged) = mklha::auth(view.pp, &sk, &label, &e, rng) {
                let agg = &mut result.sigma_agg[column];
                agg.per_identity.insert(
                    forger,
                    IdentityComponent {
                        lambda: forged.lambda,
                        commit: forged.commit,
                    },
                );
                agg.s_agg = (G2Projective::from(agg.s_agg) + G2Projective::from(forged.s)).to_affine();
                add_e(&mut result, column, &e);
            }
        }
        TamperMode::OmitClient => {
            let agg = &mut result.sigma_agg[column];
            agg.per_identity.remove(&target_client);
            if let Some(update) = view.updates.iter().find(|u| u.owner == target_client) {
                let s = update.authenticators[column].s;
                agg.s_agg = (G2Projective::from(agg.s_agg) - G2Projective::from(s)).to_affine();
            }
        }
        TamperMode::WrongKeySet => {
            let forger = unregistered_identity(view);
            let (sk, _vk) = mklha::keygen(view.pp, forger, rng).expect("adversary keygen");
            let label = view.cfg.label(result.round, column);
            let agg = &mut result.sigma_agg[column];
            if let Some(component) = agg.per_identity.get_mut(&target_client) {
                component.lambda = sk.sign_commitment(&label, &component.commit);
            }
        }
        TamperMode::ReplayPreviousRound => match view.previous {
            Some(prev) if prev.x_agg.rows() == d && prev.x_agg.cols() == cols => {
                let round = result.round;
                result = prev.clone();
                result.round = round;
            }
            _ => add_e(&mut result, column, &e),
        },
        TamperMode::SwapColumns => {
            if cols >= 2 {
                let other = (column + 1 + rng.gen_range(0..cols - 1)) % cols;
                result.x_agg.swap_columns(column, other);
                result.sigma_agg.swap(column, other);
            } else {
                add_e(&mut result, column, &e);
            }
        }
    }
    result
}

fn add_e(result: &mut AggregateResult, column: usize, e: &[FieldScalar]) {
    for (x, v) in result.x_agg.column_mut(column).iter_mut().zip(e) {
        *x += *v;
    }
}

/// One row of the detection report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionRow {
    pub mode: String,
    pub trials: usize,
    /// Rejected rounds. For the honest control this counts false rejects.
    pub detected: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct DetectionReport {
    pub rows: Vec<DetectionRow>,
}

/// Name of the honest control row.
pub const HONEST_CONTROL: &str = "honest";

impl DetectionReport {
    pub fn row(&self, mode: &str) -> Option<&DetectionRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }

    /// Every tamper mode detected in every trial and no honest round rejected.
    pub fn all_detected(&self) -> bool {
        self.rows.iter().all(|r| {
            if r.mode == HONEST_CONTROL {
                r.detected == 0
            } else {
                r.detected == r.trials
            }
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("mode,trials,detected,rate\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{:.4}\n", r.mode, r.trials, r.detected, r.rate));
        }
        out
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(self.to_csv().as_bytes())
    }
}

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("trials must be at least 1")]
    NoTrials,
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

fn random_inputs<R: RngCore + ?Sized>(cfg: &SessionConfig, rng: &mut R) -> Vec<Matrix<f64>> {
    let bound = cfg.bounds.max_abs_value.min(1.0);
    cfg.active
        .iter()
        .map(|_| Matrix::from_fn(cfg.d, cfg.m, |_, _| rng.gen_range(-bound..=bound)))
        .collect()
}

// One randomized instance: fresh keys, seeds and inputs, a warm-up round so
// that there is something to replay, then the attacked round.
fn trial(
    cfg: &SessionConfig,
    pp: &Arc<PublicParams>,
    mode: Option<TamperMode>,
    seed: u64,
) -> Result<bool, ProtocolError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut world = World::provision(cfg.clone(), pp.clone(), &mut rng)?;
    let mut round_seed = [0u8; 32];
    if mode == Some(TamperMode::ReplayPreviousRound) {
        rng.fill_bytes(&mut round_seed);
        let warmup = random_inputs(cfg, &mut rng);
        run_round(&mut world, &warmup, &RoundOptions::new(0, round_seed))?;
    }
    rng.fill_bytes(&mut round_seed);
    let inputs = random_inputs(cfg, &mut rng);
    let mut opts = RoundOptions::new(1, round_seed);
    opts.tamper = mode.map(TamperSpec::new);
    let outcome = run_round(&mut world, &inputs, &opts)?;
    Ok(!outcome.accepted())
}

/// Runs `trials` randomized rounds per tamper mode plus an honest control
/// group of the same size.
pub fn detection_suite(
    cfg: &SessionConfig,
    pp: &Arc<PublicParams>,
    trials: usize,
    seed: u64,
) -> Result<DetectionReport, SuiteError> {
    if trials == 0 {
        return Err(SuiteError::NoTrials);
    }
    let groups: Vec<Option<TamperMode>> = std::iter::once(None).chain(TamperMode::ALL.map(Some)).collect();
    let mut rows = Vec::with_capacity(groups.len());
    for (g, mode) in groups.into_iter().enumerate() {
        let detected = (0..trials)
            .into_par_iter()
            .map(|t| trial(cfg, pp, mode, seed ^ ((g as u64) << 32) ^ t as u64))
            .collect::<Result<Vec<bool>, _>>()?
            .into_iter()
            .filter(|&rejected| rejected)
            .count();
        rows.push(DetectionRow {
            mode: mode.map_or(HONEST_CONTROL.to_string(), |m| m.name().to_string()),
            trials,
            detected,
            rate: detected as f64 / trials as f64,
        });
    }
    Ok(DetectionReport { rows })
}
