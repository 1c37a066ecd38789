//! In-process round simulation. Parties exchange typed messages over
//! channels; every message is also encoded once to record its size and hash.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::sync::{mpsc, Arc};
use std::time::Instant;

use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    aggregate, client_prepare, client_verify, AggregateResult, ClientUpdate, Matrix, ProtocolError, SessionConfig,
    Verdict,
};
use crate::adversary::{self, AdversaryView, TamperSpec};
use crate::board::{BoardEntry, BulletinBoard, MemoryBoard};
use crate::maskagg::{self, PairwiseSecrets};
use crate::mklha::{self, Identity, PublicParams, SecretKey};

/// Transcript name of the aggregator.
pub const AGGREGATOR: &str = "aggregator";

fn client_name(id: Identity) -> String {
    format!("client-{id}")
}

/// Secret state of one client. Never handed to the aggregator or adversary.
pub struct ClientState {
    id: Identity,
    sk: SecretKey,
    secrets: PairwiseSecrets,
}

impl ClientState {
    pub fn new(id: Identity, sk: SecretKey, secrets: PairwiseSecrets) -> Self {
        ClientState { id, sk, secrets }
    }

    pub fn id(&self) -> Identity {
        self.id
    }
}

/// Everything phase 0 leaves behind, plus what the aggregator remembers.
pub struct World {
    pub cfg: SessionConfig,
    pub pp: Arc<PublicParams>,
    clients: Vec<ClientState>,
    pub board: Arc<dyn BulletinBoard>,
    /// Last honestly computed aggregate, kept by the aggregator.
    pub previous_result: Option<AggregateResult>,
}

impl World {
    /// `clients` must cover the active set exactly.
    pub fn new(
        cfg: SessionConfig,
        pp: Arc<PublicParams>,
        mut clients: Vec<ClientState>,
        board: Arc<dyn BulletinBoard>,
    ) -> Result<Self, ProtocolError> {
        cfg.validate()?;
        clients.sort_by_key(|c| c.id);
        if !clients.iter().map(|c| c.id).eq(cfg.active.iter().copied()) {
            return Err(ProtocolError::Config(
                "client states do not match the active set".into(),
            ));
        }
        if pp.dimension() != cfg.d || pp.session_tag() != cfg.session_tag.as_slice() {
            return Err(ProtocolError::Config(
                "public parameters do not match the session".into(),
            ));
        }
        Ok(World {
            cfg,
            pp,
            clients,
            board,
            previous_result: None,
        })
    }

    /// Trusted setup in memory: keys, board registration, pairwise seeds.
    pub fn provision<R: RngCore + CryptoRng + ?Sized>(
        cfg: SessionConfig,
        pp: Arc<PublicParams>,
        rng: &mut R,
    ) -> Result<Self, ProtocolError> {
        let board = Arc::new(MemoryBoard::new());
        let records = maskagg::provision(&cfg.active_set(), rng);
        let mut clients = Vec::with_capacity(cfg.active.len());
        for &id in &cfg.active {
            let (sk, vk) = mklha::keygen(&pp, id, rng)?;
            board.register(BoardEntry {
                id,
                vk,
                registered_at: 0,
            })?;
            clients.push(ClientState::new(id, sk, PairwiseSecrets::for_client(id, &records)));
        }
        World::new(cfg, pp, clients, board)
    }

    pub fn client_ids(&self) -> impl Iterator<Item = Identity> + '_ {
        self.clients.iter().map(|c| c.id)
    }
}

#[derive(Debug, Clone)]
pub struct RoundOptions {
    pub round: u64,
    /// Seeds every party's randomness for this round.
    pub seed: [u8; 32],
    /// How many clients run verification, in identity order. `None` means all.
    pub verifiers: Option<usize>,
    pub tamper: Option<TamperSpec>,
}

impl RoundOptions {
    pub fn new(round: u64, seed: [u8; 32]) -> Self {
        RoundOptions {
            round,
            seed,
            verifiers: None,
            tamper: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Prepare,
    Aggregate,
    Verify,
}

/// One transcript line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub phase: Phase,
    pub sender: String,
    pub receiver: String,
    pub bytes: u64,
    pub duration_us: u64,
    pub payload_hash: String,
}

/// Wall-clock time per phase. Prepare is the slowest client; verify is the
/// slowest verifier.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub prepare_us: u64,
    pub aggregate_us: u64,
    pub verify_us: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundTranscript {
    pub round: u64,
    pub records: Vec<MessageRecord>,
    pub timings: PhaseTimings,
}

impl RoundTranscript {
    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_jsonl().as_bytes())?;
        f.sync_all()
    }

    pub fn parse_jsonl(s: &str) -> Result<Vec<MessageRecord>, serde_json::Error> {
        s.lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect()
    }

    /// Total bytes sent in `phase`.
    pub fn bytes_in(&self, phase: Phase) -> u64 {
        self.records.iter().filter(|r| r.phase == phase).map(|r| r.bytes).sum()
    }
}

#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub transcript: RoundTranscript,
    /// Verdict of each verifying client, in identity order.
    pub verdicts: Vec<(Identity, Verdict)>,
    /// What the aggregator broadcast, tampered or not.
    pub delivered: AggregateResult,
}

impl RoundOutcome {
    /// Accepted iff every verifying client accepted.
    pub fn accepted(&self) -> bool {
        !self.verdicts.is_empty() && self.verdicts.iter().all(|(_, v)| v.accepted())
    }

    pub fn failing_columns(&self) -> BTreeSet<usize> {
        self.verdicts.iter().flat_map(|(_, v)| v.failing_columns()).collect()
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn party_rng(seed: &[u8; 32], role: &[u8], round: u64, id: u32) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(b"vfl-round-rng\0");
    h.update(seed);
    h.update((role.len() as u32).to_le_bytes());
    h.update(role);
    h.update(round.to_le_bytes());
    h.update(id.to_le_bytes());
    ChaCha20Rng::from_seed(h.finalize().into())
}

fn elapsed_us(t: Instant) -> u64 {
    t.elapsed().as_micros() as u64
}

fn verdict_bytes(v: &Verdict) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&v.round.to_le_bytes());
    out.push(v.malformed.is_some() as u8);
    out.extend(v.columns.iter().map(|&c| c as u8));
    if let Some(model) = &v.model {
        for s in model.sums.as_column_major() {
            out.extend_from_slice(&s.to_le_bytes());
        }
    }
    out
}

/// Runs phases 1 to 3. `inputs[k]` is the plain update of the `k`-th active
/// client in identity order. A tampered round ends in a reject verdict, not an
/// error. Errors before the broadcast leave nothing visible to clients.
pub fn run_round(
    world: &mut World,
    inputs: &[Matrix<f64>],
    opts: &RoundOptions,
) -> Result<RoundOutcome, ProtocolError> {
    if inputs.len() != world.clients.len() {
        return Err(ProtocolError::Shape(format!(
            "{} inputs for {} clients",
            inputs.len(),
            world.clients.len()
        )));
    }
    let cfg = &world.cfg;
    let pp = world.pp.as_ref();
    let round = opts.round;
    let mut records = Vec::new();
    let mut timings = PhaseTimings::default();

    // Phase 1: clients -> aggregator.
    let (to_aggregator, aggregator_inbox) = mpsc::channel::<(ClientUpdate, u64)>();
    world
        .clients
        .par_iter()
        .zip(inputs)
        .try_for_each_with(to_aggregator, |tx, (client, plain)| {
            let start = Instant::now();
            let mut rng = party_rng(&opts.seed, b"client", round, client.id.0);
            let update = client_prepare(cfg, pp, client.id, &client.sk, &client.secrets, plain, round, &mut rng)?;
            tx.send((update, elapsed_us(start)))
                .map_err(|_| ProtocolError::ChannelClosed)
        })?;
    let mut updates = Vec::with_capacity(world.clients.len());
    for (update, duration_us) in aggregator_inbox.iter() {
        let bytes = update.to_bytes();
        records.push(MessageRecord {
            phase: Phase::Prepare,
            sender: client_name(update.owner),
            receiver: AGGREGATOR.into(),
            bytes: bytes.len() as u64,
            duration_us,
            payload_hash: sha256_hex(&bytes),
        });
        timings.prepare_us = timings.prepare_us.max(duration_us);
        updates.push(update);
    }
    updates.sort_by_key(|u| u.owner);

    // Phase 2: aggregate, optionally misbehave, broadcast.
    let start = Instant::now();
    let honest = aggregate(cfg, round, &updates)?;
    let delivered = match &opts.tamper {
        None => honest.clone(),
        Some(spec) => {
            let view = AdversaryView {
                cfg,
                pp,
                updates: &updates,
                previous: world.previous_result.as_ref(),
                board: world.board.as_ref(),
            };
            let mut rng = party_rng(&opts.seed, b"adversary", round, 0);
            adversary::apply(spec, honest.clone(), &view, &mut rng)
        }
    };
    timings.aggregate_us = elapsed_us(start);
    let broadcast = delivered.to_bytes();
    let broadcast_hash = sha256_hex(&broadcast);

    let n_verifiers = opts
        .verifiers
        .unwrap_or(world.clients.len())
        .clamp(1, world.clients.len());
    let verifiers = &world.clients[..n_verifiers];
    let mut inboxes = Vec::with_capacity(n_verifiers);
    for client in verifiers {
        let (tx, rx) = mpsc::channel::<AggregateResult>();
        tx.send(delivered.clone()).map_err(|_| ProtocolError::ChannelClosed)?;
        records.push(MessageRecord {
            phase: Phase::Aggregate,
            sender: AGGREGATOR.into(),
            receiver: client_name(client.id),
            bytes: broadcast.len() as u64,
            duration_us: timings.aggregate_us,
            payload_hash: broadcast_hash.clone(),
        });
        inboxes.push(rx);
    }

    // Phase 3: every verifier reads keys from the board and checks.
    let active = cfg.active_set();
    let board = world.board.as_ref();
    let verdicts: Vec<(Identity, Verdict, u64)> = verifiers
        .par_iter()
        .zip(inboxes)
        .map(|(client, inbox)| {
            let result = inbox.recv().map_err(|_| ProtocolError::ChannelClosed)?;
            let start = Instant::now();
            let snapshot = board.snapshot(&active)?;
            let verdict = client_verify(cfg, pp, &snapshot, round, &result)?;
            Ok((client.id, verdict, elapsed_us(start)))
        })
        .collect::<Result<_, ProtocolError>>()?;
    for (id, verdict, duration_us) in &verdicts {
        let bytes = verdict_bytes(verdict);
        records.push(MessageRecord {
            phase: Phase::Verify,
            sender: client_name(*id),
            receiver: client_name(*id),
            bytes: bytes.len() as u64,
            duration_us: *duration_us,
            payload_hash: sha256_hex(&bytes),
        });
        timings.verify_us = timings.verify_us.max(*duration_us);
    }

    records.sort_by(|a, b| (a.phase, &a.sender, &a.receiver).cmp(&(b.phase, &b.sender, &b.receiver)));
    world.previous_result = Some(honest);
    Ok(RoundOutcome {
        transcript: RoundTranscript {
            round,
            records,
            timings,
        },
        verdicts: verdicts.into_iter().map(|(id, v, _)| (id, v)).collect(),
        delivered,
    })
}
