//! `setup` and `round`: the trusted entity writes everything a session needs
//! to a directory and goes offline; rounds run from those files alone.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use vfl_core::adversary::{TamperMode, TamperSpec};
use vfl_core::board::{BoardEntry, BulletinBoard, FileBoard};
use vfl_core::maskagg::{self, PairwiseSecrets};
use vfl_core::mklha::{
    self, parse_secret_key_file, secret_key_file_contents, verification_key_file_contents, PublicParams, CURVE_NAME,
};
use vfl_core::protocol::{run_round, ClientState, Matrix, Phase, PhaseTimings, RoundOptions, World};
use vfl_core::Identity;

use crate::config::{RunConfig, MAX_ABS_VALUE};

pub const CONFIG_FILE: &str = "config.txt";
pub const PARAMS_FILE: &str = "params.txt";
pub const VK_FILE: &str = "verification_keys.txt";
pub const SECRETS_FILE: &str = "pairwise.bin";
pub const BOARD_FILE: &str = "board.csv";
pub const KEY_DIR: &str = "keys";

const PARAMS_HEADER: &str = "vfl-pp v1";

pub fn key_path(dir: &Path, id: Identity) -> PathBuf {
    dir.join(KEY_DIR).join(format!("client-{id}.sk"))
}

/// SHA-256 over every generator in compressed form.
pub fn params_digest(pp: &PublicParams) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(pp.g1().to_compressed());
    h.update(pp.g2().to_compressed());
    h.update(pp.blinding_base().to_compressed());
    for s in pp.slots() {
        h.update(s.to_compressed());
    }
    h.finalize().into()
}

fn params_text(pp: &PublicParams) -> String {
    format!(
        "{PARAMS_HEADER} {CURVE_NAME}\nsecurity_level={}\nsession_tag={}\nd={}\ndigest={}\n",
        pp.security_level(),
        hex::encode(pp.session_tag()),
        pp.dimension(),
        hex::encode(params_digest(pp))
    )
}

#[derive(Debug, Clone)]
pub struct SetupSummary {
    pub dir: PathBuf,
    pub key_files: usize,
    pub board_entries: usize,
    pub pairwise_records: usize,
}

/// Trusted setup. Refuses to touch a directory that already holds a session
/// unless `force` is set.
pub fn cmd_setup(cfg: &RunConfig, dir: &Path, force: bool) -> Result<SetupSummary> {
    cfg.validate()?;
    let existing = [CONFIG_FILE, BOARD_FILE, SECRETS_FILE, PARAMS_FILE, VK_FILE]
        .iter()
        .any(|f| dir.join(f).exists());
    if existing && !force {
        bail!(
            "{} already holds a session; pass --force to overwrite it",
            dir.display()
        );
    }
    if existing {
        for f in [CONFIG_FILE, BOARD_FILE, SECRETS_FILE, PARAMS_FILE, VK_FILE] {
            let p = dir.join(f);
            if p.exists() {
                std::fs::remove_file(&p).with_context(|| format!("removing {}", p.display()))?;
            }
        }
        let keys = dir.join(KEY_DIR);
        if keys.exists() {
            std::fs::remove_dir_all(&keys)?;
        }
    }
    std::fs::create_dir_all(dir.join(KEY_DIR)).with_context(|| format!("creating {}", dir.display()))?;

    let session = cfg.session_config()?;
    let pp = session.public_params()?;
    let mut rng = ChaCha20Rng::from_seed(cfg.derive(b"setup"));

    let board = FileBoard::open(dir.join(BOARD_FILE))?;
    let mut vks = Vec::new();
    for id in cfg.identities() {
        let (sk, vk) = mklha::keygen(&pp, id, &mut rng)?;
        std::fs::write(key_path(dir, id), secret_key_file_contents(&sk))?;
        board.register(BoardEntry {
            id,
            vk,
            registered_at: 0,
        })?;
        vks.push(vk);
    }
    let records = maskagg::provision(&session.active_set(), &mut rng);
    std::fs::write(dir.join(SECRETS_FILE), maskagg::encode_secrets_file(&records))?;
    std::fs::write(dir.join(VK_FILE), verification_key_file_contents(&vks))?;
    std::fs::write(dir.join(PARAMS_FILE), params_text(&pp))?;
    // Written last: its presence marks a complete session.
    std::fs::write(dir.join(CONFIG_FILE), cfg.to_text())?;

    Ok(SetupSummary {
        dir: dir.to_path_buf(),
        key_files: vks.len(),
        board_entries: board.len(),
        pairwise_records: records.len(),
    })
}

/// Loads a session directory into a runnable world.
pub fn load_world(dir: &Path) -> Result<(RunConfig, World)> {
    let cfg = RunConfig::load(&dir.join(CONFIG_FILE))?;
    let session = cfg.session_config()?;
    let pp = session.public_params()?;
    let stored = std::fs::read_to_string(dir.join(PARAMS_FILE)).context("reading public parameters")?;
    ensure!(
        stored == params_text(&pp),
        "public parameters in {} do not match the configuration",
        dir.display()
    );

    let records = maskagg::decode_secrets_file(&std::fs::read(dir.join(SECRETS_FILE))?)?;
    let mut clients = Vec::new();
    for id in cfg.identities() {
        let path = key_path(dir, id);
        let sk = parse_secret_key_file(
            &std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?,
        )?;
        clients.push(ClientState::new(id, sk, PairwiseSecrets::for_client(id, &records)));
    }
    let board = Arc::new(FileBoard::open(dir.join(BOARD_FILE))?);
    let world = World::new(session, Arc::new(pp), clients, board)?;
    Ok((cfg, world))
}

/// Uniform synthetic updates in `[-1, 1]`, one matrix per client.
pub fn synthetic_inputs(d: usize, m: usize, clients: usize, seed: [u8; 32]) -> Vec<Matrix<f64>> {
    let mut rng = ChaCha20Rng::from_seed(seed);
    (0..clients)
        .map(|_| Matrix::from_fn(d, m, |_, _| rng.gen_range(-MAX_ABS_VALUE..=MAX_ABS_VALUE)))
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct RoundArgs {
    pub round: u64,
    pub tamper: Option<TamperMode>,
    /// Overrides the session seed for round randomness.
    pub seed: Option<Vec<u8>>,
    pub verifiers: Option<usize>,
    /// Defaults to `<dir>/transcript-round-<r>.jsonl`.
    pub transcript: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RoundReport {
    pub round: u64,
    pub accepted: bool,
    pub failing_columns: BTreeSet<usize>,
    pub timings: PhaseTimings,
    pub upload_bytes: u64,
    pub broadcast_bytes: u64,
    pub transcript: PathBuf,
}

impl RoundReport {
    pub fn exit_code(&self) -> i32 {
        if self.accepted {
            0
        } else {
            2
        }
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let ms = |us: u64| us as f64 / 1000.0;
        let _ = writeln!(out, "{:<10} {:>12} {:>14}", "phase", "wall ms", "bytes");
        let _ = writeln!(
            out,
            "{:<10} {:>12.3} {:>14}",
            "prepare",
            ms(self.timings.prepare_us),
            self.upload_bytes
        );
        let _ = writeln!(
            out,
            "{:<10} {:>12.3} {:>14}",
            "aggregate",
            ms(self.timings.aggregate_us),
            self.broadcast_bytes
        );
        let _ = writeln!(out, "{:<10} {:>12.3} {:>14}", "verify", ms(self.timings.verify_us), "-");
        let verdict = if self.accepted {
            "accept".to_string()
        } else {
            format!("reject (columns {:?})", self.failing_columns)
        };
        let _ = writeln!(out, "round {}: {verdict}", self.round);
        out
    }
}

/// Runs one round from a session directory. A replay attack needs a round to
/// replay: the aggregator first runs round `r` honestly and then attacks
/// round `r + 1`, which is the round reported.
pub fn cmd_round(dir: &Path, args: &RoundArgs) -> Result<RoundReport> {
    let (mut cfg, mut world) = load_world(dir)?;
    if let Some(seed) = &args.seed {
        cfg.seed = seed.clone();
    }
    let clients = cfg.clients as usize;
    let mut round = args.round;

    if args.tamper == Some(TamperMode::ReplayPreviousRound) {
        let inputs = synthetic_inputs(cfg.d, cfg.m, clients, cfg.derive(&round_purpose(b"inputs", round)));
        let mut opts = RoundOptions::new(round, cfg.derive(&round_purpose(b"round", round)));
        opts.verifiers = args.verifiers;
        run_round(&mut world, &inputs, &opts)?;
        round += 1;
    }

    let inputs = synthetic_inputs(cfg.d, cfg.m, clients, cfg.derive(&round_purpose(b"inputs", round)));
    let mut opts = RoundOptions::new(round, cfg.derive(&round_purpose(b"round", round)));
    opts.verifiers = args.verifiers;
    opts.tamper = args.tamper.map(TamperSpec::new);
    let outcome = run_round(&mut world, &inputs, &opts)?;

    let transcript = args
        .transcript
        .clone()
        .unwrap_or_else(|| dir.join(format!("transcript-round-{round}.jsonl")));
    outcome
        .transcript
        .write_jsonl(&transcript)
        .with_context(|| format!("writing {}", transcript.display()))?;

    Ok(RoundReport {
        round,
        accepted: outcome.accepted(),
        failing_columns: outcome.failing_columns(),
        timings: outcome.transcript.timings,
        upload_bytes: outcome.transcript.bytes_in(Phase::Prepare),
        broadcast_bytes: outcome.delivered.encoded_len() as u64,
        transcript,
    })
}

fn round_purpose(what: &[u8], round: u64) -> Vec<u8> {
    let mut p = what.to_vec();
    p.extend_from_slice(&round.to_le_bytes());
    p
}
