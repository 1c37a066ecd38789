//! Timing sweeps. Every reported value is a mean over at least
//! [`MIN_REPETITIONS`] runs, with the sample standard deviation alongside.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{ensure, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use vfl_core::maskagg::{self, PairwiseSecrets};
use vfl_core::mklha::{self, Authenticator, Label, PublicParams, SecretKey, VerificationKey, AUTHENTICATOR_BYTES};
use vfl_core::protocol::{run_round, RoundOptions, World};
use vfl_core::{FieldScalar, Identity};

use crate::config::RunConfig;
use crate::session::synthetic_inputs;

pub const MIN_REPETITIONS: usize = 10;

/// Column lengths for the auth and verify sweeps.
pub const DEFAULT_D_SWEEP: [usize; 4] = [10_000, 100_000, 500_000, 1_000_000];
/// Client counts for the eval sweep.
pub const DEFAULT_CLIENT_SWEEP: [usize; 3] = [100, 500, 1000];
/// Model sizes for the size sweep, split into this many columns.
pub const DEFAULT_MODEL_SIZES: [usize; 5] = [500_000, 750_000, 1_000_000, 5_000_000, 10_000_000];
pub const DEFAULT_SIZE_COLUMNS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Operation {
    Auth,
    Eval,
    Verify,
    Mask,
    Unmask,
    Round,
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Operation::Auth => "auth",
            Operation::Eval => "eval",
            Operation::Verify => "verify",
            Operation::Mask => "mask",
            Operation::Unmask => "unmask",
            Operation::Round => "round",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub operation: Operation,
    pub d: usize,
    pub m: usize,
    pub clients: usize,
    pub subcolumns: usize,
    pub threads: usize,
    /// Mean wall time in microseconds.
    pub wall_time_us: f64,
    pub std_us: f64,
    /// Size of the object the operation produces.
    pub bytes: usize,
    pub repetitions: usize,
}

pub const CSV_HEADER: &str = "operation,d,m,clients,subcolumns,threads,wall_time_us,std_us,bytes,repetitions";

impl BenchRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.1},{:.1},{},{}",
            self.operation,
            self.d,
            self.m,
            self.clients,
            self.subcolumns,
            self.threads,
            self.wall_time_us,
            self.std_us,
            self.bytes,
            self.repetitions
        )
    }
}

pub fn write_csv(records: &[BenchRecord], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub mean_us: f64,
    pub std_us: f64,
    pub repetitions: usize,
}

/// Runs `setup` untimed before each timed `run`.
pub fn measure<S, T>(reps: usize, mut setup: impl FnMut() -> S, mut run: impl FnMut(S) -> T) -> Stats {
    let reps = reps.max(1);
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let input = setup();
        let start = Instant::now();
        let out = run(input);
        samples.push(start.elapsed().as_secs_f64() * 1e6);
        drop(out);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Stats {
        mean_us: mean,
        std_us: var.sqrt(),
        repetitions: samples.len(),
    }
}

/// Ordinary least squares `y = slope * x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - (slope * x + intercept)).powi(2))
        .sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    LinearFit {
        slope,
        intercept,
        r_squared,
    }
}

fn random_column(d: usize, rng: &mut ChaCha20Rng) -> Vec<FieldScalar> {
    (0..d).map(|_| FieldScalar::random(rng)).collect()
}

fn threads() -> usize {
    rayon::current_num_threads()
}

/// Parameters for the largest `d` in `ds`, to be truncated per sweep point.
pub fn params_for(ds: &[usize], tag: &[u8]) -> Result<Arc<PublicParams>> {
    let max = ds.iter().copied().max().unwrap_or(1);
    Ok(Arc::new(PublicParams::setup(mklha::SECURITY_LEVEL, max, tag)?))
}

fn sized(pp: &Arc<PublicParams>, d: usize) -> Result<Arc<PublicParams>> {
    if pp.dimension() == d {
        Ok(pp.clone())
    } else {
        Ok(Arc::new(pp.truncated(d)?))
    }
}

/// One client authenticating one column of length `d`.
pub fn bench_auth(
    pp: &Arc<PublicParams>,
    ds: &[usize],
    subcolumns: usize,
    reps: usize,
    seed: u64,
) -> Result<Vec<BenchRecord>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for &d in ds {
        let pp_d = sized(pp, d)?;
        let (sk, _) = mklha::keygen(&pp_d, Identity(1), &mut rng)?;
        let x = random_column(d, &mut rng);
        let label = Label::new(pp_d.session_tag(), 0, 0);
        let mut bytes = 0;
        let stats = measure(
            reps,
            || (),
            |_| {
                let sigma = mklha::auth_partitioned(&pp_d, &sk, &label, &x, subcolumns, &mut rng).expect("auth");
                bytes = sigma.to_bytes().len();
            },
        );
        out.push(record(Operation::Auth, d, 1, 1, subcolumns, stats, bytes));
    }
    Ok(out)
}

fn record(op: Operation, d: usize, m: usize, clients: usize, subcolumns: usize, s: Stats, bytes: usize) -> BenchRecord {
    BenchRecord {
        operation: op,
        d,
        m,
        clients,
        subcolumns,
        threads: threads(),
        wall_time_us: s.mean_us,
        std_us: s.std_us,
        bytes,
        repetitions: s.repetitions,
    }
}

type Signed = Vec<(Identity, SecretKey, VerificationKey, Authenticator)>;

// `n` clients, each with a key and an authenticator over a length-`d` column.
fn signed_clients(pp: &PublicParams, n: usize, label: &Label, seed: u64) -> Result<(Signed, Vec<FieldScalar>)> {
    let d = pp.dimension();
    let per_client: Vec<_> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed ^ ((i as u64) << 20));
            let id = Identity(i as u32 + 1);
            let (sk, vk) = mklha::keygen(pp, id, &mut rng)?;
            let x = random_column(d, &mut rng);
            let sigma = mklha::auth(pp, &sk, label, &x, &mut rng)?;
            Ok(((id, sk, vk, sigma), x))
        })
        .collect::<Result<_, mklha::MklhaError>>()?;
    let mut sum = vec![FieldScalar::ZERO; d];
    let mut signed = Vec::with_capacity(n);
    for (s, x) in per_client {
        for (acc, v) in sum.iter_mut().zip(&x) {
            *acc += *v;
        }
        signed.push(s);
    }
    Ok((signed, sum))
}

/// Server-side evaluation over `n` authenticators. Independent of `d`.
pub fn bench_eval(client_counts: &[usize], reps: usize, seed: u64) -> Result<Vec<BenchRecord>> {
    let pp = PublicParams::setup(mklha::SECURITY_LEVEL, 1, b"vfl-bench-eval")?;
    let label = Label::new(pp.session_tag(), 0, 0);
    let max = client_counts.iter().copied().max().unwrap_or(1);
    let (signed, _) = signed_clients(&pp, max, &label, seed)?;
    let mut out = Vec::new();
    for &n in client_counts {
        let mut bytes = 0;
        let stats = measure(
            reps,
            || (),
            |_| {
                let agg = mklha::eval(signed[..n].iter().map(|(id, _, _, s)| (*id, s))).expect("eval");
                bytes = agg.encoded_len();
            },
        );
        out.push(record(Operation::Eval, 1, 1, n, 1, stats, bytes));
    }
    Ok(out)
}

/// Client-side verification of one aggregated column from `clients` signers.
pub fn bench_verify(
    pp: &Arc<PublicParams>,
    ds: &[usize],
    clients: usize,
    reps: usize,
    seed: u64,
) -> Result<Vec<BenchRecord>> {
    let mut out = Vec::new();
    for &d in ds {
        let pp_d = sized(pp, d)?;
        let label = Label::new(pp_d.session_tag(), 0, 0);
        let (signed, sum) = signed_clients(&pp_d, clients, &label, seed ^ d as u64)?;
        let agg = mklha::eval(signed.iter().map(|(id, _, _, s)| (*id, s)))?;
        let vks: BTreeMap<Identity, VerificationKey> = signed.iter().map(|(id, _, vk, _)| (*id, *vk)).collect();
        let stats = measure(
            reps,
            || (),
            |_| assert!(mklha::verify(&pp_d, &vks, &label, &sum, &agg).expect("verify")),
        );
        out.push(record(Operation::Verify, d, 1, clients, 1, stats, agg.encoded_len()));
    }
    Ok(out)
}

/// One client masking one column against `clients - 1` peers.
pub fn bench_mask(ds: &[usize], clients: usize, reps: usize, seed: u64) -> Result<Vec<BenchRecord>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let active: BTreeSet<Identity> = (1..=clients as u32).map(Identity).collect();
    let records = maskagg::provision(&active, &mut rng);
    let secrets = PairwiseSecrets::for_client(Identity(1), &records);
    let mut out = Vec::new();
    for &d in ds {
        let x = random_column(d, &mut rng);
        let stats = measure(
            reps,
            || (),
            |_| maskagg::mask(&x, &secrets, &active, 0, 0).expect("mask"),
        );
        out.push(record(Operation::Mask, d, 1, clients, 1, stats, d * 32));
    }
    Ok(out)
}

/// Server summing `clients` masked columns of length `d`.
pub fn bench_unmask(ds: &[usize], clients: usize, reps: usize, seed: u64) -> Result<Vec<BenchRecord>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let active: BTreeSet<Identity> = (1..=clients as u32).map(Identity).collect();
    let mut out = Vec::new();
    for &d in ds {
        let masked: Vec<Vec<FieldScalar>> = (0..clients).map(|_| random_column(d, &mut rng)).collect();
        let stats = measure(reps, || (), |_| maskagg::unmask_sum(&masked, &active).expect("unmask"));
        out.push(record(Operation::Unmask, d, 1, clients, 1, stats, d * 32));
    }
    Ok(out)
}

/// Whole honest rounds, every client verifying.
pub fn bench_round(cfg: &RunConfig, reps: usize) -> Result<BenchRecord> {
    let session = cfg.session_config()?;
    let pp = Arc::new(session.public_params()?);
    let mut rng = ChaCha20Rng::from_seed(cfg.derive(b"bench-round"));
    let mut world = World::provision(session, pp, &mut rng)?;
    let mut round = 0u64;
    let mut bytes = 0;
    let stats = measure(
        reps,
        || {
            round += 1;
            let mut seed = [0u8; 32];
            rng.fill(&mut seed);
            (
                synthetic_inputs(cfg.d, cfg.m, cfg.clients as usize, seed),
                RoundOptions::new(round, seed),
            )
        },
        |(inputs, opts)| {
            let outcome = run_round(&mut world, &inputs, &opts).expect("round");
            assert!(outcome.accepted(), "honest benchmark round rejected");
            bytes = outcome.transcript.records.iter().map(|r| r.bytes as usize).sum();
        },
    );
    Ok(record(
        Operation::Round,
        cfg.d,
        cfg.m,
        cfg.clients as usize,
        cfg.subcolumns,
        stats,
        bytes,
    ))
}

/// Auth of one length-`d` column in dedicated pools of each size, with the
/// column split into as many sub-columns as workers.
pub fn thread_sweep(
    pp: &Arc<PublicParams>,
    d: usize,
    thread_counts: &[usize],
    reps: usize,
    seed: u64,
) -> Result<Vec<BenchRecord>> {
    let mut out = Vec::new();
    for &t in thread_counts {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(t).build()?;
        let mut records = pool.install(|| bench_auth(pp, &[d], t, reps, seed))?;
        out.append(&mut records);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SizeRow {
    pub model_size: usize,
    pub m: usize,
    pub d: usize,
    pub authenticator_bytes: usize,
}

pub const SIZE_CSV_HEADER: &str = "model_size,m,d,authenticator_bytes,authenticator_kb";

impl SizeRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.3}",
            self.model_size,
            self.m,
            self.d,
            self.authenticator_bytes,
            self.authenticator_bytes as f64 / 1000.0
        )
    }
}

/// Serialized size of one real per-column authenticator at each model size.
pub fn size_sweep(pp: &Arc<PublicParams>, model_sizes: &[usize], m: usize, seed: u64) -> Result<Vec<SizeRow>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for &size in model_sizes {
        ensure!(size % m == 0, "model size {size} is not a multiple of m = {m}");
        let d = size / m;
        let pp_d = sized(pp, d)?;
        let (sk, _) = mklha::keygen(&pp_d, Identity(1), &mut rng)?;
        let x = random_column(d, &mut rng);
        let sigma = mklha::auth(&pp_d, &sk, &Label::new(pp_d.session_tag(), 0, 0), &x, &mut rng)?;
        let bytes = sigma.to_bytes().len();
        debug_assert_eq!(bytes, AUTHENTICATOR_BYTES);
        out.push(SizeRow {
            model_size: size,
            m,
            d,
            authenticator_bytes: bytes,
        });
    }
    Ok(out)
}

pub fn write_size_csv(rows: &[SizeRow], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "{SIZE_CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}
