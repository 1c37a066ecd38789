use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use vfl_cli::bench::{self, BenchRecord, MIN_REPETITIONS};
use vfl_cli::cmd_adversary;
use vfl_cli::config::{parse_seed, RunConfig};
use vfl_cli::selftest::{self, SelftestOptions};
use vfl_cli::session::{cmd_round, cmd_setup, RoundArgs};
use vfl_core::adversary::TamperMode;
use vfl_core::mklha::PointValidation;

#[derive(Parser, Debug)]
#[command(name = "vfl", version, about = "Verifiable federated averaging over BLS12-381")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Number of clients.
    #[arg(long, global = true)]
    clients: Option<u32>,
    /// Rows per column.
    #[arg(long, global = true)]
    d: Option<usize>,
    /// Columns per update.
    #[arg(long, global = true)]
    m: Option<usize>,
    /// Decimal places kept by the fixed-point encoding.
    #[arg(long, global = true)]
    dp: Option<u8>,
    /// Sub-columns per authenticator MSM.
    #[arg(long, global = true)]
    subcolumns: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "VFL_THREADS")]
    threads: Option<usize>,
    /// Hex seed for all randomness.
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Session or output directory.
    #[arg(long, global = true, default_value = "vfl-session")]
    out: PathBuf,
}

impl Global {
    fn seed(&self) -> Result<Option<Vec<u8>>> {
        self.seed.as_deref().map(parse_seed).transpose()
    }

    fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(v) = self.clients {
            cfg.clients = v;
        }
        if let Some(v) = self.d {
            cfg.d = v;
        }
        if let Some(v) = self.m {
            cfg.m = v;
        }
        if let Some(v) = self.dp {
            cfg.dp = v;
        }
        if let Some(v) = self.subcolumns {
            cfg.subcolumns = v;
        }
        if let Some(v) = self.seed()? {
            cfg.seed = v;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Trusted setup: keys, bulletin board, pairwise secrets.
    Setup {
        /// Overwrite an existing session.
        #[arg(long)]
        force: bool,
    },
    /// One aggregation round on a session made by `setup`. Exits 2 on reject.
    Round {
        #[arg(long, default_value_t = 0)]
        round: u64,
        /// Tamper mode applied by the aggregator.
        #[arg(long)]
        tamper: Option<TamperMode>,
        /// Number of clients that verify (default: all).
        #[arg(long)]
        verifiers: Option<usize>,
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
    /// Timing sweeps written as CSV.
    Bench {
        #[arg(long, value_enum, default_value_t = BenchOp::All)]
        op: BenchOp,
        #[arg(long, default_value_t = MIN_REPETITIONS)]
        reps: usize,
        /// Column lengths for auth, verify, mask and unmask.
        #[arg(long, value_delimiter = ',')]
        ds: Option<Vec<usize>>,
        /// Client counts for eval.
        #[arg(long, value_delimiter = ',')]
        client_counts: Option<Vec<usize>>,
        /// Pool sizes for the thread sweep.
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32")]
        thread_counts: Vec<usize>,
    },
    /// Detection rate of every tamper mode.
    Adversary {
        #[arg(long, default_value_t = 200)]
        trials: usize,
    },
    /// Fast health check of the build.
    Selftest {
        #[arg(long, hide = true)]
        mutate_skip_subgroup_check: bool,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum BenchOp {
    All,
    Auth,
    Eval,
    Verify,
    Mask,
    Unmask,
    Round,
    Size,
    Threads,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    if let Some(t) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let g = &cli.global;
    match cli.command {
        Command::Setup { force } => {
            let s = cmd_setup(&g.run_config()?, &g.out, force)?;
            println!(
                "session written to {}: {} keys, {} board entries, {} pairwise secrets",
                s.dir.display(),
                s.key_files,
                s.board_entries,
                s.pairwise_records
            );
            Ok(0)
        }
        Command::Round {
            round,
            tamper,
            verifiers,
            transcript,
        } => {
            let report = cmd_round(
                &g.out,
                &RoundArgs {
                    round,
                    tamper,
                    seed: g.seed()?,
                    verifiers,
                    transcript,
                },
            )?;
            print!("{}", report.table());
            println!("transcript: {}", report.transcript.display());
            Ok(report.exit_code() as u8)
        }
        Command::Bench {
            op,
            reps,
            ds,
            client_counts,
            thread_counts,
        } => {
            bench_command(&g.run_config()?, &g.out, op, reps, ds, client_counts, &thread_counts)?;
            Ok(0)
        }
        Command::Adversary { trials } => {
            let report = cmd_adversary(&g.run_config()?, trials, &g.out)?;
            print!("{}", report.to_csv());
            Ok(if report.all_detected() { 0 } else { 2 })
        }
        Command::Selftest {
            mutate_skip_subgroup_check,
        } => {
            let validation = if mutate_skip_subgroup_check {
                PointValidation::SkipSubgroupCheck
            } else {
                PointValidation::Full
            };
            let report = selftest::run(SelftestOptions { seed: 0, validation });
            print!("{}", report.render());
            Ok(if report.passed() { 0 } else { 1 })
        }
    }
}

fn bench_command(
    cfg: &RunConfig,
    out: &Path,
    op: BenchOp,
    reps: usize,
    ds: Option<Vec<usize>>,
    client_counts: Option<Vec<usize>>,
    thread_counts: &[usize],
) -> Result<()> {
    let reps = reps.max(MIN_REPETITIONS);
    let ds = ds.unwrap_or_else(|| bench::DEFAULT_D_SWEEP.to_vec());
    let counts = client_counts.unwrap_or_else(|| bench::DEFAULT_CLIENT_SWEEP.to_vec());
    let clients = cfg.clients as usize;
    let seed = u64::from_le_bytes(cfg.derive(b"bench")[..8].try_into().unwrap());
    let wants = |o: BenchOp| op == BenchOp::All || op == o;
    std::fs::create_dir_all(out)?;

    let needs_pp = [BenchOp::Auth, BenchOp::Verify, BenchOp::Size, BenchOp::Threads]
        .into_iter()
        .any(wants);
    let mut max_d = ds.iter().copied().max().unwrap_or(1);
    if wants(BenchOp::Size) {
        let size_max = bench::DEFAULT_MODEL_SIZES.iter().max().unwrap() / bench::DEFAULT_SIZE_COLUMNS;
        max_d = max_d.max(size_max);
    }
    let pp = if needs_pp {
        Some(bench::params_for(&[max_d], b"vfl-bench")?)
    } else {
        None
    };

    let mut records: Vec<BenchRecord> = Vec::new();
    if wants(BenchOp::Auth) {
        records.extend(bench::bench_auth(
            pp.as_ref().unwrap(),
            &ds,
            cfg.subcolumns,
            reps,
            seed,
        )?);
    }
    if wants(BenchOp::Eval) {
        records.extend(bench::bench_eval(&counts, reps, seed)?);
    }
    if wants(BenchOp::Verify) {
        records.extend(bench::bench_verify(pp.as_ref().unwrap(), &ds, clients, reps, seed)?);
    }
    if wants(BenchOp::Mask) {
        records.extend(bench::bench_mask(&ds, clients, reps, seed)?);
    }
    if wants(BenchOp::Unmask) {
        records.extend(bench::bench_unmask(&ds, clients, reps, seed)?);
    }
    if wants(BenchOp::Round) {
        records.push(bench::bench_round(cfg, reps)?);
    }
    if wants(BenchOp::Threads) {
        let d = ds.iter().copied().max().unwrap_or(1);
        records.extend(bench::thread_sweep(pp.as_ref().unwrap(), d, thread_counts, reps, seed)?);
    }
    if !records.is_empty() {
        let path = out.join("bench.csv");
        bench::write_csv(&records, BufWriter::new(File::create(&path)?))?;
        bench::write_csv(&records, std::io::stdout())?;
        println!("written to {}", path.display());
    }
    if wants(BenchOp::Size) {
        let rows = bench::size_sweep(
            pp.as_ref().unwrap(),
            &bench::DEFAULT_MODEL_SIZES,
            bench::DEFAULT_SIZE_COLUMNS,
            seed,
        )?;
        let path = out.join("sizes.csv");
        bench::write_size_csv(&rows, BufWriter::new(File::create(&path)?))?;
        bench::write_size_csv(&rows, std::io::stdout())?;
        println!("written to {}", path.display());
    }
    Ok(())
}
