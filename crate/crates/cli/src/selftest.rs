//! Quick end-to-end health check of a build.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use vfl_core::adversary::{detection_suite, HONEST_CONTROL};
use vfl_core::maskagg::{self, PairwiseSecrets};
use vfl_core::mklha::{self, off_subgroup_g1_bytes, Authenticator, Label, PointValidation, PublicParams, G1_BYTES};
use vfl_core::protocol::SessionConfig;
use vfl_core::{EncodingBounds, FieldScalar, FixedPointCodec, Identity, Precision};

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct SelftestReport {
    pub checks: Vec<Check>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let status = if c.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(out, "{status} {:<22} {}", c.name, c.detail);
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SelftestOptions {
    pub seed: u64,
    /// Point validation used when decoding received authenticators.
    pub validation: PointValidation,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        SelftestOptions {
            seed: 0,
            validation: PointValidation::Full,
        }
    }
}

type CheckResult = Result<String, String>;

pub fn run(opts: SelftestOptions) -> SelftestReport {
    let mut rng = ChaCha20Rng::seed_from_u64(opts.seed);
    let mut report = SelftestReport::default();
    let mut push = |name, r: CheckResult| {
        let (passed, detail) = match r {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        report.checks.push(Check { name, passed, detail });
    };
    push("codec", codec_check(&mut rng));
    push("mask-cancellation", cancellation_check(&mut rng));
    push("auth-verify", correctness_check(&mut rng));
    push("tamper-detection", detection_check(opts.seed));
    push("subgroup-check", subgroup_check(&mut rng, opts.validation));
    report
}

fn codec_check(rng: &mut ChaCha20Rng) -> CheckResult {
    let precision = Precision::new(4).map_err(|e| e.to_string())?;
    let codec = FixedPointCodec::new(precision, EncodingBounds::new(1.0, 8)).map_err(|e| e.to_string())?;
    let xs: Vec<f64> = (0..1000).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    for &x in &xs {
        let back = codec
            .decode(codec.encode(x).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        if (back - x).abs() > 0.5e-4 + 1e-12 {
            return Err(format!("{x} decoded as {back}"));
        }
    }
    let sum: FieldScalar = xs[..8].iter().map(|&x| codec.encode(x).unwrap()).sum();
    let units: i128 = xs[..8].iter().map(|&x| codec.to_units(x).unwrap()).sum();
    if sum != FieldScalar::from_i128(units) {
        return Err("encoding is not additive".into());
    }
    Ok("1000 values at 4 decimal places".into())
}

fn cancellation_check(rng: &mut ChaCha20Rng) -> CheckResult {
    let active: BTreeSet<Identity> = (1..=5).map(Identity).collect();
    let records = maskagg::provision(&active, rng);
    let d = 256;
    let xs: Vec<Vec<FieldScalar>> = (0..5)
        .map(|_| (0..d).map(|_| FieldScalar::random(rng)).collect())
        .collect();
    let masked = active
        .iter()
        .zip(&xs)
        .map(|(&id, x)| maskagg::mask(x, &PairwiseSecrets::for_client(id, &records), &active, 3, 1))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    if masked.iter().zip(&xs).any(|(m, x)| m == x) {
        return Err("a masked vector equals its plaintext".into());
    }
    let sum = maskagg::unmask_sum(&masked, &active).map_err(|e| e.to_string())?;
    for i in 0..d {
        let plain: FieldScalar = xs.iter().map(|x| x[i]).sum();
        if sum[i] != plain {
            return Err(format!("masks do not cancel at position {i}"));
        }
    }
    Ok(format!("5 clients, d = {d}"))
}

fn correctness_check(rng: &mut ChaCha20Rng) -> CheckResult {
    let d = 16;
    let pp = PublicParams::setup(mklha::SECURITY_LEVEL, d, b"vfl-selftest").map_err(|e| e.to_string())?;
    let label = Label::new(pp.session_tag(), 0, 0);
    let mut vks = BTreeMap::new();
    let mut sigmas = Vec::new();
    let mut sum = vec![FieldScalar::ZERO; d];
    for id in (1..=3).map(Identity) {
        let (sk, vk) = mklha::keygen(&pp, id, rng).map_err(|e| e.to_string())?;
        let x: Vec<FieldScalar> = (0..d).map(|_| FieldScalar::random(rng)).collect();
        for (s, v) in sum.iter_mut().zip(&x) {
            *s += *v;
        }
        sigmas.push((id, mklha::auth(&pp, &sk, &label, &x, rng).map_err(|e| e.to_string())?));
        vks.insert(id, vk);
    }
    let agg = mklha::eval(sigmas.iter().map(|(id, s)| (*id, s))).map_err(|e| e.to_string())?;
    if !mklha::verify(&pp, &vks, &label, &sum, &agg).map_err(|e| e.to_string())? {
        return Err("honest aggregate rejected".into());
    }
    sum[0] += FieldScalar::ONE;
    if mklha::verify(&pp, &vks, &label, &sum, &agg).map_err(|e| e.to_string())? {
        return Err("modified sum accepted".into());
    }
    Ok("3 signers, d = 16".into())
}

fn detection_check(seed: u64) -> CheckResult {
    let cfg = SessionConfig::new(
        2,
        2,
        Precision::new(4).map_err(|e| e.to_string())?,
        EncodingBounds::new(1.0, 3),
        (1..=3).map(Identity),
        b"vfl-selftest".to_vec(),
        1,
    )
    .map_err(|e| e.to_string())?;
    let pp = Arc::new(cfg.public_params().map_err(|e| e.to_string())?);
    let report = detection_suite(&cfg, &pp, 2, seed).map_err(|e| e.to_string())?;
    if !report.all_detected() {
        return Err(format!("undetected tampering:\n{}", report.to_csv()));
    }
    let honest = report.row(HONEST_CONTROL).map(|r| r.detected).unwrap_or(usize::MAX);
    Ok(format!(
        "{} modes, honest control rejected {honest} times",
        report.rows.len() - 1
    ))
}

fn subgroup_check(rng: &mut ChaCha20Rng, validation: PointValidation) -> CheckResult {
    let pp = PublicParams::setup(mklha::SECURITY_LEVEL, 1, b"vfl-selftest").map_err(|e| e.to_string())?;
    let (sk, _) = mklha::keygen(&pp, Identity(1), rng).map_err(|e| e.to_string())?;
    let sigma = mklha::auth(&pp, &sk, &Label::new(pp.session_tag(), 0, 0), &[FieldScalar::ONE], rng)
        .map_err(|e| e.to_string())?;
    let mut bytes = sigma.to_bytes();
    if Authenticator::from_bytes_with(&bytes, validation).is_err() {
        return Err("valid authenticator rejected".into());
    }
    bytes[..G1_BYTES].copy_from_slice(&off_subgroup_g1_bytes());
    match Authenticator::from_bytes_with(&bytes, validation) {
        Err(_) => Ok("point outside the prime-order subgroup rejected".into()),
        Ok(_) => Err("point outside the prime-order subgroup accepted".into()),
    }
}
