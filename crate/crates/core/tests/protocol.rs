use std::collections::BTreeMap;
use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Signed;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use vfl_core::board::BoardError;
use vfl_core::maskagg::{provision, PairwiseSecrets};
use vfl_core::mklha::{keygen, PublicParams, SecretKey, VerificationKey};
use vfl_core::protocol::{
    aggregate, client_prepare, client_verify, run_round, AggregateResult, ClientUpdate, Matrix, Phase, ProtocolError,
    RoundOptions, RoundTranscript, SessionConfig, World,
};
use vfl_core::{EncodingBounds, FieldScalar, Identity, Precision};

fn config(n: u32, d: usize, m: usize) -> SessionConfig {
    SessionConfig::new(
        d,
        m,
        Precision::new(4).unwrap(),
        EncodingBounds::new(1.0, 64),
        (1..=n).map(Identity),
        b"protocol-tests".to_vec(),
        1,
    )
    .unwrap()
}

struct Setup {
    cfg: SessionConfig,
    pp: PublicParams,
    clients: Vec<(Identity, SecretKey, PairwiseSecrets)>,
    vks: BTreeMap<Identity, VerificationKey>,
}

impl Setup {
    fn new(cfg: SessionConfig, rng: &mut ChaCha20Rng) -> Self {
        let pp = cfg.public_params().unwrap();
        let records = provision(&cfg.active_set(), rng);
        let mut clients = Vec::new();
        let mut vks = BTreeMap::new();
        for &id in &cfg.active {
            let (sk, vk) = keygen(&pp, id, rng).unwrap();
            vks.insert(id, vk);
            clients.push((id, sk, PairwiseSecrets::for_client(id, &records)));
        }
        Setup { cfg, pp, clients, vks }
    }

    fn prepare(&self, inputs: &[Matrix<f64>], round: u64, rng: &mut ChaCha20Rng) -> Vec<ClientUpdate> {
        self.clients
            .iter()
            .zip(inputs)
            .map(|((id, sk, secrets), x)| client_prepare(&self.cfg, &self.pp, *id, sk, secrets, x, round, rng).unwrap())
            .collect()
    }
}

fn random_inputs(cfg: &SessionConfig, rng: &mut ChaCha20Rng) -> Vec<Matrix<f64>> {
    cfg.active
        .iter()
        .map(|_| Matrix::from_fn(cfg.d, cfg.m, |_, _| rng.gen_range(-1.0..=1.0)))
        .collect()
}

fn exact_units(x: f64) -> BigInt {
    (BigRational::from_float(x).unwrap() * BigRational::from_integer(BigInt::from(10_000)))
        .round()
        .to_integer()
}

#[test]
fn three_clients_end_to_end_matches_rational_mean() {
    let mut rng = ChaCha20Rng::seed_from_u64(31);
    let s = Setup::new(config(3, 8, 2), &mut rng);
    let inputs = random_inputs(&s.cfg, &mut rng);
    let updates = s.prepare(&inputs, 5, &mut rng);
    for u in &updates {
        assert_eq!(u.authenticators.len(), 2);
        assert_eq!(u.masked.entries.as_column_major().len(), 16);
    }
    let result = aggregate(&s.cfg, 5, &updates).unwrap();
    let verdict = client_verify(&s.cfg, &s.pp, &s.vks, 5, &result).unwrap();
    assert!(verdict.accepted());
    let model = verdict.model.unwrap();
    for j in 0..2 {
        for i in 0..8 {
            let total: BigInt = inputs.iter().map(|x| exact_units(*x.get(i, j))).sum();
            let mean = BigRational::new(total, BigInt::from(3 * 10_000));
            let rounded = (mean.clone() * BigRational::from_integer(BigInt::from(10_000)))
                .round()
                .to_integer();
            assert_eq!(BigInt::from(model.mean(i, j).rounded_units()), rounded);
            let err = (BigRational::from_float(model.to_f64().get(i, j).to_owned()).unwrap() - mean).abs();
            assert!(err < BigRational::new(1.into(), 10_000.into()));
        }
    }
}

#[test]
fn single_client_session_is_self_consistent() {
    let mut rng = ChaCha20Rng::seed_from_u64(32);
    let s = Setup::new(config(1, 4, 3), &mut rng);
    let inputs = random_inputs(&s.cfg, &mut rng);
    let updates = s.prepare(&inputs, 0, &mut rng);
    let codec = s.cfg.codec().unwrap();
    assert_eq!(
        updates[0].masked.entries.as_column_major(),
        codec.encode_slice(inputs[0].as_column_major()).unwrap().as_slice()
    );
    let result = aggregate(&s.cfg, 0, &updates).unwrap();
    let verdict = client_verify(&s.cfg, &s.pp, &s.vks, 0, &result).unwrap();
    let model = verdict.model.expect("accepted");
    for (u, x) in model
        .rounded_units()
        .as_column_major()
        .iter()
        .zip(inputs[0].as_column_major())
    {
        assert_eq!(*u, codec.to_units(*x).unwrap());
    }
}

#[test]
fn aggregate_is_order_independent_and_equals_plain_sum() {
    let mut rng = ChaCha20Rng::seed_from_u64(33);
    let s = Setup::new(config(5, 6, 2), &mut rng);
    let inputs = random_inputs(&s.cfg, &mut rng);
    let mut updates = s.prepare(&inputs, 2, &mut rng);
    let a = aggregate(&s.cfg, 2, &updates).unwrap();
    updates.reverse();
    updates.swap(0, 2);
    let b = aggregate(&s.cfg, 2, &updates).unwrap();
    assert_eq!(a, b);

    let codec = s.cfg.codec().unwrap();
    for j in 0..2 {
        for i in 0..6 {
            let plain: FieldScalar = inputs.iter().map(|x| codec.encode(*x.get(i, j)).unwrap()).sum();
            assert_eq!(*a.x_agg.get(i, j), plain);
        }
    }
}

#[test]
fn opposite_updates_sum_to_zero_and_verify() {
    let mut rng = ChaCha20Rng::seed_from_u64(34);
    let s = Setup::new(config(2, 5, 2), &mut rng);
    let x = random_inputs(&s.cfg, &mut rng).remove(0);
    let neg = Matrix::from_fn(5, 2, |i, j| -*x.get(i, j));
    let updates = s.prepare(&[x, neg], 1, &mut rng);
    let result = aggregate(&s.cfg, 1, &updates).unwrap();
    assert!(result.x_agg.as_column_major().iter().all(FieldScalar::is_zero));
    let verdict = client_verify(&s.cfg, &s.pp, &s.vks, 1, &result).unwrap();
    assert!(verdict.accepted());
    assert!(verdict.model.unwrap().sums.as_column_major().iter().all(|&v| v == 0));
}

#[test]
fn flipped_entry_flags_exactly_its_column() {
    let mut rng = ChaCha20Rng::seed_from_u64(35);
    let s = Setup::new(config(3, 4, 4), &mut rng);
    let inputs = random_inputs(&s.cfg, &mut rng);
    let result = aggregate(&s.cfg, 9, &s.prepare(&inputs, 9, &mut rng)).unwrap();
    for j in 0..4 {
        let mut tampered = result.clone();
        let i = rng.gen_range(0..4);
        *tampered.x_agg.get_mut(i, j) += FieldScalar::ONE;
        let verdict = client_verify(&s.cfg, &s.pp, &s.vks, 9, &tampered).unwrap();
        assert!(!verdict.accepted());
        assert!(verdict.model.is_none());
        assert_eq!(verdict.failing_columns(), vec![j]);
    }
}

#[test]
fn aggregator_preconditions_abort_the_round() {
    let mut rng = ChaCha20Rng::seed_from_u64(36);
    let s = Setup::new(config(3, 2, 1), &mut rng);
    let inputs = random_inputs(&s.cfg, &mut rng);
    let updates = s.prepare(&inputs, 4, &mut rng);

    assert!(matches!(
        aggregate(&s.cfg, 4, &updates[..2]),
        Err(ProtocolError::MissingClient(Identity(3)))
    ));
    let dup = vec![
        updates[0].clone(),
        updates[0].clone(),
        updates[1].clone(),
        updates[2].clone(),
    ];
    assert!(matches!(
        aggregate(&s.cfg, 4, &dup),
        Err(ProtocolError::DuplicateClient(_))
    ));
    assert!(matches!(
        aggregate(&s.cfg, 5, &updates),
        Err(ProtocolError::RoundMismatch { .. })
    ));

    let mut other = updates.clone();
    other[1].config_hash[0] ^= 1;
    assert!(matches!(
        aggregate(&s.cfg, 4, &other),
        Err(ProtocolError::ConfigHashMismatch(Identity(2)))
    ));

    let mut stranger = updates.clone();
    stranger[2].owner = Identity(42);
    stranger[2].masked.owner = Identity(42);
    assert!(matches!(
        aggregate(&s.cfg, 4, &stranger),
        Err(ProtocolError::UnexpectedClient(Identity(42)))
    ));
}

#[test]
fn out_of_bounds_input_aborts_before_any_message() {
    let mut rng = ChaCha20Rng::seed_from_u64(37);
    let s = Setup::new(config(1, 2, 1), &mut rng);
    let bad = Matrix::from_column_major(2, 1, vec![0.5, 1.5]).unwrap();
    let (id, sk, secrets) = &s.clients[0];
    assert!(matches!(
        client_prepare(&s.cfg, &s.pp, *id, sk, secrets, &bad, 0, &mut rng),
        Err(ProtocolError::Codec(_))
    ));
}

#[test]
fn missing_board_key_is_an_error_not_a_reject() {
    let mut rng = ChaCha20Rng::seed_from_u64(38);
    let s = Setup::new(config(2, 2, 1), &mut rng);
    let result = aggregate(&s.cfg, 0, &s.prepare(&random_inputs(&s.cfg, &mut rng), 0, &mut rng)).unwrap();
    let mut partial = s.vks.clone();
    partial.remove(&Identity(2));
    assert!(matches!(
        client_verify(&s.cfg, &s.pp, &partial, 0, &result),
        Err(ProtocolError::Board(BoardError::MissingKey(Identity(2))))
    ));
}

#[test]
fn config_hash_covers_every_field() {
    let base = config(3, 4, 2);
    let mut variants = vec![config(4, 4, 2), config(3, 5, 2), config(3, 4, 3)];
    let mut v = base.clone();
    v.session_tag = b"other".to_vec();
    variants.push(v);
    let mut v = base.clone();
    v.subcolumns = 2;
    variants.push(v);
    let mut v = base.clone();
    v.precision = Precision::new(5).unwrap();
    variants.push(v);
    let mut v = base.clone();
    v.bounds.max_abs_value = 2.0;
    variants.push(v);
    for v in variants {
        assert_ne!(v.config_hash(), base.config_hash());
    }
    assert_eq!(base.config_hash(), config(3, 4, 2).config_hash());
}

#[test]
fn wire_roundtrip_and_truncation() {
    let mut rng = ChaCha20Rng::seed_from_u64(39);
    let s = Setup::new(config(2, 3, 2), &mut rng);
    let updates = s.prepare(&random_inputs(&s.cfg, &mut rng), 3, &mut rng);
    let result = aggregate(&s.cfg, 3, &updates).unwrap();

    let bytes = updates[0].to_bytes();
    assert_eq!(bytes.len(), updates[0].encoded_len());
    assert_eq!(ClientUpdate::from_bytes(&bytes).unwrap(), updates[0]);
    let bytes = result.to_bytes();
    assert_eq!(bytes.len(), result.encoded_len());
    assert_eq!(AggregateResult::from_bytes(&bytes).unwrap(), result);

    for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
        assert!(AggregateResult::from_bytes(&bytes[..cut]).is_err());
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(AggregateResult::from_bytes(&extra).is_err());
}

fn world(n: u32, d: usize, m: usize, seed: u64) -> World {
    let cfg = config(n, d, m);
    let pp = Arc::new(cfg.public_params().unwrap());
    World::provision(cfg, pp, &mut ChaCha20Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn honest_round_with_four_clients_accepts() {
    let mut w = world(4, 6, 2, 40);
    let inputs = random_inputs(&w.cfg, &mut ChaCha20Rng::seed_from_u64(41));
    let out = run_round(&mut w, &inputs, &RoundOptions::new(0, [1; 32])).unwrap();
    assert!(out.accepted());
    assert_eq!(out.verdicts.len(), 4);
    let t = &out.transcript;
    assert_eq!(t.records.iter().filter(|r| r.phase == Phase::Prepare).count(), 4);
    assert_eq!(t.records.iter().filter(|r| r.phase == Phase::Aggregate).count(), 4);
    assert_eq!(t.records.iter().filter(|r| r.phase == Phase::Verify).count(), 4);
    assert_eq!(RoundTranscript::parse_jsonl(&t.to_jsonl()).unwrap(), t.records);
    assert!(w.board.len() == 4);
}

#[test]
fn add_e_round_rejects() {
    use vfl_core::adversary::{TamperMode, TamperSpec};
    let mut w = world(4, 6, 2, 42);
    let inputs = random_inputs(&w.cfg, &mut ChaCha20Rng::seed_from_u64(43));
    let mut opts = RoundOptions::new(0, [2; 32]);
    opts.tamper = Some(TamperSpec::new(TamperMode::AddE));
    let out = run_round(&mut w, &inputs, &opts).unwrap();
    assert!(!out.accepted());
    assert!(out.verdicts.iter().all(|(_, v)| v.model.is_none()));
}

#[test]
fn payload_grows_with_d_times_m_and_authenticators_with_m_only() {
    let mut sizes = Vec::new();
    for (d, m) in [(8usize, 1usize), (64, 1), (8, 4)] {
        let mut w = world(2, d, m, 44);
        let inputs = random_inputs(&w.cfg, &mut ChaCha20Rng::seed_from_u64(45));
        let out = run_round(&mut w, &inputs, &RoundOptions::new(0, [3; 32])).unwrap();
        let per_client = out.transcript.bytes_in(Phase::Prepare) / 2;
        sizes.push(per_client);
    }
    // 32 bytes per entry plus 192 per column plus a fixed header.
    let header = sizes[0] - 8 * 32 - 192;
    assert_eq!(sizes[1], header + 64 * 32 + 192);
    assert_eq!(sizes[2], header + 32 * 32 + 4 * 192);
}

#[test]
fn identical_seeds_give_identical_transcripts() {
    let run = || {
        let mut w = world(3, 5, 2, 46);
        let inputs = random_inputs(&w.cfg, &mut ChaCha20Rng::seed_from_u64(47));
        let mut t = run_round(&mut w, &inputs, &RoundOptions::new(7, [9; 32]))
            .unwrap()
            .transcript;
        for r in &mut t.records {
            r.duration_us = 0;
        }
        t.records
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn honest_rounds_accept_and_average_exactly(
        n in 1u32..=32, d in 1usize..=64, m in 1usize..=4, seed in any::<u64>()
    ) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut w = world(n, d, m, seed);
        let inputs = random_inputs(&w.cfg, &mut rng);
        let mut opts = RoundOptions::new(seed % 1000, [5; 32]);
        opts.verifiers = Some(1);
        let out = run_round(&mut w, &inputs, &opts).unwrap();
        prop_assert!(out.accepted());
        let model = out.verdicts[0].1.model.clone().unwrap();
        for j in 0..m {
            for i in 0..d {
                let total: BigInt = inputs.iter().map(|x| exact_units(*x.get(i, j))).sum();
                prop_assert_eq!(BigInt::from(model.sums.get(i, j).to_owned()), total);
            }
        }
    }
}
