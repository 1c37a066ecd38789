use super::*;
use blstrs::pairing as pair;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

const TAG: &[u8] = b"unit-session";

fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

fn random_vec(d: usize, rng: &mut ChaCha20Rng) -> Vec<FieldScalar> {
    (0..d).map(|_| FieldScalar::random(rng)).collect()
}

fn elementwise_sum(vs: &[Vec<FieldScalar>]) -> Vec<FieldScalar> {
    (0..vs[0].len()).map(|i| vs.iter().map(|v| v[i]).sum()).collect()
}

#[test]
fn setup_is_deterministic_and_domain_separated() {
    let a = PublicParams::setup(128, 4, TAG).unwrap();
    let b = PublicParams::setup(128, 4, TAG).unwrap();
    assert_eq!(a, b);
    let other = PublicParams::setup(128, 4, b"another-session").unwrap();
    assert_ne!(a.slots()[1], other.slots()[1]);
    assert_ne!(a.blinding_base(), other.blinding_base());
}

#[test]
fn generators_are_pairwise_distinct_and_non_identity() {
    let pp = PublicParams::setup(128, 16, TAG).unwrap();
    let mut all = vec![*pp.g1(), *pp.blinding_base()];
    all.extend_from_slice(pp.slots());
    for (i, p) in all.iter().enumerate() {
        assert!(!bool::from(p.is_identity()));
        assert!(bool::from(p.is_torsion_free()));
        for q in &all[i + 1..] {
            assert_ne!(p, q);
        }
    }
}

#[test]
fn setup_rejects_bad_arguments() {
    assert_eq!(
        PublicParams::setup(80, 4, TAG).unwrap_err(),
        MklhaError::UnsupportedSecurityLevel(80)
    );
    assert_eq!(
        PublicParams::setup(128, 0, TAG).unwrap_err(),
        MklhaError::EmptyDimension
    );
}

#[test]
fn truncated_params_equal_fresh_setup() {
    let big = PublicParams::setup(128, 12, TAG).unwrap();
    assert_eq!(big.truncated(5).unwrap(), PublicParams::setup(128, 5, TAG).unwrap());
    assert!(big.truncated(13).is_err());
}

#[test]
fn keygen_is_pairing_consistent_for_known_scalar() {
    let a = FieldScalar::from_u64(0x1234_5678_9abc);
    let sk = SecretKey::from_scalar(a).unwrap();
    let vk = sk.verification_key();
    let g1a = (G1Projective::generator() * Scalar::from(a)).to_affine();
    assert_eq!(
        pair(&g1a, &G2Affine::generator()),
        pair(&G1Affine::generator(), vk.point())
    );
}

#[test]
fn keygen_produces_distinct_keys() {
    let pp = PublicParams::setup(128, 1, TAG).unwrap();
    let mut r = rng(1);
    let (_, vk1) = keygen(&pp, Identity(1), &mut r).unwrap();
    let (_, vk2) = keygen(&pp, Identity(2), &mut r).unwrap();
    assert_ne!(vk1, vk2);
}

/// Yields zeros for the first 64 bytes, then defers to a real generator.
struct ZeroFirst {
    zeros_left: usize,
    inner: ChaCha20Rng,
}

impl RngCore for ZeroFirst {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.try_fill_bytes(dest).unwrap()
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        for b in dest.iter_mut() {
            if self.zeros_left > 0 {
                self.zeros_left -= 1;
                *b = 0;
            } else {
                *b = (self.inner.next_u32() & 0xff) as u8;
            }
        }
        Ok(())
    }
}
impl CryptoRng for ZeroFirst {}

struct FailingRng;
impl RngCore for FailingRng {
    fn next_u32(&mut self) -> u32 {
        0
    }
    fn next_u64(&mut self) -> u64 {
        0
    }
    fn fill_bytes(&mut self, _: &mut [u8]) {}
    fn try_fill_bytes(&mut self, _: &mut [u8]) -> Result<(), rand::Error> {
        Err(rand::Error::new("entropy source unavailable"))
    }
}
impl CryptoRng for FailingRng {}

#[test]
fn zero_key_is_rejected_and_resampled() {
    assert!(SecretKey::from_scalar(FieldScalar::ZERO).is_err());
    assert!(SecretKey::from_bytes(&[0u8; 32]).is_err());
    let pp = PublicParams::setup(128, 1, TAG).unwrap();
    let mut r = ZeroFirst {
        zeros_left: 64,
        inner: rng(2),
    };
    let (sk, vk) = keygen(&pp, Identity(0), &mut r).unwrap();
    assert!(!bool::from(vk.point().is_identity()));
    assert_eq!(sk.verification_key(), vk);
}

#[test]
fn keygen_surfaces_rng_failure() {
    let pp = PublicParams::setup(128, 1, TAG).unwrap();
    assert!(matches!(
        keygen(&pp, Identity(0), &mut FailingRng),
        Err(MklhaError::KeyGeneration(_))
    ));
}

#[test]
fn zero_vector_with_zero_blinding() {
    let pp = PublicParams::setup(128, 3, TAG).unwrap();
    let a = FieldScalar::from_u64(99);
    let sk = SecretKey::from_scalar(a).unwrap();
    let label = Label::new(TAG, 0, 0);
    let zero = vec![FieldScalar::ZERO; 3];
    let sigma = auth_with_blinding(&pp, &sk, &label, &zero, FieldScalar::ZERO, 1).unwrap();
    assert!(bool::from(sigma.commit.is_identity()));
    assert!(bool::from(sigma.s.is_identity()));
    assert_eq!(sigma.lambda, (label.to_g1() * Scalar::from(a)).to_affine());

    let vk = sk.verification_key();
    assert!(verify_single(&pp, &vk, &label, &sigma));
    let agg = eval([(Identity(4), &sigma)]).unwrap();
    let vks = BTreeMap::from([(Identity(4), vk)]);
    assert!(verify(&pp, &vks, &label, &zero, &agg).unwrap());
}

#[test]
fn auth_rejects_wrong_length() {
    let pp = PublicParams::setup(128, 3, TAG).unwrap();
    let mut r = rng(3);
    let (sk, _) = keygen(&pp, Identity(0), &mut r).unwrap();
    let err = auth(&pp, &sk, &Label::new(TAG, 0, 0), &[FieldScalar::ONE; 2], &mut r).unwrap_err();
    assert_eq!(err, MklhaError::DimensionMismatch { expected: 3, got: 2 });
}

#[test]
fn auth_is_randomized() {
    let pp = PublicParams::setup(128, 4, TAG).unwrap();
    let mut r = rng(4);
    let (sk, vk) = keygen(&pp, Identity(0), &mut r).unwrap();
    let label = Label::new(TAG, 2, 1);
    let x = random_vec(4, &mut r);
    let a = auth(&pp, &sk, &label, &x, &mut r).unwrap();
    let b = auth(&pp, &sk, &label, &x, &mut r).unwrap();
    assert_ne!(a.commit, b.commit);
    assert_ne!(a.s, b.s);
    assert!(verify_single(&pp, &vk, &label, &a));
    assert!(verify_single(&pp, &vk, &label, &b));
}

#[test]
fn partitioning_does_not_change_the_authenticator() {
    let pp = PublicParams::setup(128, 37, TAG).unwrap();
    let sk = SecretKey::from_scalar(FieldScalar::from_u64(5)).unwrap();
    let label = Label::new(TAG, 0, 3);
    let x = random_vec(37, &mut rng(5));
    let r = FieldScalar::from_u64(77);
    let whole = auth_with_blinding(&pp, &sk, &label, &x, r, 1).unwrap();
    for parts in [2, 4, 37, 100] {
        assert_eq!(auth_with_blinding(&pp, &sk, &label, &x, r, parts).unwrap(), whole);
    }
}

#[test]
fn verify_single_rejects_tampered_lambda_and_foreign_key() {
    let pp = PublicParams::setup(128, 4, TAG).unwrap();
    let mut r = rng(6);
    let (sk, vk) = keygen(&pp, Identity(0), &mut r).unwrap();
    let (_, other_vk) = keygen(&pp, Identity(1), &mut r).unwrap();
    let label = Label::new(TAG, 0, 0);
    let sigma = auth(&pp, &sk, &label, &random_vec(4, &mut r), &mut r).unwrap();
    assert!(verify_single(&pp, &vk, &label, &sigma));
    let mut bad = sigma;
    bad.lambda = (G1Projective::from(bad.lambda) + G1Projective::generator()).to_affine();
    assert!(!verify_single(&pp, &vk, &label, &bad));
    assert!(!verify_single(&pp, &other_vk, &label, &sigma));
    assert!(!verify_single(&pp, &vk, &Label::new(TAG, 1, 0), &sigma));
}

struct Pipeline {
    pp: PublicParams,
    label: Label,
    xs: Vec<Vec<FieldScalar>>,
    rs: Vec<FieldScalar>,
    keys: Vec<FieldScalar>,
    sigmas: BTreeMap<Identity, Authenticator>,
    vks: BTreeMap<Identity, VerificationKey>,
}

fn pipeline(n: usize, d: usize, seed: u64) -> Pipeline {
    let pp = PublicParams::setup(128, d, TAG).unwrap();
    let mut r = rng(seed);
    let label = Label::new(TAG, seed, 1);
    let mut p = Pipeline {
        pp,
        label,
        xs: vec![],
        rs: vec![],
        keys: vec![],
        sigmas: BTreeMap::new(),
        vks: BTreeMap::new(),
    };
    for u in 0..n {
        let a = FieldScalar::random(&mut r);
        let blinding = FieldScalar::random(&mut r);
        let x = random_vec(d, &mut r);
        let sk = SecretKey::from_scalar(a).unwrap();
        let sigma = auth_with_blinding(&p.pp, &sk, &p.label, &x, blinding, 1).unwrap();
        p.sigmas.insert(Identity(u as u32 * 3 + 1), sigma);
        p.vks.insert(Identity(u as u32 * 3 + 1), sk.verification_key());
        p.xs.push(x);
        p.rs.push(blinding);
        p.keys.push(a);
    }
    p
}

#[test]
fn honest_pipeline_matches_exponent_level_recomputation() {
    let p = pipeline(3, 4, 10);
    let agg = eval(p.sigmas.iter().map(|(id, s)| (*id, s))).unwrap();
    let x_sum = elementwise_sum(&p.xs);

    // Oracle: with known exponents, the sum-check base must equal f^{sum r}
    // and S_agg must equal g2^{sum r}, computed by plain scalar arithmetic.
    let r_sum: FieldScalar = p.rs.iter().sum();
    let expected_s = (G2Projective::generator() * Scalar::from(r_sum)).to_affine();
    assert_eq!(agg.s_agg, expected_s);
    let message: G1Projective =
        p.pp.slots()
            .iter()
            .zip(&x_sum)
            .map(|(h, x)| G1Projective::from(h) * Scalar::from(*x))
            .sum();
    let commit_sum: G1Projective = agg.per_identity.values().map(|c| G1Projective::from(c.commit)).sum();
    assert_eq!(
        commit_sum - message,
        G1Projective::from(p.pp.blinding_base()) * Scalar::from(r_sum)
    );
    // Identity components: Λ_u = (H + C_u) * a_u.
    for ((_, c), a) in agg.per_identity.iter().zip(&p.keys) {
        let expected = (p.label.to_g1() + G1Projective::from(c.commit)) * Scalar::from(*a);
        assert_eq!(G1Projective::from(c.lambda), expected);
    }

    assert!(verify(&p.pp, &p.vks, &p.label, &x_sum, &agg).unwrap());
    let mut r = rng(11);
    let strict = verify_detailed(&p.pp, &p.vks, &p.label, &x_sum, &agg, VerificationMode::Strict, &mut r).unwrap();
    assert!(strict.accepted());
}

#[test]
fn perturbed_sum_is_rejected() {
    let p = pipeline(3, 4, 12);
    let agg = eval(p.sigmas.iter().map(|(id, s)| (*id, s))).unwrap();
    let x_sum = elementwise_sum(&p.xs);
    let mut r = rng(13);
    for _ in 0..100 {
        let e = random_vec(4, &mut r);
        let tampered: Vec<FieldScalar> = x_sum.iter().zip(&e).map(|(a, b)| *a + *b).collect();
        let report = verify_detailed(
            &p.pp,
            &p.vks,
            &p.label,
            &tampered,
            &agg,
            VerificationMode::Batched,
            &mut r,
        )
        .unwrap();
        assert!(report.key_set_matches && report.identities_valid);
        assert!(!report.sum_valid);
    }
}

#[test]
fn verify_checks_dimension_and_key_set() {
    let p = pipeline(2, 4, 14);
    let agg = eval(p.sigmas.iter().map(|(id, s)| (*id, s))).unwrap();
    let x_sum = elementwise_sum(&p.xs);
    assert!(matches!(
        verify(&p.pp, &p.vks, &p.label, &x_sum[..3], &agg),
        Err(MklhaError::DimensionMismatch { .. })
    ));
    let mut fewer = p.vks.clone();
    fewer.pop_last();
    assert!(!verify(&p.pp, &fewer, &p.label, &x_sum, &agg).unwrap());
    assert!(!verify(&p.pp, &BTreeMap::new(), &p.label, &x_sum, &agg).unwrap());
}

#[test]
fn strict_mode_names_the_failing_identity() {
    let p = pipeline(3, 4, 15);
    let mut agg = eval(p.sigmas.iter().map(|(id, s)| (*id, s))).unwrap();
    let x_sum = elementwise_sum(&p.xs);
    let victim = *agg.per_identity.keys().nth(1).unwrap();
    let c = agg.per_identity.get_mut(&victim).unwrap();
    c.lambda = (G1Projective::from(c.lambda).double()).to_affine();
    let mut r = rng(16);
    let report = verify_detailed(&p.pp, &p.vks, &p.label, &x_sum, &agg, VerificationMode::Strict, &mut r).unwrap();
    assert_eq!(report.failed_identities, vec![victim]);
    assert!(!report.accepted());
    let batched = verify_detailed(&p.pp, &p.vks, &p.label, &x_sum, &agg, VerificationMode::Batched, &mut r).unwrap();
    assert!(!batched.identities_valid);
}

#[test]
fn eval_singleton_and_order_independence() {
    let p = pipeline(4, 2, 17);
    let (id, sigma) = p.sigmas.iter().next().unwrap();
    let single = eval([(*id, sigma)]).unwrap();
    assert_eq!(single.s_agg, sigma.s);
    assert_eq!(
        single.per_identity,
        BTreeMap::from([(
            *id,
            IdentityComponent {
                lambda: sigma.lambda,
                commit: sigma.commit
            }
        )])
    );

    let forward = eval(p.sigmas.iter().map(|(id, s)| (*id, s))).unwrap();
    let reverse = eval(p.sigmas.iter().rev().map(|(id, s)| (*id, s))).unwrap();
    assert_eq!(forward, reverse);
}

#[test]
fn eval_rejects_empty_and_duplicates() {
    let p = pipeline(1, 2, 18);
    let none: [(Identity, &Authenticator); 0] = [];
    assert_eq!(eval(none).unwrap_err(), MklhaError::EmptyAggregation);
    let (id, sigma) = p.sigmas.iter().next().unwrap();
    assert_eq!(
        eval([(*id, sigma), (*id, sigma)]).unwrap_err(),
        MklhaError::DuplicateIdentity(*id)
    );
}

#[test]
fn eval_composes_over_disjoint_sets() {
    let p = pipeline(5, 2, 19);
    let all: Vec<_> = p.sigmas.iter().map(|(id, s)| (*id, s)).collect();
    let a = eval(all[..2].iter().copied()).unwrap();
    let b = eval(all[2..].iter().copied()).unwrap();
    let ab = eval(all.iter().copied()).unwrap();
    assert_eq!(
        ab.s_agg,
        (G2Projective::from(a.s_agg) + G2Projective::from(b.s_agg)).to_affine()
    );
}

#[test]
fn authenticator_bytes_roundtrip_and_reject_garbage() {
    let p = pipeline(2, 3, 20);
    for sigma in p.sigmas.values() {
        let bytes = sigma.to_bytes();
        assert_eq!(Authenticator::from_bytes(&bytes).unwrap(), *sigma);
        for cut in [0, 1, 47, 191] {
            assert!(Authenticator::from_bytes(&bytes[..cut]).is_err());
        }
        let mut flipped = bytes;
        flipped[10] ^= 0x40;
        // Either off-curve or a different point; never a panic.
        if let Ok(other) = Authenticator::from_bytes(&flipped) {
            assert_ne!(other, *sigma);
        }
    }
    let agg = eval(p.sigmas.iter().map(|(id, s)| (*id, s))).unwrap();
    let bytes = agg.to_bytes();
    assert_eq!(bytes.len(), agg.encoded_len());
    assert_eq!(AggregatedAuthenticator::from_bytes(&bytes).unwrap(), agg);
    assert!(AggregatedAuthenticator::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    assert!(AggregatedAuthenticator::from_bytes(&[]).is_err());
}

#[test]
fn subgroup_check_is_enforced() {
    let p = pipeline(1, 1, 21);
    let mut bytes = p.sigmas.values().next().unwrap().to_bytes();
    bytes[G1_BYTES..2 * G1_BYTES].copy_from_slice(&super::off_subgroup_g1_bytes());
    assert!(Authenticator::from_bytes(&bytes).is_err());
    assert!(Authenticator::from_bytes_with(&bytes, PointValidation::SkipSubgroupCheck).is_ok());
}

#[test]
fn key_files_roundtrip() {
    let mut r = rng(22);
    let pp = PublicParams::setup(128, 1, TAG).unwrap();
    let (sk, vk) = keygen(&pp, Identity(3), &mut r).unwrap();
    let vk_file = verification_key_file_contents(&[vk]);
    assert!(vk_file.starts_with("vfl-vk v1 bls12-381\n"));
    assert_eq!(parse_verification_key_file(&vk_file).unwrap(), vec![vk]);
    let sk_file = secret_key_file_contents(&sk);
    assert_eq!(parse_secret_key_file(&sk_file).unwrap(), sk);
    assert!(parse_verification_key_file("vfl-vk v2 bls12-381\n").is_err());
    assert!(parse_secret_key_file("vfl-sk v1 bls12-381\nzz\n").is_err());
    assert!(VerificationKey::from_bytes(&G2Affine::identity().to_compressed()).is_err());
}
