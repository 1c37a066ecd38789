//! Multi-scalar multiplication over G1.
//!
//! blst's Rust wrapper spawns its own thread pool for large inputs; we call
//! the single-threaded Pippenger entry point directly so that parallelism is
//! controlled by the caller's rayon pool (sub-column partitioning).

use blst::{blst_p1, blst_p1_affine, blst_p1s_mult_pippenger, blst_p1s_mult_pippenger_scratch_sizeof, limb_t};
use blstrs::{G1Affine, G1Projective, Scalar};
use group::Group;
use rayon::prelude::*;

use crate::field::FieldScalar;

const SCALAR_BITS: usize = 255;

// Below this size Pippenger's bucket setup costs more than it saves.
const NAIVE_THRESHOLD: usize = 4;

/// `sum_i bases[i] * scalars[i]`, single-threaded.
pub(crate) fn msm(bases: &[G1Affine], scalars: &[FieldScalar]) -> G1Projective {
    assert_eq!(bases.len(), scalars.len(), "msm length mismatch");
    let n = bases.len();
    if n == 0 {
        return G1Projective::identity();
    }
    if n <= NAIVE_THRESHOLD {
        return bases
            .iter()
            .zip(scalars)
            .map(|(b, s)| G1Projective::from(b) * Scalar::from(*s))
            .sum();
    }

    let mut scalar_bytes = Vec::with_capacity(n * 32);
    for s in scalars {
        scalar_bytes.extend_from_slice(&s.to_bytes_le());
    }

    let mut ret = blst_p1::default();
    // SAFETY: `G1Affine` is `#[repr(transparent)]` over `blst_p1_affine`, so
    // the slice can be viewed as a contiguous `blst_p1_affine` array. The
    // two-element pointer arrays with a null terminator tell blst that points
    // and scalars are contiguous. The scratch buffer is sized by blst itself.
    unsafe {
        let scratch_len = blst_p1s_mult_pippenger_scratch_sizeof(n) / std::mem::size_of::<limb_t>();
        let mut scratch: Vec<limb_t> = vec![0; scratch_len.max(1)];
        let points: [*const blst_p1_affine; 2] = [bases.as_ptr() as *const blst_p1_affine, std::ptr::null()];
        let scalars_ptr: [*const u8; 2] = [scalar_bytes.as_ptr(), std::ptr::null()];
        blst_p1s_mult_pippenger(
            &mut ret,
            points.as_ptr(),
            n,
            scalars_ptr.as_ptr(),
            SCALAR_BITS,
            scratch.as_mut_ptr(),
        );
        // SAFETY: `G1Projective` is `#[repr(transparent)]` over `blst_p1`.
        std::mem::transmute::<blst_p1, G1Projective>(ret)
    }
}

/// MSM split into `parts` contiguous chunks evaluated on the current rayon
/// pool. The result does not depend on `parts`.
pub(crate) fn msm_partitioned(bases: &[G1Affine], scalars: &[FieldScalar], parts: usize) -> G1Projective {
    assert_eq!(bases.len(), scalars.len(), "msm length mismatch");
    let parts = parts.clamp(1, bases.len().max(1));
    if parts == 1 {
        return msm(bases, scalars);
    }
    let chunk = bases.len().div_ceil(parts);
    bases
        .par_chunks(chunk)
        .zip(scalars.par_chunks(chunk))
        .map(|(b, s)| msm(b, s))
        .reduce(G1Projective::identity, |a, b| a + b)
}
