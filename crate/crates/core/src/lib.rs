//! Verifiable secure aggregation for federated learning.
//!
//! Clients encode their updates into the scalar field of BLS12-381, hide them
//! with pairwise masks, and authenticate each plain column with a multi-key
//! linearly homomorphic authenticator. The aggregator sums masked columns and
//! combines authenticators; every client checks the result against the keys
//! on the bulletin board before averaging.

pub mod adversary;
pub mod board;
pub mod codec;
pub mod field;
pub mod maskagg;
pub mod mklha;
pub mod protocol;

pub use codec::{EncodingBounds, FixedMean, FixedPointCodec, Precision};
pub use field::FieldScalar;
pub use mklha::Identity;
