//! Byte encodings of the round messages. All integers little-endian.
//!
//! ```text
//! ClientUpdate    = "VFLU" || config_hash[32] || owner:u32 || round:u64
//!                   || d:u32 || m:u32 || d*m scalars (column-major) || m authenticators
//! AggregateResult = "VFLA" || round:u64 || d:u32 || m:u32 || n:u32 || n ids:u32
//!                   || d*m scalars || m * (len:u32 || aggregated authenticator)
//! ```

use thiserror::Error;

use super::{AggregateResult, ClientUpdate, MaskedMatrix, Matrix};
use crate::field::{FieldScalar, FIELD_BYTES};
use crate::mklha::{AggregatedAuthenticator, Authenticator, Identity, AUTHENTICATOR_BYTES};

const UPDATE_MAGIC: &[u8; 4] = b"VFLU";
const RESULT_MAGIC: &[u8; 4] = b"VFLA";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("truncated message")]
    Truncated,
    #[error("trailing bytes after message")]
    Trailing,
    #[error("bad magic")]
    Magic,
    #[error("non-canonical field element")]
    Scalar,
    #[error("bad group element: {0}")]
    Point(String),
    #[error("declared size too large")]
    Size,
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() < n {
            return Err(WireError::Truncated);
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn scalars(&mut self, rows: usize, cols: usize) -> Result<Matrix<FieldScalar>, WireError> {
        let n = rows.checked_mul(cols).ok_or(WireError::Size)?;
        let bytes = self.take(n.checked_mul(FIELD_BYTES).ok_or(WireError::Size)?)?;
        let data = bytes
            .chunks_exact(FIELD_BYTES)
            .map(|c| FieldScalar::from_bytes_le(c.try_into().unwrap()).ok_or(WireError::Scalar))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Matrix { rows, cols, data })
    }

    fn finish(self) -> Result<(), WireError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(WireError::Trailing)
        }
    }
}

fn put_scalars(out: &mut Vec<u8>, m: &Matrix<FieldScalar>) {
    for v in m.as_column_major() {
        out.extend_from_slice(&v.to_bytes_le());
    }
}

impl ClientUpdate {
    pub fn encoded_len(&self) -> usize {
        4 + 32
            + 4
            + 8
            + 4
            + 4
            + self.masked.entries.as_column_major().len() * FIELD_BYTES
            + self.authenticators.len() * AUTHENTICATOR_BYTES
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(UPDATE_MAGIC);
        out.extend_from_slice(&self.config_hash);
        out.extend_from_slice(&self.owner.0.to_le_bytes());
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&(self.masked.entries.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(self.masked.entries.cols() as u32).to_le_bytes());
        put_scalars(&mut out, &self.masked.entries);
        for a in &self.authenticators {
            out.extend_from_slice(&a.to_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader { buf: bytes };
        if r.take(4)? != UPDATE_MAGIC {
            return Err(WireError::Magic);
        }
        let config_hash: [u8; 32] = r.take(32)?.try_into().unwrap();
        let owner = Identity(r.u32()?);
        let round = r.u64()?;
        let d = r.u32()? as usize;
        let m = r.u32()? as usize;
        let entries = r.scalars(d, m)?;
        let authenticators = (0..m)
            .map(|_| {
                Authenticator::from_bytes(r.take(AUTHENTICATOR_BYTES)?).map_err(|e| WireError::Point(e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        r.finish()?;
        Ok(ClientUpdate {
            masked: MaskedMatrix { entries, round, owner },
            authenticators,
            owner,
            round,
            config_hash,
        })
    }
}

impl AggregateResult {
    pub fn encoded_len(&self) -> usize {
        4 + 8
            + 4
            + 4
            + 4
            + 4 * self.active.len()
            + self.x_agg.as_column_major().len() * FIELD_BYTES
            + self.sigma_agg.iter().map(|s| 4 + s.encoded_len()).sum::<usize>()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(RESULT_MAGIC);
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&(self.x_agg.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(self.x_agg.cols() as u32).to_le_bytes());
        out.extend_from_slice(&(self.active.len() as u32).to_le_bytes());
        for id in &self.active {
            out.extend_from_slice(&id.0.to_le_bytes());
        }
        put_scalars(&mut out, &self.x_agg);
        for s in &self.sigma_agg {
            let bytes = s.to_bytes();
            out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
            out.extend_from_slice(&bytes);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader { buf: bytes };
        if r.take(4)? != RESULT_MAGIC {
            return Err(WireError::Magic);
        }
        let round = r.u64()?;
        let d = r.u32()? as usize;
        let m = r.u32()? as usize;
        let n = r.u32()? as usize;
        if n.checked_mul(4).is_none_or(|b| b > r.buf.len()) {
            return Err(WireError::Truncated);
        }
        let active = (0..n).map(|_| r.u32().map(Identity)).collect::<Result<Vec<_>, _>>()?;
        let x_agg = r.scalars(d, m)?;
        let sigma_agg = (0..m)
            .map(|_| {
                let len = r.u32()? as usize;
                AggregatedAuthenticator::from_bytes(r.take(len)?).map_err(|e| WireError::Point(e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        r.finish()?;
        Ok(AggregateResult {
            x_agg,
            sigma_agg,
            round,
            active,
        })
    }
}
