//! Bulletin board: an append-only registry of identity to verification key.
//!
//! Verifiers read keys only through [`BulletinBoard::snapshot`], never from
//! aggregator messages.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::mklha::{Identity, VerificationKey, G2_BYTES};

pub const HASH_BYTES: usize = 32;
pub const GENESIS_HASH: [u8; HASH_BYTES] = [0u8; HASH_BYTES];

#[derive(Debug, Error)]
pub enum BoardError {
    #[error("identity {0} is already registered")]
    Conflict(Identity),
    #[error("no verification key registered for identity {0}")]
    MissingKey(Identity),
    #[error("board file line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error("board io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoardEntry {
    pub id: Identity,
    pub vk: VerificationKey,
    pub registered_at: u64,
}

pub trait BulletinBoard: Send + Sync {
    fn register(&self, entry: BoardEntry) -> Result<(), BoardError>;

    fn get(&self, id: Identity) -> Option<VerificationKey>;

    /// Keys for exactly `ids`, ordered by identity. Atomic with respect to
    /// concurrent registrations.
    fn snapshot(&self, ids: &BTreeSet<Identity>) -> Result<BTreeMap<Identity, VerificationKey>, BoardError>;

    /// All entries in registration order.
    fn entries(&self) -> Vec<BoardEntry>;

    fn len(&self) -> usize {
        self.entries().len()
    }

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Default)]
struct Registry {
    order: Vec<BoardEntry>,
    index: HashMap<Identity, usize>,
}

impl Registry {
    fn check_free(&self, id: Identity) -> Result<(), BoardError> {
        if self.index.contains_key(&id) {
            return Err(BoardError::Conflict(id));
        }
        Ok(())
    }

    fn push(&mut self, entry: BoardEntry) {
        self.index.insert(entry.id, self.order.len());
        self.order.push(entry);
    }

    fn get(&self, id: Identity) -> Option<VerificationKey> {
        self.index.get(&id).map(|&i| self.order[i].vk)
    }

    fn snapshot(&self, ids: &BTreeSet<Identity>) -> Result<BTreeMap<Identity, VerificationKey>, BoardError> {
        ids.iter()
            .map(|&id| self.get(id).map(|vk| (id, vk)).ok_or(BoardError::MissingKey(id)))
            .collect()
    }
}

/// In-memory board for tests and single-process simulation.
#[derive(Default)]
pub struct MemoryBoard {
    inner: RwLock<Registry>,
}

impl MemoryBoard {
    pub fn new() -> Self {
        Self::default()
    }
}

impl BulletinBoard for MemoryBoard {
    fn register(&self, entry: BoardEntry) -> Result<(), BoardError> {
        let mut reg = self.inner.write().expect("board lock poisoned");
        reg.check_free(entry.id)?;
        reg.push(entry);
        Ok(())
    }

    fn get(&self, id: Identity) -> Option<VerificationKey> {
        self.inner.read().expect("board lock poisoned").get(id)
    }

    fn snapshot(&self, ids: &BTreeSet<Identity>) -> Result<BTreeMap<Identity, VerificationKey>, BoardError> {
        self.inner.read().expect("board lock poisoned").snapshot(ids)
    }

    fn entries(&self) -> Vec<BoardEntry> {
        self.inner.read().expect("board lock poisoned").order.clone()
    }
}

/// `SHA-256(id:u32le || vk || prev_hash)`.
pub fn entry_hash(id: Identity, vk: &VerificationKey, prev: &[u8; HASH_BYTES]) -> [u8; HASH_BYTES] {
    let mut h = Sha256::new();
    h.update(id.0.to_le_bytes());
    h.update(vk.to_bytes());
    h.update(prev);
    h.finalize().into()
}

/// Append-only file board. One line per entry:
/// `id,hex(vk),hex(prev_hash),hex(entry_hash)`.
///
/// The registration round is not persisted; entries read back from disk
/// report `registered_at = 0`.
pub struct FileBoard {
    path: PathBuf,
    inner: RwLock<FileState>,
}

struct FileState {
    registry: Registry,
    head: [u8; HASH_BYTES],
}

impl FileBoard {
    /// Opens an existing board, validating the whole chain, or creates an
    /// empty one.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, BoardError> {
        let path = path.as_ref().to_path_buf();
        let mut registry = Registry::default();
        let mut head = GENESIS_HASH;
        if path.exists() {
            for (id, vk, hash) in read_chain(&path)? {
                registry.push(BoardEntry {
                    id,
                    vk,
                    registered_at: 0,
                });
                head = hash;
            }
        } else {
            File::create(&path)?;
        }
        Ok(FileBoard {
            path,
            inner: RwLock::new(FileState { registry, head }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Hash of the most recent entry, or all zeros for an empty board.
    pub fn head(&self) -> [u8; HASH_BYTES] {
        self.inner.read().expect("board lock poisoned").head
    }
}

impl BulletinBoard for FileBoard {
    fn register(&self, entry: BoardEntry) -> Result<(), BoardError> {
        let mut state = self.inner.write().expect("board lock poisoned");
        state.registry.check_free(entry.id)?;
        let prev = state.head;
        let hash = entry_hash(entry.id, &entry.vk, &prev);
        let line = format!(
            "{},{},{},{}\n",
            entry.id,
            entry.vk.to_hex(),
            hex::encode(prev),
            hex::encode(hash)
        );
        let mut file = OpenOptions::new().append(true).open(&self.path)?;
        file.write_all(line.as_bytes())?;
        file.sync_data()?;
        state.head = hash;
        state.registry.push(entry);
        Ok(())
    }

    fn get(&self, id: Identity) -> Option<VerificationKey> {
        self.inner.read().expect("board lock poisoned").registry.get(id)
    }

    fn snapshot(&self, ids: &BTreeSet<Identity>) -> Result<BTreeMap<Identity, VerificationKey>, BoardError> {
        self.inner.read().expect("board lock poisoned").registry.snapshot(ids)
    }

    fn entries(&self) -> Vec<BoardEntry> {
        self.inner.read().expect("board lock poisoned").registry.order.clone()
    }
}

fn decode_hash(field: &str, line: usize, what: &str) -> Result<[u8; HASH_BYTES], BoardError> {
    hex::decode(field)
        .ok()
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| BoardError::Corrupt {
            line,
            reason: format!("bad {what}"),
        })
}

/// Walks the chain from genesis, checking links, hashes and uniqueness.
/// Returns `(id, vk, entry_hash)` per line.
pub fn read_chain(path: &Path) -> Result<Vec<(Identity, VerificationKey, [u8; HASH_BYTES])>, BoardError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    let mut prev = GENESIS_HASH;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let corrupt = |reason: &str| BoardError::Corrupt {
            line: n,
            reason: reason.to_string(),
        };
        let fields: Vec<&str> = line.trim().split(',').collect();
        let [id, vk, prev_hex, hash_hex] = fields[..] else {
            return Err(corrupt("expected 4 comma-separated fields"));
        };
        let id = Identity(id.parse().map_err(|_| corrupt("bad identity"))?);
        if vk.len() != 2 * G2_BYTES {
            return Err(corrupt("bad verification key length"));
        }
        let vk = VerificationKey::from_hex(vk).map_err(|e| corrupt(&e.to_string()))?;
        let claimed_prev = decode_hash(prev_hex, n, "prev_hash")?;
        let claimed = decode_hash(hash_hex, n, "entry_hash")?;
        if claimed_prev != prev {
            return Err(corrupt("prev_hash does not link to the previous entry"));
        }
        if entry_hash(id, &vk, &prev) != claimed {
            return Err(corrupt("entry_hash mismatch"));
        }
        if !seen.insert(id) {
            return Err(corrupt("duplicate identity"));
        }
        prev = claimed;
        out.push((id, vk, claimed));
    }
    Ok(out)
}
