use std::collections::BTreeSet;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use vfl_core::board::{read_chain, BoardEntry, BoardError, BulletinBoard, FileBoard, MemoryBoard, GENESIS_HASH};
use vfl_core::mklha::{keygen, PublicParams, VerificationKey, SECURITY_LEVEL};
use vfl_core::Identity;

fn keys(n: usize) -> Vec<VerificationKey> {
    let mut rng = ChaCha20Rng::seed_from_u64(21);
    let pp = PublicParams::setup(SECURITY_LEVEL, 1, b"board").unwrap();
    (0..n)
        .map(|i| keygen(&pp, Identity(i as u32), &mut rng).unwrap().1)
        .collect()
}

fn entry(id: u32, vk: &VerificationKey) -> BoardEntry {
    BoardEntry {
        id: Identity(id),
        vk: *vk,
        registered_at: 0,
    }
}

fn exercise(board: &dyn BulletinBoard) {
    let vks = keys(3);
    assert!(board.is_empty());
    board.register(entry(1, &vks[0])).unwrap();
    assert_eq!(board.get(Identity(1)), Some(vks[0]));
    assert!(matches!(
        board.register(entry(1, &vks[1])),
        Err(BoardError::Conflict(Identity(1)))
    ));
    assert_eq!(board.get(Identity(1)), Some(vks[0]));

    let before: Vec<BoardEntry> = board.entries();
    board.register(entry(7, &vks[1])).unwrap();
    board.register(entry(3, &vks[2])).unwrap();
    let after = board.entries();
    assert_eq!(after.len(), 3);
    assert_eq!(&after[..before.len()], &before[..]);

    let all: BTreeSet<Identity> = [1, 3, 7].map(Identity).into();
    let snap = board.snapshot(&all).unwrap();
    assert_eq!(
        snap.keys().copied().collect::<Vec<_>>(),
        vec![Identity(1), Identity(3), Identity(7)]
    );
    assert_eq!(snap[&Identity(7)], vks[1]);
    assert!(board.snapshot(&BTreeSet::new()).unwrap().is_empty());
    assert!(matches!(
        board.snapshot(&[1, 2].map(Identity).into()),
        Err(BoardError::MissingKey(Identity(2)))
    ));
}

#[test]
fn memory_board_semantics() {
    exercise(&MemoryBoard::new());
}

#[test]
fn file_board_semantics_and_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("board.csv");
    let board = FileBoard::open(&path).unwrap();
    exercise(&board);
    let head = board.head();
    drop(board);

    let reopened = FileBoard::open(&path).unwrap();
    assert_eq!(reopened.len(), 3);
    assert_eq!(reopened.head(), head);
    assert!(matches!(
        reopened.register(entry(3, &keys(1)[0])),
        Err(BoardError::Conflict(_))
    ));
}

// Independent walk of the file format.
#[test]
fn file_lines_form_a_sha256_chain() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("board.csv");
    let board = FileBoard::open(&path).unwrap();
    let vks = keys(4);
    for (i, vk) in vks.iter().enumerate() {
        board.register(entry(10 + i as u32, vk)).unwrap();
    }
    let text = std::fs::read_to_string(&path).unwrap();
    let mut prev = GENESIS_HASH;
    for (i, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), 4);
        assert_eq!(f[0], (10 + i).to_string());
        assert_eq!(f[1], vks[i].to_hex());
        assert_eq!(f[2], hex::encode(prev));
        let mut h = Sha256::new();
        h.update((10 + i as u32).to_le_bytes());
        h.update(hex::decode(f[1]).unwrap());
        h.update(prev);
        let expected: [u8; 32] = h.finalize().into();
        assert_eq!(f[3], hex::encode(expected));
        prev = expected;
    }
    assert_eq!(board.head(), prev);
}

#[test]
fn tampered_board_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("board.csv");
    let board = FileBoard::open(&path).unwrap();
    let vks = keys(3);
    for (i, vk) in vks.iter().enumerate() {
        board.register(entry(i as u32, vk)).unwrap();
    }
    drop(board);
    let original = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = original.lines().collect();

    // Substitute the key of entry 1 with another valid key.
    let forged = lines[1].replace(&vks[1].to_hex(), &vks[0].to_hex());
    std::fs::write(&path, format!("{}\n{}\n{}\n", lines[0], forged, lines[2])).unwrap();
    assert!(matches!(read_chain(&path), Err(BoardError::Corrupt { line: 2, .. })));

    // Drop the middle entry: the link from entry 2 breaks.
    std::fs::write(&path, format!("{}\n{}\n", lines[0], lines[2])).unwrap();
    assert!(matches!(
        FileBoard::open(&path),
        Err(BoardError::Corrupt { line: 2, .. })
    ));

    std::fs::write(&path, "garbage\n").unwrap();
    assert!(FileBoard::open(&path).is_err());
}

#[test]
fn concurrent_readers_see_prefixes() {
    let board = Arc::new(MemoryBoard::new());
    let vks = keys(32);
    std::thread::scope(|s| {
        let writer = board.clone();
        let vks = &vks;
        s.spawn(move || {
            for (i, vk) in vks.iter().enumerate() {
                writer.register(entry(i as u32, vk)).unwrap();
            }
        });
        for _ in 0..3 {
            let reader = board.clone();
            s.spawn(move || {
                let mut last = 0;
                while last < 32 {
                    let entries = reader.entries();
                    assert!(entries.len() >= last);
                    for (i, e) in entries.iter().enumerate() {
                        assert_eq!(e.id, Identity(i as u32));
                    }
                    last = entries.len();
                }
            });
        }
    });
}
