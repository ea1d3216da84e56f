//! Pre-tokenized corpus: `MTOK`, u32 LE vocab size, then u32 LE token ids.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MTOK";
const HEADER: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub vocab_size: u32,
    pub tokens: Vec<u32>,
}

impl Corpus {
    pub fn new(vocab_size: u32, tokens: Vec<u32>) -> Result<Self> {
        if let Some(i) = tokens.iter().position(|&t| t >= vocab_size) {
            return Err(Error::index(
                "corpus",
                format!("token {} at {i} outside vocab {vocab_size}", tokens[i]),
            ));
        }
        Ok(Corpus { vocab_size, tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER + 4 * self.tokens.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.vocab_size.to_le_bytes());
        for t in &self.tokens {
            out.extend_from_slice(&t.to_le_bytes());
        }
        out
    }

    /// A zero-length input is the empty corpus.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.is_empty() {
            return Ok(Corpus::default());
        }
        if bytes.len() < HEADER {
            return Err(Error::Parse {
                offset: bytes.len() as u64,
                detail: "truncated header".into(),
            });
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Parse {
                offset: 0,
                detail: "missing MTOK magic".into(),
            });
        }
        let vocab_size = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        let body = &bytes[HEADER..];
        if body.len() % 4 != 0 {
            return Err(Error::Parse {
                offset: (bytes.len() - body.len() % 4) as u64,
                detail: "trailing partial token id".into(),
            });
        }
        let mut tokens = Vec::with_capacity(body.len() / 4);
        for (i, c) in body.chunks_exact(4).enumerate() {
            let t = u32::from_le_bytes(c.try_into().expect("4 bytes"));
            if t >= vocab_size {
                return Err(Error::Parse {
                    offset: (HEADER + 4 * i) as u64,
                    detail: format!("token {t} outside vocab {vocab_size}"),
                });
            }
            tokens.push(t);
        }
        Ok(Corpus { vocab_size, tokens })
    }
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Corpus::from_bytes(&bytes)
}

pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    fs::write(path, corpus.to_bytes()).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Markov-chain text: each token is followed by a fixed successor with
/// probability `p_follow`, otherwise by a uniform draw.
pub fn synthetic_corpus(vocab_size: u32, len: usize, p_follow: f64, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut successor: Vec<u32> = (0..vocab_size).collect();
    for i in (1..successor.len()).rev() {
        successor.swap(i, rng.gen_range(0..=i));
    }
    let mut tokens = Vec::with_capacity(len);
    let mut cur = rng.gen_range(0..vocab_size.max(1));
    for _ in 0..len {
        tokens.push(cur);
        cur = if rng.gen_bool(p_follow) {
            successor[cur as usize]
        } else {
            rng.gen_range(0..vocab_size)
        };
    }
    Corpus { vocab_size, tokens }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_file_is_empty_stream() {
        assert!(Corpus::from_bytes(&[]).unwrap().is_empty());
        let header_only = Corpus::new(9, vec![]).unwrap().to_bytes();
        assert!(Corpus::from_bytes(&header_only).unwrap().is_empty());
    }

    #[test]
    fn reads_ids_in_order() {
        let mut bytes = b"MTOK".to_vec();
        bytes.extend(10u32.to_le_bytes());
        bytes.extend(5u32.to_le_bytes());
        bytes.extend(7u32.to_le_bytes());
        assert_eq!(Corpus::from_bytes(&bytes).unwrap().tokens, vec![5, 7]);
    }

    #[test]
    fn malformed_input_reports_byte_offset() {
        let offset = |b: &[u8]| match Corpus::from_bytes(b) {
            Err(Error::Parse { offset, .. }) => offset,
            other => panic!("{other:?}"),
        };
        assert_eq!(offset(b"MTO"), 3);
        assert_eq!(offset(b"XTOK\x04\0\0\0"), 0);
        let good = Corpus::new(4, vec![1, 2, 3]).unwrap().to_bytes();
        assert_eq!(offset(&good[..good.len() - 1]), 16);
        let mut bad = good.clone();
        bad[12..16].copy_from_slice(&4u32.to_le_bytes());
        assert_eq!(offset(&bad), 12);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.mtok");
        let c = synthetic_corpus(64, 1000, 0.9, 3);
        write_corpus(&path, &c).unwrap();
        assert_eq!(load_corpus(&path).unwrap(), c);
        assert!(matches!(
            load_corpus(&dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
    }

    proptest! {
        #[test]
        fn bytes_round_trip(vocab in 1u32..5000, ids in proptest::collection::vec(any::<u32>(), 0..300)) {
            let c = Corpus::new(vocab, ids.iter().map(|i| i % vocab).collect()).unwrap();
            prop_assert_eq!(Corpus::from_bytes(&c.to_bytes()).unwrap(), c);
        }
    }
}
