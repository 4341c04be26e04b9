//! Token counting for raw and normalized renderings.
//!
//! Two vocabulary modes are supported. `LoadedBpe` reads a rank file
//! (`<base64 token> <rank>` per line, the format published for tiktoken
//! encodings) and counts tokens with byte-level BPE over the whole string.
//! `SyntheticInteger` models a vocabulary whose integer tokens cover
//! `"0"`..=`"999"`: every other character is its own token, and the value
//! separator `", "` is a single token.

use std::collections::HashMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompting::VALUE_SEPARATOR;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VocabMode {
    LoadedBpe,
    SyntheticInteger,
}

#[derive(Debug, Clone)]
pub struct Vocab {
    entries: HashMap<Vec<u8>, u32>,
    mode: VocabMode,
}

/// Largest integer encoded as one token in synthetic mode.
pub const SYNTHETIC_MAX_INTEGER: u32 = 999;

impl Vocab {
    pub fn synthetic_integer() -> Self {
        Self { entries: HashMap::new(), mode: VocabMode::SyntheticInteger }
    }

    /// BPE vocabulary from explicit `(token bytes, rank)` pairs.
    pub fn from_ranks<I: IntoIterator<Item = (Vec<u8>, u32)>>(ranks: I) -> Result<Self> {
        let mut entries = HashMap::new();
        let mut seen = HashMap::new();
        for (i, (bytes, rank)) in ranks.into_iter().enumerate() {
            if seen.insert(rank, ()).is_some() {
                return Err(Error::DuplicateRank { rank, line: i + 1 });
            }
            if entries.insert(bytes, rank).is_some() {
                return Err(Error::MalformedLine { line: i + 1, reason: "duplicate token".into() });
            }
        }
        Ok(Self { entries, mode: VocabMode::LoadedBpe })
    }

    pub fn mode(&self) -> VocabMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mode == VocabMode::LoadedBpe && self.entries.is_empty()
    }

    pub fn rank(&self, bytes: &[u8]) -> Option<u32> {
        self.entries.get(bytes).copied()
    }
}

pub fn parse_vocab(text: &str) -> Result<Vocab> {
    let mut entries = HashMap::new();
    let mut ranks_seen = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: &str| Error::MalformedLine { line: line_no, reason: reason.into() };
        let mut parts = line.split(' ');
        let (Some(token), Some(rank), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(malformed("expected `<base64 token> <rank>`"));
        };
        let bytes = STANDARD.decode(token).map_err(|e| malformed(&format!("bad base64: {e}")))?;
        if bytes.is_empty() {
            return Err(malformed("empty token"));
        }
        let rank: u32 = rank.parse().map_err(|_| malformed("rank is not a non-negative integer"))?;
        if ranks_seen.insert(rank, line_no).is_some() {
            return Err(Error::DuplicateRank { rank, line: line_no });
        }
        if entries.insert(bytes, rank).is_some() {
            return Err(malformed("duplicate token"));
        }
    }
    Ok(Vocab { entries, mode: VocabMode::LoadedBpe })
}

pub fn load_vocab(path: impl AsRef<Path>) -> Result<Vocab> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_vocab(&text)
}

pub fn encode_count(text: &str, vocab: &Vocab) -> Result<usize> {
    if text.is_empty() {
        return Ok(0);
    }
    match vocab.mode {
        VocabMode::SyntheticInteger => Ok(synthetic_count(text)),
        VocabMode::LoadedBpe => {
            if vocab.entries.is_empty() {
                return Err(Error::EmptyVocab);
            }
            Ok(bpe_pieces(text.as_bytes(), vocab)?.len() - 1)
        }
    }
}

/// Piece boundaries after BPE merging: `bounds[i]..bounds[i + 1]` is a token.
fn bpe_pieces(bytes: &[u8], vocab: &Vocab) -> Result<Vec<usize>> {
    if let Some(&b) = bytes.iter().find(|&&b| vocab.rank(&[b]).is_none()) {
        return Err(Error::UnencodableByte(b));
    }
    let mut bounds: Vec<usize> = (0..=bytes.len()).collect();
    // rank of merging piece i with piece i + 1
    let pair_rank = |bounds: &[usize], i: usize| -> Option<u32> {
        if i + 2 < bounds.len() {
            vocab.rank(&bytes[bounds[i]..bounds[i + 2]])
        } else {
            None
        }
    };
    let mut ranks: Vec<Option<u32>> = (0..bounds.len() - 1).map(|i| pair_rank(&bounds, i)).collect();

    loop {
        // strict `<` keeps the leftmost pair on ties
        let mut best: Option<(usize, u32)> = None;
        for (i, r) in ranks.iter().enumerate() {
            if let Some(r) = *r {
                if best.is_none_or(|(_, b)| r < b) {
                    best = Some((i, r));
                }
            }
        }
        let Some((i, _)) = best else { break };
        bounds.remove(i + 1);
        ranks.remove(i + 1);
        ranks[i] = pair_rank(&bounds, i);
        if i > 0 {
            ranks[i - 1] = pair_rank(&bounds, i - 1);
        }
    }
    Ok(bounds)
}

fn synthetic_count(text: &str) -> usize {
    let bytes = text.as_bytes();
    let mut count = 0;
    let mut i = 0;
    while i < bytes.len() {
        count += 1;
        if text[i..].starts_with(VALUE_SEPARATOR) {
            i += VALUE_SEPARATOR.len();
            continue;
        }
        let digits = bytes[i..].iter().take(3).take_while(|b| b.is_ascii_digit()).count();
        if digits > 0 {
            // "0".."999" without leading zeros are the only integer tokens
            let len = if bytes[i] == b'0' { 1 } else { digits };
            i += len;
            continue;
        }
        let ch = text[i..].chars().next().expect("in bounds");
        i += ch.len_utf8();
    }
    count
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenCountReport {
    pub raw_tokens: usize,
    pub normalized_tokens: usize,
    pub reduction_factor: f64,
}

pub fn count_series_tokens(raw_text: &str, normalized_text: &str, vocab: &Vocab) -> Result<TokenCountReport> {
    if raw_text.is_empty() || normalized_text.is_empty() {
        return Err(Error::EmptyInput);
    }
    let raw_tokens = encode_count(raw_text, vocab)?;
    let normalized_tokens = encode_count(normalized_text, vocab)?;
    let reduction_factor =
        if normalized_tokens > 0 { raw_tokens as f64 / normalized_tokens as f64 } else { f64::INFINITY };
    Ok(TokenCountReport { raw_tokens, normalized_tokens, reduction_factor })
}
