//! Subword tokenizer definitions and the deterministic encoders built on them.
//!
//! A [`TokenizerSpec`] is a complete, self-contained description of a subword
//! tokenizer: the piece inventory (a token's ID is its index in that list),
//! BPE merges, pinned special tokens, and the normalization / pre-tokenization
//! settings. Specs are immutable after construction and every operation on
//! them is a pure function, so they can be shared freely across threads.

mod encode;
mod json;
mod text;

pub use encode::{decode, encode_bpe, encode_text, encode_unigram, encode_wordpiece, Encoder};
pub use json::{parse_tokenizer, serialize_tokenizer};
pub use text::{byte_level_char, byte_level_char_to_byte, normalize, pretokenize};

use std::collections::HashSet;

use sha2::{Digest, Sha256};

/// A token's ID: its index in the piece list.
pub type TokenId = u32;

/// Errors produced while parsing, validating, or executing a tokenizer.
#[derive(Debug, thiserror::Error)]
pub enum TokenizerError {
    /// The document does not follow the declared schema subset.
    #[error("schema error: {0}")]
    Schema(String),
    /// The document parses but violates a structural invariant.
    #[error("invariant violation: {0}")]
    Invariant(String),
    /// A word cannot be segmented and the spec offers no unk or byte fallback.
    #[error("no coverage for word {0:?} and the tokenizer has no unk or byte fallback")]
    NoCoverage(String),
    /// A token ID at or beyond the vocabulary size.
    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    IdOutOfRange { id: TokenId, vocab_size: usize },
}

/// Tokenization algorithm family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Unigram,
    Bpe,
    WordPiece,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Unigram => "Unigram",
            ModelKind::Bpe => "BPE",
            ModelKind::WordPiece => "WordPiece",
        }
    }
}

/// One vocabulary entry. For Unigram the score is the piece log-probability;
/// for BPE and WordPiece the rank is stored as the score and never consulted
/// during encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct PieceEntry {
    pub token: String,
    pub score: f64,
}

impl PieceEntry {
    pub fn new(token: impl Into<String>, score: f64) -> Self {
        Self { token: token.into(), score }
    }
}

/// Text normalization stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalizer {
    None,
    Nfkc,
    Lowercase,
    NfkcLowercase,
}

/// Pre-tokenization stage: how normalized text is split into words before
/// the per-word encoder runs.
#[derive(Debug, Clone, PartialEq)]
pub enum PreTokenizer {
    /// Split on Unicode whitespace runs; separators are discarded.
    Whitespace,
    /// Replace spaces with a marker character and split before each marker.
    Metaspace { replacement: char, add_prefix_space: bool },
    /// Map UTF-8 bytes to the printable byte alphabet and split at space bytes.
    ByteLevel,
}

/// A special token pinned to a fixed ID (padding, unknown, language codes...).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecialToken {
    pub content: String,
    pub id: TokenId,
}

/// Full description of a subword tokenizer.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizerSpec {
    pub model_kind: ModelKind,
    /// A token's ID is its index in this list.
    pub pieces: Vec<PieceEntry>,
    /// BPE only; position = merge rank (lower = higher priority).
    pub merges: Vec<(String, String)>,
    pub special_tokens: Vec<SpecialToken>,
    pub unk_id: Option<TokenId>,
    /// Unigram only: the 256 byte pieces `<0x00>`..`<0xFF>` guarantee coverage.
    pub byte_fallback: bool,
    pub normalizer: Normalizer,
    pub pre_tokenizer: PreTokenizer,
    /// WordPiece only: marker carried by pieces matched after a word's start.
    pub continuation_prefix: String,
}

/// Renders the piece string for a raw byte, e.g. `<0x2A>`.
pub fn byte_piece_string(byte: u8) -> String {
    format!("<0x{byte:02X}>")
}

/// Parses a byte-piece string such as `<0x2A>` back to its byte value.
pub fn parse_byte_piece(token: &str) -> Option<u8> {
    let hex = token.strip_prefix("<0x")?.strip_suffix('>')?;
    if hex.len() != 2 || !hex.bytes().all(|b| b.is_ascii_digit() || b.is_ascii_uppercase()) {
        return None;
    }
    u8::from_str_radix(hex, 16).ok()
}

impl TokenizerSpec {
    pub fn vocab_size(&self) -> usize {
        self.pieces.len()
    }

    /// Checks every structural invariant, returning the first violation.
    pub fn validate(&self) -> Result<(), TokenizerError> {
        let mut seen: HashSet<&str> = HashSet::with_capacity(self.pieces.len());
        for (idx, piece) in self.pieces.iter().enumerate() {
            if piece.token.is_empty() {
                return Err(TokenizerError::Invariant(format!("piece {idx} is empty")));
            }
            if !seen.insert(piece.token.as_str()) {
                return Err(TokenizerError::Invariant(format!(
                    "duplicate piece {:?}",
                    piece.token
                )));
            }
            if !piece.score.is_finite() {
                return Err(TokenizerError::Invariant(format!(
                    "piece {:?} has non-finite score",
                    piece.token
                )));
            }
        }
        for (rank, (left, right)) in self.merges.iter().enumerate() {
            if left.contains(' ') || right.contains(' ') {
                return Err(TokenizerError::Invariant(format!(
                    "merge {rank} contains a space in one of its parts"
                )));
            }
            let joined = format!("{left}{right}");
            for part in [left.as_str(), right.as_str(), joined.as_str()] {
                if !seen.contains(part) {
                    return Err(TokenizerError::Invariant(format!(
                        "merge {rank} ({left:?}, {right:?}) references absent piece {part:?}"
                    )));
                }
            }
        }
        for special in &self.special_tokens {
            match self.pieces.get(special.id as usize) {
                Some(piece) if piece.token == special.content => {}
                _ => {
                    return Err(TokenizerError::Invariant(format!(
                        "special token {:?} not present at its pinned id {}",
                        special.content, special.id
                    )));
                }
            }
        }
        if let Some(unk) = self.unk_id {
            if unk as usize >= self.pieces.len() {
                return Err(TokenizerError::Invariant(format!(
                    "unk_id {unk} out of range for {} pieces",
                    self.pieces.len()
                )));
            }
        }
        if self.byte_fallback {
            if self.model_kind != ModelKind::Unigram {
                return Err(TokenizerError::Invariant(
                    "byte_fallback is only supported for Unigram".into(),
                ));
            }
            for byte in 0..=255u8 {
                let token = byte_piece_string(byte);
                if !seen.contains(token.as_str()) {
                    return Err(TokenizerError::Invariant(format!(
                        "byte_fallback set but byte piece {token} is missing"
                    )));
                }
            }
        }
        Ok(())
    }

    /// IDs of the tokens that must survive any trim: special tokens, the
    /// unknown token, and the byte-fallback alphabet when enabled.
    pub fn mandatory_ids(&self) -> Vec<TokenId> {
        let mut out: HashSet<TokenId> = self.special_tokens.iter().map(|s| s.id).collect();
        if let Some(unk) = self.unk_id {
            out.insert(unk);
        }
        if self.byte_fallback {
            for (idx, piece) in self.pieces.iter().enumerate() {
                if parse_byte_piece(&piece.token).is_some() {
                    out.insert(idx as TokenId);
                }
            }
        }
        let mut ids: Vec<TokenId> = out.into_iter().collect();
        ids.sort_unstable();
        ids
    }

    /// 64-bit fingerprint of the canonical serialization, used to tie
    /// frequency tables and trim plans to the tokenizer they were built from.
    pub fn fingerprint(&self) -> u64 {
        let bytes = serialize_tokenizer(self);
        let digest = Sha256::digest(&bytes);
        u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
    }
}
