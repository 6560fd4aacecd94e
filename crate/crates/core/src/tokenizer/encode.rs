//! Deterministic encoders for the three model kinds, plus decoding.
//!
//! All encoders are pure functions of `(word, spec)`. [`Encoder`] caches the
//! lookup structures so corpus-scale callers pay the vocabulary setup cost
//! once; the free functions build a throwaway `Encoder` per call.

use std::collections::HashMap;

use super::text::{byte_level_char_to_byte, normalize, pretokenize};
use super::{parse_byte_piece, ModelKind, PreTokenizer, TokenId, TokenizerError, TokenizerSpec};

type Result<T> = std::result::Result<T, TokenizerError>;

/// Reusable encoding context for one spec.
pub struct Encoder<'a> {
    spec: &'a TokenizerSpec,
    piece_ids: HashMap<&'a str, TokenId>,
    /// (left-id, right-id) → (rank, merged-id); first occurrence wins.
    merge_table: HashMap<(TokenId, TokenId), (u32, TokenId)>,
    max_piece_chars: usize,
    /// IDs of `<0x00>`..`<0xFF>`, present only when the full alphabet exists.
    byte_ids: Option<Box<[TokenId; 256]>>,
}

impl<'a> Encoder<'a> {
    pub fn new(spec: &'a TokenizerSpec) -> Self {
        let mut piece_ids = HashMap::with_capacity(spec.pieces.len());
        let mut max_piece_chars = 0;
        for (id, piece) in spec.pieces.iter().enumerate() {
            piece_ids.insert(piece.token.as_str(), id as TokenId);
            max_piece_chars = max_piece_chars.max(piece.token.chars().count());
        }
        let mut merge_table = HashMap::with_capacity(spec.merges.len());
        for (rank, (left, right)) in spec.merges.iter().enumerate() {
            let joined = format!("{left}{right}");
            if let (Some(&l), Some(&r), Some(&m)) = (
                piece_ids.get(left.as_str()),
                piece_ids.get(right.as_str()),
                piece_ids.get(joined.as_str()),
            ) {
                merge_table.entry((l, r)).or_insert((rank as u32, m));
            }
        }
        let byte_ids = if spec.byte_fallback {
            let mut table = Box::new([0 as TokenId; 256]);
            let mut complete = true;
            for byte in 0..=255u8 {
                match piece_ids.get(super::byte_piece_string(byte).as_str()) {
                    Some(&id) => table[byte as usize] = id,
                    None => {
                        complete = false;
                        break;
                    }
                }
            }
            complete.then_some(table)
        } else {
            None
        };
        Self { spec, piece_ids, merge_table, max_piece_chars, byte_ids }
    }

    pub fn spec(&self) -> &TokenizerSpec {
        self.spec
    }

    /// normalize → pretokenize → per-word encode, concatenated in order.
    /// No special tokens are added.
    pub fn encode_text(&self, text: &str) -> Result<Vec<TokenId>> {
        let normalized = normalize(text, self.spec);
        let mut out = Vec::new();
        for word in pretokenize(&normalized, self.spec) {
            out.extend(self.encode_word(&word)?);
        }
        Ok(out)
    }

    pub fn encode_word(&self, word: &str) -> Result<Vec<TokenId>> {
        match self.spec.model_kind {
            ModelKind::Unigram => self.encode_unigram_word(word),
            ModelKind::Bpe => self.encode_bpe_word(word),
            ModelKind::WordPiece => self.encode_wordpiece_word(word),
        }
    }

    /// Viterbi over character positions, maximizing the sum of piece scores.
    ///
    /// The lattice also carries a per-character fallback arc so coverage gaps
    /// are representable. Paths are compared by (fallback characters asc,
    /// score desc), so a fallback arc is taken only where no real coverage
    /// exists, and the comparison never depends on pieces outside the path —
    /// the property that keeps trimmed tokenizers consistent with their
    /// source. Equal-score ties prefer the longest final piece, applied
    /// recursively backwards.
    fn encode_unigram_word(&self, word: &str) -> Result<Vec<TokenId>> {
        if word.is_empty() {
            return Ok(Vec::new());
        }
        let bounds: Vec<usize> = word
            .char_indices()
            .map(|(at, _)| at)
            .chain(std::iter::once(word.len()))
            .collect();
        let chars = bounds.len() - 1;

        #[derive(Clone, Copy)]
        struct Cell {
            fallback_chars: u32,
            score: f64,
            back: usize,
            piece: Option<TokenId>,
        }
        fn better(cand: &Cell, best: &Cell) -> bool {
            if cand.fallback_chars != best.fallback_chars {
                return cand.fallback_chars < best.fallback_chars;
            }
            if cand.score != best.score {
                return cand.score > best.score;
            }
            if cand.back != best.back {
                return cand.back < best.back;
            }
            cand.piece.is_some() && best.piece.is_none()
        }

        let mut cells: Vec<Cell> =
            vec![Cell { fallback_chars: 0, score: 0.0, back: 0, piece: None }; chars + 1];
        for end in 1..=chars {
            // The fallback arc keeps every cell reachable.
            let prev = cells[end - 1];
            let mut best = Cell {
                fallback_chars: prev.fallback_chars + 1,
                score: prev.score,
                back: end - 1,
                piece: None,
            };
            let lo = end.saturating_sub(self.max_piece_chars.max(1));
            for start in lo..end {
                let sub = &word[bounds[start]..bounds[end]];
                if let Some(&id) = self.piece_ids.get(sub) {
                    let prev = cells[start];
                    let cand = Cell {
                        fallback_chars: prev.fallback_chars,
                        score: prev.score + self.spec.pieces[id as usize].score,
                        back: start,
                        piece: Some(id),
                    };
                    if better(&cand, &best) {
                        best = cand;
                    }
                }
            }
            cells[end] = best;
        }

        let mut arcs: Vec<(usize, usize, Option<TokenId>)> = Vec::new();
        let mut at = chars;
        while at > 0 {
            let cell = cells[at];
            arcs.push((cell.back, at, cell.piece));
            at = cell.back;
        }
        arcs.reverse();

        if cells[chars].fallback_chars == 0 {
            return Ok(arcs.iter().map(|&(_, _, piece)| piece.expect("real arc")).collect());
        }
        if let Some(byte_ids) = &self.byte_ids {
            let mut out = Vec::new();
            for (start, end, piece) in arcs {
                match piece {
                    Some(id) => out.push(id),
                    None => {
                        for byte in word[bounds[start]..bounds[end]].bytes() {
                            out.push(byte_ids[byte as usize]);
                        }
                    }
                }
            }
            return Ok(out);
        }
        match self.spec.unk_id {
            Some(unk) => Ok(vec![unk]),
            None => Err(TokenizerError::NoCoverage(word.to_string())),
        }
    }

    /// Greedy merge loop: repeatedly apply the lowest-rank adjacent merge
    /// (leftmost occurrence on ties) until no pair is in the merge table.
    fn encode_bpe_word(&self, word: &str) -> Result<Vec<TokenId>> {
        #[derive(Clone, Copy)]
        struct Sym {
            start: usize,
            end: usize,
            id: Option<TokenId>,
        }
        let mut syms: Vec<Sym> = Vec::new();
        let mut iter = word.char_indices().peekable();
        while let Some((start, _)) = iter.next() {
            let end = iter.peek().map_or(word.len(), |&(next, _)| next);
            syms.push(Sym { start, end, id: self.piece_ids.get(&word[start..end]).copied() });
        }

        loop {
            let mut best: Option<(u32, usize, TokenId)> = None;
            for i in 0..syms.len().saturating_sub(1) {
                if let (Some(l), Some(r)) = (syms[i].id, syms[i + 1].id) {
                    if let Some(&(rank, merged)) = self.merge_table.get(&(l, r)) {
                        // Strictly-lower keeps the leftmost occurrence on ties.
                        if best.is_none_or(|(best_rank, _, _)| rank < best_rank) {
                            best = Some((rank, i, merged));
                        }
                    }
                }
            }
            let Some((_, i, merged)) = best else { break };
            syms[i] = Sym { start: syms[i].start, end: syms[i + 1].end, id: Some(merged) };
            syms.remove(i + 1);
        }

        syms.into_iter()
            .map(|sym| match sym.id {
                Some(id) => Ok(id),
                None => self.spec.unk_id.ok_or_else(|| {
                    TokenizerError::NoCoverage(word[sym.start..sym.end].to_string())
                }),
            })
            .collect()
    }

    /// Greedy longest-match-first from the left; matches after the first
    /// position must carry the continuation prefix. Any position without a
    /// match maps the entire word to unk.
    fn encode_wordpiece_word(&self, word: &str) -> Result<Vec<TokenId>> {
        if word.is_empty() {
            return Ok(Vec::new());
        }
        let bounds: Vec<usize> = word
            .char_indices()
            .map(|(at, _)| at)
            .chain(std::iter::once(word.len()))
            .collect();
        let mut out = Vec::new();
        let mut pos = 0; // index into bounds
        let mut buf = String::new();
        while bounds[pos] < word.len() {
            let mut matched = None;
            for end in (pos + 1..bounds.len()).rev() {
                let sub = &word[bounds[pos]..bounds[end]];
                let candidate: &str = if pos == 0 {
                    sub
                } else {
                    buf.clear();
                    buf.push_str(&self.spec.continuation_prefix);
                    buf.push_str(sub);
                    &buf
                };
                if let Some(&id) = self.piece_ids.get(candidate) {
                    matched = Some((id, end));
                    break;
                }
            }
            match matched {
                Some((id, end)) => {
                    out.push(id);
                    pos = end;
                }
                None => {
                    return match self.spec.unk_id {
                        Some(unk) => Ok(vec![unk]),
                        None => Err(TokenizerError::NoCoverage(word.to_string())),
                    };
                }
            }
        }
        Ok(out)
    }
}

/// Segments one word with the Unigram model. See [`Encoder`].
pub fn encode_unigram(word: &str, spec: &TokenizerSpec) -> Result<Vec<TokenId>> {
    debug_assert_eq!(spec.model_kind, ModelKind::Unigram);
    Encoder::new(spec).encode_word(word)
}

/// Segments one word with the BPE merge loop. See [`Encoder`].
pub fn encode_bpe(word: &str, spec: &TokenizerSpec) -> Result<Vec<TokenId>> {
    debug_assert_eq!(spec.model_kind, ModelKind::Bpe);
    Encoder::new(spec).encode_word(word)
}

/// Segments one word with WordPiece longest-match. See [`Encoder`].
pub fn encode_wordpiece(word: &str, spec: &TokenizerSpec) -> Result<Vec<TokenId>> {
    debug_assert_eq!(spec.model_kind, ModelKind::WordPiece);
    Encoder::new(spec).encode_word(word)
}

/// Full pipeline on a text: normalize, pretokenize, encode each word.
pub fn encode_text(text: &str, spec: &TokenizerSpec) -> Result<Vec<TokenId>> {
    Encoder::new(spec).encode_text(text)
}

/// Concatenates piece strings and inverts the pre-tokenizer mapping.
/// Byte pieces are decoded as raw bytes; invalid UTF-8 sequences become
/// replacement characters.
pub fn decode(ids: &[TokenId], spec: &TokenizerSpec) -> Result<String> {
    let mut bytes: Vec<u8> = Vec::new();
    for &id in ids {
        let piece = spec
            .pieces
            .get(id as usize)
            .ok_or(TokenizerError::IdOutOfRange { id, vocab_size: spec.pieces.len() })?;
        match parse_byte_piece(&piece.token) {
            Some(byte) if spec.byte_fallback => bytes.push(byte),
            _ => bytes.extend_from_slice(piece.token.as_bytes()),
        }
    }
    let text = String::from_utf8_lossy(&bytes).into_owned();
    Ok(match &spec.pre_tokenizer {
        PreTokenizer::Whitespace => text,
        PreTokenizer::Metaspace { replacement, add_prefix_space } => {
            let mut restored: String =
                text.chars().map(|c| if c == *replacement { ' ' } else { c }).collect();
            if *add_prefix_space && restored.starts_with(' ') {
                restored.remove(0);
            }
            restored
        }
        PreTokenizer::ByteLevel => {
            let mut raw = Vec::with_capacity(text.len());
            for ch in text.chars() {
                match byte_level_char_to_byte(ch) {
                    Some(byte) => raw.push(byte),
                    None => raw.extend_from_slice(ch.to_string().as_bytes()),
                }
            }
            String::from_utf8_lossy(&raw).into_owned()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{byte_piece_string, Normalizer, PieceEntry};

    fn unigram(pieces: &[(&str, f64)], unk: Option<TokenId>) -> TokenizerSpec {
        TokenizerSpec {
            model_kind: ModelKind::Unigram,
            pieces: pieces.iter().map(|&(t, s)| PieceEntry::new(t, s)).collect(),
            merges: vec![],
            special_tokens: vec![],
            unk_id: unk,
            byte_fallback: false,
            normalizer: Normalizer::None,
            pre_tokenizer: PreTokenizer::Whitespace,
            continuation_prefix: String::new(),
        }
    }

    fn bpe(pieces: &[&str], merges: &[(&str, &str)], unk: Option<TokenId>) -> TokenizerSpec {
        TokenizerSpec {
            model_kind: ModelKind::Bpe,
            pieces: pieces.iter().enumerate().map(|(i, &t)| PieceEntry::new(t, i as f64)).collect(),
            merges: merges.iter().map(|&(l, r)| (l.to_string(), r.to_string())).collect(),
            special_tokens: vec![],
            unk_id: unk,
            byte_fallback: false,
            normalizer: Normalizer::None,
            pre_tokenizer: PreTokenizer::Whitespace,
            continuation_prefix: String::new(),
        }
    }

    fn wordpiece(pieces: &[&str], unk: Option<TokenId>) -> TokenizerSpec {
        TokenizerSpec {
            model_kind: ModelKind::WordPiece,
            pieces: pieces.iter().enumerate().map(|(i, &t)| PieceEntry::new(t, i as f64)).collect(),
            merges: vec![],
            special_tokens: vec![],
            unk_id: unk,
            byte_fallback: false,
            normalizer: Normalizer::None,
            pre_tokenizer: PreTokenizer::Whitespace,
            continuation_prefix: "##".to_string(),
        }
    }

    fn tokens(spec: &TokenizerSpec, ids: &[TokenId]) -> Vec<String> {
        ids.iter().map(|&id| spec.pieces[id as usize].token.clone()).collect()
    }

    #[test]
    fn unigram_prefers_higher_scoring_segmentation() {
        // Brute force over both segmentations: ["ab"] = -1.5 beats ["a","b"] = -2.0.
        let spec = unigram(&[("a", -1.0), ("b", -1.0), ("ab", -1.5)], None);
        assert_eq!(tokens(&spec, &encode_unigram("ab", &spec).unwrap()), ["ab"]);
        // ["a","b"] = -2.0 beats ["ab"] = -2.5.
        let spec = unigram(&[("a", -1.0), ("b", -1.0), ("ab", -2.5)], None);
        assert_eq!(tokens(&spec, &encode_unigram("ab", &spec).unwrap()), ["a", "b"]);
    }

    #[test]
    fn unigram_single_piece_covers_word() {
        let spec = unigram(&[("a", -1.0)], None);
        assert_eq!(tokens(&spec, &encode_unigram("a", &spec).unwrap()), ["a"]);
    }

    #[test]
    fn unigram_tie_break_prefers_longest_final_piece() {
        // ["ab","c"] and ["a","bc"] both score -2.0; the longer final piece wins.
        let spec = unigram(&[("a", -1.0), ("ab", -1.0), ("c", -1.0), ("bc", -1.0)], None);
        assert_eq!(tokens(&spec, &encode_unigram("abc", &spec).unwrap()), ["a", "bc"]);
    }

    #[test]
    fn unigram_uncovered_word_maps_to_unk() {
        let spec = unigram(&[("<unk>", 0.0), ("a", -1.0)], Some(0));
        assert_eq!(encode_unigram("ax", &spec).unwrap(), vec![0]);
    }

    #[test]
    fn unigram_without_unk_errors_on_gap() {
        let spec = unigram(&[("a", -1.0)], None);
        assert!(matches!(
            encode_unigram("ax", &spec),
            Err(TokenizerError::NoCoverage(_))
        ));
    }

    #[test]
    fn unigram_byte_fallback_fills_gaps() {
        let mut pieces: Vec<(String, f64)> = vec![("a".into(), -1.0)];
        for byte in 0..=255u8 {
            pieces.push((byte_piece_string(byte), -10.0));
        }
        let spec = TokenizerSpec {
            model_kind: ModelKind::Unigram,
            pieces: pieces.iter().map(|(t, s)| PieceEntry::new(t.clone(), *s)).collect(),
            merges: vec![],
            special_tokens: vec![],
            unk_id: None,
            byte_fallback: true,
            normalizer: Normalizer::None,
            pre_tokenizer: PreTokenizer::Whitespace,
            continuation_prefix: String::new(),
        };
        let ids = encode_unigram("aé", &spec).unwrap();
        let toks = tokens(&spec, &ids);
        // é is U+00E9 = 0xC3 0xA9 in UTF-8.
        assert_eq!(toks, ["a", "<0xC3>", "<0xA9>"]);
        // Fallback is used only where real coverage is missing.
        assert_eq!(tokens(&spec, &encode_unigram("aa", &spec).unwrap()), ["a", "a"]);
    }

    #[test]
    fn bpe_applies_lowest_rank_merge_first() {
        // Hand-simulated: [a a b] → merge (a,b) at the only occurrence → [a ab].
        let spec = bpe(&["a", "b", "ab"], &[("a", "b")], None);
        assert_eq!(tokens(&spec, &encode_bpe("aab", &spec).unwrap()), ["a", "ab"]);
        // No applicable merge for "ba".
        assert_eq!(tokens(&spec, &encode_bpe("ba", &spec).unwrap()), ["b", "a"]);
        assert_eq!(tokens(&spec, &encode_bpe("a", &spec).unwrap()), ["a"]);
    }

    #[test]
    fn bpe_tie_merges_leftmost_occurrence() {
        // [a b a b]: rank-0 pair (a,b) occurs twice; leftmost first, then again,
        // then rank-1 merges the two "ab" symbols.
        let spec = bpe(&["a", "b", "ab", "abab"], &[("a", "b"), ("ab", "ab")], None);
        assert_eq!(tokens(&spec, &encode_bpe("abab", &spec).unwrap()), ["abab"]);
    }

    #[test]
    fn bpe_rank_order_controls_merge_sequence() {
        // With (b,c) ranked above (a,b), "abc" becomes [a, bc].
        let spec = bpe(&["a", "b", "c", "bc", "ab"], &[("b", "c"), ("a", "b")], None);
        assert_eq!(tokens(&spec, &encode_bpe("abc", &spec).unwrap()), ["a", "bc"]);
    }

    #[test]
    fn bpe_absent_symbol_substitutes_unk() {
        let spec = bpe(&["<unk>", "a"], &[], Some(0));
        assert_eq!(encode_bpe("ax", &spec).unwrap(), vec![1, 0]);
        let no_unk = bpe(&["a"], &[], None);
        assert!(matches!(encode_bpe("ax", &no_unk), Err(TokenizerError::NoCoverage(_))));
    }

    #[test]
    fn wordpiece_longest_match_with_continuation() {
        let spec = wordpiece(&["ab", "##c"], None);
        assert_eq!(tokens(&spec, &encode_wordpiece("abc", &spec).unwrap()), ["ab", "##c"]);
        let spec = wordpiece(&["a"], None);
        assert_eq!(tokens(&spec, &encode_wordpiece("a", &spec).unwrap()), ["a"]);
    }

    #[test]
    fn wordpiece_failure_maps_whole_word_to_unk() {
        let spec = wordpiece(&["[UNK]", "a", "##b"], Some(0));
        assert_eq!(encode_wordpiece("abc", &spec).unwrap(), vec![0]);
        let no_unk = wordpiece(&["a", "##b"], None);
        assert!(matches!(
            encode_wordpiece("abc", &no_unk),
            Err(TokenizerError::NoCoverage(_))
        ));
    }

    #[test]
    fn wordpiece_prefers_longest_first_match() {
        let spec = wordpiece(&["a", "abc", "ab", "##c", "##bc"], None);
        assert_eq!(tokens(&spec, &encode_wordpiece("abc", &spec).unwrap()), ["abc"]);
    }

    #[test]
    fn encode_text_empty_is_empty() {
        let spec = bpe(&["a", "b"], &[], None);
        assert_eq!(encode_text("", &spec).unwrap(), Vec::<TokenId>::new());
    }

    #[test]
    fn encode_text_concatenates_words() {
        let spec = bpe(&["a", "b"], &[], None);
        assert_eq!(encode_text("a b", &spec).unwrap(), vec![0, 1]);
    }

    #[test]
    fn encode_text_metaspace_unigram() {
        // Per-word Viterbi: "▁ab" → ["▁ab"] (-1.0) beats ["▁a","b"] (-2.3).
        let mut spec = unigram(&[("▁ab", -1.0), ("▁a", -1.1), ("b", -1.2)], None);
        spec.pre_tokenizer = PreTokenizer::Metaspace { replacement: '▁', add_prefix_space: true };
        assert_eq!(encode_text("ab ab", &spec).unwrap(), vec![0, 0]);
    }

    #[test]
    fn decode_empty_and_out_of_range() {
        let spec = bpe(&["a"], &[], None);
        assert_eq!(decode(&[], &spec).unwrap(), "");
        assert!(matches!(
            decode(&[7], &spec),
            Err(TokenizerError::IdOutOfRange { id: 7, .. })
        ));
    }

    #[test]
    fn decode_metaspace_strips_prefix_space() {
        let mut spec = unigram(&[("▁a", -1.0), ("b", -1.0)], None);
        spec.pre_tokenizer = PreTokenizer::Metaspace { replacement: '▁', add_prefix_space: true };
        assert_eq!(decode(&[0, 1], &spec).unwrap(), "ab");
    }

    #[test]
    fn decode_inverts_encode_on_covered_text() {
        let mut spec = unigram(
            &[("▁a", -1.0), ("▁b", -1.0), ("a", -2.0), ("b", -2.0), ("▁", -3.0)],
            None,
        );
        spec.pre_tokenizer = PreTokenizer::Metaspace { replacement: '▁', add_prefix_space: true };
        for text in ["a b", "ab a", " a", "a  b"] {
            let ids = encode_text(text, &spec).unwrap();
            assert_eq!(decode(&ids, &spec).unwrap(), text, "round trip of {text:?}");
        }
    }

    #[test]
    fn decode_byte_level_restores_bytes() {
        let mut spec = bpe(&["a", "Ġ", "b", "Ã", "©", "Ġb"], &[("Ġ", "b")], None);
        spec.pre_tokenizer = PreTokenizer::ByteLevel;
        for text in ["a b", "é", "a bé"] {
            let ids = encode_text(text, &spec).unwrap();
            assert_eq!(decode(&ids, &spec).unwrap(), text, "round trip of {text:?}");
        }
    }

    #[test]
    fn decode_byte_pieces_with_replacement_on_invalid_utf8() {
        let mut pieces: Vec<PieceEntry> = vec![PieceEntry::new("a", -1.0)];
        for byte in 0..=255u8 {
            pieces.push(PieceEntry::new(byte_piece_string(byte), -10.0));
        }
        let spec = TokenizerSpec {
            model_kind: ModelKind::Unigram,
            pieces,
            merges: vec![],
            special_tokens: vec![],
            unk_id: None,
            byte_fallback: true,
            normalizer: Normalizer::None,
            pre_tokenizer: PreTokenizer::Whitespace,
            continuation_prefix: String::new(),
        };
        // 0xC3 alone is an invalid sequence.
        let dangling = 1 + 0xC3 as TokenId;
        assert_eq!(decode(&[0, dangling], &spec).unwrap(), "a\u{FFFD}");
    }
}
