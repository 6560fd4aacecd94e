//! Normalization and pre-tokenization stages.

use unicode_normalization::UnicodeNormalization;

use super::{Normalizer, PreTokenizer, TokenizerSpec};

/// Applies the spec's normalizer; `None` is the identity.
pub fn normalize(text: &str, spec: &TokenizerSpec) -> String {
    match spec.normalizer {
        Normalizer::None => text.to_string(),
        Normalizer::Nfkc => text.nfkc().collect(),
        Normalizer::Lowercase => text.to_lowercase(),
        Normalizer::NfkcLowercase => text.nfkc().collect::<String>().to_lowercase(),
    }
}

/// Splits normalized text into the word units the per-word encoders consume.
///
/// Whitespace discards the separators; Metaspace and ByteLevel keep enough
/// information that concatenating the words' inverse images recovers the
/// input exactly.
pub fn pretokenize(text: &str, spec: &TokenizerSpec) -> Vec<String> {
    if text.is_empty() {
        return Vec::new();
    }
    match &spec.pre_tokenizer {
        PreTokenizer::Whitespace => text.split_whitespace().map(str::to_string).collect(),
        PreTokenizer::Metaspace { replacement, add_prefix_space } => {
            let mut marked = String::with_capacity(text.len() + 4);
            if *add_prefix_space {
                marked.push(*replacement);
            }
            for ch in text.chars() {
                marked.push(if ch == ' ' { *replacement } else { ch });
            }
            split_before(&marked, |c| c == *replacement)
        }
        PreTokenizer::ByteLevel => {
            let mapped: String = text.bytes().map(byte_level_char).collect();
            let space = byte_level_char(b' ');
            split_before(&mapped, |c| c == space)
        }
    }
}

/// Splits so each word begins at a marker character (or at the text start).
fn split_before(text: &str, is_marker: impl Fn(char) -> bool) -> Vec<String> {
    let mut words = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if is_marker(ch) && !current.is_empty() {
            words.push(std::mem::take(&mut current));
        }
        current.push(ch);
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

/// Maps a raw byte to its printable byte-alphabet character.
///
/// Printable single-byte codepoints map to themselves; the remaining 68
/// bytes map in ascending order to U+0100, U+0101, ... so that every byte
/// has a distinct, visible character (space becomes U+0120).
pub fn byte_level_char(byte: u8) -> char {
    let passthrough = matches!(byte, 0x21..=0x7e | 0xa1..=0xac | 0xae..=0xff);
    if passthrough {
        char::from_u32(byte as u32).expect("single-byte codepoint")
    } else {
        let offset = match byte {
            0x00..=0x20 => byte as u32,
            0x7f..=0xa0 => 33 + (byte - 0x7f) as u32,
            0xad => 67,
            _ => unreachable!("byte classes are exhaustive"),
        };
        char::from_u32(0x100 + offset).expect("valid remapped codepoint")
    }
}

/// Inverse of [`byte_level_char`]; `None` for characters outside the alphabet.
pub fn byte_level_char_to_byte(ch: char) -> Option<u8> {
    let code = ch as u32;
    match code {
        0x21..=0x7e | 0xa1..=0xac | 0xae..=0xff => Some(code as u8),
        0x100..=0x120 => Some((code - 0x100) as u8),
        0x121..=0x142 => Some((code - 0x121) as u8 + 0x7f),
        0x143 => Some(0xad),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{ModelKind, PieceEntry};

    fn spec_with(normalizer: Normalizer, pre_tokenizer: PreTokenizer) -> TokenizerSpec {
        TokenizerSpec {
            model_kind: ModelKind::Unigram,
            pieces: vec![PieceEntry::new("a", -1.0)],
            merges: vec![],
            special_tokens: vec![],
            unk_id: None,
            byte_fallback: false,
            normalizer,
            pre_tokenizer,
            continuation_prefix: String::new(),
        }
    }

    #[test]
    fn normalize_nfkc_folds_fullwidth() {
        let spec = spec_with(Normalizer::Nfkc, PreTokenizer::Whitespace);
        assert_eq!(normalize("Ｆｕｌｌ", &spec), "Full");
    }

    #[test]
    fn normalize_lowercase() {
        let spec = spec_with(Normalizer::Lowercase, PreTokenizer::Whitespace);
        assert_eq!(normalize("AbC", &spec), "abc");
    }

    #[test]
    fn normalize_none_is_identity() {
        let spec = spec_with(Normalizer::None, PreTokenizer::Whitespace);
        assert_eq!(normalize("abc", &spec), "abc");
    }

    #[test]
    fn normalize_nfkc_lowercase_composes() {
        let spec = spec_with(Normalizer::NfkcLowercase, PreTokenizer::Whitespace);
        assert_eq!(normalize("ＦＵＬＬ", &spec), "full");
    }

    #[test]
    fn whitespace_splits_and_discards() {
        let spec = spec_with(Normalizer::None, PreTokenizer::Whitespace);
        assert_eq!(pretokenize("a b", &spec), vec!["a", "b"]);
        assert_eq!(pretokenize("  a \t b \n", &spec), vec!["a", "b"]);
    }

    #[test]
    fn metaspace_marks_word_starts() {
        let spec = spec_with(
            Normalizer::None,
            PreTokenizer::Metaspace { replacement: '▁', add_prefix_space: true },
        );
        assert_eq!(pretokenize("a b", &spec), vec!["▁a", "▁b"]);
        // A leading space keeps its own marker so decoding stays exact.
        assert_eq!(pretokenize(" a", &spec), vec!["▁", "▁a"]);
    }

    #[test]
    fn metaspace_without_prefix() {
        let spec = spec_with(
            Normalizer::None,
            PreTokenizer::Metaspace { replacement: '▁', add_prefix_space: false },
        );
        assert_eq!(pretokenize("a b", &spec), vec!["a", "▁b"]);
    }

    #[test]
    fn empty_input_yields_no_words() {
        for pre in [
            PreTokenizer::Whitespace,
            PreTokenizer::Metaspace { replacement: '▁', add_prefix_space: true },
            PreTokenizer::ByteLevel,
        ] {
            let spec = spec_with(Normalizer::None, pre);
            assert_eq!(pretokenize("", &spec), Vec::<String>::new());
        }
    }

    #[test]
    fn byte_level_keeps_space_with_following_word() {
        let spec = spec_with(Normalizer::None, PreTokenizer::ByteLevel);
        assert_eq!(pretokenize("a b", &spec), vec!["a", "Ġb"]);
        assert_eq!(pretokenize("a  b", &spec), vec!["a", "Ġ", "Ġb"]);
    }

    #[test]
    fn byte_level_maps_multibyte_utf8() {
        let spec = spec_with(Normalizer::None, PreTokenizer::ByteLevel);
        let words = pretokenize("é", &spec);
        // 0xC3 0xA9 both pass through as single-byte codepoints.
        assert_eq!(words, vec!["Ã©"]);
    }

    #[test]
    fn byte_alphabet_is_a_bijection() {
        let mut seen = std::collections::HashSet::new();
        for byte in 0..=255u8 {
            let ch = byte_level_char(byte);
            assert!(seen.insert(ch), "duplicate alphabet char {ch:?}");
            assert_eq!(byte_level_char_to_byte(ch), Some(byte));
        }
        assert_eq!(byte_level_char(b' '), '\u{120}');
        assert_eq!(byte_level_char_to_byte('\u{2581}'), None);
    }
}
