//! Architecture metadata: which checkpoint tensors are vocabulary-indexed
//! and the constants behind parameter accounting.
//!
//! Profiles are plain JSON data files; supporting a new architecture means
//! writing one, not changing code. Four ship built in (mT5-small,
//! mBART-large-cc25, XLM-R-base, XLM-V-base).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ProfileError {
    #[error("profile {0:?} not found (not a built-in, a file, or in the search path)")]
    NotFound(String),
    #[error("malformed profile: {0}")]
    Parse(String),
    #[error("inconsistent profile: {0}")]
    Inconsistent(String),
}

type Result<T> = std::result::Result<T, ProfileError>;

/// One vocabulary-indexed tensor family: a literal name or a pattern with a
/// single trailing wildcard segment (`encoder.embed.*`), plus the axis whose
/// extent is the vocabulary size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabTensorRule {
    pub pattern: String,
    pub vocab_axis: usize,
}

impl VocabTensorRule {
    pub fn matches(&self, name: &str) -> bool {
        pattern_matches(&self.pattern, name)
    }
}

pub fn pattern_matches(pattern: &str, name: &str) -> bool {
    if pattern == name {
        return true;
    }
    if pattern == "*" {
        return true;
    }
    if let Some(prefix) = pattern.strip_suffix(".*") {
        return name.len() > prefix.len() + 1 && name.starts_with(prefix) && name.as_bytes()[prefix.len()] == b'.';
    }
    false
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub name: String,
    /// Hidden width.
    pub d_model: u64,
    /// Original vocabulary size the published parameter count refers to.
    pub vocab_size_ref: u64,
    /// Number of independent vocab × d_model matrices (2 when the input
    /// embedding and output head are untied, 1 when shared).
    pub emb_matrix_count: u64,
    /// Published total parameter count at `vocab_size_ref`.
    pub total_params_ref: u64,
    /// Configuration key rewritten after trimming.
    pub config_vocab_field: String,
    pub vocab_tensors: Vec<VocabTensorRule>,
    /// Tensor names that must be sliced with the identical kept set.
    pub tied_groups: Vec<Vec<String>>,
}

impl ModelProfile {
    /// Parameters outside the vocabulary-indexed matrices, fixed by the
    /// published reference point:
    /// `total_params_ref − vocab_size_ref × d_model × emb_matrix_count`.
    pub fn non_embedding_params(&self) -> u64 {
        self.total_params_ref - self.vocab_size_ref * self.d_model * self.emb_matrix_count
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let profile: ModelProfile =
            serde_json::from_slice(bytes).map_err(|e| ProfileError::Parse(e.to_string()))?;
        profile.check()?;
        Ok(profile)
    }

    fn check(&self) -> Result<()> {
        if self.d_model == 0 || self.vocab_size_ref == 0 || self.emb_matrix_count == 0 {
            return Err(ProfileError::Inconsistent(
                "d_model, vocab_size_ref, and emb_matrix_count must be positive".into(),
            ));
        }
        let embedding = self
            .vocab_size_ref
            .checked_mul(self.d_model)
            .and_then(|n| n.checked_mul(self.emb_matrix_count))
            .ok_or_else(|| ProfileError::Inconsistent("embedding size overflows".into()))?;
        if self.total_params_ref < embedding {
            return Err(ProfileError::Inconsistent(format!(
                "total_params_ref {} is smaller than the embedding matrices alone ({embedding})",
                self.total_params_ref
            )));
        }
        Ok(())
    }

    pub fn builtin_names() -> &'static [&'static str] {
        &["mt5-small", "mbart-large-cc25", "xlm-roberta-base", "xlm-v-base"]
    }

    pub fn builtin(name: &str) -> Option<Self> {
        let text = match name {
            "mt5-small" => include_str!("../profiles/mt5-small.json"),
            "mbart-large-cc25" => include_str!("../profiles/mbart-large-cc25.json"),
            "xlm-roberta-base" => include_str!("../profiles/xlm-roberta-base.json"),
            "xlm-v-base" => include_str!("../profiles/xlm-v-base.json"),
            _ => return None,
        };
        Some(Self::parse(text.as_bytes()).expect("built-in profiles are valid"))
    }

    /// Resolves a profile argument: a built-in name, a path to a profile
    /// file, or `<name>.json` under one of the search directories.
    pub fn resolve(spec: &str, search_dirs: &[PathBuf]) -> Result<Self> {
        let as_path = Path::new(spec);
        if as_path.is_file() {
            let bytes = std::fs::read(as_path)
                .map_err(|e| ProfileError::Parse(format!("cannot read {spec:?}: {e}")))?;
            return Self::parse(&bytes);
        }
        if let Some(profile) = Self::builtin(spec) {
            return Ok(profile);
        }
        for dir in search_dirs {
            let candidate = dir.join(format!("{spec}.json"));
            if candidate.is_file() {
                let bytes = std::fs::read(&candidate)
                    .map_err(|e| ProfileError::Parse(format!("cannot read {candidate:?}: {e}")))?;
                return Self::parse(&bytes);
            }
        }
        Err(ProfileError::NotFound(spec.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_parse_and_check() {
        for name in ModelProfile::builtin_names() {
            let profile = ModelProfile::builtin(name).unwrap();
            assert_eq!(&profile.name, name);
            assert!(profile.non_embedding_params() > 0);
            assert!(!profile.vocab_tensors.is_empty());
        }
        assert!(ModelProfile::builtin("gpt-99").is_none());
    }

    #[test]
    fn reference_constants_match_published_sizes() {
        let mt5 = ModelProfile::builtin("mt5-small").unwrap();
        assert_eq!(mt5.d_model, 512);
        assert_eq!(mt5.emb_matrix_count, 2);
        assert_eq!(mt5.non_embedding_params(), 44_062_080);
        let xlmr = ModelProfile::builtin("xlm-roberta-base").unwrap();
        assert_eq!(xlmr.non_embedding_params(), 86_042_112);
        let xlmv = ModelProfile::builtin("xlm-v-base").unwrap();
        // Same body as XLM-R; only the vocabulary differs.
        assert_eq!(xlmv.non_embedding_params(), xlmr.non_embedding_params());
        let mbart = ModelProfile::builtin("mbart-large-cc25").unwrap();
        assert_eq!(mbart.non_embedding_params(), 354_851_840);
    }

    #[test]
    fn pattern_matching_rules() {
        assert!(pattern_matches("shared.weight", "shared.weight"));
        assert!(!pattern_matches("shared.weight", "shared.weight2"));
        assert!(pattern_matches("encoder.embed.*", "encoder.embed.weight"));
        assert!(pattern_matches("encoder.embed.*", "encoder.embed.a.b"));
        assert!(!pattern_matches("encoder.embed.*", "encoder.embed"));
        assert!(!pattern_matches("encoder.embed.*", "encoder.embedding.weight"));
        assert!(pattern_matches("*", "anything.at.all"));
    }

    #[test]
    fn rejects_inconsistent_totals() {
        let doc = br#"{
            "name": "tiny", "d_model": 8, "vocab_size_ref": 100,
            "emb_matrix_count": 1, "total_params_ref": 10,
            "config_vocab_field": "vocab_size",
            "vocab_tensors": [{ "pattern": "emb", "vocab_axis": 0 }],
            "tied_groups": []
        }"#;
        assert!(matches!(ModelProfile::parse(doc), Err(ProfileError::Inconsistent(_))));
    }

    #[test]
    fn resolve_prefers_files_then_builtins_then_dirs() {
        let dir = tempfile::tempdir().unwrap();
        let custom = dir.path().join("custom.json");
        let doc = serde_json::json!({
            "name": "custom", "d_model": 4, "vocab_size_ref": 10,
            "emb_matrix_count": 1, "total_params_ref": 140,
            "config_vocab_field": "vocab_size",
            "vocab_tensors": [{ "pattern": "emb", "vocab_axis": 0 }],
            "tied_groups": []
        });
        std::fs::write(&custom, serde_json::to_vec(&doc).unwrap()).unwrap();

        let by_path = ModelProfile::resolve(custom.to_str().unwrap(), &[]).unwrap();
        assert_eq!(by_path.name, "custom");
        let by_dir =
            ModelProfile::resolve("custom", &[dir.path().to_path_buf()]).unwrap();
        assert_eq!(by_dir, by_path);
        let builtin = ModelProfile::resolve("mt5-small", &[]).unwrap();
        assert_eq!(builtin.name, "mt5-small");
        assert!(matches!(
            ModelProfile::resolve("no-such-profile", &[]),
            Err(ProfileError::NotFound(_))
        ));
    }
}
