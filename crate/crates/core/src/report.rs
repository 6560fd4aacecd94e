//! Parameter accounting and trim reporting.
//!
//! The parameter model is affine in the vocabulary: a profile's
//! non-embedding parameter count is fixed once from its published reference
//! point, and every trimmed size is `non_emb + vocab × d_model × m`. Reports
//! are emitted both human-readable and as a structured document so anything
//! downstream can diff values instead of prose.

use serde_json::{json, Map, Value};

use crate::plan::TrimPlan;
use crate::profile::ModelProfile;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("profile mismatch: {0}")]
    ProfileMismatch(String),
}

/// Total parameters at a given vocabulary size.
pub fn param_count(profile: &ModelProfile, vocab: u64) -> u64 {
    profile.non_embedding_params() + vocab * profile.d_model * profile.emb_matrix_count
}

/// Fraction of the parameters occupied by vocabulary-indexed matrices.
pub fn embedding_share(profile: &ModelProfile, vocab: u64) -> f64 {
    let embedding = (vocab * profile.d_model * profile.emb_matrix_count) as f64;
    embedding / param_count(profile, vocab) as f64
}

/// Vocabulary and parameter accounting for one trim.
#[derive(Debug, Clone, PartialEq)]
pub struct TrimReport {
    pub profile_name: String,
    pub policy: String,
    pub source_fingerprint: String,
    pub vocab_before: u64,
    pub vocab_after: u64,
    pub vocab_ratio: f64,
    pub params_before: u64,
    pub params_after: u64,
    pub param_ratio: f64,
    pub embedding_share_before: f64,
    pub embedding_share_after: f64,
    /// Keep-reason → token count, in reason precedence order.
    pub per_reason_counts: Vec<(String, u64)>,
}

/// Fills a report from a plan's statistics and a profile's constants.
pub fn build_report(plan: &TrimPlan, profile: &ModelProfile) -> Result<TrimReport, ReportError> {
    if let Some(source_vocab) = plan.source_vocab_size {
        if source_vocab as u64 != profile.vocab_size_ref {
            return Err(ReportError::ProfileMismatch(format!(
                "plan was built for a vocabulary of {source_vocab}, profile {:?} expects {}",
                profile.name, profile.vocab_size_ref
            )));
        }
    }
    if let Some(&max_kept) = plan.kept.last() {
        if max_kept as u64 >= profile.vocab_size_ref {
            return Err(ReportError::ProfileMismatch(format!(
                "plan keeps id {max_kept}, beyond profile vocabulary {}",
                profile.vocab_size_ref
            )));
        }
    }
    let vocab_before = profile.vocab_size_ref;
    let vocab_after = plan.kept.len() as u64;
    let params_before = param_count(profile, vocab_before);
    let params_after = param_count(profile, vocab_after);
    let mut per_reason_counts = Vec::new();
    for reason in [
        crate::plan::KeepReason::Special,
        crate::plan::KeepReason::Alphabet,
        crate::plan::KeepReason::Closure,
        crate::plan::KeepReason::TopN,
        crate::plan::KeepReason::Observed,
    ] {
        let count = plan.reasons.iter().filter(|&&r| r == reason).count() as u64;
        if count > 0 {
            per_reason_counts.push((reason.as_str().to_string(), count));
        }
    }
    Ok(TrimReport {
        profile_name: profile.name.clone(),
        policy: plan.policy.as_str(),
        source_fingerprint: format!("{:016x}", plan.source_fingerprint),
        vocab_before,
        vocab_after,
        vocab_ratio: vocab_after as f64 / vocab_before as f64,
        params_before,
        params_after,
        param_ratio: params_after as f64 / params_before as f64,
        embedding_share_before: embedding_share(profile, vocab_before),
        embedding_share_after: embedding_share(profile, vocab_after),
        per_reason_counts,
    })
}

impl TrimReport {
    /// Structured document with a fixed key order.
    pub fn to_json(&self) -> String {
        let mut reasons = Map::new();
        for (reason, count) in &self.per_reason_counts {
            reasons.insert(reason.clone(), json!(count));
        }
        let mut root = Map::new();
        root.insert("profile".into(), json!(self.profile_name));
        root.insert("policy".into(), json!(self.policy));
        root.insert("source_fingerprint".into(), json!(self.source_fingerprint));
        root.insert("vocab_before".into(), json!(self.vocab_before));
        root.insert("vocab_after".into(), json!(self.vocab_after));
        root.insert("vocab_ratio".into(), json!(self.vocab_ratio));
        root.insert("params_before".into(), json!(self.params_before));
        root.insert("params_after".into(), json!(self.params_after));
        root.insert("param_ratio".into(), json!(self.param_ratio));
        root.insert("embedding_share_before".into(), json!(self.embedding_share_before));
        root.insert("embedding_share_after".into(), json!(self.embedding_share_after));
        root.insert("per_reason_counts".into(), Value::Object(reasons));
        serde_json::to_string_pretty(&Value::Object(root)).expect("report serializes")
    }

    /// Human-readable rendering of the same values.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let mut row = |key: &str, value: String| {
            out.push_str(&format!("{key:<24} {value}\n"));
        };
        row("profile", self.profile_name.clone());
        row("policy", self.policy.clone());
        row("source fingerprint", self.source_fingerprint.clone());
        row(
            "vocabulary",
            format!(
                "{} -> {} ({:.1}%)",
                self.vocab_before,
                self.vocab_after,
                self.vocab_ratio * 100.0
            ),
        );
        row(
            "parameters",
            format!(
                "{} -> {} ({:.1}%)",
                self.params_before,
                self.params_after,
                self.param_ratio * 100.0
            ),
        );
        row(
            "embedding share",
            format!(
                "{:.1}% -> {:.1}%",
                self.embedding_share_before * 100.0,
                self.embedding_share_after * 100.0
            ),
        );
        for (reason, count) in &self.per_reason_counts {
            row(&format!("kept[{reason}]"), count.to_string());
        }
        out
    }
}
