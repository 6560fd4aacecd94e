//! Checkpoint surgery: slice vocabulary-indexed tensors row-wise along their
//! declared axis, leave every other tensor bytewise untouched, and rewrite
//! the model configuration. No numeric conversion happens anywhere, so a
//! trimmed checkpoint is bit-exactly verifiable against its source.

mod tensor;

pub use tensor::{read_container, write_container, Dtype, TensorRecord, TensorStore};

use std::collections::BTreeMap;

use serde_json::{json, Value};

use crate::plan::TrimPlan;
use crate::profile::ModelProfile;
use crate::tokenizer::TokenId;

#[derive(Debug, thiserror::Error)]
pub enum SurgeonError {
    #[error("malformed container header: {0}")]
    Header(String),
    #[error("payload bounds violation: {0}")]
    Bounds(String),
    #[error("{0}")]
    Dtype(String),
    #[error("vocab axis mismatch: {0}")]
    AxisMismatch(String),
    #[error("token id out of range: {0}")]
    IdOutOfRange(String),
    #[error("profile mismatch: {0}")]
    ProfileMismatch(String),
    #[error("tied group inconsistent: {0}")]
    TiedGroupInconsistent(String),
    #[error("config field missing: {0:?}")]
    FieldMissing(String),
    #[error("malformed config document: {0}")]
    Config(String),
}

type Result<T> = std::result::Result<T, SurgeonError>;

/// Copies the kept slabs of one tensor along `axis`. Every kept index maps
/// to a bytewise copy of its source slab; the other axes and the dtype are
/// untouched.
pub fn slice_vocab_axis(
    record: &TensorRecord,
    axis: usize,
    kept: &[TokenId],
    expected_vocab: usize,
) -> Result<TensorRecord> {
    let extent = *record.shape.get(axis).ok_or_else(|| {
        SurgeonError::AxisMismatch(format!(
            "axis {axis} beyond tensor rank {}",
            record.shape.len()
        ))
    })?;
    if extent != expected_vocab {
        return Err(SurgeonError::AxisMismatch(format!(
            "axis {axis} has extent {extent}, expected vocabulary size {expected_vocab}"
        )));
    }
    if let Some(&bad) = kept.iter().find(|&&id| id as usize >= extent) {
        return Err(SurgeonError::IdOutOfRange(format!(
            "kept id {bad} outside axis extent {extent}"
        )));
    }
    let outer: usize = record.shape[..axis].iter().product();
    let slab = record.shape[axis + 1..].iter().product::<usize>() * record.dtype.element_size();
    let stride = extent * slab;
    let mut data = Vec::with_capacity(outer * kept.len() * slab);
    for block in 0..outer {
        let base = block * stride;
        for &id in kept {
            let at = base + id as usize * slab;
            data.extend_from_slice(&record.data[at..at + slab]);
        }
    }
    let mut shape = record.shape.clone();
    shape[axis] = kept.len();
    Ok(TensorRecord { dtype: record.dtype, shape, data })
}

/// Which tensors a profile slices, resolved against a concrete store:
/// tensor name → vocab axis.
pub fn resolve_vocab_tensors(
    store: &TensorStore,
    profile: &ModelProfile,
) -> Result<BTreeMap<String, usize>> {
    let mut matched: BTreeMap<String, usize> = BTreeMap::new();
    for rule in &profile.vocab_tensors {
        let mut hits = 0;
        for name in store.tensors.keys() {
            if rule.matches(name) {
                hits += 1;
                if let Some(&axis) = matched.get(name) {
                    if axis != rule.vocab_axis {
                        return Err(SurgeonError::ProfileMismatch(format!(
                            "tensor {name:?} matched with conflicting axes {axis} and {}",
                            rule.vocab_axis
                        )));
                    }
                } else {
                    matched.insert(name.clone(), rule.vocab_axis);
                }
            }
        }
        if hits == 0 {
            return Err(SurgeonError::ProfileMismatch(format!(
                "pattern {:?} matched no tensor in the checkpoint",
                rule.pattern
            )));
        }
    }
    Ok(matched)
}

/// Applies a plan to a checkpoint: every matched tensor is sliced along its
/// declared axis with the plan's kept set, everything else is copied
/// bytewise. Tied groups are validated to share one vocabulary extent.
pub fn trim_checkpoint(
    store: &TensorStore,
    profile: &ModelProfile,
    plan: &TrimPlan,
) -> Result<TensorStore> {
    if let Some(source_vocab) = plan.source_vocab_size {
        if source_vocab as u64 != profile.vocab_size_ref {
            return Err(SurgeonError::ProfileMismatch(format!(
                "plan was built for a vocabulary of {source_vocab}, profile {:?} expects {}",
                profile.name, profile.vocab_size_ref
            )));
        }
    }
    let matched = resolve_vocab_tensors(store, profile)?;

    for group in &profile.tied_groups {
        let mut extent_seen: Option<(usize, &str)> = None;
        for member in group {
            let axis = *matched.get(member).ok_or_else(|| {
                SurgeonError::TiedGroupInconsistent(format!(
                    "tied tensor {member:?} is not matched by any vocab tensor pattern"
                ))
            })?;
            let extent = store.tensors[member].shape.get(axis).copied().ok_or_else(|| {
                SurgeonError::TiedGroupInconsistent(format!(
                    "tied tensor {member:?} has no axis {axis}"
                ))
            })?;
            match extent_seen {
                None => extent_seen = Some((extent, member)),
                Some((first, first_name)) if first != extent => {
                    return Err(SurgeonError::TiedGroupInconsistent(format!(
                        "{first_name:?} has vocab extent {first} but {member:?} has {extent}"
                    )));
                }
                Some(_) => {}
            }
        }
    }

    let expected_vocab = profile.vocab_size_ref as usize;
    let mut out = TensorStore { tensors: BTreeMap::new(), metadata: store.metadata.clone() };
    for (name, record) in &store.tensors {
        let trimmed = match matched.get(name) {
            Some(&axis) => slice_vocab_axis(record, axis, &plan.kept, expected_vocab)
                .map_err(|err| match err {
                    SurgeonError::AxisMismatch(msg) => {
                        SurgeonError::AxisMismatch(format!("tensor {name:?}: {msg}"))
                    }
                    SurgeonError::IdOutOfRange(msg) => {
                        SurgeonError::IdOutOfRange(format!("tensor {name:?}: {msg}"))
                    }
                    other => other,
                })?,
            None => record.clone(),
        };
        out.insert(name.clone(), trimmed);
    }
    Ok(out)
}

/// Rewrites the profile's vocabulary-size field in a configuration document,
/// leaving every other field intact up to canonical re-serialization.
pub fn rewrite_config(
    config: &[u8],
    profile: &ModelProfile,
    new_vocab: usize,
) -> Result<Vec<u8>> {
    let text = std::str::from_utf8(config)
        .map_err(|e| SurgeonError::Config(format!("not UTF-8: {e}")))?;
    let mut doc: Value = serde_json::from_str(text)
        .map_err(|e| SurgeonError::Config(format!("not valid JSON: {e}")))?;
    let root = doc
        .as_object_mut()
        .ok_or_else(|| SurgeonError::Config("config root must be an object".into()))?;
    let field = root
        .get_mut(&profile.config_vocab_field)
        .ok_or_else(|| SurgeonError::FieldMissing(profile.config_vocab_field.clone()))?;
    *field = json!(new_vocab);
    let mut out = serde_json::to_vec_pretty(&doc).expect("config re-serializes");
    out.push(b'\n');
    Ok(out)
}
