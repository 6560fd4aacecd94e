//! In-memory checkpoint image and the bit-exact tensor container format.
//!
//! Layout: an 8-byte little-endian header length, a UTF-8 JSON header mapping
//! tensor names to `{dtype, shape, data_offsets}` (plus an optional
//! `__metadata__` string map), then the raw payload addressed by the offsets.
//! Canonical output sorts header keys lexicographically and packs payloads in
//! that order with no gaps, so equal stores produce identical bytes.

use std::collections::BTreeMap;

use serde_json::{json, Map, Value};

use super::SurgeonError;

type Result<T> = std::result::Result<T, SurgeonError>;

/// Element type of a stored tensor. Values are moved around as raw bytes;
/// no numeric conversion ever happens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    Bool,
    U8,
    I8,
    I16,
    U16,
    F16,
    BF16,
    I32,
    U32,
    F32,
    F64,
    I64,
    U64,
}

impl Dtype {
    pub fn element_size(&self) -> usize {
        match self {
            Dtype::Bool | Dtype::U8 | Dtype::I8 => 1,
            Dtype::I16 | Dtype::U16 | Dtype::F16 | Dtype::BF16 => 2,
            Dtype::I32 | Dtype::U32 | Dtype::F32 => 4,
            Dtype::F64 | Dtype::I64 | Dtype::U64 => 8,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Dtype::Bool => "BOOL",
            Dtype::U8 => "U8",
            Dtype::I8 => "I8",
            Dtype::I16 => "I16",
            Dtype::U16 => "U16",
            Dtype::F16 => "F16",
            Dtype::BF16 => "BF16",
            Dtype::I32 => "I32",
            Dtype::U32 => "U32",
            Dtype::F32 => "F32",
            Dtype::F64 => "F64",
            Dtype::I64 => "I64",
            Dtype::U64 => "U64",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(match text {
            "BOOL" => Dtype::Bool,
            "U8" => Dtype::U8,
            "I8" => Dtype::I8,
            "I16" => Dtype::I16,
            "U16" => Dtype::U16,
            "F16" => Dtype::F16,
            "BF16" => Dtype::BF16,
            "I32" => Dtype::I32,
            "U32" => Dtype::U32,
            "F32" => Dtype::F32,
            "F64" => Dtype::F64,
            "I64" => Dtype::I64,
            "U64" => Dtype::U64,
            other => return Err(SurgeonError::Dtype(format!("unknown dtype {other:?}"))),
        })
    }
}

/// One named tensor: dtype, shape, and little-endian payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorRecord {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub data: Vec<u8>,
}

impl TensorRecord {
    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn expected_len(&self) -> usize {
        self.element_count() * self.dtype.element_size()
    }
}

/// Ordered name → tensor map plus preserved metadata.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TensorStore {
    pub tensors: BTreeMap<String, TensorRecord>,
    pub metadata: Option<BTreeMap<String, String>>,
}

impl TensorStore {
    pub fn insert(&mut self, name: impl Into<String>, record: TensorRecord) {
        self.tensors.insert(name.into(), record);
    }
}

/// Parses a container, validating every (offset, length, shape, dtype) tuple.
pub fn read_container(bytes: &[u8]) -> Result<TensorStore> {
    if bytes.len() < 8 {
        return Err(SurgeonError::Header("container shorter than its length field".into()));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let rest = &bytes[8..];
    if header_len > rest.len() {
        return Err(SurgeonError::Header(format!(
            "declared header length {header_len} exceeds file size"
        )));
    }
    let header = std::str::from_utf8(&rest[..header_len])
        .map_err(|e| SurgeonError::Header(format!("header is not UTF-8: {e}")))?;
    let payload = &rest[header_len..];
    let doc: Value = serde_json::from_str(header)
        .map_err(|e| SurgeonError::Header(format!("header is not valid JSON: {e}")))?;
    let root = doc
        .as_object()
        .ok_or_else(|| SurgeonError::Header("header root must be an object".into()))?;

    let mut store = TensorStore::default();
    let mut spans: Vec<(usize, usize, String)> = Vec::new();
    for (name, entry) in root {
        if name == "__metadata__" {
            let map = entry.as_object().ok_or_else(|| {
                SurgeonError::Header("__metadata__ must be a string map".into())
            })?;
            let mut metadata = BTreeMap::new();
            for (key, value) in map {
                let value = value.as_str().ok_or_else(|| {
                    SurgeonError::Header(format!("__metadata__ value for {key:?} must be a string"))
                })?;
                metadata.insert(key.clone(), value.to_string());
            }
            store.metadata = Some(metadata);
            continue;
        }
        let entry = entry
            .as_object()
            .ok_or_else(|| SurgeonError::Header(format!("entry {name:?} must be an object")))?;
        let dtype = entry
            .get("dtype")
            .and_then(Value::as_str)
            .ok_or_else(|| SurgeonError::Header(format!("entry {name:?} missing dtype")))?;
        let dtype = Dtype::parse(dtype)?;
        let shape: Vec<usize> = entry
            .get("shape")
            .and_then(Value::as_array)
            .ok_or_else(|| SurgeonError::Header(format!("entry {name:?} missing shape")))?
            .iter()
            .map(|v| {
                v.as_u64().map(|n| n as usize).ok_or_else(|| {
                    SurgeonError::Header(format!("entry {name:?} has a non-integer extent"))
                })
            })
            .collect::<Result<_>>()?;
        let offsets = entry
            .get("data_offsets")
            .and_then(Value::as_array)
            .filter(|a| a.len() == 2)
            .ok_or_else(|| {
                SurgeonError::Header(format!("entry {name:?} missing [begin, end] data_offsets"))
            })?;
        let begin = offsets[0].as_u64().ok_or_else(|| {
            SurgeonError::Header(format!("entry {name:?} has a non-integer offset"))
        })? as usize;
        let end = offsets[1].as_u64().ok_or_else(|| {
            SurgeonError::Header(format!("entry {name:?} has a non-integer offset"))
        })? as usize;
        if begin > end || end > payload.len() {
            return Err(SurgeonError::Bounds(format!(
                "entry {name:?} offsets [{begin}, {end}] exceed payload of {} bytes",
                payload.len()
            )));
        }
        let elements = shape.iter().try_fold(1usize, |acc, &ext| acc.checked_mul(ext));
        let expected = elements.and_then(|n| n.checked_mul(dtype.element_size()));
        if expected != Some(end - begin) {
            return Err(SurgeonError::Header(format!(
                "entry {name:?}: payload length {} does not match shape {shape:?} of {}",
                end - begin,
                dtype.as_str()
            )));
        }
        spans.push((begin, end, name.clone()));
        store.insert(
            name.clone(),
            TensorRecord { dtype, shape, data: payload[begin..end].to_vec() },
        );
    }

    spans.sort_unstable();
    for pair in spans.windows(2) {
        let (_, prev_end, prev_name) = &pair[0];
        let (next_begin, _, next_name) = &pair[1];
        if next_begin < prev_end {
            return Err(SurgeonError::Bounds(format!(
                "entries {prev_name:?} and {next_name:?} have overlapping payloads"
            )));
        }
    }
    Ok(store)
}

/// Emits the canonical container: header keys sorted lexicographically,
/// payloads densely packed in that order.
pub fn write_container(store: &TensorStore) -> Vec<u8> {
    let mut keys: Vec<&str> = store.tensors.keys().map(String::as_str).collect();
    if store.metadata.is_some() {
        keys.push("__metadata__");
    }
    keys.sort_unstable();

    let mut header = Map::new();
    let mut payload: Vec<u8> = Vec::new();
    for key in keys {
        if key == "__metadata__" {
            let metadata = store.metadata.as_ref().expect("checked above");
            let mut map = Map::new();
            for (k, v) in metadata {
                map.insert(k.clone(), json!(v));
            }
            header.insert("__metadata__".into(), Value::Object(map));
            continue;
        }
        let record = &store.tensors[key];
        debug_assert_eq!(record.data.len(), record.expected_len());
        let begin = payload.len();
        payload.extend_from_slice(&record.data);
        let mut entry = Map::new();
        entry.insert("dtype".into(), json!(record.dtype.as_str()));
        entry.insert("shape".into(), json!(record.shape));
        entry.insert("data_offsets".into(), json!([begin, payload.len()]));
        header.insert(key.to_string(), Value::Object(entry));
    }

    let header_bytes =
        serde_json::to_vec(&Value::Object(header)).expect("header is valid JSON");
    let mut out = Vec::with_capacity(8 + header_bytes.len() + payload.len());
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    out.extend_from_slice(&payload);
    out
}
