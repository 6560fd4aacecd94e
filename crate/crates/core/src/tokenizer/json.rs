//! Tokenizer-definition documents: a strict JSON schema subset.
//!
//! Serialization is canonical: top-level keys in the order `version,
//! normalizer, pre_tokenizer, added_tokens, model`, pieces in ID order and
//! merges in rank order, so equal specs always produce identical bytes.
//! Documents using stages outside the declared subset are rejected instead of
//! being silently approximated.

use serde_json::{json, Map, Value};

use super::{
    ModelKind, Normalizer, PieceEntry, PreTokenizer, SpecialToken, TokenId, TokenizerError,
    TokenizerSpec,
};

type Result<T> = std::result::Result<T, TokenizerError>;

fn schema_err(msg: impl Into<String>) -> TokenizerError {
    TokenizerError::Schema(msg.into())
}

/// Parses a tokenizer-definition document and validates every invariant.
pub fn parse_tokenizer(bytes: &[u8]) -> Result<TokenizerSpec> {
    let text = std::str::from_utf8(bytes).map_err(|e| schema_err(format!("not UTF-8: {e}")))?;
    let doc: Value =
        serde_json::from_str(text).map_err(|e| schema_err(format!("invalid JSON: {e}")))?;
    let root = doc.as_object().ok_or_else(|| schema_err("document root must be an object"))?;

    for (key, value) in root {
        match key.as_str() {
            "version" | "normalizer" | "pre_tokenizer" | "added_tokens" | "model" => {}
            // Stages we do not implement are tolerated only when disabled.
            _ if value.is_null() || *value == Value::Bool(false) => {}
            _ => return Err(schema_err(format!("unsupported field {key:?}"))),
        }
    }

    match root.get("version") {
        Some(v) if v.as_u64() == Some(1) => {}
        Some(other) => return Err(schema_err(format!("unsupported version {other}"))),
        None => return Err(schema_err("missing required field \"version\"")),
    }

    let normalizer = parse_normalizer(root.get("normalizer").unwrap_or(&Value::Null))?;
    let pre_tokenizer = parse_pre_tokenizer(
        root.get("pre_tokenizer").ok_or_else(|| schema_err("missing required field \"pre_tokenizer\""))?,
    )?;
    let special_tokens = parse_added_tokens(root.get("added_tokens").unwrap_or(&Value::Null))?;

    let model = root
        .get("model")
        .and_then(Value::as_object)
        .ok_or_else(|| schema_err("missing required field \"model\""))?;
    let kind = match model.get("type").and_then(Value::as_str) {
        Some("Unigram") => ModelKind::Unigram,
        Some("BPE") => ModelKind::Bpe,
        Some("WordPiece") => ModelKind::WordPiece,
        Some(other) => return Err(schema_err(format!("unknown model kind {other:?}"))),
        None => return Err(schema_err("missing required field \"model.type\"")),
    };

    let mut spec = match kind {
        ModelKind::Unigram => parse_unigram_model(model)?,
        ModelKind::Bpe => parse_bpe_model(model)?,
        ModelKind::WordPiece => parse_wordpiece_model(model)?,
    };
    spec.normalizer = normalizer;
    spec.pre_tokenizer = pre_tokenizer;
    spec.special_tokens = special_tokens;
    spec.validate()?;
    Ok(spec)
}

fn parse_normalizer(value: &Value) -> Result<Normalizer> {
    let obj = match value {
        Value::Null => return Ok(Normalizer::None),
        Value::Object(obj) => obj,
        _ => return Err(schema_err("normalizer must be null or an object")),
    };
    match obj.get("type").and_then(Value::as_str) {
        Some("NFKC") => Ok(Normalizer::Nfkc),
        Some("Lowercase") => Ok(Normalizer::Lowercase),
        Some("Sequence") => {
            let stages = obj
                .get("normalizers")
                .and_then(Value::as_array)
                .ok_or_else(|| schema_err("normalizer Sequence missing \"normalizers\""))?;
            let mut nfkc = false;
            let mut lowercase = false;
            for stage in stages {
                match stage.get("type").and_then(Value::as_str) {
                    Some("NFKC") => nfkc = true,
                    Some("Lowercase") => lowercase = true,
                    other => {
                        return Err(schema_err(format!(
                            "unsupported normalizer stage {other:?} in Sequence"
                        )))
                    }
                }
            }
            Ok(match (nfkc, lowercase) {
                (true, true) => Normalizer::NfkcLowercase,
                (true, false) => Normalizer::Nfkc,
                (false, true) => Normalizer::Lowercase,
                (false, false) => Normalizer::None,
            })
        }
        other => Err(schema_err(format!("unsupported normalizer {other:?}"))),
    }
}

fn parse_pre_tokenizer(value: &Value) -> Result<PreTokenizer> {
    let obj = value
        .as_object()
        .ok_or_else(|| schema_err("pre_tokenizer must be an object"))?;
    match obj.get("type").and_then(Value::as_str) {
        Some("Whitespace") => Ok(PreTokenizer::Whitespace),
        Some("ByteLevel") => Ok(PreTokenizer::ByteLevel),
        Some("Metaspace") => {
            let replacement = obj
                .get("replacement")
                .and_then(Value::as_str)
                .ok_or_else(|| schema_err("Metaspace missing \"replacement\""))?;
            let mut chars = replacement.chars();
            let (replacement, rest) = (chars.next(), chars.next());
            let replacement = match (replacement, rest) {
                (Some(c), None) => c,
                _ => return Err(schema_err("Metaspace replacement must be one character")),
            };
            let add_prefix_space = obj
                .get("add_prefix_space")
                .and_then(Value::as_bool)
                .ok_or_else(|| schema_err("Metaspace missing \"add_prefix_space\""))?;
            Ok(PreTokenizer::Metaspace { replacement, add_prefix_space })
        }
        other => Err(schema_err(format!("unsupported pre_tokenizer {other:?}"))),
    }
}

fn parse_added_tokens(value: &Value) -> Result<Vec<SpecialToken>> {
    let entries = match value {
        Value::Null => return Ok(Vec::new()),
        Value::Array(entries) => entries,
        _ => return Err(schema_err("added_tokens must be an array")),
    };
    let mut out = Vec::with_capacity(entries.len());
    for entry in entries {
        let obj = entry
            .as_object()
            .ok_or_else(|| schema_err("added_tokens entries must be objects"))?;
        let id = obj
            .get("id")
            .and_then(Value::as_u64)
            .ok_or_else(|| schema_err("added token missing integer \"id\""))?;
        let content = obj
            .get("content")
            .and_then(Value::as_str)
            .ok_or_else(|| schema_err("added token missing string \"content\""))?;
        if obj.get("special").and_then(Value::as_bool) != Some(true) {
            return Err(schema_err(format!(
                "added token {content:?} must have \"special\": true"
            )));
        }
        out.push(SpecialToken { content: content.to_string(), id: id as TokenId });
    }
    Ok(out)
}

fn parse_unigram_model(model: &Map<String, Value>) -> Result<TokenizerSpec> {
    let vocab = model
        .get("vocab")
        .and_then(Value::as_array)
        .ok_or_else(|| schema_err("Unigram model missing \"vocab\" array"))?;
    let mut pieces = Vec::with_capacity(vocab.len());
    for entry in vocab {
        let pair = entry.as_array().filter(|p| p.len() == 2).ok_or_else(|| {
            schema_err("Unigram vocab entries must be [piece, score] pairs")
        })?;
        let token = pair[0]
            .as_str()
            .ok_or_else(|| schema_err("Unigram vocab piece must be a string"))?;
        let score = pair[1]
            .as_f64()
            .ok_or_else(|| schema_err("Unigram vocab score must be a number"))?;
        pieces.push(PieceEntry::new(token, score));
    }
    let unk_id = match model.get("unk_id") {
        None | Some(Value::Null) => None,
        Some(v) => Some(
            v.as_u64().ok_or_else(|| schema_err("unk_id must be an integer or null"))? as TokenId,
        ),
    };
    let byte_fallback = match model.get("byte_fallback") {
        None | Some(Value::Null) => false,
        Some(v) => v.as_bool().ok_or_else(|| schema_err("byte_fallback must be a boolean"))?,
    };
    Ok(TokenizerSpec {
        model_kind: ModelKind::Unigram,
        pieces,
        merges: vec![],
        special_tokens: vec![],
        unk_id,
        byte_fallback,
        normalizer: Normalizer::None,
        pre_tokenizer: PreTokenizer::Whitespace,
        continuation_prefix: String::new(),
    })
}

/// Reads a piece→id object whose IDs must be exactly 0..V-1.
fn parse_dense_vocab(model: &Map<String, Value>, kind: &str) -> Result<Vec<PieceEntry>> {
    let vocab = model
        .get("vocab")
        .and_then(Value::as_object)
        .ok_or_else(|| schema_err(format!("{kind} model missing \"vocab\" object")))?;
    let mut pieces: Vec<Option<PieceEntry>> = vec![None; vocab.len()];
    for (token, id) in vocab {
        let id = id
            .as_u64()
            .ok_or_else(|| schema_err(format!("{kind} vocab id for {token:?} must be an integer")))?
            as usize;
        if id >= pieces.len() {
            return Err(schema_err(format!(
                "{kind} vocab ids must be dense 0..{}, got {id}",
                pieces.len()
            )));
        }
        if pieces[id].is_some() {
            return Err(schema_err(format!("{kind} vocab has two pieces with id {id}")));
        }
        pieces[id] = Some(PieceEntry::new(token.as_str(), id as f64));
    }
    pieces
        .into_iter()
        .enumerate()
        .map(|(id, p)| p.ok_or_else(|| schema_err(format!("{kind} vocab missing id {id}"))))
        .collect()
}

fn resolve_unk_token(pieces: &[PieceEntry], model: &Map<String, Value>) -> Result<Option<TokenId>> {
    match model.get("unk_token") {
        None | Some(Value::Null) => Ok(None),
        Some(v) => {
            let token = v.as_str().ok_or_else(|| schema_err("unk_token must be a string"))?;
            pieces
                .iter()
                .position(|p| p.token == token)
                .map(|id| Some(id as TokenId))
                .ok_or_else(|| {
                    TokenizerError::Invariant(format!("unk_token {token:?} not in vocab"))
                })
        }
    }
}

fn parse_bpe_model(model: &Map<String, Value>) -> Result<TokenizerSpec> {
    let pieces = parse_dense_vocab(model, "BPE")?;
    let merge_lines = model
        .get("merges")
        .and_then(Value::as_array)
        .ok_or_else(|| schema_err("BPE model missing \"merges\" array"))?;
    let mut merges = Vec::with_capacity(merge_lines.len());
    for line in merge_lines {
        let line = line
            .as_str()
            .ok_or_else(|| schema_err("BPE merges must be \"left right\" strings"))?;
        let (left, right) = line
            .split_once(' ')
            .ok_or_else(|| schema_err(format!("merge {line:?} is not \"left right\"")))?;
        merges.push((left.to_string(), right.to_string()));
    }
    let unk_id = resolve_unk_token(&pieces, model)?;
    Ok(TokenizerSpec {
        model_kind: ModelKind::Bpe,
        pieces,
        merges,
        special_tokens: vec![],
        unk_id,
        byte_fallback: false,
        normalizer: Normalizer::None,
        pre_tokenizer: PreTokenizer::Whitespace,
        continuation_prefix: String::new(),
    })
}

fn parse_wordpiece_model(model: &Map<String, Value>) -> Result<TokenizerSpec> {
    let pieces = parse_dense_vocab(model, "WordPiece")?;
    let continuation_prefix = match model.get("continuing_subword_prefix") {
        None | Some(Value::Null) => "##".to_string(),
        Some(v) => v
            .as_str()
            .ok_or_else(|| schema_err("continuing_subword_prefix must be a string"))?
            .to_string(),
    };
    let unk_id = resolve_unk_token(&pieces, model)?;
    Ok(TokenizerSpec {
        model_kind: ModelKind::WordPiece,
        pieces,
        merges: vec![],
        special_tokens: vec![],
        unk_id,
        byte_fallback: false,
        normalizer: Normalizer::None,
        pre_tokenizer: PreTokenizer::Whitespace,
        continuation_prefix,
    })
}

/// Serializes a spec into its canonical document. The spec must satisfy its
/// invariants; equal specs yield byte-identical output.
pub fn serialize_tokenizer(spec: &TokenizerSpec) -> Vec<u8> {
    let normalizer = match spec.normalizer {
        Normalizer::None => Value::Null,
        Normalizer::Nfkc => json!({ "type": "NFKC" }),
        Normalizer::Lowercase => json!({ "type": "Lowercase" }),
        Normalizer::NfkcLowercase => json!({
            "type": "Sequence",
            "normalizers": [{ "type": "NFKC" }, { "type": "Lowercase" }],
        }),
    };
    let pre_tokenizer = match &spec.pre_tokenizer {
        PreTokenizer::Whitespace => json!({ "type": "Whitespace" }),
        PreTokenizer::ByteLevel => json!({ "type": "ByteLevel" }),
        PreTokenizer::Metaspace { replacement, add_prefix_space } => json!({
            "type": "Metaspace",
            "replacement": replacement.to_string(),
            "add_prefix_space": add_prefix_space,
        }),
    };
    let added_tokens: Vec<Value> = spec
        .special_tokens
        .iter()
        .map(|s| json!({ "id": s.id, "content": s.content, "special": true }))
        .collect();

    let mut model = Map::new();
    model.insert("type".into(), json!(spec.model_kind.as_str()));
    match spec.model_kind {
        ModelKind::Unigram => {
            model.insert(
                "unk_id".into(),
                spec.unk_id.map(|id| json!(id)).unwrap_or(Value::Null),
            );
            model.insert("byte_fallback".into(), json!(spec.byte_fallback));
            let vocab: Vec<Value> =
                spec.pieces.iter().map(|p| json!([p.token, p.score])).collect();
            model.insert("vocab".into(), Value::Array(vocab));
        }
        ModelKind::Bpe => {
            model.insert("vocab".into(), dense_vocab_object(spec));
            let merges: Vec<Value> = spec
                .merges
                .iter()
                .map(|(l, r)| json!(format!("{l} {r}")))
                .collect();
            model.insert("merges".into(), Value::Array(merges));
            insert_unk_token(&mut model, spec);
        }
        ModelKind::WordPiece => {
            model.insert("vocab".into(), dense_vocab_object(spec));
            model.insert(
                "continuing_subword_prefix".into(),
                json!(spec.continuation_prefix),
            );
            insert_unk_token(&mut model, spec);
        }
    }

    let mut root = Map::new();
    root.insert("version".into(), json!(1));
    root.insert("normalizer".into(), normalizer);
    root.insert("pre_tokenizer".into(), pre_tokenizer);
    root.insert("added_tokens".into(), Value::Array(added_tokens));
    root.insert("model".into(), Value::Object(model));
    serde_json::to_vec(&Value::Object(root)).expect("canonical document is valid JSON")
}

fn dense_vocab_object(spec: &TokenizerSpec) -> Value {
    let mut vocab = Map::new();
    for (id, piece) in spec.pieces.iter().enumerate() {
        vocab.insert(piece.token.clone(), json!(id));
    }
    Value::Object(vocab)
}

fn insert_unk_token(model: &mut Map<String, Value>, spec: &TokenizerSpec) {
    if let Some(unk) = spec.unk_id {
        model.insert("unk_token".into(), json!(spec.pieces[unk as usize].token));
    }
}
