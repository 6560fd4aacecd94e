//! Turning frequency tables into trim plans.
//!
//! A [`TrimPlan`] names exactly which tokens survive, how their IDs are
//! remapped (order-preserving), why each one was kept, and the trimmed
//! tokenizer derived from the source spec. Selection policies:
//!
//! * `AllObserved` — every token that occurred in the corpus, plus the
//!   mandatory set (special tokens, unk, coverage alphabet).
//! * `TopN(n)` — mandatory set first, then highest-count tokens until the
//!   selection reaches `n`; count ties break toward the lower original ID.
//!   The budget covers the whole selection; BPE merge closure may add
//!   ancestors on top of it afterwards.

use std::collections::{BTreeSet, HashMap, HashSet};

use crate::freq::FrequencyTable;
use crate::tokenizer::{parse_byte_piece, ModelKind, TokenId, TokenizerSpec};

#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    #[error("tokenizer fingerprint mismatch: table has {table:016x}, tokenizer has {tokenizer:016x}")]
    FingerprintMismatch { table: u64, tokenizer: u64 },
    #[error("budget {budget} is smaller than the mandatory set ({mandatory} tokens)")]
    BudgetTooSmall { budget: usize, mandatory: usize },
    #[error("composite token {0:?} has no merge derivation")]
    DerivationMissing(String),
    #[error("kept token {0:?} has a derivation that escapes the kept set")]
    ClosureViolation(String),
    #[error("token id {0} was dropped by the plan")]
    DroppedToken(TokenId),
    #[error("mandatory token id {0} is missing from the kept set")]
    MandatoryMissing(TokenId),
    #[error("malformed plan file: {0}")]
    Format(String),
}

type Result<T> = std::result::Result<T, PlanError>;

/// Token selection policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    AllObserved,
    TopN(usize),
}

impl Policy {
    pub fn as_str(&self) -> String {
        match self {
            Policy::AllObserved => "all-observed".to_string(),
            Policy::TopN(n) => format!("top-n:{n}"),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        if text == "all-observed" {
            return Ok(Policy::AllObserved);
        }
        if let Some(n) = text.strip_prefix("top-n:") {
            let n: usize =
                n.parse().map_err(|e| PlanError::Format(format!("bad policy budget: {e}")))?;
            return Ok(Policy::TopN(n));
        }
        Err(PlanError::Format(format!("unknown policy {text:?}")))
    }
}

/// Why a token survived the trim, recorded with precedence
/// Special > Alphabet > Closure > (TopN | Observed).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum KeepReason {
    Special,
    Alphabet,
    Closure,
    TopN,
    Observed,
}

impl KeepReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            KeepReason::Special => "special",
            KeepReason::Alphabet => "alphabet",
            KeepReason::Closure => "closure",
            KeepReason::TopN => "top-n",
            KeepReason::Observed => "observed",
        }
    }

    fn parse(text: &str) -> Result<Self> {
        Ok(match text {
            "special" => KeepReason::Special,
            "alphabet" => KeepReason::Alphabet,
            "closure" => KeepReason::Closure,
            "top-n" => KeepReason::TopN,
            "observed" => KeepReason::Observed,
            other => return Err(PlanError::Format(format!("unknown reason {other:?}"))),
        })
    }
}

/// Knobs for [`structural_closure`].
#[derive(Debug, Clone, Copy, Default)]
pub struct ClosureOptions {
    /// WordPiece: also keep every single-character piece and its
    /// continuation variant present in the source vocabulary.
    pub wordpiece_keep_alphabet: bool,
}

/// The kept-token set, ID remap, per-token keep reasons, and the trimmed
/// tokenizer derived from the source spec.
#[derive(Debug, Clone, PartialEq)]
pub struct TrimPlan {
    /// Kept original IDs, ascending; a token's new ID is its index here.
    pub kept: Vec<TokenId>,
    /// Parallel to `kept`.
    pub reasons: Vec<KeepReason>,
    /// Parallel to `kept`: corpus counts from the planning table.
    pub counts: Vec<u64>,
    pub source_fingerprint: u64,
    /// Known when the plan was built in-process; plan files do not carry it.
    pub source_vocab_size: Option<usize>,
    pub policy: Policy,
    /// Present when built; plan files store the trimmed tokenizer separately.
    pub trimmed_spec: Option<TokenizerSpec>,
}

impl TrimPlan {
    /// Order-preserving old→new mapping; `None` for dropped tokens.
    pub fn old_to_new(&self, old: TokenId) -> Option<TokenId> {
        self.kept.binary_search(&old).ok().map(|new| new as TokenId)
    }

    pub fn new_vocab_size(&self) -> usize {
        self.kept.len()
    }
}

fn check_fingerprint(table: &FrequencyTable, spec: &TokenizerSpec) -> Result<()> {
    let fingerprint = spec.fingerprint();
    if table.tokenizer_fingerprint != fingerprint {
        return Err(PlanError::FingerprintMismatch {
            table: table.tokenizer_fingerprint,
            tokenizer: fingerprint,
        });
    }
    Ok(())
}

/// Chooses the kept-token set for a policy. The top-n cut counts the
/// mandatory set against the budget and fills to exactly `n` tokens
/// (capped at the vocabulary size); ties at the cut keep the lower ID.
pub fn select_kept(
    table: &FrequencyTable,
    policy: Policy,
    spec: &TokenizerSpec,
) -> Result<BTreeSet<TokenId>> {
    check_fingerprint(table, spec)?;
    let mandatory: BTreeSet<TokenId> = spec.mandatory_ids().into_iter().collect();
    match policy {
        Policy::AllObserved => {
            let mut kept = mandatory;
            for (id, &count) in table.counts.iter().enumerate() {
                if count > 0 {
                    kept.insert(id as TokenId);
                }
            }
            Ok(kept)
        }
        Policy::TopN(n) => {
            if n < mandatory.len() {
                return Err(PlanError::BudgetTooSmall { budget: n, mandatory: mandatory.len() });
            }
            let budget = n.min(spec.vocab_size());
            let mut kept = mandatory;
            let mut candidates: Vec<TokenId> = (0..spec.vocab_size() as TokenId)
                .filter(|id| !kept.contains(id))
                .collect();
            candidates.sort_by_key(|&id| (std::cmp::Reverse(table.counts[id as usize]), id));
            for id in candidates {
                if kept.len() >= budget {
                    break;
                }
                kept.insert(id);
            }
            Ok(kept)
        }
    }
}

/// For BPE, replays merge derivations and returns the kept set extended with
/// every ancestor a kept composite token is built from, so all kept tokens
/// stay constructible. Identity for Unigram; for WordPiece optionally adds
/// the vocabulary's single-character alphabet. Idempotent.
pub fn structural_closure(
    kept: &BTreeSet<TokenId>,
    spec: &TokenizerSpec,
    options: ClosureOptions,
) -> Result<BTreeSet<TokenId>> {
    match spec.model_kind {
        ModelKind::Unigram => Ok(kept.clone()),
        ModelKind::WordPiece => {
            let mut out = kept.clone();
            if options.wordpiece_keep_alphabet {
                for (id, piece) in spec.pieces.iter().enumerate() {
                    if wordpiece_alphabet_piece(&piece.token, &spec.continuation_prefix) {
                        out.insert(id as TokenId);
                    }
                }
            }
            Ok(out)
        }
        ModelKind::Bpe => {
            let creating = creating_merges(spec);
            let leaves: HashSet<TokenId> = leaf_ids(spec);
            let mut out = kept.clone();
            let mut stack: Vec<TokenId> = kept.iter().copied().collect();
            while let Some(id) = stack.pop() {
                if leaves.contains(&id) {
                    continue;
                }
                match creating.get(&id) {
                    Some(&(left, right)) => {
                        for parent in [left, right] {
                            if out.insert(parent) {
                                stack.push(parent);
                            }
                        }
                    }
                    None => {
                        return Err(PlanError::DerivationMissing(
                            spec.pieces[id as usize].token.clone(),
                        ))
                    }
                }
            }
            Ok(out)
        }
    }
}

fn wordpiece_alphabet_piece(token: &str, prefix: &str) -> bool {
    let body = token.strip_prefix(prefix).filter(|_| !prefix.is_empty()).unwrap_or(token);
    body.chars().count() == 1
}

/// Token id → (left id, right id) of the lowest-rank merge that produces it.
fn creating_merges(spec: &TokenizerSpec) -> HashMap<TokenId, (TokenId, TokenId)> {
    let ids: HashMap<&str, TokenId> = spec
        .pieces
        .iter()
        .enumerate()
        .map(|(id, p)| (p.token.as_str(), id as TokenId))
        .collect();
    let mut creating = HashMap::new();
    for (left, right) in &spec.merges {
        let joined = format!("{left}{right}");
        if let (Some(&l), Some(&r), Some(&m)) =
            (ids.get(left.as_str()), ids.get(right.as_str()), ids.get(joined.as_str()))
        {
            creating.entry(m).or_insert((l, r));
        }
    }
    creating
}

/// Tokens that need no derivation: single characters, special tokens, unk.
fn leaf_ids(spec: &TokenizerSpec) -> HashSet<TokenId> {
    let mut leaves: HashSet<TokenId> = spec
        .pieces
        .iter()
        .enumerate()
        .filter(|(_, p)| p.token.chars().count() <= 1)
        .map(|(id, _)| id as TokenId)
        .collect();
    leaves.extend(spec.special_tokens.iter().map(|s| s.id));
    leaves.extend(spec.unk_id);
    leaves
}

/// Filters a spec down to the kept tokens: pieces in original order with
/// unchanged scores, merges restricted to survivors in rank order, special
/// tokens and unk remapped.
pub fn derive_trimmed_spec(spec: &TokenizerSpec, kept: &[TokenId]) -> TokenizerSpec {
    let kept_set: HashSet<TokenId> = kept.iter().copied().collect();
    let old_to_new: HashMap<TokenId, TokenId> =
        kept.iter().enumerate().map(|(new, &old)| (old, new as TokenId)).collect();
    let piece_ids: HashMap<&str, TokenId> = spec
        .pieces
        .iter()
        .enumerate()
        .map(|(id, p)| (p.token.as_str(), id as TokenId))
        .collect();
    let surviving = |token: &str| piece_ids.get(token).is_some_and(|id| kept_set.contains(id));
    TokenizerSpec {
        model_kind: spec.model_kind,
        pieces: kept.iter().map(|&id| spec.pieces[id as usize].clone()).collect(),
        merges: spec
            .merges
            .iter()
            .filter(|(l, r)| surviving(l) && surviving(r) && surviving(&format!("{l}{r}")))
            .cloned()
            .collect(),
        special_tokens: spec
            .special_tokens
            .iter()
            .map(|s| crate::tokenizer::SpecialToken {
                content: s.content.clone(),
                id: old_to_new[&s.id],
            })
            .collect(),
        unk_id: spec.unk_id.map(|unk| old_to_new[&unk]),
        byte_fallback: spec.byte_fallback,
        normalizer: spec.normalizer,
        pre_tokenizer: spec.pre_tokenizer.clone(),
        continuation_prefix: spec.continuation_prefix.clone(),
    }
}

/// Assembles the full plan from a closed kept set. The set must contain the
/// mandatory tokens and be a fixed point of [`structural_closure`].
pub fn build_plan(
    kept: &BTreeSet<TokenId>,
    table: &FrequencyTable,
    spec: &TokenizerSpec,
    policy: Policy,
    options: ClosureOptions,
) -> Result<TrimPlan> {
    check_fingerprint(table, spec)?;
    for id in spec.mandatory_ids() {
        if !kept.contains(&id) {
            return Err(PlanError::MandatoryMissing(id));
        }
    }
    let ancestry = structural_closure(kept, spec, ClosureOptions::default())?;
    if let Some(escaped) = ancestry.difference(kept).next() {
        return Err(PlanError::ClosureViolation(spec.pieces[*escaped as usize].token.clone()));
    }

    let specials: HashSet<TokenId> = spec
        .special_tokens
        .iter()
        .map(|s| s.id)
        .chain(spec.unk_id)
        .collect();
    let policy_selected = select_kept(table, policy, spec)?;
    let kept_vec: Vec<TokenId> = kept.iter().copied().collect();
    let reasons: Vec<KeepReason> = kept_vec
        .iter()
        .map(|&id| {
            let token = &spec.pieces[id as usize].token;
            let byte_alphabet = spec.byte_fallback && parse_byte_piece(token).is_some();
            let wp_alphabet = spec.model_kind == ModelKind::WordPiece
                && options.wordpiece_keep_alphabet
                && wordpiece_alphabet_piece(token, &spec.continuation_prefix);
            if specials.contains(&id) {
                KeepReason::Special
            } else if byte_alphabet || wp_alphabet {
                KeepReason::Alphabet
            } else if policy_selected.contains(&id) {
                match policy {
                    Policy::AllObserved => KeepReason::Observed,
                    Policy::TopN(_) => KeepReason::TopN,
                }
            } else {
                KeepReason::Closure
            }
        })
        .collect();
    let counts: Vec<u64> = kept_vec.iter().map(|&id| table.counts[id as usize]).collect();
    let trimmed_spec = derive_trimmed_spec(spec, &kept_vec);
    debug_assert!(trimmed_spec.validate().is_ok());
    Ok(TrimPlan {
        kept: kept_vec,
        reasons,
        counts,
        source_fingerprint: table.tokenizer_fingerprint,
        source_vocab_size: Some(spec.vocab_size()),
        policy,
        trimmed_spec: Some(trimmed_spec),
    })
}

/// select → closure → build, the planning pipeline in one call.
pub fn plan_trim(
    table: &FrequencyTable,
    spec: &TokenizerSpec,
    policy: Policy,
    options: ClosureOptions,
) -> Result<TrimPlan> {
    let selected = select_kept(table, policy, spec)?;
    let closed = structural_closure(&selected, spec, options)?;
    build_plan(&closed, table, spec, policy, options)
}

/// Element-wise ID remap; errors on any ID the plan dropped.
pub fn apply_plan_to_ids(ids: &[TokenId], plan: &TrimPlan) -> Result<Vec<TokenId>> {
    ids.iter()
        .map(|&id| plan.old_to_new(id).ok_or(PlanError::DroppedToken(id)))
        .collect()
}

/// Serializes a plan as the TSV plan format (the trimmed tokenizer document
/// is written separately).
pub fn save_plan(plan: &TrimPlan) -> Vec<u8> {
    let mut out = String::new();
    out.push_str(&format!(
        "#vt-plan\t1\t{:016x}\t{}\t{}\n",
        plan.source_fingerprint,
        plan.kept.len(),
        plan.policy.as_str()
    ));
    for (new_id, ((&old_id, reason), &count)) in
        plan.kept.iter().zip(&plan.reasons).zip(&plan.counts).enumerate()
    {
        out.push_str(&format!("{old_id}\t{new_id}\t{}\t{count}\n", reason.as_str()));
    }
    out.into_bytes()
}

/// Parses a plan file. The trimmed tokenizer and source vocabulary size are
/// not part of the format; downstream consumers validate against the
/// artifacts they are given.
pub fn load_plan(bytes: &[u8]) -> Result<TrimPlan> {
    let text =
        std::str::from_utf8(bytes).map_err(|e| PlanError::Format(format!("not UTF-8: {e}")))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| PlanError::Format("empty file".into()))?;
    let fields: Vec<&str> = header.split('\t').collect();
    if fields.len() != 5 || fields[0] != "#vt-plan" || fields[1] != "1" {
        return Err(PlanError::Format(format!("bad header {header:?}")));
    }
    let source_fingerprint = u64::from_str_radix(fields[2], 16)
        .map_err(|e| PlanError::Format(format!("bad fingerprint: {e}")))?;
    let kept_count: usize =
        fields[3].parse().map_err(|e| PlanError::Format(format!("bad kept count: {e}")))?;
    let policy = Policy::parse(fields[4])?;

    let mut kept = Vec::with_capacity(kept_count);
    let mut reasons = Vec::with_capacity(kept_count);
    let mut counts = Vec::with_capacity(kept_count);
    for line in lines {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(PlanError::Format(format!("bad row {line:?}")));
        }
        let old_id: TokenId =
            cols[0].parse().map_err(|e| PlanError::Format(format!("bad old id: {e}")))?;
        let new_id: usize =
            cols[1].parse().map_err(|e| PlanError::Format(format!("bad new id: {e}")))?;
        if new_id != kept.len() {
            return Err(PlanError::Format(format!(
                "new ids must be dense ascending; expected {}, found {new_id}",
                kept.len()
            )));
        }
        if let Some(&prev) = kept.last() {
            if old_id <= prev {
                return Err(PlanError::Format(format!(
                    "old ids must be strictly ascending; {old_id} after {prev}"
                )));
            }
        }
        kept.push(old_id);
        reasons.push(KeepReason::parse(cols[2])?);
        counts.push(cols[3].parse().map_err(|e| PlanError::Format(format!("bad count: {e}")))?);
    }
    if kept.len() != kept_count {
        return Err(PlanError::Format(format!(
            "header declares {kept_count} kept tokens, file has {}",
            kept.len()
        )));
    }
    Ok(TrimPlan {
        kept,
        reasons,
        counts,
        source_fingerprint,
        source_vocab_size: None,
        policy,
        trimmed_spec: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::freq::{count_corpus, lines_from_str, CountUnit};
    use crate::tokenizer::{
        encode_text, serialize_tokenizer, Normalizer, PieceEntry, PreTokenizer, SpecialToken,
    };

    fn bpe_spec(pieces: &[&str], merges: &[(&str, &str)]) -> TokenizerSpec {
        TokenizerSpec {
            model_kind: ModelKind::Bpe,
            pieces: pieces.iter().enumerate().map(|(i, &t)| PieceEntry::new(t, i as f64)).collect(),
            merges: merges.iter().map(|&(l, r)| (l.to_string(), r.to_string())).collect(),
            special_tokens: vec![],
            unk_id: None,
            byte_fallback: false,
            normalizer: Normalizer::None,
            pre_tokenizer: PreTokenizer::Whitespace,
            continuation_prefix: String::new(),
        }
    }

    fn table_with(spec: &TokenizerSpec, counts: &[u64]) -> FrequencyTable {
        FrequencyTable {
            counts: counts.to_vec(),
            tokenizer_fingerprint: spec.fingerprint(),
            docs_seen: 1,
            tokens_seen: counts.iter().sum(),
        }
    }

    fn ids(set: &BTreeSet<TokenId>) -> Vec<TokenId> {
        set.iter().copied().collect()
    }

    #[test]
    fn all_observed_with_zero_counts_is_exactly_mandatory() {
        let mut spec = bpe_spec(&["<pad>", "<unk>", "a", "b"], &[]);
        spec.special_tokens.push(SpecialToken { content: "<pad>".into(), id: 0 });
        spec.unk_id = Some(1);
        let table = table_with(&spec, &[0, 0, 0, 0]);
        let kept = select_kept(&table, Policy::AllObserved, &spec).unwrap();
        assert_eq!(ids(&kept), vec![0, 1]);
    }

    #[test]
    fn top_n_sorts_by_count_then_id() {
        // counts a=5, b=3, c=3, d=1; no mandatory tokens.
        let spec = bpe_spec(&["a", "b", "c", "d"], &[]);
        let table = table_with(&spec, &[5, 3, 3, 1]);
        let top3 = select_kept(&table, Policy::TopN(3), &spec).unwrap();
        assert_eq!(ids(&top3), vec![0, 1, 2]);
        let top2 = select_kept(&table, Policy::TopN(2), &spec).unwrap();
        assert_eq!(ids(&top2), vec![0, 1]);
    }

    #[test]
    fn top_n_covering_whole_vocab_keeps_everything() {
        let spec = bpe_spec(&["a", "b", "c"], &[]);
        let table = table_with(&spec, &[0, 1, 0]);
        let kept = select_kept(&table, Policy::TopN(3), &spec).unwrap();
        assert_eq!(kept.len(), 3);
        let oversized = select_kept(&table, Policy::TopN(10), &spec).unwrap();
        assert_eq!(oversized.len(), 3);
    }

    #[test]
    fn top_n_pads_with_unobserved_tokens_to_reach_budget() {
        let spec = bpe_spec(&["a", "b", "c", "d"], &[]);
        let table = table_with(&spec, &[0, 7, 0, 0]);
        let kept = select_kept(&table, Policy::TopN(3), &spec).unwrap();
        // b first, then zero-count ties by id: a, c.
        assert_eq!(ids(&kept), vec![0, 1, 2]);
    }

    #[test]
    fn top_n_below_mandatory_is_rejected() {
        let mut spec = bpe_spec(&["<pad>", "<unk>", "a"], &[]);
        spec.special_tokens.push(SpecialToken { content: "<pad>".into(), id: 0 });
        spec.unk_id = Some(1);
        let table = table_with(&spec, &[0, 0, 9]);
        assert!(matches!(
            select_kept(&table, Policy::TopN(1), &spec),
            Err(PlanError::BudgetTooSmall { budget: 1, mandatory: 2 })
        ));
    }

    #[test]
    fn monotone_budgets_are_nested() {
        let spec = bpe_spec(&["a", "b", "c", "d", "e"], &[]);
        let table = table_with(&spec, &[2, 9, 9, 1, 0]);
        let mut previous = BTreeSet::new();
        for n in 1..=5 {
            let kept = select_kept(&table, Policy::TopN(n), &spec).unwrap();
            assert!(previous.is_subset(&kept), "TopN({n}) lost tokens");
            assert_eq!(kept.len(), n);
            previous = kept;
        }
    }

    #[test]
    fn select_kept_rejects_foreign_table() {
        let spec = bpe_spec(&["a"], &[]);
        let other = bpe_spec(&["a", "b"], &[]);
        let table = table_with(&other, &[1, 1]);
        assert!(matches!(
            select_kept(&table, Policy::AllObserved, &spec),
            Err(PlanError::FingerprintMismatch { .. })
        ));
    }

    #[test]
    fn bpe_closure_traces_derivation_tree() {
        let spec = bpe_spec(&["a", "b", "ab", "abb"], &[("a", "b"), ("ab", "b")]);
        let kept: BTreeSet<TokenId> = [3].into_iter().collect();
        let closed = structural_closure(&kept, &spec, ClosureOptions::default()).unwrap();
        assert_eq!(ids(&closed), vec![0, 1, 2, 3]);
        // Fixed point.
        let again = structural_closure(&closed, &spec, ClosureOptions::default()).unwrap();
        assert_eq!(again, closed);
    }

    #[test]
    fn unigram_closure_is_identity() {
        let spec = TokenizerSpec {
            model_kind: ModelKind::Unigram,
            pieces: vec![PieceEntry::new("a", -1.0), PieceEntry::new("ab", -1.0)],
            merges: vec![],
            special_tokens: vec![],
            unk_id: None,
            byte_fallback: false,
            normalizer: Normalizer::None,
            pre_tokenizer: PreTokenizer::Whitespace,
            continuation_prefix: String::new(),
        };
        let kept: BTreeSet<TokenId> = [1].into_iter().collect();
        assert_eq!(structural_closure(&kept, &spec, ClosureOptions::default()).unwrap(), kept);
    }

    #[test]
    fn closure_reports_missing_derivation() {
        let spec = bpe_spec(&["a", "xy"], &[]);
        let kept: BTreeSet<TokenId> = [1].into_iter().collect();
        assert!(matches!(
            structural_closure(&kept, &spec, ClosureOptions::default()),
            Err(PlanError::DerivationMissing(token)) if token == "xy"
        ));
    }

    #[test]
    fn wordpiece_alphabet_flag_adds_singles_and_continuations() {
        let spec = TokenizerSpec {
            model_kind: ModelKind::WordPiece,
            pieces: ["[UNK]", "a", "##a", "ab", "##ab"]
                .iter()
                .enumerate()
                .map(|(i, &t)| PieceEntry::new(t, i as f64))
                .collect(),
            merges: vec![],
            special_tokens: vec![],
            unk_id: Some(0),
            byte_fallback: false,
            normalizer: Normalizer::None,
            pre_tokenizer: PreTokenizer::Whitespace,
            continuation_prefix: "##".into(),
        };
        let kept: BTreeSet<TokenId> = [0, 3].into_iter().collect();
        let plain = structural_closure(&kept, &spec, ClosureOptions::default()).unwrap();
        assert_eq!(plain, kept);
        let with_alphabet = structural_closure(
            &kept,
            &spec,
            ClosureOptions { wordpiece_keep_alphabet: true },
        )
        .unwrap();
        assert_eq!(ids(&with_alphabet), vec![0, 1, 2, 3]);
    }

    #[test]
    fn full_vocab_plan_is_identity() {
        let spec = bpe_spec(&["a", "b", "ab"], &[("a", "b")]);
        let table = table_with(&spec, &[1, 1, 1]);
        let kept: BTreeSet<TokenId> = (0..3).collect();
        let plan =
            build_plan(&kept, &table, &spec, Policy::AllObserved, ClosureOptions::default())
                .unwrap();
        assert_eq!(plan.kept, vec![0, 1, 2]);
        for id in 0..3 {
            assert_eq!(plan.old_to_new(id), Some(id));
        }
        assert_eq!(plan.trimmed_spec.as_ref().unwrap(), &spec);
    }

    #[test]
    fn merges_are_filtered_to_survivors() {
        let spec = bpe_spec(&["a", "b", "ab", "abb"], &[("a", "b"), ("ab", "b")]);
        let table = table_with(&spec, &[1, 1, 1, 1]);
        let all: BTreeSet<TokenId> = (0..4).collect();
        let plan = build_plan(&all, &table, &spec, Policy::AllObserved, ClosureOptions::default())
            .unwrap();
        assert_eq!(plan.trimmed_spec.as_ref().unwrap().merges.len(), 2);

        let partial: BTreeSet<TokenId> = [0, 1, 2].into_iter().collect();
        let plan =
            build_plan(&partial, &table, &spec, Policy::AllObserved, ClosureOptions::default())
                .unwrap();
        let trimmed = plan.trimmed_spec.as_ref().unwrap();
        assert_eq!(trimmed.merges, vec![("a".to_string(), "b".to_string())]);
        assert_eq!(trimmed.pieces.len(), 3);
    }

    #[test]
    fn build_plan_rejects_unclosed_set() {
        let spec = bpe_spec(&["a", "b", "ab", "abb"], &[("a", "b"), ("ab", "b")]);
        let table = table_with(&spec, &[0, 0, 0, 1]);
        let unclosed: BTreeSet<TokenId> = [0, 1, 3].into_iter().collect(); // missing "ab"
        assert!(matches!(
            build_plan(&unclosed, &table, &spec, Policy::AllObserved, ClosureOptions::default()),
            Err(PlanError::ClosureViolation(token)) if token == "ab"
        ));
    }

    #[test]
    fn build_plan_rejects_missing_mandatory() {
        let mut spec = bpe_spec(&["<unk>", "a"], &[]);
        spec.unk_id = Some(0);
        let table = table_with(&spec, &[0, 3]);
        let kept: BTreeSet<TokenId> = [1].into_iter().collect();
        assert!(matches!(
            build_plan(&kept, &table, &spec, Policy::AllObserved, ClosureOptions::default()),
            Err(PlanError::MandatoryMissing(0))
        ));
    }

    #[test]
    fn reasons_follow_precedence() {
        let mut spec = bpe_spec(&["<pad>", "a", "b", "ab", "abb"], &[("a", "b"), ("ab", "b")]);
        spec.special_tokens.push(SpecialToken { content: "<pad>".into(), id: 0 });
        // Only "abb" observed; its ancestors come in via closure.
        let table = table_with(&spec, &[4, 0, 0, 0, 2]);
        let plan = plan_trim(&table, &spec, Policy::AllObserved, ClosureOptions::default())
            .unwrap();
        assert_eq!(plan.kept, vec![0, 1, 2, 3, 4]);
        assert_eq!(
            plan.reasons,
            vec![
                KeepReason::Special,
                KeepReason::Closure,
                KeepReason::Closure,
                KeepReason::Closure,
                KeepReason::Observed,
            ]
        );
        assert_eq!(plan.counts, vec![4, 0, 0, 0, 2]);
    }

    #[test]
    fn apply_plan_remaps_and_rejects_dropped() {
        let spec = bpe_spec(&["a", "b", "c", "d", "e", "f"], &[]);
        let table = table_with(&spec, &[1, 0, 1, 0, 0, 1]);
        let plan = plan_trim(&table, &spec, Policy::AllObserved, ClosureOptions::default())
            .unwrap();
        assert_eq!(plan.kept, vec![0, 2, 5]);
        assert_eq!(apply_plan_to_ids(&[5, 0, 2], &plan).unwrap(), vec![2, 0, 1]);
        assert!(matches!(
            apply_plan_to_ids(&[1], &plan),
            Err(PlanError::DroppedToken(1))
        ));
    }

    #[test]
    fn plan_files_round_trip() {
        let mut spec = bpe_spec(&["<unk>", "a", "b", "ab"], &[("a", "b")]);
        spec.unk_id = Some(0);
        let table = table_with(&spec, &[0, 3, 0, 2]);
        let plan = plan_trim(&table, &spec, Policy::TopN(3), ClosureOptions::default()).unwrap();
        let bytes = save_plan(&plan);
        let loaded = load_plan(&bytes).unwrap();
        assert_eq!(loaded.kept, plan.kept);
        assert_eq!(loaded.reasons, plan.reasons);
        assert_eq!(loaded.counts, plan.counts);
        assert_eq!(loaded.source_fingerprint, plan.source_fingerprint);
        assert_eq!(loaded.policy, plan.policy);
        assert_eq!(loaded.trimmed_spec, None);
        // Determinism: same inputs, byte-identical plan files.
        let again = plan_trim(&table, &spec, Policy::TopN(3), ClosureOptions::default()).unwrap();
        assert_eq!(save_plan(&again), bytes);
    }

    #[test]
    fn load_plan_rejects_malformed_rows() {
        assert!(matches!(load_plan(b""), Err(PlanError::Format(_))));
        let bad_order =
            b"#vt-plan\t1\t0000000000000000\t2\tall-observed\n3\t0\tobserved\t1\n1\t1\tobserved\t1\n";
        assert!(matches!(load_plan(bad_order), Err(PlanError::Format(_))));
        let bad_count = b"#vt-plan\t1\t0000000000000000\t2\tall-observed\n0\t0\tobserved\t1\n";
        assert!(matches!(load_plan(bad_count), Err(PlanError::Format(_))));
    }

    #[test]
    fn trim_equivalence_on_counting_corpus() {
        // AllObserved: every counted line re-encodes identically (after remap)
        // under the trimmed tokenizer.
        let spec = TokenizerSpec {
            model_kind: ModelKind::Unigram,
            pieces: [
                ("▁a", -1.0),
                ("▁b", -1.5),
                ("a", -2.0),
                ("b", -2.1),
                ("▁ab", -1.2),
                ("▁ba", -2.6),
                ("▁", -3.0),
                ("zzz", -9.0),
            ]
            .iter()
            .map(|&(t, s)| PieceEntry::new(t, s))
            .collect(),
            merges: vec![],
            special_tokens: vec![],
            unk_id: None,
            byte_fallback: false,
            normalizer: Normalizer::None,
            pre_tokenizer: PreTokenizer::Metaspace { replacement: '▁', add_prefix_space: true },
            continuation_prefix: String::new(),
        };
        let corpus = "ab ba\na b ab\nba ab a\nb b b";
        let table =
            count_corpus(lines_from_str(corpus), &spec, CountUnit::Token).unwrap().table;
        let plan = plan_trim(&table, &spec, Policy::AllObserved, ClosureOptions::default())
            .unwrap();
        let trimmed = plan.trimmed_spec.as_ref().unwrap();
        assert!(plan.kept.len() < spec.vocab_size(), "something must be dropped");
        for line in corpus.lines() {
            let original = encode_text(line, &spec).unwrap();
            let remapped = apply_plan_to_ids(&original, &plan).unwrap();
            let re_encoded = encode_text(line, trimmed).unwrap();
            assert_eq!(remapped, re_encoded, "line {line:?}");
        }
        // The trimmed document serializes cleanly.
        let doc = serialize_tokenizer(trimmed);
        assert!(!doc.is_empty());
    }
}
