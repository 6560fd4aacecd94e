//! `vt` — trim a multilingual LM's vocabulary to a target language.
//!
//! Five composable subcommands: `count` (corpus → frequency table), `plan`
//! (table → trim plan + trimmed tokenizer), `trim` (plan + checkpoint →
//! trimmed checkpoint), `report` (plan + profile → size accounting), and
//! `verify` (end-to-end audit of produced artifacts). Progress goes to
//! stderr; data goes to stdout or files.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand, ValueEnum};

use vt_core::freq::{
    corpus_lines, count_corpus_sharded, load_table, save_table, CountUnit, FreqError,
};
use vt_core::plan::{
    apply_plan_to_ids, derive_trimmed_spec, load_plan, plan_trim, save_plan, ClosureOptions,
    PlanError, Policy, TrimPlan,
};
use vt_core::profile::{ModelProfile, ProfileError};
use vt_core::report::{build_report, ReportError};
use vt_core::surgeon::{
    read_container, rewrite_config, trim_checkpoint, write_container, SurgeonError, TensorStore,
};
use vt_core::tokenizer::{
    parse_tokenizer, serialize_tokenizer, Encoder, TokenizerError, TokenizerSpec,
};

#[derive(Parser)]
#[command(name = "vt", version, about = "Vocabulary trimming for multilingual LM checkpoints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum CountUnitArg {
    Token,
    Doc,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Table,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Stream corpora through a tokenizer and write a frequency table.
    Count {
        #[arg(long, value_name = "FILE")]
        tokenizer: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Count every token occurrence, or each token once per document.
        #[arg(long = "count-unit", value_enum, default_value = "token")]
        count_unit: CountUnitArg,
        /// Parallel shard workers; output is identical for any worker count.
        #[arg(long = "shard-workers", default_value_t = 1)]
        shard_workers: usize,
        /// Newline-delimited text, plain or gzip.
        #[arg(required = true, value_name = "CORPUS")]
        corpus: Vec<PathBuf>,
    },
    /// Turn a frequency table into a trim plan and a trimmed tokenizer.
    #[command(group(ArgGroup::new("policy").required(true).args(["all_observed", "top_n"])))]
    Plan {
        #[arg(long, value_name = "FILE")]
        tokenizer: PathBuf,
        #[arg(long, value_name = "FILE")]
        freq: PathBuf,
        /// Keep every token observed in the corpus.
        #[arg(long = "all-observed")]
        all_observed: bool,
        /// Keep the n most frequent tokens (budget includes mandatory tokens).
        #[arg(long = "top-n", value_name = "N", value_parser = clap::value_parser!(u64).range(1..))]
        top_n: Option<u64>,
        #[arg(long = "out-plan", value_name = "FILE")]
        out_plan: PathBuf,
        #[arg(long = "out-tokenizer", value_name = "FILE")]
        out_tokenizer: PathBuf,
        /// WordPiece: also keep the single-character alphabet.
        #[arg(long = "wordpiece-alphabet-keep")]
        wordpiece_alphabet_keep: bool,
    },
    /// Apply a plan to a checkpoint, slicing its vocabulary-indexed tensors.
    Trim {
        #[arg(long, value_name = "FILE")]
        plan: PathBuf,
        /// Built-in profile name, profile file path, or name under VT_PROFILE_PATH.
        #[arg(long)]
        profile: String,
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Model configuration document to rewrite alongside the checkpoint.
        #[arg(long, value_name = "FILE", requires = "out_config")]
        config: Option<PathBuf>,
        #[arg(long = "out-config", value_name = "FILE", requires = "config")]
        out_config: Option<PathBuf>,
    },
    /// Report vocabulary and parameter accounting for a plan.
    Report {
        #[arg(long, value_name = "FILE")]
        plan: PathBuf,
        #[arg(long)]
        profile: String,
        #[arg(long, value_enum, default_value = "table")]
        format: FormatArg,
    },
    /// Audit produced artifacts: tokenizer equivalence and checkpoint fidelity.
    Verify {
        #[arg(long, value_name = "FILE")]
        plan: PathBuf,
        #[arg(long, value_name = "FILE")]
        tokenizer: PathBuf,
        #[arg(long = "trimmed-tokenizer", value_name = "FILE")]
        trimmed_tokenizer: PathBuf,
        #[arg(long = "in", value_name = "FILE", requires = "out")]
        input: Option<PathBuf>,
        #[arg(long, value_name = "FILE", requires = "input")]
        out: Option<PathBuf>,
        /// Corpus sample to re-encode under both tokenizers.
        #[arg(long, value_name = "CORPUS")]
        sample: Option<PathBuf>,
    },
}

#[derive(Debug, thiserror::Error)]
enum AppError {
    #[error("{path}: {source}", path = path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Freq(#[from] FreqError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Surgeon(#[from] SurgeonError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("verification failed: {0}")]
    Audit(String),
}

impl AppError {
    /// Exit-code contract: 2 schema, 3 I/O, 4 fingerprint mismatch,
    /// 5 budget too small, 6 profile/axis mismatch, 1 failed audit.
    fn exit_code(&self) -> u8 {
        match self {
            AppError::Io { .. } => 3,
            AppError::Tokenizer(_) => 2,
            AppError::Freq(err) => match err {
                FreqError::Io(_) => 3,
                FreqError::FingerprintMismatch { .. } => 4,
                FreqError::Format(_) => 2,
            },
            AppError::Plan(err) => match err {
                PlanError::FingerprintMismatch { .. } => 4,
                PlanError::BudgetTooSmall { .. } => 5,
                _ => 2,
            },
            AppError::Surgeon(err) => match err {
                SurgeonError::Header(_)
                | SurgeonError::Bounds(_)
                | SurgeonError::Dtype(_)
                | SurgeonError::Config(_) => 2,
                _ => 6,
            },
            AppError::Profile(_) | AppError::Report(_) => 6,
            AppError::Audit(_) => 1,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("vt: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(cause) = source {
                eprintln!("vt:   caused by: {cause}");
                source = cause.source();
            }
            ExitCode::from(err.exit_code())
        }
    }
}

fn run(command: Command) -> Result<(), AppError> {
    match command {
        Command::Count { tokenizer, out, count_unit, shard_workers, corpus } => {
            cmd_count(&tokenizer, &out, count_unit, shard_workers, &corpus)
        }
        Command::Plan {
            tokenizer,
            freq,
            all_observed,
            top_n,
            out_plan,
            out_tokenizer,
            wordpiece_alphabet_keep,
        } => {
            let policy = if all_observed {
                Policy::AllObserved
            } else {
                Policy::TopN(top_n.expect("clap enforces the policy group") as usize)
            };
            let options = ClosureOptions { wordpiece_keep_alphabet: wordpiece_alphabet_keep };
            cmd_plan(&tokenizer, &freq, policy, options, &out_plan, &out_tokenizer)
        }
        Command::Trim { plan, profile, input, out, config, out_config } => {
            cmd_trim(&plan, &profile, &input, &out, config.as_deref(), out_config.as_deref())
        }
        Command::Report { plan, profile, format } => cmd_report(&plan, &profile, format),
        Command::Verify { plan, tokenizer, trimmed_tokenizer, input, out, sample } => cmd_verify(
            &plan,
            &tokenizer,
            &trimmed_tokenizer,
            input.as_deref(),
            out.as_deref(),
            sample.as_deref(),
        ),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, AppError> {
    std::fs::read(path).map_err(|source| AppError::Io { path: path.to_path_buf(), source })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), AppError> {
    std::fs::write(path, bytes).map_err(|source| AppError::Io { path: path.to_path_buf(), source })
}

fn load_tokenizer(path: &Path) -> Result<TokenizerSpec, AppError> {
    Ok(parse_tokenizer(&read_file(path)?)?)
}

fn write_stdout(line: String) -> Result<(), AppError> {
    writeln!(std::io::stdout().lock(), "{line}")
        .map_err(|source| AppError::Io { path: PathBuf::from("<stdout>"), source })
}

fn profile_search_dirs() -> Vec<PathBuf> {
    match std::env::var_os("VT_PROFILE_PATH") {
        Some(paths) => std::env::split_paths(&paths).collect(),
        None => Vec::new(),
    }
}

fn resolve_profile(spec: &str) -> Result<ModelProfile, AppError> {
    Ok(ModelProfile::resolve(spec, &profile_search_dirs())?)
}

fn cmd_count(
    tokenizer: &Path,
    out: &Path,
    unit: CountUnitArg,
    workers: usize,
    corpus: &[PathBuf],
) -> Result<(), AppError> {
    let spec = load_tokenizer(tokenizer)?;
    let unit = match unit {
        CountUnitArg::Token => CountUnit::Token,
        CountUnitArg::Doc => CountUnit::Document,
    };
    let mut readers = Vec::with_capacity(corpus.len());
    for path in corpus {
        eprintln!("counting {}", path.display());
        readers
            .push(corpus_lines(path).map_err(|source| AppError::Io { path: path.clone(), source })?);
    }
    let outcome = count_corpus_sharded(readers.into_iter().flatten(), &spec, unit, workers)?;
    write_file(out, &save_table(&outcome.table, &spec)?)?;
    let distinct = outcome.table.counts.iter().filter(|&&c| c > 0).count();
    write_stdout(format!(
        "docs={} tokens={} distinct={} skipped={}",
        outcome.table.docs_seen, outcome.table.tokens_seen, distinct, outcome.skipped_lines
    ))
}

fn cmd_plan(
    tokenizer: &Path,
    freq: &Path,
    policy: Policy,
    options: ClosureOptions,
    out_plan: &Path,
    out_tokenizer: &Path,
) -> Result<(), AppError> {
    let spec = load_tokenizer(tokenizer)?;
    let table = load_table(&read_file(freq)?)?;
    let plan = plan_trim(&table, &spec, policy, options)?;
    write_file(out_plan, &save_plan(&plan))?;
    let trimmed = plan.trimmed_spec.as_ref().expect("built plans carry the trimmed spec");
    write_file(out_tokenizer, &serialize_tokenizer(trimmed))?;
    let mut reason_counts: std::collections::BTreeMap<&str, u64> = Default::default();
    for reason in &plan.reasons {
        *reason_counts.entry(reason.as_str()).or_default() += 1;
    }
    let summary: Vec<String> =
        reason_counts.iter().map(|(reason, count)| format!("{reason}={count}")).collect();
    write_stdout(format!(
        "kept={} of {} ({})",
        plan.kept.len(),
        spec.vocab_size(),
        summary.join(" ")
    ))
}

fn cmd_trim(
    plan_path: &Path,
    profile: &str,
    input: &Path,
    out: &Path,
    config: Option<&Path>,
    out_config: Option<&Path>,
) -> Result<(), AppError> {
    let plan = load_plan(&read_file(plan_path)?)?;
    let profile = resolve_profile(profile)?;
    let store = read_container(&read_file(input)?)?;
    let trimmed = trim_checkpoint(&store, &profile, &plan)?;
    write_file(out, &write_container(&trimmed))?;
    eprintln!(
        "trimmed checkpoint written: {} tensors, vocabulary {}",
        trimmed.tensors.len(),
        plan.new_vocab_size()
    );
    if let (Some(config), Some(out_config)) = (config, out_config) {
        let rewritten = rewrite_config(&read_file(config)?, &profile, plan.new_vocab_size())?;
        write_file(out_config, &rewritten)?;
    }
    Ok(())
}

fn cmd_report(plan_path: &Path, profile: &str, format: FormatArg) -> Result<(), AppError> {
    let plan = load_plan(&read_file(plan_path)?)?;
    let profile = resolve_profile(profile)?;
    let report = build_report(&plan, &profile)?;
    let rendered = match format {
        FormatArg::Table => report.to_table(),
        FormatArg::Json => format!("{}\n", report.to_json()),
    };
    print!("{rendered}");
    Ok(())
}

fn cmd_verify(
    plan_path: &Path,
    tokenizer: &Path,
    trimmed_tokenizer: &Path,
    input: Option<&Path>,
    out: Option<&Path>,
    sample: Option<&Path>,
) -> Result<(), AppError> {
    let spec = load_tokenizer(tokenizer)?;
    let plan = load_plan(&read_file(plan_path)?)?;
    let fingerprint = spec.fingerprint();
    if fingerprint != plan.source_fingerprint {
        return Err(AppError::Plan(PlanError::FingerprintMismatch {
            table: plan.source_fingerprint,
            tokenizer: fingerprint,
        }));
    }
    if plan.kept.iter().any(|&id| id as usize >= spec.vocab_size()) {
        return Err(AppError::Audit("plan keeps ids beyond the tokenizer vocabulary".into()));
    }

    let trimmed = load_tokenizer(trimmed_tokenizer)?;
    let derived = derive_trimmed_spec(&spec, &plan.kept);
    if trimmed != derived {
        return Err(AppError::Audit(format!(
            "{} does not match the tokenizer derived from the plan",
            trimmed_tokenizer.display()
        )));
    }
    eprintln!("tokenizer: trimmed document matches the plan");

    if let Some(sample) = sample {
        let (covered, mismatched, uncovered) = audit_sample(sample, &spec, &trimmed, &plan)?;
        if mismatched > 0 {
            return Err(AppError::Audit(format!(
                "{mismatched} of {covered} fully-kept sample lines re-encode differently"
            )));
        }
        eprintln!(
            "sample: {covered} lines re-encode identically, {uncovered} lines use dropped tokens"
        );
    }

    if let (Some(input), Some(out)) = (input, out) {
        let before = read_container(&read_file(input)?)?;
        let after = read_container(&read_file(out)?)?;
        audit_checkpoint_pair(&before, &after, &plan)?;
        eprintln!("checkpoint: row fidelity and non-vocab isolation hold");
    }
    Ok(())
}

fn audit_sample(
    sample: &Path,
    spec: &TokenizerSpec,
    trimmed: &TokenizerSpec,
    plan: &TrimPlan,
) -> Result<(u64, u64, u64), AppError> {
    let source = Encoder::new(spec);
    let target = Encoder::new(trimmed);
    let mut covered = 0u64;
    let mut mismatched = 0u64;
    let mut uncovered = 0u64;
    let lines = corpus_lines(sample)
        .map_err(|source| AppError::Io { path: sample.to_path_buf(), source })?;
    for line in lines {
        let line = line.map_err(|source| AppError::Io { path: sample.to_path_buf(), source })?;
        let Ok(text) = std::str::from_utf8(&line) else {
            uncovered += 1;
            continue;
        };
        let Ok(original) = source.encode_text(text) else {
            uncovered += 1;
            continue;
        };
        match apply_plan_to_ids(&original, plan) {
            Ok(remapped) => {
                covered += 1;
                let re_encoded = target
                    .encode_text(text)
                    .map_err(|e| AppError::Audit(format!("trimmed tokenizer failed: {e}")))?;
                if re_encoded != remapped {
                    mismatched += 1;
                }
            }
            Err(_) => uncovered += 1,
        }
    }
    Ok((covered, mismatched, uncovered))
}

/// Checks a checkpoint pair without a profile: equal-shaped tensors must be
/// bytewise identical; reshaped tensors must differ on exactly one axis,
/// shrunk to the kept count, with every kept slab copied bytewise.
fn audit_checkpoint_pair(
    before: &TensorStore,
    after: &TensorStore,
    plan: &TrimPlan,
) -> Result<(), AppError> {
    for name in after.tensors.keys() {
        if !before.tensors.contains_key(name) {
            return Err(AppError::Audit(format!("tensor {name:?} appears only in the output")));
        }
    }
    for (name, src) in &before.tensors {
        let Some(dst) = after.tensors.get(name) else {
            return Err(AppError::Audit(format!("tensor {name:?} is missing from the output")));
        };
        if src.dtype != dst.dtype {
            return Err(AppError::Audit(format!("tensor {name:?} changed dtype")));
        }
        if src.shape == dst.shape {
            if src.data != dst.data {
                return Err(AppError::Audit(format!(
                    "unsliced tensor {name:?} is not bytewise identical"
                )));
            }
            continue;
        }
        if src.shape.len() != dst.shape.len() {
            return Err(AppError::Audit(format!("tensor {name:?} changed rank")));
        }
        let differing: Vec<usize> = (0..src.shape.len())
            .filter(|&axis| src.shape[axis] != dst.shape[axis])
            .collect();
        let axis = match differing.as_slice() {
            &[axis] => axis,
            _ => {
                return Err(AppError::Audit(format!(
                    "tensor {name:?} changed on more than one axis"
                )))
            }
        };
        if dst.shape[axis] != plan.kept.len() {
            return Err(AppError::Audit(format!(
                "tensor {name:?} axis {axis} has extent {}, expected kept count {}",
                dst.shape[axis],
                plan.kept.len()
            )));
        }
        let extent = src.shape[axis];
        if plan.kept.iter().any(|&id| id as usize >= extent) {
            return Err(AppError::Audit(format!(
                "tensor {name:?} axis {axis} extent {extent} cannot contain all kept ids"
            )));
        }
        let elem = src.dtype.element_size();
        let slab = src.shape[axis + 1..].iter().product::<usize>() * elem;
        let outer: usize = src.shape[..axis].iter().product();
        for block in 0..outer {
            let src_base = block * extent * slab;
            let dst_base = block * plan.kept.len() * slab;
            for (new_id, &old_id) in plan.kept.iter().enumerate() {
                let src_at = src_base + old_id as usize * slab;
                let dst_at = dst_base + new_id * slab;
                if src.data[src_at..src_at + slab] != dst.data[dst_at..dst_at + slab] {
                    return Err(AppError::Audit(format!(
                        "tensor {name:?}: row {old_id} (new id {new_id}) is not a bytewise copy"
                    )));
                }
            }
        }
    }
    Ok(())
}
