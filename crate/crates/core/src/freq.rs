//! Corpus streaming and per-token occurrence counting.
//!
//! [`count_corpus`] streams newline-delimited text through a tokenizer and
//! accumulates counts into a dense table, using memory proportional to the
//! vocabulary plus the longest line, never the corpus. Sharded counting with
//! [`count_corpus_sharded`] produces bit-identical results for any worker
//! count because the per-shard tables are merged with exact integer sums.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Read};
use std::path::Path;
use std::sync::mpsc;

use flate2::read::MultiGzDecoder;

use crate::tokenizer::{Encoder, TokenizerSpec};

#[derive(Debug, thiserror::Error)]
pub enum FreqError {
    #[error("corpus I/O failed: {0}")]
    Io(#[from] io::Error),
    #[error("tokenizer fingerprint mismatch: table has {table:016x}, tokenizer has {tokenizer:016x}")]
    FingerprintMismatch { table: u64, tokenizer: u64 },
    #[error("malformed frequency table: {0}")]
    Format(String),
}

type Result<T> = std::result::Result<T, FreqError>;

/// Counting unit: every token occurrence, or once per document.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountUnit {
    Token,
    Document,
}

/// Dense per-token occurrence counts tied to a specific tokenizer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyTable {
    /// `counts[id]` = occurrences of token `id`; length = vocabulary size.
    pub counts: Vec<u64>,
    /// Fingerprint of the canonical serialized tokenizer the counts refer to.
    pub tokenizer_fingerprint: u64,
    /// Lines counted.
    pub docs_seen: u64,
    /// Always equals the sum of `counts`.
    pub tokens_seen: u64,
}

impl FrequencyTable {
    pub fn zero(spec: &TokenizerSpec) -> Self {
        Self {
            counts: vec![0; spec.vocab_size()],
            tokenizer_fingerprint: spec.fingerprint(),
            docs_seen: 0,
            tokens_seen: 0,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.counts.len()
    }
}

/// Result of a counting run. Skipped lines (invalid UTF-8, or words the
/// tokenizer cannot cover at all) are tallied but never counted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountOutcome {
    pub table: FrequencyTable,
    pub skipped_lines: u64,
}

/// Streams lines (without trailing newlines) through the tokenizer and
/// counts emitted tokens.
pub fn count_corpus<I>(lines: I, spec: &TokenizerSpec, unit: CountUnit) -> Result<CountOutcome>
where
    I: IntoIterator<Item = io::Result<Vec<u8>>>,
{
    let encoder = Encoder::new(spec);
    let mut table = FrequencyTable::zero(spec);
    let mut skipped = 0u64;
    let mut scratch = Vec::new();
    for line in lines {
        count_line(&line?, &encoder, unit, &mut table, &mut skipped, &mut scratch);
    }
    table.tokens_seen = table.counts.iter().sum();
    Ok(CountOutcome { table, skipped_lines: skipped })
}

fn count_line(
    line: &[u8],
    encoder: &Encoder<'_>,
    unit: CountUnit,
    table: &mut FrequencyTable,
    skipped: &mut u64,
    scratch: &mut Vec<u32>,
) {
    let Ok(text) = std::str::from_utf8(line) else {
        *skipped += 1;
        return;
    };
    let Ok(ids) = encoder.encode_text(text) else {
        *skipped += 1;
        return;
    };
    table.docs_seen += 1;
    match unit {
        CountUnit::Token => {
            for id in ids {
                table.counts[id as usize] += 1;
            }
        }
        CountUnit::Document => {
            scratch.clear();
            scratch.extend(ids);
            scratch.sort_unstable();
            scratch.dedup();
            for &id in scratch.iter() {
                table.counts[id as usize] += 1;
            }
        }
    }
}

/// Parallel counting: lines are dealt round-robin to `workers` shard threads
/// and the shard tables are merged in worker order. Output is bit-identical
/// to [`count_corpus`].
pub fn count_corpus_sharded<I>(
    lines: I,
    spec: &TokenizerSpec,
    unit: CountUnit,
    workers: usize,
) -> Result<CountOutcome>
where
    I: IntoIterator<Item = io::Result<Vec<u8>>>,
{
    if workers <= 1 {
        return count_corpus(lines, spec, unit);
    }
    let mut io_failure: Option<io::Error> = None;
    let shards: Vec<CountOutcome> = std::thread::scope(|scope| {
        let mut senders = Vec::with_capacity(workers);
        let mut handles = Vec::with_capacity(workers);
        for _ in 0..workers {
            let (tx, rx) = mpsc::sync_channel::<Vec<u8>>(256);
            senders.push(tx);
            handles.push(scope.spawn(move || {
                let encoder = Encoder::new(spec);
                let mut table = FrequencyTable::zero(spec);
                let mut skipped = 0u64;
                let mut scratch = Vec::new();
                while let Ok(line) = rx.recv() {
                    count_line(&line, &encoder, unit, &mut table, &mut skipped, &mut scratch);
                }
                table.tokens_seen = table.counts.iter().sum();
                CountOutcome { table, skipped_lines: skipped }
            }));
        }
        for (seq, line) in lines.into_iter().enumerate() {
            match line {
                Ok(line) => {
                    if senders[seq % workers].send(line).is_err() {
                        break; // worker panicked; surfaced by join below
                    }
                }
                Err(err) => {
                    io_failure = Some(err);
                    break;
                }
            }
        }
        drop(senders);
        handles.into_iter().map(|h| h.join().expect("shard worker panicked")).collect()
    });
    if let Some(err) = io_failure {
        return Err(err.into());
    }
    let mut merged = CountOutcome {
        table: FrequencyTable::zero(spec),
        skipped_lines: 0,
    };
    for shard in shards {
        merged.table = merge_tables(&merged.table, &shard.table)?;
        merged.skipped_lines += shard.skipped_lines;
    }
    Ok(merged)
}

/// Element-wise sum of two tables over the same tokenizer. Commutative and
/// associative, with the zero table as identity.
pub fn merge_tables(a: &FrequencyTable, b: &FrequencyTable) -> Result<FrequencyTable> {
    if a.tokenizer_fingerprint != b.tokenizer_fingerprint {
        return Err(FreqError::FingerprintMismatch {
            table: a.tokenizer_fingerprint,
            tokenizer: b.tokenizer_fingerprint,
        });
    }
    if a.counts.len() != b.counts.len() {
        return Err(FreqError::Format(format!(
            "table lengths differ: {} vs {}",
            a.counts.len(),
            b.counts.len()
        )));
    }
    Ok(FrequencyTable {
        counts: a.counts.iter().zip(&b.counts).map(|(x, y)| x + y).collect(),
        tokenizer_fingerprint: a.tokenizer_fingerprint,
        docs_seen: a.docs_seen + b.docs_seen,
        tokens_seen: a.tokens_seen + b.tokens_seen,
    })
}

pub fn escape_token(token: &str) -> String {
    let mut out = String::with_capacity(token.len());
    for ch in token.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            other => out.push(other),
        }
    }
    out
}

pub fn unescape_token(escaped: &str) -> Result<String> {
    let mut out = String::with_capacity(escaped.len());
    let mut chars = escaped.chars();
    while let Some(ch) = chars.next() {
        if ch != '\\' {
            out.push(ch);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            other => {
                return Err(FreqError::Format(format!("bad escape \\{other:?}")));
            }
        }
    }
    Ok(out)
}

/// Serializes a table as the dense TSV format. The spec supplies the token
/// strings and must be the table's fingerprinted tokenizer.
pub fn save_table(table: &FrequencyTable, spec: &TokenizerSpec) -> Result<Vec<u8>> {
    let fingerprint = spec.fingerprint();
    if fingerprint != table.tokenizer_fingerprint {
        return Err(FreqError::FingerprintMismatch {
            table: table.tokenizer_fingerprint,
            tokenizer: fingerprint,
        });
    }
    if spec.vocab_size() != table.counts.len() {
        return Err(FreqError::Format(format!(
            "table length {} does not match vocabulary size {}",
            table.counts.len(),
            spec.vocab_size()
        )));
    }
    let mut out = String::new();
    out.push_str(&format!(
        "#vt-freq\t1\t{:016x}\t{}\t{}\n",
        table.tokenizer_fingerprint, table.docs_seen, table.tokens_seen
    ));
    for (id, count) in table.counts.iter().enumerate() {
        out.push_str(&format!(
            "{id}\t{}\t{count}\n",
            escape_token(&spec.pieces[id].token)
        ));
    }
    Ok(out.into_bytes())
}

/// Parses a table file. Token strings are provenance only and are not
/// retained beyond escape validation.
pub fn load_table(bytes: &[u8]) -> Result<FrequencyTable> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| FreqError::Format(format!("not UTF-8: {e}")))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| FreqError::Format("empty file".into()))?;
    let fields: Vec<&str> = header.split('\t').collect();
    if fields.len() != 5 || fields[0] != "#vt-freq" || fields[1] != "1" {
        return Err(FreqError::Format(format!("bad header {header:?}")));
    }
    let fingerprint = u64::from_str_radix(fields[2], 16)
        .map_err(|e| FreqError::Format(format!("bad fingerprint: {e}")))?;
    let docs_seen: u64 =
        fields[3].parse().map_err(|e| FreqError::Format(format!("bad docs_seen: {e}")))?;
    let tokens_seen: u64 =
        fields[4].parse().map_err(|e| FreqError::Format(format!("bad tokens_seen: {e}")))?;

    let mut counts = Vec::new();
    for line in lines {
        let mut cols = line.split('\t');
        let (id, token, count) = match (cols.next(), cols.next(), cols.next(), cols.next()) {
            (Some(id), Some(token), Some(count), None) => (id, token, count),
            _ => return Err(FreqError::Format(format!("bad row {line:?}"))),
        };
        let id: usize = id.parse().map_err(|e| FreqError::Format(format!("bad id: {e}")))?;
        if id != counts.len() {
            return Err(FreqError::Format(format!(
                "ids must be dense ascending; expected {}, found {id}",
                counts.len()
            )));
        }
        unescape_token(token)?;
        let count: u64 =
            count.parse().map_err(|e| FreqError::Format(format!("bad count: {e}")))?;
        counts.push(count);
    }
    if counts.iter().sum::<u64>() != tokens_seen {
        return Err(FreqError::Format(
            "tokens_seen does not equal the sum of counts".into(),
        ));
    }
    Ok(FrequencyTable { counts, tokenizer_fingerprint: fingerprint, docs_seen, tokens_seen })
}

/// Opens a corpus file as a line iterator, transparently decompressing gzip
/// (sniffed from the 0x1f 0x8b magic bytes). Lines are yielded without their
/// trailing newline.
pub fn corpus_lines(path: &Path) -> io::Result<LineIter> {
    let mut file = File::open(path)?;
    let mut magic = [0u8; 2];
    let got = read_up_to(&mut file, &mut magic)?;
    let reader: Box<dyn Read> = if got == 2 && magic == [0x1f, 0x8b] {
        Box::new(MultiGzDecoder::new(Prepend { head: magic.to_vec(), inner: file }))
    } else {
        Box::new(Prepend { head: magic[..got].to_vec(), inner: file })
    };
    Ok(LineIter { reader: BufReader::new(reader) })
}

fn read_up_to(reader: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..])? {
            0 => break,
            n => filled += n,
        }
    }
    Ok(filled)
}

/// Replays sniffed magic bytes before the rest of the stream.
struct Prepend {
    head: Vec<u8>,
    inner: File,
}

impl Read for Prepend {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if !self.head.is_empty() {
            let n = self.head.len().min(buf.len());
            buf[..n].copy_from_slice(&self.head[..n]);
            self.head.drain(..n);
            return Ok(n);
        }
        self.inner.read(buf)
    }
}

pub struct LineIter {
    reader: BufReader<Box<dyn Read>>,
}

impl Iterator for LineIter {
    type Item = io::Result<Vec<u8>>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut line = Vec::new();
        match self.reader.read_until(b'\n', &mut line) {
            Ok(0) => None,
            Ok(_) => {
                if line.last() == Some(&b'\n') {
                    line.pop();
                }
                Some(Ok(line))
            }
            Err(err) => Some(Err(err)),
        }
    }
}

/// Convenience for in-memory corpora.
pub fn lines_from_str(text: &str) -> impl Iterator<Item = io::Result<Vec<u8>>> + '_ {
    text.lines().map(|l| Ok(l.as_bytes().to_vec()))
}
