//! Report ingestion, sentence segmentation and bag-of-words construction.

mod normalize;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use normalize::{normalize, stem, PreprocessConfig, StemRule};

const DEFAULT_ABBREVIATIONS: &str = include_str!("../../data/abbreviations.txt");

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record at line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("duplicate report_id {id:?} at line {line}")]
    DuplicateReportId { id: String, line: usize },
    #[error("malformed stem rule at line {line}: {content:?}")]
    MalformedRule { line: usize, content: String },
}

/// Input formats accepted by [`ingest_reports`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    /// One JSON object per line with `report_id`, optional `accession`,
    /// and `text` fields.
    Jsonl,
}

/// One sentence of a report with its normalized tokens and the byte span
/// it occupies in the original text.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sentence {
    pub index: usize,
    pub raw: String,
    pub tokens: Vec<String>,
    pub char_span: (usize, usize),
}

/// A parsed report: raw text plus its sentences.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub report_id: String,
    pub accession: Option<String>,
    pub text: String,
    pub sentences: Vec<Sentence>,
}

impl Report {
    /// Segment and normalize `text` into sentences under `config`.
    pub fn new(
        report_id: impl Into<String>,
        accession: Option<String>,
        text: impl Into<String>,
        config: &PreprocessConfig,
    ) -> Report {
        let text = text.into();
        let sentences = split_sentences(&text)
            .into_iter()
            .enumerate()
            .map(|(index, (start, end))| Sentence {
                index,
                raw: text[start..end].to_string(),
                tokens: normalize(&text[start..end], config),
                char_span: (start, end),
            })
            .collect();
        Report {
            report_id: report_id.into(),
            accession,
            text,
            sentences,
        }
    }

    /// All normalized tokens of the report, in sentence order.
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.sentences.iter().flat_map(|s| s.tokens.iter().map(String::as_str))
    }
}

#[derive(Deserialize)]
struct RawRecord {
    report_id: String,
    #[serde(default)]
    accession: Option<String>,
    text: String,
}

/// Read a JSONL report collection, preserving file order.
pub fn ingest_reports(
    path: &Path,
    format: CorpusFormat,
    config: &PreprocessConfig,
) -> Result<Vec<Report>, CorpusError> {
    let CorpusFormat::Jsonl = format;
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut reports = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RawRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedLine {
                line: line_no,
                reason: e.to_string(),
            })?;
        if let Some(first) = seen.insert(record.report_id.clone(), line_no) {
            let _ = first;
            return Err(CorpusError::DuplicateReportId {
                id: record.report_id,
                line: line_no,
            });
        }
        reports.push(Report::new(record.report_id, record.accession, record.text, config));
    }
    Ok(reports)
}

/// Sentence boundaries: `[.?!]` followed by whitespace and an uppercase
/// letter or digit, except after a listed abbreviation. Returns trimmed
/// byte spans that cover every non-whitespace character exactly once.
pub fn split_sentences(text: &str) -> Vec<(usize, usize)> {
    let abbreviations: Vec<&str> = DEFAULT_ABBREVIATIONS
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect();
    let bytes = text.as_bytes();
    let mut cuts = Vec::new(); // byte offsets where a new sentence starts
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    for (ci, &(pos, ch)) in chars.iter().enumerate() {
        if ch != '.' && ch != '?' && ch != '!' {
            continue;
        }
        // Require whitespace, then an uppercase letter or digit.
        let mut j = ci + 1;
        if j >= chars.len() || !chars[j].1.is_whitespace() {
            continue;
        }
        while j < chars.len() && chars[j].1.is_whitespace() {
            j += 1;
        }
        if j >= chars.len() {
            continue;
        }
        let next = chars[j].1;
        if !(next.is_ascii_uppercase() || next.is_ascii_digit()) {
            continue;
        }
        if ch == '.' && ends_with_abbreviation(text, pos, &abbreviations) {
            continue;
        }
        cuts.push(pos + ch.len_utf8());
    }
    let mut spans = Vec::new();
    let mut start = 0;
    for cut in cuts.into_iter().chain(std::iter::once(bytes.len())) {
        if let Some(span) = trim_span(text, start, cut) {
            spans.push(span);
        }
        start = cut;
    }
    spans
}

/// Whether the token ending at the period at `dot_pos` (inclusive) is a
/// known abbreviation, e.g. "no." or "e.g.".
fn ends_with_abbreviation(text: &str, dot_pos: usize, abbreviations: &[&str]) -> bool {
    let head = &text[..dot_pos + 1];
    let token_start = head
        .rfind(|c: char| !(c.is_ascii_alphanumeric() || c == '.'))
        .map(|p| p + 1)
        .unwrap_or(0);
    let token = head[token_start..].to_ascii_lowercase();
    abbreviations.iter().any(|a| *a == token)
}

fn trim_span(text: &str, start: usize, end: usize) -> Option<(usize, usize)> {
    let slice = &text[start..end];
    let lead = slice.len() - slice.trim_start().len();
    let trail = slice.len() - slice.trim_end().len();
    let (s, e) = (start + lead, end - trail);
    (s < e).then_some((s, e))
}

/// Dense token <-> id mapping with corpus frequencies. Ids are assigned by
/// descending frequency, ties by token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    frequencies: Vec<u64>,
    #[serde(skip)]
    index: HashMap<String, u32>,
    pub total_token_count: u64,
}

impl Vocabulary {
    /// Count tokens over `streams` and keep those with frequency >=
    /// `min_count`.
    pub fn from_token_streams<'a, I, S>(streams: I, min_count: u64) -> Vocabulary
    where
        I: IntoIterator<Item = S>,
        S: IntoIterator<Item = &'a str>,
    {
        assert!(min_count >= 1, "min_count must be >= 1");
        let mut counts: HashMap<String, u64> = HashMap::new();
        for stream in streams {
            for token in stream {
                *counts.entry(token.to_string()).or_insert(0) += 1;
            }
        }
        let mut entries: Vec<(String, u64)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count)
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut vocab = Vocabulary {
            tokens: Vec::with_capacity(entries.len()),
            frequencies: Vec::with_capacity(entries.len()),
            index: HashMap::with_capacity(entries.len()),
            total_token_count: 0,
        };
        for (token, count) in entries {
            vocab.index.insert(token.clone(), vocab.tokens.len() as u32);
            vocab.tokens.push(token);
            vocab.frequencies.push(count);
            vocab.total_token_count += count;
        }
        vocab
    }

    /// Build a vocabulary from explicit `(token, frequency)` entries,
    /// keeping the given order as the id order.
    pub fn from_entries(entries: Vec<(String, u64)>) -> Vocabulary {
        let mut vocab = Vocabulary {
            tokens: Vec::with_capacity(entries.len()),
            frequencies: Vec::with_capacity(entries.len()),
            index: HashMap::with_capacity(entries.len()),
            total_token_count: 0,
        };
        for (token, count) in entries {
            vocab.index.insert(token.clone(), vocab.tokens.len() as u32);
            vocab.tokens.push(token);
            vocab.frequencies.push(count);
            vocab.total_token_count += count;
        }
        vocab
    }

    /// Rebuild the token index after deserialization.
    pub fn rebuild_index(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn frequency(&self, id: u32) -> u64 {
        self.frequencies[id as usize]
    }

    /// Corpus frequency fraction of `id`, used by subsampling.
    pub fn frequency_fraction(&self, id: u32) -> f64 {
        self.frequencies[id as usize] as f64 / self.total_token_count as f64
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn frequencies(&self) -> &[u64] {
        &self.frequencies
    }
}

/// Build a vocabulary over every sentence token of `reports`.
pub fn build_vocabulary(reports: &[Report], min_count: u64) -> Vocabulary {
    Vocabulary::from_token_streams(reports.iter().map(|r| r.tokens()), min_count)
}

/// Sparse term counts for one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BowDocument {
    pub doc_id: String,
    /// `(term_id, count)` pairs sorted by term id; counts strictly positive.
    pub counts: Vec<(u32, u32)>,
    /// Total retained token count (N_d).
    pub total: u32,
}

impl BowDocument {
    /// Aggregate `tokens` against `vocab`, dropping out-of-vocabulary
    /// tokens.
    pub fn from_tokens<'a, I>(doc_id: impl Into<String>, tokens: I, vocab: &Vocabulary) -> BowDocument
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: HashMap<u32, u32> = HashMap::new();
        let mut total = 0;
        for token in tokens {
            if let Some(id) = vocab.id(token) {
                *counts.entry(id).or_insert(0) += 1;
                total += 1;
            }
        }
        let mut counts: Vec<(u32, u32)> = counts.into_iter().collect();
        counts.sort_unstable();
        BowDocument {
            doc_id: doc_id.into(),
            counts,
            total,
        }
    }

    /// Expand counts into one token id per instance, ordered by term id.
    pub fn expand(&self) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.total as usize);
        for &(term, count) in &self.counts {
            for _ in 0..count {
                out.push(term);
            }
        }
        out
    }
}

/// Bag-of-words for a whole report.
pub fn to_bow(report: &Report, vocab: &Vocabulary) -> BowDocument {
    assert!(!vocab.is_empty(), "vocabulary must be nonempty");
    BowDocument::from_tokens(report.report_id.clone(), report.tokens(), vocab)
}
