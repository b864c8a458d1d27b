//! Key-image reference extraction and proximal context windows.
//!
//! A reference is a keyword from the pinned grammar (`image`, `images`,
//! `im`, `img`), optionally preceded by `series <int>,`, followed by a
//! number list. Abbreviated ranges like `1013-78` expand by borrowing the
//! missing leading digits from the low end (`1013..=1078`).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Report;

const DEFAULT_PATTERNS: &str = include_str!("../data/image_ref_patterns.tsv");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KeyImageError {
    #[error("range ends before it starts: {hi} < {lo}")]
    RangeOrder { lo: u32, hi: u32 },
    #[error("not a decimal number: {text:?}")]
    Parse { text: String },
    #[error("malformed pattern line {line}: {content:?}")]
    MalformedPattern { line: usize, content: String },
}

/// The reference grammar, loaded from a pattern file.
#[derive(Debug, Clone)]
pub struct ReferenceGrammar {
    ref_keywords: Vec<String>,
    series_keywords: Vec<String>,
    range_seps: Vec<String>,
    list_seps: Vec<String>,
}

impl Default for ReferenceGrammar {
    fn default() -> Self {
        ReferenceGrammar::parse(DEFAULT_PATTERNS).expect("embedded pattern table is well-formed")
    }
}

impl ReferenceGrammar {
    pub fn parse(text: &str) -> Result<ReferenceGrammar, KeyImageError> {
        let mut grammar = ReferenceGrammar {
            ref_keywords: Vec::new(),
            series_keywords: Vec::new(),
            range_seps: Vec::new(),
            list_seps: Vec::new(),
        };
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split('\t');
            match (fields.next(), fields.next()) {
                (Some(kind), Some(text)) => {
                    let text = text.trim().to_ascii_lowercase();
                    match kind {
                        "ref_keyword" => grammar.ref_keywords.push(text),
                        "series_keyword" => grammar.series_keywords.push(text),
                        "range_sep" => grammar.range_seps.push(text),
                        "list_sep" => grammar.list_seps.push(text),
                        _ => {
                            return Err(KeyImageError::MalformedPattern {
                                line: i + 1,
                                content: line.to_string(),
                            })
                        }
                    }
                }
                _ => {
                    return Err(KeyImageError::MalformedPattern {
                        line: i + 1,
                        content: line.to_string(),
                    })
                }
            }
        }
        Ok(grammar)
    }
}

/// A resolved reference: which sentence mentions which images.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyImageRef {
    pub report_id: String,
    pub sentence_index: usize,
    pub series: Option<u32>,
    /// Strictly increasing, nonempty.
    pub image_numbers: Vec<u32>,
    pub raw_match: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionWarning {
    pub report_id: String,
    pub sentence_index: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct Extraction {
    pub refs: Vec<KeyImageRef>,
    pub warnings: Vec<ExtractionWarning>,
}

/// Join key for one image of one report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ImageKey {
    pub series: Option<u32>,
    pub image: u32,
}

/// The sentence window tied to one referenced image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextWindow {
    pub report_id: String,
    pub image_key: ImageKey,
    /// Window sentence indices (referencing sentence plus existing
    /// neighbors), ascending. Covers the whole report for
    /// accession-matched images.
    pub sentence_indices: Vec<usize>,
    pub ref_sentence_index: Option<usize>,
    /// Concatenated normalized tokens of the window sentences.
    pub tokens: Vec<String>,
    pub whole_report: bool,
    pub raw_match: Option<String>,
}

impl ContextWindow {
    /// Canonical string form used as the join key in feature and label
    /// files: `report_id:series:image` with `-` for a missing series.
    pub fn key_string(&self) -> String {
        image_key_string(&self.report_id, &self.image_key)
    }
}

pub fn image_key_string(report_id: &str, key: &ImageKey) -> String {
    match key.series {
        Some(series) => format!("{report_id}:{series}:{}", key.image),
        None => format!("{report_id}:-:{}", key.image),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Item {
    Word { text: String, start: usize, end: usize },
    Punct { ch: char, start: usize, end: usize },
}

impl Item {
    fn start(&self) -> usize {
        match self {
            Item::Word { start, .. } | Item::Punct { start, .. } => *start,
        }
    }
    fn end(&self) -> usize {
        match self {
            Item::Word { end, .. } | Item::Punct { end, .. } => *end,
        }
    }
}

fn scan_items(raw: &str) -> Vec<Item> {
    let mut items = Vec::new();
    let mut word_start: Option<usize> = None;
    for (pos, ch) in raw.char_indices() {
        if ch.is_ascii_alphanumeric() {
            if word_start.is_none() {
                word_start = Some(pos);
            }
        } else {
            if let Some(start) = word_start.take() {
                items.push(Item::Word {
                    text: raw[start..pos].to_ascii_lowercase(),
                    start,
                    end: pos,
                });
            }
            if !ch.is_whitespace() {
                items.push(Item::Punct {
                    ch,
                    start: pos,
                    end: pos + ch.len_utf8(),
                });
            }
        }
    }
    if let Some(start) = word_start {
        items.push(Item::Word {
            text: raw[start..].to_ascii_lowercase(),
            start,
            end: raw.len(),
        });
    }
    items
}

fn digit_text(item: &Item) -> Option<&str> {
    match item {
        Item::Word { text, .. } if !text.is_empty() && text.bytes().all(|b| b.is_ascii_digit()) => {
            Some(text)
        }
        _ => None,
    }
}

fn is_separator(item: &Item, seps: &[String]) -> bool {
    match item {
        Item::Word { text, .. } => seps.iter().any(|s| s == text),
        Item::Punct { ch, .. } => seps.iter().any(|s| s.len() == 1 && s.starts_with(*ch)),
    }
}

/// Extraction skips ranges spanning more images than this; a typo'd
/// range must not allocate unbounded lists.
pub const MAX_RANGE_SPAN: usize = 10_000;

/// Resolved endpoints of an abbreviated range: when `hi_text` is shorter
/// than `lo_text`, the missing leading digits are copied from `lo_text`.
fn expanded_bounds(lo_text: &str, hi_text: &str) -> Result<(u32, u32), KeyImageError> {
    let parse = |text: &str| -> Result<u32, KeyImageError> {
        if text.is_empty() || !text.bytes().all(|b| b.is_ascii_digit()) {
            return Err(KeyImageError::Parse { text: text.to_string() });
        }
        text.parse::<u32>().map_err(|_| KeyImageError::Parse { text: text.to_string() })
    };
    let lo = parse(lo_text)?;
    let full_hi = if hi_text.len() < lo_text.len() {
        let prefix = &lo_text[..lo_text.len() - hi_text.len()];
        if hi_text.is_empty() || !hi_text.bytes().all(|b| b.is_ascii_digit()) {
            return Err(KeyImageError::Parse { text: hi_text.to_string() });
        }
        format!("{prefix}{hi_text}")
    } else {
        hi_text.to_string()
    };
    let hi = parse(&full_hi)?;
    if hi < lo {
        return Err(KeyImageError::RangeOrder { lo, hi });
    }
    Ok((lo, hi))
}

/// Expand an abbreviated range to the full inclusive image-number list.
pub fn expand_image_range(lo_text: &str, hi_text: &str) -> Result<Vec<u32>, KeyImageError> {
    let (lo, hi) = expanded_bounds(lo_text, hi_text)?;
    Ok((lo..=hi).collect())
}

/// Find every key-image reference in the report's sentences.
pub fn extract_image_references(report: &Report, grammar: &ReferenceGrammar) -> Extraction {
    let mut extraction = Extraction::default();
    for sentence in &report.sentences {
        scan_sentence(report, sentence.index, &sentence.raw, grammar, &mut extraction);
    }
    extraction
}

fn scan_sentence(
    report: &Report,
    sentence_index: usize,
    raw: &str,
    grammar: &ReferenceGrammar,
    out: &mut Extraction,
) {
    let items = scan_items(raw);
    let mut i = 0;
    while i < items.len() {
        let keyword = match &items[i] {
            Item::Word { text, .. } if grammar.ref_keywords.contains(text) => text.clone(),
            _ => {
                i += 1;
                continue;
            }
        };
        let _ = keyword;
        // Optional "series <int>," directly before the keyword.
        let mut series = None;
        let mut match_start = items[i].start();
        let before: &[Item] = &items[..i];
        let series_candidate = |word_idx: usize, num_idx: usize| -> Option<(u32, usize)> {
            let word = match &before[word_idx] {
                Item::Word { text, .. } => text,
                _ => return None,
            };
            if !grammar.series_keywords.contains(word) {
                return None;
            }
            let num = digit_text(&before[num_idx])?;
            num.parse::<u32>().ok().map(|n| (n, before[word_idx].start()))
        };
        if before.len() >= 3
            && matches!(&before[before.len() - 1], Item::Punct { ch: ',', .. })
        {
            if let Some((n, start)) = series_candidate(before.len() - 3, before.len() - 2) {
                series = Some(n);
                match_start = start;
            }
        }
        if series.is_none() && before.len() >= 2 {
            if let Some((n, start)) = series_candidate(before.len() - 2, before.len() - 1) {
                series = Some(n);
                match_start = start;
            }
        }

        // Number list after the keyword.
        let mut numbers: Vec<u32> = Vec::new();
        let mut j = i + 1;
        let mut last_number_text: Option<String> = None;
        let mut match_end = items[i].end();
        if j < items.len() {
            if let Some(text) = digit_text(&items[j]) {
                match text.parse::<u32>() {
                    Ok(n) => {
                        numbers.push(n);
                        last_number_text = Some(text.to_string());
                        match_end = items[j].end();
                        j += 1;
                    }
                    Err(_) => {
                        out.warnings.push(ExtractionWarning {
                            report_id: report.report_id.clone(),
                            sentence_index,
                            message: format!("number out of range: {text:?}"),
                        });
                        j += 1;
                    }
                }
            }
        }
        if numbers.is_empty() && last_number_text.is_none() {
            // Keyword without a number is not a reference.
            i += 1;
            continue;
        }
        loop {
            if j + 1 < items.len() && is_separator(&items[j], &grammar.range_seps) {
                if let Some(hi_text) = digit_text(&items[j + 1]) {
                    let lo_text = last_number_text.clone().unwrap_or_default();
                    match expanded_bounds(&lo_text, hi_text) {
                        Ok((lo, hi)) if (hi - lo) as usize + 1 > MAX_RANGE_SPAN => {
                            out.warnings.push(ExtractionWarning {
                                report_id: report.report_id.clone(),
                                sentence_index,
                                message: format!(
                                    "skipped range {lo_text}-{hi_text}: spans {} images (cap {MAX_RANGE_SPAN})",
                                    (hi - lo) as u64 + 1
                                ),
                            })
                        }
                        Ok((lo, hi)) => {
                            numbers.pop();
                            numbers.extend(lo..=hi);
                        }
                        Err(e) => out.warnings.push(ExtractionWarning {
                            report_id: report.report_id.clone(),
                            sentence_index,
                            message: format!("skipped range {lo_text}-{hi_text}: {e}"),
                        }),
                    }
                    match_end = items[j + 1].end();
                    last_number_text = Some(hi_text.to_string());
                    j += 2;
                    continue;
                }
            }
            if j + 1 < items.len() && is_separator(&items[j], &grammar.list_seps) {
                if let Some(text) = digit_text(&items[j + 1]) {
                    match text.parse::<u32>() {
                        Ok(n) => numbers.push(n),
                        Err(_) => out.warnings.push(ExtractionWarning {
                            report_id: report.report_id.clone(),
                            sentence_index,
                            message: format!("number out of range: {text:?}"),
                        }),
                    }
                    match_end = items[j + 1].end();
                    last_number_text = Some(text.to_string());
                    j += 2;
                    continue;
                }
            }
            break;
        }
        if !numbers.is_empty() {
            numbers.sort_unstable();
            numbers.dedup();
            out.refs.push(KeyImageRef {
                report_id: report.report_id.clone(),
                sentence_index,
                series,
                image_numbers: numbers,
                raw_match: raw[match_start..match_end].to_string(),
            });
        }
        i = j.max(i + 1);
    }
}

/// One window per image number: the referencing sentence plus its
/// neighbors, clipped to the report bounds.
pub fn context_window(report: &Report, image_ref: &KeyImageRef) -> Vec<ContextWindow> {
    assert!(
        image_ref.sentence_index < report.sentences.len(),
        "reference does not belong to this report"
    );
    let i = image_ref.sentence_index;
    let lo = i.saturating_sub(1);
    let hi = (i + 1).min(report.sentences.len().saturating_sub(1));
    let indices: Vec<usize> = (lo..=hi).collect();
    let tokens: Vec<String> = indices
        .iter()
        .flat_map(|&s| report.sentences[s].tokens.iter().cloned())
        .collect();
    image_ref
        .image_numbers
        .iter()
        .map(|&image| ContextWindow {
            report_id: report.report_id.clone(),
            image_key: ImageKey { series: image_ref.series, image },
            sentence_indices: indices.clone(),
            ref_sentence_index: Some(i),
            tokens: tokens.clone(),
            whole_report: false,
            raw_match: Some(image_ref.raw_match.clone()),
        })
        .collect()
}

/// Window for an accession-matched image with no referencing sentence:
/// the whole report is its context.
pub fn whole_report_window(report: &Report, image_key: ImageKey) -> ContextWindow {
    ContextWindow {
        report_id: report.report_id.clone(),
        image_key,
        sentence_indices: (0..report.sentences.len()).collect(),
        ref_sentence_index: None,
        tokens: report.tokens().map(str::to_string).collect(),
        whole_report: true,
        raw_match: None,
    }
}

/// Extraction report rows: `ref <TAB> report_id <TAB> sentence_index
/// <TAB> series <TAB> image_number`, followed by `warn` rows.
pub fn format_extraction_report(extraction: &Extraction) -> String {
    let mut out = String::new();
    for r in &extraction.refs {
        let series = r.series.map(|s| s.to_string()).unwrap_or_else(|| "-".to_string());
        for image in &r.image_numbers {
            out.push_str(&format!(
                "ref\t{}\t{}\t{}\t{}\n",
                r.report_id, r.sentence_index, series, image
            ));
        }
    }
    for w in &extraction.warnings {
        out.push_str(&format!("warn\t{}\t{}\t{}\n", w.report_id, w.sentence_index, w.message));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::PreprocessConfig;
    use proptest::prelude::*;

    fn report(text: &str) -> Report {
        Report::new("r1", None, text, &PreprocessConfig::default())
    }

    #[test]
    fn parenthesized_series_reference() {
        let r = report("There may be mild fat stranding of the right parapharyngeal soft tissues (series 1001, image 32).");
        let extraction = extract_image_references(&r, &ReferenceGrammar::default());
        assert_eq!(extraction.refs.len(), 1);
        let key_ref = &extraction.refs[0];
        assert_eq!(key_ref.series, Some(1001));
        assert_eq!(key_ref.image_numbers, vec![32]);
        assert!(key_ref.raw_match.starts_with("series 1001"));
        assert!(extraction.warnings.is_empty());
    }

    #[test]
    fn abbreviated_range_expands() {
        let r = report("Multiple lesions are seen on images 1013-78.");
        let extraction = extract_image_references(&r, &ReferenceGrammar::default());
        assert_eq!(extraction.refs.len(), 1);
        let numbers = &extraction.refs[0].image_numbers;
        assert_eq!(numbers.len(), 66);
        assert_eq!(numbers.first(), Some(&1013));
        assert_eq!(numbers.last(), Some(&1078));
    }

    #[test]
    fn sentence_without_reference_yields_nothing() {
        let r = report("There is no focal lesion.");
        let extraction = extract_image_references(&r, &ReferenceGrammar::default());
        assert!(extraction.refs.is_empty());
    }

    #[test]
    fn number_lists_with_and() {
        let r = report("Seen on images 4, 7 and 9 of the prior study.");
        let extraction = extract_image_references(&r, &ReferenceGrammar::default());
        assert_eq!(extraction.refs[0].image_numbers, vec![4, 7, 9]);
    }

    #[test]
    fn range_with_through() {
        let r = report("Seen on images 5 through 9.");
        let extraction = extract_image_references(&r, &ReferenceGrammar::default());
        assert_eq!(extraction.refs[0].image_numbers, vec![5, 6, 7, 8, 9]);
    }

    #[test]
    fn keyword_without_number_is_not_a_reference() {
        let r = report("The images are unremarkable.");
        let extraction = extract_image_references(&r, &ReferenceGrammar::default());
        assert!(extraction.refs.is_empty());
    }

    #[test]
    fn reversed_range_records_warning_keeps_lo() {
        let r = report("Seen on images 20-15.");
        let extraction = extract_image_references(&r, &ReferenceGrammar::default());
        assert_eq!(extraction.warnings.len(), 1);
        // The unparseable fragment is skipped; the leading number survives.
        assert_eq!(extraction.refs.len(), 1);
        assert_eq!(extraction.refs[0].image_numbers, vec![20]);
    }

    #[test]
    fn oversized_ranges_are_skipped_with_a_warning() {
        let r = report("Seen on images 1-999999999 here.");
        let extraction = extract_image_references(&r, &ReferenceGrammar::default());
        assert_eq!(extraction.warnings.len(), 1);
        assert!(extraction.warnings[0].message.contains("cap"));
        // The leading number survives as a plain reference.
        assert_eq!(extraction.refs.len(), 1);
        assert_eq!(extraction.refs[0].image_numbers, vec![1]);
    }

    #[test]
    fn expand_range_examples() {
        assert_eq!(expand_image_range("1013", "78").unwrap().len(), 66);
        assert_eq!(expand_image_range("5", "9").unwrap(), vec![5, 6, 7, 8, 9]);
        assert_eq!(
            expand_image_range("20", "15").unwrap_err(),
            KeyImageError::RangeOrder { lo: 20, hi: 15 }
        );
        assert!(matches!(
            expand_image_range("12a", "15"),
            Err(KeyImageError::Parse { .. })
        ));
    }

    #[test]
    fn window_clips_at_report_start() {
        let r = report("Image 3 shows a mass. Second sentence. Third sentence. Fourth one. Fifth one.");
        let extraction = extract_image_references(&r, &ReferenceGrammar::default());
        let windows = context_window(&r, &extraction.refs[0]);
        assert_eq!(windows.len(), 1);
        assert_eq!(windows[0].sentence_indices, vec![0, 1]);
    }

    #[test]
    fn window_in_the_middle_takes_both_neighbors() {
        let r = report("First. Second. On image 7 a mass. Fourth. Fifth.");
        let extraction = extract_image_references(&r, &ReferenceGrammar::default());
        assert_eq!(extraction.refs[0].sentence_index, 2);
        let windows = context_window(&r, &extraction.refs[0]);
        assert_eq!(windows[0].sentence_indices, vec![1, 2, 3]);
    }

    #[test]
    fn multiple_images_fan_out_to_shared_windows() {
        let r = report("First. Mass on images 10, 11 here. Third.");
        let extraction = extract_image_references(&r, &ReferenceGrammar::default());
        let windows = context_window(&r, &extraction.refs[0]);
        assert_eq!(windows.len(), 2);
        assert_eq!(windows[0].sentence_indices, windows[1].sentence_indices);
        assert_eq!(windows[0].image_key.image, 10);
        assert_eq!(windows[1].image_key.image, 11);
    }

    #[test]
    fn referencing_sentence_contains_raw_match() {
        let r = report("First. Mass on images 10 and 12 here. Third.");
        let extraction = extract_image_references(&r, &ReferenceGrammar::default());
        for key_ref in &extraction.refs {
            for w in context_window(&r, key_ref) {
                let sentence = &r.sentences[w.ref_sentence_index.unwrap()];
                assert!(sentence.raw.contains(w.raw_match.as_deref().unwrap()));
            }
        }
    }

    #[test]
    fn extraction_is_idempotent() {
        let r = report("First. Mass on image 10. Third.");
        let grammar = ReferenceGrammar::default();
        let a = extract_image_references(&r, &grammar);
        let b = extract_image_references(&r, &grammar);
        assert_eq!(a.refs, b.refs);
    }

    #[test]
    fn whole_report_window_covers_all_sentences() {
        let r = report("First sentence. Second sentence.");
        let w = whole_report_window(&r, ImageKey { series: None, image: 5 });
        assert!(w.whole_report);
        assert_eq!(w.sentence_indices, vec![0, 1]);
        assert_eq!(w.key_string(), "r1:-:5");
    }

    proptest! {
        #[test]
        fn expanded_ranges_are_strictly_increasing(lo in 0u32..5000, span in 0u32..200) {
            let hi = lo + span;
            let out = expand_image_range(&lo.to_string(), &hi.to_string()).unwrap();
            prop_assert_eq!(out.first(), Some(&lo));
            prop_assert_eq!(out.last(), Some(&hi));
            prop_assert!(out.windows(2).all(|w| w[0] < w[1]));
        }

        #[test]
        fn abbreviated_hi_borrows_prefix(lo in 100u32..100_000, digits in 1usize..3) {
            let lo_text = lo.to_string();
            prop_assume!(digits < lo_text.len());
            let hi_text = &lo_text[lo_text.len() - digits..];
            let expanded_hi: u32 = format!(
                "{}{}",
                &lo_text[..lo_text.len() - digits],
                hi_text
            ).parse().unwrap();
            let result = expand_image_range(&lo_text, hi_text);
            if expanded_hi < lo {
                let is_order_error = matches!(result, Err(KeyImageError::RangeOrder { .. }));
                prop_assert!(is_order_error);
            } else {
                let out = result.unwrap();
                prop_assert_eq!(out.first(), Some(&lo));
                prop_assert_eq!(out.last(), Some(&expanded_hi));
            }
        }
    }
}
