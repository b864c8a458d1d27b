//! Disease-term mining: lexicon loading, assertion/negation detection via
//! trigger phrases and scopes, bi-gram label extraction against word
//! vectors, and the frequency-filtered present/absent label space.
//!
//! Trigger phrases and lexicon terms are normalized with the same pipeline
//! as corpus tokens at load time, so matching happens on the normalized
//! token stream.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{normalize, PreprocessConfig, Sentence};
use crate::embed::EmbeddingModel;
use crate::keyimage::ContextWindow;

/// Tokens a scope extends past its trigger.
pub const SCOPE_TOKENS: usize = 6;

#[derive(Debug, Error)]
pub enum TermError {
    #[error("failed to read {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed line {line} in {path}: {content:?}")]
    MalformedLine { path: String, line: usize, content: String },
    #[error("lexicon intersection is empty ({ontology_terms} ontology terms after the semantic filter, {radiology_terms} radiology terms)")]
    EmptyIntersection { ontology_terms: usize, radiology_terms: usize },
    #[error("label space is empty at min_frequency {min_frequency}")]
    EmptyLabelSpace { min_frequency: u64 },
}

/// One mineable term: normalized token sequence plus provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconTerm {
    pub tokens: Vec<String>,
    pub semantic_type: String,
    pub in_ontology: bool,
    pub in_radiology_lexicon: bool,
}

impl LexiconTerm {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

#[derive(Debug, Clone)]
pub struct DiseaseLexicon {
    /// Sorted by token sequence, unique.
    terms: Vec<LexiconTerm>,
    single_tokens: std::collections::BTreeSet<String>,
}

impl DiseaseLexicon {
    pub fn terms(&self) -> &[LexiconTerm] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Whether this single token is itself a lexicon term (the unit used
    /// by bi-gram mining).
    pub fn contains_token(&self, token: &str) -> bool {
        self.single_tokens.contains(token)
    }

    /// Longest term match starting at `start`; returns the matched length
    /// and term index.
    pub fn longest_match(&self, tokens: &[String], start: usize) -> Option<(usize, usize)> {
        let mut best: Option<(usize, usize)> = None;
        for (idx, term) in self.terms.iter().enumerate() {
            let n = term.tokens.len();
            if start + n <= tokens.len() && tokens[start..start + n] == term.tokens[..]
                && best.map(|(len, _)| n > len).unwrap_or(true) {
                    best = Some((n, idx));
                }
        }
        best
    }

    pub fn from_terms(mut terms: Vec<LexiconTerm>) -> DiseaseLexicon {
        terms.sort_by(|a, b| a.tokens.cmp(&b.tokens));
        terms.dedup_by(|a, b| a.tokens == b.tokens);
        let single_tokens = terms
            .iter()
            .filter(|t| t.tokens.len() == 1)
            .map(|t| t.tokens[0].clone())
            .collect();
        DiseaseLexicon { terms, single_tokens }
    }
}

fn read_tsv_rows(path: &Path) -> Result<Vec<(usize, Vec<String>)>, TermError> {
    let text = fs::read_to_string(path).map_err(|source| TermError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        rows.push((i + 1, line.split('\t').map(|f| f.trim().to_string()).collect()));
    }
    Ok(rows)
}

/// Load the mineable vocabulary: ontology terms carrying a selected
/// semantic type intersected with the radiology lexicon, both normalized
/// with the corpus pipeline.
pub fn load_lexicon(
    ontology_path: &Path,
    radiology_path: &Path,
    semantic_type_filter: &[String],
    config: &PreprocessConfig,
) -> Result<DiseaseLexicon, TermError> {
    let mut ontology: BTreeMap<Vec<String>, String> = BTreeMap::new();
    for (line, fields) in read_tsv_rows(ontology_path)? {
        if fields.len() < 2 {
            return Err(TermError::MalformedLine {
                path: ontology_path.display().to_string(),
                line,
                content: fields.join("\t"),
            });
        }
        let semantic_type = fields[1].clone();
        if !semantic_type_filter.is_empty() && !semantic_type_filter.contains(&semantic_type) {
            continue;
        }
        let tokens = normalize(&fields[0], config);
        if tokens.is_empty() {
            continue;
        }
        ontology.entry(tokens).or_insert(semantic_type);
    }
    let mut radiology: Vec<Vec<String>> = Vec::new();
    for (line, fields) in read_tsv_rows(radiology_path)? {
        if fields.is_empty() {
            return Err(TermError::MalformedLine {
                path: radiology_path.display().to_string(),
                line,
                content: fields.join("\t"),
            });
        }
        let tokens = normalize(&fields[0], config);
        if !tokens.is_empty() {
            radiology.push(tokens);
        }
    }
    radiology.sort();
    radiology.dedup();

    let terms: Vec<LexiconTerm> = ontology
        .iter()
        .filter(|(tokens, _)| radiology.binary_search(tokens).is_ok())
        .map(|(tokens, semantic_type)| LexiconTerm {
            tokens: tokens.clone(),
            semantic_type: semantic_type.clone(),
            in_ontology: true,
            in_radiology_lexicon: true,
        })
        .collect();
    if terms.is_empty() {
        return Err(TermError::EmptyIntersection {
            ontology_terms: ontology.len(),
            radiology_terms: radiology.len(),
        });
    }
    Ok(DiseaseLexicon::from_terms(terms))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerCategory {
    PreNegation,
    PostNegation,
    Possibility,
    PseudoNegation,
    Termination,
}

impl TriggerCategory {
    pub fn parse(s: &str) -> Option<TriggerCategory> {
        match s {
            "pre_negation" => Some(TriggerCategory::PreNegation),
            "post_negation" => Some(TriggerCategory::PostNegation),
            "possibility" => Some(TriggerCategory::Possibility),
            "pseudo_negation" => Some(TriggerCategory::PseudoNegation),
            "termination" => Some(TriggerCategory::Termination),
            _ => None,
        }
    }

    /// Precedence when two triggers of equal length match at the same
    /// position: pseudo-negation deactivates first.
    fn rank(self) -> u8 {
        match self {
            TriggerCategory::PseudoNegation => 0,
            TriggerCategory::PreNegation => 1,
            TriggerCategory::PostNegation => 2,
            TriggerCategory::Possibility => 3,
            TriggerCategory::Termination => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trigger {
    /// Original phrase text from the trigger file.
    pub phrase: String,
    pub tokens: Vec<String>,
    pub category: TriggerCategory,
}

#[derive(Debug, Clone, Default)]
pub struct TriggerLexicon {
    triggers: Vec<Trigger>,
}

impl TriggerLexicon {
    pub fn triggers(&self) -> &[Trigger] {
        &self.triggers
    }

    pub fn from_triggers(triggers: Vec<Trigger>) -> TriggerLexicon {
        let mut seen: Vec<(Vec<String>, TriggerCategory)> = Vec::new();
        let mut kept = Vec::new();
        for t in triggers {
            if t.tokens.is_empty() {
                continue;
            }
            let key = (t.tokens.clone(), t.category);
            if !seen.contains(&key) {
                seen.push(key);
                kept.push(t);
            }
        }
        TriggerLexicon { triggers: kept }
    }
}

/// Trigger TSV: `phrase <TAB> category`.
pub fn load_triggers(path: &Path, config: &PreprocessConfig) -> Result<TriggerLexicon, TermError> {
    let mut triggers = Vec::new();
    for (line, fields) in read_tsv_rows(path)? {
        if fields.len() != 2 {
            return Err(TermError::MalformedLine {
                path: path.display().to_string(),
                line,
                content: fields.join("\t"),
            });
        }
        let category = TriggerCategory::parse(&fields[1]).ok_or_else(|| TermError::MalformedLine {
            path: path.display().to_string(),
            line,
            content: fields.join("\t"),
        })?;
        triggers.push(Trigger {
            phrase: fields[0].clone(),
            tokens: normalize(&fields[0], config),
            category,
        });
    }
    Ok(TriggerLexicon::from_triggers(triggers))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Asserted,
    Negated,
    Possible,
}

impl Polarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Asserted => "asserted",
            Polarity::Negated => "negated",
            Polarity::Possible => "possible",
        }
    }
}

/// One detected term occurrence with its polarity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssertionResult {
    /// Normalized term text (tokens joined by spaces).
    pub term: String,
    pub sentence_index: usize,
    pub polarity: Polarity,
    /// Trigger phrase governing a negated/possible polarity.
    pub trigger: Option<String>,
    /// Token span of the term occurrence.
    pub term_span: (usize, usize),
    /// Governing trigger scope for negated/possible results; the term's
    /// own span otherwise.
    pub scope: (usize, usize),
}

struct TriggerMatch<'a> {
    start: usize,
    end: usize,
    trigger: &'a Trigger,
}

fn match_triggers<'a>(tokens: &[String], lexicon: &'a TriggerLexicon) -> Vec<TriggerMatch<'a>> {
    let mut matches = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let mut best: Option<&Trigger> = None;
        for t in lexicon.triggers() {
            let n = t.tokens.len();
            if i + n <= tokens.len() && tokens[i..i + n] == t.tokens[..] {
                let better = match best {
                    None => true,
                    Some(b) => {
                        n > b.tokens.len()
                            || (n == b.tokens.len() && t.category.rank() < b.category.rank())
                    }
                };
                if better {
                    best = Some(t);
                }
            }
        }
        match best {
            Some(t) => {
                matches.push(TriggerMatch { start: i, end: i + t.tokens.len(), trigger: t });
                i += t.tokens.len();
            }
            None => i += 1,
        }
    }
    matches
}

/// Detect lexicon terms in one sentence and classify each as asserted,
/// negated, or possible.
///
/// Scope rules: a pre-negation or possibility trigger opens a forward
/// scope of up to [`SCOPE_TOKENS`] tokens, cut short by the first
/// termination trigger or the sentence end; a post-negation trigger opens
/// the mirrored backward scope. Pseudo-negation triggers consume their
/// tokens and open no scope. A term is negated/possible when its first
/// token falls inside an active scope; negation wins over possibility.
pub fn detect_assertions(
    sentence: &Sentence,
    lexicon: &DiseaseLexicon,
    triggers: &TriggerLexicon,
) -> Vec<AssertionResult> {
    detect_in_tokens(&sentence.tokens, sentence.index, lexicon, triggers)
}

pub fn detect_in_tokens(
    tokens: &[String],
    sentence_index: usize,
    lexicon: &DiseaseLexicon,
    triggers: &TriggerLexicon,
) -> Vec<AssertionResult> {
    let trigger_matches = match_triggers(tokens, triggers);
    let covered = |i: usize| trigger_matches.iter().any(|m| i >= m.start && i < m.end);

    // Scopes in sentence order.
    let mut scopes: Vec<(TriggerCategory, usize, usize, &Trigger)> = Vec::new();
    for m in &trigger_matches {
        match m.trigger.category {
            TriggerCategory::PreNegation | TriggerCategory::Possibility => {
                let mut end = (m.end + SCOPE_TOKENS).min(tokens.len());
                if let Some(term) = trigger_matches.iter().find(|t| {
                    t.trigger.category == TriggerCategory::Termination && t.start >= m.end
                }) {
                    end = end.min(term.start);
                }
                scopes.push((m.trigger.category, m.end, end, m.trigger));
            }
            TriggerCategory::PostNegation => {
                let mut start = m.start.saturating_sub(SCOPE_TOKENS);
                if let Some(term) = trigger_matches
                    .iter()
                    .rev()
                    .find(|t| t.trigger.category == TriggerCategory::Termination && t.end <= m.start)
                {
                    start = start.max(term.end);
                }
                scopes.push((TriggerCategory::PostNegation, start, m.start, m.trigger));
            }
            TriggerCategory::PseudoNegation | TriggerCategory::Termination => {}
        }
    }

    let mut results = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        if covered(i) {
            i += 1;
            continue;
        }
        let Some((len, term_idx)) = lexicon.longest_match(tokens, i) else {
            i += 1;
            continue;
        };
        let term = &lexicon.terms()[term_idx];
        let in_scope = |category: TriggerCategory| {
            scopes
                .iter()
                .find(|(cat, start, end, _)| {
                    let negation = matches!(
                        cat,
                        TriggerCategory::PreNegation | TriggerCategory::PostNegation
                    );
                    let wanted = if category == TriggerCategory::Possibility {
                        *cat == TriggerCategory::Possibility
                    } else {
                        negation
                    };
                    wanted && i >= *start && i < *end
                })
                .map(|(_, start, end, trigger)| ((*start, *end), *trigger))
        };
        let (polarity, trigger, scope) = if let Some((span, t)) = in_scope(TriggerCategory::PreNegation)
        {
            (Polarity::Negated, Some(t.phrase.clone()), span)
        } else if let Some((span, t)) = in_scope(TriggerCategory::Possibility) {
            (Polarity::Possible, Some(t.phrase.clone()), span)
        } else {
            (Polarity::Asserted, None, (i, i + len))
        };
        results.push(AssertionResult {
            term: term.text(),
            sentence_index,
            polarity,
            trigger,
            term_span: (i, i + len),
            scope,
        });
        i += len;
    }
    results
}

/// One bi-gram of adjacent lexicon terms with its concatenated word
/// vectors as the regression target.
#[derive(Debug, Clone, PartialEq)]
pub struct BigramLabel {
    pub image_key: String,
    pub words: (String, String),
    /// `2 * dim` reals: the two word vectors concatenated.
    pub target: Vec<f64>,
}

/// Scan the window tokens left to right; consecutive single-token lexicon
/// terms pair greedily, unpaired terms are ignored. Each bi-gram yields
/// one label for the window's image.
pub fn mine_disease_bigrams(
    window: &ContextWindow,
    lexicon: &DiseaseLexicon,
    embeddings: &EmbeddingModel,
) -> (Vec<BigramLabel>, Vec<String>) {
    let tokens = &window.tokens;
    let mut labels = Vec::new();
    let mut warnings = Vec::new();
    let mut i = 0;
    while i + 1 < tokens.len() {
        if lexicon.contains_token(&tokens[i]) && lexicon.contains_token(&tokens[i + 1]) {
            let (w1, w2) = (&tokens[i], &tokens[i + 1]);
            match (embeddings.vector_of(w1), embeddings.vector_of(w2)) {
                (Ok(v1), Ok(v2)) => {
                    let mut target = Vec::with_capacity(2 * embeddings.dim());
                    target.extend(v1.iter().map(|&x| x as f64));
                    target.extend(v2.iter().map(|&x| x as f64));
                    labels.push(BigramLabel {
                        image_key: window.key_string(),
                        words: (w1.clone(), w2.clone()),
                        target,
                    });
                }
                _ => warnings.push(format!(
                    "bi-gram ({w1}, {w2}) skipped: word missing from the embedding vocabulary"
                )),
            }
            i += 2;
        } else {
            i += 1;
        }
    }
    (labels, warnings)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelPolarity {
    Present,
    Absent,
}

impl LabelPolarity {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelPolarity::Present => "present",
            LabelPolarity::Absent => "absent",
        }
    }

    pub fn parse(s: &str) -> Option<LabelPolarity> {
        match s {
            "present" => Some(LabelPolarity::Present),
            "absent" => Some(LabelPolarity::Absent),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub term: String,
    pub polarity: LabelPolarity,
    pub frequency: u64,
}

/// Ordered (term, present/absent) label vocabulary; ids are dense indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    pub labels: Vec<Label>,
}

impl LabelSpace {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn id_of(&self, term: &str, polarity: LabelPolarity) -> Option<usize> {
        self.labels
            .iter()
            .position(|l| l.term == term && l.polarity == polarity)
    }

    pub fn present_count(&self) -> usize {
        self.labels.iter().filter(|l| l.polarity == LabelPolarity::Present).count()
    }

    pub fn absent_count(&self) -> usize {
        self.labels.iter().filter(|l| l.polarity == LabelPolarity::Absent).count()
    }

    /// TSV rows: `label_id <TAB> term <TAB> polarity <TAB> frequency`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (id, label) in self.labels.iter().enumerate() {
            out.push_str(&format!(
                "{id}\t{}\t{}\t{}\n",
                label.term,
                label.polarity.as_str(),
                label.frequency
            ));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<LabelSpace, TermError> {
        let mut labels = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let parsed = (fields.len() == 4)
                .then(|| {
                    Some(Label {
                        term: fields[1].to_string(),
                        polarity: LabelPolarity::parse(fields[2])?,
                        frequency: fields[3].parse().ok()?,
                    })
                })
                .flatten();
            match parsed {
                Some(label) => labels.push(label),
                None => {
                    return Err(TermError::MalformedLine {
                        path: "<label space>".to_string(),
                        line: i + 1,
                        content: line.to_string(),
                    })
                }
            }
        }
        Ok(LabelSpace { labels })
    }
}

/// Build the label space from corpus-wide assertion results joined to
/// images: asserted terms become (term, present), negated terms
/// (term, absent); "possible" occurrences are excluded. Labels below
/// `min_frequency` corpus occurrences are dropped. Present labels come
/// first, each block sorted by term.
pub fn build_label_space(
    joined: &[(String, AssertionResult)],
    min_frequency: u64,
) -> Result<LabelSpace, TermError> {
    let mut counts: BTreeMap<(LabelPolarity, String), u64> = BTreeMap::new();
    for (_, assertion) in joined {
        let polarity = match assertion.polarity {
            Polarity::Asserted => LabelPolarity::Present,
            Polarity::Negated => LabelPolarity::Absent,
            Polarity::Possible => continue,
        };
        *counts.entry((polarity, assertion.term.clone())).or_insert(0) += 1;
    }
    let labels: Vec<Label> = counts
        .into_iter()
        .filter(|(_, count)| *count >= min_frequency)
        .map(|((polarity, term), frequency)| Label { term, polarity, frequency })
        .collect();
    if labels.is_empty() {
        return Err(TermError::EmptyLabelSpace { min_frequency });
    }
    Ok(LabelSpace { labels })
}

/// Per-image training pairs: every (image, label) occurrence that made it
/// into the label space, kept once per assertion occurrence.
pub fn label_assignments(
    joined: &[(String, AssertionResult)],
    space: &LabelSpace,
) -> Vec<(String, usize)> {
    let mut out = Vec::new();
    for (image_key, assertion) in joined {
        let polarity = match assertion.polarity {
            Polarity::Asserted => LabelPolarity::Present,
            Polarity::Negated => LabelPolarity::Absent,
            Polarity::Possible => continue,
        };
        if let Some(id) = space.id_of(&assertion.term, polarity) {
            out.push((image_key.clone(), id));
        }
    }
    out
}

/// Exact per-term polarity counts, sorted by assertion count descending,
/// ties by term.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolarityCount {
    pub term: String,
    pub assert_count: u64,
    pub negate_count: u64,
    pub possible_count: u64,
}

pub fn polarity_frequency_table(assertions: &[AssertionResult]) -> Vec<PolarityCount> {
    let mut counts: BTreeMap<String, (u64, u64, u64)> = BTreeMap::new();
    for a in assertions {
        let entry = counts.entry(a.term.clone()).or_insert((0, 0, 0));
        match a.polarity {
            Polarity::Asserted => entry.0 += 1,
            Polarity::Negated => entry.1 += 1,
            Polarity::Possible => entry.2 += 1,
        }
    }
    let mut table: Vec<PolarityCount> = counts
        .into_iter()
        .map(|(term, (a, n, p))| PolarityCount {
            term,
            assert_count: a,
            negate_count: n,
            possible_count: p,
        })
        .collect();
    table.sort_by(|x, y| y.assert_count.cmp(&x.assert_count).then(x.term.cmp(&y.term)));
    table
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Report;
    use crate::embed::{train_skipgram, SkipGramConfig};
    use crate::keyimage::ImageKey;
    use std::io::Write;

    fn config() -> PreprocessConfig {
        PreprocessConfig::default()
    }

    fn test_lexicon() -> DiseaseLexicon {
        let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
        load_lexicon(
            &root.join("data/test_lexicon_ontology.tsv"),
            &root.join("data/test_lexicon_radiology.tsv"),
            &["T047".to_string()],
            &config(),
        )
        .unwrap()
    }

    fn test_triggers() -> TriggerLexicon {
        let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
        load_triggers(&root.join("data/test_triggers.tsv"), &config()).unwrap()
    }

    fn sentence(text: &str) -> Sentence {
        let report = Report::new("r", None, text, &config());
        report.sentences.into_iter().next().unwrap()
    }

    #[test]
    fn semantic_filter_and_intersection_apply() {
        let lexicon = test_lexicon();
        // T033-only terms are excluded by the T047 filter.
        assert!(!lexicon.contains_token("unchanged"));
        assert!(!lexicon.contains_token("mass"));
        // Ontology-only terms are excluded by the intersection.
        assert!(!lexicon.contains_token("thrombosi"));
        assert!(!lexicon.contains_token("metastasi"));
        // "cyst" and "cysts" normalize to one entry.
        let cyst_terms: Vec<_> = lexicon
            .terms()
            .iter()
            .filter(|t| t.tokens == vec!["cyst".to_string()])
            .collect();
        assert_eq!(cyst_terms.len(), 1);
        assert!(lexicon.contains_token("pneumothorax"));
    }

    #[test]
    fn empty_intersection_reports_counts() {
        let mut ontology = tempfile::NamedTempFile::new().unwrap();
        writeln!(ontology, "alpha\tT047\tontology").unwrap();
        let mut radiology = tempfile::NamedTempFile::new().unwrap();
        writeln!(radiology, "beta\t-\tradiology-lexicon").unwrap();
        let err = load_lexicon(
            ontology.path(),
            radiology.path(),
            &["T047".to_string()],
            &config(),
        )
        .unwrap_err();
        match err {
            TermError::EmptyIntersection { ontology_terms, radiology_terms } => {
                assert_eq!(ontology_terms, 1);
                assert_eq!(radiology_terms, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pre_negation_trigger_negates_term() {
        let results =
            detect_assertions(&sentence("No evidence of pneumothorax."), &test_lexicon(), &test_triggers());
        assert_eq!(results.len(), 1);
        assert_eq!(results[0].term, "pneumothorax");
        assert_eq!(results[0].polarity, Polarity::Negated);
        assert_eq!(results[0].trigger.as_deref(), Some("no evidence of"));
    }

    #[test]
    fn default_polarity_is_asserted() {
        let results =
            detect_assertions(&sentence("Pneumothorax is present."), &test_lexicon(), &test_triggers());
        assert_eq!(results.len(), 1);
        assert_eq!(results[0].polarity, Polarity::Asserted);
        assert!(results[0].trigger.is_none());
    }

    #[test]
    fn possibility_trigger_marks_possible() {
        let results =
            detect_assertions(&sentence("Cannot rule out cyst."), &test_lexicon(), &test_triggers());
        assert_eq!(results.len(), 1);
        assert_eq!(results[0].term, "cyst");
        assert_eq!(results[0].polarity, Polarity::Possible);
        assert_eq!(results[0].trigger.as_deref(), Some("cannot rule out"));
    }

    #[test]
    fn pseudo_negation_deactivates() {
        // "no change" is pseudo-negation: the cyst stays asserted.
        let results = detect_assertions(
            &sentence("No change of the cyst."),
            &test_lexicon(),
            &test_triggers(),
        );
        assert_eq!(results.len(), 1);
        assert_eq!(results[0].polarity, Polarity::Asserted);
    }

    #[test]
    fn termination_trigger_closes_the_scope() {
        let results = detect_assertions(
            &sentence("No pneumothorax but cyst is present."),
            &test_lexicon(),
            &test_triggers(),
        );
        let by_term = |t: &str| results.iter().find(|r| r.term == t).unwrap().clone();
        assert_eq!(by_term("pneumothorax").polarity, Polarity::Negated);
        assert_eq!(by_term("cyst").polarity, Polarity::Asserted);
    }

    #[test]
    fn post_negation_scopes_backward() {
        let results = detect_assertions(
            &sentence("Pneumothorax was ruled out."),
            &test_lexicon(),
            &test_triggers(),
        );
        assert_eq!(results.len(), 1);
        assert_eq!(results[0].polarity, Polarity::Negated);
        assert_eq!(results[0].trigger.as_deref(), Some("ruled out"));
    }

    #[test]
    fn scope_is_limited_to_six_tokens() {
        // Enough filler between the trigger and the term pushes the term
        // out of scope. Filler words must survive normalization.
        let text = "No worrisome focal bright dense irregular jagged nodular cyst.";
        let results = detect_assertions(&sentence(text), &test_lexicon(), &test_triggers());
        let cyst = results.iter().find(|r| r.term == "cyst").unwrap();
        assert_eq!(cyst.polarity, Polarity::Asserted, "tokens: {:?}", sentence(text).tokens);
    }

    #[test]
    fn negated_results_carry_scope_covering_term() {
        let results = detect_assertions(
            &sentence("Without evidence of hernia or edema."),
            &test_lexicon(),
            &test_triggers(),
        );
        for r in &results {
            assert_eq!(r.polarity, Polarity::Negated);
            assert!(r.term_span.0 >= r.scope.0 && r.term_span.0 < r.scope.1);
        }
    }

    fn embeddings_for(words: &[&str]) -> EmbeddingModel {
        let stream: Vec<String> = words
            .iter()
            .chain(words.iter())
            .map(|w| w.to_string())
            .collect();
        let (model, _) = train_skipgram(
            &[stream],
            &SkipGramConfig {
                dim: 4,
                window: 2,
                subsample_t: 1.0,
                epochs: 1,
                min_count: 1,
                start_lr: 0.025,
                end_lr: 0.001,
                seed: 1,
            },
        )
        .unwrap();
        model
    }

    fn window(tokens: &[&str]) -> ContextWindow {
        ContextWindow {
            report_id: "r1".to_string(),
            image_key: ImageKey { series: Some(2), image: 9 },
            sentence_indices: vec![0],
            ref_sentence_index: Some(0),
            tokens: tokens.iter().map(|t| t.to_string()).collect(),
            whole_report: false,
            raw_match: None,
        }
    }

    // Window tokens below are written in their normalized forms, exactly
    // as the corpus pipeline would deliver them ("nodes" -> "node",
    // "hepatis" -> "hepati").
    #[test]
    fn isolated_terms_cannot_form_bigrams() {
        let emb = embeddings_for(&["node", "porta", "hepati", "liver"]);
        let lexicon = test_lexicon();
        assert!(lexicon.contains_token("node"));
        assert!(lexicon.contains_token("hepati"));
        // Lexicon terms that are not adjacent are ignored.
        let w = window(&["node", "porta", "hepati"]);
        let (labels, warnings) = mine_disease_bigrams(&w, &lexicon, &emb);
        assert!(labels.is_empty());
        assert!(warnings.is_empty());
    }

    #[test]
    fn adjacent_terms_form_one_bigram() {
        let emb = embeddings_for(&["cyst", "tumor", "liver"]);
        let w = window(&["liver", "cyst", "tumor", "liver"]);
        let (labels, _) = mine_disease_bigrams(&w, &test_lexicon(), &emb);
        assert_eq!(labels.len(), 1);
        assert_eq!(labels[0].words, ("cyst".to_string(), "tumor".to_string()));
        assert_eq!(labels[0].target.len(), 8);
        assert_eq!(labels[0].image_key, "r1:2:9");
    }

    #[test]
    fn greedy_pairing_ignores_the_odd_term_out() {
        let emb = embeddings_for(&["cyst", "tumor", "edema", "liver"]);
        let w = window(&["cyst", "tumor", "edema"]);
        let (labels, _) = mine_disease_bigrams(&w, &test_lexicon(), &emb);
        assert_eq!(labels.len(), 1);
        assert_eq!(labels[0].words.0, "cyst");
    }

    #[test]
    fn empty_window_yields_no_labels() {
        let emb = embeddings_for(&["liver", "normal"]);
        let w = window(&["liver", "normal", "study"]);
        let (labels, warnings) = mine_disease_bigrams(&w, &test_lexicon(), &emb);
        assert!(labels.is_empty());
        assert!(warnings.is_empty());
    }

    #[test]
    fn oov_bigram_word_warns_and_skips() {
        let emb = embeddings_for(&["cyst", "liver"]);
        let w = window(&["cyst", "tumor"]);
        let (labels, warnings) = mine_disease_bigrams(&w, &test_lexicon(), &emb);
        assert!(labels.is_empty());
        assert_eq!(warnings.len(), 1);
    }

    fn assertion(term: &str, polarity: Polarity) -> AssertionResult {
        AssertionResult {
            term: term.to_string(),
            sentence_index: 0,
            polarity,
            trigger: None,
            term_span: (0, 1),
            scope: (0, 1),
        }
    }

    #[test]
    fn label_space_enforces_the_frequency_threshold() {
        let mut joined = Vec::new();
        for i in 0..10 {
            joined.push((format!("img{i}:-:0"), assertion("cyst", Polarity::Asserted)));
        }
        for i in 0..9 {
            joined.push((format!("img{i}:-:1"), assertion("tumor", Polarity::Asserted)));
        }
        for i in 0..10 {
            joined.push((format!("img{i}:-:2"), assertion("cyst", Polarity::Negated)));
        }
        let space = build_label_space(&joined, 10).unwrap();
        assert_eq!(space.len(), 2);
        assert_eq!(space.present_count(), 1);
        assert_eq!(space.absent_count(), 1);
        assert!(space.id_of("tumor", LabelPolarity::Present).is_none());
        // A term may appear as both present and absent.
        assert!(space.id_of("cyst", LabelPolarity::Present).is_some());
        assert!(space.id_of("cyst", LabelPolarity::Absent).is_some());
    }

    #[test]
    fn possible_occurrences_are_excluded_from_labels() {
        let joined: Vec<(String, AssertionResult)> = (0..20)
            .map(|i| (format!("img{i}:-:0"), assertion("cyst", Polarity::Possible)))
            .collect();
        assert!(matches!(
            build_label_space(&joined, 10),
            Err(TermError::EmptyLabelSpace { .. })
        ));
    }

    #[test]
    fn images_with_two_labels_yield_two_pairs() {
        let mut joined = Vec::new();
        for i in 0..12 {
            joined.push((format!("img{i}:-:0"), assertion("cyst", Polarity::Asserted)));
            joined.push((format!("img{i}:-:0"), assertion("edema", Polarity::Asserted)));
        }
        let space = build_label_space(&joined, 10).unwrap();
        let pairs = label_assignments(&joined, &space);
        let img0: Vec<_> = pairs.iter().filter(|(k, _)| k == "img0:-:0").collect();
        assert_eq!(img0.len(), 2);
    }

    #[test]
    fn polarity_table_counts_exactly() {
        assert!(polarity_frequency_table(&[]).is_empty());
        let assertions = vec![
            assertion("cyst", Polarity::Asserted),
            assertion("cyst", Polarity::Negated),
            assertion("edema", Polarity::Asserted),
            assertion("edema", Polarity::Asserted),
        ];
        let table = polarity_frequency_table(&assertions);
        assert_eq!(table[0].term, "edema");
        assert_eq!(table[0].assert_count, 2);
        let cyst = table.iter().find(|r| r.term == "cyst").unwrap();
        assert_eq!((cyst.assert_count, cyst.negate_count, cyst.possible_count), (1, 1, 0));
        // Brute-force recount.
        for row in &table {
            let brute = |p: Polarity| {
                assertions.iter().filter(|a| a.term == row.term && a.polarity == p).count() as u64
            };
            assert_eq!(row.assert_count, brute(Polarity::Asserted));
            assert_eq!(row.negate_count, brute(Polarity::Negated));
            assert_eq!(row.possible_count, brute(Polarity::Possible));
        }
    }

    #[test]
    fn label_space_tsv_roundtrip() {
        let joined: Vec<(String, AssertionResult)> = (0..10)
            .map(|i| (format!("img{i}:-:0"), assertion("cyst", Polarity::Asserted)))
            .collect();
        let space = build_label_space(&joined, 10).unwrap();
        let text = space.to_tsv();
        let back = LabelSpace::from_tsv(&text).unwrap();
        assert_eq!(back, space);
    }

    #[test]
    fn bigram_count_is_bounded_by_half_the_term_count() {
        let emb = embeddings_for(&["cyst", "tumor", "edema", "hernia", "liver"]);
        let lexicon = test_lexicon();
        let w = window(&["cyst", "tumor", "edema", "hernia", "liver", "cyst"]);
        let (labels, _) = mine_disease_bigrams(&w, &lexicon, &emb);
        let term_count = w.tokens.iter().filter(|t| lexicon.contains_token(t)).count();
        assert!(labels.len() <= term_count / 2);
    }
}
