//! Token normalization: lowercasing, punctuation stripping, stopword
//! removal, digit filtering and rule-table suffix stemming.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use super::CorpusError;

const DEFAULT_STOPWORDS: &str = include_str!("../../data/stopwords.txt");
const DEFAULT_STEM_RULES: &str = include_str!("../../data/stem_rules.tsv");

/// One suffix-stripping rule; `replacement == suffix` acts as a guard that
/// stops its step without changing the word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StemRule {
    pub step: char,
    pub suffix: String,
    pub replacement: String,
    pub min_stem: usize,
}

/// Normalization settings shared by every stage that touches tokens.
#[derive(Debug, Clone)]
pub struct PreprocessConfig {
    pub stem: bool,
    pub keep_digits: bool,
    stopwords: BTreeSet<String>,
    rules: Vec<StemRule>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            stem: true,
            keep_digits: false,
            stopwords: parse_stopwords(DEFAULT_STOPWORDS),
            rules: parse_stem_rules(DEFAULT_STEM_RULES)
                .expect("embedded stem rule table is well-formed"),
        }
    }
}

impl PreprocessConfig {
    pub fn with_stem(mut self, stem: bool) -> Self {
        self.stem = stem;
        self
    }

    pub fn with_keep_digits(mut self, keep: bool) -> Self {
        self.keep_digits = keep;
        self
    }

    /// Replace the stopword list with the one in `words` (one per line,
    /// `#` comments ignored).
    pub fn with_stopword_list(mut self, words: &str) -> Self {
        self.stopwords = parse_stopwords(words);
        self
    }

    pub fn load_stopwords(mut self, path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.stopwords = parse_stopwords(&text);
        Ok(self)
    }

    pub fn load_stem_rules(mut self, path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.rules = parse_stem_rules(&text)?;
        Ok(self)
    }

    pub fn is_stopword(&self, token: &str) -> bool {
        self.stopwords.contains(token)
    }
}

fn parse_stopwords(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.to_ascii_lowercase())
        .collect()
}

fn parse_stem_rules(text: &str) -> Result<Vec<StemRule>, CorpusError> {
    let mut rules = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let (step, suffix, replacement, min_stem) = (
            fields.next(),
            fields.next(),
            fields.next(),
            fields.next(),
        );
        let parsed = match (step, suffix, replacement, min_stem) {
            (Some(s), Some(suf), Some(rep), Some(min)) if s.len() == 1 && !suf.is_empty() => {
                min.trim().parse::<usize>().ok().map(|min_stem| StemRule {
                    step: s.chars().next().unwrap(),
                    suffix: suf.to_string(),
                    replacement: rep.to_string(),
                    min_stem,
                })
            }
            _ => None,
        };
        match parsed {
            Some(rule) => rules.push(rule),
            None => {
                return Err(CorpusError::MalformedRule {
                    line: i + 1,
                    content: line.to_string(),
                })
            }
        }
    }
    Ok(rules)
}

/// Apply the rule table to one token: steps run in order, at most one rule
/// per step (first suffix match that leaves `min_stem` characters).
pub fn stem(token: &str, rules: &[StemRule]) -> String {
    let mut word = token.to_string();
    let step_of = |step: char, word: &mut String| {
        for rule in rules.iter().filter(|r| r.step == step) {
            if let Some(stem_part) = word.strip_suffix(rule.suffix.as_str()) {
                if stem_part.len() >= rule.min_stem {
                    let mut out = stem_part.to_string();
                    out.push_str(&rule.replacement);
                    *word = out;
                    return;
                }
            }
        }
    };
    let mut steps: Vec<char> = Vec::new();
    for rule in rules {
        if !steps.contains(&rule.step) {
            steps.push(rule.step);
        }
    }
    for step in steps {
        step_of(step, &mut word);
    }
    word
}

/// Lowercase, split into maximal `[a-z0-9-]` runs (hyphenated terms stay
/// whole), drop stopwords and (by default) pure digit tokens, then stem.
pub fn normalize(raw: &str, config: &PreprocessConfig) -> Vec<String> {
    let lowered = raw.to_ascii_lowercase();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in lowered.chars() {
        if ch.is_ascii_lowercase() || ch.is_ascii_digit() || ch == '-' {
            current.push(ch);
        } else if !current.is_empty() {
            push_token(&mut tokens, std::mem::take(&mut current), config);
        }
    }
    if !current.is_empty() {
        push_token(&mut tokens, current, config);
    }
    tokens
}

fn push_token(tokens: &mut Vec<String>, run: String, config: &PreprocessConfig) {
    let trimmed = run.trim_matches('-');
    if trimmed.is_empty() {
        return;
    }
    if config.stopwords.contains(trimmed) {
        return;
    }
    let is_digit_token =
        trimmed.chars().all(|c| c.is_ascii_digit() || c == '-') && trimmed.contains(|c: char| c.is_ascii_digit());
    if is_digit_token && !config.keep_digits {
        return;
    }
    let token = if config.stem && !is_digit_token {
        stem(trimmed, &config.rules)
    } else {
        trimmed.to_string()
    };
    if !token.is_empty() {
        tokens.push(token);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stems_effusion_keeps_pleural() {
        let config = PreprocessConfig::default();
        assert_eq!(normalize("Pleural effusion.", &config), vec!["pleural", "effus"]);
    }

    #[test]
    fn empty_input_yields_empty_list() {
        let config = PreprocessConfig::default();
        assert!(normalize("", &config).is_empty());
    }

    #[test]
    fn all_stopwords_yield_empty_list() {
        let config = PreprocessConfig::default().with_stopword_list("the\nof\nand\n");
        assert!(normalize("the of and", &config).is_empty());
    }

    #[test]
    fn singular_plural_forms_unify() {
        let config = PreprocessConfig::default();
        for (a, b) in [
            ("cyst", "cysts"),
            ("cyst", "cystic"),
            ("image", "images"),
            ("mass", "masses"),
            ("node", "nodes"),
            ("effusion", "effusions"),
            ("finding", "findings"),
        ] {
            assert_eq!(
                normalize(a, &config),
                normalize(b, &config),
                "{a} vs {b}"
            );
        }
    }

    #[test]
    fn noted_does_not_collapse_to_not() {
        let config = PreprocessConfig::default();
        assert_eq!(normalize("noted", &config), vec!["noted"]);
        assert_eq!(normalize("not", &config), vec!["not"]);
    }

    #[test]
    fn hyphenated_terms_stay_whole() {
        let config = PreprocessConfig::default();
        assert_eq!(normalize("T2-weighted", &config), vec!["t2-weight"]);
    }

    #[test]
    fn digit_tokens_follow_config() {
        let drop = PreprocessConfig::default();
        assert!(normalize("scan 1013-78 done", &drop).contains(&"scan".to_string()));
        assert!(!normalize("scan 1013-78 done", &drop).iter().any(|t| t == "1013-78"));
        let keep = PreprocessConfig::default().with_keep_digits(true);
        assert!(normalize("scan 1013-78 done", &keep).iter().any(|t| t == "1013-78"));
    }
}
