//! Subcommand implementations and shared helpers.

pub mod data;
pub mod infer;
pub mod synth;
pub mod topics;
pub mod train;

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use radmine_core::classifier::FeatureRecord;
use radmine_core::corpus::{BowDocument, PreprocessConfig, Report, Vocabulary};
use radmine_core::keyimage::ContextWindow;
use radmine_core::model_io;

use crate::config::PipelineConfig;

/// Resolved invocation context shared by every subcommand.
pub struct Ctx {
    pub config: PipelineConfig,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub preprocess: PreprocessConfig,
}

impl Ctx {
    pub fn new(
        config: PipelineConfig,
        out_override: Option<PathBuf>,
        seed_override: Option<u64>,
    ) -> Result<Ctx> {
        let out_dir = out_override
            .or_else(|| config.paths.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        fs::create_dir_all(&out_dir)
            .with_context(|| format!("creating output directory {}", out_dir.display()))?;
        let seed = seed_override.unwrap_or(config.seeds.master);
        let preprocess = config.preprocess.build()?;
        Ok(Ctx { config, out_dir, seed, preprocess })
    }

    /// Default corpus input: explicit flag, then config, then
    /// `<out>/corpus.jsonl`.
    pub fn corpus_path(&self, flag: &Option<PathBuf>) -> PathBuf {
        flag.clone()
            .or_else(|| self.config.paths.corpus.clone())
            .unwrap_or_else(|| self.out_dir.join("corpus.jsonl"))
    }

    pub fn features_path(&self, flag: &Option<PathBuf>) -> PathBuf {
        flag.clone()
            .or_else(|| self.config.paths.features.clone())
            .unwrap_or_else(|| self.out_dir.join("features.tsv"))
    }

    pub fn out_file(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

/// Load a report collection. Lines that already carry sentences (the
/// normalized artifact written by `ingest`) are taken as-is; raw lines
/// are segmented and normalized on the fly.
pub fn load_reports(path: &Path, config: &PreprocessConfig) -> Result<Vec<Report>> {
    let file =
        File::open(path).with_context(|| format!("opening corpus {}", path.display()))?;
    let reader = BufReader::new(file);
    let mut reports = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .with_context(|| format!("malformed record at line {}", i + 1))?;
        let report = if value.get("sentences").is_some() {
            serde_json::from_value::<Report>(value)
                .with_context(|| format!("malformed normalized report at line {}", i + 1))?
        } else {
            let id = value
                .get("report_id")
                .and_then(|v| v.as_str())
                .with_context(|| format!("missing report_id at line {}", i + 1))?
                .to_string();
            let accession = value
                .get("accession")
                .and_then(|v| v.as_str())
                .map(str::to_string);
            let text = value
                .get("text")
                .and_then(|v| v.as_str())
                .with_context(|| format!("missing text at line {}", i + 1))?
                .to_string();
            Report::new(id, accession, text, config)
        };
        if !seen.insert(report.report_id.clone()) {
            anyhow::bail!("duplicate report_id {:?} at line {}", report.report_id, i + 1);
        }
        reports.push(report);
    }
    Ok(reports)
}

pub fn load_windows(path: &Path) -> Result<Vec<ContextWindow>> {
    let file =
        File::open(path).with_context(|| format!("opening windows {}", path.display()))?;
    let reader = BufReader::new(file);
    let mut windows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        windows.push(
            serde_json::from_str(&line)
                .with_context(|| format!("malformed window at line {}", i + 1))?,
        );
    }
    Ok(windows)
}

/// Which text unit forms one bag-of-words document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum DocUnit {
    /// Whole reports.
    Report,
    /// Key-image context windows.
    Window,
}

/// Build the vocabulary and bag-of-words documents for the chosen unit.
pub fn load_unit_docs(
    ctx: &Ctx,
    unit: DocUnit,
    input: &Path,
    min_count: u64,
) -> Result<(Vocabulary, Vec<BowDocument>)> {
    match unit {
        DocUnit::Report => {
            let reports = load_reports(input, &ctx.preprocess)?;
            let vocab = radmine_core::corpus::build_vocabulary(&reports, min_count);
            anyhow::ensure!(!vocab.is_empty(), "corpus produced an empty vocabulary");
            let docs = reports
                .iter()
                .map(|r| BowDocument::from_tokens(r.report_id.clone(), r.tokens(), &vocab))
                .filter(|d| d.total > 0)
                .collect();
            Ok((vocab, docs))
        }
        DocUnit::Window => {
            let windows = load_windows(input)?;
            let vocab = Vocabulary::from_token_streams(
                windows.iter().map(|w| w.tokens.iter().map(String::as_str)),
                min_count,
            );
            anyhow::ensure!(!vocab.is_empty(), "windows produced an empty vocabulary");
            let docs = windows
                .iter()
                .map(|w| {
                    BowDocument::from_tokens(
                        w.key_string(),
                        w.tokens.iter().map(String::as_str),
                        &vocab,
                    )
                })
                .filter(|d| d.total > 0)
                .collect();
            Ok((vocab, docs))
        }
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_jsonl<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file =
        File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut writer = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut writer, item)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_model(path: &Path, container: &model_io::Container) -> Result<()> {
    model_io::save_container(path, container)
        .with_context(|| format!("writing model {}", path.display()))
}

pub fn load_model(path: &Path) -> Result<model_io::Container> {
    model_io::load_container(path)
        .with_context(|| format!("reading model {}", path.display()))
}

/// Labels file rows: `image_key <TAB> label`.
pub fn load_labels_tsv(path: &Path) -> Result<Vec<(String, usize)>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading labels {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let key = fields
            .next()
            .with_context(|| format!("missing image key at line {}", i + 1))?;
        let label: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .with_context(|| format!("bad label at line {}", i + 1))?;
        out.push((key.to_string(), label));
    }
    Ok(out)
}

pub fn write_labels_tsv(path: &Path, labels: &[(String, usize)]) -> Result<()> {
    let mut text = String::new();
    for (key, label) in labels {
        text.push_str(&format!("{key}\t{label}\n"));
    }
    write_text(path, &text)
}

/// Join features to labels by image key, fanning out duplicate label
/// rows (an image trained once per label occurrence).
pub fn join_features_labels(
    features: &[FeatureRecord],
    labels: &[(String, usize)],
) -> (Vec<FeatureRecord>, Vec<usize>) {
    let by_key: std::collections::HashMap<&str, &FeatureRecord> =
        features.iter().map(|f| (f.image_key.as_str(), f)).collect();
    let mut joined_features = Vec::new();
    let mut joined_labels = Vec::new();
    for (key, label) in labels {
        if let Some(&record) = by_key.get(key.as_str()) {
            joined_features.push(record.clone());
            joined_labels.push(*label);
        }
    }
    (joined_features, joined_labels)
}
