//! Data-side subcommands: ingest, extract-refs, mine-terms, build-labels.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use radmine_core::corpus::CorpusFormat;
use radmine_core::keyimage::{
    self, format_extraction_report, ContextWindow, ImageKey, ReferenceGrammar,
};
use radmine_core::termmine::{
    build_label_space, detect_assertions, label_assignments, load_lexicon, load_triggers,
    polarity_frequency_table, AssertionResult, Polarity,
};

use super::{load_reports, load_windows, write_jsonl, write_text, Ctx};
use crate::manifest::ManifestBuilder;

#[derive(Args)]
pub struct IngestArgs {
    /// Raw corpus JSONL (one record per line: report_id, optional
    /// accession, text).
    #[arg(long)]
    pub input: Option<PathBuf>,
}

pub fn ingest(ctx: &Ctx, args: &IngestArgs) -> Result<()> {
    let input = ctx.corpus_path(&args.input);
    let mut manifest = ManifestBuilder::new("ingest", ctx.seed);
    manifest.input(&input);
    let reports = radmine_core::corpus::ingest_reports(&input, CorpusFormat::Jsonl, &ctx.preprocess)
        .with_context(|| format!("ingesting {}", input.display()))?;
    let out = ctx.out_file("corpus.norm.jsonl");
    write_jsonl(&out, &reports)?;
    manifest.output(&out);
    manifest.write(&ctx.out_dir)?;
    println!("ingested {} reports -> {}", reports.len(), out.display());
    Ok(())
}

#[derive(Args)]
pub struct ExtractRefsArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Reference grammar pattern file; embedded defaults when omitted.
    #[arg(long)]
    pub patterns: Option<PathBuf>,
    /// Accession-matched images without sentence references, as TSV:
    /// accession <TAB> series(or -) <TAB> image.
    #[arg(long)]
    pub accession_images: Option<PathBuf>,
}

pub fn extract_refs(ctx: &Ctx, args: &ExtractRefsArgs) -> Result<()> {
    let input = ctx.corpus_path(&args.input);
    let mut manifest = ManifestBuilder::new("extract-refs", ctx.seed);
    manifest.input(&input);
    let grammar = match &args.patterns {
        Some(path) => {
            manifest.input(path);
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading patterns {}", path.display()))?;
            ReferenceGrammar::parse(&text)?
        }
        None => ReferenceGrammar::default(),
    };
    let reports = load_reports(&input, &ctx.preprocess)?;

    let mut extraction = keyimage::Extraction::default();
    let mut windows: Vec<ContextWindow> = Vec::new();
    for report in &reports {
        let found = keyimage::extract_image_references(report, &grammar);
        for image_ref in &found.refs {
            windows.extend(keyimage::context_window(report, image_ref));
        }
        extraction.refs.extend(found.refs);
        extraction.warnings.extend(found.warnings);
    }

    if let Some(path) = &args.accession_images {
        manifest.input(path);
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading accession map {}", path.display()))?;
        let mut existing: std::collections::HashSet<String> =
            windows.iter().map(ContextWindow::key_string).collect();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            anyhow::ensure!(fields.len() == 3, "bad accession row at line {}", i + 1);
            let series = match fields[1] {
                "-" => None,
                s => Some(s.parse::<u32>().with_context(|| format!("bad series at line {}", i + 1))?),
            };
            let image: u32 =
                fields[2].parse().with_context(|| format!("bad image at line {}", i + 1))?;
            let Some(report) =
                reports.iter().find(|r| r.accession.as_deref() == Some(fields[0]))
            else {
                extraction.warnings.push(keyimage::ExtractionWarning {
                    report_id: String::new(),
                    sentence_index: 0,
                    message: format!("accession {:?} matches no report", fields[0]),
                });
                continue;
            };
            let window = keyimage::whole_report_window(report, ImageKey { series, image });
            if existing.insert(window.key_string()) {
                windows.push(window);
            }
        }
    }

    let refs_path = ctx.out_file("refs.tsv");
    write_text(&refs_path, &format_extraction_report(&extraction))?;
    let windows_path = ctx.out_file("windows.jsonl");
    write_jsonl(&windows_path, &windows)?;
    manifest.output(&refs_path);
    manifest.output(&windows_path);
    manifest.write(&ctx.out_dir)?;
    println!(
        "extracted {} references, {} windows ({} warnings)",
        extraction.refs.len(),
        windows.len(),
        extraction.warnings.len()
    );
    Ok(())
}

#[derive(Args)]
pub struct MineTermsArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub ontology: Option<PathBuf>,
    #[arg(long)]
    pub radiology: Option<PathBuf>,
    #[arg(long)]
    pub triggers: Option<PathBuf>,
}

pub fn mine_terms(ctx: &Ctx, args: &MineTermsArgs) -> Result<()> {
    let input = ctx.corpus_path(&args.input);
    let ontology = args
        .ontology
        .clone()
        .or_else(|| ctx.config.paths.ontology_lexicon.clone())
        .context("no ontology lexicon configured (--ontology or paths.ontology_lexicon)")?;
    let radiology = args
        .radiology
        .clone()
        .or_else(|| ctx.config.paths.radiology_lexicon.clone())
        .context("no radiology lexicon configured (--radiology or paths.radiology_lexicon)")?;
    let triggers_path = args
        .triggers
        .clone()
        .or_else(|| ctx.config.paths.triggers.clone())
        .context("no trigger lexicon configured (--triggers or paths.triggers)")?;

    let mut manifest = ManifestBuilder::new("mine-terms", ctx.seed);
    for p in [&input, &ontology, &radiology, &triggers_path] {
        manifest.input(p);
    }

    let lexicon = load_lexicon(
        &ontology,
        &radiology,
        &ctx.config.termmine.semantic_types,
        &ctx.preprocess,
    )?;
    let triggers = load_triggers(&triggers_path, &ctx.preprocess)?;
    let reports = load_reports(&input, &ctx.preprocess)?;

    let mut rows = String::new();
    let mut all: Vec<AssertionResult> = Vec::new();
    for report in &reports {
        for sentence in &report.sentences {
            for assertion in detect_assertions(sentence, &lexicon, &triggers) {
                rows.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                    report.report_id,
                    assertion.sentence_index,
                    assertion.term,
                    assertion.polarity.as_str(),
                    assertion.trigger.as_deref().unwrap_or("-"),
                    assertion.term_span.0,
                    assertion.term_span.1,
                ));
                all.push(assertion);
            }
        }
    }
    let assertions_path = ctx.out_file("assertions.tsv");
    write_text(&assertions_path, &rows)?;

    let mut csv = String::from("term,assert_count,negate_count,possible_count\n");
    for row in polarity_frequency_table(&all) {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            row.term, row.assert_count, row.negate_count, row.possible_count
        ));
    }
    let freq_path = ctx.out_file("polarity_freq.csv");
    write_text(&freq_path, &csv)?;

    manifest.output(&assertions_path);
    manifest.output(&freq_path);
    manifest.write(&ctx.out_dir)?;
    println!(
        "mined {} assertions over {} lexicon terms -> {}",
        all.len(),
        lexicon.len(),
        assertions_path.display()
    );
    Ok(())
}

/// Parse the assertions TSV written by mine-terms.
pub fn load_assertions(path: &std::path::Path) -> Result<Vec<(String, AssertionResult)>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading assertions {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        anyhow::ensure!(fields.len() == 7, "bad assertion row at line {}", i + 1);
        let polarity = match fields[3] {
            "asserted" => Polarity::Asserted,
            "negated" => Polarity::Negated,
            "possible" => Polarity::Possible,
            other => anyhow::bail!("unknown polarity {:?} at line {}", other, i + 1),
        };
        let span = (
            fields[5].parse().with_context(|| format!("bad span at line {}", i + 1))?,
            fields[6].parse().with_context(|| format!("bad span at line {}", i + 1))?,
        );
        out.push((
            fields[0].to_string(),
            AssertionResult {
                term: fields[2].to_string(),
                sentence_index: fields[1]
                    .parse()
                    .with_context(|| format!("bad sentence index at line {}", i + 1))?,
                polarity,
                trigger: (fields[4] != "-").then(|| fields[4].to_string()),
                term_span: span,
                scope: span,
            },
        ));
    }
    Ok(out)
}

#[derive(Args)]
pub struct BuildLabelsArgs {
    /// Assertions TSV from mine-terms.
    #[arg(long)]
    pub assertions: Option<PathBuf>,
    /// Context windows from extract-refs.
    #[arg(long)]
    pub windows: Option<PathBuf>,
    /// Minimum corpus frequency for a label to survive.
    #[arg(long)]
    pub min_frequency: Option<u64>,
}

pub fn build_labels(ctx: &Ctx, args: &BuildLabelsArgs) -> Result<()> {
    let assertions_path = args
        .assertions
        .clone()
        .unwrap_or_else(|| ctx.out_file("assertions.tsv"));
    let windows_path = args.windows.clone().unwrap_or_else(|| ctx.out_file("windows.jsonl"));
    let min_frequency = args
        .min_frequency
        .unwrap_or(ctx.config.termmine.min_label_frequency);

    let mut manifest = ManifestBuilder::new("build-labels", ctx.seed);
    manifest.input(&assertions_path);
    manifest.input(&windows_path);

    let assertions = load_assertions(&assertions_path)?;
    let windows = load_windows(&windows_path)?;

    // Index assertions by (report, sentence) and join through each
    // window's sentence list.
    let mut by_sentence: BTreeMap<(String, usize), Vec<&AssertionResult>> = BTreeMap::new();
    for (report_id, assertion) in &assertions {
        by_sentence
            .entry((report_id.clone(), assertion.sentence_index))
            .or_default()
            .push(assertion);
    }
    let mut joined: Vec<(String, AssertionResult)> = Vec::new();
    for window in &windows {
        let key = window.key_string();
        for &sentence in &window.sentence_indices {
            if let Some(list) = by_sentence.get(&(window.report_id.clone(), sentence)) {
                for assertion in list {
                    joined.push((key.clone(), (*assertion).clone()));
                }
            }
        }
    }

    // Pipeline sanity statistic: lexicon term mentions per window.
    let mut counts_by_key: BTreeMap<&str, usize> = BTreeMap::new();
    for (key, _) in &joined {
        *counts_by_key.entry(key.as_str()).or_insert(0) += 1;
    }
    let window_counts: Vec<f64> = windows
        .iter()
        .map(|w| counts_by_key.get(w.key_string().as_str()).copied().unwrap_or(0) as f64)
        .collect();
    let mean = window_counts.iter().sum::<f64>() / window_counts.len().max(1) as f64;
    let std = (window_counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>()
        / window_counts.len().max(1) as f64)
        .sqrt();

    let space = build_label_space(&joined, min_frequency)?;
    let assignments = label_assignments(&joined, &space);

    let space_path = ctx.out_file("label_space.tsv");
    write_text(&space_path, &space.to_tsv())?;
    let labels_path = ctx.out_file("labels.tsv");
    let mut rows = String::new();
    for (key, label) in &assignments {
        rows.push_str(&format!("{key}\t{label}\n"));
    }
    write_text(&labels_path, &rows)?;

    manifest.output(&space_path);
    manifest.output(&labels_path);
    manifest.write(&ctx.out_dir)?;
    println!(
        "label space: {} present + {} absent = {} labels; {} image-label pairs; {:.2} +- {:.2} term mentions per window",
        space.present_count(),
        space.absent_count(),
        space.len(),
        assignments.len(),
        mean,
        std
    );
    Ok(())
}
