//! Topic-model and embedding subcommands.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use radmine_core::lda::{
    self, LdaModel, LdaParams, SubtopicParams, KEYWORDS_PER_TOPIC,
};
use radmine_core::model_io;

use super::{load_reports, load_unit_docs, save_model, write_text, Ctx, DocUnit};
use crate::manifest::ManifestBuilder;

#[derive(Args)]
pub struct LdaSelectArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Bag-of-words unit: whole reports or context windows.
    #[arg(long, value_enum, default_value_t = DocUnit::Report)]
    pub unit: DocUnit,
    /// Candidate topic counts; falls back to [lda].candidate_ks.
    #[arg(long, value_delimiter = ',')]
    pub candidates: Option<Vec<usize>>,
}

pub fn lda_select(ctx: &Ctx, args: &LdaSelectArgs) -> Result<()> {
    let input = match args.unit {
        DocUnit::Report => ctx.corpus_path(&args.input),
        DocUnit::Window => args.input.clone().unwrap_or_else(|| ctx.out_file("windows.jsonl")),
    };
    let mut manifest = ManifestBuilder::new("lda-select", ctx.seed);
    manifest.input(&input);
    let (vocab, docs) =
        load_unit_docs(ctx, args.unit, &input, ctx.config.preprocess.min_count)?;
    let candidates = args
        .candidates
        .clone()
        .unwrap_or_else(|| ctx.config.lda.candidate_ks.clone());
    let params = ctx.config.lda.select_params(ctx.seed);
    let report = lda::select_topic_count(&docs, &vocab, &candidates, &params)?;

    let mut csv = String::from("k,perplexity\n");
    for (k, score) in report.candidates.iter().zip(&report.scores) {
        csv.push_str(&format!("{k},{score}\n"));
    }
    let csv_path = ctx.out_file("lda_select.csv");
    write_text(&csv_path, &csv)?;
    manifest.output(&csv_path);
    manifest.write(&ctx.out_dir)?;
    println!(
        "chosen_k={} over {} held-out docs; sweep -> {}",
        report.chosen_k,
        report.heldout_docs,
        csv_path.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct LdaFitArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DocUnit::Report)]
    pub unit: DocUnit,
    /// Topic count; falls back to [lda].k.
    #[arg(long)]
    pub k: Option<usize>,
    /// Output model file name (within the output directory).
    #[arg(long, default_value = "lda_model.bin")]
    pub model_out: String,
}

pub fn lda_fit(ctx: &Ctx, args: &LdaFitArgs) -> Result<()> {
    let input = match args.unit {
        DocUnit::Report => ctx.corpus_path(&args.input),
        DocUnit::Window => args.input.clone().unwrap_or_else(|| ctx.out_file("windows.jsonl")),
    };
    let mut manifest = ManifestBuilder::new("lda-fit", ctx.seed);
    manifest.input(&input);
    let (vocab, docs) =
        load_unit_docs(ctx, args.unit, &input, ctx.config.preprocess.min_count)?;
    let k = args.k.unwrap_or(ctx.config.lda.k);
    let model = lda::fit_lda(
        &docs,
        &vocab,
        &LdaParams {
            k,
            alpha: ctx.config.lda.alpha,
            beta: ctx.config.lda.beta,
            iterations: ctx.config.lda.iterations,
            seed: ctx.seed,
        },
    )?;

    let model_path = ctx.out_file(&args.model_out);
    save_model(&model_path, &model.to_container())?;
    let topics_path = ctx.out_file("lda_topics.tsv");
    write_text(&topics_path, &topics_tsv(&model))?;
    manifest.output(&model_path);
    manifest.output(&topics_path);
    manifest.write(&ctx.out_dir)?;
    println!("fit k={k} on {} docs -> {}", docs.len(), model_path.display());
    Ok(())
}

fn topics_tsv(model: &LdaModel) -> String {
    let mut out = String::new();
    for topic in 0..model.k {
        for (rank, (token, prob)) in
            lda::top_keywords(model, topic, KEYWORDS_PER_TOPIC).iter().enumerate()
        {
            out.push_str(&format!("{topic}\t{rank}\t{token}\t{prob}\n"));
        }
    }
    out
}

#[derive(Args)]
pub struct LdaSubtopicsArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DocUnit::Report)]
    pub unit: DocUnit,
    /// Parent model file.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

pub fn lda_subtopics(ctx: &Ctx, args: &LdaSubtopicsArgs) -> Result<()> {
    let input = match args.unit {
        DocUnit::Report => ctx.corpus_path(&args.input),
        DocUnit::Window => args.input.clone().unwrap_or_else(|| ctx.out_file("windows.jsonl")),
    };
    let model_path = args.model.clone().unwrap_or_else(|| ctx.out_file("lda_model.bin"));
    let mut manifest = ManifestBuilder::new("lda-subtopics", ctx.seed);
    manifest.input(&input);
    manifest.input(&model_path);
    let parent = LdaModel::from_container(&super::load_model(&model_path)?)?;

    // Bag-of-words against the parent's vocabulary, so term ids line up.
    let docs: Vec<radmine_core::corpus::BowDocument> = match args.unit {
        DocUnit::Report => {
            let reports = load_reports(&input, &ctx.preprocess)?;
            reports
                .iter()
                .map(|r| {
                    radmine_core::corpus::BowDocument::from_tokens(
                        r.report_id.clone(),
                        r.tokens(),
                        &parent.vocab,
                    )
                })
                .filter(|d| d.total > 0)
                .collect()
        }
        DocUnit::Window => {
            let windows = super::load_windows(&input)?;
            windows
                .iter()
                .map(|w| {
                    radmine_core::corpus::BowDocument::from_tokens(
                        w.key_string(),
                        w.tokens.iter().map(String::as_str),
                        &parent.vocab,
                    )
                })
                .filter(|d| d.total > 0)
                .collect()
        }
    };

    let fit = lda::fit_subtopics(
        &parent,
        &docs,
        &SubtopicParams {
            candidate_ks: ctx.config.lda.subtopic_candidates.clone(),
            min_docs: ctx.config.lda.min_docs,
            select: ctx.config.lda.select_params(ctx.seed),
            fold_in_iterations: ctx.config.lda.fold_in_iterations,
            seed: ctx.seed,
        },
    )?;

    let sub_dir = ctx.out_file("subtopics");
    std::fs::create_dir_all(&sub_dir)
        .with_context(|| format!("creating {}", sub_dir.display()))?;
    let mut summary = String::from("# parent\tstatus\tsub_k\tmember_docs\n");
    let mut total_subtopics = 0usize;
    for (parent_topic, members) in &fit.members {
        match fit.models.get(parent_topic) {
            Some(model) => {
                let path = sub_dir.join(format!("parent{parent_topic}.bin"));
                save_model(&path, &model.to_container())?;
                manifest.output(&path);
                summary.push_str(&format!(
                    "{parent_topic}\tfit\t{}\t{}\n",
                    model.k,
                    members.len()
                ));
                total_subtopics += model.k;
            }
            None => {
                summary.push_str(&format!("{parent_topic}\tskipped\t-\t{}\n", members.len()));
            }
        }
    }
    let summary_path = ctx.out_file("lda_subtopics.tsv");
    write_text(&summary_path, &summary)?;
    manifest.output(&summary_path);
    manifest.write(&ctx.out_dir)?;
    println!(
        "fit {} sub-models ({} sub-topics total, {} parents skipped)",
        fit.models.len(),
        total_subtopics,
        fit.skipped.len()
    );
    Ok(())
}

#[derive(Args)]
pub struct W2vTrainArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Also export the plain-text vector format.
    #[arg(long, default_value_t = true)]
    pub text_out: bool,
}

pub fn w2v_train(ctx: &Ctx, args: &W2vTrainArgs) -> Result<()> {
    let input = ctx.corpus_path(&args.input);
    let mut manifest = ManifestBuilder::new("w2v-train", ctx.seed);
    manifest.input(&input);
    let reports = load_reports(&input, &ctx.preprocess)?;
    // One stream per sentence: windows never cross sentence boundaries.
    let streams: Vec<Vec<String>> = reports
        .iter()
        .flat_map(|r| r.sentences.iter().map(|s| s.tokens.clone()))
        .filter(|s| !s.is_empty())
        .collect();
    let embed_cfg = &ctx.config.embed;
    let config = radmine_core::embed::SkipGramConfig {
        dim: embed_cfg.dim,
        window: embed_cfg.window,
        subsample_t: embed_cfg.subsample_t,
        epochs: embed_cfg.epochs,
        min_count: embed_cfg.min_count,
        start_lr: embed_cfg.start_lr,
        end_lr: embed_cfg.end_lr,
        seed: ctx.seed,
    };
    let (model, stats) = radmine_core::embed::train_skipgram(&streams, &config)?;

    let model_path = ctx.out_file("embeddings.bin");
    save_model(&model_path, &model.to_container())?;
    manifest.output(&model_path);
    if args.text_out {
        let text_path = ctx.out_file("vectors.txt");
        let file = std::fs::File::create(&text_path)
            .with_context(|| format!("creating {}", text_path.display()))?;
        model_io::write_vectors_text(
            std::io::BufWriter::new(file),
            &model.vocab,
            &model.input,
            model.dim(),
        )?;
        manifest.output(&text_path);
    }
    manifest.write(&ctx.out_dir)?;
    println!(
        "trained {} pairs over V={} -> {}",
        stats.pairs_trained,
        model.vocab.len(),
        model_path.display()
    );
    Ok(())
}

/// Shared by train-topic and interpret: per-window dominant topics.
pub fn assign_window_topics(
    ctx: &Ctx,
    model: &LdaModel,
    windows: &[radmine_core::keyimage::ContextWindow],
) -> (BTreeMap<String, usize>, usize) {
    let mut assignments = BTreeMap::new();
    let mut skipped = 0usize;
    for (i, window) in windows.iter().enumerate() {
        let doc = radmine_core::corpus::BowDocument::from_tokens(
            window.key_string(),
            window.tokens.iter().map(String::as_str),
            &model.vocab,
        );
        match lda::assign_dominant_topic(
            model,
            &doc,
            ctx.config.lda.fold_in_iterations,
            ctx.seed.wrapping_add(i as u64),
        ) {
            Ok(topic) => {
                assignments.insert(window.key_string(), topic);
            }
            Err(_) => skipped += 1,
        }
    }
    (assignments, skipped)
}

