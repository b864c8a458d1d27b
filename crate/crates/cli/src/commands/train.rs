//! Training subcommands: the topic/disease softmax heads, the bi-gram
//! regression head, and transfer learning via output-layer replacement.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use radmine_core::classifier::{
    self, FeatureRecord, FeedForwardModel, Head, Targets, TrainOptions, TrainReport,
};
use radmine_core::embed::EmbeddingModel;
use radmine_core::lda::LdaModel;
use radmine_core::model_io;
use radmine_core::termmine::{load_lexicon, mine_disease_bigrams};

use super::{
    join_features_labels, load_labels_tsv, load_model, load_windows, save_model, write_text, Ctx,
};
use crate::manifest::ManifestBuilder;

fn trace_csv(report: &TrainReport) -> String {
    let mut csv = String::from("iteration,cv_top1\n");
    for (iteration, acc) in &report.trace {
        csv.push_str(&format!("{iteration},{acc}\n"));
    }
    csv
}

/// Trained model, surviving original class ids, and the densified
/// per-image labels.
type TrainedClassifier = (FeedForwardModel, Vec<usize>, Vec<(String, usize)>);

/// Split, filter small classes, train with a cv trace, and return the
/// model plus the densified per-image labels.
#[allow(clippy::too_many_arguments)]
fn run_classification_training(
    ctx: &Ctx,
    features: Vec<FeatureRecord>,
    labels: Vec<usize>,
    n_classes: usize,
    init: Option<FeedForwardModel>,
    base_lr: f64,
    name: &str,
    manifest: &mut ManifestBuilder,
) -> Result<TrainedClassifier> {
    anyhow::ensure!(!features.is_empty(), "no training rows after the feature/label join");
    let cls = &ctx.config.classifier;
    let split_spec = cls.split_spec(ctx.seed);
    let filter = classifier::filter_small_classes(&labels, n_classes, &split_spec, cls.min_per_split)?;
    let kept_features: Vec<FeatureRecord> =
        filter.kept_rows.iter().map(|&i| features[i].clone()).collect();
    let kept_labels: Vec<usize> = filter
        .kept_rows
        .iter()
        .map(|&i| filter.remap[labels[i]].expect("kept row has a surviving class"))
        .collect();
    let dense_classes = filter.kept_classes.len();
    let split = split_spec.split(&kept_features, &kept_labels)?;

    let take = |rows: &[usize]| -> (Vec<FeatureRecord>, Vec<usize>) {
        (
            rows.iter().map(|&i| kept_features[i].clone()).collect(),
            rows.iter().map(|&i| kept_labels[i]).collect(),
        )
    };
    let (train_x, train_y) = take(&split.train);
    let (cv_x, cv_y) = take(&split.cv);

    let input_dim = kept_features[0].features.len();
    let mut model = match init {
        Some(model) => model,
        None => {
            let mut sizes = vec![input_dim];
            sizes.extend(&cls.hidden);
            sizes.push(dense_classes);
            FeedForwardModel::random(&sizes, Head::Softmax, ctx.seed)?
        }
    };
    let cv = (!cv_x.is_empty()).then_some((cv_x.as_slice(), cv_y.as_slice()));
    let report = classifier::train(
        &mut model,
        &train_x,
        &Targets::Classes { labels: train_y, n_classes: dense_classes },
        cv,
        &TrainOptions {
            epochs: cls.epochs,
            base_lr,
            batch_size: cls.batch_size,
            seed: ctx.seed,
            trace_every: cls.trace_every,
        },
    )?;

    let trace_path = ctx.out_file(&format!("{name}_trace.csv"));
    write_text(&trace_path, &trace_csv(&report))?;
    manifest.output(&trace_path);

    // Densified labels for every kept row, so eval can reproduce the
    // split from the same config.
    let dense_rows: Vec<(String, usize)> = filter
        .kept_rows
        .iter()
        .zip(&kept_labels)
        .map(|(&i, &label)| (features[i].image_key.clone(), label))
        .collect();
    Ok((model, filter.kept_classes, dense_rows))
}

#[derive(Args)]
pub struct TrainTopicArgs {
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Context windows providing each image's document.
    #[arg(long)]
    pub windows: Option<PathBuf>,
    /// Topic model assigning documents to topics.
    #[arg(long)]
    pub lda_model: Option<PathBuf>,
    /// Artifact name prefix (topic_model.bin etc).
    #[arg(long, default_value = "topic")]
    pub name: String,
}

pub fn train_topic(ctx: &Ctx, args: &TrainTopicArgs) -> Result<()> {
    let features_path = ctx.features_path(&args.features);
    let windows_path = args.windows.clone().unwrap_or_else(|| ctx.out_file("windows.jsonl"));
    let lda_path = args.lda_model.clone().unwrap_or_else(|| ctx.out_file("lda_model.bin"));
    let mut manifest = ManifestBuilder::new("train-topic", ctx.seed);
    for p in [&features_path, &windows_path, &lda_path] {
        manifest.input(p);
    }

    let features = model_io::read_features(&features_path)?;
    let windows = load_windows(&windows_path)?;
    let lda = LdaModel::from_container(&load_model(&lda_path)?)?;
    let (topic_by_image, skipped) = super::topics::assign_window_topics(ctx, &lda, &windows);
    if skipped > 0 {
        eprintln!("warning: {skipped} windows had no in-vocabulary tokens");
    }
    let labels: Vec<(String, usize)> = topic_by_image.into_iter().collect();
    let (joined_x, joined_y) = join_features_labels(&features, &labels);

    let (model, kept_classes, dense_rows) = run_classification_training(
        ctx,
        joined_x,
        joined_y,
        lda.k,
        None,
        ctx.config.classifier.base_lr,
        &args.name,
        &mut manifest,
    )?;

    let model_path = ctx.out_file(&format!("{}_model.bin", args.name));
    save_model(&model_path, &model.to_container())?;
    let classes_path = ctx.out_file(&format!("{}_classes.tsv", args.name));
    let mut rows = String::new();
    for (dense, topic) in kept_classes.iter().enumerate() {
        rows.push_str(&format!("{dense}\t{topic}\n"));
    }
    write_text(&classes_path, &rows)?;
    let labels_path = ctx.out_file(&format!("{}_labels.tsv", args.name));
    super::write_labels_tsv(&labels_path, &dense_rows)?;

    manifest.output(&model_path);
    manifest.output(&classes_path);
    manifest.output(&labels_path);
    manifest.write(&ctx.out_dir)?;
    println!(
        "trained {} classes on {} rows -> {}",
        kept_classes.len(),
        dense_rows.len(),
        model_path.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct TrainDiseaseArgs {
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Per-image label ids from build-labels.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Label space TSV (for the class count).
    #[arg(long)]
    pub label_space: Option<PathBuf>,
    /// Initialize from this model, replacing its output layer.
    #[arg(long)]
    pub base: Option<PathBuf>,
    #[arg(long, default_value = "disease")]
    pub name: String,
}

pub fn train_disease(ctx: &Ctx, args: &TrainDiseaseArgs) -> Result<()> {
    let features_path = ctx.features_path(&args.features);
    let labels_path = args.labels.clone().unwrap_or_else(|| ctx.out_file("labels.tsv"));
    let space_path = args.label_space.clone().unwrap_or_else(|| ctx.out_file("label_space.tsv"));
    let mut manifest = ManifestBuilder::new("train-disease", ctx.seed);
    for p in [&features_path, &labels_path, &space_path] {
        manifest.input(p);
    }

    let features = model_io::read_features(&features_path)?;
    let labels = load_labels_tsv(&labels_path)?;
    let space = radmine_core::termmine::LabelSpace::from_tsv(
        &std::fs::read_to_string(&space_path)
            .with_context(|| format!("reading {}", space_path.display()))?,
    )?;
    let (joined_x, joined_y) = join_features_labels(&features, &labels);

    let (init, base_lr) = match &args.base {
        Some(base_path) => {
            manifest.input(base_path);
            let base = FeedForwardModel::from_container(&load_model(base_path)?)?;
            let cls = &ctx.config.classifier;
            // Class count after filtering is unknown until the filter
            // runs, so pre-filter here to size the new output layer.
            let split_spec = cls.split_spec(ctx.seed);
            let filter = classifier::filter_small_classes(
                &joined_y,
                space.len(),
                &split_spec,
                cls.min_per_split,
            )?;
            let tuned = classifier::fine_tune(
                &base,
                filter.kept_classes.len(),
                Some(Head::Softmax),
                cls.fine_tune_base_lr,
                cls.fine_tune_new_layer_lr,
                ctx.seed,
            )?;
            (Some(tuned), cls.fine_tune_base_lr)
        }
        None => (None, ctx.config.classifier.base_lr),
    };

    let (model, kept_classes, dense_rows) = run_classification_training(
        ctx,
        joined_x,
        joined_y,
        space.len(),
        init,
        base_lr,
        &args.name,
        &mut manifest,
    )?;

    let model_path = ctx.out_file(&format!("{}_model.bin", args.name));
    save_model(&model_path, &model.to_container())?;
    let classes_path = ctx.out_file(&format!("{}_classes.tsv", args.name));
    let mut rows = String::new();
    for (dense, label_id) in kept_classes.iter().enumerate() {
        rows.push_str(&format!("{dense}\t{label_id}\n"));
    }
    write_text(&classes_path, &rows)?;
    let labels_out = ctx.out_file(&format!("{}_labels.tsv", args.name));
    super::write_labels_tsv(&labels_out, &dense_rows)?;

    manifest.output(&model_path);
    manifest.output(&classes_path);
    manifest.output(&labels_out);
    manifest.write(&ctx.out_dir)?;
    println!(
        "trained {} disease classes on {} rows -> {}",
        kept_classes.len(),
        dense_rows.len(),
        model_path.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct TrainBigramArgs {
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub windows: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub ontology: Option<PathBuf>,
    #[arg(long)]
    pub radiology: Option<PathBuf>,
    #[arg(long, default_value = "bigram")]
    pub name: String,
    /// Initialize from this model, replacing its output layer.
    #[arg(long)]
    pub base: Option<PathBuf>,
}

pub fn train_bigram(ctx: &Ctx, args: &TrainBigramArgs) -> Result<()> {
    let features_path = ctx.features_path(&args.features);
    let windows_path = args.windows.clone().unwrap_or_else(|| ctx.out_file("windows.jsonl"));
    let embeddings_path =
        args.embeddings.clone().unwrap_or_else(|| ctx.out_file("embeddings.bin"));
    let ontology = args
        .ontology
        .clone()
        .or_else(|| ctx.config.paths.ontology_lexicon.clone())
        .context("no ontology lexicon configured")?;
    let radiology = args
        .radiology
        .clone()
        .or_else(|| ctx.config.paths.radiology_lexicon.clone())
        .context("no radiology lexicon configured")?;
    let mut manifest = ManifestBuilder::new("train-bigram", ctx.seed);
    for p in [&features_path, &windows_path, &embeddings_path, &ontology, &radiology] {
        manifest.input(p);
    }

    let features = model_io::read_features(&features_path)?;
    let windows = load_windows(&windows_path)?;
    let embeddings = EmbeddingModel::from_container(&load_model(&embeddings_path)?)?;
    let lexicon = load_lexicon(
        &ontology,
        &radiology,
        &ctx.config.termmine.semantic_types,
        &ctx.preprocess,
    )?;

    // One training pair per mined bi-gram; an image with several bi-grams
    // is trained once per bi-gram.
    let by_key: std::collections::HashMap<&str, &FeatureRecord> =
        features.iter().map(|f| (f.image_key.as_str(), f)).collect();
    let mut train_x: Vec<FeatureRecord> = Vec::new();
    let mut targets: Vec<Vec<f64>> = Vec::new();
    let mut warnings = 0usize;
    for window in &windows {
        let (labels, warn) = mine_disease_bigrams(window, &lexicon, &embeddings);
        warnings += warn.len();
        if let Some(&record) = by_key.get(window.key_string().as_str()) {
            for label in labels {
                train_x.push(record.clone());
                targets.push(label.target);
            }
        }
    }
    anyhow::ensure!(!train_x.is_empty(), "no bi-gram training pairs were mined");
    if warnings > 0 {
        eprintln!("warning: {warnings} bi-grams skipped (word missing from embeddings)");
    }

    let cls = &ctx.config.classifier;
    let input_dim = train_x[0].features.len();
    let output_dim = 2 * embeddings.dim();
    let (mut model, base_lr) = match &args.base {
        Some(base_path) => {
            manifest.input(base_path);
            let base = FeedForwardModel::from_container(&load_model(base_path)?)?;
            let tuned = classifier::fine_tune(
                &base,
                output_dim,
                Some(Head::SigmoidXent),
                cls.fine_tune_base_lr,
                cls.fine_tune_new_layer_lr,
                ctx.seed,
            )?;
            (tuned, cls.fine_tune_base_lr)
        }
        None => {
            let mut sizes = vec![input_dim];
            sizes.extend(&cls.hidden);
            sizes.push(output_dim);
            (FeedForwardModel::random(&sizes, Head::SigmoidXent, ctx.seed)?, cls.base_lr)
        }
    };
    let report = classifier::train(
        &mut model,
        &train_x,
        &Targets::Vectors(targets),
        None,
        &TrainOptions {
            epochs: cls.epochs,
            base_lr,
            batch_size: cls.batch_size,
            seed: ctx.seed,
            trace_every: cls.trace_every,
        },
    )?;

    let model_path = ctx.out_file(&format!("{}_model.bin", args.name));
    save_model(&model_path, &model.to_container())?;
    let trace_path = ctx.out_file(&format!("{}_trace.csv", args.name));
    write_text(&trace_path, &trace_csv(&report))?;
    manifest.output(&model_path);
    manifest.output(&trace_path);
    manifest.write(&ctx.out_dir)?;
    println!(
        "trained regression on {} bi-gram pairs (final loss {:.6}) -> {}",
        train_x.len(),
        report.final_loss,
        model_path.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct FineTuneArgs {
    /// Trained model whose non-output layers are reused.
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Labels for the new task (image_key <TAB> label).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Class count of the new task; inferred from the labels when
    /// omitted.
    #[arg(long)]
    pub n_classes: Option<usize>,
    #[arg(long, default_value = "finetuned")]
    pub name: String,
}

pub fn fine_tune(ctx: &Ctx, args: &FineTuneArgs) -> Result<()> {
    let features_path = ctx.features_path(&args.features);
    let labels_path = args.labels.clone().unwrap_or_else(|| ctx.out_file("labels.tsv"));
    let mut manifest = ManifestBuilder::new("fine-tune", ctx.seed);
    for p in [&args.base, &features_path, &labels_path] {
        manifest.input(p);
    }

    let base = FeedForwardModel::from_container(&load_model(&args.base)?)?;
    let features = model_io::read_features(&features_path)?;
    let labels = load_labels_tsv(&labels_path)?;
    let (joined_x, joined_y) = join_features_labels(&features, &labels);
    let n_classes = args
        .n_classes
        .unwrap_or_else(|| joined_y.iter().copied().max().map(|m| m + 1).unwrap_or(0));

    let cls = &ctx.config.classifier;
    let split_spec = cls.split_spec(ctx.seed);
    let filter =
        classifier::filter_small_classes(&joined_y, n_classes, &split_spec, cls.min_per_split)?;
    let tuned = classifier::fine_tune(
        &base,
        filter.kept_classes.len(),
        Some(Head::Softmax),
        cls.fine_tune_base_lr,
        cls.fine_tune_new_layer_lr,
        ctx.seed,
    )?;
    let (model, kept_classes, dense_rows) = run_classification_training(
        ctx,
        joined_x,
        joined_y,
        n_classes,
        Some(tuned),
        cls.fine_tune_base_lr,
        &args.name,
        &mut manifest,
    )?;

    let model_path = ctx.out_file(&format!("{}_model.bin", args.name));
    save_model(&model_path, &model.to_container())?;
    let classes_path = ctx.out_file(&format!("{}_classes.tsv", args.name));
    let mut rows = String::new();
    for (dense, original) in kept_classes.iter().enumerate() {
        rows.push_str(&format!("{dense}\t{original}\n"));
    }
    write_text(&classes_path, &rows)?;
    let labels_out = ctx.out_file(&format!("{}_labels.tsv", args.name));
    super::write_labels_tsv(&labels_out, &dense_rows)?;
    manifest.output(&model_path);
    manifest.output(&classes_path);
    manifest.output(&labels_out);
    manifest.write(&ctx.out_dir)?;
    println!(
        "fine-tuned to {} classes on {} rows -> {}",
        kept_classes.len(),
        dense_rows.len(),
        model_path.display()
    );
    Ok(())
}
