//! Interpretation and evaluation subcommands.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use radmine_core::classifier::{self, FeedForwardModel};
use radmine_core::embed::EmbeddingModel;
use radmine_core::keywordgen::{format_interpretation, LevelModels};
use radmine_core::lda::{LdaModel, TopicLevel};
use radmine_core::model_io::{self, ModelHeader};
use radmine_core::termmine::LabelSpace;

use super::{load_labels_tsv, load_model, write_text, Ctx, DocUnit};
use crate::manifest::ManifestBuilder;

fn load_class_map(path: &PathBuf) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading class map {}", path.display()))?;
    let mut map = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let dense: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .with_context(|| format!("bad class row at line {}", i + 1))?;
        let original: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .with_context(|| format!("bad class row at line {}", i + 1))?;
        anyhow::ensure!(dense == map.len(), "class map rows must be dense and ordered");
        map.push(original);
    }
    Ok(map)
}

#[derive(Args)]
pub struct InterpretArgs {
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Bi-gram regression model; keywords are omitted when absent.
    #[arg(long)]
    pub regression: Option<PathBuf>,
    #[arg(long)]
    pub disease_model: Option<PathBuf>,
    #[arg(long)]
    pub disease_classes: Option<PathBuf>,
    #[arg(long)]
    pub label_space: Option<PathBuf>,
    /// Topic classifier / topic model / class map per level, e.g.
    /// document-level: --doc-model, --doc-lda, --doc-classes.
    #[arg(long)]
    pub doc_model: Option<PathBuf>,
    #[arg(long)]
    pub doc_lda: Option<PathBuf>,
    #[arg(long)]
    pub doc_classes: Option<PathBuf>,
    #[arg(long)]
    pub sub_model: Option<PathBuf>,
    #[arg(long)]
    pub sub_lda: Option<PathBuf>,
    #[arg(long)]
    pub sub_classes: Option<PathBuf>,
    #[arg(long)]
    pub sent_model: Option<PathBuf>,
    #[arg(long)]
    pub sent_lda: Option<PathBuf>,
    #[arg(long)]
    pub sent_classes: Option<PathBuf>,
}

struct LoadedLevel {
    level: TopicLevel,
    classifier: FeedForwardModel,
    lda: LdaModel,
    class_map: Option<Vec<usize>>,
}

pub fn interpret(ctx: &Ctx, args: &InterpretArgs) -> Result<()> {
    let features_path = ctx.features_path(&args.features);
    let embeddings_path =
        args.embeddings.clone().unwrap_or_else(|| ctx.out_file("embeddings.bin"));
    let disease_path =
        args.disease_model.clone().unwrap_or_else(|| ctx.out_file("disease_model.bin"));
    let space_path = args.label_space.clone().unwrap_or_else(|| ctx.out_file("label_space.tsv"));
    let mut manifest = ManifestBuilder::new("interpret", ctx.seed);
    for p in [&features_path, &embeddings_path, &disease_path, &space_path] {
        manifest.input(p);
    }

    let features = model_io::read_features(&features_path)?;
    let embeddings = EmbeddingModel::from_container(&load_model(&embeddings_path)?)?;
    let disease = FeedForwardModel::from_container(&load_model(&disease_path)?)?;
    let space = LabelSpace::from_tsv(
        &std::fs::read_to_string(&space_path)
            .with_context(|| format!("reading {}", space_path.display()))?,
    )?;
    let disease_classes = match &args.disease_classes {
        Some(path) => {
            manifest.input(path);
            Some(load_class_map(path)?)
        }
        None => {
            let default = ctx.out_file("disease_classes.tsv");
            if default.exists() {
                manifest.input(&default);
                Some(load_class_map(&default)?)
            } else {
                None
            }
        }
    };
    let regression = match &args.regression {
        Some(path) => {
            manifest.input(path);
            Some(FeedForwardModel::from_container(&load_model(path)?)?)
        }
        None => {
            let default = ctx.out_file("bigram_model.bin");
            if default.exists() {
                manifest.input(&default);
                Some(FeedForwardModel::from_container(&load_model(&default)?)?)
            } else {
                None
            }
        }
    };

    type LevelSpec<'a> =
        (TopicLevel, &'a Option<PathBuf>, &'a Option<PathBuf>, &'a Option<PathBuf>, &'a str, &'a str);
    let mut levels: Vec<LoadedLevel> = Vec::new();
    let specs: [LevelSpec<'_>; 3] = [
        (TopicLevel::Document, &args.doc_model, &args.doc_lda, &args.doc_classes, "topic_model.bin", "lda_model.bin"),
        (TopicLevel::DocumentSub, &args.sub_model, &args.sub_lda, &args.sub_classes, "", ""),
        (TopicLevel::Sentence, &args.sent_model, &args.sent_lda, &args.sent_classes, "", ""),
    ];
    for (level, model_flag, lda_flag, classes_flag, default_model, default_lda) in specs {
        let model_path = model_flag.clone().or_else(|| {
            (!default_model.is_empty())
                .then(|| ctx.out_file(default_model))
                .filter(|p| p.exists())
        });
        let Some(model_path) = model_path else {
            continue;
        };
        let lda_path = lda_flag.clone().or_else(|| {
            (!default_lda.is_empty())
                .then(|| ctx.out_file(default_lda))
                .filter(|p| p.exists())
        });
        let Some(lda_path) = lda_path else {
            continue;
        };
        manifest.input(&model_path);
        manifest.input(&lda_path);
        let class_map = match classes_flag {
            Some(path) => {
                manifest.input(path);
                Some(load_class_map(path)?)
            }
            None => {
                let default = ctx.out_file("topic_classes.tsv");
                if level == TopicLevel::Document && default.exists() {
                    manifest.input(&default);
                    Some(load_class_map(&default)?)
                } else {
                    None
                }
            }
        };
        levels.push(LoadedLevel {
            level,
            classifier: FeedForwardModel::from_container(&load_model(&model_path)?)?,
            lda: LdaModel::from_container(&load_model(&lda_path)?)?,
            class_map,
        });
    }

    let level_refs: Vec<LevelModels<'_>> = levels
        .iter()
        .map(|l| LevelModels {
            level: l.level,
            classifier: &l.classifier,
            lda: &l.lda,
            class_to_topic: l.class_map.as_deref(),
        })
        .collect();

    let mut lines = String::new();
    let mut warning_count = 0usize;
    for record in &features {
        let output = radmine_core::keywordgen::interpret(
            record.image_key.clone(),
            &record.features,
            &level_refs,
            regression.as_ref(),
            &disease,
            &embeddings,
        )?;
        // Present disease ids in label-space terms when a class map was
        // used during training.
        let mapped = match &disease_classes {
            Some(map) => {
                let mut o = output.clone();
                for (id, _) in &mut o.diseases {
                    *id = map.get(*id).copied().unwrap_or(*id);
                }
                o
            }
            None => output,
        };
        warning_count += mapped.warnings.len();
        lines.push_str(&format_interpretation(&mapped, &space));
        lines.push('\n');
    }
    let out_path = ctx.out_file("interpretations.tsv");
    write_text(&out_path, &lines)?;
    manifest.output(&out_path);
    manifest.write(&ctx.out_dir)?;
    println!(
        "interpreted {} images over {} topic levels ({} warnings) -> {}",
        features.len(),
        level_refs.len(),
        warning_count,
        out_path.display()
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EvalSplit {
    All,
    Train,
    Cv,
    Test,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Model container: a classifier (top-k + confusion) or a topic
    /// model (held-out perplexity).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Features + labels for classifier evaluation.
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Corpus input for topic-model perplexity.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DocUnit::Report)]
    pub unit: DocUnit,
    /// Which split of the labeled data to score.
    #[arg(long, value_enum, default_value_t = EvalSplit::Test)]
    pub split: EvalSplit,
    /// Top-k accuracies to report.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 5])]
    pub ks: Vec<usize>,
    #[arg(long, default_value = "eval")]
    pub name: String,
}

pub fn eval(ctx: &Ctx, args: &EvalArgs) -> Result<()> {
    let model_path = args.model.clone().unwrap_or_else(|| ctx.out_file("lda_model.bin"));
    let mut manifest = ManifestBuilder::new("eval", ctx.seed);
    manifest.input(&model_path);
    let container = load_model(&model_path)?;
    match &container.header {
        ModelHeader::Lda(_) => {
            let model = LdaModel::from_container(&container)?;
            let input = match args.unit {
                DocUnit::Report => ctx.corpus_path(&args.input),
                DocUnit::Window => {
                    args.input.clone().unwrap_or_else(|| ctx.out_file("windows.jsonl"))
                }
            };
            manifest.input(&input);
            // Bag-of-words against the model's own vocabulary so term ids
            // line up with phi columns.
            let docs = rebuild_against_vocab(ctx, args, &model)?;
            let score = radmine_core::lda::perplexity(
                &model,
                &docs,
                ctx.config.lda.fold_in_iterations,
                ctx.seed,
            )?;
            let mut csv = String::from("metric,value\n");
            csv.push_str(&format!("perplexity,{}\n", score.score));
            csv.push_str(&format!("documents,{}\n", docs.len()));
            csv.push_str(&format!("excluded_docs,{}\n", score.excluded.len()));
            let out_path = ctx.out_file(&format!("{}.csv", args.name));
            write_text(&out_path, &csv)?;
            manifest.output(&out_path);
            manifest.write(&ctx.out_dir)?;
            println!("perplexity={} over {} docs -> {}", score.score, docs.len(), out_path.display());
        }
        ModelHeader::FeedForward(_) => {
            let model = FeedForwardModel::from_container(&container)?;
            let features_path = ctx.features_path(&args.features);
            let labels_path = args.labels.clone().unwrap_or_else(|| ctx.out_file("labels.tsv"));
            manifest.input(&features_path);
            manifest.input(&labels_path);
            let features = model_io::read_features(&features_path)?;
            let labels = load_labels_tsv(&labels_path)?;
            let (joined_x, joined_y) = super::join_features_labels(&features, &labels);
            anyhow::ensure!(!joined_x.is_empty(), "no evaluation rows after the join");

            let (eval_x, eval_y) = match args.split {
                EvalSplit::All => (joined_x, joined_y),
                split => {
                    let spec = ctx.config.classifier.split_spec(ctx.seed);
                    let indices = spec.split(&joined_x, &joined_y)?;
                    let rows = match split {
                        EvalSplit::Train => indices.train,
                        EvalSplit::Cv => indices.cv,
                        EvalSplit::Test => indices.test,
                        EvalSplit::All => unreachable!(),
                    };
                    (
                        rows.iter().map(|&i| joined_x[i].clone()).collect(),
                        rows.iter().map(|&i| joined_y[i]).collect(),
                    )
                }
            };
            let report = classifier::evaluate(&model, &eval_x, &eval_y, &args.ks)?;
            let mut csv = String::from("metric,value\n");
            for (k, acc) in &report.topk {
                csv.push_str(&format!("top{k},{acc}\n"));
            }
            csv.push_str(&format!("samples,{}\n", eval_x.len()));
            let out_path = ctx.out_file(&format!("{}.csv", args.name));
            write_text(&out_path, &csv)?;
            let mut confusion = String::new();
            for row in &report.confusion {
                let cells: Vec<String> = row.iter().map(u32::to_string).collect();
                confusion.push_str(&cells.join(","));
                confusion.push('\n');
            }
            let confusion_path = ctx.out_file(&format!("{}_confusion.csv", args.name));
            write_text(&confusion_path, &confusion)?;
            manifest.output(&out_path);
            manifest.output(&confusion_path);
            manifest.write(&ctx.out_dir)?;
            let top1 = report.topk.first().map(|(_, a)| *a).unwrap_or(0.0);
            println!(
                "evaluated {} samples: top{}={} -> {}",
                eval_x.len(),
                report.topk.first().map(|(k, _)| *k).unwrap_or(1),
                top1,
                out_path.display()
            );
        }
        ModelHeader::Embedding(_) => {
            anyhow::bail!("eval does not apply to embedding models; use nearest-neighbor tooling")
        }
    }
    Ok(())
}

/// Rebuild the evaluation corpus against the model's own vocabulary so
/// term ids line up with phi columns.
fn rebuild_against_vocab(
    ctx: &Ctx,
    args: &EvalArgs,
    model: &LdaModel,
) -> Result<Vec<radmine_core::corpus::BowDocument>> {
    let input = match args.unit {
        DocUnit::Report => ctx.corpus_path(&args.input),
        DocUnit::Window => args.input.clone().unwrap_or_else(|| ctx.out_file("windows.jsonl")),
    };
    Ok(match args.unit {
        DocUnit::Report => {
            let reports = super::load_reports(&input, &ctx.preprocess)?;
            reports
                .iter()
                .map(|r| {
                    radmine_core::corpus::BowDocument::from_tokens(
                        r.report_id.clone(),
                        r.tokens(),
                        &model.vocab,
                    )
                })
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
                        &model.vocab,
                    )
                })
                .collect()
        }
    })
}
