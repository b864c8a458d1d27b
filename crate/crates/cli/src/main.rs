//! Pipeline driver. Every subcommand reads files, writes its artifacts
//! plus a manifest (input/output digests and the seed), and exits
//! nonzero with a one-line machine-readable error record on failure.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Ctx;
use config::PipelineConfig;

#[derive(Parser)]
#[command(name = "radmine", version, about = "Report/key-image mining pipeline")]
struct Cli {
    /// Pipeline configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (the current implementation is single-threaded and
    /// validates but does not use this).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a report collection into sentences and tokens.
    Ingest(commands::data::IngestArgs),
    /// Extract key-image references and context windows.
    ExtractRefs(commands::data::ExtractRefsArgs),
    /// Sweep candidate topic counts by held-out perplexity.
    LdaSelect(commands::topics::LdaSelectArgs),
    /// Fit one topic model and dump its top keywords.
    LdaFit(commands::topics::LdaFitArgs),
    /// Fit per-parent sub-topic models.
    LdaSubtopics(commands::topics::LdaSubtopicsArgs),
    /// Train skip-gram word vectors with hierarchical softmax.
    W2vTrain(commands::topics::W2vTrainArgs),
    /// Detect disease-term assertions and negations.
    MineTerms(commands::data::MineTermsArgs),
    /// Build the present/absent label space and per-image labels.
    BuildLabels(commands::data::BuildLabelsArgs),
    /// Train the image-to-topic classifier for one level.
    TrainTopic(commands::train::TrainTopicArgs),
    /// Train the disease presence/absence classifier.
    TrainDisease(commands::train::TrainDiseaseArgs),
    /// Train the bi-gram word-vector regression head.
    TrainBigram(commands::train::TrainBigramArgs),
    /// Replace a trained model's output layer and retrain.
    FineTune(commands::train::FineTuneArgs),
    /// Emit the combined per-image interpretation.
    Interpret(commands::infer::InterpretArgs),
    /// Evaluate a model: top-k and confusion for classifiers, perplexity
    /// for topic models.
    Eval(commands::infer::EvalArgs),
    /// Generate a planted-topic corpus.
    SynthLda(commands::synth::SynthLdaArgs),
    /// Generate class-conditional Gaussian features.
    SynthFeatures(commands::synth::SynthFeaturesArgs),
    /// Generate a context-clone corpus.
    SynthClones(commands::synth::SynthClonesArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::ExtractRefs(_) => "extract-refs",
            Command::LdaSelect(_) => "lda-select",
            Command::LdaFit(_) => "lda-fit",
            Command::LdaSubtopics(_) => "lda-subtopics",
            Command::W2vTrain(_) => "w2v-train",
            Command::MineTerms(_) => "mine-terms",
            Command::BuildLabels(_) => "build-labels",
            Command::TrainTopic(_) => "train-topic",
            Command::TrainDisease(_) => "train-disease",
            Command::TrainBigram(_) => "train-bigram",
            Command::FineTune(_) => "fine-tune",
            Command::Interpret(_) => "interpret",
            Command::Eval(_) => "eval",
            Command::SynthLda(_) => "synth-lda",
            Command::SynthFeatures(_) => "synth-features",
            Command::SynthClones(_) => "synth-clones",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let record = serde_json::json!({
                "command": name,
                "error": format!("{err:#}"),
            });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if cli.threads == 0 {
        anyhow::bail!("--threads must be >= 1");
    }
    let config = PipelineConfig::load(cli.config.as_deref())?;
    let ctx = Ctx::new(config, cli.out, cli.seed)?;
    match &cli.command {
        Command::Ingest(args) => commands::data::ingest(&ctx, args),
        Command::ExtractRefs(args) => commands::data::extract_refs(&ctx, args),
        Command::LdaSelect(args) => commands::topics::lda_select(&ctx, args),
        Command::LdaFit(args) => commands::topics::lda_fit(&ctx, args),
        Command::LdaSubtopics(args) => commands::topics::lda_subtopics(&ctx, args),
        Command::W2vTrain(args) => commands::topics::w2v_train(&ctx, args),
        Command::MineTerms(args) => commands::data::mine_terms(&ctx, args),
        Command::BuildLabels(args) => commands::data::build_labels(&ctx, args),
        Command::TrainTopic(args) => commands::train::train_topic(&ctx, args),
        Command::TrainDisease(args) => commands::train::train_disease(&ctx, args),
        Command::TrainBigram(args) => commands::train::train_bigram(&ctx, args),
        Command::FineTune(args) => commands::train::fine_tune(&ctx, args),
        Command::Interpret(args) => commands::infer::interpret(&ctx, args),
        Command::Eval(args) => commands::infer::eval(&ctx, args),
        Command::SynthLda(args) => commands::synth::synth_lda(&ctx, args),
        Command::SynthFeatures(args) => commands::synth::synth_features(&ctx, args),
        Command::SynthClones(args) => commands::synth::synth_clones(&ctx, args),
    }
}
