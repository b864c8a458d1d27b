//! Synthetic data generators, writable to the same file formats as real
//! data so the whole pipeline runs on them.

use anyhow::Result;
use clap::Args;
use radmine_core::model_io;
use radmine_core::synth::{
    generate_context_clone_corpus, generate_feature_dataset, generate_lda_corpus,
    CloneCorpusSpec, FeatureSpec, PlantedLdaSpec,
};

use super::{write_labels_tsv, write_text, Ctx};
use crate::manifest::ManifestBuilder;

fn corpus_jsonl(streams: &[Vec<String>], id_prefix: &str) -> String {
    let mut out = String::new();
    for (i, stream) in streams.iter().enumerate() {
        let record = serde_json::json!({
            "report_id": format!("{id_prefix}{i}"),
            "text": stream.join(" "),
        });
        out.push_str(&record.to_string());
        out.push('\n');
    }
    out
}

#[derive(Args)]
pub struct SynthLdaArgs {
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 50)]
    pub vocab: usize,
    #[arg(long, default_value_t = 500)]
    pub docs: usize,
    #[arg(long, default_value_t = 40)]
    pub doc_len: usize,
    #[arg(long, default_value_t = 0.2)]
    pub alpha: f64,
    /// Give every planted topic a disjoint vocabulary block.
    #[arg(long, default_value_t = true)]
    pub disjoint: bool,
}

pub fn synth_lda(ctx: &Ctx, args: &SynthLdaArgs) -> Result<()> {
    let spec = PlantedLdaSpec {
        k: args.k,
        vocab_size: args.vocab,
        docs: args.docs,
        doc_len: args.doc_len,
        alpha: args.alpha,
        disjoint_supports: args.disjoint,
        seed: ctx.seed,
    };
    let (_, truth) = generate_lda_corpus(&spec)?;
    let mut manifest = ManifestBuilder::new("synth-lda", ctx.seed);
    let corpus_path = ctx.out_file("corpus.jsonl");
    write_text(&corpus_path, &corpus_jsonl(&truth.token_streams, "synth"))?;
    let truth_path = ctx.out_file("synth_truth.json");
    let truth_json = serde_json::json!({
        "k": spec.k,
        "vocab_size": spec.vocab_size,
        "alpha": spec.alpha,
        "phi": truth.phi,
        "dominant_topic": truth.dominant_topic,
    });
    write_text(&truth_path, &format!("{truth_json}\n"))?;
    manifest.output(&corpus_path);
    manifest.output(&truth_path);
    manifest.write(&ctx.out_dir)?;
    println!(
        "generated {} docs of length {} from {} planted topics -> {}",
        args.docs,
        args.doc_len,
        args.k,
        corpus_path.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct SynthFeaturesArgs {
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 60)]
    pub per_class: usize,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 6.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
}

pub fn synth_features(ctx: &Ctx, args: &SynthFeaturesArgs) -> Result<()> {
    let spec = FeatureSpec {
        classes: args.classes,
        per_class: args.per_class,
        dim: args.dim,
        separation: args.separation,
        noise: args.noise,
        seed: ctx.seed,
    };
    let (records, labels) = generate_feature_dataset(&spec)?;
    let mut manifest = ManifestBuilder::new("synth-features", ctx.seed);
    let features_path = ctx.out_file("features.tsv");
    let file = std::fs::File::create(&features_path)?;
    model_io::write_features(std::io::BufWriter::new(file), &records)?;
    let labels_path = ctx.out_file("labels.tsv");
    let rows: Vec<(String, usize)> = records
        .iter()
        .zip(&labels)
        .map(|(r, &l)| (r.image_key.clone(), l))
        .collect();
    write_labels_tsv(&labels_path, &rows)?;
    manifest.output(&features_path);
    manifest.output(&labels_path);
    manifest.write(&ctx.out_dir)?;
    println!(
        "generated {} features ({} classes x {}) -> {}",
        records.len(),
        args.classes,
        args.per_class,
        features_path.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct SynthClonesArgs {
    #[arg(long, default_value_t = 30)]
    pub vocab: usize,
    #[arg(long, default_value_t = 2)]
    pub pairs: usize,
    #[arg(long, default_value_t = 200)]
    pub templates: usize,
    #[arg(long, default_value_t = 3)]
    pub context_half: usize,
}

pub fn synth_clones(ctx: &Ctx, args: &SynthClonesArgs) -> Result<()> {
    let spec = CloneCorpusSpec {
        vocab_size: args.vocab,
        clone_pairs: args.pairs,
        templates: args.templates,
        context_half: args.context_half,
        seed: ctx.seed,
    };
    let corpus = generate_context_clone_corpus(&spec)?;
    let mut manifest = ManifestBuilder::new("synth-clones", ctx.seed);
    let corpus_path = ctx.out_file("corpus.jsonl");
    write_text(&corpus_path, &corpus_jsonl(&corpus.streams, "clone"))?;
    let pairs_path = ctx.out_file("clone_pairs.tsv");
    let mut rows = String::new();
    for (a, b) in &corpus.pairs {
        rows.push_str(&format!("{a}\t{b}\n"));
    }
    write_text(&pairs_path, &rows)?;
    manifest.output(&corpus_path);
    manifest.output(&pairs_path);
    manifest.write(&ctx.out_dir)?;
    println!(
        "generated {} clone streams ({} pairs) -> {}",
        corpus.streams.len(),
        corpus.pairs.len(),
        corpus_path.display()
    );
    Ok(())
}
