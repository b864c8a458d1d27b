//! Final per-image outputs: three-level topic predictions, generated
//! keywords by matching the regression output against the predicted
//! topic's top keywords, and top-5 disease presence/absence predictions.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::classifier::{predict_topk, ClassifierError, FeedForwardModel};
use crate::corpus::{normalize, PreprocessConfig};
use crate::embed::EmbeddingModel;
use crate::lda::{top_keywords, LdaModel, TopicLevel, KEYWORDS_PER_TOPIC};
use crate::termmine::{LabelPolarity, LabelSpace};

#[derive(Debug, Error)]
pub enum KeywordGenError {
    #[error("regression output has {found} entries, expected 2 x {dim}")]
    RegressionShape { found: usize, dim: usize },
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
}

/// The topic classifier and topic model for one hierarchy level.
pub struct LevelModels<'a> {
    pub level: TopicLevel,
    pub classifier: &'a FeedForwardModel,
    pub lda: &'a LdaModel,
    /// Maps the classifier's dense class ids back to topic ids when small
    /// classes were dropped before training.
    pub class_to_topic: Option<&'a [usize]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelKeyword {
    pub level: TopicLevel,
    pub topic_id: usize,
    /// None when the topic has no in-vocabulary keywords or no regression
    /// model was supplied.
    pub keyword: Option<String>,
    pub cosine: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterpretationOutput {
    pub image_key: String,
    pub levels: Vec<LevelKeyword>,
    /// Top-5 disease labels, probabilities descending.
    pub diseases: Vec<(usize, f64)>,
    pub warnings: Vec<String>,
}

fn cosine_mixed(a: &[f64], b: &[f32]) -> f64 {
    let mut dot = 0f64;
    let mut na = 0f64;
    let mut nb = 0f64;
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y as f64;
        na += x * x;
        nb += (y as f64) * (y as f64);
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Per level: predict the topic, embed its top keywords, and keep the
/// keyword whose vector is closest (cosine) to either half of the
/// regression output. Ties break toward the lower keyword rank.
pub fn generate_keywords(
    feature: &[f64],
    levels: &[LevelModels<'_>],
    regression: &FeedForwardModel,
    embeddings: &EmbeddingModel,
) -> Result<(Vec<LevelKeyword>, Vec<String>), KeywordGenError> {
    let dim = embeddings.dim();
    let output = regression.output(feature);
    if output.len() != 2 * dim {
        return Err(KeywordGenError::RegressionShape { found: output.len(), dim });
    }
    let first_half = &output[..dim];
    let second_half = &output[dim..];
    let mut results = Vec::with_capacity(levels.len());
    let mut warnings = Vec::new();
    for level in levels {
        let topic_id = predict_level_topic(feature, level)?;
        let keywords = top_keywords(level.lda, topic_id, KEYWORDS_PER_TOPIC);
        let mut best: Option<(String, f64)> = None;
        for (token, _prob) in &keywords {
            let Ok(vector) = embeddings.vector_of(token) else {
                continue;
            };
            let score = cosine_mixed(first_half, vector).max(cosine_mixed(second_half, vector));
            if best.as_ref().map(|(_, s)| score > *s).unwrap_or(true) {
                best = Some((token.clone(), score));
            }
        }
        match best {
            Some((keyword, cosine)) => results.push(LevelKeyword {
                level: level.level,
                topic_id,
                keyword: Some(keyword),
                cosine,
            }),
            None => {
                warnings.push(format!(
                    "topic {topic_id} at level {:?} has no in-vocabulary keywords",
                    level.level
                ));
                results.push(LevelKeyword {
                    level: level.level,
                    topic_id,
                    keyword: None,
                    cosine: 0.0,
                });
            }
        }
    }
    Ok((results, warnings))
}

fn predict_level_topic(
    feature: &[f64],
    level: &LevelModels<'_>,
) -> Result<usize, KeywordGenError> {
    let ranked = predict_topk(level.classifier, feature, 1)?;
    let class = ranked[0].0;
    Ok(match level.class_to_topic {
        Some(map) => map.get(class).copied().unwrap_or(class),
        None => class,
    })
}

/// The combined interpretation: generated keywords (when a regression
/// model is available) plus the top-5 disease predictions.
pub fn interpret(
    image_key: impl Into<String>,
    feature: &[f64],
    levels: &[LevelModels<'_>],
    regression: Option<&FeedForwardModel>,
    disease: &FeedForwardModel,
    embeddings: &EmbeddingModel,
) -> Result<InterpretationOutput, KeywordGenError> {
    let mut warnings = Vec::new();
    let level_keywords = match regression {
        Some(model) => {
            let (keywords, mut kw_warnings) =
                generate_keywords(feature, levels, model, embeddings)?;
            warnings.append(&mut kw_warnings);
            keywords
        }
        None => {
            warnings.push("no regression model: keywords omitted".to_string());
            levels
                .iter()
                .map(|level| {
                    Ok(LevelKeyword {
                        level: level.level,
                        topic_id: predict_level_topic(feature, level)?,
                        keyword: None,
                        cosine: 0.0,
                    })
                })
                .collect::<Result<Vec<_>, KeywordGenError>>()?
        }
    };
    let diseases = predict_topk(disease, feature, 5)?;
    Ok(InterpretationOutput {
        image_key: image_key.into(),
        levels: level_keywords,
        diseases,
        warnings,
    })
}

/// Human-readable label text: absent labels render as "no <term>".
pub fn label_text(space: &LabelSpace, label_id: usize) -> String {
    let label = &space.labels[label_id];
    match label.polarity {
        LabelPolarity::Present => label.term.clone(),
        LabelPolarity::Absent => format!("no {}", label.term),
    }
}

fn level_name(level: TopicLevel) -> &'static str {
    match level {
        TopicLevel::Document => "document",
        TopicLevel::DocumentSub => "document_sub",
        TopicLevel::Sentence => "sentence",
    }
}

/// One tab-separated output line: image key, `level:keyword:cosine` per
/// level, then the top-5 `label:probability` pairs.
pub fn format_interpretation(output: &InterpretationOutput, space: &LabelSpace) -> String {
    let mut fields = vec![output.image_key.clone()];
    for level in &output.levels {
        fields.push(format!(
            "{}:{}:{:.6}",
            level_name(level.level),
            level.keyword.as_deref().unwrap_or("-"),
            level.cosine
        ));
    }
    for (label_id, prob) in &output.diseases {
        fields.push(format!("{}:{:.6}", label_text(space, *label_id), prob));
    }
    fields.join("\t")
}

/// Fraction of scored images whose best-cosine generated keyword appears
/// (after normalization) among that image's ground-truth words. Images
/// without ground truth are not scored.
pub fn recall_at_1(
    outputs: &[InterpretationOutput],
    ground_truth: &BTreeMap<String, BTreeSet<String>>,
    config: &PreprocessConfig,
) -> f64 {
    let mut scored = 0usize;
    let mut hits = 0usize;
    for output in outputs {
        let Some(truth) = ground_truth.get(&output.image_key) else {
            continue;
        };
        if truth.is_empty() {
            continue;
        }
        scored += 1;
        let best = output
            .levels
            .iter()
            .filter(|l| l.keyword.is_some())
            .max_by(|a, b| a.cosine.partial_cmp(&b.cosine).expect("finite cosine"));
        let Some(level) = best else {
            continue;
        };
        let keyword = level.keyword.as_deref().expect("filtered to Some");
        let normalized_truth: BTreeSet<String> = truth
            .iter()
            .flat_map(|w| normalize(w, config))
            .collect();
        let normalized_keyword = normalize(keyword, config);
        if normalized_keyword.iter().any(|k| normalized_truth.contains(k)) {
            hits += 1;
        }
    }
    if scored == 0 {
        return 0.0;
    }
    hits as f64 / scored as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::Head;
    use crate::corpus::Vocabulary;
    use crate::embed::{build_huffman, SkipGramConfig};
    use crate::termmine::Label;

    /// Embeddings with hand-set vectors: token `w{i}` gets the i-th basis
    /// vector (scaled), so cosine relations are exact.
    fn planted_embeddings(v: usize, dim: usize) -> EmbeddingModel {
        let vocab = Vocabulary::from_entries(
            (0..v).map(|i| (format!("w{i}"), (v - i) as u64)).collect(),
        );
        let tree = build_huffman(vocab.frequencies()).unwrap();
        let mut input = vec![0f32; v * dim];
        for i in 0..v {
            input[i * dim + (i % dim)] = 1.0;
        }
        EmbeddingModel {
            config: SkipGramConfig { dim, ..Default::default() },
            vocab,
            input,
            inner: vec![0.0; (v - 1) * dim],
            tree,
        }
    }

    /// Single-class classifier: always predicts class 0.
    fn constant_classifier(input_dim: usize) -> FeedForwardModel {
        FeedForwardModel::random(&[input_dim, 2, 1], Head::Softmax, 1).unwrap()
    }

    /// Regression model whose output is exactly `bias` regardless of the
    /// input: zero weights, one linear layer.
    fn constant_regression(input_dim: usize, bias: Vec<f64>) -> FeedForwardModel {
        let out = bias.len();
        let mut model = FeedForwardModel::random(&[input_dim, out], Head::SigmoidXent, 1).unwrap();
        model.weights[0].iter_mut().for_each(|w| *w = 0.0);
        model.biases[0] = bias;
        model
    }

    fn uniform_lda(vocab: Vocabulary) -> LdaModel {
        let v = vocab.len();
        LdaModel::from_phi(vocab, vec![1.0 / v as f64; v], 1.0, 0.01)
    }

    /// LDA model whose single topic puts descending mass on w0, w1, ...
    fn ranked_lda(vocab: Vocabulary) -> LdaModel {
        let v = vocab.len();
        let mut phi: Vec<f64> = (0..v).map(|i| (v - i) as f64).collect();
        let total: f64 = phi.iter().sum();
        phi.iter_mut().for_each(|p| *p /= total);
        LdaModel::from_phi(vocab, phi, 1.0, 0.01)
    }

    #[test]
    fn exact_target_match_returns_that_keyword() {
        let dim = 4;
        let embeddings = planted_embeddings(4, dim);
        let lda = ranked_lda(embeddings.vocab.clone());
        let classifier = constant_classifier(3);
        // Regression output = [vector(w2); vector(w2)].
        let target: Vec<f64> = embeddings
            .vector_of("w2")
            .unwrap()
            .iter()
            .map(|&x| x as f64)
            .chain(embeddings.vector_of("w2").unwrap().iter().map(|&x| x as f64))
            .collect();
        let regression = constant_regression(3, target);
        let levels = [LevelModels {
            level: TopicLevel::Document,
            classifier: &classifier,
            lda: &lda,
            class_to_topic: None,
        }];
        let feature = vec![0.5, -0.2, 0.1];
        let (keywords, warnings) =
            generate_keywords(&feature, &levels, &regression, &embeddings).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(keywords.len(), 1);
        assert_eq!(keywords[0].keyword.as_deref(), Some("w2"));
        assert!(keywords[0].cosine >= 0.999, "cosine {}", keywords[0].cosine);
    }

    #[test]
    fn orthogonal_keywords_still_emit_lowest_rank() {
        let dim = 4;
        // Vocabulary w0..w2 with basis vectors on axes 0..2; the
        // regression output sits on axis 3, orthogonal to all of them.
        let embeddings = planted_embeddings(3, dim);
        let lda = ranked_lda(embeddings.vocab.clone());
        let classifier = constant_classifier(2);
        let mut target = vec![0.0; 2 * dim];
        target[3] = 1.0;
        target[dim + 3] = 1.0;
        let regression = constant_regression(2, target);
        let levels = [LevelModels {
            level: TopicLevel::Sentence,
            classifier: &classifier,
            lda: &lda,
            class_to_topic: None,
        }];
        let (keywords, _) =
            generate_keywords(&[0.0, 0.0], &levels, &regression, &embeddings).unwrap();
        assert_eq!(keywords[0].keyword.as_deref(), Some("w0"), "lowest-rank tie");
        assert!(keywords[0].cosine.abs() < 1e-9);
    }

    fn small_space() -> LabelSpace {
        LabelSpace {
            labels: vec![
                Label { term: "cyst".into(), polarity: LabelPolarity::Present, frequency: 12 },
                Label { term: "cyst".into(), polarity: LabelPolarity::Absent, frequency: 10 },
            ],
        }
    }

    #[test]
    fn interpret_without_regression_still_predicts_diseases() {
        let embeddings = planted_embeddings(3, 4);
        let lda = uniform_lda(embeddings.vocab.clone());
        let classifier = constant_classifier(2);
        let disease = FeedForwardModel::random(&[2, 3, 2], Head::Softmax, 5).unwrap();
        let levels = [LevelModels {
            level: TopicLevel::Document,
            classifier: &classifier,
            lda: &lda,
            class_to_topic: None,
        }];
        let output =
            interpret("img:-:1", &[0.1, 0.2], &levels, None, &disease, &embeddings).unwrap();
        assert_eq!(output.levels.len(), 1);
        assert!(output.levels[0].keyword.is_none());
        assert_eq!(output.diseases.len(), 2);
        assert!(output.diseases[0].1 >= output.diseases[1].1);
        assert!(!output.warnings.is_empty());
        let line = format_interpretation(&output, &small_space());
        assert!(line.starts_with("img:-:1\tdocument:-:"));
        assert!(line.contains("cyst:") || line.contains("no cyst:"));
    }

    #[test]
    fn absent_labels_render_as_no_term() {
        let space = small_space();
        assert_eq!(label_text(&space, 0), "cyst");
        assert_eq!(label_text(&space, 1), "no cyst");
    }

    #[test]
    fn planted_suite_scores_perfect_recall() {
        let dim = 4;
        let embeddings = planted_embeddings(4, dim);
        let lda = ranked_lda(embeddings.vocab.clone());
        let classifier = constant_classifier(3);
        let disease = FeedForwardModel::random(&[3, 2, 2], Head::Softmax, 5).unwrap();
        let target: Vec<f64> = embeddings
            .vector_of("w1")
            .unwrap()
            .iter()
            .map(|&x| x as f64)
            .chain(embeddings.vector_of("w1").unwrap().iter().map(|&x| x as f64))
            .collect();
        let regression = constant_regression(3, target);
        let levels = [LevelModels {
            level: TopicLevel::Document,
            classifier: &classifier,
            lda: &lda,
            class_to_topic: None,
        }];
        let outputs: Vec<InterpretationOutput> = (0..5)
            .map(|i| {
                interpret(
                    format!("img{i}:-:0"),
                    &[i as f64, 0.0, 1.0],
                    &levels,
                    Some(&regression),
                    &disease,
                    &embeddings,
                )
                .unwrap()
            })
            .collect();
        let config = PreprocessConfig::default();
        let truth: BTreeMap<String, BTreeSet<String>> = (0..5)
            .map(|i| {
                (
                    format!("img{i}:-:0"),
                    BTreeSet::from(["w1".to_string(), "liver".to_string()]),
                )
            })
            .collect();
        assert_eq!(recall_at_1(&outputs, &truth, &config), 1.0);

        // Keyword-free outputs score zero.
        let empty_outputs: Vec<InterpretationOutput> = outputs
            .iter()
            .map(|o| {
                let mut o = o.clone();
                for l in &mut o.levels {
                    l.keyword = None;
                }
                o
            })
            .collect();
        assert_eq!(recall_at_1(&empty_outputs, &truth, &config), 0.0);
    }

    #[test]
    fn recall_is_monotone_in_ground_truth() {
        let dim = 4;
        let embeddings = planted_embeddings(4, dim);
        let lda = ranked_lda(embeddings.vocab.clone());
        let classifier = constant_classifier(3);
        let disease = FeedForwardModel::random(&[3, 2, 2], Head::Softmax, 5).unwrap();
        let target: Vec<f64> = embeddings
            .vector_of("w0")
            .unwrap()
            .iter()
            .map(|&x| x as f64)
            .chain(std::iter::repeat_n(0.0, dim))
            .collect();
        let regression = constant_regression(3, target);
        let levels = [LevelModels {
            level: TopicLevel::Document,
            classifier: &classifier,
            lda: &lda,
            class_to_topic: None,
        }];
        let outputs = vec![interpret(
            "a:-:0",
            &[0.0, 0.0, 0.0],
            &levels,
            Some(&regression),
            &disease,
            &embeddings,
        )
        .unwrap()];
        let config = PreprocessConfig::default();
        let small: BTreeMap<String, BTreeSet<String>> =
            BTreeMap::from([("a:-:0".to_string(), BTreeSet::from(["liver".to_string()]))]);
        let mut big = small.clone();
        big.get_mut("a:-:0").unwrap().insert("w0".to_string());
        let r_small = recall_at_1(&outputs, &small, &config);
        let r_big = recall_at_1(&outputs, &big, &config);
        assert!(r_big >= r_small);
        assert_eq!(r_big, 1.0);
    }

    #[test]
    fn keyword_cosine_survives_container_roundtrip() {
        let dim = 4;
        let embeddings = planted_embeddings(4, dim);
        let lda = ranked_lda(embeddings.vocab.clone());
        let classifier = constant_classifier(3);
        let target: Vec<f64> = vec![0.3, -0.1, 0.8, 0.2, 0.3, -0.1, 0.8, 0.2];
        let regression = constant_regression(3, target);
        let feature = vec![0.5, 0.5, 0.5];
        let levels = [LevelModels {
            level: TopicLevel::Document,
            classifier: &classifier,
            lda: &lda,
            class_to_topic: None,
        }];
        let (before, _) = generate_keywords(&feature, &levels, &regression, &embeddings).unwrap();

        // Round-trip every model through the binary container.
        let emb2 = EmbeddingModel::from_container(&embeddings.to_container()).unwrap();
        let lda2 = LdaModel::from_container(&lda.to_container()).unwrap();
        let cls2 = FeedForwardModel::from_container(&classifier.to_container()).unwrap();
        let reg2 = FeedForwardModel::from_container(&regression.to_container()).unwrap();
        let levels2 = [LevelModels {
            level: TopicLevel::Document,
            classifier: &cls2,
            lda: &lda2,
            class_to_topic: None,
        }];
        let (after, _) = generate_keywords(&feature, &levels2, &reg2, &emb2).unwrap();
        assert_eq!(before[0].keyword, after[0].keyword);
        assert!((before[0].cosine - after[0].cosine).abs() <= 1e-6);
    }
}
