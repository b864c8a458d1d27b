//! Topic models fit by collapsed Gibbs sampling, with held-out perplexity
//! for topic-count selection and per-parent sub-topic refinement.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{BowDocument, Vocabulary};
use crate::model_io::{Container, LdaHeader, ModelHeader, ModelIoError, NamedMatrix};

/// Keywords kept per topic node.
pub const KEYWORDS_PER_TOPIC: usize = 50;

#[derive(Debug, Error)]
pub enum LdaError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("document {doc_id:?} has no in-vocabulary tokens")]
    EmptyDocument { doc_id: String },
    #[error("document {doc_id:?} is entirely out of vocabulary")]
    AllTokensOov { doc_id: String },
    #[error("k = {k} exceeds the corpus token count {tokens}")]
    TooManyTopics { k: usize, tokens: usize },
    #[error("invalid parameter: {0}")]
    BadParams(String),
    #[error("topic-count selection needs at least 2 candidates")]
    NotEnoughCandidates,
    #[error("not enough documents for a nonempty train/test split")]
    EmptySplit,
    #[error(transparent)]
    Io(#[from] ModelIoError),
}

#[derive(Debug, Clone)]
pub struct LdaParams {
    pub k: usize,
    /// Symmetric document-topic prior; defaults to 50 / k.
    pub alpha: Option<f64>,
    /// Topic-word smoothing.
    pub beta: f64,
    /// Full Gibbs sweeps over every token.
    pub iterations: usize,
    pub seed: u64,
}

impl LdaParams {
    pub fn new(k: usize, seed: u64) -> LdaParams {
        LdaParams { k, alpha: None, beta: 0.01, iterations: 200, seed }
    }

    pub fn effective_alpha(&self) -> f64 {
        self.alpha.unwrap_or(50.0 / self.k as f64)
    }
}

/// The collapsed Gibbs state; exposed so tests can drive sweeps and check
/// the count invariants between them.
pub struct GibbsChain {
    k: usize,
    vocab_size: usize,
    alpha: f64,
    beta: f64,
    tokens: Vec<Vec<u32>>,
    assignments: Vec<Vec<u32>>,
    doc_topic: Vec<Vec<u32>>,
    topic_word: Vec<Vec<u32>>,
    topic_totals: Vec<u32>,
    rng: ChaCha8Rng,
}

impl GibbsChain {
    pub fn new(
        docs: &[BowDocument],
        vocab_size: usize,
        k: usize,
        alpha: f64,
        beta: f64,
        seed: u64,
    ) -> Result<GibbsChain, LdaError> {
        if docs.is_empty() {
            return Err(LdaError::EmptyCorpus);
        }
        if k < 1 {
            return Err(LdaError::BadParams("k must be >= 1".into()));
        }
        if vocab_size == 0 {
            return Err(LdaError::BadParams("vocabulary is empty".into()));
        }
        let mut total_tokens = 0usize;
        for doc in docs {
            if doc.total == 0 {
                return Err(LdaError::EmptyDocument { doc_id: doc.doc_id.clone() });
            }
            for &(term, _) in &doc.counts {
                if term as usize >= vocab_size {
                    return Err(LdaError::BadParams(format!(
                        "term id {term} out of range for V = {vocab_size}"
                    )));
                }
            }
            total_tokens += doc.total as usize;
        }
        if k > total_tokens {
            return Err(LdaError::TooManyTopics { k, tokens: total_tokens });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut chain = GibbsChain {
            k,
            vocab_size,
            alpha,
            beta,
            tokens: docs.iter().map(BowDocument::expand).collect(),
            assignments: Vec::with_capacity(docs.len()),
            doc_topic: vec![vec![0; k]; docs.len()],
            topic_word: vec![vec![0; vocab_size]; k],
            topic_totals: vec![0; k],
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15),
        };
        for (d, doc_tokens) in chain.tokens.iter().enumerate() {
            let mut z_d = Vec::with_capacity(doc_tokens.len());
            for &w in doc_tokens {
                let topic = rng.gen_range(0..k) as u32;
                z_d.push(topic);
                chain.doc_topic[d][topic as usize] += 1;
                chain.topic_word[topic as usize][w as usize] += 1;
                chain.topic_totals[topic as usize] += 1;
            }
            chain.assignments.push(z_d);
        }
        Ok(chain)
    }

    /// One full sweep: resample every token's topic from its collapsed
    /// conditional.
    pub fn sweep(&mut self) {
        let v_beta = self.vocab_size as f64 * self.beta;
        let mut weights = vec![0f64; self.k];
        for d in 0..self.tokens.len() {
            for i in 0..self.tokens[d].len() {
                let w = self.tokens[d][i] as usize;
                let old = self.assignments[d][i] as usize;
                self.doc_topic[d][old] -= 1;
                self.topic_word[old][w] -= 1;
                self.topic_totals[old] -= 1;

                let mut total = 0.0;
                for (topic, weight) in weights.iter_mut().enumerate() {
                    let doc_part = self.doc_topic[d][topic] as f64 + self.alpha;
                    let word_part = (self.topic_word[topic][w] as f64 + self.beta)
                        / (self.topic_totals[topic] as f64 + v_beta);
                    *weight = doc_part * word_part;
                    total += *weight;
                }
                let mut pick = self.rng.gen::<f64>() * total;
                let mut new = self.k - 1;
                for (topic, &weight) in weights.iter().enumerate() {
                    pick -= weight;
                    if pick <= 0.0 {
                        new = topic;
                        break;
                    }
                }

                self.assignments[d][i] = new as u32;
                self.doc_topic[d][new] += 1;
                self.topic_word[new][w] += 1;
                self.topic_totals[new] += 1;
            }
        }
    }

    pub fn doc_topic_counts(&self) -> &[Vec<u32>] {
        &self.doc_topic
    }

    pub fn topic_word_counts(&self) -> &[Vec<u32>] {
        &self.topic_word
    }

    pub fn topic_totals(&self) -> &[u32] {
        &self.topic_totals
    }

    /// Exact integer consistency between assignments and all count tables.
    pub fn verify_counts(&self) -> Result<(), String> {
        let mut doc_topic = vec![vec![0u32; self.k]; self.tokens.len()];
        let mut topic_word = vec![vec![0u32; self.vocab_size]; self.k];
        let mut topic_totals = vec![0u32; self.k];
        for (d, z_d) in self.assignments.iter().enumerate() {
            for (i, &z) in z_d.iter().enumerate() {
                let w = self.tokens[d][i] as usize;
                doc_topic[d][z as usize] += 1;
                topic_word[z as usize][w] += 1;
                topic_totals[z as usize] += 1;
            }
        }
        if doc_topic != self.doc_topic {
            return Err("doc_topic_counts out of sync with assignments".into());
        }
        if topic_word != self.topic_word {
            return Err("topic_word_counts out of sync with assignments".into());
        }
        if topic_totals != self.topic_totals {
            return Err("topic totals out of sync with assignments".into());
        }
        for (d, row) in self.doc_topic.iter().enumerate() {
            let n_d: u32 = row.iter().sum();
            if n_d as usize != self.tokens[d].len() {
                return Err(format!("doc {d}: topic counts do not sum to N_d"));
            }
        }
        for (k, row) in self.topic_word.iter().enumerate() {
            let sum: u32 = row.iter().sum();
            if sum != self.topic_totals[k] {
                return Err(format!("topic {k}: word counts do not sum to the topic total"));
            }
        }
        let total: u32 = self.topic_totals.iter().sum();
        let expected: usize = self.tokens.iter().map(Vec::len).sum();
        if total as usize != expected {
            return Err("topic totals do not sum to the corpus token count".into());
        }
        Ok(())
    }
}

/// A fitted topic model. `phi` is row-major `k x V`.
#[derive(Debug, Clone)]
pub struct LdaModel {
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub iterations: usize,
    pub vocab: Vocabulary,
    pub phi: Vec<f64>,
    pub doc_ids: Vec<String>,
    pub doc_topic_counts: Vec<Vec<u32>>,
    pub topic_word_counts: Vec<Vec<u32>>,
    pub assignments: Vec<Vec<u32>>,
}

impl LdaModel {
    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn phi_row(&self, topic: usize) -> &[f64] {
        &self.phi[topic * self.vocab_size()..(topic + 1) * self.vocab_size()]
    }

    /// Build a model directly from a topic-word matrix; used by oracles
    /// and planted tests.
    pub fn from_phi(vocab: Vocabulary, phi: Vec<f64>, alpha: f64, beta: f64) -> LdaModel {
        assert!(!vocab.is_empty());
        assert_eq!(phi.len() % vocab.len(), 0);
        let k = phi.len() / vocab.len();
        LdaModel {
            k,
            alpha,
            beta,
            seed: 0,
            iterations: 0,
            vocab,
            phi,
            doc_ids: Vec::new(),
            doc_topic_counts: Vec::new(),
            topic_word_counts: Vec::new(),
            assignments: Vec::new(),
        }
    }

    pub fn to_container(&self) -> Container {
        let v = self.vocab_size();
        let mut matrices = vec![NamedMatrix::from_f64("phi", self.k, v, &self.phi)];
        if !self.topic_word_counts.is_empty() {
            let flat: Vec<f32> = self
                .topic_word_counts
                .iter()
                .flat_map(|row| row.iter().map(|&c| c as f32))
                .collect();
            matrices.push(NamedMatrix::new("topic_word_counts", self.k, v, flat));
        }
        if !self.doc_topic_counts.is_empty() {
            let flat: Vec<f32> = self
                .doc_topic_counts
                .iter()
                .flat_map(|row| row.iter().map(|&c| c as f32))
                .collect();
            matrices.push(NamedMatrix::new(
                "doc_topic_counts",
                self.doc_topic_counts.len(),
                self.k,
                flat,
            ));
        }
        Container {
            header: ModelHeader::Lda(LdaHeader {
                k: self.k,
                vocab_size: v,
                alpha: self.alpha,
                beta: self.beta,
                seed: self.seed,
                iterations: self.iterations,
                vocab: self.vocab.clone(),
            }),
            matrices,
        }
    }

    pub fn from_container(container: &Container) -> Result<LdaModel, ModelIoError> {
        let header = match &container.header {
            ModelHeader::Lda(h) => h,
            other => {
                return Err(ModelIoError::WrongKind {
                    expected: "lda",
                    found: other.kind().to_string(),
                })
            }
        };
        let phi_matrix = container.matrix("phi")?;
        if phi_matrix.rows != header.k || phi_matrix.cols != header.vocab_size {
            return Err(ModelIoError::BadMatrix("phi shape mismatch".into()));
        }
        let counts = |name: &str, rows: usize| -> Vec<Vec<u32>> {
            container
                .matrix(name)
                .ok()
                .map(|m| {
                    (0..rows)
                        .map(|r| m.data[r * m.cols..(r + 1) * m.cols]
                            .iter()
                            .map(|&x| x as u32)
                            .collect())
                        .collect()
                })
                .unwrap_or_default()
        };
        let doc_rows = container.matrix("doc_topic_counts").map(|m| m.rows).unwrap_or(0);
        Ok(LdaModel {
            k: header.k,
            alpha: header.alpha,
            beta: header.beta,
            seed: header.seed,
            iterations: header.iterations,
            vocab: header.vocab.clone(),
            phi: phi_matrix.to_f64(),
            doc_ids: Vec::new(),
            doc_topic_counts: counts("doc_topic_counts", doc_rows),
            topic_word_counts: counts("topic_word_counts", header.k),
            assignments: Vec::new(),
        })
    }
}

/// Fit one topic model with collapsed Gibbs sampling; deterministic for a
/// given seed.
pub fn fit_lda(
    docs: &[BowDocument],
    vocab: &Vocabulary,
    params: &LdaParams,
) -> Result<LdaModel, LdaError> {
    if params.iterations < 1 {
        return Err(LdaError::BadParams("iterations must be >= 1".into()));
    }
    if params.beta <= 0.0 {
        return Err(LdaError::BadParams("beta must be positive".into()));
    }
    let alpha = params.effective_alpha();
    if alpha <= 0.0 {
        return Err(LdaError::BadParams("alpha must be positive".into()));
    }
    let mut chain = GibbsChain::new(docs, vocab.len(), params.k, alpha, params.beta, params.seed)?;
    for _ in 0..params.iterations {
        chain.sweep();
    }
    let phi = smoothed_phi(&chain.topic_word, &chain.topic_totals, params.beta, vocab.len());
    Ok(LdaModel {
        k: params.k,
        alpha,
        beta: params.beta,
        seed: params.seed,
        iterations: params.iterations,
        vocab: vocab.clone(),
        phi,
        doc_ids: docs.iter().map(|d| d.doc_id.clone()).collect(),
        doc_topic_counts: chain.doc_topic,
        topic_word_counts: chain.topic_word,
        assignments: chain.assignments,
    })
}

fn smoothed_phi(topic_word: &[Vec<u32>], topic_totals: &[u32], beta: f64, v: usize) -> Vec<f64> {
    let v_beta = v as f64 * beta;
    let mut phi = Vec::with_capacity(topic_word.len() * v);
    for (row, &total) in topic_word.iter().zip(topic_totals) {
        let denom = total as f64 + v_beta;
        phi.extend(row.iter().map(|&c| (c as f64 + beta) / denom));
    }
    phi
}

#[derive(Debug, Clone)]
pub struct PerplexityScore {
    pub score: f64,
    /// Documents excluded because every token was out of vocabulary.
    pub excluded: Vec<String>,
}

/// Fold-in estimate of a document's topic mixture with `phi` frozen:
/// run Gibbs on the held-out tokens and average theta over the last half
/// of the sweeps.
fn fold_in_theta(model: &LdaModel, tokens: &[u32], iterations: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let k = model.k;
    let alpha = model.alpha;
    let n = tokens.len();
    let mut z: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
    let mut counts = vec![0u32; k];
    for &t in &z {
        counts[t] += 1;
    }
    let mut theta_sum = vec![0f64; k];
    let mut samples = 0usize;
    let mut weights = vec![0f64; k];
    let first_kept = iterations / 2;
    for sweep in 0..iterations.max(1) {
        for i in 0..n {
            let w = tokens[i] as usize;
            counts[z[i]] -= 1;
            let mut total = 0.0;
            let phi_col = |topic: usize| model.phi[topic * model.vocab_size() + w];
            for (topic, weight) in weights.iter_mut().enumerate() {
                *weight = (counts[topic] as f64 + alpha) * phi_col(topic);
                total += *weight;
            }
            let mut pick = rng.gen::<f64>() * total;
            let mut new = k - 1;
            for (topic, &weight) in weights.iter().enumerate() {
                pick -= weight;
                if pick <= 0.0 {
                    new = topic;
                    break;
                }
            }
            z[i] = new;
            counts[new] += 1;
        }
        if sweep >= first_kept {
            let denom = n as f64 + k as f64 * alpha;
            for (topic, sum) in theta_sum.iter_mut().enumerate() {
                *sum += (counts[topic] as f64 + alpha) / denom;
            }
            samples += 1;
        }
    }
    theta_sum.iter().map(|s| s / samples as f64).collect()
}

/// Held-out perplexity: exp(-sum log p(w_d) / sum N_d) with per-document
/// fold-in thetas.
pub fn perplexity(
    model: &LdaModel,
    heldout: &[BowDocument],
    fold_in_iterations: usize,
    seed: u64,
) -> Result<PerplexityScore, LdaError> {
    if heldout.is_empty() {
        return Err(LdaError::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log_sum = 0f64;
    let mut token_sum = 0u64;
    let mut excluded = Vec::new();
    for doc in heldout {
        let tokens: Vec<u32> = doc
            .expand()
            .into_iter()
            .filter(|&t| (t as usize) < model.vocab_size())
            .collect();
        if tokens.is_empty() {
            excluded.push(doc.doc_id.clone());
            continue;
        }
        let theta = fold_in_theta(model, &tokens, fold_in_iterations, &mut rng);
        log_sum += doc_log_likelihood(model, &theta, &tokens);
        token_sum += tokens.len() as u64;
    }
    if token_sum == 0 {
        return Err(LdaError::EmptyCorpus);
    }
    Ok(PerplexityScore {
        score: (-log_sum / token_sum as f64).exp(),
        excluded,
    })
}

/// log p(w_d | phi, theta) under the mixture with a fixed theta.
pub fn doc_log_likelihood(model: &LdaModel, theta: &[f64], tokens: &[u32]) -> f64 {
    let v = model.vocab_size();
    tokens
        .iter()
        .map(|&w| {
            let p: f64 = theta
                .iter()
                .enumerate()
                .map(|(topic, &t)| t * model.phi[topic * v + w as usize])
                .sum();
            p.ln()
        })
        .sum()
}

/// Fold-in estimate of log p(w_d | phi, alpha) for one document.
pub fn fold_in_log_likelihood(
    model: &LdaModel,
    doc: &BowDocument,
    fold_in_iterations: usize,
    seed: u64,
) -> Result<f64, LdaError> {
    let tokens = doc.expand();
    if tokens.is_empty() {
        return Err(LdaError::AllTokensOov { doc_id: doc.doc_id.clone() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = fold_in_theta(model, &tokens, fold_in_iterations, &mut rng);
    Ok(doc_log_likelihood(model, &theta, &tokens))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerplexityReport {
    pub candidates: Vec<usize>,
    pub scores: Vec<f64>,
    pub chosen_k: usize,
    /// Held-out document count (M).
    pub heldout_docs: usize,
}

#[derive(Debug, Clone)]
pub struct SelectParams {
    pub alpha: Option<f64>,
    pub beta: f64,
    pub iterations: usize,
    pub fold_in_iterations: usize,
    /// Fraction of documents used for training; the rest score perplexity.
    pub split_fraction: f64,
    /// Relative improvement below which the elbow is declared.
    pub elbow_threshold: f64,
    pub seed: u64,
}

impl Default for SelectParams {
    fn default() -> Self {
        SelectParams {
            alpha: None,
            beta: 0.01,
            iterations: 200,
            fold_in_iterations: 100,
            split_fraction: 0.8,
            elbow_threshold: 0.01,
            seed: 0,
        }
    }
}

fn derive_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 step
    let mut z = seed.wrapping_add(salt.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fit one model per candidate K on a train split, score held-out
/// perplexity, and pick the elbow: the smallest K whose relative
/// improvement to the next candidate falls below the threshold.
pub fn select_topic_count(
    docs: &[BowDocument],
    vocab: &Vocabulary,
    candidate_ks: &[usize],
    params: &SelectParams,
) -> Result<PerplexityReport, LdaError> {
    let mut candidates: Vec<usize> = candidate_ks.to_vec();
    candidates.sort_unstable();
    candidates.dedup();
    if candidates.len() < 2 {
        return Err(LdaError::NotEnoughCandidates);
    }
    if docs.len() < 2 {
        return Err(LdaError::EmptySplit);
    }
    let mut order: Vec<usize> = (0..docs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, 0xA11CE));
    shuffle(&mut order, &mut rng);
    let n_train = ((docs.len() as f64 * params.split_fraction).round() as usize)
        .clamp(1, docs.len() - 1);
    let train: Vec<BowDocument> = order[..n_train].iter().map(|&i| docs[i].clone()).collect();
    let test: Vec<BowDocument> = order[n_train..].iter().map(|&i| docs[i].clone()).collect();

    let mut scores = Vec::with_capacity(candidates.len());
    for &k in &candidates {
        let fit_params = LdaParams {
            k,
            alpha: params.alpha,
            beta: params.beta,
            iterations: params.iterations,
            seed: derive_seed(params.seed, k as u64),
        };
        let model = fit_lda(&train, vocab, &fit_params)?;
        let score = perplexity(
            &model,
            &test,
            params.fold_in_iterations,
            derive_seed(params.seed, k as u64 + 0xFF),
        )?;
        scores.push(score.score);
    }

    let mut chosen_k = *candidates.last().expect("nonempty");
    for i in 0..candidates.len() - 1 {
        let improvement = (scores[i] - scores[i + 1]) / scores[i];
        if improvement < params.elbow_threshold {
            chosen_k = candidates[i];
            break;
        }
    }
    Ok(PerplexityReport {
        candidates,
        scores,
        chosen_k,
        heldout_docs: test.len(),
    })
}

fn shuffle(indices: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..indices.len()).rev() {
        let j = rng.gen_range(0..=i);
        indices.swap(i, j);
    }
}

/// Dominant topic of a document: argmax of the fold-in theta, ties broken
/// by the lowest topic id.
pub fn assign_dominant_topic(
    model: &LdaModel,
    doc: &BowDocument,
    fold_in_iterations: usize,
    seed: u64,
) -> Result<usize, LdaError> {
    let tokens: Vec<u32> = doc
        .expand()
        .into_iter()
        .filter(|&t| (t as usize) < model.vocab_size())
        .collect();
    if tokens.is_empty() {
        return Err(LdaError::AllTokensOov { doc_id: doc.doc_id.clone() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = fold_in_theta(model, &tokens, fold_in_iterations, &mut rng);
    let mut best = 0usize;
    for (topic, &t) in theta.iter().enumerate() {
        if t > theta[best] {
            best = topic;
        }
    }
    Ok(best)
}

/// Top-n topic keywords by probability, ties broken by token id.
pub fn top_keywords(model: &LdaModel, topic_id: usize, n: usize) -> Vec<(String, f64)> {
    assert!(topic_id < model.k, "topic id out of range");
    let row = model.phi_row(topic_id);
    let mut order: Vec<u32> = (0..model.vocab_size() as u32).collect();
    order.sort_by(|&a, &b| {
        row[b as usize]
            .partial_cmp(&row[a as usize])
            .expect("phi entries are finite")
            .then(a.cmp(&b))
    });
    order
        .into_iter()
        .take(n.min(model.vocab_size()))
        .map(|id| (model.vocab.token(id).to_string(), row[id as usize]))
        .collect()
}

#[derive(Debug, Clone)]
pub struct SubtopicParams {
    pub candidate_ks: Vec<usize>,
    /// Parents with fewer member documents are skipped.
    pub min_docs: usize,
    pub select: SelectParams,
    pub fold_in_iterations: usize,
    pub seed: u64,
}

#[derive(Debug)]
pub struct SubtopicFit {
    /// Parent topic id -> fitted sub-model.
    pub models: BTreeMap<usize, LdaModel>,
    /// Parent topic id -> chosen sub-topic count.
    pub chosen: BTreeMap<usize, usize>,
    /// Skipped parents with their member counts.
    pub skipped: Vec<(usize, usize)>,
    /// Document ids grouped by parent topic.
    pub members: BTreeMap<usize, Vec<String>>,
}

/// Refit an independent model on each parent topic's member documents,
/// choosing the per-parent sub-topic count with the same perplexity
/// protocol.
pub fn fit_subtopics(
    parent: &LdaModel,
    docs: &[BowDocument],
    params: &SubtopicParams,
) -> Result<SubtopicFit, LdaError> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, doc) in docs.iter().enumerate() {
        let topic = assign_dominant_topic(
            parent,
            doc,
            params.fold_in_iterations,
            derive_seed(params.seed, i as u64),
        )?;
        groups.entry(topic).or_default().push(i);
    }
    let mut fit = SubtopicFit {
        models: BTreeMap::new(),
        chosen: BTreeMap::new(),
        skipped: Vec::new(),
        members: BTreeMap::new(),
    };
    for (topic, indices) in groups {
        let members: Vec<BowDocument> = indices.iter().map(|&i| docs[i].clone()).collect();
        fit.members.insert(
            topic,
            members.iter().map(|d| d.doc_id.clone()).collect(),
        );
        if members.len() < params.min_docs.max(2) {
            fit.skipped.push((topic, members.len()));
            continue;
        }
        let member_tokens: usize = members.iter().map(|d| d.total as usize).sum();
        let feasible: Vec<usize> = params
            .candidate_ks
            .iter()
            .copied()
            .filter(|&k| k >= 1 && k <= member_tokens)
            .collect();
        let chosen_k = if feasible.len() >= 2 {
            let mut select = params.select.clone();
            select.seed = derive_seed(params.seed, topic as u64 + 0x5AB);
            select_topic_count(&members, &parent.vocab, &feasible, &select)?.chosen_k
        } else if feasible.len() == 1 {
            feasible[0]
        } else {
            fit.skipped.push((topic, members.len()));
            continue;
        };
        let model = fit_lda(
            &members,
            &parent.vocab,
            &LdaParams {
                k: chosen_k,
                alpha: params.select.alpha,
                beta: params.select.beta,
                iterations: params.select.iterations,
                seed: derive_seed(params.seed, topic as u64 + 0xF17),
            },
        )?;
        fit.chosen.insert(topic, chosen_k);
        fit.models.insert(topic, model);
    }
    Ok(fit)
}

/// Level of the topic hierarchy a node belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopicLevel {
    Document,
    DocumentSub,
    Sentence,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopicNode {
    pub level: TopicLevel,
    pub topic_id: usize,
    pub parent: Option<usize>,
    /// Top keywords sorted by descending probability, at most
    /// [`KEYWORDS_PER_TOPIC`].
    pub keywords: Vec<(String, f64)>,
    pub member_doc_ids: Vec<String>,
    pub member_image_keys: Vec<String>,
}

/// Build the per-topic summary nodes for one model.
pub fn topic_nodes(
    model: &LdaModel,
    level: TopicLevel,
    parent: Option<usize>,
    doc_assignments: &[(String, usize)],
    image_keys_by_doc: &BTreeMap<String, Vec<String>>,
) -> Vec<TopicNode> {
    (0..model.k)
        .map(|topic_id| {
            let member_doc_ids: Vec<String> = doc_assignments
                .iter()
                .filter(|(_, t)| *t == topic_id)
                .map(|(id, _)| id.clone())
                .collect();
            let member_image_keys: Vec<String> = member_doc_ids
                .iter()
                .flat_map(|id| image_keys_by_doc.get(id).cloned().unwrap_or_default())
                .collect();
            TopicNode {
                level,
                topic_id,
                parent,
                keywords: top_keywords(model, topic_id, KEYWORDS_PER_TOPIC),
                member_doc_ids,
                member_image_keys,
            }
        })
        .collect()
}
