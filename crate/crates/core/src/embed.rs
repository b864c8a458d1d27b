//! Skip-gram word vectors trained with the hierarchical softmax cost over
//! a Huffman tree, plus cosine neighbor queries.
//!
//! Word probabilities factor over the target's root-to-leaf path: a code
//! bit of 0 contributes sigma(s), a bit of 1 contributes sigma(-s), where
//! s is the inner product of the conditioning word's input vector and the
//! inner node's vector. Summed over all words this normalizes to 1.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::Vocabulary;
use crate::model_io::{Container, EmbeddingHeader, ModelHeader, ModelIoError, NamedMatrix};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("vocabulary too small: need at least 2 words, found {0}")]
    VocabTooSmall(usize),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("word {0:?} is not in the vocabulary")]
    OutOfVocabulary(String),
    #[error(transparent)]
    Io(#[from] ModelIoError),
}

/// Per-word Huffman code and inner-node path; built greedily from word
/// frequencies with ties broken by lower node id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HuffmanTree {
    codes: Vec<Vec<bool>>,
    paths: Vec<Vec<u32>>,
}

impl HuffmanTree {
    pub fn code(&self, word: u32) -> &[bool] {
        &self.codes[word as usize]
    }

    pub fn path(&self, word: u32) -> &[u32] {
        &self.paths[word as usize]
    }

    pub fn code_len(&self, word: u32) -> usize {
        self.codes[word as usize].len()
    }

    pub fn n_leaves(&self) -> usize {
        self.codes.len()
    }

    pub fn n_inner(&self) -> usize {
        self.codes.len() - 1
    }

    /// Expected code length under the given frequencies.
    pub fn expected_code_length(&self, frequencies: &[u64]) -> f64 {
        let total: u64 = frequencies.iter().sum();
        frequencies
            .iter()
            .enumerate()
            .map(|(w, &f)| f as f64 * self.codes[w].len() as f64)
            .sum::<f64>()
            / total as f64
    }
}

/// Greedy min-merge Huffman construction. Leaves carry ids `0..V`,
/// internal nodes are numbered in creation order; at equal frequency the
/// lower id merges first, so leaves win ties against internal nodes.
pub fn build_huffman(frequencies: &[u64]) -> Result<HuffmanTree, EmbedError> {
    let v = frequencies.len();
    if v < 2 {
        return Err(EmbedError::VocabTooSmall(v));
    }
    if frequencies.contains(&0) {
        return Err(EmbedError::BadConfig("frequencies must be >= 1".into()));
    }
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;
    // (frequency, tie id) min-heap; the tie id is the global node id.
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> =
        (0..v).map(|w| Reverse((frequencies[w], w))).collect();
    // parent[node] = (parent inner index, bit); node ids: leaves 0..v,
    // internal v..2v-1.
    let mut parent: Vec<Option<(usize, bool)>> = vec![None; 2 * v - 1];
    let mut next_internal = 0usize;
    while heap.len() > 1 {
        let Reverse((fa, a)) = heap.pop().expect("heap nonempty");
        let Reverse((fb, b)) = heap.pop().expect("heap has two");
        let node = v + next_internal;
        parent[a] = Some((next_internal, false));
        parent[b] = Some((next_internal, true));
        heap.push(Reverse((fa + fb, node)));
        next_internal += 1;
    }
    let mut codes = Vec::with_capacity(v);
    let mut paths = Vec::with_capacity(v);
    for leaf in 0..v {
        let mut bits = Vec::new();
        let mut inner = Vec::new();
        let mut node = leaf;
        while let Some((p, bit)) = parent[node] {
            bits.push(bit);
            inner.push(p as u32);
            node = v + p;
        }
        bits.reverse();
        inner.reverse();
        codes.push(bits);
        paths.push(inner);
    }
    Ok(HuffmanTree { codes, paths })
}

#[derive(Debug, Clone)]
pub struct SkipGramConfig {
    pub dim: usize,
    /// Maximum dynamic window; the per-center window is uniform in
    /// `1..=window`.
    pub window: usize,
    /// Frequent-word subsampling threshold t; a word with corpus
    /// frequency fraction f is discarded with probability
    /// `clamp(1 - sqrt(t / f), 0, 1)`.
    pub subsample_t: f64,
    pub epochs: usize,
    pub min_count: u64,
    pub start_lr: f64,
    pub end_lr: f64,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: 256,
            window: 10,
            subsample_t: 0.01,
            epochs: 5,
            min_count: 1,
            start_lr: 0.025,
            end_lr: 0.0001,
            seed: 0,
        }
    }
}

impl SkipGramConfig {
    fn validate(&self) -> Result<(), EmbedError> {
        if self.dim == 0 {
            return Err(EmbedError::BadConfig("dim must be positive".into()));
        }
        if self.window == 0 {
            return Err(EmbedError::BadConfig("window must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(EmbedError::BadConfig("epochs must be positive".into()));
        }
        if self.subsample_t <= 0.0 {
            return Err(EmbedError::BadConfig("subsample_t must be positive".into()));
        }
        if self.start_lr <= 0.0 || self.end_lr <= 0.0 || self.end_lr > self.start_lr {
            return Err(EmbedError::BadConfig("need start_lr >= end_lr > 0".into()));
        }
        Ok(())
    }
}

/// Probability that a token occurrence of corpus frequency fraction `f`
/// is discarded before windowing.
pub fn discard_probability(subsample_t: f64, frequency_fraction: f64) -> f64 {
    (1.0 - (subsample_t / frequency_fraction).sqrt()).clamp(0.0, 1.0)
}

#[derive(Debug, Clone)]
pub struct EmbeddingModel {
    pub config: SkipGramConfig,
    pub vocab: Vocabulary,
    /// `V x dim` input vectors, row-major.
    pub input: Vec<f32>,
    /// `(V-1) x dim` inner-node vectors, row-major.
    pub inner: Vec<f32>,
    pub tree: HuffmanTree,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainStats {
    pub pairs_trained: u64,
}

impl EmbeddingModel {
    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn vector(&self, word_id: u32) -> &[f32] {
        let dim = self.config.dim;
        &self.input[word_id as usize * dim..(word_id as usize + 1) * dim]
    }

    pub fn vector_of(&self, word: &str) -> Result<&[f32], EmbedError> {
        let id = self
            .vocab
            .id(word)
            .ok_or_else(|| EmbedError::OutOfVocabulary(word.to_string()))?;
        Ok(self.vector(id))
    }

    /// p(target | context) as the product of path sigmoids.
    pub fn hs_probability(&self, context_word: &str, target_word: &str) -> Result<f64, EmbedError> {
        let context = self
            .vocab
            .id(context_word)
            .ok_or_else(|| EmbedError::OutOfVocabulary(context_word.to_string()))?;
        let target = self
            .vocab
            .id(target_word)
            .ok_or_else(|| EmbedError::OutOfVocabulary(target_word.to_string()))?;
        Ok(self.hs_probability_ids(context, target))
    }

    pub fn hs_probability_ids(&self, context: u32, target: u32) -> f64 {
        let dim = self.config.dim;
        let v_ctx = self.vector(context);
        let mut p = 1.0f64;
        for (&node, &bit) in self.tree.path(target).iter().zip(self.tree.code(target)) {
            let u = &self.inner[node as usize * dim..(node as usize + 1) * dim];
            let s: f64 = v_ctx.iter().zip(u).map(|(&a, &b)| a as f64 * b as f64).sum();
            let sig = 1.0 / (1.0 + (-s).exp());
            p *= if bit { 1.0 - sig } else { sig };
        }
        p
    }

    /// Top-k cosine neighbors of `query_word`, excluding the query, ties
    /// by word id.
    pub fn nearest(&self, query_word: &str, k: usize) -> Result<Vec<(String, f64)>, EmbedError> {
        if k == 0 {
            return Err(EmbedError::BadConfig("k must be >= 1".into()));
        }
        let query = self
            .vocab
            .id(query_word)
            .ok_or_else(|| EmbedError::OutOfVocabulary(query_word.to_string()))?;
        let q = self.vector(query);
        let mut scored: Vec<(u32, f64)> = (0..self.vocab.len() as u32)
            .filter(|&id| id != query)
            .map(|id| (id, cosine(q, self.vector(id))))
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite cosine").then(a.0.cmp(&b.0)));
        Ok(scored
            .into_iter()
            .take(k.min(self.vocab.len().saturating_sub(1)))
            .map(|(id, c)| (self.vocab.token(id).to_string(), c))
            .collect())
    }

    pub fn to_container(&self) -> Container {
        let dim = self.config.dim;
        Container {
            header: ModelHeader::Embedding(EmbeddingHeader {
                dim,
                window: self.config.window,
                subsample_t: self.config.subsample_t,
                epochs: self.config.epochs,
                start_lr: self.config.start_lr,
                end_lr: self.config.end_lr,
                seed: self.config.seed,
                vocab: self.vocab.clone(),
            }),
            matrices: vec![
                NamedMatrix::new("input", self.vocab.len(), dim, self.input.clone()),
                NamedMatrix::new("inner", self.vocab.len() - 1, dim, self.inner.clone()),
            ],
        }
    }

    pub fn from_container(container: &Container) -> Result<EmbeddingModel, ModelIoError> {
        let header = match &container.header {
            ModelHeader::Embedding(h) => h,
            other => {
                return Err(ModelIoError::WrongKind {
                    expected: "embedding",
                    found: other.kind().to_string(),
                })
            }
        };
        let input = container.matrix("input")?;
        let inner = container.matrix("inner")?;
        if input.rows != header.vocab.len() || input.cols != header.dim {
            return Err(ModelIoError::BadMatrix("input shape mismatch".into()));
        }
        let tree = build_huffman(header.vocab.frequencies())
            .map_err(|e| ModelIoError::BadHeader(e.to_string()))?;
        Ok(EmbeddingModel {
            config: SkipGramConfig {
                dim: header.dim,
                window: header.window,
                subsample_t: header.subsample_t,
                epochs: header.epochs,
                start_lr: header.start_lr,
                end_lr: header.end_lr,
                seed: header.seed,
                min_count: 1,
            },
            vocab: header.vocab.clone(),
            input: input.data.clone(),
            inner: inner.data.clone(),
            tree,
        })
    }
}

/// Cosine similarity of two vectors; 0 when either norm vanishes.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0f64;
    let mut na = 0f64;
    let mut nb = 0f64;
    for (&x, &y) in a.iter().zip(b) {
        dot += x as f64 * y as f64;
        na += (x as f64).powi(2);
        nb += (y as f64).powi(2);
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Train skip-gram embeddings over token streams. Deterministic for a
/// given seed (single worker).
pub fn train_skipgram(
    streams: &[Vec<String>],
    config: &SkipGramConfig,
) -> Result<(EmbeddingModel, TrainStats), EmbedError> {
    config.validate()?;
    if streams.iter().all(|s| s.is_empty()) {
        return Err(EmbedError::BadConfig("corpus is empty".into()));
    }
    let vocab = Vocabulary::from_token_streams(
        streams.iter().map(|s| s.iter().map(String::as_str)),
        config.min_count,
    );
    if vocab.len() < 2 {
        return Err(EmbedError::VocabTooSmall(vocab.len()));
    }
    let tree = build_huffman(vocab.frequencies())?;
    let id_streams: Vec<Vec<u32>> = streams
        .iter()
        .map(|s| s.iter().filter_map(|t| vocab.id(t)).collect())
        .collect();

    let dim = config.dim;
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x1234_5678_9abc_def0);
    let mut input: Vec<f32> = (0..vocab.len() * dim)
        .map(|_| (init_rng.gen::<f32>() - 0.5) / dim as f32)
        .collect();
    let mut inner = vec![0f32; (vocab.len() - 1) * dim];

    // Pass 1 counts the pairs the identically-seeded pass 2 will visit,
    // so the learning rate can decay linearly over the true total.
    let pair_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut total_pairs = 0u64;
    {
        let mut rng = pair_rng.clone();
        generate_pairs(&id_streams, &vocab, config, &mut rng, |_, _| {
            total_pairs += 1;
        });
    }
    if total_pairs == 0 {
        return Err(EmbedError::BadConfig("no training pairs were generated".into()));
    }

    let mut rng = pair_rng;
    let mut seen = 0u64;
    let mut hidden_err = vec![0f64; dim];
    generate_pairs(&id_streams, &vocab, config, &mut rng, |center, context| {
        let progress = seen as f64 / total_pairs as f64;
        let lr =
            (config.start_lr - (config.start_lr - config.end_lr) * progress).max(config.end_lr);
        seen += 1;
        let c = center as usize;
        hidden_err.iter_mut().for_each(|e| *e = 0.0);
        for (&node, &bit) in tree.path(context).iter().zip(tree.code(context)) {
            let n = node as usize;
            let mut s = 0f64;
            for d in 0..dim {
                s += input[c * dim + d] as f64 * inner[n * dim + d] as f64;
            }
            let sig = 1.0 / (1.0 + (-s).exp());
            let target = if bit { 0.0 } else { 1.0 };
            let g = sig - target;
            for d in 0..dim {
                hidden_err[d] += g * inner[n * dim + d] as f64;
                inner[n * dim + d] -= (lr * g * input[c * dim + d] as f64) as f32;
            }
        }
        for d in 0..dim {
            input[c * dim + d] -= (lr * hidden_err[d]) as f32;
        }
    });

    Ok((
        EmbeddingModel { config: config.clone(), vocab, input, inner, tree },
        TrainStats { pairs_trained: total_pairs },
    ))
}

/// Drive the (center, context) pair stream: subsample each sentence, then
/// slide a dynamic window over the kept tokens. Consumes the RNG
/// identically on every call with the same inputs.
fn generate_pairs(
    id_streams: &[Vec<u32>],
    vocab: &Vocabulary,
    config: &SkipGramConfig,
    rng: &mut ChaCha8Rng,
    mut visit: impl FnMut(u32, u32),
) {
    let mut kept: Vec<u32> = Vec::new();
    for _epoch in 0..config.epochs {
        for stream in id_streams {
            kept.clear();
            for &word in stream {
                let p = discard_probability(config.subsample_t, vocab.frequency_fraction(word));
                // Always consume one draw so both passes stay in lockstep.
                let u: f64 = rng.gen();
                if u >= p {
                    kept.push(word);
                }
            }
            for i in 0..kept.len() {
                let b = rng.gen_range(1..=config.window);
                let lo = i.saturating_sub(b);
                let hi = (i + b).min(kept.len() - 1);
                for j in lo..=hi {
                    if j != i {
                        visit(kept[i], kept[j]);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_context_clone_corpus, CloneCorpusSpec};
    use proptest::{prop_assert, proptest};

    #[test]
    fn two_word_codes_have_length_one() {
        let tree = build_huffman(&[3, 1]).unwrap();
        assert_eq!(tree.code_len(0), 1);
        assert_eq!(tree.code_len(1), 1);
        assert_ne!(tree.code(0), tree.code(1));
    }

    #[test]
    fn skewed_frequencies_give_expected_lengths() {
        let tree = build_huffman(&[4, 2, 1, 1]).unwrap();
        let lens: Vec<usize> = (0..4).map(|w| tree.code_len(w)).collect();
        assert_eq!(lens, vec![1, 2, 3, 3]);
    }

    #[test]
    fn equal_frequencies_give_balanced_tree() {
        let tree = build_huffman(&[1, 1, 1, 1]).unwrap();
        for w in 0..4 {
            assert_eq!(tree.code_len(w), 2);
        }
    }

    #[test]
    fn tiny_vocabulary_is_rejected() {
        assert!(matches!(build_huffman(&[5]), Err(EmbedError::VocabTooSmall(1))));
    }

    #[test]
    fn codes_are_prefix_free_and_paths_align() {
        let tree = build_huffman(&[9, 7, 5, 3, 2, 1, 1]).unwrap();
        for w in 0..7u32 {
            assert_eq!(tree.code(w).len(), tree.path(w).len());
            for other in 0..7u32 {
                if w == other {
                    continue;
                }
                let a = tree.code(w);
                let b = tree.code(other);
                let prefix = a.len() <= b.len() && a.iter().zip(b).all(|(x, y)| x == y);
                assert!(!prefix, "code of {w} is a prefix of {other}");
            }
        }
    }

    /// Minimal expected code length over every Kraft-feasible length
    /// assignment; exhaustive for small V.
    fn brute_force_optimal_length(frequencies: &[u64]) -> f64 {
        let v = frequencies.len();
        let max_len = (v - 1).max(1);
        let total: u64 = frequencies.iter().sum();
        let mut lens = vec![1usize; v];
        let mut best = f64::INFINITY;
        loop {
            let kraft: f64 = lens.iter().map(|&l| 0.5f64.powi(l as i32)).sum();
            if kraft <= 1.0 + 1e-12 {
                let cost: f64 = frequencies
                    .iter()
                    .zip(&lens)
                    .map(|(&f, &l)| f as f64 * l as f64)
                    .sum::<f64>()
                    / total as f64;
                best = best.min(cost);
            }
            let mut pos = 0;
            loop {
                if pos == v {
                    return best;
                }
                lens[pos] += 1;
                if lens[pos] <= max_len {
                    break;
                }
                lens[pos] = 1;
                pos += 1;
            }
        }
    }

    #[test]
    fn huffman_is_minimal_for_small_vocabularies() {
        let freqs = [4u64, 2, 1, 1];
        let tree = build_huffman(&freqs).unwrap();
        let optimal = brute_force_optimal_length(&freqs);
        assert!((tree.expected_code_length(&freqs) - optimal).abs() < 1e-12);
    }

    #[test]
    fn more_frequent_words_never_have_longer_codes() {
        let freqs = [40u64, 20, 20, 10, 5, 3, 1];
        let tree = build_huffman(&freqs).unwrap();
        for a in 0..freqs.len() as u32 {
            for b in 0..freqs.len() as u32 {
                if freqs[a as usize] > freqs[b as usize] {
                    assert!(tree.code_len(a) <= tree.code_len(b));
                }
            }
        }
    }

    fn zero_model(v: usize, dim: usize) -> EmbeddingModel {
        let vocab = Vocabulary::from_entries(
            (0..v).map(|i| (format!("w{i}"), (v - i) as u64)).collect(),
        );
        let tree = build_huffman(vocab.frequencies()).unwrap();
        EmbeddingModel {
            config: SkipGramConfig { dim, ..Default::default() },
            vocab,
            input: vec![0.0; v * dim],
            inner: vec![0.0; (v - 1) * dim],
            tree,
        }
    }

    #[test]
    fn zero_vectors_give_code_length_probabilities() {
        let model = zero_model(5, 4);
        for target in 0..5u32 {
            let p = model.hs_probability_ids(0, target);
            let expected = 0.5f64.powi(model.tree.code_len(target) as i32);
            assert!((p - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn two_word_probabilities_sum_to_one_exactly() {
        let mut model = zero_model(2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        model.input.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
        model.inner.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
        let total = model.hs_probability_ids(0, 0) + model.hs_probability_ids(0, 1);
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn probabilities_normalize_by_enumeration() {
        let v = 24;
        let mut model = zero_model(v, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        model.input.iter_mut().for_each(|x| *x = rng.gen_range(-1.5..1.5));
        model.inner.iter_mut().for_each(|x| *x = rng.gen_range(-1.5..1.5));
        for context in [0u32, 3, 17] {
            let total: f64 =
                (0..v as u32).map(|t| model.hs_probability_ids(context, t)).sum();
            assert!((total - 1.0).abs() < 1e-6, "context {context}: {total}");
        }
    }

    #[test]
    fn oov_words_error() {
        let model = zero_model(3, 2);
        assert!(matches!(
            model.hs_probability("nope", "w0"),
            Err(EmbedError::OutOfVocabulary(_))
        ));
        assert!(matches!(model.nearest("nope", 1), Err(EmbedError::OutOfVocabulary(_))));
    }

    #[test]
    fn subsample_t_of_one_discards_nothing() {
        for f in [1e-6, 0.01, 0.5, 1.0] {
            assert_eq!(discard_probability(1.0, f), 0.0);
        }
        // Very frequent words are discarded often at the default t.
        assert!(discard_probability(0.01, 0.9) > 0.85);
    }

    #[test]
    fn hs_gradients_match_finite_differences() {
        // f64 shadow of the pair loss so the finite-difference oracle is
        // numerically clean.
        let v = 6;
        let dim = 5;
        let tree = build_huffman(&[8, 5, 4, 2, 1, 1]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut input: Vec<f64> = (0..v * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut inner: Vec<f64> =
            (0..(v - 1) * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |input: &[f64], inner: &[f64], center: usize, target: u32| -> f64 {
            let mut total = 0.0;
            for (&node, &bit) in tree.path(target).iter().zip(tree.code(target)) {
                let n = node as usize;
                let s: f64 =
                    (0..dim).map(|d| input[center * dim + d] * inner[n * dim + d]).sum();
                let sig = 1.0 / (1.0 + (-s).exp());
                let p = if bit { 1.0 - sig } else { sig };
                total -= p.ln();
            }
            total
        };
        let (center, target) = (1usize, 4u32);
        let mut grad_input = vec![0f64; dim];
        let mut grad_inner = vec![0f64; (v - 1) * dim];
        for (&node, &bit) in tree.path(target).iter().zip(tree.code(target)) {
            let n = node as usize;
            let s: f64 = (0..dim).map(|d| input[center * dim + d] * inner[n * dim + d]).sum();
            let sig = 1.0 / (1.0 + (-s).exp());
            let g = sig - if bit { 0.0 } else { 1.0 };
            for d in 0..dim {
                grad_input[d] += g * inner[n * dim + d];
                grad_inner[n * dim + d] += g * input[center * dim + d];
            }
        }
        let h = 1e-6;
        for (d, &analytic) in grad_input.iter().enumerate() {
            let idx = center * dim + d;
            let orig = input[idx];
            input[idx] = orig + h;
            let plus = loss(&input, &inner, center, target);
            input[idx] = orig - h;
            let minus = loss(&input, &inner, center, target);
            input[idx] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0);
            assert!(rel <= 1e-4, "input grad dim {d}: rel {rel}");
        }
        for idx in 0..inner.len() {
            let orig = inner[idx];
            inner[idx] = orig + h;
            let plus = loss(&input, &inner, center, target);
            inner[idx] = orig - h;
            let minus = loss(&input, &inner, center, target);
            inner[idx] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let rel = (grad_inner[idx] - numeric).abs()
                / grad_inner[idx].abs().max(numeric.abs()).max(1.0);
            assert!(rel <= 1e-4, "inner grad {idx}: rel {rel}");
        }
    }

    fn clone_config(seed: u64) -> SkipGramConfig {
        SkipGramConfig {
            dim: 32,
            window: 4,
            subsample_t: 1.0,
            epochs: 12,
            min_count: 1,
            start_lr: 0.05,
            end_lr: 0.001,
            seed,
        }
    }

    #[test]
    fn context_clones_become_nearest_neighbors() {
        let corpus = generate_context_clone_corpus(&CloneCorpusSpec {
            vocab_size: 20,
            clone_pairs: 2,
            templates: 120,
            context_half: 3,
            seed: 6,
        })
        .unwrap();
        let (model, stats) = train_skipgram(&corpus.streams, &clone_config(1)).unwrap();
        assert!(stats.pairs_trained > 10_000);
        for (a, b) in &corpus.pairs {
            let sim = cosine(model.vector_of(a).unwrap(), model.vector_of(b).unwrap());
            assert!(sim >= 0.7, "cosine({a}, {b}) = {sim}");
            let nearest = model.nearest(a, 1).unwrap();
            assert_eq!(&nearest[0].0, b, "nearest({a}) = {nearest:?}");
        }
    }

    #[test]
    fn training_is_seed_deterministic() {
        let corpus = generate_context_clone_corpus(&CloneCorpusSpec {
            vocab_size: 12,
            clone_pairs: 1,
            templates: 20,
            context_half: 2,
            seed: 3,
        })
        .unwrap();
        let config = clone_config(9);
        let (a, _) = train_skipgram(&corpus.streams, &config).unwrap();
        let (b, _) = train_skipgram(&corpus.streams, &config).unwrap();
        assert_eq!(a.input, b.input);
        assert_eq!(a.inner, b.inner);
    }

    #[test]
    fn auxiliary_corpus_changes_neighbor_lists() {
        // Same hyperparameters, one corpus with an extra diverse corpus
        // appended: neighbor lists move.
        let base = generate_context_clone_corpus(&CloneCorpusSpec {
            vocab_size: 14,
            clone_pairs: 1,
            templates: 40,
            context_half: 2,
            seed: 21,
        })
        .unwrap();
        let auxiliary = generate_context_clone_corpus(&CloneCorpusSpec {
            vocab_size: 14,
            clone_pairs: 0,
            templates: 120,
            context_half: 4,
            seed: 77,
        })
        .unwrap();
        let mut combined = base.streams.clone();
        combined.extend(auxiliary.streams);
        let config = clone_config(4);
        let (small, _) = train_skipgram(&base.streams, &config).unwrap();
        let (large, _) = train_skipgram(&combined, &config).unwrap();
        let a = &base.pairs[0].0;
        let small_neighbors: Vec<String> =
            small.nearest(a, 5).unwrap().into_iter().map(|(w, _)| w).collect();
        let large_neighbors: Vec<String> =
            large.nearest(a, 5).unwrap().into_iter().map(|(w, _)| w).collect();
        assert_ne!(small_neighbors, large_neighbors);
    }

    #[test]
    fn nearest_caps_at_vocab_size() {
        let model = zero_model(4, 3);
        let out = model.nearest("w0", 99).unwrap();
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn container_roundtrip() {
        let corpus = generate_context_clone_corpus(&CloneCorpusSpec {
            vocab_size: 10,
            clone_pairs: 1,
            templates: 10,
            context_half: 2,
            seed: 5,
        })
        .unwrap();
        let (model, _) = train_skipgram(&corpus.streams, &clone_config(2)).unwrap();
        let container = model.to_container();
        let back = EmbeddingModel::from_container(&container).unwrap();
        assert_eq!(back.input, model.input);
        assert_eq!(back.tree, model.tree);
        assert_eq!(back.vocab.len(), model.vocab.len());
    }

    proptest! {
        #[test]
        fn cosine_is_bounded_and_symmetric(
            a in proptest::collection::vec(-10f32..10.0, 5),
            b in proptest::collection::vec(-10f32..10.0, 5),
        ) {
            let ab = cosine(&a, &b);
            let ba = cosine(&b, &a);
            prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&ab));
            prop_assert!((ab - ba).abs() < 1e-12);
            if a.iter().any(|&x| x != 0.0) {
                prop_assert!((cosine(&a, &a) - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn huffman_minimality_brute_force(freqs in proptest::collection::vec(1u64..8, 2..5)) {
            let tree = build_huffman(&freqs).unwrap();
            let optimal = brute_force_optimal_length(&freqs);
            prop_assert!((tree.expected_code_length(&freqs) - optimal).abs() < 1e-9);
        }
    }
}
