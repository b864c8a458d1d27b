//! Deterministic generators and brute-force oracles used by tests and the
//! acceptance suite. Oracles live in the shipped library so acceptance
//! runs can reach them from the CLI.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::classifier::FeatureRecord;
use crate::corpus::{BowDocument, Vocabulary};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    BadSpec(String),
    #[error("instance too large: {states} assignment vectors exceed the 10^6 budget")]
    TooLarge { states: u64 },
}

/// Planted generative parameters for an LDA corpus.
#[derive(Debug, Clone)]
pub struct PlantedLdaSpec {
    pub k: usize,
    pub vocab_size: usize,
    pub docs: usize,
    pub doc_len: usize,
    /// Symmetric Dirichlet over document topic mixtures.
    pub alpha: f64,
    /// Give every topic a disjoint vocabulary block instead of a sampled
    /// distribution.
    pub disjoint_supports: bool,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct PlantedTruth {
    /// Row-major `k x V` planted topic-word matrix.
    pub phi: Vec<f64>,
    pub theta: Vec<Vec<f64>>,
    pub dominant_topic: Vec<usize>,
    pub vocab: Vocabulary,
    /// Token streams, one per document, usable as corpus text.
    pub token_streams: Vec<Vec<String>>,
}

/// Sample documents from the LDA generative process with planted
/// parameters; deterministic under the spec seed.
pub fn generate_lda_corpus(
    spec: &PlantedLdaSpec,
) -> Result<(Vec<BowDocument>, PlantedTruth), SynthError> {
    if spec.k < 1 || spec.vocab_size < spec.k || spec.docs < 1 {
        return Err(SynthError::BadSpec(
            "need k >= 1, vocab_size >= k, docs >= 1".into(),
        ));
    }
    if spec.doc_len == 0 {
        return Err(SynthError::BadSpec("doc_len must be >= 1".into()));
    }
    if spec.alpha <= 0.0 {
        return Err(SynthError::BadSpec("alpha must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let v = spec.vocab_size;
    let mut phi = vec![0f64; spec.k * v];
    if spec.disjoint_supports {
        for topic in 0..spec.k {
            let start = topic * v / spec.k;
            let end = (topic + 1) * v / spec.k;
            let mass = 1.0 / (end - start) as f64;
            for w in start..end {
                phi[topic * v + w] = mass;
            }
        }
    } else {
        let dir = Dirichlet::new_with_size(1.0, v)
            .map_err(|e| SynthError::BadSpec(e.to_string()))?;
        for topic in 0..spec.k {
            let row = dir.sample(&mut rng);
            phi[topic * v..(topic + 1) * v].copy_from_slice(&row);
        }
    }

    let theta_prior = Dirichlet::new_with_size(spec.alpha, spec.k)
        .map_err(|e| SynthError::BadSpec(e.to_string()))?;
    let mut docs = Vec::with_capacity(spec.docs);
    let mut theta = Vec::with_capacity(spec.docs);
    let mut dominant = Vec::with_capacity(spec.docs);
    let mut token_streams = Vec::with_capacity(spec.docs);
    let mut word_counts = vec![0u64; v];
    for d in 0..spec.docs {
        let theta_d = theta_prior.sample(&mut rng);
        let mut counts = vec![0u32; v];
        let mut stream = Vec::with_capacity(spec.doc_len);
        for _ in 0..spec.doc_len {
            let topic = sample_categorical(&theta_d, &mut rng);
            let word = sample_categorical(&phi[topic * v..(topic + 1) * v], &mut rng);
            counts[word] += 1;
            word_counts[word] += 1;
            stream.push(format!("w{word}"));
        }
        let pairs: Vec<(u32, u32)> = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(w, &c)| (w as u32, c))
            .collect();
        docs.push(BowDocument {
            doc_id: format!("synth{d}"),
            counts: pairs,
            total: spec.doc_len as u32,
        });
        let best = theta_d
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite theta"))
            .map(|(i, _)| i)
            .unwrap_or(0);
        dominant.push(best);
        theta.push(theta_d);
        token_streams.push(stream);
    }
    // Ids stay aligned with phi columns: entry order is the word id order.
    let vocab = Vocabulary::from_entries(
        (0..v).map(|w| (format!("w{w}"), word_counts[w].max(1))).collect(),
    );
    Ok((
        docs,
        PlantedTruth { phi, theta, dominant_topic: dominant, vocab, token_streams },
    ))
}

fn sample_categorical(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut pick = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        pick -= w;
        if pick <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

/// Exact log p(w_d | phi, alpha) by enumerating every topic-assignment
/// vector and integrating the symmetric Dirichlet prior analytically per
/// assignment-count vector.
pub fn exact_doc_likelihood(
    phi: &[f64],
    k: usize,
    vocab_size: usize,
    alpha: f64,
    tokens: &[u32],
) -> Result<f64, SynthError> {
    assert_eq!(phi.len(), k * vocab_size, "phi shape mismatch");
    if tokens.is_empty() {
        return Err(SynthError::BadSpec("document has no tokens".into()));
    }
    let n = tokens.len();
    let states = (k as u64).checked_pow(n as u32).unwrap_or(u64::MAX);
    if states > 1_000_000 {
        return Err(SynthError::TooLarge { states });
    }
    let k_alpha = k as f64 * alpha;
    let prior_const = ln_gamma(k_alpha) - ln_gamma(k_alpha + n as f64) - k as f64 * ln_gamma(alpha);
    let mut assignment = vec![0usize; n];
    let mut log_terms = Vec::with_capacity(states as usize);
    loop {
        let mut counts = vec![0usize; k];
        let mut log_w = 0f64;
        for (i, &word) in tokens.iter().enumerate() {
            let z = assignment[i];
            counts[z] += 1;
            log_w += phi[z * vocab_size + word as usize].ln();
        }
        let log_prior: f64 = prior_const
            + counts.iter().map(|&c| ln_gamma(alpha + c as f64)).sum::<f64>();
        log_terms.push(log_w + log_prior);

        // Next assignment vector (odometer in base k).
        let mut pos = 0;
        loop {
            if pos == n {
                return Ok(log_sum_exp(&log_terms));
            }
            assignment[pos] += 1;
            if assignment[pos] < k {
                break;
            }
            assignment[pos] = 0;
            pos += 1;
        }
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Minimum over topic permutations of the maximum per-topic total
/// variation distance between two `k x V` topic-word matrices.
pub fn matched_topic_tv_distance(truth_phi: &[f64], learned_phi: &[f64], vocab_size: usize) -> f64 {
    assert_eq!(truth_phi.len(), learned_phi.len());
    assert_eq!(truth_phi.len() % vocab_size, 0);
    let k = truth_phi.len() / vocab_size;
    assert!(k <= 8, "permutation matching is exhaustive; k must be small");
    let tv = |a: usize, b: usize| -> f64 {
        0.5 * (0..vocab_size)
            .map(|w| (truth_phi[a * vocab_size + w] - learned_phi[b * vocab_size + w]).abs())
            .sum::<f64>()
    };
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, &mut |p| {
        let worst = (0..k).map(|i| tv(i, p[i])).fold(0.0, f64::max);
        if worst < best {
            best = worst;
        }
    });
    best
}

fn permute(perm: &mut Vec<usize>, start: usize, visit: &mut impl FnMut(&[usize])) {
    if start == perm.len() {
        visit(perm);
        return;
    }
    for i in start..perm.len() {
        perm.swap(start, i);
        permute(perm, start + 1, visit);
        perm.swap(start, i);
    }
}

/// Class-conditional isotropic Gaussian features.
#[derive(Debug, Clone)]
pub struct FeatureSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    /// Distance of every class mean from the origin.
    pub separation: f64,
    /// Standard deviation of the isotropic noise.
    pub noise: f64,
    pub seed: u64,
}

/// Deterministic feature dataset: per-class means on random unit
/// directions scaled by `separation`, plus Gaussian noise.
pub fn generate_feature_dataset(
    spec: &FeatureSpec,
) -> Result<(Vec<FeatureRecord>, Vec<usize>), SynthError> {
    if spec.classes < 2 {
        return Err(SynthError::BadSpec("need at least 2 classes".into()));
    }
    if spec.dim == 0 || spec.per_class == 0 {
        return Err(SynthError::BadSpec("dim and per_class must be >= 1".into()));
    }
    if spec.noise < 0.0 {
        return Err(SynthError::BadSpec("noise must be nonnegative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut means = Vec::with_capacity(spec.classes);
    for _ in 0..spec.classes {
        let mut direction: Vec<f64> =
            (0..spec.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm: f64 = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
        let norm = if norm == 0.0 { 1.0 } else { norm };
        for x in &mut direction {
            *x *= spec.separation / norm;
        }
        means.push(direction);
    }
    let mut records = Vec::with_capacity(spec.classes * spec.per_class);
    let mut labels = Vec::with_capacity(spec.classes * spec.per_class);
    for (class, mean) in means.iter().enumerate() {
        for i in 0..spec.per_class {
            let features: Vec<f64> = mean
                .iter()
                .map(|&m| {
                    let eps: f64 = StandardNormal.sample(&mut rng);
                    m + spec.noise * eps
                })
                .collect();
            records.push(FeatureRecord::new(format!("c{class}i{i}:-:0"), features));
            labels.push(class);
        }
    }
    Ok((records, labels))
}

/// One-vs-rest perceptron separability oracle: returns true when every
/// class can be separated from the rest within `epochs` passes.
pub fn linearly_separable(records: &[FeatureRecord], labels: &[usize], epochs: usize) -> bool {
    assert_eq!(records.len(), labels.len());
    let classes = labels.iter().copied().max().map(|m| m + 1).unwrap_or(0);
    let dim = records.first().map(|r| r.features.len()).unwrap_or(0);
    'class: for class in 0..classes {
        let mut w = vec![0f64; dim + 1];
        for _ in 0..epochs {
            let mut mistakes = 0;
            for (rec, &label) in records.iter().zip(labels) {
                let y = if label == class { 1.0 } else { -1.0 };
                let score: f64 = w[dim]
                    + rec.features.iter().zip(&w[..dim]).map(|(x, wi)| x * wi).sum::<f64>();
                if y * score <= 0.0 {
                    for (wi, x) in w[..dim].iter_mut().zip(&rec.features) {
                        *wi += y * x;
                    }
                    w[dim] += y;
                    mistakes += 1;
                }
            }
            if mistakes == 0 {
                continue 'class;
            }
        }
        return false;
    }
    true
}

/// Corpus where designated word pairs appear in identical sampled
/// contexts.
#[derive(Debug, Clone)]
pub struct CloneCorpusSpec {
    pub vocab_size: usize,
    pub clone_pairs: usize,
    /// Context templates sampled per clone pair.
    pub templates: usize,
    /// Context words on each side of the inserted clone.
    pub context_half: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct CloneCorpus {
    pub streams: Vec<Vec<String>>,
    /// The designated clone word pairs.
    pub pairs: Vec<(String, String)>,
}

/// Clone words occupy ids `0 .. 2*clone_pairs`; the remaining vocabulary
/// is split into per-pair context pools so each pair shares contexts only
/// with itself.
pub fn generate_context_clone_corpus(spec: &CloneCorpusSpec) -> Result<CloneCorpus, SynthError> {
    if spec.vocab_size < 4 {
        return Err(SynthError::BadSpec("vocab_size must be >= 4".into()));
    }
    let context_words = spec.vocab_size.saturating_sub(2 * spec.clone_pairs);
    if spec.clone_pairs > 0 && context_words < 2 * spec.clone_pairs {
        return Err(SynthError::BadSpec(
            "not enough context words for the requested clone pairs".into(),
        ));
    }
    if spec.context_half == 0 || spec.templates == 0 {
        return Err(SynthError::BadSpec("templates and context_half must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let word = |id: usize| format!("w{id}");
    let mut corpus = CloneCorpus { streams: Vec::new(), pairs: Vec::new() };
    if spec.clone_pairs == 0 {
        for _ in 0..spec.templates {
            let stream: Vec<String> = (0..2 * spec.context_half)
                .map(|_| word(2 * spec.clone_pairs + rng.gen_range(0..context_words)))
                .collect();
            corpus.streams.push(stream);
        }
        return Ok(corpus);
    }
    let pool_size = context_words / spec.clone_pairs;
    for pair in 0..spec.clone_pairs {
        let a = word(2 * pair);
        let b = word(2 * pair + 1);
        corpus.pairs.push((a.clone(), b.clone()));
        let pool_start = 2 * spec.clone_pairs + pair * pool_size;
        for _ in 0..spec.templates {
            let left: Vec<String> = (0..spec.context_half)
                .map(|_| word(pool_start + rng.gen_range(0..pool_size)))
                .collect();
            let right: Vec<String> = (0..spec.context_half)
                .map(|_| word(pool_start + rng.gen_range(0..pool_size)))
                .collect();
            for member in [&a, &b] {
                let mut stream = left.clone();
                stream.push(member.clone());
                stream.extend(right.iter().cloned());
                corpus.streams.push(stream);
            }
        }
    }
    Ok(corpus)
}
