//! Pipeline configuration: a TOML file with per-module sections, every
//! field optional. CLI flags override file values; seeds are recorded
//! into every artifact's manifest.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use radmine_core::classifier::SplitSpec;
use radmine_core::corpus::PreprocessConfig;
use radmine_core::lda::SelectParams;
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub preprocess: PreprocessSection,
    #[serde(default)]
    pub lda: LdaSection,
    #[serde(default)]
    pub embed: EmbedSection,
    #[serde(default)]
    pub classifier: ClassifierSection,
    #[serde(default)]
    pub termmine: TermmineSection,
    #[serde(default)]
    pub seeds: SeedsSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub corpus: Option<PathBuf>,
    pub ontology_lexicon: Option<PathBuf>,
    pub radiology_lexicon: Option<PathBuf>,
    pub triggers: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessSection {
    pub stem: bool,
    pub keep_digits: bool,
    pub min_count: u64,
    pub stopword_path: Option<PathBuf>,
    pub stem_rules_path: Option<PathBuf>,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        PreprocessSection {
            stem: true,
            keep_digits: false,
            min_count: 1,
            stopword_path: None,
            stem_rules_path: None,
        }
    }
}

impl PreprocessSection {
    pub fn build(&self) -> Result<PreprocessConfig> {
        let mut config = PreprocessConfig::default()
            .with_stem(self.stem)
            .with_keep_digits(self.keep_digits);
        if let Some(path) = &self.stopword_path {
            config = config
                .load_stopwords(path)
                .with_context(|| format!("loading stopwords from {}", path.display()))?;
        }
        if let Some(path) = &self.stem_rules_path {
            config = config
                .load_stem_rules(path)
                .with_context(|| format!("loading stem rules from {}", path.display()))?;
        }
        Ok(config)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LdaSection {
    pub k: usize,
    pub alpha: Option<f64>,
    pub beta: f64,
    pub iterations: usize,
    pub fold_in_iterations: usize,
    pub candidate_ks: Vec<usize>,
    pub split_fraction: f64,
    pub elbow_threshold: f64,
    pub subtopic_candidates: Vec<usize>,
    pub min_docs: usize,
}

impl Default for LdaSection {
    fn default() -> Self {
        LdaSection {
            k: 5,
            alpha: None,
            beta: 0.01,
            iterations: 200,
            fold_in_iterations: 100,
            candidate_ks: vec![2, 5, 10, 20],
            split_fraction: 0.8,
            elbow_threshold: 0.01,
            subtopic_candidates: vec![2, 3, 5],
            min_docs: 5,
        }
    }
}

impl LdaSection {
    pub fn select_params(&self, seed: u64) -> SelectParams {
        SelectParams {
            alpha: self.alpha,
            beta: self.beta,
            iterations: self.iterations,
            fold_in_iterations: self.fold_in_iterations,
            split_fraction: self.split_fraction,
            elbow_threshold: self.elbow_threshold,
            seed,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedSection {
    pub dim: usize,
    pub window: usize,
    pub subsample_t: f64,
    pub epochs: usize,
    pub min_count: u64,
    pub start_lr: f64,
    pub end_lr: f64,
}

impl Default for EmbedSection {
    fn default() -> Self {
        EmbedSection {
            dim: 256,
            window: 10,
            subsample_t: 0.01,
            epochs: 5,
            min_count: 1,
            start_lr: 0.025,
            end_lr: 0.0001,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierSection {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub base_lr: f64,
    pub batch_size: usize,
    pub trace_every: usize,
    pub train_frac: f64,
    pub cv_frac: f64,
    pub test_frac: f64,
    pub group_by_patient: bool,
    pub min_per_split: usize,
    pub fine_tune_base_lr: f64,
    pub fine_tune_new_layer_lr: f64,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        ClassifierSection {
            hidden: vec![64],
            epochs: 30,
            base_lr: 0.01,
            batch_size: 32,
            trace_every: 0,
            train_frac: 0.85,
            cv_frac: 0.05,
            test_frac: 0.10,
            group_by_patient: false,
            min_per_split: 1,
            fine_tune_base_lr: 0.001,
            fine_tune_new_layer_lr: 0.01,
        }
    }
}

impl ClassifierSection {
    pub fn split_spec(&self, seed: u64) -> SplitSpec {
        SplitSpec {
            train_frac: self.train_frac,
            cv_frac: self.cv_frac,
            test_frac: self.test_frac,
            seed,
            group_by_patient: self.group_by_patient,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TermmineSection {
    pub semantic_types: Vec<String>,
    pub min_label_frequency: u64,
}

impl Default for TermmineSection {
    fn default() -> Self {
        TermmineSection {
            semantic_types: vec!["T047".to_string()],
            min_label_frequency: 10,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedsSection {
    pub master: u64,
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<PipelineConfig> {
        match path {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
            }
            None => Ok(PipelineConfig::default()),
        }
    }
}
