use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::SplitRatios;
use crate::error::{Error, Result};
use crate::sampling::{DistanceMetric, Strategy};
use crate::scoring::{BackendConfig, BackendKind};

pub const DEFAULT_SEED: u64 = 144;

fn default_ids() -> Vec<String> {
    vec!["1".to_string()]
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_workers() -> usize {
    4
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn default_proportion() -> f64 {
    0.05
}

/// Which gold-label words become training targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelWords {
    #[default]
    All,
    First,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default = "default_proportion")]
    pub proportion: f64,
    /// Seeds the split, random sampling and nothing else.
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub metric: DistanceMetric,
    #[serde(default)]
    pub label_words: LabelWords,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::default(),
            proportion: default_proportion(),
            seed: DEFAULT_SEED,
            metric: DistanceMetric::default(),
            label_words: LabelWords::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default)]
    pub ratios: SplitRatios,
    /// Precomputed assignment; overrides the seeded split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSource {
    File(PathBuf),
    /// Logit-server base URL exposing `/embed`.
    Endpoint(String),
}

/// Records a run is evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    All,
    TrainDev,
    Validation,
    #[default]
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    /// Label catalog; the retail catalog when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog: Option<PathBuf>,
    #[serde(default = "default_ids")]
    pub templates: Vec<String>,
    #[serde(default = "default_ids")]
    pub verbalizers: Vec<String>,
    /// Extra templates; ids here replace built-in ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verbalizer_file: Option<PathBuf>,
    pub backend: BackendConfig,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<EmbeddingSource>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_chars: Option<usize>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub eval_split: EvalSplit,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(dataset: impl Into<PathBuf>, backend: BackendConfig) -> Self {
        Self {
            dataset: dataset.into(),
            catalog: None,
            templates: default_ids(),
            verbalizers: default_ids(),
            template_file: None,
            verbalizer_file: None,
            backend,
            sampling: SamplingConfig::default(),
            split: SplitConfig::default(),
            embeddings: None,
            output_dir: default_output(),
            max_chars: None,
            workers: default_workers(),
            eval_split: EvalSplit::default(),
            cache_dir: None,
        }
    }

    /// Reads a config; relative paths are taken from the config's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: Self = serde_json::from_str(&raw).map_err(|e| Error::MalformedFile {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        Ok(config.rebase(base))
    }

    pub fn rebase(mut self, base: &Path) -> Self {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.dataset);
        join(&mut self.output_dir);
        for p in [
            &mut self.catalog,
            &mut self.template_file,
            &mut self.verbalizer_file,
            &mut self.split.file,
            &mut self.cache_dir,
            &mut self.backend.state,
        ]
        .into_iter()
        .flatten()
        {
            join(p);
        }
        if let Some(EmbeddingSource::File(p)) = &mut self.embeddings {
            join(p);
        }
        self
    }

    /// Few-shot runs train a toy model; everything else scores zero-shot.
    pub fn is_few_shot(&self) -> bool {
        self.backend.kind == BackendKind::Toy && self.backend.state.is_none()
    }

    /// Checks that need no files. Id existence is checked once the
    /// registries are loaded.
    pub fn validate(&self) -> Result<()> {
        self.validate_with(false)
    }

    pub(crate) fn validate_with(&self, embeddings_in_memory: bool) -> Result<()> {
        let s = &self.sampling;
        if !(s.proportion > 0.0 && s.proportion <= 1.0) {
            return Err(Error::Config(format!("proportion {} is outside (0, 1]", s.proportion)));
        }
        if self.templates.is_empty() {
            return Err(Error::Config("no templates configured".into()));
        }
        if self.verbalizers.is_empty() && self.backend.kind != BackendKind::Chat {
            return Err(Error::Config("no verbalizers configured".into()));
        }
        if self.backend.kind == BackendKind::Chat && self.templates.len() != 1 {
            return Err(Error::Config("the chat backend takes exactly one template".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be positive".into()));
        }
        if s.strategy == Strategy::Active && self.embeddings.is_none() && !embeddings_in_memory {
            return Err(Error::Config("active sampling needs an embeddings source".into()));
        }
        Ok(())
    }
}
