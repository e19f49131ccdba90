//! Run configuration loaded from a TOML file.
//!
//! ```toml
//! [selection]
//! strategy = "joint"
//! super_batch_size = 4000
//! filter_ratio = 0.9
//! n_chunks = 4
//! w_easy = 0.8
//! w_hard = 0.2
//!
//! [models]
//! learner = "mbart"
//! learner_embeddings = "emb/learner"
//! reference = "labse"
//! reference_embeddings = "emb/reference"
//!
//! [cache]
//! dir = "cache"
//!
//! [cost]
//! learner_fwd_flops_per_sample = 2e9
//!
//! [io]
//! corpus = "train.tsv"
//! out = "selection.jsonl"
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::flops::CostModel;
use super::ingest::CorpusFormat;
use crate::error::{Error, Result};
use crate::selector::Strategy;
use crate::types::SelectionConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionSection {
    pub strategy: Strategy,
    #[serde(flatten)]
    pub config: SelectionConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsSection {
    pub learner: Option<String>,
    /// Directory of shard files holding learner vectors.
    pub learner_embeddings: Option<PathBuf>,
    pub reference: Option<String>,
    /// Directory of shard files holding reference vectors.
    pub reference_embeddings: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheSection {
    pub enabled: bool,
    pub dir: Option<PathBuf>,
    pub max_shard_bytes: u64,
    pub sync_writes: bool,
}

impl Default for CacheSection {
    fn default() -> Self {
        CacheSection {
            enabled: true,
            dir: None,
            max_shard_bytes: 1 << 30,
            sync_writes: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct CostSection {
    #[serde(flatten)]
    pub model: CostModel,
    /// Samples iid training needs to reach the quality the run is compared at.
    pub iid_samples_for_parity: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusLayout {
    #[default]
    Tsv,
    Moses,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoSection {
    /// TSV file, or the source side of a Moses pair.
    pub corpus: Option<PathBuf>,
    /// Target side of a Moses pair.
    pub corpus_target: Option<PathBuf>,
    pub format: CorpusLayout,
    /// Selection stream (JSON lines).
    pub out: Option<PathBuf>,
    /// Selected pairs as TSV.
    pub pairs_out: Option<PathBuf>,
    /// Run report (JSON).
    pub report: Option<PathBuf>,
    pub histogram_bins: usize,
    pub epochs: u64,
    /// Micro-batch size for the downstream trainer; carried through unchanged.
    pub trainer_chunk_size: usize,
}

impl Default for IoSection {
    fn default() -> Self {
        IoSection {
            corpus: None,
            corpus_target: None,
            format: CorpusLayout::Tsv,
            out: None,
            pairs_out: None,
            report: None,
            histogram_bins: 40,
            epochs: 1,
            trainer_chunk_size: 32,
        }
    }
}

impl IoSection {
    pub fn corpus_format(&self) -> Result<CorpusFormat> {
        let path = self
            .corpus
            .clone()
            .ok_or_else(|| Error::InvalidConfig("io.corpus is not set".into()))?;
        match self.format {
            CorpusLayout::Tsv => Ok(CorpusFormat::Tsv { path }),
            CorpusLayout::Moses => {
                let trg = self
                    .corpus_target
                    .clone()
                    .ok_or_else(|| Error::InvalidConfig("moses layout needs io.corpus_target".into()))?;
                Ok(CorpusFormat::Moses { src: path, trg })
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub selection: SelectionSection,
    pub models: ModelsSection,
    pub cache: CacheSection,
    pub cost: CostSection,
    pub io: IoSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads `path` and resolves relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::UnreadableFile {
            path: path.to_owned(),
            reason: e.to_string(),
        })?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(inner) = p.as_mut() {
                if inner.is_relative() {
                    *inner = base.join(&*inner);
                }
            }
        };
        fix(&mut self.models.learner_embeddings);
        fix(&mut self.models.reference_embeddings);
        fix(&mut self.cache.dir);
        fix(&mut self.io.corpus);
        fix(&mut self.io.corpus_target);
        fix(&mut self.io.out);
        fix(&mut self.io.pairs_out);
        fix(&mut self.io.report);
    }

    pub fn validate(&self) -> Result<()> {
        self.selection.config.validate()?;
        self.cost.model.validate()?;
        if self.io.histogram_bins == 0 {
            return Err(Error::InvalidConfig("io.histogram_bins must be >= 1".into()));
        }
        Ok(())
    }
}
