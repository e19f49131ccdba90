//! Writing a synthetic corpus out in the formats the pipeline reads.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::corpus::{SyntheticCorpus, SyntheticCorpusSpec, LEARNER_MODEL, REFERENCE_MODEL};
use super::experiment::ExperimentConfig;
use super::learner::ToyLearnerState;
use crate::cache::{CacheKey, EmbeddingCache};
use crate::error::{Error, Result};
use crate::types::Side;

/// Spec file for `simlab run`: the corpus plus the loop settings.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimlabSpec {
    pub corpus: SyntheticCorpusSpec,
    pub experiment: ExperimentConfig,
}

impl SimlabSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::UnreadableFile {
            path: path.to_owned(),
            reason: e.to_string(),
        })?;
        Ok(toml::from_str(&text)?)
    }
}

/// Paths written by [`export_corpus`].
#[derive(Clone, Debug)]
pub struct ExportedCorpus {
    pub corpus_tsv: PathBuf,
    pub labels_tsv: PathBuf,
    pub reference_dir: PathBuf,
    pub learner_dir: PathBuf,
    pub config: PathBuf,
}

/// Writes the corpus as TSV, its reference embeddings and the initial
/// learner embeddings as shard directories, and a run config wiring them up.
pub fn export_corpus(corpus: &SyntheticCorpus, lr: f64, out_dir: impl AsRef<Path>) -> Result<ExportedCorpus> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;
    let paths = ExportedCorpus {
        corpus_tsv: out_dir.join("corpus.tsv"),
        labels_tsv: out_dir.join("labels.tsv"),
        reference_dir: out_dir.join("reference"),
        learner_dir: out_dir.join("learner"),
        config: out_dir.join("run.toml"),
    };

    let mut tsv = BufWriter::new(fs::File::create(&paths.corpus_tsv)?);
    let mut labels = BufWriter::new(fs::File::create(&paths.labels_tsv)?);
    writeln!(labels, "id\tnoisy")?;
    for r in &corpus.records {
        writeln!(tsv, "{}\t{}", r.src_text, r.trg_text)?;
        writeln!(labels, "{}\t{}", r.id, u8::from(r.noise_label == Some(true)))?;
    }
    tsv.flush()?;
    labels.flush()?;

    let mut reference = EmbeddingCache::open(&paths.reference_dir)?;
    let learner = ToyLearnerState::init(corpus, lr)?;
    let mut learner_store = EmbeddingCache::open(&paths.learner_dir)?;
    for (i, r) in corpus.records.iter().enumerate() {
        for side in [Side::Source, Side::Target] {
            let m = match side {
                Side::Source => &corpus.reference_src,
                Side::Target => &corpus.reference_trg,
            };
            reference.put(&CacheKey::new(REFERENCE_MODEL, r.hash(side)), m.row(i))?;
            learner_store.put(&CacheKey::new(LEARNER_MODEL, r.hash(side)), learner.row(side, i))?;
        }
    }

    let config = format!(
        "[selection]\nsuper_batch_size = 500\nfilter_ratio = 0.9\nn_chunks = 4\nseed = {seed}\n\n\
         [models]\nlearner = \"{LEARNER_MODEL}\"\nlearner_embeddings = \"learner\"\n\
         reference = \"{REFERENCE_MODEL}\"\nreference_embeddings = \"reference\"\n\n\
         [cache]\ndir = \"cache\"\n\n\
         [io]\ncorpus = \"corpus.tsv\"\nout = \"selection.jsonl\"\nreport = \"report.json\"\n",
        seed = corpus.spec.seed
    );
    fs::write(&paths.config, config)?;
    Ok(paths)
}
