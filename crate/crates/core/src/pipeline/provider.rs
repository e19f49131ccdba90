//! Sources of embedding vectors.

use std::collections::HashMap;
use std::path::Path;

use crate::cache::{CacheKey, CacheStats, EmbeddingCache};
use crate::error::{Error, Result};
use crate::types::{normalize_rows, EmbeddingMatrix, PairRecord, Side};

/// Supplies one vector per (pair, side) for a single model.
pub trait EmbeddingProvider {
    fn model_id(&self) -> &str;

    fn dim(&self) -> usize;

    /// One entry per pair, `None` where no vector is available.
    fn embed(&mut self, pairs: &[&PairRecord], side: Side) -> Result<Vec<Option<Vec<f32>>>>;
}

/// Vectors held in memory, keyed by pair id.
#[derive(Clone, Debug)]
pub struct TableProvider {
    model_id: String,
    dim: usize,
    vectors: HashMap<(u64, Side), Vec<f32>>,
    calls: u64,
}

impl TableProvider {
    pub fn new(model_id: impl Into<String>, dim: usize) -> Self {
        TableProvider {
            model_id: model_id.into(),
            dim,
            vectors: HashMap::new(),
            calls: 0,
        }
    }

    pub fn insert(&mut self, pair_id: u64, side: Side, vector: Vec<f32>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimMismatch {
                model_id: self.model_id.clone(),
                expected: self.dim,
                actual: vector.len(),
            });
        }
        self.vectors.insert((pair_id, side), vector);
        Ok(())
    }

    /// Table filled from a matrix's rows, keyed by its row ids.
    pub fn from_matrices(src: &EmbeddingMatrix, trg: &EmbeddingMatrix) -> Result<Self> {
        let mut t = TableProvider::new(src.model_id(), src.dim());
        for m in [src, trg] {
            for (i, &id) in m.row_ids().iter().enumerate() {
                t.insert(id, m.side(), m.row(i).to_vec())?;
            }
        }
        Ok(t)
    }

    /// Number of vectors handed out so far.
    pub fn calls(&self) -> u64 {
        self.calls
    }
}

impl EmbeddingProvider for TableProvider {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&mut self, pairs: &[&PairRecord], side: Side) -> Result<Vec<Option<Vec<f32>>>> {
        let out: Vec<_> = pairs.iter().map(|p| self.vectors.get(&(p.id, side)).cloned()).collect();
        self.calls += out.iter().filter(|v| v.is_some()).count() as u64;
        Ok(out)
    }
}

/// Reads vectors for one model from a directory of shard files, keyed by content hash.
pub struct ShardProvider {
    store: EmbeddingCache,
    model_id: String,
    dim: usize,
}

impl ShardProvider {
    pub fn open(dir: impl AsRef<Path>, model_id: &str) -> Result<Self> {
        let store = EmbeddingCache::open(dir.as_ref())?;
        let dim = store.model_dim(model_id).ok_or_else(|| Error::UnreadableFile {
            path: dir.as_ref().to_owned(),
            reason: format!("no shards for model {model_id}"),
        })?;
        Ok(ShardProvider {
            store,
            model_id: model_id.to_owned(),
            dim,
        })
    }
}

impl EmbeddingProvider for ShardProvider {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&mut self, pairs: &[&PairRecord], side: Side) -> Result<Vec<Option<Vec<f32>>>> {
        pairs
            .iter()
            .map(|p| self.store.get(&CacheKey::new(self.model_id.clone(), p.hash(side))))
            .collect()
    }
}

/// Builds an embedding matrix straight from a provider. Used for the learner,
/// whose vectors change every step and are never cached.
pub fn embed_uncached(
    provider: &mut dyn EmbeddingProvider,
    pairs: &[&PairRecord],
    side: Side,
) -> Result<EmbeddingMatrix> {
    let vectors = provider.embed(pairs, side)?;
    let rows = collect_rows(provider.model_id(), pairs, vectors)?;
    EmbeddingMatrix::from_rows(provider.model_id(), side, &rows, pairs.iter().map(|p| p.id).collect())
}

fn collect_rows(model_id: &str, pairs: &[&PairRecord], vectors: Vec<Option<Vec<f32>>>) -> Result<Vec<Vec<f32>>> {
    pairs
        .iter()
        .zip(vectors)
        .map(|(p, v)| {
            v.ok_or_else(|| Error::MissingEmbedding {
                pair_id: p.id,
                model_id: model_id.to_owned(),
            })
        })
        .collect()
}

/// Reference embeddings resolved through the cache, falling back to a provider.
///
/// Provider output is normalized before it is cached, and matrices are
/// always built from the normalized vector, so a cold and a warm cache yield
/// bit-identical matrices.
pub struct ReferenceResolver {
    provider: Box<dyn EmbeddingProvider>,
    cache: Option<EmbeddingCache>,
    computed_sentences: u64,
}

impl ReferenceResolver {
    pub fn new(provider: Box<dyn EmbeddingProvider>, cache: Option<EmbeddingCache>) -> Result<Self> {
        let mut cache = cache;
        if let Some(c) = cache.as_mut() {
            c.register_model(provider.model_id(), provider.dim())?;
        }
        Ok(ReferenceResolver {
            provider,
            cache,
            computed_sentences: 0,
        })
    }

    pub fn model_id(&self) -> &str {
        self.provider.model_id()
    }

    pub fn dim(&self) -> usize {
        self.provider.dim()
    }

    /// Sentences the provider had to embed (cache misses, or everything without a cache).
    pub fn computed_sentences(&self) -> u64 {
        self.computed_sentences
    }

    pub fn cache_stats(&self) -> CacheStats {
        self.cache.as_ref().map(|c| c.stats()).unwrap_or_default()
    }

    pub fn cache(&self) -> Option<&EmbeddingCache> {
        self.cache.as_ref()
    }

    pub fn resolve(&mut self, pairs: &[&PairRecord], side: Side) -> Result<EmbeddingMatrix> {
        let model_id = self.provider.model_id().to_owned();
        let dim = self.provider.dim();
        let mut rows: Vec<Option<Vec<f32>>> = vec![None; pairs.len()];

        if let Some(cache) = &self.cache {
            for (slot, p) in rows.iter_mut().zip(pairs) {
                *slot = cache.get(&CacheKey::new(model_id.clone(), p.hash(side)))?;
            }
        }

        let missing: Vec<usize> = (0..pairs.len()).filter(|&i| rows[i].is_none()).collect();
        if !missing.is_empty() {
            let batch: Vec<&PairRecord> = missing.iter().map(|&i| pairs[i]).collect();
            let computed = self.provider.embed(&batch, side)?;
            for (&i, v) in missing.iter().zip(computed) {
                let raw = v.ok_or_else(|| Error::MissingEmbedding {
                    pair_id: pairs[i].id,
                    model_id: model_id.clone(),
                })?;
                let unit = normalize_rows(&raw, dim)?;
                self.computed_sentences += 1;
                if let Some(cache) = self.cache.as_mut() {
                    cache.put(&CacheKey::new(model_id.clone(), pairs[i].hash(side)), &unit)?;
                }
                rows[i] = Some(unit);
            }
        }

        let rows = collect_rows(&model_id, pairs, rows)?;
        EmbeddingMatrix::from_rows(model_id, side, &rows, pairs.iter().map(|p| p.id).collect())
    }
}
