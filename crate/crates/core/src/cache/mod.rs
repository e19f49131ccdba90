//! Content-addressed, append-only store of embedding vectors.
//!
//! Vectors are keyed by `(model_id, content hash)` and written to per-model
//! shard files (see [`shard`] for the byte layout). The hash → location index
//! lives in memory and is rebuilt by scanning shard headers and keys on
//! [`EmbeddingCache::open`]. Vectors read from disk are kept in a read-through
//! memory layer.
//!
//! One writer (`&mut self`) and any number of concurrent readers (`&self`).
//! A record is appended with a single write; a crash mid-write leaves a torn
//! tail that readers ignore and the next append truncates away.

pub mod shard;

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{l2_norm, ContentHash, UNIT_NORM_TOL};
use shard::{decode_record, encode_record, list_shards, shard_file_name, shard_seq, ShardHeader, ShardLayout};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CacheKey {
    pub model_id: String,
    pub content_hash: ContentHash,
}

impl CacheKey {
    pub fn new(model_id: impl Into<String>, content_hash: ContentHash) -> Self {
        CacheKey {
            model_id: model_id.into(),
            content_hash,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub stored_vectors: u64,
    pub bytes_on_disk: u64,
}

impl CacheStats {
    pub fn lookups(&self) -> u64 {
        self.hits + self.misses
    }
}

#[derive(Clone, Debug)]
pub struct CacheOptions {
    /// A new shard is started once the active one reaches this size.
    pub max_shard_bytes: u64,
    /// `fsync` after every appended record.
    pub sync_writes: bool,
}

impl Default for CacheOptions {
    fn default() -> Self {
        CacheOptions {
            max_shard_bytes: 1 << 30,
            sync_writes: false,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Location {
    shard: usize,
    offset: u64,
}

struct ShardHandle {
    path: PathBuf,
    seq: u32,
    /// Bytes up to the end of the last committed record.
    committed: u64,
    reader: Mutex<Option<File>>,
}

struct ModelStore {
    dim: usize,
    shards: Vec<ShardHandle>,
    index: HashMap<ContentHash, Location>,
    writer: Option<File>,
}

/// Found vectors by key, and the keys that were missing.
pub type BatchLookup = (HashMap<CacheKey, Vec<f32>>, Vec<CacheKey>);

pub struct EmbeddingCache {
    dir: PathBuf,
    options: CacheOptions,
    models: BTreeMap<String, ModelStore>,
    memory: RwLock<HashMap<CacheKey, Arc<[f32]>>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl EmbeddingCache {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        Self::open_with(dir, CacheOptions::default())
    }

    pub fn open_with(dir: impl AsRef<Path>, options: CacheOptions) -> Result<Self> {
        let dir = dir.as_ref().to_owned();
        fs::create_dir_all(&dir)?;
        let mut models: BTreeMap<String, ModelStore> = BTreeMap::new();
        for path in list_shards(&dir)? {
            let layout = ShardLayout::open(&path)?;
            let keys = layout.read_keys()?;
            let model_id = layout.header.model_id.clone();
            let store = models.entry(model_id.clone()).or_insert_with(|| ModelStore {
                dim: layout.header.dim,
                shards: Vec::new(),
                index: HashMap::new(),
                writer: None,
            });
            if store.dim != layout.header.dim {
                return Err(Error::CorruptShard {
                    path,
                    reason: format!(
                        "model {model_id} has dim {} here but {} in an earlier shard",
                        layout.header.dim, store.dim
                    ),
                });
            }
            let shard = store.shards.len();
            for (i, key) in keys.into_iter().enumerate() {
                store.index.entry(key).or_insert(Location {
                    shard,
                    offset: layout.record_offset(i as u64),
                });
            }
            store.shards.push(ShardHandle {
                seq: shard_seq(&path).unwrap_or(0),
                committed: layout.committed_len(),
                path,
                reader: Mutex::new(None),
            });
        }
        // Shards were visited in file-name order, which is sequence order per model.
        for store in models.values() {
            if !store.shards.windows(2).all(|w| w[0].seq < w[1].seq) {
                return Err(Error::CorruptShard {
                    path: store.shards[0].path.clone(),
                    reason: "shard sequence numbers out of order".into(),
                });
            }
        }
        Ok(EmbeddingCache {
            dir,
            options,
            models,
            memory: RwLock::new(HashMap::new()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn model_dim(&self, model_id: &str) -> Option<usize> {
        self.models.get(model_id).map(|m| m.dim)
    }

    pub fn models(&self) -> impl Iterator<Item = (&str, usize)> {
        self.models.iter().map(|(k, v)| (k.as_str(), v.dim))
    }

    /// Declares the vector width for `model_id`; re-registering with a different width fails.
    pub fn register_model(&mut self, model_id: &str, dim: usize) -> Result<()> {
        if dim == 0 {
            return Err(Error::InvalidConfig("dim must be >= 1".into()));
        }
        match self.models.get(model_id) {
            Some(store) if store.dim != dim => Err(Error::DimMismatch {
                model_id: model_id.to_owned(),
                expected: store.dim,
                actual: dim,
            }),
            Some(_) => Ok(()),
            None => {
                self.models.insert(
                    model_id.to_owned(),
                    ModelStore {
                        dim,
                        shards: Vec::new(),
                        index: HashMap::new(),
                        writer: None,
                    },
                );
                Ok(())
            }
        }
    }

    /// Stores `vector` under `key`. Storing identical bytes again is a no-op.
    ///
    /// An unregistered model is registered at `vector.len()`.
    pub fn put(&mut self, key: &CacheKey, vector: &[f32]) -> Result<()> {
        if !self.models.contains_key(&key.model_id) {
            self.register_model(&key.model_id, vector.len())?;
        }
        let dim = self.models[&key.model_id].dim;
        if vector.len() != dim {
            return Err(Error::DimMismatch {
                model_id: key.model_id.clone(),
                expected: dim,
                actual: vector.len(),
            });
        }
        let norm = l2_norm(vector);
        if !((norm - 1.0).abs() <= UNIT_NORM_TOL) {
            return Err(Error::NotUnitNorm {
                model_id: key.model_id.clone(),
                norm,
            });
        }
        if let Some(existing) = self.read_stored(key)? {
            let same = existing.iter().zip(vector).all(|(a, b)| a.to_bits() == b.to_bits());
            return if same {
                Ok(())
            } else {
                Err(Error::ConflictingVector {
                    model_id: key.model_id.clone(),
                    key: key.content_hash.to_hex(),
                })
            };
        }

        let record = encode_record(&key.content_hash, vector);
        let (shard, offset) = self.append(&key.model_id, &record)?;
        let store = self.models.get_mut(&key.model_id).expect("registered above");
        store.index.insert(key.content_hash, Location { shard, offset });
        self.memory
            .write()
            .expect("memory layer poisoned")
            .insert(key.clone(), Arc::from(vector));
        Ok(())
    }

    fn append(&mut self, model_id: &str, record: &[u8]) -> Result<(usize, u64)> {
        let dir = self.dir.clone();
        let max_bytes = self.options.max_shard_bytes;
        let sync = self.options.sync_writes;
        let store = self.models.get_mut(model_id).expect("model registered");

        let need_new = match store.shards.last() {
            None => true,
            Some(s) => {
                s.committed + record.len() as u64 > max_bytes && s.committed > shard_header_len(model_id, store.dim)
            }
        };
        if need_new {
            let seq = store.shards.last().map_or(0, |s| s.seq + 1);
            let path = dir.join(shard_file_name(model_id, seq));
            let header = ShardHeader {
                model_id: model_id.to_owned(),
                dim: store.dim,
            }
            .encode()?;
            let mut f = OpenOptions::new().create_new(true).read(true).write(true).open(&path)?;
            f.write_all(&header)?;
            if sync {
                f.sync_all()?;
            }
            store.writer = Some(f);
            store.shards.push(ShardHandle {
                path,
                seq,
                committed: header.len() as u64,
                reader: Mutex::new(None),
            });
        }

        let shard_idx = store.shards.len() - 1;
        let shard = &mut store.shards[shard_idx];
        if store.writer.is_none() {
            let f = OpenOptions::new().read(true).write(true).open(&shard.path)?;
            // Drop any torn tail left by an interrupted append.
            f.set_len(shard.committed)?;
            store.writer = Some(f);
        }
        let writer = store.writer.as_mut().expect("writer opened");
        let offset = shard.committed;
        writer.seek(SeekFrom::Start(offset))?;
        writer.write_all(record)?;
        writer.flush()?;
        if sync {
            writer.sync_data()?;
        }
        shard.committed += record.len() as u64;
        Ok((shard_idx, offset))
    }

    /// Stored vector for `key`, if any. Updates hit/miss counters.
    pub fn get(&self, key: &CacheKey) -> Result<Option<Vec<f32>>> {
        let found = self.read_stored(key)?;
        if found.is_some() {
            self.hits.fetch_add(1, Ordering::Relaxed);
        } else {
            self.misses.fetch_add(1, Ordering::Relaxed);
        }
        Ok(found.map(|v| v.to_vec()))
    }

    pub fn contains(&self, key: &CacheKey) -> bool {
        self.models
            .get(&key.model_id)
            .is_some_and(|m| m.index.contains_key(&key.content_hash))
    }

    fn read_stored(&self, key: &CacheKey) -> Result<Option<Arc<[f32]>>> {
        if let Some(v) = self.memory.read().expect("memory layer poisoned").get(key) {
            return Ok(Some(Arc::clone(v)));
        }
        let Some(store) = self.models.get(&key.model_id) else {
            return Ok(None);
        };
        let Some(loc) = store.index.get(&key.content_hash).copied() else {
            return Ok(None);
        };
        let shard = &store.shards[loc.shard];
        let mut buf = vec![0u8; shard::record_len(store.dim) as usize];
        {
            let mut guard = shard.reader.lock().expect("reader poisoned");
            if guard.is_none() {
                *guard = Some(File::open(&shard.path)?);
            }
            let f = guard.as_mut().expect("reader opened");
            f.seek(SeekFrom::Start(loc.offset))?;
            f.read_exact(&mut buf).map_err(|e| Error::CorruptShard {
                path: shard.path.clone(),
                reason: format!("record at offset {} unreadable: {e}", loc.offset),
            })?;
        }
        let (stored_key, vector) = decode_record(&buf, store.dim).map_err(|reason| Error::CorruptShard {
            path: shard.path.clone(),
            reason: format!("{reason} at offset {}", loc.offset),
        })?;
        if stored_key != key.content_hash {
            return Err(Error::CorruptShard {
                path: shard.path.clone(),
                reason: format!("key mismatch at offset {}", loc.offset),
            });
        }
        let vector: Arc<[f32]> = Arc::from(vector);
        self.memory
            .write()
            .expect("memory layer poisoned")
            .insert(key.clone(), Arc::clone(&vector));
        Ok(Some(vector))
    }

    /// Splits `keys` into stored vectors and misses; `missing` keeps input order.
    pub fn batch_lookup(&self, keys: &[CacheKey]) -> Result<BatchLookup> {
        let mut found = HashMap::new();
        let mut missing = Vec::new();
        for key in keys {
            match self.get(key)? {
                Some(v) => {
                    found.insert(key.clone(), v);
                }
                None => missing.push(key.clone()),
            }
        }
        Ok((found, missing))
    }

    pub fn stats(&self) -> CacheStats {
        let bytes_on_disk = self
            .models
            .values()
            .flat_map(|m| m.shards.iter())
            .map(|s| fs::metadata(&s.path).map(|m| m.len()).unwrap_or(0))
            .sum();
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            stored_vectors: self.models.values().map(|m| m.index.len() as u64).sum(),
            bytes_on_disk,
        }
    }
}

fn shard_header_len(model_id: &str, dim: usize) -> u64 {
    ShardHeader {
        model_id: model_id.to_owned(),
        dim,
    }
    .encoded_len()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ShardCheck {
    pub path: PathBuf,
    pub model_id: Option<String>,
    pub dim: Option<usize>,
    pub records: u64,
    pub corrupt_offsets: Vec<u64>,
    pub duplicate_keys: u64,
    pub torn_tail_bytes: u64,
    pub header_error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub shards: Vec<ShardCheck>,
}

impl VerifyReport {
    pub fn records(&self) -> u64 {
        self.shards.iter().map(|s| s.records).sum()
    }

    pub fn checksum_failures(&self) -> u64 {
        self.shards.iter().map(|s| s.corrupt_offsets.len() as u64).sum()
    }

    /// No checksum failures and no unreadable headers. Torn tails are tolerated.
    pub fn is_clean(&self) -> bool {
        self.shards
            .iter()
            .all(|s| s.corrupt_offsets.is_empty() && s.header_error.is_none())
    }
}

/// Reads every record under `dir` and checks its checksum.
pub fn verify(dir: impl AsRef<Path>) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();
    let mut seen: HashMap<String, std::collections::HashSet<ContentHash>> = HashMap::new();
    for path in list_shards(dir.as_ref())? {
        let mut check = ShardCheck {
            path: path.clone(),
            ..Default::default()
        };
        match ShardLayout::open(&path) {
            Err(Error::CorruptShard { reason, .. }) => check.header_error = Some(reason),
            Err(e) => return Err(e),
            Ok(layout) => {
                check.model_id = Some(layout.header.model_id.clone());
                check.dim = Some(layout.header.dim);
                check.torn_tail_bytes = layout.torn_tail_bytes;
                let keys = seen.entry(layout.header.model_id.clone()).or_default();
                layout.for_each_record(|offset, rec| match rec {
                    Ok((key, _)) => {
                        check.records += 1;
                        if !keys.insert(key) {
                            check.duplicate_keys += 1;
                        }
                    }
                    Err(_) => check.corrupt_offsets.push(offset),
                })?;
            }
        }
        report.shards.push(check);
    }
    Ok(report)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CompactReport {
    pub models: usize,
    pub records_kept: u64,
    pub corrupt_dropped: u64,
    pub duplicates_dropped: u64,
    pub bytes_before: u64,
    pub bytes_after: u64,
}

/// Rewrites each model's shards into a single shard holding its valid, unique records.
///
/// The new shard is fully written and renamed into place before old shards
/// are removed. Shards with unreadable headers are left untouched.
pub fn compact(dir: impl AsRef<Path>) -> Result<CompactReport> {
    let dir = dir.as_ref();
    let mut report = CompactReport::default();
    let mut by_model: BTreeMap<String, Vec<ShardLayout>> = BTreeMap::new();
    for path in list_shards(dir)? {
        report.bytes_before += fs::metadata(&path)?.len();
        match ShardLayout::open(&path) {
            Ok(layout) => by_model.entry(layout.header.model_id.clone()).or_default().push(layout),
            Err(Error::CorruptShard { .. }) => report.bytes_after += fs::metadata(&path)?.len(),
            Err(e) => return Err(e),
        }
    }

    for (model_id, mut layouts) in by_model {
        layouts.sort_by_key(|l| shard_seq(&l.path).unwrap_or(0));
        let dim = layouts[0].header.dim;
        if let Some(bad) = layouts.iter().find(|l| l.header.dim != dim) {
            return Err(Error::CorruptShard {
                path: bad.path.clone(),
                reason: format!("model {model_id} has conflicting dims"),
            });
        }
        let next_seq = layouts.iter().filter_map(|l| shard_seq(&l.path)).max().unwrap_or(0) + 1;
        let final_path = dir.join(shard_file_name(&model_id, next_seq));
        let tmp_path = final_path.with_extension("embc.tmp");

        let mut out = std::io::BufWriter::new(File::create(&tmp_path)?);
        out.write_all(
            &ShardHeader {
                model_id: model_id.clone(),
                dim,
            }
            .encode()?,
        )?;
        let mut seen = std::collections::HashSet::new();
        for layout in &layouts {
            let mut write_err = None;
            layout.for_each_record(|_, rec| match rec {
                Ok((key, vector)) => {
                    if seen.insert(key) {
                        if let Err(e) = out.write_all(&encode_record(&key, &vector)) {
                            write_err.get_or_insert(e);
                        }
                        report.records_kept += 1;
                    } else {
                        report.duplicates_dropped += 1;
                    }
                }
                Err(_) => report.corrupt_dropped += 1,
            })?;
            if let Some(e) = write_err {
                return Err(e.into());
            }
        }
        let file = out.into_inner().map_err(|e| e.into_error())?;
        file.sync_all()?;
        drop(file);
        fs::rename(&tmp_path, &final_path)?;
        for layout in &layouts {
            fs::remove_file(&layout.path)?;
        }
        report.bytes_after += fs::metadata(&final_path)?.len();
        report.models += 1;
    }
    Ok(report)
}
