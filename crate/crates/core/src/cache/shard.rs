//! Shard file layout.
//!
//! ```text
//! header  : "EMBC" | version u16 | model_id_len u16 | model_id (UTF-8) | dim u32
//! record  : key hash [u8; 32] | dim × f32 | crc32 u32
//! ```
//!
//! All integers and floats are little-endian. The CRC-32 (IEEE) covers the
//! key hash and the vector bytes of its record. A file whose length is not
//! header + whole records has a torn tail: the trailing partial record was
//! never committed and is ignored.

use std::fs::File;
use std::io::{BufReader, Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::types::ContentHash;

pub const MAGIC: &[u8; 4] = b"EMBC";
pub const VERSION: u16 = 1;
pub const EXTENSION: &str = "embc";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShardHeader {
    pub model_id: String,
    pub dim: usize,
}

impl ShardHeader {
    pub fn encoded_len(&self) -> u64 {
        (4 + 2 + 2 + self.model_id.len() + 4) as u64
    }

    pub fn record_len(&self) -> u64 {
        record_len(self.dim)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let id = self.model_id.as_bytes();
        let id_len = u16::try_from(id.len())
            .map_err(|_| Error::InvalidConfig(format!("model id longer than {} bytes", u16::MAX)))?;
        let dim = u32::try_from(self.dim).map_err(|_| Error::InvalidConfig("dim exceeds u32".into()))?;
        let mut out = Vec::with_capacity(self.encoded_len() as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&id_len.to_le_bytes());
        out.extend_from_slice(id);
        out.extend_from_slice(&dim.to_le_bytes());
        Ok(out)
    }

    pub fn read_from<R: Read>(mut r: R, path: &Path) -> Result<Self> {
        let corrupt = |reason: &str| Error::CorruptShard {
            path: path.to_owned(),
            reason: reason.to_owned(),
        };
        let mut fixed = [0u8; 8];
        r.read_exact(&mut fixed).map_err(|_| corrupt("truncated header"))?;
        if &fixed[..4] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u16::from_le_bytes([fixed[4], fixed[5]]);
        if version != VERSION {
            return Err(corrupt(&format!("unsupported version {version}")));
        }
        let id_len = u16::from_le_bytes([fixed[6], fixed[7]]) as usize;
        let mut id = vec![0u8; id_len];
        r.read_exact(&mut id).map_err(|_| corrupt("truncated model id"))?;
        let model_id = String::from_utf8(id).map_err(|_| corrupt("model id is not UTF-8"))?;
        let mut dim = [0u8; 4];
        r.read_exact(&mut dim).map_err(|_| corrupt("truncated dim"))?;
        let dim = u32::from_le_bytes(dim) as usize;
        if dim == 0 {
            return Err(corrupt("dim is zero"));
        }
        Ok(ShardHeader { model_id, dim })
    }
}

pub fn record_len(dim: usize) -> u64 {
    (32 + 4 * dim + 4) as u64
}

pub fn encode_record(key: &ContentHash, vector: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(record_len(vector.len()) as usize);
    out.extend_from_slice(key.as_bytes());
    for v in vector {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Decodes one record, checking its CRC.
pub fn decode_record(buf: &[u8], dim: usize) -> std::result::Result<(ContentHash, Vec<f32>), &'static str> {
    if buf.len() as u64 != record_len(dim) {
        return Err("record has wrong length");
    }
    let body = &buf[..buf.len() - 4];
    let stored = u32::from_le_bytes(buf[buf.len() - 4..].try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err("checksum mismatch");
    }
    let mut key = [0u8; 32];
    key.copy_from_slice(&body[..32]);
    let vector = body[32..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok((ContentHash(key), vector))
}

/// Geometry of one shard on disk.
#[derive(Clone, Debug)]
pub struct ShardLayout {
    pub path: PathBuf,
    pub header: ShardHeader,
    pub data_start: u64,
    pub full_records: u64,
    pub torn_tail_bytes: u64,
}

impl ShardLayout {
    pub fn open(path: &Path) -> Result<Self> {
        let mut f = File::open(path)?;
        let len = f.metadata()?.len();
        let header = ShardHeader::read_from(&mut f, path)?;
        let data_start = header.encoded_len();
        let rec = header.record_len();
        let body = len.saturating_sub(data_start);
        Ok(ShardLayout {
            path: path.to_owned(),
            full_records: body / rec,
            torn_tail_bytes: body % rec,
            data_start,
            header,
        })
    }

    pub fn committed_len(&self) -> u64 {
        self.data_start + self.full_records * self.header.record_len()
    }

    pub fn record_offset(&self, index: u64) -> u64 {
        self.data_start + index * self.header.record_len()
    }

    /// Key hashes of all committed records, in file order. Checksums are not verified.
    pub fn read_keys(&self) -> Result<Vec<ContentHash>> {
        let mut r = BufReader::new(File::open(&self.path)?);
        r.seek(SeekFrom::Start(self.data_start))?;
        let skip = (self.header.record_len() - 32) as i64;
        let mut keys = Vec::with_capacity(self.full_records as usize);
        for _ in 0..self.full_records {
            let mut key = [0u8; 32];
            r.read_exact(&mut key)?;
            keys.push(ContentHash(key));
            r.seek_relative(skip)?;
        }
        Ok(keys)
    }

    /// Visits every committed record with its decode result.
    pub fn for_each_record<F>(&self, mut f: F) -> Result<()>
    where
        F: FnMut(u64, std::result::Result<(ContentHash, Vec<f32>), &'static str>),
    {
        let mut r = BufReader::new(File::open(&self.path)?);
        r.seek(SeekFrom::Start(self.data_start))?;
        let mut buf = vec![0u8; self.header.record_len() as usize];
        for i in 0..self.full_records {
            r.read_exact(&mut buf)?;
            f(self.record_offset(i), decode_record(&buf, self.header.dim));
        }
        Ok(())
    }
}

/// Shard file name: `<16 hex chars of sha256(model_id)>-<seq>.embc`.
pub fn shard_file_name(model_id: &str, seq: u32) -> String {
    let slug = ContentHash::of(model_id, crate::types::Side::Source).to_hex();
    format!("{}-{seq:05}.{EXTENSION}", &slug[..16])
}

/// Sequence number parsed from a shard file name.
pub fn shard_seq(path: &Path) -> Option<u32> {
    let stem = path.file_stem()?.to_str()?;
    stem.rsplit_once('-')?.1.parse().ok()
}

/// All shard files under `dir`, sorted by name.
pub fn list_shards(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    if !dir.exists() {
        return Ok(out);
    }
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_file() && path.extension().and_then(|e| e.to_str()) == Some(EXTENSION) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
