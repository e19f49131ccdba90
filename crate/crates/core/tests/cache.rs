mod common;

use std::fs::OpenOptions;
use std::io::{Seek, SeekFrom, Write};

use common::random_unit_rows;
use learnsel_core::cache::shard::{list_shards, record_len, ShardHeader};
use learnsel_core::cache::{compact, verify, CacheKey, CacheOptions, EmbeddingCache};
use learnsel_core::{ContentHash, Error, Side};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const MODEL: &str = "labse-like";
const DIM: usize = 16;

fn keys_and_vectors(n: usize, seed: u64) -> Vec<(CacheKey, Vec<f32>)> {
    let rows = random_unit_rows(n, DIM, &mut ChaCha8Rng::seed_from_u64(seed));
    rows.into_iter()
        .enumerate()
        .map(|(i, v)| {
            (
                CacheKey::new(MODEL, ContentHash::of(&format!("sentence {i}"), Side::Source)),
                v,
            )
        })
        .collect()
}

fn header_len() -> u64 {
    ShardHeader {
        model_id: MODEL.into(),
        dim: DIM,
    }
    .encoded_len()
}

#[test]
fn round_trip_is_bit_exact_across_restart() {
    let dir = tempfile::tempdir().unwrap();
    let items = keys_and_vectors(200, 1);
    {
        let mut c = EmbeddingCache::open(dir.path()).unwrap();
        for (k, v) in &items {
            c.put(k, v).unwrap();
        }
    }
    let c = EmbeddingCache::open(dir.path()).unwrap();
    assert_eq!(c.model_dim(MODEL), Some(DIM));
    for (k, v) in &items {
        let got = c.get(k).unwrap().unwrap();
        assert!(got.iter().zip(v).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
    let stats = c.stats();
    assert_eq!(stats.hits, 200);
    assert_eq!(stats.misses, 0);
    assert_eq!(stats.stored_vectors, 200);
    assert_eq!(stats.bytes_on_disk, header_len() + 200 * record_len(DIM));
}

#[test]
fn small_shards_roll_over_and_still_resolve() {
    let dir = tempfile::tempdir().unwrap();
    let items = keys_and_vectors(50, 2);
    let options = CacheOptions {
        max_shard_bytes: header_len() + 7 * record_len(DIM),
        sync_writes: true,
    };
    {
        let mut c = EmbeddingCache::open_with(dir.path(), options.clone()).unwrap();
        for (k, v) in &items {
            c.put(k, v).unwrap();
        }
    }
    assert!(list_shards(dir.path()).unwrap().len() >= 7);
    let c = EmbeddingCache::open_with(dir.path(), options).unwrap();
    for (k, v) in &items {
        assert_eq!(&c.get(k).unwrap().unwrap(), v);
    }
    assert!(verify(dir.path()).unwrap().is_clean());
}

#[test]
fn truncation_at_any_offset_keeps_committed_records() {
    let items = keys_and_vectors(6, 3);
    let rec = record_len(DIM);
    let full = header_len() + 6 * rec;
    // Cut inside the last record at every byte position, and at its boundaries.
    for cut in (full - rec)..=full {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut c = EmbeddingCache::open(dir.path()).unwrap();
            for (k, v) in &items {
                c.put(k, v).unwrap();
            }
        }
        let shard = list_shards(dir.path()).unwrap().remove(0);
        OpenOptions::new()
            .write(true)
            .open(&shard)
            .unwrap()
            .set_len(cut)
            .unwrap();

        let report = verify(dir.path()).unwrap();
        assert!(report.is_clean(), "cut {cut}: {report:?}");
        let survivors = if cut == full { 6 } else { 5 };
        assert_eq!(report.records(), survivors);

        let mut c = EmbeddingCache::open(dir.path()).unwrap();
        for (k, v) in &items[..5] {
            assert_eq!(&c.get(k).unwrap().unwrap(), v, "cut {cut}");
        }
        if cut < full {
            assert_eq!(c.get(&items[5].0).unwrap(), None);
            // Re-adding the lost record truncates the torn tail first.
            c.put(&items[5].0, &items[5].1).unwrap();
        }
        drop(c);
        let report = verify(dir.path()).unwrap();
        assert!(report.is_clean());
        assert_eq!(report.records(), 6);
        assert_eq!(report.shards[0].torn_tail_bytes, 0);
        let c = EmbeddingCache::open(dir.path()).unwrap();
        for (k, v) in &items {
            assert_eq!(&c.get(k).unwrap().unwrap(), v);
        }
    }
}

#[test]
fn flipped_bit_is_reported_and_compacted_away() {
    let dir = tempfile::tempdir().unwrap();
    let items = keys_and_vectors(10, 4);
    {
        let mut c = EmbeddingCache::open(dir.path()).unwrap();
        for (k, v) in &items {
            c.put(k, v).unwrap();
        }
    }
    let shard = list_shards(dir.path()).unwrap().remove(0);
    let bad_offset = header_len() + 3 * record_len(DIM);
    {
        let mut f = OpenOptions::new().read(true).write(true).open(&shard).unwrap();
        f.seek(SeekFrom::Start(bad_offset + 40)).unwrap();
        f.write_all(&[0xAB]).unwrap();
    }
    let report = verify(dir.path()).unwrap();
    assert_eq!(report.checksum_failures(), 1);
    assert_eq!(report.shards[0].corrupt_offsets, vec![bad_offset]);
    assert!(!report.is_clean());

    let c = EmbeddingCache::open(dir.path()).unwrap();
    assert!(matches!(c.get(&items[3].0), Err(Error::CorruptShard { .. })));
    assert_eq!(c.get(&items[4].0).unwrap().unwrap(), items[4].1);
    drop(c);

    let summary = compact(dir.path()).unwrap();
    assert_eq!(summary.records_kept, 9);
    assert_eq!(summary.corrupt_dropped, 1);
    assert!(verify(dir.path()).unwrap().is_clean());
    let c = EmbeddingCache::open(dir.path()).unwrap();
    assert_eq!(c.get(&items[3].0).unwrap(), None);
}

#[test]
fn compact_merges_shards_and_drops_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    let items = keys_and_vectors(30, 5);
    let options = CacheOptions {
        max_shard_bytes: header_len() + 4 * record_len(DIM),
        sync_writes: false,
    };
    {
        let mut c = EmbeddingCache::open_with(dir.path(), options).unwrap();
        for (k, v) in &items {
            c.put(k, v).unwrap();
        }
    }
    // Duplicate a whole shard under a later sequence number.
    let shards = list_shards(dir.path()).unwrap();
    let last = shards.last().unwrap();
    let name = last.file_name().unwrap().to_str().unwrap();
    let (stem, _) = name.rsplit_once('-').unwrap();
    std::fs::copy(&shards[0], dir.path().join(format!("{stem}-99999.embc"))).unwrap();
    assert!(
        verify(dir.path())
            .unwrap()
            .shards
            .iter()
            .map(|s| s.duplicate_keys)
            .sum::<u64>()
            > 0
    );

    let summary = compact(dir.path()).unwrap();
    assert_eq!(summary.records_kept, 30);
    assert!(summary.duplicates_dropped > 0);
    assert!(summary.bytes_after < summary.bytes_before);
    assert_eq!(list_shards(dir.path()).unwrap().len(), 1);
    let c = EmbeddingCache::open(dir.path()).unwrap();
    for (k, v) in &items {
        assert_eq!(&c.get(k).unwrap().unwrap(), v);
    }
}

#[test]
fn rejects_wrong_dim_and_non_unit_vectors() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = EmbeddingCache::open(dir.path()).unwrap();
    let (k, v) = keys_and_vectors(1, 6).remove(0);
    c.put(&k, &v).unwrap();
    assert!(matches!(c.put(&k, &v[..8]), Err(Error::DimMismatch { .. })));
    let doubled: Vec<f32> = v.iter().map(|x| x * 2.0).collect();
    let k2 = CacheKey::new(MODEL, ContentHash::of("other", Side::Target));
    assert!(matches!(c.put(&k2, &doubled), Err(Error::NotUnitNorm { .. })));
    let mut other = v.clone();
    other.swap(0, 1);
    if other != v {
        assert!(matches!(c.put(&k, &other), Err(Error::ConflictingVector { .. })));
    }
    c.put(&k, &v).unwrap();
    assert_eq!(c.stats().stored_vectors, 1);
}

#[test]
fn concurrent_readers_see_identical_vectors() {
    let dir = tempfile::tempdir().unwrap();
    let items = keys_and_vectors(64, 7);
    {
        let mut c = EmbeddingCache::open(dir.path()).unwrap();
        for (k, v) in &items {
            c.put(k, v).unwrap();
        }
    }
    let c = EmbeddingCache::open(dir.path()).unwrap();
    std::thread::scope(|s| {
        for t in 0..4 {
            let (c, items) = (&c, &items);
            s.spawn(move || {
                for (k, v) in items.iter().skip(t % 2).step_by(2) {
                    assert_eq!(&c.get(k).unwrap().unwrap(), v);
                }
            });
        }
    });
    assert_eq!(c.stats().hits, 4 * 32);
}
