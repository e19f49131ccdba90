mod common;

use learnsel_core::cache::EmbeddingCache;
use learnsel_core::pipeline::{
    ingest_corpus, CorpusFormat, CostModel, ReferenceResolver, SelectionEngine, SelectionRecord, TableProvider,
};
use learnsel_core::simlab::{generate_synthetic_corpus, SyntheticCorpus, SyntheticCorpusSpec, ToyLearnerState};
use learnsel_core::{Error, PairRecord, SelectionConfig, Side, Strategy};

fn corpus(n: usize, dim: usize) -> SyntheticCorpus {
    generate_synthetic_corpus(&SyntheticCorpusSpec {
        n_clean: n - n / 5,
        n_noisy: n / 5,
        dim,
        seed: 11,
        ..Default::default()
    })
    .unwrap()
}

fn providers(c: &SyntheticCorpus) -> (TableProvider, TableProvider) {
    let learner = ToyLearnerState::init(c, 0.5).unwrap();
    let ids: Vec<u64> = (0..c.n() as u64).collect();
    let learner = TableProvider::from_matrices(
        &learner.embeddings(Side::Source, &ids).unwrap(),
        &learner.embeddings(Side::Target, &ids).unwrap(),
    )
    .unwrap();
    let reference = TableProvider::from_matrices(&c.reference_src, &c.reference_trg).unwrap();
    (learner, reference)
}

struct Run {
    stream: Vec<u8>,
    records: Vec<SelectionRecord>,
    engine: SelectionEngine,
}

fn run(
    c: &SyntheticCorpus,
    cfg: SelectionConfig,
    strategy: Strategy,
    cache: Option<EmbeddingCache>,
    epochs: u64,
) -> Run {
    let (learner, reference) = providers(c);
    let resolver = ReferenceResolver::new(Box::new(reference), cache).unwrap();
    let mut engine = SelectionEngine::new(cfg, strategy, Box::new(learner), resolver, 20).unwrap();
    let mut stream = Vec::new();
    let mut records = Vec::new();
    for epoch in 0..epochs {
        engine
            .run_epoch(&c.records, epoch, |r, pairs| {
                assert_eq!(pairs.iter().map(|p| p.id).collect::<Vec<_>>(), r.selected_ids);
                r.write_jsonl(&mut stream)?;
                records.push(r.clone());
                Ok(())
            })
            .unwrap();
    }
    Run {
        stream,
        records,
        engine,
    }
}

#[test]
fn ten_thousand_pairs_give_4000_4000_2000() {
    let c = corpus(10_000, 8);
    let r = run(&c, SelectionConfig::default(), Strategy::Joint, None, 1);
    let sizes: Vec<usize> = r.records.iter().map(|r| r.super_batch_size).collect();
    assert_eq!(sizes, vec![4000, 4000, 2000]);
    let picked: Vec<usize> = r.records.iter().map(|r| r.selected_ids.len()).collect();
    assert_eq!(picked, vec![400, 400, 200]);
}

#[test]
fn twelve_thousand_pairs_with_defaults_give_three_sub_batches_of_400() {
    let c = corpus(12_000, 8);
    let r = run(&c, SelectionConfig::default(), Strategy::Joint, None, 1);
    assert_eq!(r.records.len(), 3);
    for rec in &r.records {
        assert_eq!(rec.selected_ids.len(), 400);
        let mut ids = rec.selected_ids.clone();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 400);
        assert_eq!(rec.diag_scores.as_ref().unwrap().len(), 400);
    }
    let report = r.engine.report(&CostModel::default(), 0);
    assert_eq!(report.samples_trained, 1200);
    assert_eq!(report.super_batches, 3);
    assert!(report.counters.selected <= 12_000);
}

#[test]
fn same_seed_same_bytes_and_different_seed_differs() {
    let c = corpus(1200, 8);
    let cfg = SelectionConfig {
        super_batch_size: 400,
        ..Default::default()
    };
    let a = run(&c, cfg.clone(), Strategy::Joint, None, 2);
    let b = run(&c, cfg.clone(), Strategy::Joint, None, 2);
    assert_eq!(a.stream, b.stream);
    let other = run(&c, SelectionConfig { seed: 1, ..cfg }, Strategy::Joint, None, 2);
    assert_ne!(a.stream, other.stream);
}

#[test]
fn cold_and_warm_cache_produce_identical_streams() {
    let c = corpus(1200, 8);
    let cfg = SelectionConfig {
        super_batch_size: 400,
        ..Default::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let uncached = run(&c, cfg.clone(), Strategy::Joint, None, 1);
    let cold = run(
        &c,
        cfg.clone(),
        Strategy::Joint,
        Some(EmbeddingCache::open(dir.path()).unwrap()),
        1,
    );
    let cold_stats = cold.engine.reference().cache_stats();
    assert_eq!(cold_stats.misses, 2400);
    assert_eq!(cold.engine.counters().reference_forward_sentences, 2400);
    drop(cold.engine);

    let warm = run(
        &c,
        cfg,
        Strategy::Joint,
        Some(EmbeddingCache::open(dir.path()).unwrap()),
        1,
    );
    let warm_stats = warm.engine.reference().cache_stats();
    assert_eq!(warm_stats.misses, 0);
    assert_eq!(warm_stats.hits, 2400);
    assert_eq!(warm.engine.counters().reference_forward_sentences, 0);
    assert_eq!(cold.stream, warm.stream);
    assert_eq!(uncached.stream, warm.stream);
}

#[test]
fn second_epoch_hits_cache_and_costs_less() {
    let c = corpus(800, 8);
    let cfg = SelectionConfig {
        super_batch_size: 400,
        ..Default::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let cached = run(
        &c,
        cfg.clone(),
        Strategy::Joint,
        Some(EmbeddingCache::open(dir.path()).unwrap()),
        2,
    );
    let uncached = run(&c, cfg, Strategy::Joint, None, 2);
    let stats = cached.engine.reference().cache_stats();
    assert_eq!(stats.misses, 1600);
    assert_eq!(stats.hits, 1600);
    assert_eq!(cached.stream, uncached.stream);

    let cost = CostModel::default();
    let with_cache = cached.engine.report(&cost, 1000);
    let without = uncached.engine.report(&cost, 1000);
    assert!(with_cache.total_flops < without.total_flops);
    assert!(with_cache.flops_relative_to_iid < without.flops_relative_to_iid);
    assert_eq!(with_cache.cache_stats, stats);
}

#[test]
fn topk_and_iid_stream_through_the_same_engine() {
    let c = corpus(1000, 8);
    let cfg = SelectionConfig {
        super_batch_size: 400,
        ..Default::default()
    };
    let topk = run(&c, cfg.clone(), Strategy::Topk, None, 1);
    let iid = run(&c, cfg, Strategy::Iid, None, 1);
    for r in [&topk, &iid] {
        let picked: Vec<usize> = r.records.iter().map(|r| r.selected_ids.len()).collect();
        assert_eq!(picked, vec![40, 40, 20]);
    }
    assert!(iid.records.iter().all(|r| r.diag_scores.is_none()));
    assert!(topk.records.iter().all(|r| r.diag_scores.is_some()));
    assert!(!String::from_utf8(iid.stream).unwrap().contains("diag_scores"));
    assert_eq!(iid.engine.counters().reference_forward_sentences, 0);
}

#[test]
fn missing_reference_vector_is_an_error() {
    let c = corpus(50, 4);
    let (learner, _) = providers(&c);
    let mut partial = TableProvider::new("ref", 4);
    for r in &c.records[..49] {
        partial
            .insert(r.id, Side::Source, c.reference_src.row(r.id as usize).to_vec())
            .unwrap();
        partial
            .insert(r.id, Side::Target, c.reference_trg.row(r.id as usize).to_vec())
            .unwrap();
    }
    let resolver = ReferenceResolver::new(Box::new(partial), None).unwrap();
    let cfg = SelectionConfig {
        super_batch_size: 50,
        filter_ratio: 0.5,
        n_chunks: 1,
        ..Default::default()
    };
    let mut engine = SelectionEngine::new(cfg, Strategy::Joint, Box::new(learner), resolver, 10).unwrap();
    let err = engine.run_epoch(&c.records, 0, |_, _| Ok(())).unwrap_err();
    assert!(matches!(err, Error::MissingEmbedding { pair_id: 49, .. }), "{err:?}");
}

#[test]
fn selected_never_exceeds_corpus_and_matches_with_no_filtering() {
    let c = corpus(300, 4);
    for (filter_ratio, expect_all) in [(0.0, true), (0.5, false)] {
        let cfg = SelectionConfig {
            super_batch_size: 100,
            filter_ratio,
            n_chunks: 2,
            ..Default::default()
        };
        let r = run(&c, cfg, Strategy::Joint, None, 1);
        let total: usize = r.records.iter().map(|r| r.selected_ids.len()).sum();
        assert!(total <= 300);
        assert_eq!(total == 300, expect_all);
    }
}

#[test]
fn tsv_corpus_ingests_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.tsv");
    let mut text = String::new();
    for i in 0..25 {
        text.push_str(&format!("source {i}\ttarget {i}\n"));
    }
    text.push_str("broken line\n");
    std::fs::write(&path, text).unwrap();
    let c = ingest_corpus(&CorpusFormat::Tsv { path }).unwrap();
    assert_eq!(c.records.len(), 25);
    assert_eq!(c.stats.skipped, 1);
    assert_eq!(c.records[24], PairRecord::new(24, "source 24", "target 24"));
}
