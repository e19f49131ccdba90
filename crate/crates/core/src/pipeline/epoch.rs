//! Super-batch streaming and per-epoch selection.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::flops::{flops_report, CostModel, RunCounters, RunReport};
use super::provider::{embed_uncached, EmbeddingProvider, ReferenceResolver};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded, Purpose};
use crate::scoring::{learnability_matrix, similarity_matrix, HistogramAccumulator, SimilarityMatrix};
use crate::selector::{pass_through, select, Strategy};
use crate::types::{EmbeddingMatrix, PairRecord, SelectionConfig, Side};

/// Corpus positions in the order epoch `epoch` visits them.
///
/// Epoch 0 keeps corpus order; later epochs are a seeded shuffle.
pub fn epoch_order(n: usize, epoch: u64, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if epoch > 0 {
        order.shuffle(&mut seeded(derive_seed(seed, Purpose::EpochOrder, epoch)));
    }
    order
}

/// Splits `order` into consecutive super-batches of `size`; the last may be short.
pub fn super_batches(order: &[usize], size: usize) -> Result<std::slice::Chunks<'_, usize>> {
    if size == 0 {
        return Err(Error::InvalidConfig("super_batch_size must be >= 1".into()));
    }
    Ok(order.chunks(size))
}

/// One super-batch with its embeddings.
#[derive(Clone, Debug)]
pub struct SuperBatch<'a> {
    pub ordinal: u64,
    pub pairs: Vec<&'a PairRecord>,
    pub learner: Option<(EmbeddingMatrix, EmbeddingMatrix)>,
    pub reference: Option<(EmbeddingMatrix, EmbeddingMatrix)>,
}

impl SuperBatch<'_> {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Resolves learner embeddings (uncached) and reference embeddings (through
/// the resolver's cache) for `pairs`.
pub fn assemble_super_batch<'a>(
    ordinal: u64,
    pairs: Vec<&'a PairRecord>,
    learner: &mut dyn EmbeddingProvider,
    reference: &mut ReferenceResolver,
) -> Result<SuperBatch<'a>> {
    let l = (
        embed_uncached(learner, &pairs, Side::Source)?,
        embed_uncached(learner, &pairs, Side::Target)?,
    );
    let r = (
        reference.resolve(&pairs, Side::Source)?,
        reference.resolve(&pairs, Side::Target)?,
    );
    Ok(SuperBatch {
        ordinal,
        pairs,
        learner: Some(l),
        reference: Some(r),
    })
}

/// What gets written to the selection stream for one super-batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub epoch: u64,
    pub super_batch_ordinal: u64,
    /// Derived seed the selector ran with.
    pub seed: u64,
    pub super_batch_size: usize,
    pub selected_ids: Vec<u64>,
    pub chunk_of: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diag_scores: Option<Vec<f32>>,
}

impl SelectionRecord {
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer(&mut out, self)?;
        out.write_all(b"\n")?;
        Ok(())
    }
}

/// Drives selection over a corpus, one epoch at a time.
pub struct SelectionEngine {
    cfg: SelectionConfig,
    strategy: Strategy,
    learner: Box<dyn EmbeddingProvider>,
    reference: ReferenceResolver,
    counters: RunCounters,
    learner_hist: HistogramAccumulator,
    reference_hist: HistogramAccumulator,
    next_ordinal: u64,
}

impl SelectionEngine {
    pub fn new(
        cfg: SelectionConfig,
        strategy: Strategy,
        learner: Box<dyn EmbeddingProvider>,
        reference: ReferenceResolver,
        histogram_bins: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        Ok(SelectionEngine {
            cfg,
            strategy,
            learner,
            reference,
            counters: RunCounters::default(),
            learner_hist: HistogramAccumulator::new(histogram_bins)?,
            reference_hist: HistogramAccumulator::new(histogram_bins)?,
            next_ordinal: 0,
        })
    }

    pub fn config(&self) -> &SelectionConfig {
        &self.cfg
    }

    pub fn counters(&self) -> RunCounters {
        let mut c = self.counters;
        c.reference_forward_sentences = self.reference.computed_sentences();
        c
    }

    pub fn reference(&self) -> &ReferenceResolver {
        &self.reference
    }

    fn score(&mut self, batch: &SuperBatch<'_>) -> Result<(SimilarityMatrix, SimilarityMatrix)> {
        let (ls, lt) = batch.learner.as_ref().expect("assembled with learner");
        let (rs, rt) = batch.reference.as_ref().expect("assembled with reference");
        let sim_l = similarity_matrix(ls, lt)?;
        let sim_r = similarity_matrix(rs, rt)?;
        self.counters.scored_members += batch.len() as u64;
        self.counters.scoring_flops += CostModel::scoring_flops(batch.len(), ls.dim(), rs.dim());
        self.learner_hist.extend(sim_l.diagonal().into_iter().map(f64::from))?;
        self.reference_hist
            .extend(sim_r.diagonal().into_iter().map(f64::from))?;
        Ok((sim_l, sim_r))
    }

    /// Runs one epoch, handing every record and its selected pairs to `sink`
    /// in super-batch order.
    ///
    /// A short final super-batch too small to yield a single draw is passed
    /// through whole.
    pub fn run_epoch<F>(&mut self, corpus: &[PairRecord], epoch: u64, mut sink: F) -> Result<()>
    where
        F: FnMut(&SelectionRecord, &[&PairRecord]) -> Result<()>,
    {
        let order = epoch_order(corpus.len(), epoch, self.cfg.seed);
        for chunk in super_batches(&order, self.cfg.super_batch_size)? {
            let ordinal = self.next_ordinal;
            self.next_ordinal += 1;
            let pairs: Vec<&PairRecord> = chunk.iter().map(|&i| &corpus[i]).collect();
            let seed = derive_seed(self.cfg.seed, Purpose::Selection, ordinal);
            self.counters.super_batches += 1;
            self.counters.members += pairs.len() as u64;

            let result = match self.strategy {
                Strategy::Iid => select(Strategy::Iid, None, pairs.len(), &self.cfg, seed),
                strategy => {
                    let batch =
                        assemble_super_batch(ordinal, pairs.clone(), self.learner.as_mut(), &mut self.reference)?;
                    let (sim_l, sim_r) = self.score(&batch)?;
                    let m = learnability_matrix(&sim_l, &sim_r, self.cfg.weights)?;
                    select(strategy, Some(&m), pairs.len(), &self.cfg, seed)
                }
            };
            let result = match result {
                Err(Error::DegenerateConfig { .. }) if chunk.len() < self.cfg.super_batch_size => {
                    pass_through(pairs.len())
                }
                other => other?,
            };
            self.counters.selected += result.selected.len() as u64;
            self.counters.selection_flops += result.counters.selection_flops;

            let record = SelectionRecord {
                epoch,
                super_batch_ordinal: ordinal,
                seed,
                super_batch_size: pairs.len(),
                selected_ids: result.selected.iter().map(|&i| pairs[i].id).collect(),
                chunk_of: result.chunk_of,
                diag_scores: result.diag_scores,
            };
            let chosen: Vec<&PairRecord> = result.selected.iter().map(|&i| pairs[i]).collect();
            sink(&record, &chosen)?;
        }
        Ok(())
    }

    /// Embeds and scores every super-batch of an epoch without selecting,
    /// accumulating only the diagonal histograms.
    pub fn score_epoch(&mut self, corpus: &[PairRecord], epoch: u64) -> Result<()> {
        let order = epoch_order(corpus.len(), epoch, self.cfg.seed);
        for chunk in super_batches(&order, self.cfg.super_batch_size)? {
            let ordinal = self.next_ordinal;
            self.next_ordinal += 1;
            let pairs: Vec<&PairRecord> = chunk.iter().map(|&i| &corpus[i]).collect();
            self.counters.super_batches += 1;
            self.counters.members += pairs.len() as u64;
            let batch = assemble_super_batch(ordinal, pairs, self.learner.as_mut(), &mut self.reference)?;
            self.score(&batch)?;
        }
        Ok(())
    }

    /// Diagonal similarity histograms keyed by model id.
    pub fn histograms(&self) -> BTreeMap<String, crate::scoring::ScoreHistogram> {
        let mut out = BTreeMap::new();
        for (id, acc) in [
            (self.learner.model_id().to_owned(), &self.learner_hist),
            (self.reference.model_id().to_owned(), &self.reference_hist),
        ] {
            let h = acc.finish(Some(id.clone()));
            if h.total() > 0 {
                out.insert(id, h);
            }
        }
        out
    }

    pub fn report(&self, cost: &CostModel, iid_samples_for_parity: u64) -> RunReport {
        let mut r = flops_report(&self.counters(), cost, iid_samples_for_parity);
        r.cache_stats = self.reference.cache_stats();
        r.histograms = self.histograms();
        r
    }
}
