//! Modeled floating-point cost of a selection run.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cache::CacheStats;
use crate::error::{Error, Result};
use crate::scoring::ScoreHistogram;

/// Per-sample costs of the models involved. A "sample" is one sentence pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    pub learner_fwd_flops_per_sample: f64,
    pub learner_bwd_flops_per_sample: f64,
    pub reference_fwd_flops_per_sample: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            learner_fwd_flops_per_sample: 2.0e9,
            learner_bwd_flops_per_sample: 1.0e10,
            reference_fwd_flops_per_sample: 1.0e11,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("learner_fwd_flops_per_sample", self.learner_fwd_flops_per_sample),
            ("learner_bwd_flops_per_sample", self.learner_bwd_flops_per_sample),
            ("reference_fwd_flops_per_sample", self.reference_fwd_flops_per_sample),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// One training step on one sample.
    pub fn train_step(&self) -> f64 {
        self.learner_fwd_flops_per_sample + self.learner_bwd_flops_per_sample
    }

    /// Cost of the two similarity products for an `n`-row super-batch.
    pub fn scoring_flops(n: usize, d_learn: usize, d_ref: usize) -> u64 {
        2 * (n as u64) * (n as u64) * (d_learn + d_ref) as u64
    }
}

/// Raw counts gathered while running epochs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounters {
    pub super_batches: u64,
    /// Pairs that entered a super-batch.
    pub members: u64,
    /// Pairs embedded by the learner for scoring (zero for iid).
    pub scored_members: u64,
    pub selected: u64,
    /// Sentences the reference model had to embed (cache misses only when a cache is used).
    pub reference_forward_sentences: u64,
    pub scoring_flops: u64,
    pub selection_flops: u64,
}

impl RunCounters {
    pub fn merge(&mut self, other: &RunCounters) {
        self.super_batches += other.super_batches;
        self.members += other.members;
        self.scored_members += other.scored_members;
        self.selected += other.selected;
        self.reference_forward_sentences += other.reference_forward_sentences;
        self.scoring_flops += other.scoring_flops;
        self.selection_flops += other.selection_flops;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub samples_trained: u64,
    pub super_batches: u64,
    pub total_flops: f64,
    pub flops_relative_to_iid: f64,
    pub iid_samples_for_parity: u64,
    pub cache_stats: CacheStats,
    #[serde(default)]
    pub histograms: BTreeMap<String, ScoreHistogram>,
    pub counters: RunCounters,
}

/// Total modeled cost of a run and its ratio to plain iid training on
/// `iid_samples_for_parity` samples.
///
/// A pair has two sentences, so reference cost is charged per half pair-count
/// of embedded sentences.
pub fn flops_report(counters: &RunCounters, cost: &CostModel, iid_samples_for_parity: u64) -> RunReport {
    let reference = cost.reference_fwd_flops_per_sample * counters.reference_forward_sentences as f64 / 2.0;
    let learner_scoring = cost.learner_fwd_flops_per_sample * counters.scored_members as f64;
    let training = cost.train_step() * counters.selected as f64;
    let overhead = counters.scoring_flops as f64 + counters.selection_flops as f64;
    let total_flops = reference + learner_scoring + training + overhead;

    let iid_cost = cost.train_step() * iid_samples_for_parity as f64;
    let flops_relative_to_iid = if iid_cost > 0.0 { total_flops / iid_cost } else { 0.0 };

    RunReport {
        samples_trained: counters.selected,
        super_batches: counters.super_batches,
        total_flops,
        flops_relative_to_iid,
        iid_samples_for_parity,
        cache_stats: CacheStats::default(),
        histograms: BTreeMap::new(),
        counters: *counters,
    }
}
