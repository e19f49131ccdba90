//! Training-loop simulation and learning curves.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::corpus::{generate_synthetic_corpus, SyntheticCorpus, SyntheticCorpusSpec};
use super::learner::ToyLearnerState;
use crate::error::{Error, Result};
use crate::pipeline::epoch::{epoch_order, super_batches};
use crate::rng::{derive_seed, Purpose};
use crate::scoring::{learnability_matrix, similarity_matrix};
use crate::selector::{pass_through, select, Strategy};
use crate::types::{EmbeddingMatrix, PairRecord, SelectionConfig, Side};

/// Loop settings for one simulated training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub selection: SelectionConfig,
    pub lr: f64,
    /// Stop once this many samples have been trained on.
    pub budget: u64,
    /// Record a curve point every this many update steps.
    pub eval_every: u64,
    /// Stop early once the metric reaches this value.
    pub stop_at: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            selection: SelectionConfig {
                super_batch_size: 500,
                filter_ratio: 0.9,
                n_chunks: 4,
                temperature: 0.005,
                ..Default::default()
            },
            lr: 0.7,
            budget: 20_000,
            eval_every: 1,
            stop_at: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub samples: u64,
    pub metric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub strategy: Strategy,
    pub seed: u64,
    pub points: Vec<CurvePoint>,
}

impl LearningCurve {
    /// Samples consumed at the first point whose metric reaches `threshold`.
    pub fn samples_to_reach(&self, threshold: f64) -> Option<u64> {
        self.points.iter().find(|p| p.metric >= threshold).map(|p| p.samples)
    }

    pub fn last(&self) -> Option<CurvePoint> {
        self.points.last().copied()
    }
}

/// Curve plus the selections that produced it.
#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub curve: LearningCurve,
    /// Selected pair ids, one entry per update step.
    pub selections: Vec<Vec<u64>>,
    pub noise_exposure: f64,
}

/// Per-pair learner diagonal similarity, refreshed for updated pairs only.
struct CleanAlignment {
    diag: Vec<f64>,
    clean: Vec<bool>,
    n_clean: usize,
}

impl CleanAlignment {
    fn new(corpus: &SyntheticCorpus, learner: &ToyLearnerState) -> Self {
        let clean: Vec<bool> = (0..corpus.n()).map(|i| !corpus.is_noisy(i)).collect();
        let diag: Vec<f64> = (0..corpus.n()).map(|i| learner.diagonal_similarity(i)).collect();
        CleanAlignment {
            n_clean: clean.iter().filter(|&&c| c).count(),
            diag,
            clean,
        }
    }

    fn refresh(&mut self, learner: &ToyLearnerState, ids: &[u64]) {
        for &id in ids {
            self.diag[id as usize] = learner.diagonal_similarity(id as usize);
        }
    }

    /// Mean over clean pairs.
    fn metric(&self) -> f64 {
        if self.n_clean == 0 {
            return 0.0;
        }
        let sum: f64 = self
            .diag
            .iter()
            .zip(&self.clean)
            .filter(|(_, &c)| c)
            .map(|(d, _)| d)
            .sum();
        sum / self.n_clean as f64
    }
}

fn rows_of(m: &EmbeddingMatrix, ids: &[u64]) -> Result<EmbeddingMatrix> {
    let rows: Vec<&[f32]> = ids.iter().map(|&id| m.row(id as usize)).collect();
    EmbeddingMatrix::from_rows(m.model_id(), m.side(), &rows, ids.to_vec())
}

/// Simulates training on `corpus` with `strategy` until `cfg.budget` samples.
pub fn run_on_corpus(
    corpus: &SyntheticCorpus,
    strategy: Strategy,
    cfg: &ExperimentConfig,
) -> Result<ExperimentOutcome> {
    let seed = corpus.spec.seed;
    let mut sel_cfg = cfg.selection.clone();
    sel_cfg.seed = seed;
    sel_cfg.validate()?;
    if cfg.eval_every == 0 {
        return Err(Error::InvalidConfig("eval_every must be >= 1".into()));
    }

    let mut learner = ToyLearnerState::init(corpus, cfg.lr)?;
    let mut alignment = CleanAlignment::new(corpus, &learner);
    let mut points = vec![CurvePoint {
        samples: 0,
        metric: alignment.metric(),
    }];
    let mut selections = Vec::new();
    let mut samples = 0u64;
    let mut ordinal = 0u64;
    let reached = |m: f64| cfg.stop_at.is_some_and(|t| m >= t);

    'epochs: for epoch in 0.. {
        if samples >= cfg.budget || reached(points.last().expect("initial point").metric) {
            break;
        }
        let order = epoch_order(corpus.n(), epoch, seed);
        let mut progressed = false;
        for chunk in super_batches(&order, sel_cfg.super_batch_size)? {
            if samples >= cfg.budget {
                break 'epochs;
            }
            let ids: Vec<u64> = chunk.iter().map(|&i| i as u64).collect();
            let batch_seed = derive_seed(seed, Purpose::Selection, ordinal);
            ordinal += 1;
            let result = match strategy {
                Strategy::Iid => select(strategy, None, ids.len(), &sel_cfg, batch_seed),
                _ => {
                    let sim_l = similarity_matrix(
                        &learner.embeddings(Side::Source, &ids)?,
                        &learner.embeddings(Side::Target, &ids)?,
                    )?;
                    let sim_r = similarity_matrix(
                        &rows_of(&corpus.reference_src, &ids)?,
                        &rows_of(&corpus.reference_trg, &ids)?,
                    )?;
                    let m = learnability_matrix(&sim_l, &sim_r, sel_cfg.weights)?;
                    select(strategy, Some(&m), ids.len(), &sel_cfg, batch_seed)
                }
            };
            let result = match result {
                Err(Error::DegenerateConfig { .. }) if chunk.len() < sel_cfg.super_batch_size => {
                    pass_through(ids.len())
                }
                other => other?,
            };
            let selected: Vec<u64> = result.selected.iter().map(|&i| ids[i]).collect();
            learner.update(&selected)?;
            alignment.refresh(&learner, &selected);
            samples += selected.len() as u64;
            progressed |= !selected.is_empty();
            selections.push(selected);

            if learner.step % cfg.eval_every == 0 || samples >= cfg.budget {
                let metric = alignment.metric();
                points.push(CurvePoint { samples, metric });
                if reached(metric) {
                    break 'epochs;
                }
            }
        }
        if !progressed {
            return Err(Error::DegenerateConfig {
                n_rows: corpus.n(),
                filter_ratio: sel_cfg.filter_ratio,
                n_chunks: sel_cfg.n_chunks,
            });
        }
    }
    if points.last().is_some_and(|p| p.samples < samples) {
        points.push(CurvePoint {
            samples,
            metric: alignment.metric(),
        });
    }

    let noise_exposure = noise_exposure(&selections, &corpus.records)?;
    Ok(ExperimentOutcome {
        curve: LearningCurve { strategy, seed, points },
        selections,
        noise_exposure,
    })
}

/// Generates the corpus for `spec` and runs one experiment on it.
pub fn run_experiment(
    spec: &SyntheticCorpusSpec,
    strategy: Strategy,
    budget_samples: u64,
    eval_every: u64,
) -> Result<LearningCurve> {
    let corpus = generate_synthetic_corpus(spec)?;
    let cfg = ExperimentConfig {
        budget: budget_samples,
        eval_every,
        ..Default::default()
    };
    Ok(run_on_corpus(&corpus, strategy, &cfg)?.curve)
}

/// Fraction of selected pairs labelled noisy.
pub fn noise_exposure(selections: &[Vec<u64>], records: &[PairRecord]) -> Result<f64> {
    let labels: HashMap<u64, Option<bool>> = records.iter().map(|r| (r.id, r.noise_label)).collect();
    let (mut noisy, mut total) = (0u64, 0u64);
    for &id in selections.iter().flatten() {
        match labels.get(&id).copied().flatten() {
            Some(flag) => {
                noisy += u64::from(flag);
                total += 1;
            }
            None => return Err(Error::MissingLabel(id)),
        }
    }
    Ok(if total == 0 { 0.0 } else { noisy as f64 / total as f64 })
}

/// Writes curves as CSV with columns `samples,metric,strategy,seed`.
pub fn write_curves_csv<W: Write>(curves: &[LearningCurve], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["samples", "metric", "strategy", "seed"])?;
    for c in curves {
        let strategy = c.strategy.to_string();
        for p in &c.points {
            w.write_record([
                p.samples.to_string(),
                p.metric.to_string(),
                strategy.clone(),
                c.seed.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
