//! Cross-similarity matrices, learnability scores and score histograms.
//!
//! For a super-batch of `n` pairs, each model contributes an `n × n`
//! similarity matrix `S[i][j] = src_i · trg_j`. The diagonal scores the true
//! pairs; off-diagonal entries are the cross-pair interactions the joint
//! selector conditions on. Learnability combines the two models as
//!
//! ```text
//! L = w_easy · S_ref + w_hard · (−S_learner)
//! ```
//!
//! so a pair scores high when the reference model finds it well aligned and
//! the learner does not yet.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{dot, EmbeddingMatrix, LearnabilityMatrix, ScoreWeights, SquareMatrix};

/// Slack allowed on cosine similarities before they count as out of range.
pub const RANGE_TOL: f64 = 1e-5;

/// Rows of the trg matrix processed together, so a block stays in cache
/// while every src row in a task streams over it.
const TRG_BLOCK: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    matrix: SquareMatrix,
    model_id: String,
}

impl SimilarityMatrix {
    /// Wraps precomputed similarities, e.g. from a test fixture.
    pub fn from_matrix(model_id: impl Into<String>, matrix: SquareMatrix) -> Self {
        SimilarityMatrix {
            matrix,
            model_id: model_id.into(),
        }
    }

    pub fn n(&self) -> usize {
        self.matrix.n()
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.matrix.get(i, j)
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.matrix
    }

    pub fn diagonal(&self) -> Vec<f32> {
        self.matrix.diagonal()
    }
}

/// `src.rows × trg.rowsᵀ`, accumulated in `f64` and stored as `f32`.
pub fn similarity_matrix(src: &EmbeddingMatrix, trg: &EmbeddingMatrix) -> Result<SimilarityMatrix> {
    if src.model_id() != trg.model_id() {
        return Err(Error::ModelMismatch {
            left: src.model_id().to_owned(),
            right: trg.model_id().to_owned(),
        });
    }
    if src.dim() != trg.dim() {
        return Err(Error::DimensionMismatch(format!(
            "src dim {} vs trg dim {}",
            src.dim(),
            trg.dim()
        )));
    }
    if src.n() != trg.n() {
        return Err(Error::DimensionMismatch(format!(
            "src has {} rows, trg has {}",
            src.n(),
            trg.n()
        )));
    }
    if src.row_ids() != trg.row_ids() {
        return Err(Error::DimensionMismatch("src and trg row ids are not aligned".into()));
    }

    let n = src.n();
    let mut values = vec![0f32; n * n];
    values.par_chunks_mut(n).enumerate().for_each(|(i, out_row)| {
        let a = src.row(i);
        for block_start in (0..n).step_by(TRG_BLOCK) {
            let block_end = (block_start + TRG_BLOCK).min(n);
            for j in block_start..block_end {
                out_row[j] = dot(a, trg.row(j)) as f32;
            }
        }
    });

    Ok(SimilarityMatrix {
        matrix: SquareMatrix::from_vec(n, values)?,
        model_id: src.model_id().to_owned(),
    })
}

/// Hard learner score: the negated learner similarity matrix.
pub fn hard_learner_scores(sim_learner: &SimilarityMatrix) -> SquareMatrix {
    let values = sim_learner.matrix.values().iter().map(|&v| -v).collect();
    SquareMatrix::from_vec(sim_learner.n(), values).expect("shape preserved")
}

/// Easy reference score: the reference similarity matrix itself.
pub fn easy_reference_scores(sim_ref: &SimilarityMatrix) -> SquareMatrix {
    sim_ref.matrix.clone()
}

/// `w_easy · S_ref − w_hard · S_learner`, elementwise.
///
/// The two models may have different embedding widths; only the super-batch
/// size has to agree.
pub fn learnability_matrix(
    sim_learner: &SimilarityMatrix,
    sim_ref: &SimilarityMatrix,
    w: ScoreWeights,
) -> Result<LearnabilityMatrix> {
    w.validate()?;
    if sim_learner.n() != sim_ref.n() {
        return Err(Error::DimensionMismatch(format!(
            "learner matrix is {0}x{0}, reference matrix is {1}x{1}",
            sim_learner.n(),
            sim_ref.n()
        )));
    }
    let n = sim_ref.n();
    let mut values = vec![0f32; n * n];
    values
        .par_chunks_mut(n.max(1))
        .zip(sim_ref.matrix.values().par_chunks(n.max(1)))
        .zip(sim_learner.matrix.values().par_chunks(n.max(1)))
        .for_each(|((out, easy), learner)| {
            for ((o, &e), &l) in out.iter_mut().zip(easy).zip(learner) {
                let hard = -f64::from(l);
                *o = (w.w_easy * f64::from(e) + w.w_hard * hard) as f32;
            }
        });
    LearnabilityMatrix::from_matrix(SquareMatrix::from_vec(n, values)?, w)
}

/// Distribution of similarity scores over fixed uniform bins on [−1, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreHistogram {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub mean: f64,
    pub variance: f64,
}

impl ScoreHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Appends this histogram as one JSON line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer(&mut out, self)?;
        out.write_all(b"\n")?;
        Ok(())
    }
}

/// Streaming form of [`score_histogram`]; mean and variance use Welford updates.
#[derive(Clone, Debug)]
pub struct HistogramAccumulator {
    counts: Vec<u64>,
    n: u64,
    mean: f64,
    m2: f64,
}

impl HistogramAccumulator {
    pub fn new(n_bins: usize) -> Result<Self> {
        if n_bins == 0 {
            return Err(Error::InvalidConfig("histogram needs at least one bin".into()));
        }
        Ok(HistogramAccumulator {
            counts: vec![0; n_bins],
            n: 0,
            mean: 0.0,
            m2: 0.0,
        })
    }

    pub fn push(&mut self, value: f64) -> Result<()> {
        if !(value.abs() <= 1.0 + RANGE_TOL) {
            return Err(Error::ValueOutOfRange {
                index: self.n as usize,
                value,
            });
        }
        let bins = self.counts.len();
        let pos = ((value + 1.0) / 2.0 * bins as f64).floor();
        let bin = (pos.max(0.0) as usize).min(bins - 1);
        self.counts[bin] += 1;

        self.n += 1;
        let delta = value - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (value - self.mean);
        Ok(())
    }

    pub fn extend<I: IntoIterator<Item = f64>>(&mut self, values: I) -> Result<()> {
        for v in values {
            self.push(v)?;
        }
        Ok(())
    }

    pub fn finish(&self, model_id: Option<String>) -> ScoreHistogram {
        let bins = self.counts.len();
        let bin_edges = (0..=bins).map(|k| -1.0 + 2.0 * k as f64 / bins as f64).collect();
        ScoreHistogram {
            model_id,
            bin_edges,
            counts: self.counts.clone(),
            mean: if self.n == 0 { 0.0 } else { self.mean },
            variance: if self.n == 0 { 0.0 } else { self.m2 / self.n as f64 },
        }
    }
}

/// Histogram of `diag_values` over `n_bins` uniform bins on [−1, 1].
///
/// Values at ±1 (within [`RANGE_TOL`]) land in the edge bins. The variance
/// is the population variance.
pub fn score_histogram(diag_values: &[f64], n_bins: usize) -> Result<ScoreHistogram> {
    let mut acc = HistogramAccumulator::new(n_bins)?;
    for (index, &value) in diag_values.iter().enumerate() {
        acc.push(value).map_err(|_| Error::ValueOutOfRange { index, value })?;
    }
    Ok(acc.finish(None))
}
