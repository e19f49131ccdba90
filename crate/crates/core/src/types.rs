//! Domain types shared by scoring, selection, caching and the pipeline.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Rows whose L2 norm falls below this are rejected by [`normalize_rows`].
pub const MIN_ROW_NORM: f64 = 1e-12;

/// Tolerance on ‖row‖₂ = 1 for embeddings handed across module boundaries.
pub const UNIT_NORM_TOL: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Source,
    Target,
}

impl Side {
    /// One-byte tag prepended to the text before hashing.
    pub const fn tag(self) -> u8 {
        match self {
            Side::Source => 0x01,
            Side::Target => 0x02,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Source => "source",
            Side::Target => "target",
        })
    }
}

/// SHA-256 of `side tag || UTF-8 text`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContentHash(pub [u8; 32]);

impl ContentHash {
    pub fn of(text: &str, side: Side) -> Self {
        let mut hasher = Sha256::new();
        hasher.update([side.tag()]);
        hasher.update(text.as_bytes());
        ContentHash(hasher.finalize().into())
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Debug for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContentHash({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// One parallel sentence pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairRecord {
    pub id: u64,
    pub src_text: String,
    pub trg_text: String,
    pub src_hash: ContentHash,
    pub trg_hash: ContentHash,
    /// Ground truth from the synthetic generator; `None` for real corpora.
    pub noise_label: Option<bool>,
}

impl PairRecord {
    pub fn new(id: u64, src_text: impl Into<String>, trg_text: impl Into<String>) -> Self {
        let src_text = src_text.into();
        let trg_text = trg_text.into();
        PairRecord {
            id,
            src_hash: ContentHash::of(&src_text, Side::Source),
            trg_hash: ContentHash::of(&trg_text, Side::Target),
            src_text,
            trg_text,
            noise_label: None,
        }
    }

    pub fn with_noise_label(mut self, noisy: bool) -> Self {
        self.noise_label = Some(noisy);
        self
    }

    pub fn text(&self, side: Side) -> &str {
        match side {
            Side::Source => &self.src_text,
            Side::Target => &self.trg_text,
        }
    }

    pub fn hash(&self, side: Side) -> ContentHash {
        match side {
            Side::Source => self.src_hash,
            Side::Target => self.trg_hash,
        }
    }
}

/// Scales each `dim`-wide row of `raw` to unit L2 norm.
///
/// Norms are accumulated in `f64`; a row whose norm is below [`MIN_ROW_NORM`]
/// yields [`Error::ZeroVectorRow`].
pub fn normalize_rows(raw: &[f32], dim: usize) -> Result<Vec<f32>> {
    if dim == 0 || !raw.len().is_multiple_of(dim) {
        return Err(Error::DimensionMismatch(format!(
            "buffer of {} values is not a whole number of rows of width {dim}",
            raw.len()
        )));
    }
    let mut out = Vec::with_capacity(raw.len());
    for (i, row) in raw.chunks_exact(dim).enumerate() {
        let norm = row.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
        if !(norm >= MIN_ROW_NORM) {
            return Err(Error::ZeroVectorRow(i));
        }
        out.extend(row.iter().map(|&x| (f64::from(x) / norm) as f32));
    }
    Ok(out)
}

pub(crate) fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

/// Dot product with `f64` accumulation over eight interleaved lanes.
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    const LANES: usize = 8;
    let mut acc = [0f64; LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..LANES {
            acc[k] += f64::from(x[k]) * f64::from(y[k]);
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// Row-major block of unit-norm embeddings for one side of a super-batch.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    model_id: String,
    side: Side,
    dim: usize,
    rows: Vec<f32>,
    row_ids: Vec<u64>,
}

impl EmbeddingMatrix {
    /// Normalizes `raw` (row-major, `row_ids.len()` rows of width `dim`).
    pub fn new(model_id: impl Into<String>, side: Side, dim: usize, raw: &[f32], row_ids: Vec<u64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimensionMismatch("embedding dim must be >= 1".into()));
        }
        if row_ids.is_empty() {
            return Err(Error::DimensionMismatch(
                "embedding matrix needs at least one row".into(),
            ));
        }
        if raw.len() != row_ids.len() * dim {
            return Err(Error::DimensionMismatch(format!(
                "{} ids but {} values at dim {dim}",
                row_ids.len(),
                raw.len()
            )));
        }
        Ok(EmbeddingMatrix {
            model_id: model_id.into(),
            side,
            dim,
            rows: normalize_rows(raw, dim)?,
            row_ids,
        })
    }

    /// Assembles a matrix from per-row vectors.
    pub fn from_rows<R: AsRef<[f32]>>(
        model_id: impl Into<String>,
        side: Side,
        rows: &[R],
        row_ids: Vec<u64>,
    ) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut flat = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has width {}, expected {dim}",
                    r.len()
                )));
            }
            flat.extend_from_slice(r);
        }
        Self::new(model_id, side, dim, &flat, row_ids)
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.row_ids.len()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> &[f32] {
        &self.rows
    }

    pub fn row_ids(&self) -> &[u64] {
        &self.row_ids
    }
}

/// Weights applied to the reference (easy) and learner (hard) scores.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreWeights {
    pub w_easy: f64,
    pub w_hard: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        ScoreWeights {
            w_easy: 0.8,
            w_hard: 0.2,
        }
    }
}

impl ScoreWeights {
    pub fn new(w_easy: f64, w_hard: f64) -> Result<Self> {
        let w = ScoreWeights { w_easy, w_hard };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.w_easy.is_finite()
            && self.w_hard.is_finite()
            && self.w_easy >= 0.0
            && self.w_hard >= 0.0
            && self.w_easy + self.w_hard > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "weights must be finite, non-negative and not both zero (got {}, {})",
                self.w_easy, self.w_hard
            )))
        }
    }

    /// Bound on |entry| of a learnability matrix built from unit-norm inputs.
    pub fn bound(&self) -> f64 {
        self.w_easy + self.w_hard
    }
}

/// How the first chunk of a joint selection is drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Chunk0Policy {
    /// Gumbel-top-k over the diagonal learnability scores.
    #[default]
    Weighted,
    /// Uniform draw without replacement.
    Uniform,
}

impl std::str::FromStr for Chunk0Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weighted" => Ok(Chunk0Policy::Weighted),
            "uniform" => Ok(Chunk0Policy::Uniform),
            other => Err(Error::InvalidConfig(format!("unknown chunk0 policy {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub super_batch_size: usize,
    pub filter_ratio: f64,
    pub n_chunks: usize,
    #[serde(flatten)]
    pub weights: ScoreWeights,
    pub large_constant: f64,
    pub seed: u64,
    pub chunk0_policy: Chunk0Policy,
    /// Divides the logits before Gumbel perturbation.
    pub temperature: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            super_batch_size: 4000,
            filter_ratio: 0.9,
            n_chunks: 4,
            weights: ScoreWeights::default(),
            large_constant: 1e6,
            seed: 0,
            chunk0_policy: Chunk0Policy::Weighted,
            temperature: 1.0,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.super_batch_size == 0 {
            return Err(Error::InvalidConfig("super_batch_size must be >= 1".into()));
        }
        if self.n_chunks == 0 {
            return Err(Error::InvalidConfig("n_chunks must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.filter_ratio) {
            return Err(Error::InvalidConfig(format!(
                "filter_ratio must lie in [0, 1), got {}",
                self.filter_ratio
            )));
        }
        if !(self.large_constant.is_finite() && self.large_constant > 0.0) {
            return Err(Error::InvalidConfig(
                "large_constant must be positive and finite".into(),
            ));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::InvalidConfig("temperature must be positive and finite".into()));
        }
        crate::selector::n_draws(self, self.super_batch_size)?;
        Ok(())
    }

    /// Number of items a full super-batch yields.
    pub fn sub_batch_size(&self) -> Result<usize> {
        Ok(crate::selector::n_draws(self, self.super_batch_size)? * self.n_chunks)
    }
}

/// Dense n×n matrix of `f32`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    values: Vec<f32>,
}

impl SquareMatrix {
    pub fn from_vec(n: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::DimensionMismatch(format!(
                "{} values cannot form a {n}x{n} matrix",
                values.len()
            )));
        }
        Ok(SquareMatrix { n, values })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let n = rows.len();
        let mut values = Vec::with_capacity(n * n);
        for r in rows {
            if r.len() != n {
                return Err(Error::DimensionMismatch("matrix rows are not square".into()));
            }
            values.extend_from_slice(r);
        }
        Ok(SquareMatrix { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn diagonal(&self) -> Vec<f32> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn max_abs(&self) -> f32 {
        self.values.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }
}

/// Pairwise learnability scores of one super-batch.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnabilityMatrix {
    pub(crate) matrix: SquareMatrix,
    pub(crate) weights: ScoreWeights,
}

impl LearnabilityMatrix {
    /// Wraps precomputed scores; entries must be finite.
    pub fn from_matrix(matrix: SquareMatrix, weights: ScoreWeights) -> Result<Self> {
        if let Some(pos) = matrix.values().iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learnability entry ({}, {}) is not finite",
                pos / matrix.n(),
                pos % matrix.n()
            )));
        }
        Ok(LearnabilityMatrix { matrix, weights })
    }

    pub fn n(&self) -> usize {
        self.matrix.n()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.matrix.get(i, j)
    }

    pub fn row(&self, i: usize) -> &[f32] {
        self.matrix.row(i)
    }

    pub fn diagonal(&self) -> Vec<f32> {
        self.matrix.diagonal()
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.matrix
    }

    pub fn weights(&self) -> ScoreWeights {
        self.weights
    }
}

/// Work done by one selection call.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionCounters {
    /// Multiply-adds spent on conditional scores, counted as 2 flops each.
    pub selection_flops: u64,
    pub chunks: usize,
    #[serde(skip)]
    pub elapsed_us: u64,
}

/// Output of a selection strategy over one super-batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Indices into the super-batch, in draw order.
    pub selected: Vec<usize>,
    /// Chunk that drew `selected[k]`.
    pub chunk_of: Vec<usize>,
    /// Diagonal learnability of each selected index; absent for score-free strategies.
    pub diag_scores: Option<Vec<f32>>,
    pub counters: SelectionCounters,
}

impl SelectionResult {
    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }
}
