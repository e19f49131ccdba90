//! Toy learner: one embedding per pair and side, pulled together when trained.

use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded, Purpose};
use crate::types::{dot, l2_norm, EmbeddingMatrix, Side, MIN_ROW_NORM};

use super::corpus::{perturb, SyntheticCorpus, LEARNER_MODEL};

#[derive(Clone, Debug, PartialEq)]
pub struct ToyLearnerState {
    src_table: Vec<f32>,
    trg_table: Vec<f32>,
    dim: usize,
    pub step: u64,
    pub lr: f64,
}

impl ToyLearnerState {
    /// Builds a state from unit-norm tables (row-major, `dim` wide).
    pub fn new(src_table: Vec<f32>, trg_table: Vec<f32>, dim: usize, lr: f64) -> Result<Self> {
        if !(lr > 0.0 && lr <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must lie in (0, 1], got {lr}"
            )));
        }
        if dim == 0 || src_table.len() != trg_table.len() || !src_table.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch(
                "learner tables must be n x dim on both sides".into(),
            ));
        }
        Ok(ToyLearnerState {
            src_table,
            trg_table,
            dim,
            step: 0,
            lr,
        })
    }

    /// Initial learner embeddings: the corpus latents perturbed with
    /// `learner_init_sigma`.
    pub fn init(corpus: &SyntheticCorpus, lr: f64) -> Result<Self> {
        let dim = corpus.dim();
        let sigma = corpus.spec.learner_init_sigma;
        let mut rng = seeded(derive_seed(corpus.spec.seed, Purpose::LearnerInit, 0));
        let src = perturb(&mut rng, &corpus.latent_src, dim, sigma)?;
        let trg = perturb(&mut rng, &corpus.latent_trg, dim, sigma)?;
        Self::new(src, trg, dim, lr)
    }

    pub fn n(&self) -> usize {
        self.src_table.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, side: Side, i: usize) -> &[f32] {
        let t = match side {
            Side::Source => &self.src_table,
            Side::Target => &self.trg_table,
        };
        &t[i * self.dim..(i + 1) * self.dim]
    }

    /// Cosine similarity of pair `i`'s two learner embeddings.
    pub fn diagonal_similarity(&self, i: usize) -> f64 {
        dot(self.row(Side::Source, i), self.row(Side::Target, i))
    }

    /// Learner embeddings of `ids` for one side.
    pub fn embeddings(&self, side: Side, ids: &[u64]) -> Result<EmbeddingMatrix> {
        let rows = ids
            .iter()
            .map(|&id| self.check(id).map(|i| self.row(side, i)))
            .collect::<Result<Vec<_>>>()?;
        EmbeddingMatrix::from_rows(LEARNER_MODEL, side, &rows, ids.to_vec())
    }

    fn check(&self, id: u64) -> Result<usize> {
        usize::try_from(id)
            .ok()
            .filter(|&i| i < self.n())
            .ok_or(Error::UnknownId(id))
    }

    /// Moves both embeddings of every selected pair toward each other by
    /// `lr / 2` of their difference, then renormalizes.
    ///
    /// With `lr = 1` both land on the normalized midpoint. A pair whose
    /// midpoint is the zero vector is left as is.
    pub fn update(&mut self, ids: &[u64]) -> Result<()> {
        let rows = ids.iter().map(|&id| self.check(id)).collect::<Result<Vec<_>>>()?;
        let half = self.lr / 2.0;
        let dim = self.dim;
        for i in rows {
            let span = i * dim..(i + 1) * dim;
            let a: Vec<f64> = self.src_table[span.clone()].iter().map(|&v| f64::from(v)).collect();
            let b: Vec<f64> = self.trg_table[span.clone()].iter().map(|&v| f64::from(v)).collect();
            let a2: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + half * (y - x)).collect();
            let b2: Vec<f64> = b.iter().zip(&a).map(|(y, x)| y + half * (x - y)).collect();
            let (na, nb) = (l2_f64(&a2), l2_f64(&b2));
            if na < MIN_ROW_NORM || nb < MIN_ROW_NORM {
                continue;
            }
            for (dst, v) in self.src_table[span.clone()].iter_mut().zip(&a2) {
                *dst = (v / na) as f32;
            }
            for (dst, v) in self.trg_table[span].iter_mut().zip(&b2) {
                *dst = (v / nb) as f32;
            }
        }
        self.step += 1;
        Ok(())
    }

    /// Largest deviation of any row from unit norm.
    pub fn max_norm_error(&self) -> f64 {
        self.src_table
            .chunks(self.dim)
            .chain(self.trg_table.chunks(self.dim))
            .map(|r| (l2_norm(r) - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

fn l2_f64(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Functional form of [`ToyLearnerState::update`].
pub fn toy_learner_update(state: &ToyLearnerState, ids: &[u64]) -> Result<ToyLearnerState> {
    let mut next = state.clone();
    next.update(ids)?;
    Ok(next)
}
