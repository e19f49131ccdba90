//! Input fixtures shared by the benchmarks.

use learnsel_core::{normalize_rows, EmbeddingMatrix, LearnabilityMatrix, ScoreWeights, Side, SquareMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// `n` random unit-norm rows of width `dim`.
pub fn unit_embeddings(model: &str, side: Side, n: usize, dim: usize, seed: u64) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f32> = (0..n * dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
        .collect();
    let rows = normalize_rows(&raw, dim).expect("gaussian rows are non-zero");
    EmbeddingMatrix::new(model, side, dim, &rows, (0..n as u64).collect()).expect("valid matrix")
}

/// Learnability matrix with entries uniform in [-1, 1].
pub fn random_learnability(n: usize, seed: u64) -> LearnabilityMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f32> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let m = SquareMatrix::from_vec(n, values).expect("n x n entries");
    LearnabilityMatrix::from_matrix(m, ScoreWeights::default()).expect("finite entries")
}
