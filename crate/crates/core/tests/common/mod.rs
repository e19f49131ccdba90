//! Shared helpers for integration tests, including a from-scratch
//! transcription of the joint selection procedure used as an oracle.

#![allow(dead_code, clippy::needless_range_loop)]

use learnsel_core::{EmbeddingMatrix, LearnabilityMatrix, ScoreWeights, Side, SquareMatrix};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct transcription of the joint selection loop on a dense matrix.
///
/// `m` is row-major `n × n`. Returns `None` when the draw count rounds to
/// zero. Deliberately shares no code with the library: the only common
/// ground is the documented random-stream contract (ChaCha8 seeded with
/// `seed`, chunk `z` on stream `z`, one uniform per candidate taken from
/// the top 53 bits of `next_u64`, centred in its cell).
pub fn oracle_joint(m: &[f32], n: usize, filter_ratio: f64, n_chunks: usize, seed: u64) -> Option<Vec<usize>> {
    const C: f64 = 1e6;
    let n_draws = (n as f64 * (1.0 - filter_ratio) / n_chunks as f64 + 1e-9).floor() as usize;
    if n_draws == 0 {
        return None;
    }
    let at = |i: usize, j: usize| f64::from(m[i * n + j]);
    let diag: Vec<f64> = (0..n).map(|i| at(i, i)).collect();

    let sample_with_probs = |probs: &[f64], k: usize, z: usize| -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(z as u64);
        let mut keyed: Vec<(f64, usize)> = probs
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let u = ((rng.next_u64() >> 11) as f64 + 0.5) / 9007199254740992.0;
                (p + -(-u.ln()).ln(), i)
            })
            .collect();
        // Stable sort on descending key keeps lower indices first on ties.
        keyed.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        keyed.into_iter().take(k).map(|(_, i)| i).collect()
    };

    let mut inds = sample_with_probs(&diag, n_draws, 0);
    for z in 1..n_chunks {
        let mut is_sampled = vec![0.0f64; n];
        for &i in &inds {
            is_sampled[i] = 1.0;
        }
        let mut probs = vec![0.0; n];
        for i in 0..n {
            let mut s_rows = 0.0;
            let mut s_cols = 0.0;
            for j in 0..n {
                s_rows += at(i, j) * is_sampled[j];
            }
            for j in 0..n {
                s_cols += at(j, i) * is_sampled[j];
            }
            probs[i] = diag[i] + s_rows + s_cols - is_sampled[i] * C;
        }
        let new = sample_with_probs(&probs, n_draws, z);
        inds.extend(new);
    }
    Some(inds)
}

/// Uniform entries in `[-bound, bound]`.
pub fn random_square(n: usize, bound: f32, rng: &mut impl Rng) -> Vec<f32> {
    (0..n * n).map(|_| rng.random_range(-bound..=bound)).collect()
}

pub fn learnability(n: usize, values: Vec<f32>) -> LearnabilityMatrix {
    LearnabilityMatrix::from_matrix(SquareMatrix::from_vec(n, values).unwrap(), ScoreWeights::default()).unwrap()
}

/// Gaussian rows normalized to unit length.
pub fn random_unit_rows(n: usize, dim: usize, rng: &mut impl Rng) -> Vec<Vec<f32>> {
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..dim)
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| (x / norm) as f32).collect()
        })
        .collect()
}

pub fn embedding(model: &str, side: Side, rows: &[Vec<f32>]) -> EmbeddingMatrix {
    EmbeddingMatrix::from_rows(model, side, rows, (0..rows.len() as u64).collect()).unwrap()
}

/// `a · b` accumulated in `f64`, left to right.
pub fn dot64(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += f64::from(a[k]) * f64::from(b[k]);
    }
    s
}
