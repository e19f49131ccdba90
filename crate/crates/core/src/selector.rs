//! Joint example selection and the baselines it is compared against.
//!
//! [`joint_select`] draws a sub-batch in `n_chunks` rounds. Round 0 samples
//! from the diagonal learnability scores. Every later round rescores each
//! candidate by its diagonal plus its row and column interactions with the
//! items already drawn, pushes drawn items down by a large constant, and
//! samples again. Scores can be negative, so they are treated as logits and
//! drawn without replacement via Gumbel-top-k.

use std::cmp::Ordering;
use std::time::Instant;

use rand::seq::index;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::chunk_rng;
use crate::types::{Chunk0Policy, LearnabilityMatrix, SelectionConfig, SelectionCounters, SelectionResult};

/// Guards the floor in [`n_draws`] against `1 - 0.9 = 0.0999…` style rounding.
const DRAWS_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    Joint,
    Topk,
    Iid,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(Strategy::Joint),
            "topk" => Ok(Strategy::Topk),
            "iid" => Ok(Strategy::Iid),
            other => Err(Error::InvalidConfig(format!("unknown strategy {other:?}"))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Joint => "joint",
            Strategy::Topk => "topk",
            Strategy::Iid => "iid",
        })
    }
}

/// Which super-batch rows have been drawn so far.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampledMask {
    flags: Vec<bool>,
    count: usize,
}

impl SampledMask {
    pub fn new(n: usize) -> Self {
        SampledMask {
            flags: vec![false; n],
            count: 0,
        }
    }

    pub fn from_indices(n: usize, indices: &[usize]) -> Self {
        let mut mask = Self::new(n);
        for &i in indices {
            mask.insert(i);
        }
        mask
    }

    /// Marks `i`; returns false if it was already set.
    pub fn insert(&mut self, i: usize) -> bool {
        if self.flags[i] {
            return false;
        }
        self.flags[i] = true;
        self.count += 1;
        true
    }

    pub fn contains(&self, i: usize) -> bool {
        self.flags[i]
    }

    pub fn n(&self) -> usize {
        self.flags.len()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Set indices in ascending order.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.flags.iter().enumerate().filter_map(|(i, &f)| f.then_some(i))
    }
}

/// `floor(n_rows × (1 − filter_ratio) / n_chunks)`.
pub fn n_draws(cfg: &SelectionConfig, n_rows: usize) -> Result<usize> {
    if n_rows == 0 || cfg.n_chunks == 0 {
        return Err(Error::DegenerateConfig {
            n_rows,
            filter_ratio: cfg.filter_ratio,
            n_chunks: cfg.n_chunks,
        });
    }
    let draws = (n_rows as f64 * (1.0 - cfg.filter_ratio) / cfg.n_chunks as f64 + DRAWS_EPS).floor();
    if draws < 1.0 {
        return Err(Error::DegenerateConfig {
            n_rows,
            filter_ratio: cfg.filter_ratio,
            n_chunks: cfg.n_chunks,
        });
    }
    Ok(draws as usize)
}

/// Uniform variate on the open interval (0, 1) from the top 53 bits.
#[inline]
pub fn open_unit<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard Gumbel variate `−ln(−ln u)`.
#[inline]
pub fn gumbel<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    -(-open_unit(rng).ln()).ln()
}

/// Draws `k` distinct indices, item `i` weighted by `exp(logits[i])`.
pub fn gumbel_topk<R: RngCore + ?Sized>(logits: &[f64], k: usize, rng: &mut R) -> Result<Vec<usize>> {
    gumbel_topk_tempered(logits, k, 1.0, rng)
}

/// Gumbel-top-k on `logits / temperature`.
///
/// One Gumbel variate is drawn per logit, in index order. The result lists
/// the `k` largest perturbed keys in descending order; equal keys go to the
/// lower index.
pub fn gumbel_topk_tempered<R: RngCore + ?Sized>(
    logits: &[f64],
    k: usize,
    temperature: f64,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if k > logits.len() {
        return Err(Error::KTooLarge { k, n: logits.len() });
    }
    if let Some(i) = logits.iter().position(|l| !l.is_finite()) {
        return Err(Error::InvalidConfig(format!("logit {i} is not finite")));
    }
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::InvalidConfig("temperature must be positive and finite".into()));
    }
    let keyed: Vec<(f64, usize)> = logits
        .iter()
        .enumerate()
        .map(|(i, &l)| (l / temperature + gumbel(rng), i))
        .collect();
    Ok(top_k_by_key(keyed, k))
}

/// Descending by key, ascending by index on ties.
fn key_order(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

fn top_k_by_key(mut keyed: Vec<(f64, usize)>, k: usize) -> Vec<usize> {
    if k == 0 {
        return Vec::new();
    }
    if k < keyed.len() {
        keyed.select_nth_unstable_by(k - 1, key_order);
        keyed.truncate(k);
    }
    keyed.sort_unstable_by(key_order);
    keyed.into_iter().map(|(_, i)| i).collect()
}

/// Per-candidate logits for the next chunk:
/// `M[i][i] + Σ_{j∈mask} M[i][j] + Σ_{j∈mask} M[j][i]`, minus `C` where `i` is masked.
///
/// Both sums run over masked `j` in ascending order with `f64` accumulators.
pub fn conditional_scores(m: &LearnabilityMatrix, mask: &SampledMask, large_constant: f64) -> Result<Vec<f64>> {
    let n = m.n();
    if mask.n() != n {
        return Err(Error::DimensionMismatch(format!(
            "mask covers {} rows, matrix has {n}",
            mask.n()
        )));
    }
    let masked: Vec<usize> = mask.indices().collect();

    let mut s_cols = vec![0f64; n];
    for &j in &masked {
        for (acc, &v) in s_cols.iter_mut().zip(m.row(j)) {
            *acc += f64::from(v);
        }
    }

    let out = (0..n)
        .map(|i| {
            let row = m.row(i);
            let s_row: f64 = masked.iter().fold(0.0, |acc, &j| acc + f64::from(row[j]));
            let score = f64::from(row[i]) + s_row + s_cols[i];
            if mask.contains(i) {
                score - large_constant
            } else {
                score
            }
        })
        .collect();
    Ok(out)
}

/// Joint example selection over one super-batch.
///
/// Chunk `z` draws from stream `z` of the generator seeded with `seed`
/// (see [`crate::rng::chunk_rng`]).
pub fn joint_select(m: &LearnabilityMatrix, cfg: &SelectionConfig, seed: u64) -> Result<SelectionResult> {
    let start = Instant::now();
    let n = m.n();
    let draws = n_draws(cfg, n)?;
    let diag: Vec<f64> = m.diagonal().into_iter().map(f64::from).collect();

    let mut selected = Vec::with_capacity(draws * cfg.n_chunks);
    let mut chunk_of = Vec::with_capacity(draws * cfg.n_chunks);
    let mut counters = SelectionCounters::default();

    let first = {
        let mut rng = chunk_rng(seed, 0);
        match cfg.chunk0_policy {
            Chunk0Policy::Weighted => gumbel_topk_tempered(&diag, draws, cfg.temperature, &mut rng)?,
            Chunk0Policy::Uniform => gumbel_topk(&vec![0.0; n], draws, &mut rng)?,
        }
    };
    let mut mask = SampledMask::from_indices(n, &first);
    chunk_of.extend(std::iter::repeat_n(0, first.len()));
    selected.extend(first);
    counters.chunks = 1;

    for z in 1..cfg.n_chunks {
        let probs = conditional_scores(m, &mask, cfg.large_constant)?;
        counters.selection_flops += 2 * (n * mask.count()) as u64;
        let mut rng = chunk_rng(seed, z);
        let drawn = gumbel_topk_tempered(&probs, draws, cfg.temperature, &mut rng)?;
        for &i in &drawn {
            if !mask.insert(i) {
                return Err(Error::InvalidConfig(format!(
                    "chunk {z} redrew index {i}: large_constant too small for the score range and temperature"
                )));
            }
        }
        chunk_of.extend(std::iter::repeat_n(z, drawn.len()));
        selected.extend(drawn);
        counters.chunks += 1;
    }

    let diag_scores = selected.iter().map(|&i| m.get(i, i)).collect();
    counters.elapsed_us = start.elapsed().as_micros() as u64;
    Ok(SelectionResult {
        selected,
        chunk_of,
        diag_scores: Some(diag_scores),
        counters,
    })
}

/// Uniform sample of `k` distinct indices from `0..n`.
pub fn iid_select<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<Vec<usize>> {
    if k > n {
        return Err(Error::KTooLarge { k, n });
    }
    Ok(index::sample(rng, n, k).into_vec())
}

/// Indices of the `k` largest diagonal entries; lower index wins ties.
pub fn topk_individual_select(m: &LearnabilityMatrix, k: usize) -> Result<Vec<usize>> {
    let n = m.n();
    if k > n {
        return Err(Error::KTooLarge { k, n });
    }
    let keyed = m
        .diagonal()
        .into_iter()
        .enumerate()
        .map(|(i, d)| (f64::from(d), i))
        .collect();
    Ok(top_k_by_key(keyed, k))
}

/// Result that keeps all `n` rows, used for a final super-batch too small
/// to select from.
pub fn pass_through(n: usize) -> SelectionResult {
    SelectionResult {
        selected: (0..n).collect(),
        chunk_of: vec![0; n],
        diag_scores: None,
        counters: SelectionCounters::default(),
    }
}

/// Runs `strategy` over a super-batch of `n` rows.
///
/// `m` may be `None` only for [`Strategy::Iid`]. Top-k and iid pick the same
/// number of items joint selection would (`n_chunks × n_draws`).
pub fn select(
    strategy: Strategy,
    m: Option<&LearnabilityMatrix>,
    n: usize,
    cfg: &SelectionConfig,
    seed: u64,
) -> Result<SelectionResult> {
    let need_matrix =
        || m.ok_or_else(|| Error::InvalidConfig(format!("{strategy} selection needs a learnability matrix")));
    match strategy {
        Strategy::Joint => joint_select(need_matrix()?, cfg, seed),
        Strategy::Topk => {
            let m = need_matrix()?;
            let k = n_draws(cfg, n)? * cfg.n_chunks;
            let selected = topk_individual_select(m, k)?;
            let diag_scores = selected.iter().map(|&i| m.get(i, i)).collect();
            Ok(SelectionResult {
                chunk_of: vec![0; selected.len()],
                selected,
                diag_scores: Some(diag_scores),
                counters: SelectionCounters {
                    chunks: 1,
                    ..Default::default()
                },
            })
        }
        Strategy::Iid => {
            let k = n_draws(cfg, n)? * cfg.n_chunks;
            let selected = iid_select(n, k, &mut chunk_rng(seed, 0))?;
            Ok(SelectionResult {
                chunk_of: vec![0; selected.len()],
                selected,
                diag_scores: None,
                counters: SelectionCounters {
                    chunks: 1,
                    ..Default::default()
                },
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{ScoreWeights, SquareMatrix};

    fn lm(rows: &[Vec<f32>]) -> LearnabilityMatrix {
        LearnabilityMatrix::from_matrix(SquareMatrix::from_rows(rows).unwrap(), ScoreWeights::default()).unwrap()
    }

    fn cfg(filter_ratio: f64, n_chunks: usize) -> SelectionConfig {
        SelectionConfig {
            filter_ratio,
            n_chunks,
            ..Default::default()
        }
    }

    #[test]
    fn n_draws_examples() {
        assert_eq!(n_draws(&cfg(0.9, 4), 4000).unwrap(), 100);
        assert_eq!(n_draws(&cfg(0.0, 1), 10).unwrap(), 10);
        // floor(8 * 0.5 / 2) = 2
        assert_eq!(n_draws(&cfg(0.5, 2), 8).unwrap(), 2);
        assert!(matches!(n_draws(&cfg(0.9, 4), 20), Err(Error::DegenerateConfig { .. })));
    }

    #[test]
    fn gumbel_dominant_logit() {
        for seed in 0..200 {
            let mut rng = chunk_rng(seed, 0);
            assert_eq!(gumbel_topk(&[0.0, 1e6], 1, &mut rng).unwrap(), vec![1]);
        }
    }

    #[test]
    fn gumbel_exhaustive_draw() {
        let mut rng = chunk_rng(1, 0);
        let mut got = gumbel_topk(&[0.3; 4], 4, &mut rng).unwrap();
        got.sort_unstable();
        assert_eq!(got, vec![0, 1, 2, 3]);
    }

    #[test]
    fn gumbel_fair_coin_binomial() {
        // Binomial(10000, 0.5): sd = 50, so 6 sd = 300.
        let zeros = (0..10_000u64)
            .filter(|&s| gumbel_topk(&[0.0, 0.0], 1, &mut chunk_rng(s, 0)).unwrap()[0] == 0)
            .count();
        assert!((zeros as i64 - 5000).abs() <= 300, "{zeros}");
    }

    #[test]
    fn gumbel_errors() {
        let mut rng = chunk_rng(0, 0);
        assert!(matches!(
            gumbel_topk(&[0.0], 2, &mut rng),
            Err(Error::KTooLarge { k: 2, n: 1 })
        ));
        assert!(gumbel_topk(&[f64::NAN, 0.0], 1, &mut rng).is_err());
        assert!(gumbel_topk(&[], 0, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn conditional_unmasked_is_diagonal() {
        let m = lm(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let out = conditional_scores(&m, &SampledMask::new(2), 1e6).unwrap();
        assert_eq!(out, vec![1.0, 4.0]);
    }

    #[test]
    fn conditional_hand_example() {
        // i=0 masked: 1 + M[0][0] + M[0][0] - 1e6; i=1: 4 + M[1][0] + M[0][1] = 4 + 3 + 2
        let m = lm(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let mask = SampledMask::from_indices(2, &[0]);
        let out = conditional_scores(&m, &mask, 1e6).unwrap();
        assert_eq!(out, vec![-999_997.0, 9.0]);
    }

    #[test]
    fn conditional_symmetric_rows_equal_cols() {
        let m = lm(&[vec![0.5, 0.1, -0.2], vec![0.1, 0.3, 0.4], vec![-0.2, 0.4, 0.9]]);
        let mask = SampledMask::from_indices(3, &[0, 2]);
        let out = conditional_scores(&m, &mask, 0.0).unwrap();
        for i in 0..3 {
            let s_row: f64 = [0, 2].iter().map(|&j| f64::from(m.get(i, j))).sum();
            let want = f64::from(m.get(i, i)) + 2.0 * s_row;
            assert!((out[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn joint_select_picks_dominant_diagonal() {
        let m = lm(&[
            vec![10.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 10.0],
        ]);
        let mut hits = 0;
        for seed in 0..1000 {
            let r = joint_select(&m, &cfg(0.5, 2), seed).unwrap();
            let mut s = r.selected.clone();
            s.sort_unstable();
            if s == vec![0, 3] {
                hits += 1;
            }
        }
        // each chunk misses the big-diagonal row with probability ≈ 3·e^-10
        assert!(hits >= 995, "{hits}");
    }

    #[test]
    fn joint_select_without_filtering_takes_all() {
        let m = lm(&[vec![0.2, -0.4], vec![0.1, -0.9]]);
        let r = joint_select(&m, &cfg(0.0, 1), 5).unwrap();
        let mut s = r.selected.clone();
        s.sort_unstable();
        assert_eq!(s, vec![0, 1]);
        assert_eq!(r.chunk_of, vec![0, 0]);
    }

    #[test]
    fn joint_select_is_deterministic() {
        let rows: Vec<Vec<f32>> = (0..12)
            .map(|i| (0..12).map(|j| ((i * 7 + j * 3) % 11) as f32 / 11.0 - 0.5).collect())
            .collect();
        let m = lm(&rows);
        let a = joint_select(&m, &cfg(0.5, 3), 42).unwrap();
        let b = joint_select(&m, &cfg(0.5, 3), 42).unwrap();
        assert_eq!(a.selected, b.selected);
        assert_eq!(a.chunk_of, vec![0, 0, 1, 1, 2, 2]);
    }

    #[test]
    fn iid_examples() {
        let mut got = iid_select(5, 5, &mut chunk_rng(3, 0)).unwrap();
        got.sort_unstable();
        assert_eq!(got, vec![0, 1, 2, 3, 4]);
        assert_eq!(iid_select(1, 1, &mut chunk_rng(3, 0)).unwrap(), vec![0]);
        assert!(matches!(
            iid_select(2, 3, &mut chunk_rng(3, 0)),
            Err(Error::KTooLarge { .. })
        ));
        let zeros = (0..10_000u64)
            .filter(|&s| iid_select(2, 1, &mut chunk_rng(s, 0)).unwrap()[0] == 0)
            .count();
        assert!((zeros as i64 - 5000).abs() <= 300, "{zeros}");
    }

    #[test]
    fn topk_examples() {
        let m = lm(&[vec![0.1, 0.0, 0.0], vec![0.0, 0.9, 0.0], vec![0.0, 0.0, 0.5]]);
        assert_eq!(topk_individual_select(&m, 2).unwrap(), vec![1, 2]);
        let eq = lm(&[vec![0.3, 1.0, 1.0], vec![1.0, 0.3, 1.0], vec![1.0, 1.0, 0.3]]);
        assert_eq!(topk_individual_select(&eq, 2).unwrap(), vec![0, 1]);
        assert!(topk_individual_select(&m, 4).is_err());
    }

    #[test]
    fn topk_matches_full_sort() {
        use rand::Rng;
        let mut rng = chunk_rng(99, 0);
        let n = 100;
        let mut rows = vec![vec![0f32; n]; n];
        for (i, row) in rows.iter_mut().enumerate() {
            // coarse values so ties actually occur
            row[i] = (rng.random_range(0..20) as f32) / 10.0 - 1.0;
        }
        let m = lm(&rows);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| rows[b][b].partial_cmp(&rows[a][a]).unwrap().then(a.cmp(&b)));
        for k in [1, 10, 37, 100] {
            assert_eq!(topk_individual_select(&m, k).unwrap(), order[..k].to_vec());
        }
    }

    #[test]
    fn select_dispatch_sizes() {
        let rows: Vec<Vec<f32>> = (0..20)
            .map(|i| (0..20).map(|j| if i == j { 0.5 } else { 0.0 }).collect())
            .collect();
        let m = lm(&rows);
        let c = cfg(0.5, 2);
        for s in [Strategy::Joint, Strategy::Topk, Strategy::Iid] {
            let r = select(s, Some(&m), 20, &c, 1).unwrap();
            assert_eq!(r.len(), 10);
            assert_eq!(r.diag_scores.is_some(), s != Strategy::Iid);
        }
        assert!(select(Strategy::Joint, None, 20, &c, 1).is_err());
        assert_eq!(select(Strategy::Iid, None, 20, &c, 1).unwrap().len(), 10);
    }
}
