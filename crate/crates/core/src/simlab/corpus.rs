//! Synthetic parallel corpus with a known clean/noisy split.

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded, Purpose};
use crate::types::{normalize_rows, EmbeddingMatrix, PairRecord, Side};

/// Reference model id used for synthetic corpora.
pub const REFERENCE_MODEL: &str = "simlab-reference";
/// Learner model id used for synthetic corpora.
pub const LEARNER_MODEL: &str = "simlab-learner";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticCorpusSpec {
    pub n_clean: usize,
    pub n_noisy: usize,
    pub dim: usize,
    /// Norm scale of the perturbation added to latents for the reference model.
    pub ref_noise_sigma: f64,
    /// Same, for the learner's initial embeddings.
    pub learner_init_sigma: f64,
    pub seed: u64,
    /// Share of noisy pairs whose target latent is the negated source latent.
    pub antipodal_fraction: f64,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        SyntheticCorpusSpec {
            n_clean: 2000,
            n_noisy: 500,
            dim: 64,
            ref_noise_sigma: 0.6,
            learner_init_sigma: 4.0,
            seed: 0,
            antipodal_fraction: 0.0,
        }
    }
}

impl SyntheticCorpusSpec {
    pub fn n(&self) -> usize {
        self.n_clean + self.n_noisy
    }

    pub fn validate(&self) -> Result<()> {
        if self.n() < 2 {
            return Err(Error::InvalidConfig("synthetic corpus needs at least 2 pairs".into()));
        }
        if self.dim < 2 {
            return Err(Error::InvalidConfig("synthetic corpus needs dim >= 2".into()));
        }
        for (name, v) in [
            ("ref_noise_sigma", self.ref_noise_sigma),
            ("learner_init_sigma", self.learner_init_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and >= 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.antipodal_fraction) {
            return Err(Error::InvalidConfig("antipodal_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Generated corpus: records (with noise labels), reference embeddings for
/// every pair, and the latent vectors they were built from.
#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub spec: SyntheticCorpusSpec,
    pub records: Vec<PairRecord>,
    pub reference_src: EmbeddingMatrix,
    pub reference_trg: EmbeddingMatrix,
    /// Row-major `n × dim` unit latents per side.
    pub latent_src: Vec<f32>,
    pub latent_trg: Vec<f32>,
}

impl SyntheticCorpus {
    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn is_noisy(&self, i: usize) -> bool {
        self.records[i].noise_label == Some(true)
    }

    pub fn clean_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| !self.is_noisy(i)).collect()
    }
}

fn gaussian_rows<R: Rng>(rng: &mut R, n: usize, dim: usize) -> Vec<f32> {
    (0..n * dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
        .collect()
}

/// `normalize(latent + σ/√dim · ε)` row by row, ε standard normal.
pub(crate) fn perturb<R: Rng>(rng: &mut R, latent: &[f32], dim: usize, sigma: f64) -> Result<Vec<f32>> {
    let scale = sigma / (dim as f64).sqrt();
    let raw: Vec<f32> = latent
        .iter()
        .map(|&z| (f64::from(z) + scale * rng.sample::<f64, _>(StandardNormal)) as f32)
        .collect();
    normalize_rows(&raw, dim)
}

pub fn generate_synthetic_corpus(spec: &SyntheticCorpusSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let (n, dim) = (spec.n(), spec.dim);
    let mut rng = seeded(derive_seed(spec.seed, Purpose::Corpus, 0));

    let mut noisy = vec![false; n];
    for i in index::sample(&mut rng, n, spec.n_noisy) {
        noisy[i] = true;
    }
    let n_antipodal = (spec.n_noisy as f64 * spec.antipodal_fraction).round() as usize;

    let latent_src = normalize_rows(&gaussian_rows(&mut rng, n, dim), dim)?;
    let mut latent_trg = latent_src.clone();
    for (seen_noisy, i) in (0..n).filter(|&i| noisy[i]).enumerate() {
        let row = &mut latent_trg[i * dim..(i + 1) * dim];
        if seen_noisy < n_antipodal {
            row.iter_mut().for_each(|v| *v = -*v);
        } else {
            let fresh = normalize_rows(&gaussian_rows(&mut rng, 1, dim), dim)?;
            row.copy_from_slice(&fresh);
        }
    }

    let ref_src = perturb(&mut rng, &latent_src, dim, spec.ref_noise_sigma)?;
    let ref_trg = perturb(&mut rng, &latent_trg, dim, spec.ref_noise_sigma)?;

    let records: Vec<PairRecord> = (0..n)
        .map(|i| PairRecord::new(i as u64, format!("src {i}"), format!("trg {i}")).with_noise_label(noisy[i]))
        .collect();
    let ids: Vec<u64> = (0..n as u64).collect();
    Ok(SyntheticCorpus {
        spec: spec.clone(),
        reference_src: EmbeddingMatrix::new(REFERENCE_MODEL, Side::Source, dim, &ref_src, ids.clone())?,
        reference_trg: EmbeddingMatrix::new(REFERENCE_MODEL, Side::Target, dim, &ref_trg, ids)?,
        records,
        latent_src,
        latent_trg,
    })
}
