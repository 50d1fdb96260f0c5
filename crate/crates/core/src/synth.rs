//! Deterministic synthetic two-modality corpus.
//!
//! Modality-A vectors are unit-normalized Gaussians. Modality-B vectors are
//! a seeded orthogonal rotation of their partner plus isotropic Gaussian
//! noise, so an exact alignment exists but raw cross-modal comparison is
//! uninformative.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{validation, Result};
use crate::store::{EmbeddingSet, PairDataset, PairExample};

#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub a: EmbeddingSet,
    pub b: EmbeddingSet,
    pub pairs: PairDataset,
    /// Row-major `dim × dim` orthogonal map with `B_i = Q·A_i + noise`.
    pub rotation: Vec<f64>,
}

pub fn anchor_id(i: usize) -> String {
    format!("a{i:05}")
}

pub fn candidate_id(i: usize) -> String {
    format!("b{i:05}")
}

/// Seeded orthogonal matrix: QR of a Gaussian matrix, with columns of `Q`
/// sign-flipped so that `R` has a positive diagonal.
pub fn random_orthogonal(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    let gaussian = DMatrix::<f64>::from_fn(dim, dim, |_, _| rng.sample(StandardNormal));
    let qr = gaussian.qr();
    let r = qr.r();
    let mut q = qr.q();
    for (c, mut col) in q.column_iter_mut().enumerate() {
        if r[(c, c)] < 0.0 {
            col.neg_mut();
        }
    }
    let mut out = Vec::with_capacity(dim * dim);
    for row in 0..dim {
        for col in 0..dim {
            out.push(q[(row, col)]);
        }
    }
    out
}

/// Sattolo's algorithm: a uniformly random single-cycle permutation, which
/// never maps an index to itself.
fn derangement(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..i);
        perm.swap(i, j);
    }
    perm
}

pub fn generate_synthetic(
    n_pairs: usize,
    dim: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<SyntheticTask> {
    if n_pairs < 2 {
        return Err(validation(format!(
            "n_pairs={n_pairs}: at least 2 pairs are needed to form negatives"
        )));
    }
    if dim == 0 {
        return Err(validation("dim must be positive"));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(validation(format!(
            "noise_sigma={noise_sigma} must be finite and >= 0"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rotation = random_orthogonal(dim, &mut rng);

    let mut a_vals = Vec::with_capacity(n_pairs * dim);
    let mut b_vals = Vec::with_capacity(n_pairs * dim);
    let mut a_row = vec![0.0f64; dim];
    for _ in 0..n_pairs {
        for v in a_row.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let norm = a_row
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
            .max(f64::MIN_POSITIVE);
        a_row.iter_mut().for_each(|v| *v /= norm);
        a_vals.extend(a_row.iter().map(|&v| v as f32));
        for r in 0..dim {
            let rotated: f64 = rotation[r * dim..(r + 1) * dim]
                .iter()
                .zip(&a_row)
                .map(|(q, a)| q * a)
                .sum();
            let eps: f64 = if noise_sigma > 0.0 {
                noise_sigma * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            b_vals.push((rotated + eps) as f32);
        }
    }

    let partner = derangement(n_pairs, &mut rng);
    let mut examples = Vec::with_capacity(2 * n_pairs);
    for (i, &j) in partner.iter().enumerate() {
        examples.push(PairExample::new(anchor_id(i), candidate_id(i), 1));
        examples.push(PairExample::new(anchor_id(i), candidate_id(j), 0));
    }

    Ok(SyntheticTask {
        a: EmbeddingSet::new(dim, (0..n_pairs).map(anchor_id).collect(), a_vals)?,
        b: EmbeddingSet::new(dim, (0..n_pairs).map(candidate_id).collect(), b_vals)?,
        pairs: PairDataset::new(examples)?,
        rotation,
    })
}
