//! Synthetic bimodal data and brute-force reference implementations.
//!
//! The oracles here deliberately share no code with the routines they check:
//! they work on unpacked sign matrices, plain loops and library sorts.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FeatureMatrix, LabelMatrix};

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Total samples (training + queries).
    pub n: usize,
    pub classes: usize,
    pub latent_dim: usize,
    pub d1: usize,
    pub d2: usize,
    pub noise: f64,
    /// Per-sample latent jitter around the class center.
    pub jitter: f64,
    /// Fraction of every class held out as queries.
    pub query_fraction: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n: 2000,
            classes: 5,
            latent_dim: 16,
            d1: 64,
            d2: 48,
            noise: 0.3,
            jitter: 0.1,
            query_fraction: 0.1,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.n < self.classes {
            return Err(Error::InvalidParam(format!(
                "need n >= classes >= 2, got n={} classes={}",
                self.n, self.classes
            )));
        }
        if self.latent_dim == 0 || self.d1 == 0 || self.d2 == 0 {
            return Err(Error::InvalidParam("dimensions must be at least 1".into()));
        }
        if !(self.noise >= 0.0) || !(self.jitter >= 0.0) {
            return Err(Error::InvalidParam("noise levels must be nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.query_fraction) {
            return Err(Error::InvalidParam("query_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Generated features (`d_t x n`), one-hot labels and a stratified split.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub x1: FeatureMatrix,
    pub x2: FeatureMatrix,
    pub labels: LabelMatrix,
    pub classes: Vec<usize>,
    pub train: Vec<usize>,
    pub query: Vec<usize>,
}

/// One side of the split.
#[derive(Debug, Clone)]
pub struct SynthPart {
    pub x1: FeatureMatrix,
    pub x2: FeatureMatrix,
    pub labels: LabelMatrix,
}

impl SynthData {
    fn part(&self, idx: &[usize]) -> SynthPart {
        SynthPart {
            x1: self.x1.select_samples(idx),
            x2: self.x2.select_samples(idx),
            labels: self.labels.select_samples(idx),
        }
    }

    pub fn train_part(&self) -> SynthPart {
        self.part(&self.train)
    }

    pub fn query_part(&self) -> SynthPart {
        self.part(&self.query)
    }
}

fn normal_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z * scale
    })
}

/// Class-clustered latent vectors observed through two random linear maps
/// with additive Gaussian noise.
pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers = normal_matrix(spec.latent_dim, spec.classes, 1.0, &mut rng);
    let map_scale = 1.0 / (spec.latent_dim as f64).sqrt();
    let m1 = normal_matrix(spec.d1, spec.latent_dim, map_scale, &mut rng);
    let m2 = normal_matrix(spec.d2, spec.latent_dim, map_scale, &mut rng);

    // Balanced classes in shuffled order.
    let mut classes: Vec<usize> = (0..spec.n).map(|i| i % spec.classes).collect();
    classes.shuffle(&mut rng);

    let jitter = Normal::new(0.0, spec.jitter).map_err(|e| Error::InvalidParam(e.to_string()))?;
    let latent = DMatrix::from_fn(spec.latent_dim, spec.n, |i, j| {
        centers[(i, classes[j])] + jitter.sample(&mut rng)
    });
    // Noise draws are independent of the noise level, so two specs that only
    // differ in `noise` share every other random quantity.
    let e1 = normal_matrix(spec.d1, spec.n, 1.0, &mut rng);
    let e2 = normal_matrix(spec.d2, spec.n, 1.0, &mut rng);
    let x1 = &m1 * &latent + e1 * spec.noise;
    let x2 = &m2 * &latent + e2 * spec.noise;

    let mut train = Vec::new();
    let mut query = Vec::new();
    for class in 0..spec.classes {
        let members: Vec<usize> = (0..spec.n).filter(|&i| classes[i] == class).collect();
        let held = (members.len() as f64 * spec.query_fraction).round() as usize;
        query.extend_from_slice(&members[..held]);
        train.extend_from_slice(&members[held..]);
    }
    train.sort_unstable();
    query.sort_unstable();

    Ok(SynthData {
        x1: FeatureMatrix::new(x1)?,
        x2: FeatureMatrix::new(x2)?,
        labels: LabelMatrix::one_hot(spec.classes, &classes)?,
        classes,
        train,
        query,
    })
}

/// Mean silhouette coefficient of `x`'s columns under `classes`.
pub fn silhouette(x: &DMatrix<f64>, classes: &[usize]) -> f64 {
    let n = x.ncols();
    let k = classes.iter().copied().max().map_or(0, |c| c + 1);
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for j in 0..n {
            if i == j {
                continue;
            }
            sums[classes[j]] += (x.column(i) - x.column(j)).norm();
            counts[classes[j]] += 1;
        }
        let own = classes[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..k)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    total / n as f64
}

/// Direct mAP over unpacked sign matrices (`r x q` queries, `r x N`
/// database): positional Hamming distances, a full sort by
/// (distance, index), precision at every relevant position.
pub fn oracle_map(
    queries: &DMatrix<f64>,
    db: &DMatrix<f64>,
    y_query: &DMatrix<f64>,
    y_db: &DMatrix<f64>,
) -> Result<f64> {
    if queries.nrows() != db.nrows() {
        return Err(Error::LengthMismatch {
            left: queries.nrows(),
            right: db.nrows(),
        });
    }
    let mut aps = Vec::new();
    for q in 0..queries.ncols() {
        let mut relevant = Vec::with_capacity(db.ncols());
        for i in 0..db.ncols() {
            let mut shared = false;
            for c in 0..y_query.nrows() {
                if y_query[(c, q)] == 1.0 && y_db[(c, i)] == 1.0 {
                    shared = true;
                }
            }
            relevant.push(shared);
        }
        let positives = relevant.iter().filter(|&&r| r).count();
        if positives == 0 {
            continue;
        }
        let mut scored: Vec<(usize, usize)> = (0..db.ncols())
            .map(|i| {
                let d = (0..db.nrows()).filter(|&b| queries[(b, q)] != db[(b, i)]).count();
                (d, i)
            })
            .collect();
        scored.sort();
        let mut hits = 0.0;
        let mut sum = 0.0;
        for (pos, &(_, i)) in scored.iter().enumerate() {
            if relevant[i] {
                hits += 1.0;
                sum += hits / (pos as f64 + 1.0);
            }
        }
        aps.push(sum / positives as f64);
    }
    if aps.is_empty() {
        return Err(Error::NoValidQueries);
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Largest `r * n` accepted by [`oracle_sign_min`].
pub const SIGN_SEARCH_LIMIT: usize = 20;

/// Exhaustive minimizer of `||B - R S||_F^2` over all sign matrices.
/// Candidates are visited from all +1 downward and replaced only on strict
/// improvement, so ties resolve toward +1.
pub fn oracle_sign_min(r: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let target = r * s;
    let (rows, cols) = target.shape();
    let size = rows * cols;
    if size > SIGN_SEARCH_LIMIT {
        return Err(Error::TooLarge {
            size,
            limit: SIGN_SEARCH_LIMIT,
        });
    }
    let candidate = |mask: u32| {
        DMatrix::from_fn(
            rows,
            cols,
            |i, j| if mask >> (j * rows + i) & 1 == 1 { 1.0 } else { -1.0 },
        )
    };
    let mut best_mask = u32::MAX;
    let mut best = f64::INFINITY;
    for mask in (0..(1u32 << size)).rev() {
        let mut err = 0.0;
        for j in 0..cols {
            for i in 0..rows {
                let b = if mask >> (j * rows + i) & 1 == 1 { 1.0 } else { -1.0 };
                let d = b - target[(i, j)];
                err += d * d;
            }
        }
        if err < best {
            best = err;
            best_mask = mask;
        }
    }
    Ok(candidate(best_mask))
}

/// Orthonormalized standard-normal matrix (modified Gram-Schmidt applied
/// twice).
pub fn random_orthogonal(r: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = normal_matrix(r, r, 1.0, &mut rng);
    for _ in 0..2 {
        for j in 0..r {
            for p in 0..j {
                let proj: f64 = (0..r).map(|i| q[(i, p)] * q[(i, j)]).sum();
                for i in 0..r {
                    q[(i, j)] -= proj * q[(i, p)];
                }
            }
            let norm: f64 = (0..r).map(|i| q[(i, j)] * q[(i, j)]).sum::<f64>().sqrt();
            for i in 0..r {
                q[(i, j)] /= norm;
            }
        }
    }
    q
}
