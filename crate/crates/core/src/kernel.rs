//! RBF anchor features: `phi(x)_j = exp(-||x - a_j||^2 / (2 sigma^2))` for
//! `m` anchors sampled from the training set.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{FeatureMatrix, Modality};

/// Anchor points of one modality, stored as the columns of a `d x m` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    pub modality: Modality,
    pub points: DMatrix<f64>,
    /// Source sample index of each anchor column.
    pub indices: Vec<usize>,
    /// The anchor count asked for before clamping to the sample count.
    pub requested: usize,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.points.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.points.ncols() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.nrows()
    }

    pub fn was_clamped(&self) -> bool {
        self.requested > self.len()
    }
}

/// Picks `min(m, n)` distinct columns of `x` uniformly without replacement.
pub fn select_anchors(x: &FeatureMatrix, modality: Modality, m: usize, seed: u64) -> Result<AnchorSet> {
    let n = x.samples();
    if n == 0 {
        return Err(Error::EmptyInput("anchor population"));
    }
    if m == 0 {
        return Err(Error::InvalidParam("anchor count must be at least 1".into()));
    }
    let take = m.min(n);
    if take < m {
        log::warn!(
            "anchor count clamped from {m} to {n} (sample count) for modality {}",
            modality.number()
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices = rand::seq::index::sample(&mut rng, n, take).into_vec();
    Ok(AnchorSet {
        modality,
        points: x.as_matrix().select_columns(&indices),
        indices,
        requested: m,
    })
}

fn check_dim(x: &FeatureMatrix, anchors: &AnchorSet) -> Result<()> {
    if anchors.is_empty() {
        return Err(Error::EmptyInput("anchor set"));
    }
    if anchors.dim() != x.dim() {
        return Err(Error::DimensionMismatch {
            symbol: format!("anchors of modality {}", anchors.modality.number()),
            expected: format!("dimension {}", x.dim()),
            actual: format!("dimension {}", anchors.dim()),
        });
    }
    Ok(())
}

/// Squared Euclidean distances, `m x n`, entry `(j, i) = ||x_i - a_j||^2`.
/// Computed from coordinate differences so that a sample coinciding with an
/// anchor yields exactly zero.
fn squared_distances(x: &DMatrix<f64>, anchors: &DMatrix<f64>) -> DMatrix<f64> {
    let m = anchors.ncols();
    let n = x.ncols();
    let mut out = DMatrix::zeros(m, n);
    out.as_mut_slice().par_chunks_mut(m).enumerate().for_each(|(i, col)| {
        let xi = x.column(i);
        for (j, slot) in col.iter_mut().enumerate() {
            let aj = anchors.column(j);
            *slot = xi.iter().zip(aj.iter()).map(|(p, q)| (p - q) * (p - q)).sum();
        }
    });
    out
}

/// Mean Euclidean distance between every sample and every anchor.
pub fn compute_sigma(x: &FeatureMatrix, anchors: &AnchorSet) -> Result<f64> {
    check_dim(x, anchors)?;
    let d2 = squared_distances(x.as_matrix(), &anchors.points);
    // Column sums first so the reduction order is fixed.
    let total: f64 = d2.column_iter().map(|c| c.iter().map(|v| v.sqrt()).sum::<f64>()).sum();
    let sigma = total / (d2.len() as f64);
    if !(sigma > 0.0) {
        return Err(Error::DegenerateSigma {
            modality: anchors.modality.number(),
        });
    }
    Ok(sigma)
}

/// Maps `x` (`d x n`) to its `m x n` RBF anchor features.
pub fn kernelize(x: &FeatureMatrix, anchors: &AnchorSet, sigma: f64) -> Result<FeatureMatrix> {
    check_dim(x, anchors)?;
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParam(format!(
            "kernel width must be positive, got {sigma}"
        )));
    }
    let scale = -1.0 / (2.0 * sigma * sigma);
    let mut phi = squared_distances(x.as_matrix(), &anchors.points);
    phi.apply(|v| *v = (*v * scale).exp());
    FeatureMatrix::new(phi)
}

/// Anchors and kernel width of one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityKernel {
    pub anchors: AnchorSet,
    pub sigma: f64,
}

impl ModalityKernel {
    /// Samples anchors and estimates the width on training data.
    pub fn fit(x: &FeatureMatrix, modality: Modality, m: usize, seed: u64) -> Result<Self> {
        let anchors = select_anchors(x, modality, m, seed)?;
        let sigma = compute_sigma(x, &anchors)?;
        Ok(Self { anchors, sigma })
    }

    pub fn transform(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        kernelize(x, &self.anchors, self.sigma)
    }
}

/// The feature map of both modalities; stored with the model so queries are
/// encoded with the exact map used in training.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelModel {
    pub modalities: [ModalityKernel; 2],
}

impl KernelModel {
    /// Fits both modalities; anchors of modality 1 use `seed`, modality 2
    /// uses `seed + 1`.
    pub fn fit(x1: &FeatureMatrix, x2: &FeatureMatrix, m: usize, seed: u64) -> Result<Self> {
        if x1.samples() != x2.samples() {
            return Err(Error::dims("X2", (x2.dim(), x1.samples()), (x2.dim(), x2.samples())));
        }
        Ok(Self {
            modalities: [
                ModalityKernel::fit(x1, Modality::First, m, seed)?,
                ModalityKernel::fit(x2, Modality::Second, m, seed.wrapping_add(1))?,
            ],
        })
    }

    pub fn modality(&self, t: Modality) -> &ModalityKernel {
        &self.modalities[t.slot()]
    }

    /// Number of anchors (shared by both modalities).
    pub fn anchors(&self) -> usize {
        self.modalities[0].anchors.len()
    }

    pub fn transform(&self, t: Modality, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        self.modality(t).transform(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mat(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> FeatureMatrix {
        FeatureMatrix::new(DMatrix::from_fn(rows, cols, f)).unwrap()
    }

    fn pseudo(i: usize, j: usize) -> f64 {
        ((i * 31 + j * 17) as f64 * 0.618).sin() * 3.0
    }

    #[test]
    fn all_columns_when_m_equals_n() {
        let x = mat(3, 5, pseudo);
        let a = select_anchors(&x, Modality::First, 5, 7).unwrap();
        let mut idx = a.indices.clone();
        idx.sort_unstable();
        assert_eq!(idx, vec![0, 1, 2, 3, 4]);
        assert!(!a.was_clamped());
    }

    #[test]
    fn anchor_count_is_clamped() {
        let x = mat(2, 3, pseudo);
        let a = select_anchors(&x, Modality::First, 10, 0).unwrap();
        assert_eq!(a.len(), 3);
        assert!(a.was_clamped());
    }

    #[test]
    fn anchor_selection_is_deterministic() {
        let x = mat(2, 2000, pseudo);
        let a = select_anchors(&x, Modality::Second, 1000, 99).unwrap();
        let b = select_anchors(&x, Modality::Second, 1000, 99).unwrap();
        assert_eq!(a.indices, b.indices);
        let mut sorted = a.indices.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 1000);
        for (col, &src) in a.indices.iter().enumerate() {
            assert_eq!(a.points.column(col), x.as_matrix().column(src));
        }
    }

    fn anchors_from(points: DMatrix<f64>) -> AnchorSet {
        let m = points.ncols();
        AnchorSet {
            modality: Modality::First,
            points,
            indices: (0..m).collect(),
            requested: m,
        }
    }

    #[test]
    fn sigma_single_pair() {
        let x = mat(2, 1, |i, _| if i == 0 { 2.0 } else { 0.0 });
        let a = anchors_from(DMatrix::zeros(2, 1));
        assert_eq!(compute_sigma(&x, &a).unwrap(), 2.0);
    }

    #[test]
    fn sigma_is_mean_distance() {
        let x = FeatureMatrix::new(DMatrix::from_row_slice(1, 2, &[1.0, 5.0])).unwrap();
        let a = anchors_from(DMatrix::from_element(1, 1, 1.0));
        assert_eq!(compute_sigma(&x, &a).unwrap(), 2.0);
    }

    #[test]
    fn sigma_matches_double_loop() {
        let x = mat(10, 20, pseudo);
        let a = select_anchors(&x, Modality::First, 5, 3).unwrap();
        let mut total = 0.0;
        for i in 0..20 {
            for j in 0..5 {
                let mut d = 0.0;
                for r in 0..10 {
                    let diff = x.as_matrix()[(r, i)] - a.points[(r, j)];
                    d += diff * diff;
                }
                total += d.sqrt();
            }
        }
        let oracle = total / 100.0;
        assert!((compute_sigma(&x, &a).unwrap() - oracle).abs() <= 1e-12 * oracle.max(1.0));
    }

    #[test]
    fn degenerate_sigma() {
        let x = mat(3, 4, |_, _| 1.5);
        let a = select_anchors(&x, Modality::Second, 2, 0).unwrap();
        assert!(matches!(
            compute_sigma(&x, &a),
            Err(Error::DegenerateSigma { modality: 2 })
        ));
    }

    #[test]
    fn kernel_values() {
        let x = FeatureMatrix::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 1.0])).unwrap();
        let a = anchors_from(DMatrix::zeros(2, 1));
        let phi = kernelize(&x, &a, 1.0).unwrap();
        assert_eq!(phi.as_matrix()[(0, 0)], 1.0);
        // ||x_1 - a||^2 = 2, sigma = 1 -> exp(-1)
        assert_eq!(phi.as_matrix()[(0, 1)], (-1.0f64).exp());
    }

    #[test]
    fn wide_kernel_saturates() {
        let x = mat(4, 6, pseudo);
        let a = select_anchors(&x, Modality::First, 3, 1).unwrap();
        let phi = kernelize(&x, &a, 1e9).unwrap();
        assert!(phi.as_matrix().iter().all(|&v| (v - 1.0).abs() <= 1e-9));
    }

    #[test]
    fn dimension_mismatch() {
        let x = mat(4, 6, pseudo);
        let a = anchors_from(DMatrix::zeros(3, 2));
        assert!(matches!(kernelize(&x, &a, 1.0), Err(Error::DimensionMismatch { .. })));
    }

    proptest! {
        #[test]
        fn features_in_unit_interval_and_shift_invariant(
            vals in proptest::collection::vec(-5.0f64..5.0, 24),
            shift in proptest::collection::vec(-100.0f64..100.0, 3),
            seed in 0u64..1000,
        ) {
            let x = FeatureMatrix::from_column_slice(3, 8, &vals).unwrap();
            let a = select_anchors(&x, Modality::First, 4, seed).unwrap();
            let sigma = compute_sigma(&x, &a).unwrap();
            let phi = kernelize(&x, &a, sigma).unwrap();
            prop_assert!(phi.as_matrix().iter().all(|&v| v > 0.0 && v <= 1.0));

            let shifted = FeatureMatrix::new(DMatrix::from_fn(3, 8, |i, j| vals[j * 3 + i] + shift[i])).unwrap();
            let a_shifted = AnchorSet {
                points: DMatrix::from_fn(3, 4, |i, j| a.points[(i, j)] + shift[i]),
                ..a.clone()
            };
            let phi_shifted = kernelize(&shifted, &a_shifted, sigma).unwrap();
            for (p, q) in phi.as_matrix().iter().zip(phi_shifted.as_matrix().iter()) {
                prop_assert!((p - q).abs() <= 1e-12);
            }
        }
    }
}
