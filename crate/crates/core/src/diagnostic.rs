//! Post-training check that the latent space preserves pairwise distances of
//! the kernel features within the bounds implied by the bidirectional
//! projection residuals.
//!
//! For a pair of samples `(i, j)` with `dphi = phi_i - phi_j` and
//! `ds = s_i - s_j`, the residual differences are
//! `dxi_f = ds - U_f dphi` and `dxi_b = dphi - U_b ds`. The triangle
//! inequality together with `||A x|| <= ||A||_F ||x||` gives
//!
//! ```text
//! (||dphi|| - ||dxi_b||) / ||U_b||_F  <=  ||ds||  <=  ||U_f||_F ||dphi|| + ||dxi_f||
//! ```
//!
//! and this module reports the slack of both sides.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FeatureMatrix, Modality, ModelState};

/// Slack below which a bound counts as violated.
pub const SLACK_TOLERANCE: f64 = -1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairSlack {
    pub i: usize,
    pub j: usize,
    pub latent_distance: f64,
    pub feature_distance: f64,
    /// `psi_1 = ||dxi_b|| / ||U_b||_F`.
    pub psi_lower: f64,
    /// `psi_2 = ||dxi_f||`.
    pub psi_upper: f64,
    /// `||ds|| - (D1 ||dphi|| - psi_1)`.
    pub lower_slack: f64,
    /// `D2 ||dphi|| + psi_2 - ||ds||`.
    pub upper_slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiLipschitzReport {
    pub k: usize,
    pub modality: usize,
    /// `1 / ||U_b||_F`; infinite when the back projection vanishes.
    pub d1: f64,
    /// `||U_f||_F`.
    pub d2: f64,
    pub pairs: Vec<PairSlack>,
}

impl BiLipschitzReport {
    pub fn min_lower_slack(&self) -> f64 {
        self.pairs.iter().map(|p| p.lower_slack).fold(f64::INFINITY, f64::min)
    }

    pub fn min_upper_slack(&self) -> f64 {
        self.pairs.iter().map(|p| p.upper_slack).fold(f64::INFINITY, f64::min)
    }

    pub fn holds(&self) -> bool {
        self.min_lower_slack() >= SLACK_TOLERANCE && self.min_upper_slack() >= SLACK_TOLERANCE
    }
}

/// Evaluates both distance bounds for `pair_count` random sample pairs.
/// `phi` must be the kernelized training features of `modality` that `state`
/// was trained on.
pub fn bilipschitz_diagnostic(
    state: &ModelState,
    phi: &FeatureMatrix,
    k: usize,
    modality: Modality,
    pair_count: usize,
    seed: u64,
) -> Result<BiLipschitzReport> {
    let ls = state.length(k)?;
    if pair_count == 0 {
        return Err(Error::InvalidParam("pair_count must be at least 1".into()));
    }
    let n = ls.s.ncols();
    let m = ls.u_forward[0].ncols();
    if phi.samples() != n || phi.dim() != m {
        return Err(Error::dims("phi(X)", (m, n), (phi.dim(), phi.samples())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<(usize, usize)> = (0..pair_count)
        .map(|_| (rng.random_range(0..n), rng.random_range(0..n)))
        .collect();
    bilipschitz_for_pairs(state, phi, k, modality, &pairs)
}

/// Same as [`bilipschitz_diagnostic`] for an explicit list of pairs.
pub fn bilipschitz_for_pairs(
    state: &ModelState,
    phi: &FeatureMatrix,
    k: usize,
    modality: Modality,
    pairs: &[(usize, usize)],
) -> Result<BiLipschitzReport> {
    let ls = state.length(k)?;
    let t = modality.slot();
    let u_f = &ls.u_forward[t];
    let u_b = &ls.u_backward[t];
    let phi = phi.as_matrix();
    let n = ls.s.ncols();
    if phi.ncols() != n || phi.nrows() != u_f.ncols() {
        return Err(Error::dims("phi(X)", (u_f.ncols(), n), phi.shape()));
    }
    let norm_b = u_b.norm();
    let norm_f = u_f.norm();

    let mut out = Vec::with_capacity(pairs.len());
    for &(i, j) in pairs {
        if i >= n || j >= n {
            return Err(Error::IndexOutOfRange {
                what: "sample",
                index: i.max(j),
                valid: format!("0..{n}"),
            });
        }
        let dphi: DVector<f64> = phi.column(i) - phi.column(j);
        let ds: DVector<f64> = ls.s.column(i) - ls.s.column(j);
        let xi_f = &ds - u_f * &dphi;
        let xi_b = &dphi - u_b * &ds;
        let feature_distance = dphi.norm();
        let latent_distance = ds.norm();
        let psi_upper = xi_f.norm();
        let (psi_lower, lower_bound) = if norm_b > 0.0 {
            let psi = xi_b.norm() / norm_b;
            (psi, feature_distance / norm_b - psi)
        } else {
            // U_b = 0 makes dxi_b = dphi, so the bound degenerates to 0.
            (f64::INFINITY, 0.0)
        };
        out.push(PairSlack {
            i,
            j,
            latent_distance,
            feature_distance,
            psi_lower,
            psi_upper,
            lower_slack: latent_distance - lower_bound,
            upper_slack: norm_f * feature_distance + psi_upper - latent_distance,
        });
    }
    Ok(BiLipschitzReport {
        k,
        modality: modality.number(),
        d1: if norm_b > 0.0 { 1.0 / norm_b } else { f64::INFINITY },
        d2: norm_f,
        pairs: out,
    })
}
