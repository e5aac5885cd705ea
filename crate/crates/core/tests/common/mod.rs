//! Test-only reference implementations. Nothing here calls into the solver
//! or the objective code it is used to check.

#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xmhash_core::model::{FeatureMatrix, HyperParams, LabelMatrix, LengthState, ModelState};
use xmhash_core::synth::random_orthogonal;

/// `||A B - C||_F^2` with explicit loops.
fn residual_sq(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> f64 {
    let mut total = 0.0;
    for i in 0..a.nrows() {
        for j in 0..b.ncols() {
            let mut v = 0.0;
            for p in 0..a.ncols() {
                v += a[(i, p)] * b[(p, j)];
            }
            let d = v - c[(i, j)];
            total += d * d;
        }
    }
    total
}

fn frob_sq(a: &DMatrix<f64>) -> f64 {
    let mut total = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            total += a[(i, j)] * a[(i, j)];
        }
    }
    total
}

/// Sum-of-squared-residuals evaluation of the full training objective.
pub fn naive_objective(state: &ModelState, hp: &HyperParams, phi: [&DMatrix<f64>; 2], y: &DMatrix<f64>) -> f64 {
    let mut total = 0.0;
    let mut reg = 0.0;
    for (k, ls) in state.lengths.iter().enumerate() {
        for t in 0..2 {
            total += hp.beta[k] * residual_sq(&ls.u_forward[t], phi[t], &ls.s);
            total += hp.alpha[k] * residual_sq(&ls.u_backward[t], &ls.s, phi[t]);
            reg += frob_sq(&ls.u_forward[t]) + frob_sq(&ls.u_backward[t]);
        }
        // ||B - R S||^2 = ||R S - B||^2
        total += residual_sq(&ls.r, &ls.s, &ls.b);
        total += hp.omega[k] * residual_sq(&ls.p, &ls.s, y);
        reg += frob_sq(&ls.s) + frob_sq(&ls.p);
    }
    for (k, t) in state.chain.iter().enumerate() {
        total += hp.mu[k] * residual_sq(t, &state.lengths[k + 1].b, &state.lengths[k].b);
        reg += frob_sq(t);
    }
    total + hp.lambda * reg
}

/// Central finite-difference gradient of `f` with respect to every entry of
/// `x`.
pub fn fd_gradient(x: &DMatrix<f64>, eps: f64, mut f: impl FnMut(&DMatrix<f64>) -> f64) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(x.nrows(), x.ncols());
    let mut probe = x.clone();
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            let orig = probe[(i, j)];
            probe[(i, j)] = orig + eps;
            let up = f(&probe);
            probe[(i, j)] = orig - eps;
            let down = f(&probe);
            probe[(i, j)] = orig;
            g[(i, j)] = (up - down) / (2.0 * eps);
        }
    }
    g
}

pub struct Instance {
    pub hp: HyperParams,
    pub state: ModelState,
    pub phi1: FeatureMatrix,
    pub phi2: FeatureMatrix,
    pub y: LabelMatrix,
}

impl Instance {
    pub fn phi(&self) -> [&DMatrix<f64>; 2] {
        [self.phi1.as_matrix(), self.phi2.as_matrix()]
    }

    pub fn objective(&self, state: &ModelState) -> f64 {
        naive_objective(state, &self.hp, self.phi(), self.y.as_matrix())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| (rng.random::<f64>() * 2.0 - 1.0) * scale)
}

/// Random valid state for the given lengths, with every block nonzero.
pub fn random_instance(lengths: &[usize], n: usize, m: usize, c: usize, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hp = HyperParams::with_lengths(lengths);
    hp.alpha = lengths.iter().map(|_| 0.5 + rng.random::<f64>()).collect();
    hp.beta = lengths.iter().map(|_| 1.0 + rng.random::<f64>() * 3.0).collect();
    hp.omega = lengths.iter().map(|_| 0.5 + rng.random::<f64>() * 2.0).collect();
    hp.mu = (1..lengths.len()).map(|_| 0.3 + rng.random::<f64>()).collect();
    hp.lambda = 0.2 + rng.random::<f64>();
    let phi1 = FeatureMatrix::new(DMatrix::from_fn(m, n, |_, _| rng.random::<f64>() * 0.99 + 0.01)).unwrap();
    let phi2 = FeatureMatrix::new(DMatrix::from_fn(m, n, |_, _| rng.random::<f64>() * 0.99 + 0.01)).unwrap();
    let classes: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
    let y = LabelMatrix::one_hot(c, &classes).unwrap();
    let lengths_state = lengths
        .iter()
        .map(|&r| LengthState {
            s: gaussian(&mut rng, r, n, 1.0),
            b: DMatrix::from_fn(r, n, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 }),
            r: random_orthogonal(r, rng.random()),
            u_forward: [gaussian(&mut rng, r, m, 0.5), gaussian(&mut rng, r, m, 0.5)],
            u_backward: [gaussian(&mut rng, m, r, 0.5), gaussian(&mut rng, m, r, 0.5)],
            p: gaussian(&mut rng, c, r, 0.5),
        })
        .collect();
    let chain = lengths
        .windows(2)
        .map(|w| gaussian(&mut rng, w[0], w[1], 0.3))
        .collect();
    Instance {
        hp,
        state: ModelState {
            lengths: lengths_state,
            chain,
        },
        phi1,
        phi2,
        y,
    }
}

/// Finite-difference gradient norm at the updated block, relative to the
/// gradient norm at the block's value before the update.
pub fn relative_gradient(
    before: &DMatrix<f64>,
    after: &DMatrix<f64>,
    eps: f64,
    mut f: impl FnMut(&DMatrix<f64>) -> f64,
) -> f64 {
    let g_after = fd_gradient(after, eps, &mut f);
    let g_before = fd_gradient(before, eps, &mut f);
    g_after.norm() / g_before.norm()
}

/// Small random sign matrix.
pub fn random_signs(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 })
}

/// Multi-label matrix with each class active with probability `p`.
pub fn random_labels(classes: usize, n: usize, p: f64, rng: &mut ChaCha8Rng) -> LabelMatrix {
    LabelMatrix::new(DMatrix::from_fn(classes, n, |_, _| {
        if rng.random::<f64>() < p {
            1.0
        } else {
            0.0
        }
    }))
    .unwrap()
}
