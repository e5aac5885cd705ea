//! Alternating minimization of the joint multi-length objective.
//!
//! Each iteration updates, in order: `S^k` (all k), the back projections
//! `U_tb^k`, the forward projections `U_tf^k`, the label maps `P^k`, the chain
//! maps `T^k` (k < K), the codes `B^k` (descending k) and the rotations `R^k`.
//! Every continuous block has a ridge-type closed form that is solved through
//! a Cholesky factorization; the code block is a sign and the rotation block
//! is an orthogonal Procrustes problem.
//!
//! With a single code length every step is the exact minimizer of the
//! objective restricted to its block, so the objective never increases. With
//! several lengths the code update ignores the term in which `B^k` appears as
//! the successor of `B^{k-1}`, and convergence is judged by relative change.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    objective_unchecked, sign, validate, FeatureMatrix, HyperParams, LabelMatrix, LengthState, Modality, ModelState,
    ObjectiveBreakdown,
};

type Chol = Cholesky<f64, Dyn>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: ObjectiveBreakdown,
    /// Largest `||R^k R^k^T - I||_F` after the iteration.
    pub orthogonality_defect: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub initial_objective: f64,
    pub iterations: Vec<IterationRecord>,
    pub stop: StopReason,
}

impl TrainTrace {
    /// Objective totals, starting with the value at initialization.
    pub fn totals(&self) -> Vec<f64> {
        std::iter::once(self.initial_objective)
            .chain(self.iterations.iter().map(|r| r.objective.total))
            .collect()
    }

    pub fn final_objective(&self) -> f64 {
        self.iterations
            .last()
            .map_or(self.initial_objective, |r| r.objective.total)
    }
}

/// Relative objective change used by the stopping test.
pub fn relative_change(previous: f64, current: f64) -> f64 {
    (current - previous).abs() / previous.max(1.0)
}

fn cholesky(mut a: DMatrix<f64>, what: impl FnOnce() -> String) -> Result<Chol> {
    // Exact symmetry; products like A^T A can differ in the last bit.
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    Cholesky::new(a).ok_or_else(|| Error::SingularSystem(what()))
}

fn add_diagonal(a: &mut DMatrix<f64>, value: f64) {
    for i in 0..a.nrows() {
        a[(i, i)] += value;
    }
}

/// Returns `numer * G^{-1}` for symmetric positive-definite `G = weight *
/// gram + lambda I`, given `numer^T`.
fn ridge_right(
    numer_t: DMatrix<f64>,
    mut gram: DMatrix<f64>,
    weight: f64,
    lambda: f64,
    what: &str,
) -> Result<DMatrix<f64>> {
    gram *= weight;
    add_diagonal(&mut gram, lambda);
    let chol = cholesky(gram, || what.to_string())?;
    Ok(chol.solve(&numer_t).transpose())
}

/// Training problem data shared by all block updates.
#[derive(Clone, Copy)]
struct Problem<'a> {
    hp: &'a HyperParams,
    phi: [&'a DMatrix<f64>; 2],
    y: &'a DMatrix<f64>,
}

impl<'a> Problem<'a> {
    fn update_s(&self, k: usize, ls: &LengthState) -> Result<DMatrix<f64>> {
        let hp = self.hp;
        let (alpha, beta, omega) = (hp.alpha[k], hp.beta[k], hp.omega[k]);
        let r = ls.bits();
        let mut lhs = ls.p.tr_mul(&ls.p) * omega + ls.r.tr_mul(&ls.r);
        for t in 0..2 {
            lhs += ls.u_backward[t].tr_mul(&ls.u_backward[t]) * alpha;
        }
        add_diagonal(&mut lhs, 2.0 * beta + hp.lambda);

        let mut rhs = ls.p.tr_mul(self.y) * omega + ls.r.tr_mul(&ls.b);
        for t in 0..2 {
            // alpha U_b^T phi + beta U_f phi = (alpha U_b^T + beta U_f) phi
            let proj = ls.u_backward[t].transpose() * alpha + &ls.u_forward[t] * beta;
            rhs.gemm(1.0, &proj, self.phi[t], 1.0);
        }
        debug_assert_eq!(rhs.nrows(), r);
        let chol = cholesky(lhs, || format!("S^{}", k + 1))?;
        Ok(chol.solve(&rhs))
    }

    fn update_u_backward(&self, k: usize, t: usize, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let alpha = self.hp.alpha[k];
        // (alpha S phi^T) is the transpose of the numerator alpha phi S^T.
        let numer_t = s * self.phi[t].transpose() * alpha;
        ridge_right(
            numer_t,
            s * s.transpose(),
            alpha,
            self.hp.lambda,
            &format!("U_{}b^{}", t + 1, k + 1),
        )
    }

    fn update_u_forward(&self, k: usize, t: usize, s: &DMatrix<f64>, solver: &Chol) -> DMatrix<f64> {
        let numer_t = self.phi[t] * s.transpose() * self.hp.beta[k];
        solver.solve(&numer_t).transpose()
    }

    fn forward_system(&self, k: usize, t: usize, gram: &DMatrix<f64>) -> Result<Chol> {
        let mut a = gram * self.hp.beta[k];
        add_diagonal(&mut a, self.hp.lambda);
        cholesky(a, || format!("U_{}f^{}", t + 1, k + 1))
    }

    fn update_p(&self, k: usize, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let omega = self.hp.omega[k];
        let numer_t = s * self.y.transpose() * omega;
        ridge_right(
            numer_t,
            s * s.transpose(),
            omega,
            self.hp.lambda,
            &format!("P^{}", k + 1),
        )
    }
}

fn update_t_raw(k: usize, b: &DMatrix<f64>, b_next: &DMatrix<f64>, mu: f64, lambda: f64) -> Result<DMatrix<f64>> {
    let numer_t = b_next * b.transpose() * mu;
    ridge_right(
        numer_t,
        b_next * b_next.transpose(),
        mu,
        lambda,
        &format!("T^{}", k + 1),
    )
}

fn update_b_raw(ls: &LengthState, chain: Option<(&DMatrix<f64>, &DMatrix<f64>, f64)>) -> DMatrix<f64> {
    let mut arg = &ls.r * &ls.s;
    if let Some((t, b_next, mu)) = chain {
        arg.gemm(mu, t, b_next, 1.0);
    }
    arg.map(sign)
}

/// Orthogonal `R` minimizing `||B - R S||_F^2`: with `B S^T = W Omega V^T`,
/// `R = W V^T`.
pub fn procrustes(b: &DMatrix<f64>, s: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let m = b * s.transpose();
    let svd = m.try_svd(true, true, f64::EPSILON, 10_000)?;
    let (u, v_t) = (svd.u?, svd.v_t?);
    Some(u * v_t)
}

fn gram(phi: &DMatrix<f64>) -> DMatrix<f64> {
    phi * phi.transpose()
}

/// Cached forward-projection factorizations, keyed by the distinct beta
/// values. `phi phi^T` does not change during training.
struct ForwardSolvers {
    per_length: Vec<[Arc<Chol>; 2]>,
}

impl ForwardSolvers {
    fn new(problem: &Problem<'_>) -> Result<Self> {
        let grams: Vec<DMatrix<f64>> = problem.phi.par_iter().map(|p| gram(p)).collect();
        let mut cache: Vec<(f64, [Arc<Chol>; 2])> = Vec::new();
        let mut per_length = Vec::with_capacity(problem.hp.num_lengths());
        for k in 0..problem.hp.num_lengths() {
            let beta = problem.hp.beta[k];
            if let Some((_, pair)) = cache.iter().find(|(b, _)| *b == beta) {
                per_length.push(pair.clone());
                continue;
            }
            let built: Vec<Chol> = (0..2)
                .into_par_iter()
                .map(|t| problem.forward_system(k, t, &grams[t]))
                .collect::<Result<_>>()?;
            let mut it = built.into_iter().map(Arc::new);
            let pair = [it.next().unwrap(), it.next().unwrap()];
            cache.push((beta, pair.clone()));
            per_length.push(pair);
        }
        Ok(Self { per_length })
    }
}

fn length_rng(seed: u64, bits: usize) -> ChaCha8Rng {
    // Per-length streams: a length's initialization does not depend on which
    // other lengths are trained alongside it.
    ChaCha8Rng::seed_from_u64(seed ^ (bits as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn check_inputs(hp: &HyperParams, phi1: &FeatureMatrix, phi2: &FeatureMatrix, y: &LabelMatrix) -> Result<()> {
    hp.validate()?;
    let (m, n) = (phi1.dim(), phi1.samples());
    if phi2.as_matrix().shape() != (m, n) {
        return Err(Error::dims("phi(X2)", (m, n), phi2.as_matrix().shape()));
    }
    if y.samples() != n {
        return Err(Error::dims("Y", (y.classes(), n), (y.classes(), y.samples())));
    }
    Ok(())
}

fn init_with(problem: &Problem<'_>, forward: &ForwardSolvers, seed: u64) -> Result<ModelState> {
    let hp = problem.hp;
    let n = problem.phi[0].ncols();
    let m = problem.phi[0].nrows();
    let c = problem.y.nrows();
    let lengths = hp
        .lengths
        .par_iter()
        .enumerate()
        .map(|(k, &r)| {
            let mut rng = length_rng(seed, r);
            let s = DMatrix::from_fn(r, n, |_, _| StandardNormal.sample(&mut rng));
            let b = DMatrix::from_fn(r, n, |_, _| sign(StandardNormal.sample(&mut rng)));
            let rot = procrustes(&b, &s).ok_or(Error::SvdFailure { k: k + 1 })?;
            let u_backward = [
                problem.update_u_backward(k, 0, &s)?,
                problem.update_u_backward(k, 1, &s)?,
            ];
            let u_forward = [
                problem.update_u_forward(k, 0, &s, &forward.per_length[k][0]),
                problem.update_u_forward(k, 1, &s, &forward.per_length[k][1]),
            ];
            let p = problem.update_p(k, &s)?;
            debug_assert_eq!(p.shape(), (c, r));
            debug_assert_eq!(u_backward[0].shape(), (m, r));
            Ok(LengthState {
                s,
                b,
                r: rot,
                u_forward,
                u_backward,
                p,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let chain = hp.lengths.windows(2).map(|w| DMatrix::zeros(w[0], w[1])).collect();
    Ok(ModelState { lengths, chain })
}

/// Random initialization: Gaussian `S^k`, random signs `B^k`, the matching
/// Procrustes rotation, `T^k = 0`, and one closed-form pass for the
/// projections and label maps.
pub fn init_state(
    hp: &HyperParams,
    phi1: &FeatureMatrix,
    phi2: &FeatureMatrix,
    y: &LabelMatrix,
    seed: u64,
) -> Result<ModelState> {
    check_inputs(hp, phi1, phi2, y)?;
    let problem = Problem {
        hp,
        phi: [phi1.as_matrix(), phi2.as_matrix()],
        y: y.as_matrix(),
    };
    let forward = ForwardSolvers::new(&problem)?;
    init_with(&problem, &forward, seed)
}

fn checked<'a>(
    state: &ModelState,
    hp: &'a HyperParams,
    phi1: &'a FeatureMatrix,
    phi2: &'a FeatureMatrix,
    y: &'a LabelMatrix,
    k: usize,
) -> Result<Problem<'a>> {
    validate(state, hp, phi1, phi2, y)?;
    state.length(k)?;
    Ok(Problem {
        hp,
        phi: [phi1.as_matrix(), phi2.as_matrix()],
        y: y.as_matrix(),
    })
}

/// Closed-form minimizer of the objective over `S^k`.
pub fn update_s(
    k: usize,
    state: &ModelState,
    hp: &HyperParams,
    phi1: &FeatureMatrix,
    phi2: &FeatureMatrix,
    y: &LabelMatrix,
) -> Result<DMatrix<f64>> {
    checked(state, hp, phi1, phi2, y, k)?.update_s(k, &state.lengths[k])
}

/// `U_tb^k = alpha phi S^T (alpha S S^T + lambda I)^{-1}`.
pub fn update_u_backward(
    k: usize,
    t: Modality,
    state: &ModelState,
    hp: &HyperParams,
    phi1: &FeatureMatrix,
    phi2: &FeatureMatrix,
    y: &LabelMatrix,
) -> Result<DMatrix<f64>> {
    checked(state, hp, phi1, phi2, y, k)?.update_u_backward(k, t.slot(), &state.lengths[k].s)
}

/// `U_tf^k = beta S phi^T (beta phi phi^T + lambda I)^{-1}`.
pub fn update_u_forward(
    k: usize,
    t: Modality,
    state: &ModelState,
    hp: &HyperParams,
    phi1: &FeatureMatrix,
    phi2: &FeatureMatrix,
    y: &LabelMatrix,
) -> Result<DMatrix<f64>> {
    let problem = checked(state, hp, phi1, phi2, y, k)?;
    let solver = problem.forward_system(k, t.slot(), &gram(problem.phi[t.slot()]))?;
    Ok(problem.update_u_forward(k, t.slot(), &state.lengths[k].s, &solver))
}

/// `P^k = omega Y S^T (omega S S^T + lambda I)^{-1}`.
pub fn update_p(
    k: usize,
    state: &ModelState,
    hp: &HyperParams,
    phi1: &FeatureMatrix,
    phi2: &FeatureMatrix,
    y: &LabelMatrix,
) -> Result<DMatrix<f64>> {
    checked(state, hp, phi1, phi2, y, k)?.update_p(k, &state.lengths[k].s)
}

/// `T^k = mu B^k B^{k+1}^T (mu B^{k+1} B^{k+1}^T + lambda I)^{-1}`, defined for
/// `k < K - 1` (zero-based).
pub fn update_t(k: usize, state: &ModelState, hp: &HyperParams) -> Result<DMatrix<f64>> {
    if k + 1 >= state.lengths.len() || k >= hp.mu.len() {
        return Err(Error::IndexOutOfRange {
            what: "chain map",
            index: k,
            valid: format!("0..{}", state.lengths.len().saturating_sub(1)),
        });
    }
    update_t_raw(k, &state.lengths[k].b, &state.lengths[k + 1].b, hp.mu[k], hp.lambda)
}

/// `B^k = sgn(R^k S^k + mu^k T^k B^{k+1})`, or `sgn(R^K S^K)` for the longest
/// length.
pub fn update_b(k: usize, state: &ModelState, hp: &HyperParams) -> Result<DMatrix<f64>> {
    let ls = state.length(k)?;
    let chain = if k + 1 < state.lengths.len() {
        Some((&state.chain[k], &state.lengths[k + 1].b, hp.mu[k]))
    } else {
        None
    };
    Ok(update_b_raw(ls, chain))
}

/// Procrustes update of `R^k`.
pub fn update_r(k: usize, state: &ModelState) -> Result<DMatrix<f64>> {
    let ls = state.length(k)?;
    procrustes(&ls.b, &ls.s).ok_or(Error::SvdFailure { k: k + 1 })
}

fn iterate(problem: &Problem<'_>, forward: &ForwardSolvers, state: &mut ModelState) -> Result<()> {
    let hp = problem.hp;
    let kk = hp.num_lengths();

    // Step 1: S for every length.
    state
        .lengths
        .par_iter_mut()
        .enumerate()
        .try_for_each(|(k, ls)| -> Result<()> {
            ls.s = problem.update_s(k, ls)?;
            Ok(())
        })?;

    // Steps 2, 3 and the label map: each depends only on its own S^k.
    state
        .lengths
        .par_iter_mut()
        .enumerate()
        .try_for_each(|(k, ls)| -> Result<()> {
            let (ub, uf): (Result<Vec<_>>, Vec<_>) = rayon::join(
                || (0..2).map(|t| problem.update_u_backward(k, t, &ls.s)).collect(),
                || {
                    (0..2)
                        .map(|t| problem.update_u_forward(k, t, &ls.s, &forward.per_length[k][t]))
                        .collect()
                },
            );
            let mut ub = ub?.into_iter();
            ls.u_backward = [ub.next().unwrap(), ub.next().unwrap()];
            let mut uf = uf.into_iter();
            ls.u_forward = [uf.next().unwrap(), uf.next().unwrap()];
            Ok(())
        })?;
    state
        .lengths
        .par_iter_mut()
        .enumerate()
        .try_for_each(|(k, ls)| -> Result<()> {
            ls.p = problem.update_p(k, &ls.s)?;
            Ok(())
        })?;

    // Step 4: chain maps.
    let chain: Vec<DMatrix<f64>> = (0..kk.saturating_sub(1))
        .into_par_iter()
        .map(|k| update_t_raw(k, &state.lengths[k].b, &state.lengths[k + 1].b, hp.mu[k], hp.lambda))
        .collect::<Result<_>>()?;
    state.chain = chain;

    // Step 5: codes, longest first so each B^k sees the fresh B^{k+1}.
    for k in (0..kk).rev() {
        let b = if k + 1 < kk {
            let (head, tail) = state.lengths.split_at(k + 1);
            update_b_raw(&head[k], Some((&state.chain[k], &tail[0].b, hp.mu[k])))
        } else {
            update_b_raw(&state.lengths[k], None)
        };
        state.lengths[k].b = b;
    }

    // Step 6: rotations.
    state
        .lengths
        .par_iter_mut()
        .enumerate()
        .try_for_each(|(k, ls)| -> Result<()> {
            ls.r = procrustes(&ls.b, &ls.s).ok_or(Error::SvdFailure { k: k + 1 })?;
            Ok(())
        })?;
    Ok(())
}

/// Trains all code lengths jointly on kernelized features.
pub fn train(
    phi1: &FeatureMatrix,
    phi2: &FeatureMatrix,
    y: &LabelMatrix,
    hp: &HyperParams,
) -> Result<(ModelState, TrainTrace)> {
    check_inputs(hp, phi1, phi2, y)?;
    if phi1.samples() < 2 {
        return Err(Error::InvalidParam("training needs at least two samples".into()));
    }
    let problem = Problem {
        hp,
        phi: [phi1.as_matrix(), phi2.as_matrix()],
        y: y.as_matrix(),
    };
    let forward = ForwardSolvers::new(&problem)?;
    let mut state = init_with(&problem, &forward, hp.seed)?;
    let initial = objective_unchecked(&state, hp, problem.phi, problem.y).total;
    log::debug!("initial objective {initial:.6e}");

    let mut iterations = Vec::new();
    let mut previous = initial;
    let mut stop = StopReason::MaxIter;
    for iteration in 1..=hp.max_iter {
        let started = Instant::now();
        iterate(&problem, &forward, &mut state)?;
        if !state.is_finite() {
            return Err(Error::NonFinite {
                what: "model state",
                row: 0,
                col: iteration,
            });
        }
        let objective = objective_unchecked(&state, hp, problem.phi, problem.y);
        let current = objective.total;
        let record = IterationRecord {
            iteration,
            orthogonality_defect: state.max_orthogonality_defect(),
            seconds: started.elapsed().as_secs_f64(),
            objective,
        };
        log::debug!(
            "iteration {iteration}: objective {current:.6e} ({:.3}s)",
            record.seconds
        );
        iterations.push(record);
        if relative_change(previous, current) < hp.tol {
            stop = StopReason::Converged;
            break;
        }
        previous = current;
    }
    Ok((
        state,
        TrainTrace {
            initial_objective: initial,
            iterations,
            stop,
        },
    ))
}
