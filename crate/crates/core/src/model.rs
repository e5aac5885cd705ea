//! Domain types shared by every stage of the pipeline and the training
//! objective.
//!
//! Matrices follow the column-per-sample convention throughout: a feature
//! matrix is `d x n`, a latent representation `S^k` is `r_k x n`, codes
//! `B^k` are `r_k x n` with entries in {-1, +1}.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum Frobenius defect of `R R^T - I` accepted by [`validate`].
pub const ORTHOGONALITY_TOLERANCE: f64 = 1e-8;

/// Sign with the tie rule `sgn(0) = +1`.
#[inline]
pub fn sign(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Dense real matrix with one column per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix(DMatrix<f64>);

impl FeatureMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::EmptyInput("feature matrix"));
        }
        if let Some((idx, _)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "feature matrix",
                row: idx % values.nrows(),
                col: idx / values.nrows(),
            });
        }
        Ok(Self(values))
    }

    /// Builds a `rows x cols` matrix from column-major values.
    pub fn from_column_slice(rows: usize, cols: usize, values: &[f64]) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::dims("feature values", (rows, cols), (values.len(), 1)));
        }
        Self::new(DMatrix::from_column_slice(rows, cols, values))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn samples(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Columns at the given sample indices, in order.
    pub fn select_samples(&self, indices: &[usize]) -> FeatureMatrix {
        FeatureMatrix(self.0.select_columns(indices))
    }
}

impl AsRef<DMatrix<f64>> for FeatureMatrix {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Multi-label ground truth, `c x n`, entries in {0, 1}.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix(DMatrix<f64>);

impl LabelMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::EmptyInput("label matrix"));
        }
        for (col, column) in values.column_iter().enumerate() {
            for (row, &v) in column.iter().enumerate() {
                if v != 0.0 && v != 1.0 {
                    return Err(Error::InvalidParam(format!(
                        "label entry ({row}, {col}) is {v}, expected 0 or 1"
                    )));
                }
            }
        }
        let unlabeled = values.column_iter().filter(|c| c.iter().all(|&v| v == 0.0)).count();
        if unlabeled > 0 {
            log::warn!("{unlabeled} of {} samples carry no label", values.ncols());
        }
        Ok(Self(values))
    }

    /// One-hot labels for class indices in `0..classes`.
    pub fn one_hot(classes: usize, assignment: &[usize]) -> Result<Self> {
        let mut y = DMatrix::zeros(classes, assignment.len());
        for (i, &class) in assignment.iter().enumerate() {
            if class >= classes {
                return Err(Error::IndexOutOfRange {
                    what: "class",
                    index: class,
                    valid: format!("0..{classes}"),
                });
            }
            y[(class, i)] = 1.0;
        }
        Self::new(y)
    }

    pub fn classes(&self) -> usize {
        self.0.nrows()
    }

    pub fn samples(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// Whether sample `i` carries class `class`.
    #[inline]
    pub fn has(&self, class: usize, i: usize) -> bool {
        self.0[(class, i)] != 0.0
    }

    pub fn select_samples(&self, indices: &[usize]) -> LabelMatrix {
        LabelMatrix(self.0.select_columns(indices))
    }
}

/// One of the two modalities, numbered 1 and 2 externally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    First,
    Second,
}

impl Modality {
    pub const BOTH: [Modality; 2] = [Modality::First, Modality::Second];

    /// Zero-based slot for per-modality arrays.
    pub fn slot(self) -> usize {
        match self {
            Modality::First => 0,
            Modality::Second => 1,
        }
    }

    pub fn number(self) -> usize {
        self.slot() + 1
    }

    pub fn from_number(t: usize) -> Result<Self> {
        match t {
            1 => Ok(Modality::First),
            2 => Ok(Modality::Second),
            _ => Err(Error::IndexOutOfRange {
                what: "modality",
                index: t,
                valid: "1 or 2".into(),
            }),
        }
    }
}

/// Training hyperparameters. Per-length weights are indexed by code length
/// position `k`; `mu` has one entry per adjacent pair of lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub lengths: Vec<usize>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub mu: Vec<f64>,
    pub omega: Vec<f64>,
    pub lambda: f64,
    pub anchors: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl HyperParams {
    pub const DEFAULT_ALPHA: f64 = 0.5;
    pub const DEFAULT_BETA: f64 = 1e3;
    pub const DEFAULT_MU: f64 = 1e-6;
    pub const DEFAULT_OMEGA: f64 = 1e3;
    pub const DEFAULT_LAMBDA: f64 = 5.0;
    pub const DEFAULT_ANCHORS: usize = 1000;
    pub const DEFAULT_MAX_ITER: usize = 50;
    pub const DEFAULT_TOL: f64 = 1e-5;

    /// Default weights broadcast over the given code lengths.
    pub fn with_lengths(lengths: &[usize]) -> Self {
        let k = lengths.len();
        Self {
            lengths: lengths.to_vec(),
            alpha: vec![Self::DEFAULT_ALPHA; k],
            beta: vec![Self::DEFAULT_BETA; k],
            mu: vec![Self::DEFAULT_MU; k.saturating_sub(1)],
            omega: vec![Self::DEFAULT_OMEGA; k],
            lambda: Self::DEFAULT_LAMBDA,
            anchors: Self::DEFAULT_ANCHORS,
            max_iter: Self::DEFAULT_MAX_ITER,
            tol: Self::DEFAULT_TOL,
            seed: 0,
        }
    }

    pub fn num_lengths(&self) -> usize {
        self.lengths.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.lengths.len();
        if k == 0 {
            return Err(Error::InvalidParam("at least one code length is required".into()));
        }
        if self.lengths[0] == 0 || self.lengths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::NonIncreasingLengths(self.lengths.clone()));
        }
        for (name, values, expected) in [
            ("alpha", &self.alpha, k),
            ("beta", &self.beta, k),
            ("mu", &self.mu, k - 1),
            ("omega", &self.omega, k),
        ] {
            if values.len() != expected {
                return Err(Error::InvalidParam(format!(
                    "{name} has {} entries, expected {expected}",
                    values.len()
                )));
            }
            for &v in values.iter() {
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::NegativeWeight {
                        name: name.into(),
                        value: v,
                    });
                }
            }
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidParam(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if self.anchors == 0 {
            return Err(Error::InvalidParam("anchors must be at least 1".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParam("max_iter must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParam(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

/// Learned variables for one code length `r_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LengthState {
    /// Latent representation, `r x n`.
    pub s: DMatrix<f64>,
    /// Binary codes, `r x n`, entries +1/-1.
    pub b: DMatrix<f64>,
    /// Orthogonal rotation, `r x r`.
    pub r: DMatrix<f64>,
    /// Forward projections per modality, `r x m`.
    pub u_forward: [DMatrix<f64>; 2],
    /// Back projections per modality, `m x r`.
    pub u_backward: [DMatrix<f64>; 2],
    /// Label reconstruction, `c x r`.
    pub p: DMatrix<f64>,
}

impl LengthState {
    pub fn bits(&self) -> usize {
        self.r.nrows()
    }
}

/// All learned variables: one [`LengthState`] per code length plus the
/// chain maps `T^k` (`r_k x r_{k+1}`) between adjacent lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub lengths: Vec<LengthState>,
    pub chain: Vec<DMatrix<f64>>,
}

impl ModelState {
    pub fn num_lengths(&self) -> usize {
        self.lengths.len()
    }

    pub fn length(&self, k: usize) -> Result<&LengthState> {
        self.lengths.get(k).ok_or_else(|| Error::IndexOutOfRange {
            what: "length",
            index: k,
            valid: format!("0..{}", self.lengths.len()),
        })
    }

    /// Largest `||R^k R^k^T - I||_F` over all lengths.
    pub fn max_orthogonality_defect(&self) -> f64 {
        self.lengths
            .iter()
            .map(|l| orthogonality_defect(&l.r))
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        let finite = |m: &DMatrix<f64>| m.iter().all(|v| v.is_finite());
        self.lengths.iter().all(|l| {
            finite(&l.s)
                && finite(&l.b)
                && finite(&l.r)
                && l.u_forward.iter().all(finite)
                && l.u_backward.iter().all(finite)
                && finite(&l.p)
        }) && self.chain.iter().all(finite)
    }
}

/// `||R R^T - I||_F`.
pub fn orthogonality_defect(r: &DMatrix<f64>) -> f64 {
    let n = r.nrows();
    let mut gram = r * r.transpose();
    for i in 0..n {
        gram[(i, i)] -= 1.0;
    }
    gram.norm()
}

fn check_shape(symbol: String, m: &DMatrix<f64>, expected: (usize, usize)) -> Result<()> {
    if m.shape() != expected {
        return Err(Error::dims(symbol, expected, m.shape()));
    }
    Ok(())
}

/// Checks every invariant of the state against the hyperparameters and the
/// training data shapes.
pub fn validate(
    state: &ModelState,
    hp: &HyperParams,
    phi1: &FeatureMatrix,
    phi2: &FeatureMatrix,
    y: &LabelMatrix,
) -> Result<()> {
    hp.validate()?;
    let n = phi1.samples();
    let m = phi1.dim();
    let c = y.classes();
    check_shape("phi(X2)".into(), phi2.as_matrix(), (m, n))?;
    check_shape("Y".into(), y.as_matrix(), (c, n))?;
    let kk = hp.num_lengths();
    if state.lengths.len() != kk {
        return Err(Error::DimensionMismatch {
            symbol: "number of lengths".into(),
            expected: kk.to_string(),
            actual: state.lengths.len().to_string(),
        });
    }
    if state.chain.len() != kk - 1 {
        return Err(Error::DimensionMismatch {
            symbol: "number of chain maps T".into(),
            expected: (kk - 1).to_string(),
            actual: state.chain.len().to_string(),
        });
    }
    for (k, (ls, &r)) in state.lengths.iter().zip(&hp.lengths).enumerate() {
        let idx = k + 1;
        check_shape(format!("S^{idx}"), &ls.s, (r, n))?;
        check_shape(format!("B^{idx}"), &ls.b, (r, n))?;
        check_shape(format!("R^{idx}"), &ls.r, (r, r))?;
        for t in 0..2 {
            check_shape(format!("U_{}f^{idx}", t + 1), &ls.u_forward[t], (r, m))?;
            check_shape(format!("U_{}b^{idx}", t + 1), &ls.u_backward[t], (m, r))?;
        }
        check_shape(format!("P^{idx}"), &ls.p, (c, r))?;
        for (col, column) in ls.b.column_iter().enumerate() {
            if let Some((row, &value)) = column.iter().enumerate().find(|(_, &v)| v != 1.0 && v != -1.0) {
                return Err(Error::NonBinaryCode {
                    k: idx,
                    row,
                    col,
                    value,
                });
            }
        }
        let defect = orthogonality_defect(&ls.r);
        if !(defect <= ORTHOGONALITY_TOLERANCE) {
            return Err(Error::NonOrthogonalRotation { k: idx, defect });
        }
    }
    for (k, t) in state.chain.iter().enumerate() {
        check_shape(format!("T^{}", k + 1), t, (hp.lengths[k], hp.lengths[k + 1]))?;
    }
    Ok(())
}

/// Weighted terms of the objective for one code length.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LengthTerms {
    pub forward: f64,
    pub backward: f64,
    pub quantization: f64,
    pub label: f64,
}

/// Term-by-term decomposition of the training objective. Every field is
/// already multiplied by its weight, so `total` is their plain sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    pub lengths: Vec<LengthTerms>,
    pub chain: Vec<f64>,
    pub regularizer: f64,
    pub total: f64,
}

impl ObjectiveBreakdown {
    pub fn sum_of_parts(&self) -> f64 {
        self.lengths
            .iter()
            .map(|t| t.forward + t.backward + t.quantization + t.label)
            .sum::<f64>()
            + self.chain.iter().sum::<f64>()
            + self.regularizer
    }
}

fn sq_norm(m: &DMatrix<f64>) -> f64 {
    m.norm_squared()
}

/// Evaluates the full training objective after validating the state.
pub fn objective(
    state: &ModelState,
    hp: &HyperParams,
    phi1: &FeatureMatrix,
    phi2: &FeatureMatrix,
    y: &LabelMatrix,
) -> Result<ObjectiveBreakdown> {
    validate(state, hp, phi1, phi2, y)?;
    Ok(objective_unchecked(
        state,
        hp,
        [phi1.as_matrix(), phi2.as_matrix()],
        y.as_matrix(),
    ))
}

pub(crate) fn objective_unchecked(
    state: &ModelState,
    hp: &HyperParams,
    phi: [&DMatrix<f64>; 2],
    y: &DMatrix<f64>,
) -> ObjectiveBreakdown {
    let mut terms = Vec::with_capacity(state.lengths.len());
    let mut regularizer = 0.0;
    for (k, ls) in state.lengths.iter().enumerate() {
        let mut forward = 0.0;
        let mut backward = 0.0;
        for t in 0..2 {
            forward += sq_norm(&(&ls.u_forward[t] * phi[t] - &ls.s));
            backward += sq_norm(&(&ls.u_backward[t] * &ls.s - phi[t]));
            regularizer += sq_norm(&ls.u_forward[t]) + sq_norm(&ls.u_backward[t]);
        }
        let quantization = sq_norm(&(&ls.b - &ls.r * &ls.s));
        let label = sq_norm(&(y - &ls.p * &ls.s));
        regularizer += sq_norm(&ls.s) + sq_norm(&ls.p);
        terms.push(LengthTerms {
            forward: hp.beta[k] * forward,
            backward: hp.alpha[k] * backward,
            quantization,
            label: hp.omega[k] * label,
        });
    }
    let chain: Vec<f64> = state
        .chain
        .iter()
        .enumerate()
        .map(|(k, t)| {
            regularizer += sq_norm(t);
            hp.mu[k] * sq_norm(&(&state.lengths[k].b - t * &state.lengths[k + 1].b))
        })
        .collect();
    let regularizer = hp.lambda * regularizer;
    let mut out = ObjectiveBreakdown {
        lengths: terms,
        chain,
        regularizer,
        total: 0.0,
    };
    out.total = out.sum_of_parts();
    out
}
