//! Linear dimensionality-reduction baselines: PCA, Oriented PCA, and
//! Constrained PCA, all reducing the same sample matrices the feature
//! pipeline evaluates.
//!
//! OPCA maximizes the signal-to-noise Rayleigh quotient wᵀS⁺w / wᵀS⁻w via
//! the generalized eigenproblem S⁺w = μ(S⁻ + ridge)w, solved by Cholesky
//! whitening of the ridged noise covariance. CPCA removes the top
//! principal subspace of the irrelevance data before running PCA.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default relative ridge added to S⁻ as ridge·trace(S⁻)/m.
pub const DEFAULT_RIDGE: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("non-finite entry at ({0}, {1})")]
    NonFinite(usize, usize),
    #[error("requested dimension {d} exceeds rank {rank} of the centered data")]
    RankDeficient { d: usize, rank: usize },
    #[error("sample matrices disagree on dimensionality: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("k_remove {k} plus d {d} exceeds ambient dimension {m}")]
    DimensionExhausted { k: usize, d: usize, m: usize },
    #[error("noise covariance is degenerate beyond ridge repair")]
    DegenerateNoise,
    #[error("reducer expects dimension {expected}, sample matrix has {got}")]
    ShapeMismatch { expected: usize, got: usize },
}

/// n samples by m dimensions, with the column mean cached.
#[derive(Debug, Clone)]
pub struct SampleMatrix {
    rows: DMatrix<f64>,
    mean: DVector<f64>,
}

impl SampleMatrix {
    pub fn new(rows: DMatrix<f64>) -> Result<Self, BaselineError> {
        if rows.nrows() < 2 {
            return Err(BaselineError::TooFewSamples(rows.nrows()));
        }
        for j in 0..rows.ncols() {
            for i in 0..rows.nrows() {
                if !rows[(i, j)].is_finite() {
                    return Err(BaselineError::NonFinite(i, j));
                }
            }
        }
        let mean = rows.row_mean().transpose();
        Ok(Self { rows, mean })
    }

    pub fn n(&self) -> usize {
        self.rows.nrows()
    }

    pub fn m(&self) -> usize {
        self.rows.ncols()
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    fn centered(&self) -> DMatrix<f64> {
        let mut c = self.rows.clone();
        for i in 0..c.nrows() {
            for j in 0..c.ncols() {
                c[(i, j)] -= self.mean[j];
            }
        }
        c
    }

    /// Biased (1/n) covariance of the centered samples.
    pub fn covariance(&self) -> DMatrix<f64> {
        let c = self.centered();
        (c.transpose() * &c) / self.n() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReducerKind {
    Pca,
    Opca,
    Cpca,
}

/// A centered linear projection X ↦ (X − mean)·basis.
#[derive(Debug, Clone)]
pub struct LinearReducer {
    pub basis: DMatrix<f64>,
    pub kind: ReducerKind,
    pub centering: DVector<f64>,
    /// Eigenvalues (or generalized eigenvalues) per basis column, descending.
    pub eigenvalues: Vec<f64>,
}

/// Eigenpairs of a symmetric matrix in descending eigenvalue order.
fn sym_eig_desc(s: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(s.clone());
    let m = s.nrows();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(m, m);
    for (col, &i) in order.iter().enumerate() {
        vecs.set_column(col, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Flip each column so its largest-magnitude entry is positive.
fn fix_signs(basis: &mut DMatrix<f64>) {
    for k in 0..basis.ncols() {
        let mut arg = 0;
        for i in 1..basis.nrows() {
            if basis[(i, k)].abs() > basis[(arg, k)].abs() {
                arg = i;
            }
        }
        if basis[(arg, k)] < 0.0 {
            for i in 0..basis.nrows() {
                basis[(i, k)] = -basis[(i, k)];
            }
        }
    }
}

fn rank_of(vals: &[f64]) -> usize {
    let top = vals.first().copied().unwrap_or(0.0).max(0.0);
    let tol = top * 1e-12;
    vals.iter().filter(|&&v| v > tol).count()
}

/// Top-d principal components of X, descending variance, sign-fixed.
pub fn pca(x: &SampleMatrix, d: usize) -> Result<LinearReducer, BaselineError> {
    let cov = x.covariance();
    let (vals, vecs) = sym_eig_desc(&cov);
    let rank = rank_of(&vals);
    if d > rank {
        return Err(BaselineError::RankDeficient { d, rank });
    }
    let mut basis = vecs.columns(0, d).into_owned();
    fix_signs(&mut basis);
    Ok(LinearReducer {
        basis,
        kind: ReducerKind::Pca,
        centering: x.mean().clone(),
        eigenvalues: vals[..d].to_vec(),
    })
}

/// Top-d generalized eigenvectors of (S⁺, S⁻ + ridge·trace(S⁻)/m·I),
/// maximizing the signal-to-noise Rayleigh quotient.
pub fn opca(
    x_plus: &SampleMatrix,
    x_minus: &SampleMatrix,
    d: usize,
    ridge: f64,
) -> Result<LinearReducer, BaselineError> {
    if x_plus.m() != x_minus.m() {
        return Err(BaselineError::DimMismatch(x_plus.m(), x_minus.m()));
    }
    let m = x_plus.m();
    if d > m {
        return Err(BaselineError::RankDeficient { d, rank: m });
    }
    let s_plus = x_plus.covariance();
    let mut s_minus = x_minus.covariance();
    let trace: f64 = s_minus.diagonal().sum();
    // fully degenerate noise still needs an invertible metric
    let eps = if trace > 0.0 {
        ridge * trace / m as f64
    } else {
        ridge.max(1e-12)
    };
    for i in 0..m {
        s_minus[(i, i)] += eps;
    }
    // whiten: S⁻ = LLᵀ, then eigendecompose L⁻¹ S⁺ L⁻ᵀ and map back by L⁻ᵀ
    let chol = s_minus
        .clone()
        .cholesky()
        .ok_or(BaselineError::DegenerateNoise)?;
    let l = chol.l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or(BaselineError::DegenerateNoise)?;
    let whitened = &linv * &s_plus * linv.transpose();
    let sym = (whitened.clone() + whitened.transpose()) * 0.5;
    let (vals, vecs) = sym_eig_desc(&sym);
    let mut basis = linv.transpose() * vecs.columns(0, d).into_owned();
    fix_signs(&mut basis);
    Ok(LinearReducer {
        basis,
        kind: ReducerKind::Opca,
        centering: x_plus.mean().clone(),
        eigenvalues: vals[..d].to_vec(),
    })
}

/// Number of leading eigenvalues needed to cover the given variance fraction.
fn k_for_variance(vals: &[f64], fraction: f64) -> usize {
    let total: f64 = vals.iter().filter(|&&v| v > 0.0).sum();
    if total <= 0.0 {
        return 0;
    }
    let mut acc = 0.0;
    for (i, &v) in vals.iter().enumerate() {
        acc += v.max(0.0);
        if acc >= fraction * total {
            return i + 1;
        }
    }
    vals.len()
}

/// PCA of X⁺ restricted to the orthogonal complement of X⁻'s top-k_remove
/// principal subspace. k_remove = None covers 95% of X⁻'s variance.
pub fn cpca(
    x_plus: &SampleMatrix,
    x_minus: &SampleMatrix,
    d: usize,
    k_remove: Option<usize>,
) -> Result<LinearReducer, BaselineError> {
    if x_plus.m() != x_minus.m() {
        return Err(BaselineError::DimMismatch(x_plus.m(), x_minus.m()));
    }
    let m = x_plus.m();
    let s_minus = x_minus.covariance();
    let (minus_vals, minus_vecs) = sym_eig_desc(&s_minus);
    let k = match k_remove {
        Some(k) => k,
        None => k_for_variance(&minus_vals, 0.95).min(rank_of(&minus_vals)),
    };
    if k + d > m {
        return Err(BaselineError::DimensionExhausted { k, d, m });
    }
    // projector onto the complement of the removed subspace
    let removed = minus_vecs.columns(0, k).into_owned();
    let projector = DMatrix::identity(m, m) - &removed * removed.transpose();
    let s_plus = x_plus.covariance();
    let projected = &projector * &s_plus * projector.transpose();
    let sym = (projected.clone() + projected.transpose()) * 0.5;
    let (vals, vecs) = sym_eig_desc(&sym);
    let rank = rank_of(&vals);
    if d > rank {
        return Err(BaselineError::RankDeficient { d, rank });
    }
    let mut basis = vecs.columns(0, d).into_owned();
    // re-project: eigenvectors of the projected covariance can pick up
    // components in the removed subspace only through rounding
    basis = &projector * basis;
    for k in 0..basis.ncols() {
        let norm = basis.column(k).norm();
        if norm > 0.0 {
            for i in 0..m {
                basis[(i, k)] /= norm;
            }
        }
    }
    fix_signs(&mut basis);
    Ok(LinearReducer {
        basis,
        kind: ReducerKind::Cpca,
        centering: x_plus.mean().clone(),
        eigenvalues: vals[..d].to_vec(),
    })
}

/// Apply the reducer: (X − centering)·basis.
pub fn reduce(reducer: &LinearReducer, x: &SampleMatrix) -> Result<SampleMatrix, BaselineError> {
    if x.m() != reducer.basis.nrows() {
        return Err(BaselineError::ShapeMismatch {
            expected: reducer.basis.nrows(),
            got: x.m(),
        });
    }
    let mut centered = x.rows().clone();
    for i in 0..centered.nrows() {
        for j in 0..centered.ncols() {
            centered[(i, j)] -= reducer.centering[j];
        }
    }
    SampleMatrix::new(centered * &reducer.basis)
}
