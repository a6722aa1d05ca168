//! Finite discrete joint distributions and their information quantities.
//!
//! A [`JointTable`] is a strictly validated |X|×|Y| probability matrix with
//! labeled axes. All information quantities are in nats, with the convention
//! `0 log 0 = 0`: probabilities below [`ZERO_TOL`] are treated as exact
//! zeros inside logarithms.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Probabilities below this are treated as exact zeros in log computations.
pub const ZERO_TOL: f64 = 1e-15;

/// Tolerance on the total-mass invariant of a [`JointTable`].
pub const MASS_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum DistError {
    #[error("count matrix has zero total mass")]
    ZeroTotal,
    #[error("negative entry at ({0}, {1})")]
    NegativeEntry(usize, usize),
    #[error("non-finite entry at ({0}, {1})")]
    NonFiniteEntry(usize, usize),
    #[error("row {0} ({1:?}) has zero mass; conditionals would be undefined")]
    ZeroRow(usize, String),
    #[error("column {0} ({1:?}) has zero mass; conditionals would be undefined")]
    ZeroColumn(usize, String),
    #[error("need at least 2 rows and 2 columns, got {0}x{1}")]
    TooSmall(usize, usize),
    #[error("label count ({labels}) does not match matrix dimension ({dim}) on axis {axis}")]
    LabelMismatch {
        axis: &'static str,
        labels: usize,
        dim: usize,
    },
    #[error("duplicate label {0:?} on axis {1}")]
    DuplicateLabel(String, &'static str),
    #[error("entries sum to {0}, not 1")]
    NotNormalized(f64),
    #[error("shape mismatch: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("conditioning on zero-probability outcome {0}")]
    ZeroProbabilityOutcome(usize),
    #[error("absolute continuity violated: p > 0 but q = 0 at ({0}, {1})")]
    AbsoluteContinuity(usize, usize),
}

/// A normalized discrete joint distribution p(X, Y) with labeled axes.
///
/// Rows index X, columns index Y. Construction enforces: nonnegative
/// entries summing to one, no zero row or column, and distinct labels
/// matching the matrix dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTable {
    probs: DMatrix<f64>,
    x_labels: Vec<String>,
    y_labels: Vec<String>,
}

impl JointTable {
    /// Build a table from a nonnegative count (or weight) matrix by
    /// normalizing to total mass one.
    pub fn from_counts(
        counts: DMatrix<f64>,
        x_labels: Vec<String>,
        y_labels: Vec<String>,
    ) -> Result<Self, DistError> {
        let total: f64 = counts.iter().sum();
        if !(total > 0.0) {
            return Err(DistError::ZeroTotal);
        }
        Self::from_probs(counts / total, x_labels, y_labels)
    }

    /// Build a table from an already-normalized probability matrix.
    pub fn from_probs(
        probs: DMatrix<f64>,
        x_labels: Vec<String>,
        y_labels: Vec<String>,
    ) -> Result<Self, DistError> {
        let (nx, ny) = probs.shape();
        if nx < 2 || ny < 2 {
            return Err(DistError::TooSmall(nx, ny));
        }
        if x_labels.len() != nx {
            return Err(DistError::LabelMismatch {
                axis: "x",
                labels: x_labels.len(),
                dim: nx,
            });
        }
        if y_labels.len() != ny {
            return Err(DistError::LabelMismatch {
                axis: "y",
                labels: y_labels.len(),
                dim: ny,
            });
        }
        for (axis, labels) in [("x", &x_labels), ("y", &y_labels)] {
            let mut seen = std::collections::HashSet::new();
            for l in labels.iter() {
                if !seen.insert(l) {
                    return Err(DistError::DuplicateLabel(l.clone(), axis));
                }
            }
        }
        for j in 0..ny {
            for i in 0..nx {
                let v = probs[(i, j)];
                if !v.is_finite() {
                    return Err(DistError::NonFiniteEntry(i, j));
                }
                if v < 0.0 {
                    return Err(DistError::NegativeEntry(i, j));
                }
            }
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(DistError::NotNormalized(total));
        }
        for i in 0..nx {
            if probs.row(i).sum() <= 0.0 {
                return Err(DistError::ZeroRow(i, x_labels[i].clone()));
            }
        }
        for j in 0..ny {
            if probs.column(j).sum() <= 0.0 {
                return Err(DistError::ZeroColumn(j, y_labels[j].clone()));
            }
        }
        Ok(Self {
            probs,
            x_labels,
            y_labels,
        })
    }

    /// Numeric labels "0", "1", ... on both axes.
    pub fn from_counts_unlabeled(counts: DMatrix<f64>) -> Result<Self, DistError> {
        let (nx, ny) = counts.shape();
        Self::from_counts(counts, index_labels(nx), index_labels(ny))
    }

    pub fn nx(&self) -> usize {
        self.probs.nrows()
    }

    pub fn ny(&self) -> usize {
        self.probs.ncols()
    }

    pub fn probs(&self) -> &DMatrix<f64> {
        &self.probs
    }

    pub fn x_labels(&self) -> &[String] {
        &self.x_labels
    }

    pub fn y_labels(&self) -> &[String] {
        &self.y_labels
    }

    /// Marginal p(x): row sums.
    pub fn marginal_x(&self) -> DVector<f64> {
        DVector::from_iterator(self.nx(), (0..self.nx()).map(|i| self.probs.row(i).sum()))
    }

    /// Marginal p(y): column sums.
    pub fn marginal_y(&self) -> DVector<f64> {
        DVector::from_iterator(self.ny(), (0..self.ny()).map(|j| self.probs.column(j).sum()))
    }

    /// Conditional p(x | y) for a fixed column y.
    pub fn conditional_x_given_y(&self, y: usize) -> Result<DVector<f64>, DistError> {
        let py = self.probs.column(y).sum();
        if py <= ZERO_TOL {
            return Err(DistError::ZeroProbabilityOutcome(y));
        }
        Ok(DVector::from_column_slice(self.probs.column(y).as_slice()) / py)
    }

    /// All conditionals p(x | y) as an nx × ny column-stochastic matrix.
    pub fn conditionals_x_given_y(&self) -> DMatrix<f64> {
        let mut m = self.probs.clone();
        for y in 0..self.ny() {
            let py = m.column(y).sum();
            for x in 0..self.nx() {
                m[(x, y)] /= py;
            }
        }
        m
    }

    /// Conditional p(y | x) for a fixed row x.
    pub fn conditional_y_given_x(&self, x: usize) -> Result<DVector<f64>, DistError> {
        let px = self.probs.row(x).sum();
        if px <= ZERO_TOL {
            return Err(DistError::ZeroProbabilityOutcome(x));
        }
        Ok(self.probs.row(x).transpose() / px)
    }

    /// Shannon mutual information I[p] = Σ p log(p / p_x p_y), in nats.
    pub fn mutual_information(&self) -> f64 {
        let px = self.marginal_x();
        let py = self.marginal_y();
        let mut acc = 0.0;
        for j in 0..self.ny() {
            for i in 0..self.nx() {
                let p = self.probs[(i, j)];
                if p > ZERO_TOL {
                    acc += p * (p / (px[i] * py[j])).ln();
                }
            }
        }
        acc.max(0.0)
    }

    /// Joint entropy H[p] = -Σ p log p, in nats.
    pub fn entropy(&self) -> f64 {
        entropy_slice(self.probs.as_slice())
    }

    /// The independent table p(x) ⊗ p(y) with the same marginals and labels.
    pub fn product_of_marginals(&self) -> JointTable {
        let px = self.marginal_x();
        let py = self.marginal_y();
        JointTable {
            probs: &px * py.transpose(),
            x_labels: self.x_labels.clone(),
            y_labels: self.y_labels.clone(),
        }
    }
}

/// D_KL[p || q] = Σ p log(p/q) in nats; requires q > 0 wherever p > 0.
pub fn kl_divergence(p: &JointTable, q: &JointTable) -> Result<f64, DistError> {
    if p.probs.shape() != q.probs.shape() {
        let (a, b) = p.probs.shape();
        let (c, d) = q.probs.shape();
        return Err(DistError::ShapeMismatch(a, b, c, d));
    }
    let mut acc = 0.0;
    for j in 0..p.ny() {
        for i in 0..p.nx() {
            let pi = p.probs[(i, j)];
            if pi > ZERO_TOL {
                let qi = q.probs[(i, j)];
                if qi <= ZERO_TOL {
                    return Err(DistError::AbsoluteContinuity(i, j));
                }
                acc += pi * (pi / qi).ln();
            }
        }
    }
    Ok(acc.max(0.0))
}

/// Entropy of any probability vector, in nats (0 log 0 = 0).
pub fn entropy_slice(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&v| v > ZERO_TOL)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

pub(crate) fn index_labels(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_table(rng: &mut impl Rng, nx: usize, ny: usize) -> JointTable {
        let counts = DMatrix::from_fn(nx, ny, |_, _| rng.gen_range(0.05..1.0));
        JointTable::from_counts_unlabeled(counts).unwrap()
    }

    #[test]
    fn from_counts_uniform() {
        let t = JointTable::from_counts_unlabeled(DMatrix::from_element(2, 2, 1.0)).unwrap();
        for v in t.probs().iter() {
            assert_abs_diff_eq!(*v, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn from_counts_scaling() {
        let counts = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]);
        let t = JointTable::from_counts_unlabeled(counts).unwrap();
        assert_eq!(t.probs()[(0, 0)], 0.5);
        assert_eq!(t.probs()[(1, 1)], 0.5);
        assert_eq!(t.probs()[(0, 1)], 0.0);
    }

    #[test]
    fn from_counts_proportional_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let counts = DMatrix::from_fn(5, 4, |_, _| rng.gen_range(0.1..3.0));
        let total: f64 = counts.iter().sum();
        let t = JointTable::from_counts_unlabeled(counts.clone()).unwrap();
        assert_abs_diff_eq!(t.probs().iter().sum::<f64>(), 1.0, epsilon = 1e-14);
        for (p, c) in t.probs().iter().zip(counts.iter()) {
            assert_abs_diff_eq!(*p, c / total, epsilon = 1e-15);
        }
    }

    #[test]
    fn construction_rejections() {
        assert!(matches!(
            JointTable::from_counts_unlabeled(DMatrix::from_element(2, 2, 0.0)),
            Err(DistError::ZeroTotal)
        ));
        let zero_row = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]);
        assert!(matches!(
            JointTable::from_counts_unlabeled(zero_row),
            Err(DistError::ZeroRow(1, _))
        ));
        let zero_col = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        assert!(matches!(
            JointTable::from_counts_unlabeled(zero_col),
            Err(DistError::ZeroColumn(1, _))
        ));
        let neg = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, -0.5]);
        assert!(matches!(
            JointTable::from_counts_unlabeled(neg),
            Err(DistError::NegativeEntry(1, 1))
        ));
        assert!(JointTable::from_counts(
            DMatrix::from_element(2, 2, 1.0),
            vec!["a".into(), "a".into()],
            vec!["u".into(), "v".into()],
        )
        .is_err());
        assert!(matches!(
            JointTable::from_counts_unlabeled(DMatrix::from_element(1, 3, 1.0)),
            Err(DistError::TooSmall(1, 3))
        ));
    }

    #[test]
    fn marginals_trivial() {
        let t = JointTable::from_counts_unlabeled(DMatrix::from_element(2, 2, 1.0)).unwrap();
        assert_abs_diff_eq!(t.marginal_x()[0], 0.5, epsilon = 1e-15);
        let diag = JointTable::from_counts_unlabeled(DMatrix::from_row_slice(
            2,
            2,
            &[2.0, 0.0, 0.0, 2.0],
        ))
        .unwrap();
        assert_abs_diff_eq!(diag.marginal_x()[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(diag.marginal_x()[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn marginals_match_direct_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_table(&mut rng, 6, 5);
        let px = t.marginal_x();
        let py = t.marginal_y();
        for i in 0..t.nx() {
            let direct: f64 = (0..t.ny()).map(|j| t.probs()[(i, j)]).sum();
            assert_abs_diff_eq!(px[i], direct, epsilon = 1e-14);
        }
        for j in 0..t.ny() {
            let direct: f64 = (0..t.nx()).map(|i| t.probs()[(i, j)]).sum();
            assert_abs_diff_eq!(py[j], direct, epsilon = 1e-14);
        }
    }

    #[test]
    fn conditional_of_product_is_marginal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = random_table(&mut rng, 4, 3).product_of_marginals();
        let px = t.marginal_x();
        for y in 0..t.ny() {
            let c = t.conditional_x_given_y(y).unwrap();
            for i in 0..t.nx() {
                assert_abs_diff_eq!(c[i], px[i], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn conditional_deterministic() {
        let diag = JointTable::from_counts_unlabeled(DMatrix::from_row_slice(
            2,
            2,
            &[1.0, 0.0, 0.0, 1.0],
        ))
        .unwrap();
        let c = diag.conditional_x_given_y(0).unwrap();
        assert_eq!(c[0], 1.0);
        assert_eq!(c[1], 0.0);
    }

    #[test]
    fn conditional_matches_division_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let t = random_table(&mut rng, 5, 4);
        let py = t.marginal_y();
        for y in 0..t.ny() {
            let c = t.conditional_x_given_y(y).unwrap();
            for i in 0..t.nx() {
                assert_abs_diff_eq!(c[i], t.probs()[(i, y)] / py[y], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn mi_of_product_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let t = random_table(&mut rng, 4, 6).product_of_marginals();
        assert!(t.mutual_information() < 1e-12);
    }

    #[test]
    fn mi_of_diagonal_is_ln2() {
        let diag = JointTable::from_counts_unlabeled(DMatrix::from_row_slice(
            2,
            2,
            &[1.0, 0.0, 0.0, 1.0],
        ))
        .unwrap();
        assert_abs_diff_eq!(diag.mutual_information(), std::f64::consts::LN_2, epsilon = 1e-14);
    }

    #[test]
    fn mi_matches_double_sum_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let t = random_table(&mut rng, 3, 3);
        let px = t.marginal_x();
        let py = t.marginal_y();
        let mut direct = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let p = t.probs()[(i, j)];
                direct += p * (p / (px[i] * py[j])).ln();
            }
        }
        assert_abs_diff_eq!(t.mutual_information(), direct, epsilon = 1e-12);
    }

    #[test]
    fn kl_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let p = random_table(&mut rng, 4, 4);
        assert_abs_diff_eq!(kl_divergence(&p, &p).unwrap(), 0.0, epsilon = 1e-14);

        // the (1,0) vs (0.5,0.5) identity on plain vectors; the zero-row
        // guard keeps the corresponding 2x1 table unrepresentable
        let p_vec = [1.0, 0.0];
        let q_vec = [0.5, 0.5];
        let d: f64 = p_vec
            .iter()
            .zip(q_vec.iter())
            .filter(|(p, _)| **p > ZERO_TOL)
            .map(|(p, q)| p * (p / q).ln())
            .sum();
        assert_abs_diff_eq!(d, std::f64::consts::LN_2, epsilon = 1e-15);
    }

    #[test]
    fn kl_matches_direct_sum_and_detects_support_violation() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let p = random_table(&mut rng, 3, 4);
        let q = random_table(&mut rng, 3, 4);
        let mut direct = 0.0;
        for (pi, qi) in p.probs().iter().zip(q.probs().iter()) {
            direct += pi * (pi / qi).ln();
        }
        assert_abs_diff_eq!(kl_divergence(&p, &q).unwrap(), direct, epsilon = 1e-12);
        assert!(kl_divergence(&p, &q).unwrap() >= 0.0);

        let spiky = JointTable::from_probs(
            DMatrix::from_row_slice(2, 2, &[0.5, 0.5 - 1e-16, 1e-16, 0.0]),
            index_labels(2),
            index_labels(2),
        );
        if let Ok(spiky) = spiky {
            let q = JointTable::from_counts_unlabeled(DMatrix::from_element(2, 2, 1.0)).unwrap();
            // q has full support, so this direction is fine
            assert!(kl_divergence(&spiky, &q).is_ok());
            // reverse direction hits the zero cell
            assert!(matches!(
                kl_divergence(&q, &spiky),
                Err(DistError::AbsoluteContinuity(_, _))
            ));
        }
    }

    #[test]
    fn entropy_values() {
        assert_eq!(entropy_slice(&[1.0, 0.0, 0.0]), 0.0);
        let n = 7;
        let u = vec![1.0 / n as f64; n];
        assert_abs_diff_eq!(entropy_slice(&u), (n as f64).ln(), epsilon = 1e-13);

        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let t = random_table(&mut rng, 4, 5);
        let direct: f64 = -t.probs().iter().map(|p| p * p.ln()).sum::<f64>();
        assert_abs_diff_eq!(t.entropy(), direct, epsilon = 1e-12);
    }

    #[test]
    fn information_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..20 {
            let t = random_table(&mut rng, 5, 4);
            let hx = entropy_slice(t.marginal_x().as_slice());
            let hy = entropy_slice(t.marginal_y().as_slice());
            assert_abs_diff_eq!(
                t.mutual_information(),
                hx + hy - t.entropy(),
                epsilon = 1e-10
            );
            assert_abs_diff_eq!(
                t.mutual_information(),
                kl_divergence(&t, &t.product_of_marginals()).unwrap(),
                epsilon = 1e-10
            );
        }
    }
}
