//! Unsupervised evaluation of reduced representations.
//!
//! Each y is replaced by its expected feature vector ⟨φ(x)⟩_{p(x|y)} (or a
//! baseline projection), then scored by the normalized precision index:
//! the fraction of same-class points among each point's k nearest
//! neighbors, averaged over points and k = 1..K, shifted and scaled so
//! random neighboring scores 0 and perfect class separation scores 1.
//! Model selection maximizes the train-split index over candidate
//! hyperparameters and reports the winner's test-split index, repeated
//! over randomized splits.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::maxent::FeatureMap;
use crate::dist::JointTable;

/// Relative ridge on the covariance before inversion for Mahalanobis.
pub const METRIC_RIDGE: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("labels length {0} does not match row count {1}")]
    LabelMismatch(usize, usize),
    #[error("class {0} has a single member; precision needs >= 2 per class")]
    SingletonClass(String),
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("K = {k} must lie in 1..{n}")]
    BadK { k: usize, n: usize },
    #[error("non-finite entry at ({0}, {1})")]
    NonFinite(usize, usize),
    #[error("metric dimension {0} does not match vectors of dimension {1}")]
    MetricDim(usize, usize),
    #[error("empty candidate list")]
    NoCandidates,
    #[error("split leaves fewer than 2 classes with 2 members on one side")]
    DegenerateSplit,
    #[error("candidate evaluation failed: {0}")]
    CandidateFailed(String),
}

/// One vector per y, with its class label.
#[derive(Debug, Clone)]
pub struct ReducedSet {
    pub vectors: DMatrix<f64>,
    pub labels: Vec<String>,
    pub method: String,
}

impl ReducedSet {
    pub fn new(
        vectors: DMatrix<f64>,
        labels: Vec<String>,
        method: impl Into<String>,
    ) -> Result<Self, EvalError> {
        if labels.len() != vectors.nrows() {
            return Err(EvalError::LabelMismatch(labels.len(), vectors.nrows()));
        }
        for j in 0..vectors.ncols() {
            for i in 0..vectors.nrows() {
                if !vectors[(i, j)].is_finite() {
                    return Err(EvalError::NonFinite(i, j));
                }
            }
        }
        Ok(Self {
            vectors,
            labels,
            method: method.into(),
        })
    }

    pub fn n(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn d(&self) -> usize {
        self.vectors.ncols()
    }

    fn class_sizes(&self) -> std::collections::HashMap<&str, usize> {
        let mut sizes = std::collections::HashMap::new();
        for l in &self.labels {
            *sizes.entry(l.as_str()).or_insert(0) += 1;
        }
        sizes
    }

    fn check_classes(&self) -> Result<(), EvalError> {
        let sizes = self.class_sizes();
        if sizes.len() < 2 {
            return Err(EvalError::TooFewClasses(sizes.len()));
        }
        for (label, n) in sizes {
            if n < 2 {
                return Err(EvalError::SingletonClass(label.to_string()));
            }
        }
        Ok(())
    }

    /// Row subset preserving label association.
    pub fn subset(&self, idx: &[usize]) -> ReducedSet {
        let mut vectors = DMatrix::zeros(idx.len(), self.d());
        let mut labels = Vec::with_capacity(idx.len());
        for (row, &i) in idx.iter().enumerate() {
            vectors.set_row(row, &self.vectors.row(i));
            labels.push(self.labels[i].clone());
        }
        ReducedSet {
            vectors,
            labels,
            method: self.method.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricKind {
    Euclidean,
    Mahalanobis,
}

/// Distance on reduced vectors: plain L2 or Mahalanobis through a
/// whitening transform fitted from a reduced set's covariance.
#[derive(Debug, Clone)]
pub struct Metric {
    pub kind: MetricKind,
    /// For Mahalanobis: W with d² = (u−v)ᵀ WᵀW (u−v); None for Euclidean.
    pub whitening: Option<DMatrix<f64>>,
}

impl Metric {
    pub fn euclidean() -> Self {
        Self {
            kind: MetricKind::Euclidean,
            whitening: None,
        }
    }

    fn distance_sq(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        let diff = u - v;
        match &self.whitening {
            None => diff.norm_squared(),
            Some(w) => (w * diff).norm_squared(),
        }
    }
}

/// Fit a metric to a reduced set. Mahalanobis whitens by the inverse
/// square root of the ridged sample covariance; ridge keeps it SPD even
/// for degenerate data.
pub fn fit_metric(set: &ReducedSet, kind: MetricKind) -> Metric {
    match kind {
        MetricKind::Euclidean => Metric::euclidean(),
        MetricKind::Mahalanobis => {
            let d = set.d();
            let n = set.n() as f64;
            let mean = set.vectors.row_mean();
            let mut cov = DMatrix::zeros(d, d);
            for i in 0..set.n() {
                let diff = (set.vectors.row(i) - &mean).transpose();
                cov += &diff * diff.transpose();
            }
            cov /= n;
            let eps = METRIC_RIDGE * (cov.diagonal().sum() / d as f64).max(f64::MIN_POSITIVE);
            for i in 0..d {
                cov[(i, i)] += eps;
            }
            let eig = nalgebra::SymmetricEigen::new(cov);
            let mut w = DMatrix::zeros(d, d);
            for k in 0..d {
                let scale = 1.0 / eig.eigenvalues[k].max(eps).sqrt();
                let v = eig.eigenvectors.column(k);
                for i in 0..d {
                    w[(k, i)] = scale * v[i];
                }
            }
            Metric {
                kind,
                whitening: Some(w),
            }
        }
    }
}

/// Row y = Σ_x φ(x) p(x|y): the expected feature vector of each y.
pub fn reduce_by_expectation(
    phi: &FeatureMap,
    p: &JointTable,
    labels: Vec<String>,
    method: impl Into<String>,
) -> Result<ReducedSet, EvalError> {
    let cond = p.conditionals_x_given_y();
    let vectors = cond.transpose() * phi.values();
    ReducedSet::new(vectors, labels, method)
}

/// Normalized neighbor precision. For each point and each k ≤ K, the
/// fraction of same-class points among its k nearest neighbors (self
/// excluded, distance ties broken by index); averaged into r, then
/// normalized against the analytic chance level c (mean over points of
/// (n_class − 1)/(n − 1)) as (r − c)/(1 − c).
pub fn precision_index(set: &ReducedSet, metric: &Metric, k_max: usize) -> Result<f64, EvalError> {
    set.check_classes()?;
    let n = set.n();
    if k_max == 0 || k_max >= n {
        return Err(EvalError::BadK { k: k_max, n });
    }
    if let Some(w) = &metric.whitening {
        if w.ncols() != set.d() {
            return Err(EvalError::MetricDim(w.ncols(), set.d()));
        }
    }

    let rows: Vec<DVector<f64>> = (0..n).map(|i| set.vectors.row(i).transpose()).collect();
    let per_point: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut order: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (metric.distance_sq(&rows[i], &rows[j]), j))
                .collect();
            order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            // prefix same-class counts give the k-NN fraction for every k at once
            let mut same_running = 0usize;
            let mut frac_sum = 0.0;
            for (k, &(_, j)) in order.iter().take(k_max).enumerate() {
                if set.labels[j] == set.labels[i] {
                    same_running += 1;
                }
                frac_sum += same_running as f64 / (k + 1) as f64;
            }
            let r_i = frac_sum / k_max as f64;
            let n_class = set.labels.iter().filter(|l| **l == set.labels[i]).count();
            let c_i = (n_class - 1) as f64 / (n - 1) as f64;
            (r_i, c_i)
        })
        .collect();

    let r: f64 = per_point.iter().map(|(r, _)| r).sum::<f64>() / n as f64;
    let c: f64 = per_point.iter().map(|(_, c)| c).sum::<f64>() / n as f64;
    Ok((r - c) / (1.0 - c))
}

/// A method plus hyperparameters entering model selection. Candidates
/// produce a reduced set for any requested index subset of the y's.
pub struct Candidate<'a> {
    pub method: String,
    pub d: usize,
    pub lambda: f64,
    /// Build the reduced representation restricted to the given y indices.
    #[allow(clippy::type_complexity)]
    pub reduce: Box<dyn Fn(&[usize]) -> Result<ReducedSet, String> + Sync + 'a>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitOutcome {
    pub split: usize,
    pub method: String,
    pub chosen_d: usize,
    pub chosen_lambda: f64,
    pub train_index: f64,
    pub test_index: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub mean_test_index: f64,
    pub sem_test_index: f64,
    pub splits: Vec<SplitOutcome>,
}

/// Split y indices into train/test so both sides keep ≥ 2 members of ≥ 2
/// classes: per class, a seeded shuffle sends half (rounded up) to train.
pub fn stratified_split(
    labels: &[String],
    seed: u64,
    split_id: u64,
) -> Result<(Vec<usize>, Vec<usize>), EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x53504c49 ^ split_id);
    let mut by_class: std::collections::BTreeMap<&str, Vec<usize>> = Default::default();
    for (i, l) in labels.iter().enumerate() {
        by_class.entry(l.as_str()).or_default().push(i);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (_, mut members) in by_class {
        if members.len() < 4 {
            return Err(EvalError::DegenerateSplit);
        }
        members.shuffle(&mut rng);
        let cut = members.len().div_ceil(2);
        train.extend_from_slice(&members[..cut]);
        test.extend_from_slice(&members[cut..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Per split, pick the candidate maximizing the train
/// precision index (ties → smaller d, then smaller λ), evaluate it once
/// on the test side, and aggregate over splits per method.
pub fn model_select(
    candidates: &[Candidate<'_>],
    labels: &[String],
    metric_kind: MetricKind,
    n_splits: usize,
    seed: u64,
) -> Result<Vec<MethodSummary>, EvalError> {
    if candidates.is_empty() {
        return Err(EvalError::NoCandidates);
    }
    let methods: Vec<String> = {
        let mut seen = Vec::new();
        for c in candidates {
            if !seen.contains(&c.method) {
                seen.push(c.method.clone());
            }
        }
        seen
    };

    let mut outcomes: Vec<SplitOutcome> = Vec::new();
    for split in 0..n_splits {
        let (train_idx, test_idx) = stratified_split(labels, seed, split as u64)?;
        for method in &methods {
            let mut best: Option<(f64, usize, f64, &Candidate)> = None;
            for cand in candidates.iter().filter(|c| &c.method == method) {
                let train_set = (cand.reduce)(&train_idx)
                    .map_err(EvalError::CandidateFailed)?;
                let metric = fit_metric(&train_set, metric_kind);
                let idx = precision_index(&train_set, &metric, train_set.n() - 1)?;
                let better = match &best {
                    None => true,
                    Some((b_idx, b_d, b_l, _)) => {
                        idx > *b_idx
                            || (idx == *b_idx
                                && (cand.d < *b_d || (cand.d == *b_d && cand.lambda < *b_l)))
                    }
                };
                if better {
                    best = Some((idx, cand.d, cand.lambda, cand));
                }
            }
            let (train_index, d, lambda, winner) = best.expect("method has candidates");
            let test_set = (winner.reduce)(&test_idx).map_err(EvalError::CandidateFailed)?;
            let metric = fit_metric(&test_set, metric_kind);
            let test_index = precision_index(&test_set, &metric, test_set.n() - 1)?;
            outcomes.push(SplitOutcome {
                split,
                method: method.clone(),
                chosen_d: d,
                chosen_lambda: lambda,
                train_index,
                test_index,
            });
        }
    }

    Ok(methods
        .into_iter()
        .map(|method| {
            let splits: Vec<SplitOutcome> = outcomes
                .iter()
                .filter(|o| o.method == method)
                .cloned()
                .collect();
            let n = splits.len() as f64;
            let mean = splits.iter().map(|o| o.test_index).sum::<f64>() / n;
            let var = splits
                .iter()
                .map(|o| (o.test_index - mean).powi(2))
                .sum::<f64>()
                / (n - 1.0).max(1.0);
            MethodSummary {
                method,
                mean_test_index: mean,
                sem_test_index: (var / n).sqrt(),
                splits,
            }
        })
        .collect())
}
