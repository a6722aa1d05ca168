//! Gradient ascent on the tradeoff functional L[φ] = I_M[φ, p⁺] − λ I_M[φ, p⁻].
//!
//! Since I_M[φ, p] = H[p(x)] + H[p(y)] − H[p̂_φ] with both marginal
//! entropies fixed by the constraint set, the analytic gradient of the
//! joint entropy of the I-projection,
//!
//!   ∂H[p̂_φ]/∂φ(x) = p(x) (⟨ψ⟩_{p̂(y|x)} − ⟨ψ⟩_{p(y|x)}),
//!
//! gives the objective gradient as the signed weighted sum of per-term
//! entropy gradients (negated, one per relevance/irrelevance table).
//! Each outer iteration re-solves the inner maxent problems, warm-started
//! from the previous potentials, and takes an Armijo backtracking step.
//!
//! λ sweeps run warm-started branches in both grid directions; jump
//! detection on the pointwise-best envelope of I_M⁺ locates first-order
//! phase transitions, and branch disagreement beyond tolerance marks the
//! metastable (hysteresis) region.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{kl_divergence, DistError, JointTable};
use crate::maxent::{
    solve_maxent, FeatureMap, MaxEntError, MaxEntSolution, Potentials,
    SolverOptions,
};

/// Rescale φ via gauge fixing once any entry grows past this during ascent.
pub const PHI_CAP: f64 = 1e3;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("tables disagree on X: {0}")]
    XMismatch(String),
    #[error("lambda must be nonnegative, got {0}")]
    NegativeLambda(f64),
    #[error("feature dimension must be >= 1")]
    ZeroDim,
    #[error("need at least one positive-sign term")]
    NoPositiveTerm(String),
    #[error("term weights must be nonnegative, got {0}")]
    NegativeWeight(f64),
    #[error("inner solve failed on {side} term {index}: {source}")]
    InnerSolve {
        side: Sign,
        index: usize,
        source: MaxEntError,
    },
    #[error("inner solve did not converge on {side} term {index} (residual {residual:e})")]
    InnerUnconverged {
        side: Sign,
        index: usize,
        residual: f64,
    },
    #[error("all {0} restarts failed; first failure: {1}")]
    AllRestartsFailed(usize, String),
    #[error("entropy gradient requires a converged solution (residual {0:e})")]
    UnconvergedSolution(f64),
    #[error("marginals over X differ by {0:e}, beyond the shared-marginal tolerance")]
    MarginalMismatch(f64),
    #[error(transparent)]
    MaxEnt(#[from] MaxEntError),
    #[error(transparent)]
    Dist(#[from] DistError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl std::fmt::Display for Sign {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Sign::Plus => write!(f, "relevance"),
            Sign::Minus => write!(f, "irrelevance"),
        }
    }
}

/// One signed term λ_i I_M[φ, p_i] of the multi-variable functional.
#[derive(Debug, Clone)]
pub struct Term {
    pub table: JointTable,
    pub sign: Sign,
    pub weight: f64,
}

impl Term {
    fn signed_weight(&self) -> f64 {
        match self.sign {
            Sign::Plus => self.weight,
            Sign::Minus => -self.weight,
        }
    }
}

/// The canonical two-table tradeoff objective.
#[derive(Debug, Clone)]
pub struct Objective {
    lambda: f64,
    relevance: JointTable,
    irrelevance: JointTable,
    d: usize,
}

impl Objective {
    pub fn new(
        lambda: f64,
        relevance: JointTable,
        irrelevance: JointTable,
        d: usize,
    ) -> Result<Self, FitError> {
        if lambda < 0.0 {
            return Err(FitError::NegativeLambda(lambda));
        }
        if d == 0 {
            return Err(FitError::ZeroDim);
        }
        check_shared_x(&relevance, &irrelevance)?;
        Ok(Self {
            lambda,
            relevance,
            irrelevance,
            d,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn relevance(&self) -> &JointTable {
        &self.relevance
    }

    pub fn irrelevance(&self) -> &JointTable {
        &self.irrelevance
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self, FitError> {
        Self::new(lambda, self.relevance.clone(), self.irrelevance.clone(), self.d)
    }

    /// λ = 0 drops the irrelevance term entirely (plain SDR reduction).
    fn terms(&self) -> Vec<Term> {
        let mut terms = vec![Term {
            table: self.relevance.clone(),
            sign: Sign::Plus,
            weight: 1.0,
        }];
        if self.lambda > 0.0 {
            terms.push(Term {
                table: self.irrelevance.clone(),
                sign: Sign::Minus,
                weight: self.lambda,
            });
        }
        terms
    }
}

fn check_shared_x(a: &JointTable, b: &JointTable) -> Result<(), FitError> {
    if a.nx() != b.nx() {
        return Err(FitError::XMismatch(format!(
            "|X| = {} vs {}",
            a.nx(),
            b.nx()
        )));
    }
    if a.x_labels() != b.x_labels() {
        return Err(FitError::XMismatch("x_labels differ".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_outer_iters: usize,
    /// Max-abs gradient entry at which a run counts as converged.
    pub grad_tol: f64,
    /// Total number of starts; start 0 is the deterministic SVD start,
    /// the rest are seeded random draws.
    pub restarts: usize,
    pub seed: u64,
    /// Armijo backtracking line search parameters.
    pub step_init: f64,
    pub step_shrink: f64,
    pub armijo: f64,
    pub init_scale: f64,
    pub solver: SolverOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_outer_iters: 2000,
            grad_tol: 1e-6,
            restarts: 5,
            seed: 0,
            step_init: 1.0,
            step_shrink: 0.5,
            armijo: 1e-4,
            init_scale: 0.1,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub objective: f64,
    pub grad_norm: f64,
}

/// An optimized feature map with its diagnostics.
#[derive(Debug, Clone)]
pub struct FitResult {
    /// Gauge-fixed feature map (columns centered under p⁺(x), then
    /// orthonormalized in the p⁺(x)-weighted inner product).
    pub phi: FeatureMap,
    pub objective_value: f64,
    pub info_plus: f64,
    /// None on the λ = 0 path, which never solves the irrelevance side.
    pub info_minus: Option<f64>,
    /// Measurement information per term, in term order.
    pub term_infos: Vec<f64>,
    /// Max-abs gradient entry at termination.
    pub grad_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Terminal maxent solutions, one per term.
    pub solutions: Vec<MaxEntSolution>,
    pub trace: Vec<TracePoint>,
    pub seed: u64,
    /// Which start won: 0 is the SVD start.
    pub restart_index: usize,
}

/// Gradient of the I-projection's joint entropy with respect to φ:
/// row x is p(x)·(⟨ψ⟩_{p̂(y|x)} − ⟨ψ⟩_{p(y|x)}).
pub fn entropy_gradient(
    phi: &FeatureMap,
    p: &JointTable,
    sol: &MaxEntSolution,
) -> Result<DMatrix<f64>, FitError> {
    if !sol.converged {
        return Err(FitError::UnconvergedSolution(sol.residual));
    }
    let (nx, d) = (phi.nx(), phi.d());
    let ny = p.ny();
    let px = p.marginal_x();
    let mut grad = DMatrix::zeros(nx, d);
    for x in 0..nx {
        let p_row_sum: f64 = p.probs().row(x).sum();
        let hat_row_sum: f64 = sol.p_hat.probs().row(x).sum();
        for y in 0..ny {
            let w_hat = sol.p_hat.probs()[(x, y)] / hat_row_sum;
            let w_p = p.probs()[(x, y)] / p_row_sum;
            let dw = w_hat - w_p;
            for k in 0..d {
                grad[(x, k)] += px[x] * dw * sol.psi()[(y, k)];
            }
        }
    }
    Ok(grad)
}

struct EvalOut {
    objective: f64,
    infos: Vec<f64>,
    grad: DMatrix<f64>,
    sols: Vec<MaxEntSolution>,
}

fn eval_terms(
    terms: &[Term],
    phi: &FeatureMap,
    solver: &SolverOptions,
    warms: &[Option<Potentials>],
) -> Result<EvalOut, FitError> {
    let mut infos = Vec::with_capacity(terms.len());
    let mut sols = Vec::with_capacity(terms.len());
    let mut objective = 0.0;
    let mut grad = DMatrix::zeros(phi.nx(), phi.d());
    for (i, term) in terms.iter().enumerate() {
        let sol = solve_maxent(phi, &term.table, solver, warms[i].as_ref()).map_err(|e| {
            FitError::InnerSolve {
                side: term.sign,
                index: i,
                source: e,
            }
        })?;
        if !sol.converged {
            return Err(FitError::InnerUnconverged {
                side: term.sign,
                index: i,
                residual: sol.residual,
            });
        }
        let info = sol.p_hat.mutual_information();
        // dL/dφ picks up -dH/dφ per unit of signed weight
        let g = entropy_gradient(phi, &term.table, &sol)?;
        let sw = term.signed_weight();
        objective += sw * info;
        grad -= sw * g;
        infos.push(info);
        sols.push(sol);
    }
    Ok(EvalOut {
        objective,
        infos,
        grad,
        sols,
    })
}

/// Objective value, per-side informations, and the analytic gradient of L
/// at φ for the canonical two-table objective.
pub fn objective_and_gradient(
    obj: &Objective,
    phi: &FeatureMap,
    solver: &SolverOptions,
) -> Result<(f64, f64, Option<f64>, DMatrix<f64>), FitError> {
    let terms = obj.terms();
    let warms = vec![None; terms.len()];
    let out = eval_terms(&terms, phi, solver, &warms)?;
    let info_minus = out.infos.get(1).copied();
    Ok((out.objective, out.infos[0], info_minus, out.grad))
}

/// Center φ's columns under the weights w and orthonormalize them by
/// modified Gram-Schmidt in the w-weighted inner product. Degenerate
/// columns are zeroed; signs are fixed so each column's largest-magnitude
/// entry is positive.
pub fn gauge_fix_phi(phi: &FeatureMap, w: &DVector<f64>) -> FeatureMap {
    let (nx, d) = (phi.nx(), phi.d());
    let mut v = phi.values().clone();
    for k in 0..d {
        let mean: f64 = (0..nx).map(|x| w[x] * v[(x, k)]).sum();
        for x in 0..nx {
            v[(x, k)] -= mean;
        }
    }
    for k in 0..d {
        for j in 0..k {
            let dot: f64 = (0..nx).map(|x| w[x] * v[(x, k)] * v[(x, j)]).sum();
            for x in 0..nx {
                let vj = v[(x, j)];
                v[(x, k)] -= dot * vj;
            }
        }
        let norm_sq: f64 = (0..nx).map(|x| w[x] * v[(x, k)] * v[(x, k)]).sum();
        if norm_sq.sqrt() > 1e-12 {
            let inv = 1.0 / norm_sq.sqrt();
            for x in 0..nx {
                v[(x, k)] *= inv;
            }
        } else {
            for x in 0..nx {
                v[(x, k)] = 0.0;
            }
        }
        // sign convention: largest-magnitude entry positive
        let mut arg = 0;
        for x in 1..nx {
            if v[(x, k)].abs() > v[(arg, k)].abs() {
                arg = x;
            }
        }
        if v[(arg, k)] < 0.0 {
            for x in 0..nx {
                v[(x, k)] = -v[(x, k)];
            }
        }
    }
    FeatureMap::new(v).expect("gauge-fixed map keeps shape")
}

/// Deterministic start: top-d left singular vectors of the elementwise
/// log-ratio log(p / p_x p_y), the exponential-form structure of p itself.
fn svd_start(p: &JointTable, d: usize) -> FeatureMap {
    let (nx, ny) = (p.nx(), p.ny());
    let px = p.marginal_x();
    let py = p.marginal_y();
    let mut m = DMatrix::zeros(nx, ny);
    for y in 0..ny {
        for x in 0..nx {
            let ratio = (p.probs()[(x, y)].max(1e-12)) / (px[x] * py[y]);
            m[(x, y)] = ratio.ln();
        }
    }
    let svd = m.svd(true, false);
    let u = svd.u.expect("svd requested u");
    let mut v = DMatrix::zeros(nx, d);
    for k in 0..d.min(u.ncols()) {
        for x in 0..nx {
            v[(x, k)] = u[(x, k)];
        }
    }
    FeatureMap::new(v).expect("svd start has valid shape")
}

fn random_start(nx: usize, d: usize, scale: f64, seed: u64, stream: u64) -> FeatureMap {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let v = DMatrix::from_fn(nx, d, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        scale * z
    });
    FeatureMap::new(v).expect("random start has valid shape")
}

struct RunOutcome {
    phi: FeatureMap,
    objective: f64,
    infos: Vec<f64>,
    grad_norm: f64,
    converged: bool,
    iterations: usize,
    sols: Vec<MaxEntSolution>,
    trace: Vec<TracePoint>,
}

/// One gradient-ascent run from a fixed start. Re-gauges φ whenever an
/// entry passes [`PHI_CAP`] and once more at convergence, then polishes
/// until the gradient tolerance holds at the gauge-fixed point.
fn ascend(
    terms: &[Term],
    phi0: FeatureMap,
    weight_x: &DVector<f64>,
    opts: &FitOptions,
) -> Result<RunOutcome, FitError> {
    let mut phi = phi0;
    let mut warms: Vec<Option<Potentials>> = vec![None; terms.len()];
    let mut trace = Vec::new();
    let mut solver = opts.solver;
    let mut out = eval_terms(terms, &phi, &solver, &warms)?;
    let mut iterations = 0;
    let mut gauged = false; // final gauge fix applied
    let mut step_carry = opts.step_init; // adaptive: last accepted step, doubled
    let mut tightenings = 0; // inner-tolerance cuts after stalled line searches
    // cut off flat-ridge crawls: progress below float-level noise for a full
    // window will not reach the gradient tolerance within any sane budget
    const STALL_WINDOW: usize = 100;
    let mut window_anchor = (0usize, out.objective);

    loop {
        let gnorm = out.grad.amax();
        trace.push(TracePoint {
            objective: out.objective,
            grad_norm: gnorm,
        });
        let mut budget_left = iterations < opts.max_outer_iters;
        if iterations >= window_anchor.0 + STALL_WINDOW {
            let gain = out.objective - window_anchor.1;
            if gain < 1e-8 * (1.0 + out.objective.abs()) {
                budget_left = false;
            }
            window_anchor = (iterations, out.objective);
        }
        if gnorm <= opts.grad_tol || !budget_left {
            if gauged || !budget_left {
                return Ok(RunOutcome {
                    phi,
                    objective: out.objective,
                    infos: out.infos,
                    grad_norm: gnorm,
                    converged: gnorm <= opts.grad_tol,
                    iterations,
                    sols: out.sols,
                    trace,
                });
            }
            // converged in the raw parametrization; fix the gauge and
            // polish so the reported gradient belongs to the reported φ
            phi = gauge_fix_phi(&phi, weight_x);
            warms = vec![None; terms.len()];
            out = eval_terms(terms, &phi, &solver, &warms)?;
            gauged = true;
            continue;
        }

        let g_fro_sq = out.grad.norm_squared();
        let mut step = step_carry.min(opts.step_init * 1e6).max(1e-18);
        let mut accepted = None;
        for _ in 0..80 {
            let trial_values = phi.values() + step * &out.grad;
            let trial = FeatureMap::new(trial_values).expect("ascent step keeps shape");
            match eval_terms(terms, &trial, &solver, &warms) {
                // require a representable increase: once armijo·step·‖g‖²
                // underflows against L, the bound alone would accept a
                // bitwise no-op step and freeze the ascent
                Ok(t) if t.objective >= out.objective + opts.armijo * step * g_fro_sq
                    && t.objective > out.objective =>
                {
                    accepted = Some((trial, t));
                    break;
                }
                Ok(_)
                | Err(FitError::InnerSolve {
                    source: MaxEntError::UnboundedPotentials,
                    ..
                })
                | Err(FitError::InnerUnconverged { .. }) => {
                    step *= opts.step_shrink;
                }
                Err(e) => return Err(e),
            }
        }
        match accepted {
            Some((trial, t)) => {
                step_carry = step * 2.0;
                phi = trial;
                for (w, s) in warms.iter_mut().zip(t.sols.iter()) {
                    *w = Some(s.potentials.clone());
                }
                out = t;
                iterations += 1;
                gauged = false;
                if phi.values().amax() > PHI_CAP {
                    phi = gauge_fix_phi(&phi, weight_x);
                    warms = vec![None; terms.len()];
                    out = eval_terms(terms, &phi, &solver, &warms)?;
                }
            }
            None => {
                // objective noise from the inner solves can drown genuine
                // progress near stationarity; tighten the solves and retry
                // before giving up
                if tightenings < 2 && out.grad.amax() > opts.grad_tol {
                    tightenings += 1;
                    solver.tolerance = (solver.tolerance * 1e-3).max(1e-14);
                    warms = vec![None; terms.len()];
                    out = eval_terms(terms, &phi, &solver, &warms)?;
                    step_carry = opts.step_init;
                    gauged = false;
                    continue;
                }
                // line search exhausted at machine precision; report as-is
                let gnorm = out.grad.amax();
                if !gauged {
                    phi = gauge_fix_phi(&phi, weight_x);
                    warms = vec![None; terms.len()];
                    out = eval_terms(terms, &phi, &solver, &warms)?;
                }
                let gnorm_fixed = out.grad.amax();
                trace.push(TracePoint {
                    objective: out.objective,
                    grad_norm: gnorm_fixed,
                });
                return Ok(RunOutcome {
                    phi,
                    objective: out.objective,
                    infos: out.infos,
                    grad_norm: gnorm_fixed,
                    converged: gnorm.min(gnorm_fixed) <= opts.grad_tol,
                    iterations,
                    sols: out.sols,
                    trace,
                });
            }
        }
    }
}

fn validate_terms(terms: &[Term]) -> Result<(), FitError> {
    if !terms.iter().any(|t| t.sign == Sign::Plus && t.weight > 0.0) {
        return Err(FitError::NoPositiveTerm(format!("{} terms given", terms.len())));
    }
    for t in terms {
        if t.weight < 0.0 {
            return Err(FitError::NegativeWeight(t.weight));
        }
    }
    for pair in terms.windows(2) {
        check_shared_x(&pair[0].table, &pair[1].table)?;
    }
    Ok(())
}

/// Maximize the signed weighted sum of measurement informations over
/// feature maps of dimension d, with restarts. The best run by objective
/// wins; ties keep the lowest start index.
pub fn fit_multi(terms: &[Term], d: usize, opts: &FitOptions) -> Result<FitResult, FitError> {
    if d == 0 {
        return Err(FitError::ZeroDim);
    }
    validate_terms(terms)?;
    // drop zero-weight terms: they never influence L and their solves
    // would only burn time (and forbid the λ=0 reduction)
    let active: Vec<Term> = terms.iter().filter(|t| t.weight > 0.0).cloned().collect();
    let first_plus = active
        .iter()
        .find(|t| t.sign == Sign::Plus)
        .expect("validated above");
    let weight_x = first_plus.table.marginal_x();
    let nx = first_plus.table.nx();
    let restarts = opts.restarts.max(1);

    let starts: Vec<(usize, FeatureMap)> = (0..restarts)
        .map(|i| {
            let phi0 = if i == 0 {
                svd_start(&first_plus.table, d)
            } else {
                random_start(nx, d, opts.init_scale, opts.seed, i as u64)
            };
            (i, phi0)
        })
        .collect();

    let outcomes: Vec<(usize, Result<RunOutcome, FitError>)> = starts
        .into_par_iter()
        .map(|(i, phi0)| (i, ascend(&active, phi0, &weight_x, opts)))
        .collect();

    let mut best: Option<(usize, RunOutcome)> = None;
    let mut first_err: Option<String> = None;
    for (i, res) in outcomes {
        match res {
            Ok(run) => {
                let better = match &best {
                    None => true,
                    Some((_, b)) => run.objective > b.objective,
                };
                if better {
                    best = Some((i, run));
                }
            }
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e.to_string());
                }
            }
        }
    }
    let (restart_index, run) = best
        .ok_or_else(|| FitError::AllRestartsFailed(restarts, first_err.unwrap_or_default()))?;

    // map infos back onto the original term order (zero-weight terms get 0)
    let mut term_infos = Vec::with_capacity(terms.len());
    let mut it = run.infos.iter();
    for t in terms {
        if t.weight > 0.0 {
            term_infos.push(*it.next().expect("one info per active term"));
        } else {
            term_infos.push(0.0);
        }
    }

    Ok(FitResult {
        phi: run.phi,
        objective_value: run.objective,
        info_plus: term_infos
            .iter()
            .zip(terms.iter())
            .find(|(_, t)| t.sign == Sign::Plus)
            .map(|(i, _)| *i)
            .unwrap_or(0.0),
        info_minus: terms
            .iter()
            .position(|t| t.sign == Sign::Minus && t.weight > 0.0)
            .map(|i| term_infos[i]),
        term_infos,
        grad_norm: run.grad_norm,
        converged: run.converged,
        iterations: run.iterations,
        solutions: run.sols,
        trace: run.trace,
        seed: opts.seed,
        restart_index,
    })
}

/// Maximize L = I_M[φ, p⁺] − λ I_M[φ, p⁻] by restarted gradient ascent.
pub fn fit(obj: &Objective, opts: &FitOptions) -> Result<FitResult, FitError> {
    let terms = obj.terms();
    fit_multi(&terms, obj.d(), opts)
}

/// Max-abs entry of p⁺(x)Δ⟨ψ⁺⟩ − λ p⁻(x)Δ⟨ψ⁻⟩ over x and components,
/// evaluated on the fit's terminal solutions. Numerically identical to
/// the terminal gradient norm (same expression up to global sign).
pub fn stationarity_residual(obj: &Objective, fit: &FitResult) -> Result<f64, FitError> {
    let g_plus = entropy_gradient(&fit.phi, obj.relevance(), &fit.solutions[0])?;
    let mut expr = g_plus;
    if obj.lambda() > 0.0 {
        let g_minus = entropy_gradient(&fit.phi, obj.irrelevance(), &fit.solutions[1])?;
        expr -= obj.lambda() * g_minus;
    }
    Ok(expr.amax())
}

/// Numerically confirm the fit sits at a local maximum of L: every probed
/// random perturbation of φ must not increase the objective (beyond slack).
pub fn is_local_maximum(
    obj: &Objective,
    fit: &FitResult,
    solver: &SolverOptions,
    probes: usize,
    scale: f64,
    seed: u64,
    slack: f64,
) -> Result<bool, FitError> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..probes {
        let noise = DMatrix::from_fn(fit.phi.nx(), fit.phi.d(), |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            scale * z
        });
        let perturbed = FeatureMap::new(fit.phi.values() + noise).expect("same shape");
        let (l, _, _, _) = objective_and_gradient(obj, &perturbed, solver)?;
        if l > fit.objective_value + slack {
            return Ok(false);
        }
    }
    Ok(true)
}

/// ⟨log(p̂⁺_φ(x,y⁺) / p̂⁻_φ(x,y⁻)^λ)⟩ under the coupled distribution
/// p(x,y⁺,y⁻) = p⁺(y⁺|x) p⁻(y⁻|x) p(x); requires both tables to share
/// their marginal over X. Marginalizing the coupling reduces each side to
/// an expectation under its own table.
pub fn log_likelihood_ratio_objective(
    phi: &FeatureMap,
    p_plus: &JointTable,
    p_minus: &JointTable,
    lambda: f64,
    solver: &SolverOptions,
) -> Result<f64, FitError> {
    check_shared_x(p_plus, p_minus)?;
    let diff = (p_plus.marginal_x() - p_minus.marginal_x()).amax();
    if diff > 1e-9 {
        return Err(FitError::MarginalMismatch(diff));
    }
    let sol_plus = solve_maxent(phi, p_plus, solver, None)?;
    let mut llr = cross_log_mass(p_plus, &sol_plus.p_hat);
    if lambda > 0.0 {
        let sol_minus = solve_maxent(phi, p_minus, solver, None)?;
        llr -= lambda * cross_log_mass(p_minus, &sol_minus.p_hat);
    }
    Ok(llr)
}

/// Σ p(x,y) log q(x,y).
fn cross_log_mass(p: &JointTable, q: &JointTable) -> f64 {
    let mut acc = 0.0;
    for (pi, qi) in p.probs().iter().zip(q.probs().iter()) {
        if *pi > crate::dist::ZERO_TOL {
            acc += pi * qi.ln();
        }
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub fit: FitOptions,
    /// ΔI_M⁺ between adjacent envelope points counting as a transition;
    /// None applies max(0.1·I[p⁺], 0.01).
    pub jump_threshold: Option<f64>,
    /// Branch objective disagreement marking hysteresis.
    pub hysteresis_tol: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            fit: FitOptions::default(),
            jump_threshold: None,
            hysteresis_tol: 1e-3,
        }
    }
}

/// Per-λ results along both warm-started branches, with detected
/// transitions and metastable (hysteresis) intervals.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub lambdas: Vec<f64>,
    pub up_branch: Vec<Result<FitResult, String>>,
    pub down_branch: Vec<Result<FitResult, String>>,
    /// Grid intervals (λ_i, λ_{i+1}) where the envelope I_M⁺ jumps.
    pub transitions: Vec<(f64, f64)>,
    /// Maximal λ ranges where the branch objectives disagree.
    pub hysteresis_intervals: Vec<(f64, f64)>,
    pub jump_threshold: f64,
}

impl SweepResult {
    /// Pointwise-best fit across branches by objective value.
    pub fn envelope(&self) -> Vec<Option<&FitResult>> {
        self.lambdas
            .iter()
            .enumerate()
            .map(|(i, _)| {
                match (&self.up_branch[i], &self.down_branch[i]) {
                    (Ok(u), Ok(d)) => Some(if u.objective_value >= d.objective_value {
                        u
                    } else {
                        d
                    }),
                    (Ok(u), Err(_)) => Some(u),
                    (Err(_), Ok(d)) => Some(d),
                    (Err(_), Err(_)) => None,
                }
            })
            .collect()
    }
}

/// λ sweep with warm-started branches in both directions. Each interior
/// point runs one ascent warm-started from the neighbor's φ plus one
/// fresh single-start fit, keeping the better; endpoints anchor their
/// branch with a full restarted fit.
pub fn sweep_lambda(
    obj_template: &Objective,
    grid: &[f64],
    opts: &SweepOptions,
) -> Result<SweepResult, FitError> {
    if grid.is_empty() {
        return Err(FitError::XMismatch("empty λ grid".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) && grid.len() > 1 {
        return Err(FitError::XMismatch("λ grid must be strictly ascending".into()));
    }
    if grid.iter().any(|&l| l < 0.0) {
        return Err(FitError::NegativeLambda(
            grid.iter().cloned().fold(f64::INFINITY, f64::min),
        ));
    }

    let indices_up: Vec<usize> = (0..grid.len()).collect();
    let indices_down: Vec<usize> = (0..grid.len()).rev().collect();
    let up = run_branch(obj_template, grid, &indices_up, opts, 0x5350)?;
    let down = run_branch(obj_template, grid, &indices_down, opts, 0x444e)?;

    let i_plus = obj_template.relevance().mutual_information();
    let threshold = opts
        .jump_threshold
        .unwrap_or_else(|| (0.1 * i_plus).max(0.01));

    let mut result = SweepResult {
        lambdas: grid.to_vec(),
        up_branch: up,
        down_branch: down,
        transitions: Vec::new(),
        hysteresis_intervals: Vec::new(),
        jump_threshold: threshold,
    };

    let env: Vec<Option<f64>> = result
        .envelope()
        .iter()
        .map(|f| f.map(|f| f.info_plus))
        .collect();
    for i in 0..grid.len().saturating_sub(1) {
        if let (Some(a), Some(b)) = (env[i], env[i + 1]) {
            if (a - b).abs() > threshold {
                result.transitions.push((grid[i], grid[i + 1]));
            }
        }
    }

    let mut run_start: Option<usize> = None;
    for i in 0..grid.len() {
        let disagree = match (&result.up_branch[i], &result.down_branch[i]) {
            (Ok(u), Ok(d)) => (u.objective_value - d.objective_value).abs() > opts.hysteresis_tol,
            _ => false,
        };
        if disagree && run_start.is_none() {
            run_start = Some(i);
        }
        if (!disagree || i == grid.len() - 1) && run_start.is_some() {
            let end = if disagree { i } else { i - 1 };
            result
                .hysteresis_intervals
                .push((grid[run_start.take().unwrap()], grid[end]));
        }
    }

    Ok(result)
}

fn run_branch(
    obj_template: &Objective,
    grid: &[f64],
    order: &[usize],
    opts: &SweepOptions,
    seed_salt: u64,
) -> Result<Vec<Result<FitResult, String>>, FitError> {
    let mut out: Vec<Option<Result<FitResult, String>>> = vec![None; grid.len()];
    let mut prev_phi: Option<FeatureMap> = None;
    for (pos, &idx) in order.iter().enumerate() {
        let obj = obj_template.with_lambda(grid[idx])?;
        let terms = obj.terms();
        let weight_x = obj.relevance().marginal_x();
        let res: Result<FitResult, String> = if pos == 0 || prev_phi.is_none() {
            fit(&obj, &opts.fit).map_err(|e| e.to_string())
        } else {
            // warm-started ascent from the neighbor, plus one fresh
            // single-start fit; keep the better
            let warm_run = ascend(
                &terms
                    .iter()
                    .filter(|t| t.weight > 0.0)
                    .cloned()
                    .collect::<Vec<_>>(),
                prev_phi.clone().unwrap(),
                &weight_x,
                &opts.fit,
            );
            let fresh_opts = FitOptions {
                restarts: 1,
                seed: opts.fit.seed ^ seed_salt ^ (idx as u64),
                ..opts.fit
            };
            let fresh = fit(&obj, &fresh_opts);
            match (warm_run, fresh) {
                (Ok(w), Ok(f)) => {
                    if w.objective >= f.objective_value {
                        Ok(finish_warm_run(w, &terms, opts.fit.seed))
                    } else {
                        Ok(f)
                    }
                }
                (Ok(w), Err(_)) => Ok(finish_warm_run(w, &terms, opts.fit.seed)),
                (Err(_), Ok(f)) => Ok(f),
                (Err(we), Err(_)) => Err(we.to_string()),
            }
        };
        if let Ok(f) = &res {
            prev_phi = Some(f.phi.clone());
        }
        out[idx] = Some(res);
    }
    Ok(out.into_iter().map(|o| o.expect("all points visited")).collect())
}

fn finish_warm_run(run: RunOutcome, terms: &[Term], seed: u64) -> FitResult {
    let active: Vec<&Term> = terms.iter().filter(|t| t.weight > 0.0).collect();
    let mut term_infos = Vec::with_capacity(terms.len());
    let mut it = run.infos.iter();
    for t in terms {
        if t.weight > 0.0 {
            term_infos.push(*it.next().expect("one info per active term"));
        } else {
            term_infos.push(0.0);
        }
    }
    let info_plus = terms
        .iter()
        .zip(term_infos.iter())
        .find(|(t, _)| t.sign == Sign::Plus)
        .map(|(_, i)| *i)
        .unwrap_or(0.0);
    let info_minus = terms
        .iter()
        .position(|t| t.sign == Sign::Minus && t.weight > 0.0)
        .map(|i| term_infos[i]);
    let _ = active;
    FitResult {
        phi: run.phi,
        objective_value: run.objective,
        info_plus,
        info_minus,
        term_infos,
        grad_norm: run.grad_norm,
        converged: run.converged,
        iterations: run.iterations,
        solutions: run.sols,
        trace: run.trace,
        seed,
        restart_index: usize::MAX, // warm-started, not a restart
    }
}

/// KL form of the objective: L = −KL(p⁺‖p̂⁺) + λKL(p⁻‖p̂⁻) + (I[p⁺] − λI[p⁻]).
/// Exposed for diagnostics and tests.
pub fn objective_via_kl(
    obj: &Objective,
    fit: &FitResult,
) -> Result<f64, FitError> {
    let kl_plus = kl_divergence(obj.relevance(), &fit.solutions[0].p_hat)?;
    let mut l = -kl_plus + obj.relevance().mutual_information();
    if obj.lambda() > 0.0 {
        let kl_minus = kl_divergence(obj.irrelevance(), &fit.solutions[1].p_hat)?;
        l += obj.lambda() * (kl_minus - obj.irrelevance().mutual_information());
    }
    Ok(l)
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

    fn random_phi(rng: &mut impl Rng, nx: usize, d: usize) -> FeatureMap {
        FeatureMap::new(DMatrix::from_fn(nx, d, |_, _| rng.gen_range(-1.0..1.0))).unwrap()
    }

    fn solve(phi: &FeatureMap, p: &JointTable) -> MaxEntSolution {
        solve_maxent(phi, p, &SolverOptions::default(), None).unwrap()
    }

    #[test]
    fn entropy_gradient_zero_when_phat_equals_p() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_table(&mut rng, 4, 3);
        let phi = random_phi(&mut rng, 4, 3); // full rank: p̂ = p
        let sol = solve(&phi, &p);
        let g = entropy_gradient(&phi, &p, &sol).unwrap();
        assert!(g.amax() < 1e-6, "gradient {:e}", g.amax());
    }

    #[test]
    fn entropy_gradient_zero_for_constant_feature() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_table(&mut rng, 4, 3);
        let phi = FeatureMap::new(DMatrix::from_element(4, 1, 3.0)).unwrap();
        let sol = solve(&phi, &p);
        assert!(sol.psi().amax() < 1e-9, "centered gauge leaves psi = 0");
        let g = entropy_gradient(&phi, &p, &sol).unwrap();
        assert!(g.amax() < 1e-9);
    }

    #[test]
    fn entropy_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_table(&mut rng, 5, 4);
        let phi = random_phi(&mut rng, 5, 2);
        let sol = solve(&phi, &p);
        let g = entropy_gradient(&phi, &p, &sol).unwrap();

        let h = 1e-5;
        let opts = SolverOptions::default();
        let mut fd = DMatrix::zeros(5, 2);
        for k in 0..2 {
            for x in 0..5 {
                let mut vp = phi.values().clone();
                vp[(x, k)] += h;
                let mut vm = phi.values().clone();
                vm[(x, k)] -= h;
                let hp = solve_maxent(&FeatureMap::new(vp).unwrap(), &p, &opts, None)
                    .unwrap()
                    .p_hat
                    .entropy();
                let hm = solve_maxent(&FeatureMap::new(vm).unwrap(), &p, &opts, None)
                    .unwrap()
                    .p_hat
                    .entropy();
                fd[(x, k)] = (hp - hm) / (2.0 * h);
            }
        }
        let rel = (&fd - &g).norm() / fd.norm();
        assert!(rel < 1e-4, "relative error {rel}");
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p_plus = random_table(&mut rng, 4, 3);
        let p_minus = random_table(&mut rng, 4, 3);
        let obj = Objective::new(0.7, p_plus, p_minus, 2).unwrap();
        let phi = random_phi(&mut rng, 4, 2);
        let opts = SolverOptions::default();
        let (_, _, _, g) = objective_and_gradient(&obj, &phi, &opts).unwrap();

        let h = 1e-5;
        let mut fd = DMatrix::zeros(4, 2);
        for k in 0..2 {
            for x in 0..4 {
                let mut vp = phi.values().clone();
                vp[(x, k)] += h;
                let mut vm = phi.values().clone();
                vm[(x, k)] -= h;
                let (lp, _, _, _) =
                    objective_and_gradient(&obj, &FeatureMap::new(vp).unwrap(), &opts).unwrap();
                let (lm, _, _, _) =
                    objective_and_gradient(&obj, &FeatureMap::new(vm).unwrap(), &opts).unwrap();
                fd[(x, k)] = (lp - lm) / (2.0 * h);
            }
        }
        let rel = (&fd - &g).norm() / fd.norm();
        assert!(rel < 1e-4, "relative error {rel}");
    }

    #[test]
    fn lambda_zero_gradient_is_flipped_entropy_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p_plus = random_table(&mut rng, 4, 3);
        let p_minus = random_table(&mut rng, 4, 3);
        let obj = Objective::new(0.0, p_plus.clone(), p_minus, 1).unwrap();
        let phi = random_phi(&mut rng, 4, 1);
        let (_, _, info_minus, g) =
            objective_and_gradient(&obj, &phi, &SolverOptions::default()).unwrap();
        assert!(info_minus.is_none());
        let sol = solve(&phi, &p_plus);
        let eg = entropy_gradient(&phi, &p_plus, &sol).unwrap();
        assert!((&g + &eg).amax() < 1e-9);
    }

    #[test]
    fn fit_product_table_has_no_information() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p_plus = random_table(&mut rng, 4, 3).product_of_marginals();
        let p_minus = random_table(&mut rng, 4, 3);
        let obj = Objective::new(0.5, p_plus, p_minus, 1).unwrap();
        let opts = FitOptions {
            restarts: 2,
            ..FitOptions::default()
        };
        let fit = fit(&obj, &opts).unwrap();
        assert!(fit.objective_value <= 1e-6, "L = {}", fit.objective_value);
    }

    #[test]
    fn fit_full_dimension_saturates() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p_plus = random_table(&mut rng, 4, 3);
        let p_minus = random_table(&mut rng, 4, 3);
        let i_p = p_plus.mutual_information();
        let obj = Objective::new(0.0, p_plus, p_minus, 3).unwrap();
        let opts = FitOptions {
            restarts: 2,
            ..FitOptions::default()
        };
        let res = fit(&obj, &opts).unwrap();
        assert!(
            (res.info_plus - i_p).abs() < 1e-3,
            "I_M = {} vs I[p] = {}",
            res.info_plus,
            i_p
        );
    }

    #[test]
    fn fit_monotone_trace_and_stationarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p_plus = random_table(&mut rng, 5, 4);
        let p_minus = random_table(&mut rng, 5, 4);
        let obj = Objective::new(0.4, p_plus, p_minus, 1).unwrap();
        let opts = FitOptions {
            restarts: 2,
            ..FitOptions::default()
        };
        let res = fit(&obj, &opts).unwrap();
        assert!(res.converged);
        for w in res.trace.windows(2) {
            // the trace restarts at gauge-fix boundaries, where the
            // objective is preserved up to solver tolerance
            assert!(w[1].objective >= w[0].objective - 1e-7);
        }
        let sr = stationarity_residual(&obj, &res).unwrap();
        assert_abs_diff_eq!(sr, res.grad_norm, epsilon = 1e-10);
        assert!(sr <= opts.grad_tol);
        assert_abs_diff_eq!(
            res.objective_value,
            res.info_plus - 0.4 * res.info_minus.unwrap(),
            epsilon = 1e-9
        );

        // perturbed φ has strictly larger stationarity residual
        let noise = random_phi(&mut rng, 5, 1);
        let perturbed =
            FeatureMap::new(res.phi.values() + 0.1 * noise.values()).unwrap();
        let (_, _, _, g) =
            objective_and_gradient(&obj, &perturbed, &SolverOptions::default()).unwrap();
        assert!(g.amax() > sr);
    }

    #[test]
    fn fit_multi_reductions() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p_plus = random_table(&mut rng, 4, 3);
        let p_minus = random_table(&mut rng, 4, 3);
        let opts = FitOptions {
            restarts: 2,
            max_outer_iters: 300,
            ..FitOptions::default()
        };

        // one +/− pair reproduces fit exactly
        let lambda = 0.6;
        let obj = Objective::new(lambda, p_plus.clone(), p_minus.clone(), 1).unwrap();
        let direct = fit(&obj, &opts).unwrap();
        let multi = fit_multi(
            &[
                Term {
                    table: p_plus.clone(),
                    sign: Sign::Plus,
                    weight: 1.0,
                },
                Term {
                    table: p_minus.clone(),
                    sign: Sign::Minus,
                    weight: lambda,
                },
            ],
            1,
            &opts,
        )
        .unwrap();
        assert_eq!(direct.phi.values(), multi.phi.values());
        assert_eq!(direct.objective_value, multi.objective_value);

        // two half-weighted identical + terms match the single-term trajectory
        let single = fit_multi(
            &[Term {
                table: p_plus.clone(),
                sign: Sign::Plus,
                weight: 1.0,
            }],
            1,
            &opts,
        )
        .unwrap();
        let halved = fit_multi(
            &[
                Term {
                    table: p_plus.clone(),
                    sign: Sign::Plus,
                    weight: 0.5,
                },
                Term {
                    table: p_plus.clone(),
                    sign: Sign::Plus,
                    weight: 0.5,
                },
            ],
            1,
            &opts,
        )
        .unwrap();
        assert_eq!(single.trace.len(), halved.trace.len());
        for (a, b) in single.trace.iter().zip(halved.trace.iter()) {
            assert!((a.objective - b.objective).abs() <= 1e-10);
            assert!((a.grad_norm - b.grad_norm).abs() <= 1e-10);
        }
    }

    #[test]
    fn gauge_invariance_of_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let p_plus = random_table(&mut rng, 5, 4);
        let p_minus = random_table(&mut rng, 5, 4);
        let obj = Objective::new(0.3, p_plus, p_minus, 2).unwrap();
        let phi = random_phi(&mut rng, 5, 2);
        let opts = SolverOptions::default();
        let (l0, _, _, _) = objective_and_gradient(&obj, &phi, &opts).unwrap();

        let m = DMatrix::from_row_slice(2, 2, &[1.5, -0.3, 0.2, 0.8]);
        let c = DVector::from_column_slice(&[0.7, -1.1]);
        let mut transformed = phi.values() * m.transpose();
        for x in 0..5 {
            for k in 0..2 {
                transformed[(x, k)] += c[k];
            }
        }
        let (l1, _, _, _) =
            objective_and_gradient(&obj, &FeatureMap::new(transformed).unwrap(), &opts).unwrap();
        assert_abs_diff_eq!(l0, l1, epsilon = 1e-7);
    }

    #[test]
    fn kl_identity_of_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p_plus = random_table(&mut rng, 4, 4);
        let p_minus = random_table(&mut rng, 4, 4);
        let obj = Objective::new(0.8, p_plus, p_minus, 1).unwrap();
        let opts = FitOptions {
            restarts: 2,
            ..FitOptions::default()
        };
        let res = fit(&obj, &opts).unwrap();
        let via_kl = objective_via_kl(&obj, &res).unwrap();
        assert_abs_diff_eq!(res.objective_value, via_kl, epsilon = 1e-7);
    }

    #[test]
    fn llr_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        // shared p(x): build p⁻ from p⁺'s x-marginal with random conditionals
        let p_plus = random_table(&mut rng, 4, 3);
        let px = p_plus.marginal_x();
        let mut probs = DMatrix::zeros(4, 3);
        for x in 0..4 {
            let mut cond: Vec<f64> = (0..3).map(|_| rng.gen_range(0.1..1.0)).collect();
            let s: f64 = cond.iter().sum();
            for c in cond.iter_mut() {
                *c /= s;
            }
            for y in 0..3 {
                probs[(x, y)] = px[x] * cond[y];
            }
        }
        let p_minus = JointTable::from_probs(
            probs,
            p_plus.x_labels().to_vec(),
            p_plus.y_labels().to_vec(),
        )
        .unwrap();
        let solver = SolverOptions::default();

        // λ = 0: LLR equals −KL(p⁺‖p̂⁺) − H[p⁺]
        let phi = random_phi(&mut rng, 4, 1);
        let llr0 = log_likelihood_ratio_objective(&phi, &p_plus, &p_minus, 0.0, &solver).unwrap();
        let sol = solve(&phi, &p_plus);
        let expected = -kl_divergence(&p_plus, &sol.p_hat).unwrap() - p_plus.entropy();
        assert_abs_diff_eq!(llr0, expected, epsilon = 1e-8);

        // constant φ: p̂ is the product of marginals on both sides
        let constant = FeatureMap::new(DMatrix::from_element(4, 1, 1.0)).unwrap();
        let lam = 0.9;
        let llr_c =
            log_likelihood_ratio_objective(&constant, &p_plus, &p_minus, lam, &solver).unwrap();
        let direct = cross_log_mass(&p_plus, &p_plus.product_of_marginals())
            - lam * cross_log_mass(&p_minus, &p_minus.product_of_marginals());
        assert_abs_diff_eq!(llr_c, direct, epsilon = 1e-7);

        // mismatched marginals rejected
        let other = random_table(&mut rng, 4, 3);
        assert!(matches!(
            log_likelihood_ratio_objective(&phi, &p_plus, &other, 1.0, &solver),
            Err(FitError::MarginalMismatch(_))
        ));
    }

    #[test]
    fn llr_difference_matches_objective_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let p_plus = random_table(&mut rng, 4, 3);
        let px = p_plus.marginal_x();
        let mut probs = DMatrix::zeros(4, 3);
        for x in 0..4 {
            let mut cond: Vec<f64> = (0..3).map(|_| rng.gen_range(0.1..1.0)).collect();
            let s: f64 = cond.iter().sum();
            for c in cond.iter_mut() {
                *c /= s;
            }
            for y in 0..3 {
                probs[(x, y)] = px[x] * cond[y];
            }
        }
        let p_minus = JointTable::from_probs(
            probs,
            p_plus.x_labels().to_vec(),
            p_plus.y_labels().to_vec(),
        )
        .unwrap();
        let solver = SolverOptions::default();
        let obj = Objective::new(1.0, p_plus.clone(), p_minus.clone(), 1).unwrap();

        let phi1 = random_phi(&mut rng, 4, 1);
        let phi2 = random_phi(&mut rng, 4, 1);
        let (l1, _, _, _) = objective_and_gradient(&obj, &phi1, &solver).unwrap();
        let (l2, _, _, _) = objective_and_gradient(&obj, &phi2, &solver).unwrap();
        let r1 = log_likelihood_ratio_objective(&phi1, &p_plus, &p_minus, 1.0, &solver).unwrap();
        let r2 = log_likelihood_ratio_objective(&phi2, &p_plus, &p_minus, 1.0, &solver).unwrap();
        assert_abs_diff_eq!(l1 - l2, r1 - r2, epsilon = 1e-7);
    }

    #[test]
    fn gauge_fix_phi_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let phi = random_phi(&mut rng, 6, 2);
        let w = {
            let mut v: Vec<f64> = (0..6).map(|_| rng.gen_range(0.1..1.0)).collect();
            let s: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= s);
            DVector::from_vec(v)
        };
        let fixed = gauge_fix_phi(&phi, &w);
        for k in 0..2 {
            let mean: f64 = (0..6).map(|x| w[x] * fixed.values()[(x, k)]).sum();
            assert!(mean.abs() < 1e-12);
            for j in 0..=k {
                let dot: f64 = (0..6)
                    .map(|x| w[x] * fixed.values()[(x, k)] * fixed.values()[(x, j)])
                    .sum();
                let expected = if j == k { 1.0 } else { 0.0 };
                assert!((dot - expected).abs() < 1e-10);
            }
        }
    }
}
