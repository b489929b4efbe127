//! Constrained score-based estimation of the weighted adjacency matrix.
//!
//! The score is a masked least-squares reconstruction loss
//! `f(B) = 1/(2n) ||(D - D B)_R||_F^2` over the response columns `R`
//! (treatment, mediators and outcome), optionally with an l1 term. Acyclicity
//! is enforced with an augmented Lagrangian on
//! `h1(B) = tr[(I + t B∘B)^w] - w`, and the structural zero blocks are either
//! hard-masked (default) or penalised through `h2`.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::{acyclicity_of, threshold_weights, WeightedGraph};
use crate::layout::BlockLayout;
use crate::optim::{lbfgs, proximal_gradient, soft_threshold, LbfgsOptions, ProxOptions};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InnerSolver {
    /// L-BFGS with Armijo backtracking; used when the objective is smooth.
    Lbfgs,
    /// Proximal gradient with backtracking; always used when `l1 > 0` or the
    /// structural constraints are penalised instead of masked.
    GradientDescent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscoveryConfig {
    /// Acyclicity scale; `None` means `1 / w`.
    pub t: Option<f64>,
    pub max_outer: usize,
    pub inner_iterations: usize,
    pub initial_step: f64,
    pub step_decay: f64,
    /// Required relative drop in `h1` before the penalty is raised.
    pub progress: f64,
    pub penalty_growth: f64,
    pub penalty_cap: f64,
    pub h_tol: f64,
    pub c_init: f64,
    pub l1: f64,
    pub hard_mask: bool,
    pub lambda2_init: f64,
    pub d_init: f64,
    pub loss_mask_deterministic: bool,
    pub solver: InnerSolver,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        Self {
            t: None,
            max_outer: 20,
            inner_iterations: 300,
            initial_step: 1e-2,
            step_decay: 0.5,
            progress: 0.25,
            penalty_growth: 10.0,
            penalty_cap: 1e16,
            h_tol: 1e-8,
            c_init: 1.0,
            l1: 0.0,
            hard_mask: true,
            lambda2_init: 0.0,
            d_init: 1.0,
            loss_mask_deterministic: true,
            solver: InnerSolver::Lbfgs,
        }
    }
}

impl DiscoveryConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.progress > 0.0 && self.progress < 1.0) {
            return bad("progress factor must lie in (0, 1)");
        }
        if !(self.penalty_growth > 1.0) {
            return bad("penalty growth must exceed 1");
        }
        if !(self.h_tol > 0.0 && self.penalty_cap > 0.0 && self.initial_step > 0.0 && self.c_init > 0.0) {
            return bad("tolerances, caps and steps must be positive");
        }
        if !(self.step_decay > 0.0 && self.step_decay < 1.0) {
            return bad("step decay must lie in (0, 1)");
        }
        if self.t.is_some_and(|t| !(t > 0.0)) {
            return bad("acyclicity scale must be positive");
        }
        if !(self.l1 >= 0.0 && self.lambda2_init >= 0.0 && self.d_init > 0.0) {
            return bad("penalty weights must be non-negative");
        }
        if self.max_outer == 0 || self.inner_iterations == 0 {
            return bad("iteration counts must be positive");
        }
        Ok(())
    }
}

/// Per-outer-iteration record of the augmented Lagrangian.
#[derive(Debug, Clone, Serialize)]
pub struct OuterStep {
    pub c: f64,
    pub lambda1: f64,
    pub h1: f64,
    pub h2: f64,
    /// Objective value after every accepted inner step.
    pub inner_trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FitOutcome<T> {
    pub graph: WeightedGraph<T>,
    pub h1: T,
    pub steps: Vec<OuterStep>,
}

#[derive(Debug)]
pub enum FitError<T> {
    /// `h1` never dropped below tolerance; carries the iterate with the
    /// smallest `h1` seen.
    NotConverged { best: WeightedGraph<T>, h1: T, steps: Vec<OuterStep> },
    Invalid(Error),
}

impl<T: Scalar> std::fmt::Display for FitError<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FitError::NotConverged { h1, .. } => write!(f, "discovery did not converge (h1 = {:e})", h1.as_f64()),
            FitError::Invalid(e) => e.fmt(f),
        }
    }
}

impl<T: Scalar> std::error::Error for FitError<T> {}

impl<T: Scalar> From<FitError<T>> for Error {
    fn from(e: FitError<T>) -> Self {
        match e {
            FitError::NotConverged { h1, .. } => Error::NotConverged { h1: h1.as_f64() },
            FitError::Invalid(e) => e,
        }
    }
}

impl<T> From<Error> for FitError<T> {
    fn from(e: Error) -> Self {
        FitError::Invalid(e)
    }
}

/// Least-squares score over the response columns, evaluated through the
/// Gram matrix `D^T D / n`.
pub(crate) struct Score<T> {
    gram: Array2<T>,
    responses: Vec<bool>,
}

impl<T: Scalar> Score<T> {
    pub(crate) fn new(data: &Dataset<T>, mask_deterministic: bool) -> Self {
        let d = data.values();
        let n = T::of(d.nrows() as f64);
        let gram = d.t().dot(d) / n;
        let layout = data.layout();
        let responses = (0..layout.width())
            .map(|j| !(mask_deterministic && layout.role(j).is_deterministic_root()))
            .collect();
        Self { gram, responses }
    }

    /// Loss and gradient with respect to `B`.
    pub(crate) fn eval(&self, b: &Array2<T>) -> (T, Array2<T>) {
        let w = b.nrows();
        let mut resid = Array2::<T>::eye(w) - b;
        for (j, &keep) in self.responses.iter().enumerate() {
            if !keep {
                resid.column_mut(j).fill(T::zero());
            }
        }
        let g_resid = self.gram.dot(&resid);
        let half = T::of(0.5);
        let value = (&resid * &g_resid).sum() * half;
        (value, g_resid.mapv(|v| -v))
    }

    pub(crate) fn value(&self, b: &Array2<T>) -> T {
        self.eval(b).0
    }
}

struct Problem<'a, T> {
    score: &'a Score<T>,
    /// Entries that are optimisation variables.
    free: Vec<(usize, usize)>,
    /// Subset of `free` that the structural constraints forbid (soft mode only).
    forbidden: Vec<bool>,
    w: usize,
    t: T,
}

impl<T: Scalar> Problem<'_, T> {
    fn unpack(&self, x: &Array1<T>) -> Array2<T> {
        let mut b = Array2::zeros((self.w, self.w));
        for (k, &(i, j)) in self.free.iter().enumerate() {
            b[[i, j]] = x[k];
        }
        b
    }

    fn gather(&self, m: &Array2<T>) -> Array1<T> {
        self.free.iter().map(|&(i, j)| m[[i, j]]).collect()
    }

    fn h2(&self, x: &Array1<T>) -> T {
        x.iter().zip(&self.forbidden).filter(|(_, &f)| f).map(|(v, _)| v.abs()).sum()
    }

    /// Smooth part of the augmented Lagrangian: `f + λ1 h1 + c h1²`.
    fn smooth(&self, x: &Array1<T>, lambda1: T, c: T) -> Option<(T, Array1<T>)> {
        let b = self.unpack(x);
        let (f, gf) = self.score.eval(&b);
        let ac = acyclicity_of(&b, self.t).ok()?;
        let h = ac.value;
        let coef = lambda1 + T::of(2.0) * c * h;
        let value = f + lambda1 * h + c * h * h;
        let grad = gf + &(ac.gradient * coef);
        value.is_finite().then(|| (value, self.gather(&grad)))
    }
}

/// Fits the raw weighted adjacency estimate.
pub fn fit<T: Scalar>(data: &Dataset<T>, cfg: &DiscoveryConfig) -> Result<FitOutcome<T>, FitError<T>> {
    cfg.validate()?;
    let layout = data.layout();
    if data.rows() == 0 {
        return Err(Error::Dimension("dataset has no rows".into()).into());
    }
    if data.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("dataset values".into()).into());
    }
    let w = layout.width();
    let score = Score::new(data, cfg.loss_mask_deterministic);
    let t = T::of(cfg.t.unwrap_or(1.0 / w as f64));

    let mut free = Vec::new();
    let mut forbidden = Vec::new();
    for i in 0..w {
        for j in 0..w {
            if i == j {
                continue;
            }
            let ok = layout.edge_permitted(i, j);
            if ok || !cfg.hard_mask {
                free.push((i, j));
                forbidden.push(!ok);
            }
        }
    }
    let problem = Problem { score: &score, free, forbidden, w, t };
    let smooth_only = cfg.hard_mask && cfg.l1 == 0.0 && cfg.solver == InnerSolver::Lbfgs;

    let mut x = Array1::<T>::zeros(problem.free.len());
    let mut c = T::of(cfg.c_init);
    let mut lambda1 = T::zero();
    let mut d = T::of(cfg.d_init);
    let mut lambda2 = T::of(cfg.lambda2_init);
    let mut h_old = T::infinity();
    let mut h2_old = T::infinity();
    let mut best: Option<(T, Array1<T>)> = None;
    let mut steps = Vec::new();
    let cap = T::of(cfg.penalty_cap);
    let h_tol = T::of(cfg.h_tol);
    let l1 = T::of(cfg.l1);

    let solve = |x: &Array1<T>, lambda1: T, c: T, lambda2: T, d: T| {
        if smooth_only {
            let opts = LbfgsOptions {
                memory: 10,
                max_iter: cfg.inner_iterations,
                initial_step: T::of(cfg.initial_step),
                gtol: T::of(1e-12).max(T::epsilon() * T::of(100.0)),
                ftol: T::epsilon(),
            };
            lbfgs(x.clone(), |v| problem.smooth(v, lambda1, c), &opts)
        } else {
            let opts = ProxOptions {
                max_iter: cfg.inner_iterations,
                initial_step: T::of(cfg.initial_step),
                decay: T::of(cfg.step_decay),
                tol: T::epsilon(),
            };
            let forbidden = &problem.forbidden;
            let h2_now = problem.h2(x);
            let soft_weight = lambda2 + T::of(2.0) * d * h2_now;
            let prox = |z: Array1<T>, step: T| {
                Array1::from_iter(z.iter().zip(forbidden).map(|(&v, &f)| {
                    soft_threshold(v, step * if f { soft_weight + l1 } else { l1 })
                }))
            };
            let nonsmooth = |v: &Array1<T>| {
                let h2 = problem.h2(v);
                l1 * v.iter().map(|e| e.abs()).sum::<T>() + lambda2 * h2 + d * h2 * h2
            };
            proximal_gradient(x.clone(), |v| problem.smooth(v, lambda1, c), prox, nonsmooth, &opts)
        }
    };

    'outer: for _ in 0..cfg.max_outer {
        // re-solve with a larger penalty until h1 has dropped enough
        let (h_new, h2_new) = loop {
            let result = solve(&x, lambda1, c, lambda2, d);
            x = result.x;
            let h_new = acyclicity_of(&problem.unpack(&x), t)?.value;
            let h2_new = problem.h2(&x);
            steps.push(OuterStep {
                c: c.as_f64(),
                lambda1: lambda1.as_f64(),
                h1: h_new.as_f64(),
                h2: h2_new.as_f64(),
                inner_trace: result.trace.iter().map(|v| v.as_f64()).collect(),
            });
            let score_h = h_new.max(h2_new);
            if best.as_ref().is_none_or(|(bh, _)| score_h < *bh) {
                best = Some((score_h, x.clone()));
            }
            if h_new <= h_tol || h_new <= T::of(cfg.progress) * h_old {
                break (h_new, h2_new);
            }
            c *= T::of(cfg.penalty_growth);
            if c * d > cap {
                break 'outer;
            }
        };
        if h_new <= h_tol && (cfg.hard_mask || h2_new <= h_tol) {
            let graph = WeightedGraph::new(layout, problem.unpack(&x))?;
            return Ok(FitOutcome { graph, h1: h_new, steps });
        }
        lambda1 += c * h_new;
        h_old = h_new;
        if !cfg.hard_mask {
            if h2_new > T::of(cfg.progress) * h2_old {
                d *= T::of(cfg.penalty_growth);
            }
            lambda2 += d * h2_new;
            h2_old = h2_new;
        }
        if c * d > cap {
            break;
        }
    }
    let (h1, xb) = best.expect("at least one outer iteration ran");
    let best = WeightedGraph::new(layout, problem.unpack(&xb))?;
    Err(FitError::NotConverged { best, h1, steps })
}

/// Reconstruction loss of `B ⊙ 1{|B| > δ}` on the response columns.
pub fn reconstruction_loss<T: Scalar>(g: &WeightedGraph<T>, data: &Dataset<T>, mask_deterministic: bool) -> T {
    Score::new(data, mask_deterministic).value(g.matrix())
}

/// Picks the threshold from `grid` (ascending) minimising the reconstruction
/// loss of the thresholded estimate; ties go to the smallest threshold.
pub fn select_threshold<T: Scalar>(raw: &WeightedGraph<T>, data: &Dataset<T>, grid: &[T]) -> Result<T> {
    if grid.is_empty() {
        return Err(Error::Config("threshold grid is empty".into()));
    }
    if grid.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::Config("threshold grid must be sorted ascending".into()));
    }
    if raw.layout() != data.layout() {
        return Err(Error::Dimension("graph and dataset layouts differ".into()));
    }
    let score = Score::new(data, true);
    let mut best = (grid[0], score.value(threshold_weights(raw, grid[0]).matrix()));
    for &delta in &grid[1..] {
        let loss = score.value(threshold_weights(raw, delta).matrix());
        let tie_band = T::of(1e-12) * best.1.abs().max(T::one());
        if loss < best.1 - tie_band {
            best = (delta, loss);
        }
    }
    Ok(best.0)
}

/// Default threshold grid `0.05, 0.10, ..., 0.50`.
pub fn default_threshold_grid<T: Scalar>() -> Vec<T> {
    (1..=10).map(|k| T::of(0.05 * k as f64)).collect()
}

/// Layout-aware zero start used by [`fit`].
pub fn initial_estimate<T: Scalar>(layout: BlockLayout) -> WeightedGraph<T> {
    WeightedGraph::zeros(layout)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{check_dag, threshold_graph, Skeleton};
    use crate::scenario::{forward_sample, simulate, ScenarioId, ScenarioSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn config_validation() {
        assert!(DiscoveryConfig::default().validate().is_ok());
        let bad = DiscoveryConfig { progress: 1.5, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = DiscoveryConfig { penalty_growth: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn score_gradient_matches_finite_differences() {
        let spec = ScenarioSpec::preset(ScenarioId::S3, 2).unwrap();
        let (_, data) = simulate::<f64>(&ScenarioSpec { n: 50, ..spec }).unwrap();
        let score = Score::new(&data, true);
        let w = data.layout().width();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b = Array2::from_shape_fn((w, w), |_| rand::Rng::random_range(&mut rng, -0.5..0.5));
        let (_, g) = score.eval(&b);
        let h = 1e-6;
        for &(i, j) in &[(0, 2), (5, 7), (3, 11), (10, 6)] {
            let mut bp = b.clone();
            bp[[i, j]] += h;
            let mut bm = b.clone();
            bm[[i, j]] -= h;
            let fd = (score.value(&bp) - score.value(&bm)) / (2.0 * h);
            assert!((fd - g[[i, j]]).abs() < 1e-5 * (1.0 + fd.abs()), "{fd} vs {}", g[[i, j]]);
        }
    }

    #[test]
    fn zero_graph_data_yields_small_weights() {
        let layout = BlockLayout::new(2, 3).unwrap();
        let truth = WeightedGraph::<f64>::zeros(layout);
        let data = forward_sample(&truth, 1000, 0.0, true, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let out = fit(&data, &DiscoveryConfig::default()).unwrap();
        let max = out.graph.matrix().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max < 0.1, "max |b| = {max}");
        assert_eq!(out.graph.structural_report().h2, 0.0);
        assert!(out.h1 <= 1e-8);
    }

    #[test]
    fn single_edge_matches_ols() {
        let layout = BlockLayout::new(1, 0).unwrap();
        let mut truth = WeightedGraph::<f64>::zeros(layout);
        truth.set_weight(layout.treatment(), layout.outcome(), 1.0);
        let data = forward_sample(&truth, 5000, 0.0, true, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let out = fit(&data, &DiscoveryConfig::default()).unwrap();
        let est = out.graph.weight(layout.treatment(), layout.outcome());

        // OLS of Y on all its permitted parents (X1, A, XA1)
        let d = data.values();
        let cols = [0usize, 1, 2];
        let xmat = d.select(ndarray::Axis(1), &cols);
        let beta = crate::linalg::least_squares(xmat.view(), d.column(3)).unwrap();
        assert!((est - 1.0).abs() < 0.05);
        assert!((est - beta[1]).abs() < 0.05);
    }

    #[test]
    fn s1_recovers_truth_at_threshold() {
        let spec = ScenarioSpec::preset(ScenarioId::S1, 1).unwrap();
        let (truth, data) = simulate::<f64>(&spec).unwrap();
        let out = fit(&data, &DiscoveryConfig::default()).unwrap();
        assert_eq!(out.graph.structural_report().h2, 0.0);
        let est = threshold_graph(&out.graph, 0.4);
        assert_eq!(est, Skeleton::support(&truth));
    }

    #[test]
    fn inner_traces_never_increase() {
        let spec = ScenarioSpec::preset(ScenarioId::S3, 5).unwrap();
        let (_, data) = simulate::<f64>(&spec).unwrap();
        let out = fit(&data, &DiscoveryConfig::default()).unwrap();
        for step in &out.steps {
            assert!(step.inner_trace.windows(2).all(|w| w[1] <= w[0]));
        }
        assert!(check_dag(&out.graph, 0.3));
    }

    #[test]
    fn fit_is_deterministic() {
        let spec = ScenarioSpec::preset(ScenarioId::S2, 3).unwrap();
        let (_, data) = simulate::<f64>(&spec).unwrap();
        let a = fit(&data, &DiscoveryConfig::default()).unwrap();
        let b = fit(&data, &DiscoveryConfig::default()).unwrap();
        assert_eq!(a.graph, b.graph);
    }

    #[test]
    fn proximal_path_with_l1_is_sparse_and_valid() {
        let spec = ScenarioSpec::preset(ScenarioId::S1, 2).unwrap();
        let (truth, data) = simulate::<f64>(&spec).unwrap();
        let cfg = DiscoveryConfig { l1: 0.01, solver: InnerSolver::GradientDescent, ..Default::default() };
        let out = match fit(&data, &cfg) {
            Ok(o) => o.graph,
            Err(FitError::NotConverged { best, .. }) => best,
            Err(e) => panic!("{e}"),
        };
        assert_eq!(out.structural_report().h2, 0.0);
        assert_eq!(threshold_graph(&out, 0.4), Skeleton::support(&truth));
    }

    #[test]
    fn soft_mask_path_drives_h2_down() {
        let spec = ScenarioSpec::preset(ScenarioId::S1, 3).unwrap();
        let (truth, data) = simulate::<f64>(&spec).unwrap();
        let cfg = DiscoveryConfig { hard_mask: false, lambda2_init: 0.1, ..Default::default() };
        let g = match fit(&data, &cfg) {
            Ok(o) => o.graph,
            Err(FitError::NotConverged { best, .. }) => best,
            Err(e) => panic!("{e}"),
        };
        assert!(g.structural_report().h2 < 1e-3, "h2 = {}", g.structural_report().h2);
        assert_eq!(threshold_graph(&g, 0.4), Skeleton::support(&truth));
    }

    #[test]
    fn threshold_selection_tie_break() {
        let layout = BlockLayout::new(1, 1).unwrap();
        let mut g = WeightedGraph::<f64>::zeros(layout);
        g.set_weight(1, 3, 1.0);
        g.set_weight(3, 4, -1.0);
        let data = forward_sample(&g, 200, 0.0, true, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let grid = [0.1, 0.3, 0.5, 0.9];
        assert_eq!(select_threshold(&g, &data, &grid).unwrap(), 0.1);
        assert_eq!(select_threshold(&g, &data, &[0.0]).unwrap(), 0.0);
        assert!(select_threshold(&g, &data, &[]).is_err());
        assert!(select_threshold(&g, &data, &[0.5, 0.1]).is_err());
    }
}
