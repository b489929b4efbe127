//! End-to-end estimation pipeline, bootstrap intervals for the effects and
//! graph-recovery metrics.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::Dataset;
use crate::debias::{refit, LassoConfig};
use crate::discover::{fit, select_threshold, DiscoveryConfig, FitError};
use crate::effects::{mediator_effects, treatment_effects};
use crate::error::{Error, Result};
use crate::graph::{Parameters, Skeleton, WeightedGraph};
use crate::scalar::Scalar;
use crate::scenario::{simulate, ScenarioId, ScenarioSpec};

/// How the raw discovery output is cut into a skeleton.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdRule {
    Fixed(f64),
    /// Pick from the grid by reconstruction loss.
    Select(Vec<f64>),
}

impl Default for ThresholdRule {
    fn default() -> Self {
        ThresholdRule::Fixed(0.4)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub discovery: DiscoveryConfig,
    pub threshold: ThresholdRule,
    pub lasso: LassoConfig,
    /// Continue with the best iterate when discovery misses its tolerance.
    pub accept_unconverged: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            discovery: DiscoveryConfig::default(),
            threshold: ThresholdRule::default(),
            lasso: LassoConfig::default(),
            accept_unconverged: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.discovery.validate()?;
        self.lasso.validate()?;
        match &self.threshold {
            ThresholdRule::Fixed(d) if !(*d >= 0.0 && d.is_finite()) => {
                Err(Error::Config("threshold must be a finite non-negative number".into()))
            }
            ThresholdRule::Select(grid) if grid.is_empty() => Err(Error::Config("threshold grid is empty".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput<T> {
    pub raw: WeightedGraph<T>,
    pub h1: T,
    pub converged: bool,
    pub threshold: T,
    pub skeleton: Skeleton,
    pub refit: WeightedGraph<T>,
    pub params: Parameters<T>,
}

/// Removes the weakest edges of a cyclic skeleton until it is acyclic.
fn break_cycles<T: Scalar>(skel: &mut Skeleton, raw: &WeightedGraph<T>) {
    if skel.is_acyclic() {
        return;
    }
    let mut edges: Vec<(usize, usize)> = skel.edges().indexed_iter().filter(|(_, &e)| e).map(|(ij, _)| ij).collect();
    edges.sort_by(|a, b| {
        let wa = raw.weight(a.0, a.1).abs();
        let wb = raw.weight(b.0, b.1).abs();
        wa.partial_cmp(&wb).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(b))
    });
    for (i, j) in edges {
        skel.set_edge(i, j, false);
        if skel.is_acyclic() {
            return;
        }
    }
}

/// Discovery, thresholding and LASSO refit on one dataset, centered first
/// when it is not already.
pub fn run_pipeline<T: Scalar>(data: &Dataset<T>, cfg: &PipelineConfig) -> Result<PipelineOutput<T>> {
    cfg.validate()?;
    if data.rows() == 0 {
        return Err(Error::Config("dataset has no rows".into()));
    }
    let centered;
    let data = if data.is_centered() {
        data
    } else {
        centered = data.clone().centered();
        &centered
    };
    let (mut raw, h1, converged) = match fit(data, &cfg.discovery) {
        Ok(out) => (out.graph, out.h1, true),
        Err(FitError::NotConverged { best, h1, .. }) if cfg.accept_unconverged => (best, h1, false),
        Err(e) => return Err(e.into()),
    };
    raw.apply_structural_mask();
    let threshold = match &cfg.threshold {
        ThresholdRule::Fixed(d) => T::of(*d),
        ThresholdRule::Select(grid) => {
            let grid: Vec<T> = grid.iter().map(|&d| T::of(d)).collect();
            select_threshold(&raw, data, &grid)?
        }
    };
    let mut skeleton = crate::graph::threshold_graph(&raw, threshold);
    break_cycles(&mut skeleton, &raw);
    let refit = refit(data, &skeleton, &cfg.lasso)?;
    let params = Parameters::from_graph(&refit)?;
    Ok(PipelineOutput { raw, h1, converged, threshold, skeleton, refit, params })
}

/// Effect names in the order produced by [`effect_vector`].
pub fn effect_names(s: usize) -> Vec<String> {
    let mut names = vec!["hte".to_string(), "hde".to_string(), "hie".to_string()];
    for i in 1..=s {
        names.extend([format!("hdm{i}"), format!("him{i}"), format!("htm{i}")]);
    }
    names
}

/// HTE, HDE, HIE and then HDM, HIM, HTM for each mediator, at `x`.
pub fn effect_vector<T: Scalar>(params: &Parameters<T>, x: &[T]) -> Result<Vec<f64>> {
    let te = treatment_effects(params, x)?;
    let mut out = vec![te.hte.as_f64(), te.hde.as_f64(), te.hie.as_f64()];
    for m in mediator_effects(params, x)? {
        out.extend([m.hdm.as_f64(), m.him.as_f64(), m.htm.as_f64()]);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CiMethod {
    #[default]
    Percentile,
    Gaussian,
}

impl std::str::FromStr for CiMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "percentile" => Ok(CiMethod::Percentile),
            "gaussian" => Ok(CiMethod::Gaussian),
            other => Err(Error::Parse(format!("unknown interval method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub alpha: f64,
    pub method: CiMethod,
    pub seed: u64,
    /// Worker threads; `None` uses the rayon default.
    pub parallel_degree: Option<usize>,
    /// Benjamini-Yekutieli adjustment of `alpha` across all reported effects.
    pub by_adjust: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { resamples: 1000, alpha: 0.05, method: CiMethod::Percentile, seed: 0, parallel_degree: None, by_adjust: false }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resamples < 2 {
            return Err(Error::Config("at least two resamples are needed".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config("alpha must lie in (0, 1)".into()));
        }
        if self.parallel_degree == Some(0) {
            return Err(Error::Config("parallel degree must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CIRecord {
    pub name: String,
    pub x: Vec<f64>,
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    pub method: CiMethod,
    #[serde(rename = "K")]
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub alpha: f64,
    /// Level actually used per interval, after any adjustment.
    pub alpha_used: f64,
    pub method: CiMethod,
    pub resamples: usize,
    pub failed: usize,
    pub records: Vec<CIRecord>,
}

/// Nearest-rank `(alpha/2, 1 - alpha/2)` quantiles of `draws`.
pub fn percentile_interval(draws: &[f64], alpha: f64) -> (f64, f64) {
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = sorted.len();
    let rank = |q: f64| ((q * k as f64).ceil() as usize).clamp(1, k) - 1;
    (sorted[rank(alpha / 2.0)], sorted[rank(1.0 - alpha / 2.0)])
}

/// `point +- z * sd(draws)`.
pub fn gaussian_interval(point: f64, draws: &[f64], alpha: f64) -> (f64, f64) {
    let k = draws.len() as f64;
    let shift = draws.first().copied().unwrap_or(0.0);
    let (sum, sq) = draws.iter().fold((0.0, 0.0), |(a, b), d| (a + (d - shift), b + (d - shift).powi(2)));
    let var = ((sq - sum * sum / k) / (k - 1.0).max(1.0)).max(0.0);
    let z = Normal::standard().inverse_cdf(1.0 - alpha / 2.0);
    let half = z * var.sqrt();
    (point - half, point + half)
}

fn harmonic(m: usize) -> f64 {
    (1..=m).map(|i| 1.0 / i as f64).sum()
}

/// Row indices for replicate `k`, drawn from an RNG stream keyed by `(seed, k)`.
pub fn replicate_rows(seed: u64, k: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

fn in_pool<R: Send>(degree: Option<usize>, job: impl FnOnce() -> R + Send) -> Result<R> {
    match degree {
        None => Ok(job()),
        Some(d) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(d)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(job))
        }
    }
}

/// Bootstrap intervals for every effect at every point in `x_list`.
pub fn bootstrap_effects<T: Scalar>(
    data: &Dataset<T>,
    pipeline: &PipelineConfig,
    x_list: &[Vec<T>],
    cfg: &BootstrapConfig,
) -> Result<BootstrapReport> {
    cfg.validate()?;
    pipeline.validate()?;
    let n = data.rows();
    if n == 0 {
        return Err(Error::Config("dataset has no rows".into()));
    }
    let s = data.layout().s();
    let estimate = |params: &Parameters<T>| -> Result<Vec<f64>> {
        let mut all = Vec::new();
        for x in x_list {
            all.extend(effect_vector(params, x)?);
        }
        Ok(all)
    };
    let point = estimate(&run_pipeline(data, pipeline)?.params)?;

    let replicates: Vec<Option<Vec<f64>>> = in_pool(cfg.parallel_degree, || {
        (0..cfg.resamples)
            .into_par_iter()
            .map(|k| {
                let boot = data.resample(&replicate_rows(cfg.seed, k, n));
                run_pipeline(&boot, pipeline).and_then(|out| estimate(&out.params)).ok()
            })
            .collect()
    })?;
    let ok: Vec<Vec<f64>> = replicates.into_iter().flatten().collect();
    let failed = cfg.resamples - ok.len();
    if failed * 10 > cfg.resamples || ok.len() < 2 {
        return Err(Error::TooManyFailures { failed, total: cfg.resamples });
    }

    let names = effect_names(s);
    let alpha_used = if cfg.by_adjust { cfg.alpha / harmonic(point.len()) } else { cfg.alpha };
    let mut records = Vec::with_capacity(point.len());
    for (idx, &pt) in point.iter().enumerate() {
        let draws: Vec<f64> = ok.iter().map(|r| r[idx]).collect();
        let (lo, hi) = match cfg.method {
            CiMethod::Percentile => percentile_interval(&draws, alpha_used),
            CiMethod::Gaussian => gaussian_interval(pt, &draws, alpha_used),
        };
        records.push(CIRecord {
            name: names[idx % names.len()].clone(),
            x: x_list[idx / names.len()].iter().map(|v| v.as_f64()).collect(),
            point: pt,
            lo,
            hi,
            method: cfg.method,
            k: ok.len(),
        });
    }
    Ok(BootstrapReport { alpha: cfg.alpha, alpha_used, method: cfg.method, resamples: cfg.resamples, failed, records })
}

/// Forest-plot CSV: `name,x,point,lo,hi` with `x` joined by `;`.
pub fn write_forest_csv<W: Write>(records: &[CIRecord], mut out: W) -> Result<()> {
    writeln!(out, "name,x,point,lo,hi")?;
    for r in records {
        let x: Vec<String> = r.x.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{},{},{},{},{}", r.name, x.join(";"), r.point, r.lo, r.hi)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fdr: f64,
    pub tpr: f64,
    pub shd: usize,
    pub true_positive: usize,
    pub false_positive: usize,
    pub reversed: usize,
    pub missing: usize,
}

/// Directed-edge comparison of an estimate against the truth.
pub fn evaluate(est: &Skeleton, truth: &Skeleton) -> Result<EvalReport> {
    if est.layout() != truth.layout() {
        return Err(Error::Dimension("estimate and truth have different layouts".into()));
    }
    let w = est.layout().width();
    let (mut tp, mut fp, mut rev, mut miss) = (0, 0, 0, 0);
    for i in 0..w {
        for j in 0..w {
            if est.has_edge(i, j) {
                if truth.has_edge(i, j) {
                    tp += 1;
                } else if truth.has_edge(j, i) && !est.has_edge(j, i) {
                    rev += 1;
                } else {
                    fp += 1;
                }
            } else if truth.has_edge(i, j) && !est.has_edge(j, i) {
                miss += 1;
            }
        }
    }
    Ok(EvalReport {
        fdr: (fp + rev) as f64 / est.edge_count().max(1) as f64,
        tpr: tp as f64 / truth.edge_count().max(1) as f64,
        shd: fp + miss + rev,
        true_positive: tp,
        false_positive: fp,
        reversed: rev,
        missing: miss,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub seed: u64,
    pub converged: bool,
    pub fdr: f64,
    pub tpr: f64,
    pub shd: usize,
    pub hte_bias: f64,
    pub hde_bias: f64,
    pub hie_bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationTable {
    pub scenario: ScenarioId,
    /// Moderator value at which effect biases are measured.
    pub x: Vec<f64>,
    pub rows: Vec<ReplicationRow>,
    pub summary: Vec<MetricSummary>,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 { (v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (mean, sd)
}

fn replicate_seed(id: ScenarioId, seed: u64, cfg: &PipelineConfig, x: Option<&[f64]>) -> Result<(Vec<f64>, ReplicationRow)> {
    let spec = ScenarioSpec::preset(id, seed)?;
    let (truth, data) = simulate::<f64>(&spec)?;
    let out = run_pipeline(&data, cfg)?;
    let metrics = evaluate(&out.skeleton, &Skeleton::support(&truth))?;
    let x = x.map(<[f64]>::to_vec).unwrap_or_else(|| vec![1.0; spec.p]);
    let true_te = treatment_effects(&Parameters::from_graph(&truth)?, &x)?;
    let est_te = treatment_effects(&out.params, &x)?;
    let row = ReplicationRow {
        seed,
        converged: out.converged,
        fdr: metrics.fdr,
        tpr: metrics.tpr,
        shd: metrics.shd,
        hte_bias: est_te.hte - true_te.hte,
        hde_bias: est_te.hde - true_te.hde,
        hie_bias: est_te.hie - true_te.hie,
    };
    Ok((x, row))
}

/// Simulate, estimate and score one preset per seed; effect biases are
/// taken at `x` (all ones when `None`).
pub fn run_replication(
    id: ScenarioId,
    seeds: &[u64],
    cfg: &PipelineConfig,
    x: Option<&[f64]>,
    parallel_degree: Option<usize>,
) -> Result<ReplicationTable> {
    let results: Vec<Result<(Vec<f64>, ReplicationRow)>> = in_pool(parallel_degree, || {
        seeds
            .par_iter()
            .map(|&seed| replicate_seed(id, seed, cfg, x).map_err(|e| Error::Seed { seed, source: Box::new(e) }))
            .collect()
    })?;
    let mut rows = Vec::with_capacity(seeds.len());
    let mut x_used = x.map(<[f64]>::to_vec).unwrap_or_default();
    for r in results {
        let (xs, row) = r?;
        x_used = xs;
        rows.push(row);
    }
    let mut summary = Vec::new();
    if !rows.is_empty() {
        let columns: [(&str, fn(&ReplicationRow) -> f64); 6] = [
            ("fdr", |r| r.fdr),
            ("tpr", |r| r.tpr),
            ("shd", |r| r.shd as f64),
            ("hte_bias", |r| r.hte_bias),
            ("hde_bias", |r| r.hde_bias),
            ("hie_bias", |r| r.hie_bias),
        ];
        for (name, get) in columns {
            let (mean, sd) = mean_sd(&rows.iter().map(get).collect::<Vec<_>>());
            summary.push(MetricSummary { name: name.into(), mean, sd });
        }
    }
    Ok(ReplicationTable { scenario: id, x: x_used, rows, summary })
}

impl ReplicationTable {
    pub fn mean(&self, name: &str) -> Option<f64> {
        self.summary.iter().find(|m| m.name == name).map(|m| m.mean)
    }
}
