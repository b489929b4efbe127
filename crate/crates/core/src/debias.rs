//! Per-node LASSO refit on an estimated skeleton.

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::{Skeleton, WeightedGraph};
use crate::optim::soft_threshold;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoConfig {
    /// Penalty as a fraction of each response's `λ_max`.
    pub lambda_frac: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self { lambda_frac: 1e-3, max_iter: 10_000, tol: 1e-8 }
    }
}

impl LassoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.lambda_frac) {
            return Err(Error::Config("lambda_frac must lie in [0, 1)".into()));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::Config("lasso tol and max_iter must be positive".into()));
        }
        Ok(())
    }
}

/// `||X^T y||_inf / n`, the smallest penalty that zeroes every coefficient.
pub fn lambda_max<T: Scalar>(x: ArrayView2<T>, y: ArrayView1<T>) -> T {
    let n = T::of(x.nrows().max(1) as f64);
    x.t().dot(&y).iter().fold(T::zero(), |m, v| m.max(v.abs())) / n
}

/// Minimises `1/(2n) ||y - X b||^2 + lambda ||b||_1` by cyclic coordinate
/// descent.
pub fn lasso<T: Scalar>(x: ArrayView2<T>, y: ArrayView1<T>, lambda: T, max_iter: usize, tol: T) -> Result<Array1<T>> {
    let (n, k) = x.dim();
    if n == 0 || k == 0 {
        return Err(Error::Dimension(format!("lasso design is {n}x{k}")));
    }
    if y.len() != n {
        return Err(Error::Dimension("lasso response length".into()));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) || !lambda.is_finite() || lambda < T::zero() {
        return Err(Error::NonFinite("lasso inputs".into()));
    }
    let nf = T::of(n as f64);
    let sq: Vec<T> = x.axis_iter(Axis(1)).map(|c| c.dot(&c) / nf).collect();
    let mut beta = Array1::<T>::zeros(k);
    let mut resid = y.to_owned();
    for _ in 0..max_iter {
        let mut max_change = T::zero();
        for j in 0..k {
            if sq[j] == T::zero() {
                continue;
            }
            let col = x.column(j);
            let old = beta[j];
            let rho = col.dot(&resid) / nf + sq[j] * old;
            let new = soft_threshold(rho, lambda) / sq[j];
            if new != old {
                resid.scaled_add(old - new, &col);
                beta[j] = new;
                max_change = max_change.max((new - old).abs() * sq[j].sqrt());
            }
        }
        if max_change <= tol {
            break;
        }
    }
    Ok(beta)
}

/// Refits each node on its skeleton parents with `λ = λ_frac · λ_max`,
/// computed on unit-scaled parent columns.
pub fn refit<T: Scalar>(data: &Dataset<T>, skel: &Skeleton, cfg: &LassoConfig) -> Result<WeightedGraph<T>> {
    cfg.validate()?;
    let layout = data.layout();
    if skel.layout() != layout {
        return Err(Error::Dimension("skeleton and dataset layouts differ".into()));
    }
    if !skel.is_structurally_valid() {
        return Err(Error::Config("skeleton violates the structural constraints".into()));
    }
    if !skel.is_acyclic() {
        return Err(Error::Config("skeleton is cyclic".into()));
    }
    let d = data.values();
    let n = T::of(data.rows().max(1) as f64);
    let mut out = WeightedGraph::zeros(layout);
    for node in 0..layout.width() {
        let parents = skel.parents(node);
        if parents.is_empty() {
            continue;
        }
        // penalise on the unit-variance scale, report on the data scale
        let mut xmat = d.select(Axis(1), &parents);
        let mut scale = Vec::with_capacity(parents.len());
        for mut col in xmat.axis_iter_mut(Axis(1)) {
            let sd = (col.dot(&col) / n).sqrt();
            let sd = if sd > T::zero() { sd } else { T::one() };
            col /= sd;
            scale.push(sd);
        }
        let y = d.column(node);
        let lambda = T::of(cfg.lambda_frac) * lambda_max(xmat.view(), y);
        let beta = lasso(xmat.view(), y, lambda, cfg.max_iter, T::of(cfg.tol))?;
        for ((&parent, &b), &sd) in parents.iter().zip(&beta).zip(&scale) {
            out.set_weight(parent, node, b / sd);
        }
    }
    Ok(out)
}
