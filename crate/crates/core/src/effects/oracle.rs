//! Independent reference computations: explicit path enumeration and a
//! Monte-Carlo simulator of interventions on the linear model.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::Parameters;
use crate::scalar::Scalar;

fn moderated_outcome_weight<T: Scalar>(params: &Parameters<T>, x: &[T], i: usize) -> T {
    let mut g = params.gamma_m[i];
    if let Some(gxm) = &params.gamma_xm {
        for (k, &xk) in x.iter().enumerate() {
            g += xk * gxm[[k, i]];
        }
    }
    g
}

/// Sum over every directed mediator path starting at `start` of the path
/// weight times the outcome weight of its last node.
fn paths_to_outcome<T: Scalar>(params: &Parameters<T>, x: &[T], start: usize, depth: usize) -> Result<T> {
    if depth > params.s() {
        return Err(Error::CyclicMediators);
    }
    let mut total = moderated_outcome_weight(params, x, start);
    for j in 0..params.s() {
        let w = params.b_m[[start, j]];
        if w != T::zero() {
            total += w * paths_to_outcome(params, x, j, depth + 1)?;
        }
    }
    Ok(total)
}

/// Indirect effect as the sum over all paths `A -> M .. M -> Y`.
pub fn hie_path_sum<T: Scalar>(params: &Parameters<T>, x: &[T]) -> Result<T> {
    params.validate()?;
    params.check_moderator(x)?;
    let mut total = T::zero();
    for i in 0..params.s() {
        let mut w = params.beta_a[i];
        for (k, &xk) in x.iter().enumerate() {
            w += params.b_xa[[k, i]] * xk;
        }
        if w != T::zero() {
            total += w * paths_to_outcome(params, x, i, 0)?;
        }
    }
    Ok(total)
}

/// Total effect of mediator `i` on the outcome, by path enumeration.
pub fn mediator_total_effect<T: Scalar>(params: &Parameters<T>, x: &[T], i: usize) -> Result<T> {
    params.validate()?;
    params.check_moderator(x)?;
    if i >= params.s() {
        return Err(Error::OutOfRange { what: "mediator", index: i, len: params.s() });
    }
    paths_to_outcome(params, x, i, 0)
}

/// Random parameters with weights in `[-1, 1]`, about half the slots
/// filled, and an acyclic mediator block along a random order.
pub fn random_parameters<R: Rng + ?Sized>(p: usize, s: usize, rng: &mut R) -> Parameters<f64> {
    let draw = |rng: &mut R| if rng.random_bool(0.5) { rng.random_range(-1.0..=1.0) } else { 0.0 };
    let mut params = Parameters::zeros(p, s);
    let mut order: Vec<usize> = (0..s).collect();
    order.shuffle(rng);
    for k in 0..p {
        params.delta_x[k] = draw(rng);
        params.gamma_x[k] = draw(rng);
        params.gamma_xa[k] = draw(rng);
        for i in 0..s {
            params.b_x[[k, i]] = draw(rng);
            params.b_xa[[k, i]] = draw(rng);
        }
    }
    params.gamma_a = draw(rng);
    for i in 0..s {
        params.beta_a[i] = draw(rng);
        params.gamma_m[i] = draw(rng);
    }
    for a in 0..s {
        for b in a + 1..s {
            params.b_m[[order[a], order[b]]] = draw(rng);
        }
    }
    params
}

/// How a mediator is set in an intervention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MediatorSetting<T> {
    /// Follows its structural equation in the intervened world.
    Natural,
    /// `do(M_i = v)`.
    Fixed(T),
    /// The value the unit's mediator takes under `do(A = under_a)` with the
    /// same noise, plus `shift`.
    Counterfactual { under_a: T, shift: T },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Intervention<T> {
    pub a: T,
    pub mediators: Vec<MediatorSetting<T>>,
}

impl<T: Scalar> Intervention<T> {
    /// `do(A = a)` with every mediator natural.
    pub fn treat(a: T, s: usize) -> Self {
        Self { a, mediators: vec![MediatorSetting::Natural; s] }
    }

    pub fn with(mut self, i: usize, setting: MediatorSetting<T>) -> Self {
        self.mediators[i] = setting;
        self
    }
}

/// Monte-Carlo means with standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleEstimate<T> {
    pub y_mean: T,
    pub y_se: T,
    pub m_mean: Array1<T>,
    pub m_se: Array1<T>,
}

fn natural_mediators<T: Scalar>(params: &Parameters<T>, x: &[T], a: T, order: &[usize], noise: &[T]) -> Vec<T> {
    let s = params.s();
    let mut m = vec![T::zero(); s];
    for &j in order {
        m[j] = mediator_equation(params, x, a, &m, j) + noise[j];
    }
    m
}

fn mediator_equation<T: Scalar>(params: &Parameters<T>, x: &[T], a: T, m: &[T], j: usize) -> T {
    let mut v = params.beta_a[j] * a;
    for (k, &xk) in x.iter().enumerate() {
        v += params.b_x[[k, j]] * xk + params.b_xa[[k, j]] * xk * a;
    }
    for (i, &mi) in m.iter().enumerate() {
        v += params.b_m[[i, j]] * mi;
    }
    v
}

/// Simulates `n_mc` units with `X = x` under `intervention` and returns the
/// sample means of `Y` and each mediator.
pub fn mc_do_oracle<T: Scalar, R: Rng + ?Sized>(
    params: &Parameters<T>,
    x: &[T],
    intervention: &Intervention<T>,
    n_mc: usize,
    rng: &mut R,
) -> Result<OracleEstimate<T>> {
    params.validate()?;
    params.check_moderator(x)?;
    let s = params.s();
    if intervention.mediators.len() != s {
        return Err(Error::Dimension("intervention must set every mediator".into()));
    }
    if n_mc == 0 {
        return Err(Error::Config("n_mc must be positive".into()));
    }
    let order = params.mediator_order()?;
    let a = intervention.a;
    let mut base_y = params.gamma_a * a;
    for (k, &xk) in x.iter().enumerate() {
        base_y += params.gamma_x[k] * xk + params.gamma_xa[k] * xk * a;
    }
    let gamma: Vec<T> = (0..s).map(|i| moderated_outcome_weight(params, x, i)).collect();

    let mut ys = Vec::with_capacity(n_mc);
    let mut ms = Array2::<T>::zeros((n_mc, s));
    let mut noise = vec![T::zero(); s];
    for row in 0..n_mc {
        for e in noise.iter_mut() {
            *e = T::of(rng.sample::<f64, _>(StandardNormal));
        }
        let eps_y = T::of(rng.sample::<f64, _>(StandardNormal));
        let mut m = vec![T::zero(); s];
        let mut counterfactual: Vec<(T, Vec<T>)> = Vec::new();
        for &j in &order {
            m[j] = match intervention.mediators[j] {
                MediatorSetting::Natural => mediator_equation(params, x, a, &m, j) + noise[j],
                MediatorSetting::Fixed(v) => v,
                MediatorSetting::Counterfactual { under_a, shift } => {
                    let world = match counterfactual.iter().find(|(level, _)| *level == under_a) {
                        Some((_, w)) => w.clone(),
                        None => {
                            let w = natural_mediators(params, x, under_a, &order, &noise);
                            counterfactual.push((under_a, w.clone()));
                            w
                        }
                    };
                    world[j] + shift
                }
            };
        }
        let mut y = base_y + eps_y;
        for i in 0..s {
            y += gamma[i] * m[i];
            ms[[row, i]] = m[i];
        }
        ys.push(y);
    }
    let (y_mean, y_se) = mean_se(&ys);
    let mut m_mean = Array1::zeros(s);
    let mut m_se = Array1::zeros(s);
    for i in 0..s {
        let col: Vec<T> = ms.column(i).to_vec();
        let (mu, se) = mean_se(&col);
        m_mean[i] = mu;
        m_se[i] = se;
    }
    Ok(OracleEstimate { y_mean, y_se, m_mean, m_se })
}

fn mean_se<T: Scalar>(v: &[T]) -> (T, T) {
    let n = T::of(v.len() as f64);
    let mean = v.iter().fold(T::zero(), |a, &b| a + b) / n;
    if v.len() < 2 {
        return (mean, T::zero());
    }
    let ss = v.iter().fold(T::zero(), |a, &b| a + (b - mean) * (b - mean));
    (mean, (ss / (n - T::one()) / n).sqrt())
}
