//! Closed-form heterogeneous effects of the treatment and of each mediator
//! under the linear model, including the covariate-by-mediator extension.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Parameters;
use crate::scalar::Scalar;

pub mod oracle;

#[derive(Debug, Clone, PartialEq)]
pub struct TreatmentEffects<T> {
    pub x: Vec<T>,
    pub hde: T,
    pub hie: T,
    pub hte: T,
}

/// Effects attached to one mediator; `index` is zero-based.
#[derive(Debug, Clone, PartialEq)]
pub struct MediatorEffects<T> {
    pub index: usize,
    /// Total effect of the treatment on this mediator.
    pub delta: T,
    pub hdm: T,
    pub him: T,
    pub htm: T,
}

/// Solves `u = (I - B_M^T)^{-1} rhs` by substitution along `order`.
pub(crate) fn mediator_solve<T: Scalar>(b_m: &Array2<T>, rhs: &Array1<T>, order: &[usize]) -> Array1<T> {
    let mut u = rhs.clone();
    for (pos, &j) in order.iter().enumerate() {
        let mut acc = rhs[j];
        for &i in &order[..pos] {
            acc += b_m[[i, j]] * u[i];
        }
        u[j] = acc;
    }
    u
}

/// `gamma_M + x^T Gamma_XM`, or `gamma_M` when the extension is absent.
pub fn outcome_mediator_weights<T: Scalar>(params: &Parameters<T>, x: &[T]) -> Result<Array1<T>> {
    params.check_moderator(x)?;
    let mut g = params.gamma_m.clone();
    if let Some(gxm) = &params.gamma_xm {
        for (k, &xk) in x.iter().enumerate() {
            for i in 0..params.s() {
                g[i] += xk * gxm[[k, i]];
            }
        }
    }
    Ok(g)
}

/// Treatment-to-mediator totals `Δ(x)` together with the per-mediator
/// direct mediation terms; their in-order sum is the indirect effect.
fn mediation_terms<T: Scalar>(params: &Parameters<T>, x: &[T]) -> Result<(Array1<T>, Array1<T>)> {
    params.validate()?;
    let order = params.mediator_order()?;
    let rhs = params.moderated_treatment_weights(x)?;
    let delta = mediator_solve(&params.b_m, &rhs, &order);
    let gamma = outcome_mediator_weights(params, x)?;
    let hdm = &gamma * &delta;
    Ok((delta, hdm))
}

fn indirect<T: Scalar>(params: &Parameters<T>, x: &[T]) -> Result<T> {
    let (_, hdm) = mediation_terms(params, x)?;
    Ok(hdm.iter().fold(T::zero(), |acc, &v| acc + v))
}

/// HDE, HIE and HTE at moderator value `x`. Uses `Gamma_XM` when present.
pub fn treatment_effects<T: Scalar>(params: &Parameters<T>, x: &[T]) -> Result<TreatmentEffects<T>> {
    let hie = indirect(params, x)?;
    let hde = params.moderated_direct_weight(x)?;
    Ok(TreatmentEffects { x: x.to_vec(), hde, hie, hte: hde + hie })
}

/// Treatment effects for a model that carries a covariate-by-mediator block.
pub fn xm_effects<T: Scalar>(params: &Parameters<T>, x: &[T]) -> Result<TreatmentEffects<T>> {
    if params.gamma_xm.is_none() {
        return Err(Error::Config("covariate-by-mediator block is missing".into()));
    }
    treatment_effects(params, x)
}

/// Per-mediator HDM, HIM and HTM; HTM is the drop in HIE when the mediator
/// is removed from the graph.
pub fn mediator_effects<T: Scalar>(params: &Parameters<T>, x: &[T]) -> Result<Vec<MediatorEffects<T>>> {
    let (delta, hdm) = mediation_terms(params, x)?;
    let hie = hdm.iter().fold(T::zero(), |acc, &v| acc + v);
    (0..params.s())
        .map(|i| {
            let htm = hie - indirect(&params.remove_mediator(i)?, x)?;
            Ok(MediatorEffects { index: i, delta: delta[i], hdm: hdm[i], him: htm - hdm[i], htm })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediatorRecord {
    /// One-based mediator number.
    pub i: usize,
    pub delta: f64,
    pub hdm: f64,
    pub him: f64,
    pub htm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub graph_source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
}

/// JSON form of the effects at one evaluation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectReport {
    pub x: Vec<f64>,
    /// Treatment level, for functional models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    pub hte: f64,
    pub hde: f64,
    pub hie: f64,
    pub mediators: Vec<MediatorRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl EffectReport {
    pub fn new<T: Scalar>(te: &TreatmentEffects<T>, me: &[MediatorEffects<T>]) -> Self {
        Self {
            x: te.x.iter().map(|v| v.as_f64()).collect(),
            a: None,
            hte: te.hte.as_f64(),
            hde: te.hde.as_f64(),
            hie: te.hie.as_f64(),
            mediators: me
                .iter()
                .map(|m| MediatorRecord {
                    i: m.index + 1,
                    delta: m.delta.as_f64(),
                    hdm: m.hdm.as_f64(),
                    him: m.him.as_f64(),
                    htm: m.htm.as_f64(),
                })
                .collect(),
            provenance: None,
        }
    }

    /// Linear-model report at `x`.
    pub fn compute<T: Scalar>(params: &Parameters<T>, x: &[T]) -> Result<Self> {
        Ok(Self::new(&treatment_effects(params, x)?, &mediator_effects(params, x)?))
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = Some(provenance);
        self
    }
}
