//! Functional structural model: each block enters its child through a link
//! function, and effects follow by the chain rule.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::effects::{mediator_solve, MediatorEffects, TreatmentEffects};
use crate::error::{Error, Result};
use crate::graph::{GraphJson, Parameters, Skeleton};
use crate::layout::NodeRole;
use crate::linalg::least_squares;
use crate::scalar::Scalar;

/// Scalar link applied componentwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LinkFunction {
    Identity,
    /// `v^degree`.
    Polynomial { degree: u32 },
    Sine,
    Tanh,
    /// Piecewise-linear interpolation through `(input, output)` points sorted
    /// by input, extended linearly beyond the ends.
    Table { points: Vec<[f64; 2]> },
}

impl Default for LinkFunction {
    fn default() -> Self {
        LinkFunction::Identity
    }
}

impl LinkFunction {
    pub fn validate(&self) -> Result<()> {
        match self {
            LinkFunction::Polynomial { degree: 0 } => Err(Error::Config("polynomial degree must be at least 1".into())),
            LinkFunction::Table { points } => {
                if points.len() < 2 {
                    return Err(Error::Config("table link needs at least two points".into()));
                }
                if points.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::Config("table link points must be finite".into()));
                }
                if points.windows(2).any(|w| !(w[0][0] < w[1][0])) {
                    return Err(Error::Config("table link inputs must be strictly increasing".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, LinkFunction::Identity | LinkFunction::Polynomial { degree: 1 })
    }

    pub fn has_analytic_derivative(&self) -> bool {
        !matches!(self, LinkFunction::Table { .. })
    }

    pub fn eval<T: Scalar>(&self, v: T) -> T {
        match self {
            LinkFunction::Identity => v,
            LinkFunction::Polynomial { degree } => v.powi(*degree as i32),
            LinkFunction::Sine => v.sin(),
            LinkFunction::Tanh => v.tanh(),
            LinkFunction::Table { points } => T::of(interpolate(points, v.as_f64())),
        }
    }

    /// Analytic derivative where available, central difference otherwise.
    pub fn derivative<T: Scalar>(&self, v: T, h: T) -> T {
        match self {
            LinkFunction::Identity => T::one(),
            LinkFunction::Polynomial { degree } => T::of(*degree as f64) * v.powi(*degree as i32 - 1),
            LinkFunction::Sine => v.cos(),
            LinkFunction::Tanh => {
                let t = v.tanh();
                T::one() - t * t
            }
            LinkFunction::Table { .. } => self.fd_derivative(v, h),
        }
    }

    pub fn fd_derivative<T: Scalar>(&self, v: T, h: T) -> T {
        (self.eval(v + h) - self.eval(v - h)) / (h + h)
    }
}

fn interpolate(points: &[[f64; 2]], v: f64) -> f64 {
    let k = points.partition_point(|p| p[0] <= v).clamp(1, points.len() - 1);
    let ([x0, y0], [x1, y1]) = (points[k - 1], points[k]);
    y0 + (y1 - y0) * (v - x0) / (x1 - x0)
}

/// Which parent block enters which child through a link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LinkRole {
    #[serde(rename = "A.x")]
    TreatmentFromCovariate,
    #[serde(rename = "M.x")]
    MediatorFromCovariate,
    #[serde(rename = "M.a")]
    MediatorFromTreatment,
    #[serde(rename = "M.xa")]
    MediatorFromInteraction,
    #[serde(rename = "Y.x")]
    OutcomeFromCovariate,
    #[serde(rename = "Y.a")]
    OutcomeFromTreatment,
    #[serde(rename = "Y.xa")]
    OutcomeFromInteraction,
    #[serde(rename = "Y.m")]
    OutcomeFromMediator,
}

impl LinkRole {
    pub const ALL: [LinkRole; 8] = [
        LinkRole::TreatmentFromCovariate,
        LinkRole::MediatorFromCovariate,
        LinkRole::MediatorFromTreatment,
        LinkRole::MediatorFromInteraction,
        LinkRole::OutcomeFromCovariate,
        LinkRole::OutcomeFromTreatment,
        LinkRole::OutcomeFromInteraction,
        LinkRole::OutcomeFromMediator,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LinkRole::TreatmentFromCovariate => "A.x",
            LinkRole::MediatorFromCovariate => "M.x",
            LinkRole::MediatorFromTreatment => "M.a",
            LinkRole::MediatorFromInteraction => "M.xa",
            LinkRole::OutcomeFromCovariate => "Y.x",
            LinkRole::OutcomeFromTreatment => "Y.a",
            LinkRole::OutcomeFromInteraction => "Y.xa",
            LinkRole::OutcomeFromMediator => "Y.m",
        }
    }

    /// Link role of the edge `from -> to`; `None` for mediator-to-mediator
    /// edges, which stay linear.
    fn of_edge(from: NodeRole, to: NodeRole) -> Option<LinkRole> {
        use NodeRole::*;
        Some(match (from, to) {
            (Covariate(_), Treatment) => LinkRole::TreatmentFromCovariate,
            (Covariate(_), Mediator(_)) => LinkRole::MediatorFromCovariate,
            (Treatment, Mediator(_)) => LinkRole::MediatorFromTreatment,
            (Interaction(_), Mediator(_)) => LinkRole::MediatorFromInteraction,
            (Covariate(_), Outcome) => LinkRole::OutcomeFromCovariate,
            (Treatment, Outcome) => LinkRole::OutcomeFromTreatment,
            (Interaction(_), Outcome) => LinkRole::OutcomeFromInteraction,
            (Mediator(_), Outcome) => LinkRole::OutcomeFromMediator,
            _ => return None,
        })
    }
}

impl fmt::Display for LinkRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LinkRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LinkRole::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown link block {s:?}")))
    }
}

/// One entry of a link specification file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub block: LinkRole,
    #[serde(flatten)]
    pub link: LinkFunction,
}

/// A link for every block role; identity unless overridden.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Links {
    links: [LinkFunction; 8],
}

impl Links {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn from_specs(specs: &[LinkSpec]) -> Result<Self> {
        let mut out = Self::default();
        for spec in specs {
            spec.link.validate()?;
            out.set(spec.block, spec.link.clone());
        }
        Ok(out)
    }

    pub fn to_specs(&self) -> Vec<LinkSpec> {
        LinkRole::ALL
            .into_iter()
            .filter(|r| !self.get(*r).is_identity())
            .map(|r| LinkSpec { block: r, link: self.get(r).clone() })
            .collect()
    }

    fn slot(role: LinkRole) -> usize {
        LinkRole::ALL.iter().position(|r| *r == role).expect("every role is listed")
    }

    pub fn get(&self, role: LinkRole) -> &LinkFunction {
        &self.links[Self::slot(role)]
    }

    pub fn set(&mut self, role: LinkRole, link: LinkFunction) {
        self.links[Self::slot(role)] = link;
    }

    pub fn with(mut self, role: LinkRole, link: LinkFunction) -> Self {
        self.set(role, link);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DerivativeMode {
    /// Closed-form derivatives where the link has one.
    Analytic,
    /// Central differences for every link.
    FiniteDifference,
}

/// Coefficients of the functional model together with its links.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalParams<T> {
    pub coefficients: Parameters<T>,
    pub links: Links,
    /// Per-node constant terms in layout order; zero for non-responses.
    pub intercepts: Array1<T>,
    pub fd_step: T,
    pub derivatives: DerivativeMode,
}

impl<T: Scalar> FunctionalParams<T> {
    pub fn new(coefficients: Parameters<T>, links: Links) -> Result<Self> {
        coefficients.validate()?;
        if coefficients.gamma_xm.is_some() {
            return Err(Error::Config("the functional model has no covariate-by-mediator block".into()));
        }
        let w = coefficients.layout()?.width();
        Ok(Self {
            coefficients,
            links,
            intercepts: Array1::zeros(w),
            fd_step: T::of(1e-5),
            derivatives: DerivativeMode::Analytic,
        })
    }

    /// Reads coefficients, links and intercepts from the on-disk graph format.
    pub fn from_graph_json(json: &GraphJson) -> Result<Self> {
        let links = Links::from_specs(json.links.as_deref().unwrap_or(&[]))?;
        let mut fp = Self::new(json.to_parameters()?, links)?;
        if let Some(c) = &json.intercepts {
            if c.len() != fp.intercepts.len() {
                return Err(Error::Dimension(format!("intercepts must have length {}", fp.intercepts.len())));
            }
            fp.intercepts = c.iter().map(|&v| T::of(v)).collect();
        }
        Ok(fp)
    }

    pub fn to_graph_json(&self) -> Result<GraphJson> {
        let mut json = GraphJson::from_parameters(&self.coefficients)?;
        json.links = Some(self.links.to_specs());
        json.intercepts = Some(self.intercepts.iter().map(|v| v.as_f64()).collect());
        Ok(json)
    }

    pub fn with_derivatives(mut self, mode: DerivativeMode) -> Self {
        self.derivatives = mode;
        self
    }

    fn link(&self, role: LinkRole) -> &LinkFunction {
        self.links.get(role)
    }

    fn d(&self, role: LinkRole, v: T) -> T {
        let link = self.link(role);
        match self.derivatives {
            DerivativeMode::Analytic => link.derivative(v, self.fd_step),
            DerivativeMode::FiniteDifference => link.fd_derivative(v, self.fd_step),
        }
    }

    fn mediator_intercepts(&self) -> Result<Array1<T>> {
        let layout = self.coefficients.layout()?;
        Ok(Array1::from_iter(layout.mediators().map(|j| self.intercepts[j])))
    }

    /// Drops mediator `i` from coefficients and intercepts.
    pub fn remove_mediator(&self, i: usize) -> Result<Self> {
        let layout = self.coefficients.layout()?;
        let drop = layout.mediator(i);
        let keep: Vec<usize> = (0..layout.width()).filter(|&j| j != drop).collect();
        Ok(Self {
            coefficients: self.coefficients.remove_mediator(i)?,
            links: self.links.clone(),
            intercepts: self.intercepts.select(Axis(0), &keep),
            fd_step: self.fd_step,
            derivatives: self.derivatives,
        })
    }

    /// `E[M | do(A = a), X = x]` and its derivative in `a`.
    fn mediator_path(&self, x: &[T], a: T) -> Result<(Array1<T>, Array1<T>)> {
        let c = &self.coefficients;
        c.check_moderator(x)?;
        let order = c.mediator_order()?;
        let s = c.s();
        let mut level = self.mediator_intercepts()?;
        let mut slope = Array1::<T>::zeros(s);
        let f_a = self.link(LinkRole::MediatorFromTreatment);
        for i in 0..s {
            level[i] += c.beta_a[i] * f_a.eval(a);
            slope[i] += c.beta_a[i] * self.d(LinkRole::MediatorFromTreatment, a);
        }
        let f_x = self.link(LinkRole::MediatorFromCovariate);
        let f_xa = self.link(LinkRole::MediatorFromInteraction);
        for (k, &xk) in x.iter().enumerate() {
            let fx = f_x.eval(xk);
            let fxa = f_xa.eval(xk * a);
            let dxa = xk * self.d(LinkRole::MediatorFromInteraction, xk * a);
            for i in 0..s {
                level[i] += c.b_x[[k, i]] * fx + c.b_xa[[k, i]] * fxa;
                slope[i] += c.b_xa[[k, i]] * dxa;
            }
        }
        Ok((mediator_solve(&c.b_m, &level, &order), mediator_solve(&c.b_m, &slope, &order)))
    }

    /// Per-mediator chain-rule terms and the treatment-to-mediator slopes.
    fn mediation_terms(&self, x: &[T], a: T) -> Result<(Array1<T>, Array1<T>)> {
        let (level, slope) = self.mediator_path(x, a)?;
        let c = &self.coefficients;
        let terms = Array1::from_iter(
            (0..c.s()).map(|i| c.gamma_m[i] * self.d(LinkRole::OutcomeFromMediator, level[i]) * slope[i]),
        );
        Ok((slope, terms))
    }

    fn indirect(&self, x: &[T], a: T) -> Result<T> {
        let (_, terms) = self.mediation_terms(x, a)?;
        Ok(terms.iter().fold(T::zero(), |acc, &v| acc + v))
    }

    fn direct(&self, x: &[T], a: T) -> Result<T> {
        let c = &self.coefficients;
        c.check_moderator(x)?;
        let mut hde = c.gamma_a * self.d(LinkRole::OutcomeFromTreatment, a);
        for (k, &xk) in x.iter().enumerate() {
            hde += c.gamma_xa[k] * xk * self.d(LinkRole::OutcomeFromInteraction, xk * a);
        }
        Ok(hde)
    }
}

/// HDE, HIE and HTE of the functional model at `(x, a)`.
pub fn functional_treatment_effects<T: Scalar>(fp: &FunctionalParams<T>, x: &[T], a: T) -> Result<TreatmentEffects<T>> {
    let hde = fp.direct(x, a)?;
    let hie = fp.indirect(x, a)?;
    Ok(TreatmentEffects { x: x.to_vec(), hde, hie, hte: hde + hie })
}

/// Per-mediator effects of the functional model at `(x, a)`.
pub fn functional_mediator_effects<T: Scalar>(fp: &FunctionalParams<T>, x: &[T], a: T) -> Result<Vec<MediatorEffects<T>>> {
    let (delta, hdm) = fp.mediation_terms(x, a)?;
    let hie = hdm.iter().fold(T::zero(), |acc, &v| acc + v);
    (0..fp.coefficients.s())
        .map(|i| {
            let htm = hie - fp.remove_mediator(i)?.indirect(x, a)?;
            Ok(MediatorEffects { index: i, delta: delta[i], hdm: hdm[i], him: htm - hdm[i], htm })
        })
        .collect()
}

/// Least-squares fit of the link-transformed parents of every response in
/// `skel`, on the raw data scale with an intercept.
pub fn fit_functional<T: Scalar>(data: &Dataset<T>, skel: &Skeleton, links: &Links) -> Result<FunctionalParams<T>> {
    let layout = data.layout();
    if skel.layout() != layout {
        return Err(Error::Dimension("skeleton and dataset layouts differ".into()));
    }
    if !skel.is_structurally_valid() || !skel.is_acyclic() {
        return Err(Error::Config("skeleton must be acyclic and structurally valid".into()));
    }
    for spec in links.to_specs() {
        spec.link.validate()?;
    }
    let raw = data.raw_values();
    let n = raw.nrows();
    let names = layout.node_names();
    let mut b = Array2::<T>::zeros((layout.width(), layout.width()));
    let mut intercepts = Array1::<T>::zeros(layout.width());
    for node in 0..layout.width() {
        let parents = skel.parents(node);
        if parents.is_empty() {
            continue;
        }
        let mut design = Array2::<T>::ones((n, parents.len() + 1));
        for (col, &par) in parents.iter().enumerate() {
            let link = LinkRole::of_edge(layout.role(par), layout.role(node)).map(|r| links.get(r));
            for row in 0..n {
                let v = raw[[row, par]];
                design[[row, col]] = link.map_or(v, |l| l.eval(v));
            }
        }
        let beta = least_squares(design.view(), raw.column(node))
            .ok_or_else(|| Error::RankDeficient(format!("design for {} is rank deficient", names[node])))?;
        for (k, &par) in parents.iter().enumerate() {
            b[[par, node]] = beta[k];
        }
        intercepts[node] = beta[parents.len()];
    }
    let graph = crate::graph::WeightedGraph::new(layout, b)?;
    let mut fp = FunctionalParams::new(Parameters::from_graph(&graph)?, links.clone())?;
    fp.intercepts = intercepts;
    Ok(fp)
}

fn standard_normal<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> T {
    T::of(rng.sample::<f64, _>(StandardNormal))
}

/// Structural equation of mediator `j` given everything upstream.
fn mediator_value<T: Scalar>(fp: &FunctionalParams<T>, x: &[T], a: T, m: &[T], j: usize, offset: usize) -> T {
    let c = &fp.coefficients;
    let mut v = fp.intercepts[offset + j] + c.beta_a[j] * fp.link(LinkRole::MediatorFromTreatment).eval(a);
    for (k, &xk) in x.iter().enumerate() {
        v += c.b_x[[k, j]] * fp.link(LinkRole::MediatorFromCovariate).eval(xk)
            + c.b_xa[[k, j]] * fp.link(LinkRole::MediatorFromInteraction).eval(xk * a);
    }
    for (i, &mi) in m.iter().enumerate() {
        v += c.b_m[[i, j]] * mi;
    }
    v
}

fn outcome_value<T: Scalar>(fp: &FunctionalParams<T>, x: &[T], a: T, m: &[T]) -> T {
    let c = &fp.coefficients;
    let y_node = fp.intercepts.len() - 1;
    let mut y = fp.intercepts[y_node] + c.gamma_a * fp.link(LinkRole::OutcomeFromTreatment).eval(a);
    for (k, &xk) in x.iter().enumerate() {
        y += c.gamma_x[k] * fp.link(LinkRole::OutcomeFromCovariate).eval(xk)
            + c.gamma_xa[k] * fp.link(LinkRole::OutcomeFromInteraction).eval(xk * a);
    }
    for (i, &mi) in m.iter().enumerate() {
        y += c.gamma_m[i] * fp.link(LinkRole::OutcomeFromMediator).eval(mi);
    }
    y
}

/// Draws `n` raw rows from the functional model with standard normal noise.
pub fn functional_forward_sample<T: Scalar, R: Rng + ?Sized>(fp: &FunctionalParams<T>, n: usize, rng: &mut R) -> Result<Dataset<T>> {
    let c = &fp.coefficients;
    let layout = c.layout()?;
    let order = c.mediator_order()?;
    let (p, s) = (c.p(), c.s());
    let offset = layout.mediators().start;
    let mut values = Array2::<T>::zeros((n, layout.width()));
    for row in 0..n {
        let x: Vec<T> = (0..p).map(|_| standard_normal(rng)).collect();
        let mut a = fp.intercepts[layout.treatment()] + standard_normal(rng);
        for (k, &xk) in x.iter().enumerate() {
            a += c.delta_x[k] * fp.link(LinkRole::TreatmentFromCovariate).eval(xk);
        }
        let noise: Vec<T> = (0..s).map(|_| standard_normal(rng)).collect();
        let mut m = vec![T::zero(); s];
        for &j in &order {
            m[j] = mediator_value(fp, &x, a, &m, j, offset) + noise[j];
        }
        let y = outcome_value(fp, &x, a, &m) + standard_normal(rng);
        for k in 0..p {
            values[[row, layout.covariate(k)]] = x[k];
            values[[row, layout.interaction(k)]] = x[k] * a;
        }
        values[[row, layout.treatment()]] = a;
        for i in 0..s {
            values[[row, layout.mediator(i)]] = m[i];
        }
        values[[row, layout.outcome()]] = y;
    }
    Dataset::from_raw(layout, values)
}

/// Monte-Carlo mean of `Y` under `do(A = a, X = x)`. With `mediators_under`
/// set to `a'`, every mediator is held at the value it takes under
/// `do(A = a')` with the same noise.
pub fn functional_mc_mean<T: Scalar, R: Rng + ?Sized>(
    fp: &FunctionalParams<T>,
    x: &[T],
    a: T,
    mediators_under: Option<T>,
    n_mc: usize,
    rng: &mut R,
) -> Result<(T, T)> {
    let c = &fp.coefficients;
    c.check_moderator(x)?;
    if n_mc < 2 {
        return Err(Error::Config("n_mc must be at least 2".into()));
    }
    let layout = c.layout()?;
    let order = c.mediator_order()?;
    let s = c.s();
    let offset = layout.mediators().start;
    let mut sum = T::zero();
    let mut sum_sq = T::zero();
    for _ in 0..n_mc {
        let noise: Vec<T> = (0..s).map(|_| standard_normal(rng)).collect();
        let level = mediators_under.unwrap_or(a);
        let mut m = vec![T::zero(); s];
        for &j in &order {
            m[j] = mediator_value(fp, x, level, &m, j, offset) + noise[j];
        }
        let y = outcome_value(fp, x, a, &m) + standard_normal(rng);
        sum += y;
        sum_sq += y * y;
    }
    let nf = T::of(n_mc as f64);
    let mean = sum / nf;
    let var = ((sum_sq - nf * mean * mean) / (nf - T::one())).max(T::zero());
    Ok((mean, (var / nf).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::debias::{refit, LassoConfig};
    use crate::effects::oracle::random_parameters;
    use crate::effects::{mediator_effects, treatment_effects};
    use crate::graph::Skeleton;
    use crate::layout::BlockLayout;
    use crate::scenario::{simulate, ScenarioId, ScenarioSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn all_kinds() -> Vec<LinkFunction> {
        vec![
            LinkFunction::Identity,
            LinkFunction::Polynomial { degree: 2 },
            LinkFunction::Polynomial { degree: 3 },
            LinkFunction::Sine,
            LinkFunction::Tanh,
            LinkFunction::Table { points: vec![[-2.0, 1.0], [0.0, 0.0], [1.0, 2.0], [3.0, 2.5]] },
        ]
    }

    #[test]
    fn link_spec_json() {
        let spec: LinkSpec = serde_json::from_str(r#"{"block":"Y.a","kind":"polynomial","degree":2}"#).unwrap();
        assert_eq!(spec, LinkSpec { block: LinkRole::OutcomeFromTreatment, link: LinkFunction::Polynomial { degree: 2 } });
        let back = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<LinkSpec>(&back).unwrap(), spec);
        assert!(serde_json::from_str::<LinkSpec>(r#"{"block":"Q.z","kind":"sine"}"#).is_err());
        assert_eq!("M.xa".parse::<LinkRole>().unwrap(), LinkRole::MediatorFromInteraction);
    }

    #[test]
    fn graph_json_carries_links_and_intercepts() {
        let mut p = Parameters::<f64>::zeros(1, 1);
        p.gamma_m[0] = 0.5;
        let mut fp = FunctionalParams::new(p, Links::identity().with(LinkRole::OutcomeFromMediator, LinkFunction::Tanh)).unwrap();
        fp.intercepts[4] = 1.25;
        let json = fp.to_graph_json().unwrap();
        let back = FunctionalParams::<f64>::from_graph_json(&serde_json::from_str(&serde_json::to_string(&json).unwrap()).unwrap()).unwrap();
        assert_eq!(back, fp);
        let bad = GraphJson { intercepts: Some(vec![0.0]), ..json };
        assert!(FunctionalParams::<f64>::from_graph_json(&bad).is_err());
    }

    #[test]
    fn table_link_interpolates_and_extrapolates() {
        let t = LinkFunction::Table { points: vec![[0.0, 0.0], [1.0, 2.0], [2.0, 3.0]] };
        assert_eq!(t.eval(0.5), 1.0);
        assert_eq!(t.eval(1.5), 2.5);
        assert_eq!(t.eval(-1.0), -2.0);
        assert_eq!(t.eval(4.0), 5.0);
        assert!(LinkFunction::Table { points: vec![[1.0, 0.0], [1.0, 1.0]] }.validate().is_err());
    }

    proptest! {
        #[test]
        fn derivatives_match_central_differences(v in -2.5f64..2.5, k in 0usize..6) {
            let link = &all_kinds()[k];
            let analytic = link.derivative(v, 1e-5);
            let fd = link.fd_derivative(v, 1e-6);
            // piecewise-linear tables are not differentiable at their knots
            let near_knot = matches!(link, LinkFunction::Table { points } if points.iter().any(|p| (p[0] - v).abs() < 1e-5));
            prop_assume!(!near_knot);
            prop_assert!((analytic - fd).abs() <= 1e-6 * analytic.abs().max(1.0));
        }

        #[test]
        fn identity_links_reduce_to_linear_effects(seed in any::<u64>(), a in -2.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let params = random_parameters(2, 4, &mut rng);
            let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let fp = FunctionalParams::new(params.clone(), Links::identity()).unwrap();
            let lin = treatment_effects(&params, &x).unwrap();
            let fun = functional_treatment_effects(&fp, &x, a).unwrap();
            prop_assert!((lin.hde - fun.hde).abs() <= 1e-10);
            prop_assert!((lin.hie - fun.hie).abs() <= 1e-10);
            for (l, f) in mediator_effects(&params, &x).unwrap().iter().zip(functional_mediator_effects(&fp, &x, a).unwrap()) {
                prop_assert!((l.htm - f.htm).abs() <= 1e-10 && (l.hdm - f.hdm).abs() <= 1e-10);
            }
        }

        #[test]
        fn nonlinear_identities(seed in any::<u64>(), a in -1.5f64..1.5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let params = random_parameters(2, 4, &mut rng);
            let links = Links::identity()
                .with(LinkRole::MediatorFromTreatment, LinkFunction::Sine)
                .with(LinkRole::MediatorFromInteraction, LinkFunction::Polynomial { degree: 2 })
                .with(LinkRole::OutcomeFromMediator, LinkFunction::Tanh)
                .with(LinkRole::OutcomeFromTreatment, LinkFunction::Polynomial { degree: 3 })
                .with(LinkRole::OutcomeFromInteraction, LinkFunction::Sine);
            let x = [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)];
            let fp = FunctionalParams::new(params, links).unwrap();
            let te = functional_treatment_effects(&fp, &x, a).unwrap();
            let me = functional_mediator_effects(&fp, &x, a).unwrap();
            prop_assert_eq!(te.hte, te.hde + te.hie);
            let sum = me.iter().fold(0.0, |acc, m| acc + m.hdm);
            prop_assert!((sum - te.hie).abs() <= 1e-8);
            let fd = fp.clone().with_derivatives(DerivativeMode::FiniteDifference);
            let te_fd = functional_treatment_effects(&fd, &x, a).unwrap();
            prop_assert!((te.hde - te_fd.hde).abs() <= 1e-5 && (te.hie - te_fd.hie).abs() <= 1e-5);
        }
    }

    #[test]
    fn hde_of_a_squared_link() {
        let mut params = Parameters::<f64>::zeros(1, 0);
        params.gamma_a = 1.0;
        let fp = FunctionalParams::new(params, Links::identity().with(LinkRole::OutcomeFromTreatment, LinkFunction::Polynomial { degree: 2 })).unwrap();
        for a in [-1.0, 0.0, 0.5, 2.0] {
            assert!((functional_treatment_effects(&fp, &[0.3], a).unwrap().hde - 2.0 * a).abs() < 1e-12);
            // common random numbers make the difference of means exact up to the link
            let h = 0.01;
            let (up, _) = functional_mc_mean(&fp, &[0.3], a + h, None, 2000, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
            let (dn, _) = functional_mc_mean(&fp, &[0.3], a - h, None, 2000, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
            assert!(((up - dn) / (2.0 * h) - 2.0 * a).abs() < 1e-9);
        }
    }

    #[test]
    fn total_effect_matches_mc_difference_with_mediators() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let params = random_parameters(1, 3, &mut rng);
        let links = Links::identity()
            .with(LinkRole::MediatorFromTreatment, LinkFunction::Sine)
            .with(LinkRole::OutcomeFromTreatment, LinkFunction::Polynomial { degree: 2 });
        let fp = FunctionalParams::new(params, links).unwrap();
        let (x, a, h) = ([0.4], 0.3, 1e-3);
        // Y is linear in M here, so the mean path equals the derivative path
        let (up, _) = functional_mc_mean(&fp, &x, a + h, None, 1000, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let (dn, _) = functional_mc_mean(&fp, &x, a - h, None, 1000, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let te = functional_treatment_effects(&fp, &x, a).unwrap();
        assert!(((up - dn) / (2.0 * h) - te.hte).abs() < 1e-5);
        let (du, _) = functional_mc_mean(&fp, &x, a + h, Some(a), 1000, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let (dd, _) = functional_mc_mean(&fp, &x, a - h, Some(a), 1000, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert!(((du - dd) / (2.0 * h) - te.hde).abs() < 1e-5);
    }

    #[test]
    fn zero_outcome_mediator_weights_give_no_indirect_effect() {
        let mut params = random_parameters(2, 3, &mut ChaCha8Rng::seed_from_u64(2));
        params.gamma_m.fill(0.0);
        let fp = FunctionalParams::new(params, Links::identity().with(LinkRole::OutcomeFromMediator, LinkFunction::Sine)).unwrap();
        assert_eq!(functional_treatment_effects(&fp, &[0.2, 1.0], 0.7).unwrap().hie, 0.0);
    }

    #[test]
    fn parallel_mediators_have_no_indirect_mediation() {
        let mut params = random_parameters(1, 3, &mut ChaCha8Rng::seed_from_u64(3));
        params.b_m.fill(0.0);
        let fp = FunctionalParams::new(params, Links::identity().with(LinkRole::OutcomeFromMediator, LinkFunction::Tanh)).unwrap();
        for m in functional_mediator_effects(&fp, &[0.5], 0.1).unwrap() {
            assert!(m.him.abs() < 1e-15);
        }
    }

    #[test]
    fn identity_fit_matches_unpenalised_refit() {
        let spec = ScenarioSpec { n: 600, ..ScenarioSpec::preset(ScenarioId::S2, 4).unwrap() };
        let (truth, data) = simulate::<f64>(&spec).unwrap();
        let skel = Skeleton::support(&truth);
        let fp = fit_functional(&data, &skel, &Links::identity()).unwrap();
        let lin = refit(&data, &skel, &LassoConfig { lambda_frac: 0.0, max_iter: 200_000, tol: 1e-14 }).unwrap();
        let fitted = fp.coefficients.to_graph().unwrap();
        let diff = (fitted.matrix() - lin.matrix()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-6, "{diff}");
    }

    #[test]
    fn sine_link_coefficient_is_recovered() {
        let layout = BlockLayout::new(1, 0).unwrap();
        let mut params = Parameters::<f64>::zeros(1, 0);
        params.gamma_a = 2.0;
        let links = Links::identity().with(LinkRole::OutcomeFromTreatment, LinkFunction::Sine);
        let fp = FunctionalParams::new(params, links.clone()).unwrap();
        let data = functional_forward_sample(&fp, 5000, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let mut skel = Skeleton::empty(layout);
        skel.set_edge(layout.treatment(), layout.outcome(), true);
        let fit = fit_functional(&data, &skel, &links).unwrap();
        assert!((fit.coefficients.gamma_a - 2.0).abs() < 0.05);
        let empty = fit_functional(&data, &Skeleton::empty(layout), &links).unwrap();
        assert!(empty.coefficients.to_graph().unwrap().matrix().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rank_deficiency_names_the_response() {
        let layout = BlockLayout::new(1, 1).unwrap();
        let values = Array2::from_shape_fn((20, layout.width()), |(r, c)| if c == layout.treatment() { 1.0 } else { r as f64 });
        let data = Dataset::from_raw(layout, values).unwrap();
        let mut skel = Skeleton::empty(layout);
        skel.set_edge(layout.treatment(), layout.mediator(0), true);
        let err = fit_functional(&data, &skel, &Links::identity()).unwrap_err();
        assert!(err.to_string().contains("M1"), "{err}");
    }

    #[test]
    fn functional_sampler_keeps_the_product_column() {
        let params = random_parameters(2, 2, &mut ChaCha8Rng::seed_from_u64(9));
        let fp = FunctionalParams::new(params, Links::identity().with(LinkRole::MediatorFromTreatment, LinkFunction::Tanh)).unwrap();
        let d = functional_forward_sample(&fp, 50, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let l = d.layout();
        for row in d.values().outer_iter() {
            for k in 0..2 {
                assert_eq!(row[l.interaction(k)], row[l.covariate(k)] * row[l.treatment()]);
            }
        }
    }
}
