//! Block-structured weighted DAGs: structural constraints, the continuous
//! acyclicity function, thresholding, moderator projection and mediator
//! removal.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::BlockLayout;
use crate::linalg::{matrix_power, topological_order};
use crate::scalar::Scalar;

/// Weighted adjacency matrix over the block layout; `matrix[[i, j]]` is the
/// weight of the edge `Z_i -> Z_j` and zero means absent.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph<T> {
    layout: BlockLayout,
    matrix: Array2<T>,
}

impl<T: Scalar> WeightedGraph<T> {
    pub fn new(layout: BlockLayout, matrix: Array2<T>) -> Result<Self> {
        let w = layout.width();
        if matrix.dim() != (w, w) {
            return Err(Error::Dimension(format!(
                "matrix is {:?}, layout needs {w}x{w}",
                matrix.dim()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("graph weights".into()));
        }
        Ok(Self { layout, matrix })
    }

    pub fn zeros(layout: BlockLayout) -> Self {
        let w = layout.width();
        Self { layout, matrix: Array2::zeros((w, w)) }
    }

    pub fn layout(&self) -> BlockLayout {
        self.layout
    }

    pub fn matrix(&self) -> &Array2<T> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Array2<T> {
        self.matrix
    }

    pub fn weight(&self, from: usize, to: usize) -> T {
        self.matrix[[from, to]]
    }

    pub fn set_weight(&mut self, from: usize, to: usize, value: T) {
        self.matrix[[from, to]] = value;
    }

    pub fn edge_count(&self) -> usize {
        self.matrix.iter().filter(|v| **v != T::zero()).count()
    }

    pub fn structural_report(&self) -> StructuralReport<T> {
        structural_report(self)
    }

    pub fn is_structurally_valid(&self) -> bool {
        self.structural_report().h2 == T::zero()
    }

    /// Zeroes every entry the structural constraints forbid.
    pub fn apply_structural_mask(&mut self) {
        let l = self.layout;
        for ((i, j), v) in self.matrix.indexed_iter_mut() {
            if !l.edge_permitted(i, j) {
                *v = T::zero();
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> WeightedGraph<U> {
        WeightedGraph { layout: self.layout, matrix: self.matrix.mapv(|v| U::of(v.as_f64())) }
    }
}

/// Boolean edge pattern produced by thresholding a weighted graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Skeleton {
    layout: BlockLayout,
    edges: Array2<bool>,
}

impl Skeleton {
    pub fn new(layout: BlockLayout, edges: Array2<bool>) -> Result<Self> {
        let w = layout.width();
        if edges.dim() != (w, w) {
            return Err(Error::Dimension(format!("skeleton is {:?}, expected {w}x{w}", edges.dim())));
        }
        Ok(Self { layout, edges })
    }

    pub fn empty(layout: BlockLayout) -> Self {
        let w = layout.width();
        Self { layout, edges: Array2::from_elem((w, w), false) }
    }

    /// Support of a weighted graph (nonzero entries).
    pub fn support<T: Scalar>(g: &WeightedGraph<T>) -> Self {
        Self { layout: g.layout, edges: g.matrix.mapv(|v| v != T::zero()) }
    }

    pub fn layout(&self) -> BlockLayout {
        self.layout
    }

    pub fn edges(&self) -> &Array2<bool> {
        &self.edges
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.edges[[from, to]]
    }

    pub fn set_edge(&mut self, from: usize, to: usize, present: bool) {
        self.edges[[from, to]] = present;
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().filter(|&&e| e).count()
    }

    /// Parent indices of `node`, ascending.
    pub fn parents(&self, node: usize) -> Vec<usize> {
        (0..self.layout.width()).filter(|&i| self.edges[[i, node]]).collect()
    }

    pub fn is_acyclic(&self) -> bool {
        topological_order(self.layout.width(), |i, j| self.edges[[i, j]]).is_some()
    }

    pub fn is_structurally_valid(&self) -> bool {
        self.edges.indexed_iter().all(|((i, j), &e)| !e || self.layout.edge_permitted(i, j))
    }
}

/// Absolute-sum violations of the four zero-block constraints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StructuralReport<T> {
    /// Weight flowing into covariates.
    pub g1: T,
    /// Weight flowing into the treatment from anything but covariates.
    pub g2: T,
    /// Weight flowing out of the outcome.
    pub g3: T,
    /// Weight flowing into interaction nodes.
    pub g4: T,
    pub h2: T,
}

pub fn structural_report<T: Scalar>(g: &WeightedGraph<T>) -> StructuralReport<T> {
    let l = g.layout;
    let b = &g.matrix;
    let col_abs = |j: usize| b.column(j).iter().map(|v| v.abs()).sum::<T>();
    let g1 = l.covariates().map(col_abs).sum::<T>();
    let g2 = (l.treatment()..l.width()).map(|i| b[[i, l.treatment()]].abs()).sum::<T>();
    let g3 = b.row(l.outcome()).iter().map(|v| v.abs()).sum::<T>();
    let g4 = l.interactions().map(col_abs).sum::<T>();
    StructuralReport { g1, g2, g3, g4, h2: g1 + g2 + g3 + g4 }
}

/// Value and gradient of `tr[(I + t B∘B)^w] - w`.
#[derive(Debug, Clone)]
pub struct Acyclicity<T> {
    pub value: T,
    pub gradient: Array2<T>,
}

pub fn acyclicity<T: Scalar>(g: &WeightedGraph<T>, t: T) -> Result<Acyclicity<T>> {
    acyclicity_of(&g.matrix, t)
}

/// Acyclicity function on a bare square matrix; see [`acyclicity`].
pub fn acyclicity_of<T: Scalar>(b: &Array2<T>, t: T) -> Result<Acyclicity<T>> {
    if !(t > T::zero()) {
        return Err(Error::Config("acyclicity scale t must be positive".into()));
    }
    let w = b.nrows();
    if w == 0 {
        return Ok(Acyclicity { value: T::zero(), gradient: Array2::zeros((0, 0)) });
    }
    let m = Array2::<T>::eye(w) + &b.mapv(|v| t * v * v);
    let pow = matrix_power(&m, w - 1);
    let trace = (0..w).map(|i| pow.row(i).dot(&m.column(i))).sum::<T>();
    let value = trace - T::of(w as f64);
    // d tr(M^w) / dB = w (M^{w-1})^T ∘ 2tB
    let scale = T::of(2.0 * w as f64) * t;
    let gradient = &pow.t() * b * scale;
    if !value.is_finite() || gradient.iter().any(|v| !v.is_finite()) {
        return Err(Error::AcyclicityOverflow);
    }
    Ok(Acyclicity { value, gradient })
}

/// Default scale for the acyclicity function: `1 / w`.
pub fn default_acyclicity_scale<T: Scalar>(layout: BlockLayout) -> T {
    T::one() / T::of(layout.width() as f64)
}

/// Keeps the edges with `|b| > delta` (strict).
pub fn threshold_graph<T: Scalar>(g: &WeightedGraph<T>, delta: T) -> Skeleton {
    Skeleton { layout: g.layout, edges: g.matrix.mapv(|v| v.abs() > delta) }
}

/// `B ⊙ 1{|B| > delta}`.
pub fn threshold_weights<T: Scalar>(g: &WeightedGraph<T>, delta: T) -> WeightedGraph<T> {
    WeightedGraph {
        layout: g.layout,
        matrix: g.matrix.mapv(|v| if v.abs() > delta { v } else { T::zero() }),
    }
}

/// True iff the entries with `|b| > tol` admit a topological order.
pub fn check_dag<T: Scalar>(g: &WeightedGraph<T>, tol: T) -> bool {
    topological_order(g.layout.width(), |i, j| g.matrix[[i, j]].abs() > tol).is_some()
}

/// Named coefficient blocks of a structurally valid graph.
///
/// Mediator indices follow the layout; `b_m[[i, j]]` is the weight of
/// `M_i -> M_j`, and `b_x[[k, i]]`/`b_xa[[k, i]]` are the weights of
/// `X_k -> M_i` and `XA_k -> M_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<T> {
    pub delta_x: Array1<T>,
    pub b_x: Array2<T>,
    pub beta_a: Array1<T>,
    pub b_xa: Array2<T>,
    pub b_m: Array2<T>,
    pub gamma_x: Array1<T>,
    pub gamma_a: T,
    pub gamma_xa: Array1<T>,
    pub gamma_m: Array1<T>,
    /// Optional `p x s` covariate-by-mediator interaction on the outcome.
    pub gamma_xm: Option<Array2<T>>,
}

impl<T: Scalar> Parameters<T> {
    pub fn zeros(p: usize, s: usize) -> Self {
        Self {
            delta_x: Array1::zeros(p),
            b_x: Array2::zeros((p, s)),
            beta_a: Array1::zeros(s),
            b_xa: Array2::zeros((p, s)),
            b_m: Array2::zeros((s, s)),
            gamma_x: Array1::zeros(p),
            gamma_a: T::zero(),
            gamma_xa: Array1::zeros(p),
            gamma_m: Array1::zeros(s),
            gamma_xm: None,
        }
    }

    pub fn p(&self) -> usize {
        self.delta_x.len()
    }

    pub fn s(&self) -> usize {
        self.beta_a.len()
    }

    pub fn layout(&self) -> Result<BlockLayout> {
        BlockLayout::new(self.p(), self.s())
    }

    pub fn validate(&self) -> Result<()> {
        let (p, s) = (self.p(), self.s());
        let checks = [
            ("b_x", self.b_x.dim() == (p, s)),
            ("b_xa", self.b_xa.dim() == (p, s)),
            ("b_m", self.b_m.dim() == (s, s)),
            ("gamma_x", self.gamma_x.len() == p),
            ("gamma_xa", self.gamma_xa.len() == p),
            ("gamma_m", self.gamma_m.len() == s),
            ("gamma_xm", self.gamma_xm.as_ref().is_none_or(|g| g.dim() == (p, s))),
        ];
        for (name, ok) in checks {
            if !ok {
                return Err(Error::Dimension(format!("block {name} has the wrong shape for p={p}, s={s}")));
            }
        }
        Ok(())
    }

    /// Unpacks the blocks of a structurally valid graph.
    pub fn from_graph(g: &WeightedGraph<T>) -> Result<Self> {
        let r = g.structural_report();
        if r.h2 != T::zero() {
            return Err(Error::Config(format!(
                "graph violates structural constraints (h2 = {})",
                r.h2
            )));
        }
        let l = g.layout;
        let (p, s) = (l.p(), l.s());
        let b = &g.matrix;
        let a = l.treatment();
        let y = l.outcome();
        let mut out = Self::zeros(p, s);
        for k in 0..p {
            out.delta_x[k] = b[[l.covariate(k), a]];
            out.gamma_x[k] = b[[l.covariate(k), y]];
            out.gamma_xa[k] = b[[l.interaction(k), y]];
            for i in 0..s {
                out.b_x[[k, i]] = b[[l.covariate(k), l.mediator(i)]];
                out.b_xa[[k, i]] = b[[l.interaction(k), l.mediator(i)]];
            }
        }
        out.gamma_a = b[[a, y]];
        for i in 0..s {
            out.beta_a[i] = b[[a, l.mediator(i)]];
            out.gamma_m[i] = b[[l.mediator(i), y]];
            for j in 0..s {
                out.b_m[[i, j]] = b[[l.mediator(i), l.mediator(j)]];
            }
        }
        Ok(out)
    }

    /// Packs the blocks into the full adjacency matrix. `gamma_xm` has no
    /// slot in the base layout and is dropped.
    pub fn to_graph(&self) -> Result<WeightedGraph<T>> {
        self.validate()?;
        let l = self.layout()?;
        let (p, s) = (l.p(), l.s());
        let mut g = WeightedGraph::zeros(l);
        let a = l.treatment();
        let y = l.outcome();
        for k in 0..p {
            g.matrix[[l.covariate(k), a]] = self.delta_x[k];
            g.matrix[[l.covariate(k), y]] = self.gamma_x[k];
            g.matrix[[l.interaction(k), y]] = self.gamma_xa[k];
            for i in 0..s {
                g.matrix[[l.covariate(k), l.mediator(i)]] = self.b_x[[k, i]];
                g.matrix[[l.interaction(k), l.mediator(i)]] = self.b_xa[[k, i]];
            }
        }
        g.matrix[[a, y]] = self.gamma_a;
        for i in 0..s {
            g.matrix[[a, l.mediator(i)]] = self.beta_a[i];
            g.matrix[[l.mediator(i), y]] = self.gamma_m[i];
            for j in 0..s {
                g.matrix[[l.mediator(i), l.mediator(j)]] = self.b_m[[i, j]];
            }
        }
        if g.matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameters".into()));
        }
        Ok(g)
    }

    /// `beta_a + B_XA^T x`: the moderated treatment-to-mediator weights.
    pub fn moderated_treatment_weights(&self, x: &[T]) -> Result<Array1<T>> {
        self.check_moderator(x)?;
        let mut v = self.beta_a.clone();
        for (k, &xk) in x.iter().enumerate() {
            for i in 0..self.s() {
                v[i] += self.b_xa[[k, i]] * xk;
            }
        }
        Ok(v)
    }

    /// `gamma_a + gamma_XA x`: the moderated treatment-to-outcome weight.
    pub fn moderated_direct_weight(&self, x: &[T]) -> Result<T> {
        self.check_moderator(x)?;
        let mut v = self.gamma_a;
        for (k, &xk) in x.iter().enumerate() {
            v += self.gamma_xa[k] * xk;
        }
        Ok(v)
    }

    pub(crate) fn check_moderator(&self, x: &[T]) -> Result<()> {
        if x.len() != self.p() {
            return Err(Error::Dimension(format!(
                "moderator has length {}, expected p = {}",
                x.len(),
                self.p()
            )));
        }
        Ok(())
    }

    /// Mediator indices in a topological order of `b_m`, or
    /// [`Error::CyclicMediators`].
    pub fn mediator_order(&self) -> Result<Vec<usize>> {
        let s = self.s();
        topological_order(s, |i, j| self.b_m[[i, j]] != T::zero()).ok_or(Error::CyclicMediators)
    }

    /// Drops mediator `i` and every edge touching it, without re-routing.
    pub fn remove_mediator(&self, i: usize) -> Result<Self> {
        let s = self.s();
        if i >= s {
            return Err(Error::OutOfRange { what: "mediator", index: i, len: s });
        }
        let keep: Vec<usize> = (0..s).filter(|&j| j != i).collect();
        Ok(Self {
            delta_x: self.delta_x.clone(),
            b_x: self.b_x.select(Axis(1), &keep),
            beta_a: self.beta_a.select(Axis(0), &keep),
            b_xa: self.b_xa.select(Axis(1), &keep),
            b_m: self.b_m.select(Axis(0), &keep).select(Axis(1), &keep),
            gamma_x: self.gamma_x.clone(),
            gamma_a: self.gamma_a,
            gamma_xa: self.gamma_xa.clone(),
            gamma_m: self.gamma_m.select(Axis(0), &keep),
            gamma_xm: self.gamma_xm.as_ref().map(|g| g.select(Axis(1), &keep)),
        })
    }

    /// True when no interaction block carries weight.
    pub fn is_homogeneous(&self) -> bool {
        self.b_xa.iter().chain(self.gamma_xa.iter()).all(|v| *v == T::zero())
    }

    pub fn cast<U: Scalar>(&self) -> Parameters<U> {
        let c = |v: &T| U::of(v.as_f64());
        Parameters {
            delta_x: self.delta_x.map(c),
            b_x: self.b_x.map(c),
            beta_a: self.beta_a.map(c),
            b_xa: self.b_xa.map(c),
            b_m: self.b_m.map(c),
            gamma_x: self.gamma_x.map(c),
            gamma_a: c(&self.gamma_a),
            gamma_xa: self.gamma_xa.map(c),
            gamma_m: self.gamma_m.map(c),
            gamma_xm: self.gamma_xm.as_ref().map(|g| g.map(c)),
        }
    }
}

/// Convenience: free-function form of [`Parameters::remove_mediator`].
pub fn remove_mediator<T: Scalar>(params: &Parameters<T>, i: usize) -> Result<Parameters<T>> {
    params.remove_mediator(i)
}

/// The sub-model obtained by intervening `do(X = x)`, over nodes `[A, M_1..M_s, Y]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HcgProjection<T> {
    /// `(s+2) x (s+2)` weights; `b_do[[i, j]]` is the edge `i -> j`.
    pub b_do: Array2<T>,
    /// Constant shifts `[delta_X x; B_X^T x; gamma_X x]` induced by fixing `X`.
    pub intercepts: Array1<T>,
    pub x: Vec<T>,
}

impl<T: Scalar> HcgProjection<T> {
    pub fn node_names(s: usize) -> Vec<String> {
        std::iter::once("A".to_string())
            .chain((1..=s).map(|i| format!("M{i}")))
            .chain(std::iter::once("Y".to_string()))
            .collect()
    }
}

pub fn project_hcg<T: Scalar>(params: &Parameters<T>, x: &[T]) -> Result<HcgProjection<T>> {
    params.validate()?;
    params.check_moderator(x)?;
    let s = params.s();
    let y = s + 1;
    let mut b_do = Array2::<T>::zeros((s + 2, s + 2));
    let to_mediators = params.moderated_treatment_weights(x)?;
    for i in 0..s {
        b_do[[0, 1 + i]] = to_mediators[i];
        b_do[[1 + i, y]] = params.gamma_m[i];
        for j in 0..s {
            b_do[[1 + i, 1 + j]] = params.b_m[[i, j]];
        }
    }
    b_do[[0, y]] = params.moderated_direct_weight(x)?;

    let mut intercepts = Array1::<T>::zeros(s + 2);
    for (k, &xk) in x.iter().enumerate() {
        intercepts[0] += params.delta_x[k] * xk;
        for i in 0..s {
            intercepts[1 + i] += params.b_x[[k, i]] * xk;
        }
        intercepts[y] += params.gamma_x[k] * xk;
    }
    Ok(HcgProjection { b_do, intercepts, x: x.to_vec() })
}

/// On-disk graph format: `{"p", "s", "matrix"}` with row `i` holding the
/// outgoing edges of node `i`. Optional extras carry the covariate-by-mediator
/// block and functional link specifications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphJson {
    pub p: usize,
    pub s: usize,
    pub matrix: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_xm: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub links: Option<Vec<crate::functional::LinkSpec>>,
    /// Per-node constants in layout order, for functional models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intercepts: Option<Vec<f64>>,
}

impl GraphJson {
    pub fn from_graph<T: Scalar>(g: &WeightedGraph<T>) -> Self {
        let l = g.layout();
        Self {
            p: l.p(),
            s: l.s(),
            matrix: g.matrix.outer_iter().map(|r| r.iter().map(|v| v.as_f64()).collect()).collect(),
            gamma_xm: None,
            links: None,
            intercepts: None,
        }
    }

    pub fn from_parameters<T: Scalar>(params: &Parameters<T>) -> Result<Self> {
        let mut out = Self::from_graph(&params.to_graph()?);
        out.gamma_xm = params
            .gamma_xm
            .as_ref()
            .map(|g| g.outer_iter().map(|r| r.iter().map(|v| v.as_f64()).collect()).collect());
        Ok(out)
    }

    pub fn to_graph<T: Scalar>(&self) -> Result<WeightedGraph<T>> {
        let layout = BlockLayout::new(self.p, self.s)?;
        let w = layout.width();
        let matrix = rows_to_array(&self.matrix, w, w, "matrix")?;
        WeightedGraph::new(layout, matrix)
    }

    pub fn to_parameters<T: Scalar>(&self) -> Result<Parameters<T>> {
        let mut params = Parameters::from_graph(&self.to_graph::<T>()?)?;
        if let Some(g) = &self.gamma_xm {
            params.gamma_xm = Some(rows_to_array(g, self.p, self.s, "gamma_xm")?);
        }
        Ok(params)
    }
}

fn rows_to_array<T: Scalar>(rows: &[Vec<f64>], nr: usize, nc: usize, what: &str) -> Result<Array2<T>> {
    if rows.len() != nr || rows.iter().any(|r| r.len() != nc) {
        return Err(Error::Dimension(format!("{what} must be {nr}x{nc}")));
    }
    Ok(Array2::from_shape_fn((nr, nc), |(i, j)| T::of(rows[i][j])))
}
