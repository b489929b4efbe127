//! Graphviz export. Positive edges are red, negative edges blue.

use std::fmt::Write;

use ndarray::Array2;

use crate::error::Result;
use crate::graph::{project_hcg, HcgProjection, Parameters, WeightedGraph};
use crate::scalar::Scalar;

fn render<T: Scalar>(names: &[String], weights: &Array2<T>) -> String {
    let mut out = String::from("digraph G {\n");
    for name in names {
        let _ = writeln!(out, "  \"{name}\";");
    }
    for ((i, j), &w) in weights.indexed_iter() {
        if w == T::zero() {
            continue;
        }
        let color = if w > T::zero() { "red" } else { "blue" };
        let _ = writeln!(out, "  \"{}\" -> \"{}\" [label=\"{:.3}\", color={color}];", names[i], names[j], w.as_f64());
    }
    out.push_str("}\n");
    out
}

/// The full graph over `X, A, XA, M, Y`.
pub fn graph_to_dot<T: Scalar>(g: &WeightedGraph<T>) -> String {
    render(&g.layout().node_names(), g.matrix())
}

/// The graph over `A, M, Y` after fixing the covariates at `x`.
pub fn projection_to_dot<T: Scalar>(proj: &HcgProjection<T>) -> String {
    render(&HcgProjection::<T>::node_names(proj.b_do.nrows() - 2), &proj.b_do)
}

pub fn hcg_to_dot<T: Scalar>(params: &Parameters<T>, x: &[T]) -> Result<String> {
    Ok(projection_to_dot(&project_hcg(params, x)?))
}
