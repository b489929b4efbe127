//! Small dense helpers that ndarray does not ship: matrix powers, topological
//! sorting of adjacency patterns, and a rank-revealing least-squares solve.

use std::collections::BinaryHeap;
use std::cmp::Reverse;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};

use crate::scalar::Scalar;

/// `m^k` by repeated squaring. `m` must be square.
pub fn matrix_power<T: Scalar>(m: &Array2<T>, mut k: usize) -> Array2<T> {
    let n = m.nrows();
    let mut result = Array2::<T>::eye(n);
    let mut base = m.clone();
    while k > 0 {
        if k & 1 == 1 {
            result = result.dot(&base);
        }
        k >>= 1;
        if k > 0 {
            base = base.dot(&base);
        }
    }
    result
}

/// Kahn's algorithm over `n` nodes; `edge(i, j)` reports an edge `i -> j`.
/// Ties are broken toward the smallest index so the order is deterministic.
/// Returns `None` when the pattern contains a directed cycle.
pub fn topological_order(n: usize, edge: impl Fn(usize, usize) -> bool) -> Option<Vec<usize>> {
    let mut indeg = vec![0usize; n];
    let mut children = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if edge(i, j) {
                indeg[j] += 1;
                children[i].push(j);
            }
        }
    }
    let mut ready: BinaryHeap<Reverse<usize>> =
        (0..n).filter(|&i| indeg[i] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(i)) = ready.pop() {
        order.push(i);
        for &j in &children[i] {
            indeg[j] -= 1;
            if indeg[j] == 0 {
                ready.push(Reverse(j));
            }
        }
    }
    (order.len() == n).then_some(order)
}

/// Least-squares solution of `x * beta ≈ y` via Householder QR.
///
/// Returns `None` when the design is numerically rank deficient, judged by
/// the diagonal of `R` relative to the largest column norm.
pub fn least_squares<T: Scalar>(x: ArrayView2<T>, y: ArrayView1<T>) -> Option<Array1<T>> {
    let (n, k) = x.dim();
    if k == 0 {
        return Some(Array1::zeros(0));
    }
    if n < k {
        return None;
    }
    let mut r = x.to_owned();
    let mut qty = y.to_owned();
    let scale = (0..k)
        .map(|j| r.column(j).iter().map(|&v| v * v).sum::<T>().sqrt())
        .fold(T::zero(), T::max);
    if scale == T::zero() {
        return None;
    }
    let tol = T::of(n.max(k) as f64) * T::epsilon() * scale * T::of(10.0);

    for j in 0..k {
        let norm = r.slice(s![j.., j]).iter().map(|&v| v * v).sum::<T>().sqrt();
        if norm <= tol {
            return None;
        }
        let alpha = if r[[j, j]] > T::zero() { -norm } else { norm };
        let mut v: Array1<T> = r.slice(s![j.., j]).to_owned();
        v[0] -= alpha;
        let vnorm2: T = v.iter().map(|&a| a * a).sum();
        if vnorm2 > T::zero() {
            for c in j..k {
                let dot: T = v.iter().zip(r.slice(s![j.., c])).map(|(&a, &b)| a * b).sum();
                let f = T::of(2.0) * dot / vnorm2;
                for (row, &vi) in v.iter().enumerate() {
                    r[[j + row, c]] -= f * vi;
                }
            }
            let dot: T = v.iter().zip(qty.slice(s![j..])).map(|(&a, &b)| a * b).sum();
            let f = T::of(2.0) * dot / vnorm2;
            for (row, &vi) in v.iter().enumerate() {
                qty[j + row] -= f * vi;
            }
        }
        if r[[j, j]].abs() <= tol {
            return None;
        }
    }

    let mut beta = Array1::<T>::zeros(k);
    for j in (0..k).rev() {
        let mut acc = qty[j];
        for c in j + 1..k {
            acc -= r[[j, c]] * beta[c];
        }
        beta[j] = acc / r[[j, j]];
    }
    Some(beta)
}
