//! The causal layer over concept blocks.
//!
//! Latent state is organised as `k` concept blocks of `d` dimensions each. A
//! batch of latent vectors is an `(n, k * d)` matrix whose columns
//! `[i * d, (i + 1) * d)` hold block `i`. The weighted adjacency `A` is `k x k`
//! and acts uniformly on whole blocks: `A[i][j]` is the effect of concept `i`
//! on concept `j`.
//!
//! Forward map: `m = (I - A^T)^{-1} eps`, `z_i = g_i(m_i)`. Because the prior
//! graph is acyclic, `I - A^T` is unit triangular under a topological order, so
//! the solve is a single forward substitution pass.

use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound on `a_i - |s_i|` for the monotone transform.
pub const MONOTONE_MARGIN: f64 = 1e-3;
/// Smoothing constant inside `sqrt(s^2 + eta^2)`, the differentiable stand-in for `|s|`.
const ABS_SMOOTHING: f64 = 1e-3;

pub const NEWTON_TOL: f64 = 1e-10;
pub const NEWTON_MAX_ITER: usize = 100;

/// Binary prior adjacency `I_A` over `k` concepts. `edge(i, j)` means `i -> j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorDag {
    k: usize,
    edges: Vec<bool>,
}

impl PriorDag {
    pub fn empty(k: usize) -> Self {
        Self {
            k,
            edges: vec![false; k * k],
        }
    }

    pub fn from_edges(k: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut dag = Self::empty(k);
        for &(from, to) in edges {
            if from >= k || to >= k {
                return Err(Error::Shape(format!("edge ({from}, {to}) outside {k} concepts")));
            }
            dag.edges[from * k + to] = true;
        }
        Ok(dag)
    }

    /// Builds from a square 0/1 matrix given as rows.
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let k = rows.len();
        let mut dag = Self::empty(k);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::Shape(format!("row {i} of prior graph has {} entries, expected {k}", row.len())));
            }
            for (j, &v) in row.iter().enumerate() {
                match v {
                    0 => {}
                    1 => dag.edges[i * k + j] = true,
                    other => return Err(Error::Invalid(format!("prior graph entry ({i}, {j}) = {other} is not binary"))),
                }
            }
        }
        Ok(dag)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.edges[from * self.k + to]
    }

    pub fn parents(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.k).filter(move |&i| self.has_edge(i, node))
    }

    pub fn children(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.k).filter(move |&j| self.has_edge(node, j))
    }

    pub fn edge_list(&self) -> Vec<(usize, usize)> {
        (0..self.k)
            .flat_map(|i| (0..self.k).map(move |j| (i, j)))
            .filter(|&(i, j)| self.has_edge(i, j))
            .collect()
    }

    pub fn rows(&self) -> Vec<Vec<u8>> {
        (0..self.k)
            .map(|i| (0..self.k).map(|j| u8::from(self.has_edge(i, j))).collect())
            .collect()
    }

    pub fn as_mask(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.k, self.k), |(i, j)| if self.has_edge(i, j) { 1.0 } else { 0.0 })
    }

    /// Set of ancestors of `node` (excluding itself).
    pub fn ancestors(&self, node: usize) -> Vec<bool> {
        let mut seen = vec![false; self.k];
        let mut stack: Vec<usize> = self.parents(node).collect();
        while let Some(p) = stack.pop() {
            if !seen[p] {
                seen[p] = true;
                stack.extend(self.parents(p));
            }
        }
        seen
    }
}

/// Returns a topological order of the concepts (Kahn's algorithm, lowest index
/// first among ready nodes), or a cycle error naming the nodes on one cycle.
/// `names` labels nodes in the error message; indices are used when absent.
pub fn check_acyclic(dag: &PriorDag, names: Option<&[String]>) -> Result<Vec<usize>> {
    let k = dag.k();
    let label = |i: usize| names.and_then(|n| n.get(i).cloned()).unwrap_or_else(|| i.to_string());

    for i in 0..k {
        if dag.has_edge(i, i) {
            return Err(Error::Cycle(vec![label(i)]));
        }
    }

    let mut indegree: Vec<usize> = (0..k).map(|j| dag.parents(j).count()).collect();
    let mut done = vec![false; k];
    let mut order = Vec::with_capacity(k);
    while order.len() < k {
        let Some(next) = (0..k).find(|&i| !done[i] && indegree[i] == 0) else {
            let cycle = find_cycle(dag, &done);
            return Err(Error::Cycle(cycle.into_iter().map(label).collect()));
        };
        done[next] = true;
        order.push(next);
        for c in dag.children(next) {
            indegree[c] -= 1;
        }
    }
    Ok(order)
}

/// Walks parent links among unfinished nodes until a node repeats. Every
/// unfinished node has an unfinished parent when Kahn's algorithm stalls.
fn find_cycle(dag: &PriorDag, done: &[bool]) -> Vec<usize> {
    let start = (0..dag.k()).find(|&i| !done[i]).expect("stalled with no pending node");
    let mut path = vec![start];
    let mut pos = vec![usize::MAX; dag.k()];
    pos[start] = 0;
    let mut cur = start;
    loop {
        let parent = dag
            .parents(cur)
            .find(|&p| !done[p])
            .expect("pending node without pending parent");
        if pos[parent] != usize::MAX {
            let mut cycle = path[pos[parent]..].to_vec();
            // path follows parent links; reverse to read along edge direction
            cycle.reverse();
            return cycle;
        }
        pos[parent] = path.len();
        path.push(parent);
        cur = parent;
    }
}

/// `A = A_raw ⊙ I_A`.
pub fn masked_weights(raw: &Array2<f64>, dag: &PriorDag) -> Result<Array2<f64>> {
    let k = dag.k();
    if raw.dim() != (k, k) {
        return Err(Error::Shape(format!("weights are {:?}, prior graph is {k}x{k}", raw.dim())));
    }
    Ok(raw * &dag.as_mask())
}

/// Prior structure plus learned edge weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalGraph {
    dag: PriorDag,
    order: Vec<usize>,
    weights: Array2<f64>,
}

impl CausalGraph {
    pub fn new(dag: PriorDag, weights: Array2<f64>) -> Result<Self> {
        let order = check_acyclic(&dag, None)?;
        let weights = masked_weights(&weights, &dag)?;
        Ok(Self { dag, order, weights })
    }

    pub fn zeros(dag: PriorDag) -> Result<Self> {
        let k = dag.k();
        Self::new(dag, Array2::zeros((k, k)))
    }

    pub fn k(&self) -> usize {
        self.dag.k()
    }

    pub fn dag(&self) -> &PriorDag {
        &self.dag
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn weight(&self, from: usize, to: usize) -> f64 {
        self.weights[[from, to]]
    }

    #[cfg(test)]
    pub(crate) fn weights_mut(&mut self) -> &mut Array2<f64> {
        &mut self.weights
    }

    pub fn set_weights(&mut self, raw: &Array2<f64>) -> Result<()> {
        self.weights = masked_weights(raw, &self.dag)?;
        Ok(())
    }

    /// Re-applies the mask in place.
    pub fn remask(&mut self) {
        let mask = self.dag.as_mask();
        self.weights *= &mask;
    }

    pub fn export(&self, concept_names: &[String]) -> GraphExport {
        GraphExport {
            concepts: concept_names.to_vec(),
            prior_dag: self.dag.rows(),
            weights: self.weights.outer_iter().map(|r| r.to_vec()).collect(),
            topological_order: self.order.iter().map(|&i| concept_names[i].clone()).collect(),
        }
    }

    /// Solves `(I - A^T) m = eps` block-wise for each row of `eps`.
    pub fn solve(&self, eps: ArrayView2<f64>, d: usize) -> Result<Array2<f64>> {
        check_width(eps.ncols(), self.k(), d)?;
        let mut m = eps.to_owned();
        for &j in &self.order {
            for i in self.dag.parents(j) {
                let w = self.weights[[i, j]];
                if w == 0.0 {
                    continue;
                }
                let (src, mut dst) = m.multi_slice_mut((s![.., i * d..(i + 1) * d], s![.., j * d..(j + 1) * d]));
                dst.scaled_add(w, &src);
            }
        }
        Ok(m)
    }

    /// Applies `(I - A^T)` block-wise: `r_j = m_j - sum_i A_ij m_i`.
    pub fn residual(&self, m: ArrayView2<f64>, d: usize) -> Result<Array2<f64>> {
        check_width(m.ncols(), self.k(), d)?;
        let mut r = m.to_owned();
        for j in 0..self.k() {
            for i in self.dag.parents(j) {
                let w = self.weights[[i, j]];
                r.slice_mut(s![.., j * d..(j + 1) * d])
                    .scaled_add(-w, &m.slice(s![.., i * d..(i + 1) * d]));
            }
        }
        Ok(r)
    }

    /// Solves `(I - A) u = grad` block-wise; the adjoint of [`CausalGraph::solve`].
    pub(crate) fn solve_adjoint(&self, grad: ArrayView2<f64>, d: usize) -> Array2<f64> {
        let mut u = grad.to_owned();
        for &i in self.order.iter().rev() {
            for j in self.dag.children(i) {
                let w = self.weights[[i, j]];
                if w == 0.0 {
                    continue;
                }
                let (mut dst, src) = u.multi_slice_mut((s![.., i * d..(i + 1) * d], s![.., j * d..(j + 1) * d]));
                dst.scaled_add(w, &src);
            }
        }
        u
    }

    /// `sum over rows and block dims of lhs_j * rhs_i` for every edge `i -> j`,
    /// returned as a masked `k x k` matrix.
    pub(crate) fn edge_outer(&self, lhs: ArrayView2<f64>, rhs: ArrayView2<f64>, d: usize) -> Array2<f64> {
        let k = self.k();
        let mut out = Array2::zeros((k, k));
        for (i, j) in self.dag.edge_list() {
            let a = lhs.slice(s![.., j * d..(j + 1) * d]);
            let b = rhs.slice(s![.., i * d..(i + 1) * d]);
            out[[i, j]] = (&a * &b).sum();
        }
        out
    }
}

fn check_width(ncols: usize, k: usize, d: usize) -> Result<()> {
    if ncols != k * d {
        return Err(Error::Shape(format!("latent width {ncols} != {k} blocks x {d} dims")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphExport {
    pub concepts: Vec<String>,
    pub prior_dag: Vec<Vec<u8>>,
    pub weights: Vec<Vec<f64>>,
    pub topological_order: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GMode {
    /// `g_i(u) = a_i u + b_i + s_i tanh(u)` with `a_i > |s_i| + margin`.
    Monotone,
    /// `g = identity`; the causal layer is then a linear SCM.
    LinearBypass,
}

/// Unconstrained parameters of one concept's monotone map. The slope is
/// `a = margin + softplus(rho) + sqrt(s^2 + eta^2)`, so `a - |s| > margin`
/// holds for every parameter value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonotoneParams {
    pub rho: f64,
    pub b: f64,
    pub s: f64,
}

impl MonotoneParams {
    /// Parameters reproducing slope `a`, offset `b`, tanh weight `s`.
    pub fn from_coefficients(a: f64, b: f64, s: f64) -> Result<Self> {
        let slack = a - MONOTONE_MARGIN - smooth_abs(s);
        if !(slack > 0.0) {
            return Err(Error::Invalid(format!(
                "monotone transform needs a > |s| + {MONOTONE_MARGIN} (got a = {a}, s = {s})"
            )));
        }
        Ok(Self {
            rho: softplus_inv(slack),
            b,
            s,
        })
    }

    pub fn slope(&self) -> f64 {
        MONOTONE_MARGIN + softplus(self.rho) + smooth_abs(self.s)
    }

    /// `(a, b, s)`.
    pub fn coefficients(&self) -> (f64, f64, f64) {
        (self.slope(), self.b, self.s)
    }
}

fn smooth_abs(s: f64) -> f64 {
    (s * s + ABS_SMOOTHING * ABS_SMOOTHING).sqrt()
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// The element-wise nonlinearity `g`, one parameter triple per concept,
/// shared across the `d` dimensions of the concept's block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementwiseTransform {
    pub mode: GMode,
    pub params: Vec<MonotoneParams>,
}

/// Gradient of a scalar with respect to one concept's `(a, b, s)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct CoefGrad {
    pub a: f64,
    pub b: f64,
    pub s: f64,
}

impl ElementwiseTransform {
    pub fn linear_bypass(k: usize) -> Self {
        Self {
            mode: GMode::LinearBypass,
            params: vec![MonotoneParams { rho: 0.0, b: 0.0, s: 0.0 }; k],
        }
    }

    pub fn monotone(params: Vec<MonotoneParams>) -> Self {
        Self {
            mode: GMode::Monotone,
            params,
        }
    }

    /// Monotone map initialised near the identity (`a = 1, b = 0, s = 0`).
    pub fn near_identity(k: usize) -> Self {
        Self::monotone(vec![MonotoneParams::from_coefficients(1.0, 0.0, 0.0).expect("valid"); k])
    }

    pub fn k(&self) -> usize {
        self.params.len()
    }

    fn coefs(&self, concept: usize) -> (f64, f64, f64) {
        match self.mode {
            GMode::LinearBypass => (1.0, 0.0, 0.0),
            GMode::Monotone => self.params[concept].coefficients(),
        }
    }

    pub fn apply(&self, concept: usize, u: f64) -> f64 {
        let (a, b, s) = self.coefs(concept);
        a * u + b + s * u.tanh()
    }

    pub fn derivative(&self, concept: usize, u: f64) -> f64 {
        let (a, _, s) = self.coefs(concept);
        let t = u.tanh();
        a + s * (1.0 - t * t)
    }

    /// `g_i^{-1}(v)` by Newton's method safeguarded with bisection on the
    /// bracket `[(v - b - |s|) / a, (v - b + |s|) / a]`.
    pub fn inverse(&self, concept: usize, v: f64) -> Result<f64> {
        if !v.is_finite() {
            return Err(Error::NonFinite("inverse transform input"));
        }
        let (a, b, s) = self.coefs(concept);
        if s == 0.0 {
            return Ok((v - b) / a);
        }
        let mut lo = (v - b - s.abs()) / a;
        let mut hi = (v - b + s.abs()) / a;
        let mut u = 0.5 * (lo + hi);
        for _ in 0..NEWTON_MAX_ITER {
            let t = u.tanh();
            let f = a * u + b + s * t - v;
            if f == 0.0 {
                return Ok(u);
            }
            if f > 0.0 {
                hi = u;
            } else {
                lo = u;
            }
            let slope = a + s * (1.0 - t * t);
            let mut next = u - f / slope;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            let step = (next - u).abs();
            u = next;
            if step <= NEWTON_TOL * (1.0 + u.abs()) || hi - lo <= NEWTON_TOL * (1.0 + u.abs()) {
                return Ok(u);
            }
        }
        Err(Error::NoConvergence { concept, value: v })
    }

    /// Applies `g` block-wise to a batch; returns `z`.
    pub fn apply_blocks(&self, m: ArrayView2<f64>, d: usize) -> Array2<f64> {
        let mut z = m.to_owned();
        for i in 0..self.k() {
            z.slice_mut(s![.., i * d..(i + 1) * d]).mapv_inplace(|u| self.apply(i, u));
        }
        z
    }

    pub fn inverse_blocks(&self, z: ArrayView2<f64>, d: usize) -> Result<Array2<f64>> {
        let mut m = Array2::zeros(z.raw_dim());
        for i in 0..self.k() {
            for (dst, &v) in m
                .slice_mut(s![.., i * d..(i + 1) * d])
                .iter_mut()
                .zip(z.slice(s![.., i * d..(i + 1) * d]).iter())
            {
                *dst = self.inverse(i, v)?;
            }
        }
        Ok(m)
    }

    /// `sum log g_i'(m)` over every entry of each row.
    pub fn log_det_rows(&self, m: ArrayView2<f64>, d: usize) -> ndarray::Array1<f64> {
        let mut out = ndarray::Array1::zeros(m.nrows());
        if self.mode == GMode::LinearBypass {
            return out;
        }
        for i in 0..self.k() {
            let block = m.slice(s![.., i * d..(i + 1) * d]);
            for (o, row) in out.iter_mut().zip(block.axis_iter(Axis(0))) {
                *o += row.iter().map(|&u| self.derivative(i, u).ln()).sum::<f64>();
            }
        }
        out
    }

    /// Chain rule from `(a, b, s)` to the unconstrained `(rho, b, s)`.
    pub(crate) fn coef_to_param_grad(&self, concept: usize, g: CoefGrad) -> MonotoneParams {
        let p = &self.params[concept];
        let ds_abs = p.s / smooth_abs(p.s);
        MonotoneParams {
            rho: g.a * sigmoid(p.rho),
            b: g.b,
            s: g.s + g.a * ds_abs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentKind {
    Exogenous,
    Endogenous,
}

/// One user's latent state: `k` concept blocks of `d` dims (`values` is `k x d`).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBlocks {
    pub kind: LatentKind,
    pub values: Array2<f64>,
}

impl LatentBlocks {
    pub fn exogenous(values: Array2<f64>) -> Self {
        Self {
            kind: LatentKind::Exogenous,
            values,
        }
    }

    pub fn endogenous(values: Array2<f64>) -> Self {
        Self {
            kind: LatentKind::Endogenous,
            values,
        }
    }

    pub fn k(&self) -> usize {
        self.values.nrows()
    }

    pub fn d(&self) -> usize {
        self.values.ncols()
    }

    /// The blocks laid out as a single `1 x (k * d)` row.
    pub fn as_row(&self) -> Array2<f64> {
        let (k, d) = self.values.dim();
        self.values
            .to_owned()
            .into_shape_with_order((1, k * d))
            .expect("contiguous")
    }

    fn from_row(kind: LatentKind, row: Array2<f64>, k: usize, d: usize) -> Self {
        Self {
            kind,
            values: row.into_shape_with_order((k, d)).expect("k * d entries"),
        }
    }

    fn ensure_finite(&self) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("latent blocks"))
        }
    }
}

fn check_blocks(x: &LatentBlocks, graph: &CausalGraph, g: &ElementwiseTransform) -> Result<()> {
    if x.k() != graph.k() || g.k() != graph.k() {
        return Err(Error::Shape(format!(
            "{} latent blocks, {} graph nodes, {} transforms",
            x.k(),
            graph.k(),
            g.k()
        )));
    }
    x.ensure_finite()
}

/// `z = g((I - A^T)^{-1} eps)`.
pub fn causal_transform(eps: &LatentBlocks, graph: &CausalGraph, g: &ElementwiseTransform) -> Result<LatentBlocks> {
    check_blocks(eps, graph, g)?;
    let (k, d) = eps.values.dim();
    let m = graph.solve(eps.as_row().view(), d)?;
    Ok(LatentBlocks::from_row(LatentKind::Endogenous, g.apply_blocks(m.view(), d), k, d))
}

/// `eps_i = g_i^{-1}(z_i) - A_i^T g^{-1}(z)`.
pub fn inverse_transform(z: &LatentBlocks, graph: &CausalGraph, g: &ElementwiseTransform) -> Result<LatentBlocks> {
    check_blocks(z, graph, g)?;
    let (k, d) = z.values.dim();
    let m = g.inverse_blocks(z.as_row().view(), d)?;
    let eps = graph.residual(m.view(), d)?;
    Ok(LatentBlocks::from_row(LatentKind::Exogenous, eps, k, d))
}

/// Per-concept SCM residuals `g_i^{-1}(z_i) - A_i^T g^{-1}(z)` (`k x d`).
pub fn scm_residual(z: &LatentBlocks, graph: &CausalGraph, g: &ElementwiseTransform) -> Result<Array2<f64>> {
    Ok(inverse_transform(z, graph, g)?.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn names(n: &[&str]) -> Vec<String> {
        n.iter().map(|s| s.to_string()).collect()
    }

    // year, director, genre, actor
    fn default_dag() -> PriorDag {
        PriorDag::from_edges(4, &[(1, 2), (2, 3)]).unwrap()
    }

    #[test]
    fn topological_order_of_concept_chain() {
        let order = check_acyclic(&default_dag(), None).unwrap();
        let pos = |c| order.iter().position(|&x| x == c).unwrap();
        assert!(pos(1) < pos(2) && pos(2) < pos(3));
        assert_eq!(order, vec![0, 1, 2, 3]);
    }

    #[test]
    fn empty_graph_is_acyclic() {
        let order = check_acyclic(&PriorDag::empty(5), None).unwrap();
        assert_eq!(order.len(), 5);
    }

    #[test]
    fn two_cycle_is_rejected() {
        let dag = PriorDag::from_edges(3, &[(1, 2), (2, 1)]).unwrap();
        let err = check_acyclic(&dag, None).unwrap_err();
        match err {
            Error::Cycle(nodes) => {
                let mut sorted = nodes.clone();
                sorted.sort();
                assert_eq!(sorted, vec!["1", "2"]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn three_cycle_lists_every_node_in_edge_order() {
        let dag = PriorDag::from_edges(4, &[(1, 2), (2, 3), (3, 1)]).unwrap();
        let n = names(&["year", "director", "genre", "actor"]);
        let Error::Cycle(cycle) = check_acyclic(&dag, Some(&n)).unwrap_err() else {
            panic!("expected cycle")
        };
        assert_eq!(cycle.len(), 3);
        for w in 0..3 {
            let from = n.iter().position(|x| *x == cycle[w]).unwrap();
            let to = n.iter().position(|x| *x == cycle[(w + 1) % 3]).unwrap();
            assert!(dag.has_edge(from, to), "{cycle:?}");
        }
    }

    #[test]
    fn self_loop_is_a_cycle() {
        let dag = PriorDag::from_edges(2, &[(0, 0)]).unwrap();
        assert!(matches!(check_acyclic(&dag, None), Err(Error::Cycle(_))));
    }

    #[test]
    fn masking() {
        let raw = Array2::from_elem((4, 4), 0.7);
        assert_eq!(masked_weights(&raw, &PriorDag::empty(4)).unwrap(), Array2::<f64>::zeros((4, 4)));

        let full: Vec<(usize, usize)> = (0..4).flat_map(|i| (0..4).map(move |j| (i, j))).filter(|(i, j)| i != j).collect();
        let a = masked_weights(&raw, &PriorDag::from_edges(4, &full).unwrap()).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(a[[i, j]], if i == j { 0.0 } else { 0.7 });
            }
        }

        let a = masked_weights(&raw, &default_dag()).unwrap();
        assert_eq!(a.iter().filter(|&&v| v == 0.7).count(), 2);
        assert_eq!(a[[1, 2]], 0.7);
        assert_eq!(a[[2, 3]], 0.7);

        assert!(matches!(masked_weights(&Array2::zeros((3, 3)), &default_dag()), Err(Error::Shape(_))));
    }

    fn chain2() -> CausalGraph {
        CausalGraph::new(PriorDag::from_edges(2, &[(0, 1)]).unwrap(), array![[0.0, 0.5], [0.0, 0.0]]).unwrap()
    }

    fn chain3() -> CausalGraph {
        CausalGraph::new(
            PriorDag::from_edges(3, &[(0, 1), (1, 2)]).unwrap(),
            array![[0.0, 0.5, 0.0], [0.0, 0.0, -1.0], [0.0, 0.0, 0.0]],
        )
        .unwrap()
    }

    #[test]
    fn identity_without_edges() {
        let graph = CausalGraph::zeros(PriorDag::empty(3)).unwrap();
        let g = ElementwiseTransform::linear_bypass(3);
        let eps = LatentBlocks::exogenous(array![[0.3, -1.0], [2.0, 0.1], [0.0, 5.0]]);
        let z = causal_transform(&eps, &graph, &g).unwrap();
        assert_eq!(z.values, eps.values);
        assert_eq!(z.kind, LatentKind::Endogenous);
        let back = inverse_transform(&z, &graph, &g).unwrap();
        assert_eq!(back.values, eps.values);
    }

    #[test]
    fn two_node_forward_and_inverse() {
        let g = ElementwiseTransform::linear_bypass(2);
        let eps = LatentBlocks::exogenous(array![[1.0], [1.0]]);
        let z = causal_transform(&eps, &chain2(), &g).unwrap();
        assert_abs_diff_eq!(z.values, array![[1.0], [1.5]], epsilon = 1e-15);
        let back = inverse_transform(&z, &chain2(), &g).unwrap();
        assert_abs_diff_eq!(back.values, array![[1.0], [1.0]], epsilon = 1e-15);
    }

    #[test]
    fn three_node_chain_forward_and_residual() {
        let g = ElementwiseTransform::linear_bypass(3);
        let eps = LatentBlocks::exogenous(array![[1.0], [0.0], [1.0]]);
        let z = causal_transform(&eps, &chain3(), &g).unwrap();
        assert_abs_diff_eq!(z.values, array![[1.0], [0.5], [0.5]], epsilon = 1e-15);
        let r = scm_residual(&z, &chain3(), &g).unwrap();
        assert_abs_diff_eq!(r, array![[1.0], [0.0], [1.0]], epsilon = 1e-15);
    }

    #[test]
    fn zero_noise_has_zero_residual() {
        let g = ElementwiseTransform::monotone(vec![
            MonotoneParams::from_coefficients(1.5, 0.0, 0.7).unwrap(),
            MonotoneParams::from_coefficients(0.8, 0.0, -0.5).unwrap(),
            MonotoneParams::from_coefficients(2.0, 0.0, 1.2).unwrap(),
        ]);
        let z = causal_transform(&LatentBlocks::exogenous(Array2::zeros((3, 4))), &chain3(), &g).unwrap();
        let r = scm_residual(&z, &chain3(), &g).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn residual_without_edges_is_plain_inverse() {
        let g = ElementwiseTransform::monotone(vec![
            MonotoneParams::from_coefficients(1.5, 0.3, 0.7).unwrap(),
            MonotoneParams::from_coefficients(0.8, -1.0, -0.5).unwrap(),
        ]);
        let graph = CausalGraph::zeros(PriorDag::empty(2)).unwrap();
        let z = LatentBlocks::endogenous(array![[0.4, -2.0], [3.0, 0.0]]);
        let r = scm_residual(&z, &graph, &g).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(r[[i, j]], g.inverse(i, z.values[[i, j]]).unwrap(), epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn monotone_margin_is_enforced() {
        assert!(MonotoneParams::from_coefficients(1.0, 0.0, 0.9999).is_err());
        let p = MonotoneParams::from_coefficients(1.0, 0.2, 0.5).unwrap();
        let (a, b, s) = p.coefficients();
        assert_abs_diff_eq!(a, 1.0, epsilon = 1e-12);
        assert_eq!((b, s), (0.2, 0.5));
        for rho in [-40.0, -3.0, 0.0, 5.0] {
            for s in [-10.0, -0.1, 0.0, 3.0] {
                let p = MonotoneParams { rho, b: 0.0, s };
                assert!(p.slope() > s.abs() + MONOTONE_MARGIN * 0.999);
            }
        }
    }

    #[test]
    fn derivative_positive_and_inverse_accurate() {
        let g = ElementwiseTransform::monotone(vec![
            MonotoneParams::from_coefficients(0.01, 1.0, -0.008).unwrap(),
            MonotoneParams::from_coefficients(3.0, -2.0, 2.9).unwrap(),
        ]);
        for i in 0..2 {
            for step in -200..=200 {
                let u = step as f64 * 0.1;
                assert!(g.derivative(i, u) > 0.0);
                let v = g.apply(i, u);
                let back = g.inverse(i, v).unwrap();
                assert!((g.apply(i, back) - v).abs() <= 1e-8, "concept {i} u {u}");
            }
        }
        assert!(g.inverse(0, f64::NAN).is_err());
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let graph = CausalGraph::zeros(PriorDag::empty(2)).unwrap();
        let g = ElementwiseTransform::linear_bypass(2);
        let eps = LatentBlocks::exogenous(array![[f64::INFINITY], [0.0]]);
        assert!(matches!(causal_transform(&eps, &graph, &g), Err(Error::NonFinite(_))));
    }

    #[test]
    fn remask_clears_off_mask_entries() {
        let mut graph = chain3();
        graph.weights_mut()[[2, 0]] = 4.0;
        graph.remask();
        assert_eq!(graph.weight(2, 0), 0.0);
        assert_eq!(graph.weight(1, 2), -1.0);
    }

    #[test]
    fn export_carries_order_and_weights() {
        let n = names(&["a", "b", "c"]);
        let ex = chain3().export(&n);
        assert_eq!(ex.topological_order, n);
        assert_eq!(ex.weights[1][2], -1.0);
        assert_eq!(ex.prior_dag[0][1], 1);
        let json = serde_json::to_string(&ex).unwrap();
        let back: GraphExport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ex);
    }
}
