//! Cost functions over factored rank-`r` matrices.
//!
//! Both objectives touch only a sparse set of entries of `X = U V^T`, so value,
//! gradient and Hessian-vector products are evaluated entrywise in
//! `O(|entries| r)` without ever forming the dense matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{FactoredPoint, ManifoldShape, Mat, TangentVector};
use crate::trust_region::CostProblem;

/// Directed interfering pairs `(i, j)`, `i != j`, over `K` users (0-indexed).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkTopology {
    k: usize,
    links: Vec<(usize, usize)>,
    adjacency: Vec<bool>,
}

impl NetworkTopology {
    /// Builds a topology from 0-indexed pairs. Duplicates and self-pairs are
    /// rejected.
    pub fn new(k: usize, links: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("topology needs at least one user".into()));
        }
        let mut adjacency = vec![false; k * k];
        let mut out = Vec::new();
        for (i, j) in links {
            if i >= k || j >= k {
                return Err(Error::InvalidArgument(format!(
                    "link ({}, {}) out of range for K = {k}",
                    i + 1,
                    j + 1
                )));
            }
            if i == j {
                return Err(Error::InvalidArgument(format!(
                    "self link ({}, {}) is not allowed",
                    i + 1,
                    j + 1
                )));
            }
            if adjacency[i * k + j] {
                return Err(Error::InvalidArgument(format!(
                    "duplicate link ({}, {})",
                    i + 1,
                    j + 1
                )));
            }
            adjacency[i * k + j] = true;
            out.push((i, j));
        }
        out.sort_unstable();
        Ok(Self {
            k,
            links: out,
            adjacency,
        })
    }

    pub fn empty(k: usize) -> Result<Self> {
        Self::new(k, std::iter::empty())
    }

    /// Every ordered pair `i != j` linked.
    pub fn fully_connected(k: usize) -> Result<Self> {
        Self::new(
            k,
            (0..k).flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j))),
        )
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Links in lexicographic order.
    pub fn links(&self) -> &[(usize, usize)] {
        &self.links
    }

    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    pub fn is_linked(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.k + j]
    }

    /// Both `(i, j)` and `(j, i)` are links.
    pub fn is_mutual(&self, i: usize, j: usize) -> bool {
        self.is_linked(i, j) && self.is_linked(j, i)
    }
}

/// Observed entries of an `n x n` alignment matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationMask {
    n: usize,
    entries: Vec<(usize, usize)>,
}

impl ObservationMask {
    pub fn new(n: usize, entries: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut entries: Vec<_> = entries.into_iter().collect();
        if let Some(&(i, j)) = entries.iter().find(|&&(i, j)| i >= n || j >= n) {
            return Err(Error::InvalidArgument(format!(
                "mask entry ({i}, {j}) out of range for n = {n}"
            )));
        }
        entries.sort_unstable();
        entries.dedup();
        Ok(Self { n, entries })
    }

    /// Mask of the feasibility problem restricted to `users`: every diagonal
    /// entry plus each linked pair among them. Local index `p` stands for user
    /// `users[p]`.
    pub fn for_users(topo: &NetworkTopology, users: &[usize]) -> Result<Self> {
        if users.iter().any(|&u| u >= topo.k()) {
            return Err(Error::InvalidArgument("user index out of range".into()));
        }
        let mut entries = Vec::new();
        for (p, &a) in users.iter().enumerate() {
            for (q, &b) in users.iter().enumerate() {
                if p == q || topo.is_linked(a, b) {
                    entries.push((p, q));
                }
            }
        }
        Self::new(users.len(), entries)
    }

    pub fn full(n: usize) -> Self {
        Self {
            n,
            entries: (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }
}

/// Weights of the regularized smoothed l1 objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothedL1Params {
    /// Quadratic weight bounding the objective from below.
    pub lambda: f64,
    /// Regularization weight of the diagonal term.
    pub rho: f64,
    /// Smoothing of `|t|` as `sqrt(t^2 + epsilon^2)`.
    pub epsilon: f64,
}

impl Default for SmoothedL1Params {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            rho: 0.01,
            epsilon: 0.01,
        }
    }
}

impl SmoothedL1Params {
    pub fn new(lambda: f64, rho: f64, epsilon: f64) -> Result<Self> {
        let p = Self {
            lambda,
            rho,
            epsilon,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.rho >= 0.0 && self.epsilon > 0.0)
            || !(self.lambda.is_finite() && self.rho.is_finite() && self.epsilon.is_finite())
        {
            return Err(Error::InvalidArgument(format!(
                "need lambda >= 0, rho >= 0, epsilon > 0; got {self:?}"
            )));
        }
        Ok(())
    }

    /// `lambda t^2 - sqrt(t^2 + eps^2)` and its first two derivatives.
    pub fn diagonal_term(&self, t: f64) -> (f64, f64, f64) {
        let s = (t * t + self.epsilon * self.epsilon).sqrt();
        let value = self.lambda * t * t - s;
        let d1 = 2.0 * self.lambda * t - t / s;
        let d2 = 2.0 * self.lambda - self.epsilon * self.epsilon / (s * s * s);
        (value, d1, d2)
    }
}

#[inline]
fn entry(x: &FactoredPoint, i: usize, j: usize) -> f64 {
    x.u().row(i).dot(&x.v().row(j))
}

#[inline]
fn entry_derivative(x: &FactoredPoint, xi: &TangentVector, i: usize, j: usize) -> f64 {
    xi.u.row(i).dot(&x.v().row(j)) + x.u().row(i).dot(&xi.v.row(j))
}

/// `out_U += S * B_V`, `out_V += S^T * B_U` for a sparse `S` given as triplets.
fn sparse_apply(triplets: &[(usize, usize, f64)], b_u: &Mat, b_v: &Mat, out: &mut TangentVector) {
    let r = b_u.ncols();
    for &(i, j, s) in triplets {
        if s == 0.0 {
            continue;
        }
        for c in 0..r {
            out.u[(i, c)] += s * b_v[(j, c)];
            out.v[(j, c)] += s * b_u[(i, c)];
        }
    }
}

fn check_square(x: &FactoredPoint, n: usize) -> Result<()> {
    if x.u().nrows() != n {
        return Err(Error::Dimension(format!(
            "point has {} rows, objective expects {n}",
            x.u().nrows()
        )));
    }
    Ok(())
}

/// Dense `U V^T`.
pub fn assemble_matrix(x: &FactoredPoint) -> Mat {
    x.u() * x.v().transpose()
}

/// `(row_i(U) . row_i(V))_i` without forming `U V^T`.
pub fn extract_diag(x: &FactoredPoint) -> Vec<f64> {
    (0..x.u().nrows()).map(|i| entry(x, i, i)).collect()
}

/// Regularized smoothed l1 objective on a `K x K` rank-`r` matrix:
/// `1/2 sum_links X_ij^2 + rho sum_i (lambda X_ii^2 - sqrt(X_ii^2 + eps^2))`.
#[derive(Debug, Clone)]
pub struct SparsityCost {
    topo: NetworkTopology,
    params: SmoothedL1Params,
    shape: ManifoldShape,
}

impl SparsityCost {
    pub fn new(topo: NetworkTopology, params: SmoothedL1Params, rank: usize) -> Result<Self> {
        params.validate()?;
        let shape = ManifoldShape::new(topo.k(), rank)?;
        Ok(Self {
            topo,
            params,
            shape,
        })
    }

    pub fn topology(&self) -> &NetworkTopology {
        &self.topo
    }

    pub fn params(&self) -> &SmoothedL1Params {
        &self.params
    }

    fn residual(&self, x: &FactoredPoint) -> Vec<(usize, usize, f64)> {
        let mut s = Vec::with_capacity(self.topo.num_links() + self.topo.k());
        s.extend(self.topo.links().iter().map(|&(i, j)| (i, j, entry(x, i, j))));
        let rho = self.params.rho;
        s.extend((0..self.topo.k()).map(|i| {
            let (_, d1, _) = self.params.diagonal_term(entry(x, i, i));
            (i, i, rho * d1)
        }));
        s
    }
}

impl CostProblem for SparsityCost {
    fn shape(&self) -> ManifoldShape {
        self.shape
    }

    fn cost(&self, x: &FactoredPoint) -> f64 {
        let links: f64 = self
            .topo
            .links()
            .iter()
            .map(|&(i, j)| entry(x, i, j).powi(2))
            .sum();
        let diag: f64 = (0..self.topo.k())
            .map(|i| self.params.diagonal_term(entry(x, i, i)).0)
            .sum();
        0.5 * links + self.params.rho * diag
    }

    fn euclidean_gradient(&self, x: &FactoredPoint) -> TangentVector {
        let mut g = TangentVector::zeros(x.shape());
        sparse_apply(&self.residual(x), x.u(), x.v(), &mut g);
        g
    }

    fn euclidean_hessian_vec(&self, x: &FactoredPoint, xi: &TangentVector) -> TangentVector {
        let rho = self.params.rho;
        let mut ds = Vec::with_capacity(self.topo.num_links() + self.topo.k());
        ds.extend(
            self.topo
                .links()
                .iter()
                .map(|&(i, j)| (i, j, entry_derivative(x, xi, i, j))),
        );
        ds.extend((0..self.topo.k()).map(|i| {
            let (_, _, d2) = self.params.diagonal_term(entry(x, i, i));
            (i, i, rho * d2 * entry_derivative(x, xi, i, i))
        }));
        let mut h = TangentVector::zeros(x.shape());
        sparse_apply(&ds, x.u(), x.v(), &mut h);
        sparse_apply(&self.residual(x), &xi.u, &xi.v, &mut h);
        h
    }
}

/// Masked least squares `sum_{(i,j) in mask} (X_ij - T_ij)^2`.
///
/// The admission problems use `T = I`; other targets serve completion tests.
#[derive(Debug, Clone)]
pub struct CompletionCost {
    mask: ObservationMask,
    targets: Vec<f64>,
    shape: ManifoldShape,
}

impl CompletionCost {
    /// Identity target on the masked entries.
    pub fn new(mask: ObservationMask, rank: usize) -> Result<Self> {
        Self::with_targets(mask, rank, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn with_targets(
        mask: ObservationMask,
        rank: usize,
        target: impl Fn(usize, usize) -> f64,
    ) -> Result<Self> {
        let shape = ManifoldShape::new(mask.n(), rank)?;
        let targets = mask.entries().iter().map(|&(i, j)| target(i, j)).collect();
        Ok(Self {
            mask,
            targets,
            shape,
        })
    }

    pub fn mask(&self) -> &ObservationMask {
        &self.mask
    }

    /// Largest `|X_ij - target_ij|` over observed entries.
    pub fn max_abs_residual(&self, x: &FactoredPoint) -> f64 {
        self.residual(x).iter().fold(0.0, |m, &(_, _, r)| m.max(r.abs()))
    }

    fn residual(&self, x: &FactoredPoint) -> Vec<(usize, usize, f64)> {
        self.mask
            .entries()
            .iter()
            .zip(&self.targets)
            .map(|(&(i, j), &t)| (i, j, entry(x, i, j) - t))
            .collect()
    }
}

impl CostProblem for CompletionCost {
    fn shape(&self) -> ManifoldShape {
        self.shape
    }

    fn cost(&self, x: &FactoredPoint) -> f64 {
        self.residual(x).iter().map(|&(_, _, r)| r * r).sum()
    }

    fn euclidean_gradient(&self, x: &FactoredPoint) -> TangentVector {
        let mut g = TangentVector::zeros(x.shape());
        let r2: Vec<_> = self
            .residual(x)
            .into_iter()
            .map(|(i, j, r)| (i, j, 2.0 * r))
            .collect();
        sparse_apply(&r2, x.u(), x.v(), &mut g);
        g
    }

    fn euclidean_hessian_vec(&self, x: &FactoredPoint, xi: &TangentVector) -> TangentVector {
        let dr: Vec<_> = self
            .mask
            .entries()
            .iter()
            .map(|&(i, j)| (i, j, 2.0 * entry_derivative(x, xi, i, j)))
            .collect();
        let r2: Vec<_> = self
            .residual(x)
            .into_iter()
            .map(|(i, j, r)| (i, j, 2.0 * r))
            .collect();
        let mut h = TangentVector::zeros(x.shape());
        sparse_apply(&dr, x.u(), x.v(), &mut h);
        sparse_apply(&r2, &xi.u, &xi.v, &mut h);
        h
    }
}

pub fn sparsity_cost(x: &FactoredPoint, topo: &NetworkTopology, p: &SmoothedL1Params) -> Result<f64> {
    check_square(x, topo.k())?;
    Ok(SparsityCost::new(topo.clone(), *p, x.shape().r())?.cost(x))
}

pub fn sparsity_egrad(
    x: &FactoredPoint,
    topo: &NetworkTopology,
    p: &SmoothedL1Params,
) -> Result<TangentVector> {
    check_square(x, topo.k())?;
    Ok(SparsityCost::new(topo.clone(), *p, x.shape().r())?.euclidean_gradient(x))
}

pub fn sparsity_ehess_vec(
    x: &FactoredPoint,
    topo: &NetworkTopology,
    p: &SmoothedL1Params,
    xi: &TangentVector,
) -> Result<TangentVector> {
    check_square(x, topo.k())?;
    Ok(SparsityCost::new(topo.clone(), *p, x.shape().r())?.euclidean_hessian_vec(x, xi))
}

pub fn completion_cost(x: &FactoredPoint, mask: &ObservationMask) -> Result<f64> {
    check_square(x, mask.n())?;
    Ok(CompletionCost::new(mask.clone(), x.shape().r())?.cost(x))
}

pub fn completion_egrad(x: &FactoredPoint, mask: &ObservationMask) -> Result<TangentVector> {
    check_square(x, mask.n())?;
    Ok(CompletionCost::new(mask.clone(), x.shape().r())?.euclidean_gradient(x))
}

pub fn completion_ehess_vec(
    x: &FactoredPoint,
    mask: &ObservationMask,
    xi: &TangentVector,
) -> Result<TangentVector> {
    check_square(x, mask.n())?;
    Ok(CompletionCost::new(mask.clone(), x.shape().r())?.euclidean_hessian_vec(x, xi))
}
