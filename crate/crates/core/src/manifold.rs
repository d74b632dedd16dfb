//! Quotient geometry of rank-`r` `K x K` matrices stored as `X = U V^T`.
//!
//! A point is a pair of full column-rank factors `(U, V)`. The factorization is
//! invariant under `(U, V) -> (U M^{-1}, V M^T)` for any invertible `M`, so the
//! optimizer works on equivalence classes. Tangent vectors are ambient pairs
//! `(Z_U, Z_V)`; their horizontal representatives satisfy
//!
//! ```text
//! U^T Z_U V^T V = U^T U Z_V^T V
//! ```
//!
//! and the metric is `Tr(V^T V xi_U^T eta_U) + Tr(U^T U xi_V^T eta_V)`.
//!
//! [`LocalGeometry`] caches the Gram matrices and their inverses at a point so
//! repeated metric, projection and Hessian evaluations cost `O(K r^2 + r^3)`.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{Cholesky, DMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;

/// Smallest admissible ratio between the smallest and largest Cholesky pivot
/// of a Gram matrix.
pub const RANK_PIVOT_RATIO: f64 = 1e-12;

/// Gram condition estimate above which a retracted point is flagged.
pub const CONDITION_WARNING: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifoldShape {
    k: usize,
    r: usize,
}

impl ManifoldShape {
    pub fn new(k: usize, r: usize) -> Result<Self> {
        if r == 0 || r > k {
            return Err(Error::InvalidArgument(format!(
                "rank must satisfy 1 <= r <= K, got K = {k}, r = {r}"
            )));
        }
        Ok(Self { k, r })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn r(&self) -> usize {
        self.r
    }
}

/// A representative `(U, V)` of the class of `X = U V^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredPoint {
    u: Mat,
    v: Mat,
}

impl FactoredPoint {
    /// Builds a point, rejecting mismatched shapes and rank-deficient factors.
    pub fn new(u: Mat, v: Mat) -> Result<Self> {
        let point = Self::from_factors_unchecked(u, v)?;
        gram_factor(&point.u, "U")?;
        gram_factor(&point.v, "V")?;
        Ok(point)
    }

    /// Builds a point checking only shapes. Used where a possibly degenerate
    /// iterate must be kept around (e.g. after a retraction).
    pub fn from_factors_unchecked(u: Mat, v: Mat) -> Result<Self> {
        if u.shape() != v.shape() {
            return Err(Error::Dimension(format!(
                "U is {:?} but V is {:?}",
                u.shape(),
                v.shape()
            )));
        }
        if u.ncols() == 0 || u.ncols() > u.nrows() {
            return Err(Error::Dimension(format!(
                "factors must be K x r with 1 <= r <= K, got {:?}",
                u.shape()
            )));
        }
        Ok(Self { u, v })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            u: Mat::identity(n, n),
            v: Mat::identity(n, n),
        }
    }

    pub fn u(&self) -> &Mat {
        &self.u
    }

    pub fn v(&self) -> &Mat {
        &self.v
    }

    pub fn shape(&self) -> ManifoldShape {
        ManifoldShape {
            k: self.u.nrows(),
            r: self.u.ncols(),
        }
    }

    pub fn into_parts(self) -> (Mat, Mat) {
        (self.u, self.v)
    }

    /// Representative `(U M^{-1}, V M^T)` of the same class.
    pub fn transform(&self, m: &Mat) -> Result<Self> {
        let m_inv = m
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidArgument("group element is singular".into()))?;
        Self::new(&self.u * m_inv, &self.v * m.transpose())
    }

    /// Largest of the two Gram-matrix pivot ratios; `inf` when a Gram matrix is
    /// not positive definite.
    pub fn condition_estimate(&self) -> f64 {
        pivot_condition(&self.u).max(pivot_condition(&self.v))
    }

    pub fn is_ill_conditioned(&self) -> bool {
        self.condition_estimate() > CONDITION_WARNING
    }

    /// Frobenius norm of the stacked factors.
    pub fn factor_norm(&self) -> f64 {
        (self.u.norm_squared() + self.v.norm_squared()).sqrt()
    }
}

/// Ambient tangent vector `(Z_U, Z_V)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub u: Mat,
    pub v: Mat,
}

impl TangentVector {
    pub fn new(u: Mat, v: Mat) -> Result<Self> {
        if u.shape() != v.shape() {
            return Err(Error::Dimension(format!(
                "tangent components {:?} and {:?} differ",
                u.shape(),
                v.shape()
            )));
        }
        Ok(Self { u, v })
    }

    pub fn zeros(shape: ManifoldShape) -> Self {
        Self {
            u: Mat::zeros(shape.k, shape.r),
            v: Mat::zeros(shape.k, shape.r),
        }
    }

    pub fn zeros_like(other: &Self) -> Self {
        Self {
            u: Mat::zeros(other.u.nrows(), other.u.ncols()),
            v: Mat::zeros(other.v.nrows(), other.v.ncols()),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.u.shape()
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        self.u.zip_apply(&other.u, |a, b| *a += alpha * b);
        self.v.zip_apply(&other.v, |a, b| *a += alpha * b);
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            u: &self.u * alpha,
            v: &self.v * alpha,
        }
    }

    /// Plain Frobenius pairing `Tr(a_U^T b_U) + Tr(a_V^T b_V)`.
    pub fn euclidean_dot(&self, other: &Self) -> f64 {
        self.u.dot(&other.u) + self.v.dot(&other.v)
    }

    pub fn is_zero(&self) -> bool {
        self.u.iter().chain(self.v.iter()).all(|&x| x == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(self.v.iter()).all(|x| x.is_finite())
    }
}

impl Add for &TangentVector {
    type Output = TangentVector;
    fn add(self, rhs: Self) -> TangentVector {
        TangentVector {
            u: &self.u + &rhs.u,
            v: &self.v + &rhs.v,
        }
    }
}

impl Sub for &TangentVector {
    type Output = TangentVector;
    fn sub(self, rhs: Self) -> TangentVector {
        TangentVector {
            u: &self.u - &rhs.u,
            v: &self.v - &rhs.v,
        }
    }
}

impl Neg for &TangentVector {
    type Output = TangentVector;
    fn neg(self) -> TangentVector {
        self.scaled(-1.0)
    }
}

impl Mul<f64> for &TangentVector {
    type Output = TangentVector;
    fn mul(self, rhs: f64) -> TangentVector {
        self.scaled(rhs)
    }
}

fn sym(z: &Mat) -> Mat {
    (z + z.transpose()) * 0.5
}

fn gram_factor(a: &Mat, name: &str) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let gram = a.tr_mul(a);
    let chol = Cholesky::new(gram).ok_or_else(|| {
        Error::RankDeficient(format!("{name}^T {name} is not positive definite"))
    })?;
    let l = chol.l_dirty();
    let pivots = (0..l.nrows()).map(|i| l[(i, i)] * l[(i, i)]);
    let (lo, hi) = pivots.fold((f64::INFINITY, 0.0f64), |(lo, hi), p| (lo.min(p), hi.max(p)));
    if !(lo.is_finite() && hi.is_finite()) || lo < RANK_PIVOT_RATIO * hi {
        return Err(Error::RankDeficient(format!(
            "{name}^T {name} pivot ratio {:.3e} below {RANK_PIVOT_RATIO:e}",
            lo / hi
        )));
    }
    Ok(chol)
}

fn pivot_condition(a: &Mat) -> f64 {
    match Cholesky::new(a.tr_mul(a)) {
        Some(chol) => {
            let l = chol.l_dirty();
            let pivots: Vec<f64> = (0..l.nrows()).map(|i| l[(i, i)] * l[(i, i)]).collect();
            let hi = pivots.iter().cloned().fold(0.0, f64::max);
            let lo = pivots.iter().cloned().fold(f64::INFINITY, f64::min);
            if lo > 0.0 {
                hi / lo
            } else {
                f64::INFINITY
            }
        }
        None => f64::INFINITY,
    }
}

fn check_tangent(x: &FactoredPoint, xi: &TangentVector) -> Result<()> {
    if xi.u.shape() != x.u.shape() || xi.v.shape() != x.v.shape() {
        return Err(Error::Dimension(format!(
            "tangent vector {:?} does not match point {:?}",
            xi.u.shape(),
            x.u.shape()
        )));
    }
    Ok(())
}

/// Gram matrices of a point and their inverses.
#[derive(Debug, Clone)]
pub struct LocalGeometry<'a> {
    x: &'a FactoredPoint,
    utu: Mat,
    vtv: Mat,
    utu_inv: Mat,
    vtv_inv: Mat,
}

impl<'a> LocalGeometry<'a> {
    pub fn new(x: &'a FactoredPoint) -> Result<Self> {
        let cu = gram_factor(&x.u, "U")?;
        let cv = gram_factor(&x.v, "V")?;
        Ok(Self {
            x,
            utu: x.u.tr_mul(&x.u),
            vtv: x.v.tr_mul(&x.v),
            utu_inv: cu.inverse(),
            vtv_inv: cv.inverse(),
        })
    }

    pub fn point(&self) -> &FactoredPoint {
        self.x
    }

    pub fn shape(&self) -> ManifoldShape {
        self.x.shape()
    }

    pub fn inner(&self, xi: &TangentVector, eta: &TangentVector) -> f64 {
        metric(&self.utu, &self.vtv, xi, eta)
    }

    pub fn norm(&self, xi: &TangentVector) -> f64 {
        self.inner(xi, xi).max(0.0).sqrt()
    }

    /// The `r x r` multiplier `Lambda` for which `(eta_U + U Lambda, eta_V - V Lambda^T)`
    /// is horizontal.
    pub fn horizontal_multiplier(&self, eta: &TangentVector) -> Mat {
        let (u, v) = (&self.x.u, &self.x.v);
        let left = eta.v.tr_mul(v) * &self.vtv_inv;
        let right = &self.utu_inv * u.tr_mul(&eta.u);
        (left - right) * 0.5
    }

    pub fn project(&self, eta: &TangentVector) -> TangentVector {
        let lambda = self.horizontal_multiplier(eta);
        TangentVector {
            u: &eta.u + &self.x.u * &lambda,
            v: &eta.v - &self.x.v * lambda.transpose(),
        }
    }

    /// Vertical vector `(-U Lambda, V Lambda^T)`.
    pub fn vertical(&self, lambda: &Mat) -> TangentVector {
        TangentVector {
            u: -(&self.x.u * lambda),
            v: &self.x.v * lambda.transpose(),
        }
    }

    /// Frobenius norm of `U^T Z_U V^T V - U^T U Z_V^T V`.
    pub fn horizontal_defect(&self, eta: &TangentVector) -> f64 {
        let (u, v) = (&self.x.u, &self.x.v);
        let lhs = u.tr_mul(&eta.u) * &self.vtv;
        let rhs = &self.utu * eta.v.tr_mul(v);
        (lhs - rhs).norm()
    }

    pub fn gradient(&self, egrad: &TangentVector) -> TangentVector {
        TangentVector {
            u: &egrad.u * &self.vtv_inv,
            v: &egrad.v * &self.utu_inv,
        }
    }

    /// Correction `(A_U, A_V)` of the total-space Levi-Civita connection
    /// `nabla_xi eta = D eta[xi] + A(xi, eta)`.
    pub fn connection_correction(&self, xi: &TangentVector, eta: &TangentVector) -> TangentVector {
        let (u, v) = (&self.x.u, &self.x.v);
        let a_u = (&eta.u * sym(&xi.v.tr_mul(v)) + &xi.u * sym(&eta.v.tr_mul(v))
            - u * sym(&eta.v.tr_mul(&xi.v)))
            * &self.vtv_inv;
        let a_v = (&eta.v * sym(&xi.u.tr_mul(u)) + &xi.v * sym(&eta.u.tr_mul(u))
            - v * sym(&eta.u.tr_mul(&xi.u)))
            * &self.utu_inv;
        TangentVector { u: a_u, v: a_v }
    }

    /// Horizontal lift of the Riemannian Hessian applied to `xi`.
    ///
    /// `ehess` must be the directional derivative of `egrad` along `xi`.
    pub fn hessian(
        &self,
        egrad: &TangentVector,
        ehess: &TangentVector,
        xi: &TangentVector,
    ) -> TangentVector {
        let (u, v) = (&self.x.u, &self.x.v);
        let rgrad = self.gradient(egrad);

        // D (V^T V)^{-1}[xi] = -(V^T V)^{-1} (xi_V^T V + V^T xi_V) (V^T V)^{-1}
        let d_vtv = sym(&v.tr_mul(&xi.v)) * 2.0;
        let d_utu = sym(&u.tr_mul(&xi.u)) * 2.0;
        let d_grad_u = &ehess.u * &self.vtv_inv - &rgrad.u * d_vtv * &self.vtv_inv;
        let d_grad_v = &ehess.v * &self.utu_inv - &rgrad.v * d_utu * &self.utu_inv;

        let mut nabla = TangentVector {
            u: d_grad_u,
            v: d_grad_v,
        };
        let corr = self.connection_correction(xi, &rgrad);
        nabla.axpy(1.0, &corr);
        self.project(&nabla)
    }
}

fn metric(utu: &Mat, vtv: &Mat, xi: &TangentVector, eta: &TangentVector) -> f64 {
    // Tr(A B^T C) with A symmetric equals <B A, C>_F.
    (&xi.u * vtv).dot(&eta.u) + (&xi.v * utu).dot(&eta.v)
}

/// Metric `Tr((V^T V) xi_U^T eta_U) + Tr((U^T U) xi_V^T eta_V)`.
pub fn inner(x: &FactoredPoint, xi: &TangentVector, eta: &TangentVector) -> Result<f64> {
    check_tangent(x, xi)?;
    check_tangent(x, eta)?;
    let utu = x.u.tr_mul(&x.u);
    let vtv = x.v.tr_mul(&x.v);
    Ok(metric(&utu, &vtv, xi, eta))
}

pub fn project_horizontal(x: &FactoredPoint, eta: &TangentVector) -> Result<TangentVector> {
    check_tangent(x, eta)?;
    Ok(LocalGeometry::new(x)?.project(eta))
}

/// Converts Euclidean partials `(df/dU, df/dV)` into the Riemannian gradient.
pub fn riemannian_gradient(x: &FactoredPoint, egrad: &TangentVector) -> Result<TangentVector> {
    check_tangent(x, egrad)?;
    Ok(LocalGeometry::new(x)?.gradient(egrad))
}

pub fn riemannian_hessian(
    x: &FactoredPoint,
    egrad: &TangentVector,
    ehess: &TangentVector,
    xi: &TangentVector,
) -> Result<TangentVector> {
    check_tangent(x, egrad)?;
    check_tangent(x, ehess)?;
    check_tangent(x, xi)?;
    Ok(LocalGeometry::new(x)?.hessian(egrad, ehess, xi))
}

/// Result of moving along a tangent vector.
#[derive(Debug, Clone)]
pub struct Retracted {
    pub point: FactoredPoint,
    /// Set when the new factors are near rank-deficient.
    pub ill_conditioned: bool,
}

/// `(U + xi_U, V + xi_V)`.
pub fn retract(x: &FactoredPoint, xi: &TangentVector) -> Result<Retracted> {
    check_tangent(x, xi)?;
    let point = FactoredPoint {
        u: &x.u + &xi.u,
        v: &x.v + &xi.v,
    };
    let ill_conditioned = point.is_ill_conditioned();
    Ok(Retracted {
        point,
        ill_conditioned,
    })
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Point with i.i.d. standard normal factor entries.
pub fn random_point(shape: ManifoldShape, seed: u64) -> FactoredPoint {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let u = normal_matrix(&mut rng, shape.k, shape.r);
        let v = normal_matrix(&mut rng, shape.k, shape.r);
        if let Ok(p) = FactoredPoint::new(u, v) {
            return p;
        }
    }
}

/// Unit-norm horizontal vector drawn from a projected normal ambient pair.
pub fn random_tangent(x: &FactoredPoint, seed: u64) -> Result<TangentVector> {
    let geom = LocalGeometry::new(x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (k, r) = x.u.shape();
    loop {
        let eta = TangentVector {
            u: normal_matrix(&mut rng, k, r),
            v: normal_matrix(&mut rng, k, r),
        };
        let h = geom.project(&eta);
        let n = geom.norm(&h);
        if n > 0.0 {
            return Ok(h.scaled(1.0 / n));
        }
    }
}
