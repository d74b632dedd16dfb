//! Riemannian trust-region minimization on the fixed-rank quotient.
//!
//! Each outer iteration approximately minimizes the quadratic model
//! `<grad, xi> + 1/2 <Hess[xi], xi>` over horizontal `xi` with
//! `<xi, xi> <= delta^2` by truncated conjugate gradients (Steihaug-Toint),
//! then accepts or rejects the retracted candidate from the ratio of actual to
//! predicted decrease.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{retract, FactoredPoint, CONDITION_WARNING, LocalGeometry, ManifoldShape, TangentVector};

/// Smooth cost over `K x r` factor pairs with Euclidean derivatives.
pub trait CostProblem {
    fn shape(&self) -> ManifoldShape;

    fn cost(&self, x: &FactoredPoint) -> f64;

    /// `(df/dU, df/dV)`.
    fn euclidean_gradient(&self, x: &FactoredPoint) -> TangentVector;

    /// Directional derivative of [`Self::euclidean_gradient`] along `xi`.
    fn euclidean_hessian_vec(&self, x: &FactoredPoint, xi: &TangentVector) -> TangentVector;
}

impl<T: CostProblem + ?Sized> CostProblem for &T {
    fn shape(&self) -> ManifoldShape {
        (**self).shape()
    }
    fn cost(&self, x: &FactoredPoint) -> f64 {
        (**self).cost(x)
    }
    fn euclidean_gradient(&self, x: &FactoredPoint) -> TangentVector {
        (**self).euclidean_gradient(x)
    }
    fn euclidean_hessian_vec(&self, x: &FactoredPoint, xi: &TangentVector) -> TangentVector {
        (**self).euclidean_hessian_vec(x, xi)
    }
}

/// Radius below which the solver gives up.
pub const RADIUS_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrustRegionConfig {
    /// Initial radius. `None` uses `sqrt(K r) / 8`.
    pub delta0: Option<f64>,
    /// Radius cap. `None` uses `16 * delta0`.
    pub delta_max: Option<f64>,
    /// Minimum actual/predicted ratio for accepting a step.
    pub accept_threshold: f64,
    pub grad_tol: f64,
    pub max_outer_iters: usize,
    /// `None` uses the manifold dimension `2 K r - r^2`.
    pub max_inner_iters: Option<usize>,
    pub inner_kappa: f64,
    pub inner_theta: f64,
}

impl Default for TrustRegionConfig {
    fn default() -> Self {
        Self {
            delta0: None,
            delta_max: None,
            accept_threshold: 0.1,
            grad_tol: 1e-6,
            max_outer_iters: 500,
            max_inner_iters: None,
            inner_kappa: 0.1,
            inner_theta: 1.0,
        }
    }
}

impl TrustRegionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.accept_threshold > 0.0 && self.accept_threshold <= 0.25) {
            return bad("accept_threshold must lie in (0, 0.25]");
        }
        if !(self.grad_tol > 0.0) {
            return bad("grad_tol must be positive");
        }
        if let Some(d0) = self.delta0 {
            if !(d0 > 0.0) {
                return bad("delta0 must be positive");
            }
            if let Some(dm) = self.delta_max {
                if d0 > dm {
                    return bad("delta0 must not exceed delta_max");
                }
            }
        }
        if !(self.inner_kappa > 0.0 && self.inner_theta >= 0.0) {
            return bad("inner_kappa must be positive and inner_theta non-negative");
        }
        Ok(())
    }

    /// `(delta0, delta_max)` resolved for a shape.
    pub fn radii(&self, shape: ManifoldShape) -> (f64, f64) {
        let d0 = self
            .delta0
            .unwrap_or_else(|| ((shape.k() * shape.r()) as f64).sqrt() / 8.0);
        let dm = self.delta_max.unwrap_or(16.0 * d0).max(d0);
        (d0, dm)
    }

    pub fn inner_limit(&self, shape: ManifoldShape) -> usize {
        self.max_inner_iters
            .unwrap_or(2 * shape.k() * shape.r() - shape.r() * shape.r())
            .max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradTol,
    MaxIters,
    RadiusCollapse,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub final_point: FactoredPoint,
    pub final_cost: f64,
    pub final_grad_norm: f64,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub converged: bool,
    pub termination: Termination,
    /// Actual/predicted decrease ratio of every accepted step.
    pub accepted_ratios: Vec<f64>,
    /// Cost after each accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
    /// Set when an accepted iterate had near rank-deficient factors.
    pub ill_conditioned: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerStop {
    ZeroGradient,
    NegativeCurvature,
    Boundary,
    Residual,
    MaxIters,
}

#[derive(Debug, Clone)]
pub struct SubproblemSolution {
    pub step: TangentVector,
    /// `-(<grad, step> + 1/2 <Hess[step], step>)`.
    pub predicted_decrease: f64,
    pub boundary_hit: bool,
    pub inner_iters: usize,
    pub stop: InnerStop,
}

/// Truncated CG on the trust-region model, started from the zero step.
pub fn solve_subproblem<H>(
    geom: &LocalGeometry<'_>,
    grad: &TangentVector,
    mut hess: H,
    delta: f64,
    cfg: &TrustRegionConfig,
) -> SubproblemSolution
where
    H: FnMut(&TangentVector) -> TangentVector,
{
    let mut eta = TangentVector::zeros_like(grad);
    let mut h_eta = TangentVector::zeros_like(grad);
    let finish = |eta: TangentVector, h_eta: &TangentVector, hit, iters, stop| {
        let model = geom.inner(&eta, grad) + 0.5 * geom.inner(&eta, h_eta);
        SubproblemSolution {
            predicted_decrease: (-model).max(0.0),
            step: eta,
            boundary_hit: hit,
            inner_iters: iters,
            stop,
        }
    };

    let mut res = grad.clone();
    let mut r_r = geom.inner(&res, &res);
    let r0 = r_r.max(0.0).sqrt();
    if !(r0 > 0.0) || !(delta > 0.0) {
        return finish(eta, &h_eta, false, 0, InnerStop::ZeroGradient);
    }
    let target = r0 * r0.powf(cfg.inner_theta).min(cfg.inner_kappa);
    let max_inner = cfg.inner_limit(geom.shape());

    let mut dir = -&res;
    let delta2 = delta * delta;

    for j in 0..max_inner {
        // Norms are taken directly rather than by the usual CG recurrences,
        // which drift when the operator is not exactly self-adjoint.
        let e_e = geom.inner(&eta, &eta);
        let e_d = geom.inner(&eta, &dir);
        let d_d = geom.inner(&dir, &dir);
        let h_dir = hess(&dir);
        let d_h_d = geom.inner(&dir, &h_dir);
        let alpha = r_r / d_h_d;
        let e_e_new = e_e + 2.0 * alpha * e_d + alpha * alpha * d_d;

        if d_h_d <= 0.0 || e_e_new >= delta2 || !alpha.is_finite() {
            let tau = (-e_d + (e_d * e_d + d_d * (delta2 - e_e)).max(0.0).sqrt()) / d_d;
            eta.axpy(tau, &dir);
            h_eta.axpy(tau, &h_dir);
            let stop = if d_h_d <= 0.0 {
                InnerStop::NegativeCurvature
            } else {
                InnerStop::Boundary
            };
            return finish(eta, &h_eta, true, j + 1, stop);
        }

        eta.axpy(alpha, &dir);
        h_eta.axpy(alpha, &h_dir);
        res.axpy(alpha, &h_dir);
        res = geom.project(&res);

        let r_r_new = geom.inner(&res, &res);
        if r_r_new.max(0.0).sqrt() <= target {
            return finish(eta, &h_eta, false, j + 1, InnerStop::Residual);
        }
        let beta = r_r_new / r_r;
        r_r = r_r_new;
        dir = &dir.scaled(beta) - &res;
    }
    finish(eta, &h_eta, false, max_inner, InnerStop::MaxIters)
}

fn numerical_failure(reason: impl Into<String>, last: &FactoredPoint) -> Error {
    Error::NumericalFailure {
        reason: reason.into(),
        last_good: Box::new(last.clone()),
    }
}

/// Minimizes `problem` from `x0`.
pub fn minimize<P: CostProblem + ?Sized>(
    problem: &P,
    x0: FactoredPoint,
    cfg: &TrustRegionConfig,
) -> Result<SolveReport> {
    cfg.validate()?;
    let shape = problem.shape();
    if x0.shape() != shape {
        return Err(Error::Dimension(format!(
            "start point {:?} does not match problem {:?}",
            x0.shape(),
            shape
        )));
    }
    let (mut delta, delta_max) = cfg.radii(shape);

    let mut x = x0;
    let mut fx = problem.cost(&x);
    let mut egrad = problem.euclidean_gradient(&x);
    if !fx.is_finite() || !egrad.is_finite() {
        return Err(numerical_failure("non-finite cost or gradient at start", &x));
    }
    let (mut rgrad, mut gnorm) = {
        let geom = LocalGeometry::new(&x)?;
        let g = geom.gradient(&egrad);
        let n = geom.norm(&g);
        (g, n)
    };

    let mut outer = 0;
    let mut inner_total = 0;
    let mut accepted_ratios = Vec::new();
    let mut cost_history = vec![fx];
    let mut ill_conditioned = x.is_ill_conditioned();
    let termination;

    loop {
        if gnorm <= cfg.grad_tol {
            termination = Termination::GradTol;
            break;
        }
        if outer >= cfg.max_outer_iters {
            termination = Termination::MaxIters;
            break;
        }
        outer += 1;

        let geom = LocalGeometry::new(&x)?;
        let sub = solve_subproblem(
            &geom,
            &rgrad,
            |xi| geom.hessian(&egrad, &problem.euclidean_hessian_vec(&x, xi), xi),
            delta,
            cfg,
        );
        inner_total += sub.inner_iters;
        if !sub.step.is_finite() {
            return Err(numerical_failure("non-finite trust-region step", &x));
        }

        let moved = retract(&x, &sub.step)?;
        let candidate = moved.point;
        let usable = LocalGeometry::new(&candidate).is_ok();
        let (ratio, f_new) = if usable {
            let f_new = problem.cost(&candidate);
            if !f_new.is_finite() {
                return Err(numerical_failure("non-finite cost at trial point", &x));
            }
            // Guards the ratio against cancellation once decreases reach roundoff.
            let reg = fx.abs().max(1.0) * f64::EPSILON * 1e3;
            ((fx - f_new + reg) / (sub.predicted_decrease + reg), f_new)
        } else {
            (f64::NEG_INFINITY, f64::INFINITY)
        };

        let accept = ratio >= cfg.accept_threshold && f_new < fx;
        if !accept {
            delta *= 0.25;
        } else if ratio > 0.75 && sub.boundary_hit {
            delta = (2.0 * delta).min(delta_max);
        }

        if accept {
            let g_new = problem.euclidean_gradient(&candidate);
            if !g_new.is_finite() {
                return Err(numerical_failure("non-finite gradient at trial point", &x));
            }
            drop(geom);
            x = candidate;
            fx = f_new;
            egrad = g_new;
            let geom = LocalGeometry::new(&x)?;
            rgrad = geom.gradient(&egrad);
            gnorm = geom.norm(&rgrad);
            accepted_ratios.push(ratio);
            cost_history.push(fx);
            if moved.ill_conditioned && !ill_conditioned {
                log::warn!("iterate {outer}: factor conditioning above {CONDITION_WARNING:.0e}");
            }
            ill_conditioned |= moved.ill_conditioned;
        }

        if delta < RADIUS_FLOOR {
            termination = Termination::RadiusCollapse;
            break;
        }
    }

    Ok(SolveReport {
        final_point: x,
        final_cost: fx,
        final_grad_norm: gnorm,
        outer_iters: outer,
        inner_iters: inner_total,
        converged: termination == Termination::GradTol,
        termination,
        accepted_ratios,
        cost_history,
        ill_conditioned,
    })
}
