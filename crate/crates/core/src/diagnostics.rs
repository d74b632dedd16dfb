//! Numerical self-checks for cost functions and the quotient geometry.
//!
//! These back the `check` subcommand. Every check works from cost values only
//! (finite differences along retraction curves), so a wrong derivative formula
//! shows up as a large relative error or a wrong Taylor slope.

use serde::Serialize;

use crate::error::Result;
use crate::manifold::{random_point, random_tangent, retract, FactoredPoint, LocalGeometry, ManifoldShape, Mat, TangentVector};
use crate::objectives::{CompletionCost, NetworkTopology, ObservationMask, SmoothedL1Params, SparsityCost};
use crate::seeding;
use crate::trust_region::CostProblem;

fn curve_cost<P: CostProblem + ?Sized>(p: &P, x: &FactoredPoint, step: &TangentVector) -> Result<f64> {
    Ok(p.cost(&retract(x, step)?.point))
}

/// Relative error between `<grad, xi>` and a central difference of the cost
/// along the retraction.
pub fn gradient_error<P: CostProblem + ?Sized>(p: &P, x: &FactoredPoint, xi: &TangentVector, t: f64) -> Result<f64> {
    let geom = LocalGeometry::new(x)?;
    let grad = geom.gradient(&p.euclidean_gradient(x));
    let analytic = geom.inner(&grad, xi);
    let fd = (curve_cost(p, x, &xi.scaled(t))? - curve_cost(p, x, &xi.scaled(-t))?) / (2.0 * t);
    Ok((analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-12))
}

/// Relative asymmetry `|<H xi, eta> - <xi, H eta>|`.
pub fn hessian_asymmetry<P: CostProblem + ?Sized>(
    p: &P,
    x: &FactoredPoint,
    xi: &TangentVector,
    eta: &TangentVector,
) -> Result<f64> {
    let geom = LocalGeometry::new(x)?;
    let egrad = p.euclidean_gradient(x);
    let h_xi = geom.hessian(&egrad, &p.euclidean_hessian_vec(x, xi), xi);
    let h_eta = geom.hessian(&egrad, &p.euclidean_hessian_vec(x, eta), eta);
    let a = geom.inner(&h_xi, eta);
    let b = geom.inner(xi, &h_eta);
    let scale = geom.norm(&h_xi) * geom.norm(eta) + geom.norm(xi) * geom.norm(&h_eta);
    Ok((a - b).abs() / scale.max(1e-300))
}

/// Signed second-order Taylor errors `f(c(t)) - f - t<g,xi> - t^2/2 <H xi, xi>`
/// along `c(t) = x + t xi - t^2/2 A(xi, xi)`, a curve with zero covariant
/// acceleration at `t = 0`.
pub fn taylor_errors<P: CostProblem + ?Sized>(
    p: &P,
    x: &FactoredPoint,
    xi: &TangentVector,
    ts: &[f64],
) -> Result<Vec<f64>> {
    let geom = LocalGeometry::new(x)?;
    let f0 = p.cost(x);
    let egrad = p.euclidean_gradient(x);
    let grad = geom.gradient(&egrad);
    let hxi = geom.hessian(&egrad, &p.euclidean_hessian_vec(x, xi), xi);
    let slope = geom.inner(&grad, xi);
    let curv = geom.inner(&hxi, xi);
    let accel = geom.connection_correction(xi, xi);
    ts.iter()
        .map(|&t| {
            let mut step = xi.scaled(t);
            step.axpy(-0.5 * t * t, &accel);
            let ft = curve_cost(p, x, &step)?;
            Ok(ft - f0 - t * slope - 0.5 * t * t * curv)
        })
        .collect()
}

/// Absolute values of [`taylor_errors`].
pub fn taylor_residuals<P: CostProblem + ?Sized>(
    p: &P,
    x: &FactoredPoint,
    xi: &TangentVector,
    ts: &[f64],
) -> Result<Vec<f64>> {
    Ok(taylor_errors(p, x, xi, ts)?.into_iter().map(f64::abs).collect())
}

/// Decay order of the Taylor error `e(t)`.
///
/// `e` is split into its odd part `(e(t) - e(-t))/2` and even part
/// `(e(t) + e(-t))/2`; `e = O(t^3)` exactly when both parts are. The odd part
/// carries no `t^4` term, so its fitted slope is free of the leading
/// higher-order contamination. Each part is fitted only over steps clearing
/// the roundoff floor `100 eps max(|f(x)|, 1)`. An even part that sits under
/// the floor at three or more steps is treated as negligible. Returns the
/// smaller of the two slopes, or `NaN` when the odd part has fewer than three
/// usable steps.
pub fn taylor_slope<P: CostProblem + ?Sized>(
    p: &P,
    x: &FactoredPoint,
    xi: &TangentVector,
    ts: &[f64],
) -> Result<f64> {
    let plus = taylor_errors(p, x, xi, ts)?;
    let neg: Vec<f64> = ts.iter().map(|t| -t).collect();
    let minus = taylor_errors(p, x, xi, &neg)?;
    let floor = 100.0 * f64::EPSILON * p.cost(x).abs().max(1.0);
    let fit = |part: Vec<f64>| -> Option<f64> {
        let (t_ok, r_ok): (Vec<f64>, Vec<f64>) = ts
            .iter()
            .zip(&part)
            .filter(|(_, &r)| r > floor)
            .map(|(&t, &r)| (t, r))
            .unzip();
        (t_ok.len() >= 3).then(|| loglog_slope(&t_ok, &r_ok))
    };
    let odd = plus.iter().zip(&minus).map(|(a, b)| (0.5 * (a - b)).abs()).collect::<Vec<_>>();
    let even = plus.iter().zip(&minus).map(|(a, b)| (0.5 * (a + b)).abs()).collect::<Vec<_>>();
    let even_small = even.iter().filter(|&&e| e <= floor).count() >= 3;
    let Some(odd_slope) = fit(odd) else {
        return Ok(f64::NAN);
    };
    Ok(match fit(even) {
        Some(s) if !even_small => odd_slope.min(s),
        _ => odd_slope,
    })
}

/// Least-squares slope of `log(res)` against `log(t)`.
pub fn loglog_slope(ts: &[f64], res: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = ts
        .iter()
        .zip(res)
        .filter(|(_, &r)| r > 0.0)
        .map(|(&t, &r)| (t.ln(), r.ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// `|g_y(xi_y, eta_y) - g_x(xi, eta)|` relative, with `y = (U M^{-1}, V M^T)`.
pub fn metric_invariance_error(x: &FactoredPoint, m: &Mat, xi: &TangentVector, eta: &TangentVector) -> Result<f64> {
    let y = x.transform(m)?;
    let m_inv = m.clone().try_inverse().expect("checked by transform");
    let lift = |t: &TangentVector| TangentVector {
        u: &t.u * &m_inv,
        v: &t.v * m.transpose(),
    };
    let gx = LocalGeometry::new(x)?.inner(xi, eta);
    let gy = LocalGeometry::new(&y)?.inner(&lift(xi), &lift(eta));
    Ok((gx - gy).abs() / gx.abs().max(1e-300))
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub cases: usize,
    pub worst: f64,
    pub threshold: f64,
    /// `true` when a larger value is better (slopes).
    pub higher_is_better: bool,
    pub passed: bool,
}

impl CheckOutcome {
    fn new(name: &str, values: &[f64], threshold: f64, higher_is_better: bool) -> Self {
        let worst = if higher_is_better {
            // NaN (no usable data) counts as a failure.
            values.iter().cloned().fold(f64::INFINITY, |a, b| if b.is_nan() { f64::NEG_INFINITY } else { a.min(b) })
        } else {
            values.iter().cloned().fold(0.0, |a, b| if b.is_nan() { f64::INFINITY } else { a.max(b) })
        };
        let passed = if higher_is_better {
            worst >= threshold
        } else {
            worst <= threshold
        };
        Self {
            name: name.to_string(),
            cases: values.len(),
            worst,
            threshold,
            higher_is_better,
            passed,
        }
    }
}

/// Step sizes used for the Taylor decay fit.
pub const TAYLOR_STEPS: [f64; 7] = [1e-2, 5e-3, 2e-3, 1e-3, 5e-4, 2e-4, 1e-4];

/// Seeded `(K, r)` configurations spanning `K <= 32`, `r <= 6`.
pub fn standard_shapes() -> Vec<ManifoldShape> {
    let pairs = [
        (2, 1), (3, 1), (3, 2), (4, 2), (5, 3), (6, 2), (6, 4), (8, 1), (8, 3), (8, 4),
        (10, 5), (12, 2), (12, 6), (16, 3), (16, 6), (20, 4), (24, 2), (24, 5), (32, 3), (32, 6),
    ];
    pairs
        .iter()
        .map(|&(k, r)| ManifoldShape::new(k, r).expect("valid shape"))
        .collect()
}

pub fn random_problems(shape: ManifoldShape, seed: u64) -> Result<(SparsityCost, CompletionCost)> {
    use rand::seq::IteratorRandom;
    use rand::SeedableRng;
    let k = shape.k();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let pairs = (0..k).flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)));
    let n_links = k * (k - 1) / 2;
    let topo = NetworkTopology::new(k, pairs.choose_multiple(&mut rng, n_links))?;
    let mask_entries = (0..k)
        .flat_map(|i| (0..k).map(move |j| (i, j)))
        .choose_multiple(&mut rng, (k * k).div_ceil(2).max(1));
    let sparsity = SparsityCost::new(topo, SmoothedL1Params::new(0.5, 0.1, 0.05)?, shape.r())?;
    let completion = CompletionCost::new(ObservationMask::new(k, mask_entries)?, shape.r())?;
    Ok((sparsity, completion))
}

/// Geometry and derivative checks over [`standard_shapes`].
pub fn run_suite(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut invariance = Vec::new();
    let mut horizontal = Vec::new();
    let mut idempotence = Vec::new();
    let mut grad_err = Vec::new();
    let mut asym = Vec::new();
    let mut slopes = Vec::new();

    for (idx, shape) in standard_shapes().into_iter().enumerate() {
        let s = seeding::derive(seed, idx as u64);
        let x = random_point(shape, s);
        let geom = LocalGeometry::new(&x)?;
        let xi = random_tangent(&x, seeding::derive(s, 1))?;
        let eta = random_tangent(&x, seeding::derive(s, 2))?;

        let m = random_point(ManifoldShape::new(shape.r(), shape.r())?, seeding::derive(s, 3))
            .u()
            .clone();
        invariance.push(metric_invariance_error(&x, &m, &xi, &eta)?);

        let ambient = TangentVector {
            u: random_point(shape, seeding::derive(s, 4)).u().clone(),
            v: random_point(shape, seeding::derive(s, 5)).v().clone(),
        };
        let p = geom.project(&ambient);
        let scale = 1.0 + ambient.u.norm() + ambient.v.norm();
        horizontal.push(geom.horizontal_defect(&p) / scale);
        let pp = geom.project(&p);
        idempotence.push((&pp - &p).u.norm().max((&pp - &p).v.norm()) / scale);

        let (sparsity, completion) = random_problems(shape, seeding::derive(s, 6))?;
        let problems: [&dyn CostProblem; 2] = [&sparsity, &completion];
        // Taylor direction with the same Frobenius size as the point, so the
        // step range is relative to the point's scale.
        let xi_big = xi.scaled(0.25 * x.factor_norm() / xi.euclidean_dot(&xi).sqrt());
        for prob in problems {
            grad_err.push(gradient_error(prob, &x, &xi, 1e-6)?);
            asym.push(hessian_asymmetry(prob, &x, &xi, &eta)?);
            slopes.push(taylor_slope(prob, &x, &xi_big, &TAYLOR_STEPS)?);
        }
    }

    Ok(vec![
        CheckOutcome::new("metric GL(r) invariance", &invariance, 1e-10, false),
        CheckOutcome::new("horizontal membership after projection", &horizontal, 1e-10, false),
        CheckOutcome::new("projection idempotence", &idempotence, 1e-12, false),
        CheckOutcome::new("gradient vs central difference", &grad_err, 1e-5, false),
        CheckOutcome::new("Hessian self-adjointness", &asym, 1e-8, false),
        CheckOutcome::new("second-order Taylor slope", &slopes, 2.9, true),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        let out = run_suite(2024).unwrap();
        for o in &out {
            println!("{:45} worst {:.3e} (threshold {:.1e}) {}", o.name, o.worst, o.threshold, o.passed);
        }
        assert!(out.iter().all(|o| o.passed));
    }
}
