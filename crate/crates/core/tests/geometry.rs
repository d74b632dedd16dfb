mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use tim_core::diagnostics::{random_problems, taylor_slope, TAYLOR_STEPS};
use tim_core::manifold::{
    inner, project_horizontal, random_point, random_tangent, retract, riemannian_gradient, riemannian_hessian, Mat,
};
use tim_core::objectives::{CompletionCost, ObservationMask};
use tim_core::{CostProblem, FactoredPoint, LocalGeometry, ManifoldShape, TangentVector};

fn naive_trace_metric(x: &FactoredPoint, xi: &TangentVector, eta: &TangentVector) -> f64 {
    let (u, v) = (x.u(), x.v());
    let (k, r) = (u.nrows(), u.ncols());
    let mut total = 0.0;
    // Tr(G A^T B) = sum_{a,b,i} G_ab A_ib B_ia
    for a in 0..r {
        for b in 0..r {
            let (mut vtv, mut utu) = (0.0, 0.0);
            for i in 0..k {
                vtv += v[(i, a)] * v[(i, b)];
                utu += u[(i, a)] * u[(i, b)];
            }
            for i in 0..k {
                total += vtv * xi.u[(i, b)] * eta.u[(i, a)];
                total += utu * xi.v[(i, b)] * eta.v[(i, a)];
            }
        }
    }
    total
}

#[test]
fn metric_small_example() {
    let x = FactoredPoint::new(DMatrix::from_column_slice(2, 1, &[1.0, 0.0]), DMatrix::from_column_slice(2, 1, &[1.0, 0.0]))
        .unwrap();
    let xi = TangentVector::new(DMatrix::from_column_slice(2, 1, &[1.0, 0.0]), DMatrix::zeros(2, 1)).unwrap();
    assert_eq!(inner(&x, &xi, &xi).unwrap(), 1.0);
    assert_eq!(inner(&x, &xi, &TangentVector::zeros_like(&xi)).unwrap(), 0.0);
}

#[test]
fn metric_matches_dense_trace() {
    for seed in 0..10 {
        let x = point(seed, 3, 2);
        let xi = ambient(seed + 100, 3, 2);
        let eta = ambient(seed + 200, 3, 2);
        let got = inner(&x, &xi, &eta).unwrap();
        assert!(rel(got, naive_trace_metric(&x, &xi, &eta)) < 1e-13);
    }
}

/// Residual of the defining horizontal-space equation at multiplier `lam`.
fn defining_residual(x: &FactoredPoint, eta: &TangentVector, lam: &Mat) -> Mat {
    let (u, v) = (x.u(), x.v());
    let zu = &eta.u + u * lam;
    let zv = &eta.v - v * lam.transpose();
    u.transpose() * zu * (v.transpose() * v) - (u.transpose() * u) * zv.transpose() * v
}

#[test]
fn multiplier_matches_kronecker_solve() {
    let (k, r) = (4, 2);
    for seed in 0..5 {
        let x = point(seed, k, r);
        let eta = ambient(seed + 7, k, r);
        let f0 = defining_residual(&x, &eta, &Mat::zeros(r, r));
        let mut l = DMatrix::zeros(r * r, r * r);
        for c in 0..r * r {
            let mut e = Mat::zeros(r, r);
            e[(c % r, c / r)] = 1.0;
            let col = defining_residual(&x, &eta, &e) - &f0;
            for row in 0..r * r {
                l[(row, c)] = col[(row % r, row / r)];
            }
        }
        let rhs = -DVector::from_column_slice(f0.as_slice());
        let sol = l.lu().solve(&rhs).expect("nonsingular");
        let brute = Mat::from_column_slice(r, r, sol.as_slice());
        let lam = LocalGeometry::new(&x).unwrap().horizontal_multiplier(&eta);
        assert!((&lam - &brute).norm() <= 1e-10 * (1.0 + brute.norm()), "{lam} vs {brute}");
    }
}

#[test]
fn retraction_of_zero_is_identity() {
    let x = point(3, 5, 2);
    let y = retract(&x, &TangentVector::zeros(x.shape())).unwrap();
    assert_eq!(y.point.u(), x.u());
    assert_eq!(y.point.v(), x.v());
    assert!(!y.ill_conditioned);
}

#[test]
fn hessian_of_zero_direction_is_zero() {
    let shape = ManifoldShape::new(6, 2).unwrap();
    let (sp, _) = random_problems(shape, 4).unwrap();
    let x = random_point(shape, 5);
    let zero = TangentVector::zeros(shape);
    let h = riemannian_hessian(&x, &sp.euclidean_gradient(&x), &sp.euclidean_hessian_vec(&x, &zero), &zero).unwrap();
    assert!(h.is_zero());
}

fn shapes() -> impl Strategy<Value = (usize, usize, u64)> {
    (2usize..12).prop_flat_map(|k| (Just(k), 1..=k.min(5), any::<u64>()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_properties((k, r, seed) in shapes()) {
        let x = point(seed, k, r);
        let geom = LocalGeometry::new(&x).unwrap();
        let eta = ambient(seed ^ 1, k, r);
        let scale = 1.0 + eta.u.norm() + eta.v.norm();
        let p = project_horizontal(&x, &eta).unwrap();
        prop_assert!(geom.horizontal_defect(&p) <= 1e-10 * scale * scale);
        let pp = geom.project(&p);
        prop_assert!(tangent_rel(&pp, &p) <= 1e-10);

        let mut g = rng(seed ^ 2);
        let lam = uniform_mat(&mut g, r, r);
        let vert = geom.vertical(&lam);
        let orth = geom.inner(&p, &vert).abs();
        prop_assert!(orth <= 1e-10 * (1.0 + geom.norm(&p) * geom.norm(&vert)));
        let pv = geom.project(&vert);
        prop_assert!(geom.norm(&pv) <= 1e-10 * (1.0 + geom.norm(&vert)));
    }

    #[test]
    fn metric_is_invariant_under_gl_r((k, r, seed) in shapes()) {
        let x = point(seed, k, r);
        let mut g = rng(seed ^ 3);
        let m = uniform_mat(&mut g, r, r) + Mat::identity(r, r) * 2.0;
        let xi = project_horizontal(&x, &ambient(seed ^ 4, k, r)).unwrap();
        let eta = project_horizontal(&x, &ambient(seed ^ 5, k, r)).unwrap();
        let y = x.transform(&m).unwrap();
        let m_inv = m.clone().try_inverse().unwrap();
        let lift = |t: &TangentVector| TangentVector { u: &t.u * &m_inv, v: &t.v * m.transpose() };
        let a = inner(&x, &xi, &eta).unwrap();
        let b = inner(&y, &lift(&xi), &lift(&eta)).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
    }

    #[test]
    fn costs_depend_only_on_the_product((k, r, seed) in shapes()) {
        let shape = ManifoldShape::new(k, r).unwrap();
        let (sp, co) = random_problems(shape, seed).unwrap();
        let x = point(seed, k, r);
        let mut g = rng(seed ^ 6);
        let m = uniform_mat(&mut g, r, r) + Mat::identity(r, r) * 2.0;
        let y = x.transform(&m).unwrap();
        for p in [&sp as &dyn CostProblem, &co] {
            let (a, b) = (p.cost(&x), p.cost(&y));
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()) * (1.0 + m.norm()));
        }
    }

    #[test]
    fn gradient_represents_the_differential((k, r, seed) in shapes()) {
        let shape = ManifoldShape::new(k, r).unwrap();
        let (sp, co) = random_problems(shape, seed).unwrap();
        let x = point(seed, k, r);
        let xi = project_horizontal(&x, &ambient(seed ^ 7, k, r)).unwrap();
        for p in [&sp as &dyn CostProblem, &co] {
            let egrad = p.euclidean_gradient(&x);
            let grad = riemannian_gradient(&x, &egrad).unwrap();
            let lhs = inner(&x, &grad, &xi).unwrap();
            let rhs = frob(&egrad.u, &xi.u) + frob(&egrad.v, &xi.v);
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
        }
    }
}

#[test]
fn gradient_matches_central_difference_at_20_points() {
    let t = 1e-6;
    for seed in 0..20u64 {
        let (k, r) = (3 + (seed as usize % 10), 1 + (seed as usize % 3));
        let shape = ManifoldShape::new(k, r).unwrap();
        let (sp, co) = random_problems(shape, seed).unwrap();
        let x = random_point(shape, seed + 1000);
        let xi = random_tangent(&x, seed + 2000).unwrap();
        for p in [&sp as &dyn CostProblem, &co] {
            let grad = riemannian_gradient(&x, &p.euclidean_gradient(&x)).unwrap();
            let analytic = inner(&x, &grad, &xi).unwrap();
            let fp = p.cost(&retract(&x, &xi.scaled(t)).unwrap().point);
            let fm = p.cost(&retract(&x, &xi.scaled(-t)).unwrap().point);
            let fd = (fp - fm) / (2.0 * t);
            assert!(rel(analytic, fd) <= 1e-5, "seed {seed}: {analytic} vs {fd}");
        }
    }
}

#[test]
fn hessian_is_self_adjoint() {
    for seed in 0..20u64 {
        let (k, r) = (2 + (seed as usize % 12), 1 + (seed as usize % 2));
        let shape = ManifoldShape::new(k, r).unwrap();
        let (sp, co) = random_problems(shape, seed).unwrap();
        let x = random_point(shape, seed + 1);
        let xi = random_tangent(&x, seed + 2).unwrap();
        let eta = random_tangent(&x, seed + 3).unwrap();
        for p in [&sp as &dyn CostProblem, &co] {
            let eg = p.euclidean_gradient(&x);
            let hxi = riemannian_hessian(&x, &eg, &p.euclidean_hessian_vec(&x, &xi), &xi).unwrap();
            let heta = riemannian_hessian(&x, &eg, &p.euclidean_hessian_vec(&x, &eta), &eta).unwrap();
            let a = inner(&x, &hxi, &eta).unwrap();
            let b = inner(&x, &xi, &heta).unwrap();
            assert!((a - b).abs() <= 1e-8 * (1.0 + a.abs().max(b.abs())), "seed {seed}: {a} vs {b}");
        }
    }
}

/// Log-log slope by least squares, coded separately from the library fit.
fn slope(ts: &[f64], ys: &[f64]) -> f64 {
    let n = ts.len() as f64;
    let lx: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    num / den
}

/// At a critical point the second-order term of the plain retraction drops
/// out, so the textbook Taylor test applies along `x + t xi` directly.
#[test]
fn taylor_decay_along_retraction_at_critical_points() {
    let ts = [1e-2, 5e-3, 2e-3, 1e-3, 5e-4];
    for seed in 0..20u64 {
        let (k, r) = (4 + (seed as usize % 9), 1 + (seed as usize % 3));
        let star = point(seed, k, r);
        let dense = star.u() * star.v().transpose();
        let mut g = rng(seed ^ 77);
        let entries: Vec<(usize, usize)> = (0..k)
            .flat_map(|i| (0..k).map(move |j| (i, j)))
            .filter(|_| rand::Rng::random_bool(&mut g, 0.7))
            .collect();
        let co = CompletionCost::with_targets(ObservationMask::new(k, entries).unwrap(), r, |i, j| dense[(i, j)]).unwrap();
        assert!(co.cost(&star) < 1e-24);
        let xi = random_tangent(&star, seed + 5).unwrap();
        let eg = co.euclidean_gradient(&star);
        let h = riemannian_hessian(&star, &eg, &co.euclidean_hessian_vec(&star, &xi), &xi).unwrap();
        let curv = inner(&star, &h, &xi).unwrap();
        let res: Vec<f64> = ts
            .iter()
            .map(|&t| {
                let ft = co.cost(&retract(&star, &xi.scaled(t)).unwrap().point);
                (ft - 0.5 * t * t * curv).abs()
            })
            .collect();
        let s = slope(&ts, &res);
        assert!(s >= 2.9, "seed {seed} (K={k}, r={r}): slope {s}, residuals {res:?}");
    }
}

#[test]
fn taylor_decay_at_generic_points() {
    for seed in 0..20u64 {
        let (k, r) = (3 + (seed as usize % 14), 1 + (seed as usize % 4));
        let shape = ManifoldShape::new(k, r).unwrap();
        let (sp, co) = random_problems(shape, seed).unwrap();
        let x = random_point(shape, seed + 9);
        let xi = random_tangent(&x, seed + 10).unwrap();
        let xi = xi.scaled(0.25 * x.factor_norm() / xi.euclidean_dot(&xi).sqrt());
        for p in [&sp as &dyn CostProblem, &co] {
            let s = taylor_slope(p, &x, &xi, &TAYLOR_STEPS).unwrap();
            assert!(s >= 2.9, "seed {seed}: slope {s}");
        }
    }
}

/// Completion cost whose Hessian-vector product is off by 10%.
struct SkewedHessian(CompletionCost);

impl CostProblem for SkewedHessian {
    fn shape(&self) -> ManifoldShape {
        self.0.shape()
    }
    fn cost(&self, x: &FactoredPoint) -> f64 {
        self.0.cost(x)
    }
    fn euclidean_gradient(&self, x: &FactoredPoint) -> TangentVector {
        self.0.euclidean_gradient(x)
    }
    fn euclidean_hessian_vec(&self, x: &FactoredPoint, xi: &TangentVector) -> TangentVector {
        self.0.euclidean_hessian_vec(x, xi).scaled(1.1)
    }
}

#[test]
fn taylor_check_detects_a_wrong_hessian() {
    let shape = ManifoldShape::new(8, 3).unwrap();
    let (_, co) = random_problems(shape, 1).unwrap();
    let x = random_point(shape, 2);
    let xi = random_tangent(&x, 3).unwrap();
    let xi = xi.scaled(0.25 * x.factor_norm() / xi.euclidean_dot(&xi).sqrt());
    let s = taylor_slope(&SkewedHessian(co), &x, &xi, &TAYLOR_STEPS).unwrap();
    assert!(s < 2.5, "slope {s}");
}
