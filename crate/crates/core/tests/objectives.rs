mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use tim_core::manifold::Mat;
use tim_core::objectives::{
    assemble_matrix, completion_cost, completion_egrad, completion_ehess_vec, extract_diag, sparsity_cost,
    sparsity_egrad, sparsity_ehess_vec,
};
use tim_core::{FactoredPoint, NetworkTopology, ObservationMask, SmoothedL1Params, TangentVector};

fn random_topology(seed: u64, k: usize, p: f64) -> NetworkTopology {
    let mut g = rng(seed);
    let links: Vec<_> = (0..k)
        .flat_map(|i| (0..k).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j)
        .filter(|_| g.random_bool(p))
        .collect();
    NetworkTopology::new(k, links).unwrap()
}

fn random_mask(seed: u64, n: usize) -> ObservationMask {
    let mut g = rng(seed);
    let entries: Vec<_> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|_| g.random_bool(0.5))
        .collect();
    ObservationMask::new(n, entries).unwrap()
}

fn naive_sparsity(x: &FactoredPoint, topo: &NetworkTopology, p: &SmoothedL1Params) -> f64 {
    let k = topo.k();
    let mut link_part = 0.0;
    let mut diag_part = 0.0;
    for i in 0..k {
        for j in 0..k {
            let xij = entry(x, i, j);
            if i == j {
                diag_part += p.lambda * xij * xij - (xij * xij + p.epsilon * p.epsilon).sqrt();
            } else if topo.links().contains(&(i, j)) {
                link_part += xij * xij;
            }
        }
    }
    0.5 * link_part + p.rho * diag_part
}

fn naive_completion(x: &FactoredPoint, mask: &ObservationMask) -> f64 {
    mask.entries()
        .iter()
        .map(|&(i, j)| {
            let target = if i == j { 1.0 } else { 0.0 };
            (entry(x, i, j) - target).powi(2)
        })
        .sum()
}

fn shifted(x: &FactoredPoint, xi: &TangentVector, t: f64) -> FactoredPoint {
    FactoredPoint::from_factors_unchecked(x.u() + &xi.u * t, x.v() + &xi.v * t).unwrap()
}

#[test]
fn sparsity_cost_at_zero_matrix() {
    let k = 5;
    let p = SmoothedL1Params::default();
    let x = FactoredPoint::from_factors_unchecked(Mat::zeros(k, 2), point(1, k, 2).v().clone()).unwrap();
    let c = sparsity_cost(&x, &random_topology(2, k, 0.5), &p).unwrap();
    assert!((c + p.rho * k as f64 * p.epsilon).abs() < 1e-15);
}

#[test]
fn sparsity_cost_matches_dense_loop() {
    let p = SmoothedL1Params::new(0.5, 0.3, 0.05).unwrap();
    for seed in 0..10 {
        let topo = random_topology(seed, 8, 0.6);
        let x = point(seed + 50, 8, 3);
        let c = sparsity_cost(&x, &topo, &p).unwrap();
        assert!(rel(c, naive_sparsity(&x, &topo, &p)) < 1e-12);
    }
}

#[test]
fn completion_cost_matches_dense_loop() {
    for seed in 0..10 {
        let mask = random_mask(seed, 7);
        let x = point(seed + 9, 7, 2);
        assert!(rel(completion_cost(&x, &mask).unwrap(), naive_completion(&x, &mask)) < 1e-12);
    }
}

#[test]
fn completion_cost_examples() {
    let single = ObservationMask::new(1, [(0, 0)]).unwrap();
    assert_eq!(completion_cost(&FactoredPoint::identity(1), &single).unwrap(), 0.0);
    let full = ObservationMask::full(4);
    assert_eq!(completion_cost(&FactoredPoint::identity(4), &full).unwrap(), 0.0);
    // Rank below 4 cannot reproduce I_4: the cost is at least the sum of the
    // discarded squared singular values, here 4 - r.
    for r in 1..4 {
        for seed in 0..20 {
            let c = completion_cost(&point(seed, 4, r), &full).unwrap();
            assert!(c >= (4 - r) as f64 - 1e-12);
        }
    }
}

/// Users split into `r` groups with links only across groups complete
/// exactly to `X = sum_g 1_g 1_g^T`.
#[test]
fn completion_cost_is_zero_at_exact_completions() {
    for seed in 0..10 {
        let (k, r) = (7, 1 + seed as usize % 3);
        let mut g = rng(seed);
        let group: Vec<usize> = (0..k).map(|_| g.random_range(0..r)).collect();
        let links: Vec<_> = (0..k)
            .flat_map(|i| (0..k).map(move |j| (i, j)))
            .filter(|&(i, j)| group[i] != group[j])
            .filter(|_| g.random_bool(0.7))
            .collect();
        let topo = NetworkTopology::new(k, links).unwrap();
        let u = Mat::from_fn(k, r, |i, c| if group[i] == c { 1.0 } else { 0.0 });
        let x = FactoredPoint::from_factors_unchecked(u.clone(), u).unwrap();
        let users: Vec<usize> = (0..k).collect();
        let mask = ObservationMask::for_users(&topo, &users).unwrap();
        assert_eq!(completion_cost(&x, &mask).unwrap(), 0.0);
    }
}

#[test]
fn sparsity_residual_vanishes_on_zero_diagonal() {
    // X = e1 e2^T has zero diagonal; with no links the gradient is zero.
    let mut u = Mat::zeros(3, 1);
    let mut v = Mat::zeros(3, 1);
    u[(0, 0)] = 1.0;
    v[(1, 0)] = 1.0;
    let x = FactoredPoint::new(u, v).unwrap();
    let g = sparsity_egrad(&x, &NetworkTopology::empty(3).unwrap(), &SmoothedL1Params::default()).unwrap();
    assert!(g.is_zero());
}

#[test]
fn euclidean_gradients_match_central_differences() {
    let t = 1e-6;
    let p = SmoothedL1Params::new(0.5, 0.2, 0.05).unwrap();
    for seed in 0..20 {
        let (k, r) = (3 + seed as usize % 8, 1 + seed as usize % 3);
        let topo = random_topology(seed, k, 0.5);
        let mask = random_mask(seed + 1, k);
        let x = point(seed + 2, k, r);
        let xi = ambient(seed + 3, k, r);

        let g = sparsity_egrad(&x, &topo, &p).unwrap();
        let analytic = frob(&g.u, &xi.u) + frob(&g.v, &xi.v);
        let fd = (sparsity_cost(&shifted(&x, &xi, t), &topo, &p).unwrap()
            - sparsity_cost(&shifted(&x, &xi, -t), &topo, &p).unwrap())
            / (2.0 * t);
        assert!(rel(analytic, fd) <= 1e-5, "sparsity seed {seed}");

        let g = completion_egrad(&x, &mask).unwrap();
        let analytic = frob(&g.u, &xi.u) + frob(&g.v, &xi.v);
        let fd = (completion_cost(&shifted(&x, &xi, t), &mask).unwrap()
            - completion_cost(&shifted(&x, &xi, -t), &mask).unwrap())
            / (2.0 * t);
        assert!(rel(analytic, fd) <= 1e-5, "completion seed {seed}");
    }
}

#[test]
fn hessian_vector_products_match_gradient_differences() {
    let t = 1e-6;
    let p = SmoothedL1Params::new(0.5, 0.2, 0.05).unwrap();
    for seed in 0..20 {
        let (k, r) = (3 + seed as usize % 8, 1 + seed as usize % 3);
        let topo = random_topology(seed, k, 0.5);
        let mask = random_mask(seed + 1, k);
        let x = point(seed + 2, k, r);
        let xi = ambient(seed + 3, k, r);
        let (xp, xm) = (shifted(&x, &xi, t), shifted(&x, &xi, -t));

        let fd = (&sparsity_egrad(&xp, &topo, &p).unwrap() - &sparsity_egrad(&xm, &topo, &p).unwrap()).scaled(0.5 / t);
        let h = sparsity_ehess_vec(&x, &topo, &p, &xi).unwrap();
        assert!(tangent_rel(&h, &fd) <= 1e-4, "sparsity seed {seed}");

        let fd = (&completion_egrad(&xp, &mask).unwrap() - &completion_egrad(&xm, &mask).unwrap()).scaled(0.5 / t);
        let h = completion_ehess_vec(&x, &mask, &xi).unwrap();
        assert!(tangent_rel(&h, &fd) <= 1e-4, "completion seed {seed}");
    }
}

#[test]
fn assemble_and_extract_agree_with_dot_products() {
    let ones = FactoredPoint::new(Mat::from_element(4, 1, 1.0), Mat::from_element(4, 1, 1.0)).unwrap();
    assert_eq!(assemble_matrix(&ones), Mat::from_element(4, 4, 1.0));
    assert_eq!(extract_diag(&ones), vec![1.0; 4]);
    for seed in 0..5 {
        let x = point(seed, 6, 3);
        let dense = assemble_matrix(&x);
        let diag = extract_diag(&x);
        for i in 0..6 {
            assert!((diag[i] - dense[(i, i)]).abs() < 1e-15);
            for j in 0..6 {
                assert!((dense[(i, j)] - entry(&x, i, j)).abs() < 1e-14);
            }
        }
    }
}

/// Golden-section search, independent of the trust-region code.
fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    while (b - a).abs() > 1e-12 {
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
    }
    0.5 * (a + b)
}

#[test]
fn stationary_diagonal_magnitude() {
    let p = SmoothedL1Params::default();
    let phi = |t: f64| p.lambda * t * t - (t * t + p.epsilon * p.epsilon).sqrt();
    let t_pos = golden_min(phi, 0.0, 3.0);
    let t_neg = golden_min(phi, -3.0, 0.0);
    for t in [t_pos, -t_neg] {
        assert!((0.99..=1.0).contains(&t), "{t}");
    }
    // The stationary equation 2 lambda t = t / sqrt(t^2 + eps^2) gives
    // t^2 = 1 / (4 lambda^2) - eps^2.
    let exact = (1.0 / (4.0 * p.lambda * p.lambda) - p.epsilon * p.epsilon).sqrt();
    assert!((t_pos - exact).abs() < 1e-6);
    let (_, d1, d2) = p.diagonal_term(exact);
    assert!(d1.abs() < 1e-12 && d2 > 0.0);
}

#[test]
fn sparsity_cost_is_bounded_below() {
    let mut g = rng(42);
    for &lambda in &[0.1, 0.5, 1.0] {
        let p = SmoothedL1Params::new(lambda, 0.01, 0.01).unwrap();
        for n in 0..10_000 {
            let k = 2 + n % 7;
            let r = 1 + n % 3;
            let r = r.min(k);
            let scale = 10f64.powf(g.random_range(-2.0..2.0));
            let u = uniform_mat(&mut g, k, r) * scale;
            let v = uniform_mat(&mut g, k, r);
            let x = FactoredPoint::from_factors_unchecked(u, v).unwrap();
            let topo = NetworkTopology::empty(k).unwrap();
            let c = sparsity_cost(&x, &topo, &p).unwrap();
            let bound = -p.rho * k as f64 * (1.0 / (4.0 * lambda) + p.epsilon);
            assert!(c >= bound, "{c} < {bound}");
        }
    }
}

proptest! {
    #[test]
    fn diagonal_term_is_bounded(t in -1e3f64..1e3, lambda in 0.05f64..2.0, eps in 1e-4f64..0.5) {
        let p = SmoothedL1Params::new(lambda, 1.0, eps).unwrap();
        let (value, _, _) = p.diagonal_term(t);
        prop_assert!(value >= -1.0 / (4.0 * lambda) - eps - 1e-12);
    }

    #[test]
    fn mask_for_users_follows_links(seed in any::<u64>(), k in 2usize..9) {
        let topo = random_topology(seed, k, 0.5);
        let mut g = rng(seed ^ 9);
        let users: Vec<usize> = (0..k).filter(|_| g.random_bool(0.6)).collect();
        prop_assume!(!users.is_empty());
        let mask = ObservationMask::for_users(&topo, &users).unwrap();
        for a in 0..users.len() {
            for b in 0..users.len() {
                let expected = a == b || topo.is_linked(users[a], users[b]);
                prop_assert_eq!(mask.entries().contains(&(a, b)), expected);
            }
        }
    }
}
