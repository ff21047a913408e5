use num_rational::Ratio;
use proptest::prelude::*;

use heatlab::funcineq::{admissible, exponents, ExponentSet};
use heatlab::Error;

type Q = Ratio<i64>;

/// Exact exponents for finite integer `p`, `q`.
struct Exact {
    p_star: Q,
    rho: Q,
    nu: Q,
    mu: Q,
    gamma: Q,
}

fn exact(p: i64, q: i64, d: i64) -> Exact {
    let one = Q::from_integer(1);
    let two = Q::from_integer(2);
    let (p, q, d) = (Q::from_integer(p), Q::from_integer(q), Q::from_integer(d));
    let p_star = p / (p - one);
    let rho = two * q * d / (q * (d - two) + d);
    let nu = two - two * p_star / rho;
    let mu = one / (two / d - one / q);
    let gamma = ((p - one) / p) / (two / d - one / p - one / q);
    Exact {
        p_star,
        rho,
        nu,
        mu,
        gamma,
    }
}

fn close(x: f64, r: Q) -> bool {
    let v = *r.numer() as f64 / *r.denom() as f64;
    (x - v).abs() <= 1e-13 * v.abs().max(1.0)
}

fn matches(e: &ExponentSet, x: &Exact) -> bool {
    close(e.p_star, x.p_star) && close(e.rho, x.rho) && close(e.nu, x.nu) && close(e.mu, x.mu) && close(e.gamma, x.gamma)
}

/// Twenty admissible integer pairs in `d = 2`.
fn grid() -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    for p in [3i64, 4, 6, 8, 16] {
        for q in [3i64, 4, 8, 32] {
            out.push((p, q));
        }
    }
    out
}

#[test]
fn twenty_point_grid_matches_exact_rationals() {
    let pairs = grid();
    assert_eq!(pairs.len(), 20);
    for (p, q) in pairs {
        let e = exponents(p as f64, q as f64, 2).unwrap();
        let x = exact(p, q, 2);
        assert!(matches(&e, &x), "p={p} q={q}: {e:?}");
        assert_eq!(x.rho, Q::from_integer(2 * q), "ρ = 2q in two dimensions");
        assert!(x.nu > Q::from_integer(1) && x.nu <= Q::from_integer(2), "ν = {}", x.nu);
        assert!(e.nu > 1.0 && e.nu <= 2.0);
    }
}

#[test]
fn infinite_moments_give_diffusive_gamma() {
    for d in 2..=4 {
        let e = exponents(f64::INFINITY, f64::INFINITY, d).unwrap();
        assert_eq!(e.gamma, d as f64 / 2.0, "d = {d}");
        assert_eq!(e.p_star, 1.0);
    }
}

#[test]
fn reference_pair_in_two_dimensions() {
    let e = exponents(4.0, 4.0, 2).unwrap();
    let x = exact(4, 4, 2);
    assert_eq!(x.gamma, Q::new(3, 2));
    assert!(matches(&e, &x));
}

#[test]
fn three_dimensional_pairs_match_exact_rationals() {
    for (p, q) in [(4i64, 8i64), (8, 8), (6, 16), (16, 4)] {
        let e = exponents(p as f64, q as f64, 3).unwrap();
        assert!(matches(&e, &exact(p, q, 3)), "p={p} q={q}");
    }
}

#[test]
fn boundary_and_beyond_are_condition_errors() {
    for (p, q) in [(2.0, 2.0), (1.5, 3.0), (3.0, 1.5), (1.0, 100.0)] {
        match exponents(p, q, 2) {
            Err(Error::Condition(_)) => {}
            other => panic!("p={p} q={q}: {other:?}"),
        }
        assert!(!admissible(p, q, 2));
    }
}

proptest! {
    #[test]
    fn admissible_pairs_have_consistent_exponents(ip in 0.0f64..1.0, iq in 0.0f64..1.0) {
        prop_assume!(ip + iq < 0.999);
        let p = if ip == 0.0 { f64::INFINITY } else { 1.0 / ip };
        let q = if iq == 0.0 { f64::INFINITY } else { 1.0 / iq };
        let e = exponents(p, q, 2).unwrap();
        prop_assert!(admissible(p, q, 2));
        prop_assert!(e.nu > 1.0 && e.nu <= 2.0 + 1e-12);
        prop_assert!(e.gamma >= 1.0 - 1e-12);
        prop_assert!(e.mu >= 1.0 - 1e-12);
        prop_assert!(e.rho > 2.0 * e.p_star);
    }

    #[test]
    fn gamma_decreases_in_both_moments(p in 2.5f64..50.0, q in 2.5f64..50.0, k in 1.01f64..4.0) {
        let base = exponents(p, q, 2).unwrap().gamma;
        prop_assert!(exponents(p * k, q, 2).unwrap().gamma <= base + 1e-12);
        prop_assert!(exponents(p, q * k, 2).unwrap().gamma <= base + 1e-12);
    }
}
