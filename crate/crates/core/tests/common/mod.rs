#![allow(dead_code)]

use std::f64::consts::PI;

use nonconcave_dp::market::{NodeSpec, TreeSpec};
use nonconcave_dp::{ScenarioTree, UtilityFamily, UtilityModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn probs(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

/// Increments around zero with zero in the interior of their hull.
fn na_increments(rng: &mut impl Rng, d: usize) -> Vec<Vec<f64>> {
    if d == 1 {
        let mut out = vec![vec![rng.random_range(0.1..0.6)], vec![-rng.random_range(0.1..0.5)]];
        if rng.random_bool(0.5) {
            out.push(vec![rng.random_range(-0.5..0.6)]);
        }
        return out;
    }
    if rng.random_bool(0.2) {
        // two opposite moves: the increments span a line in the plane
        let th: f64 = rng.random_range(0.0..2.0 * PI);
        let (a, b) = (rng.random_range(0.1..0.5), rng.random_range(0.1..0.5));
        return vec![vec![a * th.cos(), a * th.sin()], vec![-b * th.cos(), -b * th.sin()]];
    }
    let th0: f64 = rng.random_range(0.0..2.0 * PI);
    let g1: f64 = rng.random_range(1.3..2.2);
    let lo = (PI - g1 + 0.3).max(0.8);
    let hi = (2.0 * PI - g1 - 0.8).min(2.2);
    let g2: f64 = rng.random_range(lo..hi);
    [th0, th0 + g1, th0 + g1 + g2]
        .iter()
        .map(|th| {
            let r = rng.random_range(0.1..0.5);
            vec![r * th.cos(), r * th.sin()]
        })
        .collect()
}

/// Integer increments in `{-2..2}^d`; arbitrage or not, as it falls.
fn lattice_increments(rng: &mut impl Rng, d: usize) -> Vec<Vec<f64>> {
    let n = rng.random_range(2..=3);
    (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-2i32..=2) as f64).collect())
        .collect()
}

fn build(
    rng: &mut ChaCha8Rng,
    d: usize,
    horizon: usize,
    base: f64,
    mut incs: impl FnMut(&mut ChaCha8Rng, usize) -> Vec<Vec<f64>>,
) -> ScenarioTree {
    let mut nodes = vec![NodeSpec {
        id: "r".into(),
        parent: None,
        prob: 1.0,
        price: vec![base; d],
    }];
    let mut frontier = vec![0usize];
    for _ in 0..horizon {
        let mut next = Vec::new();
        for &p in &frontier {
            let deltas = incs(rng, d);
            let ps = probs(rng, deltas.len());
            for (k, (delta, prob)) in deltas.into_iter().zip(ps).enumerate() {
                let parent = &nodes[p];
                let price = parent.price.iter().zip(&delta).map(|(a, b)| a + b).collect();
                let id = format!("{}{}", parent.id, k);
                let parent_id = parent.id.clone();
                nodes.push(NodeSpec {
                    id,
                    parent: Some(parent_id),
                    prob,
                    price,
                });
                next.push(nodes.len() - 1);
            }
        }
        frontier = next;
    }
    ScenarioTree::from_spec(&TreeSpec {
        assets: d,
        horizon,
        nodes,
    })
    .expect("generated tree is valid")
}

/// Arbitrage-free tree with `T <= 2`, `d <= 2`, at most three children.
pub fn random_na_tree(rng: &mut ChaCha8Rng) -> ScenarioTree {
    let d = rng.random_range(1..=2);
    let t = rng.random_range(1..=2);
    build(rng, d, t, 1.0, na_increments)
}

/// Tree with integer increments, so that arbitrage directions (when they
/// exist) can be taken with entries in `{-2..2}`.
pub fn random_lattice_tree(rng: &mut ChaCha8Rng) -> ScenarioTree {
    let d = rng.random_range(1..=2);
    let t = rng.random_range(1..=2);
    build(rng, d, t, 10.0, lattice_increments)
}

/// Continuous, non-decreasing piecewise polynomial with `u(0)` in
/// `[0, 1/2]`, convex and concave pieces mixed, affine beyond the last knot.
pub fn random_utility(rng: &mut ChaCha8Rng) -> UtilityModel {
    let pieces = rng.random_range(2..=4);
    let mut knots = vec![0.0];
    let mut coeffs = Vec::new();
    let mut value = rng.random_range(0.0..0.5);
    for j in 0..pieces {
        if j + 1 == pieces {
            coeffs.push(vec![value, rng.random_range(0.0..1.0)]);
            break;
        }
        let w = rng.random_range(0.3..1.5);
        let c1 = rng.random_range(0.0..2.0);
        let c2 = rng.random_range(-c1 / (2.0 * w)..2.0);
        let c3 = rng.random_range(0.0..1.0);
        let c = vec![value, c1, c2, c3];
        value = c[0] + c1 * w + c2 * w * w + c3 * w * w * w;
        coeffs.push(c);
        knots.push(knots[j] + w);
    }
    UtilityModel::deterministic(UtilityFamily::PiecewisePolynomial { knots, coeffs }).expect("valid utility")
}
