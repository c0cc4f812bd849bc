mod common;

use nonconcave_dp::arbitrage::{certify_node, NodeVerdict};
use nonconcave_dp::dp::{assemble_strategy, evaluate_strategy};
use nonconcave_dp::market::{project, Increment};
use nonconcave_dp::one_step::{build_value_curve, wealth_grid, WealthValue};
use nonconcave_dp::oracle::{brute_force_value, OracleGrid, Radius};
use nonconcave_dp::utility::{falsify_lifted, lift_growth, Reference, ValidationGrids};
use nonconcave_dp::{
    backward_induct, certify_tree, DpOptions, GrowthCertificate, NodeCertificate, ScenarioTree, UtilityFamily,
    UtilityModel,
};
use proptest::prelude::*;

fn root_increments(tree: &ScenarioTree) -> Vec<Increment> {
    tree.increments(tree.root()).unwrap()
}

fn certified(incs: &[Increment]) -> NodeCertificate {
    match certify_node(incs) {
        NodeVerdict::Certified(c) => c,
        NodeVerdict::Arbitrage { direction } => panic!("unexpected arbitrage along {direction:?}"),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn one_period_tree(seed: u64) -> ScenarioTree {
    let mut rng = common::rng(seed);
    loop {
        let t = common::random_na_tree(&mut rng);
        if t.horizon() == 1 {
            return t;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_keeps_payoffs(seed in any::<u64>(), raw in prop::collection::vec(-5.0f64..5.0, 2)) {
        let tree = common::random_na_tree(&mut common::rng(seed));
        let incs = root_increments(&tree);
        let cert = certified(&incs);
        let xi = &raw[..tree.assets()];
        let p = project(xi, &cert.basis);
        for inc in &incs {
            prop_assert!((dot(xi, &inc.delta) - dot(&p, &inc.delta)).abs() < 1e-12);
        }
        let pp = project(&p, &cert.basis);
        for (a, b) in p.iter().zip(&pp) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn certificate_ignores_order_and_duplicates(seed in any::<u64>()) {
        let tree = common::random_na_tree(&mut common::rng(seed));
        let incs = root_increments(&tree);
        let base = certified(&incs);

        let mut reordered = incs.clone();
        reordered.reverse();
        let mut split = reordered[0].clone();
        split.prob /= 2.0;
        reordered[0].prob /= 2.0;
        reordered.push(split);
        let other = certified(&reordered);

        prop_assert!((base.beta - other.beta).abs() < 1e-12 * base.beta.max(1.0));
        prop_assert_eq!(base.basis.dim(), other.basis.dim());
        for e in 0..tree.assets() {
            let mut v = vec![0.0; tree.assets()];
            v[e] = 1.0;
            for (a, b) in project(&v, &base.basis).iter().zip(project(&v, &other.basis)) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn beta_scales_and_rotates(seed in any::<u64>(), s in 0.1f64..10.0, theta in 0.0f64..std::f64::consts::TAU) {
        let tree = common::random_na_tree(&mut common::rng(seed));
        let incs = root_increments(&tree);
        let base = certified(&incs);

        let scaled: Vec<Increment> = incs
            .iter()
            .map(|i| Increment { delta: i.delta.iter().map(|x| s * x).collect(), ..i.clone() })
            .collect();
        let c = certified(&scaled);
        prop_assert!((c.beta - s * base.beta).abs() < 1e-9 * s * base.beta);
        prop_assert_eq!(c.kappa, base.kappa);

        if tree.assets() == 2 {
            let (sn, cs) = theta.sin_cos();
            let rotated: Vec<Increment> = incs
                .iter()
                .map(|i| Increment {
                    delta: vec![cs * i.delta[0] - sn * i.delta[1], sn * i.delta[0] + cs * i.delta[1]],
                    ..i.clone()
                })
                .collect();
            let r = certified(&rotated);
            prop_assert!((r.beta - base.beta).abs() < 1e-9 * base.beta.max(1.0));
        }
    }

    #[test]
    fn one_step_curve_is_monotone_and_beats_standing_still(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let tree = common::random_na_tree(&mut rng);
        let u = common::random_utility(&mut rng);
        let incs = root_increments(&tree);
        let cert = certified(&incs);
        let leaves: Vec<_> = incs.iter().map(|_| u.at_node("*").unwrap()).collect();
        let children: Vec<&dyn WealthValue> = leaves.iter().map(|l| l as &dyn WealthValue).collect();
        let grid = wealth_grid(2.0, 32);
        let (curve, _) = build_value_curve(&grid, &incs, &children, &cert, 1e-4).unwrap();
        prop_assert!(curve.values().windows(2).all(|w| w[1] >= w[0]));
        for (&x, &v) in curve.wealth().iter().zip(curve.values()) {
            let still: f64 = incs.iter().map(|i| i.prob * u.at_node("*").unwrap().value(x)).sum();
            prop_assert!(v >= still - 1e-12);
        }
    }

    #[test]
    fn lifted_growth_holds_for_powers(p in 0.05f64..0.95, scale in 0.1f64..10.0) {
        let model = UtilityModel::deterministic(UtilityFamily::Power { exponent: p, scale }).unwrap();
        let nodes = vec!["*".to_string()];
        let lifted = lift_growth(&model, &GrowthCertificate::new(p, 1.0, 0.0), &nodes).unwrap();
        prop_assert!((lifted.lifted("*").unwrap() - scale).abs() < 1e-12);
        let grids = ValidationGrids::for_x_bar(1.0);
        let xs: Vec<f64> = grids.below.iter().chain(&grids.above).cloned().collect();
        prop_assert!(falsify_lifted(&model, &lifted, &grids.lambdas, &xs, &nodes).unwrap().is_none());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn value_grows_with_initial_wealth(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let tree = one_period_tree(seed);
        let u = common::random_utility(&mut rng);
        let na = certify_tree(&tree);
        let opts = DpOptions { n_grid: 64, ..DpOptions::default() };
        let mut last = f64::NEG_INFINITY;
        for x0 in [0.0, 0.25, 0.5, 1.0, 2.0] {
            let v = backward_induct(&tree, &u, &na, x0, &opts).unwrap().v_star;
            prop_assert!(v >= last - 1e-9, "v*({x0}) = {v} < {last}");
            last = v;
        }
    }

    #[test]
    fn pasted_plan_dominates_grid_strategies(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let tree = one_period_tree(seed);
        let u = common::random_utility(&mut rng);
        let na = certify_tree(&tree);
        let opts = DpOptions::default();
        let sol = backward_induct(&tree, &u, &na, 1.0, &opts).unwrap();
        let plan = assemble_strategy(&tree, &u, &na, &sol, &opts).unwrap();
        let plan_value = evaluate_strategy(&tree, &u, 1.0, &plan.positions).unwrap();
        let grid = OracleGrid::Box { points: 11, radius: Radius::Certified };
        let oracle = brute_force_value(&tree, &u, Some(&na), 1.0, grid).unwrap();
        prop_assert!(plan_value >= oracle.best_value - 1e-3 * oracle.best_value.abs().max(1.0));
    }

    #[test]
    fn oracle_refinement_never_hurts(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let tree = common::random_na_tree(&mut rng);
        let u = common::random_utility(&mut rng);
        let na = certify_tree(&tree);
        let run = |g| brute_force_value(&tree, &u, Some(&na), 1.0, g).unwrap().best_value;
        let boxed = |points| OracleGrid::Box { points, radius: Radius::Certified };
        prop_assert!(run(boxed(9)) >= run(boxed(5)) - 1e-12);
        let (fine, coarse) = (run(OracleGrid::Polytope { divisions: 8 }), run(OracleGrid::Polytope { divisions: 4 }));
        prop_assert!(fine >= coarse - 1e-12);
    }

    #[test]
    fn positive_part_is_dominated(seed in any::<u64>(), b in 0.0f64..1.5) {
        // sup E[u+] over the strategy grid <= v* + E[u-(0)] for an S-shaped u
        let tree = one_period_tree(seed);
        let model = UtilityModel::new(
            UtilityFamily::TwoPiecePower { alpha: 1.0, beta: 0.7, loss_aversion: 2.0 },
            Some(Reference::Constant(b)),
        )
        .unwrap();
        let u_plus = UtilityModel::deterministic(UtilityFamily::PiecewisePolynomial {
            knots: vec![b],
            coeffs: vec![vec![0.0, 1.0]],
        })
        .unwrap();
        let na = certify_tree(&tree);
        let v = backward_induct(&tree, &model, &na, 1.0, &DpOptions::default()).unwrap().v_star;
        let leaf = model.at_node("*").unwrap();
        let loss_at_zero = (-leaf.value(0.0)).max(0.0);
        let grid = OracleGrid::Polytope { divisions: 24 };
        let best_plus = brute_force_value(&tree, &u_plus, Some(&na), 1.0, grid).unwrap().best_value;
        prop_assert!(best_plus <= v + loss_at_zero + 1e-9, "{best_plus} > {v} + {loss_at_zero}");
    }
}
