//! Brute-force strategy grids against the dynamic programme on a small
//! two-asset market, plus the unboundedness signal on an arbitrage tree.

use nonconcave_dp::oracle::{brute_force_value, compare, radius_sweep, OracleGrid, Radius};
use nonconcave_dp::utility::load_utility;
use nonconcave_dp::{backward_induct, certify_tree, load_tree, DpOptions};

fn main() -> nonconcave_dp::Result<()> {
    let tree = load_tree(include_str!("../fixtures/two_asset.json"))?;
    let utility = load_utility(include_str!("../fixtures/ramp.json"))?.model;
    let na = certify_tree(&tree);
    let sol = backward_induct(&tree, &utility, &na, 1.0, &DpOptions::default())?;
    let grids = [
        OracleGrid::Box { points: 11, radius: Radius::Certified },
        OracleGrid::Box { points: 161, radius: Radius::Certified },
        OracleGrid::Polytope { divisions: 4 },
        OracleGrid::Polytope { divisions: 60 },
    ];
    for grid in grids {
        let rep = brute_force_value(&tree, &utility, Some(&na), 1.0, grid)?;
        let cmp = compare(&rep, sol.v_star, 2e-2);
        println!(
            "{grid:?}: oracle {:.6} dp {:.6} rel gap {:.2e} position {:?}",
            rep.best_value, sol.v_star, cmp.rel_gap, rep.positions[tree.root()]
        );
    }

    let arb = load_tree(include_str!("../fixtures/arb.json"))?;
    let sqrt = load_utility(include_str!("../fixtures/sqrt.json"))?.model;
    let sweep = radius_sweep(&arb, &sqrt, 1.0, 21, 1.0, 4)?;
    for (r, v) in sweep.radii.iter().zip(&sweep.values) {
        println!("arbitrage tree, radius {r:>4}: best {v:.4}");
    }
    println!("unbounded: {}", sweep.unbounded);
    Ok(())
}
