//! A goal-reaching ramp utility: the optimum is a whole interval of
//! positions and the solver returns the smallest one.

use nonconcave_dp::dp::assemble_strategy;
use nonconcave_dp::utility::load_utility;
use nonconcave_dp::{backward_induct, certify_tree, load_tree, DpOptions};

fn main() -> nonconcave_dp::Result<()> {
    let tree = load_tree(include_str!("../fixtures/b1.json"))?;
    let utility = load_utility(include_str!("../fixtures/ramp.json"))?.model;
    let na = certify_tree(&tree);
    let opts = DpOptions::default();
    for x0 in [0.5, 1.0, 1.5] {
        let sol = backward_induct(&tree, &utility, &na, x0, &opts)?;
        let plan = assemble_strategy(&tree, &utility, &na, &sol, &opts)?;
        println!(
            "x0 {x0:.1}: v* {:.6}, position {:.6}",
            sol.v_star,
            plan.positions[tree.root()][0]
        );
    }
    Ok(())
}
