//! One period, one asset, square-root utility: the optimum is known in
//! closed form (position 1, value 3*sqrt(2)/4).

use nonconcave_dp::dp::{assemble_strategy, evaluate_strategy};
use nonconcave_dp::utility::load_utility;
use nonconcave_dp::{backward_induct, certify_tree, load_tree, DpOptions};

fn main() -> nonconcave_dp::Result<()> {
    let tree = load_tree(include_str!("../fixtures/b1.json"))?;
    let utility = load_utility(include_str!("../fixtures/sqrt.json"))?.model;
    let na = certify_tree(&tree);
    let opts = DpOptions::default();

    let sol = backward_induct(&tree, &utility, &na, 1.0, &opts)?;
    let plan = assemble_strategy(&tree, &utility, &na, &sol, &opts)?;
    let realised = evaluate_strategy(&tree, &utility, 1.0, &plan.positions)?;

    println!("v*(1)          = {:.6}", sol.v_star);
    println!("closed form    = {:.6}", 0.75 * 2f64.sqrt());
    println!("root position  = {:.6}", plan.positions[tree.root()][0]);
    println!("plan evaluates = {:.6}", realised);
    for i in tree.leaves() {
        println!("  wealth at {:>2} = {:.6}", tree.node(i).id, plan.wealth[i]);
    }
    Ok(())
}
