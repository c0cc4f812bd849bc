//! S-shaped utility with loss aversion, measured against a reference point
//! that differs across terminal scenarios.

use nonconcave_dp::dp::{assemble_strategy, check_bounds, compute_j, evaluate_strategy};
use nonconcave_dp::utility::load_utility;
use nonconcave_dp::{backward_induct, certify_tree, load_tree, DpOptions};

fn main() -> nonconcave_dp::Result<()> {
    let tree = load_tree(include_str!("../fixtures/b2.json"))?;
    let spec = load_utility(include_str!("../fixtures/cpt.json"))?;
    let na = certify_tree(&tree);
    let opts = DpOptions::default();
    for x0 in [0.5, 1.0, 2.0] {
        let sol = backward_induct(&tree, &spec.model, &na, x0, &opts)?;
        let plan = assemble_strategy(&tree, &spec.model, &na, &sol, &opts)?;
        let realised = evaluate_strategy(&tree, &spec.model, x0, &plan.positions)?;
        let j = compute_j(&tree, spec.growth.as_ref().expect("certificate"), &na, &spec.model)?;
        let bounds = check_bounds(&tree, &sol, &j);
        println!(
            "x0 {x0}: v* {:.5}, plan {:.5}, upper {:.5}",
            sol.v_star, realised, bounds.root_upper
        );
        for i in tree.internal_nodes() {
            println!(
                "    {:<4} wealth {:.4} position {:+.4}",
                tree.node(i).id,
                plan.wealth[i],
                plan.positions[i][0]
            );
        }
    }
    Ok(())
}
