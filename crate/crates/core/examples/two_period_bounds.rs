//! Two periods: value curves, the polynomial envelope J_t (x^g + 1), and
//! the growth inequality carried through every layer.

use nonconcave_dp::dp::{check_bounds, check_growth_propagation, compute_j};
use nonconcave_dp::utility::{lift_growth, load_utility, ValidationGrids};
use nonconcave_dp::{backward_induct, certify_tree, load_tree, DpOptions};

fn main() -> nonconcave_dp::Result<()> {
    let tree = load_tree(include_str!("../fixtures/b2.json"))?;
    let na = certify_tree(&tree);
    let opts = DpOptions::default();

    let sqrt = load_utility(include_str!("../fixtures/sqrt.json"))?;
    let sol = backward_induct(&tree, &sqrt.model, &na, 1.0, &opts)?;
    let j = compute_j(&tree, sqrt.growth.as_ref().expect("certificate"), &na, &sqrt.model)?;
    let rep = check_bounds(&tree, &sol, &j);
    println!("sqrt: v*(1) = {:.6} (exact 1.125), upper bound {:.6}", sol.v_star, rep.root_upper);
    for (i, node) in tree.nodes().iter().enumerate() {
        println!("  J at {:<4} = {:.6}", node.id, j.j[i]);
    }
    println!("  worst envelope slack {:.3e}", rep.worst_slack);

    let kf = load_utility(include_str!("../fixtures/kf.json"))?;
    let cert = kf.growth.expect("certificate");
    let lifted = lift_growth(&kf.model, &cert, &tree.leaf_ids())?;
    let sol = backward_induct(&tree, &kf.model, &na, 1.0, &opts)?;
    let grids = ValidationGrids::for_x_bar(cert.x_bar);
    let g = check_growth_propagation(&tree, &sol, &lifted, &grids.lambdas, 40)?;
    println!("kramkov f: v*(1) = {:.6}", sol.v_star);
    for (t, s) in g.layer_slack.iter().enumerate() {
        println!("  layer {t}: worst growth slack {s:.3e}");
    }
    Ok(())
}
