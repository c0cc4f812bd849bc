//! Growth certificates: a falsified one, a lifted one, and one built for a
//! utility measured against a random reference point.

use nonconcave_dp::utility::{falsify_growth, lift_growth, load_utility, refpoint_certificate, ValidationGrids};

fn main() -> nonconcave_dp::Result<()> {
    let exp = load_utility(include_str!("../fixtures/exp.json"))?;
    let cert = exp.growth.clone().expect("certificate in file");
    let grids = ValidationGrids::for_x_bar(cert.x_bar);
    match falsify_growth(&exp.model, &cert, &grids.lambdas, &grids.above, &exp.model.known_nodes())? {
        Some(cx) => println!(
            "e^x with gamma_bar 2: fails at lambda {} x {:.4}: {:.4} > {:.4}",
            cx.lambda, cx.x, cx.lhs, cx.rhs
        ),
        None => println!("e^x: no counterexample found"),
    }

    let kf = load_utility(include_str!("../fixtures/kf.json"))?;
    let lifted = lift_growth(&kf.model, kf.growth.as_ref().expect("certificate in file"), &["*".into()])?;
    println!("kramkov f: lifted constant C = {}", lifted.lifted("*")?);

    // sqrt core, certified with (1/2, 0, 0); slope at most 1 beyond x = 1/4;
    // reference points up to 1.2
    let cpt = refpoint_certificate((0.5, 0.0, 0.0), (1.0, 0.25), 1.2)?;
    println!(
        "shifted sqrt: gamma_bar {} x_bar {} c {:?}",
        cpt.gamma_bar, cpt.x_bar, cpt.c
    );
    Ok(())
}
