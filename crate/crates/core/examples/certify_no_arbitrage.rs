//! Node-wise no-arbitrage certificates (beta, kappa), sampled verification,
//! and the lattice search that backs them up.

use nonconcave_dp::arbitrage::verify_certificate;
use nonconcave_dp::oracle::find_arbitrage;
use nonconcave_dp::{certify_tree, load_tree, TreeCertificate};

fn main() -> nonconcave_dp::Result<()> {
    let trees = [
        ("b1", include_str!("../fixtures/b1.json")),
        ("two_asset", include_str!("../fixtures/two_asset.json")),
        ("deg", include_str!("../fixtures/deg.json")),
        ("arb", include_str!("../fixtures/arb.json")),
    ];
    for (name, text) in trees {
        let tree = load_tree(text)?;
        match certify_tree(&tree) {
            TreeCertificate::NoArbitrage(cert) => {
                for (i, nc) in cert.entries() {
                    let rep = verify_certificate(&tree.increments(i)?, nc, 10_000, 1)?;
                    println!(
                        "{name:>9}/{:<4} dim {} beta {:.6} kappa {:.3}  verified on {} directions: {}",
                        tree.node(i).id,
                        nc.basis.dim(),
                        nc.beta,
                        nc.kappa,
                        rep.directions_checked,
                        rep.passed
                    );
                }
            }
            TreeCertificate::Arbitrage(w) => {
                println!("{name:>9}: arbitrage at `{}` along {:?}", w.node, w.direction);
            }
        }
        let lattice = find_arbitrage(&tree, 2)?;
        println!("{name:>9}: lattice search finds arbitrage: {}", lattice.is_some());
    }
    Ok(())
}
