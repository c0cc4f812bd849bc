//! A bounded, non-concave utility whose asymptotic elasticity is infinite
//! while a growth certificate with exponent 1 still holds.

use nonconcave_dp::utility::{empirical_elasticity, kramkov_f, UtilityFamily};
use nonconcave_dp::{GrowthCertificate, UtilityModel};

fn main() -> nonconcave_dp::Result<()> {
    let model = UtilityModel::deterministic(UtilityFamily::KramkovF {})?;
    println!("{:>4} {:>12} {:>12} {:>12}", "n", "f(n)", "f(n+1/2)", "elasticity");
    for n in [1usize, 2, 5, 7, 10, 20, 47, 48, 50] {
        let x = n as f64 + 0.5;
        let e = empirical_elasticity(&model, "*", x, 1e-6)?;
        println!("{n:>4} {:>12.8} {:>12.8} {e:>12.4}", kramkov_f(n as f64).0, kramkov_f(x).0);
    }
    let cert = nonconcave_dp::utility::lift_growth(&model, &GrowthCertificate::new(1.0, 1.0, 0.5), &["*".into()])?;
    println!("certificate (1, 1, 1/2) survives the falsifier; lifted C = {}", cert.lifted("*")?);
    Ok(())
}
