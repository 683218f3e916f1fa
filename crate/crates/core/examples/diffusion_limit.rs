//! Diffusion coefficient from the linearised collision operator, and the
//! kinetic solution at long times against the heat equation.

use rayleigh::grid::VelocityGrid;
use rayleigh::hydro::{build_operator, diffusive_compare, heat_from_profile, kappa, kinetic_solve};
use rayleigh::kinetics::SpatialProfile;

fn main() -> rayleigh::Result<()> {
    let beta = 1.0;
    let op = build_operator(beta, VelocityGrid::for_maxwellian(beta, 5.0, 8)?, &Default::default())?;
    let rep = kappa(&op)?;
    println!(
        "kappa = {:.5} (kappa sqrt(beta) = {:.5}), anisotropy {:.1e}, {} CG iterations",
        rep.kappa,
        rep.kappa * beta.sqrt(),
        rep.anisotropy(),
        rep.iterations
    );

    let profile = SpatialProfile::Cosine {
        amplitude: 1.0,
        k: [1, 0, 0],
    };
    let taus = [0.02, 0.05];
    let heat = heat_from_profile(&profile, rep.kappa, &taus)?;
    for c in [5.0, 10.0] {
        let kinetic = kinetic_solve(&op, &profile, c, &taus, 0.01)?;
        for row in diffusive_compare(&kinetic, &heat, &op, c)? {
            println!("c = {c}, tau = {}: L1 gap {:.4}", row.tau, row.l1_gap);
        }
    }
    Ok(())
}
