//! A-priori moment bounds, the bad-tree error budget and the parameter plan
//! that balances it.

use rayleigh::bounds::{
    bad_tree_bounds, energy_bound, exclusion_mass, expected_collisions_bound, momentum_bound, plan_scaling, rho_hat,
    rho_hat_closed_form,
};
use rayleigh::ideal::{sample_indexed, JumpProcessConfig};
use rayleigh::kinetics::{Density, InitialLaw, KineticConstants};
use rayleigh::rng::sample_rng;

fn main() -> rayleigh::Result<()> {
    let g0 = Density::maxwellian(1.0)?;
    let consts = KineticConstants::from_densities(&g0, &g0, f64::INFINITY);
    for t in [0.5, 1.0, 2.0] {
        println!(
            "t = {t}: energy <= {:.3}, mean speed <= {:.3}, collisions <= {:.3}",
            energy_bound(t, 1.0, &consts),
            momentum_bound(t, 1.0, &consts),
            expected_collisions_bound(t, 1.0, &consts)
        );
    }

    let plan = plan_scaling(1e-3, 0.1, 1.0)?;
    println!("plan at eps = 1e-3, alpha = 0.1: {plan:#?}");
    println!("balanced terms: {:?}", plan.balance_terms());
    let consts = KineticConstants::from_densities(&g0, &g0, plan.v_eps);
    let bad = bad_tree_bounds(&plan.bound_inputs(plan.horizon, consts))?;
    println!("bad-tree budget {:.3e} = {bad:?}", bad.total());

    println!(
        "rho_hat(0.01, 50, 1) = {} (closed form {})",
        rho_hat(0.01, 50, 1.0),
        rho_hat_closed_form(0.01, 50, 1.0)
    );

    // Background data excluded by a sampled path scales like eps^2.
    let cfg = JumpProcessConfig::new(1.0, 1.0, InitialLaw::uniform(g0.clone()), g0.clone())?;
    let (tree, _) = sample_indexed(&cfg, 3, 0)?;
    for eps in [0.02, 0.01, 0.005] {
        let est = exclusion_mass(&tree, &g0, 1.0, eps, 10_000, &mut sample_rng(3, 1))?;
        println!("eps {eps}: excluded mass {:.4e} +- {:.1e}", est.mean, est.std_error);
    }
    Ok(())
}
