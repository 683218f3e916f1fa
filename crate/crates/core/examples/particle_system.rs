//! Event-driven simulation of one tagged sphere among N background spheres on
//! the unit torus, on the Boltzmann-Grad line N ε² = c.
//!
//! ```text
//! cargo run --release --example particle_system -- 10000
//! ```

use rayleigh::histogram::PhaseGrid;
use rayleigh::kinetics::{Density, InitialLaw};
use rayleigh::sim::{empirical_marginal, simulate_one, SimConfig};

fn main() -> rayleigh::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let g0 = Density::maxwellian(1.0)?;
    let mut cfg = SimConfig::boltzmann_grad(n, 1.0, 1.0, InitialLaw::uniform(Density::maxwellian(0.25)?), g0)?;
    cfg.output_times = vec![0.0, 0.5, 1.0];
    println!("N = {n}, eps = {:.5}", cfg.eps);

    let samples = 2000;
    let mut trajectories = Vec::with_capacity(samples);
    let mut collisions = 0;
    for i in 0..samples as u64 {
        let (run, _) = simulate_one(&cfg, 42, i)?;
        collisions += run.tree.n();
        trajectories.push(run.trajectory);
    }
    println!("mean collisions by t = 1: {:.3}", collisions as f64 / samples as f64);

    // The hot tagged particle relaxes toward the background temperature.
    let grid = PhaseGrid::velocity_only(3, 1.5)?;
    for t in [0.0, 0.5, 1.0] {
        let hist = empirical_marginal(&trajectories, t, &grid)?;
        let energy: f64 = trajectories.iter().map(|s| s.at(t).unwrap().v.norm_sq()).sum::<f64>() / samples as f64;
        println!(
            "t = {t}: E|v|^2 = {energy:.3}, mass in the central velocity box {:.3}",
            hist.mass[13]
        );
    }
    Ok(())
}
