//! The idealized jump process and the grid solver of the linear Boltzmann
//! equation it samples, compared on a velocity histogram.

use rayleigh::grid::{grid_boltzmann_solve, SolveOptions, VelocityGrid};
use rayleigh::histogram::l1_distance;
use rayleigh::ideal::{sample_indexed, tree_marginal, JumpProcessConfig, SamplerStats};
use rayleigh::kinetics::{Density, InitialLaw, SpatialProfile};

fn main() -> rayleigh::Result<()> {
    let g0 = Density::maxwellian(1.0)?;
    let f0 = Density::maxwellian(0.25)?;
    let cfg = JumpProcessConfig::new(1.0, 1.0, InitialLaw::uniform(f0.clone()), g0.clone())?;

    let mut stats = SamplerStats::default();
    let trees: Vec<_> = (0..20_000)
        .map(|i| {
            let (tree, s) = sample_indexed(&cfg, 1, i).unwrap();
            stats.merge(&s);
            tree
        })
        .collect();
    let mean_n = trees.iter().map(|t| t.n()).sum::<usize>() as f64 / trees.len() as f64;
    println!(
        "mean collisions {mean_n:.3}, post-collision acceptance {:.3}",
        stats.post_acceptance()
    );

    let grid = VelocityGrid::for_maxwellian(0.25, 5.0, 12)?;
    let sol = grid_boltzmann_solve(
        &SpatialProfile::Uniform,
        &f0,
        &g0,
        1.0,
        &[0.5, 1.0],
        grid,
        &SolveOptions::default(),
    )?;
    let boxes = grid.phase_grid(3)?;
    for (ti, t) in [0.5, 1.0].into_iter().enumerate() {
        let sampled = tree_marginal(&trees, t, &boxes)?;
        let l1 = l1_distance(&sampled.mass, &sol.histogram(ti, &boxes))?;
        println!(
            "t = {t}: L1(sampler, solver) = {l1:.4} over {} boxes, solver mass {:.12}",
            boxes.len(),
            sol.mass(ti)
        );
    }
    Ok(())
}
