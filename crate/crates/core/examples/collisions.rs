//! Elastic hard-sphere collisions and the collision rate of a tagged particle
//! in a Maxwellian background.

use rayleigh::ideal::uniform_direction;
use rayleigh::kinetics::{admissibility_report, collide, collision_rate, Density};
use rayleigh::rng::sample_rng;
use rayleigh::Vec3;

fn main() -> rayleigh::Result<()> {
    let v = Vec3::new(1.0, 0.0, 0.0);
    let w = Vec3::new(-0.5, 0.5, 0.0);
    let nu = Vec3::new(1.0, 1.0, 0.0).normalized().unwrap();
    let (v2, w2) = collide(v, w, nu)?;
    println!("before  v = {:?}  w = {:?}", v.0, w.0);
    println!("after   v = {:?}  w = {:?}", v2.0, w2.0);
    println!("momentum change {:.1e}", ((v2 + w2) - (v + w)).max_abs());

    let mut rng = sample_rng(7, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let g = Density::maxwellian(1.0)?;
        let (a, b) = (g.sample(&mut rng), g.sample(&mut rng));
        let (a2, b2) = collide(a, b, uniform_direction(&mut rng))?;
        worst = worst.max((a2.norm_sq() + b2.norm_sq() - a.norm_sq() - b.norm_sq()).abs());
    }
    println!("largest energy defect over 1e4 random collisions: {worst:.1e}");

    for beta in [0.5, 1.0, 4.0] {
        let g0 = Density::maxwellian(beta)?;
        let rates: Vec<String> = [0.0, 1.0, 3.0]
            .iter()
            .map(|&s| format!("{:.4}", collision_rate(Vec3::new(s, 0.0, 0.0), &g0).unwrap()))
            .collect();
        println!("beta {beta}: lambda(|v| = 0, 1, 3) = {}", rates.join(", "));
    }

    let report = admissibility_report(&Density::maxwellian(0.5)?, &Density::maxwellian(1.0)?);
    println!("admissible initial data: {}", report.admissible());
    Ok(())
}
