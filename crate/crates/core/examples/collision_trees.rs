//! Building a collision tree by hand, reconstructing the background particles
//! it implies, and classifying it as good or bad.

use rayleigh::kinetics::{CollisionMarker, PhasePoint};
use rayleigh::tree::{read_ndjson, write_ndjson, ClassifyParams, CollisionTree};
use rayleigh::Vec3;

fn main() -> rayleigh::Result<()> {
    let root = PhasePoint::new(Vec3::new(0.2, 0.5, 0.5), Vec3::new(1.0, 0.0, 0.0))?;
    let tree = CollisionTree::new(
        root,
        vec![
            CollisionMarker::new(0.25, Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 0.0))?,
            CollisionMarker::new(0.6, Vec3::new(0.0, 0.6, 0.8), Vec3::new(0.3, -0.4, -0.2))?,
        ],
        1.0,
    )?;
    println!("{} collisions, velocities along the path:", tree.n());
    for v in tree.tagged_velocities() {
        println!("  {:?}", v.0);
    }

    let eps = 0.01;
    let paths = tree.reconstruct(eps);
    for (j, b) in paths.backgrounds.iter().enumerate() {
        println!("background {j} starts at {:?}", b.x_initial.0);
    }
    println!("tagged state at t = 1: {:?}", tree.tagged_state_at(1.0));
    println!("flags: {:?}", tree.classify(eps, &ClassifyParams::default()));
    println!(
        "with a cap of one collision: good = {}",
        tree.classify(eps, &ClassifyParams::with_caps(1.0, 10.0)).good
    );

    // A head-on collision at rest sends the tagged particle back through the
    // region it came from; a large radius turns that into a recollision.
    println!(
        "recollision at eps = 0.2: {}",
        tree.classify(0.2, &ClassifyParams::default()).recollision
    );

    let mut buf = Vec::new();
    write_ndjson(&mut buf, std::slice::from_ref(&tree))?;
    print!("{}", String::from_utf8_lossy(&buf));
    assert_eq!(read_ndjson(buf.as_slice())?, vec![tree]);
    Ok(())
}
