use proptest::prelude::*;
use rayleigh::bounds::{rho_hat, rho_hat_closed_form};
use rayleigh::harness::{compute, fmt_f64, ExperimentKind, ExperimentSpec};
use rayleigh::histogram::l1_distance;
use rayleigh::kinetics::{collide, torus_displacement, wrap_position, CollisionMarker, PhasePoint};
use rayleigh::tree::{read_ndjson, write_ndjson, CollisionTree};
use rayleigh::Vec3;

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(a, b, c)| Vec3::new(a, b, c))
}

fn unit() -> impl Strategy<Value = Vec3> {
    vec3(1.0).prop_filter_map("non-zero", |v| (v.norm() > 1e-3).then(|| v.normalized()).flatten())
}

fn point() -> impl Strategy<Value = Vec3> {
    (0.0..1.0, 0.0..1.0, 0.0..1.0).prop_map(|(a, b, c)| Vec3::new(a, b, c))
}

proptest! {
    #[test]
    fn collisions_conserve_momentum_and_energy(v in vec3(10.0), w in vec3(10.0), nu in unit()) {
        let (a, b) = collide(v, w, nu).unwrap();
        let scale = 1.0 + v.norm_sq() + w.norm_sq();
        prop_assert!(((a + b) - (v + w)).max_abs() <= 1e-12 * scale);
        prop_assert!((a.norm_sq() + b.norm_sq() - v.norm_sq() - w.norm_sq()).abs() <= 1e-12 * scale);
    }

    #[test]
    fn collisions_are_involutive(v in vec3(5.0), w in vec3(5.0), nu in unit()) {
        let (a, b) = collide(v, w, nu).unwrap();
        let (v2, w2) = collide(a, b, nu).unwrap();
        prop_assert!((v2 - v).max_abs() < 1e-12 && (w2 - w).max_abs() < 1e-12);
    }

    #[test]
    fn l1_obeys_the_triangle_inequality(
        x in prop::collection::vec(0.0..1.0f64, 8),
        y in prop::collection::vec(0.0..1.0f64, 8),
        z in prop::collection::vec(0.0..1.0f64, 8),
    ) {
        let d = |a: &[f64], b: &[f64]| l1_distance(a, b).unwrap();
        prop_assert!(d(&x, &z) <= d(&x, &y) + d(&y, &z) + 1e-12);
        prop_assert_eq!(d(&x, &x), 0.0);
        prop_assert!((d(&x, &y) - d(&y, &x)).abs() < 1e-15);
    }

    #[test]
    fn recursion_matches_closed_form(eps in 1e-9..1.0f64, n in 0u32..=100, rho0 in 0.0..100.0f64) {
        let a = rho_hat(eps, n, rho0);
        let b = rho_hat_closed_form(eps, n, rho0);
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300), "{} vs {}", a, b);
    }

    #[test]
    fn torus_displacement_is_the_shortest_image(a in point(), b in point()) {
        let d = torus_displacement(a, b);
        prop_assert!(d.max_abs() <= 0.5 + 1e-15);
        let back = wrap_position(a + d);
        prop_assert!(torus_displacement(back, b).max_abs() < 1e-12);
    }

    #[test]
    fn floats_round_trip_through_text(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
        prop_assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn config_hash_tracks_every_field(seed in 0..=i64::MAX as u64, other in 0..=i64::MAX as u64, samples in 1usize..10_000) {
        let mut a = ExperimentSpec::default_for(ExperimentKind::Idealized);
        a.seed = seed;
        a.params.samples = samples;
        let mut b = a.clone();
        prop_assert_eq!(a.content_hash(), b.content_hash());
        b.seed = other;
        prop_assert_eq!(a.content_hash() == b.content_hash(), seed == other);
        let back = ExperimentSpec::from_toml_str(&a.to_toml_string().unwrap()).unwrap();
        prop_assert_eq!(back.content_hash(), a.content_hash());
        a.seed = i64::MAX as u64 + 1 + seed % 1000;
        prop_assert!(a.validate().is_err());
    }

    #[test]
    fn trees_round_trip_through_ndjson(x in point(), v in vec3(3.0), t in 0.01..0.99f64, nu in unit(), w in vec3(3.0)) {
        let tree = CollisionTree::new(PhasePoint::new(x, v).unwrap(), vec![CollisionMarker::new(t, nu, w).unwrap()], 1.0).unwrap();
        let mut buf = Vec::new();
        write_ndjson(&mut buf, std::slice::from_ref(&tree)).unwrap();
        prop_assert_eq!(read_ndjson(buf.as_slice()).unwrap(), vec![tree]);
    }
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let mut spec = ExperimentSpec::default_for(ExperimentKind::Simulate);
    spec.sweep.n = vec![300];
    spec.params.samples = 40;
    spec.params.times = vec![0.5, 1.0];
    let one = compute(&spec).unwrap();
    spec.workers = 3;
    let three = compute(&spec).unwrap();
    assert_eq!(one.tables, three.tables);
    assert_eq!(one.trees, three.trees);

    let mut spec = ExperimentSpec::default_for(ExperimentKind::Idealized);
    spec.params.samples = 500;
    let one = compute(&spec).unwrap();
    spec.workers = 4;
    assert_eq!(one.tables, compute(&spec).unwrap().tables);
}

#[test]
fn written_reports_reproduce_the_computed_tables() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = ExperimentSpec::default_for(ExperimentKind::TreeStats);
    spec.output_dir = dir.path().to_path_buf();
    spec.params.samples = 300;
    spec.params.times = vec![0.25, 1.0];
    let outcome = rayleigh::harness::run(&spec).unwrap();
    let table = outcome.report.table("tree_stats").unwrap();

    let mut reader = csv::Reader::from_path(dir.path().join("tree_stats.csv")).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, table.columns);
    let col = header.iter().position(|h| h == "mean_nodes").unwrap();
    let read: Vec<f64> = reader.records().map(|r| r.unwrap()[col].parse().unwrap()).collect();
    assert_eq!(read, table.column("mean_nodes").unwrap());

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_sha256"], spec.content_hash());
    assert_eq!(manifest["seed"], spec.seed);
}
