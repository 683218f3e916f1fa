//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and a
//! summary. With `ACCEPTANCE_STRICT` set, any failed criterion makes the run
//! exit non-zero.

use std::f64::consts::PI;
use std::io::Write;
use std::time::Instant;

use rand::Rng;
use rayleigh::bounds::{exclusion_mass, plan_scaling, rho_hat, rho_hat_closed_form, ALPHA_MAX};
use rayleigh::grid::{grid_boltzmann_solve, SolveOptions, VelocityGrid};
use rayleigh::harness::{compute, log_log_slope, ExperimentKind, ExperimentSpec};
use rayleigh::histogram::{l1_distance, Histogram, PhaseGrid};
use rayleigh::hydro::{build_operator, diffusive_compare, heat_from_profile, kappa, kinetic_solve, KAPPA_RESIDUAL_TOL};
use rayleigh::ideal::{sample_indexed, uniform_direction, JumpProcessConfig};
use rayleigh::kinetics::{collide, CollisionMarker, Density, InitialLaw, PhasePoint, SpatialProfile};
use rayleigh::rng::sample_rng;
use rayleigh::sim::{count_overlaps, simulate_one, SimConfig};
use rayleigh::tree::{ClassifyParams, CollisionTree};
use rayleigh::Vec3;
use statrs::distribution::{ContinuousCDF, Normal};

type Outcome = Result<(bool, String), rayleigh::Error>;
type Criterion = (&'static str, fn() -> Outcome);

fn gaussian<R: Rng>(rng: &mut R) -> Vec3 {
    Density::maxwellian(1.0).unwrap().sample(rng)
}

fn conservation() -> Outcome {
    let mut rng = sample_rng(1, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..1_000_000 {
        let (v, w) = (gaussian(&mut rng) * 2.0, gaussian(&mut rng));
        let nu = uniform_direction(&mut rng);
        let (a, b) = collide(v, w, nu)?;
        let dp = ((a + b) - (v + w)).max_abs();
        let de = (a.norm_sq() + b.norm_sq() - v.norm_sq() - w.norm_sq()).abs();
        worst = worst.max(dp).max(de);
    }
    Ok((
        worst <= 1e-12,
        format!("worst momentum/energy defect {worst:.3e} over 1e6 collisions"),
    ))
}

fn overlap_law() -> Outcome {
    let (n, eps, configs) = (100_000usize, 0.01f64, 10_000u64);
    let vol = 4.0 / 3.0 * PI * eps.powi(3);
    let exact = (n as f64 * (-vol).ln_1p()).exp();
    let free = (0..configs)
        .filter(|&i| {
            let mut rng = sample_rng(2, i);
            let x = Vec3::new(rng.gen(), rng.gen(), rng.gen());
            count_overlaps(x, n, eps, &mut rng) == 0
        })
        .count() as f64
        / configs as f64;
    let se = (exact * (1.0 - exact) / configs as f64).sqrt();
    let z = (free - exact) / se;
    Ok((
        z.abs() <= 3.0,
        format!("no-overlap frequency {free:.4} vs {exact:.6} ({z:+.2} s.e.)"),
    ))
}

fn sampler_vs_solver() -> Outcome {
    let g0 = Density::maxwellian(1.0)?;
    let grid = VelocityGrid::for_maxwellian(1.0, 6.0, 15)?;
    let cfg = JumpProcessConfig::new(1.0, 1.0, InitialLaw::uniform(g0.clone()), g0.clone())?;
    let samples = 100_000u64;
    let pts: Vec<PhasePoint> = (0..samples)
        .map(|i| Ok(sample_indexed(&cfg, 3, i)?.0.tagged_state_at(1.0)))
        .collect::<Result<_, rayleigh::Error>>()?;
    let boxes = grid.phase_grid(1)?;
    let hist = Histogram::from_points(&boxes, &pts)?;
    let sol = grid_boltzmann_solve(
        &SpatialProfile::Uniform,
        &g0,
        &g0,
        1.0,
        &[1.0],
        grid,
        &SolveOptions::default(),
    )?;
    let reference = sol.histogram(0, &boxes);
    let l1 = l1_distance(&hist.mass, &reference)?;
    let floor: f64 = reference
        .iter()
        .map(|p| (2.0 * p.max(0.0) / (PI * samples as f64)).sqrt())
        .sum();
    Ok((
        l1 < 0.05,
        format!("L1 {l1:.4} on 15^3 cells (sampling-noise level {floor:.4})"),
    ))
}

/// Box probabilities of `unif × M_1` on `[0,½)∪[½,1)` × `{v1 < -a, |v1| ≤ a, v1 > a}`.
fn stationary_boxes(a: f64) -> (PhaseGrid, Vec<f64>) {
    let grid = PhaseGrid::new([2, 1, 1], [vec![-a, a], vec![], vec![]]).unwrap();
    let phi = Normal::new(0.0, 1.0).unwrap();
    let lo = phi.cdf(-a);
    let v = [lo, 1.0 - 2.0 * lo, lo];
    let mut p = vec![0.0; grid.len()];
    for (idx, slot) in p.iter_mut().enumerate() {
        let probe = grid.center(idx);
        let k = if probe.1[0] < -a {
            0
        } else if probe.1[0] > a {
            2
        } else {
            1
        };
        *slot = 0.5 * v[k];
    }
    (grid, p)
}

fn worst_z(hist: &Histogram, p: &[f64], samples: usize) -> f64 {
    hist.mass
        .iter()
        .zip(p)
        .map(|(m, p)| (m - p).abs() / (p * (1.0 - p) / samples as f64).sqrt())
        .fold(0.0, f64::max)
}

fn stationarity() -> Outcome {
    let g0 = Density::maxwellian(1.0)?;
    let f0 = InitialLaw::uniform(g0.clone());
    let (grid, p) = stationary_boxes(0.7);

    let ideal_n = 100_000;
    let cfg = JumpProcessConfig::new(1.0, 1.0, f0.clone(), g0.clone())?;
    let pts: Vec<PhasePoint> = (0..ideal_n as u64)
        .map(|i| Ok(sample_indexed(&cfg, 4, i)?.0.tagged_state_at(1.0)))
        .collect::<Result<_, rayleigh::Error>>()?;
    let z_ideal = worst_z(&Histogram::from_points(&grid, &pts)?, &p, ideal_n);

    let sim_n = 30_000;
    let cfg = SimConfig::boltzmann_grad(10_000, 1.0, 1.0, f0, g0)?;
    let pts: Vec<PhasePoint> = (0..sim_n as u64)
        .map(|i| Ok(simulate_one(&cfg, 4, i)?.0.trajectory.states[0]))
        .collect::<Result<_, rayleigh::Error>>()?;
    let z_sim = worst_z(&Histogram::from_points(&grid, &pts)?, &p, sim_n);
    Ok((
        z_ideal <= 3.0 && z_sim <= 3.0,
        format!("largest box deviation: sampler {z_ideal:.2} s.e. ({ideal_n} trees), particles N=1e4 {z_sim:.2} s.e. ({sim_n} runs)"),
    ))
}

fn bound_audit() -> Outcome {
    let mut spec = ExperimentSpec::default_for(ExperimentKind::BoundAudit);
    spec.seed = 5;
    spec.sweep.c = vec![0.5, 1.0, 2.0];
    spec.sweep.n = vec![10_000];
    spec.params.samples = 100_000;
    spec.params.times = vec![0.5, 1.0, 2.0];
    let report = compute(&spec)?;
    let table = report.table("bounds").expect("bounds table");
    let terms = table.column("implied_constant").unwrap_or_default();
    let mut worst: std::collections::BTreeMap<String, f64> = Default::default();
    let names: Vec<String> = table.rows.iter().map(|r| r[0].render()).collect();
    for (name, k) in names.iter().zip(&terms) {
        let e = worst.entry(name.clone()).or_insert(0.0);
        *e = e.max(*k);
    }
    let failed: Vec<String> = report
        .checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{} ({})", c.name, c.detail))
        .collect();
    let summary: Vec<String> = worst.iter().map(|(k, v)| format!("{k} {v:.3e}")).collect();
    Ok((
        failed.is_empty(),
        format!(
            "largest implied constants: {}{}",
            summary.join(", "),
            if failed.is_empty() {
                String::new()
            } else {
                format!("; exceeded: {}", failed.join("; "))
            }
        ),
    ))
}

fn boltzmann_grad_trend() -> Outcome {
    let mut spec = ExperimentSpec::default_for(ExperimentKind::BgConvergence);
    spec.seed = 6;
    spec.sweep.n = vec![1_000, 10_000, 100_000];
    spec.sweep.c = vec![1.0];
    spec.params.samples = 100_000;
    spec.params.beta = 16.0;
    spec.params.tagged_beta = None;
    spec.params.amplitude = 1.0;
    spec.params.x_bins = [4, 1, 1];
    spec.params.grid_n = 20;
    spec.params.v_cuts = Some([vec![], vec![], vec![]]);
    let report = compute(&spec)?;
    let table = report.table("convergence").expect("convergence table");
    let l1 = table.column("l1").unwrap_or_default();
    let eps = table.column("eps").unwrap_or_default();
    let slope = log_log_slope(&eps, &l1);
    let decreasing = l1.windows(2).all(|w| w[1] < w[0]);
    // Mean L1 of pure sampling noise on four boxes of mass ≈ ¼.
    let floor = 4.0 * (2.0 * 0.25 * 0.75 / (PI * spec.params.samples as f64)).sqrt();
    Ok((
        decreasing && slope > 0.0,
        format!("L1 at N=1e3,1e4,1e5: {l1:.5?}, slope vs eps {slope:.3}, sampling-noise level {floor:.5}"),
    ))
}

fn planner() -> Outcome {
    let mut worst_identity: f64 = 0.0;
    let mut worst_spread: f64 = 0.0;
    for &eps in &[1e-2, 1e-3, 1e-4, 1e-5, 1e-6] {
        for &alpha in &[0.02, 0.06, 0.1, 0.15, 0.2] {
            let c = 1.5;
            let p = plan_scaling(eps, alpha, c)?;
            let lhs = c.powf(84.0 / 103.0) * p.horizon;
            let rhs = eps.powf(52.0 * alpha / 103.0 - 11.0 / 103.0);
            worst_identity = worst_identity.max((lhs / rhs - 1.0).abs());
            let terms = p.balance_terms();
            worst_spread = terms
                .iter()
                .map(|t| (t / terms[0] - 1.0).abs())
                .fold(worst_spread, f64::max);
        }
    }
    let rejects = plan_scaling(1e-3, ALPHA_MAX, 1.0).is_err() && plan_scaling(1e-3, 0.3, 1.0).is_err();
    Ok((
        worst_identity < 1e-9 && worst_spread < 1e-9 && rejects,
        format!(
            "time identity {worst_identity:.2e}, balance spread {worst_spread:.2e}, rejects alpha >= 11/52: {rejects}"
        ),
    ))
}

fn kappa_checks() -> Outcome {
    let mut scaled = Vec::new();
    let mut worst_aniso: f64 = 0.0;
    let mut worst_res: f64 = 0.0;
    let mut doubling: f64 = 0.0;
    for beta in [1.0, 4.0] {
        let mut by_n = Vec::new();
        for n in [8, 16] {
            let op = build_operator(beta, VelocityGrid::for_maxwellian(beta, 5.0, n)?, &Default::default())?;
            let rep = kappa(&op)?;
            worst_aniso = worst_aniso.max(rep.anisotropy());
            worst_res = worst_res.max(rep.residual);
            by_n.push(rep.kappa);
        }
        doubling = doubling.max((by_n[0] / by_n[1] - 1.0).abs());
        scaled.push(by_n[1] * beta.sqrt());
    }
    let spread = (scaled[0] / scaled[1] - 1.0).abs();
    Ok((
        worst_aniso < 1e-4 && spread < 0.02 && doubling < 0.05 && worst_res <= KAPPA_RESIDUAL_TOL,
        format!(
            "kappa sqrt(beta) {:.5} / {:.5}, anisotropy {worst_aniso:.1e}, n=8 vs 16 {:.2}%, residual {worst_res:.1e}",
            scaled[0],
            scaled[1],
            100.0 * doubling
        ),
    ))
}

fn diffusive_trend() -> Outcome {
    let beta = 1.0;
    let op = build_operator(beta, VelocityGrid::for_maxwellian(beta, 5.0, 10)?, &Default::default())?;
    let k = kappa(&op)?.kappa;
    let profile = SpatialProfile::Cosine {
        amplitude: 1.0,
        k: [1, 0, 0],
    };
    let taus = [0.05];
    let heat = heat_from_profile(&profile, k, &taus)?;
    let control = heat_from_profile(&profile, 2.0 * k, &taus)?;
    let mut gaps = Vec::new();
    let mut control_gap = 0.0;
    for c in [5.0, 10.0, 20.0] {
        let kinetic = kinetic_solve(&op, &profile, c, &taus, 0.01)?;
        gaps.push(diffusive_compare(&kinetic, &heat, &op, c)?[0].l1_gap);
        if c == 20.0 {
            control_gap = diffusive_compare(&kinetic, &control, &op, c)?[0].l1_gap;
        }
    }
    let decreasing = gaps.windows(2).all(|w| w[1] < w[0]);
    Ok((
        decreasing && gaps[2] < control_gap,
        format!("gaps at c=5,10,20: {gaps:.4?}; 2 kappa control at c=20: {control_gap:.4}"),
    ))
}

fn recursion_and_exclusion() -> Outcome {
    let mut rng = sample_rng(10, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let eps: f64 = rng.gen_range(1e-6..1.0);
        let n: u32 = rng.gen_range(0..=100);
        let rho0: f64 = rng.gen_range(0.0..10.0);
        let a = rho_hat(eps, n, rho0);
        let b = rho_hat_closed_form(eps, n, rho0);
        worst = worst.max((a - b).abs() / a.abs().max(1e-300));
    }
    let root = PhasePoint::new(Vec3::new(0.5, 0.5, 0.5), Vec3::new(1.0, 0.3, -0.2))?;
    let markers = vec![
        CollisionMarker::new(0.3, Vec3::new(0.0, 1.0, 0.0), Vec3::new(0.2, -0.8, 0.1))?,
        CollisionMarker::new(0.7, Vec3::new(0.6, 0.0, 0.8), Vec3::new(-0.5, 0.1, -0.9))?,
    ];
    let tree = CollisionTree::new(root, markers, 1.0)?;
    let g0 = Density::maxwellian(1.0)?;
    let eps = [0.02, 0.01, 0.005];
    let mut mass = Vec::new();
    let mut good = true;
    for (i, &e) in eps.iter().enumerate() {
        good &= tree.classify(e, &ClassifyParams::default()).good;
        mass.push(exclusion_mass(&tree, &g0, 1.0, e, 20_000, &mut sample_rng(10, 1 + i as u64))?.mean);
    }
    let slope = log_log_slope(&eps, &mass);
    Ok((
        worst <= 1e-12 && good && (1.8..=2.2).contains(&slope),
        format!("recursion vs closed form {worst:.2e}; exclusion slope {slope:.4} (good tree at all eps: {good})"),
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("conservation", conservation),
        ("overlap law", overlap_law),
        ("sampler vs grid solver", sampler_vs_solver),
        ("stationarity", stationarity),
        ("bound audit", bound_audit),
        ("Boltzmann-Grad trend", boltzmann_grad_trend),
        ("scaling planner", planner),
        ("kappa diagnostics", kappa_checks),
        ("diffusive trend", diffusive_trend),
        ("recursion and exclusion", recursion_and_exclusion),
    ];
    let only: Vec<usize> = std::env::var("ACCEPTANCE_ONLY")
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect())
        .unwrap_or_default();
    let mut failures = 0;
    let stdout = std::io::stdout();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let number = i + 1;
        if !only.is_empty() && !only.contains(&number) {
            continue;
        }
        let start = Instant::now();
        let (passed, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
        failures += usize::from(!passed);
        let mut out = stdout.lock();
        writeln!(
            out,
            "{} criterion {number} ({name}): {detail} [{:.1} s]",
            if passed { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        )
        .unwrap();
        out.flush().unwrap();
    }
    let run = if only.is_empty() { criteria.len() } else { only.len() };
    println!("{} of {run} criteria passed", run - failures);
    if failures > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
