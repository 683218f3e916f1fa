//! Experiment configuration, reproducible runs and report files.
//!
//! An [`ExperimentSpec`] is read from a flat TOML file:
//!
//! ```toml
//! kind = "bg-convergence"
//! seed = 7
//! workers = 4
//! output_dir = "out/convergence"
//!
//! [sweep]
//! n = [1000, 10000, 100000]
//! c = [1.0]
//!
//! [params]
//! horizon = 1.0
//! samples = 20000
//! tagged_beta = 0.25
//! ```
//!
//! Every sample draws from its own counter-indexed random stream, so outputs
//! depend only on `(spec, seed)` and not on `workers`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bounds::{bad_tree_bounds, energy_bound, expected_collisions_bound, momentum_bound, plan_scaling};
use crate::error::{Error, Result};
use crate::grid::{grid_boltzmann_solve, SolveOptions, VelocityGrid};
use crate::histogram::{l1_distance, Histogram, PhaseGrid};
use crate::hydro::{build_operator, diffusive_compare, heat_from_profile, kappa, kinetic_solve};
use crate::ideal::{sample_indexed, JumpProcessConfig, SamplerStats};
use crate::kinetics::{Density, InitialLaw, KineticConstants, PhasePoint, SpatialProfile};
use crate::sim::{simulate_one, SimConfig};
use crate::tree::{write_ndjson, ClassifyParams, CollisionTree};

/// Float rendering used in every report: 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Particle simulation: trees and marginals.
    Simulate,
    /// Jump-process sampler: trees and marginals.
    Idealized,
    /// Particle marginals against the grid solver over a sweep in `N`.
    BgConvergence,
    TreeStats,
    BoundAudit,
    Plan,
    Kappa,
    HeatLimit,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Idealized => "idealized",
            Self::BgConvergence => "bg-convergence",
            Self::TreeStats => "tree-stats",
            Self::BoundAudit => "bound-audit",
            Self::Plan => "plan",
            Self::Kappa => "kappa",
            Self::HeatLimit => "heat-limit",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sweep {
    /// Background particle counts. `ε = (c/N)^{1/2}`.
    pub n: Vec<usize>,
    /// Radii, used when `n` is empty. `N = round(c/ε²)` for simulations.
    pub eps: Vec<f64>,
    pub c: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub horizon: f64,
    pub samples: usize,
    /// Output times; empty means `[horizon]`.
    pub times: Vec<f64>,
    /// Inverse temperature of the background Maxwellian.
    pub beta: f64,
    /// Inverse temperature of the tagged velocity law; defaults to `beta`.
    pub tagged_beta: Option<f64>,
    /// Initial position density `1 + amplitude cos(2π mode·x)`.
    pub amplitude: f64,
    pub mode: [i32; 3],
    /// Position boxes per axis.
    pub x_bins: [usize; 3],
    pub v_bins: usize,
    /// Velocity boxes cut `[-v_range, v_range]` per axis.
    pub v_range: f64,
    /// Explicit interior velocity cuts per axis; overrides `v_bins`.
    pub v_cuts: Option<[Vec<f64>; 3]>,
    /// `c` of the particle runs in `bound-audit`.
    pub bad_tree_c: f64,
    pub grid_n: usize,
    /// Velocity grid half-width in units of `1/√β`.
    pub grid_sigmas: f64,
    pub dt: f64,
    /// Diffusive output times for `heat-limit`.
    pub tau: Vec<f64>,
    pub write_trees: bool,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            samples: 1000,
            times: Vec::new(),
            beta: 1.0,
            tagged_beta: None,
            amplitude: 0.0,
            mode: [1, 0, 0],
            x_bins: [1, 1, 1],
            v_bins: 4,
            v_range: 2.0,
            v_cuts: None,
            bad_tree_c: 1.0,
            grid_n: 12,
            grid_sigmas: 5.0,
            dt: 0.01,
            tau: vec![0.05],
            write_trees: false,
        }
    }
}

fn default_workers() -> usize {
    1
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub sweep: Sweep,
    #[serde(default)]
    pub params: Params,
}

impl ExperimentSpec {
    /// A small ready-to-run spec for each kind.
    pub fn default_for(kind: ExperimentKind) -> Self {
        let mut sweep = Sweep::default();
        let mut params = Params::default();
        match kind {
            ExperimentKind::Simulate => sweep.n = vec![1000],
            ExperimentKind::BgConvergence => {
                sweep.n = vec![100, 1000];
                params.tagged_beta = Some(0.25);
            }
            ExperimentKind::Idealized | ExperimentKind::TreeStats => sweep.c = vec![1.0],
            ExperimentKind::BoundAudit => {
                sweep.c = vec![1.0];
                sweep.n = vec![1000];
                sweep.alpha = vec![0.1];
                params.times = vec![0.5, 1.0];
            }
            ExperimentKind::Plan => {
                sweep.eps = vec![1e-3];
                sweep.alpha = vec![0.1];
                sweep.c = vec![1.0];
            }
            ExperimentKind::Kappa => {
                sweep.beta = vec![1.0];
                params.grid_n = 10;
            }
            ExperimentKind::HeatLimit => {
                sweep.c = vec![5.0, 10.0, 20.0];
                params.amplitude = 1.0;
                params.grid_n = 8;
            }
        }
        Self {
            kind,
            seed: 0,
            workers: 1,
            output_dir: default_output(),
            sweep,
            params,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("spec does not serialise to TOML: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        // TOML integers are signed 64-bit.
        if i64::try_from(self.seed).is_err() {
            return Err(Error::Config(format!(
                "seed must be at most {}, got {}",
                i64::MAX,
                self.seed
            )));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        if !(p.horizon > 0.0 && p.horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be > 0, got {}", p.horizon)));
        }
        // Sampler times in a bound audit may run past the particle horizon.
        if self.kind != ExperimentKind::BoundAudit && p.times.iter().any(|t| !(0.0..=p.horizon).contains(t)) {
            return Err(Error::Config("output times must lie in [0, horizon]".into()));
        }
        if !(p.beta > 0.0) || p.tagged_beta.is_some_and(|b| !(b > 0.0)) {
            return Err(Error::Config("inverse temperatures must be > 0".into()));
        }
        if p.x_bins.contains(&0) || p.v_bins == 0 || p.grid_n < 2 {
            return Err(Error::Config("bin counts must be positive and grid_n >= 2".into()));
        }
        if p.amplitude.abs() > 1.0 {
            return Err(Error::Config(format!(
                "amplitude must lie in [-1, 1], got {}",
                p.amplitude
            )));
        }
        let s = &self.sweep;
        let need = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "{} needs a non-empty sweep.{what}",
                    self.kind.name()
                )))
            }
        };
        match self.kind {
            ExperimentKind::Simulate | ExperimentKind::BgConvergence => {
                need(!s.n.is_empty() || !s.eps.is_empty(), "n or sweep.eps")?;
                if !s.n.is_empty() && !s.eps.is_empty() {
                    return Err(Error::Config("give sweep.n or sweep.eps, not both".into()));
                }
                if s.c.len() > 1 {
                    return Err(Error::Config("simulation sweeps take a single c".into()));
                }
            }
            ExperimentKind::Plan => {
                need(!s.eps.is_empty(), "eps")?;
                need(!s.alpha.is_empty(), "alpha")?;
            }
            ExperimentKind::HeatLimit => need(!s.c.is_empty(), "c")?,
            _ => {}
        }
        if matches!(
            self.kind,
            ExperimentKind::Simulate
                | ExperimentKind::Idealized
                | ExperimentKind::BgConvergence
                | ExperimentKind::TreeStats
                | ExperimentKind::BoundAudit
        ) && p.samples == 0
        {
            return Err(Error::EmptySamples);
        }
        Ok(())
    }

    fn c_values(&self) -> Vec<f64> {
        if self.sweep.c.is_empty() {
            vec![1.0]
        } else {
            self.sweep.c.clone()
        }
    }

    /// `(N, ε, c)` triples on the Boltzmann-Grad line.
    pub fn sim_points(&self) -> Vec<(usize, f64, f64)> {
        let c = self.c_values()[0];
        if !self.sweep.n.is_empty() {
            self.sweep.n.iter().map(|&n| (n, (c / n as f64).sqrt(), c)).collect()
        } else {
            self.sweep
                .eps
                .iter()
                .map(|&e| {
                    let n = (c / (e * e)).round() as usize;
                    (n, e, c)
                })
                .collect()
        }
    }

    fn output_times(&self) -> Vec<f64> {
        if self.params.times.is_empty() {
            vec![self.params.horizon]
        } else {
            self.params.times.clone()
        }
    }

    fn background(&self) -> Result<Density> {
        Density::maxwellian(self.params.beta)
    }

    fn initial_law(&self) -> Result<InitialLaw> {
        let p = &self.params;
        Ok(InitialLaw {
            position: self.profile(),
            velocity: Density::maxwellian(p.tagged_beta.unwrap_or(p.beta))?,
        })
    }

    fn profile(&self) -> SpatialProfile {
        if self.params.amplitude == 0.0 {
            SpatialProfile::Uniform
        } else {
            SpatialProfile::Cosine {
                amplitude: self.params.amplitude,
                k: self.params.mode,
            }
        }
    }

    fn phase_grid(&self) -> Result<PhaseGrid> {
        match &self.params.v_cuts {
            Some(cuts) => PhaseGrid::new(self.params.x_bins, cuts.clone()),
            None => PhaseGrid::uniform(self.params.x_bins, self.params.v_bins, self.params.v_range),
        }
    }

    fn velocity_grid(&self, beta: f64) -> Result<VelocityGrid> {
        VelocityGrid::for_maxwellian(beta, self.params.grid_sigmas, self.params.grid_n)
    }

    /// SHA-256 of the canonical JSON form of the spec.
    pub fn content_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("spec serialises to JSON");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// One CSV field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Cell {
    pub fn render(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Float(x) => fmt_f64(*x),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<i32> for Cell {
    fn from(x: i32) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width of table {}", self.name);
        self.rows.push(row);
    }

    /// Float column by name.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(
            self.rows
                .iter()
                .map(|r| match &r[i] {
                    Cell::Float(x) => *x,
                    Cell::Int(k) => *k as f64,
                    Cell::Text(_) => f64::NAN,
                })
                .collect(),
        )
    }
}

/// A named pass/fail assertion embedded in an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

/// Everything an experiment produces before it is written out.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub tables: Vec<Table>,
    pub documents: Vec<(String, serde_json::Value)>,
    pub trees: Vec<(String, Vec<CollisionTree>)>,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }
}

/// Writes `<name>.csv`, `<name>.json` and `<name>.ndjson` files into `dir`
/// and returns their paths in write order.
pub fn emit_report(dir: &Path, report: &Report) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    for t in &report.tables {
        let path = dir.join(format!("{}.csv", t.name));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(&t.columns)?;
        for row in &t.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        w.flush()?;
        files.push(path);
    }
    for (name, doc) in &report.documents {
        let path = dir.join(format!("{name}.json"));
        fs::write(&path, serde_json::to_string_pretty(doc)? + "\n")?;
        files.push(path);
    }
    for (name, trees) in &report.trees {
        let path = dir.join(format!("{name}.ndjson"));
        write_ndjson(std::io::BufWriter::new(fs::File::create(&path)?), trees)?;
        files.push(path);
    }
    Ok(files)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub version: String,
    pub config: ExperimentSpec,
    pub config_sha256: String,
    pub seed: u64,
    pub seed_scheme: String,
    pub files: Vec<String>,
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: Report,
    pub manifest: Manifest,
    pub files: Vec<PathBuf>,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.manifest.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.manifest.checks.iter().filter(|c| !c.passed).collect()
    }
}

/// Runs the experiment on a pool of `spec.workers` threads and writes the
/// report and `manifest.json` into `spec.output_dir`.
pub fn run(spec: &ExperimentSpec) -> Result<RunOutcome> {
    let report = compute(spec)?;
    let mut files = emit_report(&spec.output_dir, &report)?;
    let manifest = Manifest {
        kind: spec.kind.name().to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: spec.clone(),
        config_sha256: spec.content_hash(),
        seed: spec.seed,
        seed_scheme: "sample i draws from ChaCha8 seeded with the master seed, stream i".into(),
        files: files
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect(),
        checks: report.checks.clone(),
    };
    let path = spec.output_dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    files.push(path);
    Ok(RunOutcome {
        report,
        manifest,
        files,
    })
}

/// Runs the experiment without touching the file system.
pub fn compute(spec: &ExperimentSpec) -> Result<Report> {
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(|| match spec.kind {
        ExperimentKind::Simulate => simulate(spec),
        ExperimentKind::Idealized => idealized(spec),
        ExperimentKind::BgConvergence => bg_convergence(spec),
        ExperimentKind::TreeStats => tree_stats(spec),
        ExperimentKind::BoundAudit => bound_audit(spec),
        ExperimentKind::Plan => plan(spec),
        ExperimentKind::Kappa => kappa_report(spec),
        ExperimentKind::HeatLimit => heat_limit(spec),
    })
}

fn marginal_table() -> Table {
    Table::new(
        "marginal",
        &["source", "n", "c", "t", "x1", "x2", "x3", "v1", "v2", "v3", "mass"],
    )
}

fn push_marginal(table: &mut Table, n: usize, c: f64, t: f64, hist: &Histogram) {
    for (idx, &mass) in hist.mass.iter().enumerate() {
        let (x, v) = hist.grid.center(idx);
        table.push(vec![
            Cell::from(if n == 0 { "idealized" } else { "particles" }),
            n.into(),
            c.into(),
            t.into(),
            x[0].into(),
            x[1].into(),
            x[2].into(),
            v[0].into(),
            v[1].into(),
            v[2].into(),
            mass.into(),
        ]);
    }
}

struct ParticleRuns {
    trees: Vec<CollisionTree>,
    /// `states[t][sample]`.
    states: Vec<Vec<PhasePoint>>,
    redraws: u64,
    skipped_touches: u64,
}

fn particle_runs(spec: &ExperimentSpec, n: usize, c: f64, keep_trees: bool) -> Result<ParticleRuns> {
    let mut cfg = SimConfig::boltzmann_grad(n, c, spec.params.horizon, spec.initial_law()?, spec.background()?)?;
    let times = spec.output_times();
    cfg.output_times = times.clone();
    let runs: Vec<_> = (0..spec.params.samples as u64)
        .into_par_iter()
        .map(|i| {
            let (run, init) = simulate_one(&cfg, spec.seed, i)?;
            let states = run.trajectory.states.clone();
            let tree = keep_trees.then_some(run.tree);
            Ok((tree, states, init.redraws, run.skipped_touches))
        })
        .collect::<Result<_>>()?;
    let mut out = ParticleRuns {
        trees: Vec::new(),
        states: vec![Vec::with_capacity(runs.len()); times.len()],
        redraws: 0,
        skipped_touches: 0,
    };
    for (tree, states, redraws, skipped) in runs {
        out.trees.extend(tree);
        for (slot, s) in out.states.iter_mut().zip(states) {
            slot.push(s);
        }
        out.redraws += redraws;
        out.skipped_touches += skipped;
    }
    Ok(out)
}

fn idealized_runs(spec: &ExperimentSpec, c: f64) -> Result<(Vec<CollisionTree>, SamplerStats)> {
    let horizon = spec.output_times().into_iter().fold(spec.params.horizon, f64::max);
    let cfg = JumpProcessConfig::new(c, horizon, spec.initial_law()?, spec.background()?)?;
    let runs: Vec<_> = (0..spec.params.samples as u64)
        .into_par_iter()
        .map(|i| sample_indexed(&cfg, spec.seed, i))
        .collect::<Result<_>>()?;
    let mut stats = SamplerStats::default();
    let trees = runs
        .into_iter()
        .map(|(t, s)| {
            stats.merge(&s);
            t
        })
        .collect();
    Ok((trees, stats))
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, k) = xs.fold((0.0, 0usize), |(s, k), x| (s + x, k + 1));
    s / k as f64
}

fn simulate(spec: &ExperimentSpec) -> Result<Report> {
    let grid = spec.phase_grid()?;
    let mut report = Report::default();
    let mut marginal = marginal_table();
    let mut stats = Table::new(
        "sim_stats",
        &[
            "n",
            "eps",
            "c",
            "samples",
            "mean_collisions",
            "redraws",
            "skipped_touches",
        ],
    );
    for (n, eps, c) in spec.sim_points() {
        let runs = particle_runs(spec, n, c, true)?;
        for (t, states) in spec.output_times().iter().zip(&runs.states) {
            push_marginal(&mut marginal, n, c, *t, &Histogram::from_points(&grid, states)?);
        }
        stats.push(vec![
            n.into(),
            eps.into(),
            c.into(),
            spec.params.samples.into(),
            mean(runs.trees.iter().map(|t| t.n() as f64)).into(),
            runs.redraws.into(),
            runs.skipped_touches.into(),
        ]);
        report.trees.push((format!("trees_n{n}"), runs.trees));
    }
    report.tables.push(marginal);
    report.tables.push(stats);
    Ok(report)
}

fn idealized(spec: &ExperimentSpec) -> Result<Report> {
    let grid = spec.phase_grid()?;
    let mut report = Report::default();
    let mut marginal = marginal_table();
    let mut stats = Table::new(
        "sampler_stats",
        &[
            "c",
            "samples",
            "mean_collisions",
            "proposals",
            "accepted",
            "post_acceptance",
        ],
    );
    for c in spec.c_values() {
        let (trees, s) = idealized_runs(spec, c)?;
        for t in spec.output_times() {
            let pts: Vec<PhasePoint> = trees.iter().map(|tr| tr.tagged_state_at(t)).collect();
            push_marginal(&mut marginal, 0, c, t, &Histogram::from_points(&grid, &pts)?);
        }
        stats.push(vec![
            c.into(),
            spec.params.samples.into(),
            mean(trees.iter().map(|t| t.n() as f64)).into(),
            s.proposals.into(),
            s.accepted.into(),
            s.post_acceptance().into(),
        ]);
        report.trees.push((format!("trees_c{c}"), trees));
    }
    report.tables.push(marginal);
    report.tables.push(stats);
    Ok(report)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn strictly_decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] < w[0])
}

fn bg_convergence(spec: &ExperimentSpec) -> Result<Report> {
    let grid = spec.phase_grid()?;
    let times = spec.output_times();
    let f0 = spec.initial_law()?;
    let mut points = spec.sim_points();
    points.sort_by_key(|p| p.0);
    let c = points[0].2;
    let reference = grid_boltzmann_solve(
        &f0.position,
        &f0.velocity,
        &spec.background()?,
        c,
        &times,
        spec.velocity_grid(spec.params.beta.min(spec.params.tagged_beta.unwrap_or(f64::INFINITY)))?,
        &SolveOptions {
            dt: spec.params.dt,
            ..SolveOptions::default()
        },
    )?;
    let mut table = Table::new("convergence", &["n", "eps", "c", "t", "samples", "l1"]);
    let mut marginal = marginal_table();
    let mut finals = Vec::new();
    for &(n, eps, c) in &points {
        let runs = particle_runs(spec, n, c, false)?;
        for (ti, t) in times.iter().enumerate() {
            let hist = Histogram::from_points(&grid, &runs.states[ti])?;
            let l1 = l1_distance(&hist.mass, &reference.histogram(ti, &grid))?;
            push_marginal(&mut marginal, n, c, *t, &hist);
            table.push(vec![
                n.into(),
                eps.into(),
                c.into(),
                (*t).into(),
                spec.params.samples.into(),
                l1.into(),
            ]);
            if ti + 1 == times.len() {
                finals.push((eps, l1));
            }
        }
    }
    let mut report = Report::default();
    if finals.len() >= 2 {
        let l1: Vec<f64> = finals.iter().map(|p| p.1).collect();
        let eps: Vec<f64> = finals.iter().map(|p| p.0).collect();
        let slope = log_log_slope(&eps, &l1);
        report.checks.push(Check::new(
            "l1-decreasing-in-n",
            strictly_decreasing(&l1),
            format!("final-time L1 by increasing N: {l1:?}"),
        ));
        report.checks.push(Check::new(
            "l1-slope-positive",
            slope > 0.0,
            format!("log-log slope against eps {slope}"),
        ));
    }
    report.tables.push(table);
    report.tables.push(marginal);
    Ok(report)
}

fn nodes_at(tree: &CollisionTree, t: f64) -> usize {
    1 + tree.markers.iter().filter(|m| m.t <= t).count()
}

fn tree_stats(spec: &ExperimentSpec) -> Result<Report> {
    let mut table = Table::new(
        "tree_stats",
        &[
            "c",
            "t",
            "samples",
            "mean_nodes",
            "nodes_ceiling",
            "mean_energy",
            "mean_speed",
            "collision_free",
            "max_speed",
        ],
    );
    let mut report = Report::default();
    let f0 = spec.initial_law()?;
    let consts = KineticConstants::from_densities(&f0.velocity, &spec.background()?, f64::INFINITY);
    for c in spec.c_values() {
        let (trees, _) = idealized_runs(spec, c)?;
        for t in spec.output_times() {
            let nodes = mean(trees.iter().map(|tr| nodes_at(tr, t) as f64));
            let ceiling = expected_collisions_bound(t, c, &consts);
            let states: Vec<PhasePoint> = trees.iter().map(|tr| tr.tagged_state_at(t)).collect();
            table.push(vec![
                c.into(),
                t.into(),
                trees.len().into(),
                nodes.into(),
                ceiling.into(),
                mean(states.iter().map(|s| 1.0 + s.v.norm_sq())).into(),
                mean(states.iter().map(|s| s.v.norm())).into(),
                mean(trees.iter().map(|tr| (nodes_at(tr, t) == 1) as u8 as f64)).into(),
                trees.iter().map(|tr| tr.max_velocity()).fold(0.0, f64::max).into(),
            ]);
            report.checks.push(Check::new(
                "mean-nodes-below-ceiling",
                nodes <= ceiling,
                format!("c {c} t {t}: {nodes} <= {ceiling}"),
            ));
        }
        if spec.params.write_trees {
            report.trees.push((format!("trees_c{c}"), trees));
        }
    }
    report.tables.insert(0, table);
    Ok(report)
}

fn bound_audit(spec: &ExperimentSpec) -> Result<Report> {
    let f0 = spec.initial_law()?;
    let g0 = spec.background()?;
    let mut table = Table::new("bounds", &["term", "c", "t", "value", "measured", "implied_constant"]);
    let mut report = Report::default();
    let mut push = |table: &mut Table, term: &str, c: f64, t: f64, value: f64, measured: f64| {
        table.push(vec![
            term.into(),
            c.into(),
            t.into(),
            value.into(),
            measured.into(),
            (measured / value).into(),
        ]);
        report.checks.push(Check::new(
            &format!("{term}-within-ceiling"),
            measured <= value,
            format!("c {c} t {t}: measured {measured} ceiling {value}"),
        ));
    };
    let consts = KineticConstants::from_densities(&f0.velocity, &g0, f64::INFINITY);
    for c in spec.c_values() {
        let (trees, _) = idealized_runs(spec, c)?;
        for t in spec.output_times() {
            let states: Vec<PhasePoint> = trees.iter().map(|tr| tr.tagged_state_at(t)).collect();
            let energy = mean(states.iter().map(|s| 1.0 + s.v.norm_sq()));
            let speed = mean(states.iter().map(|s| s.v.norm()));
            let nodes = mean(trees.iter().map(|tr| nodes_at(tr, t) as f64));
            push(&mut table, "energy", c, t, energy_bound(t, c, &consts), energy);
            push(&mut table, "momentum", c, t, momentum_bound(t, c, &consts), speed);
            push(
                &mut table,
                "collisions",
                c,
                t,
                expected_collisions_bound(t, c, &consts),
                nodes,
            );
        }
    }
    let alpha = spec.sweep.alpha.first().copied().unwrap_or(0.1);
    let horizon = spec.params.horizon;
    let c = spec.params.bad_tree_c;
    for &n in &spec.sweep.n {
        let eps = (c / n as f64).sqrt();
        let plan = plan_scaling(eps, alpha, c.max(1.0))?;
        let consts = KineticConstants::from_densities(&f0.velocity, &g0, plan.v_eps);
        let mut inputs = plan.bound_inputs(horizon, consts);
        inputs.horizon = horizon;
        inputs.c = c;
        let ceilings = bad_tree_bounds(&inputs)?;
        // Particle runs only need the final state; sampler times may exceed the horizon.
        let mut sim_spec = spec.clone();
        sim_spec.params.times.clear();
        let runs = particle_runs(&sim_spec, n, c, true)?;
        let params = ClassifyParams::with_caps(plan.m_eps, plan.v_eps);
        let flags: Vec<_> = runs.trees.par_iter().map(|tr| tr.classify(eps, &params)).collect();
        let frac = |f: &dyn Fn(&crate::tree::TreeFlags) -> bool| mean(flags.iter().map(|fl| f(fl) as u8 as f64));
        push(
            &mut table,
            "overlap",
            c,
            horizon,
            ceilings.ov,
            frac(&|f| f.initial_overlap),
        );
        push(
            &mut table,
            "recollision",
            c,
            horizon,
            ceilings.rec,
            frac(&|f| f.recollision),
        );
        push(&mut table, "too-many", c, horizon, ceilings.hi, frac(&|f| f.too_many));
        push(&mut table, "too-fast", c, horizon, ceilings.vel, frac(&|f| f.too_fast));
        push(
            &mut table,
            "bad-trees",
            c,
            horizon,
            ceilings.total(),
            frac(&|f| !f.good),
        );
    }
    report.tables.push(table);
    Ok(report)
}

fn plan(spec: &ExperimentSpec) -> Result<Report> {
    let mut plans = Vec::new();
    let mut report = Report::default();
    for &eps in &spec.sweep.eps {
        for &alpha in &spec.sweep.alpha {
            for c in spec.c_values() {
                let p = plan_scaling(eps, alpha, c)?;
                let terms = p.balance_terms();
                let spread = terms.iter().map(|t| (t / terms[0] - 1.0).abs()).fold(0.0, f64::max);
                report.checks.push(Check::new(
                    "balance-terms-equal",
                    spread < 1e-9,
                    format!("eps {eps} alpha {alpha} c {c}: relative spread {spread:e}"),
                ));
                plans.push(serde_json::to_value(p)?);
            }
        }
    }
    let doc = if plans.len() == 1 {
        plans.pop().unwrap()
    } else {
        serde_json::Value::Array(plans)
    };
    report.documents.push(("plan".into(), doc));
    Ok(report)
}

fn kappa_report(spec: &ExperimentSpec) -> Result<Report> {
    let betas = if spec.sweep.beta.is_empty() {
        vec![spec.params.beta]
    } else {
        spec.sweep.beta.clone()
    };
    let mut report = Report::default();
    let mut docs = Vec::new();
    let mut scaled = Vec::new();
    for beta in betas {
        let op = build_operator(beta, spec.velocity_grid(beta)?, &Default::default())?;
        let rep = kappa(&op)?;
        report.checks.push(Check::new(
            "tensor-isotropic",
            rep.anisotropy() < 1e-4,
            format!("beta {beta}: anisotropy {:e}", rep.anisotropy()),
        ));
        scaled.push(rep.kappa * beta.sqrt());
        let mut doc = serde_json::to_value(&rep)?;
        if let Some(w) = op.warning {
            doc["warning"] = serde_json::Value::String(w);
        }
        docs.push(doc);
    }
    if scaled.len() > 1 {
        let lo = scaled.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = scaled.iter().cloned().fold(0.0, f64::max);
        report.checks.push(Check::new(
            "kappa-sqrt-beta-constant",
            hi / lo - 1.0 < 0.02,
            format!("kappa sqrt(beta) values {scaled:?}"),
        ));
    }
    let doc = if docs.len() == 1 {
        docs.pop().unwrap()
    } else {
        serde_json::Value::Array(docs)
    };
    report.documents.push(("kappa".into(), doc));
    Ok(report)
}

fn heat_limit(spec: &ExperimentSpec) -> Result<Report> {
    let beta = spec.params.beta;
    let op = build_operator(beta, spec.velocity_grid(beta)?, &Default::default())?;
    let k = kappa(&op)?.kappa;
    let profile = spec.profile();
    let taus = &spec.params.tau;
    let heat = heat_from_profile(&profile, k, taus)?;
    let mut table = Table::new("heat_limit", &["c", "tau", "l1_gap", "tail_error"]);
    let mut by_tau: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for c in spec.c_values() {
        let kinetic = kinetic_solve(&op, &profile, c, taus, spec.params.dt)?;
        for (ti, row) in diffusive_compare(&kinetic, &heat, &op, c)?.into_iter().enumerate() {
            table.push(vec![
                row.c.into(),
                row.tau.into(),
                row.l1_gap.into(),
                row.tail_error.into(),
            ]);
            by_tau.entry(ti).or_default().push(row.l1_gap);
        }
    }
    let mut report = Report::default();
    if spec.c_values().windows(2).all(|w| w[0] < w[1]) && spec.c_values().len() > 1 {
        for (ti, gaps) in by_tau {
            report.checks.push(Check::new(
                "gap-decreasing-in-c",
                strictly_decreasing(&gaps),
                format!("tau {}: gaps {gaps:?}", taus[ti]),
            ));
        }
    }
    report.tables.push(table);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_have_seventeen_significant_digits_and_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02e23, 0.0] {
            let s = fmt_f64(x);
            let mantissa = s.split('e').next().unwrap().trim_start_matches('-');
            assert_eq!(mantissa.chars().filter(|c| c.is_ascii_digit()).count(), 17, "{s}");
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn spec_parses_from_toml_and_rejects_empty_sweeps() {
        let spec = ExperimentSpec::from_toml_str("kind = \"plan\"\n[sweep]\neps = [1e-3]\nalpha = [0.1]\n").unwrap();
        assert_eq!(spec.kind, ExperimentKind::Plan);
        assert_eq!(spec.workers, 1);
        assert!(ExperimentSpec::from_toml_str("kind = \"plan\"\n").is_err());
        assert!(ExperimentSpec::from_toml_str("kind = \"plan\"\nbogus = 1\n").is_err());
        let back = ExperimentSpec::from_toml_str(&spec.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn sim_points_follow_the_scaling_line() {
        let mut spec = ExperimentSpec::default_for(ExperimentKind::Simulate);
        spec.sweep.n = vec![100, 10_000];
        spec.sweep.c = vec![4.0];
        assert_eq!(spec.sim_points(), vec![(100, 0.2, 4.0), (10_000, 0.02, 4.0)]);
        spec.sweep.n.clear();
        spec.sweep.eps = vec![0.02];
        assert_eq!(spec.sim_points()[0].0, 10_000);
    }

    #[test]
    fn log_log_slope_of_a_power_law() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(1.5)).collect();
        assert!((log_log_slope(&x, &y) - 1.5).abs() < 1e-12);
    }
}
