//! Event-driven simulation of one tagged sphere among `N` free background
//! spheres on the unit torus.
//!
//! Background particles never meet each other; only tagged/background
//! contacts are events. The next event is found by scanning all background
//! particles inside a look-ahead window that doubles until a contact shows up
//! or the horizon is reached.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::contact::first_contact;
use crate::error::{Error, Result};
use crate::histogram::{Histogram, PhaseGrid};
use crate::kinetics::{
    collide_unchecked, minimum_image, torus_displacement, torus_distance, wrap_position, CollisionMarker, Density,
    InitialLaw, PhasePoint,
};
use crate::tree::CollisionTree;
use crate::vec3::Vec3;

/// Closing speeds below this are treated as tangential touches, not
/// collisions.
pub const MIN_CLOSING_SPEED: f64 = 1e-12;

const MAX_REDRAWS: u64 = 1_000_000;

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n: usize,
    pub eps: f64,
    pub horizon: f64,
    pub f0: InitialLaw,
    pub g0: Density,
    /// Times at which the tagged state is recorded, in `[0, horizon]`.
    pub output_times: Vec<f64>,
    pub max_events: u64,
}

impl SimConfig {
    /// Configuration on the Boltzmann-Grad line `N ε² = c`.
    pub fn boltzmann_grad(n: usize, c: f64, horizon: f64, f0: InitialLaw, g0: Density) -> Result<Self> {
        if n == 0 || !(c > 0.0) {
            return Err(Error::Config(format!("need N > 0 and c > 0, got N = {n}, c = {c}")));
        }
        let cfg = Self {
            n,
            eps: (c / n as f64).sqrt(),
            horizon,
            f0,
            g0,
            output_times: vec![horizon],
            max_events: 1_000_000,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 0.25) {
            return Err(Error::Config(format!("radius must lie in (0, 1/4), got {}", self.eps)));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::Config(format!("horizon must be > 0, got {}", self.horizon)));
        }
        if self.output_times.iter().any(|&t| !(0.0..=self.horizon).contains(&t)) {
            return Err(Error::Config("output times must lie in [0, horizon]".into()));
        }
        Ok(())
    }

    /// `c = N ε²`.
    pub fn c(&self) -> f64 {
        self.n as f64 * self.eps * self.eps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub tagged: PhasePoint,
    pub background: Vec<PhasePoint>,
    pub time: f64,
}

impl SystemState {
    fn advance_tagged(&mut self, dt: f64) {
        self.tagged.x = wrap_position(self.tagged.x + self.tagged.v * dt);
        self.time += dt;
    }

    fn sync_background(&mut self, lag: f64) {
        for b in &mut self.background {
            b.x = wrap_position(b.x + b.v * lag);
        }
    }

    /// Smallest tagged/background distance in the current configuration.
    pub fn min_separation(&self) -> f64 {
        self.background
            .iter()
            .map(|b| torus_distance(self.tagged.x, b.x))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InitStats {
    /// Background particles whose first unconditioned draw overlapped the
    /// tagged sphere.
    pub overlaps: usize,
    pub redraws: u64,
}

/// Number of `n` independent uniform centres that land within `eps` of `x`.
/// The count for one draw decides whether an unconditioned configuration is
/// overlap-free.
pub fn count_overlaps<R: Rng + ?Sized>(x: Vec3, n: usize, eps: f64, rng: &mut R) -> usize {
    let eps2 = eps * eps;
    (0..n)
        .filter(|_| {
            let y = Vec3::new(rng.gen(), rng.gen(), rng.gen());
            torus_displacement(x, y).norm_sq() <= eps2
        })
        .count()
}

/// Draws the initial configuration conditioned on no overlap with the tagged
/// sphere.
pub fn init_configuration<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Result<(SystemState, InitStats)> {
    cfg.validate()?;
    let tagged = cfg.f0.sample(rng);
    let mut stats = InitStats::default();
    let mut background = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let mut tries = 0u64;
        let x = loop {
            let y = Vec3::new(rng.gen(), rng.gen(), rng.gen());
            if torus_distance(tagged.x, y) > cfg.eps {
                break y;
            }
            if tries == 0 {
                stats.overlaps += 1;
            }
            tries += 1;
            stats.redraws += 1;
            if tries >= MAX_REDRAWS {
                return Err(Error::RejectionFailure {
                    what: "non-overlapping background position".into(),
                    attempts: tries,
                });
            }
        };
        background.push(PhasePoint {
            x,
            v: cfg.g0.sample(rng),
        });
    }
    Ok((
        SystemState {
            tagged,
            background,
            time: 0.0,
        },
        stats,
    ))
}

/// Tagged states recorded at the configured output times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub times: Vec<f64>,
    pub states: Vec<PhasePoint>,
}

impl TrajectorySample {
    pub fn at(&self, t: f64) -> Option<&PhasePoint> {
        self.times.iter().position(|&s| s == t).map(|i| &self.states[i])
    }
}

#[derive(Debug, Clone)]
pub struct SimRun {
    pub tree: CollisionTree,
    pub trajectory: TrajectorySample,
    pub state: SystemState,
    /// Tangential touches that were skipped rather than collided.
    pub skipped_touches: u64,
}

struct Candidate {
    index: usize,
    dt: f64,
}

/// `d.round()` through a truncating cast, which is much cheaper than the
/// libm call on baseline x86-64.
#[inline]
fn nearest_integer(d: f64) -> f64 {
    if d.abs() < 1e9 {
        ((d + 1e9 + 0.5) as i64 - 1_000_000_000) as f64
    } else {
        d.round()
    }
}

/// Earliest contact within `remaining`. Time is scanned in consecutive slabs
/// of about one mean free time, so a typical event costs one pass over the
/// background and each particle is screened against a short relative path.
fn next_contact(
    state: &SystemState,
    lag: f64,
    eps: f64,
    remaining: f64,
    ignore: Option<usize>,
    beta1: f64,
) -> Option<Candidate> {
    let vt = state.tagged.v;
    let rate = PI * state.background.len() as f64 * eps * eps * (vt.norm() + beta1);
    let slab = (1.0 / rate).clamp(1e-6, 1.0);
    let mut offset = 0.0;
    while offset < remaining {
        let window = slab.min(remaining - offset);
        // A hair of overlap so a root at a slab edge is not lost to rounding.
        let window_reach = window * (1.0 + 1e-9);
        let xt = state.tagged.x + vt * offset;
        let shift = lag + offset;
        let mut best: Option<Candidate> = None;
        for (i, b) in state.background.iter().enumerate() {
            if Some(i) == ignore {
                continue;
            }
            let reach = best.as_ref().map_or(window_reach, |c| c.dt);
            // Axis-wise screen: no image can close an axis gap wider than
            // ε plus the relative travel along that axis.
            let mut far = false;
            for a in 0..3 {
                let d = b.x[a] + b.v[a] * shift - xt[a];
                if (d - nearest_integer(d)).abs() - (b.v[a] - vt[a]).abs() * reach > eps {
                    far = true;
                    break;
                }
            }
            if far {
                continue;
            }
            let p = (b.x + b.v * shift - xt).map(minimum_image);
            let w = b.v - vt;
            let a = w.norm_sq();
            let travel = a.sqrt() * reach;
            let hit = if travel < 0.5 - eps {
                // Only the nearest image is reachable: solve its entry root.
                let c = p.norm_sq() - eps * eps;
                let bq = p.dot(w);
                if bq >= 0.0 || c < 0.0 {
                    None
                } else {
                    let disc = bq * bq - a * c;
                    let s = c / (-bq + disc.max(0.0).sqrt());
                    (disc >= 0.0 && s > 0.0 && s <= reach).then_some(s)
                }
            } else {
                first_contact(p, w, eps, reach)
            };
            if let Some(s) = hit {
                if best.as_ref().is_none_or(|c| s < c.dt) {
                    best = Some(Candidate { index: i, dt: s });
                }
            }
        }
        if let Some(c) = best {
            let dt = offset + c.dt;
            return (dt <= remaining).then_some(Candidate { index: c.index, dt });
        }
        offset += window;
    }
    None
}

/// Runs the dynamics up to the configured horizon.
pub fn evolve(mut state: SystemState, cfg: &SimConfig) -> Result<SimRun> {
    cfg.validate()?;
    let root = state.tagged;
    let start = state.time;
    let mut outputs: Vec<f64> = cfg.output_times.clone();
    outputs.sort_by(f64::total_cmp);
    let mut next_output = 0;
    let mut trajectory = TrajectorySample {
        times: Vec::with_capacity(outputs.len()),
        states: Vec::with_capacity(outputs.len()),
    };
    let mut markers = Vec::new();
    let mut skipped = 0u64;
    let mut ignore = None;
    let mut events = 0u64;
    let beta1 = cfg.g0.moment(1.0).max(1e-3);
    // Background positions are stored as of `time - lag` and synchronised
    // only when touched, so an event does not cost a pass over all of them.
    let mut lag = 0.0;

    let record_until = |state: &SystemState, t_end: f64, next_output: &mut usize, traj: &mut TrajectorySample| {
        while *next_output < outputs.len() && outputs[*next_output] <= t_end {
            let t = outputs[*next_output];
            traj.times.push(t);
            traj.states.push(PhasePoint {
                x: wrap_position(state.tagged.x + state.tagged.v * (t - state.time)),
                v: state.tagged.v,
            });
            *next_output += 1;
        }
    };

    loop {
        let remaining = cfg.horizon - state.time;
        let found = if remaining > 0.0 {
            next_contact(&state, lag, cfg.eps, remaining, ignore, beta1)
        } else {
            None
        };
        let Some(cand) = found else {
            record_until(&state, cfg.horizon, &mut next_output, &mut trajectory);
            state.advance_tagged(remaining.max(0.0));
            lag += remaining.max(0.0);
            state.sync_background(lag);
            break;
        };
        // Outputs strictly before the event see the pre-collision velocity.
        let t_event = state.time + cand.dt;
        while next_output < outputs.len() && outputs[next_output] < t_event {
            record_until(&state, outputs[next_output], &mut next_output, &mut trajectory);
        }
        state.advance_tagged(cand.dt);
        lag += cand.dt;
        let b = state.background[cand.index];
        let d = torus_displacement(state.tagged.x, b.x + b.v * lag);
        let nu = d / d.norm();
        let v_in = b.v;
        if nu.dot(state.tagged.v - v_in) < MIN_CLOSING_SPEED {
            skipped += 1;
            ignore = Some(cand.index);
            continue;
        }
        ignore = None;
        let (vt, vb) = collide_unchecked(state.tagged.v, v_in, nu);
        state.tagged.v = vt;
        // Re-anchor so that `x + v·lag` is still the current position.
        let slot = &mut state.background[cand.index];
        slot.x += (v_in - vb) * lag;
        slot.v = vb;
        markers.push(CollisionMarker {
            t: state.time - start,
            nu,
            v_in,
        });
        events += 1;
        if events > cfg.max_events {
            return Err(Error::Runaway(cfg.max_events));
        }
    }

    Ok(SimRun {
        tree: CollisionTree {
            root,
            markers,
            horizon: cfg.horizon,
        },
        trajectory,
        state,
        skipped_touches: skipped,
    })
}

/// Box masses of the tagged state at time `t` over a sample set.
pub fn empirical_marginal(samples: &[TrajectorySample], t: f64, grid: &PhaseGrid) -> Result<Histogram> {
    let pts: Vec<&PhasePoint> = samples.iter().filter_map(|s| s.at(t)).collect();
    if pts.len() != samples.len() {
        return Err(Error::Contract(format!(
            "time {t} is not an output time of every sample"
        )));
    }
    Histogram::from_points(grid, pts)
}

/// Seeds one simulation per sample index and runs it.
pub fn simulate_one(cfg: &SimConfig, seed: u64, sample: u64) -> Result<(SimRun, InitStats)> {
    let mut rng = crate::rng::sample_rng(seed, sample);
    let (state, stats) = init_configuration(cfg, &mut rng)?;
    Ok((evolve(state, cfg)?, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetics::SpatialProfile;

    fn one_background(tag: PhasePoint, bg: PhasePoint, horizon: f64) -> (SystemState, SimConfig) {
        let cfg = SimConfig {
            n: 1,
            eps: 0.05,
            horizon,
            f0: InitialLaw::uniform(Density::point_mass(Vec3::ZERO)),
            g0: Density::point_mass(Vec3::ZERO),
            output_times: vec![horizon],
            max_events: 1000,
        };
        (
            SystemState {
                tagged: tag,
                background: vec![bg],
                time: 0.0,
            },
            cfg,
        )
    }

    /// Event search by brute force: earliest entry root over all particles
    /// and the whole remaining horizon, positions advanced eagerly.
    fn brute_force_times(mut state: SystemState, eps: f64, horizon: f64) -> Vec<f64> {
        let mut times = Vec::new();
        let mut ignore = None;
        loop {
            let remaining = horizon - state.time;
            let best = state
                .background
                .iter()
                .enumerate()
                .filter(|(i, _)| Some(*i) != ignore)
                .filter_map(|(i, b)| {
                    first_contact(
                        torus_displacement(state.tagged.x, b.x),
                        b.v - state.tagged.v,
                        eps,
                        remaining,
                    )
                    .map(|s| (i, s))
                })
                .min_by(|a, b| a.1.total_cmp(&b.1));
            let Some((i, dt)) = best else { return times };
            state.tagged.x = wrap_position(state.tagged.x + state.tagged.v * dt);
            for b in &mut state.background {
                b.x = wrap_position(b.x + b.v * dt);
            }
            state.time += dt;
            let b = state.background[i];
            let d = torus_displacement(state.tagged.x, b.x);
            let nu = d / d.norm();
            if nu.dot(state.tagged.v - b.v) < MIN_CLOSING_SPEED {
                ignore = Some(i);
                continue;
            }
            ignore = None;
            let (vt, vb) = collide_unchecked(state.tagged.v, b.v, nu);
            state.tagged.v = vt;
            state.background[i].v = vb;
            times.push(state.time);
        }
    }

    #[test]
    fn event_search_matches_brute_force() {
        let g0 = Density::maxwellian(1.0).unwrap();
        let f0 = InitialLaw::uniform(Density::maxwellian(0.25).unwrap());
        let cfg = SimConfig::boltzmann_grad(400, 2.0, 1.0, f0, g0).unwrap();
        for seed in 0..20 {
            let mut rng = crate::rng::sample_rng(seed, 0);
            let (state, _) = init_configuration(&cfg, &mut rng).unwrap();
            let fast: Vec<f64> = evolve(state.clone(), &cfg)
                .unwrap()
                .tree
                .markers
                .iter()
                .map(|m| m.t)
                .collect();
            let slow = brute_force_times(state, cfg.eps, cfg.horizon);
            // Chaotic divergence only shows up late, so compare the first few.
            let k = fast.len().min(slow.len()).min(5);
            assert!(k >= 1);
            for (a, b) in fast.iter().zip(&slow).take(k) {
                assert!((a - b).abs() < 1e-9, "seed {seed}: {fast:?} vs {slow:?}");
            }
        }
    }

    #[test]
    fn head_on_collision_swaps_velocities() {
        let (state, cfg) = one_background(
            PhasePoint::new(Vec3::new(0.2, 0.5, 0.5), Vec3::new(1.0, 0., 0.)).unwrap(),
            PhasePoint::new(Vec3::new(0.5, 0.5, 0.5), Vec3::new(-1.0, 0., 0.)).unwrap(),
            0.2,
        );
        let run = evolve(state, &cfg).unwrap();
        assert_eq!(run.tree.n(), 1);
        let m = &run.tree.markers[0];
        assert!((m.t - 0.125).abs() < 1e-12);
        assert!((m.nu - Vec3::new(1., 0., 0.)).norm() < 1e-12);
        assert!((run.state.tagged.v - Vec3::new(-1., 0., 0.)).norm() < 1e-12);
        assert!((run.state.background[0].v - Vec3::new(1., 0., 0.)).norm() < 1e-12);
    }

    #[test]
    fn free_flight_without_contact() {
        let (state, cfg) = one_background(
            PhasePoint::new(Vec3::new(0.2, 0.2, 0.2), Vec3::new(0.0, 0., 1.)).unwrap(),
            PhasePoint::new(Vec3::new(0.7, 0.7, 0.7), Vec3::new(0.0, 0., 1.)).unwrap(),
            3.0,
        );
        let run = evolve(state, &cfg).unwrap();
        assert_eq!(run.tree.n(), 0);
        assert!((run.state.tagged.x - Vec3::new(0.2, 0.2, 0.2)).norm() < 1e-12);
    }

    #[test]
    fn separation_stays_above_radius_between_events() {
        let f0 = InitialLaw {
            position: SpatialProfile::Uniform,
            velocity: Density::maxwellian(1.0).unwrap(),
        };
        let mut cfg = SimConfig::boltzmann_grad(400, 1.0, 1.0, f0, Density::maxwellian(1.0).unwrap()).unwrap();
        cfg.output_times = (1..=10).map(|i| i as f64 * 0.1).collect();
        for sample in 0..5 {
            let mut rng = crate::rng::sample_rng(11, sample);
            let (mut state, _) = init_configuration(&cfg, &mut rng).unwrap();
            assert!(state.min_separation() > cfg.eps);
            let mut t = 0.0;
            let step = 0.05;
            let mut step_cfg = cfg.clone();
            step_cfg.output_times = vec![step];
            step_cfg.horizon = step;
            while t < cfg.horizon - 1e-12 {
                let run = evolve(state, &step_cfg).unwrap();
                state = run.state;
                state.time = 0.0;
                assert!(state.min_separation() > cfg.eps * (1.0 - 1e-9));
                t += step;
            }
        }
    }

    #[test]
    fn trajectory_records_every_output_time() {
        let f0 = InitialLaw::uniform(Density::maxwellian(1.0).unwrap());
        let mut cfg = SimConfig::boltzmann_grad(200, 1.0, 1.0, f0, Density::maxwellian(1.0).unwrap()).unwrap();
        cfg.output_times = vec![0.0, 0.5, 1.0];
        let (run, _) = simulate_one(&cfg, 3, 0).unwrap();
        assert_eq!(run.trajectory.times, vec![0.0, 0.5, 1.0]);
        assert_eq!(run.trajectory.states[0], run.tree.root);
        let end = run.tree.tagged_state_at(1.0);
        assert!(torus_distance(end.x, run.trajectory.states[2].x) < 1e-9);
        assert!((end.v - run.trajectory.states[2].v).norm() < 1e-12);
    }
}
