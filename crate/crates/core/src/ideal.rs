//! Exact sampling of the idealized tree measure as a velocity jump process.
//!
//! The tagged particle flies freely and jumps at the instantaneous rate
//! `c λ(v)`. Jump times come from thinning a dominating Poisson clock, and the
//! collision parameters `(ν, v̄)` are drawn from `g0(v̄) [(v - v̄)·ν]₊` by
//! rejection.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::histogram::{Histogram, PhaseGrid};
use crate::kinetics::{collide_unchecked, collision_rate, CollisionMarker, Density, InitialLaw, PhasePoint};
use crate::tree::CollisionTree;
use crate::vec3::Vec3;

/// Consecutive rejections after which post-collision sampling gives up.
pub const MAX_REJECTIONS: u64 = 100_000;

/// Small shift keeping the rejection bound positive when `v = v̄ = 0`.
const REJECTION_SHIFT: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct JumpProcessConfig {
    pub c: f64,
    pub horizon: f64,
    pub f0: InitialLaw,
    pub g0: Density,
    /// The envelope is `c π (|v| + β₁ + slack)`.
    pub envelope_slack: f64,
    beta1: f64,
}

impl JumpProcessConfig {
    pub fn new(c: f64, horizon: f64, f0: InitialLaw, g0: Density) -> Result<Self> {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::Config(format!("rate multiplier must be >= 0, got {c}")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be > 0, got {horizon}")));
        }
        let beta1 = g0.moment(1.0);
        if !beta1.is_finite() {
            return Err(Error::DivergentMoment("E|v| of the background density".into()));
        }
        // λ(v) ≤ π(|v| + E|v̄|) exactly; the slack absorbs quadrature error.
        let envelope_slack = match g0.beta() {
            Some(beta) => 5.0 / beta.sqrt(),
            None => 1e-9 * (1.0 + beta1),
        };
        Ok(Self {
            c,
            horizon,
            f0,
            g0,
            envelope_slack,
            beta1,
        })
    }

    pub fn envelope(&self, v: Vec3) -> f64 {
        self.c * PI * (v.norm() + self.beta1 + self.envelope_slack)
    }

    pub fn beta1(&self) -> f64 {
        self.beta1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SamplerStats {
    pub proposals: u64,
    pub accepted: u64,
    pub envelope_violations: u64,
    /// Proposals made by the post-collision rejection sampler.
    pub post_attempts: u64,
}

impl SamplerStats {
    pub fn merge(&mut self, o: &SamplerStats) {
        self.proposals += o.proposals;
        self.accepted += o.accepted;
        self.envelope_violations += o.envelope_violations;
        self.post_attempts += o.post_attempts;
    }

    /// Fraction of post-collision proposals that were accepted.
    pub fn post_acceptance(&self) -> f64 {
        self.accepted as f64 / self.post_attempts as f64
    }
}

/// Uniform direction on the unit sphere.
pub fn uniform_direction<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    loop {
        let g = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        if let Some(n) = g.normalized() {
            return n;
        }
    }
}

/// Draws `(ν, v̄)` from the density proportional to `g0(v̄) [(v - v̄)·ν]₊`.
/// Returns the pair and the number of proposals used.
pub fn sample_post_collision<R: Rng + ?Sized>(v: Vec3, g0: &Density, rng: &mut R) -> Result<(Vec3, Vec3, u64)> {
    sample_post_collision_with(v, g0, g0.moment(1.0), rng)
}

/// Proposals come from `g0(v̄)(|v| + |v̄|)` with `ν` uniform and are accepted
/// with probability `[(v - v̄)·ν]₊ / (|v| + |v̄| + s)`.
fn sample_post_collision_with<R: Rng + ?Sized>(
    v: Vec3,
    g0: &Density,
    beta1: f64,
    rng: &mut R,
) -> Result<(Vec3, Vec3, u64)> {
    let speed = v.norm();
    let plain = speed / (speed + beta1);
    for attempt in 1..=MAX_REJECTIONS {
        let vb = if beta1 == 0.0 || rng.gen::<f64>() < plain {
            g0.sample(rng)
        } else {
            g0.sample_speed_biased(rng)
        };
        let nu = uniform_direction(rng);
        let closing = (v - vb).dot(nu);
        if closing <= 0.0 {
            continue;
        }
        let bound = speed + vb.norm() + REJECTION_SHIFT;
        if rng.gen::<f64>() * bound < closing {
            return Ok((nu, vb, attempt));
        }
    }
    Err(Error::RejectionFailure {
        what: format!("post-collision pair at v = {:?}", v.0),
        attempts: MAX_REJECTIONS,
    })
}

/// Samples one tree of the idealized process.
pub fn sample_idealized_tree<R: Rng + ?Sized>(
    cfg: &JumpProcessConfig,
    rng: &mut R,
) -> Result<(CollisionTree, SamplerStats)> {
    let root = cfg.f0.sample(rng);
    let mut stats = SamplerStats::default();
    let mut markers = Vec::new();
    let mut v = root.v;
    let mut t = 0.0;
    loop {
        let envelope = cfg.envelope(v);
        if envelope <= 0.0 {
            break;
        }
        let wait: f64 = Exp1.sample(rng);
        t += wait / envelope;
        if t > cfg.horizon {
            break;
        }
        stats.proposals += 1;
        let rate = cfg.c * collision_rate(v, &cfg.g0)?;
        if rate > envelope {
            return Err(Error::EnvelopeViolation { rate, envelope });
        }
        if rng.gen::<f64>() * envelope >= rate {
            continue;
        }
        let (nu, vb, tries) = sample_post_collision_with(v, &cfg.g0, cfg.beta1, rng)?;
        stats.post_attempts += tries;
        stats.accepted += 1;
        v = collide_unchecked(v, vb, nu).0;
        markers.push(CollisionMarker { t, nu, v_in: vb });
    }
    Ok((
        CollisionTree {
            root,
            markers,
            horizon: cfg.horizon,
        },
        stats,
    ))
}

/// Tree for sample `index` of a run seeded with `seed`.
pub fn sample_indexed(cfg: &JumpProcessConfig, seed: u64, index: u64) -> Result<(CollisionTree, SamplerStats)> {
    sample_idealized_tree(cfg, &mut crate::rng::sample_rng(seed, index))
}

/// Box masses of tagged states at time `t` over a set of trees.
pub fn tree_marginal(trees: &[CollisionTree], t: f64, grid: &PhaseGrid) -> Result<Histogram> {
    let pts: Vec<PhasePoint> = trees.iter().map(|tr| tr.tagged_state_at(t)).collect();
    Histogram::from_points(grid, &pts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::sample_rng;

    #[test]
    fn accepted_pairs_are_approaching() {
        let g0 = Density::maxwellian(1.0).unwrap();
        let mut rng = sample_rng(1, 0);
        for _ in 0..2000 {
            let v = Vec3::new(0.3, -1.0, 2.0);
            let (nu, vb, _) = sample_post_collision(v, &g0, &mut rng).unwrap();
            assert!((v - vb).dot(nu) > 0.0);
        }
    }

    #[test]
    fn maxwellian_is_stationary_for_the_jump_process() {
        let g0 = Density::maxwellian(1.0).unwrap();
        let cfg = JumpProcessConfig::new(1.0, 1.0, InitialLaw::uniform(g0.clone()), g0).unwrap();
        let k = 20_000;
        let energy: f64 = (0..k)
            .map(|i| sample_indexed(&cfg, 11, i).unwrap().0.tagged_state_at(1.0).v.norm_sq())
            .sum::<f64>()
            / k as f64;
        // Var |V|² = 6 for the unit Maxwellian.
        assert!((energy - 3.0).abs() < 4.0 * (6.0 / k as f64).sqrt(), "{energy}");
    }

    #[test]
    fn point_mass_rest_state_never_collides() {
        let u = Vec3::new(0.5, 0.0, 0.0);
        let cfg = JumpProcessConfig::new(
            3.0,
            5.0,
            InitialLaw::uniform(Density::point_mass(u)),
            Density::point_mass(u),
        )
        .unwrap();
        let mut rng = sample_rng(2, 0);
        for _ in 0..50 {
            let (tree, _) = sample_idealized_tree(&cfg, &mut rng).unwrap();
            assert_eq!(tree.n(), 0);
        }
    }

    #[test]
    fn marker_times_increase_and_velocities_follow_collide() {
        let g0 = Density::maxwellian(1.0).unwrap();
        let cfg = JumpProcessConfig::new(2.0, 2.0, InitialLaw::uniform(g0.clone()), g0).unwrap();
        for i in 0..20 {
            let (tree, stats) = sample_indexed(&cfg, 5, i).unwrap();
            tree.validate().unwrap();
            assert_eq!(stats.envelope_violations, 0);
            assert_eq!(stats.accepted as usize, tree.n());
        }
    }

    #[test]
    fn envelope_dominates_the_rate() {
        let g0 = Density::maxwellian(2.0).unwrap();
        let cfg = JumpProcessConfig::new(1.0, 1.0, InitialLaw::uniform(g0.clone()), g0.clone()).unwrap();
        for k in 0..100 {
            let v = Vec3::new(0.17 * k as f64, -0.05 * k as f64, 0.0);
            assert!(cfg.envelope(v) >= collision_rate(v, &g0).unwrap());
        }
    }
}
