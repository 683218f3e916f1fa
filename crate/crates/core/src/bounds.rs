//! A-priori bounds on moments, collision counts and bad trees, the error
//! recursion, and the planner that balances the leading error terms.

use std::f64::consts::{PI, SQRT_2};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinetics::{collision_rate, minimum_image, wrap_position, Density, KineticConstants};
use crate::tree::CollisionTree;
use crate::vec3::Vec3;

/// Ceiling for `M_f(t) = ∫ f_t (1 + |v|²)`.
pub fn energy_bound(t: f64, c: f64, k: &KineticConstants) -> f64 {
    let e0 = k.e0;
    let a = k.m_g + k.c_g / e0;
    1.0 + e0 * e0 + (k.m_g * e0 + k.c_g) * c * t + a * a * c * c * t * t / 2.0
}

/// Ceiling for `D_f(t) = ∫ f_t |v|`, the square root of the bound on the
/// second moment alone.
pub fn momentum_bound(t: f64, c: f64, k: &KineticConstants) -> f64 {
    (energy_bound(t, c, k) - 1.0).sqrt()
}

/// Ceiling for the mean number of nodes `E[n(Φ)] + 1` of a tree at time `t`.
pub fn expected_collisions_bound(t: f64, c: f64, k: &KineticConstants) -> f64 {
    let a = k.m_g + k.c_g / k.e0;
    1.0 + PI * ((k.beta1 + k.e0) * c * t + a * c * c * t * t / (2.0 * SQRT_2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub eps: f64,
    pub t: f64,
    pub horizon: f64,
    pub c: f64,
    pub consts: KineticConstants,
    pub m_eps: f64,
    pub v_eps: f64,
    pub eta: f64,
    pub delta: f64,
    pub c_uniform: f64,
    pub c1: f64,
    pub c2: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.eps,
            self.horizon,
            self.c,
            self.m_eps,
            self.v_eps,
            self.eta,
            self.delta,
        ];
        if positive.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(Error::Contract(format!("bound inputs must be positive: {self:?}")));
        }
        if !(0.0..=self.horizon).contains(&self.t) {
            return Err(Error::Contract(format!("t = {} outside [0, {}]", self.t, self.horizon)));
        }
        self.consts.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BadTreeBounds {
    /// Initial overlap.
    pub ov: f64,
    /// Recollision.
    pub rec: f64,
    /// Too many collisions.
    pub hi: f64,
    /// Too fast.
    pub vel: f64,
}

impl BadTreeBounds {
    pub fn total(&self) -> f64 {
        self.ov + self.rec + self.hi + self.vel
    }
}

pub fn bad_tree_bounds(b: &BoundInputs) -> Result<BadTreeBounds> {
    b.validate()?;
    let (eps, m, v, cu) = (b.eps, b.m_eps, b.v_eps, b.c_uniform);
    let tv = b.horizon * v;
    let ov = cu * eps + cu * m * eps.powf(1.5);
    let rec = cu * m * (1.0 + b.eta * m * v / (b.delta * b.delta) + m * b.delta) * eps * tv * tv
        + cu * m * m * tv * (1.0 / b.eta) * (eps / b.eta).powi(2);
    let hi = expected_collisions_bound(b.t, b.c, &b.consts) / m;
    let vel = b.consts.c_g * m / v.powi(3) + b.consts.m_f0 / (v * v) + m / (v * v) * energy_bound(b.t, b.c, &b.consts);
    Ok(BadTreeBounds { ov, rec, hi, vel })
}

/// Ceiling for `sup_S |P_t(S) - P̂_t(S)|`.
pub fn total_error_bound(b: &BoundInputs) -> Result<f64> {
    let bad = bad_tree_bounds(b)?;
    let (eps, m, v) = (b.eps, b.m_eps, b.v_eps);
    let lead = 4.0 / 3.0 * PI * b.c * eps
        + b.c1 * b.c2 * (1.0 + m) * b.horizon * eps * eps * (b.consts.beta1 + v).powi(2)
        + m * eps;
    Ok(lead + bad.total())
}

/// `ρ^{ε,n}` from `ρ^{ε,k} = (1-ε) ρ^{ε,k-1} + ρ^{ε,0} + ε`.
pub fn rho_hat(eps: f64, n: u32, rho0: f64) -> f64 {
    let mut r = rho0;
    for _ in 0..n {
        r = (1.0 - eps) * r + rho0 + eps;
    }
    r
}

/// Closed form of [`rho_hat`]: `ρ⁰(1-ε)ⁿ + (ρ⁰+ε)(1-(1-ε)ⁿ)/ε`.
pub fn rho_hat_closed_form(eps: f64, n: u32, rho0: f64) -> f64 {
    let q = (1.0 - eps).powi(n as i32);
    // (1 - qⁿ)/ε without cancellation for small ε.
    let geometric = if eps.abs() < 1e-8 {
        n as f64 * (1.0 - 0.5 * (n as f64 - 1.0) * eps)
    } else {
        -(n as f64 * (-eps).ln_1p()).exp_m1() / eps
    };
    rho0 * q + (rho0 + eps) * geometric
}

/// `C(Φ) = 2 sup_t λ(v(t))` along the tagged path.
pub fn path_rate_sup(tree: &CollisionTree, g0: &Density) -> Result<f64> {
    let mut best: f64 = 0.0;
    for v in tree.tagged_velocities() {
        best = best.max(collision_rate(v, g0)?);
    }
    Ok(2.0 * best)
}

/// `L(Φ) = -λ(v(τ))`, the loss rate after the final collision.
pub fn final_loss(tree: &CollisionTree, g0: &Density) -> Result<f64> {
    let v = *tree.tagged_velocities().last().expect("root velocity");
    Ok(-collision_rate(v, g0)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

/// Monte Carlo estimate of `∫ g0(v̄) (1 - 1_t^ε[Φ](x̄, v̄)) dx̄ dv̄`: the
/// weight of background initial data that comes within `eps` of the tagged
/// path before time `t`.
///
/// For a fixed `v̄` the excluded positions form a union of capsules around
/// the relative path `x(s) - s v̄`. Points are drawn from the capsules in
/// proportion to their volumes and weighted by total volume over coverage
/// multiplicity, which is unbiased for the volume of the union on the torus.
pub fn exclusion_mass<R: Rng + ?Sized>(
    tree: &CollisionTree,
    g0: &Density,
    t: f64,
    eps: f64,
    mc_points: usize,
    rng: &mut R,
) -> Result<Estimate> {
    if mc_points < 2 {
        return Err(Error::Contract("need at least two Monte Carlo points".into()));
    }
    if !(0.0..=tree.horizon).contains(&t) {
        return Err(Error::Contract(format!("t = {t} outside [0, {}]", tree.horizon)));
    }
    let paths = tree.reconstruct(eps);
    let ball = 4.0 / 3.0 * PI * eps.powi(3);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..mc_points {
        let vb = g0.sample(rng);
        // Relative path pieces, unwrapped and clipped to [0, t].
        let mut pieces: Vec<(Vec3, Vec3)> = Vec::new();
        let mut y = paths.segments[0].x_start;
        for seg in &paths.segments {
            if seg.t_start >= t {
                break;
            }
            let dt = seg.t_end.min(t) - seg.t_start;
            let step = (seg.v - vb) * dt;
            pieces.push((y, y + step));
            y += step;
        }
        if pieces.is_empty() {
            pieces.push((y, y));
        }
        let volumes: Vec<f64> = pieces
            .iter()
            .map(|(a, b)| PI * eps * eps * (*b - *a).norm() + ball)
            .collect();
        let total: f64 = volumes.iter().sum();
        let mut pick = rng.gen::<f64>() * total;
        let mut k = 0;
        while k + 1 < volumes.len() && pick > volumes[k] {
            pick -= volumes[k];
            k += 1;
        }
        let z = sample_capsule(pieces[k].0, pieces[k].1, eps, rng);
        let x = wrap_position(z);
        let multiplicity: usize = pieces.iter().map(|(a, b)| capsule_images(x, *a, *b, eps)).sum();
        let w = total / multiplicity.max(1) as f64;
        sum += w;
        sum_sq += w * w;
    }
    let n = mc_points as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
    Ok(Estimate {
        mean,
        std_error: (var / n).sqrt(),
    })
}

/// Uniform point in the capsule of radius `eps` around segment `[a, b]`.
fn sample_capsule<R: Rng + ?Sized>(a: Vec3, b: Vec3, eps: f64, rng: &mut R) -> Vec3 {
    let axis = b - a;
    let len = axis.norm();
    let cyl = PI * eps * eps * len;
    let ball = 4.0 / 3.0 * PI * eps.powi(3);
    if len == 0.0 || rng.gen::<f64>() * (cyl + ball) >= cyl {
        // The two end caps together make one ball; each half sits on the
        // matching end.
        let p = loop {
            let p = Vec3::new(rng.gen(), rng.gen(), rng.gen()) * 2.0 - Vec3::new(1.0, 1.0, 1.0);
            if p.norm_sq() <= 1.0 {
                break p * eps;
            }
        };
        if len > 0.0 && p.dot(axis) >= 0.0 {
            b + p
        } else {
            a + p
        }
    } else {
        let dir = axis / len;
        let helper = if dir[0].abs() < 0.9 {
            Vec3::new(1.0, 0.0, 0.0)
        } else {
            Vec3::new(0.0, 1.0, 0.0)
        };
        let e1 = dir.cross(helper).normalized().expect("helper is not parallel");
        let e2 = dir.cross(e1);
        let r = eps * rng.gen::<f64>().sqrt();
        let phi = 2.0 * PI * rng.gen::<f64>();
        a + dir * (len * rng.gen::<f64>()) + e1 * (r * phi.cos()) + e2 * (r * phi.sin())
    }
}

/// Number of periodic images of `x` within `eps` of segment `[a, b]`.
fn capsule_images(x: Vec3, a: Vec3, b: Vec3, eps: f64) -> usize {
    let axis = b - a;
    let len2 = axis.norm_sq();
    let mid = (a + b) * 0.5;
    let reach = 0.5 * len2.sqrt() + eps;
    let d = (x - mid).map(minimum_image);
    let lo = |c: f64| (-c - reach).ceil() as i64;
    let hi = |c: f64| (-c + reach).floor() as i64;
    let mut count = 0;
    for mx in lo(d[0])..=hi(d[0]) {
        for my in lo(d[1])..=hi(d[1]) {
            for mz in lo(d[2])..=hi(d[2]) {
                let p = mid + d + Vec3::new(mx as f64, my as f64, mz as f64);
                let s = if len2 > 0.0 {
                    ((p - a).dot(axis) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                if (p - (a + axis * s)).norm_sq() <= eps * eps {
                    count += 1;
                }
            }
        }
    }
    count
}

/// Parameters balancing the five leading error terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingPlan {
    pub alpha: f64,
    pub c: f64,
    pub eps: f64,
    pub horizon: f64,
    pub m_eps: f64,
    pub v_eps: f64,
    pub eta: f64,
    pub delta: f64,
    pub predicted_error: f64,
}

/// Upper end of the admissible exponent range.
pub const ALPHA_MAX: f64 = 11.0 / 52.0;

pub fn plan_scaling(eps: f64, alpha: f64, c: f64) -> Result<ScalingPlan> {
    if !(alpha > 0.0 && alpha < ALPHA_MAX) {
        return Err(Error::TimeDoesNotDiverge(alpha));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Contract(format!("eps must lie in (0, 1), got {eps}")));
    }
    if !(c >= 1.0 && c.is_finite()) {
        return Err(Error::Contract(format!("c must be >= 1, got {c}")));
    }
    let horizon = eps.powf((52.0 * alpha - 11.0) / 103.0) * c.powf(-84.0 / 103.0);
    let v = c.powf(5.0 / 13.0) * horizon.powf(1.0 / 52.0) * eps.powf(-11.0 / 52.0);
    let m = v;
    let delta = c * c / (eps * m.powi(3) * v * v);
    let eta = eps.powf(0.25) * delta.sqrt() / (v.sqrt() * horizon.powf(0.25));
    Ok(ScalingPlan {
        alpha,
        c,
        eps,
        horizon,
        m_eps: m,
        v_eps: v,
        eta,
        delta,
        predicted_error: eps.powf(alpha),
    })
}

impl ScalingPlan {
    /// The five leading terms that the plan makes equal.
    pub fn balance_terms(&self) -> [f64; 5] {
        let (c, t, m, v, e, d, h) = (
            self.c,
            self.horizon,
            self.m_eps,
            self.v_eps,
            self.eps,
            self.delta,
            self.eta,
        );
        [
            m * c * c * t * t / (v * v),
            c * c * t * t / m,
            e * m * m * t * t * v * v * d,
            e * m * m * v.powi(3) * h * t * t / (d * d),
            m * m * t * v * e * e / h.powi(3),
        ]
    }

    /// Bound inputs at time `t` with all uniform constants set to one.
    pub fn bound_inputs(&self, t: f64, consts: KineticConstants) -> BoundInputs {
        BoundInputs {
            eps: self.eps,
            t,
            horizon: self.horizon,
            c: self.c,
            consts,
            m_eps: self.m_eps,
            v_eps: self.v_eps,
            eta: self.eta,
            delta: self.delta,
            c_uniform: 1.0,
            c1: 1.0,
            c2: 1.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_consts() -> KineticConstants {
        KineticConstants {
            m_g: 1.0,
            c_g: 1.0,
            beta1: 1.0,
            e0: 1.0,
            m_f0: 0.0,
        }
    }

    #[test]
    fn energy_bound_examples() {
        let k = unit_consts();
        assert_eq!(energy_bound(0.0, 1.0, &k), 2.0);
        assert!((energy_bound(1.0, 1.0, &k) - 6.0).abs() < 1e-15);
        assert!((momentum_bound(0.0, 1.0, &k) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn expected_collisions_example() {
        let k = unit_consts();
        assert_eq!(expected_collisions_bound(0.0, 1.0, &k), 1.0);
        let b = expected_collisions_bound(1.0, 1.0, &k);
        assert!((b - (1.0 + PI * (2.0 + 1.0 / SQRT_2))).abs() < 1e-12, "{b}");
    }

    #[test]
    fn rho_hat_small_cases() {
        assert_eq!(rho_hat(0.3, 0, 0.7), 0.7);
        assert!((rho_hat(0.1, 1, 0.0) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn static_ball_has_exact_exclusion_mass() {
        let root = crate::kinetics::PhasePoint::new(Vec3::new(0.3, 0.3, 0.3), Vec3::ZERO).unwrap();
        let tree = CollisionTree::collision_free(root, 1.0);
        let g0 = Density::point_mass(Vec3::ZERO);
        let mut rng = crate::rng::sample_rng(4, 0);
        let est = exclusion_mass(&tree, &g0, 1.0, 0.05, 1000, &mut rng).unwrap();
        let exact = 4.0 / 3.0 * PI * 0.05f64.powi(3);
        assert!((est.mean - exact).abs() < 1e-15 * exact.max(1.0));
    }

    #[test]
    fn straight_tube_volume() {
        // One straight pass of length 0.5 relative to a resting background.
        let root = crate::kinetics::PhasePoint::new(Vec3::new(0.1, 0.5, 0.5), Vec3::new(0.5, 0.0, 0.0)).unwrap();
        let tree = CollisionTree::collision_free(root, 1.0);
        let g0 = Density::point_mass(Vec3::ZERO);
        let eps = 0.02;
        let mut rng = crate::rng::sample_rng(4, 1);
        let est = exclusion_mass(&tree, &g0, 1.0, eps, 2000, &mut rng).unwrap();
        let exact = PI * eps * eps * 0.5 + 4.0 / 3.0 * PI * eps.powi(3);
        assert!((est.mean - exact).abs() < 1e-12, "{} vs {exact}", est.mean);
    }

    #[test]
    fn wrapped_tube_counts_overlap_once() {
        // Length 1.5 along an axis wraps onto itself: the union is the full
        // cylinder of length one.
        let root = crate::kinetics::PhasePoint::new(Vec3::new(0.1, 0.5, 0.5), Vec3::new(1.5, 0.0, 0.0)).unwrap();
        let tree = CollisionTree::collision_free(root, 1.0);
        let g0 = Density::point_mass(Vec3::ZERO);
        let eps = 0.02;
        let mut rng = crate::rng::sample_rng(4, 2);
        let est = exclusion_mass(&tree, &g0, 1.0, eps, 20000, &mut rng).unwrap();
        let exact = PI * eps * eps;
        assert!(
            (est.mean - exact).abs() < 4.0 * est.std_error + 1e-12,
            "{:?} vs {exact}",
            est
        );
    }

    #[test]
    fn plan_example_horizon() {
        let p = plan_scaling(1e-3, 0.1, 1.0).unwrap();
        assert!((p.horizon - 1.4757).abs() / 1.4757 < 1e-3, "{}", p.horizon);
        assert!(matches!(
            plan_scaling(1e-3, ALPHA_MAX, 1.0),
            Err(Error::TimeDoesNotDiverge(_))
        ));
        let t = p.balance_terms();
        for x in t {
            assert!((x / t[0] - 1.0).abs() < 1e-9);
        }
    }
}
