//! Torus geometry, the elastic hard-sphere collision law, collision rates and
//! velocity densities.
//!
//! Positions live on the unit torus `[0,1)^3`; velocities are measured in torus
//! lengths per unit time. The background density `g0` enters the collision
//! rate through
//!
//! ```text
//! λ(v) = ∫_{S²} ∫ g0(w) [(v - w)·ν]₊ dw dν = π E|v - W|,   W ~ g0
//! ```

use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, OnceLock};

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{GaussLegendre, SphereDesign};
use crate::vec3::Vec3;

/// Tolerance on `|ν| = 1` for collision normals.
pub const UNIT_TOL: f64 = 1e-12;

/// Number of Gauss–Legendre nodes per radial panel.
const RADIAL_NODES: usize = 64;

/// Radial cut-off in units of the thermal speed `1/√β`.
const RADIAL_CUTOFF_SIGMAS: f64 = 14.0;

fn radial_rule() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(RADIAL_NODES))
}

/// Wraps a coordinate into `[0, 1)`.
#[inline]
pub fn wrap_unit(x: f64) -> f64 {
    let y = x - x.floor();
    if y >= 1.0 {
        0.0
    } else {
        y
    }
}

#[inline]
pub fn wrap_position(x: Vec3) -> Vec3 {
    x.map(wrap_unit)
}

/// State of one particle on the torus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub x: Vec3,
    pub v: Vec3,
}

impl PhasePoint {
    /// Builds a phase point, wrapping the position onto the torus.
    pub fn new(x: Vec3, v: Vec3) -> Result<Self> {
        if !x.is_finite() || !v.is_finite() {
            return Err(Error::Contract("phase point must be finite".into()));
        }
        Ok(Self { x: wrap_position(x), v })
    }

    /// Position after free flight for time `s`.
    #[inline]
    pub fn position_at(&self, s: f64) -> Vec3 {
        wrap_position(self.x + self.v * s)
    }
}

/// One collision of the tagged particle: time, collision normal and the
/// incoming velocity of the background particle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionMarker {
    pub t: f64,
    pub nu: Vec3,
    #[serde(rename = "v")]
    pub v_in: Vec3,
}

impl CollisionMarker {
    pub fn new(t: f64, nu: Vec3, v_in: Vec3) -> Result<Self> {
        check_unit(nu)?;
        if !t.is_finite() || t < 0.0 || !v_in.is_finite() {
            return Err(Error::Contract(format!("invalid marker at t = {t}")));
        }
        Ok(Self { t, nu, v_in })
    }
}

fn check_unit(nu: Vec3) -> Result<()> {
    let n = nu.norm();
    if !n.is_finite() || (n - 1.0).abs() > UNIT_TOL {
        return Err(Error::Contract(format!(
            "collision normal must be a unit vector (|nu| = {n})"
        )));
    }
    Ok(())
}

/// Elastic hard-sphere collision of equal masses.
///
/// Returns the post-collisional `(tagged, background)` velocities. Momentum
/// and kinetic energy of the pair are conserved; the map is an involution for
/// fixed `nu`.
pub fn collide(v_tag: Vec3, v_bg: Vec3, nu: Vec3) -> Result<(Vec3, Vec3)> {
    check_unit(nu)?;
    Ok(collide_unchecked(v_tag, v_bg, nu))
}

#[inline]
pub(crate) fn collide_unchecked(v_tag: Vec3, v_bg: Vec3, nu: Vec3) -> (Vec3, Vec3) {
    let exchange = nu.dot(v_tag - v_bg);
    (v_tag - nu * exchange, v_bg + nu * exchange)
}

/// Minimum-image displacement `d` with `a + d ≡ b (mod 1)`, each component in
/// `[-0.5, 0.5)`.
#[inline]
pub fn torus_displacement(a: Vec3, b: Vec3) -> Vec3 {
    (b - a).map(minimum_image)
}

#[inline]
pub fn minimum_image(d: f64) -> f64 {
    let mut r = d - (d + 0.5).floor();
    if r >= 0.5 {
        r -= 1.0;
    } else if r < -0.5 {
        r += 1.0;
    }
    r
}

#[inline]
pub fn torus_distance(a: Vec3, b: Vec3) -> f64 {
    torus_displacement(a, b).norm()
}

/// A velocity law supplied by the caller.
pub trait VelocityLaw: Send + Sync {
    fn pdf(&self, v: Vec3) -> f64;
    fn sample(&self, rng: &mut dyn rand::RngCore) -> Vec3;
    /// Radius outside which the density is negligible for quadrature.
    fn support_radius(&self) -> f64;

    /// Draw from `|v| pdf(v) / E|V|`. The default thins `sample` against the
    /// support radius, so mass beyond it is under-weighted.
    fn sample_speed_biased(&self, rng: &mut dyn rand::RngCore) -> Vec3 {
        let r = self.support_radius();
        loop {
            let v = self.sample(rng);
            if rng.gen::<f64>() * r < v.norm() {
                return v;
            }
        }
    }
}

/// A probability density on velocity space.
#[derive(Clone)]
pub enum Density {
    /// `M_β(v) = (β/2π)^{3/2} exp(-β|v|²/2)`.
    Maxwellian {
        beta: f64,
    },
    /// Empirical sample cloud; sampling resamples uniformly.
    Table {
        samples: Arc<Vec<Vec3>>,
    },
    Custom(Arc<dyn VelocityLaw>),
}

impl fmt::Debug for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Density::Maxwellian { beta } => write!(f, "Maxwellian(beta={beta})"),
            Density::Table { samples } => write!(f, "Table({} samples)", samples.len()),
            Density::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl Density {
    pub fn maxwellian(beta: f64) -> Result<Self> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::Config(format!("inverse temperature must be > 0, got {beta}")));
        }
        Ok(Density::Maxwellian { beta })
    }

    pub fn table(samples: Vec<Vec3>) -> Result<Self> {
        if samples.is_empty() || samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("table density needs finite samples".into()));
        }
        Ok(Density::Table {
            samples: Arc::new(samples),
        })
    }

    /// Degenerate table: all mass at `u`.
    pub fn point_mass(u: Vec3) -> Self {
        Density::Table {
            samples: Arc::new(vec![u]),
        }
    }

    pub fn beta(&self) -> Option<f64> {
        match self {
            Density::Maxwellian { beta } => Some(*beta),
            _ => None,
        }
    }

    /// Pointwise density, where one exists.
    pub fn pdf(&self, v: Vec3) -> Option<f64> {
        match self {
            Density::Maxwellian { beta } => Some(maxwellian_pdf(*beta, v)),
            Density::Table { .. } => None,
            Density::Custom(law) => Some(law.pdf(v)),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        match self {
            Density::Maxwellian { beta } => {
                let s = 1.0 / beta.sqrt();
                Vec3([
                    s * rng.sample::<f64, _>(StandardNormal),
                    s * rng.sample::<f64, _>(StandardNormal),
                    s * rng.sample::<f64, _>(StandardNormal),
                ])
            }
            Density::Table { samples } => samples[rng.gen_range(0..samples.len())],
            Density::Custom(law) => {
                let mut adapter = RngAdapter(rng);
                law.sample(&mut adapter)
            }
        }
    }

    /// Draw from the speed-biased law `|v| g(v) / E|V|`. Must not be called
    /// on a density concentrated at the origin.
    pub fn sample_speed_biased<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        match self {
            Density::Maxwellian { beta } => {
                // |V|² β/2 ~ Gamma(2, 1) with a uniform direction.
                let g: f64 = rng.sample::<f64, _>(Exp1) + rng.sample::<f64, _>(Exp1);
                let r = (2.0 * g / beta).sqrt();
                let d = Vec3([
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                ]);
                d * (r / d.norm())
            }
            Density::Table { samples } => {
                let top = samples.iter().map(|s| s.norm()).fold(0.0, f64::max);
                loop {
                    let s = samples[rng.gen_range(0..samples.len())];
                    if rng.gen::<f64>() * top < s.norm() {
                        return s;
                    }
                }
            }
            Density::Custom(law) => {
                let mut adapter = RngAdapter(rng);
                law.sample_speed_biased(&mut adapter)
            }
        }
    }

    /// `E|V|^p`, computed by radial quadrature for smooth densities and as a
    /// sample mean for tables.
    pub fn moment(&self, p: f64) -> f64 {
        self.tail_moment(p, 0.0)
    }

    /// `E[|V|^p ; |V| > r_min]`.
    pub fn tail_moment(&self, p: f64, r_min: f64) -> f64 {
        match self {
            Density::Maxwellian { beta } => {
                let sigma = 1.0 / beta.sqrt();
                let hi = r_min.max(0.0) + RADIAL_CUTOFF_SIGMAS * sigma;
                let lo = r_min.max(0.0);
                let norm = (beta / (2.0 * PI)).powf(1.5);
                panels(lo, hi, 4, |r| {
                    4.0 * PI * r * r * norm * (-0.5 * beta * r * r).exp() * r.powf(p)
                })
            }
            Density::Table { samples } => {
                samples
                    .iter()
                    .map(|s| s.norm())
                    .filter(|&r| r > r_min)
                    .map(|r| r.powf(p))
                    .sum::<f64>()
                    / samples.len() as f64
            }
            Density::Custom(law) => {
                let sphere = SphereDesign::lebedev(50).expect("50-point rule");
                let lo = r_min.max(0.0);
                let hi = law.support_radius().max(lo);
                panels(lo, hi, 8, |r| r * r * r.powf(p) * sphere.integrate(|w| law.pdf(w * r)))
            }
        }
    }
}

struct RngAdapter<'a, R: Rng + ?Sized>(&'a mut R);

impl<R: Rng + ?Sized> rand::RngCore for RngAdapter<'_, R> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.0.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.0.try_fill_bytes(dest)
    }
}

#[inline]
pub fn maxwellian_pdf(beta: f64, v: Vec3) -> f64 {
    (beta / (2.0 * PI)).powf(1.5) * (-0.5 * beta * v.norm_sq()).exp()
}

/// Integrates `f` over `[lo, hi]` split into `n` equal Gauss–Legendre panels.
fn panels(lo: f64, hi: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let rule = radial_rule();
    let h = (hi - lo) / n as f64;
    (0..n)
        .map(|k| {
            let a = lo + k as f64 * h;
            rule.integrate(a, a + h, &f)
        })
        .sum()
}

/// Angular mean of `|a e - r ω|` over `ω ∈ S²` for `|e| = 1`.
#[inline]
fn spherical_mean_distance(a: f64, r: f64) -> f64 {
    if r <= a {
        if a == 0.0 {
            0.0
        } else {
            a + r * r / (3.0 * a)
        }
    } else {
        r + a * a / (3.0 * r)
    }
}

/// `E|v - W|` for `W ~ M_β`, by radial quadrature split at `r = |v|`.
pub fn maxwellian_mean_relative_speed(beta: f64, v: Vec3) -> f64 {
    let a = v.norm();
    let sigma = 1.0 / beta.sqrt();
    let norm = (beta / (2.0 * PI)).powf(1.5);
    let weight = |r: f64| 4.0 * PI * r * r * norm * (-0.5 * beta * r * r).exp();
    let cutoff = RADIAL_CUTOFF_SIGMAS * sigma;
    let integrand = |r: f64| weight(r) * spherical_mean_distance(a, r);
    if a < cutoff {
        panels(0.0, a, 2, integrand) + panels(a, cutoff, 4, integrand)
    } else {
        // All of the mass sits inside |W| < |v|.
        panels(0.0, cutoff, 4, integrand)
    }
}

/// Collision rate `λ(v) = π E|v - W|` of a tagged particle with velocity `v`
/// against background velocities `W ~ g0`.
pub fn collision_rate(v: Vec3, g0: &Density) -> Result<f64> {
    let rate = match g0 {
        Density::Maxwellian { beta } => PI * maxwellian_mean_relative_speed(*beta, v),
        Density::Table { samples } => PI * samples.iter().map(|u| (v - *u).norm()).sum::<f64>() / samples.len() as f64,
        Density::Custom(law) => {
            let sphere = SphereDesign::lebedev(50).expect("50-point rule");
            let hi = law.support_radius();
            PI * panels(0.0, hi, 16, |r| {
                r * r * sphere.integrate(|w| law.pdf(w * r) * (v - w * r).norm())
            })
        }
    };
    if !rate.is_finite() {
        return Err(Error::DivergentMoment(format!(
            "collision rate at v = {:?} is not finite",
            v.0
        )));
    }
    Ok(rate)
}

/// Draws one velocity from `g0`.
pub fn sample_density<R: Rng + ?Sized>(g0: &Density, rng: &mut R) -> Vec3 {
    g0.sample(rng)
}

/// Spatial part of the initial tagged density on the torus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpatialProfile {
    Uniform,
    /// `1 + amplitude · cos(2π k·x)`, `|amplitude| ≤ 1`.
    Cosine {
        amplitude: f64,
        k: [i32; 3],
    },
}

impl SpatialProfile {
    pub fn density(&self, x: Vec3) -> f64 {
        match *self {
            SpatialProfile::Uniform => 1.0,
            SpatialProfile::Cosine { amplitude, k } => {
                let phase = 2.0 * PI * (k[0] as f64 * x[0] + k[1] as f64 * x[1] + k[2] as f64 * x[2]);
                1.0 + amplitude * phase.cos()
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        let draw = |rng: &mut R| Vec3([rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()]);
        match *self {
            SpatialProfile::Uniform => draw(rng),
            SpatialProfile::Cosine { amplitude, .. } => {
                let bound = 1.0 + amplitude.abs();
                loop {
                    let x = draw(rng);
                    if rng.gen::<f64>() * bound <= self.density(x) {
                        return x;
                    }
                }
            }
        }
    }
}

/// Initial law of the tagged particle: a spatial profile times a velocity
/// density.
#[derive(Debug, Clone)]
pub struct InitialLaw {
    pub position: SpatialProfile,
    pub velocity: Density,
}

impl InitialLaw {
    pub fn uniform(velocity: Density) -> Self {
        Self {
            position: SpatialProfile::Uniform,
            velocity,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> PhasePoint {
        let x = self.position.sample(rng);
        let v = self.velocity.sample(rng);
        PhasePoint { x, v }
    }
}

/// Moment constants feeding the a-priori bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KineticConstants {
    /// `∫_{S²}∫ g0 |v|²`, i.e. `4π E_g|v|²`.
    pub m_g: f64,
    /// `∫_{S²}∫ g0 |v|³`, i.e. `4π E_g|v|³`.
    pub c_g: f64,
    /// `E_g|v|`.
    pub beta1: f64,
    /// `max(1, E_f|v|²)`.
    pub e0: f64,
    /// `E_f[|v|² ; |v| > V]` for the speed cap `V` used at construction.
    pub m_f0: f64,
}

impl KineticConstants {
    pub fn from_densities(f0: &Density, g0: &Density, speed_cap: f64) -> Self {
        Self {
            m_g: 4.0 * PI * g0.moment(2.0),
            c_g: 4.0 * PI * g0.moment(3.0),
            beta1: g0.moment(1.0),
            e0: f0.moment(2.0).max(1.0),
            m_f0: f0.tail_moment(2.0, speed_cap),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.m_g, self.c_g, self.beta1, self.e0, self.m_f0];
        if all.iter().any(|c| !c.is_finite() || *c < 0.0) || self.e0 < 1.0 {
            return Err(Error::Contract(format!("invalid kinetic constants {self:?}")));
        }
        Ok(())
    }
}

/// One moment functional of the admissibility report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Functional {
    pub value: f64,
    pub std_error: Option<f64>,
    pub finite: bool,
}

/// Estimates of `∫f0(1+|v|²)`, `∫g0(1+|v|³)` and `ess sup g0(1+|v|⁵)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdmissibilityReport {
    pub f0_energy: Functional,
    pub g0_third_moment: Functional,
    pub g0_weighted_sup: Functional,
}

impl AdmissibilityReport {
    pub fn admissible(&self) -> bool {
        self.f0_energy.finite && self.g0_third_moment.finite && self.g0_weighted_sup.finite
    }
}

pub fn admissibility_report(f0: &Density, g0: &Density) -> AdmissibilityReport {
    AdmissibilityReport {
        f0_energy: moment_functional(f0, 2.0),
        g0_third_moment: moment_functional(g0, 3.0),
        g0_weighted_sup: weighted_sup(g0, 5.0),
    }
}

/// `∫ g (1 + |v|^p)`.
fn moment_functional(d: &Density, p: f64) -> Functional {
    match d {
        Density::Table { samples } => {
            let n = samples.len() as f64;
            let vals: Vec<f64> = samples.iter().map(|s| 1.0 + s.norm().powf(p)).collect();
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            let finite = hill_tail_index(samples).is_none_or(|alpha| alpha > p);
            Functional {
                value: if finite { mean } else { f64::INFINITY },
                std_error: Some((var / n).sqrt()),
                finite,
            }
        }
        _ => {
            let value = 1.0 + d.moment(p);
            Functional {
                value,
                std_error: None,
                finite: value.is_finite(),
            }
        }
    }
}

/// `ess sup g (1 + |v|^p)`.
fn weighted_sup(d: &Density, p: f64) -> Functional {
    match d {
        Density::Maxwellian { beta } => {
            let beta = *beta;
            let f = |r: f64| maxwellian_pdf(beta, Vec3([r, 0.0, 0.0])) * (1.0 + r.powf(p));
            let value = maximize_radial(f, RADIAL_CUTOFF_SIGMAS / beta.sqrt());
            Functional {
                value,
                std_error: None,
                finite: value.is_finite(),
            }
        }
        Density::Custom(law) => {
            let sphere = SphereDesign::lebedev(50).expect("50-point rule");
            let f = |r: f64| sphere.points.iter().map(|w| law.pdf(*w * r)).fold(0.0_f64, f64::max) * (1.0 + r.powf(p));
            let value = maximize_radial(f, law.support_radius());
            Functional {
                value,
                std_error: None,
                finite: value.is_finite(),
            }
        }
        Density::Table { samples } => {
            // Shell-histogram estimate of the radial density; the tail index
            // decides finiteness since g ~ r^{-(α+3)} makes g·r^p bounded iff α ≥ p - 3.
            let radii: Vec<f64> = samples.iter().map(|s| s.norm()).collect();
            let n = radii.len() as f64;
            let r_max = radii.iter().cloned().fold(0.0, f64::max);
            let shells = (n.sqrt() as usize).clamp(1, 200);
            let width = (r_max / shells as f64).max(f64::MIN_POSITIVE);
            let mut counts = vec![0usize; shells];
            for r in &radii {
                let k = ((r / width) as usize).min(shells - 1);
                counts[k] += 1;
            }
            let mut value: f64 = 0.0;
            for (k, &c) in counts.iter().enumerate() {
                let lo = k as f64 * width;
                let hi = lo + width;
                let vol = 4.0 / 3.0 * PI * (hi.powi(3) - lo.powi(3));
                let mid = 0.5 * (lo + hi);
                value = value.max(c as f64 / n / vol * (1.0 + mid.powf(p)));
            }
            let finite = hill_tail_index(samples).is_none_or(|alpha| alpha >= p - 3.0 - 0.25);
            Functional {
                value: if finite { value } else { f64::INFINITY },
                std_error: None,
                finite,
            }
        }
    }
}

fn maximize_radial(f: impl Fn(f64) -> f64, r_max: f64) -> f64 {
    let steps = 4000;
    let h = r_max / steps as f64;
    let (mut best_r, mut best) = (0.0, f(0.0));
    for i in 1..=steps {
        let r = i as f64 * h;
        let y = f(r);
        if y > best {
            best = y;
            best_r = r;
        }
    }
    // Golden-section refinement around the grid maximum.
    let (mut a, mut b) = ((best_r - h).max(0.0), best_r + h);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    best.max(f(0.5 * (a + b)))
}

/// Hill estimator of the tail index of `|V|` over the top `√n` order
/// statistics. `None` when the sample cannot support an estimate or shows no
/// power-law tail.
pub fn hill_tail_index(samples: &[Vec3]) -> Option<f64> {
    let mut r: Vec<f64> = samples.iter().map(|s| s.norm()).filter(|r| *r > 0.0).collect();
    if r.len() < 100 {
        return None;
    }
    r.sort_by(|a, b| b.total_cmp(a));
    let k = (r.len() as f64).sqrt() as usize;
    let threshold = r[k];
    let mean_log: f64 = r[..k].iter().map(|x| (x / threshold).ln()).sum::<f64>() / k as f64;
    (mean_log > 0.0).then(|| 1.0 / mean_log)
}
