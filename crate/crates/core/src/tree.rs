//! Collision trees: the root state of the tagged particle plus the ordered
//! list of its collisions, trajectory reconstruction, and good/bad
//! classification.
//!
//! Orientation convention: at the contact of marker `j` the background centre
//! sits at `x(t_j) + ε ν_j`, so a genuine (non-grazing) collision has
//! `ν_j · (v(t_j⁻) - v_j) > 0`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::contact::proximity_intervals;
use crate::error::{Error, Result};
use crate::kinetics::{
    collide_unchecked, torus_displacement, torus_distance, wrap_position, CollisionMarker, PhasePoint,
};
use crate::vec3::Vec3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionTree {
    pub root: PhasePoint,
    pub markers: Vec<CollisionMarker>,
    pub horizon: f64,
}

impl CollisionTree {
    pub fn new(root: PhasePoint, markers: Vec<CollisionMarker>, horizon: f64) -> Result<Self> {
        let tree = Self { root, markers, horizon };
        tree.validate()?;
        Ok(tree)
    }

    pub fn collision_free(root: PhasePoint, horizon: f64) -> Self {
        Self {
            root,
            markers: Vec::new(),
            horizon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::Contract(format!("horizon must be > 0, got {}", self.horizon)));
        }
        let mut prev = 0.0;
        for (j, m) in self.markers.iter().enumerate() {
            if !(m.t > prev || (j == 0 && m.t > 0.0)) || m.t > self.horizon {
                return Err(Error::Contract(format!(
                    "marker {j} at t = {} breaks strict time order in (0, T]",
                    m.t
                )));
            }
            CollisionMarker::new(m.t, m.nu, m.v_in)?;
            prev = m.t;
        }
        Ok(())
    }

    /// Number of collisions `n(Φ)`.
    pub fn n(&self) -> usize {
        self.markers.len()
    }

    /// Time of the last collision `τ(Φ)`, zero when collision-free.
    pub fn tau(&self) -> f64 {
        self.markers.last().map_or(0.0, |m| m.t)
    }

    /// Tagged velocities on the `n + 1` free-flight segments.
    pub fn tagged_velocities(&self) -> Vec<Vec3> {
        let mut out = Vec::with_capacity(self.markers.len() + 1);
        let mut v = self.root.v;
        out.push(v);
        for m in &self.markers {
            v = collide_unchecked(v, m.v_in, m.nu).0;
            out.push(v);
        }
        out
    }

    /// Tagged state at time `t ∈ [0, T]` (right-continuous velocity).
    pub fn tagged_state_at(&self, t: f64) -> PhasePoint {
        let mut x = self.root.x;
        let mut v = self.root.v;
        let mut last = 0.0;
        for m in &self.markers {
            if m.t > t {
                break;
            }
            x += v * (m.t - last);
            v = collide_unchecked(v, m.v_in, m.nu).0;
            last = m.t;
        }
        PhasePoint {
            x: wrap_position(x + v * (t - last)),
            v,
        }
    }

    /// `Φ̄`: the tree with its final collision removed.
    pub fn prune_final(&self) -> Result<CollisionTree> {
        if self.markers.is_empty() {
            return Err(Error::NoCollision);
        }
        let mut markers = self.markers.clone();
        markers.pop();
        Ok(CollisionTree {
            root: self.root,
            markers,
            horizon: self.horizon,
        })
    }

    /// `V(Φ)`: the largest background or tagged speed on the history.
    pub fn max_velocity(&self) -> f64 {
        let tagged = self.tagged_velocities().into_iter().map(Vec3::norm).fold(0.0, f64::max);
        self.markers.iter().map(|m| m.v_in.norm()).fold(tagged, f64::max)
    }

    pub fn reconstruct(&self, eps: f64) -> ReconstructedPaths {
        let mut segments = Vec::with_capacity(self.markers.len() + 1);
        let mut backgrounds = Vec::with_capacity(self.markers.len());
        let mut x = self.root.x;
        let mut v = self.root.v;
        let mut start = 0.0;
        for m in &self.markers {
            segments.push(Segment {
                t_start: start,
                t_end: m.t,
                x_start: x,
                v,
            });
            let x_contact = wrap_position(x + v * (m.t - start));
            let (v_after, v_bg_after) = collide_unchecked(v, m.v_in, m.nu);
            let bg_contact = wrap_position(x_contact + m.nu * eps);
            backgrounds.push(BackgroundPath {
                x_initial: wrap_position(bg_contact - m.v_in * m.t),
                x_contact: bg_contact,
                t_contact: m.t,
                v_in: m.v_in,
                v_out: v_bg_after,
            });
            x = x_contact;
            v = v_after;
            start = m.t;
        }
        segments.push(Segment {
            t_start: start,
            t_end: self.horizon,
            x_start: x,
            v,
        });
        ReconstructedPaths { segments, backgrounds }
    }

    pub fn classify(&self, eps: f64, params: &ClassifyParams) -> TreeFlags {
        let paths = self.reconstruct(eps);
        let initial_overlap = paths
            .backgrounds
            .iter()
            .any(|b| torus_distance(self.root.x, b.x_initial) <= eps);
        let velocities = self.tagged_velocities();
        let grazing = self
            .markers
            .iter()
            .zip(&velocities)
            .any(|(m, v_before)| m.nu.dot(*v_before - m.v_in) <= params.graze_tol);
        let too_many = self.n() as f64 > params.m_cap;
        let too_fast = self.max_velocity() >= params.v_cap;
        let recollision = paths.has_recollision(eps, params.contact_time_tol);
        TreeFlags::new(recollision, initial_overlap, grazing, too_many, too_fast)
    }
}

/// Thresholds for [`CollisionTree::classify`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifyParams {
    /// Collision-count cap `M(ε)`.
    pub m_cap: f64,
    /// Speed cap `V(ε)`.
    pub v_cap: f64,
    /// A collision with `ν·(v⁻ - v_j)` at or below this value is grazing.
    pub graze_tol: f64,
    /// Proximity within this time of a marker's own contact time belongs to
    /// that contact.
    pub contact_time_tol: f64,
}

impl Default for ClassifyParams {
    fn default() -> Self {
        Self {
            m_cap: f64::INFINITY,
            v_cap: f64::INFINITY,
            graze_tol: 1e-9,
            contact_time_tol: 1e-9,
        }
    }
}

impl ClassifyParams {
    pub fn with_caps(m_cap: f64, v_cap: f64) -> Self {
        Self {
            m_cap,
            v_cap,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TreeFlags {
    pub recollision: bool,
    pub initial_overlap: bool,
    pub grazing: bool,
    pub too_many: bool,
    pub too_fast: bool,
    pub good: bool,
}

impl TreeFlags {
    pub fn new(recollision: bool, initial_overlap: bool, grazing: bool, too_many: bool, too_fast: bool) -> Self {
        let good = !(recollision || initial_overlap || grazing || too_many || too_fast);
        Self {
            recollision,
            initial_overlap,
            grazing,
            too_many,
            too_fast,
            good,
        }
    }
}

/// One free-flight segment of the tagged particle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub t_start: f64,
    pub t_end: f64,
    pub x_start: Vec3,
    pub v: Vec3,
}

impl Segment {
    pub fn position_at(&self, t: f64) -> Vec3 {
        wrap_position(self.x_start + self.v * (t - self.t_start))
    }
}

/// Path of the background particle met at one marker: free flight with the
/// incoming velocity before contact and with the post-collisional velocity
/// after.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackgroundPath {
    pub x_initial: Vec3,
    pub x_contact: Vec3,
    pub t_contact: f64,
    pub v_in: Vec3,
    pub v_out: Vec3,
}

impl BackgroundPath {
    pub fn position_at(&self, t: f64) -> Vec3 {
        if t <= self.t_contact {
            wrap_position(self.x_initial + self.v_in * t)
        } else {
            wrap_position(self.x_contact + self.v_out * (t - self.t_contact))
        }
    }

    pub fn velocity_at(&self, t: f64) -> Vec3 {
        if t < self.t_contact {
            self.v_in
        } else {
            self.v_out
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructedPaths {
    pub segments: Vec<Segment>,
    pub backgrounds: Vec<BackgroundPath>,
}

impl ReconstructedPaths {
    pub fn tagged_at(&self, t: f64) -> PhasePoint {
        let seg = self
            .segments
            .iter()
            .find(|s| t < s.t_end)
            .unwrap_or_else(|| self.segments.last().expect("at least one segment"));
        PhasePoint {
            x: seg.position_at(t),
            v: seg.v,
        }
    }

    /// Whether any background particle comes within `eps` of the tagged one
    /// at a time other than its own contact.
    pub fn has_recollision(&self, eps: f64, time_tol: f64) -> bool {
        self.backgrounds
            .iter()
            .any(|bg| self.background_recollides(bg, eps, time_tol))
    }

    fn background_recollides(&self, bg: &BackgroundPath, eps: f64, time_tol: f64) -> bool {
        for seg in &self.segments {
            // Split the segment at the background's own contact time.
            let pieces = [
                (seg.t_start, seg.t_end.min(bg.t_contact)),
                (seg.t_start.max(bg.t_contact), seg.t_end),
            ];
            for (a, b) in pieces {
                if b <= a {
                    continue;
                }
                let probe = 0.5 * (a + b);
                let p = torus_displacement(seg.position_at(a), bg_position_from(bg, a, probe));
                let w = bg.velocity_at(probe) - seg.v;
                for (lo, hi) in proximity_intervals(p, w, eps, b - a) {
                    let (lo, hi) = (a + lo, a + hi);
                    if lo < bg.t_contact - time_tol || hi > bg.t_contact + time_tol {
                        return true;
                    }
                }
            }
        }
        false
    }
}

/// Background position at time `t`, taking the branch that is active at
/// `probe` (so both ends of a piece use the same straight line).
fn bg_position_from(bg: &BackgroundPath, t: f64, probe: f64) -> Vec3 {
    if probe < bg.t_contact {
        wrap_position(bg.x_initial + bg.v_in * t)
    } else {
        wrap_position(bg.x_contact + bg.v_out * (t - bg.t_contact))
    }
}

/// Writes trees as newline-delimited JSON.
pub fn write_ndjson<W: Write>(mut out: W, trees: &[CollisionTree]) -> Result<()> {
    for t in trees {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_ndjson<R: BufRead>(input: R) -> Result<Vec<CollisionTree>> {
    let mut trees = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let tree: CollisionTree = serde_json::from_str(&line)?;
        tree.validate()?;
        trees.push(tree);
    }
    Ok(trees)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pp(x: [f64; 3], v: [f64; 3]) -> PhasePoint {
        PhasePoint::new(Vec3(x), Vec3(v)).unwrap()
    }

    fn marker(t: f64, nu: [f64; 3], v: [f64; 3]) -> CollisionMarker {
        CollisionMarker::new(t, Vec3(nu), Vec3(v)).unwrap()
    }

    #[test]
    fn prune_final_drops_last_marker() {
        let root = pp([0.1, 0.2, 0.3], [1.0, 0.0, 0.0]);
        let ms = vec![
            marker(0.1, [1., 0., 0.], [0., 0., 0.]),
            marker(0.2, [0., 1., 0.], [0., -1., 0.]),
            marker(0.3, [0., 0., 1.], [0., 0., -1.]),
        ];
        let tree = CollisionTree::new(root, ms.clone(), 1.0).unwrap();
        let p = tree.prune_final().unwrap();
        assert_eq!(p.markers, ms[..2].to_vec());
        assert_eq!(p.root, root);
        let mut t = tree.clone();
        for _ in 0..3 {
            t = t.prune_final().unwrap();
        }
        assert_eq!(t.n(), 0);
        assert!(matches!(t.prune_final(), Err(Error::NoCollision)));
    }

    #[test]
    fn max_velocity_examples() {
        let t0 = CollisionTree::collision_free(pp([0.; 3], [2.0, 0., 0.]), 1.0);
        assert_eq!(t0.max_velocity(), 2.0);
        let t1 = CollisionTree::new(
            pp([0.; 3], [1.0, 0., 0.]),
            vec![marker(0.5, [1., 0., 0.], [-3., 0., 0.])],
            1.0,
        )
        .unwrap();
        assert_eq!(t1.tagged_velocities()[1], Vec3::new(-3., 0., 0.));
        assert_eq!(t1.max_velocity(), 3.0);
    }

    #[test]
    fn collision_free_tree_is_good() {
        let t = CollisionTree::collision_free(pp([0.5; 3], [0.3, 0.2, 0.1]), 2.0);
        let f = t.classify(0.01, &ClassifyParams::default());
        assert!(f.good);
        let paths = t.reconstruct(0.01);
        assert_eq!(paths.segments.len(), 1);
        let s = paths.tagged_at(1.5);
        assert!(torus_distance(s.x, wrap_position(Vec3::new(0.95, 0.8, 0.65))) < 1e-12);
    }

    #[test]
    fn velocity_jumps_once_at_marker() {
        let t = CollisionTree::new(
            pp([0.5; 3], [1.0, 0., 0.]),
            vec![marker(0.25, [1., 0., 0.], [-1., 0., 0.])],
            1.0,
        )
        .unwrap();
        assert_eq!(t.tagged_state_at(0.2499).v, Vec3::new(1., 0., 0.));
        assert_eq!(t.tagged_state_at(0.25).v, Vec3::new(-1., 0., 0.));
        assert_eq!(t.tagged_state_at(0.9).v, Vec3::new(-1., 0., 0.));
    }

    #[test]
    fn contact_condition_holds_at_every_marker() {
        let t = CollisionTree::new(
            pp([0.1, 0.2, 0.3], [0.7, -0.2, 0.4]),
            vec![
                marker(0.2, [0.6, 0.8, 0.], [-0.5, -1.0, 0.3]),
                marker(0.45, [0., 0.6, 0.8], [0.2, -1.5, -1.0]),
            ],
            1.0,
        )
        .unwrap();
        let eps = 0.02;
        let paths = t.reconstruct(eps);
        for bg in &paths.backgrounds {
            let x_tag = t.tagged_state_at(bg.t_contact).x;
            let d = torus_distance(x_tag, bg.position_at(bg.t_contact));
            assert!((d - eps).abs() < 1e-10, "{d}");
        }
    }

    #[test]
    fn head_on_is_not_grazing_and_tangential_is() {
        let head_on = CollisionTree::new(
            pp([0.5; 3], [1.0, 0., 0.]),
            vec![marker(0.5, [1., 0., 0.], [-1., 0., 0.])],
            1.0,
        )
        .unwrap();
        assert!(!head_on.classify(0.01, &ClassifyParams::default()).grazing);
        let tangential = CollisionTree::new(
            pp([0.5; 3], [1.0, 0., 0.]),
            vec![marker(0.5, [0., 1., 0.], [0., 0., 0.])],
            1.0,
        )
        .unwrap();
        assert!(tangential.classify(0.01, &ClassifyParams::default()).grazing);
    }

    #[test]
    fn ndjson_layout() {
        let t = CollisionTree::new(
            pp([0.5, 0.25, 0.0], [1.0, 0., 0.]),
            vec![marker(0.5, [1., 0., 0.], [-1., 0., 0.])],
            1.0,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_ndjson(&mut buf, std::slice::from_ref(&t)).unwrap();
        let line = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            line.trim(),
            r#"{"root":{"x":[0.5,0.25,0.0],"v":[1.0,0.0,0.0]},"markers":[{"t":0.5,"nu":[1.0,0.0,0.0],"v":[-1.0,0.0,0.0]}],"horizon":1.0}"#
        );
        let back = read_ndjson(&buf[..]).unwrap();
        assert_eq!(back, vec![t]);
    }

    #[test]
    fn unordered_markers_are_rejected() {
        let r = CollisionTree::new(
            pp([0.; 3], [0.; 3]),
            vec![marker(0.5, [1., 0., 0.], [0.; 3]), marker(0.5, [1., 0., 0.], [0.; 3])],
            1.0,
        );
        assert!(r.is_err());
    }
}
