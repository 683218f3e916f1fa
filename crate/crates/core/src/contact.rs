//! Contact geometry of two free-flying spheres on the unit torus.
//!
//! All routines take the relative position `p` (other minus self, any image)
//! and relative velocity `w`, and work over every periodic image reachable
//! within the requested duration.

use crate::kinetics::torus_displacement;
use crate::vec3::Vec3;

/// Integer image offsets `m` such that `|p + m + s w|` can drop to `eps` for
/// some `s ∈ [0, duration]`.
fn reachable_images(p: Vec3, w: Vec3, eps: f64, duration: f64, mut visit: impl FnMut(Vec3)) {
    let reach = w.norm() * duration + eps;
    let lo = |c: f64| (-c - reach).ceil() as i64;
    let hi = |c: f64| (-c + reach).floor() as i64;
    for mx in lo(p[0])..=hi(p[0]) {
        for my in lo(p[1])..=hi(p[1]) {
            for mz in lo(p[2])..=hi(p[2]) {
                visit(Vec3([mx as f64, my as f64, mz as f64]));
            }
        }
    }
}

/// Earliest `s ∈ (0, horizon]` at which the separation closes to `eps`
/// (an entry root of `|p + m + s w| = eps` over periodic images).
pub fn first_contact(p: Vec3, w: Vec3, eps: f64, horizon: f64) -> Option<f64> {
    let a = w.norm_sq();
    if a == 0.0 || horizon <= 0.0 {
        return None;
    }
    let p = p.map(crate::kinetics::minimum_image);
    // The nearest image is the closest one; nothing is reachable if even it
    // stays out of range over the whole horizon.
    if p.norm() - a.sqrt() * horizon > eps {
        return None;
    }
    let mut best: Option<f64> = None;
    reachable_images(p, w, eps, horizon, |m| {
        let q = p + m;
        let b = q.dot(w);
        if b >= 0.0 {
            return;
        }
        let c = q.norm_sq() - eps * eps;
        if c < 0.0 {
            return;
        }
        let disc = b * b - a * c;
        if disc < 0.0 {
            return;
        }
        let s = c / (-b + disc.sqrt());
        if s > 0.0 && s <= horizon && best.is_none_or(|t| s < t) {
            best = Some(s);
        }
    });
    best
}

/// Every sub-interval of `[0, duration]` on which some periodic image lies
/// within `eps`, in no particular order.
pub fn proximity_intervals(p: Vec3, w: Vec3, eps: f64, duration: f64) -> Vec<(f64, f64)> {
    let p = p.map(crate::kinetics::minimum_image);
    let a = w.norm_sq();
    let mut out = Vec::new();
    reachable_images(p, w, eps, duration, |m| {
        let q = p + m;
        let c = q.norm_sq() - eps * eps;
        if a == 0.0 {
            if c <= 0.0 {
                out.push((0.0, duration));
            }
            return;
        }
        let b = q.dot(w);
        let disc = b * b - a * c;
        if disc < 0.0 {
            return;
        }
        let sq = disc.sqrt();
        let (s1, s2) = if b <= 0.0 {
            let s2 = (-b + sq) / a;
            (if s2 > 0.0 { c / (a * s2) } else { (-b - sq) / a }, s2)
        } else {
            let s1 = (-b - sq) / a;
            (s1, if s1 < 0.0 { c / (a * s1) } else { (-b + sq) / a })
        };
        let lo = s1.max(0.0);
        let hi = s2.min(duration);
        if lo <= hi {
            out.push((lo, hi));
        }
    });
    out
}

/// Squared-distance minimum over `[0, duration]` and all images; used by
/// tests and diagnostics.
pub fn min_separation(p: Vec3, w: Vec3, duration: f64) -> f64 {
    let p = p.map(crate::kinetics::minimum_image);
    let mut best = f64::INFINITY;
    let a = w.norm_sq();
    reachable_images(p, w, 1.0, duration, |m| {
        let q = p + m;
        let s = if a > 0.0 {
            (-q.dot(w) / a).clamp(0.0, duration)
        } else {
            0.0
        };
        best = best.min((q + w * s).norm());
    });
    best
}

/// Relative minimum-image position `b - a`.
#[inline]
pub fn relative(a: Vec3, b: Vec3) -> Vec3 {
    torus_displacement(a, b)
}
