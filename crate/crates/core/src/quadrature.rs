//! Gauss rules and octahedrally symmetric spherical designs.

use std::f64::consts::PI;

use crate::vec3::Vec3;

/// Gauss–Legendre nodes and weights on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    /// Integrates `f` over [a, b].
    pub fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(mid + half * x))
            .sum::<f64>()
            * half
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let dp = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, dp)
}

/// Gauss–Hermite rule for the weight `exp(-x^2)` on the real line.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Golub–Welsch via the symmetric tridiagonal Jacobi matrix.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let off: Vec<f64> = (1..n).map(|k| (k as f64 / 2.0).sqrt()).collect();
        let (vals, first) = symmetric_tridiagonal_eigen(&vec![0.0; n], &off);
        let mu0 = PI.sqrt();
        let mut pairs: Vec<(f64, f64)> = vals.into_iter().zip(first).map(|(x, q)| (x, mu0 * q * q)).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        // Enforce exact symmetry of the rule.
        for i in 0..n / 2 {
            let j = n - 1 - i;
            let x = 0.5 * (pairs[j].0 - pairs[i].0);
            let w = 0.5 * (pairs[i].1 + pairs[j].1);
            pairs[i] = (-x, w);
            pairs[j] = (x, w);
        }
        if n % 2 == 1 {
            pairs[n / 2].0 = 0.0;
        }
        Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        }
    }
}

/// Eigenvalues and first eigenvector components of a symmetric tridiagonal
/// matrix (implicit QL with Wilkinson shifts).
fn symmetric_tridiagonal_eigen(diag: &[f64], off: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = diag.len();
    let mut d = diag.to_vec();
    let mut e = vec![0.0; n];
    e[..n - 1].copy_from_slice(off);
    // z holds the first row of the eigenvector matrix.
    let mut z = vec![0.0; n];
    z[0] = 1.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            assert!(iter < 200, "tridiagonal QL did not converge");
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let mut s = 1.0;
            let mut c = 1.0;
            let mut p = 0.0;
            let mut i = m;
            let mut underflow = false;
            while i > l {
                i -= 1;
                let mut f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                f = z[i + 1];
                z[i + 1] = s * z[i] + c * f;
                z[i] = c * z[i] - s * f;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    (d, z)
}

/// A quadrature rule on the unit sphere whose weights sum to 4π.
#[derive(Debug, Clone)]
pub struct SphereDesign {
    pub points: Vec<Vec3>,
    pub weights: Vec<f64>,
}

impl SphereDesign {
    /// Lebedev rules with 6, 14, 26 or 50 points. All are invariant under the
    /// full octahedral group.
    pub fn lebedev(order: usize) -> Option<Self> {
        let mut pts = Vec::new();
        let mut w = Vec::new();
        let mut push = |set: Vec<Vec3>, weight: f64| {
            for p in set {
                pts.push(p);
                w.push(4.0 * PI * weight);
            }
        };
        match order {
            6 => push(axes(), 1.0 / 6.0),
            14 => {
                push(axes(), 1.0 / 15.0);
                push(corners(), 3.0 / 40.0);
            }
            26 => {
                push(axes(), 1.0 / 21.0);
                push(edges(), 4.0 / 105.0);
                push(corners(), 9.0 / 280.0);
            }
            50 => {
                push(axes(), 4.0 / 315.0);
                push(edges(), 64.0 / 2835.0);
                push(corners(), 27.0 / 1280.0);
                let l = 1.0 / 11f64.sqrt();
                let m = 3.0 / 11f64.sqrt();
                push(llm(l, m), 14641.0 / 725760.0);
            }
            _ => return None,
        }
        Some(Self {
            points: pts,
            weights: w,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(Vec3) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(&p, &w)| w * f(p)).sum()
    }
}

fn axes() -> Vec<Vec3> {
    let mut v = Vec::with_capacity(6);
    for i in 0..3 {
        for s in [1.0, -1.0] {
            let mut a = [0.0; 3];
            a[i] = s;
            v.push(Vec3(a));
        }
    }
    v
}

fn edges() -> Vec<Vec3> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut v = Vec::with_capacity(12);
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        for si in [h, -h] {
            for sj in [h, -h] {
                let mut a = [0.0; 3];
                a[i] = si;
                a[j] = sj;
                v.push(Vec3(a));
            }
        }
    }
    v
}

fn corners() -> Vec<Vec3> {
    let c = 1.0 / 3f64.sqrt();
    let mut v = Vec::with_capacity(8);
    for sx in [c, -c] {
        for sy in [c, -c] {
            for sz in [c, -c] {
                v.push(Vec3([sx, sy, sz]));
            }
        }
    }
    v
}

fn llm(l: f64, m: f64) -> Vec<Vec3> {
    let mut v = Vec::with_capacity(24);
    for k in 0..3 {
        for s0 in [1.0, -1.0] {
            for s1 in [1.0, -1.0] {
                for s2 in [1.0, -1.0] {
                    let mut a = [l * s0, l * s1, l * s2];
                    a[k] = m * a[k].signum();
                    v.push(Vec3(a));
                }
            }
        }
    }
    v
}
