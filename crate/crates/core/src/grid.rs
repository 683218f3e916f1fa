//! Deterministic linear Boltzmann solver on a velocity grid with Fourier
//! modes in position.
//!
//! The discrete collision operator moves mass between velocity cells. Its
//! gain part integrates over background velocities with a product
//! Gauss–Hermite rule (or the sample set of a table density) and over
//! scattering directions with a sphere design, using the centre-of-mass form
//! `∫ (w·ν)₊ φ(v') dν = |w|/4 ∫ φ(V + |w| ω / 2) dω`. Each row is rescaled to
//! the exact loss rate (self-transfers included). For Maxwellian backgrounds
//! the flux matrix is then made symmetric without changing any row sum, so
//! the discrete Maxwellian is exactly stationary.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::histogram::PhaseGrid;
use crate::kinetics::{collision_rate, Density, SpatialProfile};
use crate::quadrature::{GaussHermite, GaussLegendre, SphereDesign};
use crate::vec3::Vec3;

/// Cell-centred Cartesian grid on `[-R, R]³` with `n` cells per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityGrid {
    pub cutoff: f64,
    pub n: usize,
}

impl VelocityGrid {
    pub fn new(cutoff: f64, n: usize) -> Result<Self> {
        if !(cutoff > 0.0 && cutoff.is_finite()) || n < 2 {
            return Err(Error::Config(format!(
                "velocity grid needs R > 0 and n >= 2, got R = {cutoff}, n = {n}"
            )));
        }
        Ok(Self { cutoff, n })
    }

    /// Grid with cutoff `sigmas / √β`, the usual choice for a Maxwellian.
    pub fn for_maxwellian(beta: f64, sigmas: f64, n: usize) -> Result<Self> {
        Self::new(sigmas / beta.sqrt(), n)
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.cutoff / self.n as f64
    }

    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight of every node (the cell volume).
    pub fn weight(&self) -> f64 {
        self.spacing().powi(3)
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.cutoff + (i as f64 + 0.5) * self.spacing()
    }

    pub fn flat(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    pub fn unflat(&self, idx: usize) -> [usize; 3] {
        [idx / (self.n * self.n), (idx / self.n) % self.n, idx % self.n]
    }

    pub fn node(&self, idx: usize) -> Vec3 {
        let [i, j, k] = self.unflat(idx);
        Vec3::new(self.coord(i), self.coord(j), self.coord(k))
    }

    pub fn nodes(&self) -> Vec<Vec3> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    /// Cell containing `v`, if inside the grid.
    pub fn locate(&self, v: Vec3) -> Option<usize> {
        let h = self.spacing();
        let mut ix = [0usize; 3];
        for a in 0..3 {
            let u = (v[a] + self.cutoff) / h;
            if !(0.0..self.n as f64).contains(&u) {
                return None;
            }
            ix[a] = u as usize;
        }
        Some(self.flat(ix[0], ix[1], ix[2]))
    }

    /// Mass of `density` in every cell, renormalised to total one.
    pub fn cell_masses(&self, density: &Density) -> Vec<f64> {
        let h = self.spacing();
        let mut m = match density {
            Density::Maxwellian { beta } => {
                let rule = GaussLegendre::new(12);
                let norm = (beta / (2.0 * PI)).sqrt();
                let axis: Vec<f64> = (0..self.n)
                    .map(|i| {
                        let a = -self.cutoff + i as f64 * h;
                        rule.integrate(a, a + h, |x| norm * (-0.5 * beta * x * x).exp())
                    })
                    .collect();
                (0..self.len())
                    .map(|idx| {
                        let [i, j, k] = self.unflat(idx);
                        axis[i] * axis[j] * axis[k]
                    })
                    .collect::<Vec<f64>>()
            }
            Density::Table { samples } => {
                let mut m = vec![0.0; self.len()];
                for s in samples.iter() {
                    m[self.nearest(*s)] += 1.0;
                }
                m
            }
            Density::Custom(law) => {
                let rule = GaussLegendre::new(4);
                (0..self.len())
                    .map(|idx| {
                        let c = self.node(idx);
                        let mut acc = 0.0;
                        for (xa, wa) in rule.nodes.iter().zip(&rule.weights) {
                            for (xb, wb) in rule.nodes.iter().zip(&rule.weights) {
                                for (xc, wc) in rule.nodes.iter().zip(&rule.weights) {
                                    let v = c + Vec3::new(*xa, *xb, *xc) * (0.5 * h);
                                    acc += wa * wb * wc * law.pdf(v);
                                }
                            }
                        }
                        acc * (0.5 * h).powi(3)
                    })
                    .collect()
            }
        };
        let total: f64 = m.iter().sum();
        if total > 0.0 {
            m.iter_mut().for_each(|x| *x /= total);
        }
        m
    }

    /// Cell containing `v`, clamped onto the boundary layer when outside.
    pub fn nearest(&self, v: Vec3) -> usize {
        let h = self.spacing();
        let ix = [0, 1, 2].map(|a| (((v[a] + self.cutoff) / h).floor().max(0.0) as usize).min(self.n - 1));
        self.flat(ix[0], ix[1], ix[2])
    }

    /// Velocity-only partition whose boxes are unions of `aggregate³` grid
    /// cells; the outer boxes extend to infinity.
    pub fn phase_grid(&self, aggregate: usize) -> Result<PhaseGrid> {
        if aggregate == 0 || !self.n.is_multiple_of(aggregate) {
            return Err(Error::GridMismatch(format!(
                "{} cells do not split into blocks of {aggregate}",
                self.n
            )));
        }
        let h = self.spacing() * aggregate as f64;
        let cuts: Vec<f64> = (1..self.n / aggregate).map(|i| -self.cutoff + i as f64 * h).collect();
        PhaseGrid::new([1, 1, 1], [cuts.clone(), cuts.clone(), cuts])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelOptions {
    /// Gauss–Hermite order per axis for Maxwellian backgrounds.
    pub background_order: usize,
    /// Points of the scattering-direction design (6, 14, 26 or 50).
    pub sphere_points: usize,
    /// Detailed-balance symmetrization (Maxwellian backgrounds only).
    pub symmetrize: bool,
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self {
            background_order: 8,
            sphere_points: 26,
            symmetrize: true,
        }
    }
}

/// Jump rates between velocity cells: `rates[j * len + i]` is the rate of
/// moving from cell `j` to cell `i`.
#[derive(Debug, Clone)]
pub struct CollisionKernel {
    pub grid: VelocityGrid,
    pub rates: Vec<f64>,
    /// Total outgoing rate of every cell, self-transfer included.
    pub loss: Vec<f64>,
    /// Cell masses of the background Maxwellian when symmetrized.
    pub equilibrium: Option<Vec<f64>>,
}

fn background_nodes(g0: &Density, order: usize) -> Vec<(Vec3, f64)> {
    match g0 {
        Density::Maxwellian { beta } => {
            let gh = GaussHermite::new(order);
            let scale = (2.0 / beta).sqrt();
            let norm = PI.powf(-1.5);
            let mut out = Vec::with_capacity(order.pow(3));
            for (x, wx) in gh.nodes.iter().zip(&gh.weights) {
                for (y, wy) in gh.nodes.iter().zip(&gh.weights) {
                    for (z, wz) in gh.nodes.iter().zip(&gh.weights) {
                        out.push((Vec3::new(*x, *y, *z) * scale, norm * wx * wy * wz));
                    }
                }
            }
            out
        }
        Density::Table { samples } => {
            let w = 1.0 / samples.len() as f64;
            samples.iter().map(|s| (*s, w)).collect()
        }
        Density::Custom(law) => {
            let sphere = SphereDesign::lebedev(26).expect("26-point rule");
            let radial = GaussLegendre::new(order.max(4));
            let r_max = law.support_radius();
            let mut out = Vec::new();
            for (r, wr) in radial.nodes.iter().zip(&radial.weights) {
                let r = 0.5 * r_max * (r + 1.0);
                for (p, wp) in sphere.points.iter().zip(&sphere.weights) {
                    let v = *p * r;
                    out.push((v, 0.5 * r_max * wr * r * r * wp * law.pdf(v)));
                }
            }
            out
        }
    }
}

/// Adds `w` to the cells around `v` with cloud-in-cell weights; corners that
/// fall outside the grid are dropped.
fn deposit(grid: &VelocityGrid, row: &mut [f64], v: Vec3, w: f64) {
    let h = grid.spacing();
    let n = grid.n as isize;
    let mut base = [0isize; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        let u = (v[a] + grid.cutoff) / h - 0.5;
        let f = u.floor();
        base[a] = f as isize;
        frac[a] = u - f;
    }
    for dx in 0..2 {
        let i = base[0] + dx;
        if i < 0 || i >= n {
            continue;
        }
        let wx = if dx == 0 { 1.0 - frac[0] } else { frac[0] };
        for dy in 0..2 {
            let j = base[1] + dy;
            if j < 0 || j >= n {
                continue;
            }
            let wy = if dy == 0 { 1.0 - frac[1] } else { frac[1] };
            for dz in 0..2 {
                let k = base[2] + dz;
                if k < 0 || k >= n {
                    continue;
                }
                let wz = if dz == 0 { 1.0 - frac[2] } else { frac[2] };
                row[grid.flat(i as usize, j as usize, k as usize)] += w * wx * wy * wz;
            }
        }
    }
}

/// Replaces `rates` by a detailed-balance version with the same row sums.
///
/// The symmetric flux `F = (diag(π) K + (diag(π) K)ᵀ) / 2` is rescaled as
/// `D F D` with a positive diagonal `D` found by symmetric Sinkhorn
/// iteration, so every cell keeps its outgoing rate. Plain averaging alone
/// would let an overestimated rare jump into a tail cell inflate that cell's
/// outgoing rate by the ratio of cell masses.
fn symmetrize(rates: &mut [f64], pi: &[f64]) -> Result<()> {
    let nv = pi.len();
    let target: Vec<f64> = rates
        .par_chunks(nv)
        .zip(pi.par_iter())
        .map(|(r, p)| p * r.iter().sum::<f64>())
        .collect();
    for j in 0..nv {
        rates[j * nv + j] *= pi[j];
        for i in (j + 1)..nv {
            let flux = 0.5 * (pi[j] * rates[j * nv + i] + pi[i] * rates[i * nv + j]);
            rates[j * nv + i] = flux;
            rates[i * nv + j] = flux;
        }
    }
    let mut scale = vec![1.0; nv];
    let mut converged = false;
    for _ in 0..5000 {
        let sums: Vec<f64> = rates
            .par_chunks(nv)
            .map(|row| row.iter().zip(&scale).map(|(f, s)| f * s).sum())
            .collect();
        let mut worst: f64 = 0.0;
        for i in 0..nv {
            if target[i] > 0.0 {
                let got = scale[i] * sums[i];
                worst = worst.max((got - target[i]).abs() / target[i]);
                scale[i] = (scale[i] * target[i] / sums[i]).sqrt();
            }
        }
        if worst < 1e-13 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Solver {
            residual: f64::NAN,
            iterations: 5000,
        });
    }
    rates.par_chunks_mut(nv).enumerate().for_each(|(i, row)| {
        let si = scale[i];
        for (f, sj) in row.iter_mut().zip(&scale) {
            *f = if pi[i] > 0.0 { si * *f * sj / pi[i] } else { 0.0 };
        }
    });
    Ok(())
}

impl CollisionKernel {
    pub fn build(grid: VelocityGrid, g0: &Density, opts: &KernelOptions) -> Result<Self> {
        let nv = grid.len();
        let bg = background_nodes(g0, opts.background_order);
        let sphere = SphereDesign::lebedev(opts.sphere_points)
            .ok_or_else(|| Error::Config(format!("no {}-point sphere design", opts.sphere_points)))?;
        let nodes = grid.nodes();
        let mut rates = vec![0.0; nv * nv];
        rates
            .par_chunks_mut(nv)
            .enumerate()
            .try_for_each(|(j, row)| -> Result<()> {
                let v = nodes[j];
                let mut raw = 0.0;
                for (vb, wb) in &bg {
                    let w = v - *vb;
                    let speed = w.norm();
                    if speed == 0.0 {
                        continue;
                    }
                    raw += wb * PI * speed;
                    let centre = (v + *vb) * 0.5;
                    for (omega, wo) in sphere.points.iter().zip(&sphere.weights) {
                        deposit(&grid, row, centre + *omega * (0.5 * speed), 0.25 * wb * speed * wo);
                    }
                }
                if raw > 0.0 {
                    let scale = collision_rate(v, g0)? / raw;
                    row.iter_mut().for_each(|r| *r *= scale);
                }
                Ok(())
            })?;
        let equilibrium = match (g0, opts.symmetrize) {
            (Density::Maxwellian { .. }, true) => {
                let pi = grid.cell_masses(g0);
                symmetrize(&mut rates, &pi)?;
                Some(pi)
            }
            _ => None,
        };
        let loss = rates.par_chunks(nv).map(|r| r.iter().sum()).collect();
        Ok(Self {
            grid,
            rates,
            loss,
            equilibrium,
        })
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn max_loss(&self) -> f64 {
        self.loss.iter().cloned().fold(0.0, f64::max)
    }

    /// `(L φ)_i = loss_i φ_i - Σ_j rates[i→j] φ_j`, the linearized operator
    /// acting on functions of velocity.
    pub fn apply_linearized(&self, phi: &[f64], out: &mut [f64]) {
        let nv = self.len();
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            let row = &self.rates[i * nv..(i + 1) * nv];
            let gain: f64 = row.iter().zip(phi).map(|(a, b)| a * b).sum();
            *o = self.loss[i] * phi[i] - gain;
        });
    }

    /// Transposed rate matrix, `t[i * len + j] = rates[j→i]`.
    pub fn transposed(&self) -> Vec<f64> {
        let nv = self.len();
        let mut t = vec![0.0; nv * nv];
        t.par_chunks_mut(nv).enumerate().for_each(|(i, row)| {
            for (j, r) in row.iter_mut().enumerate() {
                *r = self.rates[j * nv + i];
            }
        });
        t
    }
}

/// Fourier coefficient of the initial density along one mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub k: [i32; 3],
    /// Every non-zero mode stands for itself and its conjugate `-k`.
    pub paired: bool,
}

/// Solution of the linear Boltzmann equation: cell masses per Fourier mode
/// per output time, `f(x, v) = Σ_k m_k(v) e^{2πi k·x}` plus conjugates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSolution {
    pub grid: VelocityGrid,
    pub modes: Vec<Mode>,
    pub times: Vec<f64>,
    /// `data[t][mode][cell]`.
    pub data: Vec<Vec<Vec<Complex64>>>,
    pub steps: usize,
}

impl GridSolution {
    /// Total mass at output `ti` (the zero mode).
    pub fn mass(&self, ti: usize) -> f64 {
        self.modes
            .iter()
            .zip(&self.data[ti])
            .filter(|(m, _)| m.k == [0, 0, 0])
            .map(|(_, d)| d.iter().map(|z| z.re).sum::<f64>())
            .sum()
    }

    /// Velocity cell masses after integrating out position.
    pub fn velocity_marginal(&self, ti: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.len()];
        for (m, d) in self.modes.iter().zip(&self.data[ti]) {
            if m.k == [0, 0, 0] {
                out.iter_mut().zip(d).for_each(|(o, z)| *o += z.re);
            }
        }
        out
    }

    /// Box masses on a phase-space partition. The mass of a velocity cell is
    /// spread uniformly over the cell and split between boxes by overlap.
    pub fn histogram(&self, ti: usize, grid: &PhaseGrid) -> Vec<f64> {
        let vb = grid.v_bins();
        let nv_boxes: usize = vb.iter().product();
        let nx_boxes: usize = grid.x_bins.iter().product();
        let mut out = vec![0.0; grid.len()];
        // Position-box integrals of every mode.
        let mut xint = vec![vec![Complex64::new(0.0, 0.0); nx_boxes]; self.modes.len()];
        for (mi, m) in self.modes.iter().enumerate() {
            for (bx, slot) in xint[mi].iter_mut().enumerate() {
                let mut idx = bx;
                let mut val = Complex64::new(1.0, 0.0);
                for a in (0..3).rev() {
                    let n = grid.x_bins[a];
                    let cell = idx % n;
                    idx /= n;
                    let (lo, hi) = (cell as f64 / n as f64, (cell + 1) as f64 / n as f64);
                    val *= fourier_interval(m.k[a], lo, hi);
                }
                *slot = if m.paired && m.k != [0, 0, 0] { val * 2.0 } else { val };
            }
        }
        // Per axis: the boxes a grid cell overlaps and the overlap fractions.
        let h = self.grid.spacing();
        let split: Vec<Vec<Vec<(usize, f64)>>> = (0..3)
            .map(|a| {
                let cuts = &grid.v_cuts[a];
                (0..self.grid.n)
                    .map(|i| {
                        let (lo, hi) = (self.grid.coord(i) - 0.5 * h, self.grid.coord(i) + 0.5 * h);
                        (0..vb[a])
                            .filter_map(|k| {
                                let blo = if k == 0 { f64::NEG_INFINITY } else { cuts[k - 1] };
                                let bhi = cuts.get(k).copied().unwrap_or(f64::INFINITY);
                                let overlap = hi.min(bhi) - lo.max(blo);
                                (overlap > 0.0).then_some((k, overlap / h))
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let mut vmass = vec![vec![0.0; nv_boxes]; nx_boxes];
        for cell in 0..self.grid.len() {
            let [i, j, k] = self.grid.unflat(cell);
            for bx in 0..nx_boxes {
                let m: f64 = self.data[ti]
                    .iter()
                    .enumerate()
                    .map(|(mi, d)| (d[cell] * xint[mi][bx]).re)
                    .sum();
                if m == 0.0 {
                    continue;
                }
                for &(b0, f0) in &split[0][i] {
                    for &(b1, f1) in &split[1][j] {
                        for &(b2, f2) in &split[2][k] {
                            vmass[bx][(b0 * vb[1] + b1) * vb[2] + b2] += m * f0 * f1 * f2;
                        }
                    }
                }
            }
        }
        for (bx, row) in vmass.into_iter().enumerate() {
            out[bx * nv_boxes..(bx + 1) * nv_boxes].copy_from_slice(&row);
        }
        out
    }

    /// Density `f(x, v_cell)` times the cell volume, at one position.
    pub fn cell_masses_at(&self, ti: usize, x: Vec3) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.len()];
        for (m, d) in self.modes.iter().zip(&self.data[ti]) {
            let phase = 2.0 * PI * (m.k[0] as f64 * x[0] + m.k[1] as f64 * x[1] + m.k[2] as f64 * x[2]);
            let e = Complex64::from_polar(1.0, phase);
            let factor = if m.paired && m.k != [0, 0, 0] { 2.0 } else { 1.0 };
            out.iter_mut().zip(d).for_each(|(o, z)| *o += factor * (z * e).re);
        }
        out
    }

    /// Rows `(t, kx, ky, kz, cell, re, im)`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "kx", "ky", "kz", "cell", "re", "im"])?;
        for (ti, t) in self.times.iter().enumerate() {
            for (m, d) in self.modes.iter().zip(&self.data[ti]) {
                for (cell, z) in d.iter().enumerate() {
                    w.write_record([
                        crate::harness::fmt_f64(*t),
                        m.k[0].to_string(),
                        m.k[1].to_string(),
                        m.k[2].to_string(),
                        cell.to_string(),
                        crate::harness::fmt_f64(z.re),
                        crate::harness::fmt_f64(z.im),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// `∫_lo^hi e^{2πi k x} dx`.
fn fourier_interval(k: i32, lo: f64, hi: f64) -> Complex64 {
    if k == 0 {
        return Complex64::new(hi - lo, 0.0);
    }
    let w = 2.0 * PI * k as f64;
    (Complex64::from_polar(1.0, w * hi) - Complex64::from_polar(1.0, w * lo)) / Complex64::new(0.0, w)
}

/// Initial mode coefficients of `ρ(x) φ(v)` for a spatial profile.
pub fn initial_modes(profile: &SpatialProfile, velocity: &[f64]) -> (Vec<Mode>, Vec<Vec<Complex64>>) {
    let base: Vec<Complex64> = velocity.iter().map(|&m| Complex64::new(m, 0.0)).collect();
    let zero = Mode {
        k: [0, 0, 0],
        paired: false,
    };
    match *profile {
        SpatialProfile::Uniform => (vec![zero], vec![base]),
        SpatialProfile::Cosine { amplitude, k } => {
            // a cos(2π k·x) = (a/2) e^{2πik·x} + conjugate.
            let half: Vec<Complex64> = base.iter().map(|z| z * (0.5 * amplitude)).collect();
            (vec![zero, Mode { k, paired: true }], vec![base, half])
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Largest time step; the actual step divides every output interval.
    pub dt: f64,
    pub kernel: KernelOptions,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            dt: 0.01,
            kernel: KernelOptions::default(),
        }
    }
}

/// Solves `∂_t f + v·∇_x f = c (gain - loss)` from `f0 = ρ(x) φ(v)`.
pub fn grid_boltzmann_solve(
    profile: &SpatialProfile,
    velocity: &Density,
    g0: &Density,
    c: f64,
    times: &[f64],
    grid: VelocityGrid,
    opts: &SolveOptions,
) -> Result<GridSolution> {
    let kernel = CollisionKernel::build(grid, g0, &opts.kernel)?;
    solve_with_kernel(profile, &grid.cell_masses(velocity), &kernel, c, times, opts.dt)
}

/// Same as [`grid_boltzmann_solve`] with a prebuilt kernel and initial cell
/// masses.
pub fn solve_with_kernel(
    profile: &SpatialProfile,
    velocity: &[f64],
    kernel: &CollisionKernel,
    c: f64,
    times: &[f64],
    dt_max: f64,
) -> Result<GridSolution> {
    let grid = kernel.grid;
    let nv = grid.len();
    if velocity.len() != nv {
        return Err(Error::GridMismatch(format!(
            "{} initial cells for a {nv}-cell grid",
            velocity.len()
        )));
    }
    if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|&t| t < 0.0) {
        return Err(Error::Contract("output times must be non-negative and sorted".into()));
    }
    if dt_max * c * kernel.max_loss() >= 0.5 {
        return Err(Error::Stability(format!(
            "dt·c·max rate = {} must stay below 0.5",
            dt_max * c * kernel.max_loss()
        )));
    }
    let (modes, mut state) = initial_modes(profile, velocity);
    let nodes = grid.nodes();
    let kt = kernel.transposed();
    let loss = &kernel.loss;

    // d m / dt = c (Kᵀ m - loss ∘ m), applied to all real and imaginary
    // parts in one pass over the matrix.
    let rhs = |vecs: &[Vec<f64>], out: &mut [Vec<f64>]| {
        let nvec = vecs.len();
        let rows: Vec<Vec<f64>> = kt
            .par_chunks(nv)
            .enumerate()
            .map(|(i, row)| {
                let mut acc = vec![0.0; nvec];
                for (j, r) in row.iter().enumerate() {
                    if *r != 0.0 {
                        for (a, v) in acc.iter_mut().zip(vecs) {
                            *a += r * v[j];
                        }
                    }
                }
                for (a, v) in acc.iter_mut().zip(vecs) {
                    *a = c * (*a - loss[i] * v[i]);
                }
                acc
            })
            .collect();
        for (i, acc) in rows.into_iter().enumerate() {
            for (o, a) in out.iter_mut().zip(acc) {
                o[i] = a;
            }
        }
    };

    let split = |state: &[Vec<Complex64>]| -> Vec<Vec<f64>> {
        state
            .iter()
            .flat_map(|d| [d.iter().map(|z| z.re).collect(), d.iter().map(|z| z.im).collect()])
            .collect()
    };
    let join = |vecs: &[Vec<f64>], state: &mut [Vec<Complex64>]| {
        for (mi, d) in state.iter_mut().enumerate() {
            for (i, z) in d.iter_mut().enumerate() {
                *z = Complex64::new(vecs[2 * mi][i], vecs[2 * mi + 1][i]);
            }
        }
    };
    let transport = |state: &mut [Vec<Complex64>], h: f64| {
        for (m, d) in modes.iter().zip(state.iter_mut()) {
            if m.k == [0, 0, 0] {
                continue;
            }
            let k = Vec3::new(m.k[0] as f64, m.k[1] as f64, m.k[2] as f64);
            for (z, v) in d.iter_mut().zip(&nodes) {
                *z *= Complex64::from_polar(1.0, -2.0 * PI * k.dot(*v) * h);
            }
        }
    };

    let mut out_data = Vec::with_capacity(times.len());
    let mut now = 0.0;
    let mut steps = 0;
    for &t_out in times {
        let span = t_out - now;
        let n_steps = if span > 0.0 { (span / dt_max).ceil() as usize } else { 0 };
        let dt = if n_steps > 0 { span / n_steps as f64 } else { 0.0 };
        for _ in 0..n_steps {
            transport(&mut state, 0.5 * dt);
            if c > 0.0 {
                // Heun step on the collision part.
                let y0 = split(&state);
                let mut k1 = vec![vec![0.0; nv]; y0.len()];
                rhs(&y0, &mut k1);
                let y1: Vec<Vec<f64>> = y0
                    .iter()
                    .zip(&k1)
                    .map(|(y, k)| y.iter().zip(k).map(|(a, b)| a + dt * b).collect())
                    .collect();
                let mut k2 = vec![vec![0.0; nv]; y0.len()];
                rhs(&y1, &mut k2);
                let y2: Vec<Vec<f64>> = y0
                    .iter()
                    .zip(k1.iter().zip(&k2))
                    .map(|(y, (a, b))| {
                        y.iter()
                            .zip(a.iter().zip(b))
                            .map(|(y, (a, b))| y + 0.5 * dt * (a + b))
                            .collect()
                    })
                    .collect();
                join(&y2, &mut state);
            }
            transport(&mut state, 0.5 * dt);
            steps += 1;
        }
        now = t_out;
        out_data.push(state.clone());
    }
    Ok(GridSolution {
        grid,
        modes,
        times: times.to_vec(),
        data: out_data,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_kernel(beta: f64, n: usize) -> CollisionKernel {
        let g0 = Density::maxwellian(beta).unwrap();
        let grid = VelocityGrid::for_maxwellian(beta, 5.0, n).unwrap();
        CollisionKernel::build(grid, &g0, &KernelOptions::default()).unwrap()
    }

    #[test]
    fn cell_masses_sum_to_one_and_are_symmetric() {
        let grid = VelocityGrid::for_maxwellian(1.0, 5.0, 9).unwrap();
        let m = grid.cell_masses(&Density::maxwellian(1.0).unwrap());
        assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        let nv = grid.len();
        for i in 0..nv {
            assert!((m[i] - m[nv - 1 - i]).abs() < 1e-16);
        }
    }

    #[test]
    fn discrete_maxwellian_is_stationary() {
        let k = small_kernel(1.0, 7);
        let pi = k.equilibrium.clone().unwrap();
        let kt = k.transposed();
        let nv = k.len();
        for i in 0..nv {
            let gain: f64 = (0..nv).map(|j| kt[i * nv + j] * pi[j]).sum();
            assert!((gain - k.loss[i] * pi[i]).abs() < 1e-14, "{i}");
        }
    }

    #[test]
    fn constants_lie_in_the_kernel() {
        let k = small_kernel(2.0, 6);
        let ones = vec![1.0; k.len()];
        let mut out = vec![0.0; k.len()];
        k.apply_linearized(&ones, &mut out);
        assert!(out.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn loss_tracks_the_collision_rate_inside_the_grid() {
        let k = small_kernel(1.0, 9);
        let g0 = Density::maxwellian(1.0).unwrap();
        let centre = k.grid.flat(4, 4, 4);
        let exact = collision_rate(k.grid.node(centre), &g0).unwrap();
        assert!(
            (k.loss[centre] - exact).abs() / exact < 0.02,
            "{} vs {exact}",
            k.loss[centre]
        );
    }

    #[test]
    fn free_transport_matches_the_multiplier() {
        let grid = VelocityGrid::new(2.0, 4).unwrap();
        let g0 = Density::maxwellian(1.0).unwrap();
        let kernel = CollisionKernel::build(grid, &g0, &KernelOptions::default()).unwrap();
        let profile = SpatialProfile::Cosine {
            amplitude: 1.0,
            k: [1, 0, 0],
        };
        let phi = grid.cell_masses(&g0);
        let sol = solve_with_kernel(&profile, &phi, &kernel, 0.0, &[0.37], 0.01).unwrap();
        for (cell, z) in sol.data[0][1].iter().enumerate() {
            let v = grid.node(cell);
            let expect = Complex64::from_polar(0.5 * phi[cell], -2.0 * PI * v[0] * 0.37);
            assert!((z - expect).norm() < 1e-10);
        }
    }

    #[test]
    fn mass_is_conserved_by_collisions() {
        let k = small_kernel(1.0, 6);
        let g0 = Density::maxwellian(1.0).unwrap();
        let hot = k.grid.cell_masses(&Density::maxwellian(0.5).unwrap());
        let sol = solve_with_kernel(&SpatialProfile::Uniform, &hot, &k, 1.0, &[0.1, 0.2, 0.5], 0.005).unwrap();
        for ti in 0..3 {
            assert!((sol.mass(ti) - 1.0).abs() < 1e-10);
        }
        let _ = g0;
    }

    #[test]
    fn stability_limit_is_enforced() {
        let k = small_kernel(1.0, 4);
        let phi = k.grid.cell_masses(&Density::maxwellian(1.0).unwrap());
        let r = solve_with_kernel(&SpatialProfile::Uniform, &phi, &k, 100.0, &[1.0], 0.1);
        assert!(matches!(r, Err(Error::Stability(_))));
    }
}
