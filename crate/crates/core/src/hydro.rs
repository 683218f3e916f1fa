//! Diffusive limit: the linearized collision operator on a velocity grid,
//! the diffusion parameter `κ_β`, the heat equation on the torus, and the L¹
//! gap between rescaled kinetic solutions and `ρ(τ, x) M_β(v)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{solve_with_kernel, CollisionKernel, GridSolution, KernelOptions, VelocityGrid};
use crate::kinetics::{Density, SpatialProfile};
use crate::quadrature::GaussLegendre;
use crate::vec3::Vec3;

/// `(Lφ)(v) = ∫∫ [φ(v) - φ(v')] M_β(v₁) [(v - v₁)·ν]₊ dv₁ dν` on a grid.
#[derive(Debug, Clone)]
pub struct LinearizedOperator {
    pub beta: f64,
    pub kernel: CollisionKernel,
    /// Discrete Maxwellian cell masses, the weights of the inner product.
    pub weights: Vec<f64>,
    /// `M_β` mass outside the grid box.
    pub tail_mass: f64,
    /// Set when the cutoff is below `5/√β`.
    pub warning: Option<String>,
}

/// Mass of `M_β` inside `[-R, R]³`.
pub fn maxwellian_box_mass(beta: f64, r: f64) -> f64 {
    let rule = GaussLegendre::new(24);
    let norm = (beta / (2.0 * PI)).sqrt();
    let panels = 16;
    let h = 2.0 * r / panels as f64;
    let axis: f64 = (0..panels)
        .map(|k| {
            let a = -r + k as f64 * h;
            rule.integrate(a, a + h, |x| norm * (-0.5 * beta * x * x).exp())
        })
        .sum();
    axis.powi(3)
}

pub fn build_operator(beta: f64, grid: VelocityGrid, opts: &KernelOptions) -> Result<LinearizedOperator> {
    let g0 = Density::maxwellian(beta)?;
    let opts = KernelOptions {
        symmetrize: true,
        ..*opts
    };
    let kernel = CollisionKernel::build(grid, &g0, &opts)?;
    let weights = kernel
        .equilibrium
        .clone()
        .ok_or_else(|| Error::Assertion("Maxwellian kernel lost its equilibrium".into()))?;
    let tail_mass = 1.0 - maxwellian_box_mass(beta, grid.cutoff);
    let warning = (grid.cutoff * beta.sqrt() < 5.0).then(|| {
        format!(
            "cutoff {} is below 5/sqrt(beta); Maxwellian tail mass outside the grid is {tail_mass:e}",
            grid.cutoff
        )
    });
    Ok(LinearizedOperator {
        beta,
        kernel,
        weights,
        tail_mass,
        warning,
    })
}

impl LinearizedOperator {
    pub fn grid(&self) -> VelocityGrid {
        self.kernel.grid
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn apply(&self, phi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; phi.len()];
        self.kernel.apply_linearized(phi, &mut out);
        out
    }

    /// `⟨a, b⟩ = Σ M_i a_i b_i`.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(a.iter().zip(b))
            .map(|(w, (x, y))| w * x * y)
            .sum()
    }

    fn deflate(&self, x: &mut [f64]) {
        let mean: f64 =
            self.weights.iter().zip(x.iter()).map(|(w, v)| w * v).sum::<f64>() / self.weights.iter().sum::<f64>();
        x.iter_mut().for_each(|v| *v -= mean);
    }

    /// Solves `L χ = b` on functions with zero weighted mean by conjugate
    /// gradients in the weighted inner product. Returns `(χ, iterations)`.
    pub fn solve(&self, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize)> {
        let n = self.len();
        let mut rhs = b.to_vec();
        self.deflate(&mut rhs);
        let bnorm = self.inner(&rhs, &rhs).sqrt();
        let mut x = vec![0.0; n];
        if bnorm == 0.0 {
            return Ok((x, 0));
        }
        let mut r = rhs.clone();
        let mut p = r.clone();
        let mut rr = self.inner(&r, &r);
        for it in 1..=max_iter {
            let ap = self.apply(&p);
            let pap = self.inner(&p, &ap);
            if pap <= 0.0 {
                return Err(Error::Solver {
                    residual: rr.sqrt() / bnorm,
                    iterations: it,
                });
            }
            let alpha = rr / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            self.deflate(&mut r);
            let rr_new = self.inner(&r, &r);
            if rr_new.sqrt() <= tol * bnorm {
                self.deflate(&mut x);
                return Ok((x, it));
            }
            let beta = rr_new / rr;
            for i in 0..n {
                p[i] = r[i] + beta * p[i];
            }
            rr = rr_new;
        }
        Err(Error::Solver {
            residual: rr.sqrt() / bnorm,
            iterations: max_iter,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaReport {
    pub beta: f64,
    pub grid: VelocityGrid,
    pub kappa: f64,
    /// `D_ab = ⟨v_a, χ_b⟩`.
    pub tensor: [[f64; 3]; 3],
    /// Largest weighted residual norm `‖L χ_a - v_a‖` over the three solves.
    pub residual: f64,
    /// Largest `|⟨χ_a, 1⟩|`.
    pub mean_constraint: f64,
    pub iterations: usize,
    /// True when the assembled operator needed a sign flip to give `κ > 0`.
    pub sign_flipped: bool,
    pub tail_mass: f64,
}

impl KappaReport {
    /// Largest off-diagonal or diagonal spread relative to `κ`.
    pub fn anisotropy(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                let target = if a == b { self.kappa } else { 0.0 };
                worst = worst.max((self.tensor[a][b] - target).abs() / self.kappa.abs());
            }
        }
        worst
    }
}

/// Maximum accepted residual `‖L χ - v‖` in the weighted norm.
pub const KAPPA_RESIDUAL_TOL: f64 = 1e-8;

pub fn kappa(op: &LinearizedOperator) -> Result<KappaReport> {
    let grid = op.grid();
    let nodes = grid.nodes();
    let mut chis = Vec::with_capacity(3);
    let mut residual: f64 = 0.0;
    let mut iterations = 0;
    let mut mean_constraint: f64 = 0.0;
    let ones = vec![1.0; op.len()];
    for a in 0..3 {
        let mut b: Vec<f64> = nodes.iter().map(|v| v[a]).collect();
        op.deflate(&mut b);
        let (chi, it) = op.solve(&b, 1e-12, 10 * op.len())?;
        let lchi = op.apply(&chi);
        let diff: Vec<f64> = lchi.iter().zip(&b).map(|(x, y)| x - y).collect();
        residual = residual.max(op.inner(&diff, &diff).sqrt());
        mean_constraint = mean_constraint.max(op.inner(&chi, &ones).abs());
        iterations += it;
        chis.push(chi);
    }
    if residual > KAPPA_RESIDUAL_TOL {
        return Err(Error::Solver { residual, iterations });
    }
    let mut tensor = [[0.0; 3]; 3];
    for a in 0..3 {
        let va: Vec<f64> = nodes.iter().map(|v| v[a]).collect();
        for b in 0..3 {
            tensor[a][b] = op.inner(&va, &chis[b]);
        }
    }
    let mut k = (tensor[0][0] + tensor[1][1] + tensor[2][2]) / 3.0;
    let sign_flipped = k < 0.0;
    if sign_flipped {
        k = -k;
        tensor.iter_mut().flatten().for_each(|d| *d = -*d);
    }
    Ok(KappaReport {
        beta: op.beta,
        grid,
        kappa: k,
        tensor,
        residual,
        mean_constraint,
        iterations,
        sign_flipped,
        tail_mass: op.tail_mass,
    })
}

/// Spectral solution of `∂_τ ρ = κ Δρ` on the unit torus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatSolution {
    /// Wave vectors and initial coefficients of `ρ = Σ ρ_k e^{2πi k·x}`.
    pub modes: Vec<([i32; 3], Complex64)>,
    pub kappa: f64,
    pub times: Vec<f64>,
    /// `coeffs[t][mode]`.
    pub coeffs: Vec<Vec<Complex64>>,
}

pub fn heat_solve(rho0: &[([i32; 3], Complex64)], kappa: f64, times: &[f64]) -> Result<HeatSolution> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::Contract(format!("kappa must be > 0, got {kappa}")));
    }
    let coeffs = times
        .iter()
        .map(|&tau| {
            rho0.iter()
                .map(|(k, z)| {
                    let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
                    z * (-kappa * 4.0 * PI * PI * k2 * tau).exp()
                })
                .collect()
        })
        .collect();
    Ok(HeatSolution {
        modes: rho0.to_vec(),
        kappa,
        times: times.to_vec(),
        coeffs,
    })
}

impl HeatSolution {
    pub fn density_at(&self, ti: usize, x: Vec3) -> f64 {
        self.modes
            .iter()
            .zip(&self.coeffs[ti])
            .map(|((k, _), z)| {
                let phase = 2.0 * PI * (k[0] as f64 * x[0] + k[1] as f64 * x[1] + k[2] as f64 * x[2]);
                (z * Complex64::from_polar(1.0, phase)).re
            })
            .sum()
    }
}

/// Fourier modes of `1 + a cos(2π k·x)`, both signs listed.
pub fn cosine_profile(amplitude: f64, k: [i32; 3]) -> Vec<([i32; 3], Complex64)> {
    vec![
        ([0, 0, 0], Complex64::new(1.0, 0.0)),
        (k, Complex64::new(0.5 * amplitude, 0.0)),
        ([-k[0], -k[1], -k[2]], Complex64::new(0.5 * amplitude, 0.0)),
    ]
}

/// Kinetic solution at times `c τ` started from `ρ₀(x)` times the discrete
/// Maxwellian of the operator. The step is the largest stable one below
/// `dt_max`.
pub fn kinetic_solve(
    op: &LinearizedOperator,
    rho0: &SpatialProfile,
    c: f64,
    taus: &[f64],
    dt_max: f64,
) -> Result<GridSolution> {
    let stable = 0.45 / (c * op.kernel.max_loss());
    let times: Vec<f64> = taus.iter().map(|tau| c * tau).collect();
    solve_with_kernel(rho0, &op.weights, &op.kernel, c, &times, dt_max.min(stable))
}

/// Heat solution matching a spatial profile.
pub fn heat_from_profile(rho0: &SpatialProfile, kappa: f64, taus: &[f64]) -> Result<HeatSolution> {
    match *rho0 {
        SpatialProfile::Uniform => heat_solve(&[([0, 0, 0], Complex64::new(1.0, 0.0))], kappa, taus),
        SpatialProfile::Cosine { amplitude, k } => heat_solve(&cosine_profile(amplitude, k), kappa, taus),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub c: f64,
    pub tau: f64,
    pub l1_gap: f64,
    /// `M_β` mass outside the velocity grid, not seen by the gap.
    pub tail_error: f64,
}

/// Position points per varying axis used for the x-integral of the gap.
const X_POINTS: usize = 64;

/// `‖f(cτ) - ρ(τ) M_β‖_{L¹}` for every output `τ`. The kinetic solution must
/// have been computed at times `c τ` on the operator's grid.
pub fn diffusive_compare(
    kinetic: &GridSolution,
    rho: &HeatSolution,
    op: &LinearizedOperator,
    c: f64,
) -> Result<Vec<GapRow>> {
    if kinetic.grid != op.grid() {
        return Err(Error::GridMismatch(
            "kinetic solution and operator use different velocity grids".into(),
        ));
    }
    if kinetic.times.len() != rho.times.len()
        || kinetic
            .times
            .iter()
            .zip(&rho.times)
            .any(|(t, tau)| (t - c * tau).abs() > 1e-12 * t.max(1.0))
    {
        return Err(Error::GridMismatch(
            "kinetic times are not c times the diffusive times".into(),
        ));
    }
    // Only axes along which some mode varies need resolving.
    let mut varies = [false; 3];
    for m in &kinetic.modes {
        for a in 0..3 {
            varies[a] |= m.k[a] != 0;
        }
    }
    for (k, _) in &rho.modes {
        for a in 0..3 {
            varies[a] |= k[a] != 0;
        }
    }
    let counts = varies.map(|v| if v { X_POINTS } else { 1 });
    let total_points = counts.iter().product::<usize>() as f64;
    let mut rows = Vec::with_capacity(rho.times.len());
    for ti in 0..rho.times.len() {
        let mut gap = 0.0;
        for ix in 0..counts[0] {
            for iy in 0..counts[1] {
                for iz in 0..counts[2] {
                    let x = Vec3::new(
                        (ix as f64 + 0.5) / counts[0] as f64,
                        (iy as f64 + 0.5) / counts[1] as f64,
                        (iz as f64 + 0.5) / counts[2] as f64,
                    );
                    let f = kinetic.cell_masses_at(ti, x);
                    let r = rho.density_at(ti, x);
                    gap += f.iter().zip(&op.weights).map(|(a, m)| (a - r * m).abs()).sum::<f64>();
                }
            }
        }
        rows.push(GapRow {
            c,
            tau: rho.times[ti],
            l1_gap: gap / total_points,
            tail_error: op.tail_mass,
        });
    }
    Ok(rows)
}
