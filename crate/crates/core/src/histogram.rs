//! Phase-space box partitions and empirical measures on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinetics::PhasePoint;
use crate::vec3::Vec3;

/// A product partition of `T³ × R³`: uniform boxes in position and, per
/// velocity axis, bins cut at the given interior points (the outer bins are
/// unbounded).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrid {
    pub x_bins: [usize; 3],
    pub v_cuts: [Vec<f64>; 3],
}

impl PhaseGrid {
    pub fn new(x_bins: [usize; 3], v_cuts: [Vec<f64>; 3]) -> Result<Self> {
        if x_bins.contains(&0) {
            return Err(Error::Config("position bins must be positive".into()));
        }
        for cuts in &v_cuts {
            if cuts.windows(2).any(|w| !(w[0] < w[1])) || cuts.iter().any(|c| !c.is_finite()) {
                return Err(Error::Config("velocity cuts must be finite and increasing".into()));
            }
        }
        Ok(Self { x_bins, v_cuts })
    }

    /// Velocity-only partition with `bins` equal cells per axis on `[-r, r]`,
    /// the outer cells extended to infinity.
    pub fn velocity_only(bins: usize, r: f64) -> Result<Self> {
        Self::uniform([1, 1, 1], bins, r)
    }

    pub fn uniform(x_bins: [usize; 3], v_bins: usize, r: f64) -> Result<Self> {
        if v_bins == 0 {
            return Err(Error::Config("velocity bins must be positive".into()));
        }
        let cuts: Vec<f64> = (1..v_bins).map(|i| -r + 2.0 * r * i as f64 / v_bins as f64).collect();
        Self::new(x_bins, [cuts.clone(), cuts.clone(), cuts])
    }

    pub fn v_bins(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| self.v_cuts[a].len() + 1)
    }

    pub fn len(&self) -> usize {
        self.x_bins.iter().product::<usize>() * self.v_bins().iter().product::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn x_index(&self, x: Vec3) -> usize {
        let mut idx = 0;
        for a in 0..3 {
            let n = self.x_bins[a];
            let i = ((x[a] * n as f64) as usize).min(n - 1);
            idx = idx * n + i;
        }
        idx
    }

    fn v_index(&self, v: Vec3) -> usize {
        let mut idx = 0;
        for a in 0..3 {
            let cuts = &self.v_cuts[a];
            let i = cuts.partition_point(|&c| c <= v[a]);
            idx = idx * (cuts.len() + 1) + i;
        }
        idx
    }

    pub fn index(&self, p: &PhasePoint) -> usize {
        let nv: usize = self.v_bins().iter().product();
        self.x_index(p.x) * nv + self.v_index(p.v)
    }

    /// Representative point of a box: the centre in position, and in
    /// velocity the centre of finite bins or, for the unbounded outer bins,
    /// half a neighbouring width beyond the last cut.
    pub fn center(&self, index: usize) -> (Vec3, Vec3) {
        let vb = self.v_bins();
        let nv: usize = vb.iter().product();
        let (mut xi, mut vi) = (index / nv, index % nv);
        let mut x = [0.0; 3];
        let mut v = [0.0; 3];
        for a in (0..3).rev() {
            let n = self.x_bins[a];
            x[a] = ((xi % n) as f64 + 0.5) / n as f64;
            xi /= n;
            let cuts = &self.v_cuts[a];
            let k = vi % vb[a];
            vi /= vb[a];
            let half = if cuts.len() >= 2 {
                0.5 * (cuts[1] - cuts[0]).min(cuts[cuts.len() - 1] - cuts[cuts.len() - 2])
            } else {
                0.5
            };
            v[a] = match (k.checked_sub(1).map(|j| cuts[j]), cuts.get(k)) {
                (Some(lo), Some(hi)) => 0.5 * (lo + hi),
                (Some(lo), None) => lo + half,
                (None, Some(hi)) => hi - half,
                (None, None) => 0.0,
            };
        }
        (Vec3(x), Vec3(v))
    }
}

/// Normalised box counts of a sample set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub grid: PhaseGrid,
    pub mass: Vec<f64>,
    pub samples: usize,
}

impl Histogram {
    pub fn from_points<'a>(grid: &PhaseGrid, points: impl IntoIterator<Item = &'a PhasePoint>) -> Result<Self> {
        let mut counts = vec![0u64; grid.len()];
        let mut n = 0usize;
        for p in points {
            counts[grid.index(p)] += 1;
            n += 1;
        }
        if n == 0 {
            return Err(Error::EmptySamples);
        }
        Ok(Self {
            grid: grid.clone(),
            mass: counts.iter().map(|&c| c as f64 / n as f64).collect(),
            samples: n,
        })
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn l1_distance(&self, other: &Histogram) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch("histograms on different partitions".into()));
        }
        l1_distance(&self.mass, &other.mass)
    }
}

/// `Σ |a_i - b_i|` over matching box masses.
pub fn l1_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::GridMismatch(format!("{} boxes vs {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum())
}
