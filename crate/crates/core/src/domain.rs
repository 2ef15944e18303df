//! Perforated domains and their masked lattice discretization.
//!
//! A [`DomainSpec`] is an outer box or ball with a list of small closed holes.
//! [`build_grid`] places the lattice `k * h` (anchored at the origin, `h =
//! 1/resolution`) over the bounding box and keeps the nodes that lie in the
//! open outer domain and outside every closed hole. All other lattice nodes are
//! homogeneous Dirichlet nodes.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Marker for a neighbor slot that points at a Dirichlet (inactive) node.
pub const DIRICHLET: u32 = u32::MAX;

/// Relative slack used when classifying lattice points that sit on a boundary.
const ON_BOUNDARY: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OuterShape {
    Box { min: Vec<f64>, max: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HoleShape {
    #[default]
    Ball,
    /// Axis-aligned cube inscribed in the ball of radius `eps`.
    Cube,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoleSpec {
    pub center: Vec<f64>,
    pub eps: f64,
    #[serde(default)]
    pub shape: HoleShape,
}

impl HoleSpec {
    pub fn ball(center: &[f64], eps: f64) -> Self {
        HoleSpec {
            center: center.to_vec(),
            eps,
            shape: HoleShape::Ball,
        }
    }

    pub fn cube(center: &[f64], eps: f64) -> Self {
        HoleSpec {
            center: center.to_vec(),
            eps,
            shape: HoleShape::Cube,
        }
    }

    /// Closed-set membership, with points on the surface counted as inside.
    pub fn contains(&self, x: &[f64]) -> bool {
        let slack = self.eps * ON_BOUNDARY;
        match self.shape {
            HoleShape::Ball => dist(x, &self.center) <= self.eps + slack,
            HoleShape::Cube => {
                let half = self.eps / (self.center.len() as f64).sqrt();
                x.iter()
                    .zip(&self.center)
                    .all(|(a, c)| (a - c).abs() <= half + slack)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub dimension: usize,
    pub outer: OuterShape,
    #[serde(default)]
    pub holes: Vec<HoleSpec>,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

impl DomainSpec {
    pub fn unit_box(dimension: usize) -> Self {
        DomainSpec {
            dimension,
            outer: OuterShape::Box {
                min: vec![0.0; dimension],
                max: vec![1.0; dimension],
            },
            holes: Vec::new(),
        }
    }

    pub fn ball(dimension: usize, radius: f64) -> Self {
        DomainSpec {
            dimension,
            outer: OuterShape::Ball {
                center: vec![0.0; dimension],
                radius,
            },
            holes: Vec::new(),
        }
    }

    pub fn with_hole(mut self, hole: HoleSpec) -> Self {
        self.holes.push(hole);
        self
    }

    /// Same outer domain without any holes.
    pub fn without_holes(&self) -> Self {
        DomainSpec {
            dimension: self.dimension,
            outer: self.outer.clone(),
            holes: Vec::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: DomainSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("domain spec serializes")
    }

    /// Open-set membership of the outer domain.
    pub fn outer_contains(&self, x: &[f64]) -> bool {
        match &self.outer {
            OuterShape::Box { min, max } => {
                x.iter().zip(min.iter().zip(max)).all(|(v, (lo, hi))| {
                    let slack = (hi - lo) * ON_BOUNDARY;
                    *v > lo + slack && *v < hi - slack
                })
            }
            OuterShape::Ball { center, radius } => {
                dist(x, center) < radius * (1.0 - ON_BOUNDARY)
            }
        }
    }

    /// Membership in the perforated domain: inside the outer shape and outside
    /// every closed hole.
    pub fn contains(&self, x: &[f64]) -> bool {
        self.outer_contains(x) && !self.holes.iter().any(|hole| hole.contains(x))
    }

    /// Distance from `x` to the outer boundary for points inside.
    fn clearance(&self, x: &[f64]) -> f64 {
        match &self.outer {
            OuterShape::Box { min, max } => x
                .iter()
                .zip(min.iter().zip(max))
                .map(|(v, (lo, hi))| (v - lo).min(hi - v))
                .fold(f64::INFINITY, f64::min),
            OuterShape::Ball { center, radius } => radius - dist(x, center),
        }
    }

    pub fn min_hole_size(&self) -> Option<f64> {
        self.holes.iter().map(|h| h.eps).reduce(f64::min)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dimension;
        if n != 2 && n != 3 {
            return Err(Error::InvalidSpec(format!("dimension {n} not in {{2,3}}")));
        }
        match &self.outer {
            OuterShape::Box { min, max } => {
                if min.len() != n || max.len() != n {
                    return Err(Error::InvalidSpec("box corners have wrong dimension".into()));
                }
                if min.iter().zip(max).any(|(lo, hi)| !(lo < hi)) {
                    return Err(Error::InvalidSpec("box has empty extent".into()));
                }
            }
            OuterShape::Ball { center, radius } => {
                if center.len() != n {
                    return Err(Error::InvalidSpec("ball center has wrong dimension".into()));
                }
                if !(*radius > 0.0) {
                    return Err(Error::InvalidSpec("ball radius must be positive".into()));
                }
            }
        }
        for (i, hole) in self.holes.iter().enumerate() {
            if hole.center.len() != n {
                return Err(Error::InvalidSpec(format!("hole {i} center has wrong dimension")));
            }
            if !(hole.eps > 0.0) || !hole.eps.is_finite() {
                return Err(Error::InvalidSpec(format!("hole {i} size must be positive")));
            }
            if !self.outer_contains(&hole.center) || self.clearance(&hole.center) <= hole.eps {
                return Err(Error::HoleOutsideDomain { index: i });
            }
        }
        // Disjointness is checked on the circumscribing balls, which contain
        // both hole shapes.
        for i in 0..self.holes.len() {
            for j in i + 1..self.holes.len() {
                let (a, b) = (&self.holes[i], &self.holes[j]);
                if dist(&a.center, &b.center) <= a.eps + b.eps {
                    return Err(Error::OverlappingHoles { first: i, second: j });
                }
            }
        }
        Ok(())
    }

    /// Axis-aligned bounding box of the outer shape.
    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.outer {
            OuterShape::Box { min, max } => (min.clone(), max.clone()),
            OuterShape::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
        }
    }
}

/// Masked structured discretization of a perforated domain.
///
/// Lattice point with integer index `k` (per axis) sits at `k * h`. Only the
/// lattice points inside the bounding box `lo .. lo + dims` are stored.
#[derive(Debug, Clone)]
pub struct Grid {
    dimension: usize,
    h: f64,
    resolution: usize,
    lo: [i64; 3],
    dims: [usize; 3],
    lattice_to_active: Vec<u32>,
    active_to_lattice: Vec<usize>,
    neighbors: Vec<u32>,
    spec: DomainSpec,
}

/// Build the masked lattice of `spec` with `resolution` nodes per unit length.
pub fn build_grid(spec: &DomainSpec, resolution: usize) -> Result<Grid> {
    spec.validate()?;
    if resolution < 8 {
        return Err(Error::ResolutionTooLow(resolution as f64));
    }
    let h = 1.0 / resolution as f64;
    if let Some(eps) = spec.min_hole_size() {
        if h >= eps / 4.0 {
            return Err(Error::UnresolvedHole { eps, h });
        }
    }
    Grid::from_predicate(spec, resolution, |x| spec.contains(x))
}

/// [`build_grid`] without the minimum-resolution and hole-resolution
/// checks, for closed-form comparisons on tiny lattices.
pub fn build_grid_unchecked(spec: &DomainSpec, resolution: usize) -> Result<Grid> {
    spec.validate()?;
    if resolution == 0 {
        return Err(Error::ResolutionTooLow(0.0));
    }
    Grid::from_predicate(spec, resolution, |x| spec.contains(x))
}

impl Grid {
    /// Lattice of the bounding box of `spec` with the active set decided by
    /// `active`. Resolution and hole checks are the caller's responsibility.
    pub(crate) fn from_predicate(
        spec: &DomainSpec,
        resolution: usize,
        active: impl Fn(&[f64]) -> bool,
    ) -> Result<Grid> {
        let n = spec.dimension;
        let h = 1.0 / resolution as f64;
        let (bmin, bmax) = spec.bounds();
        let mut lo = [0i64; 3];
        let mut dims = [1usize; 3];
        for d in 0..n {
            let k0 = (bmin[d] / h).floor() as i64;
            let k1 = (bmax[d] / h).ceil() as i64;
            lo[d] = k0;
            dims[d] = (k1 - k0 + 1) as usize;
        }
        let total = dims[0] * dims[1] * dims[2];
        let mut lattice_to_active = vec![DIRICHLET; total];
        let mut active_to_lattice = Vec::new();
        let mut x = [0.0; 3];
        for flat in 0..total {
            let idx = unflatten(flat, &dims);
            for d in 0..n {
                x[d] = (lo[d] + idx[d] as i64) as f64 * h;
            }
            if active(&x[..n]) {
                lattice_to_active[flat] = active_to_lattice.len() as u32;
                active_to_lattice.push(flat);
            }
        }
        if active_to_lattice.is_empty() {
            return Err(Error::EmptyDomain);
        }
        let strides = [1usize, dims[0], dims[0] * dims[1]];
        let mut neighbors = Vec::with_capacity(active_to_lattice.len() * 2 * n);
        for &flat in &active_to_lattice {
            let idx = unflatten(flat, &dims);
            for d in 0..n {
                let below = if idx[d] > 0 {
                    lattice_to_active[flat - strides[d]]
                } else {
                    DIRICHLET
                };
                let above = if idx[d] + 1 < dims[d] {
                    lattice_to_active[flat + strides[d]]
                } else {
                    DIRICHLET
                };
                neighbors.push(below);
                neighbors.push(above);
            }
        }
        Ok(Grid {
            dimension: n,
            h,
            resolution,
            lo,
            dims,
            lattice_to_active,
            active_to_lattice,
            neighbors,
            spec: spec.clone(),
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    /// Number of unknowns.
    pub fn len(&self) -> usize {
        self.active_to_lattice.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active_to_lattice.is_empty()
    }

    /// Volume element `h^n`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dimension as i32)
    }

    /// Neighbor slots of active node `i`: `2n` entries ordered
    /// `(-x, +x, -y, +y, -z, +z)`, [`DIRICHLET`] for exterior nodes.
    pub fn neighbors(&self, i: usize) -> &[u32] {
        let m = 2 * self.dimension;
        &self.neighbors[i * m..(i + 1) * m]
    }

    /// Integer lattice index of active node `i`.
    pub fn lattice_index(&self, i: usize) -> [i64; 3] {
        let idx = unflatten(self.active_to_lattice[i], &self.dims);
        let mut k = [0i64; 3];
        for d in 0..self.dimension {
            k[d] = self.lo[d] + idx[d] as i64;
        }
        k
    }

    /// Active index of the lattice point `k`, if it is active.
    pub fn active_index(&self, k: [i64; 3]) -> Option<usize> {
        let mut idx = [0usize; 3];
        for d in 0..self.dimension {
            let off = k[d] - self.lo[d];
            if off < 0 || off as usize >= self.dims[d] {
                return None;
            }
            idx[d] = off as usize;
        }
        let flat = idx[0] + self.dims[0] * (idx[1] + self.dims[1] * idx[2]);
        match self.lattice_to_active[flat] {
            DIRICHLET => None,
            a => Some(a as usize),
        }
    }

    pub fn coords(&self, i: usize) -> Vec<f64> {
        let k = self.lattice_index(i);
        (0..self.dimension).map(|d| k[d] as f64 * self.h).collect()
    }

    /// Active index of the lattice point nearest to `x`.
    pub fn index_of_point(&self, x: &[f64]) -> Option<usize> {
        let mut k = [0i64; 3];
        for d in 0..self.dimension {
            k[d] = (x[d] / self.h).round() as i64;
        }
        self.active_index(k)
    }

    /// Multilinear interpolation of the nodal field `u` at `x`, with inactive
    /// lattice nodes taking the Dirichlet value zero.
    pub fn interpolate(&self, u: &[f64], x: &[f64]) -> f64 {
        let n = self.dimension;
        let mut base = [0i64; 3];
        let mut frac = [0.0; 3];
        for d in 0..n {
            let s = x[d] / self.h;
            let f = s.floor();
            base[d] = f as i64;
            frac[d] = s - f;
        }
        let mut value = 0.0;
        for corner in 0..(1usize << n) {
            let mut k = base;
            let mut weight = 1.0;
            for d in 0..n {
                if corner >> d & 1 == 1 {
                    k[d] += 1;
                    weight *= frac[d];
                } else {
                    weight *= 1.0 - frac[d];
                }
            }
            if weight == 0.0 {
                continue;
            }
            if let Some(i) = self.active_index(k) {
                value += weight * u[i];
            }
        }
        value
    }

    /// Number of connected components of the active set under lattice adjacency.
    pub fn connected_components(&self) -> usize {
        let mut label = vec![false; self.len()];
        let mut queue = VecDeque::new();
        let mut components = 0;
        for start in 0..self.len() {
            if label[start] {
                continue;
            }
            components += 1;
            label[start] = true;
            queue.push_back(start);
            while let Some(i) = queue.pop_front() {
                for &j in self.neighbors(i) {
                    if j != DIRICHLET && !label[j as usize] {
                        label[j as usize] = true;
                        queue.push_back(j as usize);
                    }
                }
            }
        }
        components
    }
}

/// Free-function form of [`Grid::connected_components`].
pub fn connected_components(grid: &Grid) -> usize {
    grid.connected_components()
}

fn unflatten(flat: usize, dims: &[usize; 3]) -> [usize; 3] {
    [
        flat % dims[0],
        (flat / dims[0]) % dims[1],
        flat / (dims[0] * dims[1]),
    ]
}
