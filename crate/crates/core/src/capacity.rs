//! Capacity of small holes relative to the outer domain.
//!
//! `cap(A) = inf { ∫_Ω |∇u|² : u ∈ H¹₀(Ω), u ≥ 1 on A }`. The infimum is
//! attained by the harmonic function with `u = 1` on `A` and `u = 0` on `∂Ω`,
//! so the discrete version clamps the nodes inside `A` to one and solves the
//! Laplace equation on the remaining nodes.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::domain::{DomainSpec, Grid, DIRICHLET};
use crate::error::{Error, Result};
use crate::operator::{assemble, dirichlet_energy};
use crate::multigrid::Multigrid;
use crate::sparse::pcg;

pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct CapacityResult {
    /// Discrete Dirichlet energy of the potential.
    pub value: f64,
    /// Capacitary potential on the active nodes of [`CapacityResult::grid`]
    /// (the hole-free grid of the outer domain).
    pub potential: Vec<f64>,
    pub grid: Arc<Grid>,
    pub clamped_nodes: usize,
    pub iterations: usize,
    pub residual: f64,
}

/// Capacity of the union of `spec.holes` with respect to the outer domain.
pub fn capacity(spec: &DomainSpec, resolution: usize) -> Result<CapacityResult> {
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
    capacity_on_lattice(spec, resolution, DEFAULT_TOL)
}

/// [`capacity`] without the hole-resolution precondition. Holes that contain
/// no lattice node have zero discrete capacity.
pub fn capacity_on_lattice(spec: &DomainSpec, resolution: usize, tol: f64) -> Result<CapacityResult> {
    spec.validate()?;
    let outer = spec.without_holes();
    let full = Arc::new(Grid::from_predicate(&outer, resolution, |x| outer.outer_contains(x))?);
    let in_hole = |x: &[f64]| spec.holes.iter().any(|hole| hole.contains(x));

    let clamped: Vec<bool> = (0..full.len()).map(|i| in_hole(&full.coords(i))).collect();
    let clamped_nodes = clamped.iter().filter(|&&c| c).count();
    if clamped_nodes == 0 {
        return Ok(CapacityResult {
            value: 0.0,
            potential: vec![0.0; full.len()],
            grid: full,
            clamped_nodes,
            iterations: 0,
            residual: 0.0,
        });
    }

    // Free nodes form the perforated grid; its Dirichlet neighbors are either
    // clamped (value 1) or outside the outer domain (value 0).
    let free = Grid::from_predicate(spec, resolution, |x| spec.contains(x))?;
    let lap = assemble(free);
    let grid = lap.grid();
    let inv_h2 = 1.0 / (grid.spacing() * grid.spacing());
    let mut rhs = vec![0.0; grid.len()];
    for (i, b) in rhs.iter_mut().enumerate() {
        let k = grid.lattice_index(i);
        for (slot, &j) in grid.neighbors(i).iter().enumerate() {
            if j != DIRICHLET {
                continue;
            }
            let mut kk = k;
            kk[slot / 2] += if slot % 2 == 0 { -1 } else { 1 };
            if let Some(a) = full.active_index(kk) {
                if clamped[a] {
                    *b += inv_h2;
                }
            }
        }
    }
    let mg = Multigrid::new(&lap);
    let solve = pcg(lap.matrix(), &rhs, None, tol, 10 * grid.len() + 1000, &mg)
    .map_err(|e| match e {
        Error::MaxIterations { iterations, residual, .. } => Error::MaxIterations {
            context: "capacity",
            iterations,
            residual,
        },
        Error::NotFinite { .. } => Error::NotFinite { context: "capacity" },
        other => other,
    })?;

    let mut potential = vec![0.0; full.len()];
    for (a, p) in potential.iter_mut().enumerate() {
        if clamped[a] {
            *p = 1.0;
        }
    }
    for (i, &v) in solve.x.iter().enumerate() {
        let a = full
            .active_index(grid.lattice_index(i))
            .expect("free node lies in the outer grid");
        potential[a] = v;
    }
    let value = dirichlet_energy(&full, &potential)?;
    Ok(CapacityResult {
        value,
        potential,
        grid: full,
        clamped_nodes,
        iterations: solve.iterations,
        residual: solve.residual,
    })
}

/// Leading term of the small-ball capacity: `2π / (-ln ε)` in 2D and `4πε` in 3D.
pub fn ball_capacity_asymptotic(eps: f64, dimension: usize) -> Result<f64> {
    match dimension {
        2 if eps > 0.0 && eps < 1.0 => Ok(2.0 * PI / (-eps.ln())),
        2 => Err(Error::InvalidEps(eps)),
        3 if eps > 0.0 && eps.is_finite() => Ok(4.0 * PI * eps),
        3 => Err(Error::InvalidEps(eps)),
        _ => Err(Error::InvalidSpec(format!("dimension {dimension} not in {{2,3}}"))),
    }
}

/// Exact capacity of the ball `B(0, eps)` relative to the concentric ball of
/// radius `outer`.
pub fn concentric_ball_capacity(eps: f64, outer: f64, dimension: usize) -> f64 {
    match dimension {
        2 => 2.0 * PI / (outer / eps).ln(),
        _ => 4.0 * PI / (1.0 / eps - 1.0 / outer),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::HoleSpec;

    #[test]
    fn lemma_leading_terms() {
        let c2 = ball_capacity_asymptotic(0.05, 2).unwrap();
        assert!((c2 - 2.0 * PI / 20f64.ln()).abs() < 1e-15);
        assert!((c2 - 2.0974).abs() < 1e-4);
        let c3 = ball_capacity_asymptotic(0.05, 3).unwrap();
        assert!((c3 - 0.6283).abs() < 1e-4);
        assert!(ball_capacity_asymptotic(1e-300, 3).unwrap() < 1e-298);
        assert_eq!(ball_capacity_asymptotic(1.0, 2).unwrap_err(), Error::InvalidEps(1.0));
        assert!(ball_capacity_asymptotic(-0.1, 3).is_err());
        assert!(ball_capacity_asymptotic(0.1, 4).is_err());
    }

    #[test]
    fn concentric_closed_forms() {
        assert!((concentric_ball_capacity(0.05, 1.0, 2) - 2.0974).abs() < 1e-4);
        assert!((concentric_ball_capacity(0.05, 1.0, 3) - 0.6614).abs() < 1e-4);
    }

    #[test]
    fn hole_between_lattice_points_has_zero_capacity() {
        let spec = DomainSpec::unit_box(2).with_hole(HoleSpec::ball(&[0.51, 0.51], 0.001));
        let r = capacity_on_lattice(&spec, 16, 1e-9).unwrap();
        assert_eq!(r.clamped_nodes, 0);
        assert_eq!(r.value, 0.0);
        assert!(r.potential.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unresolved_hole_rejected() {
        let spec = DomainSpec::unit_box(2).with_hole(HoleSpec::ball(&[0.5, 0.5], 0.05));
        assert!(matches!(capacity(&spec, 64), Err(Error::UnresolvedHole { .. })));
    }

    #[test]
    fn potential_obeys_maximum_principle() {
        let spec = DomainSpec::unit_box(2).with_hole(HoleSpec::cube(&[0.3, 0.6], 0.1));
        let r = capacity(&spec, 64).unwrap();
        assert!(r.potential.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(r.value > 0.0);
        let energy = dirichlet_energy(&r.grid, &r.potential).unwrap();
        assert_eq!(energy, r.value);
    }

    #[test]
    fn cube_capacity_below_ball_capacity() {
        for eps in [0.1, 0.2] {
            let ball = DomainSpec::unit_box(2).with_hole(HoleSpec::ball(&[0.5, 0.5], eps));
            let cube = DomainSpec::unit_box(2).with_hole(HoleSpec::cube(&[0.5, 0.5], eps));
            let cb = capacity(&ball, 128).unwrap().value;
            let cc = capacity(&cube, 128).unwrap().value;
            assert!(cc <= cb, "eps {eps}: cube {cc} > ball {cb}");
        }
    }

    #[test]
    fn capacity_is_subadditive() {
        let a = HoleSpec::ball(&[0.3, 0.4], 0.06);
        let b = HoleSpec::ball(&[0.7, 0.6], 0.08);
        let cap = |holes: Vec<HoleSpec>| {
            let mut spec = DomainSpec::unit_box(2);
            spec.holes = holes;
            capacity(&spec, 128).unwrap().value
        };
        let (ca, cb) = (cap(vec![a.clone()]), cap(vec![b.clone()]));
        let cab = cap(vec![a, b]);
        assert!(cab <= (ca + cb) * 1.05);
        assert!(cab >= ca.max(cb));
    }
}
