//! Discrete Dirichlet Laplacian on a masked grid, with the matching discrete
//! `L2` norm and Dirichlet energy.

use std::sync::Arc;

use crate::domain::{Grid, DIRICHLET};
use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

/// Standard `2n+1`-point stencil of `-Δ` with homogeneous Dirichlet values
/// eliminated. Unknowns are the active grid nodes.
#[derive(Debug, Clone)]
pub struct DiscreteLaplacian {
    grid: Arc<Grid>,
    matrix: SparseMatrix,
}

pub fn assemble(grid: impl Into<Arc<Grid>>) -> DiscreteLaplacian {
    let grid = grid.into();
    let n = grid.dimension();
    let h = grid.spacing();
    let off = -1.0 / (h * h);
    let diag = 2.0 * n as f64 / (h * h);
    let mut slots = Vec::with_capacity(2 * n);
    // Active indices follow lattice order, so sorting the neighbor slots
    // together with the diagonal yields sorted rows.
    let matrix = SparseMatrix::from_sorted_rows(grid.len(), grid.len() * (2 * n + 1), |r, row| {
        slots.clear();
        slots.extend(grid.neighbors(r).iter().copied().filter(|&j| j != DIRICHLET));
        slots.push(r as u32);
        slots.sort_unstable();
        row.extend(
            slots
                .iter()
                .map(|&c| (c, if c as usize == r { diag } else { off })),
        );
    });
    DiscreteLaplacian { grid, matrix }
}

impl DiscreteLaplacian {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn grid_arc(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn spacing(&self) -> f64 {
        self.grid.spacing()
    }

    pub fn dimension(&self) -> usize {
        self.grid.dimension()
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Rayleigh quotient `u^T A u / u^T u`.
    pub fn rayleigh(&self, u: &[f64]) -> f64 {
        self.matrix.quadratic_form(u) / crate::sparse::dot(u, u)
    }
}

fn check_len(grid: &Grid, u: &[f64], context: &'static str) -> Result<()> {
    if u.len() != grid.len() {
        return Err(Error::DimensionMismatch {
            context,
            expected: grid.len(),
            got: u.len(),
        });
    }
    Ok(())
}

/// `h^n * sum(u_i^2)`.
pub fn l2_norm_sq(grid: &Grid, u: &[f64]) -> Result<f64> {
    check_len(grid, u, "operator")?;
    Ok(grid.cell_volume() * u.iter().map(|v| v * v).sum::<f64>())
}

/// `h^n * sum(u_i v_i)`.
pub fn l2_inner(grid: &Grid, u: &[f64], v: &[f64]) -> Result<f64> {
    check_len(grid, u, "operator")?;
    check_len(grid, v, "operator")?;
    Ok(grid.cell_volume() * crate::sparse::dot(u, v))
}

/// Discrete `||∇u||^2`: `h^(n-2)` times the sum over lattice edges of squared
/// differences, with Dirichlet neighbors contributing their zero value.
///
/// Equals `h^n * u^T A u` for the assembled operator.
pub fn dirichlet_energy(grid: &Grid, u: &[f64]) -> Result<f64> {
    check_len(grid, u, "operator")?;
    let n = grid.dimension();
    let mut sum = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        for (slot, &j) in grid.neighbors(i).iter().enumerate() {
            if j == DIRICHLET {
                sum += ui * ui;
            } else if slot % 2 == 1 {
                // Each interior edge is visited once, from its lower end.
                let d = ui - u[j as usize];
                sum += d * d;
            }
        }
    }
    Ok(grid.spacing().powi(n as i32 - 2) * sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_grid, DomainSpec, HoleSpec};
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    fn square(resolution: usize) -> DiscreteLaplacian {
        assemble(build_grid(&DomainSpec::unit_box(2), resolution).unwrap())
    }

    #[test]
    fn interior_row_is_standard_stencil() {
        let spec = DomainSpec::unit_box(2);
        let grid = Grid::from_predicate(&spec, 4, |x| spec.contains(x)).unwrap();
        let lap = assemble(grid);
        let center = lap.grid().index_of_point(&[0.5, 0.5]).unwrap();
        let row: Vec<_> = lap.matrix().row(center).collect();
        assert_eq!(row.len(), 5);
        for (c, v) in row {
            assert_eq!(v, if c == center { 64.0 } else { -16.0 });
        }
    }

    #[test]
    fn row_next_to_hole_drops_masked_neighbor() {
        let spec = DomainSpec::unit_box(2).with_hole(HoleSpec::ball(&[0.5, 0.5], 0.1));
        let lap = assemble(build_grid(&spec, 64).unwrap());
        // (0.5 + 7h, 0.5) is active and its -x neighbor (0.5 + 6h) lies inside.
        let h = 1.0 / 64.0;
        let i = lap.grid().index_of_point(&[0.5 + 7.0 * h, 0.5]).unwrap();
        let row: Vec<_> = lap.matrix().row(i).collect();
        assert_eq!(row.len(), 4);
        assert_eq!(lap.matrix().get(i, i), 4.0 / (h * h));
    }

    #[test]
    fn matrix_is_symmetric() {
        let spec = DomainSpec::ball(3, 1.0).with_hole(HoleSpec::cube(&[0.2, 0.0, 0.1], 0.3));
        let lap = assemble(build_grid(&spec, 16).unwrap());
        assert!(lap.matrix().is_symmetric());
    }

    #[test]
    fn smallest_eigenvalue_closed_form_h_third() {
        // 2x2 unknowns; the constant vector is the ground state.
        let spec = DomainSpec::unit_box(2);
        let lap = assemble(Grid::from_predicate(&spec, 3, |x| spec.contains(x)).unwrap());
        assert_eq!(lap.len(), 4);
        let h = 1.0 / 3.0;
        let exact = 8.0 / (h * h) * (PI * h / 2.0).sin().powi(2);
        assert!((exact - 18.0).abs() < 1e-12);
        assert!((lap.rayleigh(&[1.0; 4]) - 18.0).abs() < 1e-12);
    }

    #[test]
    fn l2_norm_examples() {
        let spec = DomainSpec::unit_box(2);
        let grid = Grid::from_predicate(&spec, 3, |x| spec.contains(x)).unwrap();
        assert_eq!(l2_norm_sq(&grid, &[0.0; 4]).unwrap(), 0.0);
        // 4 unknowns with h = 1/2 on a box of width 1.5 gives h^2 * 4 = 1.
        let spec = DomainSpec {
            dimension: 2,
            outer: crate::domain::OuterShape::Box {
                min: vec![0.0, 0.0],
                max: vec![1.5, 1.5],
            },
            holes: vec![],
        };
        let grid = Grid::from_predicate(&spec, 2, |x| spec.contains(x)).unwrap();
        assert_eq!(grid.len(), 4);
        assert_eq!(l2_norm_sq(&grid, &[1.0; 4]).unwrap(), 1.0);
        assert!(l2_norm_sq(&grid, &[1.0; 3]).is_err());
    }

    fn sampled_mode(lap: &DiscreteLaplacian) -> Vec<f64> {
        (0..lap.len())
            .map(|i| {
                let x = lap.grid().coords(i);
                2.0 * (PI * x[0]).sin() * (PI * x[1]).sin()
            })
            .collect()
    }

    #[test]
    fn l2_norm_of_normalized_mode() {
        let lap = square(64);
        let u = sampled_mode(&lap);
        assert!((l2_norm_sq(lap.grid(), &u).unwrap() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn energy_of_normalized_mode() {
        let lap = square(64);
        let u = sampled_mode(&lap);
        let e = dirichlet_energy(lap.grid(), &u).unwrap();
        assert!((e / (2.0 * PI * PI) - 1.0).abs() < 1e-3);
        assert_eq!(dirichlet_energy(lap.grid(), &vec![0.0; lap.len()]).unwrap(), 0.0);
    }

    #[test]
    fn energy_equals_quadratic_form_and_is_positive() {
        let spec = DomainSpec::ball(2, 1.0)
            .with_hole(HoleSpec::ball(&[0.2, 0.3], 0.2))
            .with_hole(HoleSpec::cube(&[-0.4, -0.1], 0.2));
        let lap = assemble(build_grid(&spec, 32).unwrap());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let u: Vec<f64> = (0..lap.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let e = dirichlet_energy(lap.grid(), &u).unwrap();
            let q = lap.grid().cell_volume() * lap.matrix().quadratic_form(&u);
            assert!((e - q).abs() <= 1e-12 * q.abs());
            assert!(q > 0.0);
        }
    }
}
