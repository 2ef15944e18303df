//! Geometric multigrid V-cycle used as a CG preconditioner on masked lattices.
//!
//! Level `l + 1` keeps the lattice points `2k` of level `l` (same mask), with
//! the operator rediscretized at spacing `2h`. Transfer is multilinear
//! prolongation and its scaled transpose; smoothing is damped Jacobi, so the
//! V-cycle is a fixed symmetric linear map.

use crate::domain::Grid;
use crate::operator::{assemble, DiscreteLaplacian};
use crate::sparse::{Preconditioner, SparseMatrix};

const SMOOTHING_STEPS: usize = 2;
const MIN_COARSE_NODES: usize = 64;
const DIRECT_SOLVE_LIMIT: usize = 800;
const COARSE_JACOBI_SWEEPS: usize = 60;

/// Rectangular CSR map from coarse to fine nodes.
struct Prolongation {
    row_ptr: Vec<usize>,
    col: Vec<u32>,
    weight: Vec<f64>,
    coarse_len: usize,
}

impl Prolongation {
    fn build(fine: &Grid, coarse: &Grid) -> Self {
        let n = fine.dimension();
        let mut row_ptr = Vec::with_capacity(fine.len() + 1);
        let mut col = Vec::new();
        let mut weight = Vec::new();
        row_ptr.push(0);
        for i in 0..fine.len() {
            let k = fine.lattice_index(i);
            for corner in 0..(1usize << n) {
                let mut kc = [0i64; 3];
                let mut w = 1.0;
                let mut skip = false;
                for d in 0..n {
                    let half = k[d].div_euclid(2);
                    if k[d].rem_euclid(2) == 0 {
                        if corner >> d & 1 == 1 {
                            skip = true;
                            break;
                        }
                        kc[d] = half;
                    } else {
                        kc[d] = half + (corner >> d & 1) as i64;
                        w *= 0.5;
                    }
                }
                if skip {
                    continue;
                }
                if let Some(c) = coarse.active_index(kc) {
                    col.push(c as u32);
                    weight.push(w);
                }
            }
            row_ptr.push(col.len());
        }
        Prolongation {
            row_ptr,
            col,
            weight,
            coarse_len: coarse.len(),
        }
    }

    /// `fine += P coarse`.
    fn add_prolonged(&self, coarse: &[f64], fine: &mut [f64]) {
        for (i, f) in fine.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.weight[k] * coarse[self.col[k] as usize];
            }
            *f += acc;
        }
    }

    /// `coarse = scale * P^T fine`.
    fn restrict(&self, fine: &[f64], coarse: &mut [f64], scale: f64) {
        coarse.iter_mut().for_each(|c| *c = 0.0);
        for (i, &f) in fine.iter().enumerate() {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                coarse[self.col[k] as usize] += scale * self.weight[k] * f;
            }
        }
    }
}

struct Level {
    matrix: SparseMatrix,
    inv_diag: f64,
    /// Transfer to the next coarser level, if any.
    to_coarse: Option<Prolongation>,
}

enum CoarseSolver {
    Cholesky { n: usize, factor: Vec<f64> },
    Jacobi,
}

/// V-cycle preconditioner for `shift * I + A` on a masked lattice.
pub struct Multigrid {
    levels: Vec<Level>,
    coarse: CoarseSolver,
    omega: f64,
    restrict_scale: f64,
}

impl Multigrid {
    pub fn new(lap: &DiscreteLaplacian) -> Self {
        Self::shifted(lap, 0.0, 1.0)
    }

    /// Hierarchy for `alpha * I + beta * A`.
    pub fn shifted(lap: &DiscreteLaplacian, alpha: f64, beta: f64) -> Self {
        let n = lap.dimension();
        let mut grids: Vec<std::sync::Arc<Grid>> = vec![lap.grid_arc().clone()];
        loop {
            let fine = grids.last().unwrap();
            let res = fine.resolution();
            if res % 2 != 0 || res / 2 < 2 || fine.len() < 4 * MIN_COARSE_NODES {
                break;
            }
            let coarse = Grid::from_predicate(fine.spec(), res / 2, |x| {
                fine.index_of_point(x).is_some()
            });
            match coarse {
                Ok(g) if g.len() >= MIN_COARSE_NODES => grids.push(std::sync::Arc::new(g)),
                _ => break,
            }
        }
        let mut levels = Vec::with_capacity(grids.len());
        for (l, grid) in grids.iter().enumerate() {
            let matrix = if l == 0 {
                lap.matrix().shifted(alpha, beta)
            } else {
                assemble(grid.clone()).matrix().shifted(alpha, beta)
            };
            let h = grid.spacing();
            let inv_diag = 1.0 / (alpha + beta * 2.0 * n as f64 / (h * h));
            let to_coarse = grids.get(l + 1).map(|c| Prolongation::build(grid, c));
            levels.push(Level {
                matrix,
                inv_diag,
                to_coarse,
            });
        }
        let coarsest = &levels.last().unwrap().matrix;
        let coarse = if coarsest.dim() <= DIRECT_SOLVE_LIMIT {
            CoarseSolver::Cholesky {
                n: coarsest.dim(),
                factor: cholesky(&coarsest.to_dense()),
            }
        } else {
            CoarseSolver::Jacobi
        };
        let omega = if n == 2 { 0.8 } else { 6.0 / 7.0 };
        Multigrid {
            levels,
            coarse,
            omega,
            restrict_scale: 1.0 / (1u32 << n) as f64,
        }
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    fn jacobi(&self, level: &Level, rhs: &[f64], x: &mut [f64], scratch: &mut [f64], sweeps: usize) {
        let w = self.omega * level.inv_diag;
        for _ in 0..sweeps {
            level.matrix.matvec_into(x, scratch);
            for ((xi, ri), ai) in x.iter_mut().zip(rhs).zip(scratch.iter()) {
                *xi += w * (ri - ai);
            }
        }
    }

    fn cycle(&self, l: usize, rhs: &[f64], x: &mut [f64]) {
        let level = &self.levels[l];
        let mut scratch = vec![0.0; rhs.len()];
        x.iter_mut().for_each(|v| *v = 0.0);
        let Some(transfer) = &level.to_coarse else {
            match &self.coarse {
                CoarseSolver::Cholesky { n, factor } => {
                    x.copy_from_slice(rhs);
                    cholesky_solve(factor, *n, x);
                }
                CoarseSolver::Jacobi => {
                    self.jacobi(level, rhs, x, &mut scratch, COARSE_JACOBI_SWEEPS)
                }
            }
            return;
        };
        self.jacobi(level, rhs, x, &mut scratch, SMOOTHING_STEPS);
        level.matrix.matvec_into(x, &mut scratch);
        for (s, r) in scratch.iter_mut().zip(rhs) {
            *s = r - *s;
        }
        let mut coarse_rhs = vec![0.0; transfer.coarse_len];
        transfer.restrict(&scratch, &mut coarse_rhs, self.restrict_scale);
        let mut coarse_x = vec![0.0; transfer.coarse_len];
        self.cycle(l + 1, &coarse_rhs, &mut coarse_x);
        transfer.add_prolonged(&coarse_x, x);
        // Post-smoothing continues from the corrected iterate.
        let w = self.omega * level.inv_diag;
        for _ in 0..SMOOTHING_STEPS {
            level.matrix.matvec_into(x, &mut scratch);
            for ((xi, ri), ai) in x.iter_mut().zip(rhs).zip(scratch.iter()) {
                *xi += w * (ri - ai);
            }
        }
    }
}

impl Preconditioner for Multigrid {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        self.cycle(0, r, z);
    }
}

fn cholesky(a: &[Vec<f64>]) -> Vec<f64> {
    let n = a.len();
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[j][j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / d;
        }
    }
    l
}

fn cholesky_solve(l: &[f64], n: usize, x: &mut [f64]) {
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= l[i * n + k] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_grid, DomainSpec, HoleSpec};
    use crate::sparse::{cg_solve, dot, pcg};

    #[test]
    fn cholesky_solves_small_system() {
        let a = vec![vec![4.0, 1.0, 0.0], vec![1.0, 3.0, 1.0], vec![0.0, 1.0, 2.0]];
        let l = cholesky(&a);
        let mut x = vec![1.0, 2.0, 3.0];
        cholesky_solve(&l, 3, &mut x);
        for (i, row) in a.iter().enumerate() {
            assert!((dot(row, &x) - [1.0, 2.0, 3.0][i]).abs() < 1e-14);
        }
    }

    #[test]
    fn vcycle_is_symmetric() {
        let spec = DomainSpec::ball(2, 1.0).with_hole(HoleSpec::ball(&[0.2, 0.1], 0.1));
        let lap = assemble(build_grid(&spec, 64).unwrap());
        let mg = Multigrid::new(&lap);
        assert!(mg.depth() >= 3);
        let u: Vec<f64> = (0..lap.len()).map(|i| ((i * 7919) % 113) as f64 - 56.0).collect();
        let v: Vec<f64> = (0..lap.len()).map(|i| ((i * 104729) % 97) as f64 - 48.0).collect();
        let (mut mu, mut mv) = (vec![0.0; u.len()], vec![0.0; v.len()]);
        mg.apply(&u, &mut mu);
        mg.apply(&v, &mut mv);
        let (a, b) = (dot(&v, &mu), dot(&u, &mv));
        assert!((a - b).abs() <= 1e-10 * a.abs().max(b.abs()));
        assert!(dot(&u, &mu) > 0.0);
    }

    #[test]
    fn preconditioned_solve_agrees_and_is_faster() {
        let spec = DomainSpec::unit_box(3).with_hole(HoleSpec::ball(&[0.5, 0.5, 0.5], 0.2));
        let lap = assemble(build_grid(&spec, 32).unwrap());
        let b = vec![1.0; lap.len()];
        let plain = cg_solve(lap.matrix(), &b, 1e-10, 10_000).unwrap();
        let mg = Multigrid::new(&lap);
        let pre = pcg(lap.matrix(), &b, None, 1e-10, 10_000, &mg).unwrap();
        assert!(pre.iterations * 3 < plain.iterations, "{} vs {}", pre.iterations, plain.iterations);
        let diff: f64 = plain.x.iter().zip(&pre.x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = plain.x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff <= 1e-7 * scale);
    }

    #[test]
    fn shifted_hierarchy_preconditions_shifted_system() {
        let lap = assemble(build_grid(&DomainSpec::unit_box(2), 64).unwrap());
        let (alpha, beta) = (1.0, 0.0025);
        let m = lap.matrix().shifted(alpha, beta);
        let mg = Multigrid::shifted(&lap, alpha, beta);
        let b: Vec<f64> = (0..lap.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let out = pcg(&m, &b, None, 1e-12, 1000, &mg).unwrap();
        assert!(out.iterations < 15);
    }
}
