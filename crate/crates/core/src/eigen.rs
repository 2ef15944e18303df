//! First Dirichlet eigenpair by inverse power iteration.

use crate::error::{Error, Result};
use crate::multigrid::Multigrid;
use crate::operator::{dirichlet_energy, l2_norm_sq, DiscreteLaplacian};
use crate::sparse::{dot, norm, pcg, Preconditioner};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 500;

/// Relative change of the Rayleigh quotient below which it counts as settled.
/// The quotient is evaluated edge-wise (no cancellation), so a few ulps is the
/// floor regardless of the requested tolerance.
const RAYLEIGH_FLOOR: f64 = 1e-14;

/// Smallest relative residual requested from the inner solves. The CG true
/// residual stagnates near `eps_mach * cond(A)`, so the floor grows with it.
fn inner_tol_floor(lap: &DiscreteLaplacian, lambda: f64) -> f64 {
    let h = lap.spacing();
    let cond = 4.0 * lap.dimension() as f64 / (h * h * lambda);
    (16.0 * f64::EPSILON * cond).max(1e-10)
}

#[derive(Debug, Clone)]
pub struct EigenResult {
    pub lambda1: f64,
    /// Positive, with `l2_norm_sq(phi1) = 1`.
    pub phi1: Vec<f64>,
    /// `||A phi - lambda phi|| / (lambda ||phi||)`.
    pub residual: f64,
    pub iterations: usize,
    pub inner_iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct EigenOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// Rayleigh quotient from the edge form of the energy.
fn rayleigh(lap: &DiscreteLaplacian, u: &[f64]) -> f64 {
    let grid = lap.grid();
    dirichlet_energy(grid, u).unwrap() / l2_norm_sq(grid, u).unwrap()
}

fn relative_residual(lap: &DiscreteLaplacian, u: &[f64], lambda: f64, au: &mut [f64]) -> f64 {
    lap.matrix().matvec_into(u, au);
    let r: f64 = au
        .iter()
        .zip(u)
        .map(|(a, x)| (a - lambda * x) * (a - lambda * x))
        .sum();
    r.sqrt() / (lambda * norm(u))
}

/// Smallest eigenpair of the discrete Dirichlet Laplacian.
///
/// Inner solves use CG preconditioned by a multigrid V-cycle.
pub fn first_eigenpair(lap: &DiscreteLaplacian, tol: f64, max_iter: usize) -> Result<EigenResult> {
    let mg = Multigrid::new(lap);
    first_eigenpair_with(lap, None, EigenOptions { tol, max_iter }, &mg)
}

/// As [`first_eigenpair`], with an optional start vector and a preconditioner
/// for the inner solves.
pub fn first_eigenpair_with(
    lap: &DiscreteLaplacian,
    start: Option<&[f64]>,
    opts: EigenOptions,
    precond: &dyn Preconditioner,
) -> Result<EigenResult> {
    let components = lap.grid().connected_components();
    if components != 1 {
        return Err(Error::NotConnected { components });
    }
    if let Some(s) = start {
        if s.len() != lap.len() {
            return Err(Error::DimensionMismatch {
                context: "eigen",
                expected: lap.len(),
                got: s.len(),
            });
        }
        match inverse_iteration(lap, s, None, opts, precond) {
            Ok(result) if result.phi1.iter().all(|&v| v > 0.0) => return Ok(result),
            Ok(_) | Err(Error::DegenerateStart) => {}
            Err(e) => return Err(e),
        }
    }
    // A positive vector has positive overlap with the Perron vector.
    let ones = vec![1.0; lap.len()];
    let result = inverse_iteration(lap, &ones, None, opts, precond)?;
    if result.phi1.iter().any(|&v| v <= 0.0) {
        return Err(Error::DegenerateStart);
    }
    Ok(result)
}

/// Inverse iteration, optionally kept orthogonal to `deflate`.
fn inverse_iteration(
    lap: &DiscreteLaplacian,
    start: &[f64],
    deflate: Option<&[f64]>,
    opts: EigenOptions,
    precond: &dyn Preconditioner,
) -> Result<EigenResult> {
    if !(opts.tol > 0.0 && opts.tol < 1.0) {
        return Err(Error::InvalidSpec(format!("eigen tolerance {} outside (0,1)", opts.tol)));
    }
    let n = lap.len();
    let project = |x: &mut [f64]| {
        if let Some(d) = deflate {
            let c = dot(x, d) / dot(d, d);
            for (xi, di) in x.iter_mut().zip(d) {
                *xi -= c * di;
            }
        }
    };
    let mut x = start.to_vec();
    project(&mut x);
    let scale = norm(&x);
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::DegenerateStart);
    }
    x.iter_mut().for_each(|v| *v /= scale);

    let mut au = vec![0.0; n];
    let mut lambda = rayleigh(lap, &x);
    let mut residual = relative_residual(lap, &x, lambda, &mut au);
    let mut change = f64::INFINITY;
    let mut iterations = 0;
    let mut inner_iterations = 0;
    let settled = opts.tol * opts.tol;
    let mut guess = vec![0.0; n];

    while !(residual < opts.tol && change < settled.max(RAYLEIGH_FLOOR)) {
        if iterations >= opts.max_iter {
            return Err(Error::MaxIterations {
                context: "eigen",
                iterations,
                residual,
            });
        }
        let inner_tol = (opts.tol * opts.tol)
            .max(0.01 * residual)
            .clamp(inner_tol_floor(lap, lambda), 0.1);
        for (g, v) in guess.iter_mut().zip(&x) {
            *g = v / lambda;
        }
        let solve = pcg(lap.matrix(), &x, Some(&guess), inner_tol, 20 * n + 100, precond)
            .map_err(|e| match e {
                Error::MaxIterations { iterations, residual, .. } => Error::MaxIterations {
                    context: "eigen",
                    iterations,
                    residual,
                },
                other => other,
            })?;
        inner_iterations += solve.iterations;
        x = solve.x;
        project(&mut x);
        let scale = norm(&x);
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::DegenerateStart);
        }
        x.iter_mut().for_each(|v| *v /= scale);
        let next = rayleigh(lap, &x);
        change = ((next - lambda) / next).abs();
        lambda = next;
        residual = relative_residual(lap, &x, lambda, &mut au);
        iterations += 1;
    }

    // Sign: largest-magnitude entry positive. Scale: unit discrete L2 norm.
    let pivot = x
        .iter()
        .copied()
        .fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
    let l2 = l2_norm_sq(lap.grid(), &x)?.sqrt();
    let factor = pivot.signum() / l2;
    x.iter_mut().for_each(|v| *v *= factor);
    Ok(EigenResult {
        lambda1: lambda,
        phi1: x,
        residual,
        iterations,
        inner_iterations,
    })
}

/// Second eigenvalue by inverse iteration deflated against `phi1`.
pub fn second_eigenvalue(
    lap: &DiscreteLaplacian,
    phi1: &[f64],
    opts: EigenOptions,
) -> Result<f64> {
    // Deterministic scrambled start with no symmetry.
    let start: Vec<f64> = (0..lap.len())
        .map(|i| {
            let z = (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            ((z >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        })
        .collect();
    let mg = Multigrid::new(lap);
    inverse_iteration(lap, &start, Some(phi1), opts, &mg).map(|r| r.lambda1)
}

/// `(2^p λ_fine - λ_coarse) / (2^p - 1)`.
pub fn richardson(lambda_coarse: f64, lambda_fine: f64, order: u32) -> f64 {
    let w = 2f64.powi(order as i32);
    (w * lambda_fine - lambda_coarse) / (w - 1.0)
}

/// Richardson-extrapolated first eigenvalue from two nested discretizations
/// of the same domain.
pub fn richardson_lambda(
    coarse: &DiscreteLaplacian,
    fine: &DiscreteLaplacian,
    order: u32,
    opts: EigenOptions,
) -> Result<f64> {
    check_refinement(coarse, fine)?;
    if !(order == 1 || order == 2) {
        return Err(Error::InvalidSpec(format!("Richardson order {order} not in {{1,2}}")));
    }
    let lc = first_eigenpair(coarse, opts.tol, opts.max_iter)?.lambda1;
    let lf = first_eigenpair(fine, opts.tol, opts.max_iter)?.lambda1;
    Ok(richardson(lc, lf, order))
}

pub(crate) fn check_refinement(coarse: &DiscreteLaplacian, fine: &DiscreteLaplacian) -> Result<()> {
    let same_domain = coarse.grid().spec() == fine.grid().spec();
    let halved = fine.grid().resolution() == 2 * coarse.grid().resolution();
    if same_domain && halved {
        Ok(())
    } else {
        Err(Error::ResolutionMismatch)
    }
}
