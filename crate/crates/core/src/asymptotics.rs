//! First-eigenvalue shift caused by small holes, compared against the
//! capacity expansion `λ₁(Ω_ε) ≈ λ₁(Ω) + Σ φ₁²(xᵢ) cap(Eᵢ_ε)`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capacity::{ball_capacity_asymptotic, capacity};
use crate::domain::{build_grid, DomainSpec, OuterShape};
use crate::eigen::{first_eigenpair, richardson, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::operator::assemble;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CapacityMode {
    /// Capacity of each hole solved on the grid.
    Computed,
    /// Leading small-ball term, `2π/(-ln ε)` or `4πε`.
    Lemma1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionReport {
    /// Smallest hole size, `None` without holes.
    pub eps: Option<f64>,
    pub resolution: usize,
    pub lambda_base: f64,
    pub lambda_perforated: f64,
    pub predicted_shift: f64,
    pub remainder: f64,
    pub remainder_ratio: f64,
    /// Unextrapolated eigenvalues at `resolution`.
    pub lambda_base_raw: f64,
    pub lambda_perforated_raw: f64,
    /// `φ₁²(xᵢ)` per hole.
    pub phi1_sq: Vec<f64>,
    /// `cap(Eᵢ_ε)` per hole.
    pub capacities: Vec<f64>,
}

/// Whether the faces of a box domain lie on the lattice, which makes the
/// eigenvalue error `O(h²)` instead of the staircase `O(h)`.
pub(crate) fn lattice_aligned(spec: &DomainSpec, resolution: usize) -> bool {
    match &spec.outer {
        OuterShape::Box { min, max } => min.iter().chain(max).all(|&c| {
            let k = c * resolution as f64;
            (k - k.round()).abs() < 1e-9
        }),
        OuterShape::Ball { .. } => false,
    }
}

struct Eigen {
    extrapolated: f64,
    fine: f64,
}

fn extrapolated_eigenvalue(spec: &DomainSpec, resolution: usize) -> Result<(Eigen, Vec<f64>, crate::domain::Grid)> {
    let coarse = assemble(build_grid(spec, resolution / 2)?);
    let lc = first_eigenpair(&coarse, DEFAULT_TOL, DEFAULT_MAX_ITER)?.lambda1;
    drop(coarse);
    let fine_grid = build_grid(spec, resolution)?;
    let fine = assemble(fine_grid);
    let ef = first_eigenpair(&fine, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    let order = if spec.holes.is_empty() && lattice_aligned(spec, resolution / 2) {
        2
    } else {
        1
    };
    let e = Eigen {
        extrapolated: richardson(lc, ef.lambda1, order),
        fine: ef.lambda1,
    };
    Ok((e, ef.phi1, fine.grid().clone()))
}

/// Expansion check at `resolution`, with Richardson extrapolation against
/// `resolution / 2` for eigenvalues and computed capacities.
///
/// `resolution` must be even and the coarse level must still resolve every
/// hole.
pub fn expansion_report(spec: &DomainSpec, resolution: usize, mode: CapacityMode) -> Result<ExpansionReport> {
    spec.validate()?;
    if resolution % 2 != 0 {
        return Err(Error::InvalidSpec(format!("resolution {resolution} must be even")));
    }
    let base_spec = spec.without_holes();
    let (base, phi1, base_grid) = extrapolated_eigenvalue(&base_spec, resolution)?;
    let phi1_sq: Vec<f64> = spec
        .holes
        .iter()
        .map(|hole| base_grid.interpolate(&phi1, &hole.center).powi(2))
        .collect();
    drop(phi1);

    if spec.holes.is_empty() {
        return Ok(ExpansionReport {
            eps: None,
            resolution,
            lambda_base: base.extrapolated,
            lambda_perforated: base.extrapolated,
            predicted_shift: 0.0,
            remainder: 0.0,
            remainder_ratio: 0.0,
            lambda_base_raw: base.fine,
            lambda_perforated_raw: base.fine,
            phi1_sq,
            capacities: Vec::new(),
        });
    }

    let capacities = spec
        .holes
        .iter()
        .map(|hole| match mode {
            CapacityMode::Lemma1 => ball_capacity_asymptotic(hole.eps, spec.dimension),
            CapacityMode::Computed => {
                let single = base_spec.clone().with_hole(hole.clone());
                let cc = capacity(&single, resolution / 2)?.value;
                let cf = capacity(&single, resolution)?.value;
                Ok(richardson(cc, cf, 1))
            }
        })
        .collect::<Result<Vec<f64>>>()?;

    let (perforated, _, _) = extrapolated_eigenvalue(spec, resolution)?;
    let predicted_shift: f64 = phi1_sq.iter().zip(&capacities).map(|(p, c)| p * c).sum();
    let remainder = perforated.extrapolated - base.extrapolated - predicted_shift;
    let total_cap: f64 = capacities.iter().sum();
    Ok(ExpansionReport {
        eps: spec.min_hole_size(),
        resolution,
        lambda_base: base.extrapolated,
        lambda_perforated: perforated.extrapolated,
        predicted_shift,
        remainder,
        remainder_ratio: if total_cap > 0.0 { remainder.abs() / total_cap } else { 0.0 },
        lambda_base_raw: base.fine,
        lambda_perforated_raw: perforated.fine,
        phi1_sq,
        capacities,
    })
}

/// Resolution with `h ≤ ε/8` whose half still has `h < ε/4`, kept a multiple
/// of 32 so the multigrid hierarchy stays deep, and at least `min_resolution`.
pub fn scheduled_resolution(eps: f64, min_resolution: usize) -> usize {
    (2 * resolving_resolution(eps)).max(min_resolution.div_ceil(32) * 32)
}

/// Smallest multiple of 16 with `h < ε/4`.
pub fn resolving_resolution(eps: f64) -> usize {
    ((4.0 / eps).floor() as usize + 1).div_ceil(16) * 16
}

/// One [`expansion_report`] per ε, with every hole of `template` resized to ε
/// and the resolution from [`scheduled_resolution`].
pub fn remainder_study(
    template: &DomainSpec,
    eps_list: &[f64],
    min_resolution: usize,
    mode: CapacityMode,
) -> Result<Vec<ExpansionReport>> {
    if eps_list.is_empty() {
        return Err(Error::InvalidSpec("empty eps list".into()));
    }
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidSpec("eps list must be strictly decreasing".into()));
    }
    eps_list
        .par_iter()
        .map(|&eps| {
            let mut spec = template.clone();
            for hole in &mut spec.holes {
                hole.eps = eps;
            }
            expansion_report(&spec, scheduled_resolution(eps, min_resolution), mode)
        })
        .collect()
}

pub const CSV_HEADER: &str = "eps,lambda_base,lambda_perforated,predicted_shift,remainder,remainder_ratio";

pub fn write_csv<W: Write>(reports: &[ExpansionReport], mut out: W) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.eps.unwrap_or(0.0),
            r.lambda_base,
            r.lambda_perforated,
            r.predicted_shift,
            r.remainder,
            r.remainder_ratio
        )?;
    }
    Ok(())
}
