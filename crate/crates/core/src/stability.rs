//! Stabilization condition, decay-rate bound and critical hole size.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `λ₁ + ρ₀ − β − γ₀/2`; the zero state is stabilized when positive.
pub fn margin(beta: f64, gamma0: f64, rho0: f64, lambda1: f64) -> f64 {
    lambda1 + rho0 - beta - gamma0 / 2.0
}

/// Almost-sure upper bound on `limsup (1/t) log ||u(t)||²`:
/// `2β + γ₀ − 2λ₁ − 2ρ₀`.
pub fn decay_bound(beta: f64, gamma0: f64, rho0: f64, lambda1: f64) -> f64 {
    2.0 * beta + gamma0 - 2.0 * lambda1 - 2.0 * rho0
}

/// Hole size at which the leading-order eigenvalue shift `Σ φ₁²(xᵢ) cap(ε)`
/// equals the margin `m`.
///
/// `exp(−2π Σφ₁² / m)` in 2D and `m / (4π Σφ₁²)` in 3D; `Ok(None)` when
/// `m ≤ 0`.
pub fn epsilon0(dimension: usize, margin: f64, phi1_sq: &[f64]) -> Result<Option<f64>> {
    if !(dimension == 2 || dimension == 3) {
        return Err(Error::InvalidSpec(format!("dimension {dimension} not in {{2,3}}")));
    }
    match epsilon0_checked(dimension, margin, phi1_sq) {
        Err(Error::NoPositiveMargin(_)) => Ok(None),
        other => other.map(Some),
    }
}

/// [`epsilon0`] reporting a nonpositive margin as an error.
pub fn epsilon0_checked(dimension: usize, margin: f64, phi1_sq: &[f64]) -> Result<f64> {
    if margin.is_nan() || margin <= 0.0 {
        return Err(Error::NoPositiveMargin(margin));
    }
    let weight: f64 = phi1_sq.iter().sum();
    if weight <= 0.0 {
        return Err(Error::ZeroShiftDivisor);
    }
    match dimension {
        2 => Ok((-2.0 * PI * weight / margin).exp()),
        3 => Ok(margin / (4.0 * PI * weight)),
        _ => Err(Error::InvalidSpec(format!("dimension {dimension} not in {{2,3}}"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Stabilized,
    NotStabilized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub margin: f64,
    /// [`decay_bound`] evaluated with the caller's `λ₁`.
    pub predicted_exponent: f64,
    pub epsilon0: Option<f64>,
    /// Decay rate of `||u||`, `−predicted_exponent / 2` when that is positive.
    pub delta: Option<f64>,
    pub verdict: Verdict,
}

/// Inputs of a [`StabilityReport`].
#[derive(Debug, Clone, Copy)]
pub struct StabilityInputs<'a> {
    pub dimension: usize,
    pub beta: f64,
    pub gamma0: f64,
    pub rho0: f64,
    /// `λ₁(Ω)` of the domain without holes.
    pub lambda1_base: f64,
    /// `λ₁` used for the exponent; `λ₁(Ω_ε)` if known, else `λ₁(Ω)`.
    pub lambda1_exponent: f64,
    /// `φ₁²` of the base eigenfunction at the hole centers.
    pub phi1_sq: &'a [f64],
}

pub fn stability_report(inputs: StabilityInputs<'_>) -> Result<StabilityReport> {
    let StabilityInputs {
        dimension,
        beta,
        gamma0,
        rho0,
        lambda1_base,
        lambda1_exponent,
        phi1_sq,
    } = inputs;
    if !(lambda1_base > 0.0 && lambda1_exponent > 0.0) {
        return Err(Error::InvalidSpec("eigenvalues must be positive".into()));
    }
    let m = margin(beta, gamma0, rho0, lambda1_base);
    let eps0 = if phi1_sq.is_empty() {
        None
    } else {
        epsilon0(dimension, m, phi1_sq)?
    };
    let predicted_exponent = decay_bound(beta, gamma0, rho0, lambda1_exponent);
    Ok(StabilityReport {
        margin: m,
        predicted_exponent,
        epsilon0: eps0,
        delta: (predicted_exponent < 0.0).then_some(-predicted_exponent / 2.0),
        verdict: if m > 0.0 { Verdict::Stabilized } else { Verdict::NotStabilized },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LAMBDA_SQUARE: f64 = 2.0 * PI * PI;

    #[test]
    fn margin_examples() {
        assert_eq!(margin(7.0, 0.0, 0.0, 7.0), 0.0);
        let m = margin(25.0, 12.0, 12.0, LAMBDA_SQUARE);
        assert!((m - 0.7392).abs() < 1e-4);
        let r = margin(1.0, 64.0, 1.0, LAMBDA_SQUARE);
        assert!((r + 12.26).abs() < 1e-2);
    }

    #[test]
    fn epsilon0_examples() {
        let m = margin(25.0, 12.0, 12.0, LAMBDA_SQUARE);
        let e2 = epsilon0(2, m, &[4.0]).unwrap().unwrap();
        assert!((e2.ln() + 34.0).abs() < 0.01);
        assert!((e2 / 1.7e-15 - 1.0).abs() < 0.02);

        let m3 = margin(31.0, 4.0, 4.0, 3.0 * PI * PI);
        assert!((m3 - 0.6088).abs() < 1e-4);
        let e3 = epsilon0(3, m3, &[8.0]).unwrap().unwrap();
        assert!((e3 - 6.06e-3).abs() < 5e-6);

        assert_eq!(epsilon0(2, 0.0, &[4.0]).unwrap(), None);
        assert_eq!(epsilon0(2, -1.0, &[4.0]).unwrap(), None);
        assert_eq!(epsilon0_checked(2, -1.0, &[4.0]), Err(Error::NoPositiveMargin(-1.0)));
        assert_eq!(epsilon0(3, 1.0, &[0.0, 0.0]), Err(Error::ZeroShiftDivisor));
    }

    #[test]
    fn decay_bound_examples() {
        assert_eq!(decay_bound(3.0, 0.0, 0.0, 3.0), 0.0);
        assert!((decay_bound(25.0, 12.0, 12.0, 19.7392) + 1.4784).abs() < 1e-12);
        assert!((decay_bound(25.0, 0.0, 0.0, 19.7392) - 10.5216).abs() < 1e-12);
    }

    #[test]
    fn report_verdicts() {
        let r = stability_report(StabilityInputs {
            dimension: 2,
            beta: 25.0,
            gamma0: 12.0,
            rho0: 12.0,
            lambda1_base: LAMBDA_SQUARE,
            lambda1_exponent: LAMBDA_SQUARE,
            phi1_sq: &[4.0],
        })
        .unwrap();
        assert_eq!(r.verdict, Verdict::Stabilized);
        assert_eq!(r.predicted_exponent, -2.0 * r.margin);
        assert_eq!(r.delta, Some(r.margin));
        let json = serde_json::to_string(&r.verdict).unwrap();
        assert_eq!(json, "\"stabilized\"");

        let r = stability_report(StabilityInputs {
            dimension: 2,
            beta: 1.0,
            gamma0: 64.0,
            rho0: 1.0,
            lambda1_base: LAMBDA_SQUARE,
            lambda1_exponent: LAMBDA_SQUARE,
            phi1_sq: &[4.0],
        })
        .unwrap();
        assert_eq!(r.verdict, Verdict::NotStabilized);
        assert_eq!(r.epsilon0, None);
        assert_eq!(r.delta, None);
        assert_eq!(serde_json::to_string(&r.verdict).unwrap(), "\"not-stabilized\"");
    }

    proptest! {
        #[test]
        fn decay_bound_is_minus_twice_margin(
            beta in 0.0f64..100.0, g in 0.0f64..100.0, r in 0.0f64..100.0, l in 0.1f64..100.0
        ) {
            let (m, d) = (margin(beta, g, r, l), decay_bound(beta, g, r, l));
            prop_assert!((d + 2.0 * m).abs() <= 1e-12 * (beta + g + r + l));
        }

        #[test]
        fn epsilon0_increases_with_margin(m in 1e-3f64..50.0, dm in 1e-3f64..10.0, w in 0.1f64..20.0) {
            for dim in [2, 3] {
                let a = epsilon0(dim, m, &[w]).unwrap().unwrap();
                let b = epsilon0(dim, m + dm, &[w]).unwrap().unwrap();
                prop_assert!(b > a || (a == 0.0 && b == 0.0 && dim == 2));
            }
        }

        #[test]
        fn epsilon0_depends_on_phi_squared_only(phi in -5.0f64..5.0, m in 0.1f64..10.0) {
            prop_assume!(phi.abs() > 1e-3);
            let pos = epsilon0(3, m, &[phi * phi]).unwrap();
            let neg = epsilon0(3, m, &[(-phi) * (-phi)]).unwrap();
            prop_assert_eq!(pos, neg);
        }
    }

    #[test]
    fn epsilon0_vanishes_as_margin_vanishes() {
        for dim in [2, 3] {
            let tiny = epsilon0(dim, 1e-6, &[1.0]).unwrap().unwrap();
            assert!(tiny < 1e-5);
        }
    }
}
