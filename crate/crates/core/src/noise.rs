//! Diffusion coefficients `h(t, u)` of the multiplicative noise, with the
//! envelopes `γ(t)`, `ρ(t)` and their Cesàro constants `γ₀`, `ρ₀`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

type TimeFn = dyn Fn(f64) -> f64 + Send + Sync;
type CoefficientFn = dyn Fn(f64, f64) -> f64 + Send + Sync;

/// User-supplied coefficient with its envelopes.
#[derive(Clone)]
pub struct CustomNoise {
    pub h: Arc<CoefficientFn>,
    pub gamma: Arc<TimeFn>,
    pub rho: Arc<TimeFn>,
}

impl fmt::Debug for CustomNoise {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CustomNoise")
    }
}

#[derive(Debug, Clone)]
pub enum NoiseKind {
    Zero,
    /// `h(t,u) = αu`.
    Linear { alpha: f64 },
    /// `h(t,u) = (2+t²)(1+u²) / ((1+t²)(2+u²)) · u`.
    Rational,
    Custom(CustomNoise),
}

#[derive(Debug, Clone)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub gamma0: f64,
    pub rho0: f64,
}

fn rational_time_factor(t: f64) -> f64 {
    (2.0 + t * t) / (1.0 + t * t)
}

impl NoiseModel {
    pub fn zero() -> Self {
        NoiseModel {
            kind: NoiseKind::Zero,
            gamma0: 0.0,
            rho0: 0.0,
        }
    }

    pub fn linear(alpha: f64) -> Self {
        NoiseModel {
            kind: NoiseKind::Linear { alpha },
            gamma0: alpha * alpha,
            rho0: alpha * alpha,
        }
    }

    /// Rational example with the constants `γ₀ = 64`, `ρ₀ = 1`.
    pub fn rational() -> Self {
        NoiseModel {
            kind: NoiseKind::Rational,
            gamma0: 64.0,
            rho0: 1.0,
        }
    }

    pub fn custom(
        h: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        gamma: impl Fn(f64) -> f64 + Send + Sync + 'static,
        rho: impl Fn(f64) -> f64 + Send + Sync + 'static,
        gamma0: f64,
        rho0: f64,
    ) -> Result<Self> {
        NoiseModel {
            kind: NoiseKind::Custom(CustomNoise {
                h: Arc::new(h),
                gamma: Arc::new(gamma),
                rho: Arc::new(rho),
            }),
            gamma0,
            rho0,
        }
        .validated()
    }

    /// Replace the Cesàro constants.
    pub fn with_constants(mut self, gamma0: f64, rho0: f64) -> Result<Self> {
        self.gamma0 = gamma0;
        self.rho0 = rho0;
        self.validated()
    }

    fn validated(self) -> Result<Self> {
        if !(self.gamma0 >= 0.0 && self.gamma0.is_finite()) || !(self.rho0 >= 0.0 && self.rho0.is_finite()) {
            return Err(Error::InvalidNoise(format!(
                "gamma0 = {} and rho0 = {} must be finite and nonnegative",
                self.gamma0, self.rho0
            )));
        }
        if let NoiseKind::Linear { alpha } = self.kind {
            if !alpha.is_finite() {
                return Err(Error::InvalidNoise(format!("alpha = {alpha} is not finite")));
            }
        }
        Ok(self)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, NoiseKind::Zero)
    }

    /// `h(t, u)`.
    pub fn eval_h(&self, t: f64, u: f64) -> f64 {
        match &self.kind {
            NoiseKind::Custom(c) => (c.h)(t, u),
            _ => u * self.ratio(t, u),
        }
    }

    /// `h(t, u) / u`, continuous at `u = 0`. Constant `α` for linear noise.
    pub fn ratio(&self, t: f64, u: f64) -> f64 {
        match &self.kind {
            NoiseKind::Zero => 0.0,
            NoiseKind::Linear { alpha } => *alpha,
            NoiseKind::Rational => {
                let u2 = u * u;
                rational_time_factor(t) * (1.0 + u2) / (2.0 + u2)
            }
            NoiseKind::Custom(c) => {
                if u == 0.0 {
                    // Difference quotient at the origin, using H0.
                    let d = 1e-8;
                    (c.h)(t, d) / d
                } else {
                    (c.h)(t, u) / u
                }
            }
        }
    }

    /// `h(t,u)/u` when it is the same floating-point value for every
    /// `|u|² ≤ u_max_sq`.
    pub fn uniform_ratio(&self, t: f64, u_max_sq: f64) -> Option<f64> {
        match self.kind {
            NoiseKind::Zero => Some(0.0),
            NoiseKind::Linear { alpha } => Some(alpha),
            // 1 + u² and 2 + u² round to 1 and 2.
            NoiseKind::Rational if u_max_sq < f64::EPSILON / 4.0 => Some(self.ratio(t, 0.0)),
            _ => None,
        }
    }

    /// Whether `h(t,u)/u` depends on neither argument.
    pub fn constant_ratio(&self) -> Option<f64> {
        match self.kind {
            NoiseKind::Zero => Some(0.0),
            NoiseKind::Linear { alpha } => Some(alpha),
            _ => None,
        }
    }

    /// `γ(t)` in `|h(t,u)|² ≤ γ(t)|u|²`.
    pub fn gamma(&self, t: f64) -> f64 {
        match &self.kind {
            NoiseKind::Zero => 0.0,
            NoiseKind::Linear { alpha } => alpha * alpha,
            NoiseKind::Rational => 16.0 * rational_time_factor(t).powi(2),
            NoiseKind::Custom(c) => (c.gamma)(t),
        }
    }

    /// `ρ(t)` in `|h(t,u)u|² ≥ ρ(t)|u|⁴`.
    pub fn rho(&self, t: f64) -> f64 {
        match &self.kind {
            NoiseKind::Zero => 0.0,
            NoiseKind::Linear { alpha } => alpha * alpha,
            NoiseKind::Rational => (rational_time_factor(t) / 2.0).powi(2),
            NoiseKind::Custom(c) => (c.rho)(t),
        }
    }

    /// Serializable description; `None` for custom models.
    pub fn spec(&self) -> Option<NoiseSpec> {
        let (gamma0, rho0) = (Some(self.gamma0), Some(self.rho0));
        match self.kind {
            NoiseKind::Zero => Some(NoiseSpec::Zero),
            NoiseKind::Linear { alpha } => Some(NoiseSpec::Linear { alpha }),
            NoiseKind::Rational => Some(NoiseSpec::Rational { gamma0, rho0 }),
            NoiseKind::Custom(_) => None,
        }
    }
}

/// JSON form: `{"kind":"linear","alpha":3.0}`, `{"kind":"rational"}`,
/// `{"kind":"zero"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseSpec {
    Zero,
    Linear {
        alpha: f64,
    },
    Rational {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gamma0: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rho0: Option<f64>,
    },
}

impl TryFrom<NoiseSpec> for NoiseModel {
    type Error = Error;

    fn try_from(spec: NoiseSpec) -> Result<Self> {
        match spec {
            NoiseSpec::Zero => Ok(NoiseModel::zero()),
            NoiseSpec::Linear { alpha } => NoiseModel::linear(alpha).validated(),
            NoiseSpec::Rational { gamma0, rho0 } => {
                let base = NoiseModel::rational();
                let (g, r) = (gamma0.unwrap_or(base.gamma0), rho0.unwrap_or(base.rho0));
                base.with_constants(g, r)
            }
        }
    }
}

/// Command-line form: `zero`, `linear:alpha=3.4641`, `rational`, or
/// `rational:gamma0=16,rho0=0.25`.
impl FromStr for NoiseModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, params) = s.split_once(':').unwrap_or((s, ""));
        let mut alpha = None;
        let mut gamma0 = None;
        let mut rho0 = None;
        for item in params.split(',').filter(|p| !p.is_empty()) {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| Error::InvalidNoise(format!("expected key=value, got '{item}'")))?;
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::InvalidNoise(format!("'{value}' is not a number")))?;
            match key.trim() {
                "alpha" => alpha = Some(v),
                "gamma0" => gamma0 = Some(v),
                "rho0" => rho0 = Some(v),
                other => return Err(Error::InvalidNoise(format!("unknown parameter '{other}'"))),
            }
        }
        let spec = match kind.trim() {
            "zero" if alpha.is_none() && gamma0.is_none() && rho0.is_none() => NoiseSpec::Zero,
            "linear" if gamma0.is_none() && rho0.is_none() => NoiseSpec::Linear {
                alpha: alpha.ok_or_else(|| Error::InvalidNoise("linear noise needs alpha=<value>".into()))?,
            },
            "rational" if alpha.is_none() => NoiseSpec::Rational { gamma0, rho0 },
            "zero" | "linear" | "rational" => {
                return Err(Error::InvalidNoise(format!("parameters not accepted by '{kind}' noise: {params}")))
            }
            other => {
                return Err(Error::InvalidNoise(format!(
                    "unknown noise kind '{other}' (expected zero, linear or rational)"
                )))
            }
        };
        spec.try_into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Hypothesis {
    H0,
    H1,
    H2,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub hypothesis: Hypothesis,
    pub t: f64,
    pub u: f64,
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisReport {
    /// `max |h(t, 0)|`.
    pub h0_worst: f64,
    /// `max |h|² − γ|u|²`.
    pub h1_worst: f64,
    /// `max ρ|u|⁴ − |hu|²` over `u ≠ 0`.
    pub h2_worst: f64,
    pub violations: Vec<Violation>,
}

impl HypothesisReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Rounding slack when comparing two sides that agree analytically.
const HYPOTHESIS_RTOL: f64 = 1e-12;

/// Evaluate H0–H2 on every `(t, u)` pair of the sample grid.
pub fn check_hypotheses(model: &NoiseModel, times: &[f64], values: &[f64]) -> HypothesisReport {
    let mut report = HypothesisReport {
        h0_worst: 0.0,
        h1_worst: f64::NEG_INFINITY,
        h2_worst: f64::NEG_INFINITY,
        violations: Vec::new(),
    };
    for &t in times {
        let h0 = model.eval_h(t, 0.0).abs();
        report.h0_worst = report.h0_worst.max(h0);
        if h0 != 0.0 {
            report.violations.push(Violation {
                hypothesis: Hypothesis::H0,
                t,
                u: 0.0,
                excess: h0,
            });
        }
        let (gamma, rho) = (model.gamma(t), model.rho(t));
        for &u in values {
            let h = model.eval_h(t, u);
            let u2 = u * u;
            let bound = gamma * u2;
            let e1 = h * h - bound;
            report.h1_worst = report.h1_worst.max(e1);
            if e1 > HYPOTHESIS_RTOL * bound {
                report.violations.push(Violation {
                    hypothesis: Hypothesis::H1,
                    t,
                    u,
                    excess: e1,
                });
            }
            if u == 0.0 {
                continue;
            }
            let hu = h * u;
            let bound = rho * u2 * u2;
            let e2 = bound - hu * hu;
            report.h2_worst = report.h2_worst.max(e2);
            if e2 > HYPOTHESIS_RTOL * bound {
                report.violations.push(Violation {
                    hypothesis: Hypothesis::H2,
                    t,
                    u,
                    excess: e2,
                });
            }
        }
    }
    report
}

/// Composite trapezoid value of `(1/T) ∫₀ᵀ f`.
pub fn cesaro_estimate(f: impl Fn(f64) -> f64, horizon: f64, steps: usize) -> Result<f64> {
    if !(horizon > 0.0 && horizon.is_finite()) || steps < 10 {
        return Err(Error::InvalidNoise(format!(
            "Cesàro average needs T > 0 and at least 10 steps (got T = {horizon}, steps = {steps})"
        )));
    }
    let dt = horizon / steps as f64;
    let mut sum = 0.0;
    for k in 0..=steps {
        let v = f(k as f64 * dt);
        if !v.is_finite() {
            return Err(Error::NotFinite { context: "noise" });
        }
        let w = if k == 0 || k == steps { 0.5 } else { 1.0 };
        sum += w * v;
    }
    Ok(sum * dt / horizon)
}
