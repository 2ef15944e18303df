//! Stochastic Chafee–Infante equation
//! `du + (−Δu + u³ − βu) dt = h(t,u) dW` on a masked grid, with one scalar
//! Wiener process per path.
//!
//! Two integrators are available. [`Scheme::SemiImplicitEuler`] solves
//! `(I + dt A) u⁺ = u + dt (βu − u³) + h(t,u) ΔW`. [`Scheme::SplitExponential`]
//! (the default) applies an L-stable two-stage SDIRK step to the diffusion and
//! then the nodewise update `u⁺ = v exp((β − v² − g²/2) dt + g ΔW)` with
//! `g = h(t,v)/v`, which keeps the log-norm drift of linear noise exact.
//!
//! States are stored as `mantissa · 2^k` so decaying paths never underflow.
//! Once a path is numerically a multiple of the ground mode of the step, the
//! cubic term is below rounding and `h/u` is spatially constant, the step is
//! a scalar map and only the amplitude is advanced ("reduced" steps).

use std::f64::consts::{FRAC_1_SQRT_2, LN_2};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigen::{first_eigenpair, EigenResult, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::multigrid::Multigrid;
use crate::noise::NoiseModel;
use crate::operator::{dirichlet_energy, DiscreteLaplacian};
use crate::rng::{NormalStream, SeedSpec};
use crate::sparse::{dot, pcg, SparseMatrix};
use crate::stability::decay_bound;

const SDIRK_GAMMA: f64 = 1.0 - FRAC_1_SQRT_2;
const SOLVE_TOL: f64 = 1e-12;
const SOLVE_MAX_ITER: usize = 2000;
/// `u² dt` below which `u − dt u³` and `exp(−u² dt)` round to `u` and 1.
const CUBIC_NEGLIGIBLE: f64 = f64::EPSILON / 2.0;
/// Relative distance from the ground mode of the step below which a state
/// counts as aligned.
const ALIGN_TOL: f64 = 1e-10;
const ALIGN_CHECK_EVERY: usize = 8;
/// Mantissas are rescaled by a power of two when they leave this range.
const RESCALE_BOUND: f64 = 1.0e30;
/// Relative norm below which a path counts as decayed.
pub const DECAY_THRESHOLD: f64 = 1e-6;
/// Smallest squared norm reported for an exactly zero state.
const NORM_SQ_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    SemiImplicitEuler,
    #[default]
    SplitExponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialData {
    /// `amplitude · φ₁` with `φ₁` the positive, `L²`-normalized ground state.
    Eigenfunction { amplitude: f64 },
    /// I.i.d. normal nodal values from the path's stream, scaled to the given
    /// `L²` norm.
    Random { l2_norm: f64 },
}

#[derive(Debug, Clone)]
pub struct SpdeConfig {
    pub beta: f64,
    pub noise: NoiseModel,
    pub dt: f64,
    pub horizon: f64,
    /// Start of the exponent window; `horizon / 5` when `None`.
    pub burn_in: Option<f64>,
    pub initial: InitialData,
    pub paths: usize,
    pub seed: u64,
    pub scheme: Scheme,
    /// Sampling stride in steps; about 1000 samples per path when `None`.
    pub record_every: Option<usize>,
    /// Each increment is the sum of this many draws at `dt / substeps`, so a
    /// run at `dt / 2` with one substep sees the same Brownian path.
    pub brownian_substeps: usize,
    /// Allow reduced steps (see module docs).
    pub reduce_linear: bool,
}

impl SpdeConfig {
    pub fn new(beta: f64, noise: NoiseModel, dt: f64, horizon: f64) -> Self {
        SpdeConfig {
            beta,
            noise,
            dt,
            horizon,
            burn_in: None,
            initial: InitialData::Eigenfunction { amplitude: 1.0 },
            paths: 1,
            seed: 0,
            scheme: Scheme::default(),
            record_every: None,
            brownian_substeps: 1,
            reduce_linear: true,
        }
    }

    pub fn burn_in_time(&self) -> f64 {
        self.burn_in.unwrap_or(self.horizon / 5.0)
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt - 1e-9).ceil() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta = {} must be finite and nonnegative", self.beta));
        }
        if !(self.dt > 0.0 && self.horizon.is_finite() && self.dt < self.horizon) {
            return bad(format!("need 0 < dt < T (dt = {}, T = {})", self.dt, self.horizon));
        }
        let t0 = self.burn_in_time();
        if !(t0 >= 0.0 && t0 < self.horizon) {
            return bad(format!("burn-in {t0} must lie in [0, T)"));
        }
        let size = match self.initial {
            InitialData::Eigenfunction { amplitude } => amplitude,
            InitialData::Random { l2_norm } => l2_norm,
        };
        if size == 0.0 || !size.is_finite() {
            return bad("initial data must be nonzero and finite".into());
        }
        if self.paths == 0 {
            return bad("paths must be at least 1".into());
        }
        if self.brownian_substeps == 0 {
            return bad("brownian_substeps must be at least 1".into());
        }
        if self.record_every == Some(0) {
            return bad("record_every must be at least 1".into());
        }
        Ok(())
    }
}

/// Integrals of the five terms of the log-norm identity, each evaluated at
/// the left end of every step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Accumulators {
    /// `∫ 2||∇u||²/||u||² dt`.
    pub gradient: f64,
    /// `∫ 2⟨f(u),u⟩/||u||² dt` with `f(u) = u³ − βu`.
    pub nonlinear: f64,
    /// `∫ ||h||²/||u||² dt`.
    pub ito: f64,
    /// `∫ −2⟨u,h⟩²/||u||⁴ dt`.
    pub quadratic_variation: f64,
    /// `∫ 2⟨u,h⟩/||u||² dW`.
    pub martingale: f64,
}

impl Accumulators {
    /// Predicted `log||u(T)||² − log||u₀||²`.
    pub fn predicted_change(&self) -> f64 {
        -self.gradient - self.nonlinear + self.ito + self.quadratic_variation + self.martingale
    }
}

/// Worst per-step slack of the inequalities used to bound the log-norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepChecks {
    /// `min (2||∇u||²/||u||² − 2λ₁)`.
    pub poincare: f64,
    /// `min (2⟨f(u),u⟩/||u||² + 2β)`.
    pub nonlinear: f64,
    /// `max (||h||²/||u||² − γ(t))`.
    pub h1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub norm_sq: f64,
    pub log_norm_sq: f64,
    pub acc: Accumulators,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStats {
    pub path: u64,
    pub samples: Vec<Sample>,
    pub log_norm_sq_initial: f64,
    pub log_norm_sq_final: f64,
    /// `(log||u(T)||² − log||u(t₀)||²) / (T − t₀)`.
    pub lyapunov_hat: f64,
    pub acc: Accumulators,
    pub checks: StepChecks,
    pub steps: usize,
    pub reduced_steps: usize,
    /// Time at which the state became exactly zero, if it did.
    pub stopped_early: Option<f64>,
    /// `max_t log(||u(t)|| e^{δt} / ||u₀||)`, when `δ > 0`.
    pub log_c: Option<f64>,
}

impl TrajectoryStats {
    /// Exponent of `||u||`, half of [`TrajectoryStats::lyapunov_hat`].
    pub fn norm_rate(&self) -> f64 {
        self.lyapunov_hat / 2.0
    }

    pub fn decayed(&self) -> bool {
        self.log_norm_sq_final - self.log_norm_sq_initial < 2.0 * DECAY_THRESHOLD.ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub paths: usize,
    pub lambda1_h: f64,
    pub decay_bound: f64,
    /// `2(β − λ₁,h) − α²` for linear noise.
    pub linear_prediction: Option<f64>,
    pub median_lyapunov: f64,
    pub mean_lyapunov: f64,
    pub median_norm_rate: f64,
    pub decayed_fraction: f64,
    pub c_estimate: Option<f64>,
    pub stopped_early: usize,
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    pub paths: Vec<TrajectoryStats>,
    pub summary: EnsembleSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItoReport {
    /// `|log||u(T)||² − log||u₀||² − (sum of accumulated terms)|`.
    pub residual: f64,
    pub checks: StepChecks,
    pub poincare_ok: bool,
    pub nonlinear_ok: bool,
    pub h1_ok: bool,
}

/// Residual of the log-norm identity and the per-step inequality checks,
/// each allowed `slack`.
pub fn ito_decomposition_check(stats: &TrajectoryStats, slack: f64) -> ItoReport {
    let change = stats.log_norm_sq_final - stats.log_norm_sq_initial;
    let c = stats.checks;
    ItoReport {
        residual: (change - stats.acc.predicted_change()).abs(),
        checks: c,
        poincare_ok: c.poincare >= -slack,
        nonlinear_ok: c.nonlinear >= -slack,
        h1_ok: c.h1 <= slack,
    }
}

fn pow2(e: i64) -> f64 {
    2f64.powi(e.clamp(-2000, 2000) as i32)
}

/// Left-point integrands of the log-norm identity.
struct Terms {
    gradient: f64,
    nonlinear: f64,
    ito: f64,
    quadratic_variation: f64,
    martingale: f64,
}

enum State {
    /// `u = mantissa · 2^k`.
    Full { u: Vec<f64>, k: i64 },
    /// `u = sign · exp(log_norm_sq / 2) · shape` with `||shape|| = 1`.
    Reduced {
        shape: Vec<f64>,
        sign: f64,
        /// Factor of the diffusion map on `shape`.
        factor: f64,
        gradient: f64,
        quartic: f64,
        max_sq: f64,
    },
}

/// Shared read-only data for all paths of one configuration.
pub struct Simulator {
    lap: DiscreteLaplacian,
    cfg: SpdeConfig,
    ground: EigenResult,
    /// `I + c A` with `c = dt` (semi-implicit) or `γ dt` (SDIRK).
    system: SparseMatrix,
    coef: f64,
    mg: Multigrid,
    delta: Option<f64>,
}

impl Simulator {
    pub fn new(lap: &DiscreteLaplacian, cfg: SpdeConfig) -> Result<Self> {
        let ground = first_eigenpair(lap, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
        Self::with_ground_state(lap, cfg, ground)
    }

    pub fn with_ground_state(lap: &DiscreteLaplacian, cfg: SpdeConfig, ground: EigenResult) -> Result<Self> {
        cfg.validate()?;
        if ground.phi1.len() != lap.len() {
            return Err(Error::DimensionMismatch {
                context: "spde",
                expected: lap.len(),
                got: ground.phi1.len(),
            });
        }
        let coef = match cfg.scheme {
            Scheme::SemiImplicitEuler => cfg.dt,
            Scheme::SplitExponential => SDIRK_GAMMA * cfg.dt,
        };
        let bound = decay_bound(cfg.beta, cfg.noise.gamma0, cfg.noise.rho0, ground.lambda1);
        Ok(Simulator {
            system: lap.matrix().shifted(1.0, coef),
            mg: Multigrid::shifted(lap, 1.0, coef),
            lap: lap.clone(),
            coef,
            delta: (bound < 0.0).then_some(-bound / 2.0),
            ground,
            cfg,
        })
    }

    pub fn config(&self) -> &SpdeConfig {
        &self.cfg
    }

    pub fn lambda1(&self) -> f64 {
        self.ground.lambda1
    }

    pub fn ground_state(&self) -> &EigenResult {
        &self.ground
    }

    pub fn laplacian(&self) -> &DiscreteLaplacian {
        &self.lap
    }

    pub fn decay_bound(&self) -> f64 {
        decay_bound(self.cfg.beta, self.cfg.noise.gamma0, self.cfg.noise.rho0, self.ground.lambda1)
    }

    fn cell(&self) -> f64 {
        self.lap.grid().cell_volume()
    }

    fn norm_sq(&self, u: &[f64]) -> f64 {
        self.cell() * dot(u, u)
    }

    fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let guess: Vec<f64> = {
            let s = 1.0 / (1.0 + self.coef * self.ground.lambda1);
            b.iter().map(|v| v * s).collect()
        };
        pcg(&self.system, b, Some(&guess), SOLVE_TOL, SOLVE_MAX_ITER, &self.mg)
            .map(|o| o.x)
            .map_err(|e| match e {
                Error::MaxIterations { iterations, residual, .. } => Error::MaxIterations {
                    context: "spde",
                    iterations,
                    residual,
                },
                Error::NotFinite { .. } => Error::NotFinite { context: "spde" },
                other => other,
            })
    }

    /// Linear part of the step: `(I + dt A)⁻¹`, or the SDIRK map
    /// `(I − (1−2γ) dt A)(I + γ dt A)⁻²`.
    fn diffusion(&self, b: &[f64]) -> Result<Vec<f64>> {
        match self.cfg.scheme {
            Scheme::SemiImplicitEuler => self.solve(b),
            Scheme::SplitExponential => {
                let w = self.solve(&self.solve(b)?)?;
                let mut aw = vec![0.0; w.len()];
                self.lap.matrix().matvec_into(&w, &mut aw);
                let c = (1.0 - 2.0 * SDIRK_GAMMA) * self.cfg.dt;
                Ok(w.iter().zip(&aw).map(|(x, y)| x - c * y).collect())
            }
        }
    }

    fn increment(&self, stream: &mut NormalStream) -> Result<f64> {
        let n = self.cfg.brownian_substeps;
        let sub = self.cfg.dt / n as f64;
        let mut dw = 0.0;
        for _ in 0..n {
            dw += stream.wiener_increment(sub)?;
        }
        Ok(dw)
    }

    /// One step from `u · 2^k` at time `t` with increment `dw`; returns the
    /// new mantissa at the same exponent.
    fn full_step(&self, u: &[f64], k: i64, t: f64, dw: f64) -> Result<Vec<f64>> {
        let (dt, beta) = (self.cfg.dt, self.cfg.beta);
        let (s, s2) = (pow2(k), pow2(2 * k));
        let noise = &self.cfg.noise;
        let next = match self.cfg.scheme {
            Scheme::SemiImplicitEuler => {
                let rhs: Vec<f64> = u
                    .iter()
                    .map(|&x| {
                        let g = noise.ratio(t, x * s);
                        x + dt * (beta * x - x * x * x * s2) + g * x * dw
                    })
                    .collect();
                self.diffusion(&rhs)?
            }
            Scheme::SplitExponential => {
                let mut v = self.diffusion(u)?;
                for x in v.iter_mut() {
                    let g = noise.ratio(t, *x * s);
                    *x *= ((beta - *x * *x * s2 - 0.5 * g * g) * dt + g * dw).exp();
                }
                v
            }
        };
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::NotFinite { context: "spde" });
        }
        Ok(next)
    }

    /// Advance the true state `u` by one step.
    pub fn step(&self, u: &[f64], t: f64, stream: &mut NormalStream) -> Result<Vec<f64>> {
        if u.len() != self.lap.len() {
            return Err(Error::DimensionMismatch {
                context: "spde",
                expected: self.lap.len(),
                got: u.len(),
            });
        }
        let dw = self.increment(stream)?;
        self.full_step(u, 0, t, dw)
    }

    fn terms(&self, u: &[f64], k: i64, t: f64, dw: f64) -> Result<Terms> {
        let cell = self.cell();
        let (s, s2) = (pow2(k), pow2(2 * k));
        let norm_sq = self.norm_sq(u);
        let energy = dirichlet_energy(self.lap.grid(), u)?;
        let (mut quartic, mut hh, mut uh) = (0.0, 0.0, 0.0);
        for &x in u {
            let h = self.cfg.noise.ratio(t, x * s) * x;
            quartic += x * x * x * x;
            hh += h * h;
            uh += x * h;
        }
        let (hh, uh) = (cell * hh / norm_sq, cell * uh / norm_sq);
        Ok(Terms {
            gradient: 2.0 * energy / norm_sq,
            nonlinear: 2.0 * (cell * quartic * s2 / norm_sq - self.cfg.beta),
            ito: hh,
            quadratic_variation: -2.0 * uh * uh,
            martingale: 2.0 * uh * dw,
        })
    }

    fn initial_state(&self, stream: &mut NormalStream) -> Vec<f64> {
        match self.cfg.initial {
            InitialData::Eigenfunction { amplitude } => self.ground.phi1.iter().map(|p| amplitude * p).collect(),
            InitialData::Random { l2_norm } => {
                let raw: Vec<f64> = (0..self.lap.len()).map(|_| stream.normal()).collect();
                let scale = l2_norm / self.norm_sq(&raw).sqrt();
                raw.into_iter().map(|x| x * scale).collect()
            }
        }
    }

    /// Reduced-state data if `u · 2^k` is aligned with the ground mode of the
    /// step and in the linear regime at time `t`.
    fn try_reduce(&self, u: &[f64], k: i64, t: f64) -> Result<Option<State>> {
        let max_sq = u.iter().fold(0.0f64, |m, x| m.max(x * x)) * pow2(2 * k);
        if max_sq * self.cfg.dt > CUBIC_NEGLIGIBLE || self.cfg.noise.uniform_ratio(t, max_sq).is_none() {
            return Ok(None);
        }
        let w = self.diffusion(u)?;
        let factor = dot(&w, u) / dot(u, u);
        let off: f64 = w.iter().zip(u).map(|(a, b)| (a - factor * b).powi(2)).sum::<f64>().sqrt();
        if off > ALIGN_TOL * dot(&w, &w).sqrt() {
            return Ok(None);
        }
        let scale = 1.0 / self.norm_sq(u).sqrt();
        let shape: Vec<f64> = u.iter().map(|x| x * scale).collect();
        let cell = self.cell();
        Ok(Some(State::Reduced {
            gradient: 2.0 * dirichlet_energy(self.lap.grid(), &shape)?,
            quartic: cell * shape.iter().map(|x| x.powi(4)).sum::<f64>(),
            max_sq: shape.iter().fold(0.0f64, |m, x| m.max(x * x)),
            shape,
            sign: 1.0,
            factor,
        }))
    }

    pub fn simulate_path(&self, path: u64) -> Result<TrajectoryStats> {
        let cfg = &self.cfg;
        let mut stream = NormalStream::new(SeedSpec {
            seed: cfg.seed,
            stream: path,
        });
        let u0 = self.initial_state(&mut stream);
        let n0 = self.norm_sq(&u0);
        if n0 == 0.0 || !n0.is_finite() {
            return Err(Error::InvalidConfig("initial data must be nonzero and finite".into()));
        }
        let log0 = n0.ln();
        let steps = cfg.steps();
        let burn_step = ((cfg.burn_in_time() / cfg.dt).round() as usize).min(steps - 1);
        let record_every = cfg.record_every.unwrap_or((steps / 1000).max(1));
        let dt = cfg.dt;

        let mut state = State::Full { u: u0, k: 0 };
        let mut log_norm_sq = log0;
        let mut log_burn = log0;
        let mut acc = Accumulators::default();
        let mut checks = StepChecks {
            poincare: f64::INFINITY,
            nonlinear: f64::INFINITY,
            h1: f64::NEG_INFINITY,
        };
        let mut samples = vec![Sample {
            t: 0.0,
            norm_sq: n0,
            log_norm_sq: log0,
            acc,
        }];
        let mut log_c: Option<f64> = self.delta.map(|_| 0.0);
        let mut reduced_steps = 0;
        let mut stopped_early = None;
        let mut done = 0;

        for n in 0..steps {
            let t = n as f64 * dt;
            let dw = self.increment(&mut stream)?;

            // Leave the reduced form when its conditions fail.
            if let State::Reduced { shape, sign, max_sq, .. } = &state {
                let u_max_sq = max_sq * log_norm_sq.exp();
                if u_max_sq * dt > CUBIC_NEGLIGIBLE || cfg.noise.uniform_ratio(t, u_max_sq).is_none() {
                    let k = (0.5 * log_norm_sq / LN_2).floor() as i64;
                    let a = sign * (0.5 * log_norm_sq - k as f64 * LN_2).exp();
                    state = State::Full {
                        u: shape.iter().map(|x| a * x).collect(),
                        k,
                    };
                }
            } else if cfg.reduce_linear && n % ALIGN_CHECK_EVERY == 0 {
                if let State::Full { u, k } = &state {
                    if let Some(reduced) = self.try_reduce(u, *k, t)? {
                        state = reduced;
                    }
                }
            }

            let terms = match &mut state {
                State::Full { u, k } => {
                    let terms = self.terms(u, *k, t, dw)?;
                    let next = self.full_step(u, *k, t, dw)?;
                    let peak = next.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                    if peak == 0.0 {
                        stopped_early = Some(t + dt);
                        *u = next;
                        log_norm_sq = NORM_SQ_FLOOR.ln();
                        done = n + 1;
                        accumulate(&mut acc, &terms, dt);
                        break;
                    }
                    *u = next;
                    if !(1.0 / RESCALE_BOUND..=RESCALE_BOUND).contains(&peak) {
                        let e = peak.log2().round() as i64;
                        let s = pow2(-e);
                        u.iter_mut().for_each(|x| *x *= s);
                        *k += e;
                    }
                    log_norm_sq = self.norm_sq(u).ln() + 2.0 * *k as f64 * LN_2;
                    terms
                }
                State::Reduced {
                    sign,
                    factor,
                    gradient,
                    quartic,
                    ..
                } => {
                    reduced_steps += 1;
                    let g = cfg
                        .noise
                        .uniform_ratio(t, 0.0)
                        .expect("uniform ratio checked on entry");
                    let terms = Terms {
                        gradient: *gradient,
                        nonlinear: 2.0 * (quartic.abs() * log_norm_sq.exp() - cfg.beta),
                        ito: g * g,
                        quadratic_variation: -2.0 * g * g,
                        martingale: 2.0 * g * dw,
                    };
                    let reaction = match cfg.scheme {
                        Scheme::SemiImplicitEuler => 1.0 + cfg.beta * dt + g * dw,
                        Scheme::SplitExponential => ((cfg.beta - 0.5 * g * g) * dt + g * dw).exp(),
                    };
                    let m = *factor * reaction;
                    if m == 0.0 {
                        stopped_early = Some(t + dt);
                        log_norm_sq = NORM_SQ_FLOOR.ln();
                        done = n + 1;
                        accumulate(&mut acc, &terms, dt);
                        break;
                    }
                    *sign *= m.signum();
                    log_norm_sq += 2.0 * m.abs().ln();
                    terms
                }
            };
            if !log_norm_sq.is_finite() {
                return Err(Error::NotFinite { context: "spde" });
            }

            checks.poincare = checks.poincare.min(terms.gradient - 2.0 * self.ground.lambda1);
            checks.nonlinear = checks.nonlinear.min(terms.nonlinear + 2.0 * cfg.beta);
            checks.h1 = checks.h1.max(terms.ito - cfg.noise.gamma(t));
            accumulate(&mut acc, &terms, dt);

            let t_next = (n + 1) as f64 * dt;
            if n + 1 == burn_step {
                log_burn = log_norm_sq;
            }
            if let (Some(c), Some(delta)) = (log_c.as_mut(), self.delta) {
                *c = c.max(0.5 * (log_norm_sq - log0) + delta * t_next);
            }
            if (n + 1) % record_every == 0 || n + 1 == steps {
                samples.push(Sample {
                    t: t_next,
                    norm_sq: log_norm_sq.exp(),
                    log_norm_sq,
                    acc,
                });
            }
            done = n + 1;
        }

        let t_end = done as f64 * dt;
        let (t_start, log_start) = if done > burn_step && burn_step > 0 {
            (burn_step as f64 * dt, log_burn)
        } else {
            (0.0, log0)
        };
        if stopped_early.is_some() {
            samples.push(Sample {
                t: t_end,
                norm_sq: log_norm_sq.exp(),
                log_norm_sq,
                acc,
            });
        }
        Ok(TrajectoryStats {
            path,
            samples,
            log_norm_sq_initial: log0,
            log_norm_sq_final: log_norm_sq,
            lyapunov_hat: (log_norm_sq - log_start) / (t_end - t_start),
            acc,
            checks,
            steps: done,
            reduced_steps,
            stopped_early,
            log_c,
        })
    }

    /// All paths `0..cfg.paths`, run in parallel and reported in path order.
    pub fn ensemble(&self) -> Result<Ensemble> {
        let paths = (0..self.cfg.paths as u64)
            .into_par_iter()
            .map(|p| self.simulate_path(p))
            .collect::<Result<Vec<_>>>()?;
        let summary = self.summarize(&paths);
        Ok(Ensemble { paths, summary })
    }

    fn summarize(&self, paths: &[TrajectoryStats]) -> EnsembleSummary {
        let mut lyap: Vec<f64> = paths.iter().map(|p| p.lyapunov_hat).collect();
        let mean = lyap.iter().sum::<f64>() / lyap.len() as f64;
        lyap.sort_by(f64::total_cmp);
        let mid = lyap.len() / 2;
        let median = if lyap.len() % 2 == 1 {
            lyap[mid]
        } else {
            0.5 * (lyap[mid - 1] + lyap[mid])
        };
        let decayed = paths.iter().filter(|p| p.decayed()).count();
        let c_estimate = paths
            .iter()
            .map(|p| p.log_c)
            .try_fold(f64::NEG_INFINITY, |m, c| c.map(|c| m.max(c)))
            .map(f64::exp);
        let cfg = &self.cfg;
        EnsembleSummary {
            paths: paths.len(),
            lambda1_h: self.ground.lambda1,
            decay_bound: self.decay_bound(),
            linear_prediction: match cfg.noise.constant_ratio() {
                Some(alpha) => Some(2.0 * (cfg.beta - self.ground.lambda1) - alpha * alpha),
                None => None,
            },
            median_lyapunov: median,
            mean_lyapunov: mean,
            median_norm_rate: median / 2.0,
            decayed_fraction: decayed as f64 / paths.len() as f64,
            c_estimate,
            stopped_early: paths.iter().filter(|p| p.stopped_early.is_some()).count(),
        }
    }
}

fn accumulate(acc: &mut Accumulators, terms: &Terms, dt: f64) {
    acc.gradient += terms.gradient * dt;
    acc.nonlinear += terms.nonlinear * dt;
    acc.ito += terms.ito * dt;
    acc.quadratic_variation += terms.quadratic_variation * dt;
    acc.martingale += terms.martingale;
}

pub const PATH_CSV_HEADER: &str = "t,norm_sq,log_norm_sq,gradient,nonlinear,ito,quadratic_variation,martingale";

pub fn write_path_csv<W: Write>(stats: &TrajectoryStats, mut out: W) -> Result<()> {
    writeln!(out, "{PATH_CSV_HEADER}")?;
    for s in &stats.samples {
        let a = s.acc;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            s.t, s.norm_sq, s.log_norm_sq, a.gradient, a.nonlinear, a.ito, a.quadratic_variation, a.martingale
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_grid, DomainSpec, HoleSpec};
    use crate::operator::{assemble, l2_norm_sq};
    use crate::stability::decay_bound;

    fn square(res: usize) -> DiscreteLaplacian {
        assemble(build_grid(&DomainSpec::unit_box(2), res).unwrap())
    }

    fn norm(lap: &DiscreteLaplacian, u: &[f64]) -> f64 {
        l2_norm_sq(lap.grid(), u).unwrap().sqrt()
    }

    #[test]
    fn zero_state_is_invariant() {
        let lap = square(16);
        for scheme in [Scheme::SemiImplicitEuler, Scheme::SplitExponential] {
            for noise in [NoiseModel::linear(3.0), NoiseModel::rational()] {
                let mut cfg = SpdeConfig::new(25.0, noise, 0.01, 1.0);
                cfg.scheme = scheme;
                let sim = Simulator::new(&lap, cfg).unwrap();
                let mut s = NormalStream::new(SeedSpec { seed: 1, stream: 0 });
                let next = sim.step(&vec![0.0; lap.len()], 0.0, &mut s).unwrap();
                assert!(next.iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn small_ground_mode_one_step_oracle() {
        let lap = square(32);
        let (dt, beta) = (0.005, 25.0);
        let mut s = NormalStream::new(SeedSpec { seed: 0, stream: 0 });
        for scheme in [Scheme::SemiImplicitEuler, Scheme::SplitExponential] {
            let mut cfg = SpdeConfig::new(beta, NoiseModel::zero(), dt, 1.0);
            cfg.scheme = scheme;
            let sim = Simulator::new(&lap, cfg).unwrap();
            let l = sim.lambda1();
            let c = 1e-4;
            let u: Vec<f64> = sim.ground_state().phi1.iter().map(|p| c * p).collect();
            let next = sim.step(&u, 0.0, &mut s).unwrap();
            let ratio = norm(&lap, &next) / norm(&lap, &u);
            let expected = match scheme {
                Scheme::SemiImplicitEuler => (1.0 + dt * beta) / (1.0 + dt * l),
                Scheme::SplitExponential => {
                    let z = dt * l;
                    let g = SDIRK_GAMMA;
                    (1.0 - (1.0 - 2.0 * g) * z) / (1.0 + g * z).powi(2) * (beta * dt).exp()
                }
            };
            assert!((ratio - expected).abs() < 1e-7, "{scheme:?}: {ratio} vs {expected}");
        }
    }

    #[test]
    fn pure_decay_contracts() {
        let lap = assemble(build_grid(&DomainSpec::unit_box(2).with_hole(HoleSpec::ball(&[0.3, 0.6], 0.15)), 32).unwrap());
        let mut s = NormalStream::new(SeedSpec { seed: 9, stream: 4 });
        for scheme in [Scheme::SemiImplicitEuler, Scheme::SplitExponential] {
            let mut cfg = SpdeConfig::new(0.0, NoiseModel::zero(), 0.01, 1.0);
            cfg.scheme = scheme;
            let sim = Simulator::new(&lap, cfg).unwrap();
            let mut u: Vec<f64> = (0..lap.len()).map(|_| s.normal()).collect();
            for n in 0..20 {
                let next = sim.step(&u, n as f64 * 0.01, &mut s).unwrap();
                assert!(norm(&lap, &next) <= norm(&lap, &u));
                u = next;
            }
        }
    }

    #[test]
    fn zero_noise_accumulators_vanish() {
        let lap = square(16);
        let mut cfg = SpdeConfig::new(5.0, NoiseModel::zero(), 0.01, 1.0);
        cfg.initial = InitialData::Random { l2_norm: 0.5 };
        let stats = Simulator::new(&lap, cfg).unwrap().simulate_path(0).unwrap();
        assert_eq!(stats.acc.ito, 0.0);
        assert_eq!(stats.acc.quadratic_variation, 0.0);
        assert_eq!(stats.acc.martingale, 0.0);
    }

    #[test]
    fn pure_decay_rate_bounded_by_spectrum() {
        let lap = square(16);
        for scheme in [Scheme::SemiImplicitEuler, Scheme::SplitExponential] {
            let mut cfg = SpdeConfig::new(0.0, NoiseModel::zero(), 0.002, 3.0);
            cfg.scheme = scheme;
            cfg.initial = InitialData::Random { l2_norm: 1.0 };
            let sim = Simulator::new(&lap, cfg).unwrap();
            let stats = sim.simulate_path(3).unwrap();
            let (l, dt) = (sim.lambda1(), 0.002);
            let factor = match scheme {
                Scheme::SemiImplicitEuler => 1.0 / (1.0 + dt * l),
                Scheme::SplitExponential => {
                    (1.0 - (1.0 - 2.0 * SDIRK_GAMMA) * dt * l) / (1.0 + SDIRK_GAMMA * dt * l).powi(2)
                }
            };
            let discrete = 2.0 * factor.ln() / dt;
            assert!((stats.lyapunov_hat - discrete).abs() < 1e-6, "{} vs {discrete}", stats.lyapunov_hat);
            assert!(stats.lyapunov_hat <= -2.0 * l * 0.98, "{}", stats.lyapunov_hat);
        }
    }

    #[test]
    fn reduced_steps_match_full_steps() {
        let spec = DomainSpec::unit_box(2).with_hole(HoleSpec::ball(&[0.5, 0.5], 0.1));
        let lap = assemble(build_grid(&spec, 48).unwrap());
        for noise in [NoiseModel::linear(12f64.sqrt()), NoiseModel::rational()] {
            let mut cfg = SpdeConfig::new(25.0, noise, 0.005, 6.0);
            cfg.initial = InitialData::Eigenfunction { amplitude: 1e-3 };
            let fast = Simulator::new(&lap, cfg.clone()).unwrap().simulate_path(2).unwrap();
            cfg.reduce_linear = false;
            let slow = Simulator::new(&lap, cfg).unwrap().simulate_path(2).unwrap();
            assert!(fast.reduced_steps > 1000, "{}", fast.reduced_steps);
            assert_eq!(slow.reduced_steps, 0);
            assert!(
                (fast.log_norm_sq_final - slow.log_norm_sq_final).abs() < 1e-6,
                "{} vs {}",
                fast.log_norm_sq_final,
                slow.log_norm_sq_final
            );
            let (a, b) = (fast.acc, slow.acc);
            for (x, y) in [
                (a.gradient, b.gradient),
                (a.nonlinear, b.nonlinear),
                (a.ito, b.ito),
                (a.quadratic_variation, b.quadratic_variation),
                (a.martingale, b.martingale),
            ] {
                assert!((x - y).abs() < 1e-6 * (1.0 + y.abs()), "{x} vs {y}");
            }
        }
    }

    #[test]
    fn long_decay_does_not_underflow() {
        let lap = square(16);
        let mut cfg = SpdeConfig::new(1.0, NoiseModel::linear(2.0), 0.01, 60.0);
        cfg.reduce_linear = false;
        let sim = Simulator::new(&lap, cfg).unwrap();
        let stats = sim.simulate_path(0).unwrap();
        // log||u||² falls by ~2λ₁ t ≈ 2400, far below the f64 range.
        assert!(stats.log_norm_sq_final < -2000.0);
        assert!(stats.stopped_early.is_none());
        let expected = decay_bound(1.0, 4.0, 4.0, sim.lambda1());
        assert!((stats.lyapunov_hat - expected).abs() < 1.0);
    }

    #[test]
    fn same_seed_same_series() {
        let lap = square(16);
        let mut cfg = SpdeConfig::new(25.0, NoiseModel::rational(), 0.01, 2.0);
        cfg.paths = 3;
        cfg.seed = 77;
        let a = Simulator::new(&lap, cfg.clone()).unwrap().ensemble().unwrap();
        let b = Simulator::new(&lap, cfg).unwrap().ensemble().unwrap();
        for (x, y) in a.paths.iter().zip(&b.paths) {
            let bits = |s: &TrajectoryStats| s.samples.iter().map(|p| p.norm_sq.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(x), bits(y));
        }
        assert_eq!(a.summary, b.summary);
    }

    #[test]
    fn single_path_summary_is_that_path() {
        let lap = square(16);
        let cfg = SpdeConfig::new(5.0, NoiseModel::linear(2.0), 0.01, 2.0);
        let e = Simulator::new(&lap, cfg).unwrap().ensemble().unwrap();
        assert_eq!(e.summary.median_lyapunov, e.paths[0].lyapunov_hat);
        assert_eq!(e.summary.mean_lyapunov, e.paths[0].lyapunov_hat);
    }

    #[test]
    fn rejects_bad_configs() {
        let lap = square(16);
        let base = SpdeConfig::new(5.0, NoiseModel::zero(), 0.01, 1.0);
        let mut bad = vec![base.clone(); 5];
        bad[0].dt = 0.0;
        bad[1].dt = 2.0;
        bad[2].burn_in = Some(1.0);
        bad[3].paths = 0;
        bad[4].initial = InitialData::Eigenfunction { amplitude: 0.0 };
        for cfg in bad {
            assert!(matches!(Simulator::new(&lap, cfg), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn path_csv_has_header_and_rows() {
        let lap = square(16);
        let mut cfg = SpdeConfig::new(5.0, NoiseModel::linear(1.0), 0.01, 1.0);
        cfg.record_every = Some(10);
        let stats = Simulator::new(&lap, cfg).unwrap().simulate_path(0).unwrap();
        let mut buf = Vec::new();
        write_path_csv(&stats, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(PATH_CSV_HEADER));
        assert_eq!(text.lines().count(), 1 + 11);
    }
}
