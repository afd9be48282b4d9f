//! Right-hand side and time integration of the calmed MHD-Boussinesq system
//!
//! ```text
//! u_t - nu Lap u + (u.grad)u + grad p = (b.grad)b + g theta e2
//! b_t - mu Lap b + (u.grad)b         = (b.grad)u
//! theta_t - kappa Lap theta + (u.grad)theta = alpha mu zeta(|curl b|) |curl b|
//! div u = 0 = div b
//! ```
//!
//! as a spectral Galerkin system. The pressure is removed by Leray projection.
//! With the identity calming function this is the original (uncalmed) system.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calming::CalmingSpec;
use crate::spectral::{Axis, Grid, SpectralError, SpectralScalar, SpectralVector, C64};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("parameter `{name}` must be positive and finite, got {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("CFL violated at t={t}: dt={dt:e} exceeds limit {limit:e}")]
    Cfl { t: f64, dt: f64, limit: f64 },
    #[error("non-finite values in {field} at t={t}")]
    NonFinite { t: f64, field: &'static str },
    #[error("t_final={t_final} is not an integer multiple of dt={dt}")]
    IncommensurateTime { t_final: f64, dt: f64 },
    #[error("Galerkin cutoff {m} out of range 1..={max}")]
    GalerkinCutoff { m: usize, max: usize },
    #[error("unknown initial data `{0}` (expected taylor-green, orszag-tang-like, gaussian-theta or random-smooth)")]
    UnknownInitialData(String),
    #[error("unknown time scheme `{0}`")]
    UnknownScheme(String),
    #[error("state has grid size {got}, expected {expected}")]
    GridMismatch { expected: usize, got: usize },
    #[error("observer failed at t={t}: {message}")]
    Observer { t: f64, message: String },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

fn positive(name: &'static str, value: f64) -> Result<(), DynamicsError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(DynamicsError::InvalidParameter { name, value })
    }
}

/// Physical coefficients. All must be strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysParams {
    /// fluid viscosity
    pub nu: f64,
    /// magnetic resistivity
    pub mu: f64,
    /// thermal diffusivity
    pub kappa: f64,
    /// buoyancy coefficient
    pub g: f64,
    /// Ohmic heating coefficient
    pub alpha: f64,
}

impl PhysParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        positive("nu", self.nu)?;
        positive("mu", self.mu)?;
        positive("kappa", self.kappa)?;
        positive("g", self.g)?;
        positive("alpha", self.alpha)
    }
}

/// Spectral state. Time is always `step * dt` of the run that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub u: SpectralVector,
    pub b: SpectralVector,
    pub theta: SpectralScalar,
    pub t: f64,
    pub step: u64,
}

impl State {
    pub fn zeros(n: usize) -> Self {
        Self {
            u: SpectralVector::zeros(n),
            b: SpectralVector::zeros(n),
            theta: SpectralScalar::zeros(n),
            t: 0.0,
            step: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.theta.n()
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.b.is_finite() && self.theta.is_finite()
    }

    /// Superposition of two states (fields only; time is taken from `self`).
    pub fn added(&self, other: &State) -> State {
        State {
            u: self.u.added(&other.u),
            b: self.b.added(&other.b),
            theta: self.theta.added(&other.theta),
            t: self.t,
            step: self.step,
        }
    }

    /// Solenoidal, mean-free `u` and `b`, checked relative to their H1 scale.
    pub fn check_invariants(&self, grid: &Grid, rel_tol: f64) -> Result<(), DynamicsError> {
        if self.n() != grid.n() {
            return Err(DynamicsError::GridMismatch {
                expected: grid.n(),
                got: self.n(),
            });
        }
        grid.require_solenoidal(&self.u, rel_tol)?;
        grid.require_solenoidal(&self.b, rel_tol)?;
        Ok(())
    }
}

/// Time derivatives from all non-diffusive terms.
#[derive(Debug, Clone, PartialEq)]
pub struct Tendency {
    pub du: SpectralVector,
    pub db: SpectralVector,
    pub dtheta: SpectralScalar,
}

/// Pointwise maxima seen on the padded grid while forming the products.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FieldMaxima {
    pub speed_u: f64,
    pub speed_b: f64,
    pub current: f64,
}

/// The Ohmic source density `alpha mu zeta(|j|) |j|` at one point.
#[inline]
pub fn ohmic_density(spec: &CalmingSpec, params: &PhysParams, j: f64) -> f64 {
    let r = j.abs();
    params.alpha * params.mu * (spec.eval(r) * r)
}

pub(crate) fn evaluate(
    grid: &Grid,
    state: &State,
    params: &PhysParams,
    spec: &CalmingSpec,
) -> Result<(Tendency, FieldMaxima), DynamicsError> {
    let d = |f: &SpectralScalar, a: Axis| grid.derivative(f, a);
    let (u1, u2) = grid.to_padded_pair(&state.u.x1, &state.u.x2);
    let (b1, b2) = grid.to_padded_pair(&state.b.x1, &state.b.x2);
    let (u1_1, u1_2) = grid.to_padded_pair(&d(&state.u.x1, Axis::X1), &d(&state.u.x1, Axis::X2));
    let (u2_1, u2_2) = grid.to_padded_pair(&d(&state.u.x2, Axis::X1), &d(&state.u.x2, Axis::X2));
    let (b1_1, b1_2) = grid.to_padded_pair(&d(&state.b.x1, Axis::X1), &d(&state.b.x1, Axis::X2));
    let (b2_1, b2_2) = grid.to_padded_pair(&d(&state.b.x2, Axis::X1), &d(&state.b.x2, Axis::X2));
    let (t_1, t_2) = grid.to_padded_pair(&d(&state.theta, Axis::X1), &d(&state.theta, Axis::X2));

    let len = u1.len();
    let mut nu1 = vec![0.0; len];
    let mut nu2 = vec![0.0; len];
    let mut nb1 = vec![0.0; len];
    let mut nb2 = vec![0.0; len];
    let mut nth = vec![0.0; len];
    let mut maxima = FieldMaxima::default();
    for p in 0..len {
        let (ua, ub, ba, bb) = (u1[p], u2[p], b1[p], b2[p]);
        nu1[p] = -(ua * u1_1[p] + ub * u1_2[p]) + (ba * b1_1[p] + bb * b1_2[p]);
        nu2[p] = -(ua * u2_1[p] + ub * u2_2[p]) + (ba * b2_1[p] + bb * b2_2[p]);
        nb1[p] = -(ua * b1_1[p] + ub * b1_2[p]) + (ba * u1_1[p] + bb * u1_2[p]);
        nb2[p] = -(ua * b2_1[p] + ub * b2_2[p]) + (ba * u2_1[p] + bb * u2_2[p]);
        let j = b2_1[p] - b1_2[p];
        nth[p] = -(ua * t_1[p] + ub * t_2[p]) + ohmic_density(spec, params, j);
        maxima.speed_u = maxima.speed_u.max(ua.hypot(ub));
        maxima.speed_b = maxima.speed_b.max(ba.hypot(bb));
        maxima.current = maxima.current.max(j.abs());
    }
    let (fu1, mut fu2) = grid.from_padded_pair(&nu1, &nu2);
    let (fb1, fb2) = grid.from_padded_pair(&nb1, &nb2);
    let dtheta = grid.from_padded(&nth);
    // buoyancy g theta e2; theta is already inside the mask
    fu2.axpy(params.g, &state.theta);
    let du = grid.leray_project(&SpectralVector::new(fu1, fu2), true);
    let db = grid.leray_project(&SpectralVector::new(fb1, fb2), true);

    let t = state.t;
    if !du.is_finite() {
        return Err(DynamicsError::NonFinite { t, field: "du" });
    }
    if !db.is_finite() {
        return Err(DynamicsError::NonFinite { t, field: "db" });
    }
    if !dtheta.is_finite() {
        return Err(DynamicsError::NonFinite { t, field: "dtheta" });
    }
    Ok((Tendency { du, db, dtheta }, maxima))
}

/// `max |curl b|` over the padded quadrature grid.
pub fn max_current(grid: &Grid, b: &SpectralVector) -> f64 {
    grid.to_padded(&grid.curl2d(b))
        .iter()
        .fold(0.0, |m: f64, j| m.max(j.abs()))
}

/// Advection, Lorentz, induction, buoyancy and (calmed) Ohmic terms.
pub fn rhs_nonlinear(
    grid: &Grid,
    state: &State,
    params: &PhysParams,
    spec: &CalmingSpec,
) -> Result<Tendency, DynamicsError> {
    evaluate(grid, state, params, spec).map(|(t, _)| t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    /// Exact integrating factor for diffusion, Heun (RK2) for everything else.
    #[serde(rename = "if-rk2")]
    IfRk2,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::IfRk2 => "if-rk2",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = DynamicsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "if-rk2" => Ok(Scheme::IfRk2),
            other => Err(DynamicsError::UnknownScheme(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepperConfig {
    pub dt: f64,
    pub t_final: f64,
    pub scheme: Scheme,
    pub cfl_safety: f64,
}

impl StepperConfig {
    pub fn new(dt: f64, t_final: f64) -> Self {
        Self {
            dt,
            t_final,
            scheme: Scheme::IfRk2,
            cfl_safety: 0.5,
        }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        positive("dt", self.dt)?;
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return Err(DynamicsError::InvalidParameter {
                name: "t_final",
                value: self.t_final,
            });
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(DynamicsError::InvalidParameter {
                name: "cfl_safety",
                value: self.cfl_safety,
            });
        }
        self.total_steps().map(|_| ())
    }

    /// `t_final / dt`, which must be an integer up to round-off.
    pub fn total_steps(&self) -> Result<u64, DynamicsError> {
        let ratio = self.t_final / self.dt;
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-9 * ratio.max(1.0) {
            return Err(DynamicsError::IncommensurateTime {
                t_final: self.t_final,
                dt: self.dt,
            });
        }
        Ok(steps as u64)
    }
}

/// Advective limit `safety * h / max(1, sup|u|, sup|b|)`.
pub fn cfl_limit(grid: &Grid, cfl_safety: f64, maxima: &FieldMaxima) -> f64 {
    cfl_safety * grid.spacing() / 1f64.max(maxima.speed_u).max(maxima.speed_b)
}

/// One-step integrator with precomputed integrating factors.
#[derive(Debug, Clone)]
pub struct Stepper {
    grid: Grid,
    params: PhysParams,
    spec: CalmingSpec,
    dt: f64,
    cfl_safety: f64,
    decay_u: Vec<f64>,
    decay_b: Vec<f64>,
    decay_theta: Vec<f64>,
}

impl Stepper {
    pub fn new(
        grid: &Grid,
        params: PhysParams,
        spec: CalmingSpec,
        dt: f64,
        cfl_safety: f64,
    ) -> Result<Self, DynamicsError> {
        params.validate()?;
        positive("dt", dt)?;
        positive("cfl_safety", cfl_safety)?;
        let factors = |coef: f64| -> Vec<f64> {
            (0..grid.len())
                .map(|idx| (-coef * grid.laplacian_eigenvalue(idx) * dt).exp())
                .collect()
        };
        Ok(Self {
            grid: grid.clone(),
            params,
            spec,
            dt,
            cfl_safety,
            decay_u: factors(params.nu),
            decay_b: factors(params.mu),
            decay_theta: factors(params.kappa),
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn params(&self) -> &PhysParams {
        &self.params
    }

    pub fn spec(&self) -> &CalmingSpec {
        &self.spec
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advances one step:
    ///
    /// ```text
    /// y*      = E (y + dt N(y))
    /// y_{n+1} = E (y + dt/2 N(y)) + dt/2 N(y*)
    /// ```
    ///
    /// with `E = exp(-c |2 pi k|^2 dt)` per field. The result is re-projected
    /// and truncated to the dealias mask.
    pub fn step(&self, state: &State) -> Result<State, DynamicsError> {
        if state.n() != self.grid.n() {
            return Err(DynamicsError::GridMismatch {
                expected: self.grid.n(),
                got: state.n(),
            });
        }
        let (n0, maxima) = evaluate(&self.grid, state, &self.params, &self.spec)?;
        let limit = cfl_limit(&self.grid, self.cfl_safety, &maxima);
        if self.dt > limit {
            return Err(DynamicsError::Cfl {
                t: state.t,
                dt: self.dt,
                limit,
            });
        }
        let dt = self.dt;
        let predictor = State {
            u: self.decay_vector(&combine_vector(&state.u, dt, &n0.du), &self.decay_u),
            b: self.decay_vector(&combine_vector(&state.b, dt, &n0.db), &self.decay_b),
            theta: decay(&combine(&state.theta, dt, &n0.dtheta), &self.decay_theta),
            t: state.t + dt,
            step: state.step + 1,
        };
        let (n1, _) = evaluate(&self.grid, &predictor, &self.params, &self.spec)?;

        let mut u = self.decay_vector(&combine_vector(&state.u, 0.5 * dt, &n0.du), &self.decay_u);
        u.axpy(0.5 * dt, &n1.du);
        let mut b = self.decay_vector(&combine_vector(&state.b, 0.5 * dt, &n0.db), &self.decay_b);
        b.axpy(0.5 * dt, &n1.db);
        let mut theta = decay(&combine(&state.theta, 0.5 * dt, &n0.dtheta), &self.decay_theta);
        theta.axpy(0.5 * dt, &n1.dtheta);

        let step = state.step + 1;
        let next = State {
            u: self.grid.truncate_vector(&self.grid.leray_project(&u, true)),
            b: self.grid.truncate_vector(&self.grid.leray_project(&b, true)),
            theta: self.grid.truncate(&theta),
            t: step as f64 * dt,
            step,
        };
        if !next.is_finite() {
            return Err(DynamicsError::NonFinite {
                t: next.t,
                field: "state",
            });
        }
        Ok(next)
    }

    fn decay_vector(&self, v: &SpectralVector, factors: &[f64]) -> SpectralVector {
        SpectralVector::new(decay(&v.x1, factors), decay(&v.x2, factors))
    }
}

fn combine(y: &SpectralScalar, h: f64, n: &SpectralScalar) -> SpectralScalar {
    let mut out = y.clone();
    out.axpy(h, n);
    out
}

fn combine_vector(y: &SpectralVector, h: f64, n: &SpectralVector) -> SpectralVector {
    let mut out = y.clone();
    out.axpy(h, n);
    out
}

fn decay(f: &SpectralScalar, factors: &[f64]) -> SpectralScalar {
    let mut out = f.clone();
    for (c, &e) in out.coeffs_mut().iter_mut().zip(factors) {
        *c *= e;
    }
    out
}

/// Single step without a CFL safety margin (`cfl_safety = 1`).
pub fn step_imex(
    grid: &Grid,
    state: &State,
    params: &PhysParams,
    spec: &CalmingSpec,
    dt: f64,
) -> Result<State, DynamicsError> {
    Stepper::new(grid, *params, *spec, dt, 1.0)?.step(state)
}

/// Receives read-only snapshots during [`simulate`].
pub trait Observer {
    /// Called for the initial state and after every step; `last` marks the final state.
    fn observe(&mut self, state: &State, last: bool) -> Result<(), String>;
}

impl<F: FnMut(&State, bool) -> Result<(), String>> Observer for F {
    fn observe(&mut self, state: &State, last: bool) -> Result<(), String> {
        self(state, last)
    }
}

/// Integrates from `initial` (which may be a resumed state with `step > 0`)
/// up to `config.t_final`.
pub fn simulate(
    grid: &Grid,
    initial: &State,
    params: &PhysParams,
    spec: &CalmingSpec,
    config: &StepperConfig,
    observers: &mut [&mut dyn Observer],
) -> Result<State, DynamicsError> {
    config.validate()?;
    let total = config.total_steps()?;
    let stepper = Stepper::new(grid, *params, *spec, config.dt, config.cfl_safety)?;
    let mut state = initial.clone();
    notify(observers, &state, state.step >= total)?;
    while state.step < total {
        state = stepper.step(&state)?;
        notify(observers, &state, state.step >= total)?;
    }
    Ok(state)
}

fn notify(observers: &mut [&mut dyn Observer], state: &State, last: bool) -> Result<(), DynamicsError> {
    for obs in observers.iter_mut() {
        obs.observe(state, last).map_err(|message| DynamicsError::Observer {
            t: state.t,
            message,
        })?;
    }
    Ok(())
}

/// Distinct values of `|k|^2` over the retained modes, ascending (starting at 0).
pub fn laplacian_levels(grid: &Grid) -> Vec<i64> {
    let mut levels: Vec<i64> = (0..grid.len())
        .filter(|&idx| grid.is_retained(idx))
        .map(|idx| {
            let (k1, k2) = grid.mode(idx);
            k1 * k1 + k2 * k2
        })
        .collect();
    levels.sort_unstable();
    levels.dedup();
    levels
}

/// Keeps the modes on the first `m` distinct Laplacian eigenvalues
/// (counting the constant mode). `m = laplacian_levels(grid).len()` is the
/// identity on masked states.
pub fn galerkin_project(grid: &Grid, state: &State, m: usize) -> Result<State, DynamicsError> {
    let levels = laplacian_levels(grid);
    if m == 0 || m > levels.len() {
        return Err(DynamicsError::GalerkinCutoff {
            m,
            max: levels.len(),
        });
    }
    let cutoff = levels[m - 1];
    let keep: Vec<bool> = (0..grid.len())
        .map(|idx| {
            let (k1, k2) = grid.mode(idx);
            grid.is_retained(idx) && k1 * k1 + k2 * k2 <= cutoff
        })
        .collect();
    let cut = |f: &SpectralScalar| {
        let mut out = f.clone();
        for (c, &k) in out.coeffs_mut().iter_mut().zip(&keep) {
            if !k {
                *c = C64::new(0.0, 0.0);
            }
        }
        out
    };
    Ok(State {
        u: SpectralVector::new(cut(&state.u.x1), cut(&state.u.x2)),
        b: SpectralVector::new(cut(&state.b.x1), cut(&state.b.x2)),
        theta: cut(&state.theta),
        t: state.t,
        step: state.step,
    })
}

/// Width of the `gaussian-theta` bump.
pub const GAUSSIAN_SIGMA: f64 = 0.1;
/// Amplitude of the magnetic field carried by `taylor-green`.
pub const TAYLOR_GREEN_B: f64 = 0.1;

pub const INITIAL_DATA_NAMES: [&str; 4] =
    ["taylor-green", "orszag-tang-like", "gaussian-theta", "random-smooth"];

/// Built-in initial data. Names may be combined with `+`
/// (e.g. `taylor-green+gaussian-theta`), which superposes the fields.
///
/// * `taylor-green`: `u = (sin 2pi x1 cos 2pi x2, -cos 2pi x1 sin 2pi x2)` with a
///   weak magnetic field `b = 0.1 (sin 4pi x2, sin 2pi x1)`, `theta = 0`.
/// * `orszag-tang-like`: `u = (-sin 2pi x2, sin 2pi x1)`, `b = (-sin 2pi x2, sin 4pi x1)`.
/// * `gaussian-theta`: `u = b = 0`, periodized Gaussian bump of width 0.1 at the centre.
/// * `random-smooth`: seeded random fields with coefficients decaying like `|k|^-4`.
pub fn builtin_initial_data(name: &str, grid: &Grid, seed: u64) -> Result<State, DynamicsError> {
    let mut state = State::zeros(grid.n());
    for part in name.split('+').map(str::trim) {
        let piece = match part {
            "taylor-green" => taylor_green(grid)?,
            "orszag-tang-like" => orszag_tang(grid)?,
            "gaussian-theta" => gaussian_theta(grid)?,
            "random-smooth" => random_smooth(grid, seed),
            other => return Err(DynamicsError::UnknownInitialData(other.to_string())),
        };
        state = state.added(&piece);
    }
    Ok(state)
}

fn solenoidal_from_samples<F1, F2>(grid: &Grid, f1: F1, f2: F2) -> Result<SpectralVector, DynamicsError>
where
    F1: Fn(f64, f64) -> f64,
    F2: Fn(f64, f64) -> f64,
{
    let v = SpectralVector::new(
        grid.transform_forward(&grid.sample(f1))?,
        grid.transform_forward(&grid.sample(f2))?,
    );
    Ok(grid.truncate_vector(&grid.leray_project(&v, true)))
}

fn taylor_green(grid: &Grid) -> Result<State, DynamicsError> {
    let mut s = State::zeros(grid.n());
    s.u = solenoidal_from_samples(
        grid,
        |x, y| (TWO_PI * x).sin() * (TWO_PI * y).cos(),
        |x, y| -(TWO_PI * x).cos() * (TWO_PI * y).sin(),
    )?;
    s.b = solenoidal_from_samples(
        grid,
        |_, y| TAYLOR_GREEN_B * (2.0 * TWO_PI * y).sin(),
        |x, _| TAYLOR_GREEN_B * (TWO_PI * x).sin(),
    )?;
    Ok(s)
}

fn orszag_tang(grid: &Grid) -> Result<State, DynamicsError> {
    let mut s = State::zeros(grid.n());
    s.u = solenoidal_from_samples(grid, |_, y| -(TWO_PI * y).sin(), |x, _| (TWO_PI * x).sin())?;
    s.b = solenoidal_from_samples(grid, |_, y| -(TWO_PI * y).sin(), |x, _| (2.0 * TWO_PI * x).sin())?;
    Ok(s)
}

fn gaussian_theta(grid: &Grid) -> Result<State, DynamicsError> {
    let mut s = State::zeros(grid.n());
    let w = 2.0 * GAUSSIAN_SIGMA * GAUSSIAN_SIGMA;
    let bump = |x: f64, y: f64| {
        let mut acc = 0.0;
        for i in -2..=2 {
            for j in -2..=2 {
                let dx = x - 0.5 + i as f64;
                let dy = y - 0.5 + j as f64;
                acc += (-(dx * dx + dy * dy) / w).exp();
            }
        }
        acc
    };
    s.theta = grid.truncate(&grid.transform_forward(&grid.sample(bump))?);
    Ok(s)
}

fn random_smooth(grid: &Grid, seed: u64) -> State {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = grid.n();
    let draw = |rng: &mut ChaCha8Rng| {
        let mut raw = SpectralScalar::zeros(n);
        for idx in 0..grid.len() {
            let (k1, k2) = grid.mode(idx);
            let re: f64 = rng.random_range(-1.0..1.0);
            let im: f64 = rng.random_range(-1.0..1.0);
            if !grid.is_retained(idx) || (k1 == 0 && k2 == 0) {
                continue;
            }
            let k = ((k1 * k1 + k2 * k2) as f64).sqrt();
            raw.coeffs_mut()[idx] = C64::new(re, im) * k.powi(-4);
        }
        symmetrize(grid, &raw)
    };
    let normalize = |v: SpectralVector, target: f64| {
        let l2 = grid.vector_norms(&v).l2;
        v.scaled(target / l2)
    };
    let u = grid.leray_project(&SpectralVector::new(draw(&mut rng), draw(&mut rng)), true);
    let b = grid.leray_project(&SpectralVector::new(draw(&mut rng), draw(&mut rng)), true);
    let mut theta = draw(&mut rng);
    let l2 = grid.norms(&theta).l2;
    theta = theta.scaled(0.5 / l2);
    State {
        u: normalize(u, 0.5),
        b: normalize(b, 0.2),
        theta,
        t: 0.0,
        step: 0,
    }
}

/// `(c(k) + conj c(-k)) / 2`, the coefficients of the real part of a field.
pub fn symmetrize(grid: &Grid, f: &SpectralScalar) -> SpectralScalar {
    let mut out = f.clone();
    for idx in 0..grid.len() {
        let (k1, k2) = grid.mode(idx);
        let partner = f.coeffs()[grid.index_of(-k1, -k2)];
        out.coeffs_mut()[idx] = (f.coeffs()[idx] + partner.conj()) * 0.5;
    }
    out
}
