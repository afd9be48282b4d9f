//! The calmed Riccati toy model and the epsilon-convergence study.
//!
//! The toy model is `y' = y zeta(y)` with `zeta(y) = y / (1 + eps^2 y^2)`:
//! bounded growth for every `eps > 0`, blow-up at `t = 1/y0` when `eps = 0`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calming::{CalmingError, CalmingFamily, CalmingSpec};
use crate::dynamics::{
    builtin_initial_data, max_current, simulate, DynamicsError, Observer, PhysParams, State,
    StepperConfig,
};
use crate::spectral::{Grid, SpectralError, SpectralScalar};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid Riccati case: {0}")]
    InvalidRiccati(String),
    #[error("uncalmed solution blows up at t={blow_up}, requested t={t}")]
    BlowUp { t: f64, blow_up: f64 },
    #[error("rate fit needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("rate fit needs positive values, got error {error} at epsilon {epsilon}")]
    NonPositive { epsilon: f64, error: f64 },
    #[error("invalid sweep plan: {0}")]
    InvalidPlan(String),
    #[error("reference run unresolved: spectral tail {tail:e} exceeds {tolerance:e} of peak")]
    UnresolvedReference { tail: f64, tolerance: f64 },
    #[error("worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Calming(#[from] CalmingError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Tolerance of the adaptive Riccati integrator (absolute and relative).
pub const RICCATI_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiccatiCase {
    pub y0: f64,
    pub epsilon: f64,
    pub t_grid: Vec<f64>,
}

impl RiccatiCase {
    pub fn new(y0: f64, epsilon: f64, t_grid: Vec<f64>) -> Result<Self, ExperimentError> {
        let case = Self { y0, epsilon, t_grid };
        case.validate()?;
        Ok(case)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if !(self.y0 > 0.0 && self.y0.is_finite()) {
            return Err(ExperimentError::InvalidRiccati(format!("y0 must be positive, got {}", self.y0)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(ExperimentError::InvalidRiccati(format!(
                "epsilon must be nonnegative, got {}",
                self.epsilon
            )));
        }
        if let Some(t) = self.t_grid.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
            return Err(ExperimentError::InvalidRiccati(format!("times must be nonnegative, got {t}")));
        }
        Ok(())
    }

    pub fn blow_up_time(&self) -> f64 {
        1.0 / self.y0
    }

    /// True when the uncalmed case is asked for a time past its blow-up.
    pub fn crosses_blow_up(&self) -> bool {
        self.epsilon == 0.0 && self.t_grid.iter().any(|&t| t >= self.blow_up_time())
    }
}

/// The exact solution at one time.
///
/// With `a = eps^2 y0^2 + t y0 - 1` and `d = sqrt(a^2 + 4 eps^2 y0^2)`,
/// `y = (a + d) / (2 eps^2 y0)`. For `a < 0` the equivalent form
/// `2 y0 / (d - a)` is used, which avoids cancellation as `eps -> 0`.
pub fn riccati_value(y0: f64, epsilon: f64, t: f64) -> Result<f64, ExperimentError> {
    if epsilon == 0.0 {
        let blow_up = 1.0 / y0;
        if t >= blow_up {
            return Err(ExperimentError::BlowUp { t, blow_up });
        }
        return Ok(y0 / (1.0 - t * y0));
    }
    let ey = epsilon * y0;
    let a = ey * ey + t * y0 - 1.0;
    let d = a.hypot(2.0 * ey);
    if a >= 0.0 {
        Ok((a + d) / (2.0 * epsilon * ey))
    } else {
        Ok(2.0 * y0 / (d - a))
    }
}

pub fn riccati_closed_form(case: &RiccatiCase) -> Result<Vec<f64>, ExperimentError> {
    case.validate()?;
    case.t_grid
        .iter()
        .map(|&t| riccati_value(case.y0, case.epsilon, t))
        .collect()
}

/// `y zeta(y)`, the right-hand side of the calmed equation.
pub fn riccati_rhs(epsilon: f64, y: f64) -> f64 {
    let s = epsilon * y;
    y * y / (1.0 + s * s)
}

/// Growth-rate bound `y sup zeta = y / (2 eps)`.
pub fn riccati_derivative_bound(epsilon: f64, y: f64) -> f64 {
    y / (2.0 * epsilon)
}

const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// fifth-order weights minus embedded fourth-order weights
const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrates `y' = f(t, y)` from `(t0, y0)` to every time in `times`
/// (any order, all `>= t0`) with Dormand-Prince 5(4) steps.
pub fn dopri45(f: impl Fn(f64, f64) -> f64, t0: f64, y0: f64, times: &[f64], tol: f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mut out = vec![y0; times.len()];
    let (mut t, mut y) = (t0, y0);
    let mut h = 1e-3;
    let mut k = [0.0; 7];
    k[0] = f(t, y);
    for idx in order {
        let target = times[idx];
        while t < target {
            let last = h >= target - t;
            let step = if last { target - t } else { h };
            for s in 1..7 {
                let mut acc = y;
                for (j, &a) in DP_A[s][..s].iter().enumerate() {
                    acc += step * a * k[j];
                }
                k[s] = f(t + DP_C[s] * step, acc);
            }
            let y_new = y + step * DP_A[6].iter().zip(&k[..6]).map(|(a, k)| a * k).sum::<f64>();
            let err_est = step * DP_E.iter().zip(&k).map(|(e, k)| e * k).sum::<f64>();
            let scale = tol * (1.0 + y.abs().max(y_new.abs()));
            let err = (err_est / scale).abs();
            if err <= 1.0 {
                t = if last { target } else { t + step };
                y = y_new;
                // first-same-as-last: k7 is f at the new point
                k[0] = k[6];
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            if err <= 1.0 && last {
                h = h.max(step * factor);
            } else {
                h = step * factor;
            }
        }
        out[idx] = y;
    }
    out
}

/// Numerical solution of the calmed equation. Requires `eps > 0`.
pub fn riccati_integrate(case: &RiccatiCase) -> Result<Vec<f64>, ExperimentError> {
    case.validate()?;
    if case.epsilon == 0.0 {
        return Err(ExperimentError::InvalidRiccati(
            "integration requires epsilon > 0".to_string(),
        ));
    }
    let eps = case.epsilon;
    Ok(dopri45(|_, y| riccati_rhs(eps, y), 0.0, case.y0, &case.t_grid, RICCATI_TOLERANCE))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiccatiRow {
    pub epsilon: f64,
    pub t: f64,
    pub closed_form: Option<f64>,
    pub integrated: Option<f64>,
    pub relative_difference: Option<f64>,
}

impl RiccatiRow {
    pub const CSV_HEADER: &'static str = "epsilon,t,closed_form,integrated,relative_difference";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "inf".to_string(), |v| format!("{v:e}"));
        let diff = self.relative_difference.map_or_else(String::new, |v| format!("{v:e}"));
        format!(
            "{:e},{:e},{},{},{}",
            self.epsilon,
            self.t,
            opt(self.closed_form),
            self.integrated.map_or_else(String::new, |v| format!("{v:e}")),
            diff
        )
    }
}

/// Closed form against integration for every `(eps, t)` pair. Past blow-up the
/// uncalmed closed form is reported as `None`; uncalmed cases are not integrated.
pub fn riccati_table(y0: f64, epsilons: &[f64], times: &[f64]) -> Result<Vec<RiccatiRow>, ExperimentError> {
    let mut rows = Vec::with_capacity(epsilons.len() * times.len());
    for &eps in epsilons {
        let case = RiccatiCase::new(y0, eps, times.to_vec())?;
        let integrated = if eps > 0.0 { Some(riccati_integrate(&case)?) } else { None };
        for (i, &t) in times.iter().enumerate() {
            let closed = match riccati_value(y0, eps, t) {
                Ok(v) => Some(v),
                Err(ExperimentError::BlowUp { .. }) => None,
                Err(e) => return Err(e),
            };
            let num = integrated.as_ref().map(|v| v[i]);
            let relative_difference = match (closed, num) {
                (Some(c), Some(n)) => Some((n - c).abs() / c.abs()),
                _ => None,
            };
            rows.push(RiccatiRow {
                epsilon: eps,
                t,
                closed_form: closed,
                integrated: num,
                relative_difference,
            });
        }
    }
    Ok(rows)
}

/// Least-squares line through `(ln eps, ln error)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub residuals: Vec<f64>,
    pub r_squared: f64,
}

pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit, ExperimentError> {
    if points.len() < 3 {
        return Err(ExperimentError::TooFewPoints(points.len()));
    }
    for &(epsilon, error) in points {
        if !(epsilon > 0.0 && error > 0.0 && epsilon.is_finite() && error.is_finite()) {
            return Err(ExperimentError::NonPositive { epsilon, error });
        }
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(ExperimentError::InvalidPlan("rate fit needs distinct epsilons".to_string()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| y - (slope * x + intercept)).collect();
    let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res == 0.0 {
        1.0
    } else {
        0.0
    };
    Ok(RateFit {
        slope,
        intercept,
        residuals,
        r_squared,
    })
}

/// Largest ratio `|outer-band coefficient| / peak` a reference run may show.
pub const REFERENCE_TAIL_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub n: usize,
    pub params: PhysParams,
    pub family: CalmingFamily,
    pub epsilon_ladder: Vec<f64>,
    pub t_final: f64,
    pub dt: f64,
    pub initial: String,
    pub seed: u64,
    /// errors are sampled every `record_every` steps and at the final step
    pub record_every: u64,
}

impl SweepPlan {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        Grid::new(self.n)?;
        self.params.validate()?;
        self.stepper_config().validate()?;
        if self.record_every == 0 {
            return Err(ExperimentError::InvalidPlan("record_every must be at least 1".to_string()));
        }
        if self.epsilon_ladder.is_empty() {
            return Err(ExperimentError::InvalidPlan("epsilon ladder is empty".to_string()));
        }
        for &eps in &self.epsilon_ladder {
            CalmingSpec::new(self.family, eps)?;
            if !(eps > 0.0) {
                return Err(ExperimentError::InvalidPlan(format!("ladder entry {eps} is not positive")));
            }
        }
        if self.epsilon_ladder.windows(2).any(|w| w[1] >= w[0]) {
            return Err(ExperimentError::InvalidPlan("epsilon ladder must be strictly decreasing".to_string()));
        }
        Ok(())
    }

    pub fn stepper_config(&self) -> StepperConfig {
        StepperConfig::new(self.dt, self.t_final)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub epsilon: f64,
    /// `sup_t |U-u|_H1^2 + |B-b|_H1^2 + |Theta-theta|_L2^2` over the record times
    pub e_inf: f64,
    /// trapezoid rule for `int |U-u|_H2^2 + |B-b|_H2^2 + |Theta-theta|_H1^2 dt`
    pub e_int: f64,
    /// largest `|curl b|` seen in this run at the record times
    pub max_current: f64,
}

impl SweepEntry {
    pub const CSV_HEADER: &'static str = "epsilon,e_inf,e_int";

    pub fn csv_row(&self) -> String {
        format!("{:e},{:e},{:e}", self.epsilon, self.e_inf, self.e_int)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub plan: SweepPlan,
    pub entries: Vec<SweepEntry>,
    /// `None` when some error is exactly zero or the ladder is shorter than 3
    pub fit_inf: Option<RateFit>,
    pub fit_int: Option<RateFit>,
    pub all_zero: bool,
    /// epsilons at which `e_inf` grew compared with the previous (larger) epsilon
    pub monotonicity_violations: Vec<f64>,
    pub reference_tail: f64,
    pub reference_max_current: f64,
}

impl SweepReport {
    pub fn is_monotone(&self) -> bool {
        self.monotonicity_violations.is_empty()
    }
}

/// Ratio of the largest coefficient in the outer third of the retained band
/// to the peak coefficient, maximised over the five components.
pub fn spectral_tail(grid: &Grid, state: &State) -> f64 {
    let cutoff = 2 * grid.kmax() / 3;
    let fields: [&SpectralScalar; 5] = [&state.u.x1, &state.u.x2, &state.b.x1, &state.b.x2, &state.theta];
    let mut tail: f64 = 0.0;
    for f in fields {
        let mut peak: f64 = 0.0;
        let mut outer: f64 = 0.0;
        for (idx, c) in f.coeffs().iter().enumerate() {
            let (k1, k2) = grid.mode(idx);
            peak = peak.max(c.norm());
            if k1.abs().max(k2.abs()) > cutoff {
                outer = outer.max(c.norm());
            }
        }
        if peak > 0.0 {
            tail = tail.max(outer / peak);
        }
    }
    tail
}

struct Recorder {
    every: u64,
    states: Vec<State>,
}

impl Observer for Recorder {
    fn observe(&mut self, state: &State, last: bool) -> Result<(), String> {
        if state.step.is_multiple_of(self.every) || last {
            self.states.push(state.clone());
        }
        Ok(())
    }
}

fn run_recorded(grid: &Grid, initial: &State, plan: &SweepPlan, spec: &CalmingSpec) -> Result<Vec<State>, ExperimentError> {
    let mut rec = Recorder {
        every: plan.record_every,
        states: Vec::new(),
    };
    simulate(grid, initial, &plan.params, spec, &plan.stepper_config(), &mut [&mut rec])?;
    Ok(rec.states)
}

/// `(instantaneous sup-norm error, integrand of the time-integrated error)`.
fn error_pair(grid: &Grid, reference: &State, calmed: &State) -> (f64, f64) {
    let du = grid.vector_norms(&reference.u.sub(&calmed.u));
    let db = grid.vector_norms(&reference.b.sub(&calmed.b));
    let dth = grid.norms(&reference.theta.sub(&calmed.theta));
    let sup = du.h1 * du.h1 + db.h1 * db.h1 + dth.l2 * dth.l2;
    let int = du.h2 * du.h2 + db.h2 * db.h2 + dth.l2 * dth.l2 + dth.h1 * dth.h1;
    (sup, int)
}

fn sweep_entry(grid: &Grid, plan: &SweepPlan, initial: &State, reference: &[State], epsilon: f64) -> Result<SweepEntry, ExperimentError> {
    let spec = CalmingSpec::new(plan.family, epsilon)?;
    let states = run_recorded(grid, initial, plan, &spec)?;
    let mut e_inf: f64 = 0.0;
    let mut e_int = 0.0;
    let mut max_j: f64 = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for (r, c) in reference.iter().zip(&states) {
        let (sup, int) = error_pair(grid, r, c);
        e_inf = e_inf.max(sup);
        if let Some((t0, f0)) = prev {
            e_int += 0.5 * (c.t - t0) * (f0 + int);
        }
        prev = Some((c.t, int));
        max_j = max_j.max(max_current(grid, &c.b));
    }
    Ok(SweepEntry {
        epsilon,
        e_inf,
        e_int,
        max_current: max_j,
    })
}

/// Runs the uncalmed reference, checks that it is resolved, then one calmed
/// run per ladder entry on at most `workers` threads.
pub fn convergence_sweep(plan: &SweepPlan, workers: usize) -> Result<SweepReport, ExperimentError> {
    plan.validate()?;
    let grid = Grid::new(plan.n)?;
    let initial = builtin_initial_data(&plan.initial, &grid, plan.seed)?;
    let reference = run_recorded(&grid, &initial, plan, &CalmingSpec::identity())?;
    let reference_tail = reference.iter().map(|s| spectral_tail(&grid, s)).fold(0.0, f64::max);
    if !(reference_tail <= REFERENCE_TAIL_TOLERANCE) {
        return Err(ExperimentError::UnresolvedReference {
            tail: reference_tail,
            tolerance: REFERENCE_TAIL_TOLERANCE,
        });
    }
    let reference_max_current = reference.iter().map(|s| max_current(&grid, &s.b)).fold(0.0, f64::max);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| ExperimentError::Pool(e.to_string()))?;
    let entries: Vec<SweepEntry> = pool.install(|| {
        plan.epsilon_ladder
            .par_iter()
            .map(|&eps| sweep_entry(&grid, plan, &initial, &reference, eps))
            .collect::<Result<_, _>>()
    })?;

    let monotonicity_violations = entries
        .windows(2)
        .filter(|w| w[1].e_inf > w[0].e_inf)
        .map(|w| w[1].epsilon)
        .collect();
    let all_zero = entries.iter().all(|e| e.e_inf == 0.0 && e.e_int == 0.0);
    let fit = |pick: fn(&SweepEntry) -> f64| -> Option<RateFit> {
        let points: Vec<(f64, f64)> = entries.iter().map(|e| (e.epsilon, pick(e))).collect();
        fit_rate(&points).ok()
    };
    Ok(SweepReport {
        plan: plan.clone(),
        fit_inf: fit(|e| e.e_inf),
        fit_int: fit(|e| e.e_int),
        entries,
        all_zero,
        monotonicity_violations,
        reference_tail,
        reference_max_current,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn closed_form_at_zero_is_y0() {
        for eps in [0.0, 1e-6, 0.1, 1.0, 7.0] {
            for y0 in [0.1, 1.0, 3.0] {
                let y = riccati_value(y0, eps, 0.0).unwrap();
                assert!((y - y0).abs() <= 1e-15 * y0, "eps={eps} y0={y0} y={y}");
            }
        }
    }

    #[test]
    fn small_epsilon_approaches_uncalmed_limit() {
        let y = riccati_value(1.0, 1e-8, 0.5).unwrap();
        assert!((y - 2.0).abs() < 1e-12);
        assert_eq!(riccati_value(1.0, 0.0, 0.5).unwrap(), 2.0);
    }

    #[test]
    fn uncalmed_past_blow_up_is_an_error() {
        assert!(matches!(riccati_value(1.0, 0.0, 1.0), Err(ExperimentError::BlowUp { .. })));
        let case = RiccatiCase::new(2.0, 0.0, vec![0.1, 0.6]).unwrap();
        assert!(case.crosses_blow_up());
        assert!(riccati_closed_form(&case).is_err());
        assert!(!RiccatiCase::new(2.0, 0.1, vec![0.6]).unwrap().crosses_blow_up());
    }

    #[test]
    fn beyond_blow_up_calmed_values_are_finite_and_grow_as_eps_shrinks() {
        let vals: Vec<f64> = [0.1, 0.01, 0.001, 1e-4]
            .iter()
            .map(|&e| riccati_value(1.0, e, 2.0).unwrap())
            .collect();
        assert!(vals.iter().all(|v| v.is_finite()));
        assert!(vals.windows(2).all(|w| w[1] > w[0] * 10.0), "{vals:?}");
    }

    #[test]
    fn closed_form_solves_the_ode() {
        // central difference of the closed form against the right-hand side
        for eps in [0.05, 0.3, 2.0] {
            for t in [0.2, 0.9, 1.5, 4.0] {
                let h = 1e-5;
                let d = (riccati_value(1.0, eps, t + h).unwrap() - riccati_value(1.0, eps, t - h).unwrap()) / (2.0 * h);
                let y = riccati_value(1.0, eps, t).unwrap();
                let f = riccati_rhs(eps, y);
                assert!((d - f).abs() <= 1e-6 * f.max(1.0), "eps={eps} t={t}: {d} vs {f}");
            }
        }
    }

    #[test]
    fn naive_formula_loses_digits_where_the_conjugate_form_does_not() {
        let (y0, eps, t): (f64, f64, f64) = (1.0, 1e-9, 0.5);
        let a = eps * eps * y0 * y0 + t * y0 - 1.0;
        let naive = (a + (a * a + 4.0 * eps * eps * y0 * y0).sqrt()) / (2.0 * eps * eps * y0);
        let safe = riccati_value(y0, eps, t).unwrap();
        assert!((safe - 2.0).abs() < 1e-12);
        assert!((naive - 2.0).abs() > 1e-3);
    }

    #[test]
    fn integrator_matches_closed_form() {
        let times: Vec<f64> = (0..=50).map(|i| 0.1 * i as f64).collect();
        for eps in [0.1, 0.01, 1.0] {
            let case = RiccatiCase::new(1.0, eps, times.clone()).unwrap();
            let exact = riccati_closed_form(&case).unwrap();
            let num = riccati_integrate(&case).unwrap();
            assert_eq!(num[0], 1.0);
            for (e, n) in exact.iter().zip(&num) {
                assert!((e - n).abs() <= 1e-8 * e.abs(), "eps={eps}: {e} vs {n}");
            }
        }
    }

    #[test]
    fn integrator_handles_unsorted_times() {
        let case = RiccatiCase::new(1.0, 0.1, vec![3.0, 0.5, 2.0, 0.0]).unwrap();
        let exact = riccati_closed_form(&case).unwrap();
        let num = riccati_integrate(&case).unwrap();
        for (e, n) in exact.iter().zip(&num) {
            assert!((e - n).abs() <= 1e-8 * e);
        }
    }

    #[test]
    fn integrator_rejects_uncalmed_case() {
        let case = RiccatiCase::new(1.0, 0.0, vec![0.5]).unwrap();
        assert!(riccati_integrate(&case).is_err());
        assert!(RiccatiCase::new(-1.0, 0.1, vec![]).is_err());
        assert!(RiccatiCase::new(1.0, 0.1, vec![-0.5]).is_err());
    }

    #[test]
    fn derivative_respects_calmed_bound() {
        let eps = 1.0;
        for i in 0..200 {
            let t = 0.5 * i as f64;
            let y = riccati_value(1.0, eps, t).unwrap();
            assert!(riccati_rhs(eps, y) <= riccati_derivative_bound(eps, y) * (1.0 + 1e-15));
        }
        // long-time growth is linear with slope 1/eps^2
        let slope = riccati_value(1.0, eps, 1e6).unwrap() - riccati_value(1.0, eps, 1e6 - 1.0).unwrap();
        assert!((slope - 1.0).abs() < 1e-6);
    }

    #[test]
    fn limit_gap_decreases_along_ladder() {
        let gaps: Vec<f64> = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5]
            .iter()
            .map(|&e| (riccati_value(1.0, e, 0.5).unwrap() - 2.0).abs())
            .collect();
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
        assert!(gaps[4] < 1e-9);
    }

    #[test]
    fn table_marks_blow_up() {
        let rows = riccati_table(1.0, &[0.0, 0.1], &[0.5, 2.0]).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].closed_form, Some(2.0));
        assert_eq!(rows[1].closed_form, None);
        assert!(rows[3].relative_difference.unwrap() < 1e-8);
        assert_eq!(rows[1].csv_row().split(',').count(), 5);
    }

    #[test]
    fn fit_exact_square() {
        let pts: Vec<(f64, f64)> = [0.2, 0.1, 0.05, 0.025].iter().map(|&e| (e, e * e)).collect();
        let fit = fit_rate(&pts).unwrap();
        assert!((fit.slope - 2.0).abs() <= 1e-12);
        assert!(fit.intercept.abs() <= 1e-12);
        assert!((fit.r_squared - 1.0).abs() <= 1e-12);
        assert_eq!(fit.residuals.len(), 4);
    }

    #[test]
    fn fit_linear_with_constant() {
        let pts: Vec<(f64, f64)> = [1.0, 0.5, 0.1].iter().map(|&e| (e, 3.0 * e)).collect();
        let fit = fit_rate(&pts).unwrap();
        assert!((fit.slope - 1.0).abs() <= 1e-12);
        assert!((fit.intercept - 3f64.ln()).abs() <= 1e-12);
    }

    #[test]
    fn fit_jittered_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let pts: Vec<(f64, f64)> = [0.2, 0.1, 0.05, 0.025, 0.0125]
                .iter()
                .map(|&e| (e, e * (1.0 + rng.random_range(-0.05..0.05))))
                .collect();
            let fit = fit_rate(&pts).unwrap();
            assert!((0.9..=1.1).contains(&fit.slope), "{}", fit.slope);
        }
    }

    #[test]
    fn fit_errors() {
        assert!(matches!(fit_rate(&[(0.1, 1.0), (0.2, 2.0)]), Err(ExperimentError::TooFewPoints(2))));
        assert!(matches!(
            fit_rate(&[(0.1, 1.0), (0.2, 0.0), (0.3, 1.0)]),
            Err(ExperimentError::NonPositive { .. })
        ));
    }

    fn small_plan(family: CalmingFamily, ladder: Vec<f64>) -> SweepPlan {
        SweepPlan {
            n: 64,
            params: PhysParams {
                nu: 0.05,
                mu: 0.05,
                kappa: 0.05,
                g: 1.0,
                alpha: 1.0,
            },
            family,
            epsilon_ladder: ladder,
            t_final: 0.04,
            dt: 5e-3,
            initial: "taylor-green".to_string(),
            seed: 0,
            record_every: 1,
        }
    }

    #[test]
    fn plan_validation() {
        assert!(small_plan(CalmingFamily::Rational1, vec![0.1, 0.2]).validate().is_err());
        assert!(small_plan(CalmingFamily::Rational1, vec![]).validate().is_err());
        assert!(small_plan(CalmingFamily::Rational1, vec![0.2, 0.0]).validate().is_err());
        let mut p = small_plan(CalmingFamily::Rational1, vec![0.2]);
        p.record_every = 0;
        assert!(p.validate().is_err());
        assert!(small_plan(CalmingFamily::Rational1, vec![0.2, 0.1]).validate().is_ok());
    }

    #[test]
    fn identity_sweep_is_exactly_zero() {
        let report = convergence_sweep(&small_plan(CalmingFamily::Identity, vec![0.3, 0.2, 0.1]), 2).unwrap();
        assert!(report.all_zero);
        assert!(report.fit_inf.is_none());
        assert!(report.entries.iter().all(|e| e.e_inf == 0.0 && e.e_int == 0.0));
    }

    #[test]
    fn saturating_inside_window_is_exact() {
        let report = convergence_sweep(&small_plan(CalmingFamily::Saturating, vec![0.2, 0.1]), 1).unwrap();
        assert!(report.reference_max_current < 1.0 / 0.2);
        for e in &report.entries {
            assert!(e.e_inf <= 1e-12, "{e:?}");
        }
    }

    #[test]
    fn rational_sweep_is_ordered_and_workers_do_not_matter() {
        let plan = small_plan(CalmingFamily::Rational1, vec![0.4, 0.2, 0.1]);
        let a = convergence_sweep(&plan, 1).unwrap();
        let b = convergence_sweep(&plan, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.is_monotone());
        assert!(a.entries.iter().all(|e| e.e_inf > 0.0));
        let fit = a.fit_inf.unwrap();
        assert!(fit.slope > 1.0, "{fit:?}");
    }

    #[test]
    fn unresolved_reference_is_rejected() {
        let mut plan = small_plan(CalmingFamily::Rational1, vec![0.2]);
        plan.initial = "random-smooth".to_string();
        assert!(matches!(
            convergence_sweep(&plan, 1),
            Err(ExperimentError::UnresolvedReference { .. })
        ));
    }

    proptest! {
        #[test]
        fn closed_form_is_positive_and_increasing(y0 in 0.01f64..10.0, eps in 1e-6f64..10.0, t in 0.0f64..50.0) {
            let a = riccati_value(y0, eps, t).unwrap();
            let b = riccati_value(y0, eps, t + 0.01).unwrap();
            prop_assert!(a > 0.0 && a.is_finite());
            prop_assert!(b >= a);
        }

        #[test]
        fn fit_recovers_power_law(p in 0.5f64..4.0, c in 0.01f64..100.0) {
            let pts: Vec<(f64, f64)> = [0.3, 0.1, 0.03].iter().map(|&e: &f64| (e, c * e.powf(p))).collect();
            let fit = fit_rate(&pts).unwrap();
            prop_assert!((fit.slope - p).abs() < 1e-10);
        }
    }
}
