//! Energy records, the discrete L2 energy balance, and numerical checks of the
//! structural identities of the bilinear term `B(u, v) = P((u . grad) v)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calming::CalmingSpec;
use crate::dynamics::{ohmic_density, PhysParams, State};
use crate::spectral::{Grid, SpectralError, SpectralVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("identity check needs solenoidal input: {0}")]
    Precondition(#[from] SpectralError),
}

/// Norms and energy-budget terms at one time. All norms are squared.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyRecord {
    pub step: u64,
    pub t: f64,
    pub l2_u: f64,
    pub l2_b: f64,
    pub l2_theta: f64,
    pub h1_u: f64,
    pub h1_b: f64,
    pub h1_theta: f64,
    pub h2_u: f64,
    pub h2_b: f64,
    /// `integral alpha mu zeta(|curl b|) |curl b| theta dx`
    pub ohmic_input: f64,
    /// `integral g theta u2 dx`
    pub buoyancy_input: f64,
    /// `nu |grad u|^2 + mu |grad b|^2 + kappa |grad theta|^2`
    pub dissipation: f64,
}

impl EnergyRecord {
    /// Column order of [`EnergyRecord::csv_row`]; frozen.
    pub const CSV_HEADER: &'static str = "step,t,l2_u,l2_b,l2_theta,h1_u,h1_b,h1_theta,h2_u,h2_b,ohmic_input,buoyancy_input,dissipation";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            self.step,
            self.t,
            self.l2_u,
            self.l2_b,
            self.l2_theta,
            self.h1_u,
            self.h1_b,
            self.h1_theta,
            self.h2_u,
            self.h2_b,
            self.ohmic_input,
            self.buoyancy_input,
            self.dissipation
        )
    }

    /// `1/2 (|u|^2 + |b|^2 + |theta|^2)`
    pub fn energy(&self) -> f64 {
        0.5 * (self.l2_u + self.l2_b + self.l2_theta)
    }

    pub fn forcing(&self) -> f64 {
        self.ohmic_input + self.buoyancy_input
    }
}

pub fn record(grid: &Grid, state: &State, params: &PhysParams, spec: &CalmingSpec) -> EnergyRecord {
    let nu = grid.vector_norms(&state.u);
    let nb = grid.vector_norms(&state.b);
    let nt = grid.norms(&state.theta);

    // Evaluated on the padded grid exactly as in the right-hand side, so the
    // record matches the discrete dynamics term for term.
    let j = grid.to_padded(&grid.curl2d(&state.b));
    let theta = grid.to_padded(&state.theta);
    let ohmic_input = j
        .iter()
        .zip(&theta)
        .map(|(&j, &th)| ohmic_density(spec, params, j) * th)
        .sum::<f64>()
        / j.len() as f64;

    let sq = |x: f64| x * x;
    EnergyRecord {
        step: state.step,
        t: state.t,
        l2_u: sq(nu.l2),
        l2_b: sq(nb.l2),
        l2_theta: sq(nt.l2),
        h1_u: sq(nu.h1),
        h1_b: sq(nb.h1),
        h1_theta: sq(nt.h1),
        h2_u: sq(nu.h2),
        h2_b: sq(nb.h2),
        ohmic_input,
        buoyancy_input: params.g * state.theta.inner(&state.u.x2),
        dissipation: params.nu * sq(nu.h1) + params.mu * sq(nb.h1) + params.kappa * sq(nt.h1),
    }
}

/// Outcome of one numerical identity or balance check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityReport {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl IdentityReport {
    pub fn new(name: impl Into<String>, residual: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            residual,
            tolerance,
            passed: residual <= tolerance,
        }
    }
}

/// Multiplier of the `dt^2` term in the energy-balance tolerance.
pub const BUDGET_DT2_CONSTANT: f64 = 500.0;

/// Logarithmic mean, exact for a single exponentially decaying mode.
fn log_mean(a: f64, b: f64) -> f64 {
    if a > 0.0 && b > 0.0 && (a - b).abs() > 1e-12 * a.max(b) {
        (a - b) / (a / b).ln()
    } else {
        0.5 * (a + b)
    }
}

/// Discrete L2 balance over one step:
///
/// ```text
/// (E_next - E_prev)/dt + <dissipation> = <buoyancy + ohmic>
/// ```
///
/// with the forcing averaged by the trapezoid rule and the dissipation by
/// the logarithmic mean. The residual is `O(dt^2)`. Tolerance is
/// `BUDGET_DT2_CONSTANT * dt^2 * s + 64 eps_mach E / dt`, where `s` is the
/// largest budget term.
pub fn check_energy_budget(prev: &EnergyRecord, next: &EnergyRecord, dt: f64) -> IdentityReport {
    let rate = (next.energy() - prev.energy()) / dt;
    let dissipation = log_mean(prev.dissipation, next.dissipation);
    let forcing = 0.5 * (prev.forcing() + next.forcing());
    let residual = (rate + dissipation - forcing).abs();
    let scale = prev
        .dissipation
        .max(next.dissipation)
        .max(prev.forcing().abs())
        .max(next.forcing().abs());
    let roundoff = 64.0 * f64::EPSILON * prev.energy().max(next.energy()) / dt;
    let tolerance = BUDGET_DT2_CONSTANT * dt * dt * scale + roundoff;
    IdentityReport::new("energy-budget", residual, tolerance)
}

/// Upper bound on `|u|^2 + |b|^2 + |theta|^2` at time `t`:
/// `E(0) exp((g + mu alpha^2 M_eps^2) t)`, from Young's inequality applied to
/// the buoyancy and bounded Ohmic terms.
pub fn gronwall_envelope(initial_l2_sum: f64, params: &PhysParams, m_eps: f64, t: f64) -> f64 {
    let rate = params.g + params.mu * params.alpha * params.alpha * m_eps * m_eps;
    initial_l2_sum * (rate * t).exp()
}

pub fn check_gronwall(initial: &EnergyRecord, current: &EnergyRecord, params: &PhysParams, m_eps: f64) -> IdentityReport {
    let envelope = gronwall_envelope(
        initial.l2_u + initial.l2_b + initial.l2_theta,
        params,
        m_eps,
        current.t - initial.t,
    );
    let sum = current.l2_u + current.l2_b + current.l2_theta;
    IdentityReport::new("gronwall-envelope", (sum - envelope).max(0.0), 0.0)
}

/// Relative tolerance of the structural identity checks.
pub const IDENTITY_TOLERANCE: f64 = 1e-10;

fn ratio(residual: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        residual / scale
    } else {
        residual
    }
}

/// Relative residuals of the four identities of the bilinear term for
/// solenoidal, mean-free `u`, `v`, `w`:
///
/// * `symm1`: `<B(u,v),w> + <B(u,w),v> = 0`
/// * `symm2`: `<B(u,v),v> = 0`
/// * `enstrophy`: `<B(w,w),Aw> = 0` (checked for `w = u` and `w = v`)
/// * `jacobi`: `<B(u,v),Av> + <B(v,u),Av> + <B(v,v),Au> = 0`
///
/// Each residual is divided by the matching sum of Cauchy-Schwarz bounds.
pub fn structural_identities(
    grid: &Grid,
    u: &SpectralVector,
    v: &SpectralVector,
    w: &SpectralVector,
) -> Result<Vec<IdentityReport>, DiagnosticsError> {
    for f in [u, v, w] {
        grid.require_solenoidal(f, 1e-10)?;
    }
    let l2 = |f: &SpectralVector| grid.vector_norms(f).l2;
    let stokes = |f: &SpectralVector| grid.vector_laplacian(f).scaled(-1.0);
    // B(a, b) and the unprojected norm |(a . grad) b| used as residual scale
    let bilinear = |a: &SpectralVector, b: &SpectralVector| {
        let adv = grid.advect_vector(a, b);
        let scale = l2(&adv);
        (grid.leray_project(&adv, true), scale)
    };

    let (b_uv, s_uv) = bilinear(u, v);
    let (b_uw, s_uw) = bilinear(u, w);
    let symm1 = ratio((b_uv.inner(w) + b_uw.inner(v)).abs(), s_uv * l2(w) + s_uw * l2(v));
    let symm2 = ratio(b_uv.inner(v).abs(), s_uv * l2(v));

    let (au, av) = (stokes(u), stokes(v));
    let (b_uu, s_uu) = bilinear(u, u);
    let (b_vv, s_vv) = bilinear(v, v);
    let enstrophy = ratio(b_uu.inner(&au).abs(), s_uu * l2(&au))
        .max(ratio(b_vv.inner(&av).abs(), s_vv * l2(&av)));

    let (b_vu, s_vu) = bilinear(v, u);
    let jacobi = ratio(
        (b_uv.inner(&av) + b_vu.inner(&av) + b_vv.inner(&au)).abs(),
        s_uv * l2(&av) + s_vu * l2(&av) + s_vv * l2(&au),
    );

    Ok(vec![
        IdentityReport::new("symm1", symm1, IDENTITY_TOLERANCE),
        IdentityReport::new("symm2", symm2, IDENTITY_TOLERANCE),
        IdentityReport::new("enstrophy", enstrophy, IDENTITY_TOLERANCE),
        IdentityReport::new("jacobi", jacobi, IDENTITY_TOLERANCE),
    ])
}

/// Identity checks on a state, using `u`, `b` and the solenoidal field
/// `perp grad theta` as the three arguments.
pub fn check_identities(grid: &Grid, state: &State) -> Result<Vec<IdentityReport>, DiagnosticsError> {
    let w = grid.perp_gradient(&state.theta);
    structural_identities(grid, &state.u, &state.b, &w)
}

/// L2 norm of `(|j| - zeta(|j|)) |j|` with `j = curl b`, evaluated on the
/// padded grid: the pointwise gap between original and calmed Ohmic sources
/// (per unit `alpha mu`).
pub fn calming_gap(grid: &Grid, b: &SpectralVector, spec: &CalmingSpec) -> f64 {
    let j = grid.to_padded(&grid.curl2d(b));
    let sum: f64 = j
        .iter()
        .map(|&j| {
            let r = j.abs();
            let gap = spec.residual(r) * r;
            gap * gap
        })
        .sum();
    (sum / j.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calming::CalmingFamily;
    use crate::dynamics::builtin_initial_data;
    use crate::spectral::SpectralScalar;

    const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

    fn params() -> PhysParams {
        PhysParams {
            nu: 0.01,
            mu: 0.02,
            kappa: 0.03,
            g: 1.5,
            alpha: 0.7,
        }
    }

    #[test]
    fn zero_state_records_zero() {
        let g = Grid::new(16).unwrap();
        let r = record(&g, &State::zeros(16), &params(), &CalmingSpec::identity());
        assert_eq!(r, EnergyRecord::default());
    }

    #[test]
    fn single_heat_mode_record() {
        let g = Grid::new(16).unwrap();
        let mut s = State::zeros(16);
        s.theta = g.transform_forward(&g.sample(|x, _| (TWO_PI * x).cos())).unwrap();
        let p = params();
        let r = record(&g, &s, &p, &CalmingSpec::identity());
        assert_eq!(r.ohmic_input, 0.0);
        assert_eq!(r.buoyancy_input, 0.0);
        assert!((r.dissipation - p.kappa * TWO_PI * TWO_PI * 0.5).abs() < 1e-13);
    }

    #[test]
    fn ohmic_input_with_unit_temperature() {
        let g = Grid::new(16).unwrap();
        let mut s = State::zeros(16);
        s.b = SpectralVector::new(
            SpectralScalar::zeros(16),
            g.transform_forward(&g.sample(|x, _| (2.0 * TWO_PI * x).sin())).unwrap(),
        );
        s.theta = g.transform_forward(&vec![1.0; 256]).unwrap();
        let p = params();
        let r = record(&g, &s, &p, &CalmingSpec::identity());
        // |curl b|^2 = (4 pi cos 4 pi x)^2, mean 8 pi^2
        let quad = p.alpha * p.mu * 8.0 * std::f64::consts::PI.powi(2);
        let spectral = p.alpha * p.mu * g.norms(&g.curl2d(&s.b)).l2.powi(2);
        assert!((r.ohmic_input - quad).abs() < 1e-12 * quad);
        assert!((r.ohmic_input - spectral).abs() < 1e-12 * quad);
    }

    #[test]
    fn csv_row_has_header_arity() {
        let r = EnergyRecord {
            t: 0.25,
            dissipation: 1.5e-3,
            ..Default::default()
        };
        assert_eq!(r.csv_row().split(',').count(), EnergyRecord::CSV_HEADER.split(',').count());
        assert!(r.csv_row().starts_with("0,2.5e-1,"));
    }

    #[test]
    fn pure_diffusion_budget_is_exact() {
        let g = Grid::new(16).unwrap();
        let mut s = State::zeros(16);
        // buoyancy of a mode varying along x2 is a pure gradient, so u stays zero
        s.theta = g.transform_forward(&g.sample(|_, y| (TWO_PI * y).cos())).unwrap();
        let p = params();
        let spec = CalmingSpec::identity();
        let dt = 1e-3;
        let stepper = crate::dynamics::Stepper::new(&g, p, spec, dt, 0.5).unwrap();
        let mut prev = record(&g, &s, &p, &spec);
        for _ in 0..50 {
            s = stepper.step(&s).unwrap();
            let next = record(&g, &s, &p, &spec);
            let rep = check_energy_budget(&prev, &next, dt);
            assert!(rep.residual <= 1e-10, "{rep:?}");
            assert!(rep.passed);
            prev = next;
        }
    }

    #[test]
    fn identities_hold_for_taylor_green_and_random_fields() {
        let g = Grid::new(32).unwrap();
        let tg = builtin_initial_data("taylor-green", &g, 0).unwrap();
        let reports = structural_identities(&g, &tg.u, &tg.u, &tg.u).unwrap();
        assert!(reports[2].residual <= 1e-12);
        for seed in 0..3 {
            let s = builtin_initial_data("random-smooth", &g, seed).unwrap();
            for r in check_identities(&g, &s).unwrap() {
                assert!(r.passed, "{r:?}");
            }
        }
    }

    #[test]
    fn identities_reject_compressible_input() {
        let g = Grid::new(16).unwrap();
        let phi = g.transform_forward(&g.sample(|x, y| (TWO_PI * x).sin() * (TWO_PI * y).cos())).unwrap();
        let grad = g.gradient(&phi);
        let s = builtin_initial_data("random-smooth", &g, 1).unwrap();
        assert!(matches!(
            structural_identities(&g, &grad, &s.u, &s.b),
            Err(DiagnosticsError::Precondition(SpectralError::NotSolenoidal { .. }))
        ));
    }

    #[test]
    fn calming_gap_cases() {
        let g = Grid::new(32).unwrap();
        let s = builtin_initial_data("orszag-tang-like", &g, 0).unwrap();
        assert_eq!(calming_gap(&g, &s.b, &CalmingSpec::identity()), 0.0);
        let jmax = g.to_padded(&g.curl2d(&s.b)).iter().fold(0.0f64, |m, j| m.max(j.abs()));
        let inside = CalmingSpec::new(CalmingFamily::Saturating, 0.9 / jmax).unwrap();
        assert_eq!(calming_gap(&g, &s.b, &inside), 0.0);

        // pointwise bound: gap <= C eps^gamma || |j|^(beta+1) ||
        let j = g.to_padded(&g.curl2d(&s.b));
        for eps in [0.2, 0.05, 0.01] {
            let spec = CalmingSpec::new(CalmingFamily::Rational1, eps).unwrap();
            let c = spec.constants().unwrap();
            let bound = c.c_resid
                * eps.powf(c.gamma)
                * (j.iter().map(|v| v.abs().powf(2.0 * (c.beta + 1.0))).sum::<f64>() / j.len() as f64).sqrt();
            assert!(calming_gap(&g, &s.b, &spec) <= bound);
        }
    }

    #[test]
    fn calming_gap_shrinks_with_epsilon() {
        let g = Grid::new(32).unwrap();
        let s = builtin_initial_data("random-smooth", &g, 4).unwrap();
        let b = s.b.scaled(20.0);
        for f in CalmingFamily::CALMED {
            let mut prev = f64::INFINITY;
            for eps in [1.0, 0.5, 0.2, 0.1, 0.05, 0.02, 0.01] {
                let gap = calming_gap(&g, &b, &CalmingSpec::new(f, eps).unwrap());
                assert!(gap <= prev, "{f} eps={eps}");
                prev = gap;
            }
        }
    }

    #[test]
    fn gronwall_envelope_grows() {
        let p = params();
        assert_eq!(gronwall_envelope(2.0, &p, 3.0, 0.0), 2.0);
        let e = gronwall_envelope(2.0, &p, 3.0, 1.0);
        assert!((e - 2.0 * (p.g + p.mu * p.alpha * p.alpha * 9.0).exp()).abs() < 1e-12);
    }
}
