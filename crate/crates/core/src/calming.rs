//! Calming functions: bounded, globally Lipschitz odd approximations of the
//! identity that cap the current density fed into the Ohmic heating term.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalmingError {
    #[error("unknown calming family `{0}` (expected identity, rational1, rational2, arctan or saturating)")]
    UnknownFamily(String),
    #[error("epsilon must be positive and finite for family `{family}`, got {epsilon}")]
    InvalidEpsilon { family: CalmingFamily, epsilon: f64 },
    #[error("the identity family has no finite bound M_eps")]
    Unbounded,
    #[error("property verification needs at least 1000 samples, got {0}")]
    TooFewSamples(usize),
    #[error("x_max must be positive and finite, got {0}")]
    InvalidRange(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalmingFamily {
    /// No calming: the original Ohmic term `|curl b|^2`.
    Identity,
    /// `x / (1 + eps |x|)`
    Rational1,
    /// `x / (1 + eps^2 x^2)`
    Rational2,
    /// `arctan(eps x) / eps`
    Arctan,
    /// Identity on `|x| < 1/eps`, quadratic blend, then constant `3/(2 eps)`.
    Saturating,
}

impl CalmingFamily {
    pub const ALL: [CalmingFamily; 5] = [
        CalmingFamily::Identity,
        CalmingFamily::Rational1,
        CalmingFamily::Rational2,
        CalmingFamily::Arctan,
        CalmingFamily::Saturating,
    ];

    /// The bounded families, i.e. everything except `Identity`.
    pub const CALMED: [CalmingFamily; 4] = [
        CalmingFamily::Rational1,
        CalmingFamily::Rational2,
        CalmingFamily::Arctan,
        CalmingFamily::Saturating,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CalmingFamily::Identity => "identity",
            CalmingFamily::Rational1 => "rational1",
            CalmingFamily::Rational2 => "rational2",
            CalmingFamily::Arctan => "arctan",
            CalmingFamily::Saturating => "saturating",
        }
    }
}

impl fmt::Display for CalmingFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CalmingFamily {
    type Err = CalmingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CalmingFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| CalmingError::UnknownFamily(s.to_string()))
    }
}

/// A calming family together with its parameter. `Identity` ignores epsilon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalmingSpec {
    family: CalmingFamily,
    epsilon: f64,
}

impl CalmingSpec {
    pub fn new(family: CalmingFamily, epsilon: f64) -> Result<Self, CalmingError> {
        if family != CalmingFamily::Identity && !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(CalmingError::InvalidEpsilon { family, epsilon });
        }
        Ok(Self { family, epsilon })
    }

    pub fn identity() -> Self {
        Self {
            family: CalmingFamily::Identity,
            epsilon: 0.0,
        }
    }

    pub fn family(&self) -> CalmingFamily {
        self.family
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn is_identity(&self) -> bool {
        self.family == CalmingFamily::Identity
    }

    /// `zeta(x)`. Every family is evaluated as `sign(x) g(|x|)`, so oddness is exact.
    pub fn eval(&self, x: f64) -> f64 {
        let r = x.abs();
        let eps = self.epsilon;
        let g = match self.family {
            CalmingFamily::Identity => r,
            CalmingFamily::Rational1 => r / (1.0 + eps * r),
            CalmingFamily::Rational2 => {
                let s = eps * r;
                r / (1.0 + s * s)
            }
            CalmingFamily::Arctan => (eps * r).atan() / eps,
            CalmingFamily::Saturating => saturating_profile(r, eps),
        };
        g.copysign(x)
    }

    /// `zeta'(x)`. At the two breakpoints of the saturating family the pieces
    /// match to first order, so the branch chosen there does not matter.
    pub fn eval_derivative(&self, x: f64) -> f64 {
        let r = x.abs();
        let eps = self.epsilon;
        match self.family {
            CalmingFamily::Identity => 1.0,
            CalmingFamily::Rational1 => {
                let d = 1.0 + eps * r;
                1.0 / (d * d)
            }
            CalmingFamily::Rational2 => {
                let s2 = (eps * r) * (eps * r);
                (1.0 - s2) / ((1.0 + s2) * (1.0 + s2))
            }
            CalmingFamily::Arctan => {
                let s = eps * r;
                1.0 / (1.0 + s * s)
            }
            CalmingFamily::Saturating => {
                if r < 1.0 / eps {
                    1.0
                } else if r < 2.0 / eps {
                    2.0 - eps * r
                } else {
                    0.0
                }
            }
        }
    }

    /// `x - zeta(x)`, in closed forms that avoid cancellation.
    pub fn residual(&self, x: f64) -> f64 {
        let r = x.abs();
        let eps = self.epsilon;
        let rho = match self.family {
            CalmingFamily::Identity => 0.0,
            CalmingFamily::Rational1 => eps * r * r / (1.0 + eps * r),
            CalmingFamily::Rational2 => {
                let s2 = (eps * r) * (eps * r);
                s2 * r / (1.0 + s2)
            }
            CalmingFamily::Arctan => {
                let s = eps * r;
                if s < 1e-3 {
                    let s2 = s * s;
                    r * s2 * (1.0 / 3.0 - s2 * (1.0 / 5.0 - s2 / 7.0))
                } else {
                    r - s.atan() / eps
                }
            }
            CalmingFamily::Saturating => {
                if r < 1.0 / eps {
                    0.0
                } else if r < 2.0 / eps {
                    let d = eps * r - 1.0;
                    d * d / (2.0 * eps)
                } else {
                    r - 1.5 / eps
                }
            }
        };
        rho.copysign(x)
    }

    /// Certified `(M_eps, L_eps, gamma, beta, C)` for the bounded families.
    pub fn constants(&self) -> Result<CalmingConstants, CalmingError> {
        let eps = self.epsilon;
        let c = match self.family {
            CalmingFamily::Identity => return Err(CalmingError::Unbounded),
            // sup|zeta| = 1/eps, sup|zeta'| = 1, |x - zeta| <= eps x^2
            CalmingFamily::Rational1 => CalmingConstants {
                m_eps: 1.0 / eps + 1.0,
                l_eps: 1.0,
                gamma: 1.0,
                beta: 2.0,
                c_resid: 1.0,
            },
            // sup|zeta| = 1/(2 eps) at x = 1/eps; |x - zeta| <= eps^2 |x|^3.
            // (gamma, beta, C) = (1, 2, 1/2) is an equally valid bound.
            CalmingFamily::Rational2 => CalmingConstants {
                m_eps: 0.5 / eps + 1.0,
                l_eps: 1.0,
                gamma: 2.0,
                beta: 3.0,
                c_resid: 1.0,
            },
            // alternating Taylor series: |x - arctan(eps x)/eps| <= eps^2 |x|^3 / 3
            CalmingFamily::Arctan => CalmingConstants {
                m_eps: std::f64::consts::FRAC_PI_2 / eps + 1.0,
                l_eps: 1.0,
                gamma: 2.0,
                beta: 3.0,
                c_resid: 1.0 / 3.0,
            },
            // residual vanishes below 1/eps and is (eps x - 1)^2 / (2 eps) <= eps x^2 / 2 above
            CalmingFamily::Saturating => CalmingConstants {
                m_eps: 1.5 / eps + 1.0,
                l_eps: 1.0,
                gamma: 1.0,
                beta: 2.0,
                c_resid: 0.5,
            },
        };
        Ok(c)
    }
}

impl fmt::Display for CalmingSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_identity() {
            write!(f, "identity")
        } else {
            write!(f, "{}(eps={})", self.family, self.epsilon)
        }
    }
}

fn saturating_profile(r: f64, eps: f64) -> f64 {
    if r < 1.0 / eps {
        r
    } else if r < 2.0 / eps {
        let d = r - 2.0 / eps;
        -0.5 * eps * d * d + 1.5 / eps
    } else {
        1.5 / eps
    }
}

/// Constants of the calming hypotheses:
/// `|zeta| + |zeta'| <= m_eps`, `zeta` is `l_eps`-Lipschitz and
/// `|x - zeta(x)| <= c_resid * eps^gamma * |x|^beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalmingConstants {
    pub m_eps: f64,
    pub l_eps: f64,
    pub gamma: f64,
    pub beta: f64,
    pub c_resid: f64,
}

/// Largest violation of each calming hypothesis over a sample set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyReport {
    pub spec: CalmingSpec,
    pub constants: CalmingConstants,
    pub samples: usize,
    pub pairs: usize,
    pub bound_violation: f64,
    pub lipschitz_violation: f64,
    pub rate_violation: f64,
    pub oddness_violation: f64,
    pub passed: bool,
}

impl PropertyReport {
    pub const TOLERANCE: f64 = 1e-12;

    pub fn max_violation(&self) -> f64 {
        self.bound_violation
            .max(self.lipschitz_violation)
            .max(self.rate_violation)
            .max(self.oddness_violation)
    }
}

fn sample_points(spec: &CalmingSpec, sample_count: usize, x_max: f64) -> Vec<f64> {
    let mut xs: Vec<f64> = (0..sample_count)
        .map(|i| -x_max + 2.0 * x_max * i as f64 / (sample_count - 1) as f64)
        .collect();
    // dense near the origin, where the rate bound is tight
    for p in 1..=40 {
        let x = x_max * 10f64.powf(-(p as f64) * 0.25);
        xs.push(x);
        xs.push(-x);
    }
    if !spec.is_identity() {
        for b in [1.0 / spec.epsilon, 2.0 / spec.epsilon] {
            if b <= x_max {
                for x in [b, b * (1.0 - 1e-12), b * (1.0 + 1e-12)] {
                    xs.push(x);
                    xs.push(-x);
                }
            }
        }
    }
    xs.sort_by(f64::total_cmp);
    xs
}

/// Checks the calming hypotheses for `spec` with the given constants on
/// `sample_count` uniform points in `[-x_max, x_max]` (plus points clustered
/// near zero and at breakpoints) and as many seeded random pairs.
pub fn verify_properties(
    spec: &CalmingSpec,
    constants: &CalmingConstants,
    sample_count: usize,
    x_max: f64,
) -> Result<PropertyReport, CalmingError> {
    if sample_count < 1000 {
        return Err(CalmingError::TooFewSamples(sample_count));
    }
    if !(x_max > 0.0 && x_max.is_finite()) {
        return Err(CalmingError::InvalidRange(x_max));
    }
    let xs = sample_points(spec, sample_count, x_max);
    let eps_gamma = spec.epsilon.powf(constants.gamma);

    let mut bound: f64 = 0.0;
    let mut rate: f64 = 0.0;
    let mut odd: f64 = 0.0;
    for &x in &xs {
        let z = spec.eval(x);
        bound = bound.max(z.abs() + spec.eval_derivative(x).abs() - constants.m_eps);
        let allowed = constants.c_resid * eps_gamma * x.abs().powf(constants.beta);
        rate = rate.max(spec.residual(x).abs() - allowed);
        odd = odd.max((spec.eval(-x) + z).abs());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_ca1f);
    let mut lip: f64 = 0.0;
    let mut pairs = 0;
    let mut check = |x: f64, y: f64| {
        let v = (spec.eval(x) - spec.eval(y)).abs() - constants.l_eps * (x - y).abs();
        lip = lip.max(v);
    };
    for w in xs.windows(2) {
        check(w[0], w[1]);
        pairs += 1;
    }
    for _ in 0..sample_count {
        let x = rng.random_range(-x_max..=x_max);
        let y = rng.random_range(-x_max..=x_max);
        check(x, y);
        pairs += 1;
    }

    let mut report = PropertyReport {
        spec: *spec,
        constants: *constants,
        samples: xs.len(),
        pairs,
        bound_violation: bound.max(0.0),
        lipschitz_violation: lip.max(0.0),
        rate_violation: rate.max(0.0),
        oddness_violation: odd,
        passed: false,
    };
    report.passed = report.max_violation() <= PropertyReport::TOLERANCE;
    Ok(report)
}

/// Difference quotients `(f(h) - f(0)) / h` of `f(x) = sign(x) |x|^(1-eps)`.
/// For `eps` in `(0, 1)` these grow without bound as `h -> 0`, so the power
/// law is not Lipschitz at the origin and cannot serve as a calming function.
pub fn power_law_difference_quotients(epsilon: f64, steps: &[f64]) -> Vec<f64> {
    let f = |x: f64| x.abs().powf(1.0 - epsilon).copysign(x);
    steps.iter().map(|&h| (f(h) - f(0.0)) / h).collect()
}
