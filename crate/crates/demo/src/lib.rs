//! Browser bindings: calming curves, the calmed Riccati model and a small
//! live simulation. The `*_impl` functions carry the logic and are tested natively.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use calmed_mhdb::calming::{CalmingFamily, CalmingSpec};
use calmed_mhdb::diagnostics::record;
use calmed_mhdb::dynamics::{builtin_initial_data, PhysParams, State, Stepper};
use calmed_mhdb::experiments::riccati_value;
use calmed_mhdb::spectral::Grid;
use wasm_bindgen::prelude::*;

fn spec(family: &str, epsilon: f64) -> Result<CalmingSpec, String> {
    let family: CalmingFamily = family.parse().map_err(|e| format!("{e}"))?;
    if family == CalmingFamily::Identity {
        return Ok(CalmingSpec::identity());
    }
    CalmingSpec::new(family, epsilon).map_err(|e| e.to_string())
}

/// Flat triples `(x, zeta(x), x - zeta(x))` on `[0, x_max]`.
pub fn calming_curve_impl(family: &str, epsilon: f64, x_max: f64, samples: usize) -> Result<Vec<f64>, String> {
    let s = spec(family, epsilon)?;
    if !(x_max > 0.0 && x_max.is_finite()) || samples < 2 {
        return Err("need x_max > 0 and at least 2 samples".to_string());
    }
    let mut out = Vec::with_capacity(3 * samples);
    for i in 0..samples {
        let x = x_max * i as f64 / (samples - 1) as f64;
        out.extend([x, s.eval(x), s.residual(x)]);
    }
    Ok(out)
}

/// Flat pairs `(t, y(t))` for `y' = y^2 / (1 + eps^2 y^2)`, `y(0) = y0`.
/// With `eps = 0` values past the blow-up time are `+inf`.
pub fn riccati_curve_impl(y0: f64, epsilon: f64, t_max: f64, samples: usize) -> Result<Vec<f64>, String> {
    if !(y0 > 0.0) || !(epsilon >= 0.0) || !(t_max > 0.0) || samples < 2 {
        return Err("need y0 > 0, epsilon >= 0, t_max > 0 and at least 2 samples".to_string());
    }
    let mut out = Vec::with_capacity(2 * samples);
    for i in 0..samples {
        let t = t_max * i as f64 / (samples - 1) as f64;
        let y = riccati_value(y0, epsilon, t).unwrap_or(f64::INFINITY);
        out.extend([t, y]);
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn calming_curve(family: &str, epsilon: f64, x_max: f64, samples: usize) -> Result<Vec<f64>, JsValue> {
    calming_curve_impl(family, epsilon, x_max, samples).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn riccati_curve(y0: f64, epsilon: f64, t_max: f64, samples: usize) -> Result<Vec<f64>, JsValue> {
    riccati_curve_impl(y0, epsilon, t_max, samples).map_err(|e| JsValue::from_str(&e))
}

/// A running simulation on a small grid.
#[wasm_bindgen]
pub struct Playground {
    grid: Grid,
    stepper: Stepper,
    state: State,
}

impl Playground {
    pub fn create(n: usize, family: &str, epsilon: f64, initial: &str, dt: f64) -> Result<Playground, String> {
        let grid = Grid::new(n).map_err(|e| e.to_string())?;
        let params = PhysParams {
            nu: 0.01,
            mu: 0.01,
            kappa: 0.01,
            g: 1.0,
            alpha: 1.0,
        };
        let stepper = Stepper::new(&grid, params, spec(family, epsilon)?, dt, 0.5).map_err(|e| e.to_string())?;
        let state = builtin_initial_data(initial, &grid, 0).map_err(|e| e.to_string())?;
        Ok(Self { grid, stepper, state })
    }

    pub fn advance_by(&mut self, steps: u32) -> Result<(), String> {
        for _ in 0..steps {
            self.state = self.stepper.step(&self.state).map_err(|e| e.to_string())?;
        }
        Ok(())
    }

    /// `theta` on the grid, index `i2 * n + i1`.
    pub fn theta_samples(&self) -> Vec<f64> {
        self.grid.transform_inverse(&self.state.theta).expect("state matches grid")
    }
}

#[wasm_bindgen]
impl Playground {
    #[wasm_bindgen(constructor)]
    pub fn new(n: usize, family: &str, epsilon: f64, initial: &str, dt: f64) -> Result<Playground, JsValue> {
        Self::create(n, family, epsilon, initial, dt).map_err(|e| JsValue::from_str(&e))
    }

    pub fn advance(&mut self, steps: u32) -> Result<(), JsValue> {
        self.advance_by(steps).map_err(|e| JsValue::from_str(&e))
    }

    pub fn theta(&self) -> Vec<f64> {
        self.theta_samples()
    }

    pub fn n(&self) -> usize {
        self.grid.n()
    }

    pub fn time(&self) -> f64 {
        self.state.t
    }

    /// `(|u|^2 + |b|^2 + |theta|^2) / 2`
    pub fn energy(&self) -> f64 {
        record(&self.grid, &self.state, self.stepper.params(), self.stepper.spec()).energy()
    }
}
