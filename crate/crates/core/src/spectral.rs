//! Fourier representation of real periodic fields on the unit torus `[0,1]^2`.
//!
//! Coefficients are stored on the full `n x n` index set with `coeffs(0)` equal
//! to the spatial mean, i.e. `f(x) = sum_k c_k exp(2 pi i k.x)`. Samples and
//! coefficients share the layout `index = i2 * n + i1`, so `x1` varies fastest.
//!
//! Quadratic products are formed on a `3n/2` zero-padded grid and truncated back
//! to the 2/3-rule mask, which makes every triple-product integral of masked
//! fields exact up to round-off.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

pub type C64 = Complex<f64>;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("grid size must be even and at least 8, got {0}")]
    InvalidGridSize(usize),
    #[error("shape mismatch: expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("field is not solenoidal: max |div| = {divergence:e} exceeds {tolerance:e}")]
    NotSolenoidal { divergence: f64, tolerance: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X1,
    X2,
}

/// Forward/inverse complex 2D FFT of a square array, row transforms followed
/// by column transforms through an in-place transpose.
#[derive(Clone)]
struct Fft2 {
    size: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(planner: &mut FftPlanner<f64>, size: usize) -> Self {
        Self {
            size,
            forward: planner.plan_fft_forward(size),
            inverse: planner.plan_fft_inverse(size),
        }
    }

    fn run(&self, buf: &mut [C64], inverse: bool) {
        let plan = if inverse { &self.inverse } else { &self.forward };
        let mut scratch = vec![C64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        plan.process_with_scratch(buf, &mut scratch);
        transpose(buf, self.size);
        plan.process_with_scratch(buf, &mut scratch);
        transpose(buf, self.size);
    }
}

fn transpose(buf: &mut [C64], n: usize) {
    for r in 0..n {
        for c in (r + 1)..n {
            buf.swap(r * n + c, c * n + r);
        }
    }
}

/// Signed integer wavenumber for FFT index `i` on a grid of `n` points.
fn signed_index(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

fn wrap_index(k: i64, n: usize) -> usize {
    k.rem_euclid(n as i64) as usize
}

/// Spectral discretization of the unit torus.
#[derive(Clone)]
pub struct Grid {
    n: usize,
    padded: usize,
    kmax: i64,
    ints: Vec<i64>,
    wavenumbers: Vec<f64>,
    // Derivative multipliers: 2 pi k with the Nyquist entry zeroed so that
    // differentiation maps real fields to real fields.
    deriv: Vec<f64>,
    mask: Vec<bool>,
    fft: Fft2,
    fft_padded: Fft2,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("n", &self.n)
            .field("padded", &self.padded)
            .field("kmax", &self.kmax)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
    }
}

impl Grid {
    pub fn new(n: usize) -> Result<Self, SpectralError> {
        if n < 8 || !n.is_multiple_of(2) {
            return Err(SpectralError::InvalidGridSize(n));
        }
        let padded = 3 * n / 2;
        let ints: Vec<i64> = (0..n).map(|i| signed_index(i, n)).collect();
        let wavenumbers = ints.iter().map(|&k| TWO_PI * k as f64).collect();
        let deriv = ints
            .iter()
            .map(|&k| if k == -(n as i64) / 2 { 0.0 } else { TWO_PI * k as f64 })
            .collect();
        // |k| < n/3  <=>  3|k| < n
        let kmax = (n as i64 - 1) / 3;
        let mut mask = vec![false; n * n];
        for i2 in 0..n {
            for i1 in 0..n {
                mask[i2 * n + i1] = 3 * ints[i1].abs() < n as i64 && 3 * ints[i2].abs() < n as i64;
            }
        }
        let mut planner = FftPlanner::new();
        let fft = Fft2::new(&mut planner, n);
        let fft_padded = Fft2::new(&mut planner, padded);
        Ok(Self {
            n,
            padded,
            kmax,
            ints,
            wavenumbers,
            deriv,
            mask,
            fft,
            fft_padded,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Total number of modes, `n^2`.
    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Side of the zero-padded product grid.
    pub fn padded_n(&self) -> usize {
        self.padded
    }

    /// Largest retained `|k_i|` under the 2/3 rule.
    pub fn kmax(&self) -> i64 {
        self.kmax
    }

    /// Spatial step `h = 1/n`.
    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Integer wavenumber `(k1, k2)` of flat index `idx`.
    pub fn mode(&self, idx: usize) -> (i64, i64) {
        (self.ints[idx % self.n], self.ints[idx / self.n])
    }

    /// Flat index of the mode `(k1, k2)` (taken modulo `n`).
    pub fn index_of(&self, k1: i64, k2: i64) -> usize {
        wrap_index(k2, self.n) * self.n + wrap_index(k1, self.n)
    }

    /// Angular wavenumber `2 pi k` along one axis for 1D index `i`.
    pub fn wavenumber(&self, i: usize) -> f64 {
        self.wavenumbers[i]
    }

    pub fn wavenumbers(&self) -> &[f64] {
        &self.wavenumbers
    }

    pub fn dealias_mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn is_retained(&self, idx: usize) -> bool {
        self.mask[idx]
    }

    /// `|2 pi k|^2` at flat index `idx`.
    pub fn laplacian_eigenvalue(&self, idx: usize) -> f64 {
        let kx = self.wavenumbers[idx % self.n];
        let ky = self.wavenumbers[idx / self.n];
        kx * kx + ky * ky
    }

    /// Physical coordinates `(x1, x2)` of sample `idx`.
    pub fn point(&self, idx: usize) -> (f64, f64) {
        let h = self.spacing();
        ((idx % self.n) as f64 * h, (idx / self.n) as f64 * h)
    }

    /// Samples `f(x1, x2)` on the `n x n` grid.
    pub fn sample<F: Fn(f64, f64) -> f64>(&self, f: F) -> Vec<f64> {
        (0..self.len())
            .map(|idx| {
                let (x1, x2) = self.point(idx);
                f(x1, x2)
            })
            .collect()
    }

    fn check_len(&self, got: usize) -> Result<(), SpectralError> {
        if got != self.len() {
            return Err(SpectralError::ShapeMismatch {
                expected: self.len(),
                got,
            });
        }
        Ok(())
    }

    /// Physical samples to Fourier coefficients. No truncation is applied.
    pub fn transform_forward(&self, samples: &[f64]) -> Result<SpectralScalar, SpectralError> {
        self.check_len(samples.len())?;
        let n = self.n;
        let mut buf: Vec<C64> = samples.iter().map(|&v| C64::new(v, 0.0)).collect();
        self.fft.run(&mut buf, false);
        let norm = 1.0 / (n * n) as f64;
        let mut coeffs = vec![C64::new(0.0, 0.0); n * n];
        for i2 in 0..n {
            for i1 in 0..n {
                let idx = i2 * n + i1;
                let jdx = ((n - i2) % n) * n + (n - i1) % n;
                coeffs[idx] = (buf[idx] + buf[jdx].conj()) * (0.5 * norm);
            }
        }
        Ok(SpectralScalar { n, coeffs })
    }

    /// Fourier coefficients to physical samples on the `n x n` grid.
    pub fn transform_inverse(&self, field: &SpectralScalar) -> Result<Vec<f64>, SpectralError> {
        self.check_len(field.coeffs.len())?;
        let mut buf = field.coeffs.clone();
        self.fft.run(&mut buf, true);
        Ok(buf.into_iter().map(|c| c.re).collect())
    }

    /// Evaluates two fields on the padded grid with a single complex transform.
    /// Only retained (masked) modes are carried over.
    pub fn to_padded_pair(&self, a: &SpectralScalar, b: &SpectralScalar) -> (Vec<f64>, Vec<f64>) {
        let m = self.padded;
        let mut buf = vec![C64::new(0.0, 0.0); m * m];
        let i = C64::new(0.0, 1.0);
        for idx in 0..self.len() {
            if !self.mask[idx] {
                continue;
            }
            let (k1, k2) = self.mode(idx);
            buf[wrap_index(k2, m) * m + wrap_index(k1, m)] = a.coeffs[idx] + i * b.coeffs[idx];
        }
        self.fft_padded.run(&mut buf, true);
        buf.into_iter().map(|c| (c.re, c.im)).unzip()
    }

    pub fn to_padded(&self, a: &SpectralScalar) -> Vec<f64> {
        self.to_padded_pair(a, &SpectralScalar::zeros(self.n)).0
    }

    /// Transforms two real padded-grid fields and truncates both to the
    /// dealias mask. The outputs are exactly conjugate symmetric.
    pub fn from_padded_pair(&self, a: &[f64], b: &[f64]) -> (SpectralScalar, SpectralScalar) {
        let m = self.padded;
        debug_assert_eq!(a.len(), m * m);
        let mut buf: Vec<C64> = a.iter().zip(b).map(|(&x, &y)| C64::new(x, y)).collect();
        self.fft_padded.run(&mut buf, false);
        let norm = 1.0 / (m * m) as f64;
        let mut out_a = SpectralScalar::zeros(self.n);
        let mut out_b = SpectralScalar::zeros(self.n);
        for idx in 0..self.len() {
            if !self.mask[idx] {
                continue;
            }
            let (k1, k2) = self.mode(idx);
            let z = buf[wrap_index(k2, m) * m + wrap_index(k1, m)];
            let zc = buf[wrap_index(-k2, m) * m + wrap_index(-k1, m)].conj();
            out_a.coeffs[idx] = (z + zc) * (0.5 * norm);
            // (z - zc) / 2i
            let d = (z - zc) * (0.5 * norm);
            out_b.coeffs[idx] = C64::new(d.im, -d.re);
        }
        (out_a, out_b)
    }

    pub fn from_padded(&self, a: &[f64]) -> SpectralScalar {
        let zeros = vec![0.0; a.len()];
        self.from_padded_pair(a, &zeros).0
    }

    /// Zeroes every mode outside the 2/3-rule mask.
    pub fn truncate(&self, f: &SpectralScalar) -> SpectralScalar {
        let mut out = f.clone();
        for (c, &keep) in out.coeffs.iter_mut().zip(&self.mask) {
            if !keep {
                *c = C64::new(0.0, 0.0);
            }
        }
        out
    }

    pub fn truncate_vector(&self, v: &SpectralVector) -> SpectralVector {
        SpectralVector::new(self.truncate(&v.x1), self.truncate(&v.x2))
    }

    fn deriv_multiplier(&self, idx: usize, axis: Axis) -> f64 {
        match axis {
            Axis::X1 => self.deriv[idx % self.n],
            Axis::X2 => self.deriv[idx / self.n],
        }
    }

    pub fn derivative(&self, f: &SpectralScalar, axis: Axis) -> SpectralScalar {
        let coeffs = f
            .coeffs
            .iter()
            .enumerate()
            .map(|(idx, &c)| c * C64::new(0.0, self.deriv_multiplier(idx, axis)))
            .collect();
        SpectralScalar { n: self.n, coeffs }
    }

    pub fn laplacian(&self, f: &SpectralScalar) -> SpectralScalar {
        let coeffs = f
            .coeffs
            .iter()
            .enumerate()
            .map(|(idx, &c)| c * -self.laplacian_eigenvalue(idx))
            .collect();
        SpectralScalar { n: self.n, coeffs }
    }

    pub fn vector_laplacian(&self, v: &SpectralVector) -> SpectralVector {
        SpectralVector::new(self.laplacian(&v.x1), self.laplacian(&v.x2))
    }

    pub fn gradient(&self, f: &SpectralScalar) -> SpectralVector {
        SpectralVector::new(self.derivative(f, Axis::X1), self.derivative(f, Axis::X2))
    }

    /// `(-d2 psi, d1 psi)`, divergence free for any `psi`.
    pub fn perp_gradient(&self, psi: &SpectralScalar) -> SpectralVector {
        SpectralVector::new(
            self.derivative(psi, Axis::X2).scaled(-1.0),
            self.derivative(psi, Axis::X1),
        )
    }

    pub fn divergence(&self, v: &SpectralVector) -> SpectralScalar {
        self.derivative(&v.x1, Axis::X1)
            .added(&self.derivative(&v.x2, Axis::X2))
    }

    /// Scalar curl `d1 v2 - d2 v1`.
    pub fn curl2d(&self, v: &SpectralVector) -> SpectralScalar {
        self.derivative(&v.x2, Axis::X1)
            .added(&self.derivative(&v.x1, Axis::X2).scaled(-1.0))
    }

    /// Leray-Helmholtz projection `I - k k^T / |k|^2`. The mean mode is zeroed
    /// when `zero_mean` is set and kept otherwise.
    pub fn leray_project(&self, v: &SpectralVector, zero_mean: bool) -> SpectralVector {
        let mut out = v.clone();
        for idx in 0..self.len() {
            let k1 = self.deriv[idx % self.n];
            let k2 = self.deriv[idx / self.n];
            let k_sq = k1 * k1 + k2 * k2;
            if idx == 0 {
                if zero_mean {
                    out.x1.coeffs[0] = C64::new(0.0, 0.0);
                    out.x2.coeffs[0] = C64::new(0.0, 0.0);
                }
                continue;
            }
            if k_sq == 0.0 {
                continue;
            }
            let a = v.x1.coeffs[idx];
            let b = v.x2.coeffs[idx];
            let dot = (a * k1 + b * k2) / k_sq;
            out.x1.coeffs[idx] = a - dot * k1;
            out.x2.coeffs[idx] = b - dot * k2;
        }
        out
    }

    /// Pseudo-spectral `(u . grad) f`, dealiased by 3/2 padding and truncated.
    pub fn advect(&self, u: &SpectralVector, f: &SpectralScalar) -> SpectralScalar {
        let (u1, u2) = self.to_padded_pair(&u.x1, &u.x2);
        let (d1, d2) = self.to_padded_pair(
            &self.derivative(f, Axis::X1),
            &self.derivative(f, Axis::X2),
        );
        let prod: Vec<f64> = (0..u1.len()).map(|p| u1[p] * d1[p] + u2[p] * d2[p]).collect();
        self.from_padded(&prod)
    }

    pub fn advect_vector(&self, u: &SpectralVector, v: &SpectralVector) -> SpectralVector {
        let (u1, u2) = self.to_padded_pair(&u.x1, &u.x2);
        let (a1, a2) = self.to_padded_pair(
            &self.derivative(&v.x1, Axis::X1),
            &self.derivative(&v.x1, Axis::X2),
        );
        let (b1, b2) = self.to_padded_pair(
            &self.derivative(&v.x2, Axis::X1),
            &self.derivative(&v.x2, Axis::X2),
        );
        let p1: Vec<f64> = (0..u1.len()).map(|p| u1[p] * a1[p] + u2[p] * a2[p]).collect();
        let p2: Vec<f64> = (0..u1.len()).map(|p| u1[p] * b1[p] + u2[p] * b2[p]).collect();
        let (x1, x2) = self.from_padded_pair(&p1, &p2);
        SpectralVector::new(x1, x2)
    }

    /// The projected bilinear form `P((u . grad) v)`.
    pub fn bilinear(&self, u: &SpectralVector, v: &SpectralVector) -> SpectralVector {
        self.leray_project(&self.advect_vector(u, v), true)
    }

    pub fn norms(&self, f: &SpectralScalar) -> Norms {
        let mut l2 = 0.0;
        let mut h1 = 0.0;
        let mut h2 = 0.0;
        for (idx, c) in f.coeffs.iter().enumerate() {
            let lam = self.laplacian_eigenvalue(idx);
            let a = c.norm_sqr();
            l2 += a;
            h1 += lam * a;
            h2 += lam * lam * a;
        }
        Norms {
            l2: l2.sqrt(),
            h1: h1.sqrt(),
            h2: h2.sqrt(),
        }
    }

    pub fn vector_norms(&self, v: &SpectralVector) -> Norms {
        let a = self.norms(&v.x1);
        let b = self.norms(&v.x2);
        Norms {
            l2: a.l2.hypot(b.l2),
            h1: a.h1.hypot(b.h1),
            h2: a.h2.hypot(b.h2),
        }
    }

    /// Upper bound on `sup |div v|`: the sum of the divergence's coefficient moduli.
    pub fn max_divergence(&self, v: &SpectralVector) -> f64 {
        self.divergence(v)
            .coeffs
            .iter()
            .map(|c| c.norm())
            .sum::<f64>()
    }

    /// Fails unless `v` is divergence free and mean free relative to its H1 scale.
    pub fn require_solenoidal(&self, v: &SpectralVector, rel_tol: f64) -> Result<(), SpectralError> {
        let scale = self.vector_norms(v).h1.max(f64::MIN_POSITIVE);
        let div = self.max_divergence(v) + v.x1.coeffs[0].norm() + v.x2.coeffs[0].norm();
        let tolerance = rel_tol * scale;
        if div > tolerance {
            return Err(SpectralError::NotSolenoidal {
                divergence: div,
                tolerance,
            });
        }
        Ok(())
    }
}

/// `L2` norm plus `H1` and `H2` seminorms of a field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norms {
    pub l2: f64,
    pub h1: f64,
    pub h2: f64,
}

/// Fourier coefficients of a real scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralScalar {
    n: usize,
    coeffs: Vec<C64>,
}

impl SpectralScalar {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            coeffs: vec![C64::new(0.0, 0.0); n * n],
        }
    }

    pub fn from_coeffs(n: usize, coeffs: Vec<C64>) -> Result<Self, SpectralError> {
        if coeffs.len() != n * n {
            return Err(SpectralError::ShapeMismatch {
                expected: n * n,
                got: coeffs.len(),
            });
        }
        Ok(Self { n, coeffs })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn coeffs(&self) -> &[C64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [C64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<C64> {
        self.coeffs
    }

    /// Coefficient of mode `(k1, k2)`.
    pub fn get(&self, k1: i64, k2: i64) -> C64 {
        self.coeffs[wrap_index(k2, self.n) * self.n + wrap_index(k1, self.n)]
    }

    pub fn mean(&self) -> f64 {
        self.coeffs[0].re
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            n: self.n,
            coeffs: self.coeffs.iter().map(|&c| c * a).collect(),
        }
    }

    pub fn added(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &Self) {
        for (x, &y) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *x += y * a;
        }
    }

    /// Real inner product `integral f g dx`.
    pub fn inner(&self, other: &Self) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Largest deviation from `c(-k) = conj(c(k))`.
    pub fn symmetry_defect(&self) -> f64 {
        let n = self.n;
        let mut worst: f64 = 0.0;
        for i2 in 0..n {
            for i1 in 0..n {
                let a = self.coeffs[i2 * n + i1];
                let b = self.coeffs[((n - i2) % n) * n + (n - i1) % n];
                worst = worst.max((a - b.conj()).norm());
            }
        }
        worst
    }
}

/// A pair of spectral scalars holding the `x1` and `x2` components.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralVector {
    pub x1: SpectralScalar,
    pub x2: SpectralScalar,
}

impl SpectralVector {
    pub fn new(x1: SpectralScalar, x2: SpectralScalar) -> Self {
        debug_assert_eq!(x1.n, x2.n);
        Self { x1, x2 }
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(SpectralScalar::zeros(n), SpectralScalar::zeros(n))
    }

    pub fn n(&self) -> usize {
        self.x1.n
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self::new(self.x1.scaled(a), self.x2.scaled(a))
    }

    pub fn added(&self, other: &Self) -> Self {
        Self::new(self.x1.added(&other.x1), self.x2.added(&other.x2))
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self::new(self.x1.sub(&other.x1), self.x2.sub(&other.x2))
    }

    pub fn axpy(&mut self, a: f64, other: &Self) {
        self.x1.axpy(a, &other.x1);
        self.x2.axpy(a, &other.x2);
    }

    pub fn inner(&self, other: &Self) -> f64 {
        self.x1.inner(&other.x1) + self.x2.inner(&other.x2)
    }

    pub fn is_finite(&self) -> bool {
        self.x1.is_finite() && self.x2.is_finite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sin1(grid: &Grid) -> SpectralScalar {
        grid.transform_forward(&grid.sample(|x, _| (TWO_PI * x).sin())).unwrap()
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn grid_mask_follows_two_thirds_rule() {
        let g = Grid::new(8).unwrap();
        assert_eq!(g.kmax(), 2);
        let ks: Vec<i64> = (0..8).map(|i| g.mode(i).0).collect();
        assert_eq!(ks, vec![0, 1, 2, 3, -4, -3, -2, -1]);
        for idx in 0..g.len() {
            let (k1, k2) = g.mode(idx);
            assert_eq!(g.is_retained(idx), k1.abs() <= 2 && k2.abs() <= 2);
        }
        assert_eq!(Grid::new(64).unwrap().kmax(), 21);
        assert_eq!(Grid::new(7).unwrap_err(), SpectralError::InvalidGridSize(7));
        assert!(Grid::new(6).is_err());
    }

    #[test]
    fn wavenumbers_carry_two_pi() {
        let g = Grid::new(16).unwrap();
        for i in 0..16 {
            assert_eq!(g.wavenumber(i), TWO_PI * g.mode(i).0 as f64);
        }
    }

    #[test]
    fn forward_of_constant_and_sine() {
        let g = Grid::new(16).unwrap();
        let c = g.transform_forward(&vec![3.0; 256]).unwrap();
        assert!((c.get(0, 0).re - 3.0).abs() < 1e-15);
        assert!(c.coeffs().iter().skip(1).all(|z| z.norm() < 1e-15));

        let s = sin1(&g);
        assert!((s.get(1, 0) - C64::new(0.0, -0.5)).norm() < 1e-15);
        assert!((s.get(-1, 0) - C64::new(0.0, 0.5)).norm() < 1e-15);
        let others: f64 = (0..g.len())
            .filter(|&i| !matches!(g.mode(i), (1, 0) | (-1, 0)))
            .map(|i| s.coeffs()[i].norm())
            .sum();
        assert!(others < 1e-13);
    }

    #[test]
    fn round_trip_random_field() {
        let g = Grid::new(32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f: Vec<f64> = (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let back = g.transform_inverse(&g.transform_forward(&f).unwrap()).unwrap();
        let scale = f.iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(max_abs_diff(&f, &back) <= 1e-12 * scale);
        assert_eq!(g.transform_forward(&f).unwrap().symmetry_defect(), 0.0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let g = Grid::new(8).unwrap();
        assert_eq!(
            g.transform_forward(&[0.0; 10]).unwrap_err(),
            SpectralError::ShapeMismatch { expected: 64, got: 10 }
        );
    }

    #[test]
    fn derivatives_of_sine() {
        let g = Grid::new(16).unwrap();
        let s = sin1(&g);
        let d = g.transform_inverse(&g.derivative(&s, Axis::X1)).unwrap();
        let expect = g.sample(|x, _| TWO_PI * (TWO_PI * x).cos());
        assert!(max_abs_diff(&d, &expect) < 1e-12);
        let lap = g.transform_inverse(&g.laplacian(&s)).unwrap();
        let expect = g.sample(|x, _| -TWO_PI * TWO_PI * (TWO_PI * x).sin());
        assert!(max_abs_diff(&lap, &expect) < 1e-11);
        let c = g.transform_forward(&vec![2.5; g.len()]).unwrap();
        assert!(g.laplacian(&c).coeffs().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn curl_examples() {
        let g = Grid::new(16).unwrap();
        let zero = SpectralScalar::zeros(16);
        let b = SpectralVector::new(zero.clone(), sin1(&g));
        let j = g.transform_inverse(&g.curl2d(&b)).unwrap();
        assert!(max_abs_diff(&j, &g.sample(|x, _| TWO_PI * (TWO_PI * x).cos())) < 1e-12);

        let b = SpectralVector::new(
            g.transform_forward(&g.sample(|_, y| -(TWO_PI * y).sin())).unwrap(),
            sin1(&g),
        );
        let j = g.transform_inverse(&g.curl2d(&b)).unwrap();
        let expect = g.sample(|x, y| TWO_PI * ((TWO_PI * x).cos() + (TWO_PI * y).cos()));
        assert!(max_abs_diff(&j, &expect) < 1e-12);

        let phi = g
            .transform_forward(&g.sample(|x, y| (TWO_PI * x).sin() * (2.0 * TWO_PI * y).cos()))
            .unwrap();
        let curl = g.curl2d(&g.gradient(&phi));
        assert!(curl.coeffs().iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn leray_examples() {
        let g = Grid::new(16).unwrap();
        let phi = g
            .transform_forward(&g.sample(|x, y| (TWO_PI * x).cos() * (TWO_PI * y).sin()))
            .unwrap();
        let p = g.leray_project(&g.gradient(&phi), true);
        assert!(g.vector_norms(&p).l2 < 1e-14);

        let v = SpectralVector::new(
            g.transform_forward(&g.sample(|_, y| (TWO_PI * y).sin())).unwrap(),
            SpectralScalar::zeros(16),
        );
        let p = g.leray_project(&v, true);
        assert!(g.vector_norms(&p.sub(&v)).l2 < 1e-14);

        // mean handling
        let mut m = v.clone();
        m.x1.coeffs_mut()[0] = C64::new(0.7, 0.0);
        assert_eq!(g.leray_project(&m, false).x1.mean(), 0.7);
        assert_eq!(g.leray_project(&m, true).x1.mean(), 0.0);
    }

    #[test]
    fn advect_constant_is_zero() {
        let g = Grid::new(16).unwrap();
        let u = g.perp_gradient(&sin1(&g));
        let c = g.transform_forward(&vec![1.5; g.len()]).unwrap();
        assert!(g.norms(&g.advect(&u, &c)).l2 < 1e-15);
    }

    #[test]
    fn norms_of_sine() {
        let g = Grid::new(16).unwrap();
        let nrm = g.norms(&sin1(&g));
        assert!((nrm.l2 - 0.5f64.sqrt()).abs() < 1e-14);
        assert!((nrm.h1 - TWO_PI * 0.5f64.sqrt()).abs() < 1e-12);
        assert!((nrm.h2 - TWO_PI * TWO_PI * 0.5f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn padded_pair_round_trip_on_masked_field() {
        let g = Grid::new(16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f: Vec<f64> = (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = g.truncate(&g.transform_forward(&f).unwrap());
        let b = g.truncate(&sin1(&g));
        let (pa, pb) = g.to_padded_pair(&a, &b);
        let (ra, rb) = g.from_padded_pair(&pa, &pb);
        assert!(g.norms(&ra.sub(&a)).l2 < 1e-14);
        assert!(g.norms(&rb.sub(&b)).l2 < 1e-14);
    }
}
