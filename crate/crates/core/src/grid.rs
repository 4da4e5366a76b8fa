//! Uniform periodic grids on the torus `[0, 2π)^d` and their spectral calculus.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Real function sampled on `n^dim` equispaced points of the 2π-periodic torus.
///
/// Storage is row-major: the flat index of `(i0, i1)` is `i0 * n + i1`, and the
/// point has coordinates `(i0 h, i1 h)` with `h = 2π / n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub dim: usize,
    pub n: usize,
    pub values: Vec<f64>,
    pub time: f64,
}

/// Layout of a grid, without values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridShape {
    pub dim: usize,
    pub n: usize,
}

impl GridShape {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::config(format!("dimension must be 1 or 2, got {dim}")));
        }
        if n < 4 || !n.is_power_of_two() {
            return Err(Error::config(format!("points per axis must be a power of two >= 4, got {n}")));
        }
        Ok(GridShape { dim, n })
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.n as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Coordinates of the flat index `idx`.
    pub fn point(&self, idx: usize) -> [f64; 2] {
        let h = self.spacing();
        match self.dim {
            1 => [idx as f64 * h, 0.0],
            _ => [(idx / self.n) as f64 * h, (idx % self.n) as f64 * h],
        }
    }

    /// Integer multi-index of the flat index `idx`.
    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        match self.dim {
            1 => [idx, 0],
            _ => [idx / self.n, idx % self.n],
        }
    }

    pub fn flat(&self, i0: usize, i1: usize) -> usize {
        match self.dim {
            1 => i0 % self.n,
            _ => (i0 % self.n) * self.n + (i1 % self.n),
        }
    }

    /// Signed wavenumber of an FFT bin along one axis, in `[-n/2, n/2)`.
    pub fn wavenumber(&self, bin: usize) -> i64 {
        let n = self.n as i64;
        let b = bin as i64;
        if b < n / 2 {
            b
        } else {
            b - n
        }
    }

    /// Wave vector of the flat spectral index `idx`.
    pub fn frequency(&self, idx: usize) -> [f64; 2] {
        let [i0, i1] = self.multi_index(idx);
        match self.dim {
            1 => [self.wavenumber(i0) as f64, 0.0],
            _ => [self.wavenumber(i0) as f64, self.wavenumber(i1) as f64],
        }
    }

    /// Flat index of the negated frequency, modulo the grid.
    pub fn negated(&self, idx: usize) -> usize {
        let [i0, i1] = self.multi_index(idx);
        let neg = |i: usize| (self.n - i) % self.n;
        self.flat(neg(i0), neg(i1))
    }

    pub fn zeros(&self, time: f64) -> GridFunction {
        GridFunction { dim: self.dim, n: self.n, values: vec![0.0; self.len()], time }
    }

    pub fn sample(&self, time: f64, f: impl Fn(&[f64]) -> f64) -> GridFunction {
        let values = (0..self.len())
            .map(|i| {
                let p = self.point(i);
                f(&p[..self.dim])
            })
            .collect();
        GridFunction { dim: self.dim, n: self.n, values, time }
    }
}

thread_local! {
    static PLANNER: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if let Some(f) = p.1.get(&(n, inverse)) {
            return f.clone();
        }
        let f = if inverse { p.0.plan_fft_inverse(n) } else { p.0.plan_fft_forward(n) };
        p.1.insert((n, inverse), f.clone());
        f
    })
}

fn transform(shape: GridShape, data: &mut [Complex64], inverse: bool) {
    let n = shape.n;
    let fft = plan(n, inverse);
    match shape.dim {
        1 => fft.process(data),
        _ => {
            for row in data.chunks_exact_mut(n) {
                fft.process(row);
            }
            let mut col = vec![Complex64::new(0.0, 0.0); n];
            for j in 0..n {
                for i in 0..n {
                    col[i] = data[i * n + j];
                }
                fft.process(&mut col);
                for i in 0..n {
                    data[i * n + j] = col[i];
                }
            }
        }
    }
}

/// Normalised forward transform: `û_k = N^{-d} Σ_j u_j e^{-i k·x_j}`.
pub fn forward(shape: GridShape, values: &[f64]) -> Vec<Complex64> {
    let mut data: Vec<Complex64> = values.iter().map(|v| Complex64::new(*v, 0.0)).collect();
    transform(shape, &mut data, false);
    let scale = 1.0 / shape.len() as f64;
    for c in &mut data {
        *c *= scale;
    }
    data
}

/// Inverse of [`forward`]: `u_j = Σ_k û_k e^{i k·x_j}`.
pub fn inverse(shape: GridShape, coeffs: &[Complex64]) -> Vec<Complex64> {
    let mut data = coeffs.to_vec();
    transform(shape, &mut data, true);
    data
}

/// Inverse transform keeping the real part.
pub fn inverse_real(shape: GridShape, coeffs: &[Complex64]) -> Vec<f64> {
    inverse(shape, coeffs).into_iter().map(|c| c.re).collect()
}

/// Replace `M(k)` by `(M(k) + conj M(-k)) / 2` so that real inputs stay real.
/// Only bins on a Nyquist line change when `M` is already Hermitian.
pub fn hermitian_symmetrize(shape: GridShape, table: &mut [Complex64]) {
    let orig = table.to_vec();
    for (idx, t) in table.iter_mut().enumerate() {
        let partner = orig[shape.negated(idx)].conj();
        *t = 0.5 * (orig[idx] + partner);
    }
}

impl GridFunction {
    pub fn shape(&self) -> GridShape {
        GridShape { dim: self.dim, n: self.n }
    }

    pub fn with_values(&self, values: Vec<f64>) -> GridFunction {
        GridFunction { dim: self.dim, n: self.n, values, time: self.time }
    }

    pub fn spectrum(&self) -> Vec<Complex64> {
        forward(self.shape(), &self.values)
    }

    pub fn from_spectrum(shape: GridShape, coeffs: &[Complex64], time: f64) -> GridFunction {
        GridFunction { dim: shape.dim, n: shape.n, values: inverse_real(shape, coeffs), time }
    }

    /// Apply a Fourier multiplier `M(k)`; the result is projected to real values.
    pub fn apply_multiplier(&self, mult: impl Fn([f64; 2]) -> Complex64) -> GridFunction {
        let shape = self.shape();
        let mut spec = self.spectrum();
        for (idx, c) in spec.iter_mut().enumerate() {
            *c *= mult(shape.frequency(idx));
        }
        GridFunction::from_spectrum(shape, &spec, self.time)
    }

    /// Mixed spectral derivative `D^γ u`, with `γ = (γ0, γ1)`.
    pub fn derivative(&self, gamma: [usize; 2]) -> GridFunction {
        if gamma == [0, 0] {
            return self.clone();
        }
        let n = self.n as f64;
        self.apply_multiplier(|k| {
            let mut m = Complex64::new(1.0, 0.0);
            for axis in 0..self.dim {
                let g = gamma[axis];
                if g == 0 {
                    continue;
                }
                // the Nyquist bin has no real odd derivative
                if g % 2 == 1 && (k[axis].abs() - n / 2.0).abs() < 0.5 {
                    return Complex64::new(0.0, 0.0);
                }
                m *= Complex64::new(0.0, k[axis]).powu(g as u32);
            }
            m
        })
    }

    pub fn gradient(&self) -> Vec<GridFunction> {
        (0..self.dim)
            .map(|a| {
                let mut g = [0, 0];
                g[a] = 1;
                self.derivative(g)
            })
            .collect()
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn scaled(&self, c: f64) -> GridFunction {
        self.with_values(self.values.iter().map(|v| c * v).collect())
    }

    pub fn add(&self, other: &GridFunction) -> GridFunction {
        self.with_values(self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &GridFunction) -> GridFunction {
        self.with_values(self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect())
    }

    pub fn axpy(&mut self, a: f64, other: &GridFunction) {
        for (v, o) in self.values.iter_mut().zip(&other.values) {
            *v += a * o;
        }
    }

    /// Largest `|k|_∞` among modes with non-negligible amplitude.
    pub fn bandwidth(&self) -> f64 {
        let shape = self.shape();
        let spec = self.spectrum();
        let peak = spec.iter().fold(0.0f64, |m, c| m.max(c.norm()));
        if peak == 0.0 {
            return 0.0;
        }
        spec.iter()
            .enumerate()
            .filter(|(_, c)| c.norm() > 1e-13 * peak)
            .map(|(i, _)| {
                let k = shape.frequency(i);
                k[0].abs().max(k[1].abs())
            })
            .fold(0.0, f64::max)
    }

    /// Spectral resampling onto `m` points per axis (zero padding or truncation).
    pub fn resample(&self, m: usize) -> GridFunction {
        let src = self.shape();
        let dst = GridShape { dim: self.dim, n: m };
        let spec = self.spectrum();
        let mut out = vec![Complex64::new(0.0, 0.0); dst.len()];
        let lim = (self.n.min(m) / 2) as i64;
        for (idx, c) in spec.iter().enumerate() {
            let k = src.frequency(idx);
            let (k0, k1) = (k[0] as i64, k[1] as i64);
            if k0.abs() >= lim || k1.abs() >= lim {
                // Nyquist modes are dropped; callers pass band-limited data.
                continue;
            }
            let bin = |k: i64| k.rem_euclid(m as i64) as usize;
            out[dst.flat(bin(k0), bin(k1))] += *c;
        }
        GridFunction::from_spectrum(dst, &out, self.time)
    }

    /// Translate by an arbitrary displacement `y` (exact for band-limited data).
    pub fn shifted(&self, y: &[f64]) -> GridFunction {
        self.apply_multiplier(|k| {
            let phase: f64 = (0..self.dim).map(|a| k[a] * y[a]).sum();
            Complex64::from_polar(1.0, phase)
        })
    }
}

/// Local interpolation of a grid function at off-grid points.
///
/// The data are first refined spectrally by `oversample`, then evaluated with
/// four-point Lagrange interpolation per axis.
#[derive(Debug, Clone)]
pub struct Interpolator {
    fine: GridFunction,
}

impl Interpolator {
    pub fn new(u: &GridFunction, oversample: usize) -> Self {
        let fine = if oversample <= 1 { u.clone() } else { u.resample(u.n * oversample) };
        Interpolator { fine }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let n = self.fine.n;
        let h = 2.0 * PI / n as f64;
        let weights = |coord: f64| -> (i64, [f64; 4]) {
            let s = coord.rem_euclid(2.0 * PI) / h;
            let i = s.floor();
            let t = s - i;
            let w = [
                -t * (t - 1.0) * (t - 2.0) / 6.0,
                (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
                -(t + 1.0) * t * (t - 2.0) / 2.0,
                (t + 1.0) * t * (t - 1.0) / 6.0,
            ];
            (i as i64 - 1, w)
        };
        let wrap = |i: i64| i.rem_euclid(n as i64) as usize;
        let v = &self.fine.values;
        match self.fine.dim {
            1 => {
                let (i0, w) = weights(x[0]);
                (0..4).map(|a| w[a] * v[wrap(i0 + a as i64)]).sum()
            }
            _ => {
                let (i0, w0) = weights(x[0]);
                let (i1, w1) = weights(x[1]);
                let mut acc = 0.0;
                for a in 0..4 {
                    let row = wrap(i0 + a as i64) * n;
                    let mut r = 0.0;
                    for b in 0..4 {
                        r += w1[b] * v[row + wrap(i1 + b as i64)];
                    }
                    acc += w0[a] * r;
                }
                acc
            }
        }
    }
}

/// Time-stamped sequence of grid functions, linear in time between stamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub frames: Vec<GridFunction>,
}

impl TimeSeries {
    pub fn new(frames: Vec<GridFunction>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::config("time series needs at least one frame"));
        }
        for w in frames.windows(2) {
            if w[1].time <= w[0].time {
                return Err(Error::config("time stamps must be strictly increasing"));
            }
            if w[1].shape() != w[0].shape() {
                return Err(Error::config("frames must share one grid"));
            }
        }
        Ok(TimeSeries { frames })
    }

    /// Time-independent series on `[0, t_final]`.
    pub fn constant(f: &GridFunction, t_final: f64) -> Self {
        let mut a = f.clone();
        a.time = 0.0;
        let mut b = f.clone();
        b.time = t_final;
        TimeSeries { frames: vec![a, b] }
    }

    pub fn shape(&self) -> GridShape {
        self.frames[0].shape()
    }

    pub fn times(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.time).collect()
    }

    pub fn t_start(&self) -> f64 {
        self.frames[0].time
    }

    pub fn t_end(&self) -> f64 {
        self.frames[self.frames.len() - 1].time
    }

    /// Locate `t`: returns `(i, θ)` with `t = (1-θ) t_i + θ t_{i+1}`, clamped.
    pub fn locate(&self, t: f64) -> (usize, f64) {
        let n = self.frames.len();
        if n == 1 || t <= self.frames[0].time {
            return (0, 0.0);
        }
        if t >= self.frames[n - 1].time {
            return (n.saturating_sub(2), if n == 1 { 0.0 } else { 1.0 });
        }
        let i = self.frames.partition_point(|f| f.time <= t) - 1;
        let (t0, t1) = (self.frames[i].time, self.frames[i + 1].time);
        (i, (t - t0) / (t1 - t0))
    }

    pub fn at(&self, t: f64) -> GridFunction {
        if self.frames.len() == 1 {
            let mut f = self.frames[0].clone();
            f.time = t;
            return f;
        }
        let (i, th) = self.locate(t);
        let a = &self.frames[i];
        let b = &self.frames[i + 1];
        let values = a.values.iter().zip(&b.values).map(|(x, y)| (1.0 - th) * x + th * y).collect();
        GridFunction { dim: a.dim, n: a.n, values, time: t }
    }

    pub fn sup(&self) -> f64 {
        self.frames.iter().map(|f| f.sup()).fold(0.0, f64::max)
    }

    /// Reverse time on `[0, t_final]`: frame at `t` moves to `t_final - t`.
    pub fn reversed(&self, t_final: f64) -> TimeSeries {
        let frames = self
            .frames
            .iter()
            .rev()
            .map(|f| {
                let mut g = f.clone();
                g.time = t_final - f.time;
                g
            })
            .collect();
        TimeSeries { frames }
    }

    pub fn map(&self, mut f: impl FnMut(&GridFunction) -> GridFunction) -> TimeSeries {
        TimeSeries {
            frames: self
                .frames
                .iter()
                .map(|g| {
                    let mut out = f(g);
                    out.time = g.time;
                    out
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_reproduces_values() {
        for dim in [1, 2] {
            let shape = GridShape::new(dim, 16).unwrap();
            let u = shape.sample(0.0, |x| (x[0]).sin() + 0.3 * (3.0 * x[x.len() - 1]).cos() + 0.1);
            let back = GridFunction::from_spectrum(shape, &u.spectrum(), 0.0);
            for (a, b) in u.values.iter().zip(&back.values) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn derivative_of_cosine() {
        let shape = GridShape::new(1, 32).unwrap();
        let u = shape.sample(0.0, |x| (3.0 * x[0]).cos());
        let du = u.derivative([1, 0]);
        for i in 0..32 {
            let x = shape.point(i)[0];
            assert!((du.values[i] + 3.0 * (3.0 * x).sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn shift_matches_analytic_translation() {
        let shape = GridShape::new(2, 16).unwrap();
        let u = shape.sample(0.0, |x| (x[0] + 2.0 * x[1]).cos());
        let s = u.shifted(&[0.37, -1.1]);
        for i in 0..shape.len() {
            let p = shape.point(i);
            assert!((s.values[i] - (p[0] + 0.37 + 2.0 * (p[1] - 1.1)).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolator_is_accurate_for_smooth_data() {
        let shape = GridShape::new(1, 32).unwrap();
        let u = shape.sample(0.0, |x| (x[0]).sin() + (4.0 * x[0]).cos());
        let it = Interpolator::new(&u, 8);
        for x in [0.123, 1.7, 5.9, -2.0] {
            let exact = f64::sin(x) + (4.0 * x).cos();
            assert!((it.eval(&[x]) - exact).abs() < 1e-5);
        }
    }

    #[test]
    fn negated_index_maps_frequency() {
        let shape = GridShape::new(2, 8).unwrap();
        for idx in 0..shape.len() {
            let k = shape.frequency(idx);
            let kn = shape.frequency(shape.negated(idx));
            for a in 0..2 {
                let expect = -k[a];
                assert!(kn[a] == expect || (kn[a] == -4.0 && expect == 4.0));
            }
        }
    }
}
