//! Constant-coefficient Cauchy problem `∂ₜu = Au - λu + f`, `u(0) = 0`, for
//! x-independent kernels, solved mode by mode in Fourier space.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{inverse, GridFunction, GridShape, TimeSeries};
use crate::kernel::{KernelSpec, SymbolTable};
use crate::nonlocal::{apply_a, apply_b, BOperatorSpec, Generator};

/// Right-hand side `f(t, x)`.
#[derive(Clone)]
pub enum Forcing {
    /// Time-independent.
    Static(GridFunction),
    /// Piecewise linear in time between the stamps.
    Stamped(TimeSeries),
    /// `e(t) · g(x)`.
    Modulated { profile: GridFunction, envelope: Arc<dyn Fn(f64) -> f64 + Send + Sync> },
}

impl std::fmt::Debug for Forcing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Forcing::Static(g) => write!(f, "Static(n={})", g.n),
            Forcing::Stamped(s) => write!(f, "Stamped({} frames)", s.frames.len()),
            Forcing::Modulated { profile, .. } => write!(f, "Modulated(n={})", profile.n),
        }
    }
}

impl Forcing {
    pub fn shape(&self) -> GridShape {
        match self {
            Forcing::Static(g) => g.shape(),
            Forcing::Stamped(s) => s.shape(),
            Forcing::Modulated { profile, .. } => profile.shape(),
        }
    }

    pub fn at(&self, t: f64) -> GridFunction {
        match self {
            Forcing::Static(g) => GridFunction { time: t, ..g.clone() },
            Forcing::Stamped(s) => s.at(t),
            Forcing::Modulated { profile, envelope } => GridFunction { time: t, ..profile.scaled(envelope(t)) },
        }
    }

    /// Times at which the forcing has kinks.
    pub fn stamps(&self) -> Vec<f64> {
        match self {
            Forcing::Stamped(s) => s.times(),
            _ => Vec::new(),
        }
    }

    /// `sup_{t,x} |f|` on the given times (plus the stamps).
    pub fn sup_on(&self, times: &[f64]) -> f64 {
        let mut ts = times.to_vec();
        ts.extend(self.stamps());
        ts.iter().map(|t| self.at(*t).sup()).fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Forcing::Static(g) => g.sup() == 0.0,
            Forcing::Stamped(s) => s.sup() == 0.0,
            Forcing::Modulated { profile, .. } => profile.sup() == 0.0,
        }
    }

    /// `f(T - t)`.
    pub fn time_reversed(&self, t_final: f64) -> Forcing {
        match self {
            Forcing::Static(g) => Forcing::Static(g.clone()),
            Forcing::Stamped(s) => Forcing::Stamped(s.reversed(t_final)),
            Forcing::Modulated { profile, envelope } => {
                let e = envelope.clone();
                Forcing::Modulated { profile: profile.clone(), envelope: Arc::new(move |t| e(t_final - t)) }
            }
        }
    }

    /// `c · e^{rate t} f(t)`; stamped forcings are rescaled frame by frame.
    pub fn exp_scaled(&self, c: f64, rate: f64) -> Forcing {
        match self {
            Forcing::Static(g) => Forcing::Modulated { profile: g.clone(), envelope: Arc::new(move |t| c * (rate * t).exp()) },
            Forcing::Modulated { profile, envelope } => {
                let e = envelope.clone();
                Forcing::Modulated { profile: profile.clone(), envelope: Arc::new(move |t| c * (rate * t).exp() * e(t)) }
            }
            Forcing::Stamped(s) => Forcing::Stamped(s.map(|g| g.scaled(c * (rate * g.time).exp()))),
        }
    }
}

/// Parameters of one solve on `[0, T]`.
#[derive(Debug, Clone)]
pub struct SolveConfig {
    pub lambda: f64,
    pub t_final: f64,
    /// Number of uniform time cells (kernel and forcing breakpoints are added).
    pub time_cells: usize,
    pub forcing: Forcing,
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.t_final > 0.0) {
            return Err(Error::config(format!("T must be positive, got {}", self.t_final)));
        }
        if self.time_cells == 0 {
            return Err(Error::config("at least one time cell is required"));
        }
        if let Forcing::Stamped(s) = &self.forcing {
            if s.t_start() > 0.0 || s.t_end() < self.t_final {
                return Err(Error::config("forcing stamps must cover [0, T]"));
            }
        }
        Ok(())
    }

    /// Time grid: `N_t` uniform cells refined by the given breakpoints and the forcing stamps.
    pub fn step_times(&self, breaks: &[f64]) -> Vec<f64> {
        let mut ts: Vec<f64> = (0..=self.time_cells).map(|i| self.t_final * i as f64 / self.time_cells as f64).collect();
        ts.extend(breaks.iter().cloned());
        ts.extend(self.forcing.stamps());
        ts.retain(|t| *t >= 0.0 && *t <= self.t_final);
        ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ts.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * self.t_final);
        ts
    }
}

/// `K_{s,t}(ξ) = exp ∫ₛᵗ ψ(r, ξ) dr` and its density `G_{s,t}` on the torus.
#[derive(Debug, Clone)]
pub struct HeatKernel {
    pub s: f64,
    pub t: f64,
    pub multiplier: Vec<Complex64>,
    /// Density with respect to Lebesgue measure on `[0, 2π)^d`.
    pub density: GridFunction,
}

impl HeatKernel {
    pub fn mass(&self) -> f64 {
        self.density.values.iter().sum::<f64>() * self.density.shape().cell_volume()
    }
}

pub fn heat_kernel(table: &SymbolTable, s: f64, t: f64) -> Result<HeatKernel> {
    if !(t > s) {
        return Err(Error::Domain(format!("heat kernel needs s < t, got s = {s}, t = {t}")));
    }
    let shape = table.shape;
    let multiplier: Vec<Complex64> = (0..shape.len()).map(|k| table.integrated(s, t, k).exp()).collect();
    let vol = (2.0 * std::f64::consts::PI).powi(shape.dim as i32);
    let values = inverse(shape, &multiplier).into_iter().map(|c| c.re / vol).collect();
    Ok(HeatKernel { s, t, multiplier, density: GridFunction { dim: shape.dim, n: shape.n, values, time: t } })
}

/// `heat_kernel` for the kernel's own density, which must not depend on x.
pub fn heat_kernel_for(spec: &KernelSpec, shape: GridShape, s: f64, t: f64) -> Result<HeatKernel> {
    if !spec.density.is_x_independent() {
        return Err(Error::config("the heat kernel needs an x-independent kernel"));
    }
    let t_final = t.max(s).max(1e-300);
    heat_kernel(&SymbolTable::for_kernel(spec, shape, t_final)?, s, t)
}

fn phi12(z: Complex64) -> (Complex64, Complex64) {
    if z.norm() < 1e-2 {
        let mut p1 = Complex64::new(0.0, 0.0);
        let mut p2 = Complex64::new(0.0, 0.0);
        let mut term = Complex64::new(1.0, 0.0);
        let mut fact1 = 1.0;
        for k in 0..10 {
            fact1 *= (k + 1) as f64;
            p1 += term / fact1;
            p2 += term / (fact1 * (k + 2) as f64);
            term *= z;
        }
        (p1, p2)
    } else {
        let e = z.exp();
        ((e - 1.0) / z, (e - 1.0 - z) / (z * z))
    }
}

/// Exponential integrator for `û' = (ψ(t,ξ) - λ)û + f̂` on the given time grid,
/// exact for forcing piecewise linear between grid points and ψ constant on each step.
pub fn integrate_modes(table: &SymbolTable, lambda: f64, forcing: &Forcing, times: &[f64]) -> Result<TimeSeries> {
    let shape = table.shape;
    if forcing.shape() != shape {
        return Err(Error::config("forcing and symbol table live on different grids"));
    }
    let len = shape.len();
    let mut uhat = vec![Complex64::new(0.0, 0.0); len];
    let mut frames = Vec::with_capacity(times.len());
    frames.push(shape.zeros(times[0]));
    let mut fprev = forcing.at(times[0]).spectrum();
    for w in times.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        let h = t1 - t0;
        let cell = table.cell_of(0.5 * (t0 + t1));
        let fnext = forcing.at(t1).spectrum();
        for k in 0..len {
            let z = (table.psi[cell][k] - lambda) * h;
            let (p1, p2) = phi12(z);
            uhat[k] = z.exp() * uhat[k] + h * (p1 * fprev[k] + p2 * (fnext[k] - fprev[k]));
        }
        frames.push(GridFunction::from_spectrum(shape, &uhat, t1));
        fprev = fnext;
    }
    TimeSeries::new(frames)
}

/// Solve `∂ₜu = Au - λu + f`, `u(0) = 0` for an x-independent kernel.
pub fn resolve(spec: &KernelSpec, config: &SolveConfig) -> Result<TimeSeries> {
    config.validate()?;
    spec.check_well_formed()?;
    if !spec.density.is_x_independent() {
        return Err(Error::config("the constant-coefficient solver needs an x-independent kernel"));
    }
    let table = SymbolTable::for_kernel(spec, config.forcing.shape(), config.t_final)?;
    integrate_modes(&table, config.lambda, &config.forcing, &config.step_times(&spec.time_breaks))
}

/// Operator used when checking the integral identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DefsRoute {
    /// Symbols on the dual grid.
    Spectral,
    /// Real-space quadrature of the jump integrals.
    Quadrature,
}

/// Result of the integral-identity check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DefsResidual {
    /// `max_{t,x} |u(t,x) - ∫₀ᵗ [Lu - λu + f] ds|`.
    pub max_residual: f64,
    pub at_time: f64,
    pub forcing_sup: f64,
}

/// Trapezoidal check of `u(t) = ∫₀ᵗ [Lu - λu + f](s) ds` on the stamps of `u`,
/// with `L = A + B`. Operators are evaluated in the time cell of each step.
pub fn verify_defs_identity_full(
    u: &TimeSeries,
    spec: &KernelSpec,
    bspec: &BOperatorSpec,
    lambda: f64,
    forcing: &Forcing,
    route: DefsRoute,
) -> Result<DefsResidual> {
    let shape = u.shape();
    let t_final = u.t_end();
    let generator = match route {
        DefsRoute::Spectral => Some(Generator::new(spec, bspec, shape, t_final)?),
        DefsRoute::Quadrature => None,
    };
    let cells = spec.time_cells(t_final);
    let apply = |g: &GridFunction, t_cell: f64| -> Result<GridFunction> {
        let mut out = match &generator {
            Some(gen) => gen.apply(g, t_cell),
            None => {
                let mut a = apply_a(g, spec, t_cell)?;
                a.axpy(1.0, &apply_b(g, bspec, spec.alpha, t_cell)?);
                a
            }
        };
        out.axpy(-lambda, g);
        Ok(out)
    };
    let mut integral = shape.zeros(u.t_start());
    let mut worst = (u.frames[0].sup(), u.t_start());
    for w in u.frames.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let h = b.time - a.time;
        let mid = 0.5 * (a.time + b.time);
        let cell = crate::kernel::cell_of(&cells, mid);
        let t_cell = 0.5 * (cells[cell].0 + cells[cell].1);
        let mut ga = apply(a, t_cell)?;
        ga.axpy(1.0, &forcing.at(a.time));
        let mut gb = apply(b, t_cell)?;
        gb.axpy(1.0, &forcing.at(b.time));
        integral.axpy(0.5 * h, &ga);
        integral.axpy(0.5 * h, &gb);
        let r = b.sub(&integral).sup();
        if r > worst.0 {
            worst = (r, b.time);
        }
    }
    Ok(DefsResidual { max_residual: worst.0, at_time: worst.1, forcing_sup: forcing.sup_on(&u.times()) })
}

/// Integral identity for `L = A` (no lower-order part).
pub fn verify_defs_identity(
    u: &TimeSeries,
    spec: &KernelSpec,
    config: &SolveConfig,
    route: DefsRoute,
) -> Result<DefsResidual> {
    verify_defs_identity_full(u, spec, &BOperatorSpec::zero(), config.lambda, &config.forcing, route)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{preset, symbol_direct, PresetParams};

    fn iso(alpha: f64, dim: usize) -> KernelSpec {
        preset("isotropic", alpha, dim, 0.5, &PresetParams::default()).unwrap()
    }

    #[test]
    fn single_mode_closed_form() {
        let spec = iso(1.5, 1);
        let shape = GridShape::new(1, 32).unwrap();
        for k in [1.0, 2.0, 4.0] {
            let ck = -symbol_direct(&spec, 0.0, &[0.0], &[k]).re;
            for lambda in [0.0, 1.0, 10.0] {
                let f = shape.sample(0.0, |x| (k * x[0]).cos());
                let cfg = SolveConfig { lambda, t_final: 1.0, time_cells: 8, forcing: Forcing::Static(f.clone()) };
                let u = resolve(&spec, &cfg).unwrap();
                for frame in &u.frames {
                    let a = (1.0 - (-(lambda + ck) * frame.time).exp()) / (lambda + ck);
                    let err = frame.sub(&f.scaled(a)).sup();
                    assert!(err <= 1e-6 * a.max(1e-300) || a == 0.0 && err < 1e-15, "k={k} lambda={lambda}: {err}");
                }
            }
        }
    }

    #[test]
    fn zero_forcing_gives_zero() {
        let shape = GridShape::new(1, 16).unwrap();
        let cfg = SolveConfig { lambda: 1.0, t_final: 1.0, time_cells: 4, forcing: Forcing::Static(shape.zeros(0.0)) };
        let u = resolve(&iso(0.8, 1), &cfg).unwrap();
        assert_eq!(u.sup(), 0.0);
        let r = verify_defs_identity(&u, &iso(0.8, 1), &cfg, DefsRoute::Spectral).unwrap();
        assert_eq!(r.max_residual, 0.0);
    }

    #[test]
    fn heat_kernel_identities() {
        let spec = iso(1.2, 1);
        let shape = GridShape::new(1, 64).unwrap();
        let table = SymbolTable::for_kernel(&spec, shape, 2.0).unwrap();
        let g = heat_kernel(&table, 0.0, 1.0).unwrap();
        assert!((g.mass() - 1.0).abs() < 1e-12);
        let gmax = g.density.max();
        assert!(g.density.min() >= -1e-6 * gmax);
        let a = heat_kernel(&table, 0.0, 0.4).unwrap();
        let b = heat_kernel(&table, 0.4, 1.0).unwrap();
        for k in 0..shape.len() {
            assert!((a.multiplier[k] * b.multiplier[k] - g.multiplier[k]).norm() < 1e-12);
        }
        assert!(matches!(heat_kernel(&table, 1.0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn defs_residual_decreases_with_steps() {
        let spec = iso(1.5, 1);
        let shape = GridShape::new(1, 32).unwrap();
        let f = shape.sample(0.0, |x| (2.0 * x[0]).cos());
        let mut last = f64::INFINITY;
        for nt in [8, 16, 32] {
            let cfg = SolveConfig { lambda: 1.0, t_final: 1.0, time_cells: nt, forcing: Forcing::Static(f.clone()) };
            let u = resolve(&spec, &cfg).unwrap();
            let r = verify_defs_identity(&u, &spec, &cfg, DefsRoute::Quadrature).unwrap().max_residual;
            assert!(r <= 0.5 * last, "{r} vs {last}");
            last = r;
        }
        assert!(last < 1e-2);
    }

    #[test]
    fn linear_in_forcing() {
        let spec = preset("smooth-arc", 0.9, 1, 0.5, &PresetParams::default()).unwrap();
        let shape = GridShape::new(1, 32).unwrap();
        let f = shape.sample(0.0, |x| (x[0]).sin() + 0.3 * (3.0 * x[0]).cos());
        let g = shape.sample(0.0, |x| (2.0 * x[0]).cos());
        let solve = |h: &GridFunction| {
            resolve(&spec, &SolveConfig { lambda: 2.0, t_final: 0.5, time_cells: 5, forcing: Forcing::Static(h.clone()) }).unwrap()
        };
        let combo = f.scaled(2.0).add(&g.scaled(-0.5));
        let (uf, ug, uc) = (solve(&f), solve(&g), solve(&combo));
        for i in 0..uc.frames.len() {
            let lin = uf.frames[i].scaled(2.0).add(&ug.frames[i].scaled(-0.5));
            assert!(uc.frames[i].sub(&lin).sup() < 1e-12);
        }
    }
}
