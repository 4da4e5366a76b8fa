//! Variable-coefficient problem `∂ₜu = (A + B)u - λu + f` by frozen-coefficient
//! Picard iteration around an x-independent reference kernel.

use serde::{Deserialize, Serialize};

use crate::const_solver::{integrate_modes, verify_defs_identity_full, DefsRoute, Forcing, SolveConfig};
use crate::error::{Error, Result};
use crate::grid::{inverse_real, GridFunction, TimeSeries};
use crate::kernel::{Density, KernelSpec, SymbolQuadrature, SymbolTable};
use crate::nonlocal::{BOperatorSpec, Generator};

/// Choice of the x-independent reference kernel `m̄`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reference {
    /// The spherical minorant `m₀`.
    Minorant,
    /// The grid average of `m(t, ·, y)` over x.
    XAverage,
}

#[derive(Debug, Clone)]
pub struct PicardConfig {
    pub solve: SolveConfig,
    pub reference: Reference,
    /// Stop once `sup |u_n - u_{n-1}| <= tol`.
    pub tol: f64,
    pub max_iterations: usize,
    /// Iterations before the contraction estimate is judged.
    pub warmup: usize,
}

impl PicardConfig {
    pub fn new(solve: SolveConfig) -> Self {
        PicardConfig { solve, reference: Reference::Minorant, tol: 1e-6, max_iterations: 50, warmup: 2 }
    }
}

/// Progress of the iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationState {
    pub iterations: usize,
    /// `r_n = sup_{t,x} |u_n - u_{n-1}|`.
    pub residuals: Vec<f64>,
    /// `r_n / r_{n-1}` for every `n >= 2`.
    pub ratios: Vec<f64>,
    /// Geometric mean of the last three ratios.
    pub q_hat: Option<f64>,
    pub lambda: f64,
    pub converged: bool,
    pub reference: Reference,
    pub defs_residual: Option<f64>,
}

/// Everything fixed across iterations.
struct Frozen {
    generator: Generator,
    table: SymbolTable,
    steps: Vec<f64>,
}

fn reference_table(spec: &KernelSpec, reference: Reference, shape: crate::grid::GridShape, cells: &[(f64, f64)]) -> Result<SymbolTable> {
    let q = SymbolQuadrature::default();
    let mut psi = Vec::with_capacity(cells.len());
    for &(a, b) in cells {
        let t = 0.5 * (a + b);
        let density: Density = match reference {
            Reference::Minorant => spec.minorant.clone(),
            Reference::XAverage => spec.density.x_average(shape, t),
        };
        let table = SymbolTable::direct(&density, spec.alpha, spec.truncation(), shape, &[(a, b)], &q)?;
        psi.extend(table.psi);
    }
    Ok(SymbolTable { shape, cells: cells.to_vec(), psi, normalization: 1.0 })
}

fn freeze(spec: &KernelSpec, bspec: &BOperatorSpec, config: &PicardConfig) -> Result<Frozen> {
    config.solve.validate()?;
    spec.check_well_formed()?;
    let shape = config.solve.forcing.shape();
    let t_final = config.solve.t_final;
    let generator = Generator::new(spec, bspec, shape, t_final)?;
    let cells = spec.time_cells(t_final);
    let table = reference_table(spec, config.reference, shape, &cells)?;
    Ok(Frozen { generator, table, steps: config.solve.step_times(&spec.time_breaks) })
}

/// `f + (A^m - A^{m̄})u + Bu` on the step stamps.
fn perturbed_forcing(fr: &Frozen, forcing: &Forcing, u: &TimeSeries) -> Result<Forcing> {
    let frames = u
        .frames
        .iter()
        .map(|g| {
            let t = g.time;
            let uhat = g.spectrum();
            let mut out = fr.generator.a.apply_spectrum(&uhat, t);
            let c = fr.table.cell_of(t);
            let reference: Vec<_> = fr.table.psi[c].iter().zip(&uhat).map(|(p, v)| p * v).collect();
            for (o, r) in out.values.iter_mut().zip(inverse_real(g.shape(), &reference)) {
                *o -= r;
            }
            out.axpy(1.0, &fr.generator.apply_b(g, t));
            out.axpy(1.0, &forcing.at(t));
            out.time = t;
            out
        })
        .collect();
    Ok(Forcing::Stamped(TimeSeries::new(frames)?))
}

fn sup_diff(a: &TimeSeries, b: &TimeSeries) -> f64 {
    a.frames.iter().zip(&b.frames).map(|(x, y)| x.sub(y).sup()).fold(0.0, f64::max)
}

/// Geometric mean of the last `CONSECUTIVE` ratios (fewer at the start).
fn windowed_rate(ratios: &[f64]) -> f64 {
    let tail = &ratios[ratios.len().saturating_sub(CONSECUTIVE)..];
    if tail.iter().any(|q| *q == 0.0) {
        return 0.0;
    }
    (tail.iter().map(|q| q.ln()).sum::<f64>() / tail.len() as f64).exp()
}

/// Run the iteration with an iteration budget; `strict` turns `q̂ >= 1` after warmup into an error.
fn iterate(
    fr: &Frozen,
    config: &PicardConfig,
    lambda: f64,
    forcing: &Forcing,
    budget: usize,
    strict: bool,
) -> Result<(TimeSeries, IterationState)> {
    let mut u = integrate_modes(&fr.table, lambda, forcing, &fr.steps)?;
    let mut state = IterationState {
        iterations: 0,
        residuals: Vec::new(),
        ratios: Vec::new(),
        q_hat: None,
        lambda,
        converged: false,
        reference: config.reference,
        defs_residual: None,
    };
    for n in 1..=budget {
        let f_n = perturbed_forcing(fr, forcing, &u)?;
        let next = integrate_modes(&fr.table, lambda, &f_n, &fr.steps)?;
        let r = sup_diff(&next, &u);
        if !r.is_finite() {
            return Err(Error::NonConvergence { q_hat: f64::INFINITY, lambda, iterations: n });
        }
        u = next;
        state.iterations = n;
        if let Some(prev) = state.residuals.last() {
            let q = if *prev > 0.0 { r / prev } else { 0.0 };
            state.ratios.push(q);
            state.q_hat = Some(windowed_rate(&state.ratios));
        }
        state.residuals.push(r);
        if r <= config.tol {
            state.converged = true;
            break;
        }
        if strict && n > config.warmup {
            if let Some(q) = state.q_hat {
                if q >= 1.0 {
                    return Err(Error::NonConvergence { q_hat: q, lambda, iterations: n });
                }
            }
        }
    }
    Ok((u, state))
}

/// Frozen-coefficient Picard iteration
/// `u_n = R_{m̄,λ}[f + (A^m - A^{m̄}) u_{n-1} + B u_{n-1}]`, `u_0 = R_{m̄,λ} f`.
pub fn picard_solve(spec: &KernelSpec, bspec: &BOperatorSpec, config: &PicardConfig) -> Result<(TimeSeries, IterationState)> {
    let fr = freeze(spec, bspec, config)?;
    let (u, mut state) = iterate(&fr, config, config.solve.lambda, &config.solve.forcing, config.max_iterations, true)?;
    let defs = verify_defs_identity_full(&u, spec, bspec, config.solve.lambda, &config.solve.forcing, DefsRoute::Spectral)?;
    state.defs_residual = Some(defs.max_residual);
    Ok((u, state))
}

/// One probed damping level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LambdaProbe {
    pub lambda: f64,
    pub ratios: Vec<f64>,
    pub residuals: Vec<f64>,
    pub contracts: bool,
}

#[derive(Debug, Clone)]
pub struct LambdaCalibration {
    pub lambda0: f64,
    pub probes: Vec<LambdaProbe>,
    /// Solution at the requested λ (by the exponential shift when λ < λ₀).
    pub solution: TimeSeries,
    pub state: IterationState,
}

/// Threshold on `q̂` and number of consecutive ratios required to accept a damping level.
const CONTRACTION: f64 = 0.8;
const CONSECUTIVE: usize = 3;
const LAMBDA_LIMIT: f64 = 1_048_576.0;

/// Double λ from 1 until the iteration contracts with `q̂ <= 0.8`, then solve at the requested λ. A request below λ₀
/// is solved at λ₀ for `f̃ = e^{-(λ₀-λ)t} f` and shifted back by `e^{(λ₀-λ)t}`.
pub fn calibrate_lambda(spec: &KernelSpec, bspec: &BOperatorSpec, config: &PicardConfig) -> Result<LambdaCalibration> {
    let fr = freeze(spec, bspec, config)?;
    let mut probes = Vec::new();
    let mut lambda = 1.0;
    let lambda0 = loop {
        let budget = config.warmup + CONSECUTIVE + 1;
        let (_, st) = iterate(&fr, config, lambda, &config.solve.forcing, budget, false)?;
        let contracts = st.converged || (st.ratios.len() >= CONSECUTIVE && windowed_rate(&st.ratios) <= CONTRACTION);
        probes.push(LambdaProbe { lambda, ratios: st.ratios.clone(), residuals: st.residuals.clone(), contracts });
        if contracts {
            break lambda;
        }
        lambda *= 2.0;
        if lambda > LAMBDA_LIMIT {
            let q = probes.last().and_then(|p| p.ratios.last().cloned()).unwrap_or(f64::NAN);
            return Err(Error::NonConvergence { q_hat: q, lambda: lambda / 2.0, iterations: probes.len() });
        }
    };
    let requested = config.solve.lambda;
    let (solution, state) = if requested >= lambda0 {
        picard_solve(spec, bspec, config)?
    } else {
        let mu = lambda0 - requested;
        let mut shifted = config.clone();
        shifted.solve.lambda = lambda0;
        shifted.solve.forcing = config.solve.forcing.exp_scaled(1.0, -mu);
        let fr_shift = Frozen { generator: fr.generator, table: fr.table, steps: fr.steps };
        let (ut, mut st) = iterate(&fr_shift, &shifted, lambda0, &shifted.solve.forcing, shifted.max_iterations, true)?;
        let u = ut.map(|g| g.scaled((mu * g.time).exp()));
        let defs = verify_defs_identity_full(&u, spec, bspec, requested, &config.solve.forcing, DefsRoute::Spectral)?;
        st.defs_residual = Some(defs.max_residual);
        (u, st)
    };
    Ok(LambdaCalibration { lambda0, probes, solution, state })
}

/// Sup distance between two solutions on matching stamps.
pub fn solution_distance(a: &TimeSeries, b: &TimeSeries) -> f64 {
    sup_diff(a, b)
}

/// `u(t)` on the stamps of a solution.
pub fn frame_at(u: &TimeSeries, t: f64) -> GridFunction {
    u.at(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridShape;
    use crate::kernel::{preset, PresetParams};

    fn sector(alpha: f64) -> KernelSpec {
        preset("sector-measurable", alpha, 1, 0.5, &PresetParams { x_amplitude: 1.0, ..Default::default() }).unwrap()
    }

    fn forcing(n: usize) -> Forcing {
        let shape = GridShape::new(1, n).unwrap();
        Forcing::Static(shape.sample(0.0, |x| (x[0]).cos() + 0.5 * (2.0 * x[0] + 1.0).sin()))
    }

    #[test]
    fn x_independent_kernel_converges_immediately() {
        let spec = preset("smooth-arc", 1.5, 1, 0.5, &PresetParams::default()).unwrap();
        let mut cfg = PicardConfig::new(SolveConfig { lambda: 1.0, t_final: 0.5, time_cells: 8, forcing: forcing(32) });
        cfg.reference = Reference::XAverage;
        let (_, st) = picard_solve(&spec, &BOperatorSpec::zero(), &cfg).unwrap();
        assert_eq!(st.iterations, 1);
        assert!(st.converged && st.residuals[0] == 0.0);
        let cal = calibrate_lambda(&spec, &BOperatorSpec::zero(), &cfg).unwrap();
        assert_eq!(cal.lambda0, 1.0);
    }

    #[test]
    fn sector_kernel_contracts() {
        let spec = sector(1.5);
        let cfg = PicardConfig::new(SolveConfig { lambda: 20.0, t_final: 1.0, time_cells: 64, forcing: forcing(64) });
        let (_, st) = picard_solve(&spec, &BOperatorSpec::zero(), &cfg).unwrap();
        assert!(st.converged, "{st:?}");
        assert!(st.q_hat.unwrap() < 0.8, "{st:?}");
        assert!(st.iterations <= 30);
        assert!(st.defs_residual.unwrap() <= 1e-3 * 1.5, "{st:?}");
    }

    #[test]
    fn references_agree() {
        let spec = sector(1.5);
        let mut cfg = PicardConfig::new(SolveConfig { lambda: 20.0, t_final: 0.5, time_cells: 128, forcing: forcing(32) });
        let (a, _) = picard_solve(&spec, &BOperatorSpec::zero(), &cfg).unwrap();
        cfg.reference = Reference::XAverage;
        let (b, _) = picard_solve(&spec, &BOperatorSpec::zero(), &cfg).unwrap();
        assert!(solution_distance(&a, &b) <= 5.0 * cfg.tol);
    }

    #[test]
    fn shift_back_matches_direct_solve() {
        let spec = sector(1.5);
        let cfg = PicardConfig::new(SolveConfig { lambda: 0.0, t_final: 0.5, time_cells: 32, forcing: forcing(32) });
        let (direct, st) = picard_solve(&spec, &BOperatorSpec::zero(), &cfg).unwrap();
        assert!(st.converged);
        let cal = calibrate_lambda(&spec, &BOperatorSpec::zero(), &cfg).unwrap();
        let d = solution_distance(&direct, &cal.solution);
        assert!(d <= 2e-3 * direct.sup(), "lambda0={} d={d}", cal.lambda0);
    }
}
