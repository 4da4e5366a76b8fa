//! Monte Carlo simulation of the jump process generated by `L⁰ = A + B⁰` and
//! probabilistic cross-checks of the PDE solvers.
//!
//! Jumps of size `|y| > δ` are drawn by thinning a constant-intensity proposal
//! `K dy/|y|^{d+α}`; jumps below `δ` are replaced by their compensator drift
//! and, optionally, a covariance-matched Gaussian increment.

use std::collections::HashSet;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::const_solver::Forcing;
use crate::error::{Error, Result};
use crate::grid::{GridFunction, Interpolator, TimeSeries};
use crate::kernel::{cell_of, time_cells, Density, KernelSpec};
use crate::nonlocal::{BOperatorSpec, Generator, VecFn};
use crate::quad::{sphere_area, sphere_rule, KahanSum};

/// Simulation parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct McOptions {
    pub t_final: f64,
    /// Fixed time steps for drift and Gaussian increments.
    pub steps: usize,
    /// Small-jump cut-off; chosen automatically when absent.
    pub delta_cut: Option<f64>,
    /// Expected number of jump proposals per path used by the automatic cut-off.
    pub proposal_budget: f64,
    /// Gaussian replacement of the small jumps (default: on for α >= 1).
    pub gaussian_correction: Option<bool>,
    /// Keep rejected proposals in the event log.
    pub record_rejected: bool,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions { t_final: 1.0, steps: 64, delta_cut: None, proposal_budget: 400.0, gaussian_correction: None, record_rejected: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    /// Accepted jump of the principal part.
    Jump,
    /// Accepted jump of the lower-order part.
    LowerJump,
    Rejected,
    /// Drift and Gaussian increment applied at a step midpoint.
    Continuous,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub size: [f64; 2],
    pub acceptance: f64,
    /// State after the event (on the torus).
    pub state: [f64; 2],
}

/// One simulated path on `[s, T]` with its event log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JumpPath {
    pub seed: u64,
    pub stream: u64,
    pub dim: usize,
    pub start: f64,
    pub t_final: f64,
    pub x0: [f64; 2],
    /// Step grid `s = t₀ < … < t_M = T`.
    pub times: Vec<f64>,
    /// State at each grid time (left limit at the step boundary equals the value by right continuity).
    pub states: Vec<[f64; 2]>,
    pub events: Vec<Event>,
    /// Total displacement without wrapping onto the torus.
    pub displacement: [f64; 2],
}

impl JumpPath {
    /// Piecewise-constant segments `(t_a, t_b, state)` covering `[s, T]`.
    pub fn segments(&self) -> Vec<(f64, f64, [f64; 2])> {
        let mut out = Vec::new();
        let mut t = self.start;
        let mut x = self.x0;
        for e in self.events.iter().filter(|e| e.kind != EventKind::Rejected) {
            if e.time > t {
                out.push((t, e.time, x));
            }
            t = e.time;
            x = e.state;
        }
        if self.t_final > t {
            out.push((t, self.t_final, x));
        }
        out
    }

    /// State at time `t` (right-continuous).
    pub fn state_at(&self, t: f64) -> [f64; 2] {
        let mut x = self.x0;
        for e in self.events.iter().filter(|e| e.kind != EventKind::Rejected) {
            if e.time > t {
                break;
            }
            x = e.state;
        }
        x
    }
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub paths: usize,
    pub s: f64,
    pub x: Vec<f64>,
}

impl McEstimate {
    fn from_samples(samples: &[f64], s: f64, x: &[f64]) -> McEstimate {
        let n = samples.len() as f64;
        let mean: KahanSum = samples.iter().cloned().collect();
        let mean = mean.value() / n;
        let var: KahanSum = samples.iter().map(|v| (v - mean) * (v - mean)).collect();
        let var = if samples.len() > 1 { var.value() / (n - 1.0) } else { 0.0 };
        McEstimate { value: mean, std_error: (var / n).sqrt(), paths: samples.len(), s, x: x.to_vec() }
    }
}

/// Jump family with separable density, thinned against a constant bound.
struct JumpFamily {
    order: f64,
    density: Density,
    bound: f64,
    cells: Vec<(f64, f64)>,
    /// Per time cell and term: `∫_S w b_j dw` and `∫_S w wᵀ b_j dw`.
    first: Vec<Vec<[f64; 2]>>,
    second: Vec<Vec<[f64; 3]>>,
    /// Multiplier of the first moment in the small/large-jump drift.
    drift_factor: f64,
    /// Multiplier of the second moment in the small-jump covariance.
    cov_factor: f64,
    rate: f64,
    gaussian: bool,
}

impl JumpFamily {
    #[allow(clippy::too_many_arguments)]
    fn new(
        density: &Density,
        order: f64,
        compensated_near_zero: bool,
        full_compensation: bool,
        bound: f64,
        dim: usize,
        delta: f64,
        cells: &[(f64, f64)],
        gaussian: bool,
    ) -> Result<JumpFamily> {
        if !density.radially_homogeneous {
            return Err(Error::config("simulation requires densities homogeneous of degree zero in y"));
        }
        let rule = sphere_rule(dim, &density.angular_breaks, 8, 10);
        let mut first = Vec::new();
        let mut second = Vec::new();
        for &(a, b) in cells {
            let t = 0.5 * (a + b);
            let mut f_cell = Vec::new();
            let mut s_cell = Vec::new();
            for term in &density.terms {
                let mut m1 = [0.0; 2];
                let mut m2 = [0.0; 3];
                for (w, wt) in &rule {
                    let v = wt * (term.y_factor)(t, &w[..dim]);
                    m1[0] += v * w[0];
                    m1[1] += v * w[1];
                    m2[0] += v * w[0] * w[0];
                    m2[1] += v * w[0] * w[1];
                    m2[2] += v * w[1] * w[1];
                }
                f_cell.push(m1);
                s_cell.push(m2);
            }
            first.push(f_cell);
            second.push(s_cell);
        }
        // drift of the jumps not simulated as such:
        //  - uncompensated below δ: + ∫_{|y|<δ} y m
        //  - compensated on R^d:    - ∫_{|y|>δ} y m
        //  - compensated on |y|<=1: - ∫_{δ<|y|<=1} y m
        let drift_factor = if !compensated_near_zero {
            delta.powf(1.0 - order) / (1.0 - order)
        } else if full_compensation {
            -delta.powf(1.0 - order) / (order - 1.0)
        } else if order == 1.0 {
            -(1.0 / delta).ln()
        } else {
            -(delta.powf(1.0 - order) - 1.0) / (order - 1.0)
        };
        let cov_factor = delta.powf(2.0 - order) / (2.0 - order);
        let rate = bound * sphere_area(dim) * delta.powf(-order) / order;
        Ok(JumpFamily {
            order,
            density: density.clone(),
            bound,
            cells: cells.to_vec(),
            first,
            second,
            drift_factor,
            cov_factor,
            rate,
            gaussian,
        })
    }

    fn x_factors(&self, t: f64, x: &[f64]) -> Vec<f64> {
        self.density.terms.iter().map(|term| term.x_factor.as_ref().map_or(1.0, |a| a(t, x))).collect()
    }

    /// Drift and covariance `(b, Σ)` of the replaced small jumps at `(t, x)`.
    fn continuous_part(&self, t: f64, x: &[f64]) -> ([f64; 2], [f64; 3]) {
        let c = cell_of(&self.cells, t);
        let a = self.x_factors(t, x);
        let mut drift = [0.0; 2];
        let mut cov = [0.0; 3];
        for (j, aj) in a.iter().enumerate() {
            for k in 0..2 {
                drift[k] += aj * self.first[c][j][k] * self.drift_factor;
            }
            if self.gaussian {
                for k in 0..3 {
                    cov[k] += aj * self.second[c][j][k] * self.cov_factor;
                }
            }
        }
        (drift, cov)
    }
}

/// Simulator for the process generated by `A + B⁰`.
pub struct Simulator {
    dim: usize,
    t_final: f64,
    steps: usize,
    pub delta_cut: f64,
    principal: JumpFamily,
    lower: Option<JumpFamily>,
    drift: Option<VecFn>,
    record_rejected: bool,
}

/// Default cut-off: the larger of the 1% small-jump variance rule and the proposal budget.
pub fn default_delta_cut(alpha: f64, dim: usize, bound: f64, horizon: f64, budget: f64) -> f64 {
    let by_variance = PI * 0.01f64.powf(1.0 / (2.0 - alpha));
    let by_budget = (bound * sphere_area(dim) * horizon / (alpha * budget)).powf(1.0 / alpha);
    by_variance.max(by_budget).min(0.5)
}

impl Simulator {
    pub fn new(spec: &KernelSpec, bspec: &BOperatorSpec, opts: &McOptions) -> Result<Simulator> {
        spec.check_well_formed()?;
        bspec.check(spec.alpha)?;
        bspec.check_generator_part(spec.dim)?;
        if !(opts.t_final > 0.0) || opts.steps == 0 {
            return Err(Error::config("simulation needs T > 0 and at least one step"));
        }
        if spec.alpha == 1.0 {
            let (ts, xs) = crate::kernel::default_samples(spec.dim, opts.t_final);
            for t in &ts {
                for x in &xs {
                    for k in 0..32 {
                        let th = 2.0 * PI * (k as f64 + 0.5) / 32.0;
                        let y = [th.cos(), th.sin()];
                        let ny = [-y[0], -y[1]];
                        let d = spec.density.eval(*t, x, &y[..spec.dim]) - spec.density.eval(*t, x, &ny[..spec.dim]);
                        if d.abs() > 1e-12 {
                            return Err(Error::Assumption("alpha = 1 kernels must be symmetric in y for simulation".into()));
                        }
                    }
                }
            }
        }
        let delta = match opts.delta_cut {
            Some(d) if d > 0.0 && d <= 1.0 => d,
            Some(d) => return Err(Error::config(format!("delta_cut must lie in (0,1], got {d}"))),
            None => default_delta_cut(spec.alpha, spec.dim, spec.big_k, opts.t_final, opts.proposal_budget),
        };
        let mut breaks = spec.time_breaks.clone();
        breaks.retain(|b| *b > 0.0 && *b < opts.t_final);
        let cells = time_cells(&breaks, opts.t_final);
        let gaussian = opts.gaussian_correction.unwrap_or(spec.alpha >= 1.0);
        let principal = JumpFamily::new(
            &spec.density,
            spec.alpha,
            spec.alpha >= 1.0,
            spec.alpha > 1.0,
            spec.big_k,
            spec.dim,
            delta,
            &cells,
            gaussian,
        )?;
        let lower = match &bspec.jump {
            Some(j) if !j.rho.terms.is_empty() => Some(JumpFamily::new(
                &j.rho,
                j.alpha_prime,
                j.alpha_prime >= 1.0,
                false,
                bspec.bound,
                spec.dim,
                delta,
                &cells,
                opts.gaussian_correction.unwrap_or(j.alpha_prime >= 1.0),
            )?),
            _ => None,
        };
        Ok(Simulator {
            dim: spec.dim,
            t_final: opts.t_final,
            steps: opts.steps,
            delta_cut: delta,
            principal,
            lower,
            drift: bspec.drift.clone(),
            record_rejected: opts.record_rejected,
        })
    }

    /// Expected number of proposals per unit time.
    pub fn proposal_rate(&self) -> f64 {
        self.principal.rate + self.lower.as_ref().map_or(0.0, |l| l.rate)
    }

    fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        rng
    }

    /// Simulate one path started at `(s, x)`.
    pub fn path(&self, s: f64, x: &[f64], seed: u64, stream: u64) -> Result<JumpPath> {
        let dim = self.dim;
        if !(s >= 0.0 && s < self.t_final) {
            return Err(Error::Domain(format!("start time {s} outside [0, T)")));
        }
        let mut rng = Simulator::rng(seed, stream);
        let mut state = [0.0; 2];
        state[..dim].copy_from_slice(&x[..dim]);
        let x0 = state;
        let mut disp = [0.0; 2];
        let h = (self.t_final - s) / self.steps as f64;
        let mut times = vec![s];
        let mut states = vec![state];
        let mut events = Vec::new();
        let wrap = |v: f64| v.rem_euclid(2.0 * PI);
        for step in 0..self.steps {
            let t0 = s + step as f64 * h;
            let t1 = if step + 1 == self.steps { self.t_final } else { t0 + h };
            let tm = 0.5 * (t0 + t1);
            // proposal times for both families, merged in time order
            let mut proposals: Vec<(f64, bool)> = Vec::new();
            for (lower, fam) in [(false, Some(&self.principal)), (true, self.lower.as_ref())] {
                if let Some(f) = fam {
                    let n = sample_poisson(&mut rng, f.rate * (t1 - t0));
                    for _ in 0..n {
                        proposals.push((t0 + (t1 - t0) * rng.random::<f64>(), lower));
                    }
                }
            }
            proposals.push((tm, false));
            let continuous_at = proposals.len() - 1;
            let mut order: Vec<usize> = (0..proposals.len()).collect();
            order.sort_by(|a, b| proposals[*a].0.partial_cmp(&proposals[*b].0).unwrap().then(a.cmp(b)));
            for idx in order {
                let (t, lower) = proposals[idx];
                if idx == continuous_at {
                    let inc = self.continuous_increment(&mut rng, t, &state, t1 - t0);
                    for k in 0..dim {
                        disp[k] += inc[k];
                        state[k] = wrap(state[k] + inc[k]);
                    }
                    events.push(Event { time: t, kind: EventKind::Continuous, size: inc, acceptance: 1.0, state });
                    continue;
                }
                let fam = if lower { self.lower.as_ref().unwrap() } else { &self.principal };
                let r = self.principal_radius(&mut rng, fam);
                let y = direction(&mut rng, dim, r);
                let m = fam.density.eval(t, &state[..dim], &y[..dim]);
                let ratio = m / fam.bound;
                if !(0.0..=1.0 + 1e-12).contains(&ratio) {
                    return Err(Error::Assumption(format!(
                        "acceptance ratio {ratio} outside [0,1]: density {m} exceeds the bound {}",
                        fam.bound
                    )));
                }
                if rng.random::<f64>() < ratio {
                    for k in 0..dim {
                        disp[k] += y[k];
                        state[k] = wrap(state[k] + y[k]);
                    }
                    let kind = if lower { EventKind::LowerJump } else { EventKind::Jump };
                    events.push(Event { time: t, kind, size: y, acceptance: ratio, state });
                } else if self.record_rejected {
                    events.push(Event { time: t, kind: EventKind::Rejected, size: y, acceptance: ratio, state });
                }
            }
            times.push(t1);
            states.push(state);
        }
        Ok(JumpPath {
            seed,
            stream,
            dim,
            start: s,
            t_final: self.t_final,
            x0,
            times,
            states,
            events,
            displacement: disp,
        })
    }

    fn principal_radius(&self, rng: &mut ChaCha8Rng, fam: &JumpFamily) -> f64 {
        let u: f64 = 1.0 - rng.random::<f64>();
        self.delta_cut * u.powf(-1.0 / fam.order)
    }

    fn continuous_increment(&self, rng: &mut ChaCha8Rng, t: f64, x: &[f64; 2], h: f64) -> [f64; 2] {
        let dim = self.dim;
        let (mut drift, mut cov) = self.principal.continuous_part(t, &x[..dim]);
        if let Some(l) = &self.lower {
            let (d, c) = l.continuous_part(t, &x[..dim]);
            for k in 0..2 {
                drift[k] += d[k];
            }
            for k in 0..3 {
                cov[k] += c[k];
            }
        }
        if let Some(b) = &self.drift {
            let v = b(t, &x[..dim]);
            drift[0] += v[0];
            drift[1] += v[1];
        }
        let mut inc = [drift[0] * h, drift[1] * h];
        if cov.iter().any(|c| *c != 0.0) {
            let z0: f64 = StandardNormal.sample(rng);
            let z1: f64 = if dim == 2 { StandardNormal.sample(rng) } else { 0.0 };
            // Cholesky factor of h·Σ
            let l00 = (cov[0] * h).max(0.0).sqrt();
            inc[0] += l00 * z0;
            if dim == 2 {
                let l10 = if l00 > 0.0 { cov[1] * h / l00 } else { 0.0 };
                let l11 = (cov[2] * h - l10 * l10).max(0.0).sqrt();
                inc[1] += l10 * z0 + l11 * z1;
            }
        }
        inc
    }

    /// Simulate a batch with explicit `(seed, stream)` pairs; duplicates are rejected.
    pub fn batch(&self, s: f64, x: &[f64], seeds: &[(u64, u64)]) -> Result<Vec<JumpPath>> {
        let mut seen = HashSet::new();
        for p in seeds {
            if !seen.insert(*p) {
                return Err(Error::config(format!("random stream {p:?} is used by more than one path")));
            }
        }
        seeds.par_iter().map(|(a, b)| self.path(s, x, *a, *b)).collect()
    }
}

fn sample_poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|p| p.sample(rng) as u64).unwrap_or(0)
}

fn direction(rng: &mut ChaCha8Rng, dim: usize, r: f64) -> [f64; 2] {
    if dim == 1 {
        if rng.random::<bool>() {
            [r, 0.0]
        } else {
            [-r, 0.0]
        }
    } else {
        let th = 2.0 * PI * rng.random::<f64>();
        [r * th.cos(), r * th.sin()]
    }
}

/// A space-time field evaluated along paths.
enum Field {
    Frames { times: Vec<f64>, interp: Vec<Interpolator> },
    Modulated { interp: Interpolator, envelope: std::sync::Arc<dyn Fn(f64) -> f64 + Send + Sync> },
}

/// Interpolation grid refinement per axis.
fn oversample(dim: usize) -> usize {
    if dim == 1 { 8 } else { 4 }
}

impl Field {
    fn from_forcing(f: &Forcing) -> Field {
        match f {
            Forcing::Static(g) => Field::Frames { times: vec![0.0], interp: vec![Interpolator::new(g, oversample(g.dim))] },
            Forcing::Stamped(s) => Field::from_series(s),
            Forcing::Modulated { profile, envelope } => {
                Field::Modulated { interp: Interpolator::new(profile, oversample(profile.dim)), envelope: envelope.clone() }
            }
        }
    }

    fn from_series(s: &TimeSeries) -> Field {
        Field::Frames { times: s.times(), interp: s.frames.par_iter().map(|g| Interpolator::new(g, oversample(g.dim))).collect() }
    }

    fn value(&self, t: f64, x: &[f64]) -> f64 {
        match self {
            Field::Frames { times, interp } => {
                if times.len() == 1 || t <= times[0] {
                    return interp[0].eval(x);
                }
                let n = times.len();
                if t >= times[n - 1] {
                    return interp[n - 1].eval(x);
                }
                let i = times.partition_point(|s| *s <= t) - 1;
                let th = (t - times[i]) / (times[i + 1] - times[i]);
                (1.0 - th) * interp[i].eval(x) + th * interp[i + 1].eval(x)
            }
            Field::Modulated { interp, envelope } => envelope(t) * interp.eval(x),
        }
    }

    /// `∫_a^b F(r, x) dr`, exact for fields linear in time between stamps.
    fn integral(&self, a: f64, b: f64, x: &[f64]) -> f64 {
        match self {
            Field::Frames { times, interp } => {
                if times.len() == 1 {
                    return (b - a) * interp[0].eval(x);
                }
                let mut acc = 0.0;
                let mut lo = a;
                while lo < b {
                    let next = times.iter().cloned().find(|s| *s > lo).unwrap_or(f64::INFINITY);
                    let hi = next.min(b);
                    acc += (hi - lo) * self.value(0.5 * (lo + hi), x);
                    lo = hi;
                }
                acc
            }
            Field::Modulated { interp, envelope } => {
                let (m, r) = (0.5 * (a + b), 0.5 * (b - a));
                let g = (0.6f64).sqrt();
                let e = r * (5.0 * envelope(m - g * r) + 8.0 * envelope(m) + 5.0 * envelope(m + g * r)) / 9.0;
                e * interp.eval(x)
            }
        }
    }
}

/// `u(s, x) = -E ∫ₛᵀ f(r, X_r) dr` with `X` started at `x` at time `s`.
#[allow(clippy::too_many_arguments)]
pub fn feynman_kac(
    spec: &KernelSpec,
    bspec: &BOperatorSpec,
    forcing: &Forcing,
    s: f64,
    x: &[f64],
    paths: usize,
    seed: u64,
    opts: &McOptions,
) -> Result<McEstimate> {
    let sim = Simulator::new(spec, bspec, opts)?;
    let field = Field::from_forcing(forcing);
    feynman_kac_with(&sim, &field, s, x, paths, seed, 0)
}

fn feynman_kac_with(sim: &Simulator, field: &Field, s: f64, x: &[f64], paths: usize, seed: u64, stream0: u64) -> Result<McEstimate> {
    if paths == 0 {
        return Err(Error::config("at least one path is required"));
    }
    let samples: Vec<f64> = (0..paths as u64)
        .into_par_iter()
        .map(|i| {
            let p = sim.path(s, x, seed, stream0 + i)?;
            let mut acc = KahanSum::default();
            for (a, b, st) in p.segments() {
                acc.add(field.integral(a, b, &st[..sim.dim]));
            }
            Ok(-acc.value())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(McEstimate::from_samples(&samples, s, x))
}

/// Estimates at several probe points with shared setup; probe `i` uses streams `i·paths ..`.
pub fn feynman_kac_probes(
    spec: &KernelSpec,
    bspec: &BOperatorSpec,
    forcing: &Forcing,
    probes: &[(f64, Vec<f64>)],
    paths: usize,
    seed: u64,
    opts: &McOptions,
) -> Result<Vec<McEstimate>> {
    let sim = Simulator::new(spec, bspec, opts)?;
    let field = Field::from_forcing(forcing);
    probes
        .iter()
        .enumerate()
        .map(|(i, (s, x))| feynman_kac_with(&sim, &field, *s, x, paths, seed, (i * paths) as u64))
        .collect()
}

/// Per-increment statistics of the martingale residual.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IncrementStat {
    pub t0: f64,
    pub t1: f64,
    pub mean: f64,
    pub std_error: f64,
    /// `|mean| / SE` (zero when both vanish).
    pub z_score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MartingaleResidual {
    /// `M_t = u(t,X_t) - ∫ₛᵗ f(r,X_r) dr`, the equation-driven residual.
    pub equation: Vec<IncrementStat>,
    /// `M_t = u(t,X_t) - ∫ₛᵗ (∂_t u + L⁰u)(r,X_r) dr` with `∂_t u` from stamp differences.
    pub dynkin: Vec<IncrementStat>,
    pub paths: usize,
}

impl MartingaleResidual {
    pub fn max_z(&self, dynkin: bool) -> f64 {
        let v = if dynkin { &self.dynkin } else { &self.equation };
        v.iter().map(|s| s.z_score).fold(0.0, f64::max)
    }
}

/// `∂_t u` on the stamps by central differences (one-sided at the ends).
fn time_derivative(u: &TimeSeries) -> TimeSeries {
    let n = u.frames.len();
    let frames = (0..n)
        .map(|i| {
            let (a, b) = if n == 1 {
                (0, 0)
            } else if i == 0 {
                (0, 1)
            } else if i == n - 1 {
                (n - 2, n - 1)
            } else {
                (i - 1, i + 1)
            };
            if a == b {
                return u.frames[i].scaled(0.0);
            }
            let dt = u.frames[b].time - u.frames[a].time;
            let mut g = u.frames[b].sub(&u.frames[a]).scaled(1.0 / dt);
            g.time = u.frames[i].time;
            g
        })
        .collect();
    TimeSeries { frames }
}

/// Martingale residual of a candidate solution `u` of `∂_t u + L⁰u = f`, `u(T) = 0`,
/// along paths started at `(s, x)`, over `increments` equal time increments.
#[allow(clippy::too_many_arguments)]
pub fn martingale_residual(
    u: &TimeSeries,
    spec: &KernelSpec,
    bspec: &BOperatorSpec,
    forcing: &Forcing,
    s: f64,
    x: &[f64],
    increments: usize,
    paths: usize,
    seed: u64,
    opts: &McOptions,
) -> Result<MartingaleResidual> {
    let sim = Simulator::new(spec, bspec, opts)?;
    let generator = Generator::new(spec, &BOperatorSpec { zero_order: None, ..bspec.clone() }, u.shape(), opts.t_final)?;
    let dtu = time_derivative(u);
    let lu = TimeSeries {
        frames: u
            .frames
            .iter()
            .zip(&dtu.frames)
            .map(|(g, d)| {
                let mut v = generator.apply(g, g.time);
                v.axpy(1.0, d);
                v.time = g.time;
                v
            })
            .collect(),
    };
    let u_field = Field::from_series(u);
    let g_field = Field::from_series(&lu);
    let f_field = Field::from_forcing(forcing);
    let grid: Vec<f64> = (0..=increments).map(|k| s + (opts.t_final - s) * k as f64 / increments as f64).collect();
    let per_path: Vec<(Vec<f64>, Vec<f64>)> = (0..paths as u64)
        .into_par_iter()
        .map(|i| {
            let p = sim.path(s, x, seed, i)?;
            let segs = p.segments();
            let mut eq = Vec::with_capacity(increments);
            let mut dy = Vec::with_capacity(increments);
            for w in grid.windows(2) {
                let (t0, t1) = (w[0], w[1]);
                let x0 = p.state_at(t0);
                let x1 = p.state_at(t1);
                let du = u_field.value(t1, &x1[..sim.dim]) - u_field.value(t0, &x0[..sim.dim]);
                let mut fi = 0.0;
                let mut gi = 0.0;
                for (a, b, st) in &segs {
                    let (lo, hi) = (a.max(t0), b.min(t1));
                    if hi > lo {
                        fi += f_field.integral(lo, hi, &st[..sim.dim]);
                        gi += g_field.integral(lo, hi, &st[..sim.dim]);
                    }
                }
                eq.push(du - fi);
                dy.push(du - gi);
            }
            Ok((eq, dy))
        })
        .collect::<Result<Vec<_>>>()?;
    let stats = |pick: &dyn Fn(&(Vec<f64>, Vec<f64>)) -> &Vec<f64>| -> Vec<IncrementStat> {
        (0..increments)
            .map(|k| {
                let samples: Vec<f64> = per_path.iter().map(|p| pick(p)[k]).collect();
                let e = McEstimate::from_samples(&samples, grid[k], x);
                let z = if e.std_error > 0.0 {
                    e.value.abs() / e.std_error
                } else if e.value == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                };
                IncrementStat { t0: grid[k], t1: grid[k + 1], mean: e.value, std_error: e.std_error, z_score: z }
            })
            .collect()
    };
    Ok(MartingaleResidual { equation: stats(&|p| &p.0), dynkin: stats(&|p| &p.1), paths })
}

/// Backward solution `u(s) = -v(T - s)` from the forward solution `v` of the time-reversed problem.
pub fn backward_from_forward(v: &TimeSeries, t_final: f64) -> TimeSeries {
    v.reversed(t_final).map(|g| g.scaled(-1.0))
}

/// Evaluate a solution at an off-grid point.
pub fn evaluate(u: &GridFunction, x: &[f64]) -> f64 {
    Interpolator::new(u, oversample(u.dim)).eval(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridShape;
    use crate::kernel::{preset, PresetParams};

    fn iso(alpha: f64, dim: usize) -> KernelSpec {
        preset("isotropic", alpha, dim, 0.5, &PresetParams::default()).unwrap()
    }

    #[test]
    fn all_proposals_accepted_when_density_equals_bound() {
        let mut spec = iso(0.8, 2);
        spec.big_k = 1.0;
        let opts = McOptions { delta_cut: Some(0.2), record_rejected: true, ..McOptions::default() };
        let sim = Simulator::new(&spec, &BOperatorSpec::zero(), &opts).unwrap();
        for i in 0..20 {
            let p = sim.path(0.0, &[1.0, 2.0], 3, i).unwrap();
            assert!(p.events.iter().all(|e| e.kind != EventKind::Rejected));
            assert!(p.events.iter().filter(|e| e.kind == EventKind::Jump).all(|e| e.acceptance == 1.0));
        }
    }

    #[test]
    fn jump_count_matches_levy_mass_beyond_cut() {
        let spec = iso(1.5, 1);
        let delta = 0.3;
        let opts = McOptions { delta_cut: Some(delta), ..McOptions::default() };
        let sim = Simulator::new(&spec, &BOperatorSpec::zero(), &opts).unwrap();
        let n = 4000;
        let seeds: Vec<(u64, u64)> = (0..n).map(|i| (11, i)).collect();
        let paths = sim.batch(0.0, &[0.0], &seeds).unwrap();
        let counts: Vec<f64> =
            paths.iter().map(|p| p.events.iter().filter(|e| e.kind == EventKind::Jump).count() as f64).collect();
        let mean = counts.iter().sum::<f64>() / n as f64;
        let expected = 2.0 * delta.powf(-1.5) / 1.5;
        let se = (expected / n as f64).sqrt();
        assert!((mean - expected).abs() < 4.0 * se, "{mean} vs {expected}");
    }

    #[test]
    fn one_sided_density_only_jumps_forward() {
        let mut spec = iso(0.6, 1);
        spec.density = Density::angular(|_, w| if w[0] > 0.0 { 1.0 } else { 0.0 }, Vec::new());
        let opts = McOptions { delta_cut: Some(0.1), ..McOptions::default() };
        let sim = Simulator::new(&spec, &BOperatorSpec::zero(), &opts).unwrap();
        let mut jumps = 0;
        for i in 0..50 {
            let p = sim.path(0.0, &[0.0], 5, i).unwrap();
            for e in p.events.iter().filter(|e| e.kind == EventKind::Jump) {
                assert!(e.size[0] > 0.0);
                jumps += 1;
            }
        }
        assert!(jumps > 0);
    }

    #[test]
    fn constant_forcing_is_integrated_exactly() {
        let spec = iso(1.2, 2);
        let shape = GridShape::new(2, 16).unwrap();
        let f = Forcing::Static(shape.sample(0.0, |_| 0.75));
        let opts = McOptions { t_final: 2.0, ..McOptions::default() };
        let est = feynman_kac(&spec, &BOperatorSpec::zero(), &f, 0.5, &[0.3, 0.1], 64, 9, &opts).unwrap();
        assert!((est.value + 0.75 * 1.5).abs() < 1e-12);
        assert!(est.std_error < 1e-12);
    }

    #[test]
    fn streams_are_deterministic_and_distinct() {
        let spec = iso(1.5, 2);
        let sim = Simulator::new(&spec, &BOperatorSpec::zero(), &McOptions::default()).unwrap();
        let a = sim.path(0.0, &[0.0, 0.0], 42, 7).unwrap();
        let b = sim.path(0.0, &[0.0, 0.0], 42, 7).unwrap();
        let c = sim.path(0.0, &[0.0, 0.0], 42, 8).unwrap();
        assert_eq!(a.displacement, b.displacement);
        assert_eq!(a.events.len(), b.events.len());
        assert_ne!(a.displacement, c.displacement);
        assert!(sim.batch(0.0, &[0.0, 0.0], &[(1, 2), (1, 2)]).is_err());
    }

    #[test]
    fn symmetric_kernel_has_centred_displacement() {
        let spec = iso(1.5, 2);
        let opts = McOptions { t_final: 0.5, ..McOptions::default() };
        let sim = Simulator::new(&spec, &BOperatorSpec::zero(), &opts).unwrap();
        let n = 2000;
        let seeds: Vec<(u64, u64)> = (0..n).map(|i| (17, i)).collect();
        let paths = sim.batch(0.0, &[0.0, 0.0], &seeds).unwrap();
        for k in 0..2 {
            // truncate to keep the heavy tail from dominating the standard error
            let v: Vec<f64> = paths.iter().map(|p| p.displacement[k].clamp(-3.0, 3.0)).collect();
            let e = McEstimate::from_samples(&v, 0.0, &[0.0]);
            assert!(e.value.abs() < 4.0 * e.std_error + 1e-3, "{} ± {}", e.value, e.std_error);
        }
    }

    #[test]
    fn primitive_density_must_not_exceed_bound() {
        let mut spec = iso(0.7, 1);
        spec.big_k = 0.5;
        let opts = McOptions { delta_cut: Some(0.1), ..McOptions::default() };
        let sim = Simulator::new(&spec, &BOperatorSpec::zero(), &opts).unwrap();
        assert!(matches!(sim.path(0.0, &[0.0], 1, 0), Err(Error::Assumption(_))));
    }

    #[test]
    fn default_cut_respects_budget() {
        let d = default_delta_cut(1.5, 2, 1.0, 1.0, 400.0);
        let rate = sphere_area(2) * d.powf(-1.5) / 1.5;
        assert!(rate <= 400.0 + 1e-9);
        assert!(d <= 0.5);
    }
}
