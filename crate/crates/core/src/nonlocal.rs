//! Application of the jump operators `A`, `B`, the fractional Laplacian, and the
//! Komatsu increment identity.
//!
//! Two independent routes are provided for jump operators: a Fourier route
//! (`Σ_j a_j(t,x) F⁻¹[ψ_j û]` with symbols from y-space quadrature) and a
//! real-space quadrature of the compensated integrand.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::grid::{inverse_real, GridFunction, GridShape};
use crate::holder::composite_norm;
use crate::kernel::{
    cell_of, fractional_laplacian_constant, norm, oscillatory_tail, Density, KernelSpec, SymbolQuadrature,
    Truncation, XFn,
};
use crate::quad::{sphere_area, KahanSum, Rule};

/// Vector field `b(t, x)`.
pub type VecFn = Arc<dyn Fn(f64, &[f64]) -> [f64; 2] + Send + Sync>;

/// Jump part of `B`: jumps `c(t,x,υ) = υ` against `ρ(t,x,υ) dυ/|υ|^{d+α'}`.
#[derive(Debug, Clone)]
pub struct BJump {
    pub alpha_prime: f64,
    pub rho: Density,
}

/// Lower-order operator `Bu = b·∇u + ∫[u(x+υ) - u(x) - χ(υ)(∇u, υ)] ρ π(dυ) + l u`.
#[derive(Clone, Default)]
pub struct BOperatorSpec {
    pub drift: Option<VecFn>,
    pub zero_order: Option<XFn>,
    pub jump: Option<BJump>,
    /// Bound `K` on `|b|_β + |l|_β` and on `|ρ(·,υ)|_β`.
    pub bound: f64,
}

impl std::fmt::Debug for BOperatorSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BOperatorSpec")
            .field("drift", &self.drift.is_some())
            .field("zero_order", &self.zero_order.is_some())
            .field("jump", &self.jump)
            .field("bound", &self.bound)
            .finish()
    }
}

impl BOperatorSpec {
    pub fn zero() -> Self {
        BOperatorSpec { bound: 1.0, ..Default::default() }
    }

    pub fn is_zero(&self) -> bool {
        self.drift.is_none() && self.zero_order.is_none() && self.jump.as_ref().is_none_or(|j| j.rho.terms.is_empty())
    }

    /// Compensation used for the jump part: the unit ball when `α' >= 1`, none otherwise.
    pub fn truncation(alpha_prime: f64) -> Truncation {
        if alpha_prime >= 1.0 {
            Truncation::Unit
        } else {
            Truncation::None
        }
    }

    /// Order restrictions relative to the principal part of order `alpha`.
    pub fn check(&self, alpha: f64) -> Result<()> {
        if let Some(j) = &self.jump {
            if !(j.alpha_prime > 0.0 && j.alpha_prime < alpha) {
                return Err(Error::config(format!(
                    "jump order of B must satisfy 0 < alpha' < alpha = {alpha}, got {}",
                    j.alpha_prime
                )));
            }
        }
        if self.drift.is_some() && alpha < 1.0 {
            return Err(Error::config("a drift term requires alpha >= 1"));
        }
        Ok(())
    }

    /// `∫_{|υ|≤1} |υ|^α π(dυ) + ∫_{|υ|>1} (|υ|^{α∧1} ∧ 1) π(dυ)` in closed form.
    pub fn integrability(&self, alpha: f64, dim: usize) -> f64 {
        match &self.jump {
            None => 0.0,
            Some(j) => sphere_area(dim) * (1.0 / (alpha - j.alpha_prime) + 1.0 / j.alpha_prime),
        }
    }

    /// Same operator with time reversed on `[0, t_final]`.
    pub fn time_reversed(&self, t_final: f64) -> BOperatorSpec {
        BOperatorSpec {
            drift: self.drift.clone().map(|b| {
                let f: VecFn = Arc::new(move |t, x| b(t_final - t, x));
                f
            }),
            zero_order: self.zero_order.clone().map(|l| {
                let f: XFn = Arc::new(move |t, x| l(t_final - t, x));
                f
            }),
            jump: self.jump.as_ref().map(|j| BJump { alpha_prime: j.alpha_prime, rho: j.rho.time_reversed(t_final) }),
            bound: self.bound,
        }
    }

    /// `B⁰` (the part admissible for the martingale problem) requires `l = 0` and `ρ >= 0`.
    pub fn check_generator_part(&self, dim: usize) -> Result<()> {
        if self.zero_order.is_some() {
            return Err(Error::config("the simulated operator requires l = 0"));
        }
        if let Some(j) = &self.jump {
            let (ts, xs) = crate::kernel::default_samples(dim, 1.0);
            for t in ts {
                for x in &xs {
                    for k in 0..16 {
                        let th = 2.0 * PI * k as f64 / 16.0;
                        let y = [0.5 * th.cos(), 0.5 * th.sin()];
                        if j.rho.eval(t, x, &y[..dim]) < 0.0 {
                            return Err(Error::config("the simulated operator requires rho >= 0"));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// `-c_{d,α}|ξ|^α û` with `c` from the isotropic symbol.
pub fn frac_laplacian(u: &GridFunction, alpha: f64) -> GridFunction {
    let c = fractional_laplacian_constant(alpha, u.dim);
    let dim = u.dim;
    u.apply_multiplier(|k| {
        let r2 = k[0] * k[0] + if dim == 2 { k[1] * k[1] } else { 0.0 };
        Complex64::new(-c * r2.powf(alpha / 2.0), 0.0)
    })
}

// ---------------------------------------------------------------------------
// Fourier route

struct SpectralTerm {
    x_factor: Option<XFn>,
    /// Symbol of the y-factor per time cell.
    tables: Vec<Vec<Complex64>>,
}

/// Jump operator `Σ_j a_j(t,x) F⁻¹[ψ_j(t,·) û]` for a separable density.
pub struct SpectralOperator {
    pub shape: GridShape,
    pub cells: Vec<(f64, f64)>,
    terms: Vec<SpectralTerm>,
}

impl SpectralOperator {
    pub fn new(
        density: &Density,
        p: f64,
        trunc: Truncation,
        shape: GridShape,
        cells: &[(f64, f64)],
        q: &SymbolQuadrature,
    ) -> Result<SpectralOperator> {
        trunc.check(p)?;
        let terms = density
            .terms
            .iter()
            .map(|term| {
                let single = Density {
                    terms: vec![crate::kernel::SeparableTerm { x_factor: None, y_factor: term.y_factor.clone() }],
                    angular_breaks: density.angular_breaks.clone(),
                    radially_homogeneous: density.radially_homogeneous,
                };
                let table = crate::kernel::SymbolTable::direct(&single, p, trunc, shape, cells, q)?;
                Ok(SpectralTerm { x_factor: term.x_factor.clone(), tables: table.psi })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SpectralOperator { shape, cells: cells.to_vec(), terms })
    }

    /// Principal part `A` of a kernel.
    pub fn for_kernel(spec: &KernelSpec, shape: GridShape, t_final: f64) -> Result<SpectralOperator> {
        SpectralOperator::new(
            &spec.density,
            spec.alpha,
            spec.truncation(),
            shape,
            &spec.time_cells(t_final),
            &SymbolQuadrature::default(),
        )
    }

    pub fn is_x_independent(&self) -> bool {
        self.terms.iter().all(|t| t.x_factor.is_none())
    }

    /// Combined symbol of the x-independent terms in the cell containing `t`.
    pub fn symbol(&self, t: f64) -> Vec<Complex64> {
        let c = cell_of(&self.cells, t);
        let mut out = vec![Complex64::new(0.0, 0.0); self.shape.len()];
        for term in &self.terms {
            if term.x_factor.is_none() {
                for (o, v) in out.iter_mut().zip(&term.tables[c]) {
                    *o += v;
                }
            }
        }
        out
    }

    pub fn apply(&self, u: &GridFunction, t: f64) -> GridFunction {
        self.apply_spectrum(&u.spectrum(), t)
    }

    pub fn apply_spectrum(&self, uhat: &[Complex64], t: f64) -> GridFunction {
        let shape = self.shape;
        let c = cell_of(&self.cells, t);
        let mut out = vec![0.0; shape.len()];
        let mut plain = vec![Complex64::new(0.0, 0.0); shape.len()];
        let mut any_plain = false;
        for term in &self.terms {
            let table = &term.tables[c];
            match &term.x_factor {
                None => {
                    any_plain = true;
                    for ((p, v), uh) in plain.iter_mut().zip(table).zip(uhat) {
                        *p += v * uh;
                    }
                }
                Some(a) => {
                    let prod: Vec<Complex64> = table.iter().zip(uhat).map(|(v, uh)| v * uh).collect();
                    let vals = inverse_real(shape, &prod);
                    for (idx, (o, v)) in out.iter_mut().zip(vals).enumerate() {
                        let x = shape.point(idx);
                        *o += a(t, &x[..shape.dim]) * v;
                    }
                }
            }
        }
        if any_plain {
            for (o, v) in out.iter_mut().zip(inverse_real(shape, &plain)) {
                *o += v;
            }
        }
        GridFunction { dim: shape.dim, n: shape.n, values: out, time: t }
    }
}

/// The full operator `L = A + B` on a fixed grid, applied through the Fourier route.
pub struct Generator {
    pub alpha: f64,
    pub a: SpectralOperator,
    pub b_jump: Option<SpectralOperator>,
    pub drift: Option<VecFn>,
    pub zero_order: Option<XFn>,
}

impl Generator {
    pub fn new(spec: &KernelSpec, bspec: &BOperatorSpec, shape: GridShape, t_final: f64) -> Result<Generator> {
        bspec.check(spec.alpha)?;
        let cells = spec.time_cells(t_final);
        let a = SpectralOperator::for_kernel(spec, shape, t_final)?;
        let b_jump = match &bspec.jump {
            Some(j) if !j.rho.terms.is_empty() => Some(SpectralOperator::new(
                &j.rho,
                j.alpha_prime,
                BOperatorSpec::truncation(j.alpha_prime),
                shape,
                &cells,
                &SymbolQuadrature::default(),
            )?),
            _ => None,
        };
        Ok(Generator { alpha: spec.alpha, a, b_jump, drift: bspec.drift.clone(), zero_order: bspec.zero_order.clone() })
    }

    pub fn shape(&self) -> GridShape {
        self.a.shape
    }

    pub fn apply_a(&self, u: &GridFunction, t: f64) -> GridFunction {
        self.a.apply(u, t)
    }

    pub fn apply_b(&self, u: &GridFunction, t: f64) -> GridFunction {
        apply_b_parts(u, self.b_jump.as_ref(), self.drift.as_ref(), self.zero_order.as_ref(), t)
    }

    pub fn apply(&self, u: &GridFunction, t: f64) -> GridFunction {
        let mut out = self.apply_a(u, t);
        out.axpy(1.0, &self.apply_b(u, t));
        out.time = t;
        out
    }
}

fn apply_b_parts(
    u: &GridFunction,
    jump: Option<&SpectralOperator>,
    drift: Option<&VecFn>,
    zero_order: Option<&XFn>,
    t: f64,
) -> GridFunction {
    let shape = u.shape();
    let mut out = match jump {
        Some(j) => j.apply(u, t),
        None => shape.zeros(t),
    };
    if let Some(b) = drift {
        let grad = u.gradient();
        for idx in 0..shape.len() {
            let x = shape.point(idx);
            let bv = b(t, &x[..shape.dim]);
            for (a, g) in grad.iter().enumerate() {
                out.values[idx] += bv[a] * g.values[idx];
            }
        }
    }
    if let Some(l) = zero_order {
        for idx in 0..shape.len() {
            let x = shape.point(idx);
            out.values[idx] += l(t, &x[..shape.dim]) * u.values[idx];
        }
    }
    out.time = t;
    out
}

// ---------------------------------------------------------------------------
// real-space route

/// Node layout of the real-space quadrature of the compensated jump integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealSpaceQuadrature {
    /// `|y|` beyond which the integral is taken as a Fourier multiplier of the tail.
    pub outer_radius: f64,
    /// Radius (in grid cells) below which the integrand is replaced by its Taylor expansion.
    pub inner_cells: f64,
    pub radial_refine: usize,
    pub angular_refine: usize,
    pub order: usize,
}

impl Default for RealSpaceQuadrature {
    fn default() -> Self {
        RealSpaceQuadrature { outer_radius: 2.0, inner_cells: 1e-3, radial_refine: 1, angular_refine: 1, order: 8 }
    }
}

impl RealSpaceQuadrature {
    pub fn finer(&self, factor: usize) -> Self {
        RealSpaceQuadrature {
            radial_refine: self.radial_refine * factor,
            angular_refine: self.angular_refine * factor,
            ..*self
        }
    }
}

fn radial_nodes(shape: GridShape, q: &RealSpaceQuadrature) -> (f64, Rule) {
    let dx = shape.spacing();
    let r0 = q.inner_cells * dx;
    let mut rule = Rule::log_panels(r0, dx, 2.0 * q.radial_refine as f64, q.order);
    let mut cuts = vec![dx];
    if dx < 1.0 && q.outer_radius > 1.0 {
        cuts.push(1.0);
    }
    cuts.push(q.outer_radius);
    let width = dx / q.radial_refine as f64;
    for w in cuts.windows(2) {
        let panels = ((w[1] - w[0]) / width).ceil().max(1.0) as usize;
        let h = (w[1] - w[0]) / panels as f64;
        for k in 0..panels {
            rule.push_panel(w[0] + k as f64 * h, w[0] + (k + 1) as f64 * h, q.order);
        }
    }
    (r0, rule)
}

/// Directions for the ring of radius `r`, resolving the oscillation of the
/// highest grid mode along the ring.
fn ring_directions(dim: usize, breaks: &[f64], r: f64, kmax: f64, q: &RealSpaceQuadrature) -> Vec<([f64; 2], f64)> {
    if dim == 1 {
        return vec![([1.0, 0.0], 1.0), ([-1.0, 0.0], 1.0)];
    }
    let mut cuts: Vec<f64> = breaks.iter().map(|b| b.rem_euclid(2.0 * PI)).collect();
    cuts.push(0.0);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-13);
    cuts.push(cuts[0] + 2.0 * PI);
    let target = 2.0 * PI / (kmax * r).max(8.0) / q.angular_refine as f64;
    let mut rule = Rule::default();
    for w in cuts.windows(2) {
        let panels = ((w[1] - w[0]) / target).ceil().max(1.0) as usize;
        let h = (w[1] - w[0]) / panels as f64;
        for k in 0..panels {
            rule.push_panel(w[0] + k as f64 * h, w[0] + (k + 1) as f64 * h, q.order);
        }
    }
    rule.nodes.iter().zip(&rule.weights).map(|(th, w)| ([th.cos(), th.sin()], *w)).collect()
}

/// `∫_{s0}^∞ (e^{iσs} - 1 - iσ χ s) s^{-1-p} ds`.
fn compensated_tail(sigma: f64, p: f64, chi: f64, s0: f64) -> Complex64 {
    let big = 64.0;
    let i = Complex64::new(0.0, 1.0);
    let start = s0.max(1e-12);
    let end = start.max(big);
    let mut acc = oscillatory_tail(sigma, 1.0 + p, end) - end.powf(-p) / p;
    if chi != 0.0 {
        acc -= i * sigma * end.powf(1.0 - p) / (p - 1.0);
    }
    if start < end {
        let mut rule = Rule::default();
        if start < 1.0 {
            rule = Rule::log_panels(start, 1.0, 2.0, 8);
        }
        let a = start.max(1.0);
        let panels = (end - a).ceil() as usize;
        let h = (end - a) / panels.max(1) as f64;
        for k in 0..panels {
            rule.push_panel(a + k as f64 * h, a + (k + 1) as f64 * h, 8);
        }
        for (s, w) in rule.nodes.iter().zip(&rule.weights) {
            let g = Complex64::from_polar(1.0, sigma * s) - 1.0 - i * sigma * chi * s;
            acc += g * w * s.powf(-1.0 - p);
        }
    }
    acc
}

/// Real-space quadrature of `∫ [u(x+y) - u(x) - χ(y)(∇u(x), y)] m(t,x,y) dy/|y|^{d+p}`.
///
/// Shifted values `u(x+y)` come from exact band-limited translation. The inner
/// ball uses the second-order Taylor expansion with the spectral Hessian; the
/// region beyond `outer_radius` is applied as a Fourier multiplier whose radial
/// integral is evaluated with the density frozen at the outer radius.
pub fn apply_jump_quadrature(
    u: &GridFunction,
    density: &Density,
    p: f64,
    trunc: Truncation,
    t: f64,
    q: &RealSpaceQuadrature,
) -> Result<GridFunction> {
    trunc.check(p)?;
    let shape = u.shape();
    let dim = shape.dim;
    let len = shape.len();
    let uhat = u.spectrum();
    let grad = u.gradient();
    let hess: Vec<GridFunction> = if dim == 1 {
        vec![u.derivative([2, 0])]
    } else {
        vec![u.derivative([2, 0]), u.derivative([1, 1]), u.derivative([0, 2])]
    };
    let points: Vec<[f64; 2]> = (0..len).map(|i| shape.point(i)).collect();
    let xfac: Vec<Vec<f64>> = density
        .terms
        .iter()
        .map(|term| match &term.x_factor {
            None => vec![1.0; len],
            Some(a) => points.iter().map(|x| a(t, &x[..dim])).collect(),
        })
        .collect();
    let nterms = density.terms.len();
    let (r0, radial) = radial_nodes(shape, q);
    let kmax = shape.n as f64 / 2.0;
    let fixed_dirs = ring_directions(dim, &density.angular_breaks, 0.0, kmax, q);

    // inner ball
    let mut acc: Vec<Vec<f64>> = vec![vec![0.0; len]; nterms];
    let chi0 = trunc.weight(0.0);
    for (w, wt) in &fixed_dirs {
        let y: Vec<f64> = w[..dim].iter().map(|v| 0.5 * r0 * v).collect();
        for (j, term) in density.terms.iter().enumerate() {
            let b = (term.y_factor)(t, &y) * wt;
            if b == 0.0 {
                continue;
            }
            for idx in 0..len {
                let quad = if dim == 1 {
                    hess[0].values[idx] * w[0] * w[0]
                } else {
                    hess[0].values[idx] * w[0] * w[0]
                        + 2.0 * hess[1].values[idx] * w[0] * w[1]
                        + hess[2].values[idx] * w[1] * w[1]
                };
                let mut v = 0.5 * quad * r0.powf(2.0 - p) / (2.0 - p);
                if chi0 == 0.0 {
                    let g: f64 = (0..dim).map(|a| grad[a].values[idx] * w[a]).sum();
                    v += g * r0.powf(1.0 - p) / (1.0 - p);
                }
                acc[j][idx] += b * v;
            }
        }
    }

    // annulus r0 < |y| <= R, parallel over radial nodes with an ordered reduction
    let partials: Vec<Vec<Vec<f64>>> = radial
        .nodes
        .par_iter()
        .zip(radial.weights.par_iter())
        .map(|(&r, &rw)| {
            let mut local = vec![vec![0.0; len]; nterms];
            let chi = trunc.weight(r);
            let radial_weight = rw * r.powf(-1.0 - p);
            let dirs = ring_directions(dim, &density.angular_breaks, r, kmax, q);
            let mut shifted_hat = vec![Complex64::new(0.0, 0.0); len];
            for (w, wt) in dirs {
                let y: Vec<f64> = w[..dim].iter().map(|v| r * v).collect();
                let bs: Vec<f64> = density.terms.iter().map(|term| (term.y_factor)(t, &y)).collect();
                if bs.iter().all(|b| *b == 0.0) {
                    continue;
                }
                for (idx, (s, c)) in shifted_hat.iter_mut().zip(&uhat).enumerate() {
                    let k = shape.frequency(idx);
                    let phase: f64 = (0..dim).map(|a| k[a] * y[a]).sum();
                    *s = c * Complex64::from_polar(1.0, phase);
                }
                let shifted = inverse_real(shape, &shifted_hat);
                for (j, b) in bs.iter().enumerate() {
                    if *b == 0.0 {
                        continue;
                    }
                    let c = wt * radial_weight * b;
                    for idx in 0..len {
                        let mut diff = shifted[idx] - u.values[idx];
                        if chi != 0.0 {
                            let g: f64 = (0..dim).map(|a| grad[a].values[idx] * y[a]).sum();
                            diff -= chi * g;
                        }
                        local[j][idx] += c * diff;
                    }
                }
            }
            local
        })
        .collect();
    for part in partials {
        for (a, p) in acc.iter_mut().zip(part) {
            for (x, v) in a.iter_mut().zip(p) {
                *x += v;
            }
        }
    }

    // tail |y| > R as a multiplier on the modes present in u
    let big_r = q.outer_radius;
    let chi_tail = trunc.weight(2.0 * big_r);
    let umax = uhat.iter().fold(0.0f64, |m, c| m.max(c.norm()));
    for (j, term) in density.terms.iter().enumerate() {
        let mut tail_hat = vec![Complex64::new(0.0, 0.0); len];
        for (idx, c) in uhat.iter().enumerate() {
            if c.norm() <= 1e-15 * umax || idx == 0 {
                continue;
            }
            let k = shape.frequency(idx);
            let kn = norm(&k[..dim]);
            let mut breaks = density.angular_breaks.clone();
            if dim == 2 {
                let phi = k[1].atan2(k[0]);
                breaks.extend([phi + PI / 2.0, phi - PI / 2.0]);
            }
            let dirs = crate::quad::sphere_rule(dim, &breaks, 4, 8);
            let mut sym = Complex64::new(0.0, 0.0);
            for (w, wt) in dirs {
                let a: f64 = (0..dim).map(|i| w[i] * k[i]).sum();
                if a.abs() <= 1e-14 * kn {
                    continue;
                }
                let y: Vec<f64> = w[..dim].iter().map(|v| big_r * v).collect();
                let b = (term.y_factor)(t, &y);
                if b == 0.0 {
                    continue;
                }
                sym += wt * b * a.abs().powf(p) * compensated_tail(a.signum(), p, chi_tail, a.abs() * big_r);
            }
            tail_hat[idx] = sym * c;
        }
        for (a, v) in acc[j].iter_mut().zip(inverse_real(shape, &tail_hat)) {
            *a += v;
        }
    }

    let mut out = vec![0.0; len];
    for (j, a) in acc.iter().enumerate() {
        for idx in 0..len {
            out[idx] += xfac[j][idx] * a[idx];
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical { message: "jump quadrature produced non-finite values".into(), estimate: f64::NAN, refined: f64::NAN });
    }
    Ok(GridFunction { dim, n: shape.n, values: out, time: t })
}

/// `Au(t, ·)` by real-space quadrature with default node layout.
pub fn apply_a(u: &GridFunction, spec: &KernelSpec, t: f64) -> Result<GridFunction> {
    apply_a_with(u, spec, t, &RealSpaceQuadrature::default())
}

pub fn apply_a_with(u: &GridFunction, spec: &KernelSpec, t: f64, q: &RealSpaceQuadrature) -> Result<GridFunction> {
    apply_jump_quadrature(u, &spec.density, spec.alpha, spec.truncation(), t, q)
}

/// `Bu(t, ·)` with the jump part by real-space quadrature at order `α'`.
pub fn apply_b(u: &GridFunction, bspec: &BOperatorSpec, alpha: f64, t: f64) -> Result<GridFunction> {
    bspec.check(alpha)?;
    let mut out = match &bspec.jump {
        Some(j) if !j.rho.terms.is_empty() => apply_jump_quadrature(
            u,
            &j.rho,
            j.alpha_prime,
            BOperatorSpec::truncation(j.alpha_prime),
            t,
            &RealSpaceQuadrature::default(),
        )?,
        _ => u.shape().zeros(t),
    };
    out.axpy(1.0, &apply_b_parts(u, None, bspec.drift.as_ref(), bspec.zero_order.as_ref(), t));
    Ok(out)
}

// ---------------------------------------------------------------------------
// relative boundedness of B

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundednessSample {
    pub b_u_beta: f64,
    pub u_alpha_beta: f64,
    pub u_sup: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundednessProbe {
    pub epsilon: f64,
    /// Smallest `C` with `|Bu|_β <= ε|u|_{α+β} + C|u|₀` on every sample.
    pub fitted_c: f64,
    pub samples: Vec<BoundednessSample>,
}

/// Fit the constant of `|Bu|_β <= ε |u|_{α+β} + C |u|₀` over the given samples.
pub fn relative_boundedness_probe(
    generator: &Generator,
    alpha: f64,
    beta: f64,
    epsilon: f64,
    samples: &[GridFunction],
) -> BoundednessProbe {
    let mut fitted = 0.0f64;
    let mut out = Vec::new();
    for u in samples {
        let bu = generator.apply_b(u, u.time);
        let s = BoundednessSample {
            b_u_beta: composite_norm(&bu, beta),
            u_alpha_beta: composite_norm(u, alpha + beta),
            u_sup: u.sup(),
        };
        if s.u_sup > 0.0 {
            fitted = fitted.max((s.b_u_beta - epsilon * s.u_alpha_beta) / s.u_sup);
        }
        out.push(s);
    }
    BoundednessProbe { epsilon, fitted_c: fitted, samples: out }
}

// ---------------------------------------------------------------------------
// Komatsu identity

/// `k^{(δ)}(y, z) = |z + y|^{δ-d} - |z|^{δ-d}` for `d = 1`.
pub fn komatsu_kernel(delta: f64, y: f64, z: f64) -> f64 {
    (z + y).abs().powf(delta - 1.0) - z.abs().powf(delta - 1.0)
}

/// Quadrature node for the Komatsu integrals: position `z`, the exact
/// distances `|z|` and `|z + y|`, and the weight.
struct KNode {
    z: f64,
    dz: f64,
    dzy: f64,
    w: f64,
}

/// One-sided geometric grading of `[0, len]` towards `0`.
fn graded_from_zero(len: f64, levels: usize) -> Rule {
    let mut rule = Rule::default();
    let mut hi = len;
    for _ in 0..levels {
        let lo = hi * 0.25;
        rule.push_panel(lo, hi, 10);
        hi = lo;
    }
    rule.push_panel(0.0, hi, 10);
    rule
}

/// Nodes for `∫_ℝ g(z) dz` with integrable singularities at `0` and `-y`.
/// Distances to the singular points are carried exactly so that grading can
/// go far below machine epsilon relative to `|y|`.
fn komatsu_rule(y: f64, far: f64) -> Vec<KNode> {
    let ay = y.abs();
    let s = y.signum();
    let mut out = Vec::new();
    let levels = 40;
    // z = -s·(ay + t) side beyond -y, and z = s·t beyond 0, for t in [0, 1]
    let near = graded_from_zero(1.0, levels);
    let half = graded_from_zero(0.5 * ay, levels);
    for (t, w) in near.nodes.iter().zip(&near.weights) {
        out.push(KNode { z: s * t, dz: *t, dzy: ay + t, w: *w });
        out.push(KNode { z: -s * (ay + t), dz: ay + t, dzy: *t, w: *w });
    }
    for (t, w) in half.nodes.iter().zip(&half.weights) {
        out.push(KNode { z: -s * t, dz: *t, dzy: ay - t, w: *w });
        out.push(KNode { z: -s * (ay - t), dz: ay - t, dzy: *t, w: *w });
    }
    let width = 0.5;
    let panels = ((far - 1.0) / width).ceil() as usize;
    let mut rule = Rule::default();
    for k in 0..panels {
        let a = 1.0 + k as f64 * width;
        rule.push_panel(a, a + width, 8);
    }
    for (t, w) in rule.nodes.iter().zip(&rule.weights) {
        out.push(KNode { z: s * t, dz: *t, dzy: ay + t, w: *w });
        out.push(KNode { z: -s * (ay + t), dz: ay + t, dzy: *t, w: *w });
    }
    out
}

fn kernel_at(delta: f64, n: &KNode) -> f64 {
    n.dzy.powf(delta - 1.0) - n.dz.powf(delta - 1.0)
}

/// `I(y) = ∫ |k^{(δ)}(y, z)| dz`, with the far field beyond the panels taken in closed form.
pub fn komatsu_mass(delta: f64, y: f64) -> f64 {
    if y == 0.0 {
        return 0.0;
    }
    let far = 64.0;
    let near: f64 = komatsu_rule(y, far).iter().map(|n| n.w * kernel_at(delta, n).abs()).sum();
    // beyond distance `reach` from the nearer singular point the integrand is
    // s^{δ-1} - (s+|y|)^{δ-1} on both sides
    let reach = 1.0 + ((far - 1.0) / 0.5).ceil() * 0.5;
    let ay = y.abs();
    near + 2.0 * ((reach + ay).powf(delta) - reach.powf(delta)) / delta
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KomatsuReport {
    pub delta: f64,
    pub y: f64,
    pub mass: f64,
    /// `I(y) / |y|^δ`.
    pub mass_ratio: f64,
    pub constant: f64,
    /// `-1 / (c_δ · 2Γ(δ) cos(πδ/2))`, the value implied by the Fourier transform of `|z|^{δ-1}`.
    pub constant_closed_form: f64,
    /// `max_x |u(x+y) - u(x) - C ∫ k(y,z) ∂^δ u(x-z) dz|`.
    pub residual: f64,
    pub u_sup: f64,
}

/// `u(x+y) - u(x)` and `∫ k^{(δ)}(y,z) ∂^δ u(x - z) dz` on the grid.
fn komatsu_sides(delta: f64, y: f64, u: &GridFunction) -> Result<(Vec<f64>, Vec<f64>)> {
    if u.dim != 1 {
        return Err(Error::config("the Komatsu reconstruction is implemented for d = 1 only"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::config(format!("delta must lie in (0,1), got {delta}")));
    }
    let shape = u.shape();
    let lhs = u.shifted(&[y]).sub(u).values;
    if y == 0.0 {
        return Ok((lhs, vec![0.0; shape.len()]));
    }
    let g = frac_laplacian(u, delta);
    let ghat = g.spectrum();
    let far = 2.0 * PI * 128.0;
    let rule = komatsu_rule(y, far);
    let chunks: Vec<Vec<f64>> = rule
        .par_chunks(256)
        .map(|nodes| {
            let mut local = vec![0.0; shape.len()];
            let mut buf = vec![Complex64::new(0.0, 0.0); shape.len()];
            for node in nodes {
                let (z, w) = (&node.z, &node.w);
                let k = kernel_at(delta, node);
                for (idx, (b, c)) in buf.iter_mut().zip(&ghat).enumerate() {
                    let f = shape.frequency(idx)[0];
                    *b = c * Complex64::from_polar(1.0, -f * z);
                }
                let shifted = inverse_real(shape, &buf);
                for (l, s) in local.iter_mut().zip(shifted) {
                    *l += w * k * s;
                }
            }
            local
        })
        .collect();
    let mut rhs = vec![KahanSum::default(); shape.len()];
    for c in chunks {
        for (r, v) in rhs.iter_mut().zip(c) {
            r.add(v);
        }
    }
    Ok((lhs, rhs.into_iter().map(|k| k.value()).collect()))
}

/// Least-squares constant `C` in `u(x+y) - u(x) = C ∫ k^{(δ)}(y,z) ∂^δ u(x-z) dz`.
pub fn komatsu_calibrate(delta: f64, y: f64, u: &GridFunction) -> Result<f64> {
    let (lhs, rhs) = komatsu_sides(delta, y, u)?;
    let num: f64 = lhs.iter().zip(&rhs).map(|(a, b)| a * b).sum();
    let den: f64 = rhs.iter().map(|b| b * b).sum();
    if den == 0.0 {
        return Err(Error::config("Komatsu calibration needs y != 0 and non-constant u"));
    }
    Ok(num / den)
}

/// Residual of the increment identity with constant `c`, and the mass ratio `I(y)/|y|^δ`.
pub fn komatsu_check(delta: f64, y: f64, u: &GridFunction, c: f64) -> Result<KomatsuReport> {
    let (lhs, rhs) = komatsu_sides(delta, y, u)?;
    let residual = lhs.iter().zip(&rhs).fold(0.0f64, |m, (a, b)| m.max((a - c * b).abs()));
    let mass = komatsu_mass(delta, y);
    let cd = fractional_laplacian_constant(delta, 1);
    let closed = -1.0 / (cd * 2.0 * gamma(delta) * (PI * delta / 2.0).cos());
    Ok(KomatsuReport {
        delta,
        y,
        mass,
        mass_ratio: if y == 0.0 { 0.0 } else { mass / y.abs().powf(delta) },
        constant: c,
        constant_closed_form: closed,
        residual,
        u_sup: u.sup(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{preset, symbol_direct, PresetParams};

    fn cos_mode(shape: GridShape, k: [f64; 2]) -> GridFunction {
        shape.sample(0.0, |x| (k[0] * x[0] + if shape.dim == 2 { k[1] * x[1] } else { 0.0 }).cos())
    }

    #[test]
    fn frac_laplacian_on_cosine() {
        let shape = GridShape::new(1, 64).unwrap();
        let u = cos_mode(shape, [3.0, 0.0]);
        let c = -symbol_direct(&preset("isotropic", 1.3, 1, 0.5, &PresetParams::default()).unwrap(), 0.0, &[0.0], &[1.0]).re;
        let got = frac_laplacian(&u, 1.3);
        let expect = u.scaled(-c * 3f64.powf(1.3));
        assert!(got.sub(&expect).sup() < 1e-12 * expect.sup());
        let konst = u.with_values(vec![2.0; 64]);
        assert!(frac_laplacian(&konst, 1.3).sup() < 1e-14);
    }

    #[test]
    fn quadrature_matches_fractional_laplacian_in_1d() {
        for alpha in [0.6, 1.0, 1.5] {
            let spec = preset("isotropic", alpha, 1, 0.5, &PresetParams::default()).unwrap();
            let shape = GridShape::new(1, 64).unwrap();
            let u = cos_mode(shape, [3.0, 0.0]);
            let q = apply_a(&u, &spec, 0.0).unwrap();
            let f = frac_laplacian(&u, alpha);
            let err = q.sub(&f).sup() / f.sup();
            assert!(err < 1e-3, "alpha={alpha}: {err}");
        }
    }

    #[test]
    fn quadrature_and_fourier_routes_agree() {
        let params = PresetParams { x_amplitude: 1.0, ..Default::default() };
        for (alpha, dim, n) in [(0.7, 1, 64), (1.0, 1, 64), (1.5, 1, 64), (1.3, 2, 16)] {
            let spec = preset("sector-measurable", alpha, dim, 0.5, &params).unwrap();
            let shape = GridShape::new(dim, n).unwrap();
            let u = shape.sample(0.0, |x| (x[0] + 0.4).cos() + 0.5 * (2.0 * x[0]).sin() * if dim == 2 { (x[1]).cos() } else { 1.0 });
            let quad = apply_a(&u, &spec, 0.0).unwrap();
            let fourier = SpectralOperator::for_kernel(&spec, shape, 1.0).unwrap().apply(&u, 0.0);
            let err = quad.sub(&fourier).sup() / fourier.sup();
            assert!(err < 1e-4, "alpha={alpha} dim={dim}: {err}");
        }
    }

    #[test]
    fn sector_quadrature_self_converges_in_2d() {
        let spec = preset("sector-measurable", 1.5, 2, 0.5, &PresetParams::default()).unwrap();
        let shape = GridShape::new(2, 16).unwrap();
        let u = cos_mode(shape, [1.0, 0.0]);
        let base = apply_a(&u, &spec, 0.0).unwrap();
        let fine = apply_a_with(&u, &spec, 0.0, &RealSpaceQuadrature::default().finer(4)).unwrap();
        assert!(base.sub(&fine).sup() < 1e-4 * fine.sup());
    }

    #[test]
    fn constants_are_annihilated() {
        let spec = preset("sector-measurable", 1.2, 1, 0.5, &PresetParams { x_amplitude: 0.5, ..Default::default() }).unwrap();
        let shape = GridShape::new(1, 32).unwrap();
        let u = shape.sample(0.0, |_| 3.0);
        assert!(apply_a(&u, &spec, 0.0).unwrap().sup() < 1e-10);
    }

    #[test]
    fn b_operator_cases() {
        let shape = GridShape::new(1, 32).unwrap();
        let u = cos_mode(shape, [2.0, 0.0]);
        let zero = BOperatorSpec::zero();
        assert_eq!(apply_b(&u, &zero, 1.5, 0.0).unwrap().sup(), 0.0);
        let b = BOperatorSpec { jump: Some(BJump { alpha_prime: 0.8, rho: Density::constant(1.0) }), ..BOperatorSpec::zero() };
        let iso = preset("isotropic", 0.8, 1, 0.5, &PresetParams::default()).unwrap();
        let got = apply_b(&u, &b, 1.5, 0.0).unwrap();
        let expect = apply_a(&u, &iso, 0.0).unwrap();
        assert!(got.sub(&expect).sup() < 1e-12);
        let bad = BOperatorSpec { jump: Some(BJump { alpha_prime: 1.5, rho: Density::constant(1.0) }), ..BOperatorSpec::zero() };
        assert!(matches!(apply_b(&u, &bad, 1.5, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn komatsu_mass_scales_and_vanishes() {
        assert_eq!(komatsu_mass(0.5, 0.0), 0.0);
        for delta in [0.3, 0.5, 0.8] {
            let r = komatsu_mass(delta, 0.6) / komatsu_mass(delta, 0.3);
            assert!((r / 2f64.powf(delta) - 1.0).abs() < 1e-3, "delta={delta}: {r}");
        }
    }

    #[test]
    fn komatsu_reconstruction_out_of_sample() {
        let shape = GridShape::new(1, 64).unwrap();
        let u = cos_mode(shape, [1.0, 0.0]);
        let c = komatsu_calibrate(0.5, 0.3, &u).unwrap();
        let rep = komatsu_check(0.5, 0.7, &u, c).unwrap();
        assert!(rep.residual <= 1e-3 * rep.u_sup, "{rep:?}");
        assert!((c / rep.constant_closed_form - 1.0).abs() < 1e-2, "{rep:?}");
        let two = shape.sample(0.0, |_| 0.0);
        let d2 = GridFunction { dim: 2, n: 8, values: vec![0.0; 64], time: 0.0 };
        assert!(matches!(komatsu_check(0.5, 0.7, &d2, 1.0), Err(Error::Config(_))));
        let zero = komatsu_check(0.5, 0.0, &two, c).unwrap();
        assert_eq!(zero.residual, 0.0);
    }
}
