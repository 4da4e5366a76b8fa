//! Jump kernels `m(t,x,y) dy / |y|^{d+α}`, their symbols, and assumption checks.
//!
//! A kernel density is stored as a finite sum of separable terms
//! `Σ_j a_j(t,x) b_j(t,y)`. The y-factors may be arbitrary bounded measurable
//! functions; discontinuity angles can be declared so angular quadrature
//! places panel breaks there. Densities that are homogeneous of degree zero in
//! `y` are flagged, which lets the radial part of the symbol quadrature be
//! shared across directions.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{hermitian_symmetrize, GridShape};
use crate::quad::{sphere_rule, KahanSum, Rule};

/// Coefficient depending on `(t, x)`.
pub type XFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
/// Density factor depending on `(t, y)`.
pub type YFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// Which part of the gradient is subtracted inside the jump integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Truncation {
    /// No compensation (order below one).
    None,
    /// Compensation on the unit ball `|y| <= 1`.
    Unit,
    /// Compensation on all of `R^d` (order above one).
    Full,
}

impl Truncation {
    /// `χ_α(y) = 1_{α∈(1,2)} + 1_{α=1} 1_{|y|≤1}`.
    pub fn for_order(alpha: f64) -> Self {
        if alpha > 1.0 {
            Truncation::Full
        } else if alpha == 1.0 {
            Truncation::Unit
        } else {
            Truncation::None
        }
    }

    pub fn weight(self, r: f64) -> f64 {
        match self {
            Truncation::None => 0.0,
            Truncation::Unit => {
                if r <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Truncation::Full => 1.0,
        }
    }

    pub fn check(self, order: f64) -> Result<()> {
        let ok = match self {
            Truncation::None => order < 1.0,
            Truncation::Unit => order >= 1.0,
            Truncation::Full => order > 1.0,
        };
        if ok && order > 0.0 && order < 2.0 {
            Ok(())
        } else {
            Err(Error::config(format!("truncation {self:?} is not integrable at order {order}")))
        }
    }
}

#[derive(Clone)]
pub struct SeparableTerm {
    /// `None` means the factor is identically one.
    pub x_factor: Option<XFn>,
    pub y_factor: YFn,
}

/// Nonnegative density `Σ_j a_j(t,x) b_j(t,y)`.
#[derive(Clone)]
pub struct Density {
    pub terms: Vec<SeparableTerm>,
    /// Angles (d = 2) where y-factors may jump.
    pub angular_breaks: Vec<f64>,
    /// Every y-factor depends on `y / |y|` only.
    pub radially_homogeneous: bool,
}

impl fmt::Debug for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Density")
            .field("terms", &self.terms.len())
            .field("x_dependent", &!self.is_x_independent())
            .field("angular_breaks", &self.angular_breaks)
            .field("radially_homogeneous", &self.radially_homogeneous)
            .finish()
    }
}

impl Density {
    pub fn zero() -> Self {
        Density { terms: Vec::new(), angular_breaks: Vec::new(), radially_homogeneous: true }
    }

    /// Homogeneous, x-independent density from an angular profile of the unit vector.
    pub fn angular(profile: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static, breaks: Vec<f64>) -> Self {
        let y: YFn = Arc::new(move |t, y: &[f64]| {
            let r = norm(y);
            if r == 0.0 {
                return 0.0;
            }
            let w: Vec<f64> = y.iter().map(|v| v / r).collect();
            profile(t, &w)
        });
        Density {
            terms: vec![SeparableTerm { x_factor: None, y_factor: y }],
            angular_breaks: breaks,
            radially_homogeneous: true,
        }
    }

    pub fn constant(c: f64) -> Self {
        Density::angular(move |_, _| c, Vec::new())
    }

    pub fn is_x_independent(&self) -> bool {
        self.terms.iter().all(|t| t.x_factor.is_none())
    }

    pub fn eval(&self, t: f64, x: &[f64], y: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|term| {
                let a = term.x_factor.as_ref().map_or(1.0, |f| f(t, x));
                a * (term.y_factor)(t, y)
            })
            .sum()
    }

    /// Sum of the y-factors, valid when the density does not depend on x.
    pub fn eval_y(&self, t: f64, y: &[f64]) -> f64 {
        self.terms.iter().map(|term| (term.y_factor)(t, y)).sum()
    }

    /// `g(t) · m(t, x, y)`.
    pub fn time_scaled(&self, g: Arc<dyn Fn(f64) -> f64 + Send + Sync>) -> Density {
        let mut out = self.clone();
        for term in &mut out.terms {
            let y = term.y_factor.clone();
            let g = g.clone();
            term.y_factor = Arc::new(move |t, v: &[f64]| g(t) * y(t, v));
        }
        out
    }

    /// Sum with another density (term lists are concatenated).
    pub fn plus(&self, other: &Density) -> Density {
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        let mut breaks = self.angular_breaks.clone();
        breaks.extend(other.angular_breaks.iter().cloned());
        Density {
            terms,
            angular_breaks: breaks,
            radially_homogeneous: self.radially_homogeneous && other.radially_homogeneous,
        }
    }

    /// `c · m`.
    pub fn scaled(&self, c: f64) -> Density {
        let terms = self
            .terms
            .iter()
            .map(|term| {
                let yf = term.y_factor.clone();
                SeparableTerm { x_factor: term.x_factor.clone(), y_factor: Arc::new(move |t, y| c * yf(t, y)) }
            })
            .collect();
        Density { terms, angular_breaks: self.angular_breaks.clone(), radially_homogeneous: self.radially_homogeneous }
    }

    /// x-independent density obtained by averaging every x-factor over the grid at time `t`.
    pub fn x_average(&self, shape: GridShape, t: f64) -> Density {
        let terms = self
            .terms
            .iter()
            .map(|term| {
                let mean = match &term.x_factor {
                    None => 1.0,
                    Some(a) => {
                        (0..shape.len())
                            .map(|i| {
                                let p = shape.point(i);
                                a(t, &p[..shape.dim])
                            })
                            .sum::<f64>()
                            / shape.len() as f64
                    }
                };
                let yf = term.y_factor.clone();
                SeparableTerm { x_factor: None, y_factor: Arc::new(move |t, y| mean * yf(t, y)) }
            })
            .collect();
        Density { terms, angular_breaks: self.angular_breaks.clone(), radially_homogeneous: self.radially_homogeneous }
    }

    /// Same density with time reversed on `[0, t_final]`.
    pub fn time_reversed(&self, t_final: f64) -> Density {
        let terms = self
            .terms
            .iter()
            .map(|term| {
                let yf = term.y_factor.clone();
                SeparableTerm {
                    x_factor: term.x_factor.clone().map(|a| {
                        let f: XFn = Arc::new(move |t, x| a(t_final - t, x));
                        f
                    }),
                    y_factor: Arc::new(move |t, y| yf(t_final - t, y)),
                }
            })
            .collect();
        Density { terms, angular_breaks: self.angular_breaks.clone(), radially_homogeneous: self.radially_homogeneous }
    }
}

pub(crate) fn norm(y: &[f64]) -> f64 {
    y.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// A jump kernel of stable order together with its nondegenerate minorant.
#[derive(Debug, Clone)]
pub struct KernelSpec {
    pub name: String,
    pub alpha: f64,
    pub dim: usize,
    /// Hölder exponent of `x ↦ m(t,x,y)`.
    pub beta: f64,
    pub eta: f64,
    pub big_k: f64,
    /// Interior breakpoints of the piecewise-constant time profile.
    pub time_breaks: Vec<f64>,
    /// Spherical density `m₀(t, w)`, homogeneous of degree zero.
    pub minorant: Density,
    /// Full density `m(t, x, y)`.
    pub density: Density,
}

impl KernelSpec {
    pub fn check_well_formed(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 2.0) {
            return Err(Error::config(format!("alpha must lie in (0,2), got {}", self.alpha)));
        }
        if !(1..=2).contains(&self.dim) {
            return Err(Error::config(format!("dimension must be 1 or 2, got {}", self.dim)));
        }
        if !(self.eta > 0.0) {
            return Err(Error::config(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::config(format!("beta must lie in (0,1], got {}", self.beta)));
        }
        if !(self.big_k > 0.0) {
            return Err(Error::config("K must be positive"));
        }
        if !self.minorant.is_x_independent() || !self.minorant.radially_homogeneous {
            return Err(Error::config("minorant must be x-independent and homogeneous in y"));
        }
        Ok(())
    }

    pub fn truncation(&self) -> Truncation {
        Truncation::for_order(self.alpha)
    }

    /// Piecewise-constant time cells covering `[0, t_final]`.
    pub fn time_cells(&self, t_final: f64) -> Vec<(f64, f64)> {
        time_cells(&self.time_breaks, t_final)
    }

    pub fn time_reversed(&self, t_final: f64) -> KernelSpec {
        let mut breaks: Vec<f64> = self.time_breaks.iter().map(|b| t_final - b).collect();
        breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        KernelSpec {
            name: format!("{}-reversed", self.name),
            time_breaks: breaks,
            minorant: self.minorant.time_reversed(t_final),
            density: self.density.time_reversed(t_final),
            ..self.clone()
        }
    }

    /// Same kernel with `m` replaced by the minorant.
    pub fn minorant_kernel(&self) -> KernelSpec {
        KernelSpec { name: format!("{}-minorant", self.name), density: self.minorant.clone(), ..self.clone() }
    }
}

pub fn time_cells(breaks: &[f64], t_final: f64) -> Vec<(f64, f64)> {
    let mut cuts = vec![0.0];
    cuts.extend(breaks.iter().cloned().filter(|b| *b > 0.0 && *b < t_final));
    cuts.push(t_final);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();
    cuts.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Cell index containing `t` (right-continuous; `t_final` belongs to the last cell).
pub fn cell_of(cells: &[(f64, f64)], t: f64) -> usize {
    cells.iter().position(|(a, b)| t >= *a && t < *b).unwrap_or(cells.len() - 1)
}

// ---------------------------------------------------------------------------
// presets

/// Tunable parameters of the built-in kernels.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PresetParams {
    /// Extra mass carried by the sector in `sector-measurable`.
    pub sector_amplitude: f64,
    /// Amplitude of the `sin x₁` modulation of the sector mass (0 gives an x-independent kernel).
    pub x_amplitude: f64,
    /// Overall multiplier applied to both `m` and `m₀`.
    pub scale: f64,
    pub eta: Option<f64>,
    pub big_k: Option<f64>,
}

impl Default for PresetParams {
    fn default() -> Self {
        PresetParams { sector_amplitude: 0.5, x_amplitude: 0.0, scale: 1.0, eta: None, big_k: None }
    }
}

pub const PRESETS: [&str; 4] = ["isotropic", "smooth-arc", "sector-measurable", "degenerate-minorant"];

fn bump(dist: f64, half_width: f64) -> f64 {
    let s = dist / half_width;
    if s.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - s * s)).exp()
    }
}

fn angle_of(w: &[f64]) -> f64 {
    if w.len() == 1 {
        if w[0] >= 0.0 {
            0.0
        } else {
            PI
        }
    } else {
        w[1].atan2(w[0]).rem_euclid(2.0 * PI)
    }
}

fn wrapped_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

/// Angular indicator of the sector `[0, π/2)` (d = 2) or the half line `y > 0` (d = 1),
/// together with its antipode when `symmetric`.
fn in_sector(w: &[f64], symmetric: bool) -> bool {
    if w.len() == 1 {
        return w[0] > 0.0 || (symmetric && w[0] < 0.0);
    }
    let th = angle_of(w);
    let hit = |th: f64| th < PI / 2.0;
    hit(th) || (symmetric && hit((th + PI).rem_euclid(2.0 * PI)))
}

/// Build one of the named kernels.
pub fn preset(name: &str, alpha: f64, dim: usize, beta: f64, params: &PresetParams) -> Result<KernelSpec> {
    if !(1..=2).contains(&dim) {
        return Err(Error::config(format!("dimension must be 1 or 2, got {dim}")));
    }
    let scale = params.scale;
    let symmetric = alpha == 1.0;
    let (minorant, density, sup_bound) = match name {
        "isotropic" => (Density::constant(scale), Density::constant(scale), scale),
        "smooth-arc" => {
            let m0 = Density::angular(move |_, w| scale * (1.0 + 0.5 * w[0]), Vec::new());
            (m0.clone(), m0, 1.5 * scale)
        }
        "sector-measurable" => {
            let s = params.sector_amplitude;
            let xa = params.x_amplitude;
            if s < 0.0 || xa.abs() > 1.0 {
                return Err(Error::config("sector_amplitude must be >= 0 and |x_amplitude| <= 1"));
            }
            let m0 = Density::constant(scale);
            let breaks = if dim == 2 { vec![0.0, PI / 2.0, PI, 1.5 * PI] } else { Vec::new() };
            let sector = Density::angular(move |_, w| if in_sector(w, symmetric) { scale } else { 0.0 }, breaks);
            let extra = if xa == 0.0 {
                sector.scaled(s)
            } else {
                let a: XFn = Arc::new(move |_, x: &[f64]| s * (1.0 + xa * x[0].sin()));
                let mut d = sector.clone();
                d.terms[0].x_factor = Some(a);
                d
            };
            (m0.clone(), m0.plus(&extra), scale * (1.0 + s * (1.0 + xa.abs())))
        }
        "degenerate-minorant" => {
            let (center, hw) = (PI / 4.0, PI / 4.0);
            let profile = move |_: f64, w: &[f64]| {
                if w.len() == 1 {
                    return if w[0] > 0.0 || symmetric { scale } else { 0.0 };
                }
                let th = angle_of(w);
                let mut v = bump(wrapped_distance(th, center), hw);
                if symmetric {
                    v += bump(wrapped_distance(th, center + PI), hw);
                }
                scale * v
            };
            let breaks = if dim == 2 { vec![0.0, PI / 2.0, PI, 1.5 * PI] } else { Vec::new() };
            let m0 = Density::angular(profile, breaks);
            (m0.clone(), m0, scale)
        }
        other => {
            return Err(Error::config(format!("unknown kernel preset '{other}' (known: {})", PRESETS.join(", "))))
        }
    };
    let mut spec = KernelSpec {
        name: name.to_string(),
        alpha,
        dim,
        beta,
        eta: 1.0,
        big_k: sup_bound,
        time_breaks: Vec::new(),
        minorant,
        density,
    };
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(Error::config(format!("alpha must lie in (0,2), got {alpha}")));
    }
    spec = with_bounds(spec, sup_bound, params);
    Ok(spec)
}

/// Fill in `K` (1.01 times the sampled `sup + [·]_β` of `m`, at least `sup_bound`)
/// and `η` (half the nondegeneracy infimum of `m₀`) unless given explicitly.
pub fn with_bounds(mut spec: KernelSpec, sup_bound: f64, params: &PresetParams) -> KernelSpec {
    let dim = spec.dim;
    let alpha = spec.alpha;
    spec.big_k = match params.big_k {
        Some(k) => k,
        None => {
            let holder = sampled_holder_norm(&spec, &default_y_samples(dim), 0.0, 128);
            holder.max(sup_bound) * 1.01
        }
    };
    spec.eta = match params.eta {
        Some(e) => e,
        None => 0.5 * nondegeneracy_infimum(&spec.minorant, alpha, dim, 0.0).0,
    };
    spec
}

fn default_y_samples(dim: usize) -> Vec<Vec<f64>> {
    let radii = [0.01, 0.3, 1.0, 7.0];
    let mut out = Vec::new();
    let dirs: Vec<Vec<f64>> = if dim == 1 {
        vec![vec![1.0], vec![-1.0]]
    } else {
        (0..24).map(|k| {
            let th = 2.0 * PI * (k as f64 + 0.37) / 24.0;
            vec![th.cos(), th.sin()]
        }).collect()
    };
    for r in radii {
        for w in &dirs {
            out.push(w.iter().map(|v| r * v).collect());
        }
    }
    out
}

/// `max_y ( sup_x m + [m(·,y)]_β )` over a periodic x-grid along the first axis.
fn sampled_holder_norm(spec: &KernelSpec, ys: &[Vec<f64>], t: f64, n: usize) -> f64 {
    let shape = GridShape { dim: 1, n };
    let mut best = 0.0f64;
    for y in ys {
        let vals: Vec<f64> = (0..n)
            .map(|i| {
                let mut x = vec![0.0; spec.dim];
                x[0] = shape.point(i)[0];
                spec.density.eval(t, &x, y)
            })
            .collect();
        let sup = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut semi = 0.0f64;
        for i in 0..n {
            for h in 1..=n / 2 {
                let d = (vals[(i + h) % n] - vals[i]).abs();
                semi = semi.max(d / (h as f64 * shape.spacing()).powf(spec.beta));
            }
        }
        best = best.max(sup + semi);
    }
    best
}

// ---------------------------------------------------------------------------
// quadrature for symbols

/// Node layout of the y-space symbol quadrature.
///
/// The radial integral is taken in the scaled variable `s = |(w,ξ)| r`, over
/// `[0, s_min]` by its Taylor expansion, `[s_min, 1]` by log-uniform panels,
/// `[1, s_max]` by unit panels and `[s_max, ∞)` by the asymptotic expansion
/// of the oscillatory tail with the density frozen at `s_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymbolQuadrature {
    pub s_min: f64,
    pub s_max: f64,
    pub panels_per_unit: usize,
    pub log_panels_per_e: f64,
    pub order: usize,
    pub angular_levels: usize,
    pub angular_order: usize,
}

impl Default for SymbolQuadrature {
    fn default() -> Self {
        SymbolQuadrature {
            s_min: 1e-6,
            s_max: 64.0,
            panels_per_unit: 1,
            log_panels_per_e: 1.0,
            order: 8,
            angular_levels: 6,
            angular_order: 8,
        }
    }
}

impl SymbolQuadrature {
    /// Double the radial resolution.
    pub fn refined(&self) -> Self {
        SymbolQuadrature {
            panels_per_unit: self.panels_per_unit * 2,
            log_panels_per_e: self.log_panels_per_e * 2.0,
            ..*self
        }
    }

    fn key(&self, order_p: f64, base: Base) -> (u64, u64, u64, usize, u64, usize, u8) {
        (
            order_p.to_bits(),
            self.s_min.to_bits(),
            self.s_max.to_bits(),
            self.panels_per_unit,
            self.log_panels_per_e.to_bits(),
            self.order,
            base as u8,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Base {
    None = 0,
    Full = 1,
    /// Cut-off at `s <= 1` in the scaled variable.
    ScaledUnit = 2,
}

/// Precomputed radial weights for one order and one sign of `(w, ξ)`.
struct RadialWeights {
    s: Vec<f64>,
    /// `w_n (e^{iσs} - 1 - iσ s χ(s)) s^{-1-p}` for σ = +1 and σ = -1.
    w: [Vec<Complex64>; 2],
    inner: [Complex64; 2],
    tail: [Complex64; 2],
    total: [Complex64; 2],
}

type RadialKey = (u64, u64, u64, usize, u64, usize, u8);

fn radial_weights(q: &SymbolQuadrature, p: f64, base: Base) -> Arc<RadialWeights> {
    static CACHE: OnceLock<Mutex<HashMap<RadialKey, Arc<RadialWeights>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = q.key(p, base);
    if let Some(w) = cache.lock().unwrap().get(&key) {
        return w.clone();
    }
    let built = Arc::new(build_radial(q, p, base));
    cache.lock().unwrap().insert(key, built.clone());
    built
}

fn build_radial(q: &SymbolQuadrature, p: f64, base: Base) -> RadialWeights {
    let mut rule = Rule::log_panels(q.s_min, 1.0, q.log_panels_per_e, q.order);
    let panels = ((q.s_max - 1.0).ceil() as usize) * q.panels_per_unit;
    let width = (q.s_max - 1.0) / panels as f64;
    for k in 0..panels {
        rule.push_panel(1.0 + k as f64 * width, 1.0 + (k + 1) as f64 * width, q.order);
    }
    let chi = |s: f64| match base {
        Base::None => 0.0,
        Base::Full => 1.0,
        Base::ScaledUnit => {
            if s <= 1.0 {
                1.0
            } else {
                0.0
            }
        }
    };
    let i = Complex64::new(0.0, 1.0);
    let mut w = [Vec::with_capacity(rule.len()), Vec::with_capacity(rule.len())];
    let mut total = [Complex64::new(0.0, 0.0); 2];
    let mut inner = [Complex64::new(0.0, 0.0); 2];
    let mut tail = [Complex64::new(0.0, 0.0); 2];
    let (sm, sx) = (q.s_min, q.s_max);
    for (k, sigma) in [1.0f64, -1.0].into_iter().enumerate() {
        for (s, wt) in rule.nodes.iter().zip(&rule.weights) {
            let g = Complex64::from_polar(1.0, sigma * s) - 1.0 - i * sigma * s * chi(*s);
            w[k].push(g * wt * s.powf(-1.0 - p));
        }
        inner[k] = match base {
            Base::None => i * sigma * sm.powf(1.0 - p) / (1.0 - p) - 0.5 * sm.powf(2.0 - p) / (2.0 - p),
            _ => -0.5 * sm.powf(2.0 - p) / (2.0 - p) - i * sigma / 6.0 * sm.powf(3.0 - p) / (3.0 - p),
        };
        let mut t = oscillatory_tail(sigma, 1.0 + p, sx) - sx.powf(-p) / p;
        if base == Base::Full {
            t -= i * sigma * sx.powf(1.0 - p) / (p - 1.0);
        }
        tail[k] = t;
        let mut acc = inner[k] + tail[k];
        let mut re = KahanSum::default();
        let mut im = KahanSum::default();
        for v in &w[k] {
            re.add(v.re);
            im.add(v.im);
        }
        acc += Complex64::new(re.value(), im.value());
        total[k] = acc;
    }
    RadialWeights { s: rule.nodes, w, inner, tail, total }
}

/// `∫_S^∞ e^{iσs} s^{-q} ds` by its asymptotic expansion (S large).
pub(crate) fn oscillatory_tail(sigma: f64, q: f64, big_s: f64) -> Complex64 {
    let isig = Complex64::new(0.0, sigma);
    let mut term = Complex64::new(big_s.powf(-q), 0.0);
    let mut sum = term;
    let mut k = 0.0;
    loop {
        let next = term * (q + k) / (isig * big_s);
        if next.norm() > term.norm() || next.norm() < 1e-20 || k > 60.0 {
            break;
        }
        term = next;
        sum += term;
        k += 1.0;
    }
    -Complex64::from_polar(1.0, sigma * big_s) / isig * sum
}

/// `∫_{r0}^{r1} r^{-p} b(r w) dr` for `0 < r0 < r1 <= ∞`; the part beyond
/// `1e4` freezes `b` at that radius.
pub(crate) fn radial_moment<F: Fn(&[f64]) -> f64>(b: &F, w: &[f64], p: f64, r0: f64, r1: f64) -> f64 {
    let cap: f64 = 1e4;
    let hi = r1.min(cap.max(r0 * 2.0));
    let rule = Rule::log_panels(r0, hi, 2.0, 8);
    let mut y = vec![0.0; w.len()];
    let mut acc = rule.integrate(|r| {
        for (yi, wi) in y.iter_mut().zip(w) {
            *yi = r * wi;
        }
        r.powf(-p) * b(&y)
    });
    if r1 > hi {
        for (yi, wi) in y.iter_mut().zip(w) {
            *yi = hi * wi;
        }
        acc += b(&y)
            * if p == 1.0 {
                (r1 / hi).ln()
            } else {
                (hi.powf(1.0 - p) - r1.powf(1.0 - p)) / (p - 1.0)
            };
    }
    acc
}

/// Diagnostics returned with a self-checked symbol value.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SymbolDiagnostics {
    pub value_re: f64,
    pub value_im: f64,
    pub refined_re: f64,
    pub refined_im: f64,
    pub relative_change: f64,
}

/// Kink angles of `w ↦ (w, ξ)` on the circle.
fn kink_angles(xi: &[f64]) -> Vec<f64> {
    if xi.len() < 2 {
        return Vec::new();
    }
    let phi = xi[1].atan2(xi[0]);
    vec![phi + PI / 2.0, phi - PI / 2.0]
}

/// Symbol `∫ [e^{i(ξ,y)} - 1 - χ(y) i(ξ,y)] b(y) dy / |y|^{d+p}` of one
/// x-independent y-density by radial × angular product quadrature.
pub fn jump_symbol<F: Fn(&[f64]) -> f64>(
    b: &F,
    homogeneous: bool,
    breaks: &[f64],
    dim: usize,
    p: f64,
    trunc: Truncation,
    xi: &[f64],
    q: &SymbolQuadrature,
) -> Complex64 {
    let xi_norm = norm(&xi[..dim]);
    if xi_norm == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let base = match (trunc, p == 1.0) {
        (Truncation::None, _) => Base::None,
        (Truncation::Full, _) => Base::Full,
        (Truncation::Unit, true) => Base::ScaledUnit,
        (Truncation::Unit, false) => Base::Full,
    };
    let radial = radial_weights(q, p, base);
    let mut all_breaks = breaks.to_vec();
    all_breaks.extend(kink_angles(xi));
    let dirs = sphere_rule(dim, &all_breaks, q.angular_levels, q.angular_order);
    let i = Complex64::new(0.0, 1.0);
    let mut re = KahanSum::default();
    let mut im = KahanSum::default();
    let mut y = vec![0.0; dim];
    for (w, wt) in dirs {
        let w = &w[..dim];
        let a: f64 = w.iter().zip(xi).map(|(wi, xi)| wi * xi).sum();
        if a == 0.0 {
            continue;
        }
        let k = if a > 0.0 { 0 } else { 1 };
        let aa = a.abs();
        let mut at = |r: f64| {
            for (yi, wi) in y.iter_mut().zip(w) {
                *yi = r * wi;
            }
            b(&y)
        };
        let mut val = if homogeneous {
            radial.total[k] * at(1.0)
        } else {
            let mut acc = Complex64::new(0.0, 0.0);
            for (s, c) in radial.s.iter().zip(&radial.w[k]) {
                acc += c * at(s / aa);
            }
            acc + radial.inner[k] * at(0.5 * q.s_min / aa) + radial.tail[k] * at(q.s_max / aa)
        };
        val *= aa.powf(p);
        // move the compensation cut-off from the scaled to the unscaled unit ball
        if trunc == Truncation::Unit {
            if p == 1.0 {
                let log_part = if homogeneous {
                    at(1.0) * aa.ln()
                } else if aa > 1.0 {
                    radial_moment(&|y: &[f64]| b(y), w, 1.0, 1.0 / aa, 1.0)
                } else if aa < 1.0 {
                    -radial_moment(&|y: &[f64]| b(y), w, 1.0, 1.0, 1.0 / aa)
                } else {
                    0.0
                };
                val -= i * a * log_part;
            } else {
                let far = if homogeneous {
                    at(1.0) / (p - 1.0)
                } else {
                    radial_moment(&|y: &[f64]| b(y), w, p, 1.0, f64::INFINITY)
                };
                val += i * a * far;
            }
        }
        re.add(wt * val.re);
        im.add(wt * val.im);
    }
    Complex64::new(re.value(), im.value())
}

/// Symbol of the kernel's full density at `(t, x)`:
/// `ψ(t,x,ξ) = ∫ [e^{i(ξ,y)} - 1 - χ_α(y) i(ξ,y)] m(t,x,y) dy/|y|^{d+α}`.
pub fn symbol_direct(spec: &KernelSpec, t: f64, x: &[f64], xi: &[f64]) -> Complex64 {
    symbol_direct_with(spec, t, x, xi, &SymbolQuadrature::default())
}

pub fn symbol_direct_with(spec: &KernelSpec, t: f64, x: &[f64], xi: &[f64], q: &SymbolQuadrature) -> Complex64 {
    density_symbol(&spec.density, spec.alpha, spec.truncation(), spec.dim, t, x, xi, q)
}

/// Symbol of an arbitrary density at `(t, x)` for order `p` and truncation `trunc`.
#[allow(clippy::too_many_arguments)]
pub fn density_symbol(
    density: &Density,
    p: f64,
    trunc: Truncation,
    dim: usize,
    t: f64,
    x: &[f64],
    xi: &[f64],
    q: &SymbolQuadrature,
) -> Complex64 {
    density
        .terms
        .iter()
        .map(|term| {
            let a = term.x_factor.as_ref().map_or(1.0, |f| f(t, x));
            if a == 0.0 {
                return Complex64::new(0.0, 0.0);
            }
            let yf = term.y_factor.clone();
            let b = move |y: &[f64]| yf(t, y);
            a * jump_symbol(&b, density.radially_homogeneous, &density.angular_breaks, dim, p, trunc, xi, q)
        })
        .sum()
}

/// [`symbol_direct`] together with a self-convergence check against doubled radial resolution.
pub fn symbol_direct_checked(
    spec: &KernelSpec,
    t: f64,
    x: &[f64],
    xi: &[f64],
    q: &SymbolQuadrature,
    tol: f64,
) -> Result<(Complex64, SymbolDiagnostics)> {
    let v = symbol_direct_with(spec, t, x, xi, q);
    let r = symbol_direct_with(spec, t, x, xi, &q.refined());
    let scale = r.norm().max(1e-300);
    let rel = (v - r).norm() / scale;
    let diag = SymbolDiagnostics { value_re: v.re, value_im: v.im, refined_re: r.re, refined_im: r.im, relative_change: rel };
    if rel > tol && r.norm() > 1e-300 {
        return Err(Error::Numerical {
            message: format!("symbol quadrature did not converge at xi = {xi:?}"),
            estimate: v.norm(),
            refined: r.norm(),
        });
    }
    Ok((r, diag))
}

/// `c_{d,α} = -ψ(e₁)` of the isotropic kernel `m ≡ 1`, so that the fractional
/// Laplacian has multiplier `-c|ξ|^α`.
pub fn fractional_laplacian_constant(alpha: f64, dim: usize) -> f64 {
    static CACHE: OnceLock<Mutex<HashMap<(u64, usize), f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(c) = cache.lock().unwrap().get(&(alpha.to_bits(), dim)) {
        return *c;
    }
    let xi = [1.0, 0.0];
    let v = density_symbol(
        &Density::constant(1.0),
        alpha,
        Truncation::for_order(alpha),
        dim,
        0.0,
        &[0.0, 0.0],
        &xi[..dim],
        &SymbolQuadrature::default(),
    );
    cache.lock().unwrap().insert((alpha.to_bits(), dim), -v.re);
    -v.re
}

// ---------------------------------------------------------------------------
// spherical formula

/// Spherical integral `∫_S |(w,ξ)|^α [1 - i tan(απ/2) sgn(w,ξ)] m(w) dw`
/// (α ≠ 1) or `∫_S |(w,ξ)| [1 + i (2/π) sgn(w,ξ) ln|(w,ξ)|] m(w) dw` (α = 1),
/// without the normalising constant.
fn spherical_integral(density: &Density, alpha: f64, dim: usize, t: f64, xi: &[f64], q: &SymbolQuadrature) -> Complex64 {
    let mut breaks = density.angular_breaks.clone();
    breaks.extend(kink_angles(xi));
    let dirs = sphere_rule(dim, &breaks, q.angular_levels, q.angular_order);
    let i = Complex64::new(0.0, 1.0);
    let tan = (alpha * PI / 2.0).tan();
    let mut acc = Complex64::new(0.0, 0.0);
    for (w, wt) in dirs {
        let w = &w[..dim];
        let a: f64 = w.iter().zip(xi).map(|(w, x)| w * x).sum();
        if a == 0.0 {
            continue;
        }
        let m = density.eval_y(t, w);
        let bracket = if alpha == 1.0 {
            1.0 + i * (2.0 / PI) * a.signum() * a.abs().ln()
        } else {
            1.0 - i * tan * a.signum()
        };
        acc += wt * a.abs().powf(alpha) * bracket * m;
    }
    acc
}

/// Odd angular moment `∫_S w m(t,w) dw`.
pub fn odd_moment(density: &Density, dim: usize, t: f64) -> [f64; 2] {
    let dirs = sphere_rule(dim, &density.angular_breaks, 8, 12);
    let mut out = [0.0; 2];
    for (w, wt) in dirs {
        let m = density.eval_y(t, &w[..dim]);
        for a in 0..dim {
            out[a] += wt * w[a] * m;
        }
    }
    out
}

/// Normalising constant `C(α)` of the spherical formula, calibrated once per
/// process by matching the y-space quadrature of the isotropic kernel at `ξ = e₁`.
pub fn spherical_constant(alpha: f64, dim: usize) -> f64 {
    static CACHE: OnceLock<Mutex<HashMap<(u64, usize), f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(c) = cache.lock().unwrap().get(&(alpha.to_bits(), dim)) {
        return *c;
    }
    let q = SymbolQuadrature::default();
    let iso = Density::constant(1.0);
    let xi = [1.0, 0.0];
    let direct = density_symbol(&iso, alpha, Truncation::for_order(alpha), dim, 0.0, &[0.0, 0.0], &xi[..dim], &q);
    let sph = spherical_integral(&iso, alpha, dim, 0.0, &xi[..dim], &q);
    let c = -direct.re / sph.re;
    cache.lock().unwrap().insert((alpha.to_bits(), dim), c);
    c
}

/// `ψ₀(t, ξ)` from the spherical formula applied to the minorant.
pub fn symbol_spherical(spec: &KernelSpec, t: f64, xi: &[f64]) -> Result<Complex64> {
    symbol_spherical_of(&spec.minorant, spec.alpha, spec.dim, t, xi)
}

/// Spherical formula for any x-independent density homogeneous of degree zero.
pub fn symbol_spherical_of(density: &Density, alpha: f64, dim: usize, t: f64, xi: &[f64]) -> Result<Complex64> {
    if !density.is_x_independent() || !density.radially_homogeneous {
        return Err(Error::config("spherical formula needs an x-independent, degree-zero homogeneous density"));
    }
    if alpha == 1.0 {
        let mom = odd_moment(density, dim, t);
        let scale = odd_moment_scale(density, dim, t);
        if (mom[0].hypot(mom[1])) > 1e-9 * scale.max(1.0) {
            return Err(Error::Assumption(format!(
                "alpha = 1 requires a vanishing odd angular moment, got ({:.6}, {:.6})",
                mom[0], mom[1]
            )));
        }
    }
    if norm(&xi[..dim]) == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let q = SymbolQuadrature::default();
    let c = spherical_constant(alpha, dim);
    Ok(-c * spherical_integral(density, alpha, dim, t, &xi[..dim], &q))
}

fn odd_moment_scale(density: &Density, dim: usize, t: f64) -> f64 {
    sphere_rule(dim, &density.angular_breaks, 6, 8)
        .into_iter()
        .map(|(w, wt)| wt * density.eval_y(t, &w[..dim]).abs())
        .sum()
}

// ---------------------------------------------------------------------------
// symbol tables

/// Which evaluation route fills a [`SymbolTable`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SymbolRoute {
    Direct,
    Spherical,
}

/// Symbol of an x-independent density evaluated on the dual grid, per time cell.
#[derive(Debug, Clone, Serialize)]
pub struct SymbolTable {
    pub shape: GridShape,
    pub cells: Vec<(f64, f64)>,
    /// `psi[c][k]` for cell `c` and flat spectral index `k`.
    pub psi: Vec<Vec<Complex64>>,
    /// Constant `C(α)` used by the spherical route (1 for the direct route).
    pub normalization: f64,
}

impl SymbolTable {
    /// Fill the table by y-space quadrature; the density is evaluated at the cell midpoints.
    pub fn direct(
        density: &Density,
        p: f64,
        trunc: Truncation,
        shape: GridShape,
        cells: &[(f64, f64)],
        q: &SymbolQuadrature,
    ) -> Result<SymbolTable> {
        trunc.check(p)?;
        if !density.is_x_independent() {
            return Err(Error::config("symbol tables need an x-independent density"));
        }
        let mut psi = Vec::with_capacity(cells.len());
        for &(a, b) in cells {
            let t = 0.5 * (a + b);
            psi.push(fill_table(shape, |xi| density_symbol(density, p, trunc, shape.dim, t, &[0.0, 0.0], xi, q)));
        }
        Ok(SymbolTable { shape, cells: cells.to_vec(), psi, normalization: 1.0 })
    }

    /// Fill the table from the spherical formula for `ψ₀` of the kernel's minorant.
    pub fn spherical(spec: &KernelSpec, shape: GridShape, cells: &[(f64, f64)]) -> Result<SymbolTable> {
        let mut psi = Vec::with_capacity(cells.len());
        for &(a, b) in cells {
            let t = 0.5 * (a + b);
            let mut err = None;
            let table = fill_table(shape, |xi| match symbol_spherical(spec, t, xi) {
                Ok(v) => v,
                Err(e) => {
                    err = Some(e);
                    Complex64::new(0.0, 0.0)
                }
            });
            if let Some(e) = err {
                return Err(e);
            }
            psi.push(table);
        }
        Ok(SymbolTable {
            shape,
            cells: cells.to_vec(),
            psi,
            normalization: spherical_constant(spec.alpha, spec.dim),
        })
    }

    /// Table for the kernel's own (x-independent) density via the direct route.
    pub fn for_kernel(spec: &KernelSpec, shape: GridShape, t_final: f64) -> Result<SymbolTable> {
        SymbolTable::direct(
            &spec.density,
            spec.alpha,
            spec.truncation(),
            shape,
            &spec.time_cells(t_final),
            &SymbolQuadrature::default(),
        )
    }

    pub fn cell_of(&self, t: f64) -> usize {
        cell_of(&self.cells, t)
    }

    /// `∫_s^t ψ(r, ξ_k) dr`, exact for piecewise-constant cells.
    pub fn integrated(&self, s: f64, t: f64, k: usize) -> Complex64 {
        self.cells
            .iter()
            .zip(&self.psi)
            .map(|(&(a, b), psi)| {
                let overlap = (t.min(b) - s.max(a)).max(0.0);
                psi[k] * overlap
            })
            .sum()
    }
}

/// Evaluate `f` on every dual-grid vector, using conjugate symmetry for half
/// of the bins and symmetrising Nyquist lines.
fn fill_table(shape: GridShape, mut f: impl FnMut(&[f64]) -> Complex64) -> Vec<Complex64> {
    let len = shape.len();
    let mut out = vec![Complex64::new(0.0, 0.0); len];
    let mut done = vec![false; len];
    for idx in 0..len {
        if done[idx] {
            continue;
        }
        let k = shape.frequency(idx);
        let v = f(&k[..shape.dim]);
        out[idx] = v;
        done[idx] = true;
        let neg = shape.negated(idx);
        let kn = shape.frequency(neg);
        // partner holds exactly -k unless k sits on a Nyquist line
        if !done[neg] && (0..shape.dim).all(|a| kn[a] == -k[a]) {
            out[neg] = v.conj();
            done[neg] = true;
        }
    }
    for idx in 0..len {
        if !done[idx] {
            let k = shape.frequency(idx);
            out[idx] = f(&k[..shape.dim]);
        }
    }
    hermitian_symmetrize(shape, &mut out);
    out
}

// ---------------------------------------------------------------------------
// assumption checks

/// Outcome of one assumption clause.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClauseResult {
    pub clause: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    pub witness: serde_json::Value,
    pub note: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub kernel: String,
    pub alpha: f64,
    pub dim: usize,
    pub eta: f64,
    pub big_k: f64,
    pub clauses: Vec<ClauseResult>,
    pub passed: bool,
}

impl AssumptionReport {
    pub fn clause(&self, name: &str) -> Option<&ClauseResult> {
        self.clauses.iter().find(|c| c.clause == name)
    }
}

/// Unit vectors `ξ` used for the nondegeneracy infimum.
fn xi_directions(dim: usize) -> Vec<[f64; 2]> {
    if dim == 1 {
        vec![[1.0, 0.0], [-1.0, 0.0]]
    } else {
        (0..720)
            .map(|k| {
                let th = 2.0 * PI * k as f64 / 720.0;
                [th.cos(), th.sin()]
            })
            .collect()
    }
}

/// `inf_{|ξ|=1} ∫_S |(w,ξ)|^α m₀(t,w) dw` over a dense ξ-grid, with the minimiser.
pub fn nondegeneracy_infimum(minorant: &Density, alpha: f64, dim: usize, t: f64) -> (f64, [f64; 2]) {
    let mut best = (f64::INFINITY, [1.0, 0.0]);
    for xi in xi_directions(dim) {
        let mut breaks = minorant.angular_breaks.clone();
        breaks.extend(kink_angles(&xi[..dim]));
        let v: f64 = sphere_rule(dim, &breaks, 6, 8)
            .into_iter()
            .map(|(w, wt)| {
                let a: f64 = (0..dim).map(|i| w[i] * xi[i]).sum();
                wt * a.abs().powf(alpha) * minorant.eval_y(t, &w[..dim])
            })
            .sum();
        if v < best.0 {
            best = (v, xi);
        }
    }
    best
}

fn sample_directions(dim: usize, count: usize) -> Vec<Vec<f64>> {
    if dim == 1 {
        return vec![vec![1.0], vec![-1.0]];
    }
    (0..count)
        .map(|k| {
            let th = 2.0 * PI * (k as f64 + 0.5) / count as f64;
            vec![th.cos(), th.sin()]
        })
        .collect()
}

/// Machine-check the standing assumptions on the sampled `(t, x)` points.
pub fn validate_assumptions(spec: &KernelSpec, t_samples: &[f64], x_samples: &[Vec<f64>]) -> Result<AssumptionReport> {
    spec.check_well_formed()?;
    if t_samples.is_empty() || x_samples.is_empty() {
        return Err(Error::config("assumption check needs nonempty t and x samples"));
    }
    let dim = spec.dim;
    let mut clauses = Vec::new();
    let dirs = sample_directions(dim, 96);
    let radii = [1e-3, 0.05, 0.5, 1.0, 3.0, 40.0];

    // A0(ii)
    if spec.alpha == 1.0 {
        let mut worst = (0.0f64, 0.0);
        for &t in t_samples {
            let m = odd_moment(&spec.minorant, dim, t);
            let n = m[0].hypot(m[1]);
            if n >= worst.0 {
                worst = (n, t);
            }
        }
        let mom = odd_moment(&spec.minorant, dim, worst.1);
        clauses.push(ClauseResult {
            clause: "A0(ii)".into(),
            passed: worst.0 <= 1e-9,
            value: worst.0,
            threshold: 1e-9,
            witness: serde_json::json!({ "t": worst.1, "moment": [mom[0], mom[1]] }),
            note: "odd angular moment of the minorant".into(),
        });
    } else {
        clauses.push(not_applicable("A0(ii)", "only required for alpha = 1"));
    }

    // A0(iii)
    let mut inf = (f64::INFINITY, [1.0, 0.0], 0.0);
    for &t in t_samples {
        let (v, xi) = nondegeneracy_infimum(&spec.minorant, spec.alpha, dim, t);
        if v < inf.0 {
            inf = (v, xi, t);
        }
    }
    clauses.push(ClauseResult {
        clause: "A0(iii)".into(),
        passed: inf.0 >= spec.eta,
        value: inf.0,
        threshold: spec.eta,
        witness: serde_json::json!({ "t": inf.2, "xi": &inf.1[..dim], "margin": inf.0 - spec.eta }),
        note: "infimum over unit xi of the spherical integral".into(),
    });

    // A(i): lower bound, upper bound, Hölder bound
    let mut lower = (f64::INFINITY, serde_json::Value::Null);
    let mut upper = (f64::NEG_INFINITY, serde_json::Value::Null);
    for &t in t_samples {
        for x in x_samples {
            for w in &dirs {
                for &r in &radii {
                    let y: Vec<f64> = w.iter().map(|v| r * v).collect();
                    let m = spec.density.eval(t, x, &y);
                    let m0 = spec.minorant.eval_y(t, w);
                    if m - m0 < lower.0 {
                        lower = (m - m0, serde_json::json!({ "t": t, "x": x, "y": y, "m": m, "m0": m0 }));
                    }
                    if m > upper.0 {
                        upper = (m, serde_json::json!({ "t": t, "x": x, "y": y }));
                    }
                }
            }
        }
    }
    clauses.push(ClauseResult {
        clause: "A(i) minorant".into(),
        passed: lower.0 >= -1e-12,
        value: lower.0,
        threshold: 0.0,
        witness: lower.1,
        note: "min of m - m0 over samples".into(),
    });
    clauses.push(ClauseResult {
        clause: "A(i) upper".into(),
        passed: upper.0 <= spec.big_k,
        value: upper.0,
        threshold: spec.big_k,
        witness: upper.1,
        note: "max of m over samples".into(),
    });
    let mut holder = (0.0f64, serde_json::Value::Null);
    for &t in t_samples {
        for w in dirs.iter().step_by((dirs.len() / 12).max(1)) {
            for &r in &radii {
                let y: Vec<f64> = w.iter().map(|v| r * v).collect();
                let vals: Vec<f64> = x_samples.iter().map(|x| spec.density.eval(t, x, &y)).collect();
                let sup = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                let mut semi = 0.0f64;
                for i in 0..x_samples.len() {
                    for j in i + 1..x_samples.len() {
                        let d = torus_distance(&x_samples[i], &x_samples[j]);
                        if d > 0.0 {
                            semi = semi.max((vals[i] - vals[j]).abs() / d.powf(spec.beta));
                        }
                    }
                }
                if sup + semi > holder.0 {
                    holder = (sup + semi, serde_json::json!({ "t": t, "y": y, "sup": sup, "seminorm": semi }));
                }
            }
        }
    }
    clauses.push(ClauseResult {
        clause: "A(i) holder".into(),
        passed: holder.0 <= spec.big_k * (1.0 + 1e-12),
        value: holder.0,
        threshold: spec.big_k,
        witness: holder.1,
        note: "max over y of |m(t,.,y)|_beta on the x samples".into(),
    });

    // A(ii) and y-symmetry for alpha = 1
    if spec.alpha == 1.0 {
        let mut asym = (0.0f64, serde_json::Value::Null);
        for &t in t_samples {
            for x in x_samples {
                for w in &dirs {
                    for &r in &radii {
                        let y: Vec<f64> = w.iter().map(|v| r * v).collect();
                        let ny: Vec<f64> = y.iter().map(|v| -v).collect();
                        let d = (spec.density.eval(t, x, &y) - spec.density.eval(t, x, &ny)).abs();
                        if d > asym.0 {
                            asym = (d, serde_json::json!({ "t": t, "x": x, "y": y }));
                        }
                    }
                }
            }
        }
        clauses.push(ClauseResult {
            clause: "symmetry".into(),
            passed: asym.0 <= 1e-12,
            value: asym.0,
            threshold: 1e-12,
            witness: asym.1,
            note: "alpha = 1 kernels must satisfy m(t,x,-y) = m(t,x,y)".into(),
        });
        let mut ann = (0.0f64, serde_json::Value::Null);
        let circle = sphere_rule(dim, &spec.density.angular_breaks, 6, 8);
        for &t in t_samples {
            for x in x_samples {
                for &r in &[0.05, 0.3, 0.7] {
                    let mut v = [0.0f64; 2];
                    for (w, wt) in &circle {
                        let b = |y: &[f64]| spec.density.eval(t, x, y);
                        let rad = radial_moment(&b, &w[..dim], 1.0, r, 1.0);
                        for a in 0..dim {
                            v[a] += wt * w[a] * rad;
                        }
                    }
                    let n = v[0].hypot(v[1]);
                    if n > ann.0 {
                        ann = (n, serde_json::json!({ "t": t, "x": x, "r": r, "integral": v }));
                    }
                }
            }
        }
        clauses.push(ClauseResult {
            clause: "A(ii)".into(),
            passed: ann.0 <= 1e-9,
            value: ann.0,
            threshold: 1e-9,
            witness: ann.1,
            note: "annulus cancellation of the first moment".into(),
        });
    } else {
        clauses.push(not_applicable("A(ii)", "only required for alpha = 1"));
    }

    let passed = clauses.iter().all(|c| c.passed);
    Ok(AssumptionReport {
        kernel: spec.name.clone(),
        alpha: spec.alpha,
        dim,
        eta: spec.eta,
        big_k: spec.big_k,
        clauses,
        passed,
    })
}

fn not_applicable(name: &str, note: &str) -> ClauseResult {
    ClauseResult {
        clause: name.into(),
        passed: true,
        value: 0.0,
        threshold: 0.0,
        witness: serde_json::Value::Null,
        note: note.into(),
    }
}

pub(crate) fn torus_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (x - y).rem_euclid(2.0 * PI);
            let d = d.min(2.0 * PI - d);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Default `(t, x)` samples: a few times and a coarse periodic x-grid.
pub fn default_samples(dim: usize, t_final: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
    let ts = vec![0.0, 0.5 * t_final, t_final];
    let n = if dim == 1 { 32 } else { 8 };
    let shape = GridShape { dim, n };
    let xs = (0..shape.len()).map(|i| shape.point(i)[..dim].to_vec()).collect();
    (ts, xs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iso(alpha: f64, dim: usize) -> KernelSpec {
        preset("isotropic", alpha, dim, 0.5, &PresetParams::default()).unwrap()
    }

    #[test]
    fn zero_frequency_symbol_vanishes() {
        let k = iso(1.3, 2);
        assert_eq!(symbol_direct(&k, 0.0, &[0.0, 0.0], &[0.0, 0.0]), Complex64::new(0.0, 0.0));
        assert_eq!(symbol_spherical(&k, 0.0, &[0.0, 0.0]).unwrap(), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn zero_kernel_has_zero_symbol() {
        let mut k = iso(0.8, 1);
        k.density = Density::zero();
        assert_eq!(symbol_direct(&k, 0.0, &[0.0], &[3.0]), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn isotropic_one_dimensional_nondegeneracy_is_two() {
        let k = iso(1.5, 1);
        let (v, _) = nondegeneracy_infimum(&k.minorant, 1.5, 1, 0.0);
        assert!((v - 2.0).abs() < 1e-14);
        let mut k2 = k.clone();
        k2.eta = 2.0;
        let rep = validate_assumptions(&k2, &[0.0], &[vec![0.0]]).unwrap();
        assert!(rep.clause("A0(iii)").unwrap().passed);
        k2.eta = 2.01;
        let rep = validate_assumptions(&k2, &[0.0], &[vec![0.0]]).unwrap();
        assert!(!rep.clause("A0(iii)").unwrap().passed);
    }

    #[test]
    fn odd_moment_of_tilted_density() {
        let m0 = Density::angular(|_, w| 1.0 + 0.5 * w[0], Vec::new());
        let m = odd_moment(&m0, 2, 0.0);
        assert!((m[0] - PI / 2.0).abs() < 1e-12 && m[1].abs() < 1e-12);
        let spec = preset("smooth-arc", 1.0, 2, 0.5, &PresetParams::default()).unwrap();
        let rep = validate_assumptions(&spec, &[0.0], &[vec![0.0, 0.0]]).unwrap();
        let c = rep.clause("A0(ii)").unwrap();
        assert!(!c.passed);
        assert!(matches!(symbol_spherical(&spec, 0.0, &[1.0, 0.0]), Err(Error::Assumption(_))));
    }

    #[test]
    fn malformed_spec_is_rejected() {
        let mut k = iso(1.5, 1);
        k.eta = 0.0;
        assert!(matches!(validate_assumptions(&k, &[0.0], &[vec![0.0]]), Err(Error::Config(_))));
        k.eta = 1.0;
        k.alpha = 2.0;
        assert!(matches!(validate_assumptions(&k, &[0.0], &[vec![0.0]]), Err(Error::Config(_))));
    }

    #[test]
    fn homogeneity_for_alpha_not_one() {
        let k = iso(1.5, 1);
        let base = symbol_spherical(&k, 0.0, &[1.0]).unwrap();
        let two = symbol_spherical(&k, 0.0, &[2.0]).unwrap();
        assert!((two - base * 2f64.powf(1.5)).norm() < 1e-10 * two.norm());
    }

    #[test]
    fn refined_quadrature_agrees_for_order_below_one() {
        let k = iso(0.7, 1);
        let (v, d) = symbol_direct_checked(&k, 0.0, &[0.0], &[1.0], &SymbolQuadrature::default(), 1e-6).unwrap();
        assert!(v.re < 0.0 && v.im.abs() < 1e-12);
        assert!(d.relative_change < 1e-6);
    }

    #[test]
    fn homogeneous_fast_path_matches_general_path() {
        for (alpha, name) in [(0.7, "sector-measurable"), (1.0, "sector-measurable"), (1.5, "smooth-arc")] {
            let spec = preset(name, alpha, 2, 0.5, &PresetParams::default()).unwrap();
            let mut general = spec.density.clone();
            general.radially_homogeneous = false;
            let q = SymbolQuadrature::default();
            for xi in [[1.0, 0.0], [2.0, -3.0], [0.0, 5.0]] {
                let a = density_symbol(&spec.density, alpha, spec.truncation(), 2, 0.0, &[0.0, 0.0], &xi, &q);
                let b = density_symbol(&general, alpha, spec.truncation(), 2, 0.0, &[0.0, 0.0], &xi, &q);
                assert!((a - b).norm() < 1e-7 * a.norm(), "{name} {alpha} {xi:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn symbol_tables_are_hermitian() {
        let spec = preset("smooth-arc", 1.2, 2, 0.5, &PresetParams::default()).unwrap();
        let shape = GridShape::new(2, 8).unwrap();
        let t = SymbolTable::for_kernel(&spec, shape, 1.0).unwrap();
        for idx in 0..shape.len() {
            let a = t.psi[0][idx];
            let b = t.psi[0][shape.negated(idx)].conj();
            assert!((a - b).norm() < 1e-12);
            assert!(a.re <= 1e-12);
        }
    }

    #[test]
    fn presets_pass_their_own_assumptions() {
        let (ts, xs) = default_samples(1, 1.0);
        for name in PRESETS {
            for alpha in [0.7, 1.0, 1.5] {
                let spec = preset(name, alpha, 1, 0.5, &PresetParams { x_amplitude: 1.0, ..Default::default() }).unwrap();
                let rep = validate_assumptions(&spec, &ts, &xs).unwrap();
                let expect = !(name == "smooth-arc" && alpha == 1.0);
                assert_eq!(rep.passed, expect, "{name} alpha={alpha}: {:?}", rep.clauses);
            }
        }
    }

    #[test]
    fn time_cells_cover_interval() {
        let cells = time_cells(&[0.25, 0.5, 2.0], 1.0);
        assert_eq!(cells, vec![(0.0, 0.25), (0.25, 0.5), (0.5, 1.0)]);
        assert_eq!(cell_of(&cells, 0.25), 1);
        assert_eq!(cell_of(&cells, 1.0), 2);
    }
}

#[cfg(test)]
mod closed_form_tests {
    use super::*;
    use statrs::function::gamma::gamma;

    /// `-C(α)` times the spherical integral of the isotropic kernel at `|ξ| = 1`
    /// compared with the one-dimensional closed form of the stable symbol.
    #[test]
    fn constant_matches_gamma_closed_form() {
        for alpha in [0.3, 0.7, 1.0, 1.3, 1.7, 1.95] {
            let expect = if alpha == 1.0 { PI / 2.0 } else { -gamma(-alpha) * (PI * alpha / 2.0).cos() };
            for dim in [1, 2] {
                let c = spherical_constant(alpha, dim);
                assert!((c - expect).abs() < 1e-6 * expect, "alpha={alpha} dim={dim}: {c} vs {expect}");
            }
        }
    }

    #[test]
    fn direct_and_spherical_agree_off_axis() {
        for alpha in [0.6, 1.0, 1.4] {
            for name in ["smooth-arc", "sector-measurable", "degenerate-minorant"] {
                if alpha == 1.0 && name == "smooth-arc" {
                    continue;
                }
                let spec = preset(name, alpha, 2, 0.5, &PresetParams::default()).unwrap();
                let k = spec.minorant_kernel();
                for xi in [[3.0, -1.0], [0.5, 2.5], [-7.0, 4.0]] {
                    let d = symbol_direct(&k, 0.0, &[0.0, 0.0], &xi);
                    let s = symbol_spherical(&k, 0.0, &xi).unwrap();
                    assert!((d - s).norm() < 1e-5 * s.norm(), "{name} {alpha} {xi:?}: {d} vs {s}");
                }
            }
        }
    }
}
