//! Hölder–Zygmund norm estimation on periodic grids.
//!
//! Seminorms are maximised over every grid point and every minimum-image grid
//! displacement, so the witnesses `(x, h)` are exact grid locations.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridFunction, GridShape};
use crate::kernel::fractional_laplacian_constant;

/// Location of the maximising difference quotient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub value: f64,
    pub x: Vec<f64>,
    pub h: Vec<f64>,
}

impl Witness {
    fn none(dim: usize) -> Self {
        Witness { value: 0.0, x: vec![0.0; dim], h: vec![0.0; dim] }
    }
}

pub fn sup_norm(u: &GridFunction) -> f64 {
    u.sup()
}

/// All nonzero minimum-image displacements as (index offset, physical length).
fn displacements(shape: GridShape, max_len: Option<f64>) -> Vec<([i64; 2], f64)> {
    let n = shape.n as i64;
    let dx = shape.spacing();
    let range: Vec<i64> = (-(n / 2) + 1..=n / 2).collect();
    let mut out = Vec::new();
    let second: Vec<i64> = if shape.dim == 2 { range.clone() } else { vec![0] };
    for &a in &range {
        for &b in &second {
            if a == 0 && b == 0 {
                continue;
            }
            let len = dx * ((a * a + b * b) as f64).sqrt();
            if max_len.is_some_and(|m| len > m) {
                continue;
            }
            out.push(([a, b], len));
        }
    }
    out
}

fn shift_index(shape: GridShape, idx: usize, off: [i64; 2], sign: i64) -> usize {
    let n = shape.n as i64;
    let mi = shape.multi_index(idx);
    let i0 = (mi[0] as i64 + sign * off[0]).rem_euclid(n) as usize;
    if shape.dim == 1 {
        i0
    } else {
        let i1 = (mi[1] as i64 + sign * off[1]).rem_euclid(n) as usize;
        shape.flat(i0, i1)
    }
}

fn maximise(u: &GridFunction, max_len: Option<f64>, quotient: impl Fn(usize, [i64; 2], f64) -> f64 + Sync) -> Witness {
    let shape = u.shape();
    let hs = displacements(shape, max_len);
    let dx = shape.spacing();
    let best = hs
        .par_iter()
        .map(|&(off, len)| {
            let mut top = (0.0f64, 0usize);
            for idx in 0..shape.len() {
                let q = quotient(idx, off, len);
                if q > top.0 {
                    top = (q, idx);
                }
            }
            (top.0, top.1, off)
        })
        .reduce(
            || (0.0, 0, [0, 0]),
            |a, b| {
                // ties resolved by displacement order so the witness is deterministic
                if b.0 > a.0 || (b.0 == a.0 && (b.2, b.1) < (a.2, a.1)) {
                    b
                } else {
                    a
                }
            },
        );
    if best.0 == 0.0 {
        return Witness::none(shape.dim);
    }
    let p = shape.point(best.1);
    Witness {
        value: best.0,
        x: p[..shape.dim].to_vec(),
        h: best.2[..shape.dim].iter().map(|k| *k as f64 * dx).collect(),
    }
}

/// `max |u(x+h) - u(x)| / |h|^β` with its witness, optionally restricted to `|h| <= max_len`.
pub fn holder_seminorm_witness(u: &GridFunction, beta: f64, max_len: Option<f64>) -> Witness {
    let shape = u.shape();
    let v = &u.values;
    maximise(u, max_len, |idx, off, len| (v[shift_index(shape, idx, off, 1)] - v[idx]).abs() / len.powf(beta))
}

/// First-difference Hölder seminorm `[u]_β` for `0 < β < 1`.
pub fn holder_seminorm(u: &GridFunction, beta: f64) -> f64 {
    holder_seminorm_witness(u, beta, None).value
}

/// `max |u(x+h) + u(x-h) - 2u(x)| / |h|` with its witness.
pub fn zygmund_seminorm_witness(u: &GridFunction) -> Witness {
    let shape = u.shape();
    let v = &u.values;
    maximise(u, None, |idx, off, len| {
        (v[shift_index(shape, idx, off, 1)] + v[shift_index(shape, idx, off, -1)] - 2.0 * v[idx]).abs() / len
    })
}

pub fn zygmund_seminorm(u: &GridFunction) -> f64 {
    zygmund_seminorm_witness(u).value
}

/// `[u]_β` for `β ∈ (0, 1]`, using the second difference at `β = 1`.
pub fn seminorm_witness(u: &GridFunction, beta: f64) -> Witness {
    if beta >= 1.0 {
        zygmund_seminorm_witness(u)
    } else {
        holder_seminorm_witness(u, beta, None)
    }
}

/// Split `β = [β]⁻ + {β}⁺` with `[β]⁻` the largest integer strictly below β.
pub fn split_exponent(beta: f64) -> (usize, f64) {
    let lower = (beta.ceil() as usize).saturating_sub(1);
    (lower, beta - lower as f64)
}

fn multi_indices(dim: usize, order: usize) -> Vec<[usize; 2]> {
    if dim == 1 {
        vec![[order, 0]]
    } else {
        (0..=order).map(|a| [order - a, a]).collect()
    }
}

/// Composite norm `Σ_{|γ| ≤ [β]⁻} |D^γ u|₀ + Σ_{|γ| = [β]⁻} [D^γ u]_{{β}⁺}` with spectral derivatives.
pub fn composite_norm(u: &GridFunction, beta: f64) -> f64 {
    composite_parts(u, beta).0
}

fn composite_parts(u: &GridFunction, beta: f64) -> (f64, Vec<(String, f64)>, Witness) {
    let (lower, frac) = split_exponent(beta);
    let mut total = 0.0;
    let mut parts = Vec::new();
    let mut witness = Witness::none(u.dim);
    for order in 0..=lower {
        for gamma in multi_indices(u.dim, order) {
            let d = if order == 0 { u.clone() } else { u.derivative(gamma) };
            let s = d.sup();
            total += s;
            parts.push((format!("sup D^{:?}", &gamma[..u.dim]), s));
            if order == lower {
                let w = seminorm_witness(&d, frac);
                total += w.value;
                parts.push((format!("[D^{:?}]_{frac}", &gamma[..u.dim]), w.value));
                if w.value >= witness.value {
                    witness = w;
                }
            }
        }
    }
    (total, parts, witness)
}

/// `∂^α u`, the spectral multiplier `-c|ξ|^α` with `c` the fractional-Laplacian constant.
pub fn fractional_derivative(u: &GridFunction, alpha: f64) -> GridFunction {
    let c = fractional_laplacian_constant(alpha, u.dim);
    let dim = u.dim;
    u.apply_multiplier(|k| {
        let r = (k[0] * k[0] + if dim == 2 { k[1] * k[1] } else { 0.0 }).sqrt();
        (-c * r.powf(alpha)).into()
    })
}

/// `|u|₀ + [∂^α u]_β`.
pub fn equiv_norm(u: &GridFunction, alpha: f64, beta: f64) -> f64 {
    u.sup() + seminorm_witness(&fractional_derivative(u, alpha), beta).value
}

/// Norm summary of a grid function, serialisable to JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormReport {
    pub dim: usize,
    pub points_per_axis: usize,
    pub time: f64,
    pub sup_norm: f64,
    pub seminorms: BTreeMap<String, f64>,
    pub seminorm_witnesses: BTreeMap<String, Witness>,
    pub beta: f64,
    pub composite: f64,
    pub composite_parts: Vec<(String, f64)>,
    pub composite_witness: Witness,
    pub alpha: Option<f64>,
    pub equiv_alpha_beta: Option<f64>,
}

impl NormReport {
    /// Report with `[u]_b` for every `b` in `exponents`, `|u|_β`, and `|u|₀ + [∂^α u]_{β}` when `alpha` is given.
    pub fn compute(u: &GridFunction, exponents: &[f64], beta: f64, alpha: Option<f64>) -> NormReport {
        let mut seminorms = BTreeMap::new();
        let mut witnesses = BTreeMap::new();
        for &b in exponents {
            let w = seminorm_witness(u, b.min(1.0));
            seminorms.insert(format!("{b}"), w.value);
            witnesses.insert(format!("{b}"), w);
        }
        let (composite, parts, cw) = composite_parts(u, beta);
        let frac = split_exponent(beta).1;
        NormReport {
            dim: u.dim,
            points_per_axis: u.n,
            time: u.time,
            sup_norm: u.sup(),
            seminorms,
            seminorm_witnesses: witnesses,
            beta,
            composite,
            composite_parts: parts,
            composite_witness: cw,
            alpha,
            equiv_alpha_beta: alpha.map(|a| equiv_norm(u, a, frac)),
        }
    }
}

/// Lacunary Fourier series `Σ_{j<J} 2^{-jβ} cos(2^j x + φ_j)` with random phases
/// (summed over both axes in two dimensions), scaled so `|f|_β = 1`.
pub fn weierstrass_forcing(shape: GridShape, beta: f64, terms: usize, seed: u64) -> Result<GridFunction> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::config(format!("beta must lie in (0,1], got {beta}")));
    }
    if terms == 0 {
        return Err(Error::config("Weierstrass forcing needs at least one term"));
    }
    if (1usize << (terms - 1)) >= shape.n / 2 {
        return Err(Error::config(format!(
            "Weierstrass frequency 2^{} is not resolved on a grid of {} points",
            terms - 1,
            shape.n
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phases: Vec<[f64; 2]> = (0..terms)
        .map(|_| [rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.0..std::f64::consts::TAU)])
        .collect();
    let raw = shape.sample(0.0, |x| {
        let mut s = 0.0;
        for (j, ph) in phases.iter().enumerate() {
            let k = (1u64 << j) as f64;
            let a = 2f64.powf(-(j as f64) * beta);
            s += a * (k * x[0] + ph[0]).cos();
            if shape.dim == 2 {
                s += a * (k * x[1] + ph[1]).cos();
            }
        }
        s
    });
    Ok(normalized(&raw, beta))
}

/// `u / |u|_β` (returns `u` unchanged when the norm vanishes).
pub fn normalized(u: &GridFunction, beta: f64) -> GridFunction {
    let n = composite_norm(u, beta);
    if n > 0.0 {
        u.scaled(1.0 / n)
    } else {
        u.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn cosine(n: usize, k: f64, phase: f64) -> GridFunction {
        GridShape::new(1, n).unwrap().sample(0.0, |x| (k * x[0] + phase).cos())
    }

    /// Dense search over continuous x and h (10x finer than the grid).
    fn dense_holder(f: impl Fn(f64) -> f64, beta: f64, n: usize) -> f64 {
        let m = 10 * n;
        let d = 2.0 * PI / m as f64;
        let mut best = 0.0f64;
        for i in 0..m {
            for j in 1..=m / 2 {
                let (x, h) = (i as f64 * d, j as f64 * d);
                best = best.max((f(x + h) - f(x)).abs() / h.powf(beta));
            }
        }
        best
    }

    #[test]
    fn sup_norm_examples() {
        assert_eq!(sup_norm(&GridShape::new(1, 256).unwrap().zeros(0.0)), 0.0);
        assert!((sup_norm(&cosine(256, 1.0, 0.0)) - 1.0).abs() < 1e-15);
        let mut last = 0.0;
        for n in [16, 32, 64, 128] {
            let dx = 2.0 * PI / n as f64;
            let v = sup_norm(&cosine(n, 1.0, 0.3 * dx / 2.0));
            assert!(v < 1.0 && v > last);
            last = v;
        }
    }

    #[test]
    fn holder_of_cosine_matches_dense_search() {
        let u = cosine(64, 1.0, 0.0);
        let got = holder_seminorm(&u, 0.5);
        let oracle = dense_holder(|x| x.cos(), 0.5, 64);
        assert!((got - oracle).abs() < 0.02 * oracle, "{got} vs {oracle}");
        assert!(holder_seminorm(&u.with_values(vec![2.0; 64]), 0.5) == 0.0);
        assert!((holder_seminorm(&u.scaled(3.0), 0.5) - 3.0 * got).abs() <= 1e-15 * got);
    }

    #[test]
    fn zygmund_of_cosine_matches_dense_search() {
        let n = 64;
        let got = zygmund_seminorm(&cosine(n, 1.0, 0.0));
        let m = 10 * n;
        let d = 2.0 * PI / m as f64;
        let mut oracle = 0.0f64;
        for i in 0..m {
            for j in 1..=m / 2 {
                let (x, h) = (i as f64 * d, j as f64 * d);
                oracle = oracle.max(((x + h).cos() + (x - h).cos() - 2.0 * x.cos()).abs() / h);
            }
        }
        assert!((got - oracle).abs() < 0.02 * oracle, "{got} vs {oracle}");
    }

    #[test]
    fn zygmund_of_lacunary_sum_is_stable_below_nyquist() {
        let shape = GridShape::new(1, 1024).unwrap();
        let vals: Vec<f64> = (5..=8)
            .map(|terms| {
                let u = shape.sample(0.0, |x| (0..terms).map(|j| 2f64.powi(-j) * (2f64.powi(j) * x[0]).cos()).sum());
                zygmund_seminorm(&u)
            })
            .collect();
        for w in vals.windows(2) {
            assert!((w[1] - w[0]).abs() < 0.1 * w[0], "{vals:?}");
        }
    }

    #[test]
    fn composite_of_cosine_assembles_parts() {
        let u = cosine(128, 1.0, 0.2);
        let du = u.derivative([1, 0]);
        let expect = u.sup() + du.sup() + holder_seminorm(&du, 0.5);
        assert!((composite_norm(&u, 1.5) - expect).abs() < 1e-14);
        let c = u.with_values(vec![0.7; 128]);
        assert!((composite_norm(&c, 0.5) - 0.7).abs() < 1e-15);
        assert!((composite_norm(&u.scaled(2.5), 1.5) - 2.5 * expect).abs() < 1e-12);
        assert_eq!(split_exponent(1.0), (0, 1.0));
        assert_eq!(split_exponent(2.0), (1, 1.0));
        assert_eq!(split_exponent(2.2).0, 2);
    }

    #[test]
    fn equiv_norm_of_eigenfunction() {
        let k = 3.0;
        let u = cosine(128, k, 0.0);
        let c = fractional_laplacian_constant(1.3, 1);
        let expect = 1.0 + c * k.powf(1.3) * holder_seminorm(&u, 0.5);
        assert!((equiv_norm(&u, 1.3, 0.5) - expect).abs() < 1e-9 * expect);
        let konst = u.with_values(vec![1.5; 128]);
        assert!((equiv_norm(&konst, 1.3, 0.5) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn weierstrass_normalisation() {
        let shape = GridShape::new(1, 256).unwrap();
        let f = weierstrass_forcing(shape, 0.5, 5, 7).unwrap();
        assert!((composite_norm(&f, 0.5) - 1.0).abs() < 1e-12);
        let again = normalized(&f, 0.5);
        assert!(again.values.iter().zip(&f.values).all(|(a, b)| (a - b).abs() < 1e-12));
        let one = weierstrass_forcing(shape, 0.5, 1, 7).unwrap();
        let spec = one.spectrum();
        let energy: f64 = spec.iter().map(|c| c.norm_sqr()).sum();
        assert!((spec[1].norm_sqr() + spec[255].norm_sqr()) / energy > 1.0 - 1e-12);
        assert!(matches!(weierstrass_forcing(shape, 0.5, 8, 7), Err(Error::Config(_))));
    }

    #[test]
    fn report_is_nonnegative_json() {
        let f = weierstrass_forcing(GridShape::new(2, 16).unwrap(), 0.5, 3, 1).unwrap();
        let r = NormReport::compute(&f, &[0.3, 0.5, 1.0], 0.5, Some(1.5));
        assert!(r.sup_norm <= r.composite);
        assert!(r.seminorms.values().all(|v| *v >= 0.0));
        let s = serde_json::to_string(&r).unwrap();
        assert!(s.contains("seminorm_witnesses"));
    }
}
