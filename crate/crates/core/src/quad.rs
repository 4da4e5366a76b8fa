//! Quadrature building blocks: Gauss–Legendre rules, graded panels, compensated sums.

use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on [-1, 1], computed by Newton iteration on P_n.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// A one-dimensional quadrature rule as parallel node/weight arrays.
#[derive(Debug, Clone, Default)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        let mut acc = KahanSum::default();
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc.add(w * f(*x));
        }
        acc.value()
    }

    /// Append a Gauss–Legendre panel on [a, b].
    pub fn push_panel(&mut self, a: f64, b: f64, order: usize) {
        let (x, w) = gl_cached(order);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (xi, wi) in x.iter().zip(w.iter()) {
            self.nodes.push(mid + half * xi);
            self.weights.push(half * wi);
        }
    }

    /// Composite rule on [a, b] with panels graded geometrically towards both ends.
    pub fn graded(a: f64, b: f64, levels: usize, ratio: f64, order: usize) -> Self {
        let mut rule = Rule::default();
        rule.push_graded(a, b, levels, ratio, order);
        rule
    }

    pub fn push_graded(&mut self, a: f64, b: f64, levels: usize, ratio: f64, order: usize) {
        let mut cuts = vec![0.0];
        for l in (1..=levels).rev() {
            cuts.push(0.5 * ratio.powi(l as i32));
        }
        cuts.push(0.5);
        for l in 1..=levels {
            cuts.push(1.0 - 0.5 * ratio.powi(l as i32));
        }
        cuts.push(1.0);
        for pair in cuts.windows(2) {
            self.push_panel(a + (b - a) * pair[0], a + (b - a) * pair[1], order);
        }
    }

    /// Rule for `∫_a^b g(r) dr` with panels uniform in `log r` (requires 0 < a < b).
    pub fn log_panels(a: f64, b: f64, panels_per_e: f64, order: usize) -> Self {
        let mut rule = Rule::default();
        let (la, lb) = (a.ln(), b.ln());
        let panels = (((lb - la) * panels_per_e).ceil() as usize).max(1);
        let step = (lb - la) / panels as f64;
        let (x, w) = gl_cached(order);
        for p in 0..panels {
            let u0 = la + p as f64 * step;
            let mid = u0 + 0.5 * step;
            for (xi, wi) in x.iter().zip(w.iter()) {
                let r = (mid + 0.5 * step * xi).exp();
                rule.nodes.push(r);
                rule.weights.push(0.5 * step * wi * r);
            }
        }
        rule
    }
}

fn gl_cached(order: usize) -> (&'static [f64], &'static [f64]) {
    use std::collections::HashMap;
    use std::sync::{Mutex, OnceLock};
    type Table = HashMap<usize, (&'static [f64], &'static [f64])>;
    static CACHE: OnceLock<Mutex<Table>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("quadrature cache poisoned");
    *guard.entry(order).or_insert_with(|| {
        let (x, w) = gauss_legendre(order);
        (Box::leak(x.into_boxed_slice()), Box::leak(w.into_boxed_slice()))
    })
}

/// Neumaier compensated summation; order-dependent but reproducible.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = KahanSum::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Angular quadrature on S^{d-1}: unit directions with weights.
///
/// For `d = 1` the sphere is the two-point set `{-1, +1}` with counting measure.
/// For `d = 2` the circle is split at the supplied break angles and each arc
/// carries a graded Gauss–Legendre rule, so kinks and jumps of the integrand at
/// those angles do not spoil convergence.
pub fn sphere_rule(dim: usize, breaks: &[f64], levels: usize, order: usize) -> Vec<([f64; 2], f64)> {
    match dim {
        1 => vec![([1.0, 0.0], 1.0), ([-1.0, 0.0], 1.0)],
        2 => {
            let two_pi = 2.0 * PI;
            let mut cuts: Vec<f64> = breaks.iter().map(|b| b.rem_euclid(two_pi)).collect();
            if cuts.is_empty() {
                cuts.push(0.0);
            }
            cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-13);
            let first = cuts[0];
            cuts.push(first + two_pi);
            let mut out = Vec::new();
            for pair in cuts.windows(2) {
                if pair[1] - pair[0] < 1e-13 {
                    continue;
                }
                let rule = Rule::graded(pair[0], pair[1], levels, 0.25, order);
                for (th, w) in rule.nodes.iter().zip(rule.weights.iter()) {
                    out.push(([th.cos(), th.sin()], *w));
                }
            }
            out
        }
        _ => panic!("unsupported dimension {dim}"),
    }
}

/// Surface measure of S^{d-1}.
pub fn sphere_area(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => 2.0 * PI,
        _ => panic!("unsupported dimension {dim}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(8);
        for p in 0..16 {
            let got: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(p)).sum();
            let exact = if p % 2 == 1 { 0.0 } else { 2.0 / (p as f64 + 1.0) };
            assert!((got - exact).abs() < 1e-14, "p={p}: {got} vs {exact}");
        }
    }

    #[test]
    fn graded_rule_handles_endpoint_singularity() {
        let rule = Rule::graded(0.0, 1.0, 16, 0.25, 10);
        let got = rule.integrate(|x| x.powf(-0.5));
        assert!((got - 2.0).abs() < 1e-5, "{got}");
    }

    #[test]
    fn log_panels_integrate_power() {
        let rule = Rule::log_panels(1e-3, 10.0, 2.0, 8);
        let got = rule.integrate(|r| r.powf(-1.3));
        let exact = (1e-3f64.powf(-0.3) - 10f64.powf(-0.3)) / 0.3;
        assert!((got / exact - 1.0).abs() < 1e-12);
    }

    #[test]
    fn circle_rule_has_full_measure() {
        let rule = sphere_rule(2, &[0.3, 2.0], 4, 8);
        let total: f64 = rule.iter().map(|(_, w)| w).sum();
        assert!((total - 2.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn kahan_sum_recovers_small_terms() {
        let s: KahanSum = [1e16, 1.0, -1e16].into_iter().collect();
        assert_eq!(s.value(), 1.0);
    }
}
