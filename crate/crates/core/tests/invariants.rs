use proptest::prelude::*;

use nonlocal_cauchy::config::substream;
use nonlocal_cauchy::const_solver::{heat_kernel, resolve, Forcing, SolveConfig};
use nonlocal_cauchy::holder::holder_seminorm;
use nonlocal_cauchy::io::SolutionContainer;
use nonlocal_cauchy::kernel::{preset, PresetParams};
use nonlocal_cauchy::nonlocal::frac_laplacian;
use nonlocal_cauchy::{GridFunction, GridShape, Interpolator, SymbolTable, TimeSeries};

fn trig(shape: GridShape, coeffs: &[f64]) -> GridFunction {
    shape.sample(0.0, |x| {
        coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let k = (k + 1) as f64;
                let y = if x.len() == 2 { x[1] } else { 0.0 };
                c * (k * x[0] + y).cos() + 0.5 * c * (k * x[0]).sin()
            })
            .sum()
    })
}

fn close(a: &GridFunction, b: &GridFunction, tol: f64) -> bool {
    a.values.iter().zip(&b.values).all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn holder_seminorm_is_homogeneous_and_shift_invariant(
        coeffs in prop::collection::vec(-2.0f64..2.0, 1..5),
        c in -3.0f64..3.0,
        beta in 0.1f64..0.95,
        shift in 0usize..32,
    ) {
        let shape = GridShape::new(1, 32).unwrap();
        let u = trig(shape, &coeffs);
        let h = holder_seminorm(&u, beta);
        let scaled = holder_seminorm(&u.scaled(c), beta);
        prop_assert!((scaled - c.abs() * h).abs() <= 1e-10 * (1.0 + h));
        let mut rotated = u.values.clone();
        rotated.rotate_left(shift);
        let hs = holder_seminorm(&u.with_values(rotated), beta);
        prop_assert!((hs - h).abs() <= 1e-10 * (1.0 + h));
    }

    #[test]
    fn fractional_laplacian_is_linear_and_kills_constants(
        a in prop::collection::vec(-2.0f64..2.0, 1..4),
        b in prop::collection::vec(-2.0f64..2.0, 1..4),
        c in -3.0f64..3.0,
        alpha in 0.2f64..1.9,
        dim in 1usize..=2,
    ) {
        let shape = GridShape::new(dim, 16).unwrap();
        let (u, v) = (trig(shape, &a), trig(shape, &b));
        let mut w = u.clone();
        w.axpy(c, &v);
        let lhs = frac_laplacian(&w, alpha);
        let mut rhs = frac_laplacian(&u, alpha);
        rhs.axpy(c, &frac_laplacian(&v, alpha));
        prop_assert!(close(&lhs, &rhs, 1e-10));
        let k = shape.sample(0.0, |_| c);
        prop_assert!(frac_laplacian(&k, alpha).sup() <= 1e-10 * (1.0 + c.abs()));
    }

    #[test]
    fn interpolator_reproduces_nodes(coeffs in prop::collection::vec(-2.0f64..2.0, 1..4), dim in 1usize..=2) {
        let shape = GridShape::new(dim, 16).unwrap();
        let u = trig(shape, &coeffs);
        let it = Interpolator::new(&u, 4);
        for i in (0..shape.len()).step_by(7) {
            let p = shape.point(i);
            prop_assert!((it.eval(&p[..dim]) - u.values[i]).abs() <= 1e-9 * (1.0 + u.sup()));
        }
    }

    #[test]
    fn substreams_are_deterministic_and_distinct(seed in any::<u64>(), a in "[a-z]{1,8}", b in "[a-z]{1,8}") {
        prop_assert_eq!(substream(seed, &a), substream(seed, &a));
        if a != b {
            prop_assert_ne!(substream(seed, &a), substream(seed, &b));
        }
    }

    #[test]
    fn solution_container_round_trips_through_json(
        frames in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 8), 2..6),
        max_frames in 2usize..10,
    ) {
        let m = frames.len();
        let gs: Vec<GridFunction> = frames
            .into_iter()
            .enumerate()
            .map(|(i, v)| GridFunction { dim: 1, n: 8, values: v, time: i as f64 / (m - 1) as f64 })
            .collect();
        let u = TimeSeries::new(gs).unwrap();
        let c = SolutionContainer::from_series(&u, max_frames);
        prop_assert_eq!(c.times.len(), m.min(max_frames));
        prop_assert_eq!(c.times[0], 0.0);
        prop_assert_eq!(*c.times.last().unwrap(), 1.0);
        let text = serde_json::to_string(&c).unwrap();
        let back: SolutionContainer = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(&back.frames, &c.frames);
        prop_assert_eq!(&back.frames[0], &u.frames[0].values);
        prop_assert_eq!(back.frames.last().unwrap(), &u.frames[m - 1].values);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn heat_kernel_has_unit_mass_and_semigroup_property(alpha in 0.3f64..1.9, s in 0.0f64..0.4, gap in 0.05f64..0.5) {
        let spec = preset("isotropic", alpha, 1, 0.5, &PresetParams::default()).unwrap();
        let shape = GridShape::new(1, 32).unwrap();
        let table = SymbolTable::for_kernel(&spec, shape, 2.0).unwrap();
        let (r, t) = (s + gap, s + 2.0 * gap);
        let whole = heat_kernel(&table, s, t).unwrap();
        prop_assert!((whole.mass() - 1.0).abs() <= 1e-12);
        let first = heat_kernel(&table, s, r).unwrap();
        let second = heat_kernel(&table, r, t).unwrap();
        for k in 0..shape.len() {
            let prod = first.multiplier[k] * second.multiplier[k];
            prop_assert!((prod - whole.multiplier[k]).norm() <= 1e-12);
        }
    }

    #[test]
    fn constant_solver_is_linear_in_the_forcing(
        a in prop::collection::vec(-2.0f64..2.0, 1..4),
        b in prop::collection::vec(-2.0f64..2.0, 1..4),
        c in -3.0f64..3.0,
        lambda in 0.0f64..5.0,
    ) {
        let spec = preset("sector-measurable", 1.3, 1, 0.5, &PresetParams::default()).unwrap();
        let shape = GridShape::new(1, 16).unwrap();
        let (f, g) = (trig(shape, &a), trig(shape, &b));
        let mut h = f.clone();
        h.axpy(c, &g);
        let run = |forcing: GridFunction| {
            resolve(&spec, &SolveConfig { lambda, t_final: 1.0, time_cells: 8, forcing: Forcing::Static(forcing) }).unwrap()
        };
        let (uf, ug, uh) = (run(f), run(g), run(h));
        for ((x, y), z) in uf.frames.iter().zip(&ug.frames).zip(&uh.frames) {
            let mut w = x.clone();
            w.axpy(c, y);
            prop_assert!(close(&w, z, 1e-10));
        }
    }
}
