use nonlocal_cauchy::config::default_probes;
use nonlocal_cauchy::const_solver::{resolve, Forcing, SolveConfig};
use nonlocal_cauchy::grid::{GridShape, TimeSeries};
use nonlocal_cauchy::kernel::{preset, PresetParams};
use nonlocal_cauchy::mc::{backward_from_forward, evaluate, feynman_kac_probes, martingale_residual, McOptions};
use nonlocal_cauchy::nonlocal::BOperatorSpec;
use nonlocal_cauchy::var_solver::frame_at;

fn forcing(shape: GridShape) -> Forcing {
    Forcing::Static(shape.sample(0.0, |x| x[0].cos() + 0.5 * (2.0 * x[0] + 1.0).sin()))
}

#[test]
fn backward_solution_matches_path_expectation() {
    let spec = preset("isotropic", 1.2, 1, 0.5, &PresetParams::default()).unwrap();
    let t_final = 1.0;
    let f = forcing(GridShape::new(1, 64).unwrap());
    let cfg = SolveConfig { lambda: 0.0, t_final, time_cells: 64, forcing: f.time_reversed(t_final) };
    let u = backward_from_forward(&resolve(&spec, &cfg).unwrap(), t_final);
    let probes = default_probes(1, t_final);
    let opts = McOptions { t_final, ..McOptions::default() };
    let est = feynman_kac_probes(&spec, &BOperatorSpec::zero(), &f, &probes[..3], 4000, 21, &opts).unwrap();
    for ((s, x), e) in probes.iter().zip(&est) {
        let pde = evaluate(&frame_at(&u, *s), x);
        assert!((e.value - pde).abs() <= 4.0 * e.std_error + 2e-3, "s={s} x={x:?}: {} ± {} vs {pde}", e.value, e.std_error);
    }
}

#[test]
fn martingale_residual_separates_solution_from_forcing() {
    let spec = preset("isotropic", 1.5, 1, 0.5, &PresetParams::default()).unwrap();
    let t_final = 1.0;
    let f = forcing(GridShape::new(1, 64).unwrap());
    let cfg = SolveConfig { lambda: 0.0, t_final, time_cells: 64, forcing: f.time_reversed(t_final) };
    let u = backward_from_forward(&resolve(&spec, &cfg).unwrap(), t_final);
    let opts = McOptions { t_final, ..McOptions::default() };
    let r = martingale_residual(&u, &spec, &BOperatorSpec::zero(), &f, 0.0, &[0.4], 4, 3000, 3, &opts).unwrap();
    assert!(r.max_z(false) < 4.0, "{r:?}");
    let control = TimeSeries::constant(&f.at(0.0), t_final);
    let r = martingale_residual(&control, &spec, &BOperatorSpec::zero(), &f, 0.0, &[0.4], 4, 3000, 3, &opts).unwrap();
    assert!(r.max_z(false) > 5.0);
    assert!(r.max_z(true) < 4.0, "the generator form is a martingale for any smooth candidate");
}
