use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn nlc(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlc"))
        .args(args)
        .arg("--output-dir")
        .arg(out)
        .output()
        .expect("spawn nlc")
}

fn cfg(name: &str) -> String {
    configs().join(name).to_string_lossy().into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn read(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn check_kernel_passes_on_sector_kernel() {
    let dir = tempfile::tempdir().unwrap();
    let c = cfg("default.toml");
    let o = nlc(&["check-kernel", "-c", &c], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = read(&dir.path().join("check_kernel.json"));
    assert_eq!(v["command"], "check-kernel");
    assert_eq!(v["seed"], 20240601);
    assert_eq!(v["result"]["passed"], true);
}

#[test]
fn asymmetric_kernel_at_alpha_one_is_an_assumption_failure() {
    let dir = tempfile::tempdir().unwrap();
    let c = cfg("asymmetric_alpha1.toml");
    let o = nlc(&["check-kernel", "-c", &c], dir.path());
    assert_eq!(code(&o), 2);
    let v = read(&dir.path().join("check_kernel.json"));
    assert_eq!(v["result"]["passed"], false);
}

#[test]
fn bad_configs_exit_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let c = cfg("default.toml");
    assert_eq!(code(&nlc(&["check-kernel", "-c", &c, "--set", "kernel.alpha=2.5"], dir.path())), 4);
    assert_eq!(code(&nlc(&["check-kernel", "-c", &c, "--set", "kernel.nonsense=1"], dir.path())), 4);
    assert_eq!(code(&nlc(&["check-kernel", "-c", "/nonexistent/config.toml"], dir.path())), 4);
    assert_eq!(code(&nlc(&["frobnicate", "-c", &c], dir.path())), 4);

    let empty = dir.path().join("empty_seeds.toml");
    let text = std::fs::read_to_string(configs().join("default.toml")).unwrap();
    let text = text.replace("seeds = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10]", "seeds = []");
    std::fs::write(&empty, text).unwrap();
    assert_eq!(code(&nlc(&["solve-var", "-c", empty.to_str().unwrap()], dir.path())), 4);
}

#[test]
fn solve_const_rejects_x_dependent_kernel() {
    let dir = tempfile::tempdir().unwrap();
    let c = cfg("default.toml");
    let o = nlc(&["solve-const", "-c", &c, "--set", "grid.n=32", "--set", "time.cells=8"], dir.path());
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stderr).contains("x-independent"));
}

#[test]
fn solve_const_writes_csv_solution() {
    let dir = tempfile::tempdir().unwrap();
    let c = cfg("isotropic_2d.toml");
    let fine = tempfile::tempdir().unwrap();
    let o = nlc(&["solve-const", "-c", &c, "--set", "grid.n=16", "--set", "time.cells=8"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(code(&nlc(&["solve-const", "-c", &c, "--set", "grid.n=16", "--set", "time.cells=32"], fine.path())), 0);
    let coarse = read(&dir.path().join("solve_const.json"))["result"]["defs_residual"]["max_residual"].as_f64().unwrap();
    let refined = read(&fine.path().join("solve_const.json"))["result"]["defs_residual"]["max_residual"].as_f64().unwrap();
    assert!(refined < coarse / 4.0, "{coarse} -> {refined}");
    let sol = dir.path().join("solve_const_solution");
    let times = std::fs::read_to_string(sol.join("times.csv")).unwrap();
    assert!(times.starts_with("index,time\n"));
    let frame = std::fs::read_to_string(sol.join("u_0000.csv")).unwrap();
    assert_eq!(frame.lines().count(), 16 * 16 + 1);
}

#[test]
fn solve_var_writes_solution_and_residual_log() {
    let dir = tempfile::tempdir().unwrap();
    let c = cfg("default.toml");
    let o = nlc(&["solve-var", "-c", &c, "--set", "grid.n=32", "--set", "time.cells=16"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = read(&dir.path().join("solve_var.json"));
    assert_eq!(v["result"]["iteration"]["converged"], true);
    let log = std::fs::read_to_string(dir.path().join("solve_var_residuals.csv")).unwrap();
    assert!(log.starts_with("iteration,residual,ratio\n"));
    assert!(log.lines().count() > 2);
    let sol = read(&dir.path().join("solve_var_solution.json"));
    assert_eq!(sol["n"], 32);
    assert_eq!(sol["times"][0], 0.0);
}

#[test]
fn simulate_dumps_paths() {
    let dir = tempfile::tempdir().unwrap();
    let c = cfg("isotropic_2d.toml");
    let o = nlc(&["simulate", "-c", &c, "--set", "mc.paths=100", "--set", "mc.dump_paths=3"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = read(&dir.path().join("simulate.json"));
    assert_eq!(v["result"]["estimates"].as_array().unwrap().len(), 9);
    let dump = std::fs::read_to_string(dir.path().join("paths.csv")).unwrap();
    assert!(dump.starts_with("path,time,event,x1,x2,y1,y2\n"));
    for k in 0..3 {
        assert_eq!(dump.lines().filter(|l| l.starts_with(&format!("{k},")) && l.contains(",end,")).count(), 1);
    }
}

#[test]
fn simulate_is_deterministic_for_fixed_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = cfg("drift_and_jumps.toml");
    let args = ["simulate", "-c", c.as_str(), "--set", "mc.paths=100"];
    assert_eq!(code(&nlc(&args, a.path())), 0);
    assert_eq!(code(&nlc(&args, b.path())), 0);
    let va = read(&a.path().join("simulate.json"));
    let vb = read(&b.path().join("simulate.json"));
    assert_eq!(va["result"]["estimates"], vb["result"]["estimates"]);
}

fn strip(mut v: Value) -> Value {
    let o = v.as_object_mut().unwrap();
    o.remove("generated_at");
    o.remove("timing");
    o["config"].as_object_mut().unwrap().remove("output_dir");
    v
}

#[test]
fn verify_subset_is_reproducible_and_reported() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = cfg("default.toml");
    let args = ["verify", "-c", c.as_str(), "--only", "3,12"];
    let o = nlc(&args, a.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("[PASS]")).count(), 2);
    assert_eq!(code(&nlc(&args, b.path())), 0);
    let va = strip(read(&a.path().join("verify.json")));
    let vb = strip(read(&b.path().join("verify.json")));
    assert_eq!(va, vb);
    assert_eq!(va["criteria"].as_array().unwrap().len(), 2);

    assert_eq!(code(&nlc(&["verify", "-c", &c, "--only", "99"], a.path())), 4);

    let o = nlc(&["report", "-c", &c], a.path());
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("verify.json"));
    let summary = read(&a.path().join("summary.json"));
    assert!(summary.get("verify.json").is_some());
}

#[test]
fn report_without_reports_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let c = cfg("default.toml");
    assert_eq!(code(&nlc(&["report", "-c", &c], dir.path())), 4);
}
