use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use nonlocal_cauchy::config::{substream, ExperimentConfig};
use nonlocal_cauchy::const_solver::{resolve, verify_defs_identity_full, DefsRoute};
use nonlocal_cauchy::holder::NormReport;
use nonlocal_cauchy::io::{path_dump_csv, read_json, residual_log_csv, write_json, write_solution, write_text};
use nonlocal_cauchy::kernel::{default_samples, validate_assumptions};
use nonlocal_cauchy::mc::{feynman_kac_probes, Simulator};
use nonlocal_cauchy::var_solver::{calibrate_lambda, picard_solve};
use nonlocal_cauchy::{verify, Error, Result};

/// Solvers and checks for nonlocal parabolic equations of stable order on the torus.
#[derive(Parser)]
#[command(name = "nlc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Override a scalar field, e.g. `--set kernel.alpha=0.7`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Replaces `output_dir` from the config.
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config, &self.set)?;
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Audit the kernel against the standing assumptions.
    CheckKernel(Common),
    /// Solve with the constant-coefficient exponential integrator.
    SolveConst(Common),
    /// Solve with the frozen-coefficient Picard iteration.
    SolveVar(Common),
    /// Monte Carlo estimates at the probe points, with an optional path dump.
    Simulate(Common),
    /// Run the property checks and write `verify.json`.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Comma-separated criterion numbers (default: all).
        #[arg(long, value_delimiter = ',')]
        only: Vec<u32>,
    },
    /// Summarise the JSON reports found in the output directory (or the given files).
    Report {
        #[command(flatten)]
        common: Common,
        /// Report files to summarise instead of the output directory contents.
        #[arg(long)]
        input: Vec<PathBuf>,
    },
}

/// Outcome of a subcommand: reports written, lines printed, and whether the checks passed.
struct Outcome {
    lines: Vec<String>,
    failure: Option<u8>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 4 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(out) => {
            for l in out.lines {
                println!("{l}");
            }
            ExitCode::from(out.failure.unwrap_or(0))
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::CheckKernel(c) => check_kernel(&c.load()?),
        Command::SolveConst(c) => solve_const(&c.load()?),
        Command::SolveVar(c) => solve_var(&c.load()?),
        Command::Simulate(c) => simulate(&c.load()?),
        Command::Verify { common, only } => run_verify(&common.load()?, &only),
        Command::Report { common, input } => report(&common.load()?, &input),
    }
}

fn envelope(cfg: &ExperimentConfig, command: &str, body: Value) -> Result<Value> {
    Ok(json!({
        "command": command,
        "config": serde_json::to_value(cfg)?,
        "seed": cfg.seed,
        "result": body,
    }))
}

fn check_kernel(cfg: &ExperimentConfig) -> Result<Outcome> {
    let spec = cfg.kernel_spec()?;
    let (ts, xs) = default_samples(spec.dim, cfg.time.t_final);
    let rep = validate_assumptions(&spec, &ts, &xs)?;
    let path = cfg.output_dir.join("check_kernel.json");
    write_json(&envelope(cfg, "check-kernel", serde_json::to_value(&rep)?)?, &path)?;
    let mut lines: Vec<String> = rep
        .clauses
        .iter()
        .map(|c| format!("[{}] {}: value {:.4e}, threshold {:.4e}{}", if c.passed { "PASS" } else { "FAIL" }, c.clause, c.value, c.threshold, if c.note.is_empty() { String::new() } else { format!(" ({})", c.note) }))
        .collect();
    lines.push(format!("kernel {} alpha {} eta {:.4e} K {:.4e}: {}", rep.kernel, rep.alpha, rep.eta, rep.big_k, if rep.passed { "all clauses pass" } else { "assumption failure" }));
    lines.push(format!("wrote {}", path.display()));
    Ok(Outcome { lines, failure: (!rep.passed).then_some(2) })
}

fn solve_const(cfg: &ExperimentConfig) -> Result<Outcome> {
    let spec = cfg.kernel_spec()?;
    let forcing = cfg.forcing_at(0)?;
    let solve = cfg.solve_config(forcing.clone());
    let u = resolve(&spec, &solve)?;
    let bspec = nonlocal_cauchy::nonlocal::BOperatorSpec::zero();
    let defs = verify_defs_identity_full(&u, &spec, &bspec, solve.lambda, &forcing, DefsRoute::Spectral)?;
    finish_solve(cfg, "solve-const", &u, json!({ "defs_residual": defs }), None)
}

fn solve_var(cfg: &ExperimentConfig) -> Result<Outcome> {
    let spec = cfg.kernel_spec()?;
    let bspec = cfg.b_spec()?;
    let pc = cfg.picard_config(cfg.forcing_at(0)?);
    let (u, state, extra) = if cfg.solver.calibrate {
        let cal = calibrate_lambda(&spec, &bspec, &pc)?;
        let extra = json!({ "lambda0": cal.lambda0, "probes": cal.probes });
        (cal.solution, cal.state, extra)
    } else {
        let (u, st) = picard_solve(&spec, &bspec, &pc)?;
        (u, st, json!({}))
    };
    let log = cfg.output_dir.join("solve_var_residuals.csv");
    write_text(&residual_log_csv(&state), &log)?;
    let body = json!({ "iteration": state, "calibration": extra, "residual_log": log });
    finish_solve(cfg, "solve-var", &u, body, Some(log))
}

fn finish_solve(cfg: &ExperimentConfig, command: &str, u: &nonlocal_cauchy::TimeSeries, mut body: Value, log: Option<PathBuf>) -> Result<Outcome> {
    let stem = command.replace('-', "_");
    let files = write_solution(u, &cfg.output_dir, &format!("{stem}_solution"), cfg.output.format, cfg.output.max_frames)?;
    let last = u.frames.last().unwrap();
    let k = &cfg.kernel;
    let norms = NormReport::compute(last, &[k.beta, (k.alpha + k.beta).min(1.0)], k.beta, Some(k.alpha));
    body["norms_final"] = serde_json::to_value(&norms)?;
    body["solution_files"] = json!(files);
    body["sup"] = json!(u.sup());
    let path = cfg.output_dir.join(format!("{stem}.json"));
    write_json(&envelope(cfg, command, body.clone())?, &path)?;
    let mut lines = vec![
        format!("{command}: sup|u| = {:.6e}, |u(T)|_beta = {:.6e}", u.sup(), norms.composite),
    ];
    if let Some(d) = body.get("defs_residual").and_then(|d| d.get("max_residual")) {
        lines.push(format!("defs residual {d}"));
    }
    if let Some(st) = body.get("iteration") {
        lines.push(format!("iterations {} converged {} q {}", st["iterations"], st["converged"], st["q_hat"]));
    }
    if let Some(l) = log {
        lines.push(format!("wrote {}", l.display()));
    }
    lines.push(format!("wrote {}", path.display()));
    Ok(Outcome { lines, failure: None })
}

fn simulate(cfg: &ExperimentConfig) -> Result<Outcome> {
    let spec = cfg.kernel_spec()?;
    let bspec = cfg.b_spec()?;
    let forcing = cfg.forcing_at(0)?;
    let opts = cfg.mc_options();
    let probes = cfg.probes();
    let seed = substream(cfg.seed, "simulate");
    let est = feynman_kac_probes(&spec, &bspec, &forcing, &probes, cfg.mc.paths, seed, &opts)?;
    let sim = Simulator::new(&spec, &bspec, &opts)?;
    let mut lines: Vec<String> =
        est.iter().map(|e| format!("s = {:.4} x = {:?}: u = {:.6e} ± {:.2e}", e.s, e.x, e.value, e.std_error)).collect();
    let mut body = json!({ "estimates": est, "delta_cut": sim.delta_cut, "proposal_rate": sim.proposal_rate(), "stream_seed": seed });
    if cfg.mc.dump_paths > 0 {
        let (s, x) = &probes[0];
        let streams: Vec<(u64, u64)> = (0..cfg.mc.dump_paths as u64).map(|i| (seed, i)).collect();
        let paths = sim.batch(*s, x, &streams)?;
        let dump = cfg.output_dir.join("paths.csv");
        write_text(&path_dump_csv(&paths), &dump)?;
        body["path_dump"] = json!(dump);
        lines.push(format!("wrote {}", dump.display()));
    }
    let path = cfg.output_dir.join("simulate.json");
    write_json(&envelope(cfg, "simulate", body)?, &path)?;
    lines.push(format!("wrote {}", path.display()));
    Ok(Outcome { lines, failure: None })
}

fn run_verify(cfg: &ExperimentConfig, only: &[u32]) -> Result<Outcome> {
    let rep = verify::run(cfg, only)?;
    let path = cfg.output_dir.join("verify.json");
    write_json(&rep, &path)?;
    let mut lines: Vec<String> = rep.criteria.iter().map(|c| c.line()).collect();
    let passed = rep.criteria.iter().filter(|c| c.passed).count();
    lines.push(format!("{passed}/{} criteria pass", rep.criteria.len()));
    lines.push(format!("wrote {}", path.display()));
    Ok(Outcome { lines, failure: (!rep.passed).then_some(1) })
}

const REPORTS: [&str; 5] = ["check_kernel.json", "solve_const.json", "solve_var.json", "simulate.json", "verify.json"];

fn summarise(path: &Path, v: &Value) -> Vec<String> {
    let mut out = vec![format!("== {}", path.display())];
    if let Some(criteria) = v.get("criteria").and_then(Value::as_array) {
        for c in criteria {
            let mark = if c["passed"].as_bool() == Some(true) { "PASS" } else { "FAIL" };
            out.push(format!("[{mark}] {:>2} {}: {}", c["id"], c["name"].as_str().unwrap_or(""), c["summary"].as_str().unwrap_or("")));
        }
        return out;
    }
    let cmd = v["command"].as_str().unwrap_or("?");
    let r = &v["result"];
    match cmd {
        "check-kernel" => {
            for c in r["clauses"].as_array().into_iter().flatten() {
                let mark = if c["passed"].as_bool() == Some(true) { "PASS" } else { "FAIL" };
                out.push(format!("[{mark}] {}", c["clause"].as_str().unwrap_or("")));
            }
        }
        "solve-const" | "solve-var" => {
            out.push(format!("sup|u| = {}", r["sup"]));
            if let Some(d) = r.get("defs_residual") {
                out.push(format!("defs residual {}", d["max_residual"]));
            }
            if let Some(st) = r.get("iteration") {
                out.push(format!("iterations {} converged {} q {}", st["iterations"], st["converged"], st["q_hat"]));
            }
        }
        "simulate" => {
            for e in r["estimates"].as_array().into_iter().flatten() {
                out.push(format!("s = {} x = {}: {} ± {}", e["s"], e["x"], e["value"], e["std_error"]));
            }
        }
        _ => out.push("unrecognised report".into()),
    }
    out
}

fn report(cfg: &ExperimentConfig, input: &[PathBuf]) -> Result<Outcome> {
    let files: Vec<PathBuf> = if input.is_empty() {
        REPORTS.iter().map(|r| cfg.output_dir.join(r)).filter(|p| p.exists()).collect()
    } else {
        input.to_vec()
    };
    if files.is_empty() {
        return Err(Error::config(format!("no reports found in {}", cfg.output_dir.display())));
    }
    let mut lines = Vec::new();
    let mut merged = serde_json::Map::new();
    let mut failure = None;
    for f in &files {
        let v: Value = read_json(f)?;
        if v.get("passed").and_then(Value::as_bool) == Some(false) {
            failure = Some(1);
        }
        if v["command"] == "check-kernel" && v["result"]["passed"].as_bool() == Some(false) {
            failure = failure.or(Some(2));
        }
        lines.extend(summarise(f, &v));
        merged.insert(f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(), v);
    }
    let path = cfg.output_dir.join("summary.json");
    write_json(&Value::Object(merged), &path)?;
    lines.push(format!("wrote {}", path.display()));
    Ok(Outcome { lines, failure })
}
