//! Experiment configuration file (TOML) and the objects built from it.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::const_solver::{Forcing, SolveConfig};
use crate::error::{Error, Result};
use crate::grid::GridShape;
use crate::holder::weierstrass_forcing;
use crate::kernel::{preset, with_bounds, Density, KernelSpec, PresetParams, XFn, PRESETS};
use crate::mc::McOptions;
use crate::nonlocal::{BJump, BOperatorSpec, VecFn};
use crate::var_solver::{PicardConfig, Reference};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub kernel: KernelConfig,
    #[serde(default)]
    pub b_operator: BConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub time: TimeConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub forcing: ForcingConfig,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_seed() -> u64 {
    20240601
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Angular piece `[from, to)` (radians) carrying density `value`. In one
/// dimension the direction `+1` has angle 0 and `-1` has angle π.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AngularPiece {
    pub from: f64,
    pub to: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    /// A built-in name, or `"inline"` for a piecewise-constant angular density given by `pieces`.
    pub preset: String,
    pub alpha: f64,
    #[serde(default = "one")]
    pub dim: usize,
    #[serde(default = "half")]
    pub beta: f64,
    #[serde(default = "half")]
    pub sector_amplitude: f64,
    #[serde(default)]
    pub x_amplitude: f64,
    #[serde(default = "one_f")]
    pub scale: f64,
    pub eta: Option<f64>,
    pub big_k: Option<f64>,
    #[serde(default)]
    pub pieces: Vec<AngularPiece>,
    /// Interior time breakpoints of a piecewise-constant factor multiplying the density.
    #[serde(default)]
    pub time_breaks: Vec<f64>,
    /// One factor per time cell (`time_breaks.len() + 1` values).
    #[serde(default)]
    pub time_profile: Vec<f64>,
}

fn one() -> usize {
    1
}
fn one_f() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BConfig {
    /// Constant drift vector (requires α >= 1).
    pub drift: Option<Vec<f64>>,
    /// Drift is multiplied by `1 + drift_modulation · sin x₁`.
    #[serde(default)]
    pub drift_modulation: f64,
    /// Constant zero-order coefficient `l`.
    pub zero_order: Option<f64>,
    pub jump: Option<BJumpConfig>,
    /// Bound on the coefficients; computed when absent.
    pub bound: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BJumpConfig {
    pub alpha_prime: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub n: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { n: 64 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeConfig {
    pub t_final: f64,
    pub cells: usize,
}

impl Default for TimeConfig {
    fn default() -> Self {
        TimeConfig { t_final: 1.0, cells: 64 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub lambda: f64,
    pub reference: Reference,
    pub tol: f64,
    pub max_iterations: usize,
    pub warmup: usize,
    /// Determine λ₀ by doubling before solving.
    pub calibrate: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { lambda: 1.0, reference: Reference::Minorant, tol: 1e-6, max_iterations: 50, warmup: 2, calibrate: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForcingKind {
    /// Lacunary series normalised to `|f|_β = 1`.
    Weierstrass,
    /// `amplitude · cos(mode · x₁)`.
    Cosine,
    /// `amplitude`.
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvelopeKind {
    Constant,
    /// `1 + 0.5 sin(frequency · t)`.
    Oscillating,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForcingConfig {
    pub kind: ForcingKind,
    pub terms: usize,
    /// One forcing per seed; the first is used by single solves.
    pub seeds: Vec<u64>,
    pub mode: f64,
    pub amplitude: f64,
    pub envelope: EnvelopeKind,
    pub frequency: f64,
}

impl Default for ForcingConfig {
    fn default() -> Self {
        ForcingConfig {
            kind: ForcingKind::Weierstrass,
            terms: 4,
            seeds: (1..=10).collect(),
            mode: 1.0,
            amplitude: 1.0,
            envelope: EnvelopeKind::Constant,
            frequency: 2.0 * PI,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub paths: usize,
    pub steps: usize,
    pub delta_cut: Option<f64>,
    pub proposal_budget: f64,
    pub gaussian_correction: Option<bool>,
    /// Probe points `[s, x₁(, x₂)]`; nine defaults when empty.
    pub probes: Vec<Vec<f64>>,
    /// Increments of the martingale residual.
    pub increments: usize,
    /// Number of paths written to the path dump.
    pub dump_paths: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            paths: 10_000,
            steps: 64,
            delta_cut: None,
            proposal_budget: 400.0,
            gaussian_correction: None,
            probes: Vec::new(),
            increments: 8,
            dump_paths: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolutionFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub format: SolutionFormat,
    /// Stamps written to the solution container (evenly thinned).
    pub max_frames: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { format: SolutionFormat::Json, max_frames: 17 }
    }
}

/// Stable 64-bit FNV-1a hash, used to derive named random substreams.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Seed of the substream `name` derived from the global seed.
pub fn substream(seed: u64, name: &str) -> u64 {
    fnv1a(&[seed.to_le_bytes().as_slice(), name.as_bytes()].concat())
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a config file and apply `key.path=value` overrides of scalar fields.
    pub fn load(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut value: toml::Table = toml::from_str(&text)?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: ExperimentConfig = value.try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        check(self.schema_version == SCHEMA_VERSION, || {
            format!("unsupported schema_version {} (expected {SCHEMA_VERSION})", self.schema_version)
        })?;
        let k = &self.kernel;
        check(k.preset == "inline" || PRESETS.contains(&k.preset.as_str()), || {
            format!("unknown kernel preset '{}' (known: {}, inline)", k.preset, PRESETS.join(", "))
        })?;
        check(k.preset != "inline" || !k.pieces.is_empty(), || "inline kernel needs at least one angular piece".into())?;
        check(k.alpha > 0.0 && k.alpha < 2.0, || format!("alpha must lie in (0,2), got {}", k.alpha))?;
        check(k.dim == 1 || k.dim == 2, || format!("dim must be 1 or 2, got {}", k.dim))?;
        check(k.beta > 0.0 && k.beta <= 1.0, || format!("beta must lie in (0,1], got {}", k.beta))?;
        check(k.eta.is_none_or(|e| e > 0.0), || "eta must be positive".into())?;
        check(k.time_profile.is_empty() || k.time_profile.len() == k.time_breaks.len() + 1, || {
            "time_profile needs one factor per time cell".into()
        })?;
        check(k.time_profile.iter().all(|v| *v > 0.0), || "time_profile factors must be positive".into())?;
        check(self.grid.n >= 8 && self.grid.n.is_power_of_two(), || {
            format!("grid.n must be a power of two >= 8, got {}", self.grid.n)
        })?;
        check(self.time.t_final > 0.0, || "time.t_final must be positive".into())?;
        check(self.time.cells > 0, || "time.cells must be positive".into())?;
        check(self.solver.lambda >= 0.0, || "solver.lambda must be >= 0".into())?;
        check(self.solver.tol > 0.0, || "solver.tol must be positive".into())?;
        check(!self.forcing.seeds.is_empty(), || "the forcing suite is empty".into())?;
        check(self.mc.paths > 0 && self.mc.steps > 0 && self.mc.increments > 0, || {
            "mc.paths, mc.steps and mc.increments must be positive".into()
        })?;
        for p in &self.mc.probes {
            check(p.len() == k.dim + 1, || format!("probe {p:?} must have {} entries", k.dim + 1))?;
            check(p[0] >= 0.0 && p[0] < self.time.t_final, || format!("probe time {} outside [0,T)", p[0]))?;
        }
        if let Some(d) = &self.b_operator.drift {
            check(d.len() == k.dim, || format!("drift must have {} components", k.dim))?;
        }
        if let Some(j) = &self.b_operator.jump {
            check(j.alpha_prime > 0.0 && j.alpha_prime < k.alpha, || {
                format!("b_operator.jump.alpha_prime must lie in (0, alpha), got {}", j.alpha_prime)
            })?;
            check(j.scale >= 0.0, || "b_operator.jump.scale must be >= 0".into())?;
        }
        Ok(())
    }

    pub fn shape(&self) -> GridShape {
        GridShape { dim: self.kernel.dim, n: self.grid.n }
    }

    pub fn preset_params(&self) -> PresetParams {
        let k = &self.kernel;
        PresetParams {
            sector_amplitude: k.sector_amplitude,
            x_amplitude: k.x_amplitude,
            scale: k.scale,
            eta: k.eta,
            big_k: k.big_k,
        }
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec> {
        let k = &self.kernel;
        let params = self.preset_params();
        let mut spec = if k.preset == "inline" {
            inline_kernel(k, &params)?
        } else {
            preset(&k.preset, k.alpha, k.dim, k.beta, &params)?
        };
        if !k.time_profile.is_empty() {
            let breaks = k.time_breaks.clone();
            let prof = k.time_profile.clone();
            let factor = Arc::new(move |t: f64| prof[breaks.partition_point(|b| *b <= t)]);
            spec.minorant = spec.minorant.time_scaled(factor.clone());
            spec.density = spec.density.time_scaled(factor);
            spec.time_breaks = k.time_breaks.clone();
            let (lo, hi) = k.time_profile.iter().fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
            if k.big_k.is_none() {
                spec.big_k *= hi;
            }
            if k.eta.is_none() {
                spec.eta *= lo;
            }
        }
        spec.check_well_formed()?;
        Ok(spec)
    }

    pub fn b_spec(&self) -> Result<BOperatorSpec> {
        let b = &self.b_operator;
        let dim = self.kernel.dim;
        let mut spec = BOperatorSpec::zero();
        let mut bound: f64 = 0.0;
        if let Some(d) = &b.drift {
            let v = [d[0], if dim == 2 { d[1] } else { 0.0 }];
            let m = b.drift_modulation;
            let f: VecFn = Arc::new(move |_, x| {
                let s = 1.0 + m * x[0].sin();
                [v[0] * s, v[1] * s]
            });
            spec.drift = Some(f);
            bound += (v[0].abs() + v[1].abs()) * (1.0 + 2.0 * m.abs());
        }
        if let Some(l) = b.zero_order {
            let f: XFn = Arc::new(move |_, _| l);
            spec.zero_order = Some(f);
            bound += l.abs();
        }
        if let Some(j) = &b.jump {
            spec.jump = Some(BJump { alpha_prime: j.alpha_prime, rho: Density::constant(j.scale) });
            bound = bound.max(j.scale);
        }
        spec.bound = b.bound.unwrap_or(if bound > 0.0 { 1.01 * bound } else { 1.0 });
        spec.check(self.kernel.alpha)?;
        Ok(spec)
    }

    /// Forcing number `index` of the suite.
    pub fn forcing_at(&self, index: usize) -> Result<Forcing> {
        let fc = &self.forcing;
        let seed = *fc.seeds.get(index).ok_or_else(|| Error::config(format!("forcing index {index} out of range")))?;
        let shape = self.shape();
        let profile = match fc.kind {
            ForcingKind::Weierstrass => {
                weierstrass_forcing(shape, self.kernel.beta, fc.terms, substream(seed, "weierstrass"))?.scaled(fc.amplitude)
            }
            ForcingKind::Cosine => {
                let (k, a) = (fc.mode, fc.amplitude);
                shape.sample(0.0, move |x| a * (k * x[0]).cos())
            }
            ForcingKind::Constant => {
                let a = fc.amplitude;
                shape.sample(0.0, move |_| a)
            }
        };
        Ok(match fc.envelope {
            EnvelopeKind::Constant => Forcing::Static(profile),
            EnvelopeKind::Oscillating => {
                let w = fc.frequency;
                Forcing::Modulated { profile, envelope: Arc::new(move |t| 1.0 + 0.5 * (w * t).sin()) }
            }
        })
    }

    pub fn forcing_suite(&self) -> Result<Vec<Forcing>> {
        (0..self.forcing.seeds.len()).map(|i| self.forcing_at(i)).collect()
    }

    pub fn solve_config(&self, forcing: Forcing) -> SolveConfig {
        SolveConfig { lambda: self.solver.lambda, t_final: self.time.t_final, time_cells: self.time.cells, forcing }
    }

    pub fn picard_config(&self, forcing: Forcing) -> PicardConfig {
        PicardConfig {
            solve: self.solve_config(forcing),
            reference: self.solver.reference,
            tol: self.solver.tol,
            max_iterations: self.solver.max_iterations,
            warmup: self.solver.warmup,
        }
    }

    pub fn mc_options(&self) -> McOptions {
        McOptions {
            t_final: self.time.t_final,
            steps: self.mc.steps,
            delta_cut: self.mc.delta_cut,
            proposal_budget: self.mc.proposal_budget,
            gaussian_correction: self.mc.gaussian_correction,
            record_rejected: false,
        }
    }

    /// Probe points `(s, x)`; the default is a 3×3 tensor of start times and positions.
    pub fn probes(&self) -> Vec<(f64, Vec<f64>)> {
        if !self.mc.probes.is_empty() {
            return self.mc.probes.iter().map(|p| (p[0], p[1..].to_vec())).collect();
        }
        default_probes(self.kernel.dim, self.time.t_final)
    }
}

pub fn default_probes(dim: usize, t_final: f64) -> Vec<(f64, Vec<f64>)> {
    let mut out = Vec::new();
    for s in [0.0, 0.25 * t_final, 0.5 * t_final] {
        for x in [0.4, 2.1, 4.5] {
            let p = if dim == 1 { vec![x] } else { vec![x, (1.7 * x) % (2.0 * PI)] };
            out.push((s, p));
        }
    }
    out
}

fn inline_kernel(k: &KernelConfig, params: &PresetParams) -> Result<KernelSpec> {
    for p in &k.pieces {
        check(p.value >= 0.0 && p.to > p.from, || format!("invalid angular piece {p:?}"))?;
    }
    let pieces: Vec<(f64, f64, f64)> = k.pieces.iter().map(|p| (p.from, p.to, p.value)).collect();
    let lookup = move |w: &[f64]| -> f64 {
        let th = if w.len() == 1 {
            if w[0] > 0.0 { 0.0 } else { PI }
        } else {
            w[1].atan2(w[0]).rem_euclid(2.0 * PI)
        };
        pieces
            .iter()
            .filter(|(a, b, _)| {
                let (a, b) = (a.rem_euclid(2.0 * PI), b - a + a.rem_euclid(2.0 * PI));
                (th >= a && th < b) || (th + 2.0 * PI >= a && th + 2.0 * PI < b)
            })
            .map(|p| p.2)
            .sum()
    };
    let sup = k.pieces.iter().map(|p| p.value).sum::<f64>() * k.scale;
    let scale = k.scale;
    let mut breaks: Vec<f64> = k.pieces.iter().flat_map(|p| [p.from.rem_euclid(2.0 * PI), p.to.rem_euclid(2.0 * PI)]).collect();
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breaks.dedup();
    let m = Density::angular(move |_, w| scale * lookup(w), if k.dim == 2 { breaks } else { Vec::new() });
    let spec = KernelSpec {
        name: "inline".into(),
        alpha: k.alpha,
        dim: k.dim,
        beta: k.beta,
        eta: 1.0,
        big_k: sup,
        time_breaks: Vec::new(),
        minorant: m.clone(),
        density: m,
    };
    Ok(with_bounds(spec, sup, params))
}

fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let (key, raw) = item.split_once('=').ok_or_else(|| Error::config(format!("override '{item}' is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    let value: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    if value.is_table() || value.is_array() {
        return Err(Error::config(format!("override '{key}' must be a scalar")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("override path '{key}' crosses a non-table value")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
[kernel]
preset = "isotropic"
alpha = 1.5
"#;

    #[test]
    fn minimal_config_round_trips() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.grid.n, 64);
        assert_eq!(cfg.forcing.seeds.len(), 10);
        let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again.to_toml().unwrap(), cfg.to_toml().unwrap());
    }

    #[test]
    fn invalid_fields_are_config_errors() {
        for bad in [
            MINIMAL.replace("schema_version = 1", "schema_version = 7"),
            MINIMAL.replace("isotropic", "nope"),
            MINIMAL.replace("1.5", "2.5"),
            format!("{MINIMAL}\n[forcing]\nseeds = []\n"),
            format!("{MINIMAL}\n[grid]\nn = 48\n"),
            format!("{MINIMAL}\nunknown = 3\n"),
        ] {
            let e = ExperimentConfig::from_toml(&bad).unwrap_err();
            assert_eq!(e.exit_code(), 4, "{bad}: {e}");
        }
    }

    #[test]
    fn overrides_replace_scalars() {
        let dir = std::env::temp_dir().join(format!("nlc-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.toml");
        std::fs::write(&path, MINIMAL).unwrap();
        let cfg = ExperimentConfig::load(&path, &["kernel.alpha=0.7".into(), "solver.reference=x-average".into()]).unwrap();
        assert_eq!(cfg.kernel.alpha, 0.7);
        assert_eq!(cfg.solver.reference, Reference::XAverage);
        assert!(ExperimentConfig::load(&path, &["kernel=3".into()]).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn inline_kernel_matches_isotropic_symbol() {
        let text = MINIMAL.replace("\"isotropic\"", "\"inline\"")
            + "pieces = [{ from = 0.0, to = 6.283185307179586, value = 1.0 }]\ndim = 2\n";
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let spec = cfg.kernel_spec().unwrap();
        let iso = preset("isotropic", 1.5, 2, 0.5, &PresetParams::default()).unwrap();
        for w in [[1.0, 0.0], [0.3, -0.8], [-0.6, -0.1]] {
            assert_eq!(spec.density.eval_y(0.0, &w), iso.density.eval_y(0.0, &w));
        }
    }

    #[test]
    fn substreams_are_distinct_and_stable() {
        assert_ne!(substream(1, "mc"), substream(1, "forcing"));
        assert_ne!(substream(1, "mc"), substream(2, "mc"));
        assert_eq!(substream(1, "mc"), substream(1, "mc"));
    }

    #[test]
    fn time_profile_scales_density() {
        let text = format!("{MINIMAL}time_breaks = [0.5]\ntime_profile = [1.0, 3.0]\n");
        let spec = ExperimentConfig::from_toml(&text).unwrap().kernel_spec().unwrap();
        assert_eq!(spec.density.eval_y(0.2, &[1.0]), 1.0);
        assert_eq!(spec.density.eval_y(0.7, &[1.0]), 3.0);
        assert!(spec.big_k >= 3.0);
    }
}
