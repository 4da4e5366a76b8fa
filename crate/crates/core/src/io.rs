//! File formats: solution containers (JSON or CSV per stamp), residual logs and path dumps.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::SolutionFormat;
use crate::error::{Error, Result};
use crate::grid::{GridFunction, TimeSeries};
use crate::mc::{EventKind, JumpPath};
use crate::var_solver::IterationState;

/// Time-stamped grids `u(t_i, x)` in row-major order (last axis fastest).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionContainer {
    pub dim: usize,
    pub n: usize,
    pub times: Vec<f64>,
    pub frames: Vec<Vec<f64>>,
}

impl SolutionContainer {
    /// Keep at most `max_frames` stamps, evenly spaced and always including both ends.
    pub fn from_series(u: &TimeSeries, max_frames: usize) -> SolutionContainer {
        let m = u.frames.len();
        let keep = max_frames.clamp(2, m.max(2)).min(m);
        let idx: Vec<usize> = if keep >= m {
            (0..m).collect()
        } else {
            let mut v: Vec<usize> = (0..keep).map(|i| (i * (m - 1) + (keep - 1) / 2) / (keep - 1)).collect();
            v.dedup();
            v
        };
        let g0 = &u.frames[0];
        SolutionContainer {
            dim: g0.dim,
            n: g0.n,
            times: idx.iter().map(|i| u.frames[*i].time).collect(),
            frames: idx.iter().map(|i| u.frames[*i].values.clone()).collect(),
        }
    }

    pub fn to_series(&self) -> Result<TimeSeries> {
        let frames = self
            .times
            .iter()
            .zip(&self.frames)
            .map(|(t, v)| {
                if v.len() != self.n.pow(self.dim as u32) {
                    return Err(Error::Serde(format!("frame at t = {t} has {} values", v.len())));
                }
                Ok(GridFunction { dim: self.dim, n: self.n, values: v.clone(), time: *t })
            })
            .collect::<Result<Vec<_>>>()?;
        TimeSeries::new(frames)
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent() {
        if !p.as_os_str().is_empty() {
            fs::create_dir_all(p)?;
        }
    }
    Ok(())
}

/// Write a solution as `<stem>.json`, or as `<stem>/u_0000.csv ...` plus `<stem>/times.csv`.
/// Returns the written paths.
pub fn write_solution(u: &TimeSeries, dir: &Path, stem: &str, format: SolutionFormat, max_frames: usize) -> Result<Vec<PathBuf>> {
    let c = SolutionContainer::from_series(u, max_frames);
    match format {
        SolutionFormat::Json => {
            let path = dir.join(format!("{stem}.json"));
            write_json(&c, &path)?;
            Ok(vec![path])
        }
        SolutionFormat::Csv => {
            let sub = dir.join(stem);
            fs::create_dir_all(&sub)?;
            let mut written = Vec::new();
            let mut times = String::from("index,time\n");
            for (i, (t, v)) in c.times.iter().zip(&c.frames).enumerate() {
                writeln!(times, "{i},{t}").unwrap();
                let g = GridFunction { dim: c.dim, n: c.n, values: v.clone(), time: *t };
                let path = sub.join(format!("u_{i:04}.csv"));
                fs::write(&path, grid_csv(&g))?;
                written.push(path);
            }
            let tp = sub.join("times.csv");
            fs::write(&tp, times)?;
            written.push(tp);
            Ok(written)
        }
    }
}

/// `x1[,x2],u` rows for one grid.
pub fn grid_csv(g: &GridFunction) -> String {
    let shape = g.shape();
    let mut out = String::from(if g.dim == 1 { "x1,u\n" } else { "x1,x2,u\n" });
    for (i, v) in g.values.iter().enumerate() {
        let p = shape.point(i);
        if g.dim == 1 {
            writeln!(out, "{},{v}", p[0]).unwrap();
        } else {
            writeln!(out, "{},{},{v}", p[0], p[1]).unwrap();
        }
    }
    out
}

/// `iteration,residual,ratio` rows of a Picard run.
pub fn residual_log_csv(state: &IterationState) -> String {
    let mut out = String::from("iteration,residual,ratio\n");
    for (i, r) in state.residuals.iter().enumerate() {
        let ratio = if i == 0 { String::new() } else { state.ratios[i - 1].to_string() };
        writeln!(out, "{},{r},{ratio}", i + 1).unwrap();
    }
    out
}

/// `path,time,event,x1,x2,y1,y2` rows: the start, every event, and the end of each path.
pub fn path_dump_csv(paths: &[JumpPath]) -> String {
    let mut out = String::from("path,time,event,x1,x2,y1,y2\n");
    for (k, p) in paths.iter().enumerate() {
        writeln!(out, "{k},{},start,{},{},0,0", p.start, p.x0[0], p.x0[1]).unwrap();
        for e in &p.events {
            let kind = match e.kind {
                EventKind::Jump => "jump",
                EventKind::LowerJump => "lower-jump",
                EventKind::Rejected => "rejected",
                EventKind::Continuous => "continuous",
            };
            writeln!(out, "{k},{},{kind},{},{},{},{}", e.time, e.state[0], e.state[1], e.size[0], e.size[1]).unwrap();
        }
        let end = p.states.last().copied().unwrap_or(p.x0);
        writeln!(out, "{k},{},end,{},{},0,0", p.t_final, end[0], end[1]).unwrap();
    }
    out
}

pub fn write_text(text: &str, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridShape;

    #[test]
    fn container_round_trips_and_keeps_ends() {
        let shape = GridShape::new(1, 8).unwrap();
        let frames: Vec<GridFunction> = (0..=20).map(|i| shape.sample(i as f64 * 0.05, |x| x[0] * i as f64)).collect();
        let u = TimeSeries::new(frames).unwrap();
        let c = SolutionContainer::from_series(&u, 5);
        assert_eq!(c.times.len(), 5);
        assert_eq!(c.times[0], 0.0);
        assert!((c.times[4] - 1.0).abs() < 1e-15);
        let back = c.to_series().unwrap();
        assert_eq!(back.frames[4].values, u.frames[20].values);
        let all = SolutionContainer::from_series(&u, 100);
        assert_eq!(all.times.len(), 21);
    }

    #[test]
    fn grid_csv_has_one_row_per_point() {
        let g = GridShape::new(2, 4).unwrap().sample(0.0, |x| x[0] + x[1]);
        let csv = grid_csv(&g);
        assert_eq!(csv.lines().count(), 17);
        assert!(csv.starts_with("x1,x2,u\n"));
    }
}
