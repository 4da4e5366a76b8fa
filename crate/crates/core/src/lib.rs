//! Cauchy problems for anisotropic nonlocal operators of stable order on the
//! periodic torus: kernels and symbols, Hölder–Zygmund norms, Fourier heat
//! kernels, frozen-coefficient iteration, and Monte Carlo cross-checks.

pub mod config;
pub mod error;
pub mod const_solver;
pub mod grid;
pub mod holder;
pub mod io;
pub mod kernel;
pub mod mc;
pub mod nonlocal;
pub mod quad;
pub mod var_solver;
pub mod verify;

pub use error::{Error, Result};
pub use grid::{GridFunction, GridShape, Interpolator, TimeSeries};
pub use kernel::{KernelSpec, SymbolTable};
