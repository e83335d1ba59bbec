//! Spectral construction of small doubly periodic gravity-capillary water
//! waves carrying vorticity, posed on a flattened slab of finite depth.
//!
//! The library is organized around one pipeline:
//!
//! * [`lattice`]: horizontal wave lattice, collocation grid, FFT plans.
//! * [`field`]: hybrid Fourier/collocation fields, calculus, symmetry
//!   classes, off-grid samplers.
//! * [`dispersion`]: linear dispersion relation, critical speed, resonance
//!   structure of the kernel.
//! * [`flattening`]: change of variables between the wavy domain and the
//!   flat slab, weighted metric, deformed curl.
//! * [`divcurl`]: the curl/mean-flux boundary operator and its inversion.
//! * [`transport`]: travel-time and period functions of the flow by
//!   characteristic tracing.
//! * [`solver`]: the nested fixed-point and bifurcation solver producing
//!   wave branches.
//! * [`expansion`]: closed-form leading-order expansion of the branch,
//!   independent of the solver.
//! * [`bernoulli`]: level-set geometry of the Bernoulli function and the
//!   resulting invariant surfaces.

pub mod bernoulli;
pub mod dispersion;
pub mod divcurl;
pub mod error;
pub mod expansion;
pub mod field;
pub mod flattening;
pub mod lattice;
pub mod solver;
pub mod synth;
pub mod transport;

pub use error::{Error, Result};
pub use lattice::{make_grid, Grid, LatticeSpec};
