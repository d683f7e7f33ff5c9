//! Semi-implicit Taylor schemes for stiff differential equations driven by
//! additive and multiplicative rough noise.
//!
//! The crate is organised bottom-up:
//!
//! - [`grid`]: uniform time grids, discrete paths and the Hölder /
//!   p-variation norms evaluated on them.
//! - [`fbm`]: exact fractional Brownian motion sampling through a cached
//!   Cholesky factor of the covariance matrix.
//! - [`lift`]: level 1–3 rough path lifts, Chen composition and the
//!   canonical piecewise-linear lift.
//! - [`fields`]: drift and diffusion coefficients, the differential-operator
//!   compositions used by the Milstein-type corrections, and the built-in
//!   example catalogue.
//! - [`solver`]: the per-step nonlinear solve `y - h b(y) = r`.
//! - [`schemes`]: implicit/explicit Euler, semi-implicit Euler, Milstein,
//!   3rd-order Milstein and the simplified variants.
//! - [`harness`]: convergence studies, EOC tables, the stiffness demo and
//!   the local-order probe.
//!
//! With the default `parallel` feature, independent work items (Monte Carlo
//! samples, study jobs, Cholesky column updates) run on the rayon pool.
//! Every entry point that fans out takes an [`Execution`] so the sequential
//! path stays available at runtime; without the feature both variants run
//! sequentially.

pub mod exec;
pub mod fbm;
pub mod fields;
pub mod grid;
pub mod harness;
pub mod lift;
pub mod schemes;
pub mod solver;

pub use exec::Execution;
pub use fbm::{FbmConfig, FbmError, SamplePath};
pub use fields::{DiffusionField, DriftField, FieldError};
pub use grid::{Grid, GridError, GridPath};
pub use harness::{ProblemId, StudyConfig, StudyError, StudyReport};
pub use lift::{LiftIncrement, RoughLift};
pub use schemes::{Problem, SchemeError, SchemeId, Trajectory};
pub use solver::{SolveError, SolveReport, SolverOptions};
