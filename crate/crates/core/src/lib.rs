//! Blind deconvolution of short kernels from long sparse convolutions by
//! minimizing `−‖·‖₄⁴` over the sphere.
//!
//! The pipeline whitens the observation, picks a window of it as the starting
//! point, runs a Riemannian descent with negative-curvature escapes, and lifts
//! the minimizer back to a kernel estimate. The `landscape` module exposes the
//! objectives, their population counterparts and the critical-point analysis
//! used to study the optimization landscape; `experiments` runs seeded sweeps.

pub mod error;
pub mod experiments;
pub mod io;
pub mod landscape;
pub mod linalg;
pub mod optimizer;
pub mod par;
pub mod pipeline;
pub mod shiftmodel;
pub mod signals;

pub use error::{Error, Result, StallInfo};
pub use landscape::{ObservationModel, SpherePoint};
pub use optimizer::{descend, OptReport, SolveOptions, Status};
pub use par::Parallelism;
pub use pipeline::{deconvolve, DeconvOptions, DeconvResult};
pub use shiftmodel::ShiftModel;
pub use signals::{Kernel, KernelFamily, Observation, SparseSignal};
