//! Diversity curriculum for skill discovery.
//!
//! Stage one runs constrained novelty search: one CMA-ES population per skill searches
//! over B-spline control points, trading a nearest-neighbour entropy bonus against task
//! return through sigmoid-bounded Lagrange multipliers. Stage two distills the filtered
//! trajectory archive into a single skill-conditioned actor-critic using symmetric
//! online/offline sampling, a running-max optimality target and high policy update ratios.
//!
//! Data-parallel inner loops (population rollouts, batched evaluation, pairwise distance
//! scans) go through [`par::Exec`], which uses rayon when the `parallel` feature is on
//! and degrades to plain iteration otherwise.

pub mod cmaes;
pub mod cns;
pub mod config;
pub mod distill;
pub mod diversity;
pub mod envs;
pub mod error;
pub mod io;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod spline;
pub mod stats;

pub use error::{Error, Result};
pub use par::Exec;
