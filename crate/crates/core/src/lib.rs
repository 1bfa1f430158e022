//! Optimal spaced-repetition scheduling as stochastic optimal control of
//! jump SDEs.
//!
//! The crate is organised bottom-up:
//!
//! - [`memory`]: forgetting curves and forgetting-rate jumps.
//! - [`schedule`]: MEMORIZE and baseline reviewing intensities behind the
//!   [`schedule::Schedule`] trait, a name registry, and a thinning sampler.
//! - [`simulator`]: Monte-Carlo ensembles, budget matching and sweeps.
//! - [`oracle`]: backward dynamic programming on a discretised control problem.
//! - [`estimation`]: half-life-regression fit and schedule MLEs.
//! - [`evaluation`]: likelihood scoring of logs and effort/forgetting metrics.
//! - [`ingestion`]: study-log parsing, session collapsing and the canonical log format.

pub mod error;
pub mod estimation;
pub mod evaluation;
pub mod ingestion;
pub mod memory;
pub mod oracle;
pub mod pipeline;
pub mod quadrature;
pub mod rng;
pub mod schedule;
pub mod simulator;
pub mod stats;
pub mod synthetic;

pub use error::{Error, Result};
pub use memory::{ItemParams, MemoryState, ModelKind, ReviewEvent, ReviewSequence};
pub use schedule::{Schedule, ScheduleRegistry, ScheduleSpec};
