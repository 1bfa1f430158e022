//! Reviewing schedules.
//!
//! Every schedule is a [`Schedule`] trait object: an intensity function of
//! the memory state plus a piecewise-constant majorant used by the thinning
//! sampler. Concrete schedules are constructed from a [`ScheduleSpec`] or by
//! name through a [`ScheduleRegistry`].

mod last_minute;
mod memorize;
mod registry;
mod session;
pub mod thinning;
mod threshold;
mod uniform;

use std::fmt::Debug;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::memory::MemoryState;
use crate::quadrature;

pub use last_minute::LastMinute;
pub use memorize::Memorize;
pub use registry::{ScheduleArgs, ScheduleCtor, ScheduleRegistry};
pub use session::{memorize_session, run_schedule, ModelRecall, RecallSource, SessionTrace};
pub use threshold::{Anchor, Threshold, ThresholdRuntime};
pub use uniform::Uniform;

/// Piecewise-constant upper bound on the intensity, valid on `[t, until)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Envelope {
    pub rate: f64,
    pub until: f64,
    /// The intensity equals `rate` on the whole segment, so no proposal is rejected.
    pub exact: bool,
}

pub trait Schedule: Send + Sync + Debug {
    fn name(&self) -> &'static str;

    fn spec(&self) -> ScheduleSpec;

    /// Reviewing intensity at `t` for an item whose memory state is `state`
    /// (no review in `(state.t_last(), t]`).
    fn intensity(&self, state: &MemoryState, t: f64) -> f64;

    /// Majorant of the intensity starting at `t`, no further than `t_f`.
    fn envelope(&self, state: &MemoryState, t: f64, t_f: f64) -> Envelope;

    /// `∫_a^b u(t) dt` with the state held fixed.
    fn integrated_intensity(&self, state: &MemoryState, a: f64, b: f64) -> f64 {
        quadrature::integrate(|t| self.intensity(state, t), a, b, 1e-10)
    }

    /// The single rate-like knob used for budget matching.
    fn free_rate(&self) -> f64;

    /// Same schedule with the rate-like knob replaced.
    fn with_free_rate(&self, rate: f64) -> Box<dyn Schedule>;

    /// First event of the inhomogeneous Poisson process in `(t_now, t_f]`.
    fn sample_next(
        &self,
        state: &MemoryState,
        t_now: f64,
        t_f: f64,
        rng: &mut dyn RngCore,
    ) -> Result<Option<f64>> {
        thinning::sample_first_event(self, state, t_now, t_f, rng)
    }
}

/// Tagged parameterisation of every supported schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "schedule", rename_all = "snake_case")]
pub enum ScheduleSpec {
    Memorize {
        q: f64,
    },
    Uniform {
        mu: f64,
    },
    LastMinute {
        t_lm: f64,
        mu: f64,
    },
    Threshold {
        m_th: f64,
        c: f64,
        zeta: f64,
        #[serde(default)]
        anchor: Anchor,
    },
}

impl ScheduleSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ScheduleSpec::Memorize { .. } => "memorize",
            ScheduleSpec::Uniform { .. } => "uniform",
            ScheduleSpec::LastMinute { .. } => "last_minute",
            ScheduleSpec::Threshold { .. } => "threshold",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ScheduleSpec::Memorize { q } => {
                if !(q > 0.0) {
                    return Err(invalid("q", format!("must be > 0, got {q}")));
                }
            }
            ScheduleSpec::Uniform { mu } | ScheduleSpec::LastMinute { mu, .. } => {
                if !(mu >= 0.0) || !mu.is_finite() {
                    return Err(invalid("mu", format!("must be >= 0, got {mu}")));
                }
            }
            ScheduleSpec::Threshold { m_th, c, zeta, .. } => {
                if !(m_th > 0.0 && m_th < 1.0) {
                    return Err(invalid("m_th", format!("must lie in (0, 1), got {m_th}")));
                }
                if !(c >= 0.0) || !c.is_finite() {
                    return Err(invalid("c", format!("must be >= 0, got {c}")));
                }
                if !(zeta > 0.0) || !zeta.is_finite() {
                    return Err(invalid("zeta", format!("must be > 0, got {zeta}")));
                }
            }
        }
        if let ScheduleSpec::LastMinute { t_lm, .. } = *self {
            if !t_lm.is_finite() {
                return Err(invalid("t_lm", "must be finite"));
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Box<dyn Schedule>> {
        self.validate()?;
        Ok(match *self {
            ScheduleSpec::Memorize { q } => Box::new(Memorize::new(q)),
            ScheduleSpec::Uniform { mu } => Box::new(Uniform::new(mu)),
            ScheduleSpec::LastMinute { t_lm, mu } => Box::new(LastMinute::new(t_lm, mu)),
            ScheduleSpec::Threshold {
                m_th,
                c,
                zeta,
                anchor,
            } => Box::new(Threshold::new(m_th, c, zeta, anchor)),
        })
    }
}
