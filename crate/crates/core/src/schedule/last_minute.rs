use crate::memory::MemoryState;

use super::{Envelope, Schedule, ScheduleSpec};

/// Constant rate `mu` on `[t_lm, ∞)`, zero before.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LastMinute {
    t_lm: f64,
    mu: f64,
}

impl LastMinute {
    pub fn new(t_lm: f64, mu: f64) -> Self {
        LastMinute { t_lm, mu }
    }
}

impl Schedule for LastMinute {
    fn name(&self) -> &'static str {
        "last_minute"
    }

    fn spec(&self) -> ScheduleSpec {
        ScheduleSpec::LastMinute {
            t_lm: self.t_lm,
            mu: self.mu,
        }
    }

    fn intensity(&self, _state: &MemoryState, t: f64) -> f64 {
        if t >= self.t_lm {
            self.mu
        } else {
            0.0
        }
    }

    fn envelope(&self, _state: &MemoryState, t: f64, t_f: f64) -> Envelope {
        if t < self.t_lm {
            Envelope {
                rate: 0.0,
                until: self.t_lm.min(t_f),
                exact: true,
            }
        } else {
            Envelope {
                rate: self.mu,
                until: t_f,
                exact: true,
            }
        }
    }

    fn integrated_intensity(&self, _state: &MemoryState, a: f64, b: f64) -> f64 {
        self.mu * (b - a.max(self.t_lm)).max(0.0)
    }

    fn free_rate(&self) -> f64 {
        self.mu
    }

    fn with_free_rate(&self, rate: f64) -> Box<dyn Schedule> {
        Box::new(LastMinute::new(self.t_lm, rate))
    }
}
