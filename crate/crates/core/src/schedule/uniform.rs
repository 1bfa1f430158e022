use crate::memory::MemoryState;

use super::{Envelope, Schedule, ScheduleSpec};

/// Constant reviewing rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Uniform {
    mu: f64,
}

impl Uniform {
    pub fn new(mu: f64) -> Self {
        Uniform { mu }
    }
}

impl Schedule for Uniform {
    fn name(&self) -> &'static str {
        "uniform"
    }

    fn spec(&self) -> ScheduleSpec {
        ScheduleSpec::Uniform { mu: self.mu }
    }

    fn intensity(&self, _state: &MemoryState, _t: f64) -> f64 {
        self.mu
    }

    fn envelope(&self, _state: &MemoryState, _t: f64, t_f: f64) -> Envelope {
        Envelope {
            rate: self.mu,
            until: t_f,
            exact: true,
        }
    }

    fn integrated_intensity(&self, _state: &MemoryState, a: f64, b: f64) -> f64 {
        self.mu * (b - a).max(0.0)
    }

    fn free_rate(&self) -> f64 {
        self.mu
    }

    fn with_free_rate(&self, rate: f64) -> Box<dyn Schedule> {
        Box::new(Uniform::new(rate))
    }
}
