use crate::memory::{MemoryState, ModelKind};

use super::{Envelope, Schedule, ScheduleSpec};

/// Optimal intensity under quadratic loss: `u(t) = q^(-1/2) (1 - m(t))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Memorize {
    q: f64,
    scale: f64,
}

impl Memorize {
    pub fn new(q: f64) -> Self {
        Memorize {
            q,
            scale: q.powf(-0.5),
        }
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// `q^(-1/2)`, the supremum of the intensity.
    pub fn max_rate(&self) -> f64 {
        self.scale
    }
}

impl Schedule for Memorize {
    fn name(&self) -> &'static str {
        "memorize"
    }

    fn spec(&self) -> ScheduleSpec {
        ScheduleSpec::Memorize { q: self.q }
    }

    fn intensity(&self, state: &MemoryState, t: f64) -> f64 {
        self.scale * (1.0 - state.recall_at(t))
    }

    fn envelope(&self, _state: &MemoryState, _t: f64, t_f: f64) -> Envelope {
        Envelope {
            rate: self.scale,
            until: t_f,
            exact: false,
        }
    }

    fn integrated_intensity(&self, state: &MemoryState, a: f64, b: f64) -> f64 {
        if !(b > a) {
            return 0.0;
        }
        match state.kind() {
            ModelKind::Exponential => {
                let n = state.n();
                let da = (a - state.t_last()).max(0.0);
                let db = (b - state.t_last()).max(0.0);
                // ∫ (1 - e^{-n d}) dd from da to db
                let decay = ((-n * da).exp() - (-n * db).exp()) / n;
                self.scale * ((b - a) - decay)
            }
            ModelKind::PowerLaw { .. } => {
                crate::quadrature::integrate(|t| self.intensity(state, t), a, b, 1e-10)
            }
        }
    }

    fn free_rate(&self) -> f64 {
        self.scale
    }

    fn with_free_rate(&self, rate: f64) -> Box<dyn Schedule> {
        let q = if rate > 0.0 {
            rate.powi(-2)
        } else {
            f64::INFINITY
        };
        Box::new(Memorize {
            q,
            scale: rate.max(0.0),
        })
    }
}
