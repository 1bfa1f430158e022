use serde::{Deserialize, Serialize};

use crate::memory::MemoryState;

use super::{Envelope, Schedule, ScheduleSpec};

/// Where the exponential ramp of the threshold schedule starts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    /// At the instant recall probability falls to `m_th`; zero intensity before.
    #[default]
    Crossing,
    /// At the previous review. Used when scoring observed logs, where the
    /// crossing instant depends on a fitted model rather than the data.
    PreviousReview,
}

/// Ramp anchor `s` and arming flag derived from the memory state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdRuntime {
    pub s: f64,
    pub armed: bool,
}

/// `u(t) = c exp((t - s) / zeta)` once recall has reached `m_th`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Threshold {
    m_th: f64,
    c: f64,
    zeta: f64,
    anchor: Anchor,
}

impl Threshold {
    pub fn new(m_th: f64, c: f64, zeta: f64, anchor: Anchor) -> Self {
        Threshold {
            m_th,
            c,
            zeta,
            anchor,
        }
    }

    /// Ramp start for the current state. Each review resets it because the
    /// state's last-review time moves.
    pub fn anchor_time(&self, state: &MemoryState) -> f64 {
        match self.anchor {
            Anchor::Crossing => state.t_last() + state.kind().elapsed_until(state.n(), self.m_th),
            Anchor::PreviousReview => state.t_last(),
        }
    }

    pub fn runtime(&self, state: &MemoryState, t: f64) -> ThresholdRuntime {
        let s = self.anchor_time(state);
        ThresholdRuntime { s, armed: t >= s }
    }

    /// Length of the subintervals of the piecewise-constant majorant.
    fn segment(&self) -> f64 {
        self.zeta / 4.0
    }
}

impl Schedule for Threshold {
    fn name(&self) -> &'static str {
        "threshold"
    }

    fn spec(&self) -> ScheduleSpec {
        ScheduleSpec::Threshold {
            m_th: self.m_th,
            c: self.c,
            zeta: self.zeta,
            anchor: self.anchor,
        }
    }

    fn intensity(&self, state: &MemoryState, t: f64) -> f64 {
        let rt = self.runtime(state, t);
        if rt.armed {
            self.c * ((t - rt.s) / self.zeta).exp()
        } else {
            0.0
        }
    }

    fn envelope(&self, state: &MemoryState, t: f64, t_f: f64) -> Envelope {
        let s = self.anchor_time(state);
        if t < s {
            return Envelope {
                rate: 0.0,
                until: s.min(t_f),
                exact: true,
            };
        }
        let h = self.segment();
        let k = ((t - s) / h).floor();
        let mut end = s + (k + 1.0) * h;
        if end <= t {
            end = t + h;
        }
        let end = end.min(t_f);
        Envelope {
            rate: self.c * ((end - s) / self.zeta).exp(),
            until: end,
            exact: false,
        }
    }

    fn integrated_intensity(&self, state: &MemoryState, a: f64, b: f64) -> f64 {
        let s = self.anchor_time(state);
        let lo = a.max(s);
        if !(b > lo) {
            return 0.0;
        }
        crate::quadrature::integrate(|t| self.intensity(state, t), lo, b, 1e-10)
    }

    fn free_rate(&self) -> f64 {
        self.c
    }

    fn with_free_rate(&self, rate: f64) -> Box<dyn Schedule> {
        Box::new(Threshold { c: rate, ..*self })
    }
}
