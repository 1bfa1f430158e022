//! Memory-model mathematics: forgetting curves, forgetting-rate jumps and
//! recall sampling for a single item.
//!
//! The forgetting rate is stored in log-space so that long streaks of
//! successful recalls (each multiplying the rate by `1 - alpha`) cannot
//! underflow. Values are clamped to `[MIN_RATE, MAX_RATE]`; every clamp is
//! counted on the state so callers can surface it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const MIN_RATE: f64 = 1e-12;
pub const MAX_RATE: f64 = 1e12;

/// Shape of the forgetting curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    /// `m = exp(-n * D)`
    Exponential,
    /// `m = (1 + omega * D)^(-n)`
    PowerLaw { omega: f64 },
}

impl Default for ModelKind {
    fn default() -> Self {
        ModelKind::Exponential
    }
}

impl ModelKind {
    pub fn power_law(omega: f64) -> Result<Self> {
        let kind = ModelKind::PowerLaw { omega };
        kind.validate()?;
        Ok(kind)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ModelKind::Exponential => Ok(()),
            ModelKind::PowerLaw { omega } if omega > 0.0 && omega.is_finite() => Ok(()),
            ModelKind::PowerLaw { omega } => {
                Err(invalid("omega", format!("must be > 0, got {omega}")))
            }
        }
    }

    /// Recall probability after `elapsed` time units at forgetting rate `n`.
    #[inline]
    pub fn recall(&self, n: f64, elapsed: f64) -> f64 {
        match *self {
            ModelKind::Exponential => (-n * elapsed).exp(),
            ModelKind::PowerLaw { omega } => (-n * (omega * elapsed).ln_1p()).exp(),
        }
    }

    /// Relative decay rate `-(dm/dt) / m` between reviews.
    #[inline]
    pub fn decay_rate(&self, n: f64, elapsed: f64) -> f64 {
        match *self {
            ModelKind::Exponential => n,
            ModelKind::PowerLaw { omega } => n * omega / (1.0 + omega * elapsed),
        }
    }

    /// Elapsed time at which recall decays to `m` (inverse of [`ModelKind::recall`]).
    pub fn elapsed_until(&self, n: f64, m: f64) -> f64 {
        debug_assert!(m > 0.0 && m <= 1.0);
        match *self {
            ModelKind::Exponential => -m.ln() / n,
            ModelKind::PowerLaw { omega } => ((-m.ln() / n).exp_m1()) / omega,
        }
    }

    /// Time for recall to fall to one half. For the exponential model this is `ln 2 / n`.
    pub fn half_life(&self, n: f64) -> f64 {
        self.elapsed_until(n, 0.5)
    }

    pub fn short_name(&self) -> &'static str {
        match self {
            ModelKind::Exponential => "exp",
            ModelKind::PowerLaw { .. } => "pl",
        }
    }
}

/// Per-item update parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemParams {
    /// Fractional decrease of the forgetting rate after a successful recall.
    pub alpha: f64,
    /// Fractional increase of the forgetting rate after a failed recall.
    pub beta: f64,
    /// Initial forgetting rate.
    pub n0: f64,
}

impl Default for ItemParams {
    fn default() -> Self {
        ItemParams {
            alpha: 0.5,
            beta: 1.0,
            n0: 1.0,
        }
    }
}

impl ItemParams {
    pub fn new(alpha: f64, beta: f64, n0: f64) -> Result<Self> {
        let p = ItemParams { alpha, beta, n0 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha <= 1.0) || !self.alpha.is_finite() {
            return Err(invalid(
                "alpha",
                format!("must be <= 1, got {}", self.alpha),
            ));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(invalid("beta", format!("must be >= 0, got {}", self.beta)));
        }
        if !(self.n0 > 0.0) || !self.n0.is_finite() {
            return Err(invalid("n0", format!("must be > 0, got {}", self.n0)));
        }
        Ok(())
    }

    /// Log of the multiplicative jump applied to `n` for a given recall outcome.
    #[inline]
    pub fn log_jump(&self, recall: bool) -> f64 {
        if recall {
            (1.0 - self.alpha).ln()
        } else {
            self.beta.ln_1p()
        }
    }
}

/// Memory state of one item: forgetting rate and time of the last review.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryState {
    log_n: f64,
    t_last: f64,
    kind: ModelKind,
    clamps: u32,
}

impl MemoryState {
    /// State at first exposure: recall is 1 at `t_origin`.
    pub fn new(n0: f64, t_origin: f64, kind: ModelKind) -> Result<Self> {
        if !(n0 > 0.0) || !n0.is_finite() {
            return Err(invalid("n0", format!("must be > 0, got {n0}")));
        }
        if !t_origin.is_finite() {
            return Err(invalid("t_origin", "must be finite"));
        }
        kind.validate()?;
        let mut state = MemoryState {
            log_n: 0.0,
            t_last: t_origin,
            kind,
            clamps: 0,
        };
        state.set_log_n(n0.ln());
        Ok(state)
    }

    fn set_log_n(&mut self, log_n: f64) {
        let lo = MIN_RATE.ln();
        let hi = MAX_RATE.ln();
        if log_n < lo || log_n.is_nan() {
            self.clamps += 1;
            tracing::debug!(log_n, "forgetting rate clamped to floor");
            self.log_n = lo;
        } else if log_n > hi {
            self.clamps += 1;
            tracing::debug!(log_n, "forgetting rate clamped to cap");
            self.log_n = hi;
        } else {
            self.log_n = log_n;
        }
    }

    #[inline]
    pub fn n(&self) -> f64 {
        self.log_n.exp()
    }

    #[inline]
    pub fn log_n(&self) -> f64 {
        self.log_n
    }

    #[inline]
    pub fn t_last(&self) -> f64 {
        self.t_last
    }

    #[inline]
    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    /// Number of times the forgetting rate hit the floor or the cap.
    pub fn clamp_count(&self) -> u32 {
        self.clamps
    }

    fn check_time(&self, t: f64) -> Result<f64> {
        let elapsed = t - self.t_last;
        if elapsed < 0.0 || elapsed.is_nan() {
            return Err(Error::Domain(format!(
                "time {t} precedes last review at {}",
                self.t_last
            )));
        }
        Ok(elapsed)
    }

    pub fn recall_prob(&self, t: f64) -> Result<f64> {
        let elapsed = self.check_time(t)?;
        Ok(self.kind.recall(self.n(), elapsed))
    }

    /// Recall probability with `t` clamped to the last review. Used on hot
    /// paths where `t >= t_last` already holds by construction.
    #[inline]
    pub fn recall_at(&self, t: f64) -> f64 {
        self.kind.recall(self.n(), (t - self.t_last).max(0.0))
    }

    pub fn apply_review(&self, t: f64, recall: bool, params: &ItemParams) -> Result<MemoryState> {
        self.check_time(t)?;
        let mut next = *self;
        next.set_log_n(self.log_n + params.log_jump(recall));
        next.t_last = t;
        Ok(next)
    }

    pub fn sample_recall<R: Rng + ?Sized>(&self, t: f64, rng: &mut R) -> Result<bool> {
        let m = self.recall_prob(t)?;
        Ok(rng.random::<f64>() < m)
    }
}

/// One review: time, binary outcome and (when observed) the fractional
/// in-session recall score.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReviewEvent {
    pub t: f64,
    pub recall: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_recall: Option<f64>,
}

impl ReviewEvent {
    pub fn new(t: f64, recall: bool) -> Self {
        ReviewEvent {
            t,
            recall,
            p_recall: None,
        }
    }
}

/// Time-ordered reviews of one (user, item) pair over an observation window.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReviewSequence {
    pub user: String,
    pub item: String,
    /// Exposure origin; the item is fully recalled here.
    pub start: f64,
    pub end: f64,
    pub events: Vec<ReviewEvent>,
}

impl ReviewSequence {
    pub fn new(user: impl Into<String>, item: impl Into<String>, start: f64, end: f64) -> Self {
        ReviewSequence {
            user: user.into(),
            item: item.into(),
            start,
            end,
            events: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn span(&self) -> f64 {
        self.end - self.start
    }

    /// Ordered recall string, e.g. `✗✓✓`.
    pub fn pattern(&self) -> String {
        self.events
            .iter()
            .map(|e| if e.recall { '✓' } else { '✗' })
            .collect()
    }

    pub fn successes(&self) -> usize {
        self.events.iter().filter(|e| e.recall).count()
    }

    /// Checks ordering: events strictly increasing and inside the window.
    pub fn validate(&self) -> Result<()> {
        if !(self.end >= self.start) {
            return Err(Error::Domain(format!(
                "window end {} before start {}",
                self.end, self.start
            )));
        }
        let mut prev = self.start;
        for (i, e) in self.events.iter().enumerate() {
            if e.t < prev || (i > 0 && e.t <= prev) {
                return Err(Error::Domain(format!(
                    "event {i} at {} is out of order",
                    e.t
                )));
            }
            if e.t > self.end {
                return Err(Error::Domain(format!(
                    "event {i} at {} after window end",
                    e.t
                )));
            }
            prev = e.t;
        }
        Ok(())
    }

    /// Memory states in force on each inter-review segment. Element `k` is
    /// the state on `[t_k, t_{k+1})` where `t_0` is the window start, so the
    /// result has `len() + 1` entries.
    pub fn state_path(
        &self,
        n0: f64,
        params: &ItemParams,
        kind: ModelKind,
    ) -> Result<Vec<MemoryState>> {
        let mut state = MemoryState::new(n0, self.start, kind)?;
        let mut path = Vec::with_capacity(self.events.len() + 1);
        path.push(state);
        for e in &self.events {
            state = state.apply_review(e.t, e.recall, params)?;
            path.push(state);
        }
        Ok(path)
    }
}
