//! Thinning sampler for inhomogeneous Poisson processes.
//!
//! Candidates are drawn from a homogeneous process at the envelope rate of
//! the current segment and accepted with probability `u(t) / rate`. When a
//! candidate overshoots the segment, sampling restarts at the segment end;
//! the exponential is memoryless so no correction is needed.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::memory::MemoryState;

use super::Schedule;

/// Proposal/acceptance counters for one sampling call.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ThinningStats {
    pub proposals: u64,
    pub accepted: u64,
    /// When set, every proposal time and its acceptance flag is appended.
    pub trace: Option<Vec<(f64, bool)>>,
}

pub fn sample_first_event<S: Schedule + ?Sized>(
    schedule: &S,
    state: &MemoryState,
    t_now: f64,
    t_f: f64,
    rng: &mut dyn RngCore,
) -> Result<Option<f64>> {
    sample_with_stats(
        schedule,
        state,
        t_now,
        t_f,
        rng,
        &mut ThinningStats::default(),
    )
}

pub fn sample_with_stats<S: Schedule + ?Sized>(
    schedule: &S,
    state: &MemoryState,
    t_now: f64,
    t_f: f64,
    rng: &mut dyn RngCore,
    stats: &mut ThinningStats,
) -> Result<Option<f64>> {
    if !(t_f > t_now) {
        return Err(Error::Domain(format!(
            "sampling horizon must be positive: t_now {t_now}, t_f {t_f}"
        )));
    }
    let mut t = t_now;
    loop {
        let env = schedule.envelope(state, t, t_f);
        let seg_end = env.until.min(t_f);
        if !(env.rate > 0.0) {
            if seg_end >= t_f {
                return Ok(None);
            }
            t = seg_end.max(t);
            continue;
        }
        let gap: f64 = Exp1.sample(rng);
        let candidate = t + gap / env.rate;
        if candidate > seg_end {
            if seg_end >= t_f {
                return Ok(None);
            }
            t = seg_end;
            continue;
        }
        t = candidate;
        stats.proposals += 1;
        let accept = env.exact || rng.random::<f64>() * env.rate < schedule.intensity(state, t);
        if let Some(trace) = stats.trace.as_mut() {
            trace.push((t, accept));
        }
        if accept {
            stats.accepted += 1;
            return Ok(Some(t));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::ModelKind;
    use crate::schedule::{Anchor, Memorize, Threshold, Uniform};
    use crate::stats::ks_one_sample;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fresh() -> MemoryState {
        MemoryState::new(1.0, 0.0, ModelKind::Exponential).unwrap()
    }

    #[test]
    fn zero_intensity_never_fires() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = fresh();
        assert_eq!(
            Uniform::new(0.0)
                .sample_next(&s, 0.0, 100.0, &mut rng)
                .unwrap(),
            None
        );
        let th = Threshold::new(0.5, 0.0, 1.0, Anchor::Crossing);
        assert_eq!(th.sample_next(&s, 0.0, 100.0, &mut rng).unwrap(), None);
    }

    #[test]
    fn nonpositive_horizon_is_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(Uniform::new(1.0)
            .sample_next(&fresh(), 2.0, 2.0, &mut rng)
            .is_err());
    }

    #[test]
    fn uniform_gaps_are_exponential() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mu = 0.6;
        let s = fresh();
        let u = Uniform::new(mu);
        let gaps: Vec<f64> = (0..10_000)
            .map(|_| u.sample_next(&s, 0.0, 1e9, &mut rng).unwrap().unwrap())
            .collect();
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        assert!((mean - 1.0 / mu).abs() < 0.05 / mu);
        let p = ks_one_sample(&gaps, |x| 1.0 - (-mu * x).exp());
        assert!(p > 0.01, "KS p = {p}");
    }

    #[test]
    fn memorize_acceptance_ratio_is_one_minus_recall() {
        let s = fresh();
        let sch = Memorize::new(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut stats = ThinningStats {
            trace: Some(Vec::new()),
            ..Default::default()
        };
        for _ in 0..40_000 {
            let _ = sample_with_stats(&sch, &s, 0.0, 3.0, &mut rng, &mut stats).unwrap();
        }
        let trace = stats.trace.unwrap();
        let width = 0.05;
        for centre in [0.1, 0.5, 1.0, 2.0] {
            let (acc, tot) = trace
                .iter()
                .filter(|(t, _)| (t - centre).abs() < width / 2.0)
                .fold((0u64, 0u64), |(a, n), &(_, ok)| (a + ok as u64, n + 1));
            let want = 1.0 - (-(centre as f64)).exp();
            let got = acc as f64 / tot as f64;
            let se = (want * (1.0 - want) / tot as f64).sqrt();
            assert!(
                (got - want).abs() < 4.0 * se + 0.005,
                "t={centre}: {got} vs {want} ({tot})"
            );
        }
    }

    #[test]
    fn event_counts_match_integrated_intensity() {
        // Thinning correctness for a bounded intensity: the number of events in
        // [0, T] with the state held fixed is Poisson with mean ∫u dt.
        let s = MemoryState::new(0.7, 0.0, ModelKind::Exponential).unwrap();
        let schedules: Vec<Box<dyn Schedule>> = vec![
            Box::new(Memorize::new(0.25)),
            Box::new(Threshold::new(0.7, 0.8, 1.5, Anchor::Crossing)),
        ];
        let horizon = 4.0;
        for sch in &schedules {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let reps = 10_000;
            let mut total = 0u64;
            for _ in 0..reps {
                let mut t = 0.0;
                while let Some(next) = sch.sample_next(&s, t, horizon, &mut rng).unwrap() {
                    total += 1;
                    t = next;
                }
            }
            let mean = total as f64 / reps as f64;
            let want = sch.integrated_intensity(&s, 0.0, horizon);
            assert!(
                (mean - want).abs() / want < 0.03,
                "{}: {mean} vs {want}",
                sch.name()
            );
        }
    }
}
