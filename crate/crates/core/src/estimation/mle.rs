//! Maximum-likelihood fits of schedule parameters to observed review times.
//!
//! All three estimators are closed form in the rate parameter, so each
//! satisfies the Poisson identity `∫u dt = number of events` exactly.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::memory::{MemoryState, ModelKind, ReviewSequence};
use crate::quadrature;

use super::FittedModel;

/// `∫_a^b (1 − m(t)) dt` for a fixed state (`a >= t_last`).
pub fn one_minus_recall_integral(state: &MemoryState, a: f64, b: f64) -> f64 {
    if !(b > a) {
        return 0.0;
    }
    let d0 = a - state.t_last();
    let d1 = b - state.t_last();
    match state.kind() {
        ModelKind::Exponential => {
            let n = state.n();
            // (d1 − d0) − (e^{−n d0} − e^{−n d1}) / n, arranged to avoid cancellation.
            let decay = (-n * d0).exp() * (-(-n * (d1 - d0)).exp_m1()) / n;
            (d1 - d0) - decay
        }
        ModelKind::PowerLaw { .. } => {
            quadrature::integrate(|t| 1.0 - state.recall_at(t), a, b, 1e-12)
        }
    }
}

/// Event count, `∫(1−m) dt` over the window, and how many events happened
/// at recall exactly one (zero intensity).
pub fn memorize_statistics(
    seq: &ReviewSequence,
    model: &FittedModel,
) -> Result<(usize, f64, usize)> {
    let path = model.state_path(seq)?;
    let mut integral = 0.0;
    let mut saturated = 0;
    let mut t = seq.start;
    for (k, state) in path.iter().enumerate() {
        let end = seq.events.get(k).map_or(seq.end, |e| e.t);
        integral += one_minus_recall_integral(state, t, end);
        if k < seq.events.len() && state.recall_at(end) >= 1.0 {
            saturated += 1;
        }
        t = end;
    }
    Ok((seq.len(), integral, saturated))
}

/// `q = (I / n)²` pooled over `sequences`: the stationary point of
/// `n ln λ − λ I` in `λ = q^{-1/2}`.
pub fn fit_q_mle(sequences: &[ReviewSequence], model: &FittedModel) -> Result<f64> {
    let mut events = 0;
    let mut integral = 0.0;
    let mut saturated = 0;
    for seq in sequences {
        let (n, i, s) = memorize_statistics(seq, model)?;
        events += n;
        integral += i;
        saturated += s;
    }
    if events == 0 {
        return Err(Error::Estimation("q is undefined without events".into()));
    }
    if saturated > 0 {
        tracing::warn!(saturated, "events at recall 1 have zero MEMORIZE intensity");
    }
    if !(integral > 0.0) {
        return Err(Error::Estimation(
            "∫(1−m) dt vanishes; q is unbounded".into(),
        ));
    }
    Ok((integral / events as f64).powi(2))
}

/// Homogeneous Poisson rate `n / T` pooled over `sequences`.
pub fn fit_mu_mle(sequences: &[ReviewSequence]) -> Result<f64> {
    let events: usize = sequences.iter().map(|s| s.len()).sum();
    let span: f64 = sequences.iter().map(|s| s.span()).sum();
    if !(span > 0.0) {
        return Err(Error::Estimation(
            "observation window has zero length".into(),
        ));
    }
    Ok(events as f64 / span)
}

/// Where the exponential ramp of the threshold schedule starts on each
/// inter-review segment.
#[derive(Clone, Copy, Debug)]
pub enum ThresholdAnchoring<'a> {
    /// `s` is the previous review (or the exposure origin).
    PreviousReview,
    /// `s` is when the model's recall falls to `m_th`; zero intensity before.
    Crossing { m_th: f64, model: &'a FittedModel },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub zeta: f64,
    pub c: f64,
    pub log_likelihood: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFit {
    pub c: f64,
    pub zeta: f64,
    pub log_likelihood: f64,
    pub profile: Vec<ProfilePoint>,
}

impl ThresholdFit {
    pub fn at_zeta(&self, zeta: f64) -> Option<&ProfilePoint> {
        self.profile.iter().find(|p| p.zeta == zeta)
    }
}

fn ln_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `ln ∫_lo^hi e^{(t−s)/ζ} dt` with `lo >= s`.
fn ln_ramp_integral(s: f64, lo: f64, hi: f64, zeta: f64) -> f64 {
    if !(hi > lo) {
        return f64::NEG_INFINITY;
    }
    let x0 = (lo - s) / zeta;
    let x1 = (hi - s) / zeta;
    zeta.ln() + x1 + (-(x0 - x1).exp_m1()).ln()
}

/// Anchors per segment: one per event plus the trailing segment.
fn anchors(seq: &ReviewSequence, anchoring: &ThresholdAnchoring<'_>) -> Result<Vec<f64>> {
    let mut times = vec![seq.start];
    times.extend(seq.events.iter().map(|e| e.t));
    match anchoring {
        ThresholdAnchoring::PreviousReview => Ok(times),
        ThresholdAnchoring::Crossing { m_th, model } => {
            if !(*m_th > 0.0 && *m_th < 1.0) {
                return Err(invalid("m_th", format!("must lie in (0, 1), got {m_th}")));
            }
            let path = model.state_path(seq)?;
            Ok(path
                .iter()
                .map(|st| st.t_last() + st.kind().elapsed_until(st.n(), *m_th))
                .collect())
        }
    }
}

/// Profile likelihood over `zeta_grid` with `c*(ζ) = n / ∫e^{(t−s)/ζ} dt`,
/// pooled over `sequences`.
pub fn fit_threshold_mle(
    sequences: &[ReviewSequence],
    zeta_grid: &[f64],
    anchoring: ThresholdAnchoring<'_>,
) -> Result<ThresholdFit> {
    if zeta_grid.is_empty() || zeta_grid.iter().any(|z| !(*z > 0.0)) {
        return Err(invalid(
            "zeta_grid",
            "must be nonempty with positive entries",
        ));
    }
    let events: usize = sequences.iter().map(|s| s.len()).sum();
    if events == 0 {
        return Err(Error::Estimation(
            "threshold fit needs at least one event".into(),
        ));
    }
    let all_anchors: Vec<Vec<f64>> = sequences
        .iter()
        .map(|s| anchors(s, &anchoring))
        .collect::<Result<_>>()?;
    let n = events as f64;
    let mut profile = Vec::with_capacity(zeta_grid.len());
    for &zeta in zeta_grid {
        let mut ln_total = f64::NEG_INFINITY;
        let mut exponent_sum = 0.0;
        for (seq, s) in sequences.iter().zip(&all_anchors) {
            let mut lo = seq.start;
            for (k, &s_k) in s.iter().enumerate() {
                let hi = seq.events.get(k).map_or(seq.end, |e| e.t);
                ln_total = ln_sum_exp(ln_total, ln_ramp_integral(s_k, lo.max(s_k), hi, zeta));
                if k < seq.events.len() {
                    exponent_sum += if hi >= s_k {
                        (hi - s_k) / zeta
                    } else {
                        f64::NEG_INFINITY
                    };
                }
                lo = hi;
            }
        }
        if ln_total == f64::NEG_INFINITY {
            // The ramp is never armed, so every event sits at zero intensity.
            profile.push(ProfilePoint {
                zeta,
                c: 0.0,
                log_likelihood: f64::NEG_INFINITY,
            });
            continue;
        }
        let ln_c = n.ln() - ln_total;
        let ll = n * ln_c + exponent_sum - n;
        profile.push(ProfilePoint {
            zeta,
            c: ln_c.exp(),
            log_likelihood: ll,
        });
    }
    let best = profile
        .iter()
        .copied()
        .fold(None::<ProfilePoint>, |acc, p| match acc {
            Some(a) if a.log_likelihood >= p.log_likelihood => Some(a),
            _ => Some(p),
        })
        .expect("nonempty grid");
    if best.log_likelihood == f64::NEG_INFINITY {
        tracing::warn!("every grid point has an event at zero intensity");
    }
    Ok(ThresholdFit {
        c: best.c,
        zeta: best.zeta,
        log_likelihood: best.log_likelihood,
        profile,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{ItemParams, ReviewEvent};

    fn seq_at(times: &[f64], end: f64) -> ReviewSequence {
        let mut s = ReviewSequence::new("u", "i", 0.0, end);
        s.events = times.iter().map(|&t| ReviewEvent::new(t, true)).collect();
        s
    }

    #[test]
    fn mu_closed_form() {
        let s = seq_at(&[0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 4.9], 5.0);
        assert_eq!(fit_mu_mle(std::slice::from_ref(&s)).unwrap(), 2.0);
        assert_eq!(fit_mu_mle(&[seq_at(&[], 5.0)]).unwrap(), 0.0);
        assert!(fit_mu_mle(&[seq_at(&[], 0.0)]).is_err());
    }

    #[test]
    fn q_closed_form_and_scaling() {
        // One event; choose the window so that I = 1 exactly for n = 1.
        let model = FittedModel::fixed(ModelKind::Exponential, ItemParams::default());
        let st = MemoryState::new(1.0, 0.0, ModelKind::Exponential).unwrap();
        // Find T with ∫_0^T (1 − e^{−t}) dt = 1.
        let mut lo = 0.0;
        let mut hi = 5.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if one_minus_recall_integral(&st, 0.0, mid) < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let s = seq_at(&[lo], lo);
        let q = fit_q_mle(std::slice::from_ref(&s), &model).unwrap();
        assert!((q - 1.0).abs() < 1e-9, "q {q}");
        assert!(fit_q_mle(&[seq_at(&[], 3.0)], &model).is_err());
    }

    #[test]
    fn q_is_a_likelihood_maximum() {
        let model = FittedModel::fixed(ModelKind::Exponential, ItemParams::default());
        let s = seq_at(&[0.7, 1.9, 4.0, 8.5], 12.0);
        let q = fit_q_mle(std::slice::from_ref(&s), &model).unwrap();
        let (n, i, _) = memorize_statistics(&s, &model).unwrap();
        let path = model.state_path(&s).unwrap();
        let ll = |q: f64| {
            let lam = q.powf(-0.5);
            let logs: f64 = s
                .events
                .iter()
                .zip(&path)
                .map(|(e, st)| (lam * (1.0 - st.recall_at(e.t))).ln())
                .sum();
            logs - lam * i
        };
        assert_eq!(n, 4);
        assert!(ll(q) > ll(q * 1.1) && ll(q) > ll(q * 0.9));
        // Rate-matching identity.
        assert!((q.powf(-0.5) * i - n as f64).abs() < 1e-9);
    }

    #[test]
    fn integral_matches_quadrature() {
        let st = MemoryState::new(0.3, 1.0, ModelKind::Exponential).unwrap();
        let q = quadrature::integrate(|t| 1.0 - st.recall_at(t), 1.5, 7.0, 1e-13);
        assert!((one_minus_recall_integral(&st, 1.5, 7.0) - q).abs() < 1e-10);
        let tiny = MemoryState::new(1e-9, 0.0, ModelKind::Exponential).unwrap();
        let v = one_minus_recall_integral(&tiny, 0.0, 2.0);
        assert!((v - 2e-9).abs() < 1e-15, "{v}");
    }

    #[test]
    fn threshold_large_zeta_is_uniform() {
        let s = seq_at(&[1.0, 2.2, 3.1, 4.7], 6.0);
        let fit = fit_threshold_mle(
            std::slice::from_ref(&s),
            &[1e9],
            ThresholdAnchoring::PreviousReview,
        )
        .unwrap();
        assert!((fit.c - 4.0 / 6.0).abs() < 1e-6);
    }

    #[test]
    fn threshold_profile_argmax_and_rate_matching() {
        let s = seq_at(&[1.0, 3.0, 4.0, 4.5, 8.0, 9.5], 12.0);
        let grid = [0.5, 1.0, 2.0, 4.0, 8.0];
        let fit = fit_threshold_mle(
            std::slice::from_ref(&s),
            &grid,
            ThresholdAnchoring::PreviousReview,
        )
        .unwrap();
        for p in &fit.profile {
            assert!(fit.log_likelihood >= p.log_likelihood);
            // ∫u = c ζ Σ (e^{Δ/ζ} − 1)
            let mut prev = 0.0;
            let mut total = 0.0;
            for t in s.events.iter().map(|e| e.t).chain([12.0]) {
                total += p.zeta * (((t - prev) / p.zeta).exp() - 1.0);
                prev = t;
            }
            assert!((p.c * total - 6.0).abs() < 1e-6 * 6.0);
        }
        assert!(fit_threshold_mle(
            &[seq_at(&[], 5.0)],
            &grid,
            ThresholdAnchoring::PreviousReview
        )
        .is_err());
    }
}
