//! Held-out predictive metrics of a fitted model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::ReviewSequence;
use crate::stats;

use super::{clamp_p, FittedModel};

/// Half-lives are clamped to [15 minutes, 274 days] (times in days).
pub const HALF_LIFE_MIN: f64 = 15.0 / 1440.0;
pub const HALF_LIFE_MAX: f64 = 274.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveMetrics {
    pub mae: f64,
    pub auc: f64,
    /// Pearson correlation of empirical `-Δ / log2 p` and model half-lives.
    pub cor_h: f64,
    pub observations: usize,
}

/// Per observation: observed score, binary label, gap, predicted recall and
/// predicted half-life.
struct Row {
    p: f64,
    label: bool,
    delta: f64,
    pred: f64,
    half_life: f64,
}

fn rows(model: &FittedModel, logs: &[ReviewSequence]) -> Result<Vec<Row>> {
    let mut out = Vec::new();
    for seq in logs {
        let path = model.state_path(seq)?;
        // path[i] is the state just before event i.
        for (e, st) in seq.events.iter().zip(&path) {
            let delta = e.t - st.t_last();
            if delta <= 0.0 {
                continue;
            }
            out.push(Row {
                p: e.p_recall.unwrap_or(if e.recall { 1.0 } else { 0.0 }),
                label: e.recall,
                delta,
                pred: clamp_p(model.model.recall(st.n(), delta)),
                half_life: model.model.half_life(st.n()),
            });
        }
    }
    Ok(out)
}

fn empirical_half_life(delta: f64, p: f64) -> f64 {
    (-delta / clamp_p(p).log2()).clamp(HALF_LIFE_MIN, HALF_LIFE_MAX)
}

pub fn predictive_metrics(
    model: &FittedModel,
    held_out: &[ReviewSequence],
) -> Result<PredictiveMetrics> {
    let rows = rows(model, held_out)?;
    if rows.is_empty() {
        return Err(Error::Undefined(
            "no held-out observations with a positive gap".into(),
        ));
    }
    let mae = rows.iter().map(|r| (r.p - r.pred).abs()).sum::<f64>() / rows.len() as f64;
    let scores: Vec<f64> = rows.iter().map(|r| r.pred).collect();
    let labels: Vec<bool> = rows.iter().map(|r| r.label).collect();
    let auc = stats::roc_auc(&scores, &labels)?;
    let h_emp: Vec<f64> = rows
        .iter()
        .map(|r| empirical_half_life(r.delta, r.p))
        .collect();
    let h_pred: Vec<f64> = rows
        .iter()
        .map(|r| r.half_life.clamp(HALF_LIFE_MIN, HALF_LIFE_MAX))
        .collect();
    Ok(PredictiveMetrics {
        mae,
        auc,
        cor_h: stats::pearson(&h_emp, &h_pred),
        observations: rows.len(),
    })
}

/// MAE on `held_out` of always predicting the mean training recall score.
pub fn constant_predictor_mae(
    train: &[ReviewSequence],
    held_out: &[ReviewSequence],
) -> Result<f64> {
    let score = |s: &ReviewSequence| -> Vec<f64> {
        let mut prev = s.start;
        let mut out = Vec::new();
        for e in &s.events {
            if e.t > prev {
                out.push(e.p_recall.unwrap_or(if e.recall { 1.0 } else { 0.0 }));
            }
            prev = e.t;
        }
        out
    };
    let tr: Vec<f64> = train.iter().flat_map(score).collect();
    let te: Vec<f64> = held_out.iter().flat_map(score).collect();
    if tr.is_empty() || te.is_empty() {
        return Err(Error::Undefined(
            "constant predictor needs training and held-out observations".into(),
        ));
    }
    let c = stats::mean(&tr);
    Ok(te.iter().map(|p| (p - c).abs()).sum::<f64>() / te.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{ItemParams, ModelKind, ReviewEvent};

    fn model() -> FittedModel {
        FittedModel::fixed(
            ModelKind::Exponential,
            ItemParams::new(0.5, 1.0, 1.0).unwrap(),
        )
    }

    #[test]
    fn perfect_predictions() {
        // Fractional scores equal to the model's own predictions.
        let m = model();
        let mut seq = ReviewSequence::new("u", "i", 0.0, 10.0);
        for (t, r) in [
            (0.5, true),
            (1.5, false),
            (3.0, true),
            (3.2, true),
            (6.0, false),
        ] {
            seq.events.push(ReviewEvent::new(t, r));
        }
        let path = m.state_path(&seq).unwrap();
        for (e, st) in seq.events.iter_mut().zip(&path) {
            e.p_recall = Some(st.recall_at(e.t));
        }
        let met = predictive_metrics(&m, &[seq]).unwrap();
        assert!(met.mae < 1e-12);
        assert_eq!(met.observations, 5);
        assert!((met.cor_h - 1.0).abs() < 1e-9, "{}", met.cor_h);
    }

    #[test]
    fn perfect_binary_ranking_gives_unit_auc() {
        // Long gaps fail, short ones succeed: predictions rank the labels exactly.
        let m = FittedModel::fixed(
            ModelKind::Exponential,
            ItemParams::new(0.0, 0.0, 1.0).unwrap(),
        );
        let mut logs = Vec::new();
        for (i, (gap, r)) in [(0.1, true), (0.2, true), (3.0, false), (4.0, false)]
            .iter()
            .enumerate()
        {
            let mut s = ReviewSequence::new("u", format!("i{i}"), 0.0, 10.0);
            s.events.push(ReviewEvent::new(*gap, *r));
            logs.push(s);
        }
        assert_eq!(predictive_metrics(&m, &logs).unwrap().auc, 1.0);
    }

    #[test]
    fn constant_predictor_has_half_auc() {
        // Gap-independent predictions: alpha = beta = 0 and equal gaps.
        let m = FittedModel::fixed(
            ModelKind::Exponential,
            ItemParams::new(0.0, 0.0, 1.0).unwrap(),
        );
        let logs: Vec<ReviewSequence> = (0..6)
            .map(|i| {
                let mut s = ReviewSequence::new("u", format!("i{i}"), 0.0, 10.0);
                s.events.push(ReviewEvent::new(1.0, i % 2 == 0));
                s
            })
            .collect();
        assert_eq!(predictive_metrics(&m, &logs).unwrap().auc, 0.5);
    }

    #[test]
    fn degenerate_labels_error() {
        let m = model();
        let mut s = ReviewSequence::new("u", "i", 0.0, 10.0);
        s.events.push(ReviewEvent::new(1.0, true));
        assert!(predictive_metrics(&m, &[s]).is_err());
    }

    #[test]
    fn half_life_clamps() {
        assert_eq!(
            empirical_half_life(1.0, 1.0),
            HALF_LIFE_MAX.min(-1.0 / clamp_p(1.0).log2())
        );
        assert_eq!(empirical_half_life(1e-6, 0.5), HALF_LIFE_MIN);
        assert!((empirical_half_life(2.0, 0.5) - 2.0).abs() < 1e-12);
    }
}
