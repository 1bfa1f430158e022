//! Synthetic review logs with known generating parameters.

use std::io::Write;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimation::FittedModel;
use crate::memory::{ItemParams, MemoryState, ModelKind, ReviewEvent, ReviewSequence};
use crate::rng;
use crate::schedule::{run_schedule, ModelRecall, ScheduleSpec};

/// Logs for the half-life-regression fit: learners review whenever they
/// like, with gaps spread around the current half-life.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HlrCorpusConfig {
    pub sequences: usize,
    pub items: usize,
    pub alpha: f64,
    pub beta: f64,
    pub model: ModelKind,
    /// Initial forgetting rates are `n0_median · exp(N(0, n0_spread))` per item.
    pub n0_median: f64,
    pub n0_spread: f64,
    pub min_reviews: usize,
    pub max_reviews: usize,
    /// Gap = `gap_scale · t_half(n) · exp(N(0, gap_spread))`.
    pub gap_scale: f64,
    pub gap_spread: f64,
    /// Recall trials per session; with more than one trial the event carries
    /// the fraction correct and succeeds only when every trial does.
    pub trials: u64,
    pub seed: u64,
}

impl Default for HlrCorpusConfig {
    fn default() -> Self {
        HlrCorpusConfig {
            sequences: 5000,
            items: 50,
            alpha: 0.5,
            beta: 1.0,
            model: ModelKind::Exponential,
            n0_median: 1.0,
            n0_spread: 0.5,
            min_reviews: 3,
            max_reviews: 8,
            gap_scale: 1.0,
            gap_spread: 0.8,
            trials: 1,
            seed: 0,
        }
    }
}

/// Per-item initial forgetting rates of a corpus.
pub fn item_rates(cfg: &HlrCorpusConfig) -> Vec<f64> {
    let mut g = rng::stream(cfg.seed, 0);
    let noise = Normal::new(0.0, cfg.n0_spread.max(0.0)).expect("finite spread");
    (0..cfg.items)
        .map(|_| cfg.n0_median * noise.sample(&mut g).exp())
        .collect()
}

pub fn hlr_corpus(cfg: &HlrCorpusConfig) -> Result<Vec<ReviewSequence>> {
    if cfg.items == 0
        || cfg.trials == 0
        || cfg.min_reviews == 0
        || cfg.max_reviews < cfg.min_reviews
    {
        return Err(invalid(
            "corpus",
            "needs items, trials and 1 <= min_reviews <= max_reviews",
        ));
    }
    cfg.model.validate()?;
    let rates = item_rates(cfg);
    let gap_noise =
        Normal::new(0.0, cfg.gap_spread).map_err(|e| invalid("gap_spread", e.to_string()))?;
    (0..cfg.sequences)
        .into_par_iter()
        .map(|s| {
            let mut g = rng::stream(cfg.seed, 1 + s as u64);
            let item = s % cfg.items;
            let params = ItemParams::new(cfg.alpha, cfg.beta, rates[item])?;
            let mut state = MemoryState::new(params.n0, 0.0, cfg.model)?;
            let reviews = g.random_range(cfg.min_reviews..=cfg.max_reviews);
            let mut seq = ReviewSequence::new(format!("u{s}"), format!("w{item}"), 0.0, 0.0);
            let mut t = 0.0;
            for _ in 0..reviews {
                let gap =
                    cfg.gap_scale * cfg.model.half_life(state.n()) * gap_noise.sample(&mut g).exp();
                t += gap;
                let m = state.recall_prob(t)?;
                let (recall, p) = if cfg.trials == 1 {
                    (g.random::<f64>() < m, None)
                } else {
                    let k = Binomial::new(cfg.trials, m)
                        .map_err(|e| Error::Undefined(e.to_string()))?
                        .sample(&mut g);
                    (k == cfg.trials, Some(k as f64 / cfg.trials as f64))
                };
                state = state.apply_review(t, recall, &params)?;
                seq.events.push(ReviewEvent {
                    t,
                    recall,
                    p_recall: p,
                });
            }
            seq.end = t;
            Ok(seq)
        })
        .collect()
}

/// A pair simulated under a known schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelledSequence {
    pub schedule: String,
    pub sequence: ReviewSequence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleCorpusConfig {
    /// Pairs simulated under each schedule.
    pub pairs: usize,
    /// Consecutive pairs of one schedule share a user.
    pub pairs_per_user: usize,
    pub items: usize,
    /// Item initial forgetting rates are `params.n0 · exp(N(0, n0_spread))`.
    pub n0_spread: f64,
    /// Each pair is observed over `[0, T]` with `T ~ U[min_horizon, horizon]`.
    pub min_horizon: f64,
    pub horizon: f64,
    pub seed: u64,
}

impl Default for ScheduleCorpusConfig {
    fn default() -> Self {
        ScheduleCorpusConfig {
            pairs: 300,
            pairs_per_user: 10,
            items: 10,
            n0_spread: 0.0,
            min_horizon: 20.0,
            horizon: 20.0,
            seed: 0,
        }
    }
}

impl ScheduleCorpusConfig {
    /// The generating memory model, with one initial rate per item.
    pub fn model(&self, params: &ItemParams, kind: ModelKind) -> Result<FittedModel> {
        let noise = Normal::new(0.0, self.n0_spread).map_err(|e| invalid("n0_spread", e.to_string()))?;
        let mut g = rng::stream(self.seed, u64::MAX - 1);
        let mut m = FittedModel::fixed(kind, *params);
        for j in 0..self.items {
            m.n0.insert(format!("w{j}"), params.n0 * noise.sample(&mut g).exp());
        }
        Ok(m)
    }
}

/// Pairs simulated under each schedule over `[0, horizon]`. A user follows a
/// single schedule; items cycle so a user never sees one item twice when
/// `items >= pairs_per_user`.
pub fn schedule_corpus(
    specs: &[ScheduleSpec],
    params: &ItemParams,
    model: ModelKind,
    cfg: &ScheduleCorpusConfig,
) -> Result<Vec<LabelledSequence>> {
    if cfg.items == 0 || cfg.pairs_per_user == 0 {
        return Err(invalid("corpus", "needs items and pairs_per_user >= 1"));
    }
    if !(cfg.min_horizon > 0.0 && cfg.min_horizon <= cfg.horizon) {
        return Err(invalid("min_horizon", "must lie in (0, horizon]"));
    }
    let schedules = specs.iter().map(|s| s.build()).collect::<Result<Vec<_>>>()?;
    let truth = cfg.model(params, model)?;
    let jobs: Vec<(usize, usize)> = (0..specs.len())
        .flat_map(|k| (0..cfg.pairs).map(move |i| (k, i)))
        .collect();
    jobs.into_par_iter()
        .map(|(k, i)| {
            let id = k * cfg.pairs + i;
            let mut g = rng::stream(cfg.seed, id as u64);
            let item = format!("w{}", i % cfg.items);
            let horizon = if cfg.min_horizon < cfg.horizon {
                g.random_range(cfg.min_horizon..=cfg.horizon)
            } else {
                cfg.horizon
            };
            let trace = run_schedule(
                schedules[k].as_ref(),
                &truth.params_for(&item),
                model,
                0.0,
                horizon,
                &mut ModelRecall,
                &mut g,
            )?;
            let mut sequence = trace.sequence;
            sequence.user = format!("u{k}_{:05}", i / cfg.pairs_per_user);
            sequence.item = item;
            Ok(LabelledSequence {
                schedule: specs[k].name().to_string(),
                sequence,
            })
        })
        .collect()
}

/// Writes a study log in the public Duolingo column layout: one row per
/// session, times in seconds, `delta` since the previous session of the
/// pair (the first session's `delta` is the time since exposure).
pub fn duolingo_csv<W: Write>(
    logs: &[ReviewSequence],
    trials: u64,
    epoch: i64,
    seed: u64,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "p_recall",
        "timestamp",
        "delta",
        "user_id",
        "learning_language",
        "ui_language",
        "lexeme_id",
        "lexeme_string",
        "history_seen",
        "history_correct",
        "session_seen",
        "session_correct",
    ])?;
    let mut g = rng::stream(seed, u64::MAX);
    for seq in logs {
        let (mut seen, mut correct) = (0u64, 0u64);
        let mut prev = seq.start;
        for e in &seq.events {
            let p = e.p_recall.unwrap_or(if e.recall { 1.0 } else { 0.0 });
            let session_seen = trials.max(1);
            let mut session_correct = (p * session_seen as f64).round() as u64;
            if !e.recall && session_correct == session_seen {
                session_correct -= 1;
            }
            if e.recall {
                session_correct = session_seen;
            }
            let ts = epoch + (e.t * 86400.0).round() as i64;
            let delta = ((e.t - prev) * 86400.0).round() as i64;
            let jitter: u8 = g.random_range(0..3);
            w.write_record([
                format!("{}", session_correct as f64 / session_seen as f64),
                ts.to_string(),
                delta.to_string(),
                seq.user.clone(),
                "de".to_string(),
                ["en", "es", "it"][jitter as usize].to_string(),
                seq.item.clone(),
                format!("{}/<n>", seq.item),
                seen.to_string(),
                correct.to_string(),
                session_seen.to_string(),
                session_correct.to_string(),
            ])?;
            seen += session_seen;
            correct += session_correct;
            prev = e.t;
        }
    }
    w.flush()?;
    Ok(())
}
