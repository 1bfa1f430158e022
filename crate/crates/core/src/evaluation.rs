//! Observational comparison of schedules on review logs: how likely each
//! (user, item) pair's review times are under every schedule, and how much
//! effort and forgetting the pairs that follow each schedule most closely
//! show.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimation::{clamp_p, fit_mu_mle, fit_q_mle, fit_threshold_mle, FittedModel, ThresholdAnchoring};
use crate::memory::{MemoryState, ReviewSequence};
use crate::schedule::{Anchor, Schedule, ScheduleSpec};
use crate::stats;

/// Schedules compared on observed logs; the first one is the reference of
/// every ratio.
pub const SCHEDULES: [&str; 3] = ["memorize", "uniform", "threshold"];

/// A (user, item) pair with its reviews over `[start, end]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub user: String,
    pub item: String,
    pub pattern: String,
    pub window: (f64, f64),
    pub sequence: ReviewSequence,
}

impl SequenceRecord {
    pub fn new(sequence: ReviewSequence) -> Self {
        SequenceRecord {
            user: sequence.user.clone(),
            item: sequence.item.clone(),
            pattern: sequence.pattern(),
            window: (sequence.start, sequence.end),
            sequence,
        }
    }

    fn id(&self) -> (&str, &str) {
        (&self.user, &self.item)
    }
}

/// `∫u dt` over `[a, b]` along a state path (`path[k]` holds from event
/// `k - 1` to event `k`).
pub fn integrated_intensity(schedule: &dyn Schedule, seq: &ReviewSequence, path: &[MemoryState], a: f64, b: f64) -> f64 {
    let mut total = 0.0;
    let mut lo = seq.start;
    for (k, state) in path.iter().enumerate() {
        let hi = seq.events.get(k).map_or(seq.end, |e| e.t);
        let (x, y) = (lo.max(a), hi.min(b));
        if y > x {
            total += schedule.integrated_intensity(state, x, y);
        }
        lo = hi;
    }
    total
}

/// `Σ ln u(t_i) − ∫u dt` over events in `(a, b]`; `-∞` when some event has
/// zero intensity.
pub fn window_log_likelihood(schedule: &dyn Schedule, seq: &ReviewSequence, path: &[MemoryState], a: f64, b: f64) -> f64 {
    let mut ll = 0.0;
    for (e, state) in seq.events.iter().zip(path) {
        if e.t > a && e.t <= b {
            let u = schedule.intensity(state, e.t);
            if !(u > 0.0) {
                return f64::NEG_INFINITY;
            }
            ll += u.ln();
        }
    }
    ll - integrated_intensity(schedule, seq, path, a, b)
}

pub fn log_likelihood(seq: &ReviewSequence, spec: &ScheduleSpec, model: &FittedModel) -> Result<f64> {
    let schedule = spec.build()?;
    let path = model.state_path(seq)?;
    Ok(window_log_likelihood(schedule.as_ref(), seq, &path, seq.start, seq.end))
}

/// `1 / (t_n − t_1)`.
pub fn effort(seq: &ReviewSequence) -> Result<f64> {
    let (Some(first), Some(last)) = (seq.events.first(), seq.events.last()) else {
        return Err(Error::Undefined("effort needs at least two reviews".into()));
    };
    let span = last.t - first.t;
    if seq.len() < 2 || !(span > 0.0) {
        return Err(Error::Undefined("effort needs two reviews at distinct times".into()));
    }
    Ok(1.0 / span)
}

/// `−ln m̂ / gap` with `m̂` clamped away from 0 and 1.
pub fn raw_forgetting_rate(m_hat: f64, gap: f64) -> f64 {
    if m_hat <= 0.0 || m_hat >= 1.0 {
        tracing::debug!(m_hat, "recall estimate clamped");
    }
    -clamp_p(m_hat).ln() / gap
}

/// Recall estimate at each review: the observed session score when present,
/// otherwise the model's prediction. The flag is true when the model was used.
pub fn recall_estimates(seq: &ReviewSequence, model: &FittedModel) -> Result<(Vec<f64>, bool)> {
    if seq.events.iter().all(|e| e.p_recall.is_some()) {
        return Ok((seq.events.iter().map(|e| e.p_recall.unwrap_or_default()).collect(), false));
    }
    let path = model.state_path(seq)?;
    let mut used_model = false;
    let m = seq
        .events
        .iter()
        .zip(&path)
        .map(|(e, st)| {
            e.p_recall.unwrap_or_else(|| {
                used_model = true;
                st.recall_at(e.t)
            })
        })
        .collect();
    Ok((m, used_model))
}

/// `n̂ / n̂₀` with `n̂ = −ln m̂(t_n) / (t_n − t_{n−1})`.
pub fn empirical_forgetting_rate(seq: &ReviewSequence, m_hat_last: f64, baseline: f64) -> Result<f64> {
    let n = seq.len();
    if n < 2 {
        return Err(Error::Undefined("empirical forgetting rate needs two reviews".into()));
    }
    let gap = seq.events[n - 1].t - seq.events[n - 2].t;
    if !(gap > 0.0) {
        return Err(Error::Undefined("last two reviews coincide".into()));
    }
    if !(baseline > 0.0) {
        return Err(invalid("baseline", format!("must be > 0, got {baseline}")));
    }
    Ok(raw_forgetting_rate(m_hat_last, gap) / baseline)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub zeta_grid: Vec<f64>,
    pub threshold_anchor: Anchor,
    /// Only used with the crossing anchor.
    pub m_th: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            zeta_grid: (0..=12).map(|k| 0.1 * 10f64.powf(k as f64 / 4.0)).collect(),
            threshold_anchor: Anchor::PreviousReview,
            m_th: 0.5,
        }
    }
}

/// A record with its fitted schedules, log-likelihoods and outcome metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredRecord {
    pub record: SequenceRecord,
    pub specs: BTreeMap<String, ScheduleSpec>,
    pub log_likelihood: BTreeMap<String, f64>,
    pub effort: Option<f64>,
    /// Normalised empirical forgetting rate `n̂ / n̂₀`.
    pub forgetting: Option<f64>,
    /// Recall estimates came (at least partly) from the model, not the data.
    pub model_recall: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scoring {
    pub records: Vec<ScoredRecord>,
    /// Item id to average initial empirical forgetting rate `n̂₀`.
    pub baselines: BTreeMap<String, f64>,
    /// Pairs without a measurable first interval, left out of `n̂₀`.
    pub dropped_baseline_pairs: usize,
    /// Records without events, not scored.
    pub empty_records: usize,
}

/// Fits `q` and `μ` per user and the threshold schedule per sequence, then
/// scores every record under each schedule.
pub fn score_records(records: &[SequenceRecord], model: &FittedModel, config: &ScoringConfig) -> Result<Scoring> {
    let (active, empty): (Vec<&SequenceRecord>, Vec<&SequenceRecord>) = records.iter().partition(|r| !r.sequence.is_empty());
    let mut by_user: BTreeMap<&str, Vec<ReviewSequence>> = BTreeMap::new();
    for r in &active {
        by_user.entry(r.user.as_str()).or_default().push(r.sequence.clone());
    }
    let user_fits: BTreeMap<&str, (f64, f64)> = by_user
        .par_iter()
        .map(|(u, seqs)| Ok((*u, (fit_q_mle(seqs, model)?, fit_mu_mle(seqs)?))))
        .collect::<Result<_>>()?;

    let estimates: Vec<(Vec<f64>, bool)> = active
        .par_iter()
        .map(|r| recall_estimates(&r.sequence, model))
        .collect::<Result<_>>()?;

    let mut sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    let mut dropped = 0;
    for (r, (m, _)) in active.iter().zip(&estimates) {
        let first = r.sequence.events[0].t - r.sequence.start;
        if first > 0.0 {
            let e = sums.entry(r.item.as_str()).or_default();
            e.0 += raw_forgetting_rate(m[0], first);
            e.1 += 1;
        } else {
            dropped += 1;
        }
    }
    let baselines: BTreeMap<String, f64> = sums
        .into_iter()
        .map(|(k, (s, n))| (k.to_string(), s / n as f64))
        .filter(|(_, v)| *v > 0.0)
        .collect();

    let scored = active
        .par_iter()
        .zip(&estimates)
        .map(|(r, (m, model_recall))| {
            let (q, mu) = user_fits[r.user.as_str()];
            let seq = std::slice::from_ref(&r.sequence);
            let anchoring = match config.threshold_anchor {
                Anchor::PreviousReview => ThresholdAnchoring::PreviousReview,
                Anchor::Crossing => ThresholdAnchoring::Crossing {
                    m_th: config.m_th,
                    model,
                },
            };
            let th = fit_threshold_mle(seq, &config.zeta_grid, anchoring)?;
            let specs: BTreeMap<String, ScheduleSpec> = [
                ScheduleSpec::Memorize { q },
                ScheduleSpec::Uniform { mu },
                ScheduleSpec::Threshold {
                    m_th: config.m_th,
                    c: th.c,
                    zeta: th.zeta,
                    anchor: config.threshold_anchor,
                },
            ]
            .into_iter()
            .map(|s| (s.name().to_string(), s))
            .collect();
            let path = model.state_path(&r.sequence)?;
            let mut lls = BTreeMap::new();
            for (name, spec) in &specs {
                let sch = spec.build()?;
                let ll = window_log_likelihood(sch.as_ref(), &r.sequence, &path, r.sequence.start, r.sequence.end);
                lls.insert(name.clone(), ll);
            }
            let forgetting = baselines
                .get(&r.item)
                .and_then(|&b| empirical_forgetting_rate(&r.sequence, m[m.len() - 1], b).ok());
            Ok(ScoredRecord {
                record: (*r).clone(),
                specs,
                log_likelihood: lls,
                effort: effort(&r.sequence).ok(),
                forgetting,
                model_recall: *model_recall,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if dropped > 0 {
        tracing::info!(dropped, "pairs without a measurable first interval left out of item baselines");
    }
    Ok(Scoring {
        records: scored,
        baselines,
        dropped_baseline_pairs: dropped,
        empty_records: empty.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Pattern,
    ReviewCount,
}

/// Score by which pairs are ranked for each schedule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ranking {
    /// The pair's log-likelihood under the schedule.
    #[default]
    LogLikelihood,
    /// Log-likelihood margin over the best competing schedule.
    LikelihoodRatio,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankConfig {
    pub quantile: f64,
    pub grouping: Grouping,
    #[serde(default)]
    pub ranking: Ranking,
    /// Groups where some schedule selects fewer pairs are skipped.
    pub min_selected: usize,
}

impl Default for RankConfig {
    fn default() -> Self {
        RankConfig {
            quantile: 0.25,
            grouping: Grouping::Pattern,
            ranking: Ranking::LogLikelihood,
            min_selected: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Indices into the scored records.
    pub records: Vec<usize>,
    pub mean_effort: f64,
    pub median_forgetting: f64,
    pub forgetting_q25: f64,
    pub forgetting_q75: f64,
}

/// Reference schedule against one competitor within a group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub competitor: String,
    /// `ê_ref / ê_competitor` (mean effort).
    pub effort_ratio: f64,
    /// `n̂_ref / n̂_competitor` (median forgetting rate).
    pub forgetting_ratio: f64,
    /// Two-sample KS p-value on the selected forgetting rates.
    pub ks_p_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub key: String,
    pub size: usize,
    pub selections: BTreeMap<String, Selection>,
    pub comparisons: Vec<Comparison>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub grouping: Grouping,
    pub quantile: f64,
    pub reference: String,
    pub groups: Vec<GroupReport>,
    /// Groups left out, with the smallest selection size.
    pub skipped: Vec<(String, usize)>,
    /// Log-likelihood per scored record under each schedule.
    pub log_likelihoods: BTreeMap<String, Vec<f64>>,
}

fn group_key(r: &ScoredRecord, grouping: Grouping) -> String {
    match grouping {
        Grouping::Pattern => r.record.pattern.clone(),
        Grouping::ReviewCount => format!("{:03}", r.record.sequence.len()),
    }
}

/// Ranking score of a record for `schedule`; `-∞` for pairs the schedule
/// cannot have produced.
pub fn ranking_score(r: &ScoredRecord, schedule: &str, schedules: &[&str], ranking: Ranking) -> f64 {
    let ll = |s: &str| r.log_likelihood.get(s).copied().unwrap_or(f64::NEG_INFINITY);
    let own = ll(schedule);
    if own == f64::NEG_INFINITY || own.is_nan() {
        return f64::NEG_INFINITY;
    }
    match ranking {
        Ranking::LogLikelihood => own,
        Ranking::LikelihoodRatio => {
            let rival = schedules
                .iter()
                .filter(|&&s| s != schedule)
                .map(|s| ll(s))
                .fold(f64::NEG_INFINITY, f64::max);
            own - rival
        }
    }
}

/// Indices of the top `quantile` of `members` by ranking score under
/// `schedule`, ties broken by (user, item).
pub fn top_quantile(
    records: &[ScoredRecord],
    members: &[usize],
    schedule: &str,
    schedules: &[&str],
    ranking: Ranking,
    quantile: f64,
) -> Vec<usize> {
    let scores: BTreeMap<usize, f64> = members
        .iter()
        .map(|&i| (i, ranking_score(&records[i], schedule, schedules, ranking)))
        .collect();
    let mut eligible: Vec<usize> = members
        .iter()
        .copied()
        .filter(|i| scores[i] > f64::NEG_INFINITY)
        .collect();
    eligible.sort_by(|a, b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| records[*a].record.id().cmp(&records[*b].record.id()))
    });
    let k = ((members.len() as f64) * quantile).ceil() as usize;
    eligible.truncate(k);
    eligible
}

fn selection(records: &[ScoredRecord], picked: Vec<usize>) -> Selection {
    let efforts: Vec<f64> = picked.iter().filter_map(|&i| records[i].effort).collect();
    let mut rates: Vec<f64> = picked.iter().filter_map(|&i| records[i].forgetting).collect();
    rates.sort_by(f64::total_cmp);
    Selection {
        records: picked,
        mean_effort: stats::mean(&efforts),
        median_forgetting: stats::quantile_sorted(&rates, 0.5),
        forgetting_q25: stats::quantile_sorted(&rates, 0.25),
        forgetting_q75: stats::quantile_sorted(&rates, 0.75),
    }
}

/// Groups eligible records (effort and forgetting rate defined), picks the
/// top pairs per schedule within each group and compares the first schedule
/// of `schedules` with the others.
pub fn rank_and_compare(records: &[ScoredRecord], schedules: &[&str], config: &RankConfig) -> Result<EvalReport> {
    if schedules.len() < 2 {
        return Err(invalid("schedules", "need a reference and at least one competitor"));
    }
    if !(config.quantile > 0.0 && config.quantile <= 1.0) {
        return Err(invalid("quantile", format!("must lie in (0, 1], got {}", config.quantile)));
    }
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        if r.effort.is_some() && r.forgetting.is_some() {
            groups.entry(group_key(r, config.grouping)).or_default().push(i);
        }
    }
    let mut report = EvalReport {
        grouping: config.grouping,
        quantile: config.quantile,
        reference: schedules[0].to_string(),
        groups: Vec::new(),
        skipped: Vec::new(),
        log_likelihoods: schedules
            .iter()
            .map(|s| {
                let v = records
                    .iter()
                    .map(|r| r.log_likelihood.get(*s).copied().unwrap_or(f64::NEG_INFINITY))
                    .collect();
                (s.to_string(), v)
            })
            .collect(),
    };
    for (key, members) in groups {
        let picks: Vec<Vec<usize>> = schedules
            .iter()
            .map(|s| top_quantile(records, &members, s, schedules, config.ranking, config.quantile))
            .collect();
        let smallest = picks.iter().map(Vec::len).min().unwrap_or(0);
        if smallest < config.min_selected {
            tracing::info!(group = %key, smallest, "group skipped: too few selected pairs");
            report.skipped.push((key, smallest));
            continue;
        }
        let selections: Vec<Selection> = picks.into_iter().map(|p| selection(records, p)).collect();
        let rates = |s: &Selection| -> Vec<f64> { s.records.iter().filter_map(|&i| records[i].forgetting).collect() };
        let reference = &selections[0];
        let mut comparisons = Vec::new();
        for (name, sel) in schedules.iter().zip(&selections).skip(1) {
            comparisons.push(Comparison {
                competitor: name.to_string(),
                effort_ratio: reference.mean_effort / sel.mean_effort,
                forgetting_ratio: reference.median_forgetting / sel.median_forgetting,
                ks_p_value: stats::ks_two_sample(&rates(reference), &rates(sel))?.p_value,
            });
        }
        report.groups.push(GroupReport {
            key,
            size: members.len(),
            selections: schedules.iter().map(|s| s.to_string()).zip(selections).collect(),
            comparisons,
        });
    }
    Ok(report)
}

impl EvalReport {
    /// `group,size,competitor,effort_ratio,forgetting_ratio,ks_p_value`.
    pub fn ratio_table_csv(&self) -> String {
        let mut out = String::from("group,size,competitor,effort_ratio,forgetting_ratio,ks_p_value\n");
        for g in &self.groups {
            for c in &g.comparisons {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    g.key, g.size, c.competitor, c.effort_ratio, c.forgetting_ratio, c.ks_p_value
                ));
            }
        }
        out
    }

    /// `group,schedule,selected,mean_effort,forgetting_q25,forgetting_median,forgetting_q75`.
    pub fn quartile_table_csv(&self) -> String {
        let mut out = String::from("group,schedule,selected,mean_effort,forgetting_q25,forgetting_median,forgetting_q75\n");
        for g in &self.groups {
            for (name, s) in &g.selections {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    g.key,
                    name,
                    s.records.len(),
                    s.mean_effort,
                    s.forgetting_q25,
                    s.median_forgetting,
                    s.forgetting_q75
                ));
            }
        }
        out
    }

    /// Every ratio and p-value cell, for structural checks.
    pub fn cells(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for g in &self.groups {
            for c in &g.comparisons {
                v.extend([c.effort_ratio, c.forgetting_ratio, c.ks_p_value]);
            }
            for s in g.selections.values() {
                v.extend([s.mean_effort, s.forgetting_q25, s.median_forgetting, s.forgetting_q75]);
            }
        }
        v
    }
}

/// Fixed-width histogram of finite log-likelihoods.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub negative_infinite: usize,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum::<usize>() + self.negative_infinite
    }

    /// Centre of the fullest bin.
    pub fn mode(&self) -> Option<f64> {
        let (i, &c) = self.counts.iter().enumerate().max_by_key(|&(i, c)| (*c, std::cmp::Reverse(i)))?;
        (c > 0).then(|| 0.5 * (self.edges[i] + self.edges[i + 1]))
    }
}

pub fn likelihood_histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(invalid("bins", "must be >= 1"));
    }
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let negative_infinite = values.len() - finite.len();
    if finite.is_empty() {
        return Ok(Histogram {
            edges: Vec::new(),
            counts: Vec::new(),
            negative_infinite,
        });
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|k| lo + width * k as f64).collect();
    let mut counts = vec![0; bins];
    for v in finite {
        let k = if width > 0.0 { ((v - lo) / width) as usize } else { 0 };
        counts[k.min(bins - 1)] += 1;
    }
    Ok(Histogram {
        edges,
        counts,
        negative_infinite,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{ItemParams, ModelKind, ReviewEvent};
    use crate::quadrature;
    use proptest::prelude::*;

    fn model() -> FittedModel {
        FittedModel::fixed(ModelKind::Exponential, ItemParams::new(0.5, 1.0, 1.0).unwrap())
    }

    fn seq(times: &[(f64, bool)], end: f64) -> ReviewSequence {
        let mut s = ReviewSequence::new("u", "i", 0.0, end);
        s.events = times.iter().map(|&(t, r)| ReviewEvent::new(t, r)).collect();
        s
    }

    #[test]
    fn uniform_examples() {
        let s = seq(&[(0.5, true)], 1.0);
        let ll = log_likelihood(&s, &ScheduleSpec::Uniform { mu: 1.0 }, &model()).unwrap();
        assert!((ll + 1.0).abs() < 1e-15);
        let empty = seq(&[], 0.0);
        let sch = ScheduleSpec::Uniform { mu: 3.0 }.build().unwrap();
        let path = model().state_path(&empty).unwrap();
        assert_eq!(integrated_intensity(sch.as_ref(), &empty, &path, 0.0, 0.0), 0.0);
        let s = seq(&[(1.0, true), (2.0, false)], 7.0);
        let path = model().state_path(&s).unwrap();
        assert!((integrated_intensity(sch.as_ref(), &s, &path, 0.0, 7.0) - 21.0).abs() < 1e-12);
    }

    #[test]
    fn zero_intensity_event_is_negative_infinity() {
        let s = seq(&[(1.0, true)], 2.0);
        let ll = log_likelihood(&s, &ScheduleSpec::Uniform { mu: 0.0 }, &model()).unwrap();
        assert_eq!(ll, f64::NEG_INFINITY);
    }

    #[test]
    fn memorize_segment_integral() {
        let q: f64 = 0.04;
        let s = seq(&[], 3.0);
        let sch = ScheduleSpec::Memorize { q }.build().unwrap();
        let path = model().state_path(&s).unwrap();
        let want = q.powf(-0.5) * (3.0 - (1.0 - (-3.0f64).exp()));
        assert!((integrated_intensity(sch.as_ref(), &s, &path, 0.0, 3.0) - want).abs() < 1e-12);
    }

    #[test]
    fn effort_examples() {
        assert_eq!(effort(&seq(&[(2.0, true), (5.0, false), (12.0, true)], 20.0)).unwrap(), 0.1);
        assert!(effort(&seq(&[(2.0, true)], 20.0)).is_err());
        let halved = effort(&seq(&[(1.0, true), (3.5, false), (6.0, true)], 20.0)).unwrap();
        assert!((halved - 0.2).abs() < 1e-15);
    }

    #[test]
    fn forgetting_rate_examples() {
        let s = seq(&[(1.0, true), (3.0, true)], 5.0);
        let r = empirical_forgetting_rate(&s, 0.5, 1.0).unwrap();
        assert!((r - std::f64::consts::LN_2 / 2.0).abs() < 1e-15);
        let clamped = empirical_forgetting_rate(&s, 1.0, 1.0).unwrap();
        assert!((clamped - (-(0.9999f64).ln() / 2.0)).abs() < 1e-15);
        assert!((empirical_forgetting_rate(&s, 0.5, 2.0).unwrap() - r / 2.0).abs() < 1e-15);
        assert!(empirical_forgetting_rate(&seq(&[(1.0, true)], 5.0), 0.5, 1.0).is_err());
    }

    fn scored(user: &str, ll: f64, effort: f64, forgetting: f64) -> ScoredRecord {
        let mut s = seq(&[(1.0, true), (2.0, true)], 3.0);
        s.user = user.into();
        ScoredRecord {
            record: SequenceRecord::new(s),
            specs: BTreeMap::new(),
            log_likelihood: SCHEDULES.iter().map(|n| (n.to_string(), ll)).collect(),
            effort: Some(effort),
            forgetting: Some(forgetting),
            model_recall: false,
        }
    }

    #[test]
    fn identical_schedules_give_unit_ratios() {
        let recs: Vec<ScoredRecord> = (0..20)
            .map(|i| scored(&format!("u{i:02}"), -(i as f64), 1.0 + i as f64, 0.1 * (i + 1) as f64))
            .collect();
        let rep = rank_and_compare(&recs, &SCHEDULES, &RankConfig::default()).unwrap();
        assert_eq!(rep.groups.len(), 1);
        for c in &rep.groups[0].comparisons {
            assert_eq!(c.effort_ratio, 1.0);
            assert_eq!(c.forgetting_ratio, 1.0);
            assert_eq!(c.ks_p_value, 1.0);
        }
        // Top 25% of 20 is the five highest log-likelihoods.
        assert_eq!(rep.groups[0].selections["uniform"].records, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn swapping_schedules_inverts_ratios() {
        let recs: Vec<ScoredRecord> = (0..24)
            .map(|i| {
                let mut r = scored(&format!("u{i:02}"), 0.0, 1.0 + i as f64, 0.5 + (i % 7) as f64);
                r.log_likelihood.insert("memorize".into(), i as f64);
                r.log_likelihood.insert("uniform".into(), -(i as f64));
                r
            })
            .collect();
        let a = rank_and_compare(&recs, &["memorize", "uniform"], &RankConfig::default()).unwrap();
        let b = rank_and_compare(&recs, &["uniform", "memorize"], &RankConfig::default()).unwrap();
        let (x, y) = (&a.groups[0].comparisons[0], &b.groups[0].comparisons[0]);
        assert!((x.effort_ratio * y.effort_ratio - 1.0).abs() < 1e-12);
        assert!((x.forgetting_ratio * y.forgetting_ratio - 1.0).abs() < 1e-12);
        assert_eq!(x.ks_p_value, y.ks_p_value);
    }

    #[test]
    fn small_groups_are_skipped() {
        let recs: Vec<ScoredRecord> = (0..12).map(|i| scored(&format!("u{i}"), 0.0, 1.0, 1.0)).collect();
        let rep = rank_and_compare(&recs, &SCHEDULES, &RankConfig::default()).unwrap();
        assert!(rep.groups.is_empty());
        assert_eq!(rep.skipped, vec![("✓✓".to_string(), 3)]);
    }

    #[test]
    fn ties_are_broken_by_identifier() {
        let recs: Vec<ScoredRecord> = ["c", "a", "d", "b"].iter().map(|u| scored(u, 0.0, 1.0, 1.0)).collect();
        let pick = top_quantile(&recs, &[0, 1, 2, 3], "uniform", &SCHEDULES, Ranking::LogLikelihood, 0.5);
        assert_eq!(pick, vec![1, 3]);
    }

    #[test]
    fn likelihood_ratio_ranks_by_margin() {
        let mut a = scored("a", 0.0, 1.0, 1.0);
        a.log_likelihood = [("memorize", -5.0), ("uniform", -6.0), ("threshold", -9.0)]
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect();
        let mut b = scored("b", 0.0, 1.0, 1.0);
        b.log_likelihood = [("memorize", -3.0), ("uniform", -1.0), ("threshold", f64::NEG_INFINITY)]
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect();
        assert_eq!(ranking_score(&a, "memorize", &SCHEDULES, Ranking::LikelihoodRatio), 1.0);
        assert_eq!(ranking_score(&b, "memorize", &SCHEDULES, Ranking::LikelihoodRatio), -2.0);
        assert_eq!(ranking_score(&b, "threshold", &SCHEDULES, Ranking::LikelihoodRatio), f64::NEG_INFINITY);
        let recs = [a, b];
        let ll = top_quantile(&recs, &[0, 1], "memorize", &SCHEDULES, Ranking::LogLikelihood, 0.5);
        let lr = top_quantile(&recs, &[0, 1], "memorize", &SCHEDULES, Ranking::LikelihoodRatio, 0.5);
        assert_eq!((ll, lr), (vec![1], vec![0]));
    }

    #[test]
    fn histogram_examples() {
        let h = likelihood_histogram(&[-3.0, -3.0, -3.0], 10).unwrap();
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        let vals = [-1.0, -2.5, f64::NEG_INFINITY, -7.0, -0.1];
        let h = likelihood_histogram(&vals, 4).unwrap();
        assert_eq!(h.total(), vals.len());
        assert_eq!(h.negative_infinite, 1);
    }

    fn arb_sequence() -> impl Strategy<Value = ReviewSequence> {
        prop::collection::vec((0.05f64..3.0, any::<bool>()), 0..6).prop_map(|gaps| {
            let mut t = 0.0;
            let events: Vec<(f64, bool)> = gaps
                .into_iter()
                .map(|(g, r)| {
                    t += g;
                    (t, r)
                })
                .collect();
            seq(&events, t + 1.0)
        })
    }

    fn quadrature_ll(spec: &ScheduleSpec, s: &ReviewSequence) -> f64 {
        let sch = spec.build().unwrap();
        let path = model().state_path(s).unwrap();
        let mut ll = 0.0;
        let mut lo = s.start;
        for (k, st) in path.iter().enumerate() {
            let hi = s.events.get(k).map_or(s.end, |e| e.t);
            ll -= quadrature::integrate(|t| sch.intensity(st, t), lo, hi, 1e-12);
            if let Some(e) = s.events.get(k) {
                ll += sch.intensity(st, e.t).ln();
            }
            lo = hi;
        }
        ll
    }

    proptest! {
        #[test]
        fn memorize_ll_matches_quadrature(s in arb_sequence(), q in 0.001f64..1.0) {
            let spec = ScheduleSpec::Memorize { q };
            let closed = log_likelihood(&s, &spec, &model()).unwrap();
            prop_assert!((closed - quadrature_ll(&spec, &s)).abs() < 1e-6);
        }

        #[test]
        fn ll_is_additive(s in arb_sequence(), frac in 0.01f64..0.99, c in 0.1f64..3.0, zeta in 0.5f64..5.0) {
            let cut = s.start + frac * (s.end - s.start);
            prop_assume!(s.events.iter().all(|e| (e.t - cut).abs() > 1e-9));
            let m = model();
            let path = m.state_path(&s).unwrap();
            for spec in [
                ScheduleSpec::Memorize { q: 0.1 },
                ScheduleSpec::Uniform { mu: c },
                ScheduleSpec::Threshold { m_th: 0.5, c, zeta, anchor: Anchor::PreviousReview },
            ] {
                let sch = spec.build().unwrap();
                let whole = window_log_likelihood(sch.as_ref(), &s, &path, s.start, s.end);
                let parts = window_log_likelihood(sch.as_ref(), &s, &path, s.start, cut)
                    + window_log_likelihood(sch.as_ref(), &s, &path, cut, s.end);
                prop_assert!((whole - parts).abs() < 1e-9 * (1.0 + whole.abs()));
            }
        }

        #[test]
        fn time_rescaling_preserves_ll_differences(s in arb_sequence(), scale in 0.1f64..10.0, mu in 0.1f64..3.0, c in 0.1f64..3.0, zeta in 0.5f64..5.0) {
            let m = model();
            let rescaled = |x: &ReviewSequence| {
                let mut y = x.clone();
                y.start *= scale;
                y.end *= scale;
                for e in &mut y.events { e.t *= scale; }
                y
            };
            let m_scaled = FittedModel::fixed(ModelKind::Exponential, ItemParams::new(0.5, 1.0, 1.0 / scale).unwrap());
            let u = ScheduleSpec::Uniform { mu };
            let th = ScheduleSpec::Threshold { m_th: 0.5, c, zeta, anchor: Anchor::PreviousReview };
            let u_s = ScheduleSpec::Uniform { mu: mu / scale };
            let th_s = ScheduleSpec::Threshold { m_th: 0.5, c: c / scale, zeta: zeta * scale, anchor: Anchor::PreviousReview };
            let d = log_likelihood(&s, &u, &m).unwrap() - log_likelihood(&s, &th, &m).unwrap();
            let y = rescaled(&s);
            let d_s = log_likelihood(&y, &u_s, &m_scaled).unwrap() - log_likelihood(&y, &th_s, &m_scaled).unwrap();
            prop_assert!((d - d_s).abs() < 1e-6 * (1.0 + d.abs()));
        }
    }
}
