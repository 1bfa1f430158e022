//! Study-log CSV to fitted model, predictive metrics and schedule
//! comparison tables in one pass.

use std::collections::BTreeSet;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::io::Read;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimation::{
    constant_predictor_mae, fit_halflife_regression, predictive_metrics, FitConfig, FittedModel,
    PredictiveMetrics,
};
use crate::evaluation::{
    rank_and_compare, score_records, EvalReport, Grouping, RankConfig, ScoringConfig,
    SequenceRecord, SCHEDULES,
};
use crate::ingestion::{collapse_and_filter, parse_csv_where, CanonicalLog, IngestConfig, RowError};
use crate::memory::{ModelKind, ReviewSequence};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub ingest: IngestConfig,
    /// Fraction of users kept, chosen by a seeded hash of the user id.
    pub subsample: f64,
    pub model: ModelKind,
    pub fit: FitConfig,
    /// Pairs held out from the fit for the predictive metrics.
    pub held_out_fraction: f64,
    pub scoring: ScoringConfig,
    pub rank: RankConfig,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            ingest: IngestConfig::default(),
            subsample: 1.0,
            model: ModelKind::Exponential,
            fit: FitConfig::default(),
            held_out_fraction: 0.1,
            scoring: ScoringConfig::default(),
            rank: RankConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub rows: usize,
    pub row_errors: Vec<RowError>,
    pub sequences: usize,
    pub events: usize,
    pub users: usize,
    pub items: usize,
    pub model: FittedModel,
    pub metrics: PredictiveMetrics,
    pub constant_mae: f64,
    pub dropped_baseline_pairs: usize,
    pub by_pattern: EvalReport,
    pub by_review_count: EvalReport,
}

impl PipelineReport {
    /// `model,mae,auc,cor_h,observations,constant_mae`.
    pub fn metrics_table_csv(&self) -> String {
        format!(
            "model,mae,auc,cor_h,observations,constant_mae\n{},{},{},{},{},{}\n",
            match self.model.model {
                ModelKind::Exponential => "exponential",
                ModelKind::PowerLaw { .. } => "power_law",
            },
            self.metrics.mae,
            self.metrics.auc,
            self.metrics.cor_h,
            self.metrics.observations,
            self.constant_mae
        )
    }

    /// File name and contents of every output table.
    pub fn tables(&self) -> Vec<(&'static str, String)> {
        vec![
            ("metrics.csv", self.metrics_table_csv()),
            ("ratios_by_pattern.csv", self.by_pattern.ratio_table_csv()),
            ("quartiles_by_pattern.csv", self.by_pattern.quartile_table_csv()),
            ("ratios_by_review_count.csv", self.by_review_count.ratio_table_csv()),
            ("quartiles_by_review_count.csv", self.by_review_count.quartile_table_csv()),
        ]
    }
}

/// Whether `user` falls in the kept `fraction`.
pub fn keep_user(user: &str, fraction: f64, seed: u64) -> bool {
    if fraction >= 1.0 {
        return true;
    }
    let mut h = DefaultHasher::new();
    (seed, user).hash(&mut h);
    (h.finish() >> 11) as f64 / (1u64 << 53) as f64 <= fraction
}

fn split(seqs: &[ReviewSequence], held_out: f64, seed: u64) -> (Vec<ReviewSequence>, Vec<ReviewSequence>) {
    let mut idx: Vec<usize> = (0..seqs.len()).collect();
    idx.shuffle(&mut rng::stream(seed, 0));
    let k = ((seqs.len() as f64) * held_out).round() as usize;
    let test: BTreeSet<usize> = idx[..k].iter().copied().collect();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (i, s) in seqs.iter().enumerate() {
        if test.contains(&i) {
            b.push(s.clone());
        } else {
            a.push(s.clone());
        }
    }
    (a, b)
}

pub fn run_csv<R: Read>(input: R, config: &PipelineConfig) -> Result<PipelineReport> {
    if !(config.subsample > 0.0 && config.subsample <= 1.0) {
        return Err(invalid("subsample", "must lie in (0, 1]"));
    }
    if !(config.held_out_fraction > 0.0 && config.held_out_fraction < 1.0) {
        return Err(invalid("held_out_fraction", "must lie in (0, 1)"));
    }
    let parsed = parse_csv_where(input, |u| keep_user(u, config.subsample, config.seed))?;
    let log = collapse_and_filter(&parsed.rows, &config.ingest)?;
    let mut report = run_log(&log, config)?;
    report.rows = parsed.rows.len();
    report.row_errors = parsed.errors;
    Ok(report)
}

/// Fit, metrics and comparison tables for an ingested log.
pub fn run_log(log: &CanonicalLog, config: &PipelineConfig) -> Result<PipelineReport> {
    if log.sequences.is_empty() {
        return Err(Error::Estimation("no pairs survive ingestion".into()));
    }
    let (train, test) = split(&log.sequences, config.held_out_fraction, config.seed);
    let fit = FitConfig {
        seed: config.seed,
        ..config.fit.clone()
    };
    let held_out = fit_halflife_regression(&train, config.model, &fit)?;
    let metrics = predictive_metrics(&held_out, &test)?;
    let constant_mae = constant_predictor_mae(&train, &test)?;

    let model = fit_halflife_regression(&log.sequences, config.model, &fit)?;
    let records: Vec<SequenceRecord> = log.sequences.iter().cloned().map(SequenceRecord::new).collect();
    let scoring = score_records(&records, &model, &config.scoring)?;
    let rank = |grouping| {
        rank_and_compare(
            &scoring.records,
            &SCHEDULES,
            &RankConfig {
                grouping,
                ..config.rank.clone()
            },
        )
    };
    let users: BTreeSet<&str> = log.sequences.iter().map(|s| s.user.as_str()).collect();
    let items: BTreeSet<&str> = log.sequences.iter().map(|s| s.item.as_str()).collect();
    Ok(PipelineReport {
        rows: 0,
        row_errors: Vec::new(),
        sequences: log.sequences.len(),
        events: log.event_count(),
        users: users.len(),
        items: items.len(),
        metrics,
        constant_mae,
        dropped_baseline_pairs: scoring.dropped_baseline_pairs,
        by_pattern: rank(Grouping::Pattern)?,
        by_review_count: rank(Grouping::ReviewCount)?,
        model,
    })
}
