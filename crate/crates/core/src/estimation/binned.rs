//! Review-gap-dependent `alpha`, `beta`: one pair per gap bin, bins at
//! empirical quantiles of the gaps, bootstrap replicates and pairwise tests.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::memory::{ModelKind, ReviewSequence};
use crate::rng;
use crate::stats;

use super::hlr::{fit_with_selection, to_model, FitConfig};
use super::observations::bin_of;
use super::FittedModel;

/// JSON fields: `cuts` (interior boundaries; bins are `[0, c1)`, ...,
/// `[c_{K-1}, ∞)`), `alpha`, `beta` (per bin), `bootstrap_alpha`,
/// `bootstrap_beta` (one row per replicate), `p_alpha`, `p_beta` (K x K
/// two-sided p-values, 1 on the diagonal), `base` (the point fit).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinnedFit {
    pub cuts: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub bootstrap_alpha: Vec<Vec<f64>>,
    pub bootstrap_beta: Vec<Vec<f64>>,
    pub p_alpha: Vec<Vec<f64>>,
    pub p_beta: Vec<Vec<f64>>,
    pub base: FittedModel,
}

impl BinnedFit {
    pub fn bins(&self) -> usize {
        self.cuts.len() + 1
    }

    pub fn bin_of(&self, gap: f64) -> usize {
        bin_of(&self.cuts, gap)
    }

    /// Smallest off-diagonal p-value over both parameters.
    pub fn min_p_value(&self) -> f64 {
        let mut m: f64 = 1.0;
        for mat in [&self.p_alpha, &self.p_beta] {
            for (i, row) in mat.iter().enumerate() {
                for (j, &p) in row.iter().enumerate() {
                    if i != j {
                        m = m.min(p);
                    }
                }
            }
        }
        m
    }
}

/// Interior boundaries at the `i/K` quantiles of all positive review gaps.
pub fn gap_cuts(logs: &[ReviewSequence], k: usize) -> Vec<f64> {
    let mut gaps = Vec::new();
    for s in logs {
        let mut prev = s.start;
        for e in &s.events {
            if e.t > prev {
                gaps.push(e.t - prev);
            }
            prev = e.t;
        }
    }
    gaps.sort_by(f64::total_cmp);
    (1..k)
        .map(|i| stats::quantile_sorted(&gaps, i as f64 / k as f64))
        .collect()
}

fn split_params(sel_w: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let k = sel_w.len() / 2;
    let alpha = sel_w[..k].iter().map(|w| 1.0 - w.exp()).collect();
    let beta = sel_w[k..].iter().map(|w| w.exp() - 1.0).collect();
    (alpha, beta)
}

fn p_matrix(samples: &[Vec<f64>], k: usize) -> Result<Vec<Vec<f64>>> {
    let b = samples.len();
    let mut out = vec![vec![1.0; k]; k];
    let cols: Vec<Vec<f64>> = (0..k)
        .map(|j| samples.iter().map(|s| s[j]).collect())
        .collect();
    for i in 0..k {
        for j in (i + 1)..k {
            // Each bootstrap spread is the standard error of its bin estimate.
            let t = stats::welch_from_moments(
                stats::mean(&cols[i]),
                stats::variance(&cols[i]),
                b,
                stats::mean(&cols[j]),
                stats::variance(&cols[j]),
                b,
            )?;
            out[i][j] = t.p_value;
            out[j][i] = t.p_value;
        }
    }
    Ok(out)
}

pub fn fit_binned_alpha_beta(
    logs: &[ReviewSequence],
    model: ModelKind,
    k: usize,
    bootstrap: usize,
    config: &FitConfig,
) -> Result<BinnedFit> {
    if k == 0 {
        return Err(invalid("K", "must be >= 1"));
    }
    if bootstrap < 2 {
        return Err(invalid("B", "must be >= 2"));
    }
    if logs.is_empty() {
        return Err(Error::Estimation("empty review log".into()));
    }
    let cuts = gap_cuts(logs, k);
    let seqs: Vec<&ReviewSequence> = logs.iter().collect();
    let sel = fit_with_selection(&seqs, model, &cuts, config)?;
    for (b, &(s, f)) in sel.obs.updates.iter().enumerate() {
        if s + f == 0 {
            let lo = if b == 0 { 0.0 } else { cuts[b - 1] };
            let hi = cuts.get(b).copied().unwrap_or(f64::INFINITY);
            return Err(Error::Estimation(format!(
                "bin {b} [{lo}, {hi}) contains no reviews"
            )));
        }
    }
    let base = to_model(&sel);
    let (alpha, beta) = split_params(&sel.fit.params.w);

    let fixed = FitConfig {
        lambdas: vec![sel.lambda],
        ..config.clone()
    };
    let replicates: Vec<(Vec<f64>, Vec<f64>)> = (0..bootstrap)
        .into_par_iter()
        .map(|r| {
            let mut g = rng::stream(config.seed, 1 + r as u64);
            let sample: Vec<&ReviewSequence> = (0..seqs.len())
                .map(|_| seqs[g.random_range(0..seqs.len())])
                .collect();
            let s = fit_with_selection(&sample, model, &cuts, &fixed)?;
            Ok(split_params(&s.fit.params.w))
        })
        .collect::<Result<_>>()?;
    let (bootstrap_alpha, bootstrap_beta): (Vec<Vec<f64>>, Vec<Vec<f64>>) =
        replicates.into_iter().unzip();
    Ok(BinnedFit {
        p_alpha: p_matrix(&bootstrap_alpha, k)?,
        p_beta: p_matrix(&bootstrap_beta, k)?,
        cuts,
        alpha,
        beta,
        bootstrap_alpha,
        bootstrap_beta,
        base,
    })
}
