//! Half-life-regression variant: `n = n0_item · (1−α)^{n✓} · (1+β)^{n✗}`,
//! fitted by squared loss between observed and predicted recall.
//!
//! Parameters live in log space: `w✓ = ln(1−α) ≤ 0`, `w✗ = ln(1+β) ≥ 0`,
//! `ln n0` per item and `ln ω` for the power-law curve. Steps are
//! diagonally preconditioned gradient steps with backtracking, so the loss
//! never increases across accepted iterations.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::{ModelKind, ReviewSequence};
use crate::rng;
use crate::stats;

use super::observations::{item_ids, Observations};
use super::{clamp_p, FitDiagnostics, FittedModel, P_MAX, P_MIN};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iter: usize,
    /// Stop when an accepted step lowers the loss by less than this fraction.
    pub tol: f64,
    /// Candidate L2 weights; a single entry skips the validation split.
    pub lambdas: Vec<f64>,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iter: 2000,
            tol: 1e-6,
            lambdas: vec![0.0, 1e-4, 1e-3, 1e-2],
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Params {
    /// Successes per bin, then failures per bin.
    pub w: Vec<f64>,
    pub log_omega: Option<f64>,
    pub log_n0: Vec<f64>,
}

impl Params {
    fn project(&mut self) {
        let k = self.w.len() / 2;
        for w in &mut self.w[..k] {
            *w = w.min(0.0);
        }
        for w in &mut self.w[k..] {
            *w = w.max(0.0);
        }
    }

    fn kind(&self) -> ModelKind {
        match self.log_omega {
            None => ModelKind::Exponential,
            Some(l) => ModelKind::PowerLaw { omega: l.exp() },
        }
    }
}

struct Evaluation {
    loss: f64,
    grad: Params,
    diag: Params,
    clamped: usize,
}

fn decay_exposure(kind: ModelKind, delta: f64) -> f64 {
    match kind {
        ModelKind::Exponential => delta,
        ModelKind::PowerLaw { omega } => (omega * delta).ln_1p(),
    }
}

/// Mean squared error with clamped predictions, plus the L2 penalty.
fn evaluate(params: &Params, obs: &Observations, lambda: f64, with_grad: bool) -> Evaluation {
    let nw = params.w.len();
    let kind = params.kind();
    let nobs = obs.len().max(1) as f64;
    struct Part {
        loss: f64,
        gw: Vec<f64>,
        dw: Vec<f64>,
        go: f64,
        d_o: f64,
        gn: f64,
        dn: f64,
        clamped: usize,
    }
    let parts: Vec<Part> = obs
        .item_rows
        .par_iter()
        .enumerate()
        .map(|(item, rows)| {
            let mut part = Part {
                loss: 0.0,
                gw: vec![0.0; if with_grad { nw } else { 0 }],
                dw: vec![0.0; if with_grad { nw } else { 0 }],
                go: 0.0,
                d_o: 0.0,
                gn: 0.0,
                dn: 0.0,
                clamped: 0,
            };
            for row in rows.clone() {
                let c = obs.row_counts(row);
                let l = params.log_n0[item]
                    + params
                        .w
                        .iter()
                        .zip(c)
                        .map(|(w, &c)| w * c as f64)
                        .sum::<f64>();
                let n = l.exp();
                let delta = obs.delta[row];
                let x = decay_exposure(kind, delta);
                let raw = (-n * x).exp();
                let p_hat = clamp_p(raw);
                if !(P_MIN..=P_MAX).contains(&raw) {
                    part.clamped += 1;
                }
                let r = p_hat - obs.p[row];
                part.loss += r * r;
                if with_grad {
                    // Derivative of the unclamped curve; the clamp only guards the loss.
                    let dl = -raw * n * x;
                    let f = 2.0 / nobs;
                    part.gn += f * r * dl;
                    part.dn += f * dl * dl;
                    for (j, &cj) in c.iter().enumerate() {
                        if cj > 0 {
                            let cj = cj as f64;
                            part.gw[j] += f * r * dl * cj;
                            part.dw[j] += f * dl * dl * cj * cj;
                        }
                    }
                    if let ModelKind::PowerLaw { omega } = kind {
                        let dz = -raw * n * omega * delta / (1.0 + omega * delta);
                        part.go += f * r * dz;
                        part.d_o += f * dz * dz;
                    }
                }
            }
            part
        })
        .collect();

    let mut loss = 0.0;
    let mut clamped = 0;
    let mut gw = vec![0.0; nw];
    let mut dw = vec![0.0; nw];
    let (mut go, mut d_o) = (0.0, 0.0);
    let mut gn = Vec::with_capacity(parts.len());
    let mut dn = Vec::with_capacity(parts.len());
    for p in &parts {
        loss += p.loss;
        clamped += p.clamped;
        if with_grad {
            for j in 0..nw {
                gw[j] += p.gw[j];
                dw[j] += p.dw[j];
            }
            go += p.go;
            d_o += p.d_o;
        }
        gn.push(p.gn);
        dn.push(p.dn);
    }
    let penalty: f64 = params.w.iter().map(|w| w * w).sum::<f64>() * lambda;
    for j in 0..nw {
        gw[j] += 2.0 * lambda * params.w[j];
        dw[j] += 2.0 * lambda;
    }
    Evaluation {
        loss: loss / nobs + penalty,
        grad: Params {
            w: gw,
            log_omega: params.log_omega.map(|_| go),
            log_n0: gn,
        },
        diag: Params {
            w: dw,
            log_omega: params.log_omega.map(|_| d_o),
            log_n0: dn,
        },
        clamped,
    }
}

fn step(params: &Params, ev: &Evaluation, eta: f64) -> Params {
    let damp = |d: f64| d + 1e-12;
    let mut next = params.clone();
    for j in 0..next.w.len() {
        next.w[j] -= eta * ev.grad.w[j] / damp(ev.diag.w[j]);
    }
    for i in 0..next.log_n0.len() {
        if ev.diag.log_n0[i] > 0.0 {
            next.log_n0[i] -= eta * ev.grad.log_n0[i] / damp(ev.diag.log_n0[i]);
        }
    }
    if let (Some(l), Some(g), Some(d)) = (
        next.log_omega.as_mut(),
        ev.grad.log_omega,
        ev.diag.log_omega,
    ) {
        *l -= eta * g / damp(d);
    }
    // Keep single steps bounded in log space.
    for (new, old) in next.w.iter_mut().zip(&params.w) {
        *new = new.clamp(old - 2.0, old + 2.0);
    }
    for (new, old) in next.log_n0.iter_mut().zip(&params.log_n0) {
        *new = new.clamp(old - 5.0, old + 5.0);
    }
    next.project();
    next
}

/// Starting point: update coefficients near zero and per-item rates from the
/// median single-observation estimate `−ln p / x`.
pub(crate) fn initial_params(obs: &Observations, kind: ModelKind) -> Params {
    let x_of = |row: usize| decay_exposure(kind, obs.delta[row]);
    let guess = |row: usize| (-clamp_p(obs.p[row]).ln() / x_of(row)).ln();
    let all: Vec<f64> = (0..obs.len())
        .map(guess)
        .filter(|v| v.is_finite())
        .collect();
    let global = if all.is_empty() {
        0.0
    } else {
        stats::median(&all)
    };
    let log_n0 = obs
        .item_rows
        .iter()
        .map(|rows| {
            let v: Vec<f64> = rows.clone().map(guess).filter(|v| v.is_finite()).collect();
            if v.is_empty() {
                global
            } else {
                stats::median(&v)
            }
        })
        .collect();
    let k = obs.bins;
    let mut w = vec![-0.1; k];
    w.extend(vec![0.1; k]);
    Params {
        w,
        log_omega: match kind {
            ModelKind::Exponential => None,
            ModelKind::PowerLaw { omega } => Some(omega.ln()),
        },
        log_n0,
    }
}

pub(crate) struct CoreFit {
    pub params: Params,
    pub loss_curve: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub clamped: usize,
}

pub(crate) fn optimize(
    obs: &Observations,
    init: Params,
    lambda: f64,
    config: &FitConfig,
) -> Result<CoreFit> {
    let mut params = init;
    let mut ev = evaluate(&params, obs, lambda, true);
    check_finite(&ev, 0)?;
    let mut curve = vec![ev.loss];
    let mut eta = 1.0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iter {
        iterations += 1;
        let cand = step(&params, &ev, eta);
        let next = evaluate(&cand, obs, lambda, true);
        check_finite(&next, iterations)?;
        if next.loss <= ev.loss {
            let rel = (ev.loss - next.loss) / ev.loss.max(f64::MIN_POSITIVE);
            params = cand;
            ev = next;
            curve.push(ev.loss);
            eta = (eta * 2.0).min(1.0);
            if rel < config.tol {
                converged = true;
                break;
            }
        } else {
            eta *= 0.5;
            if eta < 1e-12 {
                converged = true;
                break;
            }
        }
    }
    Ok(CoreFit {
        params,
        loss_curve: curve,
        iterations,
        converged,
        clamped: ev.clamped,
    })
}

fn check_finite(ev: &Evaluation, iteration: usize) -> Result<()> {
    let bad = !ev.loss.is_finite()
        || ev.grad.w.iter().any(|g| !g.is_finite())
        || ev.grad.log_n0.iter().any(|g| !g.is_finite())
        || ev.grad.log_omega.is_some_and(|g| !g.is_finite());
    if bad {
        return Err(Error::Estimation(format!(
            "non-finite loss or gradient at iteration {iteration} (loss {}, w-gradient {:?})",
            ev.loss, ev.grad.w
        )));
    }
    Ok(())
}

/// Validation loss: clamped squared error without the penalty.
pub(crate) fn mse(params: &Params, obs: &Observations) -> f64 {
    evaluate(params, obs, 0.0, false).loss
}

pub(crate) struct Selected {
    pub fit: CoreFit,
    pub lambda: f64,
    pub validation: Vec<(f64, f64)>,
    pub obs: Observations,
}

/// Chooses the L2 weight on a held-out fraction of sequences, then refits on everything.
pub(crate) fn fit_with_selection(
    seqs: &[&ReviewSequence],
    kind: ModelKind,
    cuts: &[f64],
    config: &FitConfig,
) -> Result<Selected> {
    if config.lambdas.is_empty() {
        return Err(Error::Estimation("empty regularisation grid".into()));
    }
    let items = item_ids(seqs);
    let all = Observations::build(seqs, &items, cuts);
    if all.len() == 0 {
        return Err(Error::Estimation(
            "no observations with a positive review gap".into(),
        ));
    }
    let mut validation = Vec::new();
    let lambda = if config.lambdas.len() == 1 {
        config.lambdas[0]
    } else {
        let mut order: Vec<usize> = (0..seqs.len()).collect();
        order.shuffle(&mut rng::stream(config.seed, 0));
        let n_val = ((seqs.len() as f64 * config.validation_fraction).round() as usize)
            .clamp(1, seqs.len().max(2) - 1);
        let val: Vec<&ReviewSequence> = order[..n_val].iter().map(|&i| seqs[i]).collect();
        let train: Vec<&ReviewSequence> = order[n_val..].iter().map(|&i| seqs[i]).collect();
        let train_obs = Observations::build(&train, &items, cuts);
        let val_obs = Observations::build(&val, &items, cuts);
        let init = initial_params(&train_obs, kind);
        let mut best = (f64::INFINITY, config.lambdas[0]);
        for &lambda in &config.lambdas {
            let fit = optimize(&train_obs, init.clone(), lambda, config)?;
            let loss = mse(&fit.params, &val_obs);
            validation.push((lambda, loss));
            if loss < best.0 {
                best = (loss, lambda);
            }
        }
        best.1
    };
    let init = initial_params(&all, kind);
    let fit = optimize(&all, init, lambda, config)?;
    Ok(Selected {
        fit,
        lambda,
        validation,
        obs: all,
    })
}

pub(crate) fn unidentified(obs: &Observations) -> Vec<String> {
    let mut out = Vec::new();
    let single = obs.bins == 1;
    for (b, &(s, f)) in obs.updates.iter().enumerate() {
        if s == 0 {
            out.push(if single {
                "alpha".to_string()
            } else {
                format!("alpha[{b}]")
            });
        }
        if f == 0 {
            out.push(if single {
                "beta".to_string()
            } else {
                format!("beta[{b}]")
            });
        }
    }
    out
}

pub fn fit_halflife_regression(
    logs: &[ReviewSequence],
    model: ModelKind,
    config: &FitConfig,
) -> Result<FittedModel> {
    if logs.is_empty() {
        return Err(Error::Estimation("empty review log".into()));
    }
    model.validate()?;
    let seqs: Vec<&ReviewSequence> = logs.iter().collect();
    let sel = fit_with_selection(&seqs, model, &[], config)?;
    Ok(to_model(&sel))
}

pub(crate) fn to_model(sel: &Selected) -> FittedModel {
    let p = &sel.fit.params;
    let n0: BTreeMap<String, f64> = sel
        .obs
        .item_names
        .iter()
        .zip(&p.log_n0)
        .map(|(name, l)| (name.clone(), l.exp()))
        .collect();
    let logs: Vec<f64> = p.log_n0.clone();
    let default_n0 = if logs.is_empty() {
        1.0
    } else {
        stats::median(&logs).exp()
    };
    let unident = unidentified(&sel.obs);
    if !unident.is_empty() {
        tracing::warn!(
            ?unident,
            "parameters without data signal left at their prior"
        );
    }
    FittedModel {
        model: p.kind(),
        alpha: 1.0 - p.w[0].exp(),
        beta: p.w[p.w.len() / 2].exp() - 1.0,
        n0,
        default_n0,
        diagnostics: FitDiagnostics {
            loss_curve: sel.fit.loss_curve.clone(),
            iterations: sel.fit.iterations,
            converged: sel.fit.converged,
            lambda: sel.lambda,
            validation: sel.validation.clone(),
            observations: sel.obs.len(),
            clamped_predictions: sel.fit.clamped,
            skipped_zero_gap: sel.obs.skipped_zero_gap,
            unidentified: unident,
        },
    }
}
