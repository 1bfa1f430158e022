//! Backward dynamic programming on the single-item control problem, used as
//! an independent check that the closed-form intensity is optimal.
//!
//! The state on the grid is `(lattice node, steps since last review, step)`.
//! Recall is recomputed exactly from the node's forgetting rate and the
//! elapsed steps, so the only discretisation is in time and in the action set.
//! Within one step of length `dt` a review happens with probability `u dt`;
//! it succeeds with probability `m` and moves the rate along the lattice.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::memory::{ItemParams, MemoryState, ModelKind};
use crate::quadrature;
use crate::rng;
use crate::schedule::{run_schedule, ModelRecall, Schedule, ScheduleSpec};
use crate::stats;

/// Single item, quadratic loss `½(1−m)² + ½qu²`, zero terminal penalty.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlProblem {
    pub params: ItemParams,
    pub model: ModelKind,
    pub q: f64,
    pub t0: f64,
    pub t_f: f64,
}

impl ControlProblem {
    /// `alpha = 0.5, beta = 1, n(0) = 1`, horizon 20, `q = 3e-4`.
    pub fn synthetic() -> Self {
        ControlProblem {
            params: ItemParams::default(),
            model: ModelKind::Exponential,
            q: 3e-4,
            t0: 0.0,
            t_f: 20.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.model.validate()?;
        if !(self.q > 0.0) || !self.q.is_finite() {
            return Err(invalid("q", format!("must be > 0, got {}", self.q)));
        }
        if !(self.t_f > self.t0) {
            return Err(invalid("t_f", "must exceed t0"));
        }
        Ok(())
    }

    pub fn horizon(&self) -> f64 {
        self.t_f - self.t0
    }
}

pub const DEFAULT_K_MAX: u32 = 40;
pub const DEFAULT_ACTIONS: usize = 64;
/// Recall below this is treated as fully forgotten when capping elapsed time.
const RECALL_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpGrid {
    pub dt: f64,
    pub steps: usize,
    /// Bound on `a + b` in `n0 (1−α)^a (1+β)^b`.
    pub k_max: u32,
    /// Sorted, starts at 0.
    pub actions: Vec<f64>,
    pub store_policy: bool,
}

impl DpGrid {
    /// `{0}` plus 63 log-spaced intensities up to `u_max`, where `u_max` is
    /// `2 q^{-1/2}` capped at `0.95 / dt` so a step holds at most one review
    /// with probability below one.
    pub fn new(problem: &ControlProblem, dt: f64) -> Result<Self> {
        problem.validate()?;
        if !(dt > 0.0) {
            return Err(Error::Discretization(format!("dt must be > 0, got {dt}")));
        }
        let steps = (problem.horizon() / dt).round() as usize;
        if steps == 0 || (steps as f64 * dt - problem.horizon()).abs() > 1e-9 * problem.horizon() {
            return Err(Error::Discretization(format!(
                "dt = {dt} does not divide the horizon {}",
                problem.horizon()
            )));
        }
        let u_max = (2.0 / problem.q.sqrt()).min(0.95 / dt);
        Ok(DpGrid {
            dt,
            steps,
            k_max: DEFAULT_K_MAX,
            actions: log_actions(u_max, DEFAULT_ACTIONS),
            store_policy: false,
        })
    }

    pub fn u_max(&self) -> f64 {
        *self.actions.last().expect("nonempty action set")
    }

    pub fn validate(&self) -> Result<()> {
        if self.actions.first() != Some(&0.0) {
            return Err(Error::Discretization("action set must start at 0".into()));
        }
        if self.actions.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Discretization(
                "actions must be strictly increasing".into(),
            ));
        }
        if self.u_max() * self.dt >= 1.0 {
            return Err(Error::Discretization(format!(
                "u_max * dt = {} >= 1",
                self.u_max() * self.dt
            )));
        }
        Ok(())
    }
}

fn log_actions(u_max: f64, count: usize) -> Vec<f64> {
    let lo = u_max * 1e-3;
    let k = count - 1;
    let mut a = vec![0.0];
    for i in 0..k {
        let f = i as f64 / (k - 1) as f64;
        a.push(if i + 1 == k {
            u_max
        } else {
            lo * (u_max / lo).powf(f)
        });
    }
    a
}

/// Distinct forgetting rates reachable with at most `k_max` reviews.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub rates: Vec<f64>,
    /// Node reached by a success; `i` itself on the boundary.
    pub success: Vec<usize>,
    pub failure: Vec<usize>,
    pub start: usize,
}

impl Lattice {
    pub fn build(params: &ItemParams, k_max: u32) -> Result<Lattice> {
        if params.alpha >= 1.0 {
            return Err(invalid("alpha", "the rate lattice needs alpha < 1"));
        }
        let ls = (1.0 - params.alpha).ln();
        let lf = (1.0 + params.beta).ln();
        let l0 = params.n0.ln();
        let mut logs: Vec<f64> = Vec::new();
        for a in 0..=k_max {
            for b in 0..=(k_max - a) {
                logs.push(l0 + a as f64 * ls + b as f64 * lf);
            }
        }
        logs.sort_by(f64::total_cmp);
        logs.dedup_by(|x, y| (*x - *y).abs() <= 1e-9 * (1.0 + y.abs()));
        let find = |target: f64| -> Option<usize> {
            let i = logs.partition_point(|&x| x < target - 1e-9 * (1.0 + target.abs()));
            (i < logs.len() && (logs[i] - target).abs() <= 1e-9 * (1.0 + target.abs())).then_some(i)
        };
        let start = find(l0).expect("start node present");
        let mut success = Vec::with_capacity(logs.len());
        let mut failure = Vec::with_capacity(logs.len());
        let mut absorbed = 0;
        for (i, &l) in logs.iter().enumerate() {
            let s = find(l + ls);
            let f = find(l + lf);
            absorbed += usize::from(s.is_none()) + usize::from(f.is_none());
            success.push(s.unwrap_or(i));
            failure.push(f.unwrap_or(i));
        }
        tracing::debug!(nodes = logs.len(), absorbed, "rate lattice built");
        Ok(Lattice {
            rates: logs.iter().map(|l| l.exp()).collect(),
            success,
            failure,
            start,
        })
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    fn is_boundary(&self, i: usize) -> bool {
        self.success[i] == i || self.failure[i] == i
    }
}

/// Action index per `(step, node, elapsed steps)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DpPolicy {
    pub dt: f64,
    pub actions: Vec<f64>,
    pub lattice: Lattice,
    caps: Vec<usize>,
    table: Vec<Vec<Vec<u8>>>,
}

impl DpPolicy {
    /// Intensity at step `k` for lattice node `node` reviewed `d` steps ago.
    pub fn intensity(&self, k: usize, node: usize, d: usize) -> f64 {
        let row = &self.table[k][node];
        let d = d.min(self.caps[node]).min(row.len() - 1);
        self.actions[row[d] as usize]
    }

    pub fn steps(&self) -> usize {
        self.table.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DpSolution {
    /// Optimal cost-to-go from the initial state.
    pub value: f64,
    /// Cost of the closed-form intensity evaluated on the same grid.
    pub closed_form_value: f64,
    /// `J_k(start node, 0)` for every step, `k = 0..=steps`.
    pub start_node_values: Vec<f64>,
    pub policy: Option<DpPolicy>,
    pub lattice_nodes: usize,
}

impl DpSolution {
    pub fn grid_gap(&self) -> f64 {
        (self.closed_form_value - self.value) / self.value
    }
}

/// Minimiser of `a u² + b u` over the sorted action set (`a > 0`).
fn best_action(actions: &[f64], a: f64, b: f64) -> usize {
    let u_star = -b / (2.0 * a);
    if u_star <= 0.0 {
        return 0;
    }
    let hi = actions.partition_point(|&u| u < u_star);
    if hi == actions.len() {
        return hi - 1;
    }
    let lo = hi.saturating_sub(1);
    let cost = |i: usize| a * actions[i] * actions[i] + b * actions[i];
    if cost(lo) <= cost(hi) {
        lo
    } else {
        hi
    }
}

pub fn solve_dp(problem: &ControlProblem, grid: &DpGrid) -> Result<DpSolution> {
    problem.validate()?;
    grid.validate()?;
    let lattice = Lattice::build(&problem.params, grid.k_max)?;
    let dt = grid.dt;
    let steps = grid.steps;
    let q = problem.q;
    let scale = q.powf(-0.5);
    let nodes = lattice.len();

    // Elapsed-step cap per node and the recall table along it.
    let caps: Vec<usize> = lattice
        .rates
        .iter()
        .map(|&n| {
            let d = problem.model.elapsed_until(n, RECALL_FLOOR);
            if d.is_finite() {
                ((d / dt).ceil() as usize).min(steps)
            } else {
                steps
            }
        })
        .collect();
    let recall: Vec<Vec<f64>> = lattice
        .rates
        .iter()
        .zip(&caps)
        .map(|(&n, &cap)| {
            (0..=cap)
                .map(|d| problem.model.recall(n, d as f64 * dt))
                .collect()
        })
        .collect();

    let mut next_opt: Vec<Vec<f64>> = caps.iter().map(|&c| vec![0.0; c + 1]).collect();
    let mut next_cf = next_opt.clone();
    let mut cur_opt = next_opt.clone();
    let mut cur_cf = next_opt.clone();
    let mut start_values = vec![0.0; steps + 1];
    let mut table: Vec<Vec<Vec<u8>>> = if grid.store_policy {
        vec![Vec::new(); steps]
    } else {
        Vec::new()
    };
    let a = 0.5 * q * dt;

    for k in (0..steps).rev() {
        let rows: Vec<(Vec<f64>, Vec<f64>, Vec<u8>)> = (0..nodes)
            .into_par_iter()
            .map(|i| {
                let cap = caps[i];
                let top = k.min(cap);
                let s = lattice.success[i];
                let f = lattice.failure[i];
                let js_opt = next_opt[s][0];
                let jf_opt = next_opt[f][0];
                let js_cf = next_cf[s][0];
                let jf_cf = next_cf[f][0];
                let mut opt = vec![0.0; cap + 1];
                let mut cf = vec![0.0; cap + 1];
                let mut pol = if grid.store_policy {
                    vec![0u8; top + 1]
                } else {
                    Vec::new()
                };
                for d in 0..=top {
                    let m = recall[i][d];
                    let running = 0.5 * (1.0 - m) * (1.0 - m) * dt;
                    let dn = (d + 1).min(cap);

                    let nr = next_opt[i][dn];
                    let rev = m * js_opt + (1.0 - m) * jf_opt;
                    let b = dt * (rev - nr);
                    let idx = best_action(&grid.actions, a, b);
                    let u = grid.actions[idx];
                    opt[d] = running + nr + a * u * u + b * u;
                    if grid.store_policy {
                        pol[d] = idx as u8;
                    }

                    let nr = next_cf[i][dn];
                    let rev = m * js_cf + (1.0 - m) * jf_cf;
                    let u = (scale * (1.0 - m)).min(1.0 / dt);
                    cf[d] = running + nr + a * u * u + dt * (rev - nr) * u;
                }
                (opt, cf, pol)
            })
            .collect();
        for (i, (opt, cf, pol)) in rows.into_iter().enumerate() {
            cur_opt[i] = opt;
            cur_cf[i] = cf;
            if grid.store_policy {
                table[k].push(pol);
            }
        }
        std::mem::swap(&mut cur_opt, &mut next_opt);
        std::mem::swap(&mut cur_cf, &mut next_cf);
        start_values[k] = next_opt[lattice.start][0];
    }

    let value = next_opt[lattice.start][0];
    let closed_form_value = next_cf[lattice.start][0];
    let policy = grid.store_policy.then(|| DpPolicy {
        dt,
        actions: grid.actions.clone(),
        lattice: lattice.clone(),
        caps: caps.clone(),
        table,
    });
    Ok(DpSolution {
        value,
        closed_form_value,
        start_node_values: start_values,
        policy,
        lattice_nodes: nodes,
    })
}

/// What `evaluate_policy_cost` simulates.
#[derive(Clone, Copy, Debug)]
pub enum CostPolicy<'a> {
    /// Continuous-time schedule sampled by thinning.
    Schedule(ScheduleSpec),
    /// Any other schedule object, costed by quadrature.
    Custom(&'a dyn Schedule),
    /// Grid policy simulated step by step.
    Dp(&'a DpPolicy),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub runs: usize,
}

/// `∫_0^Δ (1 − e^{−nt})² dt`, stable for small `nΔ`.
pub fn squared_forgetting_integral(n: f64, delta: f64) -> f64 {
    let x = n * delta;
    if x < 0.1 {
        // Σ_{k≥2} (−x)^k (2^k − 2) / (k+1)!
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 1..20 {
            term *= -x / (k + 1) as f64;
            sum += term * (2f64.powi(k) - 2.0);
        }
        delta * sum
    } else {
        delta + 2.0 * (-x).exp_m1() / n - (-2.0 * x).exp_m1() / (2.0 * n)
    }
}

/// Cost of never reviewing: `½ ∫_0^T (1 − e^{−n0 t})² dt`.
pub fn zero_policy_cost(n0: f64, horizon: f64) -> f64 {
    0.5 * squared_forgetting_integral(n0, horizon)
}

fn segment_cost(
    schedule: &dyn Schedule,
    memorize_exp: bool,
    q: f64,
    state: &MemoryState,
    a: f64,
    b: f64,
) -> f64 {
    if b <= a {
        return 0.0;
    }
    if memorize_exp {
        // ½ q u² equals ½ (1 − m)² along the closed-form intensity.
        let d0 = a - state.t_last();
        let d1 = b - state.t_last();
        let n = state.n();
        return squared_forgetting_integral(n, d1) - squared_forgetting_integral(n, d0);
    }
    quadrature::integrate(
        |t| {
            let m = state.recall_at(t);
            let u = schedule.intensity(state, t);
            0.5 * (1.0 - m) * (1.0 - m) + 0.5 * q * u * u
        },
        a,
        b,
        1e-10,
    )
}

/// Monte-Carlo estimate of `E ∫ ½(1−m)² + ½qu² dt` with its standard error.
pub fn evaluate_policy_cost(
    policy: CostPolicy<'_>,
    problem: &ControlProblem,
    runs: usize,
    seed: u64,
) -> Result<CostEstimate> {
    problem.validate()?;
    if runs == 0 {
        return Err(invalid("runs", "must be >= 1"));
    }
    let costs: Vec<f64> = match policy {
        CostPolicy::Schedule(_) | CostPolicy::Custom(_) => {
            let owned;
            let (schedule, memorize_exp): (&dyn Schedule, bool) = match policy {
                CostPolicy::Schedule(spec) => {
                    owned = spec.build()?;
                    let fast = matches!(spec, ScheduleSpec::Memorize { q } if q == problem.q)
                        && problem.model == ModelKind::Exponential;
                    (owned.as_ref(), fast)
                }
                CostPolicy::Custom(s) => (s, false),
                CostPolicy::Dp(_) => unreachable!(),
            };
            (0..runs)
                .into_par_iter()
                .map(|run| {
                    let mut rng = rng::stream(seed, run as u64);
                    let trace = run_schedule(
                        schedule,
                        &problem.params,
                        problem.model,
                        problem.t0,
                        problem.t_f,
                        &mut ModelRecall,
                        &mut rng,
                    )?;
                    let mut total = 0.0;
                    let mut t = problem.t0;
                    for (k, state) in trace.states.iter().enumerate() {
                        let end = trace.sequence.events.get(k).map_or(problem.t_f, |e| e.t);
                        total += segment_cost(schedule, memorize_exp, problem.q, state, t, end);
                        t = end;
                    }
                    Ok(total)
                })
                .collect::<Result<_>>()?
        }
        CostPolicy::Dp(dp) => {
            let steps = dp.steps();
            let dt = dp.dt;
            if ((steps as f64) * dt - problem.horizon()).abs() > 1e-9 * problem.horizon() {
                return Err(Error::Discretization(
                    "policy grid does not match the horizon".into(),
                ));
            }
            let lat = &dp.lattice;
            let start = lat.start;
            let boundary_hits: usize;
            let results: Vec<(f64, bool)> = (0..runs)
                .into_par_iter()
                .map(|run| {
                    let mut rng = rng::stream(seed, run as u64);
                    let (mut node, mut d) = (start, 0usize);
                    let mut total = 0.0;
                    let mut hit = false;
                    for k in 0..steps {
                        let m = problem.model.recall(lat.rates[node], d as f64 * dt);
                        let u = dp.intensity(k, node, d);
                        total += 0.5 * (1.0 - m) * (1.0 - m) * dt + 0.5 * problem.q * u * u * dt;
                        if rng.random::<f64>() < u * dt {
                            node = if rng.random::<f64>() < m {
                                lat.success[node]
                            } else {
                                lat.failure[node]
                            };
                            hit |= lat.is_boundary(node);
                            d = 0;
                        } else {
                            d += 1;
                        }
                    }
                    (total, hit)
                })
                .collect();
            boundary_hits = results.iter().filter(|r| r.1).count();
            if boundary_hits > 0 {
                tracing::warn!(boundary_hits, "paths reached the rate lattice boundary");
            }
            results.into_iter().map(|r| r.0).collect()
        }
    };
    let mean = stats::mean(&costs);
    let stderr = if costs.len() > 1 {
        (stats::variance(&costs) / costs.len() as f64).sqrt()
    } else {
        f64::NAN
    };
    Ok(CostEstimate { mean, stderr, runs })
}

/// DP value, closed-form policy cost and their relative gap at one step size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub dt: f64,
    pub dp_value: f64,
    pub closed_form_on_grid: f64,
    pub closed_form_mc: CostEstimate,
    pub gap: f64,
    pub lattice_nodes: usize,
}

/// Solves the DP at every step size and compares each value against one
/// Monte-Carlo estimate of the continuous-time closed-form policy.
pub fn optimality_study(
    problem: &ControlProblem,
    dts: &[f64],
    runs: usize,
    seed: u64,
) -> Result<Vec<OracleReport>> {
    let mc = evaluate_policy_cost(
        CostPolicy::Schedule(ScheduleSpec::Memorize { q: problem.q }),
        problem,
        runs,
        seed,
    )?;
    dts.iter()
        .map(|&dt| {
            let grid = DpGrid::new(problem, dt)?;
            let sol = solve_dp(problem, &grid)?;
            Ok(OracleReport {
                dt,
                dp_value: sol.value,
                closed_form_on_grid: sol.closed_form_value,
                closed_form_mc: mc,
                gap: (mc.mean - sol.value).abs() / sol.value,
                lattice_nodes: sol.lattice_nodes,
            })
        })
        .collect()
}
