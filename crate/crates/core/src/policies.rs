//! Low-complexity policies: the threshold policy (TP), which replays the
//! optimal no-renewable finite-horizon solution inside each recharge episode
//! and reveals demand once the episode outlives its horizon, and the battery
//! conditioned policy (BCP), a belief-free randomized charge/discharge rule.
//!
//! Both policies act in a recharge slot exactly as at a full battery, so the
//! process splits into independent episodes: a recharge slot plus the empty
//! slots that follow it. An episode reaches slot t with probability
//! (1 − p_e)^{t−1}, which turns per-depth expectations into exact rates.

use std::borrow::Cow;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::belief::{ActionRule, Belief, BeliefGrid};
use crate::control::{Controller, FixedRule};
use crate::error::{Error, Result};
use crate::model::{effective_level, next_level, stream, Renewable, SystemConfig};
use crate::sim::{simulate_episodic, EvalResult, LeakageEstimator};
use crate::solver_finite::{finite_depth_stats, BackwardTable, FiniteHorizonSolution, StageRules};
use crate::tree::{exact_tree, DepthStats, DEFAULT_NODE_BUDGET};

/// Rates of an episodic policy from its per-depth expectations. Slots beyond
/// the listed depths are charged `tail` = (leakage, cost) each.
pub fn episodic_rate(stats: &DepthStats, p_e: f64, tail: (f64, f64), gamma: f64) -> EvalResult {
    let q = 1.0 - p_e;
    let (mut leak, mut cost, mut reach) = (0.0, 0.0, 1.0);
    for (l, c) in stats.leakage.iter().zip(&stats.cost) {
        leak += p_e * reach * l;
        cost += p_e * reach * c;
        reach *= q;
    }
    EvalResult::exact(leak + reach * tail.0, cost + reach * tail.1, gamma)
}

/// Horizon-n threshold policy.
#[derive(Clone, Debug)]
pub struct ThresholdPolicy {
    pub horizon_n: usize,
    pub finite: FiniteHorizonSolution,
}

impl ThresholdPolicy {
    pub fn new(finite: FiniteHorizonSolution) -> ThresholdPolicy {
        ThresholdPolicy { horizon_n: finite.horizon, finite }
    }

    pub fn from_table(table: &BackwardTable, n: usize) -> Result<ThresholdPolicy> {
        Ok(ThresholdPolicy::new(table.solution(n)?))
    }

    pub fn controller(&self, cfg: &SystemConfig) -> TpController {
        let grid = self.finite.grid.clone();
        let init = grid.quantize(&cfg.full_battery_belief());
        let first = &self.finite.stage_rules[0][init];
        let mut recharge = ActionRule::reveal(cfg);
        for s in 0..cfg.n_states() {
            let x = cfg.state(s).x;
            let full = cfg.state_index(crate::model::JointState { b: cfg.b_max, x });
            recharge.set_row(s, Renewable::Recharge, first.row(full, Renewable::Empty));
        }
        TpController {
            stages: Arc::new(self.finite.stage_rules.clone()),
            grid,
            recharge: Arc::new(recharge),
            reveal: Arc::new(ActionRule::reveal(cfg)),
            stage: 1,
        }
    }
}

/// TP as a causal controller on the full process. The stage counter restarts
/// after every recharge; recharge slots use the stage-1 rule at the full battery.
#[derive(Clone, Debug)]
pub struct TpController {
    stages: Arc<Vec<StageRules>>,
    grid: Arc<BeliefGrid>,
    recharge: Arc<ActionRule>,
    reveal: Arc<ActionRule>,
    stage: usize,
}

impl Controller for TpController {
    fn rule(&self, belief: &Belief) -> Cow<'_, ActionRule> {
        let base = match self.stages.get(self.stage - 1) {
            Some(rules) => &rules[self.grid.quantize(belief.probs())],
            None => &*self.reveal,
        };
        let mut rule = base.clone();
        for s in 0..rule.n_states() {
            rule.set_row(s, Renewable::Recharge, self.recharge.row(s, Renewable::Recharge));
        }
        Cow::Owned(rule)
    }

    fn observe(&mut self, _: usize, e: Renewable) {
        self.stage = match e {
            Renewable::Recharge => 2,
            Renewable::Empty => self.stage + 1,
        };
    }

    fn markov_key(&self) -> u64 {
        self.stage.min(self.stages.len() + 1) as u64
    }
}

/// Exact or simulated evaluation.
#[derive(Clone, Copy, Debug)]
pub enum PolicyEval {
    Exact,
    MonteCarlo { episodes: usize, estimator: LeakageEstimator },
}

/// Per-slot rates of a threshold policy.
pub fn tp_evaluate(tp: &ThresholdPolicy, cfg: &SystemConfig, mode: PolicyEval) -> Result<EvalResult> {
    match mode {
        PolicyEval::Exact => {
            let stats = finite_depth_stats(&tp.finite, tp.horizon_n, cfg)?;
            Ok(episodic_rate(&stats, cfg.p_e, (cfg.demand_entropy(), cfg.mean_demand()), cfg.gamma))
        }
        PolicyEval::MonteCarlo { episodes, estimator } => {
            let ctl = tp.controller(cfg);
            simulate_episodic(|| ctl.clone(), cfg, episodes, estimator, cfg.seed)
        }
    }
}

/// ⌈1/p_e⌉, the mean episode length rounded up.
pub fn mean_episode_horizon(p_e: f64) -> usize {
    ((1.0 / p_e) - 1e-9).ceil().max(1.0) as usize
}

/// Best horizon in 1..=n_max by exact evaluation; ties go to the smaller n.
pub fn tp_optimize(table: &BackwardTable, cfg: &SystemConfig, n_max: usize) -> Result<(usize, EvalResult, Vec<EvalResult>)> {
    if n_max == 0 {
        return Err(Error::Domain("n_max must be at least 1".into()));
    }
    let all: Vec<EvalResult> = (1..=n_max)
        .into_par_iter()
        .map(|n| tp_evaluate(&ThresholdPolicy::from_table(table, n)?, cfg, PolicyEval::Exact))
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, r) in all.iter().enumerate() {
        if r.weighted < all[best].weighted - 1e-12 {
            best = i;
        }
    }
    Ok((best + 1, all[best].clone(), all))
}

/// Charge probability when demand is zero and discharge probability when it
/// is positive, indexed by the battery level after the renewable arrival.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatteryConditionedPolicy {
    pub p_charge: Vec<f64>,
    pub p_discharge: Vec<f64>,
}

impl BatteryConditionedPolicy {
    pub fn constant(cfg: &SystemConfig, p_charge: f64, p_discharge: f64) -> BatteryConditionedPolicy {
        BatteryConditionedPolicy { p_charge: vec![p_charge; cfg.n_levels()], p_discharge: vec![p_discharge; cfg.n_levels()] }
    }

    pub fn validate(&self, cfg: &SystemConfig) -> Result<()> {
        if self.p_charge.len() != cfg.n_levels() || self.p_discharge.len() != cfg.n_levels() {
            return Err(Error::InvalidConfig("BCP needs one probability per battery level".into()));
        }
        if self.p_charge.iter().chain(&self.p_discharge).any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidConfig("BCP probabilities must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// The belief-free rule of a BCP.
///
/// With zero demand the grid charges one unit with probability P_C[level]
/// when that fits, else buys nothing. With positive demand the battery
/// covers as much as it can with probability P_D[level]; otherwise the grid
/// supplies the demand.
pub fn bcp_to_action_rule(bcp: &BatteryConditionedPolicy, cfg: &SystemConfig) -> Result<ActionRule> {
    bcp.validate(cfg)?;
    ActionRule::from_fn(cfg, |s, e| {
        let st = cfg.state(s);
        let level = effective_level(st.b, e, cfg);
        let mut row = vec![0.0; cfg.n_purchases()];
        if st.x == 0 {
            let pc = bcp.p_charge[level];
            if pc > 0.0 && next_level(st.b, 0, 1, e, cfg).is_some() {
                row[1] = pc;
                row[0] = 1.0 - pc;
            } else {
                row[0] = 1.0;
            }
        } else {
            let pd = bcp.p_discharge[level];
            let from_grid = st.x.saturating_sub(level);
            if from_grid == st.x {
                row[st.x] = 1.0;
            } else {
                row[from_grid] += pd;
                row[st.x] += 1.0 - pd;
            }
        }
        row
    })
}

/// Truncation depth for exact BCP evaluation: least D with (1 − p_e)^D · g_max < tol.
pub fn bcp_exact_depth(cfg: &SystemConfig, tol: f64) -> Option<usize> {
    if cfg.p_e <= 0.0 {
        return None;
    }
    if cfg.p_e >= 1.0 {
        return Some(1);
    }
    let g_max = cfg.gamma * (cfg.n_states() as f64).log2() + (1.0 - cfg.gamma) * cfg.y_max as f64;
    if g_max <= tol {
        return Some(1);
    }
    let d = ((tol / g_max).ln() / (1.0 - cfg.p_e).ln()).floor() as usize + 1;
    Some(d.max(1))
}

/// Exact BCP rates by the episode tree truncated at `depth`; the omitted
/// tail is at most (1 − p_e)^depth · g_max.
pub fn bcp_evaluate_exact(rule: &ActionRule, cfg: &SystemConfig, depth: usize, budget: usize) -> Result<EvalResult> {
    let nores = cfg.without_renewable();
    let stats = exact_tree(&nores, Belief::full_battery(&nores), FixedRule(rule.clone()), depth, budget)?;
    Ok(episodic_rate(&stats, cfg.p_e, (0.0, 0.0), cfg.gamma))
}

/// Search options.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BcpSearch {
    /// G: probabilities range over {0, 1/G, …, 1}.
    pub grid_steps: usize,
    /// One (P_C, P_D) pair for every level instead of one per level.
    pub shared_pair: bool,
    /// Select on leakage rate alone.
    pub leakage_only: bool,
    /// Exact evaluation when |Y|^D stays within this many leaves.
    pub exact_leaf_budget: usize,
    pub exact_tol: f64,
    pub screen_episodes: usize,
    pub refine_top: usize,
    pub refine_episodes: usize,
}

impl Default for BcpSearch {
    fn default() -> Self {
        BcpSearch {
            grid_steps: 10,
            shared_pair: false,
            leakage_only: false,
            exact_leaf_budget: 1 << 14,
            exact_tol: 1e-10,
            screen_episodes: 400,
            refine_top: 8,
            refine_episodes: 20_000,
        }
    }
}

/// One evaluated candidate.
#[derive(Clone, Debug, Serialize)]
pub struct BcpCandidate {
    pub policy: BatteryConditionedPolicy,
    pub result: EvalResult,
}

#[derive(Clone, Debug, Serialize)]
pub struct BcpOutcome {
    pub best: BcpCandidate,
    pub exact: bool,
    pub candidates: usize,
    /// Screening results per candidate (exact values in exact mode).
    pub trace: Vec<BcpCandidate>,
}

/// Candidate parameter vectors in lexicographic order of the free entries.
/// P_C at a full battery and P_D at an empty one never matter and stay 0.
pub fn bcp_candidates(cfg: &SystemConfig, grid_steps: usize, shared_pair: bool) -> Vec<BatteryConditionedPolicy> {
    let g = grid_steps;
    let vals: Vec<f64> = (0..=g).map(|k| k as f64 / g as f64).collect();
    let nl = cfg.n_levels();
    if shared_pair {
        let mut out = Vec::new();
        for &pc in &vals {
            for &pd in &vals {
                let mut p = BatteryConditionedPolicy::constant(cfg, pc, pd);
                p.p_charge[nl - 1] = 0.0;
                p.p_discharge[0] = 0.0;
                out.push(p);
            }
        }
        return out;
    }
    // free slots: p_charge[0..nl-1], then p_discharge[1..nl]
    let free = 2 * (nl - 1);
    let mut ks = vec![0usize; free];
    let mut out = Vec::new();
    loop {
        let mut p = BatteryConditionedPolicy::constant(cfg, 0.0, 0.0);
        for i in 0..nl - 1 {
            p.p_charge[i] = vals[ks[i]];
            p.p_discharge[i + 1] = vals[ks[nl - 1 + i]];
        }
        out.push(p);
        let mut i = free;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if ks[i] < g {
                ks[i] += 1;
                break;
            }
            ks[i] = 0;
        }
    }
}

fn score(r: &EvalResult, leakage_only: bool) -> f64 {
    if leakage_only {
        r.leakage_rate
    } else {
        r.weighted
    }
}

/// Pick the smallest score; ties keep the earlier (lexicographically smaller) candidate.
fn argmin(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s < scores[best] - 1e-12 {
            best = i;
        }
    }
    best
}

/// Grid search over BCP parameters.
///
/// Exact mode enumerates the truncated episode tree and is used when the
/// tree cannot exceed the leaf budget. Otherwise every candidate is screened
/// by simulation with common random numbers and the conditional estimator,
/// and the best `refine_top` are re-simulated with fresh, longer runs; the
/// refined estimate of the winner is reported.
pub fn bcp_search(cfg: &SystemConfig, opts: &BcpSearch) -> Result<BcpOutcome> {
    cfg.validate()?;
    if opts.grid_steps == 0 {
        return Err(Error::InvalidConfig("BCP grid_steps must be positive".into()));
    }
    if cfg.p_e <= 0.0 {
        return Err(Error::DegenerateProcess);
    }
    let cands = bcp_candidates(cfg, opts.grid_steps, opts.shared_pair);
    let rules: Vec<ActionRule> = cands.iter().map(|c| bcp_to_action_rule(c, cfg)).collect::<Result<_>>()?;
    let depth = bcp_exact_depth(cfg, opts.exact_tol).expect("p_e > 0");
    let leaves = (cfg.n_purchases() as f64).powi(depth as i32);
    if leaves <= opts.exact_leaf_budget as f64 {
        let results: Vec<EvalResult> = rules
            .par_iter()
            .map(|r| bcp_evaluate_exact(r, cfg, depth, DEFAULT_NODE_BUDGET))
            .collect::<Result<_>>()?;
        let scores: Vec<f64> = results.iter().map(|r| score(r, opts.leakage_only)).collect();
        let best = argmin(&scores);
        let trace: Vec<BcpCandidate> =
            cands.iter().zip(&results).map(|(p, r)| BcpCandidate { policy: p.clone(), result: r.clone() }).collect();
        return Ok(BcpOutcome { best: trace[best].clone(), exact: true, candidates: cands.len(), trace });
    }
    let screen_seed = cfg.seed ^ stream::BCP_SCREEN.wrapping_mul(0x2545_f491_4f6c_dd1d);
    let screened: Vec<EvalResult> = rules
        .par_iter()
        .map(|r| {
            let ctl = FixedRule(r.clone());
            simulate_episodic(|| ctl.clone(), cfg, opts.screen_episodes, LeakageEstimator::Conditional, screen_seed)
        })
        .collect::<Result<_>>()?;
    let scores: Vec<f64> = screened.iter().map(|r| score(r, opts.leakage_only)).collect();
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    order.truncate(opts.refine_top.max(1));
    order.sort_unstable();
    let refine_seed = cfg.seed ^ stream::BCP_REFINE.wrapping_mul(0x2545_f491_4f6c_dd1d);
    let refined: Vec<EvalResult> = order
        .par_iter()
        .map(|&i| {
            let ctl = FixedRule(rules[i].clone());
            simulate_episodic(|| ctl.clone(), cfg, opts.refine_episodes, LeakageEstimator::Conditional, refine_seed)
        })
        .collect::<Result<_>>()?;
    let rscores: Vec<f64> = refined.iter().map(|r| score(r, opts.leakage_only)).collect();
    let b = argmin(&rscores);
    let best = BcpCandidate { policy: cands[order[b]].clone(), result: refined[b].clone() };
    let trace =
        cands.iter().zip(&screened).map(|(p, r)| BcpCandidate { policy: p.clone(), result: r.clone() }).collect();
    Ok(BcpOutcome { best, exact: false, candidates: cands.len(), trace })
}

impl BcpOutcome {
    /// One CSV row per candidate: p_charge and p_discharge joined by ';'.
    pub fn write_trace<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# schema=1")?;
        writeln!(out, "p_charge,p_discharge,leakage_bits,cost,weighted,stderr_weighted")?;
        let join = |v: &[f64]| v.iter().map(|p| format!("{p}")).collect::<Vec<_>>().join(";");
        for c in &self.trace {
            let r = &c.result;
            writeln!(
                out,
                "{},{},{:.10},{:.10},{:.10},{:.10}",
                join(&c.policy.p_charge),
                join(&c.policy.p_discharge),
                r.leakage_rate,
                r.cost_rate,
                r.weighted,
                r.stderr_weighted
            )?;
        }
        Ok(())
    }
}
