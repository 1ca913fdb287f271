//! Finite-horizon problem without the renewable source: the battery starts
//! full and B_{t+1} = B_t + Y_t − X_t. Backward induction on the belief grid
//! gives the optimal total W_k for every number k of remaining slots, so one
//! table serves every horizon T ≤ K.

use std::borrow::Cow;
use std::sync::Arc;

use rayon::prelude::*;

use crate::bellman::{point_problems, ActionGrid, Choice, EvalCtx, Scratch};
use crate::belief::{ActionRule, Belief, BeliefGrid};
use crate::control::Controller;
use crate::error::{Error, Result};
use crate::model::{Renewable, SystemConfig};
use crate::sim::EvalResult;
use crate::solver_infinite::check_grid;
use crate::tree::{exact_tree, quantized_tree, DepthStats, DEFAULT_NODE_BUDGET};

/// Rules of one stage, one per grid point.
pub type StageRules = Arc<Vec<ActionRule>>;

/// W_k on the grid for k = 0..=K, and the argmin rules for k ≤ `kept`.
#[derive(Clone, Debug)]
pub struct BackwardTable {
    pub grid: Arc<BeliefGrid>,
    /// The configuration with the renewable switched off.
    pub cfg: SystemConfig,
    /// `values[k][id]` = optimal total over k remaining slots.
    pub values: Vec<Vec<f64>>,
    /// `rules[k - 1]` = argmin with k slots remaining.
    pub rules: Vec<StageRules>,
    /// Grid id of the battery-full start.
    pub init: usize,
}

impl BackwardTable {
    pub fn max_stage(&self) -> usize {
        self.values.len() - 1
    }

    /// Ū*(γ, T) = W_T(init) / T.
    pub fn objective(&self, horizon: usize) -> f64 {
        self.values[horizon][self.init] / horizon as f64
    }

    /// Per-stage rules of the horizon-T problem (stage t uses k = T − t + 1).
    pub fn solution(&self, horizon: usize) -> Result<FiniteHorizonSolution> {
        if horizon == 0 || horizon > self.rules.len() {
            return Err(Error::Domain(format!(
                "horizon {horizon} outside the {} stages with stored rules",
                self.rules.len()
            )));
        }
        let stage_rules = (1..=horizon).map(|t| self.rules[horizon - t].clone()).collect();
        Ok(FiniteHorizonSolution {
            horizon,
            stage_rules,
            objective: self.objective(horizon),
            grid: self.grid.clone(),
        })
    }
}

/// Optimal stage policies of one horizon.
#[derive(Clone, Debug)]
pub struct FiniteHorizonSolution {
    pub horizon: usize,
    /// `stage_rules[t - 1]` for stage t = 1..=T.
    pub stage_rules: Vec<StageRules>,
    /// Ū*(γ, T), a per-slot rate.
    pub objective: f64,
    pub grid: Arc<BeliefGrid>,
}

impl FiniteHorizonSolution {
    pub fn controller(&self, cfg: &SystemConfig) -> FiniteController {
        FiniteController {
            stages: Arc::new(self.stage_rules.clone()),
            grid: self.grid.clone(),
            reveal: Arc::new(ActionRule::reveal(cfg)),
            stage: 1,
        }
    }
}

/// Backward induction for k = 1..=`max_stage`, keeping rules for k ≤ `keep_rules`.
pub fn backward_induction(
    grid: Arc<BeliefGrid>,
    actions: &ActionGrid,
    cfg: &SystemConfig,
    max_stage: usize,
    keep_rules: usize,
) -> Result<BackwardTable> {
    cfg.validate()?;
    check_grid(&grid, cfg)?;
    let cfg = cfg.without_renewable();
    let problems = point_problems(&grid, &cfg, actions);
    let mut values = vec![vec![0.0; grid.len()]];
    let mut rules = Vec::new();
    let mut warm: Vec<Choice> = vec![Choice::default(); grid.len()];
    for k in 1..=max_stage {
        let ctx = EvalCtx { cfg: &cfg, grid: &grid, actions, values: &values[k - 1], leak_weight: cfg.gamma };
        let out: Vec<(f64, Choice)> = problems
            .par_iter()
            .zip(warm.par_iter())
            .enumerate()
            .map_init(
                || Scratch::new(&cfg),
                |scratch, (id, (p, w))| {
                    let w = if w.blocks.is_empty() { None } else { Some(w) };
                    p.minimize(&ctx, w, (k as u64) << 32 | id as u64, scratch)
                },
            )
            .collect();
        let (v, c): (Vec<f64>, Vec<Choice>) = out.into_iter().unzip();
        if k <= keep_rules {
            let stage: Vec<ActionRule> =
                problems.iter().zip(&c).map(|(p, ch)| p.rule(ch, &cfg, actions)).collect();
            rules.push(Arc::new(stage));
        }
        values.push(v);
        warm = c;
    }
    let init = grid.quantize(&cfg.full_battery_belief());
    Ok(BackwardTable { grid, cfg, values, rules, init })
}

/// Solve one horizon T.
pub fn finite_dp(horizon: usize, cfg: &SystemConfig, grid: Arc<BeliefGrid>, actions: &ActionGrid) -> Result<FiniteHorizonSolution> {
    if horizon == 0 {
        return Err(Error::Domain("horizon must be at least 1".into()));
    }
    backward_induction(grid, actions, cfg, horizon, horizon)?.solution(horizon)
}

/// Runs the stage rules of a finite solution, then reveals demand (y = x).
#[derive(Clone, Debug)]
pub struct FiniteController {
    stages: Arc<Vec<StageRules>>,
    grid: Arc<BeliefGrid>,
    reveal: Arc<ActionRule>,
    stage: usize,
}

impl FiniteController {
    pub fn stage(&self) -> usize {
        self.stage
    }
}

impl Controller for FiniteController {
    fn rule(&self, belief: &Belief) -> Cow<'_, ActionRule> {
        match self.stages.get(self.stage - 1) {
            Some(rules) => Cow::Borrowed(&rules[self.grid.quantize(belief.probs())]),
            None => Cow::Borrowed(&self.reveal),
        }
    }

    fn observe(&mut self, _: usize, _: Renewable) {
        self.stage += 1;
    }

    fn markov_key(&self) -> u64 {
        self.stage.min(self.stages.len() + 1) as u64
    }
}

/// Exact expected totals (not rates) over the first `truncate_at` stages:
/// bits of leakage, energy bought, and their weighted sum.
pub fn evaluate_finite_policy(sol: &FiniteHorizonSolution, truncate_at: usize, cfg: &SystemConfig) -> Result<EvalResult> {
    let stats = finite_depth_stats(sol, truncate_at, cfg)?;
    Ok(EvalResult::exact(stats.total_leakage(), stats.total_cost(), cfg.gamma))
}

/// Per-stage expectations along the exact belief tree of a finite solution.
pub fn finite_depth_stats(sol: &FiniteHorizonSolution, truncate_at: usize, cfg: &SystemConfig) -> Result<DepthStats> {
    check_truncation(sol, truncate_at)?;
    let cfg = cfg.without_renewable();
    exact_tree(&cfg, Belief::full_battery(&cfg), sol.controller(&cfg), truncate_at, DEFAULT_NODE_BUDGET)
}

/// Per-stage expectations on the quantized chain; their sum over all T
/// stages is the dynamic-programming total W_T(init).
pub fn quantized_depth_stats(sol: &FiniteHorizonSolution, truncate_at: usize, cfg: &SystemConfig) -> Result<DepthStats> {
    check_truncation(sol, truncate_at)?;
    let cfg = cfg.without_renewable();
    let ctl = sol.controller(&cfg);
    quantized_tree(&cfg, Belief::full_battery(&cfg), ctl, truncate_at, DEFAULT_NODE_BUDGET, &sol.grid)
}

fn check_truncation(sol: &FiniteHorizonSolution, truncate_at: usize) -> Result<()> {
    if truncate_at == 0 || truncate_at > sol.horizon {
        return Err(Error::Domain(format!("truncation {truncate_at} outside 1..={}", sol.horizon)));
    }
    Ok(())
}
