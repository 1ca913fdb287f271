//! Observer belief over (B_t, X_t), randomized purchase rules, the Bayes
//! update, and the per-slot leakage and cost functionals.
//!
//! Beliefs and rule tables index joint states row-major in (b, x). Leakage is
//! measured in bits, with the usual 0·log 0 = 0 convention.

mod grid;

pub use grid::BeliefGrid;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{feasible_purchases, next_level, Renewable, SystemConfig};

const SUM_TOL: f64 = 1e-12;

/// Posterior over joint states given the observer's history.
#[derive(Clone, Debug, PartialEq)]
pub struct Belief {
    probs: Vec<f64>,
}

impl Belief {
    pub fn new(probs: Vec<f64>) -> Result<Belief> {
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Domain("belief entries must be finite and non-negative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::Domain(format!("belief sums to {total}")));
        }
        Ok(Belief { probs })
    }

    /// Wrap without validation; callers guarantee normalization.
    pub(crate) fn from_raw(probs: Vec<f64>) -> Belief {
        Belief { probs }
    }

    /// Battery full, demand ~ P_X: the start of every recharge episode.
    pub fn full_battery(cfg: &SystemConfig) -> Belief {
        Belief { probs: cfg.full_battery_belief() }
    }

    /// Battery marginal `levels` times P_X.
    pub fn product(levels: &[f64], cfg: &SystemConfig) -> Result<Belief> {
        if levels.len() != cfg.n_levels() {
            return Err(Error::Domain("battery marginal has wrong length".into()));
        }
        let mut probs = Vec::with_capacity(cfg.n_states());
        for &m in levels {
            for &px in &cfg.p_x {
                probs.push(m * px);
            }
        }
        Belief::new(probs)
    }

    pub fn uniform(n: usize) -> Belief {
        Belief { probs: vec![1.0 / n as f64; n] }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Draw a point uniformly from the simplex.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Belief {
        let mut v: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
        let total: f64 = v.iter().sum();
        v.iter_mut().for_each(|p| *p /= total);
        Belief { probs: v }
    }

    pub fn l1_distance(&self, other: &[f64]) -> f64 {
        self.probs.iter().zip(other).map(|(a, b)| (a - b).abs()).sum()
    }
}

/// a(y | s, e) for every joint state and renewable realization.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionRule {
    n_states: usize,
    n_purchases: usize,
    probs: Vec<f64>,
}

impl ActionRule {
    /// Build from a row generator; the result is validated against `cfg`.
    pub fn from_fn<F>(cfg: &SystemConfig, mut row: F) -> Result<ActionRule>
    where
        F: FnMut(usize, Renewable) -> Vec<f64>,
    {
        let (ns, ny) = (cfg.n_states(), cfg.n_purchases());
        let mut probs = Vec::with_capacity(ns * 2 * ny);
        for s in 0..ns {
            for e in Renewable::ALL {
                let r = row(s, e);
                if r.len() != ny {
                    return Err(Error::Domain(format!("rule row has {} entries, expected {ny}", r.len())));
                }
                probs.extend(r);
            }
        }
        let rule = ActionRule { n_states: ns, n_purchases: ny, probs };
        rule.validate(cfg)?;
        Ok(rule)
    }

    pub(crate) fn from_raw(n_states: usize, n_purchases: usize, probs: Vec<f64>) -> ActionRule {
        debug_assert_eq!(probs.len(), n_states * 2 * n_purchases);
        ActionRule { n_states, n_purchases, probs }
    }

    /// Deterministic lowest feasible purchase in every (s, e).
    pub fn lowest_feasible(cfg: &SystemConfig) -> ActionRule {
        Self::deterministic(cfg, |ys, _, _| ys[0])
    }

    /// y = x: the grid supplies the demand, battery untouched.
    pub fn reveal(cfg: &SystemConfig) -> ActionRule {
        Self::deterministic(cfg, |_, x, _| x)
    }

    /// Uniform over feasible purchases.
    pub fn uniform_feasible(cfg: &SystemConfig) -> ActionRule {
        Self::from_fn(cfg, |s, e| {
            let st = cfg.state(s);
            let ys = feasible_purchases(st.b, st.x, e, cfg).expect("validated config");
            let mut row = vec![0.0; cfg.n_purchases()];
            ys.iter().for_each(|&y| row[y] = 1.0 / ys.len() as f64);
            row
        })
        .expect("uniform rows are valid")
    }

    fn deterministic<F>(cfg: &SystemConfig, mut pick: F) -> ActionRule
    where
        F: FnMut(&[usize], usize, Renewable) -> usize,
    {
        Self::from_fn(cfg, |s, e| {
            let st = cfg.state(s);
            let ys = feasible_purchases(st.b, st.x, e, cfg).expect("validated config");
            let mut row = vec![0.0; cfg.n_purchases()];
            row[pick(&ys, st.x, e)] = 1.0;
            row
        })
        .expect("deterministic feasible rows are valid")
    }

    /// Independent random distribution on the feasible set of every row.
    pub fn random<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> ActionRule {
        Self::from_fn(cfg, |s, e| {
            let st = cfg.state(s);
            let ys = feasible_purchases(st.b, st.x, e, cfg).expect("validated config");
            let w: Vec<f64> = ys.iter().map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
            let total: f64 = w.iter().sum();
            let mut row = vec![0.0; cfg.n_purchases()];
            ys.iter().zip(&w).for_each(|(&y, &p)| row[y] = p / total);
            row
        })
        .expect("random feasible rows are valid")
    }

    /// Row a(· | s, e).
    #[inline]
    pub fn row(&self, s: usize, e: Renewable) -> &[f64] {
        let start = (s * 2 + e.index()) * self.n_purchases;
        &self.probs[start..start + self.n_purchases]
    }

    #[inline]
    pub fn prob(&self, s: usize, e: Renewable, y: usize) -> f64 {
        self.probs[(s * 2 + e.index()) * self.n_purchases + y]
    }

    pub fn set_row(&mut self, s: usize, e: Renewable, row: &[f64]) {
        let start = (s * 2 + e.index()) * self.n_purchases;
        self.probs[start..start + self.n_purchases].copy_from_slice(row);
    }

    pub fn raw(&self) -> &[f64] {
        &self.probs
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_purchases(&self) -> usize {
        self.n_purchases
    }

    /// Rows normalized, no mass on infeasible purchases.
    pub fn validate(&self, cfg: &SystemConfig) -> Result<()> {
        if self.n_states != cfg.n_states() || self.n_purchases != cfg.n_purchases() {
            return Err(Error::Domain("rule dimensions do not match the configuration".into()));
        }
        for s in 0..self.n_states {
            let st = cfg.state(s);
            for e in Renewable::ALL {
                let row = self.row(s, e);
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > SUM_TOL || row.iter().any(|p| !(*p >= 0.0)) {
                    return Err(Error::Domain(format!("row (s={s}, e={}) is not a distribution", e.index())));
                }
                for (y, &p) in row.iter().enumerate() {
                    if p > 0.0 && next_level(st.b, st.x, y, e, cfg).is_none() {
                        return Err(Error::Domain(format!(
                            "row (b={}, x={}, e={}) puts mass on infeasible y={y}",
                            st.b,
                            st.x,
                            e.amount(cfg)
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// True when a(·|s,e) does not depend on s within `support`, for each e.
    pub fn is_state_independent_on(&self, support: &[usize]) -> bool {
        Renewable::ALL.iter().all(|&e| {
            support.windows(2).all(|w| {
                self.row(w[0], e).iter().zip(self.row(w[1], e)).all(|(a, b)| (a - b).abs() < 1e-15)
            })
        })
    }
}

/// Σ_s β(s)·a(y|s,e) for every y.
pub fn predictive(belief: &Belief, rule: &ActionRule, e: Renewable) -> Vec<f64> {
    let mut p = vec![0.0; rule.n_purchases];
    for (s, &w) in belief.probs.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (y, &a) in rule.row(s, e).iter().enumerate() {
            p[y] += w * a;
        }
    }
    p
}

/// Joint predictive P(y, e | β, a) = P_E(e)·Σ_s β(s)·a(y|s,e), indexed `[e][y]`.
pub fn observation_probs(belief: &Belief, rule: &ActionRule, cfg: &SystemConfig) -> [Vec<f64>; 2] {
    Renewable::ALL.map(|e| {
        let pe = cfg.renewable_prob(e);
        predictive(belief, rule, e).into_iter().map(|p| p * pe).collect()
    })
}

/// Bayes update after observing purchase `y` and renewable `e`; demand is redrawn from P_X.
pub fn belief_update(belief: &Belief, rule: &ActionRule, y: usize, e: Renewable, cfg: &SystemConfig) -> Result<Belief> {
    let mut levels = vec![0.0; cfg.n_levels()];
    let mut total = 0.0;
    for (s, &w) in belief.probs.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let a = rule.prob(s, e, y);
        if a == 0.0 {
            continue;
        }
        let st = cfg.state(s);
        let next = next_level(st.b, st.x, y, e, cfg)
            .ok_or(Error::InfeasibleTransition { b: st.b, x: st.x, y, e: e.amount(cfg) })?;
        levels[next] += w * a;
        total += w * a;
    }
    if !(total > 0.0) {
        return Err(Error::ZeroProbabilityObservation { y, e: e.amount(cfg) });
    }
    let mut probs = Vec::with_capacity(cfg.n_states());
    for m in levels {
        for &px in &cfg.p_x {
            probs.push(px * m / total);
        }
    }
    Ok(Belief { probs })
}

/// Expected one-slot leakage L(β, a) in bits.
pub fn per_step_leakage(belief: &Belief, rule: &ActionRule, cfg: &SystemConfig) -> f64 {
    Renewable::ALL
        .iter()
        .map(|&e| {
            let pe = cfg.renewable_prob(e);
            if pe == 0.0 {
                0.0
            } else {
                pe * leakage_given(belief, rule, e)
            }
        })
        .sum()
}

/// Leakage of one slot given the renewable realization:
/// Σ_{s,y} β(s)a(y|s,e) log2[a(y|s,e) / Σ_ŝ β(ŝ)a(y|ŝ,e)].
pub fn leakage_given(belief: &Belief, rule: &ActionRule, e: Renewable) -> f64 {
    let pred = predictive(belief, rule, e);
    let mut total = 0.0;
    for (s, &w) in belief.probs.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (y, &a) in rule.row(s, e).iter().enumerate() {
            if a > 0.0 {
                total += w * a * (a / pred[y]).log2();
            }
        }
    }
    total.max(0.0)
}

/// Expected purchase of one slot given the renewable realization.
pub fn cost_given(belief: &Belief, rule: &ActionRule, e: Renewable) -> f64 {
    predictive(belief, rule, e).iter().enumerate().map(|(y, p)| y as f64 * p).sum()
}

/// Realized one-slot log-ratio log2 a(y|s,e) / Σ_ŝ β(ŝ)a(y|ŝ,e).
pub fn step_log_ratio(belief: &Belief, rule: &ActionRule, s: usize, y: usize, e: Renewable) -> f64 {
    let denom: f64 = belief.probs.iter().enumerate().map(|(t, &w)| w * rule.prob(t, e, y)).sum();
    (rule.prob(s, e, y) / denom).log2()
}

/// Expected one-slot grid purchase C(β, a).
pub fn per_step_cost(belief: &Belief, rule: &ActionRule, cfg: &SystemConfig) -> f64 {
    Renewable::ALL
        .iter()
        .map(|&e| {
            let pe = cfg.renewable_prob(e);
            if pe == 0.0 {
                0.0
            } else {
                pe * cost_given(belief, rule, e)
            }
        })
        .sum()
}

/// γ·L(β,a) + (1−γ)·C(β,a).
pub fn weighted_step_objective(belief: &Belief, rule: &ActionRule, cfg: &SystemConfig) -> f64 {
    cfg.gamma * per_step_leakage(belief, rule, cfg) + (1.0 - cfg.gamma) * per_step_cost(belief, rule, cfg)
}
