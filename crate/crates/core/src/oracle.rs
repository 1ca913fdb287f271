//! Brute-force mutual information for tiny horizons. Every trajectory
//! (b_1, x^T, e^T, y^T) is enumerated with its exact probability and the
//! leakage I(X^T, B_1; Y^T | E^T) is summed directly from the joint table.

use std::collections::{BTreeMap, HashMap};

use crate::belief::{belief_update, ActionRule, Belief};
use crate::control::Controller;
use crate::error::{Error, Result};
use crate::model::{next_level, Renewable, SystemConfig};
use crate::sim::EvalResult;

/// A policy as a function of the observer's history (y_1, e_1, …, y_{t−1}, e_{t−1}).
pub trait HistoryPolicy {
    fn rule(&self, history: &[(usize, Renewable)]) -> ActionRule;
}

/// Adapts a [`Controller`] by replaying the history through the exact belief recursion.
#[derive(Clone, Debug)]
pub struct HistoryController<C> {
    pub cfg: SystemConfig,
    pub init: Belief,
    pub controller: C,
}

impl<C: Controller + Clone> HistoryPolicy for HistoryController<C> {
    fn rule(&self, history: &[(usize, Renewable)]) -> ActionRule {
        let mut belief = self.init.clone();
        let mut ctl = self.controller.clone();
        for &(y, e) in history {
            let rule = ctl.rule(&belief).into_owned();
            belief = belief_update(&belief, &rule, y, e, &self.cfg).expect("history has positive probability");
            ctl.observe(y, e);
        }
        ctl.rule(&belief).into_owned()
    }
}

#[derive(Clone, Debug)]
pub struct OracleOptions {
    /// Prior of B_1; defaults to a full battery.
    pub initial_battery: Option<Vec<f64>>,
    /// Condition on one renewable sequence instead of averaging over E^T.
    pub fixed_e: Option<Vec<Renewable>>,
    pub max_entries: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions { initial_battery: None, fixed_e: None, max_entries: 1 << 20 }
    }
}

impl OracleOptions {
    /// B_1 prior times P_X: the observer's belief before slot 1.
    pub fn initial_belief(&self, cfg: &SystemConfig) -> Result<Belief> {
        match &self.initial_battery {
            None => Ok(Belief::full_battery(cfg)),
            Some(m) => Belief::product(m, cfg),
        }
    }
}

/// One trajectory; `b[t]` is the battery at the start of slot t+1.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub b: Vec<usize>,
    pub x: Vec<usize>,
    pub e: Vec<Renewable>,
    pub y: Vec<usize>,
    /// P(b_1, x^T, e^T, y^T).
    pub prob: f64,
    /// P(y^T | b_1, x^T, e^T) = Π_t a_t(y_t | s_t, e_t).
    pub cond: f64,
}

#[derive(Clone, Debug)]
pub struct JointTable {
    pub horizon: usize,
    pub entries: Vec<Trajectory>,
}

fn odometer(digits: &mut [usize], base: usize) -> bool {
    for d in digits.iter_mut().rev() {
        if *d + 1 < base {
            *d += 1;
            return true;
        }
        *d = 0;
    }
    false
}

/// Enumerate the full joint of a policy over `horizon` slots.
pub fn joint_table<P: HistoryPolicy>(policy: &P, horizon: usize, cfg: &SystemConfig, opts: &OracleOptions) -> Result<JointTable> {
    if horizon == 0 {
        return Err(Error::Domain("horizon must be at least 1".into()));
    }
    let prior = opts.initial_battery.clone().unwrap_or_else(|| {
        let mut v = vec![0.0; cfg.n_levels()];
        v[cfg.b_max] = 1.0;
        v
    });
    if prior.len() != cfg.n_levels() {
        return Err(Error::Domain("battery prior has wrong length".into()));
    }
    if let Some(fe) = &opts.fixed_e {
        if fe.len() != horizon {
            return Err(Error::Domain("fixed renewable sequence has wrong length".into()));
        }
    }
    let per_slot = (cfg.n_demands() * 2 * cfg.n_purchases()) as f64;
    let size = cfg.n_levels() as f64 * per_slot.powi(horizon as i32);
    if size > opts.max_entries as f64 {
        return Err(Error::HorizonTooLarge { horizon, budget: opts.max_entries });
    }
    let mut cache: HashMap<Vec<(usize, Renewable)>, ActionRule> = HashMap::new();
    let mut entries = Vec::new();
    for (b1, &pb) in prior.iter().enumerate() {
        if pb == 0.0 {
            continue;
        }
        let mut xs = vec![0usize; horizon];
        loop {
            let px: f64 = xs.iter().map(|&x| cfg.p_x[x]).product();
            let mut es = vec![0usize; horizon];
            loop {
                let e_seq: Vec<Renewable> = match &opts.fixed_e {
                    Some(fe) => fe.clone(),
                    None => es.iter().map(|&i| Renewable::from_index(i)).collect(),
                };
                let pe: f64 = match &opts.fixed_e {
                    Some(_) => 1.0,
                    None => e_seq.iter().map(|&e| cfg.renewable_prob(e)).product(),
                };
                let base = pb * px * pe;
                if base > 0.0 {
                    let mut hist = Vec::with_capacity(horizon);
                    let mut bs = Vec::with_capacity(horizon);
                    let mut ys = Vec::with_capacity(horizon);
                    expand(policy, cfg, &xs, &e_seq, b1, 1.0, base, &mut hist, &mut bs, &mut ys, &mut cache, &mut entries)?;
                }
                if opts.fixed_e.is_some() || !odometer(&mut es, 2) {
                    break;
                }
            }
            if !odometer(&mut xs, cfg.n_demands()) {
                break;
            }
        }
    }
    Ok(JointTable { horizon, entries })
}

#[allow(clippy::too_many_arguments)]
fn expand<P: HistoryPolicy>(
    policy: &P,
    cfg: &SystemConfig,
    xs: &[usize],
    es: &[Renewable],
    b: usize,
    cond: f64,
    base: f64,
    hist: &mut Vec<(usize, Renewable)>,
    bs: &mut Vec<usize>,
    ys: &mut Vec<usize>,
    cache: &mut HashMap<Vec<(usize, Renewable)>, ActionRule>,
    out: &mut Vec<Trajectory>,
) -> Result<()> {
    let t = hist.len();
    if t == xs.len() {
        out.push(Trajectory { b: bs.clone(), x: xs.to_vec(), e: es.to_vec(), y: ys.clone(), prob: base * cond, cond });
        return Ok(());
    }
    let rule = cache.entry(hist.clone()).or_insert_with(|| policy.rule(hist)).clone();
    let (x, e) = (xs[t], es[t]);
    let s = cfg.n_demands() * b + x;
    for y in 0..cfg.n_purchases() {
        let a = rule.prob(s, e, y);
        if a == 0.0 {
            continue;
        }
        let next = next_level(b, x, y, e, cfg).ok_or(Error::InfeasibleTransition { b, x, y, e: e.amount(cfg) })?;
        hist.push((y, e));
        bs.push(b);
        ys.push(y);
        expand(policy, cfg, xs, es, next, cond * a, base, hist, bs, ys, cache, out)?;
        hist.pop();
        bs.pop();
        ys.pop();
    }
    Ok(())
}

impl JointTable {
    pub fn total_probability(&self) -> f64 {
        self.entries.iter().map(|t| t.prob).sum()
    }

    /// I(X^T, B_1; Y^T | E^T) in bits when `conditional_on_e`, else I(X^T, B_1; Y^T).
    pub fn mutual_information(&self, conditional_on_e: bool) -> f64 {
        let mut total = 0.0;
        if conditional_on_e {
            // Σ p · log2 P(y | b1, x, e) / P(y | e)
            let mut pe: HashMap<&[Renewable], f64> = HashMap::new();
            let mut pey: HashMap<(&[Renewable], &[usize]), f64> = HashMap::new();
            for t in &self.entries {
                *pe.entry(&t.e).or_default() += t.prob;
                *pey.entry((&t.e, &t.y)).or_default() += t.prob;
            }
            for t in &self.entries {
                let py_e = pey[&(&t.e[..], &t.y[..])] / pe[&t.e[..]];
                total += t.prob * (t.cond / py_e).log2();
            }
        } else {
            // Σ p(b1, x, y) · log2 P(y | b1, x) / P(y)
            let mut pin: HashMap<(usize, &[usize]), f64> = HashMap::new();
            let mut py: HashMap<&[usize], f64> = HashMap::new();
            let mut joint: HashMap<(usize, &[usize], &[usize]), f64> = HashMap::new();
            for t in &self.entries {
                *pin.entry((t.b[0], &t.x)).or_default() += t.prob;
                *py.entry(&t.y).or_default() += t.prob;
                *joint.entry((t.b[0], &t.x, &t.y)).or_default() += t.prob;
            }
            let mut keys: Vec<_> = joint.keys().copied().collect();
            keys.sort();
            for k in keys {
                let p = joint[&k];
                total += p * (p / pin[&(k.0, k.1)] / py[k.2]).log2();
            }
        }
        total
    }

    /// Terms I(S_t; Y_t, E_t | Y^{t−1}, E^{t−1}) for t = 1..=T.
    pub fn chain_terms(&self) -> Vec<f64> {
        (0..self.horizon).map(|t| self.chain_term(t)).collect()
    }

    fn chain_term(&self, t: usize) -> f64 {
        type Hist = (Vec<usize>, Vec<Renewable>);
        let hist = |tr: &Trajectory, len: usize| -> Hist { (tr.y[..len].to_vec(), tr.e[..len].to_vec()) };
        let mut a: BTreeMap<((usize, usize), Hist), f64> = BTreeMap::new();
        let mut b: BTreeMap<((usize, usize), Hist), f64> = BTreeMap::new();
        let mut c: BTreeMap<Hist, f64> = BTreeMap::new();
        let mut d: BTreeMap<Hist, f64> = BTreeMap::new();
        for tr in &self.entries {
            let s = (tr.b[t], tr.x[t]);
            *a.entry((s, hist(tr, t + 1))).or_default() += tr.prob;
            *b.entry((s, hist(tr, t))).or_default() += tr.prob;
            *c.entry(hist(tr, t + 1)).or_default() += tr.prob;
            *d.entry(hist(tr, t)).or_default() += tr.prob;
        }
        let mut total = 0.0;
        for ((s, h), p) in &a {
            let prev: Hist = (h.0[..t].to_vec(), h.1[..t].to_vec());
            let num = p / b[&(*s, prev.clone())];
            let den = c[h] / d[&prev];
            total += p * (num / den).log2();
        }
        total
    }

    /// E[Σ_t y_t].
    pub fn expected_purchases(&self) -> f64 {
        self.entries.iter().map(|t| t.prob * t.y.iter().sum::<usize>() as f64).sum()
    }
}

/// Leakage per slot, (1/T)·I(X^T, B_1; Y^T | E^T) or its unconditional version.
pub fn exact_leakage<P: HistoryPolicy>(
    policy: &P,
    horizon: usize,
    cfg: &SystemConfig,
    conditional_on_e: bool,
    opts: &OracleOptions,
) -> Result<f64> {
    let table = joint_table(policy, horizon, cfg, opts)?;
    Ok(table.mutual_information(conditional_on_e) / horizon as f64)
}

/// Leakage, cost and weighted objective per slot.
pub fn exact_objective<P: HistoryPolicy>(policy: &P, horizon: usize, cfg: &SystemConfig, opts: &OracleOptions) -> Result<EvalResult> {
    let table = joint_table(policy, horizon, cfg, opts)?;
    let t = horizon as f64;
    Ok(EvalResult::exact(table.mutual_information(true) / t, table.expected_purchases() / t, cfg.gamma))
}
