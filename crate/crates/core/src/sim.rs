//! Seeded Monte Carlo evaluation of any controller.
//!
//! The simulator keeps the observer's exact (unquantized) belief alongside
//! the true battery and demand, and scores each slot with the realized
//! leakage log-ratio or its conditional expectation given the history.
//! Demand, renewable and policy randomness come from separate streams.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::belief::{belief_update, cost_given, leakage_given, step_log_ratio, Belief};
use crate::control::Controller;
use crate::error::{Error, Result};
use crate::model::{
    battery_update, sample_demand, sample_index, sample_renewable, stream, stream_rng, Renewable, SystemConfig,
};

/// Per-slot rates with standard errors.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalResult {
    pub leakage_rate: f64,
    pub cost_rate: f64,
    pub weighted: f64,
    pub stderr_leakage: f64,
    pub stderr_cost: f64,
    pub stderr_weighted: f64,
    pub slots_simulated: u64,
}

impl EvalResult {
    /// An exactly computed result (zero standard error).
    pub fn exact(leakage_rate: f64, cost_rate: f64, gamma: f64) -> EvalResult {
        EvalResult {
            leakage_rate,
            cost_rate,
            weighted: gamma * leakage_rate + (1.0 - gamma) * cost_rate,
            stderr_leakage: 0.0,
            stderr_cost: 0.0,
            stderr_weighted: 0.0,
            slots_simulated: 0,
        }
    }
}

/// Per-slot leakage statistic.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LeakageEstimator {
    /// log2 a(y|s,e) / Σ_ŝ β(ŝ)a(y|ŝ,e) at the realized (s, e, y).
    #[default]
    LogRatio,
    /// Expectation of the log-ratio over (s, y) given the belief and the
    /// realized e. Unbiased, lower variance; cost uses E[y | β, e] likewise.
    Conditional,
}

#[derive(Clone, Debug)]
pub struct SimOptions {
    pub total_slots: usize,
    /// Slots per batch for batch-means standard errors.
    pub batch: usize,
    pub estimator: LeakageEstimator,
    /// Keep per-slot records.
    pub record: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { total_slots: 100_000, batch: 1000, estimator: LeakageEstimator::LogRatio, record: false }
    }
}

/// One simulated slot. `b` is the battery level at the start of the slot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SlotRecord {
    pub t: usize,
    pub x: usize,
    pub e: usize,
    pub y: usize,
    pub b: usize,
    pub step_leak_bits: f64,
    pub step_cost: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeLog {
    pub records: Vec<SlotRecord>,
}

impl EpisodeLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Per-slot trace: t,x,e,y,b,step_leak_bits,step_cost.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,x,e,y,b,step_leak_bits,step_cost")?;
        for r in &self.records {
            writeln!(out, "{},{},{},{},{},{:.12},{}", r.t, r.x, r.e, r.y, r.b, r.step_leak_bits, r.step_cost)?;
        }
        Ok(())
    }
}

struct Rngs {
    demand: rand_chacha::ChaCha8Rng,
    renewable: rand_chacha::ChaCha8Rng,
    policy: rand_chacha::ChaCha8Rng,
}

impl Rngs {
    fn new(seed: u64, substream: u64) -> Rngs {
        Rngs {
            demand: stream_rng(seed, stream::DEMAND, substream),
            renewable: stream_rng(seed, stream::RENEWABLE, substream),
            policy: stream_rng(seed, stream::POLICY, substream),
        }
    }
}

/// True and observed state of a running system.
struct Chain<C> {
    controller: C,
    belief: Belief,
    b: usize,
    x: usize,
}

impl<C: Controller> Chain<C> {
    fn start(controller: C, cfg: &SystemConfig, rngs: &mut Rngs) -> Chain<C> {
        Chain { controller, belief: Belief::full_battery(cfg), b: cfg.b_max, x: sample_demand(&mut rngs.demand, cfg) }
    }

    /// Play one slot with renewable `e`; returns (y, leakage statistic, cost statistic).
    fn step(
        &mut self,
        e: Renewable,
        cfg: &SystemConfig,
        estimator: LeakageEstimator,
        rngs: &mut Rngs,
    ) -> Result<(usize, f64, f64)> {
        let rule = self.controller.rule(&self.belief).into_owned();
        let s = cfg.n_demands() * self.b + self.x;
        let y = sample_index(&mut rngs.policy, rule.row(s, e));
        let (leak, cost) = match estimator {
            LeakageEstimator::LogRatio => (step_log_ratio(&self.belief, &rule, s, y, e), y as f64),
            LeakageEstimator::Conditional => {
                (leakage_given(&self.belief, &rule, e), cost_given(&self.belief, &rule, e))
            }
        };
        self.b = battery_update(self.b, self.x, y, e, cfg)?;
        self.belief = belief_update(&self.belief, &rule, y, e, cfg)?;
        self.controller.observe(y, e);
        self.x = sample_demand(&mut rngs.demand, cfg);
        Ok((y, leak, cost))
    }
}

/// Mean and batch-means standard error.
fn batch_stats(batches: &[f64]) -> (f64, f64) {
    let n = batches.len() as f64;
    let mean = batches.iter().sum::<f64>() / n;
    if batches.len() < 2 {
        return (mean, 0.0);
    }
    let var = batches.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Run one long trajectory from the battery-full start.
pub fn simulate<C: Controller + Clone>(controller: &C, cfg: &SystemConfig, opts: &SimOptions, seed: u64) -> Result<EvalResult> {
    simulate_logged(controller, cfg, opts, seed).map(|(r, _)| r)
}

/// As [`simulate`], also returning the per-slot log when `opts.record` is set.
pub fn simulate_logged<C: Controller + Clone>(
    controller: &C,
    cfg: &SystemConfig,
    opts: &SimOptions,
    seed: u64,
) -> Result<(EvalResult, EpisodeLog)> {
    if opts.total_slots == 0 || opts.batch == 0 {
        return Err(Error::Domain("total_slots and batch must be positive".into()));
    }
    let mut rngs = Rngs::new(seed, 0);
    let mut chain = Chain::start(controller.clone(), cfg, &mut rngs);
    let mut log = EpisodeLog::default();
    let (mut bl, mut bc, mut bw) = (Vec::new(), Vec::new(), Vec::new());
    let (mut sl, mut sc, mut n) = (0.0, 0.0, 0usize);
    for t in 0..opts.total_slots {
        let e = sample_renewable(&mut rngs.renewable, cfg);
        let (b, x) = (chain.b, chain.x);
        let (y, leak, cost) = chain.step(e, cfg, opts.estimator, &mut rngs)?;
        if opts.record {
            log.records.push(SlotRecord { t, x, e: e.amount(cfg), y, b, step_leak_bits: leak, step_cost: cost });
        }
        sl += leak;
        sc += cost;
        n += 1;
        if n == opts.batch || t + 1 == opts.total_slots {
            // a trailing partial batch only counts when it is the sole batch
            if n == opts.batch || bl.is_empty() {
                let k = n as f64;
                bl.push(sl / k);
                bc.push(sc / k);
                bw.push((cfg.gamma * sl + (1.0 - cfg.gamma) * sc) / k);
            }
            sl = 0.0;
            sc = 0.0;
            n = 0;
        }
    }
    let (l, sel) = batch_stats(&bl);
    let (c, sec) = batch_stats(&bc);
    let (_, sew) = batch_stats(&bw);
    let result = EvalResult {
        leakage_rate: l,
        cost_rate: c,
        weighted: cfg.gamma * l + (1.0 - cfg.gamma) * c,
        stderr_leakage: sel,
        stderr_cost: sec,
        stderr_weighted: sew,
        slots_simulated: opts.total_slots as u64,
    };
    Ok((result, log))
}

/// Totals of one recharge episode.
#[derive(Clone, Copy, Debug, Default)]
struct EpisodeTotals {
    len: f64,
    leak: f64,
    cost: f64,
}

/// Independent recharge episodes. Each starts at a recharge slot with the
/// belief reset to battery-full × P_X and a fresh controller, and runs until
/// the next recharge. Rates are ratio estimates Σ totals / Σ lengths with
/// linearized standard errors.
pub fn simulate_episodic<C, F>(
    factory: F,
    cfg: &SystemConfig,
    episodes: usize,
    estimator: LeakageEstimator,
    seed: u64,
) -> Result<EvalResult>
where
    C: Controller,
    F: Fn() -> C + Sync,
{
    if cfg.p_e <= 0.0 {
        return Err(Error::DegenerateProcess);
    }
    if episodes == 0 {
        return Err(Error::Domain("episodes must be positive".into()));
    }
    const CHUNK: usize = 1000;
    let chunks = episodes.div_ceil(CHUNK);
    let per_chunk: Vec<Result<Vec<EpisodeTotals>>> = (0..chunks)
        .into_par_iter()
        .map(|ci| {
            let mut rngs = Rngs::new(seed, ci as u64 + 1);
            let count = CHUNK.min(episodes - ci * CHUNK);
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                out.push(run_episode(factory(), cfg, estimator, &mut rngs)?);
            }
            Ok(out)
        })
        .collect();
    let mut all = Vec::with_capacity(episodes);
    for chunk in per_chunk {
        all.extend(chunk?);
    }
    Ok(ratio_result(&all, cfg.gamma))
}

fn run_episode<C: Controller>(
    controller: C,
    cfg: &SystemConfig,
    estimator: LeakageEstimator,
    rngs: &mut Rngs,
) -> Result<EpisodeTotals> {
    let mut chain = Chain::start(controller, cfg, rngs);
    let mut totals = EpisodeTotals::default();
    let mut e = Renewable::Recharge;
    loop {
        let (_, leak, cost) = chain.step(e, cfg, estimator, rngs)?;
        totals.len += 1.0;
        totals.leak += leak;
        totals.cost += cost;
        e = sample_renewable(&mut rngs.renewable, cfg);
        if e == Renewable::Recharge {
            return Ok(totals);
        }
    }
}

fn ratio_result(eps: &[EpisodeTotals], gamma: f64) -> EvalResult {
    let n = eps.len() as f64;
    let mean_len = eps.iter().map(|e| e.len).sum::<f64>() / n;
    let rate = |f: &dyn Fn(&EpisodeTotals) -> f64| -> (f64, f64) {
        let r = eps.iter().map(f).sum::<f64>() / (n * mean_len);
        if eps.len() < 2 {
            return (r, 0.0);
        }
        let var = eps.iter().map(|e| (f(e) - r * e.len).powi(2)).sum::<f64>() / (n - 1.0);
        (r, (var / n).sqrt() / mean_len)
    };
    let (l, sel) = rate(&|e| e.leak);
    let (c, sec) = rate(&|e| e.cost);
    let (w, sew) = rate(&|e| gamma * e.leak + (1.0 - gamma) * e.cost);
    EvalResult {
        leakage_rate: l,
        cost_rate: c,
        weighted: w,
        stderr_leakage: sel,
        stderr_cost: sec,
        stderr_weighted: sew,
        slots_simulated: eps.iter().map(|e| e.len as u64).sum(),
    }
}
