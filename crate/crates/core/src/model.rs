//! Physical system: alphabets, battery dynamics, feasibility of grid purchases
//! and the i.i.d. demand / renewable processes.
//!
//! Demand, purchase and battery alphabets are contiguous integer ranges that
//! start at zero. The renewable source either delivers nothing or exactly
//! `b_max` units, which refills the battery completely.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Problem parameters plus the numerical knobs shared by the solvers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub x_max: usize,
    pub y_max: usize,
    pub b_max: usize,
    pub p_x: Vec<f64>,
    pub p_e: f64,
    pub gamma: f64,
    #[serde(default = "defaults::belief_denominator")]
    pub belief_denominator: usize,
    #[serde(default = "defaults::action_steps")]
    pub action_steps: usize,
    #[serde(default = "defaults::vi_tolerance")]
    pub vi_tolerance: f64,
    #[serde(default = "defaults::vi_max_iters")]
    pub vi_max_iters: usize,
    #[serde(default = "defaults::seed")]
    pub seed: u64,
}

pub(crate) mod defaults {
    pub fn belief_denominator() -> usize {
        10
    }
    pub fn action_steps() -> usize {
        10
    }
    pub fn vi_tolerance() -> f64 {
        1e-6
    }
    pub fn vi_max_iters() -> usize {
        2000
    }
    pub fn seed() -> u64 {
        0x5eed_2019
    }
}

impl Default for SystemConfig {
    /// The binary instance: X = Y = {0,1}, B = {0,1,2}, P_X = (0.5, 0.5), gamma = 0.5.
    fn default() -> Self {
        SystemConfig {
            x_max: 1,
            y_max: 1,
            b_max: 2,
            p_x: vec![0.5, 0.5],
            p_e: 0.5,
            gamma: 0.5,
            belief_denominator: defaults::belief_denominator(),
            action_steps: defaults::action_steps(),
            vi_tolerance: defaults::vi_tolerance(),
            vi_max_iters: defaults::vi_max_iters(),
            seed: defaults::seed(),
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.x_max < 1 || self.y_max < 1 || self.b_max < 1 {
            return bad("x_max, y_max and b_max must all be >= 1".into());
        }
        if self.y_max < self.x_max {
            return bad(format!(
                "y_max ({}) < x_max ({}): demand could not always be met",
                self.y_max, self.x_max
            ));
        }
        if self.p_x.len() != self.x_max + 1 {
            return bad(format!("p_x has {} entries, expected {}", self.p_x.len(), self.x_max + 1));
        }
        if self.p_x.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return bad("p_x entries must be non-negative".into());
        }
        let total: f64 = self.p_x.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return bad(format!("p_x sums to {total}, not 1"));
        }
        if !(0.0..=1.0).contains(&self.p_e) {
            return bad(format!("p_e = {} outside [0,1]", self.p_e));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma = {} outside [0,1]", self.gamma));
        }
        if self.belief_denominator < 1 || self.action_steps < 1 || self.vi_max_iters < 1 {
            return bad("belief_denominator, action_steps and vi_max_iters must be >= 1".into());
        }
        if !(self.vi_tolerance > 0.0) {
            return bad("vi_tolerance must be positive".into());
        }
        Ok(())
    }

    pub fn n_demands(&self) -> usize {
        self.x_max + 1
    }

    pub fn n_purchases(&self) -> usize {
        self.y_max + 1
    }

    pub fn n_levels(&self) -> usize {
        self.b_max + 1
    }

    /// |S| = |B|·|X|.
    pub fn n_states(&self) -> usize {
        self.n_levels() * self.n_demands()
    }

    /// Row-major (b, x) index.
    pub fn state_index(&self, s: JointState) -> usize {
        s.b * self.n_demands() + s.x
    }

    pub fn state(&self, index: usize) -> JointState {
        JointState { b: index / self.n_demands(), x: index % self.n_demands() }
    }

    pub fn states(&self) -> impl Iterator<Item = JointState> + '_ {
        (0..self.n_states()).map(|i| self.state(i))
    }

    /// Probability of a renewable realization.
    pub fn renewable_prob(&self, e: Renewable) -> f64 {
        match e {
            Renewable::Empty => 1.0 - self.p_e,
            Renewable::Recharge => self.p_e,
        }
    }

    pub fn mean_demand(&self) -> f64 {
        self.p_x.iter().enumerate().map(|(x, p)| x as f64 * p).sum()
    }

    /// H(X) in bits.
    pub fn demand_entropy(&self) -> f64 {
        entropy_bits(&self.p_x)
    }

    /// The same system with the renewable source switched off.
    pub fn without_renewable(&self) -> SystemConfig {
        SystemConfig { p_e: 0.0, ..self.clone() }
    }

    /// Battery full, demand distributed as P_X.
    pub fn full_battery_belief(&self) -> Vec<f64> {
        let mut probs = vec![0.0; self.n_states()];
        for x in 0..self.n_demands() {
            probs[self.state_index(JointState { b: self.b_max, x })] = self.p_x[x];
        }
        probs
    }
}

/// Shannon entropy in bits, with 0·log 0 = 0.
pub fn entropy_bits(p: &[f64]) -> f64 {
    p.iter().filter(|&&q| q > 0.0).map(|&q| -q * q.log2()).sum()
}

/// MDP state (B_t, X_t).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct JointState {
    pub b: usize,
    pub x: usize,
}

/// Renewable arrival in a slot: nothing, or a full recharge of `b_max` units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Renewable {
    Empty,
    Recharge,
}

impl Renewable {
    pub const ALL: [Renewable; 2] = [Renewable::Empty, Renewable::Recharge];

    pub fn index(self) -> usize {
        match self {
            Renewable::Empty => 0,
            Renewable::Recharge => 1,
        }
    }

    pub fn from_index(i: usize) -> Renewable {
        if i == 0 {
            Renewable::Empty
        } else {
            Renewable::Recharge
        }
    }

    /// Energy units delivered.
    pub fn amount(self, cfg: &SystemConfig) -> usize {
        match self {
            Renewable::Empty => 0,
            Renewable::Recharge => cfg.b_max,
        }
    }

    /// Parse an energy amount; only 0 and `b_max` are valid.
    pub fn from_amount(e: usize, cfg: &SystemConfig) -> Result<Renewable> {
        if e == 0 {
            Ok(Renewable::Empty)
        } else if e == cfg.b_max {
            Ok(Renewable::Recharge)
        } else {
            Err(Error::Domain(format!("renewable amount {e} not in {{0, {}}}", cfg.b_max)))
        }
    }
}

/// Battery level available in the slot after the renewable arrival.
pub fn effective_level(b: usize, e: Renewable, cfg: &SystemConfig) -> usize {
    (b + e.amount(cfg)).min(cfg.b_max)
}

/// B_{t+1} = min(E_t + B_t, B_max) + Y_t − X_t, rejecting unmet demand and overflow.
pub fn battery_update(b: usize, x: usize, y: usize, e: Renewable, cfg: &SystemConfig) -> Result<usize> {
    next_level(b, x, y, e, cfg).ok_or(Error::InfeasibleTransition { b, x, y, e: e.amount(cfg) })
}

/// As [`battery_update`], `None` when infeasible.
#[inline]
pub fn next_level(b: usize, x: usize, y: usize, e: Renewable, cfg: &SystemConfig) -> Option<usize> {
    let level = effective_level(b, e, cfg) + y;
    if level < x {
        return None;
    }
    let next = level - x;
    (next <= cfg.b_max).then_some(next)
}

/// Grid purchases that meet demand without overflowing the battery, ascending.
pub fn feasible_purchases(b: usize, x: usize, e: Renewable, cfg: &SystemConfig) -> Result<Vec<usize>> {
    let ys: Vec<usize> = (0..cfg.n_purchases()).filter(|&y| next_level(b, x, y, e, cfg).is_some()).collect();
    if ys.is_empty() {
        Err(Error::NoFeasibleAction { b, x, e: e.amount(cfg) })
    } else {
        Ok(ys)
    }
}

/// Named RNG streams. Each concern draws from its own ChaCha stream so adding
/// randomness in one place does not shift another's sequence.
pub mod stream {
    pub const DEMAND: u64 = 1;
    pub const RENEWABLE: u64 = 2;
    pub const POLICY: u64 = 3;
    pub const ACTION_SEARCH: u64 = 4;
    pub const LIPSCHITZ: u64 = 5;
    pub const BCP_SCREEN: u64 = 6;
    pub const BCP_REFINE: u64 = 7;
    pub const TEST: u64 = 99;
}

/// Deterministic generator for `(seed, stream, substream)`.
pub fn stream_rng(seed: u64, stream: u64, substream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ substream.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(stream);
    rng
}

/// Draw X_t ~ P_X.
pub fn sample_demand<R: Rng + ?Sized>(rng: &mut R, cfg: &SystemConfig) -> usize {
    sample_index(rng, &cfg.p_x)
}

/// Draw E_t: a recharge with probability p_e.
pub fn sample_renewable<R: Rng + ?Sized>(rng: &mut R, cfg: &SystemConfig) -> Renewable {
    if rng.random::<f64>() < cfg.p_e {
        Renewable::Recharge
    } else {
        Renewable::Empty
    }
}

/// Inverse-CDF draw from a probability vector. Zero-mass entries are never returned.
pub fn sample_index<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary() -> SystemConfig {
        SystemConfig::default()
    }

    #[test]
    fn battery_update_examples() {
        let cfg = binary();
        assert_eq!(battery_update(2, 1, 0, Renewable::Empty, &cfg).unwrap(), 1);
        assert_eq!(battery_update(2, 0, 0, Renewable::Recharge, &cfg).unwrap(), 2);
        assert!(matches!(
            battery_update(0, 1, 0, Renewable::Empty, &cfg),
            Err(Error::InfeasibleTransition { .. })
        ));
    }

    #[test]
    fn feasible_purchase_examples() {
        let cfg = binary();
        assert_eq!(feasible_purchases(0, 1, Renewable::Empty, &cfg).unwrap(), vec![1]);
        assert_eq!(feasible_purchases(2, 0, Renewable::Empty, &cfg).unwrap(), vec![0]);
        assert_eq!(feasible_purchases(1, 1, Renewable::Empty, &cfg).unwrap(), vec![0, 1]);
    }

    #[test]
    fn exhaustive_battery_properties() {
        let cfg = SystemConfig { x_max: 2, y_max: 3, b_max: 3, p_x: vec![0.2, 0.3, 0.5], ..binary() };
        for b in 0..=cfg.b_max {
            for x in 0..=cfg.x_max {
                for e in Renewable::ALL {
                    assert!(!feasible_purchases(b, x, e, &cfg).unwrap().is_empty());
                    for y in 0..=cfg.y_max {
                        let Some(next) = next_level(b, x, y, e, &cfg) else { continue };
                        assert!(next <= cfg.b_max);
                        // monotone in y
                        if let Some(up) = next_level(b, x, y + 1, e, &cfg) {
                            assert!(up >= next);
                        }
                        // monotone in e
                        if let Some(with_e) = next_level(b, x, y, Renewable::Recharge, &cfg) {
                            assert!(with_e >= next);
                        }
                        // non-increasing in x
                        if x < cfg.x_max {
                            if let Some(more) = next_level(b, x + 1, y, e, &cfg) {
                                assert!(more <= next);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn forced_states_of_binary_instance() {
        let cfg = binary();
        let mut forced = Vec::new();
        for b in 0..=2 {
            for x in 0..=1 {
                for e in Renewable::ALL {
                    let ys = feasible_purchases(b, x, e, &cfg).unwrap();
                    if ys.len() == 1 {
                        forced.push((b, x, e.amount(&cfg), ys[0]));
                    }
                }
            }
        }
        forced.sort();
        assert_eq!(forced, vec![(0, 0, 2, 0), (0, 1, 0, 1), (1, 0, 2, 0), (2, 0, 0, 0), (2, 0, 2, 0)]);
    }

    #[test]
    fn degenerate_renewables() {
        let mut rng = stream_rng(7, stream::TEST, 0);
        let always = SystemConfig { p_e: 1.0, ..binary() };
        let never = SystemConfig { p_e: 0.0, ..binary() };
        for _ in 0..1000 {
            assert_eq!(sample_renewable(&mut rng, &always), Renewable::Recharge);
            assert_eq!(sample_renewable(&mut rng, &never), Renewable::Empty);
        }
    }

    #[test]
    fn demand_mean_by_law_of_large_numbers() {
        let cfg = binary();
        let mut rng = stream_rng(cfg.seed, stream::DEMAND, 0);
        let n = 1_000_000;
        let total: usize = (0..n).map(|_| sample_demand(&mut rng, &cfg)).sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 0.5).abs() < 0.002, "mean {mean}");
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = binary();
        cfg.y_max = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = binary();
        cfg.p_x = vec![0.5, 0.6];
        assert!(cfg.validate().is_err());
        let mut cfg = binary();
        cfg.x_max = 2;
        cfg.p_x = vec![0.2, 0.3, 0.5];
        assert!(cfg.validate().is_err(), "y_max < x_max must be rejected");
        assert!(binary().validate().is_ok());
    }
}
