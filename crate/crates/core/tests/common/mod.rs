#![allow(dead_code)]

pub mod brute;

use std::collections::HashMap;
use std::hash::Hash;
use std::sync::Arc;

use mg_core::control::GridController;
use mg_core::model::{stream, stream_rng};
use mg_core::{ActionRule, BeliefGrid, SystemConfig};
use rand_chacha::ChaCha8Rng;

pub fn rng(substream: u64) -> ChaCha8Rng {
    stream_rng(0x7e57, stream::TEST, substream)
}

/// Textbook I(A;B) in bits from a joint pmf.
pub fn mutual_information<A: Hash + Eq + Clone, B: Hash + Eq + Clone>(joint: &HashMap<(A, B), f64>) -> f64 {
    let mut pa: HashMap<A, f64> = HashMap::new();
    let mut pb: HashMap<B, f64> = HashMap::new();
    for ((a, b), p) in joint {
        *pa.entry(a.clone()).or_default() += p;
        *pb.entry(b.clone()).or_default() += p;
    }
    joint
        .iter()
        .filter(|(_, p)| **p > 0.0)
        .map(|((a, b), p)| p * (p / (pa[a] * pb[b])).log2())
        .sum()
}

/// A belief-dependent policy: independent random rules on a coarse lattice.
pub fn random_grid_policy(cfg: &SystemConfig, m: usize, rng: &mut ChaCha8Rng) -> GridController {
    let grid = Arc::new(BeliefGrid::new(cfg.n_states(), m).unwrap());
    let rules: Vec<ActionRule> = (0..grid.len()).map(|_| ActionRule::random(cfg, rng)).collect();
    GridController::new(grid, Arc::new(rules))
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}
