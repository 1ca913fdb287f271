//! Exact expected per-slot leakage and cost by enumerating every observation
//! sequence (y, e) along the observer's belief recursion. Nodes with the same
//! belief and controller state are merged.

use std::collections::HashMap;

use crate::belief::{belief_update, observation_probs, per_step_cost, per_step_leakage, Belief, BeliefGrid};
use crate::control::Controller;
use crate::error::{Error, Result};
use crate::model::{Renewable, SystemConfig};

/// Default cap on live nodes per depth.
pub const DEFAULT_NODE_BUDGET: usize = 200_000;

/// Expected leakage (bits) and cost of slot t+1 at index t.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthStats {
    pub leakage: Vec<f64>,
    pub cost: Vec<f64>,
    /// Largest live node count encountered.
    pub peak_nodes: usize,
}

impl DepthStats {
    pub fn total_leakage(&self) -> f64 {
        self.leakage.iter().sum()
    }

    pub fn total_cost(&self) -> f64 {
        self.cost.iter().sum()
    }
}

struct Node<C> {
    belief: Belief,
    controller: C,
    prob: f64,
}

fn merge_key(belief: &Belief, controller_key: u64) -> (Vec<i64>, u64) {
    (belief.probs().iter().map(|p| (p * 1e12).round() as i64).collect(), controller_key)
}

/// Walk `depth` slots from `init`, returning per-slot expectations.
pub fn exact_tree<C: Controller + Clone>(
    cfg: &SystemConfig,
    init: Belief,
    controller: C,
    depth: usize,
    budget: usize,
) -> Result<DepthStats> {
    walk(cfg, init, controller, depth, budget, None)
}

/// As [`exact_tree`], but every updated belief is replaced by its nearest
/// lattice point: the chain the dynamic program itself optimizes.
pub fn quantized_tree<C: Controller + Clone>(
    cfg: &SystemConfig,
    init: Belief,
    controller: C,
    depth: usize,
    budget: usize,
    grid: &BeliefGrid,
) -> Result<DepthStats> {
    let init = Belief::from_raw(grid.point(grid.quantize(init.probs())).to_vec());
    walk(cfg, init, controller, depth, budget, Some(grid))
}

fn walk<C: Controller + Clone>(
    cfg: &SystemConfig,
    init: Belief,
    controller: C,
    depth: usize,
    budget: usize,
    snap: Option<&BeliefGrid>,
) -> Result<DepthStats> {
    let mut stats = DepthStats { leakage: Vec::with_capacity(depth), cost: Vec::with_capacity(depth), peak_nodes: 1 };
    let mut nodes = vec![Node { belief: init, controller, prob: 1.0 }];
    for t in 0..depth {
        let (mut leak, mut cost) = (0.0, 0.0);
        let last = t + 1 == depth;
        let mut next: Vec<Node<C>> = Vec::new();
        let mut index: HashMap<(Vec<i64>, u64), usize> = HashMap::new();
        for node in &nodes {
            let rule = node.controller.rule(&node.belief);
            leak += node.prob * per_step_leakage(&node.belief, &rule, cfg);
            cost += node.prob * per_step_cost(&node.belief, &rule, cfg);
            if last {
                continue;
            }
            let obs = observation_probs(&node.belief, &rule, cfg);
            for e in Renewable::ALL {
                for (y, &p) in obs[e.index()].iter().enumerate() {
                    if p <= 0.0 {
                        continue;
                    }
                    let mut belief = belief_update(&node.belief, &rule, y, e, cfg)?;
                    if let Some(g) = snap {
                        belief = Belief::from_raw(g.point(g.quantize(belief.probs())).to_vec());
                    }
                    let mut controller = node.controller.clone();
                    controller.observe(y, e);
                    let key = merge_key(&belief, controller.markov_key());
                    let prob = node.prob * p;
                    match index.get(&key) {
                        Some(&i) => next[i].prob += prob,
                        None => {
                            if next.len() >= budget {
                                return Err(Error::HorizonTooLarge { horizon: depth, budget });
                            }
                            index.insert(key, next.len());
                            next.push(Node { belief, controller, prob });
                        }
                    }
                }
            }
        }
        stats.leakage.push(leak);
        stats.cost.push(cost);
        if !last {
            stats.peak_nodes = stats.peak_nodes.max(next.len());
            nodes = next;
        }
    }
    Ok(stats)
}
