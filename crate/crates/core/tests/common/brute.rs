use std::collections::HashMap;

use mg_core::{BeliefGrid, SystemConfig};

/// Brute force written against the no-renewable dynamics directly.
pub struct Brute<'a> {
    cfg: &'a SystemConfig,
    grid: &'a BeliefGrid,
    /// For each state, every admissible row on the 1/Q grid as (y, prob) pairs.
    rows: Vec<Vec<Vec<f64>>>,
    memo: HashMap<(usize, usize), f64>,
}

impl<'a> Brute<'a> {
    pub fn new(cfg: &'a SystemConfig, grid: &'a BeliefGrid) -> Brute<'a> {
        let ny = cfg.y_max + 1;
        let q = cfg.action_steps;
        let mut rows = Vec::new();
        for b in 0..=cfg.b_max {
            for x in 0..=cfg.x_max {
                let feas: Vec<usize> = (0..ny).filter(|&y| b + y >= x && b + y - x <= cfg.b_max).collect();
                let mut out = Vec::new();
                // all ways to put q quanta on the feasible purchases
                let mut counts = vec![0usize; feas.len()];
                fn rec(i: usize, left: usize, counts: &mut Vec<usize>, feas: &[usize], q: usize, ny: usize, out: &mut Vec<Vec<f64>>) {
                    if i + 1 == counts.len() {
                        counts[i] = left;
                        let mut row = vec![0.0; ny];
                        for (k, &y) in feas.iter().enumerate() {
                            row[y] = counts[k] as f64 / q as f64;
                        }
                        out.push(row);
                        return;
                    }
                    for c in 0..=left {
                        counts[i] = c;
                        rec(i + 1, left - c, counts, feas, q, ny, out);
                    }
                }
                rec(0, q, &mut counts, &feas, q, ny, &mut out);
                rows.push(out);
            }
        }
        Brute { cfg, grid, rows, memo: HashMap::new() }
    }

    fn state(&self, b: usize, x: usize) -> usize {
        b * (self.cfg.x_max + 1) + x
    }

    pub fn rules(&self) -> Vec<Vec<usize>> {
        let mut all = vec![vec![]];
        for r in &self.rows {
            all = all.into_iter().flat_map(|p| (0..r.len()).map(move |i| [p.clone(), vec![i]].concat())).collect();
        }
        all
    }

    /// Step objective, then for every y with p(y) > 0 its probability and the raw posterior.
    fn step(&self, beta: &[f64], choice: &[usize]) -> (f64, Vec<(f64, Vec<f64>)>) {
        let cfg = self.cfg;
        let ny = cfg.y_max + 1;
        let a = |s: usize, y: usize| self.rows[s][choice[s]][y];
        let py: Vec<f64> = (0..ny).map(|y| (0..beta.len()).map(|s| beta[s] * a(s, y)).sum()).collect();
        let (mut leak, mut cost) = (0.0, 0.0);
        for s in 0..beta.len() {
            for y in 0..ny {
                let j = beta[s] * a(s, y);
                if j > 0.0 {
                    leak += j * (a(s, y) / py[y]).log2();
                    cost += j * y as f64;
                }
            }
        }
        let mut next = Vec::new();
        for y in 0..ny {
            if py[y] <= 0.0 {
                continue;
            }
            let mut post = vec![0.0; beta.len()];
            for b in 0..=cfg.b_max {
                for x in 0..=cfg.x_max {
                    let j = beta[self.state(b, x)] * a(self.state(b, x), y);
                    if j > 0.0 {
                        let nb = b + y - x;
                        for (xn, px) in cfg.p_x.iter().enumerate() {
                            post[self.state(nb, xn)] += j * px / py[y];
                        }
                    }
                }
            }
            next.push((py[y], post));
        }
        (cfg.gamma * leak + (1.0 - cfg.gamma) * cost, next)
    }

    /// Best total over k stages from grid point `id`, continuation beliefs snapped to the grid.
    pub fn best(&mut self, k: usize, id: usize, rules: &[Vec<usize>]) -> f64 {
        if k == 0 {
            return 0.0;
        }
        if let Some(v) = self.memo.get(&(k, id)) {
            return *v;
        }
        let beta = self.grid.point(id).to_vec();
        let mut best = f64::INFINITY;
        for r in rules {
            let (g, next) = self.step(&beta, r);
            let mut v = g;
            for (p, post) in next {
                let j = self.grid.quantize(&post);
                v += p * self.best(k - 1, j, rules);
            }
            best = best.min(v);
        }
        self.memo.insert((k, id), best);
        best
    }
}
