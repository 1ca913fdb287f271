use crate::error::{Error, Result};

/// Largest supported joint-state count.
pub const MAX_DIM: usize = 32;

/// Simplex lattice {k / M : k ∈ ℕ^n, Σk = M}, enumerated in ascending
/// lexicographic order of k.
#[derive(Clone, Debug)]
pub struct BeliefGrid {
    dim: usize,
    denominator: usize,
    lattice: Vec<u32>,
    points: Vec<f64>,
    // skip[(i*(M+1) + rem)*(M+1) + k]: compositions skipped when coordinate i
    // takes value k with `rem` units left for coordinates i..n.
    skip: Vec<u64>,
}

/// Number of ways to write `total` as an ordered sum of `parts` non-negative integers.
pub fn compositions(total: usize, parts: usize) -> u64 {
    if parts == 0 {
        return u64::from(total == 0);
    }
    binomial((total + parts - 1) as u64, (parts - 1) as u64)
}

fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

impl BeliefGrid {
    pub fn new(dim: usize, denominator: usize) -> Result<BeliefGrid> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidConfig(format!("belief dimension {dim} outside 1..={MAX_DIM}")));
        }
        if denominator == 0 {
            return Err(Error::InvalidConfig("belief denominator must be positive".into()));
        }
        let count = compositions(denominator, dim);
        if count > 5_000_000 {
            return Err(Error::InvalidConfig(format!("belief grid would have {count} points")));
        }
        let m = denominator;
        let mut skip = vec![0u64; dim * (m + 1) * (m + 1)];
        for i in 0..dim {
            let rest = dim - i - 1;
            for rem in 0..=m {
                let mut acc = 0;
                for k in 0..=m {
                    skip[(i * (m + 1) + rem) * (m + 1) + k] = acc;
                    if k <= rem {
                        acc += compositions(rem - k, rest);
                    }
                }
            }
        }
        let mut lattice = Vec::with_capacity(count as usize * dim);
        let mut current = vec![0u32; dim];
        enumerate(&mut current, 0, m as u32, &mut lattice);
        let points = lattice.iter().map(|&k| k as f64 / m as f64).collect();
        Ok(BeliefGrid { dim, denominator, lattice, points, skip })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn denominator(&self) -> usize {
        self.denominator
    }

    pub fn len(&self) -> usize {
        self.lattice.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Probability vector of point `id`.
    pub fn point(&self, id: usize) -> &[f64] {
        &self.points[id * self.dim..(id + 1) * self.dim]
    }

    /// Integer numerators of point `id`.
    pub fn lattice(&self, id: usize) -> &[u32] {
        &self.lattice[id * self.dim..(id + 1) * self.dim]
    }

    /// Dense id of a lattice vector, `None` if it is not on this grid.
    pub fn index_of(&self, k: &[u32]) -> Option<usize> {
        if k.len() != self.dim || k.iter().map(|&v| v as usize).sum::<usize>() != self.denominator {
            return None;
        }
        Some(self.rank(k))
    }

    #[inline]
    fn rank(&self, k: &[u32]) -> usize {
        let m1 = self.denominator + 1;
        let mut rem = self.denominator;
        let mut id = 0u64;
        for (i, &v) in k.iter().enumerate().take(self.dim - 1) {
            id += self.skip[(i * m1 + rem) * m1 + v as usize];
            rem -= v as usize;
        }
        id as usize
    }

    /// Nearest lattice point in L1; ties go to the lexicographically smallest vector.
    pub fn quantize(&self, belief: &[f64]) -> usize {
        let mut k = [0u32; MAX_DIM];
        self.quantize_lattice(belief, &mut k);
        self.rank(&k[..self.dim])
    }

    /// Lattice numerators of the nearest point, written into `out[..dim]`.
    ///
    /// Every coordinate is rounded down or up; the `M − Σ floor` coordinates
    /// with the largest fractional parts are rounded up. Fractional parts are
    /// compared at 1e-9 resolution, and among equal parts the later coordinate
    /// is rounded up, which yields the lexicographically smaller vector.
    pub fn quantize_lattice(&self, belief: &[f64], out: &mut [u32]) {
        let n = self.dim;
        let m = self.denominator as f64;
        let mut key = [0i64; MAX_DIM];
        let mut total: i64 = 0;
        for i in 0..n {
            let t = (belief[i] * m).max(0.0);
            let fl = t.floor();
            out[i] = fl as u32;
            key[i] = ((t - fl) * 1e9).round() as i64;
            total += fl as i64;
        }
        let mut deficit = self.denominator as i64 - total;
        let mut used = [false; MAX_DIM];
        while deficit > 0 {
            let mut best = usize::MAX;
            for i in 0..n {
                if !used[i] && (best == usize::MAX || key[i] >= key[best]) {
                    best = i;
                }
            }
            if best == usize::MAX {
                // more than n units short: only possible for unnormalized input
                used = [false; MAX_DIM];
                continue;
            }
            used[best] = true;
            out[best] += 1;
            deficit -= 1;
        }
        while deficit < 0 {
            let mut best = usize::MAX;
            for i in 0..n {
                if out[i] > 0 && (best == usize::MAX || key[i] < key[best]) {
                    best = i;
                }
            }
            out[best] -= 1;
            deficit += 1;
        }
    }

    /// Worst-case L1 distance between a belief and its nearest lattice point.
    pub fn l1_radius(&self) -> f64 {
        let n = self.dim;
        (2 * (n / 2) * n.div_ceil(2)) as f64 / (n as f64 * self.denominator as f64)
    }
}

fn enumerate(current: &mut Vec<u32>, i: usize, rem: u32, out: &mut Vec<u32>) {
    let n = current.len();
    if i == n - 1 {
        current[i] = rem;
        out.extend_from_slice(current);
        return;
    }
    for v in 0..=rem {
        current[i] = v;
        enumerate(current, i + 1, rem - v, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::Belief;
    use crate::model::{stream, stream_rng};

    /// Scan every lattice point; strict L1 improvement with lexicographic order as tie-break.
    fn nearest_brute(grid: &BeliefGrid, b: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for id in 0..grid.len() {
            let d: f64 = grid.point(id).iter().zip(b).map(|(p, q)| (p - q).abs()).sum();
            if d < best_d - 1e-12 {
                best = id;
                best_d = d;
            }
        }
        best
    }

    #[test]
    fn point_count_and_ranks() {
        let grid = BeliefGrid::new(6, 10).unwrap();
        assert_eq!(grid.len(), 3003);
        assert_eq!(compositions(10, 6), 3003);
        for id in 0..grid.len() {
            assert_eq!(grid.index_of(grid.lattice(id)), Some(id));
            let total: u32 = grid.lattice(id).iter().sum();
            assert_eq!(total, 10);
        }
        for id in 1..grid.len() {
            assert!(grid.lattice(id - 1) < grid.lattice(id));
        }
    }

    #[test]
    fn on_lattice_points_map_to_themselves() {
        let grid = BeliefGrid::new(4, 7).unwrap();
        for id in 0..grid.len() {
            assert_eq!(grid.quantize(grid.point(id)), id);
        }
    }

    #[test]
    fn two_state_example() {
        let grid = BeliefGrid::new(2, 2).unwrap();
        let id = grid.quantize(&[0.6, 0.4]);
        assert_eq!(grid.lattice(id), &[1, 1]);
        // exact tie between (1,0) and (0,1): lexicographically smaller wins
        let g1 = BeliefGrid::new(2, 1).unwrap();
        assert_eq!(g1.lattice(g1.quantize(&[0.5, 0.5])), &[0, 1]);
    }

    #[test]
    fn matches_brute_force_nearest() {
        let mut rng = stream_rng(5, stream::TEST, 0);
        for (n, m) in [(3, 5), (6, 4), (6, 10), (4, 9)] {
            let grid = BeliefGrid::new(n, m).unwrap();
            for _ in 0..300 {
                let b = Belief::random(n, &mut rng);
                let got = grid.quantize(b.probs());
                let want = nearest_brute(&grid, b.probs());
                let dg = b.l1_distance(grid.point(got));
                let dw = b.l1_distance(grid.point(want));
                assert!((dg - dw).abs() < 1e-12, "n={n} m={m}: {dg} vs {dw}");
                assert_eq!(got, want);
            }
        }
    }

    #[test]
    fn quantization_error_bound() {
        let grid = BeliefGrid::new(6, 10).unwrap();
        let bound = 2.0 * 5.0 / (2.0 * 10.0);
        assert!(grid.l1_radius() <= bound);
        let mut rng = stream_rng(6, stream::TEST, 0);
        for _ in 0..10_000 {
            let b = Belief::random(6, &mut rng);
            let err = b.l1_distance(grid.point(grid.quantize(b.probs())));
            assert!(err <= grid.l1_radius() + 1e-12, "error {err}");
        }
    }
}
