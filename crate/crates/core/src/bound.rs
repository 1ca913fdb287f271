//! Non-causal lower bound: with recharge instants known in advance, every
//! inter-recharge interval is a finite-horizon problem with a full battery.
//! The bound averages the optimal finite-horizon rates over the geometric
//! interval-length distribution, truncated where the worst-case tail falls
//! below ε.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{entropy_bits, SystemConfig};
use crate::solver_finite::BackwardTable;

/// Interval-length distribution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PmfMode {
    /// p(1 − p)^{t−1} on t ≥ 1; sums to one.
    #[default]
    Normalized,
    /// p(1 − p)^t on t ≥ 1; total mass 1 − p.
    Unnormalized,
}

pub fn interval_pmf(t_k: usize, p_e: f64, mode: PmfMode) -> Result<f64> {
    if t_k < 1 {
        return Err(Error::Domain("interval length must be at least 1".into()));
    }
    if !(p_e > 0.0 && p_e <= 1.0) {
        return Err(Error::Domain(format!("p_e = {p_e} outside (0, 1]")));
    }
    let exp = match mode {
        PmfMode::Normalized => t_k - 1,
        PmfMode::Unnormalized => t_k,
    };
    Ok(p_e * (1.0 - p_e).powi(exp as i32))
}

/// Mass of the pmf beyond `k`.
pub fn tail_mass(k: usize, p_e: f64, mode: PmfMode) -> f64 {
    let exp = match mode {
        PmfMode::Normalized => k,
        PmfMode::Unnormalized => k + 1,
    };
    (1.0 - p_e).powi(exp as i32)
}

/// Ū_w(γ) = γ·H(X) + (1 − γ)·E[X]: full revelation.
pub fn worst_case_objective(cfg: &SystemConfig) -> f64 {
    cfg.gamma * entropy_bits(&cfg.p_x) + (1.0 - cfg.gamma) * cfg.mean_demand()
}

/// Least K with tail_mass(K)·Ū_w < ε.
pub fn required_stages(p_e: f64, worst: f64, epsilon: f64, mode: PmfMode) -> Result<usize> {
    if !(epsilon > 0.0) {
        return Err(Error::Domain("epsilon must be positive".into()));
    }
    if p_e <= 0.0 {
        return Err(Error::DegenerateProcess);
    }
    let mut k = 1;
    while tail_mass(k, p_e, mode) * worst >= epsilon {
        k += 1;
        if k > 1_000_000 {
            return Err(Error::Domain(format!("no truncation below {epsilon} for p_e = {p_e}")));
        }
    }
    Ok(k)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundTerm {
    pub t_k: usize,
    pub weight: f64,
    pub objective: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundResult {
    /// F_γ(p_e) = Σ_k f(T_k)·Ū*(γ, T_k) over k ≤ K.
    pub value: f64,
    pub k_used: usize,
    /// tail_mass(K)·Ū_w, an upper bound on the omitted terms.
    pub tail_bound: f64,
    /// Σ f·T·Ū* / Σ f·T: the time average over intervals instead of the
    /// plain average of per-interval rates.
    pub renewal_reward: f64,
    pub pmf_mode: PmfMode,
    pub epsilon: f64,
    pub worst_case: f64,
    pub terms: Vec<BoundTerm>,
}

/// Lower bound from a backward table holding at least K stages.
pub fn lower_bound(table: &BackwardTable, cfg: &SystemConfig, epsilon: f64, mode: PmfMode) -> Result<BoundResult> {
    let worst = worst_case_objective(cfg);
    let k = required_stages(cfg.p_e, worst, epsilon, mode)?;
    if k > table.max_stage() {
        return Err(Error::Domain(format!("bound needs {k} stages, table has {}", table.max_stage())));
    }
    let mut terms = Vec::with_capacity(k);
    let (mut value, mut num, mut den) = (0.0, 0.0, 0.0);
    for t in 1..=k {
        let weight = interval_pmf(t, cfg.p_e, mode)?;
        let objective = table.objective(t);
        value += weight * objective;
        num += weight * t as f64 * objective;
        den += weight * t as f64;
        terms.push(BoundTerm { t_k: t, weight, objective });
    }
    Ok(BoundResult {
        value,
        k_used: k,
        tail_bound: tail_mass(k, cfg.p_e, mode) * worst,
        renewal_reward: if den > 0.0 { num / den } else { 0.0 },
        pmf_mode: mode,
        epsilon,
        worst_case: worst,
        terms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pmf_examples() {
        assert_eq!(interval_pmf(1, 0.5, PmfMode::Normalized).unwrap(), 0.5);
        assert_eq!(interval_pmf(1, 0.5, PmfMode::Unnormalized).unwrap(), 0.25);
        let total: f64 = (1..=200).map(|t| interval_pmf(t, 0.3, PmfMode::Normalized).unwrap()).sum();
        assert!((total - (1.0 - 0.7f64.powi(200))).abs() < 1e-12);
        assert!(interval_pmf(0, 0.3, PmfMode::Normalized).is_err());
    }

    #[test]
    fn tail_matches_partial_sums() {
        for mode in [PmfMode::Normalized, PmfMode::Unnormalized] {
            let head: f64 = (1..=30).map(|t| interval_pmf(t, 0.2, mode).unwrap()).sum();
            let total = match mode {
                PmfMode::Normalized => 1.0,
                PmfMode::Unnormalized => 0.8,
            };
            assert!((total - head - tail_mass(30, 0.2, mode)).abs() < 1e-14);
        }
    }

    #[test]
    fn worst_case_examples() {
        let mut cfg = SystemConfig::default();
        assert!((worst_case_objective(&cfg) - 0.75).abs() < 1e-15);
        cfg.gamma = 1.0;
        assert!((worst_case_objective(&cfg) - 1.0).abs() < 1e-15);
        cfg.gamma = 0.0;
        cfg.p_x = vec![0.3, 0.7];
        assert!((worst_case_objective(&cfg) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn truncation_example() {
        assert_eq!(required_stages(0.3, 0.75, 1e-4, PmfMode::Normalized).unwrap(), 26);
        assert_eq!(required_stages(1.0, 0.75, 1e-4, PmfMode::Normalized).unwrap(), 1);
        assert!(matches!(required_stages(0.0, 0.75, 1e-4, PmfMode::Normalized), Err(Error::DegenerateProcess)));
    }
}
