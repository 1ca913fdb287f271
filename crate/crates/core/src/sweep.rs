//! The p_e sweep: every requested method at every p_e, one CSV row each.
//!
//! The no-renewable backward table does not depend on p_e, so one table,
//! deep enough for the lower bound at the smallest p_e, serves the bound and
//! both threshold-policy rows.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use crate::bellman::ActionGrid;
use crate::belief::BeliefGrid;
use crate::bound::{lower_bound, required_stages, worst_case_objective};
use crate::config::{Method, RunConfig};
use crate::error::{Error, Result};
use crate::model::SystemConfig;
use crate::policies::{bcp_search, mean_episode_horizon, tp_evaluate, tp_optimize, PolicyEval, ThresholdPolicy};
use crate::solver_finite::{backward_induction, BackwardTable};
use crate::solver_infinite::{quantized_rates, relative_value_iteration};

pub const CSV_SCHEMA: u32 = 1;
pub const CSV_COLUMNS: &str = "method,p_e,gamma,leakage_bits,cost,weighted,stderr_weighted,runtime_s,meta,status";

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub method: Method,
    pub p_e: f64,
    pub gamma: f64,
    pub leakage_bits: f64,
    pub cost: f64,
    pub weighted: f64,
    pub stderr_weighted: f64,
    pub runtime_s: Option<f64>,
    /// `key=value` pairs joined by ';'.
    pub meta: String,
    /// "ok", "nonconverged" or "error: …".
    pub status: String,
    /// Quantization slack, for MDP rows.
    pub epsilon_q: Option<f64>,
}

impl SweepRow {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }

    fn failed(method: Method, p_e: f64, gamma: f64, err: &Error) -> SweepRow {
        SweepRow {
            method,
            p_e,
            gamma,
            leakage_bits: f64::NAN,
            cost: f64::NAN,
            weighted: f64::NAN,
            stderr_weighted: f64::NAN,
            runtime_s: None,
            meta: String::new(),
            status: format!("error: {}", err.to_string().replace([',', '\n'], ";")),
            epsilon_q: None,
        }
    }
}

/// Configuration of one row.
pub fn row_config(cfg: &RunConfig, p_e: f64) -> SystemConfig {
    SystemConfig { p_e, gamma: cfg.sweep.gamma.unwrap_or(cfg.system.gamma), ..cfg.system.clone() }
}

/// Shared backward table for the bound and the threshold rows, or `None`
/// when no requested method needs it.
pub fn shared_table(cfg: &RunConfig, grid: &Arc<BeliefGrid>, actions: &ActionGrid) -> Result<Option<BackwardTable>> {
    let m = &cfg.sweep.methods;
    if !m.iter().any(|m| matches!(m, Method::LowerBound | Method::TpOpt | Method::TpFixed)) {
        return Ok(None);
    }
    let p_min = cfg.sweep.p_e_values.iter().copied().fold(f64::INFINITY, f64::min);
    let base = row_config(cfg, p_min);
    let mut keep = cfg.tp.n_max.max(cfg.tp.n.unwrap_or(1));
    for &p in &cfg.sweep.p_e_values {
        keep = keep.max(mean_episode_horizon(p));
    }
    let mut depth = keep;
    if m.contains(&Method::LowerBound) {
        depth = depth.max(required_stages(p_min, worst_case_objective(&base), cfg.bound.epsilon, cfg.bound.pmf_mode)?);
    }
    backward_induction(grid.clone(), actions, &base, depth, keep).map(Some)
}

/// Run the sweep. Rows come back method-major, in the configured order.
pub fn run_sweep(cfg: &RunConfig, timing: bool) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    cfg.sweep.validate()?;
    let sys = row_config(cfg, cfg.sweep.p_e_values[0]);
    sys.validate()?;
    let grid = Arc::new(BeliefGrid::new(sys.n_states(), sys.belief_denominator)?);
    let actions = ActionGrid::new(&sys, cfg.solver.search)?;
    let table = shared_table(cfg, &grid, &actions)?;
    let jobs: Vec<(Method, f64)> =
        cfg.sweep.methods.iter().flat_map(|&m| cfg.sweep.p_e_values.iter().map(move |&p| (m, p))).collect();
    let rows = jobs
        .par_iter()
        .map(|&(method, p_e)| {
            let row_cfg = row_config(cfg, p_e);
            let start = Instant::now();
            let mut row = match run_row(method, cfg, &row_cfg, &grid, &actions, table.as_ref()) {
                Ok(r) => r,
                Err(e) => SweepRow::failed(method, p_e, row_cfg.gamma, &e),
            };
            if timing {
                row.runtime_s = Some(start.elapsed().as_secs_f64());
            }
            row
        })
        .collect();
    Ok(rows)
}

fn run_row(
    method: Method,
    run: &RunConfig,
    cfg: &SystemConfig,
    grid: &Arc<BeliefGrid>,
    actions: &ActionGrid,
    table: Option<&BackwardTable>,
) -> Result<SweepRow> {
    let row = |l: f64, c: f64, w: f64, se: f64, meta: String| SweepRow {
        method,
        p_e: cfg.p_e,
        gamma: cfg.gamma,
        leakage_bits: l,
        cost: c,
        weighted: w,
        stderr_weighted: se,
        runtime_s: None,
        meta,
        status: "ok".into(),
        epsilon_q: None,
    };
    let table = || table.ok_or_else(|| Error::Domain("backward table missing".into()));
    Ok(match method {
        Method::LowerBound => {
            let b = lower_bound(table()?, cfg, run.bound.epsilon, run.bound.pmf_mode)?;
            let meta = format!(
                "k={};tail={:e};renewal_reward={:.10};pmf={}",
                b.k_used,
                b.tail_bound,
                b.renewal_reward,
                pmf_name(b.pmf_mode)
            );
            row(f64::NAN, f64::NAN, b.value, 0.0, meta)
        }
        Method::Mdp => {
            let sol = relative_value_iteration(grid, actions, cfg, &run.solver.rvi_options())?;
            let (l, c) = quantized_rates(&sol.policy, grid, cfg);
            let r = &sol.report;
            let meta = format!(
                "iterations={};span={:e};gain_lower={:.10};gain_upper={:.10};epsilon_q={:.6}",
                r.iterations, r.span, r.gain_lower, r.gain_upper, r.epsilon_q
            );
            let mut out = row(l, c, sol.table.lambda, 0.0, meta);
            out.epsilon_q = Some(r.epsilon_q);
            if !r.converged {
                out.status = "nonconverged".into();
            }
            out
        }
        Method::TpOpt => {
            let (n, best, _) = tp_optimize(table()?, cfg, run.tp.n_max)?;
            row(best.leakage_rate, best.cost_rate, best.weighted, 0.0, format!("n={n};n_max={}", run.tp.n_max))
        }
        Method::TpFixed => {
            let n = run.tp.n.unwrap_or_else(|| mean_episode_horizon(cfg.p_e));
            let r = tp_evaluate(&ThresholdPolicy::from_table(table()?, n)?, cfg, PolicyEval::Exact)?;
            row(r.leakage_rate, r.cost_rate, r.weighted, 0.0, format!("n={n}"))
        }
        Method::Bcp => {
            let out = bcp_search(cfg, &run.bcp)?;
            let r = &out.best.result;
            let join = |v: &[f64]| v.iter().map(|p| format!("{p}")).collect::<Vec<_>>().join("/");
            let meta = format!(
                "exact={};candidates={};p_charge={};p_discharge={}",
                out.exact,
                out.candidates,
                join(&out.best.policy.p_charge),
                join(&out.best.policy.p_discharge)
            );
            row(r.leakage_rate, r.cost_rate, r.weighted, r.stderr_weighted, meta)
        }
    })
}

fn pmf_name(m: crate::bound::PmfMode) -> &'static str {
    match m {
        crate::bound::PmfMode::Normalized => "normalized",
        crate::bound::PmfMode::Unnormalized => "unnormalized",
    }
}

fn num(v: f64) -> String {
    if v.is_nan() {
        "NA".into()
    } else {
        format!("{v:.10}")
    }
}

/// CSV with the schema comment and the effective configuration as a header.
pub fn write_csv<W: Write>(mut out: W, rows: &[SweepRow], cfg: &RunConfig) -> std::io::Result<()> {
    writeln!(out, "# schema={CSV_SCHEMA}")?;
    writeln!(out, "# config={}", cfg.to_json())?;
    writeln!(out, "{CSV_COLUMNS}")?;
    for r in rows {
        writeln!(
            out,
            "{},{:.4},{:.4},{},{},{},{},{},{},{}",
            r.method.name(),
            r.p_e,
            r.gamma,
            num(r.leakage_bits),
            num(r.cost),
            num(r.weighted),
            num(r.stderr_weighted),
            r.runtime_s.map_or("NA".into(), |t| format!("{t:.3}")),
            r.meta,
            r.status
        )?;
    }
    Ok(())
}

/// Parsed CSV row, as read back by checks.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub method: String,
    pub p_e: f64,
    pub weighted: f64,
    pub stderr_weighted: f64,
    pub meta: String,
    pub status: String,
}

/// Read a sweep CSV, checking the schema line and column header.
pub fn read_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(&format!("# schema={CSV_SCHEMA}")) {
        return Err(Error::Format("missing or unsupported schema line".into()));
    }
    let mut lines = lines.skip_while(|l| l.starts_with('#'));
    if lines.next() != Some(CSV_COLUMNS) {
        return Err(Error::Format("unexpected column header".into()));
    }
    let parse = |s: &str| -> Result<f64> {
        if s == "NA" {
            Ok(f64::NAN)
        } else {
            s.parse().map_err(|_| Error::Format(format!("bad number {s:?}")))
        }
    };
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 10 {
                return Err(Error::Format(format!("expected 10 fields in {l:?}")));
            }
            Ok(CsvRow {
                method: f[0].into(),
                p_e: parse(f[1])?,
                weighted: parse(f[5])?,
                stderr_weighted: parse(f[6])?,
                meta: f[8].into(),
                status: f[9].into(),
            })
        })
        .collect()
}
