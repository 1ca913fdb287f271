use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use mg_core::bellman::ActionGrid;
use mg_core::bound::{lower_bound, required_stages, worst_case_objective, PmfMode};
use mg_core::config::RunConfig;
use mg_core::control::{Controller, FixedRule};
use mg_core::oracle::{joint_table, HistoryController, OracleOptions};
use mg_core::policies::{
    bcp_search, mean_episode_horizon, tp_evaluate, tp_optimize, PolicyEval, ThresholdPolicy,
};
use mg_core::sim::{simulate, simulate_logged, SimOptions};
use mg_core::solver_finite::{backward_induction, evaluate_finite_policy};
use mg_core::solver_infinite::{quantized_rates, relative_value_iteration};
use mg_core::sweep::{run_sweep, write_csv};
use mg_core::table::{read_policy, write_finite, write_policy, write_value_table};
use mg_core::{ActionRule, Belief, BeliefGrid, Error, Result};

#[derive(Parser, Debug)]
#[command(name = "mg", version, about = "Privacy-cost energy management solvers")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML run configuration; built-in defaults when absent.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    p_e: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Belief lattice denominator M.
    #[arg(long)]
    grid_m: Option<usize>,
    /// Action grid steps Q.
    #[arg(long)]
    action_q: Option<usize>,
    /// Write the JSON summary here instead of stdout.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Report wall-clock times (breaks byte-identical output).
    #[arg(long)]
    timing: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PmfArg {
    Normalized,
    Unnormalized,
}

impl From<PmfArg> for PmfMode {
    fn from(p: PmfArg) -> PmfMode {
        match p {
            PmfArg::Normalized => PmfMode::Normalized,
            PmfArg::Unnormalized => PmfMode::Unnormalized,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SimPolicy {
    Reveal,
    Lowest,
    Tp,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the average-cost belief MDP; writes the value table, policy and summary.
    SolveMdp {
        #[command(flatten)]
        common: Common,
        /// Directory for value_table.txt, policy.txt and summary.json.
        #[arg(long)]
        artifacts: PathBuf,
    },
    /// Run every method over the p_e grid and emit CSV.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated subset of lower-bound,mdp,tp-opt,tp-fixed,bcp.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        p_e_values: Option<Vec<f64>>,
    },
    /// Threshold policy: evaluate one horizon or search 1..=n_max.
    Tp {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        n_max: Option<usize>,
        #[arg(long, conflicts_with = "mc")]
        exact: bool,
        #[arg(long)]
        mc: bool,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Battery conditioned policy grid search.
    Bcp {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        grid_steps: Option<usize>,
        #[arg(long)]
        shared_pair: bool,
        #[arg(long)]
        leakage_only: bool,
        #[arg(long)]
        episodes: Option<usize>,
        /// Write one CSV row per candidate.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Non-causal lower bound, in both interval-pmf conventions.
    LowerBound {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long, value_enum)]
        pmf_mode: Option<PmfArg>,
    },
    /// Finite-horizon problem without the renewable.
    Finite {
        #[command(flatten)]
        common: Common,
        #[arg(short = 'T', long)]
        horizon: usize,
        /// Also write the stage rules.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Exact mutual information of a policy by joint enumeration.
    #[command(hide = true)]
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(short = 'T', long)]
        horizon: usize,
        /// Stationary policy file from solve-mdp; demand revelation when absent.
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Monte Carlo run of a simple policy or a stored stationary policy.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "reveal")]
        kind: SimPolicy,
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        slots: Option<usize>,
        /// Per-slot CSV trace.
        #[arg(long)]
        trace_slots: Option<PathBuf>,
    },
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(p) = common.p_e {
        cfg.system.p_e = p;
    }
    if let Some(g) = common.gamma {
        cfg.system.gamma = g;
    }
    if let Some(s) = common.seed {
        cfg.system.seed = s;
    }
    if let Some(m) = common.grid_m {
        cfg.system.belief_denominator = m;
    }
    if let Some(q) = common.action_q {
        cfg.system.action_steps = q;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(common: &Common, cfg: &RunConfig, result: Value, elapsed: Option<f64>) -> Result<()> {
    let mut doc = json!({ "result": result, "config": serde_json::to_value(cfg).expect("config serializes") });
    if common.timing {
        doc["runtime_s"] = json!(elapsed);
    }
    let text = serde_json::to_string_pretty(&doc).expect("summary serializes") + "\n";
    write_text(common.out.as_deref(), &text)
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("result serializes")
}

fn grid_and_actions(cfg: &RunConfig) -> Result<(Arc<BeliefGrid>, ActionGrid)> {
    let s = &cfg.system;
    Ok((Arc::new(BeliefGrid::new(s.n_states(), s.belief_denominator)?), ActionGrid::new(s, cfg.solver.search)?))
}

/// Exit status of one invocation.
pub fn run(cli: Cli) -> Result<i32> {
    let start = Instant::now();
    let secs = || Some(start.elapsed().as_secs_f64());
    match cli.command {
        Command::SolveMdp { common, artifacts } => {
            let cfg = load(&common)?;
            let (grid, actions) = grid_and_actions(&cfg)?;
            let sol = relative_value_iteration(&grid, &actions, &cfg.system, &cfg.solver.rvi_options())?;
            std::fs::create_dir_all(&artifacts)?;
            write_value_table(BufWriter::new(File::create(artifacts.join("value_table.txt"))?), &sol.table, &grid)?;
            write_policy(BufWriter::new(File::create(artifacts.join("policy.txt"))?), &sol.policy, &grid, &cfg.system)?;
            let (l, c) = quantized_rates(&sol.policy, &grid, &cfg.system);
            let summary = json!({
                "lambda": sol.table.lambda,
                "leakage_rate": l,
                "cost_rate": c,
                "report": to_value(&sol.report),
            });
            let summary_doc = json!({ "result": summary, "config": serde_json::to_value(&cfg).expect("config serializes") });
            std::fs::write(artifacts.join("summary.json"), serde_json::to_string_pretty(&summary_doc).expect("json") + "\n")?;
            emit(&common, &cfg, summary, secs())?;
            if !sol.report.converged {
                eprintln!("warning: {}", Error::NonConvergence { iterations: sol.report.iterations, span: sol.report.span });
                return Ok(2);
            }
            Ok(0)
        }
        Command::Sweep { common, methods, p_e_values } => {
            let mut cfg = load(&common)?;
            if let Some(m) = methods {
                cfg.sweep.methods = m.iter().map(|s| s.parse()).collect::<Result<_>>()?;
            }
            if let Some(p) = p_e_values {
                cfg.sweep.p_e_values = p;
            }
            if let Some(g) = common.gamma {
                cfg.sweep.gamma = Some(g);
            }
            cfg.sweep.validate()?;
            let rows = run_sweep(&cfg, common.timing)?;
            let mut buf = Vec::new();
            write_csv(&mut buf, &rows, &cfg)?;
            let out = common.out.clone().or_else(|| cfg.sweep.output.clone());
            write_text(out.as_deref(), std::str::from_utf8(&buf).expect("csv is utf-8"))?;
            let failed = rows.iter().filter(|r| !r.ok()).count();
            if failed > 0 {
                eprintln!("{failed} sweep row(s) failed");
                return Ok(2);
            }
            Ok(0)
        }
        Command::Tp { common, n, n_max, exact: _, mc, episodes } => {
            let mut cfg = load(&common)?;
            if let Some(k) = n_max {
                cfg.tp.n_max = k;
            }
            if let Some(e) = episodes {
                cfg.tp.episodes = e;
            }
            cfg.tp.n = n.or(cfg.tp.n);
            cfg.validate()?;
            let (grid, actions) = grid_and_actions(&cfg)?;
            let mode = if mc {
                PolicyEval::MonteCarlo { episodes: cfg.tp.episodes, estimator: cfg.sim.estimator }
            } else {
                PolicyEval::Exact
            };
            let result = match cfg.tp.n {
                Some(n) => {
                    let table = backward_induction(grid, &actions, &cfg.system, n, n)?;
                    let r = tp_evaluate(&ThresholdPolicy::from_table(&table, n)?, &cfg.system, mode)?;
                    json!({ "n": n, "mode": if mc { "mc" } else { "exact" }, "evaluation": to_value(&r) })
                }
                None => {
                    let k = cfg.tp.n_max;
                    let table = backward_induction(grid, &actions, &cfg.system, k, k)?;
                    let (n, best, all) = tp_optimize(&table, &cfg.system, k)?;
                    let best = match mode {
                        PolicyEval::Exact => best,
                        _ => tp_evaluate(&ThresholdPolicy::from_table(&table, n)?, &cfg.system, mode)?,
                    };
                    let curve: Vec<f64> = all.iter().map(|r| r.weighted).collect();
                    json!({
                        "n": n,
                        "mean_episode_horizon": mean_episode_horizon(cfg.system.p_e),
                        "mode": if mc { "mc" } else { "exact" },
                        "evaluation": to_value(&best),
                        "weighted_by_n": curve,
                    })
                }
            };
            emit(&common, &cfg, result, secs())?;
            Ok(0)
        }
        Command::Bcp { common, grid_steps, shared_pair, leakage_only, episodes, trace } => {
            let mut cfg = load(&common)?;
            if let Some(g) = grid_steps {
                cfg.bcp.grid_steps = g;
            }
            if let Some(e) = episodes {
                cfg.bcp.refine_episodes = e;
            }
            cfg.bcp.shared_pair |= shared_pair;
            cfg.bcp.leakage_only |= leakage_only;
            let out = bcp_search(&cfg.system, &cfg.bcp)?;
            if let Some(p) = trace {
                let mut w = BufWriter::new(File::create(p)?);
                out.write_trace(&mut w)?;
                w.flush()?;
            }
            let result = json!({ "best": to_value(&out.best), "exact": out.exact, "candidates": out.candidates });
            emit(&common, &cfg, result, secs())?;
            Ok(0)
        }
        Command::LowerBound { common, epsilon, pmf_mode } => {
            let mut cfg = load(&common)?;
            if let Some(e) = epsilon {
                cfg.bound.epsilon = e;
            }
            if let Some(m) = pmf_mode {
                cfg.bound.pmf_mode = m.into();
            }
            cfg.validate()?;
            let (grid, actions) = grid_and_actions(&cfg)?;
            let worst = worst_case_objective(&cfg.system);
            let k = [PmfMode::Normalized, PmfMode::Unnormalized]
                .into_iter()
                .map(|m| required_stages(cfg.system.p_e, worst, cfg.bound.epsilon, m))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .max()
                .expect("two modes");
            let table = backward_induction(grid, &actions, &cfg.system, k, 0)?;
            let normalized = lower_bound(&table, &cfg.system, cfg.bound.epsilon, PmfMode::Normalized)?;
            let unnormalized = lower_bound(&table, &cfg.system, cfg.bound.epsilon, PmfMode::Unnormalized)?;
            let selected = match cfg.bound.pmf_mode {
                PmfMode::Normalized => &normalized,
                PmfMode::Unnormalized => &unnormalized,
            };
            let result = json!({
                "value": selected.value,
                "pmf_mode": to_value(&cfg.bound.pmf_mode),
                "normalized": to_value(&normalized),
                "unnormalized": to_value(&unnormalized),
            });
            emit(&common, &cfg, result, secs())?;
            Ok(0)
        }
        Command::Finite { common, horizon, table } => {
            let cfg = load(&common)?;
            if horizon == 0 {
                return Err(Error::InvalidConfig("horizon must be at least 1".into()));
            }
            let (grid, actions) = grid_and_actions(&cfg)?;
            let bt = backward_induction(grid, &actions, &cfg.system, horizon, horizon)?;
            let sol = bt.solution(horizon)?;
            if let Some(p) = table {
                write_finite(BufWriter::new(File::create(p)?), &sol, &cfg.system)?;
            }
            let exact = evaluate_finite_policy(&sol, horizon, &cfg.system)?;
            let per_horizon: Vec<f64> = (1..=horizon).map(|t| bt.objective(t)).collect();
            let result = json!({
                "horizon": horizon,
                "objective": sol.objective,
                "objective_by_horizon": per_horizon,
                "exact_belief_totals": to_value(&exact),
            });
            emit(&common, &cfg, result, secs())?;
            Ok(0)
        }
        Command::Oracle { common, horizon, policy } => {
            let cfg = load(&common)?;
            let sys = &cfg.system;
            let opts = OracleOptions::default();
            let init = Belief::full_battery(sys);
            let table = match policy {
                Some(p) => {
                    let grid = Arc::new(BeliefGrid::new(sys.n_states(), sys.belief_denominator)?);
                    let pol = read_policy(BufReader::new(File::open(p)?), &grid, sys)?;
                    let ctl = pol.controller(grid);
                    joint_table(&HistoryController { cfg: sys.clone(), init, controller: ctl }, horizon, sys, &opts)?
                }
                None => {
                    let ctl = FixedRule(ActionRule::reveal(sys));
                    joint_table(&HistoryController { cfg: sys.clone(), init, controller: ctl }, horizon, sys, &opts)?
                }
            };
            let t = horizon as f64;
            let result = json!({
                "horizon": horizon,
                "trajectories": table.entries.len(),
                "mi_conditional_bits": table.mutual_information(true),
                "mi_unconditional_bits": table.mutual_information(false),
                "leakage_rate": table.mutual_information(true) / t,
                "cost_rate": table.expected_purchases() / t,
                "chain_terms": table.chain_terms(),
            });
            emit(&common, &cfg, result, secs())?;
            Ok(0)
        }
        Command::Simulate { common, kind, policy, slots, trace_slots } => {
            let mut cfg = load(&common)?;
            if let Some(s) = slots {
                cfg.sim.slots = s;
            }
            cfg.validate()?;
            let sys = cfg.system.clone();
            let opts = SimOptions {
                total_slots: cfg.sim.slots,
                batch: cfg.sim.batch,
                estimator: cfg.sim.estimator,
                record: trace_slots.is_some(),
            };
            let result = match policy {
                Some(p) => {
                    let grid = Arc::new(BeliefGrid::new(sys.n_states(), sys.belief_denominator)?);
                    let pol = read_policy(BufReader::new(File::open(p)?), &grid, &sys)?;
                    sim_with(&pol.controller(grid), &cfg, &opts, trace_slots.as_deref())?
                }
                None => match kind {
                    SimPolicy::Reveal => sim_with(&FixedRule(ActionRule::reveal(&sys)), &cfg, &opts, trace_slots.as_deref())?,
                    SimPolicy::Lowest => {
                        sim_with(&FixedRule(ActionRule::lowest_feasible(&sys)), &cfg, &opts, trace_slots.as_deref())?
                    }
                    SimPolicy::Tp => {
                        let n = cfg.tp.n.unwrap_or_else(|| mean_episode_horizon(sys.p_e.max(1e-9)));
                        let (grid, actions) = grid_and_actions(&cfg)?;
                        let table = backward_induction(grid, &actions, &sys, n, n)?;
                        let ctl = ThresholdPolicy::from_table(&table, n)?.controller(&sys);
                        sim_with(&ctl, &cfg, &opts, trace_slots.as_deref())?
                    }
                },
            };
            emit(&common, &cfg, to_value(&result), secs())?;
            Ok(0)
        }
    }
}

fn sim_with<C: Controller + Clone>(
    ctl: &C,
    cfg: &RunConfig,
    opts: &SimOptions,
    trace: Option<&Path>,
) -> Result<mg_core::sim::EvalResult> {
    match trace {
        Some(p) => {
            let (r, log) = simulate_logged(ctl, &cfg.system, opts, cfg.system.seed)?;
            let mut w = BufWriter::new(File::create(p)?);
            log.write_csv(&mut w)?;
            w.flush()?;
            Ok(r)
        }
        None => simulate(ctl, &cfg.system, opts, cfg.system.seed),
    }
}

/// Parse arguments, honour MG_THREADS, run, and map errors to exit codes.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Ok(v) = std::env::var("MG_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: MG_THREADS must be a positive integer, got {v:?}");
                return 1;
            }
        }
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
