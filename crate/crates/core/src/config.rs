//! Run configuration: one TOML file fully determines a run.
//!
//! ```toml
//! [system]
//! x_max = 1
//! y_max = 1
//! b_max = 2
//! p_x = [0.5, 0.5]
//! p_e = 0.5
//! gamma = 0.5
//!
//! [solver]
//! search = { kind = "exhaustive" }   # or { kind = "coordinate-descent", restarts = 5, max_passes = 20 }
//! damping = 1.0
//!
//! [bound]
//! epsilon = 1e-4
//! pmf_mode = "normalized"
//!
//! [tp]
//! n_max = 15
//!
//! [bcp]
//! grid_steps = 10
//!
//! [sweep]
//! p_e_values = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]
//! methods = ["lower-bound", "mdp", "tp-opt", "tp-fixed", "bcp"]
//! ```
//!
//! Every section and key is optional except that `[system]`, when present,
//! must list the alphabet sizes, P_X, p_e and gamma. Unknown keys are errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bellman::SearchStrategy;
use crate::bound::PmfMode;
use crate::error::{Error, Result};
use crate::model::SystemConfig;
use crate::policies::BcpSearch;
use crate::sim::LeakageEstimator;
use crate::solver_infinite::RviOptions;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub solver: SolverSection,
    pub bound: BoundSection,
    pub tp: TpSection,
    pub bcp: BcpSearch,
    pub sim: SimSection,
    pub sweep: SweepSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub search: SearchStrategy,
    pub damping: f64,
    pub lipschitz_samples: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let o = RviOptions::default();
        SolverSection { search: SearchStrategy::default(), damping: o.damping, lipschitz_samples: o.lipschitz_samples }
    }
}

impl SolverSection {
    pub fn rvi_options(&self) -> RviOptions {
        RviOptions { damping: self.damping, lipschitz_samples: self.lipschitz_samples }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundSection {
    pub epsilon: f64,
    pub pmf_mode: PmfMode,
}

impl Default for BoundSection {
    fn default() -> Self {
        BoundSection { epsilon: 1e-4, pmf_mode: PmfMode::Normalized }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TpSection {
    /// Fixed horizon; ⌈1/p_e⌉ when absent.
    pub n: Option<usize>,
    pub n_max: usize,
    /// Episodes for Monte Carlo evaluation.
    pub episodes: usize,
}

impl Default for TpSection {
    fn default() -> Self {
        TpSection { n: None, n_max: 15, episodes: 100_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub slots: usize,
    pub batch: usize,
    pub estimator: LeakageEstimator,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection { slots: 100_000, batch: 1000, estimator: LeakageEstimator::LogRatio }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    LowerBound,
    Mdp,
    TpOpt,
    TpFixed,
    Bcp,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::LowerBound, Method::Mdp, Method::TpOpt, Method::TpFixed, Method::Bcp];

    pub fn name(self) -> &'static str {
        match self {
            Method::LowerBound => "lower-bound",
            Method::Mdp => "mdp",
            Method::TpOpt => "tp-opt",
            Method::TpFixed => "tp-fixed",
            Method::Bcp => "bcp",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub p_e_values: Vec<f64>,
    /// Overrides `system.gamma` for every row when set.
    pub gamma: Option<f64>,
    pub methods: Vec<Method>,
    pub output: Option<PathBuf>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            p_e_values: (1..=10).map(|i| i as f64 / 10.0).collect(),
            gamma: None,
            methods: Method::ALL.to_vec(),
            output: None,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("sweep needs at least one method".into()));
        }
        if self.p_e_values.is_empty() {
            return Err(Error::InvalidConfig("sweep needs at least one p_e value".into()));
        }
        if let Some(p) = self.p_e_values.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
            return Err(Error::InvalidConfig(format!("sweep p_e = {p} outside (0, 1]")));
        }
        if let Some(g) = self.gamma {
            if !(0.0..=1.0).contains(&g) {
                return Err(Error::InvalidConfig(format!("sweep gamma = {g} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        if !(self.solver.damping > 0.0 && self.solver.damping <= 1.0) {
            return Err(Error::InvalidConfig(format!("damping {} outside (0, 1]", self.solver.damping)));
        }
        if !(self.bound.epsilon > 0.0) {
            return Err(Error::InvalidConfig("bound epsilon must be positive".into()));
        }
        if self.tp.n_max == 0 || self.tp.n == Some(0) {
            return Err(Error::InvalidConfig("threshold horizons must be at least 1".into()));
        }
        if self.sim.batch == 0 || self.sim.slots < self.sim.batch {
            return Err(Error::InvalidConfig("sim.slots must cover at least one batch".into()));
        }
        Ok(())
    }

    /// Compact JSON echo of the effective configuration.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
