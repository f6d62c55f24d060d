//! Scenario files, bundled case studies, synthetic grids and the end-to-end
//! pipeline: build → clear → prices → agents → AC check → CSV + JSON report.
//!
//! Scenario files are TOML. Every electrical quantity is per-unit on the
//! base stated in the file; germ indices are 0-based.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acflow::{validate_solution, AgentOverlay, ValidationOptions};
use crate::agents::{self, AgentRun, Policy, StorageSpec};
use crate::ccopf::{self, CcOpfProblem, FlexGen, InjectionKind, SlackCost, SolveStatus, UncertainInjection};
use crate::market::{extract_plmps, MarketSolution};
use crate::netmodel::{Branch, Bus, RadialNetwork};
use crate::pce::{GammaMode, GermComponent, GermSpec, PceBasis};

pub const CASE1: &str = include_str!("../scenarios/case1.toml");
pub const CASE2: &str = include_str!("../scenarios/case2.toml");
pub const CASE3: &str = include_str!("../scenarios/case3.toml");

/// Bundled scenario text by name (`case1`, `case2`, `case3`).
pub fn bundled(name: &str) -> Option<&'static str> {
    match name.trim_end_matches(".toml") {
        "case1" => Some(CASE1),
        "case2" => Some(CASE2),
        "case3" => Some(CASE3),
        _ => None,
    }
}

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid scenario: {field}: {message}")]
    Validation { field: String, message: String },
    #[error("{stage} failed: {source}")]
    Stage { stage: &'static str, source: BoxError },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation { field: field.into(), message: message.into() }
}

fn stage<E: Into<BoxError>>(stage: &'static str) -> impl FnOnce(E) -> ScenarioError {
    move |e| ScenarioError::Stage { stage, source: e.into() }
}

fn default_horizon() -> usize {
    24
}
fn default_epsilon() -> f64 {
    0.05
}
fn default_v0() -> f64 {
    1.0
}
fn default_v_min() -> f64 {
    0.95
}
fn default_v_max() -> f64 {
    1.05
}
fn default_power_factor() -> f64 {
    0.95
}
fn default_policies() -> Vec<Policy> {
    vec![Policy::RuleBased, Policy::Dp, Policy::Hindsight]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// Market periods (hourly).
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    /// Chance-constraint violation probability.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub gamma_mode: GammaMode,
    /// Squared slack voltage [p.u.²].
    #[serde(default = "default_v0")]
    pub v0: f64,
    pub germ: GermSpec,
    pub network: NetworkConfig,
    /// Named daily shapes, one value per period.
    #[serde(default)]
    pub profiles: BTreeMap<String, Vec<f64>>,
    pub slack: SlackCost,
    #[serde(default, rename = "injection", skip_serializing_if = "Vec::is_empty")]
    pub injections: Vec<InjectionConfig>,
    #[serde(default, rename = "flexgen", skip_serializing_if = "Vec::is_empty")]
    pub flexgens: Vec<FlexGenConfig>,
    #[serde(default, rename = "agent", skip_serializing_if = "Vec::is_empty")]
    pub agents: Vec<AgentConfig>,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// Voltage-magnitude bounds [p.u.], applied to every non-slack bus.
    #[serde(default = "default_v_min")]
    pub v_min: f64,
    #[serde(default = "default_v_max")]
    pub v_max: f64,
    #[serde(rename = "branch")]
    pub branches: Vec<BranchConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchConfig {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    pub f_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectionConfig {
    pub bus: usize,
    pub kind: InjectionKind,
    /// 0-based germ coordinate driving the uncertainty.
    pub germ: usize,
    /// `mean_t = peak · profiles[profile][t]` unless `mean` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peak: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    /// Standard deviation as a fraction of the mean; converted to a germ
    /// scale through the germ coordinate's standard deviation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_std: Option<f64>,
    /// Explicit germ scale per period, overrides `rel_std`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<Vec<f64>>,
    #[serde(default = "default_power_factor")]
    pub power_factor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlexGenConfig {
    pub bus: usize,
    pub p_min: f64,
    pub p_max: f64,
    /// Reactive box, `±p_max` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_max: Option<f64>,
    pub c: f64,
    pub c1: f64,
    pub c2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub bus: usize,
    /// Energy capacity [p.u.·h].
    pub e_cap: f64,
    /// Power capacity, `0.25·e_cap` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_cap: Option<f64>,
    /// Boundary energies, `e_cap / 2` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_init: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_end: Option<f64>,
    #[serde(default = "default_policies")]
    pub policies: Vec<Policy>,
}

impl AgentConfig {
    pub fn storage(&self) -> StorageSpec {
        let base = StorageSpec::with_capacity(self.e_cap);
        StorageSpec {
            p_cap: self.p_cap.unwrap_or(base.p_cap),
            e_init: self.e_init.unwrap_or(base.e_init),
            e_end: self.e_end.unwrap_or(base.e_end),
            ..base
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    /// Germ draws per (bus, t) for price distributions and DP tables.
    pub n_samples: usize,
    pub seed: u64,
    /// Sampled daily price paths for agent simulation.
    pub n_paths: usize,
    /// Draws per (bus, t) written to `prices_rt_samples.csv`.
    pub export_samples: usize,
    /// Germ paths checked by the AC load flow (0 disables the check).
    pub ac_samples: usize,
    pub soc_levels: usize,
    pub kappa: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            n_samples: 10_000,
            seed: 42,
            n_paths: 500,
            export_samples: 100,
            ac_samples: 200,
            soc_levels: agents::SOC_LEVELS,
            kappa: agents::KAPPA,
        }
    }
}

/// Reads a scenario file. A bare bundled name (`case1`…) that does not
/// exist on disk resolves to the bundled copy.
pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, ScenarioError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => match path.to_str().and_then(bundled) {
            Some(t) if !path.exists() => t.to_string(),
            _ => return Err(ScenarioError::Io { path: path.to_path_buf(), source: e }),
        },
    };
    parse_scenario(&text)
}

pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

impl ScenarioConfig {
    pub fn bundled(name: &str) -> Result<Self, ScenarioError> {
        parse_scenario(bundled(name).ok_or_else(|| invalid("name", format!("no bundled scenario `{name}`")))?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn bus_count(&self) -> usize {
        self.network.branches.len() + 1
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let nb = self.bus_count();
        let bus_ok = |bus: usize| bus >= 1 && bus < nb;
        if self.horizon == 0 {
            return Err(invalid("horizon", "must be positive"));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 0.5) {
            return Err(invalid("epsilon", format!("{} is outside (0, 0.5]", self.epsilon)));
        }
        self.germ.validate().map_err(|e| invalid("germ", e.to_string()))?;
        if !(self.network.v_min < self.network.v_max) {
            return Err(invalid("network.v_min", "must be below v_max"));
        }
        for (i, b) in self.network.branches.iter().enumerate() {
            for bus in [b.from, b.to] {
                if bus >= nb {
                    return Err(invalid(
                        format!("network.branch[{i}]"),
                        format!("bus {bus} does not exist (buses are 0..{})", nb - 1),
                    ));
                }
            }
        }
        for (name, p) in &self.profiles {
            if p.len() != self.horizon {
                return Err(invalid(format!("profiles.{name}"), format!("has {} values, horizon is {}", p.len(), self.horizon)));
            }
        }
        for (i, inj) in self.injections.iter().enumerate() {
            let field = format!("injection[{i}]");
            if !bus_ok(inj.bus) {
                return Err(invalid(field, format!("bus {} does not exist or is the slack", inj.bus)));
            }
            if inj.germ >= self.germ.dim() {
                return Err(invalid(field, format!("germ index {} out of range (germ has {})", inj.germ, self.germ.dim())));
            }
            if !(inj.power_factor > 0.0 && inj.power_factor <= 1.0) {
                return Err(invalid(field, "power_factor must be in (0, 1]"));
            }
            self.injection_mean(inj).map_err(|m| invalid(field.clone(), m))?;
            if let Some(s) = &inj.scale {
                if s.len() != self.horizon {
                    return Err(invalid(field, "scale must have one value per period"));
                }
            }
        }
        for (i, g) in self.flexgens.iter().enumerate() {
            if !bus_ok(g.bus) {
                return Err(invalid(format!("flexgen[{i}]"), format!("bus {} does not exist or is the slack", g.bus)));
            }
        }
        for (i, a) in self.agents.iter().enumerate() {
            let field = format!("agent[{i}]");
            if !bus_ok(a.bus) {
                return Err(invalid(field, format!("bus {} does not exist or is the slack", a.bus)));
            }
            a.storage().validate().map_err(|e| invalid(field.clone(), e.to_string()))?;
            if a.policies.is_empty() {
                return Err(invalid(field, "needs at least one policy"));
            }
        }
        if self.sampling.n_samples < 100 {
            return Err(invalid("sampling.n_samples", "at least 100 draws are needed"));
        }
        Ok(())
    }

    fn injection_mean(&self, inj: &InjectionConfig) -> Result<Vec<f64>, String> {
        match (&inj.mean, &inj.profile) {
            (Some(m), _) if m.len() == self.horizon => Ok(m.clone()),
            (Some(m), _) => Err(format!("mean has {} values, horizon is {}", m.len(), self.horizon)),
            (None, Some(name)) => {
                let shape = self.profiles.get(name).ok_or_else(|| format!("unknown profile `{name}`"))?;
                let peak = inj.peak.ok_or("profile needs a peak")?;
                Ok(shape.iter().map(|s| s * peak).collect())
            }
            (None, None) => Err("needs either mean or profile + peak".into()),
        }
    }

    pub fn build_network(&self) -> Result<RadialNetwork, ScenarioError> {
        let buses = (0..self.bus_count()).map(|i| Bus::new(i, self.network.v_min, self.network.v_max)).collect();
        let branches = self
            .network
            .branches
            .iter()
            .enumerate()
            .map(|(id, b)| Branch { id, from_bus: b.from, to_bus: b.to, r: b.r, x: b.x, f_max: b.f_max })
            .collect();
        RadialNetwork::build(buses, branches, self.v0).map_err(stage("network"))
    }

    pub fn build_problem(&self) -> Result<CcOpfProblem, ScenarioError> {
        self.validate()?;
        let network = Arc::new(self.build_network()?);
        let basis = Arc::new(PceBasis::new(self.germ.clone()).map_err(stage("basis"))?);
        let injections = self
            .injections
            .iter()
            .map(|inj| {
                let mean = self.injection_mean(inj).expect("validated");
                let std = self.germ.components[inj.germ].std();
                let scale = match (&inj.scale, inj.rel_std) {
                    (Some(s), _) => s.clone(),
                    (None, Some(rel)) => mean.iter().map(|m| rel * m / std).collect(),
                    (None, None) => vec![0.0; self.horizon],
                };
                UncertainInjection { bus: inj.bus, kind: inj.kind, mean, germ_index: inj.germ, scale, power_factor: inj.power_factor }
            })
            .collect();
        let flexgens = self
            .flexgens
            .iter()
            .map(|g| {
                let base = FlexGen::new(g.bus, g.p_min, g.p_max, g.c, g.c1, g.c2);
                FlexGen { q_min: g.q_min.unwrap_or(base.q_min), q_max: g.q_max.unwrap_or(base.q_max), ..base }
            })
            .collect();
        let problem = CcOpfProblem {
            network,
            basis,
            slack: self.slack,
            flexgens,
            injections,
            epsilon: self.epsilon,
            gamma_mode: self.gamma_mode,
            horizon: self.horizon,
        };
        problem.validate().map_err(stage("problem"))?;
        Ok(problem)
    }
}

/// Share of buses hosting a load and a PV plant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Density {
    pub load: f64,
    pub pv: f64,
}

impl Default for Density {
    fn default() -> Self {
        Self { load: 0.8, pv: 0.5 }
    }
}

const LOAD_SHAPE: [f64; 24] = [
    0.55, 0.50, 0.47, 0.45, 0.46, 0.52, 0.63, 0.75, 0.80, 0.78, 0.76, 0.76, 0.77, 0.75, 0.74, 0.76, 0.82, 0.92, 1.00,
    0.98, 0.92, 0.82, 0.70, 0.60,
];
const PV_SHAPE: [f64; 24] = [
    0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.02, 0.10, 0.25, 0.45, 0.65, 0.85, 1.00, 0.95, 0.80, 0.60, 0.40, 0.20, 0.06, 0.0,
    0.0, 0.0, 0.0, 0.0,
];

/// Random radial feeder for scaling studies: a uniform random recursive
/// tree behind one transformer, 20 kV cable impedances on a 10 MVA base,
/// loads and PV placed by `density`. Identical seeds give identical grids.
pub fn generate_synthetic_grid(n_buses: usize, seed: u64, density: Density) -> ScenarioConfig {
    let n_buses = n_buses.max(5);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut branches = vec![BranchConfig { from: 0, to: 1, r: 0.003, x: 0.048, f_max: 50.0 }];
    for bus in 2..n_buses {
        let parent = rng.gen_range(1..bus);
        let km: f64 = rng.gen_range(0.2..1.5);
        branches.push(BranchConfig { from: parent, to: bus, r: 0.0125 * km, x: 0.018 * km, f_max: 10.0 });
    }
    // aggregate peak ≈ 0.8 p.u. regardless of size
    let per_bus = 0.8 / n_buses as f64;
    let mut injections = Vec::new();
    for bus in 1..n_buses {
        if rng.gen_bool(density.load.clamp(0.0, 1.0)) {
            let gaussian = rng.gen_bool(0.5);
            injections.push(InjectionConfig {
                bus,
                kind: InjectionKind::Load,
                germ: if gaussian { 0 } else { 1 },
                profile: Some("load".into()),
                peak: Some(per_bus * rng.gen_range(0.5..1.5)),
                mean: None,
                rel_std: Some(0.1),
                scale: None,
                power_factor: 0.95,
            });
        }
        if rng.gen_bool(density.pv.clamp(0.0, 1.0)) {
            injections.push(InjectionConfig {
                bus,
                kind: InjectionKind::Pv,
                germ: 2,
                profile: Some("pv".into()),
                peak: Some(per_bus * rng.gen_range(0.3..1.0)),
                mean: None,
                rel_std: Some(0.15),
                scale: None,
                power_factor: 1.0,
            });
        }
    }
    let flexgens = vec![FlexGenConfig {
        bus: n_buses / 2,
        p_min: 0.0,
        p_max: 0.3,
        q_min: None,
        q_max: None,
        c: 10.0,
        c1: 5.0,
        c2: 50.0,
    }];
    ScenarioConfig {
        name: format!("synthetic-{n_buses}-{seed}"),
        horizon: 24,
        epsilon: 0.05,
        gamma_mode: GammaMode::Gaussian,
        v0: 1.0,
        germ: GermSpec::new(vec![GermComponent::gaussian(), GermComponent::beta(5.0, 2.0), GermComponent::beta(4.0, 2.0)], 2),
        network: NetworkConfig { v_min: 0.9, v_max: 1.1, branches },
        profiles: BTreeMap::from([("load".into(), LOAD_SHAPE.to_vec()), ("pv".into(), PV_SHAPE.to_vec())]),
        slack: SlackCost { c: 1.0, c1: 20.0, c2: 100.0 },
        injections,
        flexgens,
        agents: Vec::new(),
        sampling: SamplingConfig { ac_samples: 0, n_paths: 0, ..SamplingConfig::default() },
        output_dir: None,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StageTime {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TimestepReport {
    pub t: usize,
    pub status: SolveStatus,
    pub objective: f64,
    pub solve_time: f64,
    pub iterations: u32,
    pub relative_gap: f64,
    pub equality_residual: f64,
    pub binding: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AgentReport {
    pub bus: usize,
    pub mean_profit: BTreeMap<String, f64>,
    pub final_regret: BTreeMap<String, f64>,
    pub empty_conditionals: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AcReport {
    pub samples: usize,
    pub not_converged: usize,
    /// Largest upper-bound violation rate over buses and periods.
    pub max_upper_rate: f64,
    pub max_lower_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunReport {
    pub scenario: String,
    pub buses: usize,
    pub basis_size: usize,
    pub objective: f64,
    /// Sum of the conic solver's own timings.
    pub solver_time: f64,
    pub total_time: f64,
    pub stages: Vec<StageTime>,
    pub timesteps: Vec<TimestepReport>,
    pub agents: Vec<AgentReport>,
    pub ac: Option<AcReport>,
    /// Every emitted file, relative to the output directory.
    pub files: Vec<String>,
}

struct Timer {
    start: Instant,
    stages: Vec<StageTime>,
}

impl Timer {
    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.stages.push(StageTime { stage: stage.into(), seconds: (now - self.start).as_secs_f64() });
        self.start = now;
    }
}

fn create(out: &Path, rel: &str, files: &mut Vec<String>) -> Result<BufWriter<File>, ScenarioError> {
    let path = out.join(rel);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| ScenarioError::Io { path: dir.to_path_buf(), source: e })?;
    }
    let f = File::create(&path).map_err(|e| ScenarioError::Io { path: path.clone(), source: e })?;
    files.push(rel.to_string());
    Ok(BufWriter::new(f))
}

/// Agent runs for every policy on paths `0..n`; hindsight is always
/// included so regret can be computed.
pub fn simulate_agent(
    market: &MarketSolution,
    agent: &AgentConfig,
    sampling: &SamplingConfig,
    n_paths: usize,
) -> Result<(agents::DpTables, Vec<Vec<AgentRun>>), ScenarioError> {
    let spec = agent.storage();
    let samples = (0..market.horizon())
        .map(|t| market.delta_samples(agent.bus, t, sampling.n_samples, sampling.seed))
        .collect::<Result<Vec<_>, _>>()
        .map_err(stage("agent prices"))?;
    let tables = agents::build_dp_tables(&spec, &samples, sampling.soc_levels, sampling.kappa).map_err(stage("dp tables"))?;
    let mut policies = agent.policies.clone();
    if !policies.contains(&Policy::Hindsight) {
        policies.push(Policy::Hindsight);
    }
    let runs = (0..n_paths as u64)
        .into_par_iter()
        .map(|path| {
            let germs = market.germ_path(path, sampling.seed);
            let prices = market.delta_path(agent.bus, &germs).map_err(stage("agent prices"))?;
            policies
                .iter()
                .map(|p| match p {
                    Policy::RuleBased => agents::rule_based_policy(&spec, &prices),
                    Policy::Dp => agents::dp_policy(&spec, &tables, &prices),
                    Policy::Hindsight => agents::hindsight_policy(&spec, &prices, sampling.soc_levels),
                })
                .collect::<Result<Vec<_>, _>>()
                .map_err(stage("agents"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((tables, runs))
}

/// Runs the whole pipeline and writes every artifact under `out`.
pub fn run(config: &ScenarioConfig, out: &Path) -> Result<RunReport, ScenarioError> {
    let total = Instant::now();
    let mut timer = Timer { start: total, stages: Vec::new() };
    let mut files = Vec::new();
    let sampling = &config.sampling;

    let problem = config.build_problem()?;
    let network = problem.network.clone();
    timer.lap("build");

    let solution = ccopf::solve(&problem).map_err(stage("clearing"))?;
    let report = ccopf::feasibility_report(&solution);
    timer.lap("clear");

    let market = extract_plmps(&problem, solution).map_err(stage("price extraction"))?;
    timer.lap("extract");

    market
        .write_day_ahead_csv(create(out, "prices_da.csv", &mut files)?)
        .map_err(stage("prices_da.csv"))?;
    market
        .write_realtime_samples_csv(create(out, "prices_rt_samples.csv", &mut files)?, sampling.export_samples, sampling.seed)
        .map_err(stage("prices_rt_samples.csv"))?;
    market
        .write_quantiles_csv(create(out, "price_quantiles.csv", &mut files)?, sampling.n_samples, sampling.seed)
        .map_err(stage("price_quantiles.csv"))?;
    {
        let mut w = csv::Writer::from_writer(create(out, "binding.csv", &mut files)?);
        w.write_record(["t", "constraint", "element", "margin", "mean_margin"]).map_err(stage("binding.csv"))?;
        for e in report.binding() {
            let kind = serde_json::to_value(e.kind).map_err(stage("binding.csv"))?;
            w.write_record([
                e.t.to_string(),
                kind.as_str().unwrap_or_default().to_string(),
                e.element.to_string(),
                e.margin.to_string(),
                e.mean_margin.to_string(),
            ])
            .map_err(stage("binding.csv"))?;
        }
        w.flush().map_err(stage("binding.csv"))?;
    }
    timer.lap("prices");

    let n_sim = sampling.n_paths.max(sampling.ac_samples);
    let mut agent_reports = Vec::new();
    let mut overlays = Vec::new();
    for (i, agent) in config.agents.iter().enumerate() {
        let (tables, runs) = simulate_agent(&market, agent, sampling, n_sim)?;
        let regret_runs = &runs[..sampling.n_paths.min(runs.len())];
        let dir = format!("agent{i}_bus{}", agent.bus);
        agents::write_runs_csv(create(out, &format!("{dir}/agent_runs.csv"), &mut files)?, regret_runs)
            .map_err(stage("agent_runs.csv"))?;
        let curves = agents::regret_curves(regret_runs).map_err(stage("regret"))?;
        agents::write_regret_csv(create(out, &format!("{dir}/regret.csv"), &mut files)?, &curves).map_err(stage("regret.csv"))?;
        let m = regret_runs.len().max(1) as f64;
        let policies: Vec<Policy> = runs.first().map(|r| r.iter().map(|x| x.policy).collect()).unwrap_or_default();
        agent_reports.push(AgentReport {
            bus: agent.bus,
            mean_profit: policies
                .iter()
                .enumerate()
                .map(|(j, p)| (p.to_string(), regret_runs.iter().map(|r| r[j].profit()).sum::<f64>() / m))
                .collect(),
            final_regret: curves.iter().map(|c| (c.policy.to_string(), c.final_regret())).collect(),
            empty_conditionals: tables.empty_conditionals.clone(),
        });
        // the grid sees the first non-oracle policy the agent runs
        if let Some(j) = policies.iter().position(|p| *p == Policy::Dp).or_else(|| policies.iter().position(|p| *p != Policy::Hindsight)) {
            overlays.push(AgentOverlay {
                bus: agent.bus,
                setpoints: runs[..sampling.ac_samples].iter().map(|r| r[j].setpoints.clone()).collect(),
            });
        }
    }
    timer.lap("agents");

    let ac = if sampling.ac_samples > 0 {
        let opts = ValidationOptions { samples: sampling.ac_samples, seed: sampling.seed, times: None };
        let v = validate_solution(&network, &market, &opts, &overlays).map_err(stage("AC validation"))?;
        v.write_csv(&network, create(out, "ac_validation.csv", &mut files)?).map_err(stage("ac_validation.csv"))?;
        let rate = |upper: bool| {
            v.times
                .iter()
                .flat_map(|&t| (1..=network.n()).map(move |b| (t, b)))
                .filter_map(|(t, b)| if upper { v.upper_rate(t, b) } else { v.lower_rate(t, b) })
                .fold(0.0, f64::max)
        };
        Some(AcReport { samples: v.samples, not_converged: v.not_converged, max_upper_rate: rate(true), max_lower_rate: rate(false) })
    } else {
        None
    };
    timer.lap("ac");

    let timesteps = market
        .opf
        .timesteps
        .iter()
        .map(|ts| TimestepReport {
            t: ts.t,
            status: ts.status,
            objective: ts.objective,
            solve_time: ts.solve_time,
            iterations: ts.iterations,
            relative_gap: ts.relative_gap,
            equality_residual: ts.equality_residual,
            binding: report
                .binding_at(ts.t)
                .map(|e| format!("{}:{}", serde_json::to_value(e.kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(), e.element))
                .collect(),
        })
        .collect();
    files.push("run_report.json".into());
    let mut rr = RunReport {
        scenario: config.name.clone(),
        buses: config.bus_count(),
        basis_size: market.basis.k(),
        objective: market.opf.objective,
        solver_time: market.opf.solver_time,
        total_time: 0.0,
        stages: Vec::new(),
        timesteps,
        agents: agent_reports,
        ac,
        files,
    };
    timer.lap("report");
    rr.stages = timer.stages;
    rr.total_time = total.elapsed().as_secs_f64();
    let path = out.join("run_report.json");
    let f = File::create(&path).map_err(|e| ScenarioError::Io { path: path.clone(), source: e })?;
    serde_json::to_writer_pretty(BufWriter::new(f), &rr).map_err(stage("run_report.json"))?;
    Ok(rr)
}
