//! Storage prosumers arbitraging the delta-price `π_Δ = π_RT − π_DA`.
//!
//! Setpoints are positive when the battery discharges into the grid, and
//! the revenue of a period is `p·π_Δ·Δt`.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("final step needs |p| = {needed}, above the power capacity {p_cap}")]
    InfeasibleBoundary { needed: f64, p_cap: f64 },
    #[error("invalid storage: {0}")]
    InvalidSpec(String),
    #[error("price path has {got} periods, expected {expected}")]
    HorizonMismatch { expected: usize, got: usize },
    #[error("policy runs disagree on paths: {0}")]
    PathMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StorageSpec {
    /// Energy capacity [p.u.·h].
    pub e_cap: f64,
    /// Power capacity [p.u.].
    pub p_cap: f64,
    pub e_init: f64,
    pub e_end: f64,
    /// Market period [h].
    pub dt: f64,
}

impl StorageSpec {
    /// C-rating 0.25, half-full at both ends of the day, hourly periods.
    pub fn with_capacity(e_cap: f64) -> Self {
        Self { e_cap, p_cap: 0.25 * e_cap, e_init: 0.5 * e_cap, e_end: 0.5 * e_cap, dt: 1.0 }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let ok = self.e_cap >= 0.0
            && self.p_cap >= 0.0
            && self.dt > 0.0
            && (0.0..=self.e_cap).contains(&self.e_init)
            && (0.0..=self.e_cap).contains(&self.e_end);
        if ok {
            Ok(())
        } else {
            Err(AgentError::InvalidSpec(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    RuleBased,
    Dp,
    Hindsight,
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::RuleBased => "rule",
            Policy::Dp => "dp",
            Policy::Hindsight => "hindsight",
        })
    }
}

/// One policy simulated along one realized price path.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentRun {
    pub policy: Policy,
    /// Power setpoint per period, positive when discharging.
    pub setpoints: Vec<f64>,
    /// Energy after each period's action; `soc[t]` follows `setpoints[t]`.
    pub soc: Vec<f64>,
    /// Revenue per period.
    pub revenue: Vec<f64>,
}

impl AgentRun {
    fn from_setpoints(policy: Policy, spec: &StorageSpec, prices: &[f64], setpoints: Vec<f64>) -> Self {
        let mut e = spec.e_init;
        let mut soc = Vec::with_capacity(setpoints.len());
        let mut revenue = Vec::with_capacity(setpoints.len());
        for (p, pi) in setpoints.iter().zip(prices) {
            e -= p * spec.dt;
            soc.push(e);
            revenue.push(p * pi * spec.dt);
        }
        Self { policy, setpoints, soc, revenue }
    }

    pub fn profit(&self) -> f64 {
        self.revenue.iter().sum()
    }

    pub fn cumulative_profit(&self) -> Vec<f64> {
        self.revenue
            .iter()
            .scan(0.0, |acc, r| {
                *acc += r;
                Some(*acc)
            })
            .collect()
    }
}

fn greedy(spec: &StorageSpec, e: f64, pi: f64) -> f64 {
    if pi >= 0.0 {
        (e / spec.dt).min(spec.p_cap)
    } else {
        -((spec.e_cap - e) / spec.dt).min(spec.p_cap)
    }
}

/// Greedy arbitrage with a two-step return to `e_end`.
pub fn rule_based_policy(spec: &StorageSpec, prices: &[f64]) -> Result<AgentRun, AgentError> {
    spec.validate()?;
    let h = prices.len();
    let reach = spec.p_cap * spec.dt;
    let mut e = spec.e_init;
    let mut setpoints = Vec::with_capacity(h);
    for (t, &pi) in prices.iter().enumerate() {
        let p = if t + 1 == h {
            let p = (e - spec.e_end) / spec.dt;
            if p.abs() > spec.p_cap * (1.0 + 1e-12) + 1e-12 {
                return Err(AgentError::InfeasibleBoundary { needed: p.abs(), p_cap: spec.p_cap });
            }
            p
        } else if t + 2 == h {
            if e < spec.e_init - reach {
                -spec.p_cap
            } else if e > spec.e_init + reach {
                spec.p_cap
            } else {
                // stay within one step of the final energy
                let lo = (e - spec.e_end - reach) / spec.dt;
                let hi = (e - spec.e_end + reach) / spec.dt;
                greedy(spec, e, pi).clamp(lo, hi).clamp(-spec.p_cap, spec.p_cap)
            }
        } else {
            greedy(spec, e, pi)
        };
        e -= p * spec.dt;
        setpoints.push(p);
    }
    Ok(AgentRun::from_setpoints(Policy::RuleBased, spec, prices, setpoints))
}

/// Uniform energy grid shared by the DP and hindsight controllers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SocGrid {
    pub levels: usize,
    pub step: f64,
    /// Largest move in grid steps allowed by `p_cap·Δt`.
    pub max_move: usize,
    pub init: usize,
    pub end: usize,
}

impl SocGrid {
    pub fn new(spec: &StorageSpec, levels: usize) -> Self {
        let levels = levels.max(1);
        let step = if levels > 1 { spec.e_cap / (levels - 1) as f64 } else { 0.0 };
        let (max_move, init, end) = if step > 0.0 {
            (
                ((spec.p_cap * spec.dt / step) + 1e-9).floor() as usize,
                (spec.e_init / step).round() as usize,
                (spec.e_end / step).round() as usize,
            )
        } else {
            (0, 0, 0)
        };
        Self { levels, step, max_move, init, end }
    }

    pub fn energy(&self, i: usize) -> f64 {
        i as f64 * self.step
    }

    /// Reachable next states ordered by increasing move size, discharge
    /// before charge at equal size.
    pub fn moves(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let top = self.levels - 1;
        std::iter::once(i).chain((1..=self.max_move).flat_map(move |d| {
            let down = i.checked_sub(d);
            let up = if i + d <= top { Some(i + d) } else { None };
            down.into_iter().chain(up)
        }))
    }

    /// Revenue of moving `i → j` at price `pi` (energy sold times price).
    pub fn revenue(&self, i: usize, j: usize, pi: f64) -> f64 {
        (i as f64 - j as f64) * self.step * pi
    }
}

/// Default number of SOC levels.
pub const SOC_LEVELS: usize = 101;
/// Default terminal penalty for missing `e_end`.
pub const KAPPA: f64 = 1e6;

/// Two-point price model and value functions of the DP controller.
#[derive(Debug, Clone)]
pub struct DpTables {
    pub grid: SocGrid,
    /// `Pr(π_Δ > 0)` per period.
    pub q: Vec<f64>,
    /// `E[π_Δ | π_Δ > 0]` per period.
    pub v_up: Vec<f64>,
    /// `E[π_Δ | π_Δ ≤ 0]` per period.
    pub v_down: Vec<f64>,
    /// `values[t][i]`: expected value from period `t` at level `i`;
    /// `values[H]` is the terminal condition.
    pub values: Vec<Vec<f64>>,
    /// Periods where one conditional set was empty (its value set to 0).
    pub empty_conditionals: Vec<usize>,
    pub kappa: f64,
}

impl DpTables {
    pub fn horizon(&self) -> usize {
        self.q.len()
    }
}

fn terminal(grid: &SocGrid, kappa: f64) -> Vec<f64> {
    (0..grid.levels).map(|i| if i == grid.end { 0.0 } else { -kappa }).collect()
}

fn best_value(grid: &SocGrid, next: &[f64], i: usize, pi: f64) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for j in grid.moves(i) {
        let v = grid.revenue(i, j, pi) + next[j];
        if v > best {
            best = v;
        }
    }
    best
}

fn best_move(grid: &SocGrid, next: &[f64], i: usize, pi: f64) -> usize {
    let mut best = (f64::NEG_INFINITY, i);
    for j in grid.moves(i) {
        let v = grid.revenue(i, j, pi) + next[j];
        if v > best.0 {
            best = (v, j);
        }
    }
    best.1
}

/// Builds the two-point model from per-period delta-price samples and runs
/// the backward recursion.
pub fn build_dp_tables(spec: &StorageSpec, samples: &[Vec<f64>], levels: usize, kappa: f64) -> Result<DpTables, AgentError> {
    spec.validate()?;
    let mut q = Vec::with_capacity(samples.len());
    let mut v_up = Vec::with_capacity(samples.len());
    let mut v_down = Vec::with_capacity(samples.len());
    let mut empty = Vec::new();
    for (t, s) in samples.iter().enumerate() {
        let (up, down): (Vec<f64>, Vec<f64>) = s.iter().partition(|&&x| x > 0.0);
        let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        if (up.is_empty() || down.is_empty()) && !s.is_empty() {
            empty.push(t);
        }
        q.push(if s.is_empty() { 0.0 } else { up.len() as f64 / s.len() as f64 });
        v_up.push(mean(&up));
        v_down.push(mean(&down));
    }
    Ok(tables_from_model(spec, q, v_up, v_down, levels, kappa, empty))
}

/// Backward recursion for an explicit two-point model.
pub fn tables_from_model(
    spec: &StorageSpec,
    q: Vec<f64>,
    v_up: Vec<f64>,
    v_down: Vec<f64>,
    levels: usize,
    kappa: f64,
    empty_conditionals: Vec<usize>,
) -> DpTables {
    let grid = SocGrid::new(spec, levels);
    let h = q.len();
    let mut values = vec![Vec::new(); h + 1];
    values[h] = terminal(&grid, kappa);
    for t in (0..h).rev() {
        let next = &values[t + 1];
        let row = (0..grid.levels)
            .map(|i| q[t] * best_value(&grid, next, i, v_up[t]) + (1.0 - q[t]) * best_value(&grid, next, i, v_down[t]))
            .collect();
        values[t] = row;
    }
    DpTables { grid, q, v_up, v_down, values, empty_conditionals, kappa }
}

/// Receding-horizon DP: acts on the realized price of the current period
/// and the expected continuation of the tables.
pub fn dp_policy(spec: &StorageSpec, tables: &DpTables, prices: &[f64]) -> Result<AgentRun, AgentError> {
    spec.validate()?;
    if prices.len() != tables.horizon() {
        return Err(AgentError::HorizonMismatch { expected: tables.horizon(), got: prices.len() });
    }
    let grid = &tables.grid;
    let mut i = grid.init;
    let mut setpoints = Vec::with_capacity(prices.len());
    for (t, &pi) in prices.iter().enumerate() {
        let j = best_move(grid, &tables.values[t + 1], i, pi);
        setpoints.push((i as f64 - j as f64) * grid.step / spec.dt);
        i = j;
    }
    Ok(AgentRun::from_setpoints(Policy::Dp, spec, prices, setpoints))
}

/// Perfect-foresight optimum over the same grid, ending exactly at `e_end`.
pub fn hindsight_policy(spec: &StorageSpec, prices: &[f64], levels: usize) -> Result<AgentRun, AgentError> {
    spec.validate()?;
    let grid = SocGrid::new(spec, levels);
    let h = prices.len();
    let mut values = vec![Vec::new(); h + 1];
    values[h] = (0..grid.levels).map(|i| if i == grid.end { 0.0 } else { f64::NEG_INFINITY }).collect();
    for t in (0..h).rev() {
        values[t] = (0..grid.levels).map(|i| best_value(&grid, &values[t + 1], i, prices[t])).collect();
    }
    if !values[0][grid.init].is_finite() {
        return Err(AgentError::InfeasibleBoundary { needed: (spec.e_init - spec.e_end).abs() / (h as f64 * spec.dt), p_cap: spec.p_cap });
    }
    let mut i = grid.init;
    let mut setpoints = Vec::with_capacity(h);
    for (t, &pi) in prices.iter().enumerate() {
        let j = best_move(&grid, &values[t + 1], i, pi);
        setpoints.push((i as f64 - j as f64) * grid.step / spec.dt);
        i = j;
    }
    Ok(AgentRun::from_setpoints(Policy::Hindsight, spec, prices, setpoints))
}

/// Average cumulative regret of one policy against hindsight.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretCurve {
    pub policy: Policy,
    pub values: Vec<f64>,
}

impl RegretCurve {
    pub fn final_regret(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }
}

/// `regret_t = mean over paths of Σ_{τ≤t} (hindsight_τ − policy_τ)`.
/// `runs[p]` holds every policy's run on path `p`.
pub fn regret_curves(runs: &[Vec<AgentRun>]) -> Result<Vec<RegretCurve>, AgentError> {
    let Some(first) = runs.first() else {
        return Ok(Vec::new());
    };
    let policies: Vec<Policy> = first.iter().map(|r| r.policy).collect();
    let h = first.first().map_or(0, |r| r.revenue.len());
    let hindsight_idx = policies
        .iter()
        .position(|p| *p == Policy::Hindsight)
        .ok_or_else(|| AgentError::PathMismatch("no hindsight run to compare against".into()))?;
    let mut sums = vec![vec![0.0; h]; policies.len()];
    for (path, path_runs) in runs.iter().enumerate() {
        if path_runs.len() != policies.len()
            || path_runs.iter().zip(&policies).any(|(r, p)| r.policy != *p || r.revenue.len() != h)
        {
            return Err(AgentError::PathMismatch(format!("path {path} has a different set of runs")));
        }
        let oracle = path_runs[hindsight_idx].cumulative_profit();
        for (s, run) in sums.iter_mut().zip(path_runs) {
            for ((acc, o), c) in s.iter_mut().zip(&oracle).zip(run.cumulative_profit()) {
                *acc += o - c;
            }
        }
    }
    let m = runs.len() as f64;
    Ok(policies
        .into_iter()
        .zip(sums)
        .map(|(policy, s)| RegretCurve { policy, values: s.into_iter().map(|v| v / m).collect() })
        .collect())
}

/// `path_id,policy,t,p,soc,profit_cum`.
pub fn write_runs_csv<W: Write>(out: W, runs: &[Vec<AgentRun>]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["path_id", "policy", "t", "p", "soc", "profit_cum"])?;
    for (path, path_runs) in runs.iter().enumerate() {
        for run in path_runs {
            for (t, ((p, soc), cum)) in run.setpoints.iter().zip(&run.soc).zip(run.cumulative_profit()).enumerate() {
                w.write_record([
                    path.to_string(),
                    run.policy.to_string(),
                    t.to_string(),
                    p.to_string(),
                    soc.to_string(),
                    cum.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// `policy,t,avg_cum_regret`.
pub fn write_regret_csv<W: Write>(out: W, curves: &[RegretCurve]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["policy", "t", "avg_cum_regret"])?;
    for c in curves {
        for (t, v) in c.values.iter().enumerate() {
            w.write_record([c.policy.to_string(), t.to_string(), v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn spec() -> StorageSpec {
        StorageSpec::with_capacity(1.0)
    }

    fn check_feasible(spec: &StorageSpec, run: &AgentRun) {
        for (p, e) in run.setpoints.iter().zip(&run.soc) {
            assert!(p.abs() <= spec.p_cap + 1e-12, "{run:?}");
            assert!(*e >= -1e-12 && *e <= spec.e_cap + 1e-12, "{run:?}");
        }
        assert_abs_diff_eq!(*run.soc.last().unwrap(), spec.e_end, epsilon = 1e-9);
    }

    #[test]
    fn greedy_first_step() {
        let mut prices = vec![0.0; 24];
        prices[0] = 1.0;
        let run = rule_based_policy(&spec(), &prices).unwrap();
        assert_eq!(run.setpoints[0], 0.25);
    }

    #[test]
    fn zero_prices_discharge_then_restore() {
        let s = spec();
        let run = rule_based_policy(&s, &[0.0; 24]).unwrap();
        assert_eq!(&run.setpoints[..3], &[0.25, 0.25, 0.0]);
        assert_eq!(run.soc[21], 0.0);
        assert_eq!(&run.setpoints[22..], &[-0.25, -0.25]);
        check_feasible(&s, &run);
        assert_eq!(run.profit(), 0.0);
    }

    #[test]
    fn negative_prices_saturate() {
        let s = spec();
        let run = rule_based_policy(&s, &[-1.0; 24]).unwrap();
        assert_eq!(run.soc[1], 1.0);
        assert!(run.soc[2..22].iter().all(|&e| e == 1.0));
        check_feasible(&s, &run);
        // buying 0.5 at −1 earns 0.5, the forced sales at −1 cost 0.5
        assert_abs_diff_eq!(run.profit(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn infeasible_boundary() {
        let s = StorageSpec { e_cap: 1.0, p_cap: 0.1, e_init: 0.5, e_end: 0.0, dt: 1.0 };
        assert!(matches!(rule_based_policy(&s, &[1.0, 1.0]), Err(AgentError::InfeasibleBoundary { .. })));
    }

    #[test]
    fn dp_idles_on_zero_prices() {
        let s = spec();
        let tables = build_dp_tables(&s, &vec![vec![0.0; 50]; 24], SOC_LEVELS, KAPPA).unwrap();
        assert_eq!(tables.q, vec![0.0; 24]);
        let run = dp_policy(&s, &tables, &[0.0; 24]).unwrap();
        assert!(run.setpoints.iter().all(|&p| p == 0.0));
        assert_eq!(*run.soc.last().unwrap(), 0.5);
    }

    #[test]
    fn dp_with_large_kappa_returns_to_end_level() {
        let s = spec();
        let samples: Vec<Vec<f64>> = (0..24).map(|t| vec![-(t as f64) - 1.0, t as f64 + 2.0, 0.5]).collect();
        let tables = build_dp_tables(&s, &samples, SOC_LEVELS, KAPPA).unwrap();
        for prices in [vec![5.0; 24], vec![-5.0; 24], (0..24).map(|t| (t as f64).sin() * 3.0).collect()] {
            let run = dp_policy(&s, &tables, &prices).unwrap();
            check_feasible(&s, &run);
        }
    }

    #[test]
    fn empty_conditional_sets_value_zero() {
        let tables = build_dp_tables(&spec(), &[vec![-1.0, -2.0]], 11, KAPPA).unwrap();
        assert_eq!((tables.q[0], tables.v_up[0], tables.v_down[0]), (0.0, 0.0, -1.5));
        assert_eq!(tables.empty_conditionals, vec![0]);
    }

    #[test]
    fn degenerate_grid_has_zero_profit() {
        let s = StorageSpec::with_capacity(0.0);
        let tables = build_dp_tables(&s, &vec![vec![1.0, -1.0]; 24], 1, KAPPA).unwrap();
        let run = dp_policy(&s, &tables, &[3.0; 24]).unwrap();
        assert_eq!(run.profit(), 0.0);
    }

    #[test]
    fn hindsight_spike() {
        let s = spec();
        let mut prices = vec![0.0; 24];
        prices[10] = 1.0;
        let run = hindsight_policy(&s, &prices, SOC_LEVELS).unwrap();
        assert_abs_diff_eq!(run.profit(), s.p_cap * s.dt, epsilon = 1e-12);
        assert_abs_diff_eq!(run.setpoints[10], s.p_cap, epsilon = 1e-12);
        check_feasible(&s, &run);
        assert_eq!(hindsight_policy(&s, &[0.0; 24], SOC_LEVELS).unwrap().profit(), 0.0);
    }

    /// Exhaustive search over every action sequence.
    fn brute_force_hindsight(grid: &SocGrid, prices: &[f64], i: usize) -> f64 {
        match prices.split_first() {
            None => {
                if i == grid.end {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            Some((&pi, rest)) => grid
                .moves(i)
                .map(|j| grid.revenue(i, j, pi) + brute_force_hindsight(grid, rest, j))
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    #[test]
    fn hindsight_matches_exhaustive_search() {
        let s = spec();
        let prices = [0.3, -1.2, 2.5, -0.1, 0.7];
        let grid = SocGrid::new(&s, 11);
        let run = hindsight_policy(&s, &prices, 11).unwrap();
        assert_abs_diff_eq!(run.profit(), brute_force_hindsight(&grid, &prices, grid.init), epsilon = 1e-12);
    }

    #[test]
    fn regret_of_hindsight_is_zero() {
        let s = spec();
        let prices = [0.5, -0.5, 1.0, 0.0];
        let runs = vec![vec![
            hindsight_policy(&s, &prices, SOC_LEVELS).unwrap(),
            rule_based_policy(&s, &prices).unwrap(),
        ]];
        let curves = regret_curves(&runs).unwrap();
        assert!(curves[0].values.iter().all(|&v| v == 0.0));
        assert!(curves[1].final_regret() >= -1e-12);
        let bad = vec![runs[0].clone(), vec![runs[0][0].clone()]];
        assert!(matches!(regret_curves(&bad), Err(AgentError::PathMismatch(_))));
    }

    proptest! {
        #[test]
        fn policies_are_feasible_and_dominated(prices in proptest::collection::vec(-5.0f64..5.0, 24)) {
            let s = spec();
            let samples: Vec<Vec<f64>> = (0..24).map(|t| vec![-1.0 - t as f64 * 0.1, 0.5, 1.5]).collect();
            let tables = build_dp_tables(&s, &samples, SOC_LEVELS, KAPPA).unwrap();
            let rule = rule_based_policy(&s, &prices).unwrap();
            let dp = dp_policy(&s, &tables, &prices).unwrap();
            let hs = hindsight_policy(&s, &prices, SOC_LEVELS).unwrap();
            for run in [&rule, &dp, &hs] {
                check_feasible(&s, run);
            }
            prop_assert!(hs.profit() >= dp.profit() - 1e-9);
            prop_assert!(hs.profit() >= rule.profit() - 1e-9);
        }
    }
}
