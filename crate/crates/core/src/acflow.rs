//! Exact AC load flow on radial grids by backward-forward sweep, used to
//! check the lossless lindistflow voltages after clearing.

use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::market::MarketSolution;
use crate::netmodel::RadialNetwork;

pub const MISMATCH_TOL: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AcFlowError {
    #[error("sweep did not converge after {iterations} iterations (mismatch {mismatch:e})")]
    NotConverged { iterations: usize, mismatch: f64 },
    #[error("expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("agent overlay at bus {0} is not a load bus")]
    InvalidOverlay(usize),
    #[error("unknown timestep {0}")]
    UnknownTimestep(usize),
    #[error(transparent)]
    Pce(#[from] crate::pce::PceError),
}

/// Converged AC operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct AcState {
    /// Complex voltage per bus, slack included at index 0.
    pub voltages: Vec<Complex64>,
    /// Current on each branch, flowing parent → child.
    pub currents: Vec<Complex64>,
    /// `Σ r·|J|²` over all branches.
    pub losses: f64,
    /// Complex power delivered by the slack.
    pub slack_power: Complex64,
    pub iterations: usize,
    pub mismatch: f64,
    pub converged: bool,
}

impl AcState {
    pub fn v_sq(&self, bus: usize) -> f64 {
        self.voltages[bus].norm_sqr()
    }

    /// Complex injection at every non-slack bus implied by voltages and
    /// branch currents (KCL at each bus).
    pub fn injections(&self, network: &RadialNetwork) -> Vec<Complex64> {
        let mut out_current = vec![Complex64::new(0.0, 0.0); network.n() + 1];
        for (l, br) in network.branches().iter().enumerate() {
            out_current[br.from_bus] += self.currents[l];
            out_current[br.to_bus] -= self.currents[l];
        }
        (1..=network.n()).map(|j| self.voltages[j] * out_current[j].conj()).collect()
    }
}

/// Constant-power load flow. `injections[j]` is the net complex power
/// injected at bus `j + 1` (negative real part for consumption); `v0` is the
/// squared slack voltage.
pub fn backward_forward_sweep(
    network: &RadialNetwork,
    injections: &[Complex64],
    v0: f64,
) -> Result<AcState, AcFlowError> {
    let n = network.n();
    if injections.len() != n {
        return Err(AcFlowError::DimensionMismatch { expected: n, got: injections.len() });
    }
    let branches = network.branches();
    let order = network.bfs_order();
    let z: Vec<Complex64> = branches.iter().map(|b| Complex64::new(b.r, b.x)).collect();
    let slack = Complex64::new(v0.sqrt(), 0.0);
    let mut v = vec![slack; n + 1];
    let mut j = vec![Complex64::new(0.0, 0.0); n];
    let mut mismatch = f64::INFINITY;

    for it in 1..=MAX_ITERATIONS {
        // backward: branch current = current drawn by the subtree below it
        for &bus in order.iter().rev() {
            let Some(l) = network.feeding_branch(bus) else { continue };
            let drawn = -(injections[bus - 1] / v[bus]).conj();
            j[l] = drawn;
        }
        for &bus in order.iter().rev() {
            let Some(l) = network.feeding_branch(bus) else { continue };
            let parent = branches[l].from_bus;
            if let Some(pl) = network.feeding_branch(parent) {
                let add = j[l];
                j[pl] += add;
            }
        }
        // forward: voltage drops from the slack outwards
        for &bus in order {
            let Some(l) = network.feeding_branch(bus) else { continue };
            v[bus] = v[branches[l].from_bus] - z[l] * j[l];
        }
        let state = finish(network, &v, &j, it, 0.0);
        mismatch = state
            .injections(network)
            .iter()
            .zip(injections)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, |m, d| if d.is_nan() { f64::NAN } else { m.max(d) });
        if !mismatch.is_finite() {
            return Err(AcFlowError::NotConverged { iterations: it, mismatch });
        }
        if mismatch < MISMATCH_TOL {
            return Ok(AcState { mismatch, converged: true, ..state });
        }
    }
    Err(AcFlowError::NotConverged { iterations: MAX_ITERATIONS, mismatch })
}

fn finish(network: &RadialNetwork, v: &[Complex64], j: &[Complex64], iterations: usize, mismatch: f64) -> AcState {
    let branches = network.branches();
    let losses = branches.iter().zip(j).map(|(b, c)| b.r * c.norm_sqr()).sum();
    let from_slack: Complex64 = network.slack_branches().map(|l| j[l]).sum();
    AcState {
        voltages: v.to_vec(),
        currents: j.to_vec(),
        losses,
        slack_power: v[0] * from_slack.conj(),
        iterations,
        mismatch,
        converged: false,
    }
}

/// Agent setpoints added on top of the cleared injections:
/// `setpoints[sample][t]`, positive when discharging into the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentOverlay {
    pub bus: usize,
    pub setpoints: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationOptions {
    pub samples: usize,
    pub seed: u64,
    /// Timesteps to check; all when `None`.
    pub times: Option<Vec<usize>>,
}

/// AC voltage magnitudes for one `(t, sample)`; empty when the
/// sweep failed.
#[derive(Debug, Clone, PartialEq)]
pub struct AcSample {
    pub t: usize,
    pub sample: usize,
    pub v_mag: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcValidation {
    pub times: Vec<usize>,
    pub samples: usize,
    /// `upper[i][bus]`, `lower[i][bus]`: violation counts at `times[i]`,
    /// buses `0..=N`.
    pub upper: Vec<Vec<usize>>,
    pub lower: Vec<Vec<usize>>,
    pub not_converged: usize,
    pub records: Vec<AcSample>,
}

impl AcValidation {
    /// Fraction of converged samples violating the upper bound at `bus`, `t`.
    pub fn upper_rate(&self, t: usize, bus: usize) -> Option<f64> {
        let i = self.times.iter().position(|&x| x == t)?;
        let ok = self.converged_at(t);
        Some(if ok == 0 { 0.0 } else { self.upper[i][bus] as f64 / ok as f64 })
    }

    pub fn lower_rate(&self, t: usize, bus: usize) -> Option<f64> {
        let i = self.times.iter().position(|&x| x == t)?;
        let ok = self.converged_at(t);
        Some(if ok == 0 { 0.0 } else { self.lower[i][bus] as f64 / ok as f64 })
    }

    fn converged_at(&self, t: usize) -> usize {
        self.records.iter().filter(|r| r.t == t && !r.v_mag.is_empty()).count()
    }

    pub fn total_violations(&self) -> usize {
        self.upper.iter().chain(&self.lower).flatten().sum()
    }

    /// `t,bus,sample,v_mag,violated`.
    pub fn write_csv<W: Write>(&self, network: &RadialNetwork, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "bus", "sample", "v_mag", "violated"])?;
        for r in &self.records {
            for (bus, &m) in r.v_mag.iter().enumerate() {
                let violated = violation(network, bus, m * m) != 0;
                w.write_record([r.t.to_string(), bus.to_string(), r.sample.to_string(), m.to_string(), violated.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// +1 above the upper bound, −1 below the lower, 0 inside.
fn violation(network: &RadialNetwork, bus: usize, v_sq: f64) -> i8 {
    if bus == 0 {
        return 0;
    }
    let b = &network.buses()[bus];
    if v_sq > b.v_max_sq + 1e-12 {
        1
    } else if v_sq < b.v_min_sq - 1e-12 {
        -1
    } else {
        0
    }
}

/// Monte-Carlo AC check of a cleared market. Sample `s` uses the germ path
/// `market.germ_path(s, seed)`, the same trajectory agents see as prices, so
/// overlays line up with the grid realization.
pub fn validate_solution(
    network: &RadialNetwork,
    market: &MarketSolution,
    opts: &ValidationOptions,
    overlays: &[AgentOverlay],
) -> Result<AcValidation, AcFlowError> {
    let n = network.n();
    let horizon = market.horizon();
    let times = opts.times.clone().unwrap_or_else(|| (0..horizon).collect());
    if let Some(&t) = times.iter().find(|&&t| t >= horizon) {
        return Err(AcFlowError::UnknownTimestep(t));
    }
    for o in overlays {
        if o.bus == 0 || o.bus > n {
            return Err(AcFlowError::InvalidOverlay(o.bus));
        }
        if o.setpoints.len() != opts.samples {
            return Err(AcFlowError::DimensionMismatch { expected: opts.samples, got: o.setpoints.len() });
        }
        if let Some(bad) = o.setpoints.iter().find(|s| s.len() != horizon) {
            return Err(AcFlowError::DimensionMismatch { expected: horizon, got: bad.len() });
        }
    }
    let v0 = network.v0();
    let results: Vec<Vec<AcSample>> = (0..opts.samples)
        .into_par_iter()
        .map(|s| {
            let path = market.germ_path(s as u64, opts.seed);
            times
                .iter()
                .map(|&t| {
                    let ts = &market.opf.timesteps[t];
                    let psi = market.basis.eval(&path[t])?;
                    let mut inj: Vec<Complex64> = (0..n)
                        .map(|j| {
                            let p: f64 = ts.p.column(j).iter().zip(&psi).map(|(c, y)| c * y).sum();
                            let q: f64 = ts.q.column(j).iter().zip(&psi).map(|(c, y)| c * y).sum();
                            Complex64::new(p, q)
                        })
                        .collect();
                    for o in overlays {
                        inj[o.bus - 1].re += o.setpoints[s][t];
                    }
                    let v_mag = match backward_forward_sweep(network, &inj, v0) {
                        Ok(state) => state.voltages.iter().map(|v| v.norm()).collect(),
                        Err(AcFlowError::NotConverged { .. }) => Vec::new(),
                        Err(e) => return Err(e),
                    };
                    Ok(AcSample { t, sample: s, v_mag })
                })
                .collect::<Result<Vec<_>, AcFlowError>>()
        })
        .collect::<Result<_, _>>()?;

    let mut upper = vec![vec![0; n + 1]; times.len()];
    let mut lower = vec![vec![0; n + 1]; times.len()];
    let mut not_converged = 0;
    let mut records = Vec::with_capacity(opts.samples * times.len());
    for r in results.into_iter().flatten() {
        let i = times.iter().position(|&t| t == r.t).expect("scheduled timestep");
        if r.v_mag.is_empty() {
            not_converged += 1;
        }
        for (bus, &m) in r.v_mag.iter().enumerate() {
            match violation(network, bus, m * m) {
                1 => upper[i][bus] += 1,
                -1 => lower[i][bus] += 1,
                _ => {}
            }
        }
        records.push(r);
    }
    records.sort_by_key(|r| (r.t, r.sample));
    Ok(AcValidation { times, samples: opts.samples, upper, lower, not_converged, records })
}
