//! Galerkin-projected chance-constrained OPF on lindistflow, one
//! second-order cone program per timestep.
//!
//! Variable block for PC coefficient `k` (repeated `K` times):
//! `[p (N), q (N), P (N), Q (N), V (N), pg (G), qg (G), P⁰, Q⁰]`.
//! Squared voltages are tied to branch flows through the recursion
//! `V_child = V_parent − 2(r·P + x·Q)`, which equals `v0 + 2Rp + 2Xq` once
//! the balance `AᵀP = p` holds and keeps every row sparse.

use std::sync::Arc;
use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::RadialNetwork;
use crate::pce::{gamma, GammaMode, PceBasis, PceError, PceSeries};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CcOpfError {
    #[error("inconsistent dimensions: {0}")]
    InconsistentDimensions(String),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("{what} references bus {bus}, which does not exist or is the slack")]
    UnknownBus { what: String, bus: usize },
    #[error("clearing is infeasible at timestep {t}")]
    Infeasible { t: usize },
    #[error("solver failed at timestep {t}: {status} ({detail})")]
    SolverFailure { t: usize, status: String, detail: String },
    #[error(transparent)]
    Pce(#[from] PceError),
}

/// Controllable local generator with the expected-cost coefficients
/// `c·E[p] + C1·E[p]² + C2·Var[p]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlexGen {
    pub bus: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub c: f64,
    pub c1: f64,
    pub c2: f64,
}

impl FlexGen {
    /// Generator with a symmetric reactive box `[−p_max, p_max]`.
    pub fn new(bus: usize, p_min: f64, p_max: f64, c: f64, c1: f64, c2: f64) -> Self {
        Self { bus, p_min, p_max, q_min: -p_max.abs(), q_max: p_max.abs(), c, c1, c2 }
    }
}

/// Cost of exchanges with the upstream grid at the slack bus. Only the
/// active exchange is priced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlackCost {
    pub c: f64,
    pub c1: f64,
    pub c2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InjectionKind {
    Load,
    Pv,
}

/// Uncontrollable prosumption `mean_t + scale_t·(ξ_j − E[ξ_j])` at one bus.
/// Loads consume, PV injects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertainInjection {
    pub bus: usize,
    pub kind: InjectionKind,
    pub mean: Vec<f64>,
    pub germ_index: usize,
    pub scale: Vec<f64>,
    pub power_factor: f64,
}

impl UncertainInjection {
    /// Reactive-to-active ratio: `tan(acos(pf))` for loads, zero for PV.
    pub fn q_ratio(&self) -> f64 {
        match self.kind {
            InjectionKind::Load => {
                let pf = self.power_factor.clamp(1e-6, 1.0);
                (1.0 - pf * pf).sqrt() / pf
            }
            InjectionKind::Pv => 0.0,
        }
    }

    /// Active power drawn (load) or produced (PV) at `t`, as a PC expansion.
    pub fn series(&self, basis: &PceBasis, t: usize) -> Result<PceSeries, PceError> {
        let comp = basis
            .germ()
            .components
            .get(self.germ_index)
            .ok_or(PceError::IndexOutOfRange { index: self.germ_index, dim: basis.germ().dim() })?;
        basis.expand_affine(self.germ_index, self.mean[t] - self.scale[t] * comp.mean(), self.scale[t])
    }
}

#[derive(Debug, Clone)]
pub struct CcOpfProblem {
    pub network: Arc<RadialNetwork>,
    pub basis: Arc<PceBasis>,
    pub slack: SlackCost,
    pub flexgens: Vec<FlexGen>,
    pub injections: Vec<UncertainInjection>,
    pub epsilon: f64,
    pub gamma_mode: GammaMode,
    pub horizon: usize,
}

impl CcOpfProblem {
    pub fn validate(&self) -> Result<(), CcOpfError> {
        let n = self.network.n();
        if self.horizon == 0 {
            return Err(CcOpfError::InvalidProblem("horizon must be positive".into()));
        }
        gamma(self.epsilon, self.gamma_mode)?;
        for (i, g) in self.flexgens.iter().enumerate() {
            if g.bus == 0 || g.bus > n {
                return Err(CcOpfError::UnknownBus { what: format!("generator {i}"), bus: g.bus });
            }
            if g.p_min > g.p_max || g.q_min > g.q_max {
                return Err(CcOpfError::InvalidProblem(format!("generator {i} has inverted bounds")));
            }
            if g.c1 < 0.0 || g.c2 < 0.0 {
                return Err(CcOpfError::InvalidProblem(format!("generator {i} has a non-convex cost")));
            }
        }
        if self.slack.c1 < 0.0 || self.slack.c2 < 0.0 {
            return Err(CcOpfError::InvalidProblem("slack cost is not convex".into()));
        }
        for (i, inj) in self.injections.iter().enumerate() {
            if inj.bus == 0 || inj.bus > n {
                return Err(CcOpfError::UnknownBus { what: format!("injection {i}"), bus: inj.bus });
            }
            if inj.mean.len() != self.horizon || inj.scale.len() != self.horizon {
                return Err(CcOpfError::InconsistentDimensions(format!(
                    "injection {i} profiles have {}/{} entries, horizon is {}",
                    inj.mean.len(),
                    inj.scale.len(),
                    self.horizon
                )));
            }
            if inj.germ_index >= self.basis.germ().dim() {
                return Err(PceError::IndexOutOfRange { index: inj.germ_index, dim: self.basis.germ().dim() }.into());
            }
            match inj.kind {
                InjectionKind::Pv if inj.scale.iter().any(|&s| s < 0.0) => {
                    return Err(CcOpfError::InvalidProblem(format!("PV injection {i} has a negative scale")))
                }
                InjectionKind::Load if inj.mean.iter().any(|&m| m < 0.0) => {
                    return Err(CcOpfError::InvalidProblem(format!("load {i} has a negative mean")))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn gamma(&self) -> f64 {
        gamma(self.epsilon, self.gamma_mode).expect("validated risk level")
    }

    /// Net uncontrollable active and reactive injection coefficients
    /// (`K × N`, column `j` is bus `j + 1`).
    pub fn uncontrolled_injections(&self, t: usize) -> Result<(DMatrix<f64>, DMatrix<f64>), CcOpfError> {
        let (k, n) = (self.basis.k(), self.network.n());
        let mut p = DMatrix::zeros(k, n);
        let mut q = DMatrix::zeros(k, n);
        for inj in &self.injections {
            let s = inj.series(&self.basis, t)?;
            let sign = match inj.kind {
                InjectionKind::Load => -1.0,
                InjectionKind::Pv => 1.0,
            };
            let ratio = inj.q_ratio();
            for (kk, c) in s.coefficients.iter().enumerate() {
                p[(kk, inj.bus - 1)] += sign * c;
                q[(kk, inj.bus - 1)] += sign * c * ratio;
            }
        }
        Ok((p, q))
    }
}

/// Index map from `(k, quantity, element)` to solver columns.
#[derive(Debug, Clone, Copy)]
pub struct VarLayout {
    pub n: usize,
    pub gens: usize,
    pub k: usize,
}

impl VarLayout {
    pub fn block(&self) -> usize {
        5 * self.n + 2 * self.gens + 2
    }
    pub fn n_vars(&self) -> usize {
        self.k * self.block()
    }
    fn base(&self, k: usize) -> usize {
        k * self.block()
    }
    pub fn p(&self, k: usize, j: usize) -> usize {
        self.base(k) + j
    }
    pub fn q(&self, k: usize, j: usize) -> usize {
        self.base(k) + self.n + j
    }
    pub fn flow_p(&self, k: usize, l: usize) -> usize {
        self.base(k) + 2 * self.n + l
    }
    pub fn flow_q(&self, k: usize, l: usize) -> usize {
        self.base(k) + 3 * self.n + l
    }
    pub fn v(&self, k: usize, j: usize) -> usize {
        self.base(k) + 4 * self.n + j
    }
    pub fn gen_p(&self, k: usize, g: usize) -> usize {
        self.base(k) + 5 * self.n + g
    }
    pub fn gen_q(&self, k: usize, g: usize) -> usize {
        self.base(k) + 5 * self.n + self.gens + g
    }
    pub fn slack_p(&self, k: usize) -> usize {
        self.base(k) + 5 * self.n + 2 * self.gens
    }
    pub fn slack_q(&self, k: usize) -> usize {
        self.base(k) + 5 * self.n + 2 * self.gens + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    BranchActiveUpper,
    BranchActiveLower,
    BranchReactiveUpper,
    BranchReactiveLower,
    VoltageUpper,
    VoltageLower,
    GenActiveUpper,
    GenActiveLower,
    GenReactiveUpper,
    GenReactiveLower,
}

impl ConstraintKind {
    pub fn is_upper(self) -> bool {
        matches!(
            self,
            Self::BranchActiveUpper | Self::BranchReactiveUpper | Self::VoltageUpper | Self::GenActiveUpper | Self::GenReactiveUpper
        )
    }
}

/// One chance constraint `±(bound − x_0) ≥ scale·‖x_{1..K−1}‖`.
#[derive(Debug, Clone)]
pub struct ChanceConstraint {
    pub kind: ConstraintKind,
    /// Branch index, bus id or generator index depending on `kind`.
    pub element: usize,
    pub bound: f64,
    pub scale: f64,
    /// Column of coefficient `k` of the constrained quantity.
    pub columns: Vec<usize>,
    /// First row of the cone in the stacked constraint matrix.
    pub row: usize,
}

impl ChanceConstraint {
    /// Deterministic right-hand side (distance of the mean to the bound).
    pub fn mean_margin(&self, x: &[f64]) -> f64 {
        let x0 = x[self.columns[0]];
        if self.kind.is_upper() {
            self.bound - x0
        } else {
            x0 - self.bound
        }
    }

    /// Remaining slack after the uncertainty back-off.
    pub fn margin(&self, x: &[f64]) -> f64 {
        let norm = self.columns[1..].iter().map(|&c| x[c] * x[c]).sum::<f64>().sqrt();
        self.mean_margin(x) - self.scale * norm
    }
}

/// A single timestep's conic program in the solver's standard form
/// `min ½xᵀPx + qᵀx  s.t.  Ax + s = b, s ∈ K`.
pub struct ConicProgram {
    pub t: usize,
    pub layout: VarLayout,
    pub p: CscMatrix<f64>,
    pub q: Vec<f64>,
    pub a: CscMatrix<f64>,
    pub b: Vec<f64>,
    pub cones: Vec<SupportedConeT<f64>>,
    /// Number of leading equality rows.
    pub n_eq: usize,
    pub constraints: Vec<ChanceConstraint>,
    balance_rows: BalanceRows,
}

#[derive(Debug, Clone, Copy)]
struct BalanceRows {
    active: usize,
    reactive: usize,
    slack_active: usize,
    slack_reactive: usize,
    per_k: usize,
}

impl ConicProgram {
    pub fn n_vars(&self) -> usize {
        self.layout.n_vars()
    }

    pub fn n_rows(&self) -> usize {
        self.b.len()
    }
}

struct Triplets {
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    b: Vec<f64>,
}

impl Triplets {
    fn new() -> Self {
        Self { rows: Vec::new(), cols: Vec::new(), vals: Vec::new(), b: Vec::new() }
    }
    fn row(&mut self, entries: &[(usize, f64)], rhs: f64) -> usize {
        let r = self.b.len();
        for &(c, v) in entries {
            if v != 0.0 {
                self.rows.push(r);
                self.cols.push(c);
                self.vals.push(v);
            }
        }
        self.b.push(rhs);
        r
    }
}

/// Builds the Galerkin-projected program of timestep `t`.
pub fn assemble(problem: &CcOpfProblem, t: usize) -> Result<ConicProgram, CcOpfError> {
    problem.validate()?;
    if t >= problem.horizon {
        return Err(CcOpfError::InconsistentDimensions(format!("timestep {t} beyond horizon {}", problem.horizon)));
    }
    let net = &problem.network;
    let n = net.n();
    let kk = problem.basis.k();
    let gens = problem.flexgens.len();
    let layout = VarLayout { n, gens, k: kk };
    let (inj_p, inj_q) = problem.uncontrolled_injections(t)?;
    let gamma = problem.gamma();
    let incidence = net.incidence();

    let mut tr = Triplets::new();
    let mut balance = BalanceRows { active: 0, reactive: 0, slack_active: 0, slack_reactive: 0, per_k: 0 };
    for k in 0..kk {
        let start = tr.b.len();
        // AᵀP − p = 0 : λ_k
        let active = tr.b.len();
        for j in 0..n {
            let mut e: Vec<(usize, f64)> = (0..n)
                .filter(|&i| incidence[(i, j)] != 0.0)
                .map(|i| (layout.flow_p(k, i), incidence[(i, j)]))
                .collect();
            e.push((layout.p(k, j), -1.0));
            tr.row(&e, 0.0);
        }
        // AᵀQ − q = 0 : μ_k
        let reactive = tr.b.len();
        for j in 0..n {
            let mut e: Vec<(usize, f64)> = (0..n)
                .filter(|&i| incidence[(i, j)] != 0.0)
                .map(|i| (layout.flow_q(k, i), incidence[(i, j)]))
                .collect();
            e.push((layout.q(k, j), -1.0));
            tr.row(&e, 0.0);
        }
        // p − Σ pg = uncontrolled injection
        for j in 0..n {
            let mut e = vec![(layout.p(k, j), 1.0)];
            e.extend(
                problem.flexgens.iter().enumerate().filter(|(_, g)| g.bus == j + 1).map(|(g, _)| (layout.gen_p(k, g), -1.0)),
            );
            tr.row(&e, inj_p[(k, j)]);
        }
        for j in 0..n {
            let mut e = vec![(layout.q(k, j), 1.0)];
            e.extend(
                problem.flexgens.iter().enumerate().filter(|(_, g)| g.bus == j + 1).map(|(g, _)| (layout.gen_q(k, g), -1.0)),
            );
            tr.row(&e, inj_q[(k, j)]);
        }
        // V_child − V_parent + 2rP + 2xQ = 0, with V_slack = v0 in k = 0 only
        for (l, br) in net.branches().iter().enumerate() {
            let mut e = vec![
                (layout.v(k, br.to_bus - 1), 1.0),
                (layout.flow_p(k, l), 2.0 * br.r),
                (layout.flow_q(k, l), 2.0 * br.x),
            ];
            let rhs = if br.from_bus == 0 {
                if k == 0 {
                    net.v0()
                } else {
                    0.0
                }
            } else {
                e.push((layout.v(k, br.from_bus - 1), -1.0));
                0.0
            };
            tr.row(&e, rhs);
        }
        // slack balance, oriented like the bus rows: Σ P_out − P⁰ = 0
        let slack_active = tr.b.len();
        let mut e = vec![(layout.slack_p(k), -1.0)];
        e.extend(net.slack_branches().map(|l| (layout.flow_p(k, l), 1.0)));
        tr.row(&e, 0.0);
        let slack_reactive = tr.b.len();
        let mut e = vec![(layout.slack_q(k), -1.0)];
        e.extend(net.slack_branches().map(|l| (layout.flow_q(k, l), 1.0)));
        tr.row(&e, 0.0);
        if k == 0 {
            balance = BalanceRows { active, reactive, slack_active, slack_reactive, per_k: tr.b.len() - start };
        }
    }
    let n_eq = tr.b.len();
    let mut cones = vec![SupportedConeT::ZeroConeT(n_eq)];

    let conic = kk > 1 && gamma > 0.0;
    let mut constraints = Vec::new();
    let mut add = |tr: &mut Triplets, kind: ConstraintKind, element: usize, bound: f64, scale: f64, col: &dyn Fn(usize) -> usize| {
        let upper = kind.is_upper();
        let columns: Vec<usize> = (0..kk).map(col).collect();
        let row = tr.row(&[(columns[0], if upper { 1.0 } else { -1.0 })], if upper { bound } else { -bound });
        if conic {
            for &c in &columns[1..] {
                tr.row(&[(c, -scale)], 0.0);
            }
            cones.push(SupportedConeT::SecondOrderConeT(kk));
        } else {
            cones.push(SupportedConeT::NonnegativeConeT(1));
        }
        constraints.push(ChanceConstraint { kind, element, bound, scale: if conic { scale } else { 0.0 }, columns, row });
    };

    let flow_scale = std::f64::consts::SQRT_2 * gamma;
    for (l, br) in net.branches().iter().enumerate() {
        use ConstraintKind::*;
        add(&mut tr, BranchActiveUpper, l, br.f_max, flow_scale, &|k| layout.flow_p(k, l));
        add(&mut tr, BranchActiveLower, l, -br.f_max, flow_scale, &|k| layout.flow_p(k, l));
        add(&mut tr, BranchReactiveUpper, l, br.f_max, flow_scale, &|k| layout.flow_q(k, l));
        add(&mut tr, BranchReactiveLower, l, -br.f_max, flow_scale, &|k| layout.flow_q(k, l));
    }
    for bus in &net.buses()[1..] {
        let j = bus.id - 1;
        add(&mut tr, ConstraintKind::VoltageUpper, bus.id, bus.v_max_sq, gamma, &|k| layout.v(k, j));
        add(&mut tr, ConstraintKind::VoltageLower, bus.id, bus.v_min_sq, gamma, &|k| layout.v(k, j));
    }
    for (g, gen) in problem.flexgens.iter().enumerate() {
        use ConstraintKind::*;
        add(&mut tr, GenActiveUpper, g, gen.p_max, gamma, &|k| layout.gen_p(k, g));
        add(&mut tr, GenActiveLower, g, gen.p_min, gamma, &|k| layout.gen_p(k, g));
        add(&mut tr, GenReactiveUpper, g, gen.q_max, gamma, &|k| layout.gen_q(k, g));
        add(&mut tr, GenReactiveLower, g, gen.q_min, gamma, &|k| layout.gen_q(k, g));
    }

    let nv = layout.n_vars();
    let mut q = vec![0.0; nv];
    let mut diag = vec![0.0; nv];
    for (g, gen) in problem.flexgens.iter().enumerate() {
        q[layout.gen_p(0, g)] = gen.c;
        diag[layout.gen_p(0, g)] = 2.0 * gen.c1;
        for k in 1..kk {
            diag[layout.gen_p(k, g)] = 2.0 * gen.c2;
        }
    }
    q[layout.slack_p(0)] = problem.slack.c;
    diag[layout.slack_p(0)] = 2.0 * problem.slack.c1;
    for k in 1..kk {
        diag[layout.slack_p(k)] = 2.0 * problem.slack.c2;
    }
    let (pi, pv): (Vec<usize>, Vec<f64>) = diag.iter().enumerate().filter(|(_, &d)| d != 0.0).map(|(i, &d)| (i, d)).unzip();
    let p = CscMatrix::new_from_triplets(nv, nv, pi.clone(), pi, pv);

    let m = tr.b.len();
    let a = CscMatrix::new_from_triplets(m, nv, tr.rows, tr.cols, tr.vals);
    Ok(ConicProgram { t, layout, p, q, a, b: tr.b, cones, n_eq, constraints, balance_rows: balance })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

/// Primal and dual PC coefficients of one timestep. Matrices are `K × N`
/// (row `k`, column `j` for bus `j + 1` or branch `j`).
#[derive(Debug, Clone)]
pub struct TimestepSolution {
    pub t: usize,
    pub status: SolveStatus,
    pub objective: f64,
    pub dual_objective: f64,
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub flow_p: DMatrix<f64>,
    pub flow_q: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub gen_p: DMatrix<f64>,
    pub gen_q: DMatrix<f64>,
    pub slack_p: Vec<f64>,
    pub slack_q: Vec<f64>,
    /// Duals of the active balance, positive when consumption is priced.
    pub lambda: DMatrix<f64>,
    pub mu: DMatrix<f64>,
    pub lambda_slack: Vec<f64>,
    pub mu_slack: Vec<f64>,
    pub solve_time: f64,
    pub iterations: u32,
    pub equality_residual: f64,
    pub relative_gap: f64,
    /// `(constraint, margin, mean margin)` for every chance constraint.
    pub margins: Vec<(ConstraintKind, usize, f64, f64)>,
    pub x: Vec<f64>,
}

fn column_series(m: &DMatrix<f64>, j: usize) -> PceSeries {
    PceSeries::new(m.column(j).iter().copied().collect())
}

impl TimestepSolution {
    pub fn voltage(&self, bus: usize) -> PceSeries {
        column_series(&self.v, bus - 1)
    }
    pub fn injection_p(&self, bus: usize) -> PceSeries {
        column_series(&self.p, bus - 1)
    }
    pub fn injection_q(&self, bus: usize) -> PceSeries {
        column_series(&self.q, bus - 1)
    }
    pub fn branch_p(&self, branch: usize) -> PceSeries {
        column_series(&self.flow_p, branch)
    }
    pub fn branch_q(&self, branch: usize) -> PceSeries {
        column_series(&self.flow_q, branch)
    }
    pub fn generator_p(&self, g: usize) -> PceSeries {
        column_series(&self.gen_p, g)
    }
    pub fn slack_import(&self) -> PceSeries {
        PceSeries::new(self.slack_p.clone())
    }
    /// Active-price expansion at `bus` (0 is the slack).
    pub fn active_price(&self, bus: usize) -> PceSeries {
        if bus == 0 {
            PceSeries::new(self.lambda_slack.clone())
        } else {
            column_series(&self.lambda, bus - 1)
        }
    }
    pub fn reactive_price(&self, bus: usize) -> PceSeries {
        if bus == 0 {
            PceSeries::new(self.mu_slack.clone())
        } else {
            column_series(&self.mu, bus - 1)
        }
    }
}

#[derive(Debug, Clone)]
pub struct CcOpfSolution {
    pub timesteps: Vec<TimestepSolution>,
    pub objective: f64,
    /// Sum of the solver-reported times.
    pub solver_time: f64,
    /// Wall-clock time including assembly.
    pub wall_time: f64,
}

impl CcOpfSolution {
    pub fn status(&self) -> SolveStatus {
        if self.timesteps.iter().all(|t| t.status == SolveStatus::Optimal) {
            SolveStatus::Optimal
        } else {
            SolveStatus::NumericalFailure
        }
    }
}

fn settings() -> DefaultSettings<f64> {
    DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(200)
        .tol_gap_abs(1e-10)
        .tol_gap_rel(1e-10)
        .tol_feas(1e-10)
        .build()
        .expect("valid solver settings")
}

/// Solves one assembled program.
pub fn solve_program(prog: &ConicProgram) -> Result<TimestepSolution, CcOpfError> {
    let t = prog.t;
    let mut solver = DefaultSolver::new(&prog.p, &prog.q, &prog.a, &prog.b, &prog.cones, settings())
        .map_err(|e| CcOpfError::SolverFailure { t, status: "setup".into(), detail: e.to_string() })?;
    solver.solve();
    let sol = &solver.solution;
    match sol.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => {}
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => return Err(CcOpfError::Infeasible { t }),
        other => {
            return Err(CcOpfError::SolverFailure {
                t,
                status: format!("{other:?}"),
                detail: format!("r_prim {:.3e}, r_dual {:.3e}, iterations {}", sol.r_prim, sol.r_dual, sol.iterations),
            })
        }
    }
    let x = sol.x.clone();
    let z = &sol.z;

    // objective values recomputed from the returned iterate
    let px = sym_upper_mul(&prog.p, &x);
    let xpx: f64 = x.iter().zip(&px).map(|(a, b)| a * b).sum();
    let qx: f64 = prog.q.iter().zip(&x).map(|(a, b)| a * b).sum();
    let bz: f64 = prog.b.iter().zip(z).map(|(a, b)| a * b).sum();
    let objective = 0.5 * xpx + qx;
    let dual_objective = -0.5 * xpx - bz;
    let relative_gap = (objective - dual_objective).abs() / objective.abs().max(1.0);

    let ax = csc_mul(&prog.a, &x);
    let equality_residual = (0..prog.n_eq).map(|r| (ax[r] - prog.b[r]).abs()).fold(0.0, f64::max);

    let status = if sol.status == SolverStatus::Solved || (relative_gap < 1e-6 && equality_residual < 1e-6) {
        SolveStatus::Optimal
    } else {
        SolveStatus::NumericalFailure
    };

    let l = prog.layout;
    let (kk, n, g) = (l.k, l.n, l.gens);
    let grab = |cols: usize, f: &dyn Fn(usize, usize) -> usize| DMatrix::from_fn(kk, cols, |k, j| x[f(k, j)]);
    let br = prog.balance_rows;
    let dual = |offset: usize| DMatrix::from_fn(kk, n, |k, j| z[k * br.per_k + offset + j]);
    let margins = prog
        .constraints
        .iter()
        .map(|c| (c.kind, c.element, c.margin(&x), c.mean_margin(&x)))
        .collect();
    Ok(TimestepSolution {
        t,
        status,
        objective,
        dual_objective,
        p: grab(n, &|k, j| l.p(k, j)),
        q: grab(n, &|k, j| l.q(k, j)),
        flow_p: grab(n, &|k, j| l.flow_p(k, j)),
        flow_q: grab(n, &|k, j| l.flow_q(k, j)),
        v: grab(n, &|k, j| l.v(k, j)),
        gen_p: grab(g, &|k, j| l.gen_p(k, j)),
        gen_q: grab(g, &|k, j| l.gen_q(k, j)),
        slack_p: (0..kk).map(|k| x[l.slack_p(k)]).collect(),
        slack_q: (0..kk).map(|k| x[l.slack_q(k)]).collect(),
        lambda: dual(br.active),
        mu: dual(br.reactive),
        lambda_slack: (0..kk).map(|k| z[k * br.per_k + br.slack_active]).collect(),
        mu_slack: (0..kk).map(|k| z[k * br.per_k + br.slack_reactive]).collect(),
        solve_time: sol.solve_time,
        iterations: sol.iterations,
        equality_residual,
        relative_gap,
        margins,
        x,
    })
}

fn csc_mul(m: &CscMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.m];
    for col in 0..m.n {
        for idx in m.colptr[col]..m.colptr[col + 1] {
            out[m.rowval[idx]] += m.nzval[idx] * x[col];
        }
    }
    out
}

fn sym_upper_mul(m: &CscMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.m];
    for col in 0..m.n {
        for idx in m.colptr[col]..m.colptr[col + 1] {
            let row = m.rowval[idx];
            out[row] += m.nzval[idx] * x[col];
            if row != col {
                out[col] += m.nzval[idx] * x[row];
            }
        }
    }
    out
}

/// Clears every timestep (concurrently). The first infeasible timestep
/// aborts the whole horizon.
pub fn solve(problem: &CcOpfProblem) -> Result<CcOpfSolution, CcOpfError> {
    problem.validate()?;
    let start = Instant::now();
    let results: Vec<Result<TimestepSolution, CcOpfError>> =
        (0..problem.horizon).into_par_iter().map(|t| assemble(problem, t).and_then(|p| solve_program(&p))).collect();
    let mut timesteps = Vec::with_capacity(problem.horizon);
    for r in results {
        timesteps.push(r?);
    }
    Ok(CcOpfSolution {
        objective: timesteps.iter().map(|t| t.objective).sum(),
        solver_time: timesteps.iter().map(|t| t.solve_time).sum(),
        wall_time: start.elapsed().as_secs_f64(),
        timesteps,
    })
}

/// Slack of one chance constraint at one timestep.
#[derive(Debug, Clone, Serialize)]
pub struct ConstraintSlack {
    pub t: usize,
    pub kind: ConstraintKind,
    pub element: usize,
    pub margin: f64,
    pub mean_margin: f64,
    pub binding: bool,
}

#[derive(Debug, Clone, Default)]
pub struct FeasibilityReport {
    pub entries: Vec<ConstraintSlack>,
}

/// Margin below which a chance constraint counts as binding [p.u.].
pub const BINDING_TOL: f64 = 1e-6;

impl FeasibilityReport {
    pub fn binding(&self) -> impl Iterator<Item = &ConstraintSlack> {
        self.entries.iter().filter(|e| e.binding)
    }

    pub fn binding_at(&self, t: usize) -> impl Iterator<Item = &ConstraintSlack> {
        self.binding().filter(move |e| e.t == t)
    }

    pub fn is_binding(&self, t: usize, kind: ConstraintKind, element: usize) -> bool {
        self.binding_at(t).any(|e| e.kind == kind && e.element == element)
    }

    /// Timesteps where no branch or voltage constraint binds.
    pub fn network_unconstrained(&self, t: usize) -> bool {
        !self.binding_at(t).any(|e| {
            !matches!(
                e.kind,
                ConstraintKind::GenActiveUpper
                    | ConstraintKind::GenActiveLower
                    | ConstraintKind::GenReactiveUpper
                    | ConstraintKind::GenReactiveLower
            )
        })
    }
}

pub fn feasibility_report(solution: &CcOpfSolution) -> FeasibilityReport {
    let entries = solution
        .timesteps
        .iter()
        .flat_map(|ts| {
            ts.margins.iter().map(move |&(kind, element, margin, mean_margin)| ConstraintSlack {
                t: ts.t,
                kind,
                element,
                margin,
                mean_margin,
                binding: margin < BINDING_TOL,
            })
        })
        .collect();
    FeasibilityReport { entries }
}
