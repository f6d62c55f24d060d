//! Radial distribution grids and their lindistflow sensitivities.
//!
//! Buses are numbered `0..=N` with bus 0 the slack. Branch `i` of a built
//! network always points from the parent bus (closer to the slack) to its
//! child, so the reduced incidence matrix `A` has a `-1` in the child column
//! of every row and a `+1` in the parent column unless the parent is the
//! slack (whose column is dropped).

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("network contains a cycle through branch {branch}")]
    CycleDetected { branch: usize },
    #[error("bus {bus} is not reachable from the slack bus")]
    Disconnected { bus: usize },
    #[error("reduced incidence matrix is singular")]
    SingularIncidence,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("branch {branch} references unknown bus {bus}")]
    UnknownBus { branch: usize, bus: usize },
    #[error("bus ids must be 0..={max} without gaps (bus {id} out of place)")]
    BusNumbering { id: usize, max: usize },
    #[error("invalid bus {bus}: {reason}")]
    InvalidBus { bus: usize, reason: String },
    #[error("invalid branch {branch}: {reason}")]
    InvalidBranch { branch: usize, reason: String },
    #[error("a radial network needs at least one non-slack bus")]
    Empty,
}

/// A bus with squared voltage-magnitude bounds [p.u.²].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub v_min_sq: f64,
    pub v_max_sq: f64,
}

impl Bus {
    pub fn new(id: usize, v_min: f64, v_max: f64) -> Self {
        Self {
            id,
            v_min_sq: v_min * v_min,
            v_max_sq: v_max * v_max,
        }
    }
}

/// A series branch. `f_max` is a power limit [p.u.].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub id: usize,
    pub from_bus: usize,
    pub to_bus: usize,
    pub r: f64,
    pub x: f64,
    pub f_max: f64,
}

/// Conservative power limit of a branch from its ampacity and the lowest
/// allowed operating voltage magnitude.
pub fn flow_limit_from_ampacity(i_max: f64, v_min: f64) -> f64 {
    v_min * i_max
}

/// An immutable radial grid with dense sensitivity matrices.
#[derive(Debug, Clone)]
pub struct RadialNetwork {
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    v0: f64,
    incidence: DMatrix<f64>,
    f: DMatrix<f64>,
    r_mat: DMatrix<f64>,
    x_mat: DMatrix<f64>,
    /// Branch feeding each bus (`None` for the slack).
    feeder: Vec<Option<usize>>,
    /// Buses in breadth-first order from the slack.
    bfs_order: Vec<usize>,
}

impl RadialNetwork {
    /// Validates topology, orients branches away from the slack and computes
    /// `A`, `F = A⁻¹`, `R = F·diag(r)·Fᵀ` and `X = F·diag(x)·Fᵀ`.
    pub fn build(buses: Vec<Bus>, branches: Vec<Branch>, v0: f64) -> Result<Self, NetworkError> {
        let n_bus = buses.len();
        if n_bus < 2 {
            return Err(NetworkError::Empty);
        }
        let mut buses = buses;
        buses.sort_by_key(|b| b.id);
        for (i, b) in buses.iter().enumerate() {
            if b.id != i {
                return Err(NetworkError::BusNumbering { id: b.id, max: n_bus - 1 });
            }
            if b.id != 0 && !(b.v_min_sq < b.v_max_sq) {
                return Err(NetworkError::InvalidBus {
                    bus: b.id,
                    reason: format!("v_min_sq {} must be below v_max_sq {}", b.v_min_sq, b.v_max_sq),
                });
            }
        }
        if !(v0 > 0.0) {
            return Err(NetworkError::InvalidBus { bus: 0, reason: format!("slack voltage {v0} must be positive") });
        }
        for (i, br) in branches.iter().enumerate() {
            for bus in [br.from_bus, br.to_bus] {
                if bus >= n_bus {
                    return Err(NetworkError::UnknownBus { branch: i, bus });
                }
            }
            if !(br.r >= 0.0) || !(br.x >= 0.0) {
                return Err(NetworkError::InvalidBranch { branch: i, reason: "negative impedance".into() });
            }
            if !(br.f_max > 0.0) {
                return Err(NetworkError::InvalidBranch { branch: i, reason: "f_max must be positive".into() });
            }
        }

        // union-find for cycles
        let mut parent: Vec<usize> = (0..n_bus).collect();
        fn root(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for (i, br) in branches.iter().enumerate() {
            let (a, b) = (root(&mut parent, br.from_bus), root(&mut parent, br.to_bus));
            if a == b {
                return Err(NetworkError::CycleDetected { branch: i });
            }
            parent[a] = b;
        }

        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_bus];
        for (i, br) in branches.iter().enumerate() {
            adj[br.from_bus].push((br.to_bus, i));
            adj[br.to_bus].push((br.from_bus, i));
        }
        let mut feeder = vec![None; n_bus];
        let mut seen = vec![false; n_bus];
        let mut bfs_order = Vec::with_capacity(n_bus);
        let mut branches = branches;
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            bfs_order.push(u);
            for &(v, i) in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    feeder[v] = Some(i);
                    let br = &mut branches[i];
                    if br.from_bus != u {
                        std::mem::swap(&mut br.from_bus, &mut br.to_bus);
                    }
                    queue.push_back(v);
                }
            }
        }
        if let Some(bus) = seen.iter().position(|s| !s) {
            return Err(NetworkError::Disconnected { bus });
        }

        let n = n_bus - 1;
        let mut incidence = DMatrix::zeros(n, n);
        for (i, br) in branches.iter().enumerate() {
            if br.from_bus != 0 {
                incidence[(i, br.from_bus - 1)] = 1.0;
            }
            incidence[(i, br.to_bus - 1)] = -1.0;
        }
        let f = incidence.clone().try_inverse().ok_or(NetworkError::SingularIncidence)?;
        let r = DVector::from_iterator(n, branches.iter().map(|b| b.r));
        let x = DVector::from_iterator(n, branches.iter().map(|b| b.x));
        let r_mat = &f * DMatrix::from_diagonal(&r) * f.transpose();
        let x_mat = &f * DMatrix::from_diagonal(&x) * f.transpose();

        Ok(Self {
            buses,
            branches,
            v0,
            incidence,
            f,
            r_mat,
            x_mat,
            feeder,
            bfs_order,
        })
    }

    /// Number of non-slack buses (equal to the number of branches).
    pub fn n(&self) -> usize {
        self.branches.len()
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn v0(&self) -> f64 {
        self.v0
    }

    pub fn incidence(&self) -> &DMatrix<f64> {
        &self.incidence
    }

    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r_mat
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x_mat
    }

    /// Index of the branch that feeds `bus`, `None` for the slack.
    pub fn feeding_branch(&self, bus: usize) -> Option<usize> {
        self.feeder.get(bus).copied().flatten()
    }

    /// Buses in breadth-first order starting at the slack.
    pub fn bfs_order(&self) -> &[usize] {
        &self.bfs_order
    }

    /// Branches whose parent is the slack bus.
    pub fn slack_branches(&self) -> impl Iterator<Item = usize> + '_ {
        self.branches.iter().enumerate().filter(|(_, b)| b.from_bus == 0).map(|(i, _)| i)
    }

    /// Index of the branch between two buses regardless of direction.
    pub fn branch_between(&self, a: usize, b: usize) -> Option<usize> {
        self.branches
            .iter()
            .position(|br| (br.from_bus == a && br.to_bus == b) || (br.from_bus == b && br.to_bus == a))
    }

    fn check_len(&self, v: &DVector<f64>) -> Result<(), NetworkError> {
        if v.len() != self.n() {
            return Err(NetworkError::DimensionMismatch { expected: self.n(), got: v.len() });
        }
        Ok(())
    }

    /// Squared voltages `v0·1 + 2Rp + 2Xq` at the non-slack buses.
    pub fn voltage_map(&self, p: &DVector<f64>, q: &DVector<f64>) -> Result<DVector<f64>, NetworkError> {
        self.check_len(p)?;
        self.check_len(q)?;
        let mut v = &self.r_mat * p * 2.0 + &self.x_mat * q * 2.0;
        v.add_scalar_mut(self.v0);
        Ok(v)
    }

    /// Branch flows solving `AᵀP = p`, `AᵀQ = q`.
    pub fn branch_flows(
        &self,
        p: &DVector<f64>,
        q: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>), NetworkError> {
        self.check_len(p)?;
        self.check_len(q)?;
        let ft = self.f.transpose();
        Ok((&ft * p, &ft * q))
    }

    /// Power drawn from the slack bus given branch flows.
    pub fn slack_flow(&self, flows: &DVector<f64>) -> f64 {
        self.slack_branches().map(|i| flows[i]).sum()
    }
}
