//! Nominal formations, follower weight matrices and target configurations.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::displacement::{nullspace_coefficients, DisplacementError};
use crate::graph::FormationGraph;
use crate::maneuver::{ManeuverError, ManeuverSchedule, ManeuverState};
use crate::tolerances::Tolerances;
use crate::{AgentId, Point};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FormationError {
    #[error("point has dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("expected {expected} points, got {got}")]
    PointCount { expected: usize, got: usize },
    #[error("follower {0} has fewer than d+1 designated neighbors")]
    TooFewNeighbors(AgentId),
    #[error("neighbors of follower {0} are affinely degenerate")]
    DegenerateNeighborhood(AgentId),
    #[error("follower {0} is not localizable: its neighbors lie on a hyperplane")]
    NotLocalizable(AgentId),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("follower block is singular at row {0}")]
    Singular(usize),
    #[error("target configuration inconsistent with the follower matrix (residual {0:e})")]
    Inconsistent(f64),
    #[error(transparent)]
    Maneuver(#[from] ManeuverError),
}

/// Whether `points` (at least `d+1` of them) span `R^d` affinely.
pub fn check_general_position(points: &[Point], d: usize, tol: &Tolerances) -> Result<bool, FormationError> {
    if points.len() < d + 1 {
        return Err(FormationError::PointCount {
            expected: d + 1,
            got: points.len(),
        });
    }
    if let Some(p) = points.iter().find(|p| p.len() != d) {
        return Err(FormationError::DimensionMismatch {
            expected: d,
            got: p.len(),
        });
    }
    let diffs = DMatrix::from_fn(d, points.len() - 1, |r, c| points[c + 1][r] - points[0][r]);
    let sv = diffs.singular_values();
    let max = sv.max();
    let min = sv.min();
    Ok(max > 0.0 && sv.len() == d && min > tol.rank * max)
}

/// Weights of one follower over its designated neighbors.
#[derive(Clone, Debug, PartialEq)]
pub struct FollowerWeights {
    pub neighbors: Vec<AgentId>,
    /// Unit norm, `w_ii > 0`.
    pub w: Vec<f64>,
    pub w_ii: f64,
}

impl FollowerWeights {
    /// `w_ij / w_ii`.
    pub fn ratios(&self) -> Vec<f64> {
        self.w.iter().map(|w| w / self.w_ii).collect()
    }
}

/// First `d+1`-subset of the candidate neighbors in general position, or the
/// first `d+1` if none is.
fn designate(candidates: &[AgentId], r: &[Point], d: usize, tol: &Tolerances) -> Vec<AgentId> {
    if candidates.len() == d + 1 {
        return candidates.to_vec();
    }
    let k = d + 1;
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let pts: Vec<Point> = idx.iter().map(|&c| r[candidates[c] - 1].clone()).collect();
        if check_general_position(&pts, d, tol).unwrap_or(false) {
            return idx.iter().map(|&c| candidates[c]).collect();
        }
        // Next combination in lexicographic order.
        let Some(pos) = (0..k).rev().find(|&p| idx[p] < candidates.len() - k + p) else {
            return candidates[..k].to_vec();
        };
        idx[pos] += 1;
        for q in pos + 1..k {
            idx[q] = idx[q - 1] + 1;
        }
    }
}

/// Nominal weights for every follower, from `r` (indexed by `agent - 1`).
pub fn compute_nominal_weights(
    r: &[Point],
    graph: &FormationGraph,
    tol: &Tolerances,
) -> Result<BTreeMap<AgentId, FollowerWeights>, FormationError> {
    let d = graph.dim();
    let mut out = BTreeMap::new();
    for i in graph.followers() {
        let candidates = graph.neighbors(i);
        if candidates.len() < d + 1 {
            return Err(FormationError::TooFewNeighbors(i));
        }
        let neighbors = designate(candidates, r, d, tol);
        let e = DMatrix::from_fn(d, d + 1, |row, c| r[neighbors[c] - 1][row] - r[i - 1][row]);
        let w = nullspace_coefficients(&e, tol).map_err(|e| match e {
            DisplacementError::AmbiguousNullspace { .. } => FormationError::DegenerateNeighborhood(i),
            other => FormationError::Shape(other.to_string()),
        })?;
        let w_ii: f64 = w.iter().sum();
        if w_ii.abs() <= tol.wii {
            return Err(FormationError::NotLocalizable(i));
        }
        out.insert(i, FollowerWeights { neighbors, w, w_ii });
    }
    Ok(out)
}

/// `(Omega_fl, Omega_ff)`: rows are followers `m+1..=n`; off-diagonal
/// entries `-w_ij`, diagonal `w_ii`.
pub fn assemble_follower_matrices(
    weights: &BTreeMap<AgentId, FollowerWeights>,
    graph: &FormationGraph,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, m) = (graph.n(), graph.m());
    let mut omega = DMatrix::zeros(n - m, n);
    for (&i, fw) in weights {
        let row = i - m - 1;
        for (&j, &w) in fw.neighbors.iter().zip(&fw.w) {
            omega[(row, j - 1)] -= w;
        }
        omega[(row, i - 1)] += fw.w_ii;
    }
    let fl = omega.columns(0, m).into_owned();
    let ff = omega.columns(m, n - m).into_owned();
    (fl, ff)
}

/// Every diagonal entry of the (lower-triangular) follower block is non-zero.
pub fn check_localizability(omega_ff: &DMatrix<f64>, tol: &Tolerances) -> Result<bool, FormationError> {
    if !omega_ff.is_square() {
        return Err(FormationError::Shape(format!(
            "follower block is {}x{}",
            omega_ff.nrows(),
            omega_ff.ncols()
        )));
    }
    Ok(omega_ff.diagonal().iter().all(|x| x.abs() > tol.wii))
}

/// `r_f = -Omega_ff^{-1} Omega_fl r_l` by forward substitution.
pub fn solve_nominal_followers(
    omega_fl: &DMatrix<f64>,
    omega_ff: &DMatrix<f64>,
    r_l: &[Point],
    tol: &Tolerances,
) -> Result<Vec<Point>, FormationError> {
    let nf = omega_ff.nrows();
    if !omega_ff.is_square() || omega_fl.nrows() != nf || omega_fl.ncols() != r_l.len() {
        return Err(FormationError::Shape(format!(
            "Omega_fl {}x{}, Omega_ff {}x{}, {} leaders",
            omega_fl.nrows(),
            omega_fl.ncols(),
            omega_ff.nrows(),
            omega_ff.ncols(),
            r_l.len()
        )));
    }
    let d = r_l.first().map_or(0, |p| p.len());
    let mut r_f: Vec<Point> = Vec::with_capacity(nf);
    for k in 0..nf {
        let diag = omega_ff[(k, k)];
        if diag.abs() <= tol.wii {
            return Err(FormationError::Singular(k));
        }
        let mut acc = Point::zeros(d);
        for (l, p) in r_l.iter().enumerate() {
            acc += p * omega_fl[(k, l)];
        }
        for (l, p) in r_f.iter().enumerate() {
            acc += p * omega_ff[(k, l)];
        }
        r_f.push(-acc / diag);
    }
    Ok(r_f)
}

/// Targets `p*_i` and velocities `dp*_i/dt` of all agents at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetState {
    pub positions: Vec<Point>,
    pub velocities: Vec<Point>,
}

/// A validated nominal configuration with its follower matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct NominalFormation {
    graph: FormationGraph,
    r: Vec<Point>,
    weights: BTreeMap<AgentId, FollowerWeights>,
    omega_fl: DMatrix<f64>,
    omega_ff: DMatrix<f64>,
}

impl NominalFormation {
    pub fn new(graph: FormationGraph, r: Vec<Point>, tol: &Tolerances) -> Result<Self, FormationError> {
        if r.len() != graph.n() {
            return Err(FormationError::PointCount {
                expected: graph.n(),
                got: r.len(),
            });
        }
        if let Some(p) = r.iter().find(|p| p.len() != graph.dim()) {
            return Err(FormationError::DimensionMismatch {
                expected: graph.dim(),
                got: p.len(),
            });
        }
        let weights = compute_nominal_weights(&r, &graph, tol)?;
        let (omega_fl, omega_ff) = assemble_follower_matrices(&weights, &graph);
        let f = Self {
            graph,
            r,
            weights,
            omega_fl,
            omega_ff,
        };
        debug_assert!(f.max_constraint_residual() <= 1e-10 * f.scale());
        Ok(f)
    }

    pub fn graph(&self) -> &FormationGraph {
        &self.graph
    }

    pub fn dim(&self) -> usize {
        self.graph.dim()
    }

    /// Nominal positions, indexed by `agent - 1`.
    pub fn r(&self) -> &[Point] {
        &self.r
    }

    pub fn weights(&self) -> &BTreeMap<AgentId, FollowerWeights> {
        &self.weights
    }

    pub fn follower_weights(&self, i: AgentId) -> Option<&FollowerWeights> {
        self.weights.get(&i)
    }

    /// Designated neighbors actually used by follower `i`.
    pub fn designated(&self, i: AgentId) -> &[AgentId] {
        self.weights.get(&i).map_or(&[], |w| &w.neighbors)
    }

    pub fn omega_fl(&self) -> &DMatrix<f64> {
        &self.omega_fl
    }

    pub fn omega_ff(&self) -> &DMatrix<f64> {
        &self.omega_ff
    }

    fn scale(&self) -> f64 {
        self.r.iter().map(|p| p.amax()).fold(1.0, f64::max)
    }

    /// Largest `|| sum_j w_ij (r_j - r_i) ||` over followers.
    pub fn max_constraint_residual(&self) -> f64 {
        self.weights
            .iter()
            .map(|(&i, fw)| {
                fw.neighbors
                    .iter()
                    .zip(&fw.w)
                    .map(|(&j, &w)| (&self.r[j - 1] - &self.r[i - 1]) * w)
                    .fold(Point::zeros(self.dim()), |a, b| a + b)
                    .norm()
            })
            .fold(0.0, f64::max)
    }

    /// Follower positions implied by the leader positions `p_l`.
    pub fn localize(&self, p_l: &[Point], tol: &Tolerances) -> Result<Vec<Point>, FormationError> {
        solve_nominal_followers(&self.omega_fl, &self.omega_ff, p_l, tol)
    }

    /// Targets under the given maneuver parameters.
    pub fn targets(&self, st: &ManeuverState) -> TargetState {
        let (positions, velocities) = self.r.iter().map(|r| st.apply(r)).unzip();
        TargetState {
            positions,
            velocities,
        }
    }
}

/// `p*(t) = beta Q r + delta` for all agents, checked against the follower
/// matrix: follower targets must be the ones the leader targets localize.
pub fn target_configuration(
    nominal: &NominalFormation,
    schedule: &ManeuverSchedule,
    t: f64,
    tol: &Tolerances,
) -> Result<TargetState, FormationError> {
    let st = schedule.evaluate(t)?;
    let target = nominal.targets(&st);
    let m = nominal.graph().m();
    let implied = nominal.localize(&target.positions[..m], tol)?;
    let scale = target.positions.iter().map(|p| p.amax()).fold(1.0, f64::max);
    let residual = implied
        .iter()
        .zip(&target.positions[m..])
        .map(|(a, b)| (a - b).amax())
        .fold(0.0, f64::max);
    if residual > 1e-9 * scale {
        return Err(FormationError::Inconsistent(residual));
    }
    Ok(target)
}
