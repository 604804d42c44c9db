//! Displacement constraints `sum_j h_ij (p_j - p_i) = 0` recovered from each
//! supported measurement kind.
//!
//! Every solver reduces its input to a `d × (d+1)` matrix of relative
//! positions (possibly in an arbitrary rotated/scaled frame) and takes its
//! nullspace; the constraint is invariant to such similarity transforms.

mod angles;
mod mds;

pub use angles::{ratios_from_angles, AngleTable};
pub use mds::{mds_embed, Embedding, SquaredDistanceMatrix};

use nalgebra::DMatrix;

use crate::measurement::{angles_from_bearings, Frame, MeasurementError, MeasurementSnapshot, SensorKind};
use crate::tolerances::Tolerances;
use crate::{AgentId, Point};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DisplacementError {
    #[error("nullspace has dimension > 1 (smallest singular values {smallest:e}, {next:e})")]
    AmbiguousNullspace { smallest: f64, next: f64 },
    #[error("distance data not embeddable: eigenvalue {eigenvalue:e} below -{tolerance:e}")]
    NotEmbeddable { eigenvalue: f64, tolerance: f64 },
    #[error("invalid squared-distance matrix: {0}")]
    InvalidDistanceMatrix(String),
    #[error("reference pair ({0}, {1}) coincides")]
    ZeroReferenceDistance(AgentId, AgentId),
    #[error("no vertex forms non-degenerate triangles with all others")]
    NoPivot,
    #[error("degenerate or inconsistent triangle ({0}, {1}, {2})")]
    DegenerateTriangle(AgentId, AgentId, AgentId),
    #[error("cannot decide the coincident-neighbor case: {0}")]
    CaseUndetermined(String),
    #[error("missing measurement: {0}")]
    MissingMeasurement(String),
    #[error("solver expects {expected} measurements, got {got}")]
    WrongKind { expected: SensorKind, got: SensorKind },
    #[error("matrix has no columns")]
    Empty,
    #[error(transparent)]
    Measurement(#[from] MeasurementError),
}

/// Coefficients `h_ij` over a follower's designated neighbors, unit norm.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementConstraint {
    pub follower: AgentId,
    pub neighbors: Vec<AgentId>,
    pub coefficients: Vec<f64>,
    /// `sum_j h_ij`.
    pub h_ii: f64,
    /// `|h_ii| > tol_wii`: the follower is an affine combination of its neighbors.
    pub localizable: bool,
}

impl DisplacementConstraint {
    pub fn new(
        follower: AgentId,
        neighbors: Vec<AgentId>,
        coefficients: Vec<f64>,
        tol: &Tolerances,
    ) -> Self {
        let h_ii: f64 = coefficients.iter().sum();
        Self {
            follower,
            neighbors,
            coefficients,
            h_ii,
            localizable: h_ii.abs() > tol.wii,
        }
    }

    pub fn coefficient(&self, j: AgentId) -> Option<f64> {
        self.neighbors
            .iter()
            .position(|&n| n == j)
            .map(|k| self.coefficients[k])
    }

    /// `h_ij / h_ii`, or `None` when not localizable.
    pub fn barycentric(&self) -> Option<Vec<f64>> {
        self.localizable
            .then(|| self.coefficients.iter().map(|h| h / self.h_ii).collect())
    }
}

/// Right singular vector of the smallest singular value of `e`, unit norm,
/// sign chosen so the entries sum positive (or, if the sum vanishes, so the
/// first non-negligible entry is positive).
pub fn nullspace_coefficients(
    e: &DMatrix<f64>,
    tol: &Tolerances,
) -> Result<Vec<f64>, DisplacementError> {
    let cols = e.ncols();
    if cols == 0 {
        return Err(DisplacementError::Empty);
    }
    let rows = e.nrows().max(cols);
    let mut a = DMatrix::zeros(rows, cols);
    a.view_mut((0, 0), (e.nrows(), cols)).copy_from(e);

    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&x, &y| svd.singular_values[x].total_cmp(&svd.singular_values[y]));
    let sigma_max = svd.singular_values[order[cols - 1]];
    if cols >= 2 {
        let (s0, s1) = (svd.singular_values[order[0]], svd.singular_values[order[1]]);
        if s1 <= tol.rank * sigma_max {
            return Err(DisplacementError::AmbiguousNullspace {
                smallest: s0,
                next: s1,
            });
        }
    }
    let mut h: Vec<f64> = v_t.row(order[0]).iter().copied().collect();
    normalize(&mut h, tol);
    Ok(h)
}

fn normalize(h: &mut [f64], tol: &Tolerances) {
    let norm = h.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        h.iter_mut().for_each(|x| *x /= norm);
    }
    let sum: f64 = h.iter().sum();
    let flip = if sum.abs() > tol.wii {
        sum < 0.0
    } else {
        h.iter().find(|x| x.abs() > 1e-12).is_some_and(|&x| x < 0.0)
    };
    if flip {
        h.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Columns `q_{j_k} - q_i` of `d × (d+2)` coordinates whose first column is `i`.
fn relative_columns(coords: &DMatrix<f64>) -> DMatrix<f64> {
    let n = coords.ncols();
    DMatrix::from_fn(coords.nrows(), n - 1, |r, c| coords[(r, c + 1)] - coords[(r, 0)])
}

/// Constraint of `p_i` with respect to `neighbors` from true positions.
pub fn constraint_from_positions(
    follower: AgentId,
    p_i: &Point,
    neighbors: &[(AgentId, Point)],
    tol: &Tolerances,
) -> Result<DisplacementConstraint, DisplacementError> {
    let e = DMatrix::from_fn(p_i.len(), neighbors.len(), |r, c| neighbors[c].1[r] - p_i[r]);
    let h = nullspace_coefficients(&e, tol)?;
    Ok(DisplacementConstraint::new(
        follower,
        neighbors.iter().map(|(j, _)| *j).collect(),
        h,
        tol,
    ))
}

fn expect_kind(s: &MeasurementSnapshot, expected: SensorKind) -> Result<(), DisplacementError> {
    let got = s.kind.sensor();
    if got != expected {
        return Err(DisplacementError::WrongKind { expected, got });
    }
    Ok(())
}

fn missing(what: &str, a: AgentId, b: AgentId) -> DisplacementError {
    DisplacementError::MissingMeasurement(format!("{what} between {a} and {b}"))
}

fn indicator(s: &MeasurementSnapshot, j: AgentId, tol: &Tolerances) -> DisplacementConstraint {
    let h = s.neighbors.iter().map(|&n| if n == j { 1.0 } else { 0.0 }).collect();
    DisplacementConstraint::new(s.follower, s.neighbors.clone(), h, tol)
}

pub fn h_from_relative_positions(
    s: &MeasurementSnapshot,
    tol: &Tolerances,
) -> Result<DisplacementConstraint, DisplacementError> {
    expect_kind(s, SensorKind::RelativePosition)?;
    let cols = s
        .neighbors
        .iter()
        .map(|&j| {
            s.vector(s.follower, j)
                .cloned()
                .ok_or_else(|| missing("relative position", s.follower, j))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let e = DMatrix::from_columns(&cols);
    let h = nullspace_coefficients(&e, tol)?;
    Ok(DisplacementConstraint::new(s.follower, s.neighbors.clone(), h, tol))
}

/// Squared-distance matrix over `(i, j_0, ..., j_d)` from scalar readings.
fn scalar_matrix(s: &MeasurementSnapshot) -> Result<SquaredDistanceMatrix, DisplacementError> {
    let tuple = s.tuple();
    let n = tuple.len();
    let mut m = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in a + 1..n {
            let v = s
                .scalar(tuple[a], tuple[b])
                .ok_or_else(|| missing("distance", tuple[a], tuple[b]))?;
            m[(a, b)] = v * v;
            m[(b, a)] = v * v;
        }
    }
    SquaredDistanceMatrix::new(m)
}

fn from_matrix(
    s: &MeasurementSnapshot,
    m: &SquaredDistanceMatrix,
    tol: &Tolerances,
) -> Result<DisplacementConstraint, DisplacementError> {
    let d = s.neighbors.len() - 1;
    let emb = mds_embed(m, d, tol)?;
    let h = nullspace_coefficients(&relative_columns(&emb.coords), tol)?;
    Ok(DisplacementConstraint::new(s.follower, s.neighbors.clone(), h, tol))
}

pub fn h_from_distances(
    s: &MeasurementSnapshot,
    tol: &Tolerances,
) -> Result<DisplacementConstraint, DisplacementError> {
    expect_kind(s, SensorKind::Distance)?;
    from_matrix(s, &scalar_matrix(s)?, tol)
}

pub fn h_from_ratios(
    s: &MeasurementSnapshot,
    tol: &Tolerances,
) -> Result<DisplacementConstraint, DisplacementError> {
    expect_kind(s, SensorKind::RatioOfDistance)?;
    if s.neighbors.len() >= 2 {
        let (j0, j1) = (s.neighbors[0], s.neighbors[1]);
        let r = s.scalar(j0, j1).ok_or_else(|| missing("ratio", j0, j1))?;
        if r <= tol.coincide {
            return Err(DisplacementError::ZeroReferenceDistance(j0, j1));
        }
    }
    from_matrix(s, &scalar_matrix(s)?, tol)
}

/// Neighbor `j` that sees every pair of the other neighbors under the same
/// angle as the follower does.
///
/// In the plane that alone also holds whenever the follower lies on the
/// circle through `j` and the other neighbors (inscribed angles), so when
/// the neighbors' angles toward `i` and `j` are available they must vanish
/// too: every other neighbor then sees `i` and `j` in the same direction.
fn coincident_neighbor(s: &MeasurementSnapshot, table: &AngleTable, tol: f64) -> Result<Option<AgentId>, DisplacementError> {
    let i = s.follower;
    for &j in &s.neighbors {
        let others: Vec<AgentId> = s.neighbors.iter().copied().filter(|&k| k != j).collect();
        let mut all = true;
        for (a, &k) in others.iter().enumerate() {
            for &h in &others[a + 1..] {
                let (Some(ti), Some(tj)) = (table.get(i, k, h), table.get(j, k, h)) else {
                    return Err(DisplacementError::CaseUndetermined(format!(
                        "angles between {k} and {h} at {i} or {j} missing"
                    )));
                };
                all &= (ti - tj).abs() <= tol;
            }
        }
        all &= others
            .iter()
            .all(|&k| table.get(k, i, j).is_none_or(|theta| theta <= tol));
        if all {
            return Ok(Some(j));
        }
    }
    Ok(None)
}

fn angle_pipeline(
    s: &MeasurementSnapshot,
    table: &AngleTable,
    tol: &Tolerances,
) -> Result<DisplacementConstraint, DisplacementError> {
    let m = ratios_from_angles(table, tol)?;
    from_matrix(s, &m, tol)
}

fn angle_table(s: &MeasurementSnapshot) -> AngleTable {
    let tuple = s.tuple();
    let mut table = AngleTable::new(tuple.clone());
    for &v in &tuple {
        for &a in &tuple {
            for &b in &tuple {
                if a < b && a != v && b != v {
                    if let Some(x) = s.angle(v, a, b) {
                        table.insert(v, a, b, x);
                    }
                }
            }
        }
    }
    table
}

/// Angles at each vertex from the bearings it measures in its own frame.
fn angle_table_from_bearings(s: &MeasurementSnapshot) -> Result<AngleTable, DisplacementError> {
    let tuple = s.tuple();
    let mut table = AngleTable::new(tuple.clone());
    for &v in &tuple {
        for &a in &tuple {
            for &b in &tuple {
                if a < b && a != v && b != v {
                    if let (Some(ga), Some(gb)) = (s.vector(v, a), s.vector(v, b)) {
                        table.insert(v, a, b, angles_from_bearings(ga, gb)?);
                    }
                }
            }
        }
    }
    Ok(table)
}

pub fn h_from_angles(
    s: &MeasurementSnapshot,
    tol: &Tolerances,
) -> Result<DisplacementConstraint, DisplacementError> {
    expect_kind(s, SensorKind::Angle)?;
    let table = angle_table(s);
    if let Some(j) = coincident_neighbor(s, &table, tol.angle)? {
        return Ok(indicator(s, j, tol));
    }
    angle_pipeline(s, &table, tol)
}

pub fn h_from_bearings(
    s: &MeasurementSnapshot,
    tol: &Tolerances,
) -> Result<DisplacementConstraint, DisplacementError> {
    expect_kind(s, SensorKind::Bearing)?;
    let table = angle_table_from_bearings(s)?;
    let case_one = match s.kind.frame() {
        Frame::Global => {
            let i = s.follower;
            let mut found = None;
            for &j in &s.neighbors {
                let mut all = true;
                for &k in s.neighbors.iter().filter(|&&k| k != j) {
                    let (Some(gi), Some(gj)) = (s.vector(i, k), s.vector(j, k)) else {
                        return Err(DisplacementError::CaseUndetermined(format!(
                            "bearing toward {k} from {i} or {j} missing"
                        )));
                    };
                    all &= (gi - gj).norm() <= tol.bearing;
                }
                if all {
                    found = Some(j);
                    break;
                }
            }
            found
        }
        // Bearings from different agents live in different frames; compare
        // the frame-free angles instead.
        Frame::Local => coincident_neighbor(s, &table, tol.angle)?,
    };
    if let Some(j) = case_one {
        return Ok(indicator(s, j, tol));
    }
    angle_pipeline(s, &table, tol)
}

/// Dispatches on the snapshot's sensor kind.
pub fn solve_constraint(
    s: &MeasurementSnapshot,
    tol: &Tolerances,
) -> Result<DisplacementConstraint, DisplacementError> {
    match s.kind.sensor() {
        SensorKind::RelativePosition => h_from_relative_positions(s, tol),
        SensorKind::Distance => h_from_distances(s, tol),
        SensorKind::RatioOfDistance => h_from_ratios(s, tol),
        SensorKind::Angle => h_from_angles(s, tol),
        SensorKind::Bearing => h_from_bearings(s, tol),
    }
}
