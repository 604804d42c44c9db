//! Distance ratios from interior angles via the sine rule.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;

use super::{DisplacementError, SquaredDistanceMatrix};
use crate::tolerances::Tolerances;
use crate::AgentId;

/// Angles `theta(v; a, b)` at vertex `v` between the directions toward `a`
/// and `b`, over a fixed ordered set of vertices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AngleTable {
    vertices: Vec<AgentId>,
    angles: BTreeMap<(AgentId, AgentId, AgentId), f64>,
}

impl AngleTable {
    pub fn new(vertices: Vec<AgentId>) -> Self {
        Self {
            vertices,
            angles: BTreeMap::new(),
        }
    }

    pub fn vertices(&self) -> &[AgentId] {
        &self.vertices
    }

    pub fn insert(&mut self, vertex: AgentId, a: AgentId, b: AgentId, value: f64) {
        self.angles.insert((vertex, a.min(b), a.max(b)), value);
    }

    pub fn get(&self, vertex: AgentId, a: AgentId, b: AgentId) -> Option<f64> {
        self.angles.get(&(vertex, a.min(b), a.max(b))).copied()
    }

    fn require(&self, vertex: AgentId, a: AgentId, b: AgentId) -> Result<f64, DisplacementError> {
        self.get(vertex, a, b).ok_or_else(|| {
            DisplacementError::MissingMeasurement(format!("angle at {vertex} between {a} and {b}"))
        })
    }

    /// Angles of triangle `(p, x, y)` at `p`, `x` and `y`, if all are present.
    fn triangle(&self, p: AgentId, x: AgentId, y: AgentId) -> Option<[f64; 3]> {
        Some([self.get(p, x, y)?, self.get(x, p, y)?, self.get(y, p, x)?])
    }
}

fn non_degenerate(angles: &[f64; 3], tol: f64) -> bool {
    angles.iter().all(|&a| a > tol && a < PI - tol)
}

/// Lowest-id vertex forming a non-degenerate triangle with every pair of the
/// other vertices.
fn find_pivot(table: &AngleTable, tol: f64) -> Option<AgentId> {
    let mut ids = table.vertices.clone();
    ids.sort_unstable();
    ids.into_iter().find(|&p| {
        let others: Vec<AgentId> = table.vertices.iter().copied().filter(|&x| x != p).collect();
        others.iter().enumerate().all(|(k, &x)| {
            others[k + 1..].iter().all(|&y| {
                table
                    .triangle(p, x, y)
                    .is_some_and(|t| non_degenerate(&t, tol))
            })
        })
    })
}

/// Recovers all pairwise squared distance ratios among the table's vertices,
/// normalized so the pivot's reference edge has length 1. Rows/columns follow
/// `table.vertices()` order.
pub fn ratios_from_angles(
    table: &AngleTable,
    tol: &Tolerances,
) -> Result<SquaredDistanceMatrix, DisplacementError> {
    let verts = table.vertices();
    let n = verts.len();
    if n < 3 {
        return Err(DisplacementError::NoPivot);
    }
    let p = find_pivot(table, tol.angle).ok_or(DisplacementError::NoPivot)?;
    let a0 = verts
        .iter()
        .copied()
        .filter(|&x| x != p)
        .min()
        .expect("at least two other vertices");

    let check = |x: AgentId, y: AgentId| -> Result<(), DisplacementError> {
        let t = table.triangle(p, x, y).expect("pivot triangles are complete");
        if (t.iter().sum::<f64>() - PI).abs() > tol.angle {
            return Err(DisplacementError::DegenerateTriangle(p, x, y));
        }
        Ok(())
    };

    // Distances measured in units of |p - a0|.
    let mut dist: BTreeMap<(AgentId, AgentId), f64> = BTreeMap::new();
    let key = |a: AgentId, b: AgentId| (a.min(b), a.max(b));
    dist.insert(key(p, a0), 1.0);
    for &x in verts.iter().filter(|&&x| x != p && x != a0) {
        check(a0, x)?;
        let at_p = table.require(p, a0, x)?;
        let at_a0 = table.require(a0, p, x)?;
        let at_x = table.require(x, p, a0)?;
        dist.insert(key(p, x), at_a0.sin() / at_x.sin());
        dist.insert(key(a0, x), at_p.sin() / at_x.sin());
    }
    let rest: Vec<AgentId> = verts.iter().copied().filter(|&x| x != p && x != a0).collect();
    for (k, &x) in rest.iter().enumerate() {
        for &y in &rest[k + 1..] {
            check(x, y)?;
            let at_p = table.require(p, x, y)?;
            let at_y = table.require(y, p, x)?;
            let d_px = dist[&key(p, x)];
            dist.insert(key(x, y), d_px * at_p.sin() / at_y.sin());
        }
    }

    let m = DMatrix::from_fn(n, n, |a, b| {
        if a == b {
            0.0
        } else {
            dist[&key(verts[a], verts[b])].powi(2)
        }
    });
    SquaredDistanceMatrix::new(m)
}
