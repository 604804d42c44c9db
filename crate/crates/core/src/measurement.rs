//! Relative measurements synthesized from ground-truth positions.
//!
//! A snapshot collects what follower `i` has available about itself and its
//! designated neighbors `j_0..j_d`: its own sensor readings toward each
//! neighbor, the values sensed among the neighbors (and back toward `i`)
//! that neighbors forward over their edges, and the neighbors' transmitted
//! position estimates.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::tolerances::Tolerances;
use crate::{AgentId, Point};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MeasurementError {
    #[error("agents {0} and {1} coincide; direction-based measurements are undefined")]
    CoincidentAgents(AgentId, AgentId),
    #[error("{0} measurements are frame-independent and cannot be local")]
    LocalFrameNotAllowed(SensorKind),
    #[error("no local frame supplied for agent {0}")]
    MissingFrame(AgentId),
    #[error("vector norm {0} deviates from 1")]
    NotUnit(f64),
    #[error("agent {0} has no position or estimate")]
    UnknownAgent(AgentId),
    #[error("invalid snapshot: {0}")]
    InvalidSnapshot(String),
}

/// The physical quantity a follower's sensor reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    RelativePosition,
    Bearing,
    Distance,
    Angle,
    RatioOfDistance,
}

impl SensorKind {
    pub const ALL: [SensorKind; 5] = [
        SensorKind::RelativePosition,
        SensorKind::Bearing,
        SensorKind::Distance,
        SensorKind::Angle,
        SensorKind::RatioOfDistance,
    ];

    pub fn is_vector(self) -> bool {
        matches!(self, SensorKind::RelativePosition | SensorKind::Bearing)
    }

    pub fn name(self) -> &'static str {
        match self {
            SensorKind::RelativePosition => "relative_position",
            SensorKind::Bearing => "bearing",
            SensorKind::Distance => "distance",
            SensorKind::Angle => "angle",
            SensorKind::RatioOfDistance => "ratio_of_distance",
        }
    }
}

impl fmt::Display for SensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SensorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SensorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown measurement kind `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    #[default]
    Global,
    Local,
}

/// Sensor kind plus the frame vector-valued readings are expressed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MeasurementKind {
    sensor: SensorKind,
    frame: Frame,
}

impl MeasurementKind {
    pub fn new(sensor: SensorKind, frame: Frame) -> Result<Self, MeasurementError> {
        if frame == Frame::Local && !sensor.is_vector() {
            return Err(MeasurementError::LocalFrameNotAllowed(sensor));
        }
        Ok(Self { sensor, frame })
    }

    pub fn global(sensor: SensorKind) -> Self {
        Self {
            sensor,
            frame: Frame::Global,
        }
    }

    pub fn sensor(&self) -> SensorKind {
        self.sensor
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }
}

/// One reading.
#[derive(Clone, Debug, PartialEq)]
pub enum Observation {
    /// Relative position or bearing from `from` toward `to`, in `from`'s frame.
    Vector { from: AgentId, to: AgentId, value: Point },
    /// Distance, or distance ratio, between `a` and `b`.
    Scalar { a: AgentId, b: AgentId, value: f64 },
    /// Angle at `vertex` between the directions toward `a` and `b`.
    Angle {
        vertex: AgentId,
        a: AgentId,
        b: AgentId,
        value: f64,
    },
}

/// What a neighbor transmits over its edge.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborEstimate {
    pub id: AgentId,
    pub p_hat: Point,
    pub v_hat: Point,
    pub arrived: bool,
}

/// Per-agent estimate state used when synthesizing snapshots.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentEstimate {
    pub p_hat: Point,
    pub v_hat: Point,
    pub arrived: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementSnapshot {
    pub follower: AgentId,
    pub t: f64,
    pub kind: MeasurementKind,
    /// Designated neighbors `j_0..j_d`, in order.
    pub neighbors: Vec<AgentId>,
    pub own: Vec<Observation>,
    pub inter: Vec<Observation>,
    pub neighbor_estimates: Vec<NeighborEstimate>,
}

impl MeasurementSnapshot {
    /// `(i, j_0, ..., j_d)`.
    pub fn tuple(&self) -> Vec<AgentId> {
        std::iter::once(self.follower)
            .chain(self.neighbors.iter().copied())
            .collect()
    }

    fn observations(&self) -> impl Iterator<Item = &Observation> {
        self.own.iter().chain(self.inter.iter())
    }

    pub fn vector(&self, from: AgentId, to: AgentId) -> Option<&Point> {
        self.observations().find_map(|o| match o {
            Observation::Vector { from: f, to: t, value } if *f == from && *t == to => Some(value),
            _ => None,
        })
    }

    /// Symmetric lookup of a distance/ratio reading.
    pub fn scalar(&self, a: AgentId, b: AgentId) -> Option<f64> {
        self.observations().find_map(|o| match o {
            Observation::Scalar { a: x, b: y, value }
                if (*x == a && *y == b) || (*x == b && *y == a) =>
            {
                Some(*value)
            }
            _ => None,
        })
    }

    /// Angle at `vertex` between `a` and `b` (symmetric in `a`, `b`).
    pub fn angle(&self, vertex: AgentId, a: AgentId, b: AgentId) -> Option<f64> {
        self.observations().find_map(|o| match o {
            Observation::Angle {
                vertex: v,
                a: x,
                b: y,
                value,
            } if *v == vertex && ((*x == a && *y == b) || (*x == b && *y == a)) => Some(*value),
            _ => None,
        })
    }

    /// Checks the snapshot invariants: every designated neighbor is covered
    /// by an own reading, distances are non-negative, bearings are unit and
    /// angles lie in `[0, pi]`.
    pub fn validate(&self) -> Result<(), MeasurementError> {
        let covered = |j: AgentId| {
            self.own.iter().any(|o| match o {
                Observation::Vector { to, .. } => *to == j,
                Observation::Scalar { a, b, .. } => *a == j || *b == j,
                Observation::Angle { a, b, .. } => *a == j || *b == j,
            })
        };
        if let Some(&j) = self.neighbors.iter().find(|&&j| !covered(j)) {
            return Err(MeasurementError::InvalidSnapshot(format!(
                "no own reading toward neighbor {j}"
            )));
        }
        for o in self.observations() {
            match o {
                Observation::Scalar { value, .. } if *value < 0.0 || !value.is_finite() => {
                    return Err(MeasurementError::InvalidSnapshot(format!(
                        "negative or non-finite distance {value}"
                    )));
                }
                Observation::Vector { value, .. }
                    if self.kind.sensor == SensorKind::Bearing
                        && (value.norm() - 1.0).abs() > 1e-12 =>
                {
                    return Err(MeasurementError::NotUnit(value.norm()));
                }
                Observation::Angle { value, .. }
                    if !(0.0..=std::f64::consts::PI).contains(value) =>
                {
                    return Err(MeasurementError::InvalidSnapshot(format!(
                        "angle {value} outside [0, pi]"
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Orientation of each agent's body frame: a global vector `v` reads as
/// `R_a^T v` in agent `a`'s frame.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalFrames {
    rotations: Vec<DMatrix<f64>>,
}

impl LocalFrames {
    /// `rotations[a - 1]` is agent `a`'s frame.
    pub fn new(rotations: Vec<DMatrix<f64>>) -> Self {
        Self { rotations }
    }

    pub fn rotation(&self, a: AgentId) -> Option<&DMatrix<f64>> {
        a.checked_sub(1).and_then(|k| self.rotations.get(k))
    }

    pub fn rotations(&self) -> &[DMatrix<f64>] {
        &self.rotations
    }

    fn to_local(&self, a: AgentId, v: &Point) -> Result<Point, MeasurementError> {
        let r = self.rotation(a).ok_or(MeasurementError::MissingFrame(a))?;
        Ok(r.transpose() * v)
    }
}

/// Angle in `[0, pi]` between two unit vectors.
pub fn angles_from_bearings(g_a: &Point, g_b: &Point) -> Result<f64, MeasurementError> {
    for g in [g_a, g_b] {
        let norm = g.norm();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(MeasurementError::NotUnit(norm));
        }
    }
    Ok(g_a.dot(g_b).clamp(-1.0, 1.0).acos())
}

fn position(points: &[Point], a: AgentId) -> Result<&Point, MeasurementError> {
    a.checked_sub(1)
        .and_then(|k| points.get(k))
        .ok_or(MeasurementError::UnknownAgent(a))
}

fn pairs(items: &[AgentId]) -> impl Iterator<Item = (AgentId, AgentId)> + '_ {
    items
        .iter()
        .enumerate()
        .flat_map(move |(k, &a)| items[k + 1..].iter().map(move |&b| (a, b)))
}

/// Builds the snapshot follower `follower` would hold at time `t`.
///
/// `truth` and `estimates` are indexed by `agent - 1`. Direction-based
/// readings (relative positions, bearings, angles, ratios) among the
/// neighbors come from true positions; distances among the neighbors come
/// from their transmitted estimates.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_snapshot(
    truth: &[Point],
    estimates: &[AgentEstimate],
    follower: AgentId,
    neighbors: &[AgentId],
    kind: MeasurementKind,
    frames: Option<&LocalFrames>,
    t: f64,
    tol: &Tolerances,
) -> Result<MeasurementSnapshot, MeasurementError> {
    let tuple: Vec<AgentId> = std::iter::once(follower)
        .chain(neighbors.iter().copied())
        .collect();
    for &a in &tuple {
        if !truth.get(a.wrapping_sub(1)).is_some_and(|p| p.iter().all(|x| x.is_finite())) {
            return Err(MeasurementError::UnknownAgent(a));
        }
    }
    let rel = |a: AgentId, b: AgentId| -> Result<Point, MeasurementError> {
        Ok(position(truth, b)? - position(truth, a)?)
    };
    let in_frame = |a: AgentId, v: Point| -> Result<Point, MeasurementError> {
        match kind.frame {
            Frame::Global => Ok(v),
            Frame::Local => frames.ok_or(MeasurementError::MissingFrame(a))?.to_local(a, &v),
        }
    };
    let bearing = |a: AgentId, b: AgentId| -> Result<Point, MeasurementError> {
        let e = rel(a, b)?;
        let norm = e.norm();
        if norm <= tol.coincide {
            return Err(MeasurementError::CoincidentAgents(a, b));
        }
        Ok(e / norm)
    };

    let mut own = Vec::new();
    let mut inter = Vec::new();
    match kind.sensor {
        SensorKind::RelativePosition | SensorKind::Bearing => {
            let read = |a: AgentId, b: AgentId| -> Result<Observation, MeasurementError> {
                let v = if kind.sensor == SensorKind::Bearing {
                    bearing(a, b)?
                } else {
                    rel(a, b)?
                };
                Ok(Observation::Vector {
                    from: a,
                    to: b,
                    value: in_frame(a, v)?,
                })
            };
            for &j in neighbors {
                own.push(read(follower, j)?);
            }
            for &a in neighbors {
                for &b in tuple.iter().filter(|&&b| b != a) {
                    inter.push(read(a, b)?);
                }
            }
        }
        SensorKind::Angle => {
            let angle_at = |v: AgentId, a: AgentId, b: AgentId| -> Result<Observation, MeasurementError> {
                let value = angles_from_bearings(&bearing(v, a)?, &bearing(v, b)?)?;
                Ok(Observation::Angle {
                    vertex: v,
                    a,
                    b,
                    value,
                })
            };
            for (a, b) in pairs(neighbors) {
                own.push(angle_at(follower, a, b)?);
            }
            for &v in neighbors {
                let others: Vec<AgentId> = tuple.iter().copied().filter(|&x| x != v).collect();
                for (a, b) in pairs(&others) {
                    inter.push(angle_at(v, a, b)?);
                }
            }
        }
        SensorKind::Distance => {
            for &j in neighbors {
                own.push(Observation::Scalar {
                    a: follower,
                    b: j,
                    value: rel(follower, j)?.norm(),
                });
            }
            let est = |a: AgentId| -> Result<&Point, MeasurementError> {
                a.checked_sub(1)
                    .and_then(|k| estimates.get(k))
                    .map(|e| &e.p_hat)
                    .ok_or(MeasurementError::UnknownAgent(a))
            };
            for (a, b) in pairs(neighbors) {
                inter.push(Observation::Scalar {
                    a,
                    b,
                    value: (est(b)? - est(a)?).norm(),
                });
            }
        }
        SensorKind::RatioOfDistance => {
            if neighbors.len() < 2 {
                return Err(MeasurementError::InvalidSnapshot(
                    "ratio measurements need two reference neighbors".into(),
                ));
            }
            let reference = rel(neighbors[0], neighbors[1])?.norm();
            if reference <= tol.coincide {
                return Err(MeasurementError::CoincidentAgents(neighbors[0], neighbors[1]));
            }
            for &j in neighbors {
                own.push(Observation::Scalar {
                    a: follower,
                    b: j,
                    value: rel(follower, j)?.norm() / reference,
                });
            }
            for (a, b) in pairs(neighbors) {
                inter.push(Observation::Scalar {
                    a,
                    b,
                    value: rel(a, b)?.norm() / reference,
                });
            }
        }
    }

    let neighbor_estimates = neighbors
        .iter()
        .map(|&j| {
            let e = j
                .checked_sub(1)
                .and_then(|k| estimates.get(k))
                .ok_or(MeasurementError::UnknownAgent(j))?;
            Ok(NeighborEstimate {
                id: j,
                p_hat: e.p_hat.clone(),
                v_hat: e.v_hat.clone(),
                arrived: e.arrived,
            })
        })
        .collect::<Result<Vec<_>, MeasurementError>>()?;

    Ok(MeasurementSnapshot {
        follower,
        t,
        kind,
        neighbors: neighbors.to_vec(),
        own,
        inter,
        neighbor_estimates,
    })
}
