//! Integrated network localization and formation maneuver control for
//! leader–follower multi-agent systems in `R^d`.
//!
//! The crate is organized bottom-up:
//!
//! * [`graph`] — multi-layer `d+1`-rooted sensing graphs, layer peeling and
//!   vertex-disjoint path certificates.
//! * [`formation`] / [`maneuver`] — nominal formations, follower matrices and
//!   time-varying target configurations.
//! * [`measurement`] — synthesis of relative measurements from ground truth.
//! * [`displacement`] — recovery of displacement constraints from any of the
//!   five measurement kinds.
//! * [`control`] — finite-time leader/follower controllers, modes and arrival.
//! * [`sim`] — RK4 integration of the coupled position/estimate dynamics.
//! * [`scenario`] / [`output`] — scenario files and CSV emission.
//!
//! Agents are 1-indexed; leaders always occupy `1..=m`.

pub mod control;
pub mod displacement;
pub mod formation;
pub mod graph;
pub mod maneuver;
pub mod measurement;
pub mod output;
pub mod scenario;
pub mod sim;
pub mod tolerances;

use nalgebra::DVector;

/// 1-based agent identifier.
pub type AgentId = usize;

/// A point or vector in `R^d`.
pub type Point = DVector<f64>;

pub use control::{ControlGains, Mode};
pub use displacement::DisplacementConstraint;
pub use formation::NominalFormation;
pub use graph::FormationGraph;
pub use maneuver::ManeuverSchedule;
pub use measurement::{Frame, MeasurementKind, MeasurementSnapshot, SensorKind};
pub use scenario::ScenarioConfig;
pub use sim::TrajectoryLog;
pub use tolerances::Tolerances;

/// Top-level error, grouping the per-module errors.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Graph(#[from] graph::GraphError),
    #[error(transparent)]
    Formation(#[from] formation::FormationError),
    #[error(transparent)]
    Maneuver(#[from] maneuver::ManeuverError),
    #[error(transparent)]
    Measurement(#[from] measurement::MeasurementError),
    #[error(transparent)]
    Displacement(#[from] displacement::DisplacementError),
    #[error(transparent)]
    Control(#[from] control::ControlError),
    #[error(transparent)]
    Sim(#[from] sim::SimError),
    #[error(transparent)]
    Scenario(#[from] scenario::ScenarioError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
