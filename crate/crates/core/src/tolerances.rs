//! Numerical thresholds shared by the solvers, controllers and simulator.

use serde::{Deserialize, Serialize};

/// Every equality or degeneracy test in the crate goes through one of these.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Relative singular-value threshold for rank decisions.
    pub rank: f64,
    /// `|w_ii|` / `|h_ii|` at or below this is treated as not localizable.
    pub wii: f64,
    /// Agents closer than this are coincident (bearings undefined).
    pub coincide: f64,
    /// Angle equality and triangle degeneracy threshold (radians).
    pub angle: f64,
    /// Bearing equality threshold (Euclidean norm of the difference).
    pub bearing: f64,
    /// MDS eigenvalue clamp, as a fraction of `trace(X) / N`.
    pub psd_factor: f64,
    /// Arrival threshold on tracking/localization residuals.
    pub epsilon: f64,
    /// Arrival latch releases once a residual exceeds `release_factor * epsilon`.
    pub release_factor: f64,
    /// Cap of the continuity gain, as a multiple of `a2`.
    pub xi_max_factor: f64,
    /// Below this `|eta_k|` the continuity gain is pinned at the cap.
    pub eta_floor: f64,
    /// Any state component beyond this aborts the simulation.
    pub blowup: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rank: 1e-8,
            wii: 1e-9,
            coincide: 1e-9,
            angle: 1e-6,
            bearing: 1e-8,
            psd_factor: 1e-8,
            epsilon: 1e-3,
            release_factor: 10.0,
            xi_max_factor: 1e3,
            eta_floor: 1e-9,
            blowup: 1e12,
        }
    }
}
