//! Finite-time controllers for leaders and followers, mode switching and
//! arrival detection.

use serde::{Deserialize, Serialize};

use crate::tolerances::Tolerances;
use crate::Point;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ControlError {
    #[error("invalid gains: {0}")]
    InvalidGains(String),
    #[error("expected {expected} neighbor estimates, got {got}")]
    MissingNeighborEstimate { expected: usize, got: usize },
    #[error("live displacement constraint is not localizable")]
    NotLocalizable,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlGains {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    /// Replace the maintaining gain by per-axis gains that make the control
    /// input continuous across the switch into maneuvering mode.
    pub continuity_mode: bool,
}

impl Default for ControlGains {
    fn default() -> Self {
        Self {
            a1: 2.0,
            a2: 2.0,
            a3: 0.5,
            a4: 2.0,
            continuity_mode: false,
        }
    }
}

impl ControlGains {
    pub fn validate(&self) -> Result<(), ControlError> {
        for (name, v) in [("a1", self.a1), ("a2", self.a2), ("a4", self.a4)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ControlError::InvalidGains(format!("{name} = {v} must be positive")));
            }
        }
        if !(self.a3 > 0.0 && self.a3 < 1.0) {
            return Err(ControlError::InvalidGains(format!("a3 = {} must lie in (0, 1)", self.a3)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Leader,
    Maintaining,
    Maneuvering,
}

impl Mode {
    /// Short code used in CSV output.
    pub fn code(self) -> &'static str {
        match self {
            Mode::Leader => "L",
            Mode::Maintaining => "MT",
            Mode::Maneuvering => "MV",
        }
    }
}

/// Componentwise `sgn(x) |x|^l`.
pub fn sig_pow(x: &Point, l: f64) -> Point {
    x.map(|v| v.signum() * v.abs().powf(l))
}

/// `u = -a1 e - a2 sig(e)^a3 + dp*/dt` for tracking error `e = p - p*`.
pub fn leader_control(e: &Point, target_velocity: &Point, g: &ControlGains) -> Point {
    -e * g.a1 - sig_pow(e, g.a3) * g.a2 + target_velocity
}

/// Control input and estimate derivative of a follower.
#[derive(Clone, Debug, PartialEq)]
pub struct FollowerOutput {
    pub u: Point,
    pub p_hat_dot: Point,
}

fn combine(coeffs: &[f64], points: &[Point], dim: usize) -> Point {
    coeffs
        .iter()
        .zip(points)
        .fold(Point::zeros(dim), |acc, (c, p)| acc + p * *c)
}

fn check_len(expected: usize, got: &[&[Point]]) -> Result<(), ControlError> {
    for g in got {
        if g.len() != expected {
            return Err(ControlError::MissingNeighborEstimate {
                expected,
                got: g.len(),
            });
        }
    }
    Ok(())
}

/// Maintaining law with per-axis gain `gain` (all `a1` unless in continuity mode):
/// `u = -g p̂_i + Σ w/w_ii (g p̂_j + v̂_j)`,
/// `dp̂_i = -2g p̂_i + Σ w/w_ii (2g p̂_j + v̂_j)`.
pub fn maintain_control(
    p_hat: &Point,
    neighbor_p_hat: &[Point],
    neighbor_v_hat: &[Point],
    w_ratio: &[f64],
    gain: &Point,
) -> Result<FollowerOutput, ControlError> {
    check_len(w_ratio.len(), &[neighbor_p_hat, neighbor_v_hat])?;
    let d = p_hat.len();
    let pull = combine(w_ratio, neighbor_p_hat, d) - p_hat;
    let ff = combine(w_ratio, neighbor_v_hat, d);
    let gp = gain.component_mul(&pull);
    Ok(FollowerOutput {
        u: &gp + &ff,
        p_hat_dot: gp * 2.0 + ff,
    })
}

/// `eta_i = a2 (Σ w/w_ii p̂_j - p̂_i)`.
pub fn formation_pull(p_hat: &Point, neighbor_p_hat: &[Point], w_ratio: &[f64], a2: f64) -> Point {
    (combine(w_ratio, neighbor_p_hat, p_hat.len()) - p_hat) * a2
}

/// Maneuvering law using the nominal weights `w_ratio` and the live
/// barycentric coordinates `h_ratio` (`h_ij / h_ii`).
pub fn maneuver_control(
    p_hat: &Point,
    neighbor_p_hat: &[Point],
    neighbor_v_hat: &[Point],
    w_ratio: &[f64],
    h_ratio: &[f64],
    g: &ControlGains,
) -> Result<FollowerOutput, ControlError> {
    check_len(w_ratio.len(), &[neighbor_p_hat, neighbor_v_hat])?;
    if h_ratio.len() != w_ratio.len() {
        return Err(ControlError::MissingNeighborEstimate {
            expected: w_ratio.len(),
            got: h_ratio.len(),
        });
    }
    let d = p_hat.len();
    let eta = formation_pull(p_hat, neighbor_p_hat, w_ratio, g.a2);
    let sigma = (combine(h_ratio, neighbor_p_hat, d) - p_hat) * g.a4;
    let ff = combine(w_ratio, neighbor_v_hat, d);
    let sig_eta = sig_pow(&eta, g.a3);
    let u = &eta + &ff + &sig_eta;
    let es = &eta + &sigma;
    let p_hat_dot = &eta * 2.0 + &sigma + &ff + &sig_eta + sig_pow(&es, g.a3);
    Ok(FollowerOutput { u, p_hat_dot })
}

/// Per-axis maintaining gains `xi_k` with `(xi_k / a2) eta_k = eta_k + sig(eta_k)^a3`,
/// i.e. `xi_k = a2 (1 + |eta_k|^(a3-1))`, capped at `xi_max_factor * a2` and
/// pinned at the cap when `|eta_k| < eta_floor`.
pub fn continuity_gains(eta: &Point, a2: f64, a3: f64, tol: &Tolerances) -> Point {
    let cap = tol.xi_max_factor * a2;
    eta.map(|e| {
        if e.abs() < tol.eta_floor {
            cap
        } else {
            (a2 * (1.0 + e.abs().powf(a3 - 1.0))).min(cap)
        }
    })
}

/// Maneuvering iff every designated neighbor has arrived.
pub fn update_mode(neighbor_arrived: &[bool]) -> Mode {
    if !neighbor_arrived.is_empty() && neighbor_arrived.iter().all(|&a| a) {
        Mode::Maneuvering
    } else {
        Mode::Maintaining
    }
}

/// The two localization residuals of a follower:
/// `|| Σ (h/h_ii - w/w_ii) p̂_j ||` and `|| p̂_i - Σ h/h_ii p̂_j ||`.
pub fn arrival_residuals(
    p_hat: &Point,
    neighbor_p_hat: &[Point],
    w_ratio: &[f64],
    h_ratio: &[f64],
) -> (f64, f64) {
    let d = p_hat.len();
    let hp = combine(h_ratio, neighbor_p_hat, d);
    let wp = combine(w_ratio, neighbor_p_hat, d);
    ((&hp - wp).norm(), (p_hat - hp).norm())
}

/// Strict arrival test for a follower. `h_ratio` is `None` when the live
/// constraint is not localizable.
pub fn arrival_check(
    p_hat: &Point,
    neighbor_p_hat: &[Point],
    neighbor_arrived: &[bool],
    w_ratio: &[f64],
    h_ratio: Option<&[f64]>,
    epsilon: f64,
) -> Result<bool, ControlError> {
    if !neighbor_arrived.iter().all(|&a| a) {
        return Ok(false);
    }
    let h = h_ratio.ok_or(ControlError::NotLocalizable)?;
    let (a, b) = arrival_residuals(p_hat, neighbor_p_hat, w_ratio, h);
    Ok(a <= epsilon && b <= epsilon)
}

/// Arrival latch with hysteresis: engages when `residual <= epsilon` and
/// `ready`, and releases only when `ready` fails or the residual exceeds
/// `release_factor * epsilon`.
pub fn latch_arrival(previous: bool, ready: bool, residual: f64, tol: &Tolerances) -> bool {
    if !ready {
        return false;
    }
    if previous {
        residual <= tol.release_factor * tol.epsilon
    } else {
        residual <= tol.epsilon
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dvector, DMatrix, DVector};

    #[test]
    fn sig_pow_examples() {
        assert_eq!(sig_pow(&dvector![4.0, -9.0], 0.5), dvector![2.0, -3.0]);
        assert_eq!(sig_pow(&dvector![0.0, 0.0], 0.5), dvector![0.0, 0.0]);
        assert_eq!(sig_pow(&dvector![-0.37], 1.0), dvector![-0.37]);
    }

    #[test]
    fn leader_examples() {
        let g = ControlGains {
            a1: 1.0,
            a2: 1.0,
            a3: 0.5,
            ..Default::default()
        };
        let z = dvector![0.0, 0.0];
        assert_eq!(leader_control(&z, &dvector![2.0, 0.0], &g), dvector![2.0, 0.0]);
        assert_eq!(leader_control(&dvector![1.0, 0.0], &z, &g), dvector![-2.0, 0.0]);
        assert_eq!(leader_control(&dvector![-1.0, 0.0], &z, &g), dvector![2.0, 0.0]);
    }

    #[test]
    fn maintaining_examples() {
        let out = maintain_control(
            &dvector![1.0, 0.0],
            &[dvector![0.0, 0.0]],
            &[dvector![0.0, 0.0]],
            &[1.0],
            &dvector![1.0, 1.0],
        )
        .unwrap();
        assert_eq!(out.u, dvector![-1.0, 0.0]);
        assert_eq!(out.p_hat_dot, dvector![-2.0, 0.0]);

        // Consistent state is an equilibrium.
        let nb = [dvector![1.0, 1.0], dvector![3.0, -1.0]];
        let out = maintain_control(
            &dvector![2.0, 0.0],
            &nb,
            &[dvector![0.0, 0.0], dvector![0.0, 0.0]],
            &[0.5, 0.5],
            &dvector![2.0, 2.0],
        )
        .unwrap();
        assert_eq!(out.u, dvector![0.0, 0.0]);
        assert_eq!(out.p_hat_dot, dvector![0.0, 0.0]);

        assert!(matches!(
            maintain_control(&dvector![0.0, 0.0], &nb, &[], &[0.5, 0.5], &dvector![1.0, 1.0]),
            Err(ControlError::MissingNeighborEstimate { .. })
        ));
    }

    #[test]
    fn maneuvering_equilibrium_is_feedforward() {
        let g = ControlGains::default();
        let nb = [dvector![1.0, 1.0], dvector![3.0, -1.0]];
        let v = [dvector![0.5, 0.0], dvector![1.5, 2.0]];
        let out = maneuver_control(&dvector![2.0, 0.0], &nb, &v, &[0.5, 0.5], &[0.5, 0.5], &g).unwrap();
        assert_eq!(out.u, dvector![1.0, 1.0]);
        assert_eq!(out.p_hat_dot, dvector![1.0, 1.0]);
    }

    /// Scalar-axis closed loop with exact neighbor signals: neighbor A
    /// carries the nominal weight and sits at `p - ē`, neighbor B carries the
    /// live constraint and sits at `p`; both are at rest.
    fn closed_loop_maneuver(ebar: f64, ehat: f64, g: &ControlGains) -> (f64, f64) {
        let p = 0.4;
        let p_hat = ehat + p;
        let out = maneuver_control(
            &dvector![p_hat],
            &[dvector![p - ebar], dvector![p]],
            &[dvector![0.0], dvector![0.0]],
            &[1.0, 0.0],
            &[0.0, 1.0],
            g,
        )
        .unwrap();
        (out.u[0], out.p_hat_dot[0] - out.u[0])
    }

    #[test]
    fn maneuvering_matches_closed_loop_matrix() {
        let g = ControlGains {
            a1: 1.0,
            a2: 1.0,
            a3: 0.5,
            a4: 1.0,
            continuity_mode: false,
        };
        let db = DMatrix::from_row_slice(2, 2, &[g.a2, g.a2, g.a2, g.a2 + g.a4]);
        for (eb, eh) in [(1.0, 0.0), (-0.3, 0.7), (2.0, -5.0)] {
            let e = DVector::from_vec(vec![eb, eh]);
            let de = &db * &e;
            let want = -&de - sig_pow(&de, g.a3);
            let (d0, d1) = closed_loop_maneuver(eb, eh, &g);
            assert!((d0 - want[0]).abs() < 1e-14 && (d1 - want[1]).abs() < 1e-14);
        }
        // e = (1, 0): D_b e = (1, 1), so de/dt = (-2, -2).
        let (d0, d1) = closed_loop_maneuver(1.0, 0.0, &g);
        assert_eq!((d0, d1), (-2.0, -2.0));
    }

    #[test]
    fn maintaining_matches_closed_loop_matrix() {
        let a1 = 1.7;
        for (eb, eh) in [(1.0, 0.0), (-0.3, 0.7)] {
            let p = eb;
            let out = maintain_control(&dvector![eh + p], &[dvector![0.0]], &[dvector![0.0]], &[1.0], &dvector![a1])
                .unwrap();
            let (d0, d1) = (out.u[0], out.p_hat_dot[0] - out.u[0]);
            assert!((d0 + a1 * (eb + eh)).abs() < 1e-14);
            assert!((d1 + a1 * (eb + eh)).abs() < 1e-14);
        }
    }

    #[test]
    fn continuity_gain_examples() {
        let tol = Tolerances::default();
        let xi = continuity_gains(&dvector![1.0, 4.0, 0.0, 1e12], 1.0, 0.5, &tol);
        assert!((xi[0] - 2.0).abs() < 1e-15);
        assert!((xi[1] - 1.5).abs() < 1e-15);
        assert_eq!(xi[2], 1e3);
        assert!((xi[3] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn continuity_gains_make_inputs_agree() {
        let g = ControlGains::default();
        let tol = Tolerances::default();
        let nb = [dvector![1.0, 1.0], dvector![3.0, -1.0]];
        let v = [dvector![0.5, 0.0], dvector![1.5, 2.0]];
        let w = [0.5, 0.5];
        let p_hat = dvector![2.3, -0.4];
        let eta = formation_pull(&p_hat, &nb, &w, g.a2);
        let xi = continuity_gains(&eta, g.a2, g.a3, &tol);
        let mt = maintain_control(&p_hat, &nb, &v, &w, &xi).unwrap();
        let mv = maneuver_control(&p_hat, &nb, &v, &w, &[0.2, 0.8], &g).unwrap();
        assert!((mt.u - mv.u).norm() < 1e-12);
    }

    #[test]
    fn modes_and_arrival() {
        assert_eq!(update_mode(&[true, true, true]), Mode::Maneuvering);
        assert_eq!(update_mode(&[true, false, true]), Mode::Maintaining);
        assert_eq!(update_mode(&[false, false, false]), Mode::Maintaining);

        let nb = [dvector![1.0, 1.0], dvector![3.0, -1.0]];
        let w = [0.5, 0.5];
        let at = dvector![2.0, 0.0];
        assert!(arrival_check(&at, &nb, &[true, true], &w, Some(&w), 1e-3).unwrap());
        assert!(!arrival_check(&at, &nb, &[true, false], &w, Some(&w), 1e-3).unwrap());
        let off = dvector![2.01, 0.0];
        assert!(!arrival_check(&off, &nb, &[true, true], &w, Some(&w), 1e-3).unwrap());
        assert_eq!(
            arrival_check(&at, &nb, &[true, true], &w, None, 1e-3),
            Err(ControlError::NotLocalizable)
        );
    }

    #[test]
    fn latch_hysteresis() {
        let tol = Tolerances::default();
        assert!(!latch_arrival(false, true, 2e-3, &tol));
        assert!(latch_arrival(false, true, 1e-3, &tol));
        assert!(latch_arrival(true, true, 5e-3, &tol));
        assert!(!latch_arrival(true, true, 2e-2, &tol));
        assert!(!latch_arrival(true, false, 0.0, &tol));
    }

    #[test]
    fn gain_validation() {
        assert!(ControlGains::default().validate().is_ok());
        let bad = ControlGains {
            a3: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ControlGains {
            a1: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
