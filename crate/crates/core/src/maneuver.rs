//! Piecewise maneuver schedules `(beta(t), Q(t), delta(t))`: scale, rotation
//! and translation applied to the nominal configuration.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::Point;

/// Boundary times closer than this are considered equal.
const TIME_EPS: f64 = 1e-12;
/// Allowed mismatch of the assembled parameters across a breakpoint.
const CONTINUITY_TOL: f64 = 1e-9;
/// Orthogonality / determinant tolerance for rotations.
const ROTATION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ManeuverError {
    #[error("schedule has no pieces")]
    Empty,
    #[error("schedule must start at t = 0, first piece starts at {0}")]
    BadStart(f64),
    #[error("piece {0} has non-positive duration")]
    EmptyPiece(usize),
    #[error("gap or overlap between pieces {0} and {1}")]
    NotContiguous(usize, usize),
    #[error("piece {piece}: translation has {got} components, expected {expected}")]
    TranslationLength {
        piece: usize,
        got: usize,
        expected: usize,
    },
    #[error("piece {piece}: rotation plane ({a}, {b}) invalid in dimension {dim}")]
    BadPlane {
        piece: usize,
        a: usize,
        b: usize,
        dim: usize,
    },
    #[error("piece {piece}: scale {value} is not positive at t = {t}")]
    NonPositiveScale { piece: usize, t: f64, value: f64 },
    #[error("piece {piece}: rotation is not in SO(d) at t = {t}")]
    NotRotation { piece: usize, t: f64 },
    #[error("discontinuity of {jump:e} at t = {t}")]
    Discontinuous { t: f64, jump: f64 },
    #[error("t = {t} outside the schedule [0, {end}]")]
    OutOfSchedule { t: f64, end: f64 },
}

/// Scalar function of absolute time with closed-form derivative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarProfile {
    Constant {
        value: f64,
    },
    /// `offset + rate * t`.
    Linear {
        offset: f64,
        rate: f64,
    },
    /// `offset + amplitude * sin(frequency * t + phase)`, frequency in rad/s.
    Sinusoid {
        offset: f64,
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
}

impl ScalarProfile {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            ScalarProfile::Constant { value } => value,
            ScalarProfile::Linear { offset, rate } => offset + rate * t,
            ScalarProfile::Sinusoid {
                offset,
                amplitude,
                frequency,
                phase,
            } => offset + amplitude * (frequency * t + phase).sin(),
        }
    }

    pub fn rate(&self, t: f64) -> f64 {
        match *self {
            ScalarProfile::Constant { .. } => 0.0,
            ScalarProfile::Linear { rate, .. } => rate,
            ScalarProfile::Sinusoid {
                amplitude,
                frequency,
                phase,
                ..
            } => amplitude * frequency * (frequency * t + phase).cos(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum RotationProfile {
    #[default]
    Identity,
    /// Rotation by `angle(t)` in the plane of axes `plane` (0-based), from
    /// the first axis toward the second.
    Planar { plane: [usize; 2], angle: ScalarProfile },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManeuverPiece {
    pub start: f64,
    pub end: f64,
    pub scale: ScalarProfile,
    #[serde(default)]
    pub rotation: RotationProfile,
    pub translation: Vec<ScalarProfile>,
}

/// Maneuver parameters and their time derivatives at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct ManeuverState {
    pub beta: f64,
    pub beta_dot: f64,
    pub q: DMatrix<f64>,
    pub q_dot: DMatrix<f64>,
    pub delta: Point,
    pub delta_dot: Point,
}

impl ManeuverState {
    /// `beta Q r + delta` and its time derivative.
    pub fn apply(&self, r: &Point) -> (Point, Point) {
        let qr = &self.q * r;
        let p = &qr * self.beta + &self.delta;
        let v = qr * self.beta_dot + (&self.q_dot * r) * self.beta + &self.delta_dot;
        (p, v)
    }
}

impl ManeuverPiece {
    pub fn evaluate(&self, dim: usize, t: f64) -> ManeuverState {
        let (q, q_dot) = match &self.rotation {
            RotationProfile::Identity => (DMatrix::identity(dim, dim), DMatrix::zeros(dim, dim)),
            RotationProfile::Planar { plane: [a, b], angle } => {
                let (th, w) = (angle.value(t), angle.rate(t));
                let (s, c) = th.sin_cos();
                let mut q = DMatrix::identity(dim, dim);
                let mut dq = DMatrix::zeros(dim, dim);
                q[(*a, *a)] = c;
                q[(*a, *b)] = -s;
                q[(*b, *a)] = s;
                q[(*b, *b)] = c;
                dq[(*a, *a)] = -s * w;
                dq[(*a, *b)] = -c * w;
                dq[(*b, *a)] = c * w;
                dq[(*b, *b)] = -s * w;
                (q, dq)
            }
        };
        ManeuverState {
            beta: self.scale.value(t),
            beta_dot: self.scale.rate(t),
            q,
            q_dot,
            delta: DVector::from_iterator(dim, self.translation.iter().map(|p| p.value(t))),
            delta_dot: DVector::from_iterator(dim, self.translation.iter().map(|p| p.rate(t))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManeuverSchedule {
    dim: usize,
    pieces: Vec<ManeuverPiece>,
}

impl ManeuverSchedule {
    pub fn new(dim: usize, pieces: Vec<ManeuverPiece>) -> Result<Self, ManeuverError> {
        let s = Self { dim, pieces };
        s.validate()?;
        Ok(s)
    }

    /// A single piece holding `beta = 1, Q = I, delta = 0` on `[0, t_end]`.
    pub fn identity(dim: usize, t_end: f64) -> Self {
        Self {
            dim,
            pieces: vec![ManeuverPiece {
                start: 0.0,
                end: t_end,
                scale: ScalarProfile::Constant { value: 1.0 },
                rotation: RotationProfile::Identity,
                translation: vec![ScalarProfile::Constant { value: 0.0 }; dim],
            }],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pieces(&self) -> &[ManeuverPiece] {
        &self.pieces
    }

    pub fn t_end(&self) -> f64 {
        self.pieces.last().map_or(0.0, |p| p.end)
    }

    /// Piece whose half-open interval `[start, end)` contains `t`; the final
    /// endpoint belongs to the last piece.
    pub fn piece_index(&self, t: f64) -> Option<usize> {
        let last = self.pieces.len().checked_sub(1)?;
        if t < -TIME_EPS || t > self.t_end() + TIME_EPS {
            return None;
        }
        Some(
            self.pieces
                .iter()
                .position(|p| t < p.end - TIME_EPS)
                .unwrap_or(last),
        )
    }

    pub fn evaluate(&self, t: f64) -> Result<ManeuverState, ManeuverError> {
        let k = self.piece_index(t).ok_or(ManeuverError::OutOfSchedule {
            t,
            end: self.t_end(),
        })?;
        Ok(self.pieces[k].evaluate(self.dim, t))
    }

    /// Evaluates piece `k` at `t`, extrapolating beyond its interval.
    pub fn evaluate_piece(&self, k: usize, t: f64) -> ManeuverState {
        self.pieces[k].evaluate(self.dim, t)
    }

    pub fn validate(&self) -> Result<(), ManeuverError> {
        let first = self.pieces.first().ok_or(ManeuverError::Empty)?;
        if first.start.abs() > TIME_EPS {
            return Err(ManeuverError::BadStart(first.start));
        }
        for (k, p) in self.pieces.iter().enumerate() {
            if !(p.end > p.start) {
                return Err(ManeuverError::EmptyPiece(k));
            }
            if p.translation.len() != self.dim {
                return Err(ManeuverError::TranslationLength {
                    piece: k,
                    got: p.translation.len(),
                    expected: self.dim,
                });
            }
            if let RotationProfile::Planar { plane: [a, b], .. } = p.rotation {
                if a == b || a >= self.dim || b >= self.dim {
                    return Err(ManeuverError::BadPlane {
                        piece: k,
                        a,
                        b,
                        dim: self.dim,
                    });
                }
            }
            if k > 0 && (self.pieces[k - 1].end - p.start).abs() > TIME_EPS {
                return Err(ManeuverError::NotContiguous(k - 1, k));
            }
            const SAMPLES: usize = 16;
            for s in 0..=SAMPLES {
                let t = p.start + (p.end - p.start) * s as f64 / SAMPLES as f64;
                let st = p.evaluate(self.dim, t);
                if !(st.beta > 0.0) {
                    return Err(ManeuverError::NonPositiveScale {
                        piece: k,
                        t,
                        value: st.beta,
                    });
                }
                let orth = (&st.q.transpose() * &st.q - DMatrix::identity(self.dim, self.dim)).amax();
                if orth > ROTATION_TOL || (st.q.determinant() - 1.0).abs() > ROTATION_TOL {
                    return Err(ManeuverError::NotRotation { piece: k, t });
                }
            }
        }
        for w in self.pieces.windows(2) {
            let t = w[1].start;
            let (a, b) = (w[0].evaluate(self.dim, t), w[1].evaluate(self.dim, t));
            let jump = (a.beta - b.beta)
                .abs()
                .max((&a.q - &b.q).amax())
                .max((&a.delta - &b.delta).amax());
            if jump > CONTINUITY_TOL {
                return Err(ManeuverError::Discontinuous { t, jump });
            }
        }
        Ok(())
    }
}
