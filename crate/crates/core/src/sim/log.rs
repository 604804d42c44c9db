//! Trajectory records and derived error metrics.

use std::fmt;

use crate::control::Mode;
use crate::{AgentId, Point};

#[derive(Clone, Debug, PartialEq)]
pub struct AgentSample {
    pub p: Point,
    pub p_hat: Point,
    pub mode: Mode,
    pub u: Point,
    /// `||p_i - p*_i||`.
    pub err_track: f64,
    /// `||p̂_i - p_i||` (zero for leaders).
    pub err_est: f64,
    /// Followers: `||p_i - Σ w/w_ii p̂_j||`; leaders: same as `err_track`.
    pub err_bar: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub agents: Vec<AgentSample>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    Arrived,
    Released,
    ModeSwitch { from: Mode, to: Mode },
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventKind::Arrived => f.write_str("arrived"),
            EventKind::Released => f.write_str("released"),
            EventKind::ModeSwitch { from, to } => write!(f, "mode_switch:{}->{}", from.code(), to.code()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub t: f64,
    pub agent: AgentId,
    pub kind: EventKind,
    /// For mode switches: `||u(t_k) - u(t_{k-1})||` across the switch.
    pub jump: Option<f64>,
}

/// Error norms at every integration step (not only at recorded samples).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ErrorSeries {
    pub t: Vec<f64>,
    /// `[agent - 1][step]`.
    pub track: Vec<Vec<f64>>,
    pub est: Vec<Vec<f64>>,
    pub bar: Vec<Vec<f64>>,
    pub modes: Vec<Vec<Mode>>,
}

impl ErrorSeries {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            t: Vec::new(),
            track: vec![Vec::new(); n],
            est: vec![Vec::new(); n],
            bar: vec![Vec::new(); n],
            modes: vec![Vec::new(); n],
        }
    }

    /// `||(ē_i, ê_i)||` for followers, `||ẽ_i||` for leaders.
    pub fn formation_error(&self, agent: AgentId, step: usize) -> f64 {
        let k = agent - 1;
        self.bar[k][step].hypot(self.est[k][step])
    }

    /// Largest of the tracking, estimation and barycentric errors.
    pub fn worst(&self, agent: AgentId, step: usize) -> f64 {
        let k = agent - 1;
        self.track[k][step].max(self.est[k][step]).max(self.bar[k][step])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryLog {
    pub dim: usize,
    pub n: usize,
    pub m: usize,
    pub dt: f64,
    pub epsilon: f64,
    pub samples: Vec<Sample>,
    pub events: Vec<Event>,
    pub errors: ErrorSeries,
    /// First arrival time per agent (`[agent - 1]`).
    pub arrival_times: Vec<Option<f64>>,
    /// Stage evaluations where a maneuvering follower fell back to the
    /// maintaining law because its live constraint was unavailable.
    pub fallbacks: usize,
}

/// Per-agent summary of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentSummary {
    pub agent: AgentId,
    pub peak_track: f64,
    pub peak_est: f64,
    /// Earliest time after which all of the agent's errors stay at or below epsilon.
    pub settle_time: Option<f64>,
    pub arrival_time: Option<f64>,
    /// Largest per-step increase of the formation error while maintaining.
    pub max_maintaining_increase: f64,
    /// Largest control-input jump at a mode switch.
    pub max_switch_jump: f64,
}

impl TrajectoryLog {
    pub(crate) fn new(dim: usize, n: usize, m: usize, dt: f64, epsilon: f64) -> Self {
        Self {
            dim,
            n,
            m,
            dt,
            epsilon,
            samples: Vec::new(),
            events: Vec::new(),
            errors: ErrorSeries::new(n),
            arrival_times: vec![None; n],
            fallbacks: 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.errors.t.is_empty()
    }

    /// First time in `[start, end)` after which the agent's errors stay at or
    /// below `eps` until `end`. `None` if they exceed `eps` at the last step
    /// before `end` or the window holds no steps.
    pub fn settle_time_in(&self, agent: AgentId, start: f64, end: f64, eps: f64) -> Option<f64> {
        let ts = &self.errors.t;
        let lo = ts.partition_point(|&t| t < start);
        let hi = ts.partition_point(|&t| t < end);
        if lo >= hi {
            return None;
        }
        let mut settle = Some(ts[lo]);
        for k in lo..hi {
            if self.errors.worst(agent, k) > eps {
                settle = ts.get(k + 1).copied().filter(|&t| t < end);
            }
        }
        settle
    }

    /// Largest per-step increase of `||e_i||` over steps integrated in
    /// maintaining mode.
    pub fn max_maintaining_increase(&self, agent: AgentId) -> f64 {
        let modes = &self.errors.modes[agent - 1];
        (0..self.errors.t.len().saturating_sub(1))
            .filter(|&k| modes[k] == Mode::Maintaining)
            .map(|k| self.errors.formation_error(agent, k + 1) - self.errors.formation_error(agent, k))
            .fold(f64::NEG_INFINITY, f64::max)
            .max(0.0)
    }

    pub fn switch_jumps(&self, agent: AgentId) -> impl Iterator<Item = (f64, Mode, Mode, f64)> + '_ {
        self.events.iter().filter(move |e| e.agent == agent).filter_map(|e| match e.kind {
            EventKind::ModeSwitch { from, to } => Some((e.t, from, to, e.jump.unwrap_or(0.0))),
            _ => None,
        })
    }

    pub fn arrival_events(&self) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(|e| e.kind == EventKind::Arrived)
    }
}

/// Peak errors, settling times, maintaining monotonicity and switch jumps per agent.
pub fn error_metrics(log: &TrajectoryLog) -> Vec<AgentSummary> {
    let ts = &log.errors.t;
    (1..=log.n)
        .map(|agent| {
            let k = agent - 1;
            let peak = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
            let settle_time = ts.last().and_then(|&end| {
                // Include the final step in the window.
                log.settle_time_in(agent, 0.0, end + log.dt, log.epsilon)
            });
            AgentSummary {
                agent,
                peak_track: peak(&log.errors.track[k]),
                peak_est: peak(&log.errors.est[k]),
                settle_time,
                arrival_time: log.arrival_times[k],
                max_maintaining_increase: log.max_maintaining_increase(agent),
                max_switch_jump: log.switch_jumps(agent).map(|s| s.3).fold(0.0, f64::max),
            }
        })
        .collect()
}
