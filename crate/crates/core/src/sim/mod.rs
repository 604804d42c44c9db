//! Fixed-step RK4 integration of the coupled position/estimate dynamics.
//!
//! The state stacks every agent's true position followed by every agent's
//! estimate (leaders carry `p̂ = p`). Modes, arrival flags and the active
//! maneuver piece are frozen over each step; measurements and displacement
//! constraints are recomputed at every RK4 stage. Agents are evaluated in
//! index order within a stage, so a neighbor's `v̂_j` is its estimate
//! derivative at the same stage.

mod log;

pub use log::{error_metrics, AgentSample, AgentSummary, ErrorSeries, Event, EventKind, Sample, TrajectoryLog};

use nalgebra::DVector;

use crate::control::{
    continuity_gains, formation_pull, latch_arrival, leader_control, maintain_control, maneuver_control,
    arrival_residuals, update_mode, ControlError, FollowerOutput, Mode,
};
use crate::displacement::solve_constraint;
use crate::formation::TargetState;
use crate::measurement::{synthesize_snapshot, AgentEstimate};
use crate::scenario::ScenarioConfig;
use crate::{AgentId, Point};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("state diverged at t = {t} (agent {agent})")]
    NumericalBlowup { t: f64, agent: AgentId },
    #[error("t_end = {t_end} exceeds the schedule, which ends at {schedule_end}")]
    ScheduleExhausted { t_end: f64, schedule_end: f64 },
    #[error("invalid step size {0}")]
    BadStep(f64),
    #[error(transparent)]
    Control(#[from] ControlError),
}

/// One classical RK4 step of `dx/dt = f(t, x)`.
pub fn rk4_step<E>(
    x: &DVector<f64>,
    t: f64,
    dt: f64,
    mut f: impl FnMut(f64, &DVector<f64>) -> Result<DVector<f64>, E>,
) -> Result<DVector<f64>, E> {
    let k1 = f(t, x)?;
    rk4_finish(x, t, dt, k1, f)
}

/// RK4 step given an already evaluated first stage.
fn rk4_finish<E>(
    x: &DVector<f64>,
    t: f64,
    dt: f64,
    k1: DVector<f64>,
    mut f: impl FnMut(f64, &DVector<f64>) -> Result<DVector<f64>, E>,
) -> Result<DVector<f64>, E> {
    let h = dt / 2.0;
    let k2 = f(t + h, &(x + &k1 * h))?;
    let k3 = f(t + h, &(x + &k2 * h))?;
    let k4 = f(t + dt, &(x + &k3 * dt))?;
    Ok(x + (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0))
}

/// Output of one vector-field evaluation.
struct Evaluation {
    deriv: DVector<f64>,
    u: Vec<Point>,
    /// Live `h_ij / h_ii` of each maneuvering follower that obtained one.
    h_ratio: Vec<Option<Vec<f64>>>,
    fallbacks: usize,
}

struct Stepper<'a> {
    cfg: &'a ScenarioConfig,
    n: usize,
    m: usize,
    d: usize,
    w_ratio: Vec<Vec<f64>>,
}

impl<'a> Stepper<'a> {
    fn new(cfg: &'a ScenarioConfig) -> Self {
        let g = cfg.nominal.graph();
        let w_ratio = (1..=g.n())
            .map(|i| cfg.nominal.follower_weights(i).map(|w| w.ratios()).unwrap_or_default())
            .collect();
        Self {
            cfg,
            n: g.n(),
            m: g.m(),
            d: g.dim(),
            w_ratio,
        }
    }

    fn p<'x>(&self, x: &'x DVector<f64>, a: AgentId) -> Point {
        x.rows((a - 1) * self.d, self.d).into_owned()
    }

    fn p_hat(&self, x: &DVector<f64>, a: AgentId) -> Point {
        x.rows((self.n + a - 1) * self.d, self.d).into_owned()
    }

    fn targets(&self, piece: usize, t: f64) -> TargetState {
        self.cfg.nominal.targets(&self.cfg.schedule.evaluate_piece(piece, t))
    }

    fn evaluate(
        &self,
        t: f64,
        x: &DVector<f64>,
        piece: usize,
        modes: &[Mode],
        arrived: &[bool],
    ) -> Evaluation {
        let (n, d) = (self.n, self.d);
        let cfg = self.cfg;
        let target = self.targets(piece, t);
        let truth: Vec<Point> = (1..=n).map(|a| self.p(x, a)).collect();
        let mut est: Vec<AgentEstimate> = (1..=n)
            .map(|a| AgentEstimate {
                p_hat: self.p_hat(x, a),
                v_hat: Point::zeros(d),
                arrived: arrived[a - 1],
            })
            .collect();
        let mut deriv = DVector::zeros(2 * n * d);
        let mut u_all = Vec::with_capacity(n);
        let mut h_ratio = vec![None; n];
        let mut fallbacks = 0;

        for a in 1..=n {
            let k = a - 1;
            let out = if a <= self.m {
                let e = &truth[k] - &target.positions[k];
                let u = leader_control(&e, &target.velocities[k], &cfg.gains);
                FollowerOutput {
                    p_hat_dot: u.clone(),
                    u,
                }
            } else {
                let nb = cfg.nominal.designated(a);
                let w = &self.w_ratio[k];
                let nb_p: Vec<Point> = nb.iter().map(|&j| est[j - 1].p_hat.clone()).collect();
                let nb_v: Vec<Point> = nb.iter().map(|&j| est[j - 1].v_hat.clone()).collect();
                let p_hat = &est[k].p_hat;
                let live = (modes[k] == Mode::Maneuvering)
                    .then(|| {
                        let kind = cfg.kinds[&a];
                        let snap = synthesize_snapshot(
                            &truth,
                            &est,
                            a,
                            nb,
                            kind,
                            cfg.frames.as_ref(),
                            t,
                            &cfg.tol,
                        )
                        .ok()?;
                        solve_constraint(&snap, &cfg.tol).ok()?.barycentric()
                    })
                    .flatten();
                let out = match &live {
                    Some(h) => maneuver_control(p_hat, &nb_p, &nb_v, w, h, &cfg.gains),
                    None => {
                        if modes[k] == Mode::Maneuvering {
                            fallbacks += 1;
                        }
                        let gain = if cfg.gains.continuity_mode {
                            let eta = formation_pull(p_hat, &nb_p, w, cfg.gains.a2);
                            continuity_gains(&eta, cfg.gains.a2, cfg.gains.a3, &cfg.tol)
                        } else {
                            Point::from_element(d, cfg.gains.a1)
                        };
                        maintain_control(p_hat, &nb_p, &nb_v, w, &gain)
                    }
                }
                .expect("neighbor lists and weights have matching lengths");
                h_ratio[k] = live;
                out
            };
            deriv.rows_mut(k * d, d).copy_from(&out.u);
            deriv.rows_mut((n + k) * d, d).copy_from(&out.p_hat_dot);
            est[k].v_hat = out.p_hat_dot;
            u_all.push(out.u);
        }
        Evaluation {
            deriv,
            u: u_all,
            h_ratio,
            fallbacks,
        }
    }

    /// Error norms `(track, est, bar)` of every agent at state `x`.
    fn errors(&self, x: &DVector<f64>, target: &TargetState) -> Vec<(f64, f64, f64)> {
        (1..=self.n)
            .map(|a| {
                let k = a - 1;
                let p = self.p(x, a);
                let track = (&p - &target.positions[k]).norm();
                if a <= self.m {
                    return (track, 0.0, track);
                }
                let est = (self.p_hat(x, a) - &p).norm();
                let nb = self.cfg.nominal.designated(a);
                let bar = nb
                    .iter()
                    .zip(&self.w_ratio[k])
                    .fold(p, |acc, (&j, &w)| acc - self.p_hat(x, j) * w)
                    .norm();
                (track, est, bar)
            })
            .collect()
    }
}

/// Runs a scenario from `t = 0` to `t_end`.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<TrajectoryLog, SimError> {
    let dt = cfg.dt;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SimError::BadStep(dt));
    }
    let schedule_end = cfg.schedule.t_end();
    if cfg.t_end > schedule_end + 1e-9 {
        return Err(SimError::ScheduleExhausted {
            t_end: cfg.t_end,
            schedule_end,
        });
    }
    cfg.gains.validate()?;

    let s = Stepper::new(cfg);
    let (n, m, d) = (s.n, s.m, s.d);
    let steps = ((cfg.t_end / dt).round() as usize).max(1);
    let record_every = cfg.record_every.max(1);

    let mut x = DVector::zeros(2 * n * d);
    for a in 1..=n {
        let k = a - 1;
        x.rows_mut(k * d, d).copy_from(&cfg.initial_positions[k]);
        let est = if a <= m {
            &cfg.initial_positions[k]
        } else {
            &cfg.initial_estimates[k]
        };
        x.rows_mut((n + k) * d, d).copy_from(est);
    }

    let piece_at = |t: f64| {
        cfg.schedule
            .piece_index((t + 1e-9).min(schedule_end))
            .expect("time within schedule")
    };

    let mut log = TrajectoryLog::new(d, n, m, dt, cfg.tol.epsilon);
    let mut arrived = vec![false; n];
    let mut prev_modes: Option<Vec<Mode>> = None;
    let mut prev_u: Vec<Point> = Vec::new();

    for step in 0..=steps {
        let t = step as f64 * dt;
        let piece = piece_at(t);

        // Modes for this step come from the flags published at the previous step.
        let modes: Vec<Mode> = (1..=n)
            .map(|a| {
                if a <= m {
                    Mode::Leader
                } else {
                    let flags: Vec<bool> = cfg.nominal.designated(a).iter().map(|&j| arrived[j - 1]).collect();
                    update_mode(&flags)
                }
            })
            .collect();

        let eval = s.evaluate(t, &x, piece, &modes, &arrived);
        log.fallbacks += eval.fallbacks;
        let target = s.targets(piece, t);
        let errs = s.errors(&x, &target);

        // Mode switch events, with the input jump across the switch.
        if let Some(prev) = &prev_modes {
            for k in 0..n {
                if prev[k] != modes[k] {
                    log.events.push(Event {
                        t,
                        agent: k + 1,
                        kind: EventKind::ModeSwitch {
                            from: prev[k],
                            to: modes[k],
                        },
                        jump: Some((&eval.u[k] - &prev_u[k]).norm()),
                    });
                }
            }
        }

        // Arrival flags at this state.
        let mut next_arrived = arrived.clone();
        for a in 1..=n {
            let k = a - 1;
            let flag = if a <= m {
                latch_arrival(arrived[k], true, errs[k].0, &cfg.tol)
            } else {
                let ready = modes[k] == Mode::Maneuvering;
                let residual = eval.h_ratio[k].as_ref().map_or(f64::INFINITY, |h| {
                    let nb = cfg.nominal.designated(a);
                    let nb_p: Vec<Point> = nb.iter().map(|&j| s.p_hat(&x, j)).collect();
                    let (ra, rb) = arrival_residuals(&s.p_hat(&x, a), &nb_p, &s.w_ratio[k], h);
                    ra.max(rb)
                });
                latch_arrival(arrived[k], ready, residual, &cfg.tol)
            };
            if flag != arrived[k] {
                log.events.push(Event {
                    t,
                    agent: a,
                    kind: if flag { EventKind::Arrived } else { EventKind::Released },
                    jump: None,
                });
                if flag && log.arrival_times[k].is_none() {
                    log.arrival_times[k] = Some(t);
                }
            }
            next_arrived[k] = flag;
        }

        log.errors.t.push(t);
        for (k, &(tr, es, br)) in errs.iter().enumerate() {
            log.errors.track[k].push(tr);
            log.errors.est[k].push(es);
            log.errors.bar[k].push(br);
            log.errors.modes[k].push(modes[k]);
        }
        if step % record_every == 0 || step == steps {
            log.samples.push(Sample {
                t,
                agents: (0..n)
                    .map(|k| AgentSample {
                        p: s.p(&x, k + 1),
                        p_hat: s.p_hat(&x, k + 1),
                        mode: modes[k],
                        u: eval.u[k].clone(),
                        err_track: errs[k].0,
                        err_est: errs[k].1,
                        err_bar: errs[k].2,
                    })
                    .collect(),
            });
        }

        if step < steps {
            let mut fallbacks = 0;
            x = rk4_finish(&x, t, dt, eval.deriv, |ts, xs| {
                let e = s.evaluate(ts, xs, piece, &modes, &arrived);
                fallbacks += e.fallbacks;
                Ok::<_, SimError>(e.deriv)
            })?;
            log.fallbacks += fallbacks;
            if let Some(i) = (0..2 * n * d).find(|&i| !(x[i].abs() <= cfg.tol.blowup)) {
                return Err(SimError::NumericalBlowup {
                    t: t + dt,
                    agent: (i / d) % n + 1,
                });
            }
        }

        arrived = next_arrived;
        prev_u = eval.u;
        prev_modes = Some(modes);
    }
    if log.fallbacks > 0 {
        ::log::warn!(
            "{}: {} stage evaluations fell back to the maintaining law",
            cfg.name,
            log.fallbacks
        );
    }
    Ok(log)
}
