mod common;

use common::*;
use formctl_core::maneuver::{ManeuverPiece, ManeuverSchedule, RotationProfile, ScalarProfile};
use formctl_core::sim::{error_metrics, run_scenario, EventKind, SimError};
use formctl_core::{ControlGains, Mode, Point, ScenarioConfig};
use nalgebra::DVector;

fn passage() -> ScenarioConfig {
    ScenarioConfig::load(scenario_path("passage_maneuver.toml")).unwrap()
}

fn constant(v: f64) -> ScalarProfile {
    ScalarProfile::Constant { value: v }
}

/// Passage formation parked at its nominal shape, translated at constant velocity.
fn parked(velocity: f64, t_end: f64) -> ScenarioConfig {
    let mut cfg = passage();
    let piece = ManeuverPiece {
        start: 0.0,
        end: t_end,
        scale: constant(1.0),
        rotation: RotationProfile::Identity,
        translation: vec![ScalarProfile::Linear { offset: 0.0, rate: velocity }, constant(0.0)],
    };
    cfg.schedule = ManeuverSchedule::new(2, vec![piece]).unwrap();
    cfg.t_end = t_end;
    cfg.initial_positions = passage_r();
    cfg.initial_estimates = passage_r();
    cfg
}

/// All positions and estimates of the last sample, stacked.
fn final_state(cfg: &ScenarioConfig) -> DVector<f64> {
    let log = run_scenario(cfg).unwrap();
    let last = log.samples.last().unwrap();
    let v: Vec<f64> = last.agents.iter().flat_map(|a| a.p.iter().chain(a.p_hat.iter()).copied().collect::<Vec<_>>()).collect();
    DVector::from_vec(v)
}

#[test]
fn equilibrium_start_stays_put() {
    let cfg = parked(0.0, 3.0);
    let log = run_scenario(&cfg).unwrap();
    for k in 0..log.errors.t.len() {
        for a in 1..=3 {
            assert!(log.errors.worst(a, k) <= 1e-9, "leader {a} step {k}");
        }
        // Round-off in the followers' residuals is amplified by the
        // fractional-power terms into a bounded discrete chatter.
        for a in 4..=5 {
            assert!(log.errors.worst(a, k) <= 1e-5, "follower {a} step {k}");
        }
    }
    for s in error_metrics(&log) {
        assert_eq!(s.settle_time, Some(0.0));
    }
}

/// One RK4 step from a state exactly on a linear target.
fn leader_step_error(g: &ControlGains, t: f64, dt: f64) -> f64 {
    use formctl_core::control::leader_control;
    use formctl_core::sim::rk4_step;
    let v = nalgebra::dvector![2.0, -0.5];
    let target = |t: f64| nalgebra::dvector![1.0, 3.0] + &v * t;
    let x = rk4_step(&target(t), t, dt, |ts, xs| Ok::<_, ()>(leader_control(&(xs - target(ts)), &v, g))).unwrap();
    (x - target(t + dt)).norm()
}

#[test]
fn leader_feedforward_step_error() {
    let dt = 1e-3;
    // Linear part alone: pure feedforward integrates to round-off.
    let linear = ControlGains { a2: 1e-300, ..ControlGains::default() };
    // Full law: stage round-off is lifted by the fractional power, but never
    // beyond the discrete chatter scale (a2 dt)^(1 / (1 - a3)).
    let g = ControlGains::default();
    let chatter = (g.a2 * dt).powf(1.0 / (1.0 - g.a3));
    for k in 0..2000 {
        let t = k as f64 * dt;
        assert!(leader_step_error(&linear, t, dt) <= 1e-12, "step {k}");
        assert!(leader_step_error(&g, t, dt) <= chatter, "step {k}");
    }
}

#[test]
fn leaders_track_a_linear_target() {
    let log = run_scenario(&parked(2.0, 2.0)).unwrap();
    for a in 1..=3 {
        assert!(log.errors.track[a - 1].iter().all(|&e| e <= 1e-6), "leader {a}");
    }
}

#[test]
fn runs_are_deterministic() {
    let mut cfg = passage();
    cfg.t_end = 4.0;
    assert_eq!(run_scenario(&cfg).unwrap(), run_scenario(&cfg).unwrap());
}

#[test]
fn halving_the_step_shrinks_the_error_fourth_order() {
    // Before the first switch every agent follows a smooth vector field.
    let mut cfg = passage();
    cfg.t_end = 0.5;
    let states: Vec<DVector<f64>> = [0.02, 0.01, 0.005]
        .iter()
        .map(|&dt| {
            cfg.dt = dt;
            cfg.record_every = 1;
            final_state(&cfg)
        })
        .collect();
    let coarse = (&states[0] - &states[1]).norm();
    let fine = (&states[1] - &states[2]).norm();
    let ratio = coarse / fine;
    assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
}

/// Five-point central derivative of sampled values.
fn derivative(series: &[Point], k: usize, h: f64) -> Point {
    (&series[k - 2] - &series[k - 1] * 8.0 + &series[k + 1] * 8.0 - &series[k + 2]) / (12.0 * h)
}

#[test]
fn sampled_error_dynamics_match_the_closed_loop_matrices() {
    let mut cfg = passage();
    cfg.t_end = 1.6;
    cfg.record_every = 1;
    let g = cfg.gains;
    let dt = cfg.dt;
    let w: Vec<Vec<f64>> = [4, 5].iter().map(|&i| cfg.nominal.follower_weights(i).unwrap().ratios()).collect();
    let nb: Vec<Vec<usize>> = [4, 5].iter().map(|&i| cfg.nominal.designated(i).to_vec()).collect();
    let log = run_scenario(&cfg).unwrap();

    for (f, agent) in [4usize, 5].into_iter().enumerate() {
        let mut ebar = Vec::new();
        let mut ehat = Vec::new();
        let mut modes = Vec::new();
        for s in &log.samples {
            let a = &s.agents[agent - 1];
            let combo = nb[f].iter().zip(&w[f]).fold(Point::zeros(2), |acc, (&j, &c)| acc + &s.agents[j - 1].p_hat * c);
            ebar.push(&a.p - combo);
            ehat.push(&a.p_hat - &a.p);
            modes.push(a.mode);
        }
        let mut checked = [0, 0];
        for k in (5..log.samples.len() - 5).step_by(7) {
            if modes[k - 2..=k + 2].iter().any(|&m| m != modes[k]) {
                continue;
            }
            let (db, dh) = (derivative(&ebar, k, dt), derivative(&ehat, k, dt));
            let (want_b, want_h) = match modes[k] {
                Mode::Maintaining => {
                    let s = -(&ebar[k] + &ehat[k]) * g.a1;
                    (s.clone(), s)
                }
                Mode::Maneuvering => {
                    let y1 = (&ebar[k] + &ehat[k]) * g.a2;
                    let y2 = &ebar[k] * g.a2 + &ehat[k] * (g.a2 + g.a4);
                    // Skip states where the sig term is not smooth on the stencil.
                    if y1.iter().chain(y2.iter()).any(|x| x.abs() < 1e-2) {
                        continue;
                    }
                    let s = |y: &Point| -y - formctl_core::control::sig_pow(y, g.a3);
                    (s(&y1), s(&y2))
                }
                Mode::Leader => unreachable!(),
            };
            let scale = want_b.norm().max(want_h.norm());
            assert!((&db - &want_b).norm() <= 1e-5 * scale, "agent {agent} t {} {:?}", log.samples[k].t, modes[k]);
            assert!((&dh - &want_h).norm() <= 1e-5 * scale, "agent {agent} t {} {:?}", log.samples[k].t, modes[k]);
            checked[(modes[k] == Mode::Maneuvering) as usize] += 1;
        }
        assert!(checked[0] > 50, "agent {agent}: {checked:?}");
        if agent == 4 {
            assert!(checked[1] > 20, "agent {agent}: {checked:?}");
        }
    }
}

#[test]
fn passage_converges_sequentially() {
    let cfg = passage();
    let log = run_scenario(&cfg).unwrap();
    assert_eq!(log.fallbacks, 0);
    let arrivals: Vec<(f64, usize)> = log.arrival_events().map(|e| (e.t, e.agent)).collect();
    assert_eq!(arrivals.len(), 5, "{arrivals:?}");
    let t = |a: usize| log.arrival_times[a - 1].unwrap();
    assert!((1..=3).all(|l| t(l) < t(4)) && t(4) < t(5));
    // No follower falls back to maintaining once its neighbors have arrived.
    assert!(!log.events.iter().any(|e| e.kind == EventKind::Released));
    assert!(!log
        .events
        .iter()
        .any(|e| matches!(e.kind, EventKind::ModeSwitch { from: Mode::Maneuvering, .. })));
    let summary = error_metrics(&log);
    let leader_settle = (0..3).map(|k| summary[k].settle_time.unwrap()).fold(0.0, f64::max);
    assert!(summary[3].settle_time.unwrap() > leader_settle);
    assert!(summary[4].settle_time.unwrap() > summary[3].settle_time.unwrap());
    for s in &summary {
        assert!(s.max_maintaining_increase <= 1e-6 * cfg.dt);
    }
}

#[test]
fn schedule_must_cover_the_run() {
    let mut cfg = passage();
    cfg.t_end = 25.0;
    assert!(matches!(run_scenario(&cfg), Err(SimError::ScheduleExhausted { .. })));
    cfg.t_end = 1.0;
    cfg.dt = 0.0;
    assert!(matches!(run_scenario(&cfg), Err(SimError::BadStep(_))));
}

#[test]
fn unstable_step_is_reported() {
    let mut cfg = passage();
    cfg.gains = ControlGains { a1: 1e3, ..ControlGains::default() };
    cfg.dt = 0.1;
    cfg.t_end = 10.0;
    assert!(matches!(run_scenario(&cfg), Err(SimError::NumericalBlowup { .. })));
}

