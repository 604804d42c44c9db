mod common;

use common::*;
use formctl_core::control::Mode;
use formctl_core::output::{trajectory_header, write_trajectory};
use formctl_core::scenario::{parse_scenario, ScenarioError};
use formctl_core::sim::{run_scenario, AgentSample, ErrorSeries, Sample, TrajectoryLog};
use formctl_core::{MeasurementKind, Point, ScenarioConfig, SensorKind};
use proptest::prelude::*;

fn passage_src() -> String {
    std::fs::read_to_string(scenario_path("passage_maneuver.toml")).unwrap()
}

#[test]
fn bundled_scenarios_parse() {
    let cfg = parse_scenario(scenario_path("passage_maneuver.toml")).unwrap();
    assert_eq!((cfg.n(), cfg.m(), cfg.dim()), (5, 3, 2));
    assert_eq!(cfg.kinds[&4], MeasurementKind::global(SensorKind::Angle));
    assert_eq!(cfg.kinds[&5], MeasurementKind::global(SensorKind::Distance));
    let six = parse_scenario(scenario_path("six_agent_layered.toml")).unwrap();
    assert_eq!((six.n(), six.m(), six.dim()), (6, 3, 2));
}

#[test]
fn bundled_scenarios_round_trip() {
    for name in ["passage_maneuver.toml", "six_agent_layered.toml"] {
        let cfg = parse_scenario(scenario_path(name)).unwrap();
        let again = ScenarioConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(cfg, again, "{name}");
    }
}

#[test]
fn unreachable_follower_is_cited() {
    let src = passage_src().replace("[5, 2], [5, 3], [5, 4]", "[5, 3], [5, 4]").replace("5 = [2, 3, 4]", "5 = [3, 4]");
    match ScenarioConfig::from_toml_str(&src) {
        Err(ScenarioError::Validation(report)) => assert!(report.cites(5)),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn missing_kind_names_the_section() {
    let src = passage_src().replace("5 = { kind = \"distance\" }\n", "");
    match ScenarioConfig::from_toml_str(&src) {
        Err(ScenarioError::Parse { section, .. }) => assert_eq!(section, "followers"),
        other => panic!("unexpected {other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn edited_configs_round_trip(
        dt in 1e-4f64..1e-2,
        a1 in 0.1f64..5.0,
        a3 in 0.05f64..0.95,
        eps in 1e-6f64..1e-2,
        offset in -2.0f64..2.0,
        local in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let mut cfg = ScenarioConfig::load(scenario_path("passage_maneuver.toml")).unwrap();
        cfg.dt = dt;
        cfg.gains.a1 = a1;
        cfg.gains.a3 = a3;
        cfg.tol.epsilon = eps;
        cfg.seed = seed;
        cfg.initial_estimates[4] = &cfg.initial_estimates[4] + Point::from_element(2, offset);
        if local {
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
            cfg.kinds.insert(5, MeasurementKind::new(SensorKind::Bearing, formctl_core::Frame::Local).unwrap());
            cfg.frames = Some(random_frames(&mut rng, 5, 2));
        }
        let text = cfg.to_toml_string().unwrap();
        let again = ScenarioConfig::from_toml_str(&text).unwrap();
        prop_assert_eq!(cfg, again);
    }
}

fn sample(t: f64, n: usize) -> Sample {
    Sample {
        t,
        agents: (0..n)
            .map(|_| AgentSample {
                p: Point::zeros(2),
                p_hat: Point::zeros(2),
                mode: Mode::Leader,
                u: Point::zeros(2),
                err_track: 0.0,
                err_est: 0.0,
                err_bar: 0.0,
            })
            .collect(),
    }
}

fn empty_log(n: usize) -> TrajectoryLog {
    TrajectoryLog {
        dim: 2,
        n,
        m: n,
        dt: 0.1,
        epsilon: 1e-3,
        samples: Vec::new(),
        events: Vec::new(),
        errors: ErrorSeries::default(),
        arrival_times: vec![None; n],
        fallbacks: 0,
    }
}

#[test]
fn trajectory_header_is_stable() {
    assert_eq!(
        trajectory_header(2).join(","),
        "t,agent,px,py,phx,phy,mode,err_track,err_est,err_bar,ux,uy"
    );
    assert_eq!(
        trajectory_header(3).join(","),
        "t,agent,px,py,pz,phx,phy,phz,mode,err_track,err_est,err_bar,ux,uy,uz"
    );
}

#[test]
fn one_row_per_agent_per_sample() {
    let mut log = empty_log(2);
    log.samples = (0..3).map(|k| sample(k as f64 * 0.1, 2)).collect();
    let dir = tempfile::tempdir().unwrap();
    write_trajectory(&log, dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 6);
    assert!(!text.contains('\r'));
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[1], "1");
    assert_eq!(row[6], "L");
}

#[test]
fn empty_log_writes_headers_only() {
    let dir = tempfile::tempdir().unwrap();
    write_trajectory(&empty_log(3), dir.path()).unwrap();
    for (file, header) in [
        ("trajectory.csv", trajectory_header(2).join(",")),
        ("events.csv", "t,agent,event".to_string()),
        (
            "summary.csv",
            "agent,peak_track,peak_est,settle_time,arrival_time,max_maintaining_increase,max_switch_jump".to_string(),
        ),
    ] {
        let text = std::fs::read_to_string(dir.path().join(file)).unwrap();
        assert_eq!(text, format!("{header}\n"), "{file}");
    }
}

#[test]
fn passage_events_list_arrivals_in_order() {
    let mut cfg = ScenarioConfig::load(scenario_path("passage_maneuver.toml")).unwrap();
    cfg.t_end = 8.0;
    let log = run_scenario(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_trajectory(&log, dir.path()).unwrap();
    let mut rdr = csv::Reader::from_path(dir.path().join("events.csv")).unwrap();
    let arrivals: Vec<(f64, usize)> = rdr
        .records()
        .map(|r| r.unwrap())
        .filter(|r| &r[2] == "arrived")
        .map(|r| (r[0].parse().unwrap(), r[1].parse().unwrap()))
        .collect();
    let agents: Vec<usize> = arrivals.iter().map(|a| a.1).collect();
    assert_eq!(agents.len(), 5);
    assert!(agents[..3].iter().all(|&a| a <= 3));
    assert_eq!(&agents[3..], &[4, 5]);
    assert!(arrivals.windows(2).all(|w| w[0].0 <= w[1].0));

    let text = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let first: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    // 17 significant digits.
    assert_eq!(first[2].split('e').next().unwrap().replace(['-', '.'], "").len(), 17);
}
