//! `formctl`: validate scenarios, inspect follower weights, run simulations
//! and one-shot displacement / MDS solves.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use formctl_core::displacement::{mds_embed, solve_constraint, DisplacementError, SquaredDistanceMatrix};
use formctl_core::formation::{check_general_position, check_localizability};
use formctl_core::graph::validate_graph;
use formctl_core::measurement::Observation;
use formctl_core::output::{fmt_f64, write_trajectory};
use formctl_core::scenario::ScenarioError;
use formctl_core::sim::{error_metrics, run_scenario, SimError};
use formctl_core::{Frame, MeasurementKind, MeasurementSnapshot, Point, ScenarioConfig, SensorKind, Tolerances};
use nalgebra::DMatrix;

#[derive(Parser)]
#[command(name = "formctl", version, about = "Leader-follower formation localization and maneuver control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the sensing graph and nominal formation of a scenario.
    Validate { scenario: PathBuf },
    /// Print the follower matrices and per-follower weights.
    Weights { scenario: PathBuf },
    /// Run a scenario (or every `.toml` in a directory) and write CSV output.
    Simulate {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long = "t-end")]
        t_end: Option<f64>,
    },
    /// Recover a follower's displacement constraint from a measurement table.
    SolveH {
        #[arg(long)]
        kind: SensorKind,
        #[arg(long, value_enum, default_value_t = FrameArg::Global)]
        frame: FrameArg,
        #[arg(long)]
        input: PathBuf,
    },
    /// Embed a squared-distance matrix in `R^dim`.
    Mds {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 2)]
        dim: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FrameArg {
    Global,
    Local,
}

/// Failure classes, mapped onto exit codes.
enum Failure {
    Usage(String),
    Validation(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Validation(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Validation(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Io { .. } => Failure::Usage(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        Failure::Numerical(e.to_string())
    }
}

impl From<DisplacementError> for Failure {
    fn from(e: DisplacementError) -> Self {
        match e {
            DisplacementError::InvalidDistanceMatrix(_)
            | DisplacementError::MissingMeasurement(_)
            | DisplacementError::Measurement(_) => Failure::Validation(e.to_string()),
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

type Outcome = Result<String, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FORMCTL_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Validate { scenario } => validate(&scenario),
        Command::Weights { scenario } => weights(&scenario),
        Command::Simulate {
            scenario,
            out,
            dt,
            t_end,
        } => simulate(&scenario, &out, dt, t_end),
        Command::SolveH { kind, frame, input } => solve_h(kind, frame, &input),
        Command::Mds { input, dim } => mds(&input, dim),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn validate(path: &Path) -> Outcome {
    let cfg = ScenarioConfig::load(path)?;
    let nf = &cfg.nominal;
    let mut s = String::new();
    writeln!(s, "scenario: {}", cfg.name).unwrap();
    writeln!(s, "d = {}, n = {}, m = {}", cfg.dim(), cfg.n(), cfg.m()).unwrap();
    writeln!(s, "graph: {}", validate_graph(nf.graph()).to_string().trim_end()).unwrap();
    writeln!(s, "layers: {:?}", nf.graph().layer_vec()).unwrap();
    for i in nf.graph().followers() {
        let nb = nf.designated(i);
        let mut pts = vec![nf.r()[i - 1].clone()];
        pts.extend(nb.iter().map(|&j| nf.r()[j - 1].clone()));
        let general = check_general_position(&pts[1..], cfg.dim(), &cfg.tol)
            .map_err(|e| Failure::Validation(e.to_string()))?;
        writeln!(
            s,
            "follower {i}: neighbors {nb:?}, kind {}, general position {}",
            kind_label(&cfg.kinds[&i]),
            general
        )
        .unwrap();
    }
    let localizable = check_localizability(nf.omega_ff(), &cfg.tol).map_err(|e| Failure::Validation(e.to_string()))?;
    writeln!(s, "localizable: {localizable}").unwrap();
    writeln!(s, "max constraint residual: {:e}", nf.max_constraint_residual()).unwrap();
    if !localizable {
        return Err(Failure::Validation(format!("{s}follower matrix is singular")));
    }
    Ok(s)
}

fn kind_label(k: &MeasurementKind) -> String {
    match k.frame() {
        Frame::Global => k.sensor().to_string(),
        Frame::Local => format!("{} (local)", k.sensor()),
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> String {
    let mut s = String::new();
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|&x| fmt_f64(x)).collect();
        writeln!(s, "  {}", cells.join(", ")).unwrap();
    }
    s
}

fn weights(path: &Path) -> Outcome {
    let cfg = ScenarioConfig::load(path)?;
    let nf = &cfg.nominal;
    let mut s = String::new();
    writeln!(s, "omega_fl:\n{}", matrix_rows(nf.omega_fl())).unwrap();
    writeln!(s, "omega_ff:\n{}", matrix_rows(nf.omega_ff())).unwrap();
    for (i, w) in nf.weights() {
        let fmt = |v: &[f64]| v.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(", ");
        writeln!(
            s,
            "follower {i}: neighbors {:?}, w = [{}], w_ii = {}, ratios = [{}]",
            w.neighbors,
            fmt(&w.w),
            fmt_f64(w.w_ii),
            fmt(&w.ratios())
        )
        .unwrap();
    }
    Ok(s)
}

fn simulate(path: &Path, out: &Path, dt: Option<f64>, t_end: Option<f64>) -> Outcome {
    if !path.is_dir() {
        return simulate_one(path, out, dt, t_end);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Failure::Usage(format!("no .toml scenarios in {}", path.display())));
    }
    let results: Vec<Outcome> = std::thread::scope(|scope| {
        let handles: Vec<_> = files
            .iter()
            .map(|f| {
                let stem = f.file_stem().unwrap_or_default().to_owned();
                let dir = out.join(stem);
                scope.spawn(move || simulate_one(f, &dir, dt, t_end))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Failure::Numerical("simulation thread panicked".into()))))
            .collect()
    });
    let mut text = String::new();
    let mut worst: Option<Failure> = None;
    for (f, r) in files.iter().zip(results) {
        match r {
            Ok(t) => text.push_str(&t),
            Err(e) => {
                writeln!(text, "{}: FAILED: {}", f.display(), e.message()).unwrap();
                if worst.as_ref().is_none_or(|w| e.code() > w.code()) {
                    worst = Some(e);
                }
            }
        }
    }
    match worst {
        None => Ok(text),
        Some(Failure::Usage(_)) => Err(Failure::Usage(text)),
        Some(Failure::Validation(_)) => Err(Failure::Validation(text)),
        Some(Failure::Numerical(_)) => Err(Failure::Numerical(text)),
    }
}

fn simulate_one(path: &Path, out: &Path, dt: Option<f64>, t_end: Option<f64>) -> Outcome {
    let mut cfg = ScenarioConfig::load(path)?;
    if let Some(dt) = dt {
        cfg.dt = dt;
    }
    if let Some(t) = t_end {
        cfg.t_end = t;
    }
    log::info!("simulating {} (dt = {}, t_end = {})", path.display(), cfg.dt, cfg.t_end);
    let log = run_scenario(&cfg)?;
    fs::create_dir_all(out).map_err(|e| Failure::Usage(format!("cannot create {}: {e}", out.display())))?;
    write_trajectory(&log, out).map_err(|e| Failure::Usage(format!("cannot write to {}: {e}", out.display())))?;
    let mut s = String::new();
    writeln!(
        s,
        "{}: {} samples, {} events, {} fallbacks -> {}",
        path.display(),
        log.samples.len(),
        log.events.len(),
        log.fallbacks,
        out.display()
    )
    .unwrap();
    for a in error_metrics(&log) {
        let t = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.3}"));
        writeln!(
            s,
            "  agent {}: arrived {}, settled {}, peak track {:.3e}, peak est {:.3e}",
            a.agent,
            t(a.arrival_time),
            t(a.settle_time),
            a.peak_track,
            a.peak_est
        )
        .unwrap();
    }
    Ok(s)
}

fn csv_records(path: &Path) -> Result<Vec<csv::StringRecord>, Failure> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    rdr.records()
        .filter(|r| r.as_ref().map_or(true, |r| !r.iter().all(str::is_empty)))
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, k: usize) -> Result<T, Failure> {
    let line = rec.position().map_or(0, |p| p.line());
    let raw = rec
        .get(k)
        .ok_or_else(|| Failure::Validation(format!("line {line}: missing column {}", k + 1)))?;
    raw.parse()
        .map_err(|_| Failure::Validation(format!("line {line}: cannot parse `{raw}`")))
}

/// Reads a measurement table. Rows (no header, `#` comments):
///
/// ```text
/// follower,i
/// neighbors,j0,j1,...
/// vector,from,to,x1,...,xd     # relative position or bearing, in `from`'s frame
/// scalar,a,b,value             # distance or distance ratio
/// angle,vertex,a,b,value       # radians
/// ```
///
/// Readings that involve the follower are its own; the rest are relayed by neighbors.
fn read_snapshot(path: &Path, kind: MeasurementKind) -> Result<MeasurementSnapshot, Failure> {
    let mut follower = None;
    let mut neighbors = Vec::new();
    let (mut own, mut inter) = (Vec::new(), Vec::new());
    let mut obs = Vec::new();
    for rec in csv_records(path)? {
        let line = rec.position().map_or(0, |p| p.line());
        match rec.get(0).unwrap_or("") {
            "follower" => follower = Some(field::<usize>(&rec, 1)?),
            "neighbors" => {
                neighbors = (1..rec.len()).map(|k| field::<usize>(&rec, k)).collect::<Result<_, _>>()?;
            }
            "vector" => {
                let value: Vec<f64> = (3..rec.len()).map(|k| field(&rec, k)).collect::<Result<_, _>>()?;
                obs.push(Observation::Vector {
                    from: field(&rec, 1)?,
                    to: field(&rec, 2)?,
                    value: Point::from_vec(value),
                });
            }
            "scalar" => obs.push(Observation::Scalar {
                a: field(&rec, 1)?,
                b: field(&rec, 2)?,
                value: field(&rec, 3)?,
            }),
            "angle" => obs.push(Observation::Angle {
                vertex: field(&rec, 1)?,
                a: field(&rec, 2)?,
                b: field(&rec, 3)?,
                value: field(&rec, 4)?,
            }),
            other => return Err(Failure::Validation(format!("line {line}: unknown row type `{other}`"))),
        }
    }
    let follower = follower.ok_or_else(|| Failure::Validation("missing `follower` row".into()))?;
    if neighbors.is_empty() {
        return Err(Failure::Validation("missing `neighbors` row".into()));
    }
    for o in obs {
        let mine = match &o {
            Observation::Vector { from, .. } => *from == follower,
            Observation::Scalar { a, b, .. } => *a == follower || *b == follower,
            Observation::Angle { vertex, .. } => *vertex == follower,
        };
        if mine {
            own.push(o);
        } else {
            inter.push(o);
        }
    }
    let snap = MeasurementSnapshot {
        follower,
        t: 0.0,
        kind,
        neighbors,
        own,
        inter,
        neighbor_estimates: vec![],
    };
    snap.validate().map_err(|e| Failure::Validation(e.to_string()))?;
    Ok(snap)
}

fn solve_h(sensor: SensorKind, frame: FrameArg, input: &Path) -> Outcome {
    let frame = match frame {
        FrameArg::Global => Frame::Global,
        FrameArg::Local => Frame::Local,
    };
    let kind = MeasurementKind::new(sensor, frame).map_err(|e| Failure::Usage(e.to_string()))?;
    let snap = read_snapshot(input, kind)?;
    let h = solve_constraint(&snap, &Tolerances::default())?;
    let mut s = String::from("neighbor,h\n");
    for (j, c) in h.neighbors.iter().zip(&h.coefficients) {
        writeln!(s, "{j},{}", fmt_f64(*c)).unwrap();
    }
    writeln!(s, "# h_ii = {}, localizable = {}", fmt_f64(h.h_ii), h.localizable).unwrap();
    if let Some(b) = h.barycentric() {
        let cells: Vec<String> = b.iter().map(|&x| fmt_f64(x)).collect();
        writeln!(s, "# barycentric = [{}]", cells.join(", ")).unwrap();
    }
    Ok(s)
}

fn mds(input: &Path, dim: usize) -> Outcome {
    if dim == 0 {
        return Err(Failure::Usage("--dim must be positive".into()));
    }
    let rows: Vec<Vec<f64>> = csv_records(input)?
        .iter()
        .map(|r| (0..r.len()).map(|k| field(r, k)).collect())
        .collect::<Result<_, _>>()?;
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Failure::Validation(format!("expected a square matrix, got {n} rows of uneven width")));
    }
    let m = SquaredDistanceMatrix::new(DMatrix::from_fn(n, n, |r, c| rows[r][c]))?;
    let emb = mds_embed(&m, dim, &Tolerances::default())?;
    let mut s = (1..=dim).map(|k| format!("x{k}")).collect::<Vec<_>>().join(",");
    s.push('\n');
    for col in emb.coords.column_iter() {
        let cells: Vec<String> = col.iter().map(|&x| fmt_f64(x)).collect();
        writeln!(s, "{}", cells.join(",")).unwrap();
    }
    if emb.rank_deficient {
        log::warn!("embedding is rank deficient");
    }
    Ok(s)
}
