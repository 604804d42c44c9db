//! Scenario files (TOML) and the validated configuration they describe.
//!
//! ```toml
//! [meta]
//! name = "example"
//! dim = 2
//! agents = 5
//! leaders = 3
//!
//! [nominal]
//! positions = [[2.0, 1.0], [-1.0, 3.0], [-1.0, -1.0], [-4.0, 3.0], [-4.0, -1.0]]
//!
//! [graph]
//! edges = [[4, 1], [4, 2], [4, 3], [5, 2], [5, 3], [5, 4]]
//!
//! [followers]
//! 4 = { kind = "angle" }
//! 5 = { kind = "bearing", frame = "local" }
//!
//! [[schedule]]
//! start = 0.0
//! end = 10.0
//! scale = { type = "constant", value = 1.0 }
//! translation = [{ type = "linear", offset = 1.0, rate = 2.0 }, { type = "constant", value = 0.5 }]
//!
//! [sim]
//! dt = 1e-3
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::ControlGains;
use crate::formation::{FormationError, NominalFormation};
use crate::graph::{validate_graph, FormationGraph, ValidationReport};
use crate::maneuver::{ManeuverPiece, ManeuverSchedule};
use crate::measurement::{Frame, LocalFrames, MeasurementKind, SensorKind};
use crate::tolerances::Tolerances;
use crate::{AgentId, Point};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("[{section}] (line {line}): {reason}")]
    Parse {
        section: String,
        line: usize,
        reason: String,
    },
    #[error("graph validation failed:\n{0}")]
    Validation(ValidationReport),
    #[error("nominal formation rejected: {0}")]
    Formation(#[from] FormationError),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot serialize scenario: {0}")]
    Serialize(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaSection {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub dim: usize,
    pub agents: usize,
    pub leaders: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NominalSection {
    pub positions: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    pub edges: Vec<[AgentId; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<usize>>,
    /// Designated neighbors per follower, keyed by agent id.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub neighbors: BTreeMap<String, Vec<AgentId>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FollowerSection {
    pub kind: SensorKind,
    #[serde(default)]
    pub frame: Frame,
}

fn default_dt() -> f64 {
    1e-3
}
fn default_record_every() -> usize {
    10
}
fn default_spread() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Defaults to the end of the schedule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Keep a full state sample every this many steps.
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    /// Defaults to the nominal positions perturbed uniformly by `initial_spread`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_positions: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_spread")]
    pub initial_spread: f64,
    /// Follower estimates; defaults to the initial positions plus `estimate_offset`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_estimates: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate_offset: Option<Vec<f64>>,
    /// Per-agent body-frame rotations (rows); drawn from `seed` when absent
    /// and a follower measures in a local frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default)]
    pub tolerances: Tolerances,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            dt: default_dt(),
            t_end: None,
            seed: 0,
            record_every: default_record_every(),
            initial_positions: None,
            initial_spread: default_spread(),
            initial_estimates: None,
            estimate_offset: None,
            frames: None,
            tolerances: Tolerances::default(),
        }
    }
}

/// Raw document structure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub meta: MetaSection,
    pub nominal: NominalSection,
    pub graph: GraphSection,
    pub followers: BTreeMap<String, FollowerSection>,
    #[serde(default)]
    pub gains: ControlGains,
    pub schedule: Vec<ManeuverPiece>,
    #[serde(default)]
    pub sim: SimSection,
}

/// Fully validated scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub description: String,
    pub nominal: NominalFormation,
    pub schedule: ManeuverSchedule,
    pub kinds: BTreeMap<AgentId, MeasurementKind>,
    /// Per-agent body frames, present when any follower measures in a local frame.
    pub frames: Option<LocalFrames>,
    pub gains: ControlGains,
    pub dt: f64,
    pub t_end: f64,
    pub tol: Tolerances,
    /// Indexed by `agent - 1`.
    pub initial_positions: Vec<Point>,
    /// Indexed by `agent - 1`; leader entries are ignored (leaders know `p`).
    pub initial_estimates: Vec<Point>,
    pub seed: u64,
    pub record_every: usize,
}

/// 1-based line of byte offset `pos`.
fn line_of(src: &str, pos: usize) -> usize {
    src[..pos.min(src.len())].matches('\n').count() + 1
}

/// Name of the table header governing line `line`.
fn section_at(src: &str, line: usize) -> String {
    src.lines()
        .take(line)
        .filter_map(|l| {
            let l = l.trim();
            l.starts_with('[').then(|| l.trim_matches(|c| c == '[' || c == ']').to_string())
        })
        .last()
        .unwrap_or_else(|| "document".into())
}

/// Line of the first header of `section` (or its sub-tables), 0 if absent.
fn section_line(src: &str, section: &str) -> usize {
    src.lines()
        .position(|l| {
            let h = l.trim().trim_start_matches('[').trim_end_matches(']');
            l.trim().starts_with('[') && (h == section || h.starts_with(&format!("{section}.")))
        })
        .map_or(0, |k| k + 1)
}

fn err(src: &str, section: &str, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Parse {
        section: section.into(),
        line: section_line(src, section),
        reason: reason.into(),
    }
}

fn points(src: &str, section: &str, what: &str, rows: &[Vec<f64>], n: usize, d: usize) -> Result<Vec<Point>, ScenarioError> {
    if rows.len() != n {
        return Err(err(src, section, format!("{what}: expected {n} rows, got {}", rows.len())));
    }
    rows.iter()
        .enumerate()
        .map(|(k, r)| {
            if r.len() != d {
                Err(err(src, section, format!("{what}: row {} has {} entries, expected {d}", k + 1, r.len())))
            } else if r.iter().any(|x| !x.is_finite()) {
                Err(err(src, section, format!("{what}: row {} is not finite", k + 1)))
            } else {
                Ok(Point::from_row_slice(r))
            }
        })
        .collect()
}

/// Uniformly random rotation-like orthonormal frames with determinant +1.
fn random_frames(n: usize, d: usize, seed: u64) -> LocalFrames {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let rotations = (0..n)
        .map(|_| loop {
            let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
            let qr = a.qr();
            let r = qr.r();
            if r.diagonal().iter().any(|x: &f64| x.abs() < 1e-6) {
                continue;
            }
            let mut q = qr.q();
            if q.determinant() < 0.0 {
                q.column_mut(0).neg_mut();
            }
            break q;
        })
        .collect();
    LocalFrames::new(rotations)
}

fn explicit_frames(src: &str, list: &[Vec<Vec<f64>>], n: usize, d: usize) -> Result<LocalFrames, ScenarioError> {
    if list.len() != n {
        return Err(err(src, "sim", format!("frames: expected {n} rotations, got {}", list.len())));
    }
    let mut rotations = Vec::with_capacity(n);
    for (k, rows) in list.iter().enumerate() {
        if rows.len() != d || rows.iter().any(|r| r.len() != d) {
            return Err(err(src, "sim", format!("frames: rotation {} is not {d}x{d}", k + 1)));
        }
        let r = DMatrix::from_fn(d, d, |a, b| rows[a][b]);
        let orthonormal = (r.transpose() * &r - DMatrix::identity(d, d)).amax() <= 1e-9;
        if !orthonormal || (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(err(src, "sim", format!("frames: rotation {} is not proper orthogonal", k + 1)));
        }
        rotations.push(r);
    }
    Ok(LocalFrames::new(rotations))
}

impl ScenarioConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let src = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&src)
    }

    pub fn from_toml_str(src: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = toml::from_str(src).map_err(|e| {
            let line = e.span().map_or(0, |s| line_of(src, s.start));
            ScenarioError::Parse {
                section: if line > 0 { section_at(src, line) } else { "document".into() },
                line,
                reason: e.message().trim().to_string(),
            }
        })?;
        Self::from_file(&file, src)
    }

    /// Validates a parsed document. `src` is only used to locate errors.
    pub fn from_file(file: &ScenarioFile, src: &str) -> Result<Self, ScenarioError> {
        let meta = &file.meta;
        let (n, m, d) = (meta.agents, meta.leaders, meta.dim);
        if d < 2 {
            return Err(err(src, "meta", format!("dim must be at least 2, got {d}")));
        }
        if m == 0 || m > n {
            return Err(err(src, "meta", format!("leaders = {m} invalid for {n} agents")));
        }
        let r = points(src, "nominal", "positions", &file.nominal.positions, n, d)?;

        let mut neighbors = BTreeMap::new();
        for (key, list) in &file.graph.neighbors {
            let i: AgentId = key
                .parse()
                .map_err(|_| err(src, "graph", format!("neighbor key `{key}` is not an agent id")))?;
            neighbors.insert(i, list.clone());
        }
        let graph = FormationGraph::new(
            n,
            m,
            d,
            file.graph.edges.iter().map(|e| (e[0], e[1])),
            file.graph.layers.clone(),
            (!neighbors.is_empty()).then_some(neighbors),
        )
        .map_err(|e| err(src, "graph", e.to_string()))?;
        let report = validate_graph(&graph);
        if !report.is_valid() {
            return Err(ScenarioError::Validation(report));
        }

        let mut kinds = BTreeMap::new();
        for (key, f) in &file.followers {
            let i: AgentId = key
                .parse()
                .map_err(|_| err(src, "followers", format!("key `{key}` is not an agent id")))?;
            if i <= m || i > n {
                return Err(err(src, "followers", format!("agent {i} is not a follower")));
            }
            let kind = MeasurementKind::new(f.kind, f.frame).map_err(|e| err(src, "followers", e.to_string()))?;
            kinds.insert(i, kind);
        }
        if let Some(i) = (m + 1..=n).find(|i| !kinds.contains_key(i)) {
            return Err(err(src, "followers", format!("follower {i} has no measurement kind")));
        }

        file.gains
            .validate()
            .map_err(|e| err(src, "gains", e.to_string()))?;
        let schedule = ManeuverSchedule::new(d, file.schedule.clone())
            .map_err(|e| err(src, "schedule", e.to_string()))?;
        let tol = file.sim.tolerances;
        let nominal = NominalFormation::new(graph, r, &tol)?;

        let sim = &file.sim;
        if !(sim.dt > 0.0 && sim.dt.is_finite()) {
            return Err(err(src, "sim", format!("dt = {} must be positive", sim.dt)));
        }
        let t_end = sim.t_end.unwrap_or(schedule.t_end());
        if !(t_end >= sim.dt) {
            return Err(err(src, "sim", format!("t_end = {t_end} is shorter than one step")));
        }
        if t_end > schedule.t_end() + 1e-9 {
            return Err(err(
                src,
                "sim",
                format!("t_end = {t_end} exceeds the schedule end {}", schedule.t_end()),
            ));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
        let initial_positions = match &sim.initial_positions {
            Some(rows) => points(src, "sim", "initial_positions", rows, n, d)?,
            None => nominal
                .r()
                .iter()
                .map(|p| p.map(|x| x + sim.initial_spread * rng.random_range(-1.0..=1.0)))
                .collect(),
        };
        let initial_estimates = match (&sim.initial_estimates, &sim.estimate_offset) {
            (Some(rows), _) => points(src, "sim", "initial_estimates", rows, n, d)?,
            (None, Some(off)) => {
                let off = points(src, "sim", "estimate_offset", std::slice::from_ref(off), 1, d)?.remove(0);
                initial_positions
                    .iter()
                    .enumerate()
                    .map(|(k, p)| if k < m { p.clone() } else { p + &off })
                    .collect()
            }
            (None, None) => initial_positions.clone(),
        };
        let frames = match &sim.frames {
            Some(list) => Some(explicit_frames(src, list, n, d)?),
            None => kinds
                .values()
                .any(|k| k.frame() == Frame::Local)
                .then(|| random_frames(n, d, sim.seed)),
        };

        Ok(Self {
            name: meta.name.clone(),
            description: meta.description.clone(),
            nominal,
            schedule,
            kinds,
            frames,
            gains: file.gains,
            dt: sim.dt,
            t_end,
            tol,
            initial_positions,
            initial_estimates,
            seed: sim.seed,
            record_every: sim.record_every,
        })
    }

    pub fn n(&self) -> usize {
        self.nominal.graph().n()
    }

    pub fn m(&self) -> usize {
        self.nominal.graph().m()
    }

    pub fn dim(&self) -> usize {
        self.nominal.dim()
    }

    /// Document equivalent to this configuration, with every randomized
    /// quantity written out explicitly.
    pub fn to_file(&self) -> ScenarioFile {
        let g = self.nominal.graph();
        let rows = |ps: &[Point]| ps.iter().map(|p| p.iter().copied().collect()).collect();
        ScenarioFile {
            meta: MetaSection {
                name: self.name.clone(),
                description: self.description.clone(),
                dim: g.dim(),
                agents: g.n(),
                leaders: g.m(),
            },
            nominal: NominalSection {
                positions: rows(self.nominal.r()),
            },
            graph: GraphSection {
                edges: g.edges().iter().map(|&(i, j)| [i, j]).collect(),
                layers: g.layers_explicit().then(|| g.layer_vec()),
                neighbors: g.neighbor_map().iter().map(|(i, l)| (i.to_string(), l.clone())).collect(),
            },
            followers: self
                .kinds
                .iter()
                .map(|(i, k)| {
                    (
                        i.to_string(),
                        FollowerSection {
                            kind: k.sensor(),
                            frame: k.frame(),
                        },
                    )
                })
                .collect(),
            gains: self.gains,
            schedule: self.schedule.pieces().to_vec(),
            sim: SimSection {
                dt: self.dt,
                t_end: Some(self.t_end),
                seed: self.seed,
                record_every: self.record_every,
                initial_positions: Some(rows(&self.initial_positions)),
                initial_spread: default_spread(),
                initial_estimates: Some(rows(&self.initial_estimates)),
                estimate_offset: None,
                frames: self.frames.as_ref().map(|f| {
                    f.rotations()
                        .iter()
                        .map(|r| r.row_iter().map(|row| row.iter().copied().collect()).collect())
                        .collect()
                }),
                tolerances: self.tol,
            },
        }
    }

    pub fn to_toml_string(&self) -> Result<String, ScenarioError> {
        toml::to_string(&self.to_file()).map_err(|e| ScenarioError::Serialize(e.to_string()))
    }
}

/// Reads and validates a scenario file.
pub fn parse_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig, ScenarioError> {
    ScenarioConfig::load(path)
}
