//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use formctl_core::graph::FormationGraph;
use formctl_core::measurement::{synthesize_snapshot, AgentEstimate, LocalFrames};
use formctl_core::{MeasurementKind, MeasurementSnapshot, NominalFormation, Point, Tolerances};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub fn pt(v: &[f64]) -> Point {
    DVector::from_column_slice(v)
}

pub fn pts(rows: &[&[f64]]) -> Vec<Point> {
    rows.iter().map(|r| pt(r)).collect()
}

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

/// Six agents, three leaders, three layers.
pub fn layered_graph() -> FormationGraph {
    let edges = [(4, 1), (4, 2), (4, 3), (5, 2), (5, 3), (5, 4), (6, 3), (6, 4), (6, 5)];
    FormationGraph::new(6, 3, 2, edges, None, None).unwrap()
}

pub fn layered_r() -> Vec<Point> {
    pts(&[&[1.0, 0.0], &[0.0, 1.0], &[0.0, -1.0], &[-1.0, 1.0], &[-1.0, -1.0], &[-2.0, 0.0]])
}

/// Five agents: follower 4 on leaders 1-3, follower 5 on 2, 3, 4.
pub fn passage_graph() -> FormationGraph {
    let edges = [(4, 1), (4, 2), (4, 3), (5, 2), (5, 3), (5, 4)];
    let nb = BTreeMap::from([(4, vec![1, 2, 3]), (5, vec![2, 3, 4])]);
    FormationGraph::new(5, 3, 2, edges, None, Some(nb)).unwrap()
}

pub fn passage_r() -> Vec<Point> {
    pts(&[&[2.0, 1.0], &[-1.0, 3.0], &[-1.0, -1.0], &[-4.0, 3.0], &[-4.0, -1.0]])
}

pub fn layered_nominal() -> NominalFormation {
    NominalFormation::new(layered_graph(), layered_r(), &Tolerances::default()).unwrap()
}

pub fn passage_nominal() -> NominalFormation {
    NominalFormation::new(passage_graph(), passage_r(), &Tolerances::default()).unwrap()
}

/// Determinant by cofactor expansion along the first row.
pub fn det(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    if n == 1 {
        return m[0][0];
    }
    (0..n)
        .map(|c| {
            let minor: Vec<Vec<f64>> = m[1..]
                .iter()
                .map(|row| row.iter().enumerate().filter(|&(k, _)| k != c).map(|(_, &x)| x).collect())
                .collect();
            let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
            sign * m[0][c] * det(&minor)
        })
        .sum()
}

/// Generalized cross product: the nullspace of the `d x (d+1)` matrix of
/// relative positions `p_j - p_i`, by signed maximal minors. Unit norm,
/// entries summing positive.
pub fn oracle_h(p_i: &Point, neighbors: &[Point]) -> Vec<f64> {
    let d = p_i.len();
    assert_eq!(neighbors.len(), d + 1);
    let cols: Vec<Vec<f64>> = neighbors.iter().map(|p| (p - p_i).iter().copied().collect()).collect();
    let mut h: Vec<f64> = (0..=d)
        .map(|k| {
            let minor: Vec<Vec<f64>> = (0..d)
                .map(|r| (0..=d).filter(|&c| c != k).map(|c| cols[c][r]).collect())
                .collect();
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sign * det(&minor)
        })
        .collect();
    let norm = h.iter().map(|x| x * x).sum::<f64>().sqrt();
    let s = if h.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
    h.iter_mut().for_each(|x| *x *= s / norm);
    h
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Uniform point in `[-s, s]^d`.
pub fn random_point(rng: &mut impl Rng, d: usize, s: f64) -> Point {
    Point::from_fn(d, |_, _| rng.random_range(-s..=s))
}

/// Random proper rotation (QR of a Gaussian-like matrix, sign-fixed).
pub fn random_rotation(rng: &mut impl Rng, d: usize) -> DMatrix<f64> {
    loop {
        let a = DMatrix::<f64>::from_fn(d, d, |_, _| rng.random_range(-1.0..=1.0));
        if a.determinant().abs() < 1e-3 {
            continue;
        }
        let qr = a.qr();
        let mut q = qr.q();
        let r = qr.r();
        for k in 0..d {
            if r[(k, k)] < 0.0 {
                let col = -q.column(k);
                q.set_column(k, &col);
            }
        }
        if q.determinant() < 0.0 {
            let col = -q.column(0);
            q.set_column(0, &col);
        }
        return q;
    }
}

/// Sine of the angle at `b` in triangle `(a, b, c)`.
fn sin_at(a: &Point, b: &Point, c: &Point) -> f64 {
    let (u, v) = ((a - b).normalize(), (c - b).normalize());
    (1.0 - u.dot(&v).powi(2)).max(0.0).sqrt()
}

/// A tuple `[p_i, p_j0, ..., p_jd]` that is well conditioned for every
/// solver: points well separated, no three nearly collinear, neighbors far
/// from any hyperplane and `|h_ii|` bounded away from zero.
pub fn random_tuple(rng: &mut impl Rng, d: usize) -> Vec<Point> {
    loop {
        let tuple: Vec<Point> = (0..d + 2).map(|_| random_point(rng, d, 5.0)).collect();
        let n = tuple.len();
        let separated = (0..n).all(|a| (a + 1..n).all(|b| (&tuple[a] - &tuple[b]).norm() > 1.0));
        if !separated {
            continue;
        }
        let mut triangles_ok = true;
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    if a != b && b != c && a != c && sin_at(&tuple[a], &tuple[b], &tuple[c]) < 0.1 {
                        triangles_ok = false;
                    }
                }
            }
        }
        if !triangles_ok {
            continue;
        }
        let rel = DMatrix::from_fn(d, d, |r, c| tuple[c + 2][r] - tuple[1][r]);
        let sv = rel.singular_values();
        if sv.min() < 0.2 * sv.max() {
            continue;
        }
        let h = oracle_h(&tuple[0], &tuple[1..]);
        if h.iter().sum::<f64>().abs() < 0.1 {
            continue;
        }
        return tuple;
    }
}

/// Snapshot of follower `d + 2` whose neighbors are agents `1..=d+1`, with
/// exact estimates.
pub fn tuple_snapshot(
    tuple: &[Point],
    kind: MeasurementKind,
    frames: Option<&LocalFrames>,
) -> MeasurementSnapshot {
    let d = tuple[0].len();
    let follower = d + 2;
    let mut truth: Vec<Point> = tuple[1..].to_vec();
    truth.push(tuple[0].clone());
    let est: Vec<AgentEstimate> = truth
        .iter()
        .map(|p| AgentEstimate {
            p_hat: p.clone(),
            v_hat: Point::zeros(d),
            arrived: true,
        })
        .collect();
    let neighbors: Vec<usize> = (1..=d + 1).collect();
    synthesize_snapshot(&truth, &est, follower, &neighbors, kind, frames, 0.0, &Tolerances::default()).unwrap()
}

pub fn random_frames(rng: &mut impl Rng, count: usize, d: usize) -> LocalFrames {
    LocalFrames::new((0..count).map(|_| random_rotation(rng, d)).collect())
}

/// Every measurement kind, with local frames for the vector kinds.
pub fn all_kinds() -> Vec<MeasurementKind> {
    use formctl_core::{Frame, SensorKind};
    let mut kinds: Vec<MeasurementKind> = SensorKind::ALL.iter().map(|&s| MeasurementKind::global(s)).collect();
    for s in [SensorKind::RelativePosition, SensorKind::Bearing] {
        kinds.push(MeasurementKind::new(s, Frame::Local).unwrap());
    }
    kinds
}

/// Neighbor estimates `q_j` (least-norm) with `Σ w_j q_j = p - ē` and
/// `Σ h_j q_j = p`: the signals under which the follower's error dynamics
/// reduce exactly to the closed-loop matrix form.
pub fn exact_neighbors(p: &Point, ebar: &Point, w_ratio: &[f64], h_ratio: &[f64]) -> Vec<Point> {
    let k = w_ratio.len();
    let a = DMatrix::from_fn(2, k, |r, c| if r == 0 { w_ratio[c] } else { h_ratio[c] });
    let aat_inv = (&a * a.transpose()).try_inverse().expect("w and h independent");
    let rhs = DMatrix::from_fn(2, p.len(), |r, c| if r == 0 { p[c] - ebar[c] } else { p[c] });
    let z = a.transpose() * aat_inv * rhs;
    (0..k).map(|j| z.row(j).transpose()).collect()
}
