//! Classical multidimensional scaling.

use nalgebra::{DMatrix, SymmetricEigen};

use super::DisplacementError;
use crate::tolerances::Tolerances;

/// Symmetric, zero-diagonal, non-negative matrix of squared distances (or
/// squared distance ratios) over an ordered tuple of agents.
#[derive(Clone, Debug, PartialEq)]
pub struct SquaredDistanceMatrix(DMatrix<f64>);

impl SquaredDistanceMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self, DisplacementError> {
        let bad = |msg: String| Err(DisplacementError::InvalidDistanceMatrix(msg));
        if !m.is_square() {
            return bad(format!("matrix is {}x{}, not square", m.nrows(), m.ncols()));
        }
        if m.iter().any(|x| !x.is_finite()) {
            return bad("non-finite entry".into());
        }
        let scale = m.amax().max(1.0);
        for a in 0..m.nrows() {
            if m[(a, a)] != 0.0 {
                return bad(format!("diagonal entry {a} is {}", m[(a, a)]));
            }
            for b in 0..a {
                if (m[(a, b)] - m[(b, a)]).abs() > 1e-12 * scale {
                    return bad(format!("asymmetric at ({a}, {b})"));
                }
                if m[(a, b)] < 0.0 || m[(b, a)] < 0.0 {
                    return bad(format!("negative entry at ({a}, {b})"));
                }
            }
        }
        Ok(Self(m))
    }

    /// Builds the matrix of squared pairwise distances of the columns of `points`.
    pub fn from_points(points: &DMatrix<f64>) -> Self {
        let n = points.ncols();
        let m = DMatrix::from_fn(n, n, |a, b| {
            if a == b {
                0.0
            } else {
                (points.column(a) - points.column(b)).norm_squared()
            }
        });
        Self(m)
    }

    pub fn size(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Result of [`mds_embed`].
#[derive(Clone, Debug)]
pub struct Embedding {
    /// `d × N`; column `k` is the k-th point of the tuple.
    pub coords: DMatrix<f64>,
    /// All eigenvalues of the centered Gram matrix, descending.
    pub eigenvalues: Vec<f64>,
    /// Fewer than `d` eigenvalues above the clamp threshold.
    pub rank_deficient: bool,
}

/// Embeds `N` points in `R^d` whose pairwise squared distances are `m`.
pub fn mds_embed(
    m: &SquaredDistanceMatrix,
    d: usize,
    tol: &Tolerances,
) -> Result<Embedding, DisplacementError> {
    let n = m.size();
    let j = DMatrix::<f64>::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
    let mut x = &j * m.matrix() * &j * -0.5;
    // Symmetrize away round-off so the eigensolver sees an exactly symmetric input.
    x = (&x + x.transpose()) * 0.5;
    let tol_psd = tol.psd_factor * x.trace() / n as f64;

    let eig = SymmetricEigen::new(x);
    let mut order: Vec<usize> = (0..n).collect();
    // Stable: ties keep their original index order.
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();

    if let Some(&worst) = eigenvalues.last() {
        if worst < -tol_psd {
            return Err(DisplacementError::NotEmbeddable {
                eigenvalue: worst,
                tolerance: tol_psd,
            });
        }
    }

    let mut coords = DMatrix::zeros(d, n);
    let mut positive = 0;
    for (row, &k) in order.iter().take(d).enumerate() {
        let lambda = eig.eigenvalues[k];
        if lambda > tol_psd {
            positive += 1;
        }
        let s = lambda.max(0.0).sqrt();
        for c in 0..n {
            coords[(row, c)] = s * eig.eigenvectors[(c, k)];
        }
    }
    let rank_deficient = positive < d;
    if rank_deficient {
        log::warn!("distance data spans only {positive} of {d} dimensions");
    }
    Ok(Embedding {
        coords,
        eigenvalues,
        rank_deficient,
    })
}
