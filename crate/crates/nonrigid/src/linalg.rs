//! Dense linear-algebra helpers on top of nalgebra's SVD.

use nalgebra::{DMatrix, DVector, Matrix3};

/// Singular values in descending order with the matching right singular
/// vectors as columns of `v` (always a full square basis).
pub struct FullSvd {
    pub singular_values: Vec<f64>,
    pub v: DMatrix<f64>,
}

/// SVD with a complete right basis. Wide matrices are padded with zero rows,
/// which leaves the row space unchanged and exposes the full nullspace.
pub fn full_svd(m: &DMatrix<f64>) -> FullSvd {
    let (rows, cols) = m.shape();
    let padded;
    let work = if rows < cols {
        padded = {
            let mut p = DMatrix::zeros(cols, cols);
            p.view_mut((0, 0), (rows, cols)).copy_from(m);
            p
        };
        &padded
    } else {
        m
    };
    let svd = work.clone().svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let singular_values = order.iter().map(|&i| svd.singular_values[i]).collect();
    let v = DMatrix::from_fn(cols, cols, |r, c| v_t[(order[c], r)]);
    FullSvd { singular_values, v }
}

impl FullSvd {
    /// Number of singular values with `σ / σ₁ < rel_tol`.
    pub fn nullity(&self, rel_tol: f64) -> usize {
        let s1 = self.singular_values.first().copied().unwrap_or(0.0);
        if s1 == 0.0 {
            return self.singular_values.len();
        }
        self.singular_values
            .iter()
            .filter(|s| **s / s1 < rel_tol)
            .count()
    }

    /// The last `k` right singular vectors as columns.
    pub fn trailing(&self, k: usize) -> DMatrix<f64> {
        let n = self.v.ncols();
        self.v.columns(n - k, k).into_owned()
    }

    /// The right singular vector of the smallest singular value.
    pub fn smallest(&self) -> DVector<f64> {
        self.v.column(self.v.ncols() - 1).into_owned()
    }

    /// `σ_min / σ_max`.
    pub fn ratio_min(&self) -> f64 {
        let s1 = self.singular_values[0];
        if s1 == 0.0 {
            return 0.0;
        }
        *self.singular_values.last().unwrap() / s1
    }
}

/// Outcome of splitting a singular spectrum into kept and discarded values.
#[derive(Debug, Clone, PartialEq)]
pub enum GapSplit {
    /// Number of values below the gap, and the gap ratio across it.
    Clear { nullity: usize, gap: f64 },
    /// Some value lies in the ambiguous band between the two thresholds.
    Ambiguous { best_gap: f64 },
}

/// Classifies relative singular values: `≤ zero_tol` counts as zero,
/// `≥ keep_tol` as nonzero, anything between is ambiguous. The gap reported
/// is the ratio between the smallest kept and largest discarded values.
pub fn split_spectrum(singular_values: &[f64], zero_tol: f64, keep_tol: f64) -> GapSplit {
    let s1 = singular_values.first().copied().unwrap_or(0.0);
    if s1 == 0.0 {
        return GapSplit::Clear {
            nullity: singular_values.len(),
            gap: f64::INFINITY,
        };
    }
    let rel: Vec<f64> = singular_values.iter().map(|s| s / s1).collect();
    let best_gap = rel
        .windows(2)
        .map(|w| {
            if w[1] > 0.0 {
                w[0] / w[1]
            } else {
                f64::INFINITY
            }
        })
        .fold(1.0, f64::max);
    if rel.iter().any(|r| *r > zero_tol && *r < keep_tol) {
        return GapSplit::Ambiguous { best_gap };
    }
    let nullity = rel.iter().filter(|r| **r <= zero_tol).count();
    let kept_min = rel
        .iter()
        .filter(|r| **r >= keep_tol)
        .fold(f64::INFINITY, |a, b| a.min(*b));
    let dropped_max = rel
        .iter()
        .filter(|r| **r <= zero_tol)
        .fold(0.0, |a: f64, b| a.max(*b));
    let gap = if dropped_max > 0.0 {
        kept_min / dropped_max
    } else {
        f64::INFINITY
    };
    GapSplit::Clear { nullity, gap }
}

/// Alternating row and column normalization (`passes` rounds). Returns the
/// scaled matrix and the accumulated column scales `c`, so that a null
/// vector `y` of the result maps back to the null vector `c ∘ y` of `m`.
pub fn equilibrate(m: &DMatrix<f64>, passes: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut j = m.clone();
    let mut scales = DVector::from_element(m.ncols(), 1.0);
    for _ in 0..passes {
        for mut row in j.row_iter_mut() {
            let n = row.norm();
            if n > 0.0 {
                row /= n;
            }
        }
        for (c, mut col) in j.column_iter_mut().enumerate() {
            let n = col.norm();
            if n > 0.0 {
                col /= n;
                scales[c] /= n;
            }
        }
    }
    (j, scales)
}

/// Row-major flattening of a 3×3 matrix.
pub fn vec9(m: &Matrix3<f64>) -> DVector<f64> {
    DVector::from_iterator(9, (0..3).flat_map(|r| (0..3).map(move |c| m[(r, c)])))
}

/// Inverse of [`vec9`].
pub fn mat3(v: &[f64]) -> Matrix3<f64> {
    Matrix3::from_row_slice(&v[..9])
}

/// `1 - |cos|` between two matrices viewed as vectors: distance up to scale
/// and sign.
pub fn matrix_angular_distance(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let c = a.dot(b) / (a.norm() * b.norm());
    (1.0 - c.abs()).max(0.0)
}

/// Cosine distance `1 - |cos|` between two vectors.
pub fn cosine_distance(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let c = a.dot(b) / (a.norm() * b.norm());
    (1.0 - c.abs()).max(0.0)
}
