//! The essential matrix `E ≡ [t]× A` of an affinely deforming point set: linear
//! estimation, decomposition into its four-parameter family, and detection of
//! critical configurations.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{skew, AffineDeformation, ImagePoint, ScenePoint};
use crate::linalg::{full_svd, mat3, FullSvd};
use crate::simulation::CorrespondenceSet;

/// Default relative singular-value threshold for nullspace dimensions.
pub const NULLITY_TOL: f64 = 1e-7;

/// Minimum number of correspondences for the linear estimator.
pub const MIN_PAIRS: usize = 8;

/// A 3×3 matrix defined up to scale, expected to have rank 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EssentialMatrix {
    pub matrix: Matrix3<f64>,
}

impl EssentialMatrix {
    pub fn new(matrix: Matrix3<f64>) -> Self {
        Self { matrix }
    }

    /// `[t]× A` for a known deformation, at its natural (metric) scale.
    pub fn from_deformation(def: &AffineDeformation) -> Self {
        Self {
            matrix: def.essential(),
        }
    }

    /// Unit Frobenius norm representative.
    pub fn normalized(&self) -> Self {
        Self {
            matrix: self.matrix / self.matrix.norm(),
        }
    }

    pub fn singular_values(&self) -> Vector3<f64> {
        let mut s = self.matrix.singular_values();
        s.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
        s
    }

    /// Numerical rank with relative threshold `tol`.
    pub fn rank(&self, tol: f64) -> usize {
        let s = self.singular_values();
        if s[0] == 0.0 {
            return 0;
        }
        s.iter().filter(|v| **v / s[0] >= tol).count()
    }
}

/// Result of the linear estimator.
#[derive(Debug, Clone, Serialize)]
pub struct EssentialEstimate {
    pub essential: EssentialMatrix,
    /// Smallest singular value of the normalized design matrix relative to the largest.
    pub algebraic_residual: f64,
    /// Largest [`epipolar_residual`] over the input pairs.
    pub max_epipolar_residual: f64,
    /// Whether Hartley normalization was applied (it is skipped when some
    /// point lies at or near infinity).
    pub hartley_normalized: bool,
}

/// Similarity taking the inhomogeneous points to centroid zero and RMS
/// distance √2, or `None` when a point is at (or near) infinity.
fn hartley_transform(points: &[ImagePoint]) -> Option<Matrix3<f64>> {
    if points.iter().any(|q| q.0.z.abs() <= 1e-9 * q.0.norm()) {
        return None;
    }
    let inhom: Vec<(f64, f64)> = points
        .iter()
        .map(|q| (q.0.x / q.0.z, q.0.y / q.0.z))
        .collect();
    let n = inhom.len() as f64;
    let (cx, cy) = inhom
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
    let rms = (inhom
        .iter()
        .map(|(x, y)| (x - cx).powi(2) + (y - cy).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    if rms <= 0.0 || !rms.is_finite() {
        return None;
    }
    let s = 2f64.sqrt() / rms;
    Some(Matrix3::new(
        s,
        0.0,
        -s * cx,
        0.0,
        s,
        -s * cy,
        0.0,
        0.0,
        1.0,
    ))
}

/// Conditioned image rays for one view, with the transform that produced them.
fn condition(points: &[ImagePoint]) -> (Vec<Vector3<f64>>, Matrix3<f64>, bool) {
    match hartley_transform(points) {
        Some(t) => (
            points
                .iter()
                .map(|q| (t * q.0 / q.0.z).normalize())
                .collect(),
            t,
            true,
        ),
        None => (
            points.iter().map(ImagePoint::unit).collect(),
            Matrix3::identity(),
            false,
        ),
    }
}

/// Rows `q′ ⊗ q` so that `M vec(E) = (q′ᵀ E q)ᵢ` with row-major `vec`.
pub fn design_matrix(q: &[Vector3<f64>], qp: &[Vector3<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(q.len(), 9, |r, c| qp[r][c / 3] * q[r][c % 3])
}

struct Conditioned {
    svd: FullSvd,
    t1: Matrix3<f64>,
    t2: Matrix3<f64>,
    hartley: bool,
    q: Vec<Vector3<f64>>,
    qp: Vec<Vector3<f64>>,
}

fn conditioned_design(pairs: &CorrespondenceSet) -> Result<Conditioned> {
    if pairs.n_views() != 2 {
        return Err(Error::InvalidInput(format!(
            "expected 2 views, got {}",
            pairs.n_views()
        )));
    }
    let (q, t1, h1) = condition(&pairs.views[0]);
    let (qp, t2, h2) = condition(&pairs.views[1]);
    let svd = full_svd(&design_matrix(&q, &qp));
    Ok(Conditioned {
        svd,
        t1,
        t2,
        hartley: h1 && h2,
        q,
        qp,
    })
}

/// Linear eight-point estimate of `E` from two-view correspondences.
pub fn estimate_essential(pairs: &CorrespondenceSet) -> Result<EssentialEstimate> {
    estimate_essential_with(pairs, NULLITY_TOL)
}

/// [`estimate_essential`] with an explicit nullspace threshold.
pub fn estimate_essential_with(
    pairs: &CorrespondenceSet,
    nullity_tol: f64,
) -> Result<EssentialEstimate> {
    if pairs.len() < MIN_PAIRS {
        return Err(Error::InsufficientPoints {
            needed: MIN_PAIRS,
            got: pairs.len(),
        });
    }
    let cond = conditioned_design(pairs)?;
    let nullity = cond.svd.nullity(nullity_tol);
    if nullity >= 2 {
        if homography_consistent(&cond.q, &cond.qp) {
            return Err(Error::ZeroTranslation);
        }
        return Err(Error::CriticalConfiguration { nullity });
    }
    let en = mat3(cond.svd.smallest().as_slice());
    let e = cond.t2.transpose() * en * cond.t1;
    let e = canonical_sign(project_rank2(&e));
    let essential = EssentialMatrix::new(e / e.norm());
    let max_epipolar_residual = (0..pairs.len())
        .map(|i| epipolar_residual(&essential, &pairs.views[0][i], &pairs.views[1][i]))
        .fold(0.0, f64::max);
    Ok(EssentialEstimate {
        essential,
        algebraic_residual: cond.svd.ratio_min(),
        max_epipolar_residual,
        hartley_normalized: cond.hartley,
    })
}

/// Zeroes the smallest singular value.
pub fn project_rank2(e: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = e.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let mut s = svd.singular_values;
    let k = s.imin();
    s[k] = 0.0;
    u * Matrix3::from_diagonal(&s) * vt
}

/// Fixes the overall sign so the largest-magnitude entry is positive.
fn canonical_sign(e: Matrix3<f64>) -> Matrix3<f64> {
    let k = e
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map_or(0, |(i, _)| i);
    if e[k] < 0.0 {
        -e
    } else {
        e
    }
}

/// Whether `q′ ∝ H q` for some 3×3 `H` (direct linear fit, rank test).
fn homography_consistent(q: &[Vector3<f64>], qp: &[Vector3<f64>]) -> bool {
    let n = q.len();
    let mut m = DMatrix::zeros(3 * n, 9);
    for i in 0..n {
        let s = skew(&qp[i]);
        for r in 0..3 {
            for a in 0..3 {
                for b in 0..3 {
                    m[(3 * i + r, 3 * a + b)] = s[(r, a)] * q[i][b];
                }
            }
        }
    }
    let svd = full_svd(&m);
    svd.ratio_min() < NULLITY_TOL
}

/// `|q′ᵀ E q|` after normalizing `q`, `q′` and `E` to unit norm.
pub fn epipolar_residual(e: &EssentialMatrix, q: &ImagePoint, qp: &ImagePoint) -> f64 {
    (qp.unit().transpose() * (e.matrix / e.matrix.norm()) * q.unit())[0].abs()
}

/// The family of deformations `(A, t)` sharing one essential matrix:
/// `t = λ t₀`, `λ A = A₀ + t₀ vᵀ` for `λ ≠ 0`, `v ∈ ℝ³`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecompositionFamily {
    pub t0: Vector3<f64>,
    pub a0: Matrix3<f64>,
}

/// Best-fit family parameters of a given deformation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FamilyFit {
    pub lambda: f64,
    pub v: Vector3<f64>,
    /// Frobenius norm of `λ A − A₀ − t₀ vᵀ` at the fit, relative to `‖A₀‖`.
    pub residual: f64,
}

impl DecompositionFamily {
    /// `((A₀ + t₀ vᵀ)/λ, λ t₀)`.
    pub fn member(&self, lambda: f64, v: &Vector3<f64>) -> AffineDeformation {
        AffineDeformation {
            linear: (self.a0 + self.t0 * v.transpose()) / lambda,
            translation: self.t0 * lambda,
        }
    }

    /// Least-squares `(λ, v)` for `λ A = A₀ + t₀ vᵀ`.
    pub fn fit(&self, linear: &Matrix3<f64>) -> FamilyFit {
        // Unknowns (λ, v₀, v₁, v₂); equation (r, c): λ A_rc − t0_r v_c = A0_rc.
        let mut m = DMatrix::zeros(9, 4);
        let mut b = DVector::zeros(9);
        for r in 0..3 {
            for c in 0..3 {
                let k = 3 * r + c;
                m[(k, 0)] = linear[(r, c)];
                m[(k, 1 + c)] = -self.t0[r];
                b[k] = self.a0[(r, c)];
            }
        }
        let sol = m
            .clone()
            .svd(true, true)
            .solve(&b, 1e-14)
            .expect("svd solve");
        let residual = (&m * &sol - &b).norm() / self.a0.norm().max(f64::MIN_POSITIVE);
        FamilyFit {
            lambda: sol[0],
            v: Vector3::new(sol[1], sol[2], sol[3]),
            residual,
        }
    }
}

/// Canonical decomposition: `t₀` the unit left-null vector of `E` (first
/// nonzero component positive) and `A₀ = −[t₀]× E`, so that `[t₀]× A₀ = E`.
pub fn decompose_essential(e: &EssentialMatrix) -> Result<DecompositionFamily> {
    let rank = e.rank(NULLITY_TOL);
    if rank < 2 {
        return Err(Error::RankDeficient { rank, expected: 2 });
    }
    let svd = e.matrix.svd(true, false);
    let u = svd.u.expect("u requested");
    let k = svd.singular_values.imin();
    let mut t0: Vector3<f64> = u.column(k).into_owned();
    if let Some(first) = t0.iter().find(|c| c.abs() > 1e-12) {
        if *first < 0.0 {
            t0 = -t0;
        }
    }
    Ok(DecompositionFamily {
        t0,
        a0: -skew(&t0) * e.matrix,
    })
}

/// A nullspace generator beyond the first, with its evidence.
#[derive(Debug, Clone, Serialize)]
pub struct ExtraSolution {
    pub matrix: Matrix3<f64>,
    /// `q′ᵢᵀ E₂ qᵢ` on normalized rays.
    pub residuals: Vec<f64>,
    /// `(A Pᵢ + t)ᵀ E₂ Pᵢ` when the true deformation and points are known.
    pub quadric_residuals: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CriticalReport {
    pub nullspace_dim: usize,
    pub critical: bool,
    pub singular_values: Vec<f64>,
    pub extra_solutions: Vec<ExtraSolution>,
}

/// Ground truth used to evaluate the critical quadric.
pub struct CriticalTruth<'a> {
    pub deformation: &'a AffineDeformation,
    pub points: &'a [ScenePoint],
}

/// Numerical nullspace dimension of the epipolar constraint system. When it
/// exceeds one, each extra generator is reported with the quadric on which
/// the scene points must lie.
pub fn critical_check(
    pairs: &CorrespondenceSet,
    truth: Option<CriticalTruth<'_>>,
) -> Result<CriticalReport> {
    critical_check_with(pairs, truth, NULLITY_TOL)
}

pub fn critical_check_with(
    pairs: &CorrespondenceSet,
    truth: Option<CriticalTruth<'_>>,
    nullity_tol: f64,
) -> Result<CriticalReport> {
    let cond = conditioned_design(pairs)?;
    let nullspace_dim = cond
        .svd
        .nullity(nullity_tol)
        .max(9usize.saturating_sub(pairs.len()));
    let basis = cond.svd.trailing(nullspace_dim);
    let to_world = |v: &[f64]| {
        let e = mat3(v);
        let e = cond.t2.transpose() * e * cond.t1;
        e / e.norm()
    };
    let mut generators: Vec<Matrix3<f64>> = basis
        .column_iter()
        .map(|c| to_world(c.as_slice()))
        .collect();
    if let Some(t) = &truth {
        // Extra generators are the directions of the span orthogonal to the true E.
        let e_true = crate::linalg::vec9(&t.deformation.essential().normalize());
        let g = DMatrix::from_columns(
            &generators
                .iter()
                .map(crate::linalg::vec9)
                .collect::<Vec<_>>(),
        );
        let row = e_true.transpose() * &g;
        let null = full_svd(&DMatrix::from_row_slice(1, g.ncols(), row.as_slice()));
        let keep = nullspace_dim.saturating_sub(1);
        generators = null
            .trailing(keep)
            .column_iter()
            .map(|c| {
                let w = &g * c;
                mat3((w.clone() / w.norm()).as_slice())
            })
            .collect();
    } else {
        // The smallest singular vector stands in for the primary solution.
        generators.pop();
    }
    let extra_solutions = generators
        .into_iter()
        .map(|e2| {
            let residuals = (0..pairs.len())
                .map(|i| (pairs.views[1][i].unit().transpose() * e2 * pairs.views[0][i].unit())[0])
                .collect();
            let quadric_residuals = truth.as_ref().map(|t| {
                t.points
                    .iter()
                    .map(|p| (t.deformation.apply_vec(&p.0).transpose() * e2 * p.0)[0])
                    .collect()
            });
            ExtraSolution {
                matrix: e2,
                residuals,
                quadric_residuals,
            }
        })
        .collect();
    Ok(CriticalReport {
        nullspace_dim,
        critical: nullspace_dim >= 2,
        singular_values: cond.svd.singular_values.clone(),
        extra_solutions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::matrix_angular_distance;
    use crate::simulation::{default_scene, random_affine, simulate, Deformation};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pairs_for(def: &AffineDeformation, n: usize, seed: u64) -> CorrespondenceSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = default_scene(n, &mut rng);
        simulate(&scene, &Deformation::Affine(*def), 1, 0.0, &mut rng).unwrap()
    }

    #[test]
    fn recovers_random_essential() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let def = random_affine(&mut rng, 2.0);
        let est = estimate_essential(&pairs_for(&def, 12, 9)).unwrap();
        assert!(matrix_angular_distance(&est.essential.matrix, &def.essential()) < 1e-10);
        assert!(est.max_epipolar_residual < 1e-10);
        assert!(est.hartley_normalized);
    }

    #[test]
    fn pure_translation_gives_skew_matrix() {
        let def = AffineDeformation::translation_only(Vector3::new(0.3, -1.0, 2.0));
        let e = estimate_essential(&pairs_for(&def, 10, 2))
            .unwrap()
            .essential
            .matrix;
        assert!((e + e.transpose()).norm() < 1e-9);
    }

    #[test]
    fn points_at_infinity_in_one_view_only() {
        let mut points = default_scene(10, &mut ChaCha8Rng::seed_from_u64(4)).points;
        points[1] = crate::geometry::ScenePoint::new(1.0, 0.0, 0.0);
        points[2] = crate::geometry::ScenePoint::new(0.0, 1.0, 0.0);
        let scene = crate::simulation::Scene::new(points, "inf");
        let def = random_affine(&mut ChaCha8Rng::seed_from_u64(8), 1.0);
        let pairs = simulate(
            &scene,
            &Deformation::Affine(def),
            1,
            0.0,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        let est = estimate_essential(&pairs).unwrap();
        assert!(!est.hartley_normalized);
        assert!(matrix_angular_distance(&est.essential.matrix, &def.essential()) < 1e-12);
    }

    #[test]
    fn seven_pairs_are_insufficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let def = random_affine(&mut rng, 1.0);
        let err = estimate_essential(&pairs_for(&def, 7, 3)).unwrap_err();
        assert!(matches!(
            err,
            Error::InsufficientPoints { needed: 8, got: 7 }
        ));
    }

    #[test]
    fn zero_translation_is_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut def = random_affine(&mut rng, 1.0);
        def.translation = Vector3::zeros();
        assert!(matches!(
            estimate_essential(&pairs_for(&def, 12, 8)),
            Err(Error::ZeroTranslation)
        ));
    }

    #[test]
    fn decomposition_of_pure_translation() {
        let t = Vector3::new(1.0, 2.0, -2.0);
        let fam = decompose_essential(&EssentialMatrix::new(skew(&t))).unwrap();
        assert!((fam.t0 - t / 3.0).norm() < 1e-12);
        let expected = (Matrix3::identity() - fam.t0 * fam.t0.transpose()) * 3.0;
        assert!((fam.a0 - expected).norm() < 1e-12);
        let fit = fam.fit(&Matrix3::identity());
        assert!(fit.residual < 1e-12);
    }

    #[test]
    fn rank_one_is_rejected() {
        let e = EssentialMatrix::new(
            Vector3::new(1.0, 2.0, 3.0) * Vector3::new(0.0, 1.0, 1.0).transpose(),
        );
        assert!(matches!(
            decompose_essential(&e),
            Err(Error::RankDeficient { rank: 1, .. })
        ));
    }

    #[test]
    fn family_members_share_the_essential_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let def = random_affine(&mut rng, 1.5);
        let e = EssentialMatrix::from_deformation(&def);
        let fam = decompose_essential(&e).unwrap();
        for (lambda, v) in [
            (2.0, Vector3::new(0.1, -3.0, 0.4)),
            (-0.5, Vector3::zeros()),
        ] {
            let m = fam.member(lambda, &v);
            assert!(matrix_angular_distance(&m.essential(), &e.matrix) < 1e-12);
        }
        assert!(fam.fit(&def.linear).residual < 1e-12);
        assert!((fam.t0.transpose() * e.matrix).norm() < 1e-12);
    }

    #[test]
    fn generic_scene_is_not_critical() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let def = random_affine(&mut rng, 1.0);
        let rep = critical_check(&pairs_for(&def, 10, 4), None).unwrap();
        assert_eq!(rep.nullspace_dim, 1);
        assert!(!rep.critical);
    }
}
