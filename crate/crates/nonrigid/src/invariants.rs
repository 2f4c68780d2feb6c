//! Affine-invariant (barycentric) coordinates of points relative to the
//! first four, recovered from two views with a known basis or from three
//! views of a repeated deformation.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::Serialize;

use crate::affine_recovery::{
    recover_structure, repeated_solutions, SolveOptions, ThreeViewEssentials, THIRD_VIEW_TOL,
};
use crate::epipolar::{decompose_essential, estimate_essential, DecompositionFamily, MIN_PAIRS};
use crate::error::{Error, Result};
use crate::geometry::{AffineDeformation, ImagePoint, ScenePoint};
use crate::simulation::{tetrahedron_volume, CorrespondenceSet};

/// Minimum basis tetrahedron volume relative to the cube of its longest edge.
pub const BASIS_REL_VOLUME: f64 = 1e-9;

/// Per-point residual above which a three-view solve is rejected.
pub const COORD_RESIDUAL_TOL: f64 = 1e-6;

/// Barycentric coordinates `(αᵢ, βᵢ, γᵢ)` of points `4..n` with respect to
/// `P₀..P₃`; `δᵢ = 1 − αᵢ − βᵢ − γᵢ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AffineInvariantCoords {
    pub coords: Vec<Vector3<f64>>,
    /// Relative residual of each point's linear solve.
    pub residuals: Vec<f64>,
}

impl AffineInvariantCoords {
    pub fn delta(&self, i: usize) -> f64 {
        1.0 - self.coords[i].sum()
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Largest absolute coordinate difference.
    pub fn max_abs_diff(&self, other: &AffineInvariantCoords) -> f64 {
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| (a - b).abs().max())
            .fold(
                if self.len() == other.len() {
                    0.0
                } else {
                    f64::INFINITY
                },
                f64::max,
            )
    }
}

/// Basis depths `λⱼ` with `Pⱼ = λⱼ qⱼ`, and their reciprocals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BasisDepths {
    pub depths: [f64; 4],
    pub reciprocals: [f64; 4],
}

impl BasisDepths {
    pub fn new(depths: [f64; 4]) -> Result<Self> {
        if let Some(index) = depths.iter().position(|d| *d == 0.0 || !d.is_finite()) {
            return Err(Error::DepthDegenerate { index });
        }
        Ok(Self {
            depths,
            reciprocals: depths.map(|d| 1.0 / d),
        })
    }
}

/// Barycentric coordinates of `p` in the basis `b`, by a direct 3×3 solve.
pub fn barycentric(basis: &[Vector3<f64>; 4], p: &Vector3<f64>) -> Result<Vector3<f64>> {
    let d = Matrix3::from_columns(&[
        basis[0] - basis[3],
        basis[1] - basis[3],
        basis[2] - basis[3],
    ]);
    d.lu().solve(&(p - basis[3])).ok_or(Error::BasisDegenerate)
}

fn check_basis(basis: &[Vector3<f64>; 4]) -> Result<()> {
    let edge = (0..4)
        .flat_map(|i| (i + 1..4).map(move |j| (i, j)))
        .map(|(i, j)| (basis[i] - basis[j]).norm())
        .fold(0.0, f64::max);
    let volume = tetrahedron_volume(&basis[0], &basis[1], &basis[2], &basis[3]);
    if edge == 0.0 || volume <= BASIS_REL_VOLUME * edge.powi(3) {
        return Err(Error::BasisDegenerate);
    }
    Ok(())
}

/// The two rows of `[q]×` that remain after dropping the row with the
/// largest pivot `|q_k|`, which is the combination of the other two.
fn cross_rows(q: &Vector3<f64>) -> SMatrix<f64, 2, 3> {
    let k = q.iamax();
    let s = crate::geometry::skew(q);
    let rows: Vec<usize> = (0..3).filter(|r| *r != k).collect();
    SMatrix::<f64, 2, 3>::from_rows(&[s.row(rows[0]).into_owned(), s.row(rows[1]).into_owned()])
}

/// Solves `qᵥ ∧ Tᵥ(P(θ)) = 0` over the views for `θ = (α, β, γ)`, where
/// `P(θ) = Q₃ + θ₀(Q₀ − Q₃) + θ₁(Q₁ − Q₃) + θ₂(Q₂ − Q₃)` and `Tᵥ` is the
/// composite deformation up to view `v`.
fn solve_point(
    basis: &[Vector3<f64>; 4],
    rays: &[Vector3<f64>],
    maps: &[(Matrix3<f64>, Vector3<f64>)],
) -> Result<(Vector3<f64>, f64)> {
    let d = Matrix3::from_columns(&[
        basis[0] - basis[3],
        basis[1] - basis[3],
        basis[2] - basis[3],
    ]);
    let rows = 2 * rays.len();
    let mut m = nalgebra::DMatrix::zeros(rows, 3);
    let mut b = nalgebra::DVector::zeros(rows);
    for (v, (q, (lin, tr))) in rays.iter().zip(maps).enumerate() {
        let s = cross_rows(&(q / q.norm()));
        let block = s * lin * d;
        let rhs = -(s * (lin * basis[3] + tr));
        let scale = (lin * d)
            .norm()
            .max((lin * basis[3] + tr).norm())
            .max(f64::MIN_POSITIVE);
        for r in 0..2 {
            for c in 0..3 {
                m[(2 * v + r, c)] = block[(r, c)] / scale;
            }
            b[2 * v + r] = rhs[r] / scale;
        }
    }
    let svd = m.clone().svd(true, true);
    let rank = svd.rank(1e-10 * svd.singular_values.max());
    if rank < 3 {
        return Err(Error::AmbiguousDeformation { rank });
    }
    let theta = svd
        .solve(&b, 1e-14)
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let residual = (&m * &theta - &b).norm();
    Ok((Vector3::new(theta[0], theta[1], theta[2]), residual))
}

fn coords_for(
    basis: &[Vector3<f64>; 4],
    views: &[Vec<ImagePoint>],
    maps: &[(Matrix3<f64>, Vector3<f64>)],
) -> Result<AffineInvariantCoords> {
    let n = views[0].len();
    let mut coords = Vec::with_capacity(n.saturating_sub(4));
    let mut residuals = Vec::with_capacity(n.saturating_sub(4));
    for i in 4..n {
        let rays: Vec<Vector3<f64>> = views.iter().map(|v| v[i].0).collect();
        let (theta, residual) = solve_point(basis, &rays, maps)?;
        coords.push(theta);
        residuals.push(residual);
    }
    Ok(AffineInvariantCoords { coords, residuals })
}

/// Composite maps `(I, 0), (A, t), (A², At + t), …` for `n_views` views.
fn repeated_maps(def: &AffineDeformation, n_views: usize) -> Vec<(Matrix3<f64>, Vector3<f64>)> {
    let mut maps = vec![(Matrix3::identity(), Vector3::zeros())];
    while maps.len() < n_views {
        let (l, t) = *maps.last().expect("nonempty");
        maps.push((def.linear * l, def.linear * t + def.translation));
    }
    maps
}

/// Resolves the essential-matrix family with known basis points: with
/// `σ A = A₀ + t₀ vᵀ` and `σ t = w t₀`, the constraints `q′ⱼ ∧ (A Pⱼ + t) = 0`
/// are linear in `(v, w)`. The deformation comes out up to the scale `σ`.
fn resolve_family(
    family: &DecompositionFamily,
    basis: &[Vector3<f64>; 4],
    second: &[ImagePoint],
) -> Result<AffineDeformation> {
    let mut m = SMatrix::<f64, 8, 4>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for j in 0..4 {
        let s = cross_rows(&second[j].unit());
        let st0 = s * family.t0;
        let rhs = -(s * family.a0 * basis[j]);
        for r in 0..2 {
            for c in 0..3 {
                m[(2 * j + r, c)] = st0[r] * basis[j][c];
            }
            m[(2 * j + r, 3)] = st0[r];
            b[2 * j + r] = rhs[r];
        }
    }
    let svd = m.svd(true, true);
    let rank = svd.rank(1e-10 * svd.singular_values.max());
    if rank < 4 {
        return Err(Error::AmbiguousDeformation { rank });
    }
    let sol = svd
        .solve(&b, 1e-14)
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let v = Vector3::new(sol[0], sol[1], sol[2]);
    AffineDeformation::new(family.a0 + family.t0 * v.transpose(), family.t0 * sol[3])
        .map_err(|_| Error::AmbiguousDeformation { rank })
}

/// Coordinates of points `4..n` from two views when `P₀..P₃` are known.
pub fn invariants_known_basis(
    pairs: &CorrespondenceSet,
    basis: &[ScenePoint; 4],
) -> Result<AffineInvariantCoords> {
    if pairs.n_views() != 2 {
        return Err(Error::InvalidInput(format!(
            "expected 2 views, got {}",
            pairs.n_views()
        )));
    }
    if pairs.len() < MIN_PAIRS {
        return Err(Error::InsufficientPoints {
            needed: MIN_PAIRS,
            got: pairs.len(),
        });
    }
    let basis = basis.map(|p| p.0);
    check_basis(&basis)?;
    basis_depths(&basis, &pairs.views[0])?;
    let family = decompose_essential(&estimate_essential(pairs)?.essential)?;
    let def = resolve_family(&family, &basis, &pairs.views[1])?;
    coords_for(&basis, &pairs.views, &repeated_maps(&def, 2))
}

/// `λⱼ` with `Pⱼ = λⱼ qⱼ`, checking that each known point lies on its ray.
pub fn basis_depths(basis: &[Vector3<f64>; 4], first: &[ImagePoint]) -> Result<BasisDepths> {
    let mut depths = [0.0; 4];
    for j in 0..4 {
        let q = first[j].0;
        let lambda = q.dot(&basis[j]) / q.norm_squared();
        if (q * lambda - basis[j]).norm() > 1e-9 * basis[j].norm().max(1.0) {
            return Err(Error::InvalidInput(format!(
                "basis point {j} is not on its image ray"
            )));
        }
        depths[j] = lambda;
    }
    BasisDepths::new(depths)
}

/// One candidate of the three-view computation: a repeated deformation
/// consistent with all three views and the coordinates it implies.
#[derive(Debug, Clone, Serialize)]
pub struct ThreeViewCandidate {
    pub deformation: AffineDeformation,
    pub basis_depths: BasisDepths,
    pub coords: AffineInvariantCoords,
}

/// All coordinate sets consistent with three views of a repeated
/// deformation, one per recovered deformation.
pub fn invariants_three_views_candidates(
    tracks: &CorrespondenceSet,
    opts: &SolveOptions,
) -> Result<Vec<ThreeViewCandidate>> {
    if tracks.n_views() != 3 {
        return Err(Error::InvalidInput(format!(
            "expected 3 views, got {}",
            tracks.n_views()
        )));
    }
    if tracks.len() < MIN_PAIRS {
        return Err(Error::InsufficientPoints {
            needed: MIN_PAIRS,
            got: tracks.len(),
        });
    }
    let ess = ThreeViewEssentials::from_tracks(tracks)?;
    let pair = tracks.pair(0, 1)?;
    let mut candidates = Vec::new();
    let mut worst = (0, f64::INFINITY);
    for rec in repeated_solutions(&ess, opts)? {
        let Ok(structure) = recover_structure(&rec.deformation, &pair) else {
            continue;
        };
        let d = &structure.depths.depths;
        let basis = [0, 1, 2, 3].map(|j| tracks.views[0][j].0 * d[j]);
        if check_basis(&basis).is_err() {
            continue;
        }
        let coords = coords_for(&basis, &tracks.views, &repeated_maps(&rec.deformation, 3))?;
        let max_res = coords.residuals.iter().copied().fold(0.0, f64::max);
        if max_res
            > COORD_RESIDUAL_TOL
                .max(10.0 * tracks.noise_sigma)
                .max(THIRD_VIEW_TOL)
        {
            let index = coords
                .residuals
                .iter()
                .position(|r| *r == max_res)
                .unwrap_or(0)
                + 4;
            if max_res < worst.1 {
                worst = (index, max_res);
            }
            continue;
        }
        candidates.push(ThreeViewCandidate {
            deformation: rec.deformation,
            basis_depths: BasisDepths::new([d[0], d[1], d[2], d[3]])?,
            coords,
        });
    }
    if candidates.is_empty() {
        return Err(Error::ResidualTooHigh {
            index: worst.0,
            residual: worst.1,
        });
    }
    Ok(candidates)
}

/// Coordinates from three views of a repeated deformation. Fails with
/// [`Error::MultipleSolutions`] when more than one coordinate set explains
/// the views.
pub fn invariants_three_views(
    tracks: &CorrespondenceSet,
    opts: &SolveOptions,
) -> Result<AffineInvariantCoords> {
    let mut candidates = invariants_three_views_candidates(tracks, opts)?;
    let mut distinct: Vec<usize> = Vec::new();
    for (i, c) in candidates.iter().enumerate() {
        if distinct
            .iter()
            .all(|&j| candidates[j].coords.max_abs_diff(&c.coords) > 1e-6)
        {
            distinct.push(i);
        }
    }
    if distinct.len() > 1 {
        return Err(Error::MultipleSolutions {
            count: distinct.len(),
        });
    }
    Ok(candidates.swap_remove(distinct[0]).coords)
}

/// Two members of the two-view deformation family with their coordinate
/// sets, both exactly consistent with the images.
#[derive(Debug, Clone, Serialize)]
pub struct AmbiguityWitness {
    pub deformations: [AffineDeformation; 2],
    pub coords: [AffineInvariantCoords; 2],
    /// Max-norm difference between the two coordinate sets.
    pub separation: f64,
}

/// Family vectors tried, in order, when building a witness.
const WITNESS_DIRECTIONS: [[f64; 3]; 6] = [
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [1.0, -1.0, 0.5],
    [-0.5, 1.0, 1.0],
    [0.3, 0.7, -1.1],
];

/// Constructs two deformations `((A₀ + t₀ vᵀ)/λ, λ t₀)` with different `v`,
/// reconstructs the scene under each and returns both coordinate sets.
pub fn two_view_ambiguity_witness(pairs: &CorrespondenceSet) -> Result<AmbiguityWitness> {
    if pairs.n_views() != 2 {
        return Err(Error::InvalidInput(format!(
            "expected 2 views, got {}",
            pairs.n_views()
        )));
    }
    if pairs.len() < MIN_PAIRS {
        return Err(Error::InsufficientPoints {
            needed: MIN_PAIRS,
            got: pairs.len(),
        });
    }
    let family = decompose_essential(&estimate_essential(pairs)?.essential)?;
    let scale = family.a0.norm();
    let mut found: Vec<(AffineDeformation, AffineInvariantCoords)> = Vec::new();
    for dir in WITNESS_DIRECTIONS {
        let v = Vector3::from(dir) * scale;
        let def = family.member(1.0, &v);
        if AffineDeformation::new(def.linear, def.translation).is_err() {
            continue;
        }
        let Ok(structure) = recover_structure(&def, pairs) else {
            continue;
        };
        let basis = [0, 1, 2, 3].map(|j| structure.points[j].0);
        if check_basis(&basis).is_err() {
            continue;
        }
        let Ok(coords) = coords_for(&basis, &pairs.views, &repeated_maps(&def, 2)) else {
            continue;
        };
        if let Some((first, first_coords)) = found.first() {
            let separation = first_coords.max_abs_diff(&coords);
            if separation > 1e-3 {
                return Ok(AmbiguityWitness {
                    deformations: [*first, def],
                    coords: [first_coords.clone(), coords],
                    separation,
                });
            }
        } else {
            found.push((def, coords));
        }
    }
    Err(Error::NoConvergence {
        restarts: WITNESS_DIRECTIONS.len(),
        best_residual: f64::NAN,
    })
}

/// All witness coordinate sets over the fixed direction list, for counting
/// distinct zero-residual explanations.
pub fn two_view_family_coords(
    pairs: &CorrespondenceSet,
) -> Result<Vec<(AffineDeformation, AffineInvariantCoords)>> {
    let family = decompose_essential(&estimate_essential(pairs)?.essential)?;
    let scale = family.a0.norm();
    let mut out = Vec::new();
    for dir in WITNESS_DIRECTIONS {
        let def = family.member(1.0, &(Vector3::from(dir) * scale));
        let Ok(def) = AffineDeformation::new(def.linear, def.translation) else {
            continue;
        };
        let Ok(structure) = recover_structure(&def, pairs) else {
            continue;
        };
        let basis = [0, 1, 2, 3].map(|j| structure.points[j].0);
        if check_basis(&basis).is_err() {
            continue;
        }
        if let Ok(coords) = coords_for(&basis, &pairs.views, &repeated_maps(&def, 2)) {
            out.push((def, coords));
        }
    }
    Ok(out)
}
