//! Three-view recovery of affine deformations from essential matrices: the
//! generic two-deformation system, the repeated-deformation system and the
//! quasi-identical system, with numerical fiber-dimension estimates and
//! linear structure recovery.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::epipolar::{
    decompose_essential, estimate_essential, DecompositionFamily, EssentialMatrix,
};
use crate::error::{Error, Result};
use crate::geometry::{
    angular_distance, skew, AffineDeformation, DepthAssignment, ImagePoint, ScenePoint,
};
use crate::linalg::{full_svd, matrix_angular_distance, split_spectrum, GapSplit};
use crate::simulation::CorrespondenceSet;
use crate::solver::{best_outcome, cluster, multi_start, LmOptions, LmOutcome, System};

/// Iterates with `|α|` or `|γ|` below this value are rejected.
pub const LOCALIZATION_FLOOR: f64 = 1e-8;

/// Maximum angular distance between `E₂₃` and `E₁₂` for a repeated or
/// quasi-identical input.
pub const PROPORTIONALITY_TOL: f64 = 1e-6;

/// Relative residual under which a solution counts as verified.
pub const VERIFY_TOL: f64 = 1e-10;

/// Relative singular values at or below this count as zero.
pub const DIM_ZERO_TOL: f64 = 1e-10;

/// Relative singular values at or above this count as nonzero.
pub const DIM_KEEP_TOL: f64 = 1e-6;

/// How the relative scales of the essential matrices are known.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ScaleMode {
    /// Each matrix is exactly `[t]× A` of its deformation, up to one common
    /// factor (the scene scale).
    Consistent,
    /// Each matrix is known only up to its own scale, as when estimated from
    /// image tracks. An extra unknown absorbs the scale of `E₁₃`.
    Independent,
}

/// The essential matrices of a three-view sequence.
#[derive(Debug, Clone, Serialize)]
pub struct ThreeViewEssentials {
    pub e12: EssentialMatrix,
    pub e13: EssentialMatrix,
    pub e23: Option<EssentialMatrix>,
    pub scale: ScaleMode,
}

impl ThreeViewEssentials {
    /// Exact essentials for `first` followed by `second`.
    pub fn from_deformations(first: &AffineDeformation, second: &AffineDeformation) -> Self {
        let c = second.linear * first.translation + second.translation;
        Self {
            e12: EssentialMatrix::from_deformation(first),
            e13: EssentialMatrix::new(skew(&c) * second.linear * first.linear),
            e23: Some(EssentialMatrix::from_deformation(second)),
            scale: ScaleMode::Consistent,
        }
    }

    /// Exact essentials for the same deformation applied twice.
    pub fn repeated(def: &AffineDeformation) -> Self {
        Self::from_deformations(def, def)
    }

    /// Linear estimates from three-view tracks.
    pub fn from_tracks(tracks: &CorrespondenceSet) -> Result<Self> {
        if tracks.n_views() != 3 {
            return Err(Error::InvalidInput(format!(
                "expected 3 views, got {}",
                tracks.n_views()
            )));
        }
        let e12 = estimate_essential(&tracks.pair(0, 1)?)?.essential;
        let e13 = estimate_essential(&tracks.pair(0, 2)?)?.essential;
        let e23 = estimate_essential(&tracks.pair(1, 2)?)?.essential;
        Ok(Self {
            e12,
            e13,
            e23: Some(e23),
            scale: ScaleMode::Independent,
        })
    }

    /// Checks that `E₂₃ ∝ E₁₂` when `E₂₃` is present.
    pub fn check_proportional(&self) -> Result<()> {
        if let Some(e23) = &self.e23 {
            let distance = matrix_angular_distance(&e23.matrix, &self.e12.matrix);
            if distance > PROPORTIONALITY_TOL {
                return Err(Error::ScaleDegenerate { distance });
            }
        }
        Ok(())
    }
}

/// A point of the generic constraint variety: scales `α, β, γ` with their
/// reciprocals and the family vectors `v₁, v₂, v₃` of `E₁₂, E₂₃, E₁₃`.
///
/// For the repeated and quasi-identical systems `β, v₂` mirror `α, v₁`, and
/// `scales` holds `(λ, μ)` (both 1 for a repeated deformation). `rho` is the
/// relative scale of `E₁₃` (1 unless the scale mode is independent).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AmbiguityPoint {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub v1: Vector3<f64>,
    pub v2: Vector3<f64>,
    pub v3: Vector3<f64>,
    pub scales: (f64, f64),
    pub rho: f64,
}

impl AmbiguityPoint {
    fn new(
        alpha: f64,
        beta: f64,
        gamma: f64,
        v1: Vector3<f64>,
        v2: Vector3<f64>,
        v3: Vector3<f64>,
    ) -> Self {
        Self {
            alpha,
            beta,
            gamma,
            x: 1.0 / alpha,
            y: 1.0 / beta,
            z: 1.0 / gamma,
            v1,
            v2,
            v3,
            scales: (1.0, 1.0),
            rho: 1.0,
        }
    }

    /// Localization residual `max(|αx−1|, |βy−1|, |γz−1|)`.
    pub fn localization_residual(&self) -> f64 {
        [self.alpha * self.x, self.beta * self.y, self.gamma * self.z]
            .iter()
            .fold(0.0, |m, v| f64::max(m, (v - 1.0).abs()))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RecoveredAffine {
    pub deformation: AffineDeformation,
    /// `(λ, μ)` of the second deformation `(λA, μa)`; `(1, 1)` when repeated.
    pub scales: (f64, f64),
    /// Largest relative residual of the defining system at the solution.
    pub residual: f64,
    pub restart_count: usize,
    /// Restarts that reached a verified solution.
    pub converged_count: usize,
    /// Distinct verified solutions found.
    pub cluster_count: usize,
    pub point: AmbiguityPoint,
}

#[derive(Debug, Clone, Serialize)]
pub struct DimensionEstimate {
    pub nullity: usize,
    pub singular_values: Vec<f64>,
    /// Ratio between the smallest kept and largest discarded singular value.
    pub gap: f64,
    pub sample_points: Vec<AmbiguityPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SystemId {
    Generic,
    Repeated,
    /// Quasi-identical with `(λ, μ)` held at the point's values.
    Quasi,
    /// Quasi-identical with `(λ, μ)` among the unknowns.
    QuasiUnknownScales,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveOptions {
    pub restarts: usize,
    pub seed: u64,
    pub lm: LmOptions,
    /// Relative distance under which two solutions are the same.
    pub distinct_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            restarts: 64,
            seed: 0,
            lm: LmOptions {
                residual_tol: 1e-15,
                ..LmOptions::default()
            },
            distinct_tol: 1e-6,
        }
    }
}

/// Canonical decompositions `(t₀, A₀)` of the three essentials after
/// normalization, with the factor applied to translations.
struct Frames {
    f12: DecompositionFamily,
    f13: DecompositionFamily,
    f23: Option<DecompositionFamily>,
    /// Translations recovered in the normalized frame are multiplied by this.
    translation_scale: f64,
    scale: ScaleMode,
    /// `E₂₃ = κ E₁₂` when both are consistently scaled and proportional.
    e23_ratio: Option<f64>,
}

impl Frames {
    fn new(ess: &ThreeViewEssentials) -> Result<Self> {
        let s = ess.e12.matrix.norm();
        if s == 0.0 {
            return Err(Error::RankDeficient {
                rank: 0,
                expected: 2,
            });
        }
        let norm = |e: &EssentialMatrix| match ess.scale {
            ScaleMode::Consistent => EssentialMatrix::new(e.matrix / s),
            ScaleMode::Independent => e.normalized(),
        };
        let f12 = decompose_essential(&norm(&ess.e12))?;
        let f13 = decompose_essential(&norm(&ess.e13))?;
        let f23 = ess
            .e23
            .as_ref()
            .map(|e| decompose_essential(&norm(e)))
            .transpose()?;
        let translation_scale = match ess.scale {
            ScaleMode::Consistent => s,
            ScaleMode::Independent => 1.0,
        };
        let e23_ratio = match (ess.scale, &ess.e23) {
            (ScaleMode::Consistent, Some(e23))
                if matrix_angular_distance(&e23.matrix, &ess.e12.matrix) <= PROPORTIONALITY_TOL =>
            {
                Some(e23.matrix.dot(&ess.e12.matrix) / (s * s))
            }
            _ => None,
        };
        Ok(Self {
            f12,
            f13,
            f23,
            translation_scale,
            scale: ess.scale,
            e23_ratio,
        })
    }
}

/// Scale and family vector of a known deformation in a decomposition frame:
/// `t = α t₀`, `α A = A₀ + t₀ vᵀ`.
fn frame_coordinates(frame: &DecompositionFamily, def: &AffineDeformation) -> (f64, Vector3<f64>) {
    let alpha = def.translation.dot(&frame.t0);
    let v = (def.linear * alpha - frame.a0).transpose() * frame.t0;
    (alpha, v)
}

/// `u e_kᵀ`: the matrix whose column `k` is `u`.
fn outer_row(u: &Vector3<f64>, k: usize) -> Matrix3<f64> {
    let mut m = Matrix3::zeros();
    m.set_column(k, u);
    m
}

fn put_vec(j: &mut DMatrix<f64>, row: usize, col: usize, v: &Vector3<f64>) {
    for r in 0..3 {
        j[(row + r, col)] = v[r];
    }
}

fn put_mat(j: &mut DMatrix<f64>, row: usize, col: usize, m: &Matrix3<f64>) {
    for r in 0..3 {
        for c in 0..3 {
            j[(row + 3 * r + c, col)] = m[(r, c)];
        }
    }
}

fn vec3(x: &DVector<f64>, at: usize) -> Vector3<f64> {
    Vector3::new(x[at], x[at + 1], x[at + 2])
}

/// The repeated (`λ = μ = 1` fixed) or quasi-identical system in the
/// unknowns `(α, γ, v₁, v₃[, λ, μ][, ρ])`:
///
/// `λ M a₀ + α μ a₀ − γ c₀ = 0`, `ρ λ γ M² − α² N = 0` with
/// `M = A₀ + a₀ v₁ᵀ`, `N = C₀ + c₀ v₃ᵀ`.
struct ChainSystem {
    a0: Vector3<f64>,
    big_a0: Matrix3<f64>,
    c0: Vector3<f64>,
    big_c0: Matrix3<f64>,
    free_scales: bool,
    free_rho: bool,
    /// Fixed `(λ, μ)` when not free.
    fixed_scales: (f64, f64),
    /// With free scales, the equation `λ μ = κ` from `E₂₃ = κ E₁₂`.
    scale_product: Option<f64>,
}

impl ChainSystem {
    fn new(frames: &Frames, free_scales: bool) -> Self {
        Self {
            a0: frames.f12.t0,
            big_a0: frames.f12.a0,
            c0: frames.f13.t0,
            big_c0: frames.f13.a0,
            free_scales,
            free_rho: frames.scale == ScaleMode::Independent,
            fixed_scales: (1.0, 1.0),
            scale_product: if free_scales { frames.e23_ratio } else { None },
        }
    }

    fn equations(&self) -> usize {
        12 + usize::from(self.scale_product.is_some())
    }

    fn scale_index(&self) -> usize {
        8
    }

    fn rho_index(&self) -> usize {
        if self.free_scales {
            10
        } else {
            8
        }
    }

    fn unpack(&self, x: &DVector<f64>) -> (f64, f64, Vector3<f64>, Vector3<f64>, f64, f64, f64) {
        let (lambda, mu) = if self.free_scales {
            (x[8], x[9])
        } else {
            self.fixed_scales
        };
        let rho = if self.free_rho {
            x[self.rho_index()]
        } else {
            1.0
        };
        (x[0], x[1], vec3(x, 2), vec3(x, 5), lambda, mu, rho)
    }

    fn pack(&self, p: &AmbiguityPoint) -> DVector<f64> {
        let mut v = vec![
            p.alpha, p.gamma, p.v1.x, p.v1.y, p.v1.z, p.v3.x, p.v3.y, p.v3.z,
        ];
        if self.free_scales {
            v.extend([p.scales.0, p.scales.1]);
        }
        if self.free_rho {
            v.push(p.rho);
        }
        DVector::from_vec(v)
    }

    /// With free scales, `(λ, μ, γ)` and `(−λ, −μ, −γ)` solve the system
    /// together: the second deformation `(λA, μa)` and its negation give the
    /// same images and essentials. The representative has `λ > 0`.
    fn canonical(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut x = x.clone();
        if self.free_scales && x[8] < 0.0 {
            for k in [1, 8, 9] {
                x[k] = -x[k];
            }
        }
        x
    }

    fn point(&self, x: &DVector<f64>) -> AmbiguityPoint {
        let (alpha, gamma, v1, v3, lambda, mu, rho) = self.unpack(x);
        let mut p = AmbiguityPoint::new(alpha, alpha, gamma, v1, v1, v3);
        p.scales = (lambda, mu);
        p.rho = rho;
        p
    }

    /// Largest residual of each equation group relative to the magnitude of
    /// that group's terms.
    fn relative_residual(&self, x: &DVector<f64>) -> f64 {
        let (alpha, gamma, v1, v3, lambda, mu, rho) = self.unpack(x);
        let m = self.big_a0 + self.a0 * v1.transpose();
        let n = self.big_c0 + self.c0 * v3.transpose();
        let r = self.residuals(x);
        let s1 = (lambda * m * self.a0)
            .norm()
            .max((alpha * mu * self.a0).norm())
            .max(gamma.abs());
        let s2 = (rho * lambda * gamma * m * m)
            .norm()
            .max((alpha * alpha * n).norm());
        let mut rel =
            group_ratio(r.rows(0, 3).amax(), s1).max(group_ratio(r.rows(3, 9).amax(), s2));
        if let Some(kappa) = self.scale_product {
            rel = rel.max(group_ratio(
                r[12].abs(),
                kappa.abs().max((lambda * mu).abs()),
            ));
        }
        rel
    }

    fn deformation(&self, x: &DVector<f64>, translation_scale: f64) -> Option<AffineDeformation> {
        let (alpha, _, v1, ..) = self.unpack(x);
        let linear = (self.big_a0 + self.a0 * v1.transpose()) / alpha;
        AffineDeformation::new(linear, self.a0 * alpha * translation_scale).ok()
    }
}

impl System for ChainSystem {
    fn dim(&self) -> usize {
        8 + if self.free_scales { 2 } else { 0 } + usize::from(self.free_rho)
    }

    fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        let (alpha, gamma, v1, v3, lambda, mu, rho) = self.unpack(x);
        let m = self.big_a0 + self.a0 * v1.transpose();
        let n = self.big_c0 + self.c0 * v3.transpose();
        let r1 = lambda * m * self.a0 + alpha * mu * self.a0 - gamma * self.c0;
        let r2 = rho * lambda * gamma * m * m - alpha * alpha * n;
        let mut r = DVector::zeros(self.equations());
        r.rows_mut(0, 3).copy_from(&r1);
        for k in 0..9 {
            r[3 + k] = r2[(k / 3, k % 3)];
        }
        if let Some(kappa) = self.scale_product {
            r[12] = lambda * mu - kappa;
        }
        r
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let (alpha, gamma, v1, _, lambda, mu, rho) = self.unpack(x);
        let m = self.big_a0 + self.a0 * v1.transpose();
        let n = self.big_c0 + self.c0 * vec3(x, 5).transpose();
        let m2 = m * m;
        let mut j = DMatrix::zeros(self.equations(), self.dim());
        put_vec(&mut j, 0, 0, &(mu * self.a0));
        put_mat(&mut j, 3, 0, &(-2.0 * alpha * n));
        put_vec(&mut j, 0, 1, &(-self.c0));
        put_mat(&mut j, 3, 1, &(rho * lambda * m2));
        for k in 0..3 {
            put_vec(&mut j, 0, 2 + k, &(lambda * self.a0 * self.a0[k]));
            let ek = outer_row(&self.a0, k);
            put_mat(
                &mut j,
                3,
                2 + k,
                &(rho * lambda * gamma * (ek * m + m * ek)),
            );
            put_mat(&mut j, 3, 5 + k, &(-alpha * alpha * outer_row(&self.c0, k)));
        }
        if self.free_scales {
            let i = self.scale_index();
            put_vec(&mut j, 0, i, &(m * self.a0));
            put_mat(&mut j, 3, i, &(rho * gamma * m2));
            put_vec(&mut j, 0, i + 1, &(alpha * self.a0));
            if self.scale_product.is_some() {
                j[(12, i)] = mu;
                j[(12, i + 1)] = lambda;
            }
        }
        if self.free_rho {
            put_mat(&mut j, 3, self.rho_index(), &(lambda * gamma * m2));
        }
        j
    }

    fn admissible(&self, x: &DVector<f64>) -> bool {
        x[0].abs() >= LOCALIZATION_FLOOR && x[1].abs() >= LOCALIZATION_FLOOR
    }
}

/// The generic system in `(α, β, γ, v₁, v₂, v₃)`, optionally with the
/// localization unknowns `(x, y, z)` and equations `αx = βy = γz = 1`:
///
/// `α Q a₀ + β² b₀ − β γ c₀ = 0`, `γ Q P − α β N = 0` with
/// `P = A₀ + a₀ v₁ᵀ`, `Q = B₀ + b₀ v₂ᵀ`, `N = C₀ + c₀ v₃ᵀ`.
struct GenericSystem {
    a0: Vector3<f64>,
    big_a0: Matrix3<f64>,
    b0: Vector3<f64>,
    big_b0: Matrix3<f64>,
    c0: Vector3<f64>,
    big_c0: Matrix3<f64>,
    localized: bool,
}

impl GenericSystem {
    fn new(frames: &Frames, localized: bool) -> Result<Self> {
        let f23 = frames
            .f23
            .ok_or_else(|| Error::InvalidInput("the generic system needs E23".into()))?;
        if frames.scale != ScaleMode::Consistent {
            return Err(Error::InvalidInput(
                "the generic system needs consistently scaled essentials".into(),
            ));
        }
        Ok(Self {
            a0: frames.f12.t0,
            big_a0: frames.f12.a0,
            b0: f23.t0,
            big_b0: f23.a0,
            c0: frames.f13.t0,
            big_c0: frames.f13.a0,
            localized,
        })
    }

    fn pack(&self, p: &AmbiguityPoint) -> DVector<f64> {
        let mut v = vec![p.alpha, p.beta, p.gamma];
        v.extend(p.v1.iter().chain(p.v2.iter()).chain(p.v3.iter()));
        if self.localized {
            v.extend([p.x, p.y, p.z]);
        }
        DVector::from_vec(v)
    }

    fn point(&self, x: &DVector<f64>) -> AmbiguityPoint {
        let mut p = AmbiguityPoint::new(x[0], x[1], x[2], vec3(x, 3), vec3(x, 6), vec3(x, 9));
        if self.localized {
            (p.x, p.y, p.z) = (x[12], x[13], x[14]);
        }
        p
    }

    fn mats(&self, x: &DVector<f64>) -> (Matrix3<f64>, Matrix3<f64>, Matrix3<f64>) {
        (
            self.big_a0 + self.a0 * vec3(x, 3).transpose(),
            self.big_b0 + self.b0 * vec3(x, 6).transpose(),
            self.big_c0 + self.c0 * vec3(x, 9).transpose(),
        )
    }

    fn relative_residual(&self, x: &DVector<f64>) -> f64 {
        let (p, q, n) = self.mats(x);
        let (alpha, beta, gamma) = (x[0], x[1], x[2]);
        let r = self.residuals(x);
        let s1 = (alpha * q * self.a0)
            .norm()
            .max(beta * beta)
            .max((beta * gamma).abs());
        let s2 = (gamma * q * p).norm().max((alpha * beta * n).norm());
        let mut rel =
            group_ratio(r.rows(0, 3).amax(), s1).max(group_ratio(r.rows(3, 9).amax(), s2));
        if self.localized {
            rel = rel.max(r.rows(12, 3).amax());
        }
        rel
    }
}

impl System for GenericSystem {
    fn dim(&self) -> usize {
        if self.localized {
            15
        } else {
            12
        }
    }

    fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        let (p, q, n) = self.mats(x);
        let (alpha, beta, gamma) = (x[0], x[1], x[2]);
        let r1 = alpha * q * self.a0 + beta * beta * self.b0 - beta * gamma * self.c0;
        let r2 = gamma * q * p - alpha * beta * n;
        let mut r = DVector::zeros(self.dim());
        r.rows_mut(0, 3).copy_from(&r1);
        for k in 0..9 {
            r[3 + k] = r2[(k / 3, k % 3)];
        }
        if self.localized {
            r[12] = alpha * x[12] - 1.0;
            r[13] = beta * x[13] - 1.0;
            r[14] = gamma * x[14] - 1.0;
        }
        r
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let (p, q, n) = self.mats(x);
        let (alpha, beta, gamma) = (x[0], x[1], x[2]);
        let mut j = DMatrix::zeros(self.dim(), self.dim());
        put_vec(&mut j, 0, 0, &(q * self.a0));
        put_mat(&mut j, 3, 0, &(-beta * n));
        put_vec(&mut j, 0, 1, &(2.0 * beta * self.b0 - gamma * self.c0));
        put_mat(&mut j, 3, 1, &(-alpha * n));
        put_vec(&mut j, 0, 2, &(-beta * self.c0));
        put_mat(&mut j, 3, 2, &(q * p));
        for k in 0..3 {
            put_mat(&mut j, 3, 3 + k, &(gamma * q * outer_row(&self.a0, k)));
            put_vec(&mut j, 0, 6 + k, &(alpha * self.b0 * self.a0[k]));
            put_mat(&mut j, 3, 6 + k, &(gamma * outer_row(&self.b0, k) * p));
            put_mat(&mut j, 3, 9 + k, &(-alpha * beta * outer_row(&self.c0, k)));
        }
        if self.localized {
            for k in 0..3 {
                j[(12 + k, k)] = x[12 + k];
                j[(12 + k, 12 + k)] = x[k];
            }
        }
        j
    }

    fn admissible(&self, x: &DVector<f64>) -> bool {
        (0..3).all(|k| x[k].abs() >= LOCALIZATION_FLOOR)
    }
}

fn group_ratio(residual: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        residual / scale
    } else {
        residual
    }
}

/// Gaussian start: unit scale for the scalar unknowns and the norm of the
/// matching decomposition matrix for each family vector.
fn gaussian(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    z * scale
}

fn chain_start(sys: &ChainSystem, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let sa = sys.big_a0.norm();
    let sc = sys.big_c0.norm();
    let mut x = DVector::zeros(sys.dim());
    x[0] = gaussian(rng, 1.0);
    x[1] = gaussian(rng, 1.0);
    for k in 0..3 {
        x[2 + k] = gaussian(rng, sa);
        x[5 + k] = gaussian(rng, sc);
    }
    for k in 8..sys.dim() {
        x[k] = gaussian(rng, 1.0);
    }
    x
}

fn generic_start(sys: &GenericSystem, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let scales = [sys.big_a0.norm(), sys.big_b0.norm(), sys.big_c0.norm()];
    let mut x = DVector::zeros(sys.dim());
    for k in 0..3 {
        x[k] = gaussian(rng, 1.0);
    }
    for (b, s) in scales.iter().enumerate() {
        for k in 0..3 {
            x[3 + 3 * b + k] = gaussian(rng, *s);
        }
    }
    if sys.localized {
        for k in 0..3 {
            x[12 + k] = 1.0 / x[k];
        }
    }
    x
}

/// Verified, invertible solutions among the outcomes with their relative
/// residuals.
fn verified<'a>(
    outcomes: &'a [LmOutcome],
    relative_residual: impl Fn(&DVector<f64>) -> f64,
    valid: impl Fn(&DVector<f64>) -> bool,
) -> Vec<(&'a LmOutcome, f64)> {
    outcomes
        .iter()
        .filter_map(|o| {
            let x = DVector::from_column_slice(&o.x);
            let rel = relative_residual(&x);
            (rel < VERIFY_TOL && valid(&x)).then_some((o, rel))
        })
        .collect()
}

/// Signature used to tell solutions apart: the entries of `(A², Aa + a)`
/// together with `(λ, μ)`.
fn signature(def: &AffineDeformation, scales: (f64, f64)) -> Vec<f64> {
    let a2 = def.linear * def.linear;
    let c = def.linear * def.translation + def.translation;
    a2.iter()
        .chain(c.iter())
        .copied()
        .chain([scales.0, scales.1])
        .collect()
}

/// All distinct verified solutions of the repeated or quasi-identical system,
/// best residual first.
fn chain_solutions(
    ess: &ThreeViewEssentials,
    free_scales: bool,
    opts: &SolveOptions,
) -> Result<Vec<RecoveredAffine>> {
    ess.check_proportional()?;
    let frames = Frames::new(ess)?;
    let sys = ChainSystem::new(&frames, free_scales);
    let mut outcomes = multi_start(&sys, opts.restarts, opts.seed, &opts.lm, |_, rng| {
        chain_start(&sys, rng)
    });
    for o in &mut outcomes {
        o.x = sys
            .canonical(&DVector::from_column_slice(&o.x))
            .as_slice()
            .to_vec();
    }
    let good = verified(
        &outcomes,
        |x| sys.relative_residual(x),
        |x| sys.deformation(x, 1.0).is_some(),
    );
    if good.is_empty() {
        let best = best_outcome(&outcomes).map_or(f64::INFINITY, |i| {
            sys.relative_residual(&DVector::from_column_slice(&outcomes[i].x))
        });
        return Err(Error::NoConvergence {
            restarts: opts.restarts,
            best_residual: best,
        });
    }
    let signatures: Vec<Vec<f64>> = good
        .iter()
        .map(|(o, _)| {
            let x = DVector::from_column_slice(&o.x);
            signature(
                &sys.deformation(&x, 1.0).expect("validated"),
                sys.point(&x).scales,
            )
        })
        .collect();
    let clusters = cluster(&signatures, opts.distinct_tol);
    let mut solutions: Vec<RecoveredAffine> = clusters
        .iter()
        .map(|members| {
            let kept: Vec<LmOutcome> = members.iter().map(|&m| good[m].0.clone()).collect();
            let best = &kept[best_outcome(&kept).expect("nonempty cluster")];
            let x = DVector::from_column_slice(&best.x);
            let point = sys.point(&x);
            RecoveredAffine {
                deformation: sys
                    .deformation(&x, frames.translation_scale)
                    .expect("validated"),
                scales: point.scales,
                residual: sys.relative_residual(&x),
                restart_count: opts.restarts,
                converged_count: good.len(),
                cluster_count: clusters.len(),
                point,
            }
        })
        .collect();
    solutions.sort_by(|a, b| a.residual.total_cmp(&b.residual));
    Ok(solutions)
}

fn unique(mut solutions: Vec<RecoveredAffine>) -> Result<RecoveredAffine> {
    if solutions.len() > 1 {
        return Err(Error::MultipleSolutions {
            count: solutions.len(),
        });
    }
    Ok(solutions.remove(0))
}

/// Every distinct solution of the repeated system found within the restart
/// budget.
pub fn repeated_solutions(
    ess: &ThreeViewEssentials,
    opts: &SolveOptions,
) -> Result<Vec<RecoveredAffine>> {
    chain_solutions(ess, false, opts)
}

/// Every distinct solution of the quasi-identical system (with unknown
/// `(λ, μ)`) found within the restart budget.
pub fn quasi_solutions(
    ess: &ThreeViewEssentials,
    opts: &SolveOptions,
) -> Result<Vec<RecoveredAffine>> {
    if ess.e23.is_none() {
        return Err(Error::InvalidInput(
            "the quasi-identical system needs E23".into(),
        ));
    }
    chain_solutions(ess, true, opts)
}

/// Recovers a deformation applied twice from `E₁₂` and `E₁₃` (`E₂₃`, when
/// given, must be proportional to `E₁₂`).
pub fn solve_repeated(ess: &ThreeViewEssentials, opts: &SolveOptions) -> Result<RecoveredAffine> {
    unique(repeated_solutions(ess, opts)?)
}

/// Recovers `(A, a)` and `(λ, μ)` when the second deformation is `(λA, μa)`.
/// With consistently scaled essentials the ratio `E₂₃ = λμ E₁₂` enters as an
/// extra equation; otherwise `(λ, μ)` are not separately identifiable and
/// the solve fails with [`Error::ScaleUnidentifiable`].
pub fn solve_quasi_identical(
    ess: &ThreeViewEssentials,
    opts: &SolveOptions,
) -> Result<RecoveredAffine> {
    let solutions = quasi_solutions(ess, opts)?;
    let dim = estimate_dimension(SystemId::QuasiUnknownScales, ess, &solutions[0].point)?;
    if dim.nullity > 0 {
        return Err(Error::ScaleUnidentifiable {
            nullity: dim.nullity,
        });
    }
    unique(solutions)
}

/// Distinct verified solutions of the generic system found from random
/// starts. Fails with [`Error::NoConvergence`] if fewer than `n_samples`
/// distinct solutions turn up within the restart budget.
pub fn sample_generic_fiber(
    ess: &ThreeViewEssentials,
    n_samples: usize,
    opts: &SolveOptions,
) -> Result<Vec<AmbiguityPoint>> {
    let frames = Frames::new(ess)?;
    let sys = GenericSystem::new(&frames, false)?;
    let outcomes = multi_start(&sys, opts.restarts, opts.seed, &opts.lm, |_, rng| {
        generic_start(&sys, rng)
    });
    let good = verified(&outcomes, |x| sys.relative_residual(x), |_| true);
    let xs: Vec<Vec<f64>> = good.iter().map(|(o, _)| o.x.clone()).collect();
    let clusters = cluster(&xs, opts.distinct_tol);
    if clusters.len() < n_samples {
        let best = best_outcome(&outcomes).map_or(f64::INFINITY, |i| outcomes[i].residual);
        return Err(Error::NoConvergence {
            restarts: opts.restarts,
            best_residual: best,
        });
    }
    Ok(clusters
        .iter()
        .map(|c| sys.point(&DVector::from_column_slice(&xs[c[0]])))
        .collect())
}

/// Relative residual of a point on the generic system.
pub fn generic_residual(ess: &ThreeViewEssentials, point: &AmbiguityPoint) -> Result<f64> {
    let frames = Frames::new(ess)?;
    let sys = GenericSystem::new(&frames, true)?;
    let x = sys.pack(point);
    Ok(sys.relative_residual(&x))
}

/// The deformations `(A, a)` and `(B, b)` encoded by a generic-system point.
pub fn generic_deformations(
    ess: &ThreeViewEssentials,
    point: &AmbiguityPoint,
) -> Result<(AffineDeformation, AffineDeformation)> {
    let frames = Frames::new(ess)?;
    let f23 = frames
        .f23
        .ok_or_else(|| Error::InvalidInput("the generic system needs E23".into()))?;
    let s = frames.translation_scale;
    let first = AffineDeformation::new(
        (frames.f12.a0 + frames.f12.t0 * point.v1.transpose()) / point.alpha,
        frames.f12.t0 * point.alpha * s,
    )?;
    let second = AffineDeformation::new(
        (f23.a0 + f23.t0 * point.v2.transpose()) / point.beta,
        f23.t0 * point.beta * s,
    )?;
    Ok((first, second))
}

/// Whether `(first, second)` reproduces the given essentials up to one scale
/// each: `[a]×A ∝ E₁₂`, `[b]×B ∝ E₂₃`, `[Ba+b]× BA ∝ E₁₃`.
pub fn reproduces_up_to_scale(
    ess: &ThreeViewEssentials,
    first: &AffineDeformation,
    second: &AffineDeformation,
    tol: f64,
) -> bool {
    let made = ThreeViewEssentials::from_deformations(first, second);
    let close = |a: &EssentialMatrix, b: &EssentialMatrix| {
        matrix_angular_distance(&a.matrix, &b.matrix) <= tol
    };
    close(&made.e12, &ess.e12)
        && close(&made.e13, &ess.e13)
        && match (&made.e23, &ess.e23) {
            (Some(a), Some(b)) => close(a, b),
            _ => true,
        }
}

/// Ground-truth point of the chosen system for known deformations. For the
/// repeated system `second` must equal `first`; for the quasi-identical
/// system `scales` is `(λ, μ)` with `second = (λA, μa)`.
pub fn ground_truth_point(
    ess: &ThreeViewEssentials,
    first: &AffineDeformation,
    second: &AffineDeformation,
    scales: (f64, f64),
) -> Result<AmbiguityPoint> {
    let frames = Frames::new(ess)?;
    let s = frames.translation_scale;
    let norm_first = AffineDeformation {
        linear: first.linear,
        translation: first.translation / s,
    };
    let norm_second = AffineDeformation {
        linear: second.linear,
        translation: second.translation / s,
    };
    let (alpha, v1) = frame_coordinates(&frames.f12, &norm_first);
    let (beta, v2) = match &frames.f23 {
        Some(f) => frame_coordinates(f, &norm_second),
        None => (alpha, v1),
    };
    let composed = crate::geometry::compose_affine(&norm_first, &norm_second);
    let (gamma, v3) = frame_coordinates(&frames.f13, &composed);
    let mut p = AmbiguityPoint::new(alpha, beta, gamma, v1, v2, v3);
    p.scales = scales;
    if frames.scale == ScaleMode::Independent {
        // N = ρ λ γ M² / α² fixes ρ from the composed linear part.
        let m = frames.f12.a0 + frames.f12.t0 * v1.transpose();
        let n = frames.f13.a0 + frames.f13.t0 * v3.transpose();
        let lhs = scales.0 * gamma * m * m;
        p.rho = (alpha * alpha * n).dot(&lhs) / lhs.norm_squared();
    }
    Ok(p)
}

/// Jacobian of the chosen system at a point, with the point's relative
/// residual. The generic system includes its localization equations.
pub fn system_jacobian(
    system: SystemId,
    ess: &ThreeViewEssentials,
    point: &AmbiguityPoint,
) -> Result<(DMatrix<f64>, f64)> {
    let frames = Frames::new(ess)?;
    Ok(match system {
        SystemId::Generic => {
            let sys = GenericSystem::new(&frames, true)?;
            let x = sys.pack(point);
            (sys.jacobian(&x), sys.relative_residual(&x))
        }
        SystemId::Repeated | SystemId::Quasi | SystemId::QuasiUnknownScales => {
            let mut sys = ChainSystem::new(&frames, system == SystemId::QuasiUnknownScales);
            if system == SystemId::Quasi {
                sys.fixed_scales = point.scales;
            }
            let x = sys.pack(point);
            (sys.jacobian(&x), sys.relative_residual(&x))
        }
    })
}

/// Alternating row and column normalization. The nullity is unchanged while
/// unknowns and equations of very different magnitudes are put on one scale.
pub fn equilibrate(jac: &DMatrix<f64>) -> DMatrix<f64> {
    crate::linalg::equilibrate(jac, 4).0
}

/// Numerical dimension of the solution set of the chosen system at a point,
/// from the nullity of its Jacobian.
pub fn estimate_dimension(
    system: SystemId,
    ess: &ThreeViewEssentials,
    point: &AmbiguityPoint,
) -> Result<DimensionEstimate> {
    let (jac, residual) = system_jacobian(system, ess, point)?;
    if residual > VERIFY_TOL {
        return Err(Error::ResidualTooHigh { index: 0, residual });
    }
    let svd = full_svd(&equilibrate(&jac));
    match split_spectrum(&svd.singular_values, DIM_ZERO_TOL, DIM_KEEP_TOL) {
        GapSplit::Clear { nullity, gap } => Ok(DimensionEstimate {
            nullity,
            singular_values: svd.singular_values,
            gap,
            sample_points: vec![point.clone()],
        }),
        GapSplit::Ambiguous { best_gap } => Err(Error::IllConditioned { best_gap }),
    }
}

/// Depths and reconstructed points from a known deformation.
#[derive(Debug, Clone, Serialize)]
pub struct Structure {
    pub depths: DepthAssignment,
    pub points: Vec<ScenePoint>,
    /// Per-point `‖q′ × (λ A q + t)‖` on unit `q′`.
    pub residuals: Vec<f64>,
}

/// Per point, the least-squares depth `λ` minimizing `‖q′ × (λ A q + t)‖`.
pub fn recover_structure(def: &AffineDeformation, pairs: &CorrespondenceSet) -> Result<Structure> {
    if pairs.n_views() < 2 {
        return Err(Error::InvalidInput("need at least 2 views".into()));
    }
    let mut depths = Vec::with_capacity(pairs.len());
    let mut residuals = Vec::with_capacity(pairs.len());
    for i in 0..pairs.len() {
        let q = pairs.views[0][i].0;
        let qp = pairs.views[1][i].unit();
        let u = qp.cross(&(def.linear * q));
        let w = qp.cross(&def.translation);
        let scale = (def.linear * q)
            .norm()
            .max(def.translation.norm())
            .max(f64::MIN_POSITIVE);
        if u.norm() <= 1e-12 * scale {
            return Err(Error::DepthDegenerate { index: i });
        }
        let lambda = -u.dot(&w) / u.norm_squared();
        residuals.push((u * lambda + w).norm() / scale);
        depths.push(lambda);
    }
    let depths = DepthAssignment::new(depths)?;
    let points = depths.points(&pairs.views[0]);
    Ok(Structure {
        depths,
        points,
        residuals,
    })
}

/// Full three-view pipeline output for a repeated deformation.
#[derive(Debug, Clone, Serialize)]
pub struct TrackRecovery {
    pub recovered: RecoveredAffine,
    pub structure: Structure,
    /// Angular distance between each observed third-view point and its
    /// prediction from the recovered deformation and structure.
    pub third_view_residuals: Vec<f64>,
}

/// Maximum third-view angular residual accepted by [`recover_repeated_from_tracks`].
pub const THIRD_VIEW_TOL: f64 = 1e-6;

/// Estimates the essentials from tracks, solves the repeated system,
/// recovers structure from views 1 and 2 and keeps the solutions that
/// predict view 3. Image-estimated essentials leave the relative scale of
/// `E₁₃` free, which admits a few spurious solutions of the essential
/// equations; the third-view points single out the true one. The
/// translation (and the structure) are determined up to one common scale,
/// fixed here by `‖E₁₂‖ = 1`.
pub fn recover_repeated_from_tracks(
    tracks: &CorrespondenceSet,
    opts: &SolveOptions,
) -> Result<TrackRecovery> {
    let ess = ThreeViewEssentials::from_tracks(tracks)?;
    let pair = tracks.pair(0, 1)?;
    let tol = THIRD_VIEW_TOL.max(10.0 * tracks.noise_sigma);
    let mut accepted = Vec::new();
    let mut best_rejected = (0, f64::INFINITY);
    for recovered in repeated_solutions(&ess, opts)? {
        let Ok(structure) = recover_structure(&recovered.deformation, &pair) else {
            continue;
        };
        let residuals = third_view_residuals(&recovered.deformation, &structure, &tracks.views[2]);
        match residuals
            .iter()
            .copied()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
        {
            Some((index, worst)) if worst > tol => {
                if worst < best_rejected.1 {
                    best_rejected = (index, worst);
                }
            }
            _ => accepted.push(TrackRecovery {
                recovered,
                structure,
                third_view_residuals: residuals,
            }),
        }
    }
    match accepted.len() {
        0 => Err(Error::ResidualTooHigh {
            index: best_rejected.0,
            residual: best_rejected.1,
        }),
        1 => Ok(accepted.remove(0)),
        count => Err(Error::MultipleSolutions { count }),
    }
}

fn third_view_residuals(
    def: &AffineDeformation,
    structure: &Structure,
    view: &[ImagePoint],
) -> Vec<f64> {
    structure
        .points
        .iter()
        .zip(view)
        .map(|(p, q)| angular_distance(&def.apply_vec(&def.apply_vec(&p.0)), &q.0))
        .collect()
}

/// Aligns a deformation recovered up to translation scale with a reference:
/// returns the copy whose translation is rescaled to best match.
pub fn align_translation_scale(
    def: &AffineDeformation,
    reference: &AffineDeformation,
) -> AffineDeformation {
    let t = def.translation;
    let s = t.dot(&reference.translation) / t.norm_squared().max(f64::MIN_POSITIVE);
    AffineDeformation {
        linear: def.linear,
        translation: t * s,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::{default_scene, random_affine, simulate, Deformation};
    use crate::solver::numeric_jacobian;
    use rand::SeedableRng;

    fn theorem2() -> AffineDeformation {
        AffineDeformation::new(
            Matrix3::new(27.0, 99.0, 92.0, 8.0, 29.0, -31.0, 69.0, 44.0, 67.0),
            Vector3::new(-32.0, -74.0, -4.0),
        )
        .unwrap()
    }

    fn assert_jacobian<S: System>(sys: &S, x: &DVector<f64>) {
        let analytic = sys.jacobian(x);
        let numeric = numeric_jacobian(sys, x, 1e-6);
        let err = (&analytic - &numeric).norm() / analytic.norm().max(1.0);
        assert!(err < 1e-7, "jacobian mismatch {err:e}");
    }

    fn random_x(n: usize, seed: u64) -> DVector<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DVector::from_fn(n, |_, _| gaussian(&mut rng, 1.0))
    }

    #[test]
    fn chain_jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = random_affine(&mut rng, 1.0);
        let d2 = AffineDeformation::new(d.linear * 2.0, d.translation * 3.0).unwrap();
        let mut independent = ThreeViewEssentials::from_deformations(&d, &d2);
        let frames = Frames::new(&independent).unwrap();
        for free in [false, true] {
            let sys = ChainSystem::new(&frames, free);
            assert_jacobian(&sys, &random_x(sys.dim(), 2));
        }
        independent.scale = ScaleMode::Independent;
        let frames = Frames::new(&independent).unwrap();
        for free in [false, true] {
            let sys = ChainSystem::new(&frames, free);
            assert_jacobian(&sys, &random_x(sys.dim(), 3));
        }
    }

    #[test]
    fn generic_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (d1, d2) = (random_affine(&mut rng, 1.0), random_affine(&mut rng, 1.0));
        let frames = Frames::new(&ThreeViewEssentials::from_deformations(&d1, &d2)).unwrap();
        for localized in [false, true] {
            let sys = GenericSystem::new(&frames, localized).unwrap();
            assert_jacobian(&sys, &random_x(sys.dim(), 5));
        }
    }

    #[test]
    fn ground_truth_points_solve_their_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (d1, d2) = (random_affine(&mut rng, 1.0), random_affine(&mut rng, 1.0));
        let ess = ThreeViewEssentials::from_deformations(&d1, &d2);
        let p = ground_truth_point(&ess, &d1, &d2, (1.0, 1.0)).unwrap();
        assert!(generic_residual(&ess, &p).unwrap() < 1e-13);
        assert!(p.localization_residual() < 1e-15);
        let (r1, r2) = generic_deformations(&ess, &p).unwrap();
        assert!(r1.relative_error(&d1) < 1e-12 && r2.relative_error(&d2) < 1e-12);
        let rep = ThreeViewEssentials::repeated(&d1);
        let p = ground_truth_point(&rep, &d1, &d1, (1.0, 1.0)).unwrap();
        let (_, res) = system_jacobian(SystemId::Repeated, &rep, &p).unwrap();
        assert!(res < 1e-13);
    }

    #[test]
    fn theorem2_deformation_is_recovered_uniquely() {
        let truth = theorem2();
        let ess = ThreeViewEssentials::repeated(&truth);
        let rec = solve_repeated(&ess, &SolveOptions::default()).unwrap();
        assert!(rec.deformation.relative_error(&truth) < 1e-9);
        assert_eq!(rec.cluster_count, 1);
        assert!(rec.residual < VERIFY_TOL);
    }

    #[test]
    fn repeated_pure_translation_has_a_shear_fiber() {
        // (I + a uᵀ, a) with uᵀa = 0 yields the same essentials for every u.
        let truth = AffineDeformation::translation_only(Vector3::new(0.0, 0.0, 1.0));
        let ess = ThreeViewEssentials::repeated(&truth);
        let p = ground_truth_point(&ess, &truth, &truth, (1.0, 1.0)).unwrap();
        assert!(
            estimate_dimension(SystemId::Repeated, &ess, &p)
                .unwrap()
                .nullity
                >= 2
        );
        let sheared = AffineDeformation::new(
            Matrix3::identity() + truth.translation * Vector3::new(0.7, -1.2, 0.0).transpose(),
            truth.translation,
        )
        .unwrap();
        let other = ThreeViewEssentials::repeated(&sheared);
        assert!((other.e12.matrix - ess.e12.matrix).norm() < 1e-12);
        assert!((other.e13.matrix - ess.e13.matrix).norm() < 1e-12);
        let solutions = repeated_solutions(&ess, &SolveOptions::default()).unwrap();
        assert!(solutions.len() > 1);
        assert!(matches!(
            solve_repeated(&ess, &SolveOptions::default()),
            Err(Error::MultipleSolutions { .. })
        ));
    }

    #[test]
    fn fiber_dimensions_match_theory() {
        let truth = theorem2();
        let rep = ThreeViewEssentials::repeated(&truth);
        let p = ground_truth_point(&rep, &truth, &truth, (1.0, 1.0)).unwrap();
        assert_eq!(
            estimate_dimension(SystemId::Repeated, &rep, &p)
                .unwrap()
                .nullity,
            0
        );
        assert_eq!(
            estimate_dimension(SystemId::Quasi, &rep, &p)
                .unwrap()
                .nullity,
            0
        );
    }

    #[test]
    fn unrelated_second_view_fails_proportionality() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (d1, d2) = (random_affine(&mut rng, 1.0), random_affine(&mut rng, 1.0));
        let ess = ThreeViewEssentials::from_deformations(&d1, &d2);
        assert!(matches!(
            solve_quasi_identical(&ess, &SolveOptions::default()),
            Err(Error::ScaleDegenerate { .. })
        ));
        assert!(matches!(
            solve_repeated(&ess, &SolveOptions::default()),
            Err(Error::ScaleDegenerate { .. })
        ));
    }

    #[test]
    fn structure_from_ground_truth_matches_scene() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = random_affine(&mut rng, 1.0);
        let scene = default_scene(10, &mut rng);
        let tracks = simulate(&scene, &Deformation::Affine(d), 1, 0.0, &mut rng).unwrap();
        let s = recover_structure(&d, &tracks).unwrap();
        for (p, q) in s.points.iter().zip(&scene.points) {
            assert!((p.0 - q.0).norm() < 1e-9 * q.0.norm().max(1.0));
        }
    }

    #[test]
    fn structure_degenerates_without_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let scene = default_scene(5, &mut rng);
        let tracks = simulate(
            &scene,
            &Deformation::Affine(AffineDeformation::identity()),
            1,
            0.0,
            &mut rng,
        )
        .unwrap();
        assert!(matches!(
            recover_structure(&AffineDeformation::identity(), &tracks),
            Err(Error::DepthDegenerate { index: 0 })
        ));
    }

    #[test]
    fn pure_translation_triangulates_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = AffineDeformation::translation_only(Vector3::new(1.0, -0.5, 0.25));
        let scene = default_scene(6, &mut rng);
        let tracks = simulate(&scene, &Deformation::Affine(d), 1, 0.0, &mut rng).unwrap();
        let s = recover_structure(&d, &tracks).unwrap();
        for (p, q) in s.points.iter().zip(&scene.points) {
            assert!((p.0 - q.0).norm() < 1e-10 * q.0.norm().max(1.0));
        }
    }

    #[test]
    fn equilibration_keeps_the_nullspace() {
        let j = DMatrix::from_row_slice(3, 3, &[1e6, 0.0, 1e6, 0.0, 1e-3, 0.0, 2e6, 0.0, 2e6]);
        assert_eq!(full_svd(&equilibrate(&j)).nullity(1e-10), 1);
    }
}
