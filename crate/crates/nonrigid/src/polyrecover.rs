//! Joint recovery of a polynomial deformation and the scene depths from
//! views related by the same deformation applied repeatedly.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::affine_recovery::recover_structure;
use crate::epipolar::{decompose_essential, EssentialMatrix};
use crate::error::{Error, Result};
use crate::geometry::{
    eval_monomials, monomials_up_to, skew, AffineDeformation, DepthAssignment, ImagePoint,
    PolynomialDeformation,
};
use crate::linalg::{equilibrate, full_svd, split_spectrum, GapSplit};
use crate::polymatch::{Coefficient, ModelSpec};
use crate::simulation::CorrespondenceSet;
use crate::solver::{
    best_outcome, cluster, levenberg_marquardt, multi_start, restart_rng, LmOptions, System,
};

/// Depth magnitudes below this are inadmissible.
pub const LOCALIZATION_FLOOR: f64 = 1e-8;

/// Smallest accepted `min |αᵢ| / max |αᵢ|` of a verified solution; below it
/// the scene has collapsed onto the localization floor.
pub const DEPTH_RATIO_FLOOR: f64 = 1e-6;

/// Max angular residual of a verified solution.
pub const VERIFY_TOL: f64 = 1e-9;

/// Relative singular values at or below this count as zero in
/// [`local_dimension`].
pub const DIM_ZERO_TOL: f64 = 1e-12;

/// Relative singular values at or above this count as nonzero in
/// [`local_dimension`].
pub const DIM_KEEP_TOL: f64 = 1e-9;

/// Normalized parameter distance separating distinct solutions.
pub const DISTINCT_TOL: f64 = 1e-4;

/// `⌈p / 3⌉`: fewest points for which the repeated-deformation system can
/// have finitely many solutions.
pub fn min_points(model: &ModelSpec) -> usize {
    model.parameter_count().div_ceil(3)
}

/// Whether the model is closed under `Φ ↦ kΦ(·/k)`, which rescales the
/// scene by `k` without changing any image. This holds when every fixed
/// coefficient is zero or multiplies a degree-1 monomial.
pub fn has_scale_gauge(model: &ModelSpec) -> bool {
    model.pattern.iter().all(|(_, e, c)| match c {
        Coefficient::Free => true,
        Coefficient::Fixed(v) => *v == 0.0 || e.iter().sum::<u32>() == 1,
    })
}

/// Whether the model is closed under `Φ ↦ cΦ`, which leaves a single
/// application's images unchanged. This holds when every fixed coefficient
/// is zero.
pub fn has_output_scale_gauge(model: &ModelSpec) -> bool {
    model
        .pattern
        .iter()
        .all(|(_, _, c)| !matches!(c, Coefficient::Fixed(v) if *v != 0.0))
}

/// A recovered deformation with its depths.
#[derive(Debug, Clone, Serialize)]
pub struct PolySolution {
    pub deformation: PolynomialDeformation,
    /// Depths along the first-view image vectors as given (`Pᵢ = λᵢ qᵢ`).
    pub depths: DepthAssignment,
    /// Max angular residual over all views.
    pub residual: f64,
    /// Number of distinct verified solutions found by the search.
    pub n_solutions_found: usize,
}

impl PolySolution {
    /// The same solution with the scene rescaled so that the first depth is
    /// one, when the model allows it.
    pub fn gauge_normalized(&self, model: &ModelSpec) -> PolySolution {
        if !has_scale_gauge(model) {
            return self.clone();
        }
        let k = 1.0 / self.depths.depths[0];
        let depths = DepthAssignment::new(self.depths.depths.iter().map(|d| d * k).collect())
            .expect("scaling keeps depths nonzero");
        PolySolution {
            deformation: self.deformation.conjugated(k),
            depths,
            ..self.clone()
        }
    }
}

/// Options for the polynomial solvers.
#[derive(Debug, Clone)]
pub struct PolyOptions {
    pub restarts: usize,
    pub seed: u64,
    pub lm: LmOptions,
    /// Depth sweep for start points, in units of `data_scale`.
    pub depth_scales: Vec<f64>,
    pub data_scale: f64,
    pub verify_tol: f64,
    pub distinct_tol: f64,
}

impl Default for PolyOptions {
    fn default() -> Self {
        Self {
            restarts: 256,
            seed: 0,
            lm: LmOptions {
                max_iterations: 300,
                residual_tol: 1e-13,
                ..LmOptions::default()
            },
            depth_scales: vec![0.5, 1.0, 2.0, 4.0],
            data_scale: 1.0,
            verify_tol: VERIFY_TOL,
            distinct_tol: DISTINCT_TOL,
        }
    }
}

/// Stacked residuals `q̂ᵥ × Φᵛ(αᵢ q̂ᵢ) / ‖Φᵛ(αᵢ q̂ᵢ)‖` for views `v ≥ 1` over
/// unknowns `(θ, α)`, where `θ` are the model's free parameters and `q̂`
/// are unit rays.
pub struct PolySystem {
    model: ModelSpec,
    /// `(component, monomial index)` of each free parameter.
    free: Vec<(usize, usize)>,
    monomials: Vec<[u32; 3]>,
    rays: Vec<Vec<Vector3<f64>>>,
}

impl PolySystem {
    pub fn new(model: &ModelSpec, tracks: &CorrespondenceSet) -> Result<Self> {
        if tracks.n_views() < 2 {
            return Err(Error::InvalidInput("need at least 2 views".into()));
        }
        let monomials = monomials_up_to(model.degree);
        let free = model
            .pattern
            .iter()
            .filter(|(_, _, c)| matches!(c, Coefficient::Free))
            .map(|(c, e, _)| {
                (
                    *c,
                    monomials
                        .iter()
                        .position(|m| m == e)
                        .expect("validated model"),
                )
            })
            .collect();
        let rays = tracks
            .views
            .iter()
            .map(|v| v.iter().map(ImagePoint::unit).collect())
            .collect();
        Ok(Self {
            model: model.clone(),
            free,
            monomials,
            rays,
        })
    }

    pub fn n_points(&self) -> usize {
        self.rays[0].len()
    }

    pub fn n_params(&self) -> usize {
        self.free.len()
    }

    pub fn n_views(&self) -> usize {
        self.rays.len()
    }

    pub fn deformation(&self, x: &DVector<f64>) -> PolynomialDeformation {
        self.model
            .deformation(&x.as_slice()[..self.n_params()])
            .expect("parameter count matches")
    }

    fn depths<'a>(&self, x: &'a DVector<f64>) -> &'a [f64] {
        &x.as_slice()[self.n_params()..]
    }

    /// Residual below `tol` on every view, admissible, and with depths that
    /// have not collapsed.
    pub fn verified(&self, x: &DVector<f64>, tol: f64) -> Option<f64> {
        let d = self.depths(x);
        let (lo, hi) = d.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), v| {
            (lo.min(v.abs()), hi.max(v.abs()))
        });
        let res = self.view_residuals(x).into_iter().fold(0.0, f64::max);
        (self.admissible(x) && lo >= DEPTH_RATIO_FLOOR * hi && res < tol).then_some(res)
    }

    /// Packs a deformation and unit-ray depths into an unknown vector.
    pub fn pack(&self, def: &PolynomialDeformation, unit_depths: &[f64]) -> Result<DVector<f64>> {
        let mut x = self.model.parameters_of(def)?;
        x.extend_from_slice(unit_depths);
        Ok(DVector::from_vec(x))
    }

    /// Max angular residual per view `v ≥ 1`.
    pub fn view_residuals(&self, x: &DVector<f64>) -> Vec<f64> {
        let r = self.residuals(x);
        let n = self.n_points();
        (0..self.n_views() - 1)
            .map(|v| {
                (0..n)
                    .flat_map(|i| (0..3).map(move |k| 3 * ((v * n) + i) + k))
                    .map(|k| r[k].abs())
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    /// Linear system `M θ = −b` of the second-view equations at fixed depths.
    fn two_view_linear(&self, depths: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.n_points();
        let base = self
            .model
            .deformation(&vec![0.0; self.n_params()])
            .expect("parameter count matches");
        let mut m = DMatrix::zeros(3 * n, self.n_params());
        let mut b = DVector::zeros(3 * n);
        for i in 0..n {
            let p = self.rays[0][i] * depths[i];
            let s = skew(&self.rays[1][i]);
            let mons = eval_monomials(&self.monomials, &p);
            for (j, (c, mi)) in self.free.iter().enumerate() {
                let col = s.column(*c) * mons[*mi];
                for k in 0..3 {
                    m[(3 * i + k, j)] = col[k];
                }
            }
            let rb = s * base.eval(&p);
            for k in 0..3 {
                b[3 * i + k] = rb[k];
            }
        }
        (m, b)
    }

    /// Structured start: every depth at `scale` with 10% log-normal jitter,
    /// parameters Gaussian and then projected onto the set satisfying the
    /// second-view equations at those depths.
    pub fn structured_start(&self, scale: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let depths: Vec<f64> = (0..self.n_points())
            .map(|_| scale * (0.1 * rng.sample::<f64, _>(StandardNormal)).exp())
            .collect();
        let theta = DVector::from_fn(self.n_params(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let (m, b) = self.two_view_linear(&depths);
        let correction = m
            .clone()
            .svd(true, true)
            .solve(&(&m * &theta + b), 1e-12)
            .unwrap_or_else(|_| theta.clone() * 0.0);
        let mut x = (theta - correction).as_slice().to_vec();
        x.extend_from_slice(&depths);
        DVector::from_vec(x)
    }

    /// Converts an unknown vector to a solution on the given rays.
    fn solution(
        &self,
        x: &DVector<f64>,
        raw_rays: &[ImagePoint],
        residual: f64,
    ) -> Result<PolySolution> {
        let depths = self
            .depths(x)
            .iter()
            .zip(raw_rays)
            .map(|(d, q)| d / q.0.norm())
            .collect();
        Ok(PolySolution {
            deformation: self.deformation(x),
            depths: DepthAssignment::new(depths)?,
            residual,
            n_solutions_found: 1,
        })
    }

    /// Clustering signature: parameters and depths, gauge-normalized to unit
    /// RMS depth with a positive first depth when the model has the scale
    /// gauge.
    pub fn signature(&self, x: &DVector<f64>) -> Vec<f64> {
        let d = self.depths(x);
        let rms = (d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64).sqrt();
        if !has_scale_gauge(&self.model) || rms == 0.0 {
            return x.as_slice().to_vec();
        }
        let k = d[0].signum() / rms;
        let def = self.deformation(x).conjugated(k);
        let mut sig = self.model.parameters_of(&def).expect("same model");
        if self.n_views() == 2 && has_output_scale_gauge(&self.model) {
            let norm = sig.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                sig.iter_mut().for_each(|v| *v /= norm);
            }
        }
        sig.extend(d.iter().map(|v| v * k));
        sig
    }
}

fn angular_block(q: &Vector3<f64>, y: &Vector3<f64>) -> (Vector3<f64>, Matrix3<f64>) {
    let n = y.norm().max(f64::MIN_POSITIVE);
    let yh = y / n;
    let s = skew(q);
    (s * yh, s * (Matrix3::identity() - yh * yh.transpose()) / n)
}

impl System for PolySystem {
    fn dim(&self) -> usize {
        self.n_params() + self.n_points()
    }

    fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        let def = self.deformation(x);
        let n = self.n_points();
        let mut r = DVector::zeros(3 * n * (self.n_views() - 1));
        for (i, alpha) in self.depths(x).iter().enumerate() {
            let mut y = self.rays[0][i] * *alpha;
            for v in 1..self.n_views() {
                y = def.eval(&y);
                let (res, _) = angular_block(&self.rays[v][i], &y);
                r.fixed_rows_mut::<3>(3 * ((v - 1) * n + i)).copy_from(&res);
            }
        }
        r
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let def = self.deformation(x);
        let (n, p) = (self.n_points(), self.n_params());
        let mut j = DMatrix::zeros(3 * n * (self.n_views() - 1), p + n);
        for (i, alpha) in self.depths(x).iter().enumerate() {
            let mut y = self.rays[0][i] * *alpha;
            // Derivatives of the current point with respect to θ and αᵢ.
            let mut dy_theta = DMatrix::<f64>::zeros(3, p);
            let mut dy_alpha = self.rays[0][i];
            for v in 1..self.n_views() {
                let mons = eval_monomials(&self.monomials, &y);
                let jac = def.jacobian(&y);
                let mut next_theta = DMatrix::from_column_slice(3, 3, jac.as_slice()) * &dy_theta;
                for (k, (c, mi)) in self.free.iter().enumerate() {
                    next_theta[(*c, k)] += mons[*mi];
                }
                dy_alpha = jac * dy_alpha;
                dy_theta = next_theta;
                y = def.eval(&y);
                let (_, d) = angular_block(&self.rays[v][i], &y);
                let row = 3 * ((v - 1) * n + i);
                j.view_mut((row, 0), (3, p)).copy_from(&(d * &dy_theta));
                j.fixed_view_mut::<3, 1>(row, p + i)
                    .copy_from(&(d * dy_alpha));
            }
        }
        j
    }

    fn admissible(&self, x: &DVector<f64>) -> bool {
        x.iter().all(|v| v.is_finite())
            && self.depths(x).iter().all(|d| d.abs() >= LOCALIZATION_FLOOR)
    }
}

/// Verified, clustered solutions of a multi-start solve.
#[derive(Debug, Clone, Serialize)]
pub struct PolyReport {
    /// One representative per cluster, lowest residual first.
    pub solutions: Vec<PolySolution>,
    pub restarts: usize,
    pub converged: usize,
    pub best_residual: f64,
}

/// Multi-start solve over any number of views (two views give the
/// underdetermined system).
pub fn solve_poly_views(
    tracks: &CorrespondenceSet,
    model: &ModelSpec,
    opts: &PolyOptions,
) -> Result<PolyReport> {
    let sys = PolySystem::new(model, tracks)?;
    let scales: Vec<f64> = if opts.depth_scales.is_empty() {
        vec![1.0]
    } else {
        opts.depth_scales.clone()
    };
    let outcomes = multi_start(&sys, opts.restarts, opts.seed, &opts.lm, |i, rng| {
        sys.structured_start(scales[i % scales.len()] * opts.data_scale, rng)
    });
    let best_residual = best_outcome(&outcomes).map_or(f64::INFINITY, |b| outcomes[b].residual);
    let mut verified: Vec<(DVector<f64>, f64)> = outcomes
        .iter()
        .filter_map(|o| {
            let x = DVector::from_vec(o.x.clone());
            sys.verified(&x, opts.verify_tol).map(|res| (x, res))
        })
        .collect();
    verified.sort_by(|a, b| a.1.total_cmp(&b.1));
    let converged = verified.len();
    let signatures: Vec<Vec<f64>> = verified.iter().map(|(x, _)| sys.signature(x)).collect();
    let clusters = cluster(&signatures, opts.distinct_tol);
    let count = clusters.len();
    let solutions = clusters
        .iter()
        .map(|c| {
            let (x, res) = &verified[c[0]];
            sys.solution(x, &tracks.views[0], *res).map(|mut s| {
                s.n_solutions_found = count;
                s
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PolyReport {
        solutions,
        restarts: opts.restarts,
        converged,
        best_residual,
    })
}

/// Recovers the deformation and depths from three views of the same
/// deformation applied twice. The best verified solution is returned with
/// the number of distinct verified solutions found.
pub fn solve_poly_three_views(
    tracks: &CorrespondenceSet,
    model: &ModelSpec,
    opts: &PolyOptions,
) -> Result<PolySolution> {
    if tracks.n_views() != 3 {
        return Err(Error::InvalidInput(format!(
            "expected 3 views, got {}",
            tracks.n_views()
        )));
    }
    let needed = min_points(model);
    if tracks.len() < needed {
        return Err(Error::InsufficientPoints {
            needed,
            got: tracks.len(),
        });
    }
    let report = solve_poly_views(tracks, model, opts)?;
    report
        .solutions
        .into_iter()
        .next()
        .ok_or(Error::NoConvergence {
            restarts: opts.restarts,
            best_residual: report.best_residual,
        })
}

/// Local dimension of the solution set at `x`: equilibrated Jacobian
/// nullity, minus one for the scale gauge when the model has it.
#[derive(Debug, Clone, Serialize)]
pub struct LocalDimension {
    pub nullity: usize,
    pub gauge: usize,
    pub singular_values: Vec<f64>,
    pub gap: f64,
}

impl LocalDimension {
    /// Dimension of the solution set modulo the gauge.
    pub fn dimension(&self) -> usize {
        self.nullity.saturating_sub(self.gauge)
    }
}

/// Nullity of the system Jacobian at a solution.
pub fn local_dimension(
    tracks: &CorrespondenceSet,
    model: &ModelSpec,
    solution: &PolySolution,
) -> Result<LocalDimension> {
    let sys = PolySystem::new(model, tracks)?;
    let x = unknowns_of(&sys, tracks, solution)?;
    let res = sys.view_residuals(&x).into_iter().fold(0.0, f64::max);
    if res > VERIFY_TOL {
        return Err(Error::ResidualTooHigh {
            index: 0,
            residual: res,
        });
    }
    let (eq, _) = equilibrate(&sys.jacobian(&x), 4);
    let svd = full_svd(&eq);
    let (nullity, gap) = match split_spectrum(&svd.singular_values, DIM_ZERO_TOL, DIM_KEEP_TOL) {
        GapSplit::Clear { nullity, gap } => (nullity, gap),
        GapSplit::Ambiguous { best_gap } => return Err(Error::IllConditioned { best_gap }),
    };
    Ok(LocalDimension {
        nullity,
        gauge: usize::from(has_scale_gauge(model)),
        singular_values: svd.singular_values,
        gap,
    })
}

/// Unknown vector of a solution on the given tracks.
pub fn unknowns_of(
    sys: &PolySystem,
    tracks: &CorrespondenceSet,
    s: &PolySolution,
) -> Result<DVector<f64>> {
    let unit_depths: Vec<f64> = s
        .depths
        .depths
        .iter()
        .zip(&tracks.views[0])
        .map(|(d, q)| d * q.0.norm())
        .collect();
    sys.pack(&s.deformation, &unit_depths)
}

/// How a witness solution was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum WitnessSource {
    /// Affine part replaced by another member of its essential-matrix
    /// family, nonlinear part kept.
    AffineFamily,
    /// Projection back onto the solution set from a step along the
    /// Jacobian nullspace at a base solution.
    Tangent,
}

/// A verified two-view solution and its construction.
#[derive(Debug, Clone, Serialize)]
pub struct WitnessSolution {
    pub solution: PolySolution,
    pub source: WitnessSource,
}

/// Family vectors for the affine-part replacement, scaled by `‖A₀‖`.
const FAMILY_DIRECTIONS: [[f64; 3]; 6] = [
    [0.3, 0.0, 0.0],
    [0.0, 0.3, 0.0],
    [0.0, 0.0, 0.3],
    [0.2, -0.2, 0.1],
    [-0.1, 0.2, 0.2],
    [0.1, 0.15, -0.25],
];

/// Distinct zero-residual solutions of the two-view system. First tries the
/// affine-part replacement `φ′ = ψ′_A + ψ` over the two-view family of
/// `ψ_A`; when fewer than `wanted` of those verify, adds solutions obtained
/// by projecting nullspace steps back onto the solution set.
pub fn two_view_insufficiency_witness(
    pairs: &CorrespondenceSet,
    model: &ModelSpec,
    wanted: usize,
    opts: &PolyOptions,
) -> Result<Vec<WitnessSolution>> {
    if pairs.n_views() != 2 {
        return Err(Error::InvalidInput(format!(
            "expected 2 views, got {}",
            pairs.n_views()
        )));
    }
    let report = solve_poly_views(
        pairs,
        model,
        &PolyOptions {
            restarts: opts.restarts.min(32),
            ..opts.clone()
        },
    )?;
    let base = report
        .solutions
        .first()
        .cloned()
        .ok_or(Error::NoConvergence {
            restarts: opts.restarts.min(32),
            best_residual: report.best_residual,
        })?;
    two_view_witness_from(pairs, model, &base, wanted, opts)
}

/// [`two_view_insufficiency_witness`] around a given base solution.
pub fn two_view_witness_from(
    pairs: &CorrespondenceSet,
    model: &ModelSpec,
    base: &PolySolution,
    wanted: usize,
    opts: &PolyOptions,
) -> Result<Vec<WitnessSolution>> {
    if pairs.n_views() != 2 {
        return Err(Error::InvalidInput(format!(
            "expected 2 views, got {}",
            pairs.n_views()
        )));
    }
    sample_solution_set(pairs, model, base, wanted, opts)
}

/// Up to `wanted` distinct verified solutions near `base` (itself included
/// when verified). With two views the affine-family replacement is tried
/// first; the rest come from nullspace steps projected back by LM. Finding
/// only `base` means the solution is locally isolated.
pub fn sample_solution_set(
    pairs: &CorrespondenceSet,
    model: &ModelSpec,
    base: &PolySolution,
    wanted: usize,
    opts: &PolyOptions,
) -> Result<Vec<WitnessSolution>> {
    let sys = PolySystem::new(model, pairs)?;
    let mut accepted: Vec<(Vec<f64>, WitnessSolution)> = Vec::new();
    let accept = |x: &DVector<f64>,
                  source: WitnessSource,
                  accepted: &mut Vec<(Vec<f64>, WitnessSolution)>| {
        let Some(res) = sys.verified(x, opts.verify_tol) else {
            return;
        };
        let sig = sys.signature(x);
        if accepted
            .iter()
            .any(|(s, _)| crate::solver::relative_distance(s, &sig) <= 1e-3)
        {
            return;
        }
        if let Ok(solution) = sys.solution(x, &pairs.views[0], res) {
            accepted.push((sig, WitnessSolution { solution, source }));
        }
    };
    let x_base = unknowns_of(&sys, pairs, base)?;
    accept(&x_base, WitnessSource::Tangent, &mut accepted);

    if pairs.n_views() == 2 {
        for x in affine_family_candidates(&sys, pairs, base) {
            accept(&x, WitnessSource::AffineFamily, &mut accepted);
        }
    }

    if accepted.len() < wanted {
        let (eq, scales) = equilibrate(&sys.jacobian(&x_base), 4);
        let svd = full_svd(&eq);
        let nullity = svd.nullity(1e-8);
        let basis = svd.trailing(nullity);
        let mut rng = restart_rng(opts.seed, usize::MAX / 2);
        for attempt in 0..(8 * wanted).max(16) {
            if accepted.len() >= wanted || nullity == 0 {
                break;
            }
            let c = DVector::from_fn(nullity, |_, _| rng.sample::<f64, _>(StandardNormal));
            let dir = (&basis * c).component_mul(&scales);
            let step =
                0.05 * (1 + attempt % 4) as f64 * x_base.norm() / dir.norm().max(f64::MIN_POSITIVE);
            let outcome = levenberg_marquardt(&sys, &x_base + dir * step, &opts.lm, &mut rng);
            accept(
                &DVector::from_vec(outcome.x),
                WitnessSource::Tangent,
                &mut accepted,
            );
        }
    }
    Ok(accepted.into_iter().map(|(_, w)| w).collect())
}

/// Candidates `φ′ = ψ′_A + ψ`: the affine part of `base` is replaced by
/// members of the family sharing its essential matrix, and depths are
/// re-triangulated from the images that `ψ_A` alone produces.
fn affine_family_candidates(
    sys: &PolySystem,
    pairs: &CorrespondenceSet,
    base: &PolySolution,
) -> Vec<DVector<f64>> {
    let (a, t) = base.deformation.affine_part();
    let psi_a = AffineDeformation {
        linear: a,
        translation: t,
    };
    let Ok(family) = decompose_essential(&EssentialMatrix::new(psi_a.essential())) else {
        return Vec::new();
    };
    let points: Vec<Vector3<f64>> = base
        .depths
        .points(&pairs.views[0])
        .iter()
        .map(|p| p.0)
        .collect();
    let affine_images: Option<Vec<ImagePoint>> = points
        .iter()
        .map(|p| ImagePoint::try_from_vec(psi_a.apply_vec(p)).ok())
        .collect();
    let Some(affine_images) = affine_images else {
        return Vec::new();
    };
    let Ok(affine_pairs) = CorrespondenceSet::new(
        vec![pairs.views[0].clone(), affine_images],
        0.0,
        "affine part",
    ) else {
        return Vec::new();
    };
    let scale = family.a0.norm();
    let fit = family.fit(&a);
    let mut out = Vec::new();
    for dir in FAMILY_DIRECTIONS {
        let member = family.member(fit.lambda, &(fit.v + Vector3::from(dir) * scale));
        let Ok(structure) = recover_structure(&member, &affine_pairs) else {
            continue;
        };
        let mut def = base.deformation.clone();
        let affine = PolynomialDeformation::from_affine(&member);
        for (m, e) in def.monomials().iter().enumerate() {
            if e.iter().sum::<u32>() <= 1 {
                let k = affine
                    .monomials()
                    .iter()
                    .position(|x| x == e)
                    .expect("degree-1 monomial");
                for c in 0..3 {
                    def.coefficients[c][m] = affine.coefficients[c][k];
                }
            }
        }
        let unit_depths: Vec<f64> = structure
            .depths
            .depths
            .iter()
            .zip(&pairs.views[0])
            .map(|(d, q)| d * q.0.norm())
            .collect();
        if let Ok(x) = sys.pack(&def, &unit_depths) {
            out.push(x);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{quadratic_map, repeated_deformation};
    use crate::geometry::ScenePoint;
    use crate::simulation::{default_scene, simulate, Deformation, Scene};
    use crate::solver::numeric_jacobian;
    use rand::SeedableRng;

    fn quadratic_tracks(n: usize, repeats: usize, seed: u64) -> (CorrespondenceSet, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<ScenePoint> = (0..n)
            .map(|_| {
                ScenePoint::new(
                    rng.random_range(0.2..1.0),
                    rng.random_range(0.2..1.0),
                    rng.random_range(0.5..1.5),
                )
            })
            .collect();
        let scene = Scene::new(points, "positive orthant");
        let tracks = simulate(
            &scene,
            &Deformation::Polynomial(quadratic_map()),
            repeats,
            0.0,
            &mut rng,
        )
        .unwrap();
        let depths = scene
            .points
            .iter()
            .zip(&tracks.views[0])
            .map(|(p, q)| p.0.norm() / q.0.norm())
            .collect();
        (tracks, depths)
    }

    fn truth(depths: &[f64]) -> PolySolution {
        PolySolution {
            deformation: quadratic_map(),
            depths: DepthAssignment::new(depths.to_vec()).unwrap(),
            residual: 0.0,
            n_solutions_found: 1,
        }
    }

    #[test]
    fn point_counts_and_gauges() {
        assert_eq!(min_points(&ModelSpec::full(2)), 10);
        assert_eq!(min_points(&ModelSpec::affine()), 4);
        assert_eq!(min_points(&crate::fixtures::sparse_cubic_model()), 3);
        assert!(has_scale_gauge(&ModelSpec::full(2)));
        assert!(has_output_scale_gauge(&ModelSpec::full(2)));
        assert!(has_scale_gauge(&ModelSpec::identity()));
        assert!(!has_output_scale_gauge(&ModelSpec::identity()));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let (tracks, depths) = quadratic_tracks(10, 2, 1);
        let sys = PolySystem::new(&ModelSpec::full(2), &tracks).unwrap();
        let x = unknowns_of(&sys, &tracks, &truth(&depths)).unwrap();
        let xp = &x + DVector::from_fn(x.len(), |i, _| 1e-2 * ((i * 7 % 5) as f64 - 2.0));
        let diff = (sys.jacobian(&xp) - numeric_jacobian(&sys, &xp, 1e-6)).amax();
        assert!(diff < 1e-7, "jacobian mismatch {diff:e}");
    }

    #[test]
    fn truth_is_an_isolated_solution_modulo_gauge() {
        let (tracks, depths) = quadratic_tracks(10, 2, 1);
        let sys = PolySystem::new(&ModelSpec::full(2), &tracks).unwrap();
        let x = unknowns_of(&sys, &tracks, &truth(&depths)).unwrap();
        assert!(sys.verified(&x, VERIFY_TOL).is_some());
        let dim = local_dimension(&tracks, &ModelSpec::full(2), &truth(&depths)).unwrap();
        assert_eq!((dim.nullity, dim.dimension()), (1, 0));
    }

    #[test]
    fn one_point_short_leaves_a_continuum() {
        let (tracks, depths) = quadratic_tracks(9, 2, 1);
        let dim = local_dimension(&tracks, &ModelSpec::full(2), &truth(&depths)).unwrap();
        assert!(dim.dimension() >= 1, "{dim:?}");
    }

    #[test]
    fn gauge_normalization_identifies_rescaled_scenes() {
        let (_, depths) = quadratic_tracks(10, 2, 1);
        let t = truth(&depths);
        let k = 3.7;
        let scaled = PolySolution {
            deformation: t.deformation.conjugated(k),
            depths: DepthAssignment::new(depths.iter().map(|d| d * k).collect()).unwrap(),
            ..t.clone()
        };
        let model = ModelSpec::full(2);
        let (a, b) = (t.gauge_normalized(&model), scaled.gauge_normalized(&model));
        assert!(a.deformation.max_abs_diff(&b.deformation) < 1e-12);
        assert!((a.depths.depths[3] - b.depths.depths[3]).abs() < 1e-12);
    }

    #[test]
    fn too_few_points_is_rejected() {
        let (tracks, _) = quadratic_tracks(9, 2, 1);
        let err = solve_poly_three_views(&tracks, &ModelSpec::full(2), &PolyOptions::default())
            .unwrap_err();
        assert!(matches!(
            err,
            Error::InsufficientPoints { needed: 10, got: 9 }
        ));
    }

    #[test]
    fn affine_two_view_witness_comes_from_the_family() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let scene = default_scene(10, &mut rng);
        let def = PolynomialDeformation::from_affine(&repeated_deformation());
        let pairs = simulate(&scene, &Deformation::Polynomial(def), 1, 0.0, &mut rng).unwrap();
        let w = two_view_insufficiency_witness(
            &pairs,
            &ModelSpec::affine(),
            4,
            &PolyOptions::default(),
        )
        .unwrap();
        let family = w
            .iter()
            .filter(|w| w.source == WitnessSource::AffineFamily)
            .count();
        assert!(
            w.len() >= 4 && family >= 3,
            "{} solutions, {family} from the family",
            w.len()
        );
        assert!(w.iter().all(|w| w.solution.residual < VERIFY_TOL));
    }

    #[test]
    fn quadratic_two_view_witness_has_distinct_solutions() {
        let (tracks, depths) = quadratic_tracks(10, 1, 4);
        let w = two_view_witness_from(
            &tracks,
            &ModelSpec::full(2),
            &truth(&depths),
            4,
            &PolyOptions::default(),
        )
        .unwrap();
        assert!(w.len() >= 4);
        let sys = PolySystem::new(&ModelSpec::full(2), &tracks).unwrap();
        let sigs: Vec<Vec<f64>> = w
            .iter()
            .map(|w| sys.signature(&unknowns_of(&sys, &tracks, &w.solution).unwrap()))
            .collect();
        for i in 0..sigs.len() {
            for j in 0..i {
                assert!(crate::solver::relative_distance(&sigs[i], &sigs[j]) > 1e-3);
            }
        }
    }
}
