//! Matching constraints between two views of a polynomially deforming scene:
//! numerical implicitization of the constraint's monomial support, linear
//! fitting of its coefficients, and model selection.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{monomials_up_to, Exponents, PolynomialDeformation};
use crate::linalg::{equilibrate, full_svd};
use crate::simulation::CorrespondenceSet;

/// Relative singular value at or below which a sample-matrix direction is
/// counted as null.
pub const NULL_TOL: f64 = 1e-10;

/// Normalized coefficient magnitude below which a monomial is dropped from
/// the discovered support.
pub const SUPPORT_TOL: f64 = 1e-9;

/// Depth magnitudes below this are resampled.
pub const MIN_DEPTH: f64 = 1e-3;

/// Default upper bound on a fit residual for a model to be acceptable.
pub const ACCEPT_TOL: f64 = 1e-6;

/// Default floor applied to fit residuals before scoring, so that exact fits
/// tie and the support penalty decides.
pub const RESIDUAL_FLOOR: f64 = 1e-12;

/// A coefficient of the model: free parameter or fixed value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Coefficient {
    Free,
    Fixed(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawCoefficient {
    Tag(String),
    Value(f64),
}

impl Serialize for Coefficient {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Coefficient::Free => RawCoefficient::Tag("free".into()),
            Coefficient::Fixed(v) => RawCoefficient::Value(*v),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Coefficient {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match RawCoefficient::deserialize(d)? {
            RawCoefficient::Tag(t) if t == "free" => Ok(Coefficient::Free),
            RawCoefficient::Tag(t) => Err(serde::de::Error::custom(format!(
                "unknown coefficient tag {t:?}"
            ))),
            RawCoefficient::Value(v) => Ok(Coefficient::Fixed(v)),
        }
    }
}

/// One entry of a model pattern: `(component, exponents, coefficient)`.
pub type PatternEntry = (usize, Exponents, Coefficient);

/// A family of polynomial deformations: every coefficient not listed in the
/// pattern is zero; listed ones are free parameters or fixed values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel", into = "RawModel")]
pub struct ModelSpec {
    pub degree: u32,
    pub pattern: Vec<PatternEntry>,
}

#[derive(Serialize, Deserialize)]
struct RawModel {
    degree: u32,
    pattern: Vec<PatternEntry>,
}

impl TryFrom<RawModel> for ModelSpec {
    type Error = Error;
    fn try_from(raw: RawModel) -> Result<Self> {
        ModelSpec::new(raw.degree, raw.pattern)
    }
}

impl From<ModelSpec> for RawModel {
    fn from(m: ModelSpec) -> Self {
        RawModel {
            degree: m.degree,
            pattern: m.pattern,
        }
    }
}

impl ModelSpec {
    pub fn new(degree: u32, pattern: Vec<PatternEntry>) -> Result<Self> {
        if degree == 0 {
            return Err(Error::InvalidInput(
                "model degree must be at least 1".into(),
            ));
        }
        let mut seen = BTreeSet::new();
        for (c, e, _) in &pattern {
            if *c > 2 {
                return Err(Error::InvalidInput(format!("component {c} out of range")));
            }
            if e.iter().sum::<u32>() > degree {
                return Err(Error::InvalidInput(format!(
                    "monomial {e:?} exceeds degree {degree}"
                )));
            }
            if !seen.insert((*c, *e)) {
                return Err(Error::InvalidInput(format!(
                    "duplicate entry for component {c}, monomial {e:?}"
                )));
            }
        }
        Ok(Self { degree, pattern })
    }

    /// Every coefficient of degree `≤ d` free.
    pub fn full(degree: u32) -> Self {
        let pattern = (0..3)
            .flat_map(|c| {
                monomials_up_to(degree)
                    .into_iter()
                    .map(move |e| (c, e, Coefficient::Free))
            })
            .collect();
        Self { degree, pattern }
    }

    pub fn affine() -> Self {
        Self::full(1)
    }

    /// The identity map, with no free parameters.
    pub fn identity() -> Self {
        let pattern = (0..3)
            .map(|c| {
                let mut e = [0; 3];
                e[c] = 1;
                (c, e, Coefficient::Fixed(1.0))
            })
            .collect();
        Self { degree: 1, pattern }
    }

    /// `φ₁ = a_x X + b_x Y + c_x Z + d_x`, `φ₂ = a_y Y² + b_y X² + c_y Z²`,
    /// `φ₃ = a_z Z³`, with parameters in the order
    /// `(a_x, b_x, c_x, d_x, a_y, b_y, c_y, a_z)`.
    pub fn sparse_cubic_example() -> Self {
        let f = Coefficient::Free;
        let pattern = vec![
            (0, [1, 0, 0], f),
            (0, [0, 1, 0], f),
            (0, [0, 0, 1], f),
            (0, [0, 0, 0], f),
            (1, [0, 2, 0], f),
            (1, [2, 0, 0], f),
            (1, [0, 0, 2], f),
            (2, [0, 0, 3], f),
        ];
        Self { degree: 3, pattern }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            location: format!("line {}", e.line()),
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    /// Number of free parameters `p`.
    pub fn parameter_count(&self) -> usize {
        self.pattern
            .iter()
            .filter(|(_, _, c)| matches!(c, Coefficient::Free))
            .count()
    }

    /// The deformation with the given free-parameter values, in pattern order.
    pub fn deformation(&self, params: &[f64]) -> Result<PolynomialDeformation> {
        if params.len() != self.parameter_count() {
            return Err(Error::InvalidInput(format!(
                "model has {} parameters, got {}",
                self.parameter_count(),
                params.len()
            )));
        }
        let mut def = PolynomialDeformation::zero(self.degree);
        let mut free = params.iter();
        for (c, e, coef) in &self.pattern {
            let value = match coef {
                Coefficient::Free => *free.next().expect("counted"),
                Coefficient::Fixed(v) => *v,
            };
            def.set(*c, *e, value)?;
        }
        Ok(def)
    }

    /// Free-parameter values of a deformation, in pattern order.
    pub fn parameters_of(&self, def: &PolynomialDeformation) -> Result<Vec<f64>> {
        self.pattern
            .iter()
            .filter(|(_, _, c)| matches!(c, Coefficient::Free))
            .map(|(c, e, _)| def.get(*c, *e))
            .collect()
    }
}

/// Exponents of `q_x^a q_y^b q_x′^c q_y′^d`.
pub type ImageMonomial = [u32; 4];

/// Separate degree bounds in the first-view and second-view coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bidegree {
    pub q: u32,
    pub qp: u32,
}

impl Bidegree {
    pub fn new(q: u32, qp: u32) -> Self {
        Self { q, qp }
    }

    pub fn monomial_count(&self) -> usize {
        let (a, b) = (self.q as usize, self.qp as usize);
        (a + 1) * (a + 2) / 2 * ((b + 1) * (b + 2) / 2)
    }
}

/// Canonical monomial order: by degree in `q`, then in `q′`, then by
/// decreasing exponents of `q_x, q_y, q_x′`.
pub fn canonical_cmp(a: &ImageMonomial, b: &ImageMonomial) -> Ordering {
    let key = |m: &ImageMonomial| (m[0] + m[1], m[2] + m[3]);
    key(a).cmp(&key(b)).then_with(|| b.cmp(a))
}

/// All image monomials within the bidegree, in canonical order.
pub fn image_monomials(bound: Bidegree) -> Vec<ImageMonomial> {
    let mut out = Vec::with_capacity(bound.monomial_count());
    for dq in 0..=bound.q {
        for dqp in 0..=bound.qp {
            for a in 0..=dq {
                for c in 0..=dqp {
                    out.push([a, dq - a, c, dqp - c]);
                }
            }
        }
    }
    out.sort_by(canonical_cmp);
    out
}

/// Renders a monomial as `qx^a qy^b qx'^c qy'^d`.
pub fn format_monomial(m: &ImageMonomial) -> String {
    let names = ["qx", "qy", "qx'", "qy'"];
    let parts: Vec<String> = m
        .iter()
        .zip(names)
        .filter(|(e, _)| **e > 0)
        .map(|(e, n)| {
            if *e == 1 {
                n.to_string()
            } else {
                format!("{n}^{e}")
            }
        })
        .collect();
    if parts.is_empty() {
        "1".into()
    } else {
        parts.join(" ")
    }
}

fn eval_row(monomials: &[ImageMonomial], v: &[f64; 4]) -> Vec<f64> {
    let max = monomials
        .iter()
        .flat_map(|m| m.iter().copied())
        .max()
        .unwrap_or(0) as usize;
    let powers: Vec<Vec<f64>> = v
        .iter()
        .map(|x| {
            let mut p = vec![1.0; max + 1];
            for k in 1..=max {
                p[k] = p[k - 1] * x;
            }
            p
        })
        .collect();
    monomials
        .iter()
        .map(|m| (0..4).map(|k| powers[k][m[k] as usize]).product())
        .collect()
}

fn sample_matrix(monomials: &[ImageMonomial], samples: &[[f64; 4]]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(samples.len(), monomials.len());
    for (r, s) in samples.iter().enumerate() {
        for (c, v) in eval_row(monomials, s).into_iter().enumerate() {
            m[(r, c)] = v;
        }
    }
    m
}

/// Inhomogeneous coordinates `(q_x, q_y, q_x′, q_y′)` of each pair.
pub fn inhomogeneous_pairs(pairs: &CorrespondenceSet) -> Result<Vec<[f64; 4]>> {
    if pairs.n_views() != 2 {
        return Err(Error::InvalidInput(format!(
            "expected 2 views, got {}",
            pairs.n_views()
        )));
    }
    (0..pairs.len())
        .map(|i| {
            let (q, qp) = (pairs.views[0][i].0, pairs.views[1][i].0);
            if q.z.abs() <= 1e-12 * q.norm() || qp.z.abs() <= 1e-12 * qp.norm() {
                return Err(Error::InvalidInput(format!(
                    "pair {i} has a point at infinity"
                )));
            }
            Ok([q.x / q.z, q.y / q.z, qp.x / qp.z, qp.y / qp.z])
        })
        .collect()
}

/// Random matches `(q, q′)` from one deformation: unit-Gaussian image
/// coordinates and depths, with `|α| < MIN_DEPTH` and near-infinite images
/// resampled.
pub fn sample_matches(
    def: &PolynomialDeformation,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<[f64; 4]> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let alpha: f64 = rng.sample(StandardNormal);
        if alpha.abs() < MIN_DEPTH {
            continue;
        }
        let (x, y): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        let image = def.eval(&(Vector3::new(x, y, 1.0) * alpha));
        if image.z.abs() <= 1e-3 * image.norm() || !image.iter().all(|v| v.is_finite()) {
            continue;
        }
        out.push([x, y, image.x / image.z, image.y / image.z]);
    }
    out
}

/// Two-view correspondence set from inhomogeneous pairs.
pub fn matches_to_pairs(samples: &[[f64; 4]], noise_sigma: f64) -> Result<CorrespondenceSet> {
    let view = |o: usize| {
        samples
            .iter()
            .map(|s| crate::geometry::ImagePoint::new(s[o], s[o + 1], 1.0))
            .collect::<Result<Vec<_>>>()
    };
    CorrespondenceSet::new(vec![view(0)?, view(2)?], noise_sigma, "matches")
}

/// Free parameters drawn from a unit Gaussian.
pub fn sample_parameters(model: &ModelSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..model.parameter_count())
        .map(|_| rng.sample(StandardNormal))
        .collect()
}

/// Equilibrated nullspace of a sample matrix: nullity at [`NULL_TOL`] and
/// the trailing null vectors mapped back to the original columns.
struct NullSpace {
    nullity: usize,
    vectors: DMatrix<f64>,
    singular_values: Vec<f64>,
}

fn null_space(m: &DMatrix<f64>) -> NullSpace {
    let (eq, scales) = equilibrate(m, 4);
    let svd = full_svd(&eq);
    let nullity = svd.nullity(NULL_TOL);
    let mut vectors = svd.trailing(nullity);
    for mut col in vectors.column_iter_mut() {
        col.component_mul_assign(&scales);
    }
    NullSpace {
        nullity,
        vectors,
        singular_values: svd.singular_values,
    }
}

/// Result of numerical implicitization.
#[derive(Debug, Clone, Serialize)]
pub struct Implicitization {
    /// The smallest bidegree with a nonzero nullspace.
    pub bidegree: Bidegree,
    pub support: Vec<ImageMonomial>,
    /// Unit-norm coefficients on `support` for the first sampled deformation.
    pub coefficients: Vec<f64>,
    /// Ratio between the smallest kept and largest null singular values.
    pub gap: f64,
}

/// Options for [`discover_support`].
#[derive(Debug, Clone, Copy)]
pub struct DiscoverOptions {
    /// Samples per deformation; must exceed the column count of the bound.
    pub n_samples: usize,
    /// Independent deformations drawn; the support is the union over draws.
    pub draws: usize,
    pub seed: u64,
}

impl DiscoverOptions {
    /// Twice the column count of the bound, two draws.
    pub fn for_bound(bound: Bidegree) -> Self {
        Self {
            n_samples: 2 * bound.monomial_count(),
            draws: 2,
            seed: 0,
        }
    }
}

/// Finds the support of the matching constraint of `model` by sampling
/// matches from random model instances and extracting the common nullspace
/// of the monomial-evaluation matrix. Bidegrees up to `bound` are tried in
/// order of increasing monomial count; the first with a nonzero nullspace
/// decides.
pub fn discover_support(
    model: &ModelSpec,
    bound: Bidegree,
    opts: &DiscoverOptions,
) -> Result<Implicitization> {
    let needed = bound.monomial_count() + 10;
    if opts.n_samples < needed {
        return Err(Error::InsufficientPoints {
            needed,
            got: opts.n_samples,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let draws: Vec<Vec<[f64; 4]>> = (0..opts.draws.max(1))
        .map(|_| {
            let params = sample_parameters(model, &mut rng);
            let def = model.deformation(&params).expect("parameter count matches");
            sample_matches(&def, opts.n_samples, &mut rng)
        })
        .collect();

    let mut bidegrees: Vec<Bidegree> = (0..=bound.q)
        .flat_map(|a| (0..=bound.qp).map(move |b| Bidegree::new(a, b)))
        .collect();
    bidegrees.sort_by_key(|b| (b.monomial_count(), b.q + b.qp, b.q));

    for bidegree in bidegrees {
        let monomials = image_monomials(bidegree);
        let spaces: Vec<NullSpace> = draws
            .iter()
            .map(|s| null_space(&sample_matrix(&monomials, s)))
            .collect();
        let nullity = spaces.iter().map(|s| s.nullity).max().unwrap_or(0);
        if nullity == 0 {
            continue;
        }
        if nullity > 1 {
            return Err(Error::NonUniqueConstraint { dim: nullity });
        }
        if spaces.iter().any(|s| s.nullity != 1) {
            return Err(Error::IllConditioned {
                best_gap: gap_of(&spaces[0].singular_values, 1),
            });
        }
        let normalized: Vec<DVector<f64>> = spaces
            .iter()
            .map(|s| {
                let v = s.vectors.column(0).into_owned();
                v.clone() / v.amax()
            })
            .collect();
        let support_idx: Vec<usize> = (0..monomials.len())
            .filter(|&k| normalized.iter().any(|v| v[k].abs() >= SUPPORT_TOL))
            .collect();
        let first = &normalized[0];
        let mut coefficients: Vec<f64> = support_idx.iter().map(|&k| first[k]).collect();
        let norm = coefficients.iter().map(|c| c * c).sum::<f64>().sqrt();
        coefficients.iter_mut().for_each(|c| *c /= norm);
        canonical_sign(&mut coefficients);
        let gap = spaces
            .iter()
            .map(|s| gap_of(&s.singular_values, 1))
            .fold(f64::INFINITY, f64::min);
        return Ok(Implicitization {
            bidegree,
            support: support_idx.iter().map(|&k| monomials[k]).collect(),
            coefficients,
            gap,
        });
    }
    Err(Error::NoConstraint {
        deg_q: bound.q,
        deg_qp: bound.qp,
    })
}

fn gap_of(singular_values: &[f64], nullity: usize) -> f64 {
    let n = singular_values.len();
    if nullity == 0 || nullity >= n {
        return f64::INFINITY;
    }
    singular_values[n - nullity - 1] / singular_values[n - nullity].max(f64::MIN_POSITIVE)
}

/// Flips the sign so that the largest-magnitude entry is positive.
fn canonical_sign(c: &mut [f64]) {
    let k = c
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map_or(0, |(i, _)| i);
    if c.get(k).is_some_and(|v| *v < 0.0) {
        c.iter_mut().for_each(|v| *v = -*v);
    }
}

/// A fitted matching constraint `Σ cₖ mₖ(q, q′) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchingConstraint {
    pub support: Vec<ImageMonomial>,
    /// Unit norm, largest-magnitude entry positive.
    pub coefficients: Vec<f64>,
    /// `σ_min / σ_max` of the equilibrated evaluation matrix.
    pub fit_residual: f64,
    /// `σ_{k−1} / σ_k`: separation of the fitted direction from the rest.
    pub rank_gap: f64,
}

impl MatchingConstraint {
    /// Value of the constraint polynomial at one pair, with the monomial
    /// vector normalized to unit length.
    pub fn evaluate(&self, pair: &[f64; 4]) -> f64 {
        let row = eval_row(&self.support, pair);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter()
            .zip(&self.coefficients)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / norm.max(f64::MIN_POSITIVE)
    }
}

/// Fits the constraint coefficients on a given support from matches.
pub fn fit_constraint(
    support: &[ImageMonomial],
    pairs: &CorrespondenceSet,
) -> Result<MatchingConstraint> {
    let data = inhomogeneous_pairs(pairs)?;
    fit_constraint_to(support, &data)
}

/// [`fit_constraint`] on raw inhomogeneous pairs.
pub fn fit_constraint_to(
    support: &[ImageMonomial],
    data: &[[f64; 4]],
) -> Result<MatchingConstraint> {
    let k = support.len();
    if k == 0 {
        return Err(Error::InvalidInput("empty support".into()));
    }
    if data.len() < k {
        return Err(Error::InsufficientPoints {
            needed: k,
            got: data.len(),
        });
    }
    let mut support = support.to_vec();
    support.sort_by(canonical_cmp);
    let (eq, scales) = equilibrate(&sample_matrix(&support, data), 4);
    let svd = full_svd(&eq);
    let s = &svd.singular_values;
    let s1 = s[0];
    if k >= 2 && s[k - 2] / s1 <= NULL_TOL {
        let rank = s.iter().filter(|v| **v / s1 > NULL_TOL).count();
        return Err(Error::RankDeficient {
            rank,
            expected: k - 1,
        });
    }
    let v = svd.smallest().component_mul(&scales);
    let mut coefficients: Vec<f64> = (v.clone() / v.norm()).iter().copied().collect();
    canonical_sign(&mut coefficients);
    Ok(MatchingConstraint {
        support,
        coefficients,
        fit_residual: s[k - 1] / s1,
        rank_gap: if k >= 2 {
            s[k - 2] / s[k - 1].max(f64::MIN_POSITIVE)
        } else {
            f64::INFINITY
        },
    })
}

/// Options for [`select_model`].
#[derive(Debug, Clone, Copy)]
pub struct SelectOptions {
    /// Penalty per support monomial.
    pub kappa: f64,
    /// Residuals above this reject a candidate.
    pub accept_tol: f64,
    /// Residuals are clamped from below to this value before scoring.
    pub residual_floor: f64,
    /// Implicitization bound per candidate.
    pub bound: Bidegree,
    pub seed: u64,
}

impl Default for SelectOptions {
    fn default() -> Self {
        Self {
            kappa: 2.0,
            accept_tol: ACCEPT_TOL,
            residual_floor: RESIDUAL_FLOOR,
            bound: Bidegree::new(6, 3),
            seed: 0,
        }
    }
}

/// Per-candidate outcome of model selection.
#[derive(Debug, Clone, Serialize)]
pub struct CandidateScore {
    pub index: usize,
    pub support_size: Option<usize>,
    pub fit_residual: Option<f64>,
    pub rank_gap: Option<f64>,
    /// `n · ln(max(r, floor)²) + κ·|support|`.
    pub criterion: Option<f64>,
    pub accepted: bool,
    /// Why the candidate was rejected, if it was.
    pub note: Option<String>,
}

/// Scores for every candidate and the index of the selected model.
#[derive(Debug, Clone, Serialize)]
pub struct ModelVerdict {
    pub candidates: Vec<CandidateScore>,
    pub selected: usize,
}

/// Fits each candidate's matching constraint to the pairs and selects the
/// accepted candidate with the lowest information criterion.
pub fn select_model(
    pairs: &CorrespondenceSet,
    candidates: &[ModelSpec],
    opts: &SelectOptions,
) -> Result<ModelVerdict> {
    let data = inhomogeneous_pairs(pairs)?;
    let n = data.len() as f64;
    let mut scores = Vec::with_capacity(candidates.len());
    for (index, model) in candidates.iter().enumerate() {
        let mut score = CandidateScore {
            index,
            support_size: None,
            fit_residual: None,
            rank_gap: None,
            criterion: None,
            accepted: false,
            note: None,
        };
        let discovered = DiscoverOptions {
            seed: opts.seed,
            ..DiscoverOptions::for_bound(opts.bound)
        };
        let support = match discover_support(model, opts.bound, &discovered) {
            Ok(imp) => imp.support,
            Err(e) => {
                score.note = Some(e.to_string());
                scores.push(score);
                continue;
            }
        };
        score.support_size = Some(support.len());
        match fit_constraint_to(&support, &data) {
            Ok(fit) => {
                let r = fit.fit_residual.max(opts.residual_floor);
                score.fit_residual = Some(fit.fit_residual);
                score.rank_gap = Some(fit.rank_gap);
                score.criterion = Some(n * (r * r).ln() + opts.kappa * support.len() as f64);
                score.accepted = fit.fit_residual <= opts.accept_tol;
                if !score.accepted {
                    score.note = Some(format!(
                        "fit residual {:e} exceeds {:e}",
                        fit.fit_residual, opts.accept_tol
                    ));
                }
            }
            Err(e) => score.note = Some(e.to_string()),
        }
        scores.push(score);
    }
    let selected = scores
        .iter()
        .filter(|s| s.accepted)
        .min_by(|a, b| {
            a.criterion
                .unwrap_or(f64::INFINITY)
                .total_cmp(&b.criterion.unwrap_or(f64::INFINITY))
        })
        .map(|s| s.index)
        .ok_or(Error::AllRejected)?;
    Ok(ModelVerdict {
        candidates: scores,
        selected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{sparse_cubic_constraint, sparse_cubic_model};
    use crate::linalg::cosine_distance;

    fn sparse_data(params: &[f64; 8], n: usize, seed: u64) -> Vec<[f64; 4]> {
        let def = sparse_cubic_model().deformation(params).unwrap();
        sample_matches(&def, n, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    const PARAMS: [f64; 8] = [0.7, -1.2, 0.4, 0.9, 1.1, -0.6, 0.8, 1.3];

    #[test]
    fn sparse_example_support_has_twenty_terms() {
        let bound = Bidegree::new(6, 3);
        let imp = discover_support(
            &sparse_cubic_model(),
            bound,
            &DiscoverOptions::for_bound(bound),
        )
        .unwrap();
        assert_eq!(imp.bidegree, bound);
        let mut expected: Vec<ImageMonomial> = sparse_cubic_constraint(&PARAMS)
            .into_iter()
            .map(|(m, _)| m)
            .collect();
        expected.sort_by(canonical_cmp);
        assert_eq!(imp.support, expected);
        assert!(imp.gap > 1e6);
    }

    #[test]
    fn fitted_coefficients_match_closed_form() {
        let reference = sparse_cubic_constraint(&PARAMS);
        let support: Vec<ImageMonomial> = reference.iter().map(|(m, _)| *m).collect();
        let fit = fit_constraint_to(&support, &sparse_data(&PARAMS, 20, 3)).unwrap();
        let expected = DVector::from_iterator(
            fit.support.len(),
            fit.support
                .iter()
                .map(|m| reference.iter().find(|(r, _)| r == m).unwrap().1),
        );
        let got = DVector::from_vec(fit.coefficients.clone());
        assert!(cosine_distance(&got, &expected) < 1e-8);
        assert!(fit.fit_residual < 1e-10);
    }

    #[test]
    fn nineteen_matches_are_insufficient() {
        let support: Vec<ImageMonomial> = sparse_cubic_constraint(&PARAMS)
            .into_iter()
            .map(|(m, _)| m)
            .collect();
        assert!(matches!(
            fit_constraint_to(&support, &sparse_data(&PARAMS, 19, 3)),
            Err(Error::InsufficientPoints {
                needed: 20,
                got: 19
            })
        ));
    }

    #[test]
    fn fitted_constraint_holds_on_held_out_matches() {
        let support: Vec<ImageMonomial> = sparse_cubic_constraint(&PARAMS)
            .into_iter()
            .map(|(m, _)| m)
            .collect();
        let fit = fit_constraint_to(&support, &sparse_data(&PARAMS, 40, 1)).unwrap();
        for pair in sparse_data(&PARAMS, 100, 2) {
            assert!(fit.evaluate(&pair).abs() < 1e-10);
        }
    }

    #[test]
    fn discovered_support_is_minimal() {
        let support: Vec<ImageMonomial> = sparse_cubic_constraint(&PARAMS)
            .into_iter()
            .map(|(m, _)| m)
            .collect();
        let data = sparse_data(&PARAMS, 60, 4);
        for k in 0..support.len() {
            let mut reduced = support.clone();
            reduced.remove(k);
            let fit = fit_constraint_to(&reduced, &data).unwrap();
            assert!(
                fit.fit_residual > 1e-8,
                "monomial {k} removable: {:e}",
                fit.fit_residual
            );
        }
    }

    #[test]
    fn affine_model_gives_the_essential_constraint() {
        let bound = Bidegree::new(3, 3);
        let imp = discover_support(
            &ModelSpec::affine(),
            bound,
            &DiscoverOptions::for_bound(bound),
        )
        .unwrap();
        assert_eq!(imp.bidegree, Bidegree::new(1, 1));
        assert_eq!(imp.support.len(), 9);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let def = crate::simulation::random_affine(&mut rng, 1.0);
        let data = sample_matches(&PolynomialDeformation::from_affine(&def), 30, &mut rng);
        let fit = fit_constraint_to(&imp.support, &data).unwrap();
        // Coefficient of q′_r q_c is E_rc, with the third coordinates equal to 1.
        let e = nalgebra::Matrix3::from_fn(|r, c| {
            let mut m = [0u32; 4];
            if c < 2 {
                m[c] = 1;
            }
            if r < 2 {
                m[2 + r] = 1;
            }
            fit.coefficients[fit.support.iter().position(|x| *x == m).unwrap()]
        });
        assert_eq!(e.svd(false, false).rank(1e-9), 2);
        assert!(crate::linalg::matrix_angular_distance(&e, &def.essential()) < 1e-10);
    }

    #[test]
    fn identity_model_has_no_single_constraint() {
        let bound = Bidegree::new(2, 2);
        let err = discover_support(
            &ModelSpec::identity(),
            bound,
            &DiscoverOptions::for_bound(bound),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonUniqueConstraint { dim } if dim > 1));
    }

    #[test]
    fn bound_below_constraint_degree_finds_nothing() {
        let bound = Bidegree::new(5, 3);
        let err = discover_support(
            &sparse_cubic_model(),
            bound,
            &DiscoverOptions::for_bound(bound),
        )
        .unwrap_err();
        assert!(matches!(
            err,
            Error::NoConstraint {
                deg_q: 5,
                deg_qp: 3
            }
        ));
    }

    #[test]
    fn other_model_data_does_not_fit() {
        let support: Vec<ImageMonomial> = sparse_cubic_constraint(&PARAMS)
            .into_iter()
            .map(|(m, _)| m)
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let quad = ModelSpec::full(2)
            .deformation(&sample_parameters(&ModelSpec::full(2), &mut rng))
            .unwrap();
        let data = sample_matches(&quad, 40, &mut rng);
        assert!(fit_constraint_to(&support, &data).unwrap().fit_residual > ACCEPT_TOL);
    }

    #[test]
    fn model_json_round_trips() {
        let m = ModelSpec::new(
            2,
            vec![
                (0, [1, 0, 0], Coefficient::Free),
                (2, [0, 0, 2], Coefficient::Fixed(0.25)),
            ],
        )
        .unwrap();
        let back = ModelSpec::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.parameter_count(), 1);
        assert!(
            ModelSpec::from_json(r#"{"degree": 1, "pattern": [[0, [2, 0, 0], "free"]]}"#).is_err()
        );
        assert!(
            ModelSpec::from_json(r#"{"degree": 1, "pattern": [[0, [1, 0, 0], "maybe"]]}"#).is_err()
        );
    }

    #[test]
    fn selection_prefers_the_generating_model() {
        let candidates = [
            ModelSpec::affine(),
            sparse_cubic_model(),
            ModelSpec::full(2),
        ];
        let pairs = matches_to_pairs(&sparse_data(&PARAMS, 120, 6), 0.0).unwrap();
        let verdict = select_model(&pairs, &candidates, &SelectOptions::default()).unwrap();
        assert_eq!(verdict.selected, 1);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let def = crate::simulation::random_affine(&mut rng, 1.0);
        let data = sample_matches(&PolynomialDeformation::from_affine(&def), 120, &mut rng);
        let verdict = select_model(
            &matches_to_pairs(&data, 0.0).unwrap(),
            &candidates,
            &SelectOptions::default(),
        )
        .unwrap();
        assert_eq!(verdict.selected, 0);
        let quadratic = &verdict.candidates[2];
        assert!(!quadratic.accepted);
        assert!(quadratic
            .note
            .as_deref()
            .unwrap()
            .contains("rank deficient"));
    }

    #[test]
    fn pure_noise_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let noise: Vec<[f64; 4]> = (0..120)
            .map(|_| [0; 4].map(|_: i32| rng.sample(StandardNormal)))
            .collect();
        let candidates = [
            ModelSpec::affine(),
            sparse_cubic_model(),
            ModelSpec::full(2),
        ];
        let err = select_model(
            &matches_to_pairs(&noise, 0.0).unwrap(),
            &candidates,
            &SelectOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::AllRejected));
    }
}
