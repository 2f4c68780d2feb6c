//! Core domain types: homogeneous points, affine and polynomial deformations,
//! and projection through the canonical calibrated camera `[I;0]`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Angular tolerance (1 - |cos|) under which two image points are equal.
pub const IMAGE_EQ_TOL: f64 = 1e-9;

/// A finite scene point `(X, Y, Z, 1)`, stored by its affine part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenePoint(pub Vector3<f64>);

impl ScenePoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self(Vector3::new(x, y, z))
    }

    /// Affine coordinates `(X, Y, Z)`.
    pub fn xyz(&self) -> &Vector3<f64> {
        &self.0
    }

    /// Full homogeneous 4-vector with last coordinate 1.
    pub fn homogeneous(&self) -> [f64; 4] {
        [self.0.x, self.0.y, self.0.z, 1.0]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }
}

impl From<Vector3<f64>> for ScenePoint {
    fn from(v: Vector3<f64>) -> Self {
        Self(v)
    }
}

/// A homogeneous image point, defined up to a nonzero scale.
///
/// Coordinates are kept as given; comparisons are projective.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ImagePoint(pub Vector3<f64>);

impl ImagePoint {
    pub fn new(x: f64, y: f64, w: f64) -> Result<Self> {
        Self::try_from_vec(Vector3::new(x, y, w))
    }

    pub fn try_from_vec(v: Vector3<f64>) -> Result<Self> {
        if !v.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidInput(
                "image point has non-finite coordinates".into(),
            ));
        }
        if v.norm() == 0.0 {
            return Err(Error::ZeroProjection);
        }
        Ok(Self(v))
    }

    pub fn coords(&self) -> &Vector3<f64> {
        &self.0
    }

    /// Unit-norm representative.
    pub fn unit(&self) -> Vector3<f64> {
        self.0.normalize()
    }

    /// `1 - |cos θ|` between the two rays.
    pub fn angular_distance(&self, other: &ImagePoint) -> f64 {
        angular_distance(&self.0, &other.0)
    }

    /// Projective equality up to [`IMAGE_EQ_TOL`].
    pub fn same_ray(&self, other: &ImagePoint) -> bool {
        self.angular_distance(other) < IMAGE_EQ_TOL
    }
}

/// `1 - |cos θ|` between two nonzero 3-vectors.
pub fn angular_distance(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let c = a.dot(b) / (a.norm() * b.norm());
    (1.0 - c.abs()).max(0.0)
}

/// Cross-product matrix `[t]×` with `[t]× x = t × x`.
pub fn skew(t: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

/// Invertible affine map `P ↦ A P + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineDeformation {
    pub linear: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

/// Relative determinant threshold under which a linear part counts as singular.
const SINGULAR_REL_TOL: f64 = 1e-12;

impl AffineDeformation {
    /// Builds a deformation, rejecting a singular linear part.
    pub fn new(linear: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let scale = linear.norm().powi(3).max(f64::MIN_POSITIVE);
        if !linear
            .iter()
            .chain(translation.iter())
            .all(|c| c.is_finite())
            || linear.determinant().abs() <= SINGULAR_REL_TOL * scale
        {
            return Err(Error::SingularDeformation);
        }
        Ok(Self {
            linear,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            linear: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn translation_only(t: Vector3<f64>) -> Self {
        Self {
            linear: Matrix3::identity(),
            translation: t,
        }
    }

    /// `(λA, λt)`: the same images, a different scene scale.
    pub fn scaled(&self, lambda: f64) -> Self {
        Self {
            linear: self.linear * lambda,
            translation: self.translation * lambda,
        }
    }

    pub fn apply_vec(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.linear * p + self.translation
    }

    /// The essential matrix `[t]× A` of this deformation.
    pub fn essential(&self) -> Matrix3<f64> {
        skew(&self.translation) * self.linear
    }

    /// Largest absolute entry difference, for test comparisons.
    pub fn max_abs_diff(&self, other: &AffineDeformation) -> f64 {
        (self.linear - other.linear)
            .abs()
            .max()
            .max((self.translation - other.translation).abs().max())
    }

    /// Relative error `‖Δ‖ / ‖self‖` over the stacked `(A, t)` entries.
    pub fn relative_error(&self, truth: &AffineDeformation) -> f64 {
        let num = ((self.linear - truth.linear).norm_squared()
            + (self.translation - truth.translation).norm_squared())
        .sqrt();
        let den = (truth.linear.norm_squared() + truth.translation.norm_squared()).sqrt();
        num / den
    }
}

/// Projection through the canonical camera `[I;0]`.
pub fn project(point: &ScenePoint) -> Result<ImagePoint> {
    ImagePoint::try_from_vec(point.0)
}

pub fn apply_affine(def: &AffineDeformation, point: &ScenePoint) -> ScenePoint {
    ScenePoint(def.apply_vec(&point.0))
}

/// Composition "apply `d1`, then `d2`": `(A₂A₁, A₂t₁ + t₂)`.
pub fn compose_affine(d1: &AffineDeformation, d2: &AffineDeformation) -> AffineDeformation {
    AffineDeformation {
        linear: d2.linear * d1.linear,
        translation: d2.linear * d1.translation + d2.translation,
    }
}

/// Exponents `(i, j, k)` of the monomial `X^i Y^j Z^k`.
pub type Exponents = [u32; 3];

/// All monomials in three variables of total degree `≤ degree`, in graded
/// order: by total degree, then lexicographically decreasing exponents.
pub fn monomials_up_to(degree: u32) -> Vec<Exponents> {
    let mut out = Vec::new();
    for total in 0..=degree {
        for i in (0..=total).rev() {
            for j in (0..=total - i).rev() {
                out.push([i, j, total - i - j]);
            }
        }
    }
    out
}

/// Number of monomials in three variables of degree at most `d`.
pub fn monomial_count(degree: u32) -> usize {
    let d = degree as usize;
    (d + 1) * (d + 2) * (d + 3) / 6
}

/// Evaluates every monomial of [`monomials_up_to`] at `p`.
pub fn eval_monomials(monomials: &[Exponents], p: &Vector3<f64>) -> Vec<f64> {
    monomials
        .iter()
        .map(|e| p.x.powi(e[0] as i32) * p.y.powi(e[1] as i32) * p.z.powi(e[2] as i32))
        .collect()
}

/// Gradient of each monomial at `p`, one 3-vector per monomial.
pub fn grad_monomials(monomials: &[Exponents], p: &Vector3<f64>) -> Vec<Vector3<f64>> {
    let pw = |v: f64, e: u32| if e == 0 { 1.0 } else { v.powi(e as i32) };
    let dpw = |v: f64, e: u32| if e == 0 { 0.0 } else { e as f64 * pw(v, e - 1) };
    monomials
        .iter()
        .map(|e| {
            let (x, y, z) = (pw(p.x, e[0]), pw(p.y, e[1]), pw(p.z, e[2]));
            Vector3::new(
                dpw(p.x, e[0]) * y * z,
                x * dpw(p.y, e[1]) * z,
                x * y * dpw(p.z, e[2]),
            )
        })
        .collect()
}

/// A polynomial map `Φ = (φ₁, φ₂, φ₃)` of bounded degree, stored densely over
/// [`monomials_up_to`]`(degree)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialDeformation {
    pub degree: u32,
    /// `coefficients[c][m]` multiplies monomial `m` in component `c`.
    pub coefficients: [Vec<f64>; 3],
}

impl PolynomialDeformation {
    pub fn zero(degree: u32) -> Self {
        let n = monomial_count(degree);
        Self {
            degree,
            coefficients: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
        }
    }

    pub fn from_coefficients(degree: u32, coefficients: [Vec<f64>; 3]) -> Result<Self> {
        let n = monomial_count(degree);
        if coefficients.iter().any(|c| c.len() != n) {
            return Err(Error::InvalidInput(format!(
                "degree {degree} needs {n} coefficients per component"
            )));
        }
        Ok(Self {
            degree,
            coefficients,
        })
    }

    /// Degree-1 map equal to the given affine deformation.
    pub fn from_affine(def: &AffineDeformation) -> Self {
        let mut out = Self::zero(1);
        // Monomial order for degree 1 is [1, X, Y, Z].
        for c in 0..3 {
            out.coefficients[c][0] = def.translation[c];
            for k in 0..3 {
                out.coefficients[c][1 + k] = def.linear[(c, k)];
            }
        }
        out
    }

    pub fn monomials(&self) -> Vec<Exponents> {
        monomials_up_to(self.degree)
    }

    /// Sets the coefficient of `X^i Y^j Z^k` in component `component`.
    pub fn set(&mut self, component: usize, exps: Exponents, value: f64) -> Result<()> {
        let idx = self.index_of(exps)?;
        self.coefficients[component][idx] = value;
        Ok(())
    }

    pub fn get(&self, component: usize, exps: Exponents) -> Result<f64> {
        Ok(self.coefficients[component][self.index_of(exps)?])
    }

    fn index_of(&self, exps: Exponents) -> Result<usize> {
        self.monomials()
            .iter()
            .position(|e| *e == exps)
            .ok_or_else(|| {
                Error::InvalidInput(format!("monomial {exps:?} exceeds degree {}", self.degree))
            })
    }

    pub fn eval(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let m = eval_monomials(&self.monomials(), p);
        Vector3::from_fn(|c, _| {
            self.coefficients[c]
                .iter()
                .zip(&m)
                .map(|(a, b)| a * b)
                .sum()
        })
    }

    /// Jacobian `∂Φ/∂P` at `p`.
    pub fn jacobian(&self, p: &Vector3<f64>) -> Matrix3<f64> {
        let g = grad_monomials(&self.monomials(), p);
        let mut j = Matrix3::zeros();
        for c in 0..3 {
            for (a, gm) in self.coefficients[c].iter().zip(&g) {
                for k in 0..3 {
                    j[(c, k)] += a * gm[k];
                }
            }
        }
        j
    }

    /// The conjugate map `X ↦ k Φ(X / k)`, which produces the same images
    /// for the scene scaled by `k`.
    pub fn conjugated(&self, k: f64) -> Self {
        let mut out = self.clone();
        for (m, e) in self.monomials().iter().enumerate() {
            let deg = (e[0] + e[1] + e[2]) as i32;
            let f = k.powi(1 - deg);
            for c in 0..3 {
                out.coefficients[c][m] *= f;
            }
        }
        out
    }

    /// Returns this map's affine part `(A, t)` of the degree-≤1 terms.
    pub fn affine_part(&self) -> (Matrix3<f64>, Vector3<f64>) {
        let mons = self.monomials();
        let mut a = Matrix3::zeros();
        let mut t = Vector3::zeros();
        for (m, e) in mons.iter().enumerate() {
            match e {
                [0, 0, 0] => (0..3).for_each(|c| t[c] = self.coefficients[c][m]),
                [1, 0, 0] | [0, 1, 0] | [0, 0, 1] => {
                    let k = e.iter().position(|&x| x == 1).unwrap_or(0);
                    (0..3).for_each(|c| a[(c, k)] = self.coefficients[c][m]);
                }
                _ => {}
            }
        }
        (a, t)
    }

    /// Largest absolute coefficient difference against a map of equal degree.
    pub fn max_abs_diff(&self, other: &PolynomialDeformation) -> f64 {
        self.coefficients
            .iter()
            .zip(&other.coefficients)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

pub fn apply_poly(def: &PolynomialDeformation, point: &ScenePoint) -> ScenePoint {
    ScenePoint(def.eval(&point.0))
}

/// Per-point depths with their reciprocals (localization variables).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthAssignment {
    pub depths: Vec<f64>,
    pub reciprocals: Vec<f64>,
}

impl DepthAssignment {
    pub fn new(depths: Vec<f64>) -> Result<Self> {
        if let Some(i) = depths.iter().position(|d| *d == 0.0 || !d.is_finite()) {
            return Err(Error::DepthDegenerate { index: i });
        }
        let reciprocals = depths.iter().map(|d| 1.0 / d).collect();
        Ok(Self {
            depths,
            reciprocals,
        })
    }

    /// Scene points `λᵢ qᵢ` along the given rays.
    pub fn points(&self, rays: &[ImagePoint]) -> Vec<ScenePoint> {
        self.depths
            .iter()
            .zip(rays)
            .map(|(d, q)| ScenePoint(q.0 * *d))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn project_drops_last_coordinate() {
        let q = project(&ScenePoint::new(1.0, 2.0, 1.0)).unwrap();
        assert_eq!(q.0, Vector3::new(1.0, 2.0, 1.0));
        let q = project(&ScenePoint::new(3.0, 2.0, 3.0)).unwrap();
        assert!(q.same_ray(&ImagePoint::new(1.0, 2.0 / 3.0, 1.0).unwrap()));
        assert!(matches!(
            project(&ScenePoint::new(0.0, 0.0, 0.0)),
            Err(Error::ZeroProjection)
        ));
    }

    #[test]
    fn affine_application_and_translation() {
        let d = AffineDeformation::translation_only(Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(
            apply_affine(&d, &ScenePoint::new(0.0, 0.0, 1.0)).0,
            Vector3::new(1.0, 0.0, 1.0)
        );
        let p = ScenePoint::new(0.3, -2.0, 5.0);
        assert_eq!(apply_affine(&AffineDeformation::identity(), &p), p);
    }

    #[test]
    fn singular_linear_part_is_rejected() {
        let a = Matrix3::new(1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 0.0, 1.0, 1.0);
        assert!(matches!(
            AffineDeformation::new(a, Vector3::zeros()),
            Err(Error::SingularDeformation)
        ));
    }

    #[test]
    fn skew_matches_cross_product() {
        let t = Vector3::new(0.2, -1.5, 3.0);
        let x = Vector3::new(-4.0, 0.5, 2.0);
        assert!((skew(&t) * x - t.cross(&x)).norm() < 1e-15);
    }

    #[test]
    fn monomial_enumeration_is_graded() {
        let m = monomials_up_to(2);
        assert_eq!(m.len(), 10);
        assert_eq!(m[0], [0, 0, 0]);
        assert_eq!(&m[1..4], &[[1, 0, 0], [0, 1, 0], [0, 0, 1]]);
        assert_eq!(m[4], [2, 0, 0]);
        assert_eq!(monomial_count(3), 20);
    }

    #[test]
    fn degree_one_polynomial_matches_affine() {
        let d = AffineDeformation::new(
            Matrix3::new(1.0, 2.0, 0.0, -1.0, 3.0, 1.0, 0.5, 0.0, 2.0),
            Vector3::new(0.1, 0.2, -0.3),
        )
        .unwrap();
        let p = ScenePoint::new(1.5, -2.0, 0.25);
        let poly = PolynomialDeformation::from_affine(&d);
        assert!((apply_poly(&poly, &p).0 - apply_affine(&d, &p).0).norm() < 1e-14);
        let (a, t) = poly.affine_part();
        assert_eq!(a, d.linear);
        assert_eq!(t, d.translation);
    }

    #[test]
    fn zero_polynomial_maps_to_origin() {
        let z = PolynomialDeformation::zero(3);
        assert_eq!(z.eval(&Vector3::new(1.0, 2.0, 3.0)), Vector3::zeros());
    }

    #[test]
    fn polynomial_jacobian_matches_finite_differences() {
        let mut phi = PolynomialDeformation::zero(3);
        for c in 0..3 {
            for (m, v) in phi.coefficients[c].iter_mut().enumerate() {
                *v = ((c * 31 + m * 7) % 11) as f64 / 11.0 - 0.5;
            }
        }
        let p = Vector3::new(0.3, -0.7, 1.1);
        let j = phi.jacobian(&p);
        let h = 1e-6;
        for k in 0..3 {
            let mut e = Vector3::zeros();
            e[k] = h;
            let fd = (phi.eval(&(p + e)) - phi.eval(&(p - e))) / (2.0 * h);
            assert!((fd - j.column(k)).norm() < 1e-8);
        }
    }

    #[test]
    fn conjugation_preserves_images() {
        let mut phi = PolynomialDeformation::zero(2);
        phi.coefficients = [
            vec![1.0, 1.0, 0.5, -1.0, 0.2, 0.0, 1.0, 0.0, 0.3, 0.0],
            vec![0.5, 0.0, 1.0, 1.0, 0.0, 0.2, 0.0, 0.1, 0.0, 0.0],
            vec![2.0, 0.3, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.4],
        ];
        let k = 2.5;
        let psi = phi.conjugated(k);
        let p = Vector3::new(0.4, 1.2, -0.3);
        assert!((psi.eval(&(p * k)) - phi.eval(&p) * k).norm() < 1e-12);
    }

    #[test]
    fn depth_assignment_rejects_zero() {
        assert!(matches!(
            DepthAssignment::new(vec![1.0, 0.0]),
            Err(Error::DepthDegenerate { index: 1 })
        ));
        let d = DepthAssignment::new(vec![2.0, -4.0]).unwrap();
        assert_eq!(d.reciprocals, vec![0.5, -0.25]);
    }
}
