//! Reference data bundled with the crate: the worked deformations, the
//! nine-point configuration, the quadratic map and the sparse cubic model.

use nalgebra::{Matrix3, Vector3};
use serde::Deserialize;

use crate::geometry::{AffineDeformation, PolynomialDeformation};
use crate::polymatch::{ImageMonomial, ModelSpec};
use crate::simulation::{scene_from_json, Scene};

pub const GENERIC_PAIR_JSON: &str = include_str!("../fixtures/generic_pair.json");
pub const REPEATED_DEFORMATION_JSON: &str = include_str!("../fixtures/repeated_deformation.json");
pub const NINE_POINTS_JSON: &str = include_str!("../fixtures/nine_points.json");
pub const QUADRATIC_MAP_JSON: &str = include_str!("../fixtures/quadratic_map.json");
pub const SPARSE_CUBIC_MODEL_JSON: &str = include_str!("../fixtures/sparse_cubic_model.json");

/// Row-major affine deformation as written in the fixture files.
#[derive(Debug, Clone, Copy, Deserialize)]
pub struct AffineJson {
    pub linear: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl AffineJson {
    pub fn to_deformation(&self) -> AffineDeformation {
        AffineDeformation {
            linear: Matrix3::from_fn(|r, c| self.linear[r][c]),
            translation: Vector3::from(self.translation),
        }
    }
}

#[derive(Deserialize)]
struct PairJson {
    first: AffineJson,
    second: AffineJson,
}

/// Parses an affine deformation in the fixture layout.
pub fn affine_from_json(text: &str) -> crate::Result<AffineDeformation> {
    let raw: AffineJson = serde_json::from_str(text).map_err(|e| crate::Error::Parse {
        location: format!("line {}", e.line()),
        message: e.to_string(),
    })?;
    Ok(raw.to_deformation())
}

/// The pair `(A, a)`, `(B, b)` at which the generic three-view system has a
/// three-dimensional fiber.
pub fn generic_pair() -> (AffineDeformation, AffineDeformation) {
    let raw: PairJson = serde_json::from_str(GENERIC_PAIR_JSON).expect("bundled fixture parses");
    (raw.first.to_deformation(), raw.second.to_deformation())
}

/// The deformation used for the repeated and quasi-identical systems.
pub fn repeated_deformation() -> AffineDeformation {
    affine_from_json(REPEATED_DEFORMATION_JSON).expect("bundled fixture parses")
}

/// Nine points whose first four form the affine basis.
pub fn nine_points() -> Scene {
    scene_from_json(NINE_POINTS_JSON).expect("bundled fixture parses")
}

/// `Φ = (¼X² + XY + L, ¼Y² + YZ + L, ¼Z² + XZ + L)` with `L = X + Y + Z + 1`.
pub fn quadratic_map() -> PolynomialDeformation {
    serde_json::from_str(QUADRATIC_MAP_JSON).expect("bundled fixture parses")
}

/// Affine `φ₁`, `φ₂ = a_y Y² + b_y X² + c_y Z²`, `φ₃ = a_z Z³`.
pub fn sparse_cubic_model() -> ModelSpec {
    ModelSpec::from_json(SPARSE_CUBIC_MODEL_JSON).expect("bundled fixture parses")
}

/// The closed-form matching constraint of [`sparse_cubic_model`] at
/// parameters `(a_x, b_x, c_x, d_x, a_y, b_y, c_y, a_z)`, as
/// `(monomial in (q_x, q_y, q_x′, q_y′), coefficient)` terms.
pub fn sparse_cubic_constraint(p: &[f64; 8]) -> Vec<(ImageMonomial, f64)> {
    let [ax, bx, cx, dx, ay, by, cy, az] = *p;
    vec![
        ([0, 0, 1, 0], cy.powi(3)),
        ([2, 0, 1, 0], 3.0 * by * cy * cy),
        ([4, 0, 1, 0], 3.0 * by * by * cy),
        ([6, 0, 1, 0], by.powi(3)),
        ([0, 2, 1, 0], 3.0 * ay * cy * cy),
        ([2, 2, 1, 0], 6.0 * ay * by * cy),
        ([4, 2, 1, 0], 3.0 * ay * by * by),
        ([0, 4, 1, 0], 3.0 * ay * ay * cy),
        ([2, 4, 1, 0], 3.0 * ay * ay * by),
        ([0, 6, 1, 0], ay.powi(3)),
        ([0, 0, 0, 2], -az * cx * cy),
        ([1, 0, 0, 2], -ax * az * cy),
        ([2, 0, 0, 2], -az * by * cx),
        ([3, 0, 0, 2], -ax * az * by),
        ([0, 1, 0, 2], -az * bx * cy),
        ([2, 1, 0, 2], -az * bx * by),
        ([0, 2, 0, 2], -ay * az * cx),
        ([1, 2, 0, 2], -ax * ay * az),
        ([0, 3, 0, 2], -ay * az * bx),
        ([0, 0, 0, 3], -az * az * dx),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_load() {
        let (a, b) = generic_pair();
        assert_eq!(a.linear[(0, 2)], 83.0);
        assert_eq!(b.translation.z, 62.0);
        assert_eq!(repeated_deformation().linear[(2, 0)], 69.0);
        assert_eq!(nine_points().points.len(), 9);
        let q = quadratic_map();
        assert_eq!(
            q.eval(&Vector3::new(0.0, 0.0, 0.0)),
            Vector3::new(1.0, 1.0, 1.0)
        );
        assert_eq!(
            q.eval(&Vector3::new(2.0, 0.0, 0.0)),
            Vector3::new(4.0, 3.0, 3.0)
        );
        assert_eq!(sparse_cubic_model().parameter_count(), 8);
        assert_eq!(sparse_cubic_model(), ModelSpec::sparse_cubic_example());
    }
}
