//! Input loading with bundled fixtures and a running digest of every input.

use nonrigid::fixtures;
use nonrigid::geometry::{AffineDeformation, PolynomialDeformation};
use nonrigid::polymatch::ModelSpec;
use nonrigid::simulation::{
    scene_from_json, tracks_from_csv, tracks_from_json, CorrespondenceSet, Scene,
};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::CliError;

const FIXTURE_PREFIX: &str = "fixture:";

fn fixture_text(name: &str) -> Option<&'static str> {
    Some(match name {
        "generic-pair" => fixtures::GENERIC_PAIR_JSON,
        "repeated" => fixtures::REPEATED_DEFORMATION_JSON,
        "nine-points" => fixtures::NINE_POINTS_JSON,
        "quadratic" => fixtures::QUADRATIC_MAP_JSON,
        "sparse-cubic" => fixtures::SPARSE_CUBIC_MODEL_JSON,
        _ => return None,
    })
}

/// Reads inputs and hashes their bytes in the order they are read.
pub struct Inputs {
    hasher: Sha256,
    names: Vec<String>,
}

impl Inputs {
    pub fn new() -> Self {
        Self {
            hasher: Sha256::new(),
            names: Vec::new(),
        }
    }

    fn record(&mut self, name: &str, text: &str) {
        self.hasher.update((name.len() as u64).to_le_bytes());
        self.hasher.update(name.as_bytes());
        self.hasher.update((text.len() as u64).to_le_bytes());
        self.hasher.update(text.as_bytes());
        self.names.push(name.to_string());
    }

    pub fn text(&mut self, path: &str) -> Result<String, CliError> {
        let text = match path.strip_prefix(FIXTURE_PREFIX) {
            Some(name) => fixture_text(name)
                .ok_or_else(|| CliError::Usage(format!("unknown fixture `{name}`")))?
                .to_string(),
            None => std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("{path}: {e}")))?,
        };
        self.record(path, &text);
        Ok(text)
    }

    /// Hex SHA-256 over all inputs read so far, with their names.
    pub fn digest(&self) -> serde_json::Value {
        let hex: String = self
            .hasher
            .clone()
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        serde_json::json!({ "sha256": hex, "inputs": self.names })
    }

    pub fn tracks(&mut self, path: &str) -> Result<CorrespondenceSet, CliError> {
        let text = self.text(path)?;
        Ok(if path.ends_with(".csv") {
            tracks_from_csv(&text)?
        } else {
            tracks_from_json(&text)?
        })
    }

    pub fn scene(&mut self, path: &str) -> Result<Scene, CliError> {
        let text = self.text(path)?;
        Ok(scene_from_json(&text)?)
    }

    pub fn deformation(&mut self, path: &str) -> Result<DeformationInput, CliError> {
        let text = self.text(path)?;
        parse_deformation(&text).map_err(|e| CliError::Usage(format!("{path}: {e}")))
    }

    pub fn model(&mut self, spec: &str) -> Result<ModelSpec, CliError> {
        if spec == "affine" {
            return Ok(ModelSpec::affine());
        }
        if spec == "identity" {
            return Ok(ModelSpec::identity());
        }
        if let Some(degree) = spec.strip_prefix("full:") {
            let degree: u32 = degree
                .parse()
                .map_err(|_| CliError::Usage(format!("bad model `{spec}`")))?;
            if degree == 0 {
                return Err(CliError::Usage("model degree must be at least 1".into()));
            }
            return Ok(ModelSpec::full(degree));
        }
        let text = self.text(spec)?;
        Ok(ModelSpec::from_json(&text)?)
    }
}

/// A deformation file: one affine map, a `first`/`second` pair, or a
/// polynomial map.
#[derive(Debug, Clone)]
pub enum DeformationInput {
    Affine(AffineDeformation),
    Pair(AffineDeformation, AffineDeformation),
    Polynomial(PolynomialDeformation),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawDeformation {
    Pair {
        first: fixtures::AffineJson,
        second: fixtures::AffineJson,
    },
    Affine(fixtures::AffineJson),
    Polynomial(PolynomialDeformation),
}

fn parse_deformation(text: &str) -> Result<DeformationInput, String> {
    let raw: RawDeformation = serde_json::from_str(text)
        .map_err(|_| "expected an affine map {linear, translation}, a {first, second} pair or a polynomial map {degree, coefficients}".to_string())?;
    let checked = |a: &fixtures::AffineJson| {
        let d = a.to_deformation();
        AffineDeformation::new(d.linear, d.translation).map_err(|e| e.to_string())
    };
    Ok(match raw {
        RawDeformation::Pair { first, second } => {
            DeformationInput::Pair(checked(&first)?, checked(&second)?)
        }
        RawDeformation::Affine(a) => DeformationInput::Affine(checked(&a)?),
        RawDeformation::Polynomial(p) => DeformationInput::Polynomial(p),
    })
}

impl DeformationInput {
    pub fn affine(&self) -> Result<AffineDeformation, CliError> {
        match self {
            DeformationInput::Affine(a) => Ok(*a),
            DeformationInput::Pair(a, _) => Ok(*a),
            DeformationInput::Polynomial(_) => {
                Err(CliError::Usage("expected an affine deformation".into()))
            }
        }
    }

    pub fn polynomial(&self) -> PolynomialDeformation {
        match self {
            DeformationInput::Polynomial(p) => p.clone(),
            DeformationInput::Affine(a) | DeformationInput::Pair(a, _) => {
                PolynomialDeformation::from_affine(a)
            }
        }
    }
}
