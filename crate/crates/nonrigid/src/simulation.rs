//! Synthetic scenes and image tracks, plus track and scene file I/O.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    angular_distance, project, AffineDeformation, ImagePoint, PolynomialDeformation, ScenePoint,
    IMAGE_EQ_TOL,
};

/// Minimum tetrahedron volume for the first four points of a random scene.
pub const MIN_BASIS_VOLUME: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub points: Vec<ScenePoint>,
    #[serde(default)]
    pub label: String,
}

impl Scene {
    pub fn new(points: Vec<ScenePoint>, label: impl Into<String>) -> Self {
        Self {
            points,
            label: label.into(),
        }
    }

    /// Volume of the tetrahedron spanned by the first four points.
    pub fn basis_volume(&self) -> Option<f64> {
        let p = &self.points;
        (p.len() >= 4).then(|| tetrahedron_volume(&p[0].0, &p[1].0, &p[2].0, &p[3].0))
    }
}

pub fn tetrahedron_volume(
    p0: &Vector3<f64>,
    p1: &Vector3<f64>,
    p2: &Vector3<f64>,
    p3: &Vector3<f64>,
) -> f64 {
    Matrix3::from_columns(&[p1 - p0, p2 - p0, p3 - p0])
        .determinant()
        .abs()
        / 6.0
}

/// Image tracks of one scene over two or three views.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrespondenceSet {
    pub views: Vec<Vec<ImagePoint>>,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub label: String,
}

impl CorrespondenceSet {
    pub fn new(
        views: Vec<Vec<ImagePoint>>,
        noise_sigma: f64,
        label: impl Into<String>,
    ) -> Result<Self> {
        let set = Self {
            views,
            noise_sigma,
            label: label.into(),
        };
        set.validate()?;
        Ok(set)
    }

    fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.views.len()) {
            return Err(Error::Parse {
                location: "views".into(),
                message: format!("expected 2 or 3 views, got {}", self.views.len()),
            });
        }
        if self.views.iter().any(|v| v.len() != self.views[0].len()) {
            return Err(Error::Parse {
                location: "views".into(),
                message: "unaligned views".into(),
            });
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Parse {
                location: "noise_sigma".into(),
                message: "must be nonnegative".into(),
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.views.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    /// The two-view set formed by views `i` and `j`.
    pub fn pair(&self, i: usize, j: usize) -> Result<CorrespondenceSet> {
        if i >= self.n_views() || j >= self.n_views() {
            return Err(Error::InvalidInput(format!(
                "view index out of range ({i}, {j})"
            )));
        }
        Ok(Self {
            views: vec![self.views[i].clone(), self.views[j].clone()],
            noise_sigma: self.noise_sigma,
            label: self.label.clone(),
        })
    }

    /// The first `n` tracks.
    pub fn truncated(&self, n: usize) -> CorrespondenceSet {
        Self {
            views: self
                .views
                .iter()
                .map(|v| v[..n.min(v.len())].to_vec())
                .collect(),
            noise_sigma: self.noise_sigma,
            label: self.label.clone(),
        }
    }
}

/// The deformation driving a simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Deformation {
    Affine(AffineDeformation),
    Polynomial(PolynomialDeformation),
}

impl Deformation {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        match self {
            Deformation::Affine(d) => d.apply_vec(p),
            Deformation::Polynomial(d) => d.eval(p),
        }
    }
}

/// Projects the scene after 0, 1, …, `repeats` applications of the
/// deformation. Noise, if any, is added to the inhomogeneous coordinates.
pub fn simulate(
    scene: &Scene,
    deformation: &Deformation,
    repeats: usize,
    noise_sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<CorrespondenceSet> {
    if scene.points.is_empty() {
        return Err(Error::InvalidInput("scene has no points".into()));
    }
    if !(1..=2).contains(&repeats) {
        return Err(Error::InvalidInput(format!(
            "repeats must be 1 or 2, got {repeats}"
        )));
    }
    if !(noise_sigma >= 0.0) {
        return Err(Error::InvalidInput(
            "noise_sigma must be nonnegative".into(),
        ));
    }
    if let Deformation::Affine(d) = deformation {
        AffineDeformation::new(d.linear, d.translation)?;
    }
    let noise = Normal::new(0.0, noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let mut current: Vec<Vector3<f64>> = scene.points.iter().map(|p| p.0).collect();
    let mut views = Vec::with_capacity(repeats + 1);
    for step in 0..=repeats {
        if step > 0 {
            current = current.iter().map(|p| deformation.apply(p)).collect();
        }
        let mut view = current
            .iter()
            .map(|p| project(&ScenePoint(*p)))
            .collect::<Result<Vec<_>>>()?;
        check_distinct_rays(&view)?;
        if noise_sigma > 0.0 {
            for q in &mut view {
                *q = perturb(q, &noise, rng)?;
            }
        }
        views.push(view);
    }
    CorrespondenceSet::new(views, noise_sigma, scene.label.clone())
}

fn check_distinct_rays(view: &[ImagePoint]) -> Result<()> {
    for i in 0..view.len() {
        for j in i + 1..view.len() {
            if angular_distance(&view[i].0, &view[j].0) < IMAGE_EQ_TOL {
                return Err(Error::DegenerateDeformation {
                    first: i,
                    second: j,
                });
            }
        }
    }
    Ok(())
}

fn perturb(q: &ImagePoint, noise: &Normal<f64>, rng: &mut ChaCha8Rng) -> Result<ImagePoint> {
    let v = q.0;
    if v.z.abs() <= 1e-12 * v.norm() {
        return Err(Error::InvalidInput(
            "cannot add image noise to a point at infinity".into(),
        ));
    }
    ImagePoint::new(
        v.x / v.z + noise.sample(rng),
        v.y / v.z + noise.sample(rng),
        1.0,
    )
}

/// `n` points uniform in `[-half_width, half_width]³`, the first four
/// resampled until their tetrahedron volume exceeds [`MIN_BASIS_VOLUME`].
pub fn random_scene(n: usize, half_width: f64, rng: &mut ChaCha8Rng) -> Scene {
    let sample =
        |rng: &mut ChaCha8Rng| Vector3::from_fn(|_, _| rng.random_range(-half_width..half_width));
    let mut points: Vec<Vector3<f64>> = Vec::with_capacity(n);
    loop {
        points.clear();
        points.extend((0..n.min(4)).map(|_| sample(rng)));
        if n < 4
            || tetrahedron_volume(&points[0], &points[1], &points[2], &points[3]) > MIN_BASIS_VOLUME
        {
            break;
        }
    }
    points.extend((n.min(4)..n).map(|_| sample(rng)));
    Scene::new(points.into_iter().map(ScenePoint).collect(), "random")
}

/// Default synthetic scene: uniform in `[-5, 5]³`.
pub fn default_scene(n: usize, rng: &mut ChaCha8Rng) -> Scene {
    random_scene(n, 5.0, rng)
}

/// Random affine map with Gaussian entries, well away from singular, with
/// translation of norm `translation_scale`.
pub fn random_affine(rng: &mut ChaCha8Rng, translation_scale: f64) -> AffineDeformation {
    loop {
        let a: Matrix3<f64> = Matrix3::from_fn(|_, _| StandardNormal.sample(rng));
        let t: Vector3<f64> = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
        if a.determinant().abs() > 0.2 && t.norm() > 1e-3 {
            return AffineDeformation {
                linear: a,
                translation: t.normalize() * translation_scale,
            };
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TrackFile {
    views: Vec<Vec<[f64; 3]>>,
    #[serde(default)]
    noise_sigma: f64,
    #[serde(default)]
    label: String,
}

#[derive(Serialize, Deserialize)]
struct SceneFile {
    points: Vec<[f64; 3]>,
    #[serde(default)]
    label: String,
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Reads tracks from JSON, or from CSV when the extension is `.csv`.
pub fn load_tracks(path: impl AsRef<Path>) -> Result<CorrespondenceSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    if is_csv(path) {
        tracks_from_csv(&text)
    } else {
        tracks_from_json(&text)
    }
}

/// Writes tracks as JSON, or as CSV when the extension is `.csv`.
pub fn save_tracks(set: &CorrespondenceSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = if is_csv(path) {
        tracks_to_csv(set)?
    } else {
        tracks_to_json(set)
    };
    std::fs::write(path, text)?;
    Ok(())
}

pub fn tracks_to_json(set: &CorrespondenceSet) -> String {
    let file = TrackFile {
        views: set
            .views
            .iter()
            .map(|v| v.iter().map(|q| [q.0.x, q.0.y, q.0.z]).collect())
            .collect(),
        noise_sigma: set.noise_sigma,
        label: set.label.clone(),
    };
    serde_json::to_string_pretty(&file).expect("track file serializes")
}

pub fn tracks_from_json(text: &str) -> Result<CorrespondenceSet> {
    let file: TrackFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        location: format!("line {}, column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    let views = file
        .views
        .iter()
        .enumerate()
        .map(|(v, pts)| {
            pts.iter()
                .enumerate()
                .map(|(i, c)| {
                    ImagePoint::new(c[0], c[1], c[2]).map_err(|e| Error::Parse {
                        location: format!("view {v}, point {i}"),
                        message: e.to_string(),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    CorrespondenceSet::new(views, file.noise_sigma, file.label)
}

pub fn tracks_to_csv(set: &CorrespondenceSet) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["view", "index", "x", "y", "w"])
        .map_err(csv_io)?;
    for (v, pts) in set.views.iter().enumerate() {
        for (i, q) in pts.iter().enumerate() {
            w.write_record(&[
                v.to_string(),
                i.to_string(),
                q.0.x.to_string(),
                q.0.y.to_string(),
                q.0.z.to_string(),
            ])
            .map_err(csv_io)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub fn tracks_from_csv(text: &str) -> Result<CorrespondenceSet> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<(usize, usize, ImagePoint)> = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let row = k + 2;
        let record = record.map_err(|e| Error::Parse {
            location: format!("row {row}"),
            message: e.to_string(),
        })?;
        if record.len() != 5 {
            return Err(Error::Parse {
                location: format!("row {row}"),
                message: format!(
                    "expected 5 fields (view,index,x,y,w), found {}",
                    record.len()
                ),
            });
        }
        let field = |i: usize, name: &str| -> Result<f64> {
            record[i].parse::<f64>().map_err(|e| Error::Parse {
                location: format!("row {row}, field {name}"),
                message: e.to_string(),
            })
        };
        let index_field = |i: usize, name: &str| -> Result<usize> {
            record[i].parse::<usize>().map_err(|e| Error::Parse {
                location: format!("row {row}, field {name}"),
                message: e.to_string(),
            })
        };
        let view = index_field(0, "view")?;
        let index = index_field(1, "index")?;
        let q = ImagePoint::new(field(2, "x")?, field(3, "y")?, field(4, "w")?).map_err(|e| {
            Error::Parse {
                location: format!("row {row}"),
                message: e.to_string(),
            }
        })?;
        rows.push((view, index, q));
    }
    let n_views = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
    let mut views: Vec<Vec<Option<ImagePoint>>> = vec![Vec::new(); n_views];
    for (view, index, q) in rows {
        let v = &mut views[view];
        if v.len() <= index {
            v.resize(index + 1, None);
        }
        if v[index].replace(q).is_some() {
            return Err(Error::Parse {
                location: format!("view {view}, index {index}"),
                message: "duplicate entry".into(),
            });
        }
    }
    let views = views
        .into_iter()
        .enumerate()
        .map(|(vi, v)| {
            v.into_iter()
                .enumerate()
                .map(|(i, q)| {
                    q.ok_or_else(|| Error::Parse {
                        location: format!("view {vi}, index {i}"),
                        message: "missing entry".into(),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    CorrespondenceSet::new(views, 0.0, "")
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene> {
    scene_from_json(&std::fs::read_to_string(path)?)
}

pub fn save_scene(scene: &Scene, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, scene_to_json(scene))?;
    Ok(())
}

pub fn scene_from_json(text: &str) -> Result<Scene> {
    let file: SceneFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        location: format!("line {}, column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    if let Some(i) = file
        .points
        .iter()
        .position(|p| !p.iter().all(|c| c.is_finite()))
    {
        return Err(Error::Parse {
            location: format!("point {i}"),
            message: "non-finite coordinate".into(),
        });
    }
    Ok(Scene::new(
        file.points
            .iter()
            .map(|p| ScenePoint::new(p[0], p[1], p[2]))
            .collect(),
        file.label,
    ))
}

pub fn scene_to_json(scene: &Scene) -> String {
    let file = SceneFile {
        points: scene.points.iter().map(|p| [p.0.x, p.0.y, p.0.z]).collect(),
        label: scene.label.clone(),
    };
    serde_json::to_string_pretty(&file).expect("scene serializes")
}
