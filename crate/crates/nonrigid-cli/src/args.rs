use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

/// Recovery of affine and polynomial deformations from point tracks.
///
/// Input paths may name a bundled fixture instead of a file:
/// `fixture:generic-pair`, `fixture:repeated`, `fixture:nine-points`,
/// `fixture:quadratic`, `fixture:sparse-cubic`. Model arguments also accept
/// `affine`, `identity` and `full:<degree>`.
#[derive(Debug, Parser, Serialize)]
#[command(name = "nonrigid", version)]
pub struct Cli {
    /// Seed for every stochastic step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    pub output: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Simulate tracks of a scene under a deformation.
    Simulate(SimulateArgs),
    /// Estimate the essential matrix of two views and its decomposition family.
    Essential(EssentialArgs),
    /// Recover an affine deformation from three views or known deformations.
    RecoverAffine(RecoverAffineArgs),
    /// Affine invariant coordinates of the scene points.
    Invariants(InvariantsArgs),
    /// Discover the monomial support of a model's matching constraint.
    Implicitize(ImplicitizeArgs),
    /// Fit a matching constraint's coefficients to two-view tracks.
    FitConstraint(FitConstraintArgs),
    /// Select among candidate models for two-view tracks.
    SelectModel(SelectModelArgs),
    /// Recover a polynomial deformation and depths from tracks.
    RecoverPoly(RecoverPolyArgs),
    /// Jacobian nullity of a constraint system at a known solution.
    DimCheck(DimCheckArgs),
    /// Nullspace dimension of the epipolar system (critical configurations).
    CriticalCheck(CriticalCheckArgs),
}

#[derive(Debug, Args, Serialize)]
#[command(group(ArgGroup::new("source").required(true).args(["scene", "points"])))]
pub struct SimulateArgs {
    /// Scene file (JSON with `points`).
    #[arg(long)]
    pub scene: Option<String>,
    /// Number of random scene points instead of a scene file.
    #[arg(long)]
    pub points: Option<usize>,
    /// Affine or polynomial deformation file.
    #[arg(long)]
    pub deformation: String,
    /// Times the deformation is applied (1 or 2).
    #[arg(long, default_value_t = 2)]
    pub repeats: usize,
    /// Gaussian image noise on inhomogeneous coordinates.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Write the tracks here (`.csv` or JSON); otherwise they go in the report.
    #[arg(long)]
    pub tracks_out: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct EssentialArgs {
    #[arg(long)]
    pub tracks: String,
    /// The two views to use.
    #[arg(long, num_args = 2, value_delimiter = ',', default_values_t = [0, 1])]
    pub views: Vec<usize>,
}

#[derive(Debug, Args, Serialize)]
#[command(group(ArgGroup::new("mode").required(true).args(["repeated", "quasi", "generic_witness"])))]
#[command(group(ArgGroup::new("input").required(true).args(["tracks", "deformation"])))]
pub struct RecoverAffineArgs {
    /// Three-view tracks.
    #[arg(long)]
    pub tracks: Option<String>,
    /// Known deformation (or a `first`/`second` pair) to build exact essentials from.
    #[arg(long)]
    pub deformation: Option<String>,
    /// Second deformation, when `--deformation` holds a single one.
    #[arg(long)]
    pub second: Option<String>,
    /// Second deformation `(λA, μa)` built from `--deformation`.
    #[arg(long, num_args = 2, value_delimiter = ',')]
    pub scales: Option<Vec<f64>>,
    #[arg(long)]
    pub repeated: bool,
    #[arg(long)]
    pub quasi: bool,
    #[arg(long)]
    pub generic_witness: bool,
    /// Fiber samples for `--generic-witness`.
    #[arg(long, default_value_t = 10)]
    pub samples: usize,
    #[arg(long, default_value_t = 64)]
    pub restarts: usize,
}

#[derive(Debug, Args, Serialize)]
#[command(group(ArgGroup::new("mode").required(true).args(["known_basis", "three_views"])))]
pub struct InvariantsArgs {
    #[arg(long)]
    pub tracks: String,
    /// Scene file whose first four points are the basis.
    #[arg(long)]
    pub known_basis: Option<String>,
    #[arg(long)]
    pub three_views: bool,
    #[arg(long, default_value_t = 64)]
    pub restarts: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct ImplicitizeArgs {
    #[arg(long)]
    pub model: String,
    /// Largest bidegree `deg_q,deg_q'` searched.
    #[arg(long, num_args = 2, value_delimiter = ',', default_values_t = [6, 3])]
    pub bound: Vec<u32>,
    /// Samples per draw (default: twice the monomial count of the bound).
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
#[command(group(ArgGroup::new("constraint").required(true).args(["model", "support"])))]
pub struct FitConstraintArgs {
    #[arg(long)]
    pub tracks: String,
    /// Model whose support is discovered first.
    #[arg(long)]
    pub model: Option<String>,
    /// JSON list of exponent vectors over `(qx, qy, qx', qy')`.
    #[arg(long)]
    pub support: Option<String>,
    #[arg(long, num_args = 2, value_delimiter = ',', default_values_t = [6, 3])]
    pub bound: Vec<u32>,
}

#[derive(Debug, Args, Serialize)]
pub struct SelectModelArgs {
    #[arg(long)]
    pub tracks: String,
    /// Candidate models, in order.
    #[arg(long = "model", required = true)]
    pub models: Vec<String>,
    #[arg(long, default_value_t = 2.0)]
    pub kappa: f64,
    #[arg(long, default_value_t = nonrigid::polymatch::ACCEPT_TOL)]
    pub accept_tol: f64,
    #[arg(long, num_args = 2, value_delimiter = ',', default_values_t = [6, 3])]
    pub bound: Vec<u32>,
}

#[derive(Debug, Args, Serialize)]
pub struct RecoverPolyArgs {
    #[arg(long)]
    pub tracks: String,
    #[arg(long)]
    pub model: String,
    #[arg(long, default_value_t = 256)]
    pub restarts: usize,
    /// Typical scene depth used to scale the start points.
    #[arg(long, default_value_t = 1.0)]
    pub depth_scale: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemKind {
    Generic,
    Repeated,
    Quasi,
    QuasiScales,
    Poly,
}

#[derive(Debug, Args, Serialize)]
pub struct DimCheckArgs {
    #[arg(long, value_enum)]
    pub system: SystemKind,
    /// Affine deformation or pair (affine systems), or polynomial map (`poly`).
    #[arg(long)]
    pub deformation: String,
    #[arg(long)]
    pub second: Option<String>,
    #[arg(long, num_args = 2, value_delimiter = ',')]
    pub scales: Option<Vec<f64>>,
    /// Tracks (`poly` only).
    #[arg(long)]
    pub tracks: Option<String>,
    /// Model (`poly` only).
    #[arg(long)]
    pub model: Option<String>,
    /// Scene giving the depths along the first-view tracks (`poly` only).
    #[arg(long)]
    pub scene: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct CriticalCheckArgs {
    #[arg(long)]
    pub tracks: String,
    /// Ground-truth deformation, used with `--scene` to evaluate the quadrics.
    #[arg(long, requires = "scene")]
    pub deformation: Option<String>,
    #[arg(long, requires = "deformation")]
    pub scene: Option<String>,
}
