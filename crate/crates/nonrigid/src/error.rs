use thiserror::Error;

/// Errors raised by the library. Variants fall into two families: malformed
/// input (see [`Error::is_usage`]) and numerical failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point projects through the camera center")]
    ZeroProjection,
    #[error("deformation has a singular linear part")]
    SingularDeformation,
    #[error("deformation maps points {first} and {second} to the same ray")]
    DegenerateDeformation { first: usize, second: usize },
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("need at least {needed} points, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("critical configuration: constraint nullspace has dimension {nullity}")]
    CriticalConfiguration { nullity: usize },
    #[error("tracks are consistent with a homography (zero translation or planar scene)")]
    ZeroTranslation,
    #[error("matrix is rank deficient (rank {rank}, expected {expected})")]
    RankDeficient { rank: usize, expected: usize },
    #[error("no convergence after {restarts} restarts (best residual {best_residual:e})")]
    NoConvergence { restarts: usize, best_residual: f64 },
    #[error("{count} distinct solutions found where one was expected")]
    MultipleSolutions { count: usize },
    #[error(
        "third-view essential matrix is not proportional to the first (distance {distance:e})"
    )]
    ScaleDegenerate { distance: f64 },
    #[error("deformation scales are not identifiable: Jacobian nullity {nullity} at the solution")]
    ScaleUnidentifiable { nullity: usize },
    #[error("no clear singular-value gap (best ratio {best_gap:e})")]
    IllConditioned { best_gap: f64 },
    #[error("depth of point {index} is undetermined")]
    DepthDegenerate { index: usize },
    #[error("the four basis points are not affinely independent")]
    BasisDegenerate,
    #[error("deformation family cannot be resolved (rank {rank})")]
    AmbiguousDeformation { rank: usize },
    #[error("residual {residual:e} at point {index} exceeds tolerance")]
    ResidualTooHigh { index: usize, residual: f64 },
    #[error("no constraint exists within bidegree bound ({deg_q}, {deg_qp})")]
    NoConstraint { deg_q: u32, deg_qp: u32 },
    #[error("constraint is not unique: nullspace dimension {dim}")]
    NonUniqueConstraint { dim: usize },
    #[error("every candidate model was rejected")]
    AllRejected,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by malformed or inconsistent input rather than
    /// by the numerics.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::InvalidInput(_)
                | Error::Io(_)
                | Error::InsufficientPoints { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
