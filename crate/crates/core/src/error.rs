use thiserror::Error;

#[derive(Debug, Error)]
pub enum KinematicsError {
    #[error("coordinate singularity: reference direction is collinear with the shoulder-wrist line (|e_SW x e_r| = {cross_norm:e})")]
    CoordinateSingularity { cross_norm: f64 },
    #[error("shoulder and wrist coincide")]
    ZeroShoulderWrist,
    #[error("SEW Jacobian undefined: {0}")]
    SewJacobianUndefined(String),
    #[error("null space of the kinematic Jacobian is not one-dimensional (sigma ratio {ratio:e})")]
    AmbiguousNullSpace { ratio: f64 },
    #[error("axes 5 and 7 do not intersect for this geometry")]
    NonIntersectingWristAxes,
    #[error("no joint configuration reaches the requested pose along the swept range")]
    EmptySweep,
    #[error("no inverse kinematics solution found")]
    EmptySolutionSet,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = KinematicsError> = std::result::Result<T, E>;
