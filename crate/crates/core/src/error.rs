use thiserror::Error;

/// Errors produced anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("joint count: expected {expected} joints, got {got}")]
    JointCount { expected: usize, got: usize },

    #[error("self-parent cycle at joint {0}")]
    SelfParentCycle(usize),

    #[error("joint {joint} has parent {parent}, which does not precede it (cycle or bad ordering)")]
    ParentOrder { joint: usize, parent: usize },

    #[error("root joint must have no parent; joint {0} is parentless")]
    Root(usize),

    #[error("fingertip mapping: {0}")]
    Fingertip(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("invalid muscle {muscle}: {reason}")]
    InvalidMuscle { muscle: String, reason: String },

    #[error("unknown bone {0}")]
    UnknownBone(String),

    #[error("empty bone group for joint {0}")]
    EmptyBoneGroup(usize),

    #[error("bone {bone} maps to joint {joint}, but that joint's group does not contain it")]
    BoneNotInGroup { bone: String, joint: usize },

    #[error("degenerate segment in muscle {muscle} between path points {from} and {to}")]
    DegenerateSegment { muscle: String, from: usize, to: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("trajectory: {0}")]
    Trajectory(String),

    #[error("simulation diverged: {0}")]
    Diverged(String),

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("unsupported {format} version {found} (this build reads up to {supported})")]
    Version {
        format: String,
        found: u32,
        supported: u32,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
