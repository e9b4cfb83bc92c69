//! Spatial math shared by the server, clients and renderers.

mod alignment;
mod face;
mod pick;
mod stats;
mod transform;

use thiserror::Error;

pub use self::alignment::{alignment_residual_rms, solve_alignment, AnchorPoint, AnchorSet};
pub use self::face::{project_snapshot, select_face, Axis, CubeFace, FaceSign, SnapshotPoint};
pub use self::pick::{pick_point, ray_sphere_entry, PickSphere};
pub use self::stats::{aggregate_bars, subset_statistics, Bar, BarGrid, ColumnStatistics, SubsetStatistics, Summary};
pub use self::transform::{
    billboard_yaw, is_unit, rotation_distance, Pose, RigidTransform, UnitQuat, Vec3,
    QUATERNION_NORM_TOLERANCE,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("anchor set needs at least 3 points, got {0}")]
    TooFewAnchors(usize),
    #[error("anchor points are collinear or coincident")]
    DegenerateAnchors,
    #[error("duplicate anchor label `{0}`")]
    DuplicateLabel(String),
    #[error("anchor labels do not correspond")]
    LabelMismatch,
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("direction has no horizontal component")]
    DegenerateDirection,
}
