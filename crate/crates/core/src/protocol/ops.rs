use serde::{Deserialize, Serialize};

use super::{ClientId, DatasetRef, ObjectTransform, VizMode};
use crate::dataset::{DimensionMapping, FilterState};
use crate::viewmath::{CubeFace, Pose, SnapshotPoint};

/// Upper bound on frozen points carried by one snapshot.
pub const MAX_SNAPSHOT_POINTS: usize = 200_000;

/// A mutation of shared state. Only the server decides the order in which
/// these are applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op")]
pub enum OpPayload {
    SetTransform {
        object: String,
        transform: ObjectTransform,
    },
    SetMapping {
        object: String,
        mapping: DimensionMapping,
    },
    SetFilter {
        object: String,
        filter: FilterState,
    },
    SetVizMode {
        object: String,
        mode: VizMode,
    },
    SelectRow {
        object: String,
        row: Option<u64>,
    },
    WatchlistAdd {
        object: String,
        individual_id: String,
        added_at: u64,
    },
    WatchlistRemove {
        object: String,
        individual_id: String,
    },
    /// The snapshot's id is derived from the sequence number it is applied at.
    CreateSnapshot {
        face: CubeFace,
        points: Vec<SnapshotPoint>,
        creator: ClientId,
        created_at: u64,
    },
    DeleteSnapshot {
        snapshot: String,
    },
    SetUserPose {
        client: ClientId,
        pose: Pose,
    },
    RemoveUserPose {
        client: ClientId,
    },
    LoadDataset {
        dataset: DatasetRef,
    },
}

fn plain_text(value: &str) -> bool {
    !value.is_empty() && !value.contains([',', '"', '\n', '\r'])
}

impl OpPayload {
    pub fn name(&self) -> &'static str {
        match self {
            OpPayload::SetTransform { .. } => "SetTransform",
            OpPayload::SetMapping { .. } => "SetMapping",
            OpPayload::SetFilter { .. } => "SetFilter",
            OpPayload::SetVizMode { .. } => "SetVizMode",
            OpPayload::SelectRow { .. } => "SelectRow",
            OpPayload::WatchlistAdd { .. } => "WatchlistAdd",
            OpPayload::WatchlistRemove { .. } => "WatchlistRemove",
            OpPayload::CreateSnapshot { .. } => "CreateSnapshot",
            OpPayload::DeleteSnapshot { .. } => "DeleteSnapshot",
            OpPayload::SetUserPose { .. } => "SetUserPose",
            OpPayload::RemoveUserPose { .. } => "RemoveUserPose",
            OpPayload::LoadDataset { .. } => "LoadDataset",
        }
    }

    /// Field-level invariants that hold regardless of session state.
    pub fn validate(&self) -> Result<(), String> {
        match self {
            OpPayload::SetTransform { transform, .. } if !transform.is_valid() => {
                Err("transform must be rigid with a positive finite scale".into())
            }
            OpPayload::SetFilter { filter, .. } => {
                filter.validate_ranges().map_err(|e| e.to_string())
            }
            OpPayload::WatchlistAdd { individual_id, .. }
            | OpPayload::WatchlistRemove { individual_id, .. }
                if !plain_text(individual_id) =>
            {
                Err(format!("invalid individual id `{individual_id}`"))
            }
            OpPayload::CreateSnapshot { points, .. } => {
                if points.len() > MAX_SNAPSHOT_POINTS {
                    Err(format!("snapshot exceeds {MAX_SNAPSHOT_POINTS} points"))
                } else if !points.iter().all(SnapshotPoint::is_valid) {
                    Err("snapshot points must lie in [0,1]".into())
                } else {
                    Ok(())
                }
            }
            OpPayload::SetUserPose { pose, .. } if !pose.is_valid() => {
                Err("pose orientation must be a unit quaternion".into())
            }
            OpPayload::LoadDataset { dataset } if !dataset.is_valid() => {
                Err("dataset reference has an invalid schema".into())
            }
            _ => Ok(()),
        }
    }

    /// The client a pose or snapshot op claims to come from.
    pub fn claimed_client(&self) -> Option<&ClientId> {
        match self {
            OpPayload::SetUserPose { client, .. } => Some(client),
            OpPayload::CreateSnapshot { creator, .. } => Some(creator),
            _ => None,
        }
    }

    pub fn is_pose(&self) -> bool {
        matches!(self, OpPayload::SetUserPose { .. })
    }
}
