use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ClientId;
use crate::dataset::{ColumnDescriptor, ColumnKind, DimensionMapping, FilterState, Watchlist};
use crate::viewmath::{CubeFace, Pose, RigidTransform, SnapshotPoint, Vec3};

pub const CUBE_ID: &str = "cube";
pub const WALL_ID: &str = "wall";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VizMode {
    Scatter,
    BarChart,
}

/// Rigid placement plus a uniform scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectTransform {
    pub rigid: RigidTransform,
    pub scale: f64,
}

impl ObjectTransform {
    pub fn new(rigid: RigidTransform, scale: f64) -> Self {
        Self { rigid, scale }
    }

    pub fn at(position: Vec3, scale: f64) -> Self {
        Self::new(RigidTransform::from_translation(position), scale)
    }

    pub fn is_valid(&self) -> bool {
        self.rigid.is_valid() && self.scale.is_finite() && self.scale > 0.0
    }
}

/// What the session knows about the loaded dataset: enough to validate
/// mappings and filters without shipping the rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub content_hash: String,
    pub columns: Vec<ColumnDescriptor>,
    pub row_count: u64,
}

impl DatasetRef {
    pub fn of(dataset: &crate::dataset::Dataset) -> Self {
        Self {
            content_hash: dataset.content_hash(),
            columns: dataset.columns().to_vec(),
            row_count: dataset.len() as u64,
        }
    }

    pub fn is_valid(&self) -> bool {
        let count = |kind| self.columns.iter().filter(|c| c.kind == kind).count();
        !self.content_hash.is_empty()
            && count(ColumnKind::Id) == 1
            && count(ColumnKind::Year) == 1
            && count(ColumnKind::Region) <= 1
            && self
                .columns
                .iter()
                .all(|c| !c.name.is_empty() && ColumnKind::for_name(&c.name) == c.kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeState {
    pub mapping: Option<DimensionMapping>,
    pub filter: FilterState,
    pub viz_mode: VizMode,
    pub selected_row: Option<u64>,
    pub watchlist: Watchlist,
}

impl Default for CubeState {
    fn default() -> Self {
        Self {
            mapping: None,
            filter: FilterState::default(),
            viz_mode: VizMode::Scatter,
            selected_row: None,
            watchlist: Watchlist::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WallState {
    /// Snapshot id per layout slot; `None` marks a free slot.
    pub slots: Vec<Option<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotState {
    pub face: CubeFace,
    pub points: Vec<SnapshotPoint>,
    pub creator: ClientId,
    pub created_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjectKind {
    DataCube,
    AnalysisWall,
    Snapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ObjectState {
    DataCube(CubeState),
    AnalysisWall(WallState),
    Snapshot(SnapshotState),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedObject {
    pub id: String,
    pub transform: ObjectTransform,
    pub state: ObjectState,
}

impl SharedObject {
    pub fn kind(&self) -> ObjectKind {
        match self.state {
            ObjectState::DataCube(_) => ObjectKind::DataCube,
            ObjectState::AnalysisWall(_) => ObjectKind::AnalysisWall,
            ObjectState::Snapshot(_) => ObjectKind::Snapshot,
        }
    }
}

/// The replicated session: every shared object plus participant poses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub server_seq: u64,
    pub dataset: Option<DatasetRef>,
    pub shared_objects: BTreeMap<String, SharedObject>,
    /// Snapshot ids on the wall, in creation order.
    pub snapshots: Vec<String>,
    pub user_poses: BTreeMap<ClientId, Pose>,
}

impl Default for SessionState {
    fn default() -> Self {
        Self::initial()
    }
}

impl SessionState {
    /// A fresh session: the cube on the table and an empty wall.
    pub fn initial() -> Self {
        let mut shared_objects = BTreeMap::new();
        shared_objects.insert(
            CUBE_ID.to_string(),
            SharedObject {
                id: CUBE_ID.to_string(),
                transform: ObjectTransform::at(Vec3::new(0.0, 0.9, 0.0), 0.5),
                state: ObjectState::DataCube(CubeState::default()),
            },
        );
        shared_objects.insert(
            WALL_ID.to_string(),
            SharedObject {
                id: WALL_ID.to_string(),
                transform: ObjectTransform::at(Vec3::new(0.0, 1.5, -2.5), 1.0),
                state: ObjectState::AnalysisWall(WallState::default()),
            },
        );
        Self {
            server_seq: 0,
            dataset: None,
            shared_objects,
            snapshots: Vec::new(),
            user_poses: BTreeMap::new(),
        }
    }

    pub fn object(&self, id: &str) -> Option<&SharedObject> {
        self.shared_objects.get(id)
    }

    pub fn cube(&self) -> Option<&CubeState> {
        match &self.shared_objects.get(CUBE_ID)?.state {
            ObjectState::DataCube(cube) => Some(cube),
            _ => None,
        }
    }

    pub fn wall(&self) -> Option<&WallState> {
        match &self.shared_objects.get(WALL_ID)?.state {
            ObjectState::AnalysisWall(wall) => Some(wall),
            _ => None,
        }
    }

    pub fn snapshot(&self, id: &str) -> Option<&SnapshotState> {
        match &self.shared_objects.get(id)?.state {
            ObjectState::Snapshot(s) => Some(s),
            _ => None,
        }
    }

    /// Structural invariants; a state failing these is never accepted off
    /// the wire.
    pub fn validate(&self) -> Result<(), String> {
        for (key, object) in &self.shared_objects {
            if key != &object.id {
                return Err(format!("object key `{key}` holds id `{}`", object.id));
            }
            if !object.transform.is_valid() {
                return Err(format!("object `{key}` has an invalid transform"));
            }
            match &object.state {
                ObjectState::Snapshot(s) => {
                    if !s.points.iter().all(SnapshotPoint::is_valid) {
                        return Err(format!("snapshot `{key}` has points outside [0,1]"));
                    }
                }
                ObjectState::DataCube(cube) => cube
                    .filter
                    .validate_ranges()
                    .map_err(|e| format!("cube `{key}`: {e}"))?,
                ObjectState::AnalysisWall(_) => {}
            }
        }
        for id in &self.snapshots {
            if self.snapshot(id).is_none() {
                return Err(format!("wall lists unknown snapshot `{id}`"));
            }
        }
        if let Some(dataset) = &self.dataset {
            if !dataset.is_valid() {
                return Err("invalid dataset reference".into());
            }
        }
        for (client, pose) in &self.user_poses {
            if !pose.is_valid() {
                return Err(format!("invalid pose for {client}"));
            }
        }
        Ok(())
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over the canonical JSON rendering of the state (sorted
/// maps, declaration-order fields, shortest round-trip floats).
pub fn state_digest(state: &SessionState) -> u64 {
    let bytes = serde_json::to_vec(state).expect("session state serializes");
    bytes.iter().fold(FNV_OFFSET, |hash, &b| {
        (hash ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::viewmath::UnitQuat;

    #[test]
    fn digest_is_deterministic() {
        let s = SessionState::initial();
        assert_eq!(state_digest(&s), state_digest(&s));
        assert_eq!(state_digest(&s), state_digest(&s.clone()));
    }

    #[test]
    fn digest_sees_one_transform_component() {
        let a = SessionState::initial();
        let mut b = a.clone();
        b.shared_objects.get_mut(CUBE_ID).unwrap().transform.rigid.translation.x += 1e-9;
        assert_ne!(state_digest(&a), state_digest(&b));
    }

    #[test]
    fn digest_ignores_insertion_order() {
        let mut a = SessionState::initial();
        let mut b = SessionState::initial();
        let pose = |x| Pose::new(Vec3::new(x, 1.6, 0.0), UnitQuat::identity());
        for id in [3, 1, 2] {
            a.user_poses.insert(ClientId::from_number(id), pose(id as f64));
        }
        for id in [2, 3, 1] {
            b.user_poses.insert(ClientId::from_number(id), pose(id as f64));
        }
        let wall = b.shared_objects.remove(WALL_ID).unwrap();
        b.shared_objects.insert(WALL_ID.into(), wall);
        assert_eq!(state_digest(&a), state_digest(&b));
    }

    #[test]
    fn initial_state_is_valid() {
        assert_eq!(SessionState::initial().validate(), Ok(()));
    }
}
