use thiserror::Error;

use super::{
    ObjectKind, ObjectState, ObjectTransform, OpPayload, SessionState, SharedObject,
    SnapshotState, CUBE_ID, WALL_ID,
};
use crate::dataset::{DimensionMapping, FilterState};
use crate::viewmath::{RigidTransform, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("expected sequence number {expected}, got {got}")]
pub struct SequenceGap {
    pub expected: u64,
    pub got: u64,
}

/// Why an op left the state untouched (apart from the sequence number).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReducerWarning {
    MissingObject(String),
    WrongKind { object: String, expected: ObjectKind },
    InvalidMapping(String),
    InvalidFilter(String),
    RowOutOfRange(u64),
    NoDataset,
}

const WALL_COLUMNS: usize = 4;

/// Placement of wall slot `slot` relative to the wall's own frame.
fn slot_offset(slot: usize) -> Vec3 {
    let column = (slot % WALL_COLUMNS) as f64;
    let row = (slot / WALL_COLUMNS) as f64;
    Vec3::new(-0.75 + 0.5 * column, 0.3 - 0.45 * row, 0.02)
}

/// Pure form of [`apply_op_in_place`].
pub fn apply_op(
    state: &SessionState,
    seq: u64,
    op: &OpPayload,
) -> Result<(SessionState, Vec<ReducerWarning>), SequenceGap> {
    let mut next = state.clone();
    let warnings = apply_op_in_place(&mut next, seq, op)?;
    Ok((next, warnings))
}

/// Applies `op` as the op numbered `seq`. Ops that cannot apply (missing
/// object, wrong kind, schema mismatch) leave everything but `server_seq`
/// unchanged and report why.
pub fn apply_op_in_place(
    state: &mut SessionState,
    seq: u64,
    op: &OpPayload,
) -> Result<Vec<ReducerWarning>, SequenceGap> {
    let expected = state.server_seq + 1;
    if seq != expected {
        return Err(SequenceGap { expected, got: seq });
    }
    state.server_seq = seq;
    let mut warnings = Vec::new();
    if let Err(w) = mutate(state, seq, op) {
        log::debug!("op {seq} ({}) ignored: {w:?}", op.name());
        warnings.push(w);
    }
    Ok(warnings)
}

fn cube_mut<'a>(
    state: &'a mut SessionState,
    object: &str,
) -> Result<&'a mut super::CubeState, ReducerWarning> {
    match state.shared_objects.get_mut(object) {
        None => Err(ReducerWarning::MissingObject(object.to_string())),
        Some(SharedObject {
            state: ObjectState::DataCube(cube),
            ..
        }) => Ok(cube),
        Some(_) => Err(ReducerWarning::WrongKind {
            object: object.to_string(),
            expected: ObjectKind::DataCube,
        }),
    }
}

fn check_mapping(state: &SessionState, mapping: &DimensionMapping) -> Result<(), ReducerWarning> {
    let dataset = state.dataset.as_ref().ok_or(ReducerWarning::NoDataset)?;
    mapping
        .validate(&dataset.columns)
        .map_err(|e| ReducerWarning::InvalidMapping(e.to_string()))
}

fn check_filter(state: &SessionState, filter: &FilterState) -> Result<(), ReducerWarning> {
    match &state.dataset {
        Some(dataset) => filter
            .validate(&dataset.columns)
            .map_err(|e| ReducerWarning::InvalidFilter(e.to_string())),
        None if filter.numeric_ranges.is_empty() => filter
            .validate_ranges()
            .map_err(|e| ReducerWarning::InvalidFilter(e.to_string())),
        None => Err(ReducerWarning::NoDataset),
    }
}

fn mutate(state: &mut SessionState, seq: u64, op: &OpPayload) -> Result<(), ReducerWarning> {
    match op {
        OpPayload::SetTransform { object, transform } => {
            let target = state
                .shared_objects
                .get_mut(object)
                .ok_or_else(|| ReducerWarning::MissingObject(object.clone()))?;
            target.transform = *transform;
        }
        OpPayload::SetMapping { object, mapping } => {
            check_mapping(state, mapping)?;
            cube_mut(state, object)?.mapping = Some(mapping.clone());
        }
        OpPayload::SetFilter { object, filter } => {
            check_filter(state, filter)?;
            cube_mut(state, object)?.filter = filter.clone();
        }
        OpPayload::SetVizMode { object, mode } => {
            cube_mut(state, object)?.viz_mode = *mode;
        }
        OpPayload::SelectRow { object, row } => {
            if let Some(row) = row {
                let rows = state.dataset.as_ref().ok_or(ReducerWarning::NoDataset)?.row_count;
                if *row >= rows {
                    return Err(ReducerWarning::RowOutOfRange(*row));
                }
            }
            cube_mut(state, object)?.selected_row = *row;
        }
        OpPayload::WatchlistAdd {
            object,
            individual_id,
            added_at,
        } => {
            cube_mut(state, object)?
                .watchlist
                .insert(individual_id, *added_at);
        }
        OpPayload::WatchlistRemove {
            object,
            individual_id,
        } => {
            cube_mut(state, object)?.watchlist.remove(individual_id);
        }
        OpPayload::CreateSnapshot {
            face,
            points,
            creator,
            created_at,
        } => {
            let id = format!("snapshot-{seq}");
            let wall_object = state
                .shared_objects
                .get_mut(WALL_ID)
                .ok_or_else(|| ReducerWarning::MissingObject(WALL_ID.into()))?;
            let wall_transform = wall_object.transform;
            let ObjectState::AnalysisWall(wall) = &mut wall_object.state else {
                return Err(ReducerWarning::WrongKind {
                    object: WALL_ID.into(),
                    expected: ObjectKind::AnalysisWall,
                });
            };
            let slot = match wall.slots.iter().position(Option::is_none) {
                Some(free) => {
                    wall.slots[free] = Some(id.clone());
                    free
                }
                None => {
                    wall.slots.push(Some(id.clone()));
                    wall.slots.len() - 1
                }
            };
            let placement = wall_transform
                .rigid
                .compose(&RigidTransform::from_translation(slot_offset(slot) * wall_transform.scale));
            state.shared_objects.insert(
                id.clone(),
                SharedObject {
                    id: id.clone(),
                    transform: ObjectTransform::new(placement, 0.4 * wall_transform.scale),
                    state: ObjectState::Snapshot(SnapshotState {
                        face: *face,
                        points: points.clone(),
                        creator: creator.clone(),
                        created_at: *created_at,
                    }),
                },
            );
            state.snapshots.push(id);
        }
        OpPayload::DeleteSnapshot { snapshot } => {
            match state.shared_objects.get(snapshot) {
                None => return Err(ReducerWarning::MissingObject(snapshot.clone())),
                Some(o) if o.kind() != ObjectKind::Snapshot => {
                    return Err(ReducerWarning::WrongKind {
                        object: snapshot.clone(),
                        expected: ObjectKind::Snapshot,
                    })
                }
                Some(_) => {}
            }
            state.shared_objects.remove(snapshot);
            state.snapshots.retain(|s| s != snapshot);
            for object in state.shared_objects.values_mut() {
                if let ObjectState::AnalysisWall(wall) = &mut object.state {
                    for slot in wall.slots.iter_mut() {
                        if slot.as_deref() == Some(snapshot.as_str()) {
                            *slot = None;
                        }
                    }
                }
            }
        }
        OpPayload::SetUserPose { client, pose } => {
            state.user_poses.insert(client.clone(), *pose);
        }
        OpPayload::RemoveUserPose { client } => {
            state.user_poses.remove(client);
        }
        OpPayload::LoadDataset { dataset } => {
            state.dataset = Some(dataset.clone());
            let cube = cube_mut(state, CUBE_ID)?;
            cube.mapping = DimensionMapping::default_for(&dataset.columns);
            cube.filter = FilterState::default();
            cube.selected_row = None;
            cube.watchlist = Default::default();
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ColumnDescriptor;
    use crate::protocol::{state_digest, ClientId, DatasetRef, VizMode};
    use crate::viewmath::{Axis, CubeFace, FaceSign, Pose, SnapshotPoint, UnitQuat};

    fn dataset_ref() -> DatasetRef {
        DatasetRef {
            content_hash: "abc".into(),
            columns: ["id", "year", "zipcode", "glucose", "bmi"]
                .into_iter()
                .map(ColumnDescriptor::new)
                .collect(),
            row_count: 10,
        }
    }

    fn loaded() -> SessionState {
        apply_op(
            &SessionState::initial(),
            1,
            &OpPayload::LoadDataset { dataset: dataset_ref() },
        )
        .unwrap()
        .0
    }

    fn snapshot_op() -> OpPayload {
        OpPayload::CreateSnapshot {
            face: CubeFace::new(Axis::Z, FaceSign::Neg),
            points: vec![SnapshotPoint { u: 0.1, v: 0.2, color_t: 0.3, size_t: 0.4 }],
            creator: ClientId::from_number(1),
            created_at: 1000,
        }
    }

    #[test]
    fn sequence_must_be_contiguous() {
        let s = SessionState::initial();
        let op = OpPayload::SetVizMode { object: CUBE_ID.into(), mode: VizMode::BarChart };
        assert_eq!(apply_op(&s, 2, &op).unwrap_err(), SequenceGap { expected: 1, got: 2 });
        assert_eq!(apply_op(&s, 0, &op).unwrap_err(), SequenceGap { expected: 1, got: 0 });
    }

    #[test]
    fn later_filter_wins() {
        let mut s = loaded();
        for seq in 2..=4 {
            s = apply_op(&s, seq, &OpPayload::SetVizMode { object: CUBE_ID.into(), mode: VizMode::Scatter })
                .unwrap()
                .0;
        }
        let first = FilterState::default().with_range("glucose", 0.0, 10.0);
        let second = FilterState::default().with_range("glucose", 5.0, 6.0);
        let (s, _) = apply_op(&s, 5, &OpPayload::SetFilter { object: CUBE_ID.into(), filter: first }).unwrap();
        let (s, _) = apply_op(&s, 6, &OpPayload::SetFilter { object: CUBE_ID.into(), filter: second.clone() }).unwrap();
        assert_eq!(s.cube().unwrap().filter, second);
        assert_eq!(s.server_seq, 6);
    }

    #[test]
    fn transform_on_deleted_snapshot_is_a_noop() {
        let s = loaded();
        let (s, _) = apply_op(&s, 2, &snapshot_op()).unwrap();
        assert_eq!(s.snapshots, vec!["snapshot-2".to_string()]);
        let (s, _) = apply_op(&s, 3, &OpPayload::DeleteSnapshot { snapshot: "snapshot-2".into() }).unwrap();
        assert!(s.snapshots.is_empty());
        assert_eq!(s.wall().unwrap().slots, vec![None]);
        let op = OpPayload::SetTransform {
            object: "snapshot-2".into(),
            transform: ObjectTransform::at(Vec3::new(1.0, 1.0, 1.0), 1.0),
        };
        let (after, warnings) = apply_op(&s, 4, &op).unwrap();
        assert_eq!(warnings, vec![ReducerWarning::MissingObject("snapshot-2".into())]);
        let mut expected = s.clone();
        expected.server_seq = 4;
        assert_eq!(after, expected);
    }

    #[test]
    fn snapshots_reuse_free_slots() {
        let s = loaded();
        let (s, _) = apply_op(&s, 2, &snapshot_op()).unwrap();
        let (s, _) = apply_op(&s, 3, &snapshot_op()).unwrap();
        let (s, _) = apply_op(&s, 4, &OpPayload::DeleteSnapshot { snapshot: "snapshot-2".into() }).unwrap();
        let (s, _) = apply_op(&s, 5, &snapshot_op()).unwrap();
        assert_eq!(
            s.wall().unwrap().slots,
            vec![Some("snapshot-5".to_string()), Some("snapshot-3".to_string())]
        );
        assert_eq!(s.snapshots, vec!["snapshot-3".to_string(), "snapshot-5".to_string()]);
        assert_eq!(s.validate(), Ok(()));
    }

    #[test]
    fn mapping_must_match_schema() {
        let s = SessionState::initial();
        let op = OpPayload::SetMapping { object: CUBE_ID.into(), mapping: DimensionMapping::uniform("glucose") };
        let (_, w) = apply_op(&s, 1, &op).unwrap();
        assert_eq!(w, vec![ReducerWarning::NoDataset]);
        let s = loaded();
        let (next, w) = apply_op(&s, 2, &op).unwrap();
        assert!(w.is_empty());
        assert_eq!(next.cube().unwrap().mapping, Some(DimensionMapping::uniform("glucose")));
        let bad = OpPayload::SetMapping { object: CUBE_ID.into(), mapping: DimensionMapping::uniform("zipcode") };
        let (_, w) = apply_op(&s, 2, &bad).unwrap();
        assert!(matches!(w[0], ReducerWarning::InvalidMapping(_)));
    }

    #[test]
    fn load_dataset_sets_default_mapping() {
        let s = loaded();
        let cube = s.cube().unwrap();
        let mapping = cube.mapping.as_ref().unwrap();
        assert_eq!(mapping.channels(), ["glucose", "bmi", "glucose", "bmi", "glucose"]);
    }

    #[test]
    fn poses_and_rows() {
        let s = loaded();
        let client = ClientId::from_number(3);
        let pose = Pose::new(Vec3::new(1.0, 1.7, 2.0), UnitQuat::identity());
        let (s, _) = apply_op(&s, 2, &OpPayload::SetUserPose { client: client.clone(), pose }).unwrap();
        assert_eq!(s.user_poses[&client], pose);
        let (s, w) = apply_op(&s, 3, &OpPayload::SelectRow { object: CUBE_ID.into(), row: Some(10) }).unwrap();
        assert_eq!(w, vec![ReducerWarning::RowOutOfRange(10)]);
        let (s, _) = apply_op(&s, 4, &OpPayload::SelectRow { object: CUBE_ID.into(), row: Some(9) }).unwrap();
        assert_eq!(s.cube().unwrap().selected_row, Some(9));
        let (s, _) = apply_op(&s, 5, &OpPayload::RemoveUserPose { client }).unwrap();
        assert!(s.user_poses.is_empty());
    }

    #[test]
    fn watchlist_ops_are_idempotent() {
        let s = loaded();
        let add = OpPayload::WatchlistAdd { object: CUBE_ID.into(), individual_id: "p1".into(), added_at: 5 };
        let (s, _) = apply_op(&s, 2, &add).unwrap();
        let (s, _) = apply_op(&s, 3, &add).unwrap();
        assert_eq!(s.cube().unwrap().watchlist.len(), 1);
        let remove = OpPayload::WatchlistRemove { object: CUBE_ID.into(), individual_id: "p1".into() };
        let (s, _) = apply_op(&s, 4, &remove).unwrap();
        assert!(s.cube().unwrap().watchlist.is_empty());
        let (wrong, w) = apply_op(&s, 5, &OpPayload::WatchlistAdd { object: WALL_ID.into(), individual_id: "p1".into(), added_at: 1 }).unwrap();
        assert!(matches!(w[0], ReducerWarning::WrongKind { .. }));
        assert_eq!(state_digest(&wrong.clone()), state_digest(&wrong));
    }
}
