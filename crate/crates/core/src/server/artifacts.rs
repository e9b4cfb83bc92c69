use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use thiserror::Error;

use crate::dataset::{watchlist_export, Dataset, DatasetError};
use crate::protocol::{ClientId, SessionState};
use crate::viewmath::{CubeFace, SnapshotPoint};

/// Source of wall-clock milliseconds, injectable so exports are repeatable.
pub trait Clock {
    fn now_millis(&self) -> u64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_millis(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_millis() as u64)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub u64);

impl Clock for FixedClock {
    fn now_millis(&self) -> u64 {
        self.0
    }
}

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("storage unavailable at {path}: {source}")]
    StorageUnavailable { path: PathBuf, source: io::Error },
    #[error("session has no loaded dataset")]
    NoDataset,
    #[error("loaded dataset does not match the session's dataset reference")]
    DatasetMismatch,
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// On-disk form of one snapshot.
#[derive(Debug, Serialize)]
struct SnapshotFile<'a> {
    id: &'a str,
    face: CubeFace,
    creator: &'a ClientId,
    created_at: u64,
    exported_at: u64,
    points: &'a [SnapshotPoint],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtifactSummary {
    pub session_dir: PathBuf,
    pub snapshot_files: Vec<PathBuf>,
    pub watchlist_file: PathBuf,
}

fn storage(path: &Path) -> impl FnOnce(io::Error) -> ArtifactError + '_ {
    move |source| ArtifactError::StorageUnavailable {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `<root>/<session>/snapshots/<id>.snap` for every live snapshot and
/// `<root>/<session>/watchlist.csv`. Snapshot files of deleted snapshots are
/// removed so the directory mirrors the session.
pub fn write_artifacts(
    root: &Path,
    session_id: &str,
    state: &SessionState,
    dataset: Option<&Dataset>,
    clock: &dyn Clock,
) -> Result<ArtifactSummary, ArtifactError> {
    let dataset = dataset.ok_or(ArtifactError::NoDataset)?;
    match &state.dataset {
        Some(reference) if reference.content_hash == dataset.content_hash() => {}
        _ => return Err(ArtifactError::DatasetMismatch),
    }
    let session_dir = root.join(session_id);
    let snapshot_dir = session_dir.join("snapshots");
    fs::create_dir_all(&snapshot_dir).map_err(storage(&snapshot_dir))?;

    let exported_at = clock.now_millis();
    let mut snapshot_files = Vec::new();
    for id in &state.snapshots {
        let Some(snapshot) = state.snapshot(id) else { continue };
        let file = SnapshotFile {
            id,
            face: snapshot.face,
            creator: &snapshot.creator,
            created_at: snapshot.created_at,
            exported_at,
            points: &snapshot.points,
        };
        let mut text = serde_json::to_string_pretty(&file).expect("snapshot serializes");
        text.push('\n');
        let path = snapshot_dir.join(format!("{id}.snap"));
        fs::write(&path, text).map_err(storage(&path))?;
        snapshot_files.push(path);
    }
    for entry in fs::read_dir(&snapshot_dir).map_err(storage(&snapshot_dir))? {
        let path = entry.map_err(storage(&snapshot_dir))?.path();
        if path.extension().is_some_and(|e| e == "snap") && !snapshot_files.contains(&path) {
            fs::remove_file(&path).map_err(storage(&path))?;
        }
    }

    let watchlist = state.cube().map(|c| c.watchlist.clone()).unwrap_or_default();
    let watchlist_file = session_dir.join("watchlist.csv");
    fs::write(&watchlist_file, watchlist_export(&watchlist, dataset)?)
        .map_err(storage(&watchlist_file))?;
    Ok(ArtifactSummary {
        session_dir,
        snapshot_files,
        watchlist_file,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::dataset::synth::{generate_population, PopulationSpec};
    use crate::protocol::{apply_op_in_place, OpPayload, CUBE_ID};
    use crate::server::{Server, ServerConfig};
    use crate::viewmath::{Axis, FaceSign};

    fn session() -> (SessionState, Arc<Dataset>) {
        let dataset = Arc::new(generate_population(&PopulationSpec { individuals: 6, seed: 2, ..PopulationSpec::default() }));
        let mut server = Server::new(ServerConfig::new("s1"));
        server.load_dataset(dataset.clone());
        (server.state().clone(), dataset)
    }

    fn apply(state: &mut SessionState, op: OpPayload) {
        let seq = state.server_seq + 1;
        apply_op_in_place(state, seq, &op).unwrap();
    }

    fn snapshot(creator: u64) -> OpPayload {
        OpPayload::CreateSnapshot {
            face: CubeFace::new(Axis::Z, FaceSign::Neg),
            points: vec![SnapshotPoint { u: 0.25, v: 0.5, color_t: 0.0, size_t: 1.0 }],
            creator: ClientId::from_number(creator),
            created_at: 1000 + creator,
        }
    }

    #[test]
    fn writes_one_file_per_snapshot_and_a_watchlist() {
        let (mut state, dataset) = session();
        apply(&mut state, snapshot(1));
        apply(&mut state, snapshot(2));
        let (id, rows) = dataset.individuals().iter().next().unwrap();
        let (id, records) = (id.clone(), rows.len());
        apply(&mut state, OpPayload::WatchlistAdd { object: CUBE_ID.into(), individual_id: id.clone(), added_at: 5 });
        let dir = tempfile::tempdir().unwrap();
        let summary = write_artifacts(dir.path(), "s1", &state, Some(&dataset), &FixedClock(99)).unwrap();
        assert_eq!(summary.snapshot_files.len(), 2);
        let text = fs::read_to_string(&summary.snapshot_files[0]).unwrap();
        let json: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(json["exported_at"], 99);
        assert_eq!(json["points"].as_array().unwrap().len(), 1);
        let csv = fs::read_to_string(&summary.watchlist_file).unwrap();
        assert_eq!(csv.lines().count(), 1 + records);
        assert!(csv.contains(&id));
    }

    #[test]
    fn empty_session_writes_header_only() {
        let (state, dataset) = session();
        let dir = tempfile::tempdir().unwrap();
        let summary = write_artifacts(dir.path(), "s1", &state, Some(&dataset), &FixedClock(0)).unwrap();
        assert!(summary.snapshot_files.is_empty());
        let csv = fs::read_to_string(&summary.watchlist_file).unwrap();
        assert_eq!(csv.lines().count(), 1);
    }

    #[test]
    fn rewriting_is_byte_identical_and_prunes_deleted() {
        let (mut state, dataset) = session();
        apply(&mut state, snapshot(1));
        apply(&mut state, snapshot(2));
        let dir = tempfile::tempdir().unwrap();
        let first = write_artifacts(dir.path(), "s1", &state, Some(&dataset), &FixedClock(7)).unwrap();
        let bytes: Vec<Vec<u8>> = first.snapshot_files.iter().map(|p| fs::read(p).unwrap()).collect();
        let second = write_artifacts(dir.path(), "s1", &state, Some(&dataset), &FixedClock(7)).unwrap();
        assert_eq!(first, second);
        let again: Vec<Vec<u8>> = second.snapshot_files.iter().map(|p| fs::read(p).unwrap()).collect();
        assert_eq!(bytes, again);

        let gone = state.snapshots[0].clone();
        apply(&mut state, OpPayload::DeleteSnapshot { snapshot: gone.clone() });
        let third = write_artifacts(dir.path(), "s1", &state, Some(&dataset), &FixedClock(7)).unwrap();
        assert_eq!(third.snapshot_files.len(), 1);
        assert!(!first.session_dir.join("snapshots").join(format!("{gone}.snap")).exists());
    }

    #[test]
    fn unwritable_root_is_reported() {
        let (state, dataset) = session();
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let err = write_artifacts(&blocker, "s1", &state, Some(&dataset), &FixedClock(0)).unwrap_err();
        assert!(matches!(err, ArtifactError::StorageUnavailable { .. }));
        assert!(matches!(write_artifacts(dir.path(), "s1", &state, None, &FixedClock(0)), Err(ArtifactError::NoDataset)));
    }
}
