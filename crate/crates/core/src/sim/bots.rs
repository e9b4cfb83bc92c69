use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{apply_filters, project_points, Dataset, DimensionMapping, FilterState};
use crate::protocol::{ClientId, ObjectKind, ObjectTransform, OpPayload, SessionState, VizMode, CUBE_ID};
use crate::viewmath::{project_snapshot, select_face, Pose, RigidTransform, UnitQuat, Vec3};

/// Picks plausible random ops against the current replica, the way a
/// restless analyst would: moving things, re-filtering, snapshotting.
#[derive(Debug, Clone)]
pub struct BotBrain {
    rng: ChaCha8Rng,
    dataset: Arc<Dataset>,
}

impl BotBrain {
    pub fn new(seed: u64, dataset: Arc<Dataset>) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            dataset,
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    fn unit_quat(&mut self) -> UnitQuat {
        UnitQuat::from_euler_angles(
            self.rng.random_range(-3.1..3.1),
            self.rng.random_range(-1.5..1.5),
            self.rng.random_range(-3.1..3.1),
        )
    }

    fn numeric_column(&mut self) -> String {
        let names: Vec<&str> = self.dataset.numeric_columns().map(|c| c.name.as_str()).collect();
        names.choose(&mut self.rng).expect("dataset has numeric columns").to_string()
    }

    fn random_filter(&mut self) -> FilterState {
        let mut filter = FilterState::default();
        for _ in 0..self.rng.random_range(0..3) {
            let column = self.numeric_column();
            let slot = self.dataset.numeric_slot(&column).expect("numeric");
            let values: Vec<f64> = self.dataset.rows().iter().map(|r| r.values[slot]).collect();
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let a = self.rng.random_range(0.0..=0.6);
            let b = self.rng.random_range(a..=1.0);
            // keep two decimals so the filter survives text round trips
            let at = |f: f64| ((lo + f * (hi - lo)) * 100.0).round() / 100.0;
            filter = filter.with_range(&column, at(a), at(b).max(at(a)));
        }
        if self.rng.random_bool(0.3) {
            let lo = self.rng.random_range(2015..2025);
            filter = filter.with_years(lo, lo + self.rng.random_range(0..6));
        }
        filter
    }

    fn individual(&mut self) -> String {
        let ids: Vec<&String> = self.dataset.individuals().keys().collect();
        ids.choose(&mut self.rng).map(|s| s.to_string()).unwrap_or_else(|| "p00001".into())
    }

    /// A random op for client `me`, timestamped `now`.
    pub fn next_op(&mut self, replica: &SessionState, me: &ClientId, now: u64) -> OpPayload {
        let roll = self.rng.random_range(0..100);
        match roll {
            0..20 => {
                let mut ids: Vec<&String> = replica.shared_objects.keys().collect();
                if self.rng.random_bool(0.05) {
                    ids.clear();
                }
                let object = ids
                    .choose(&mut self.rng)
                    .map(|s| s.to_string())
                    .unwrap_or_else(|| "snapshot-0".into());
                let position = Vec3::new(
                    self.rng.random_range(-2.0..2.0),
                    self.rng.random_range(0.0..2.5),
                    self.rng.random_range(-3.0..1.0),
                );
                let rotation = self.unit_quat();
                OpPayload::SetTransform {
                    object,
                    transform: ObjectTransform::new(
                        RigidTransform::new(rotation, position),
                        self.rng.random_range(0.1..1.5),
                    ),
                }
            }
            20..32 => OpPayload::SetFilter {
                object: CUBE_ID.into(),
                filter: self.random_filter(),
            },
            32..40 => {
                let mut mapping = DimensionMapping::uniform(&self.numeric_column());
                mapping.y = self.numeric_column();
                mapping.z = self.numeric_column();
                mapping.color = self.numeric_column();
                mapping.size = self.numeric_column();
                mapping.traces_enabled = self.rng.random_bool(0.5);
                OpPayload::SetMapping {
                    object: CUBE_ID.into(),
                    mapping,
                }
            }
            40..46 => OpPayload::SetVizMode {
                object: CUBE_ID.into(),
                mode: if self.rng.random_bool(0.5) { VizMode::Scatter } else { VizMode::BarChart },
            },
            46..58 => OpPayload::SelectRow {
                object: CUBE_ID.into(),
                row: self
                    .rng
                    .random_bool(0.8)
                    .then(|| self.rng.random_range(0..self.dataset.len().max(1) as u64)),
            },
            58..66 => OpPayload::WatchlistAdd {
                object: CUBE_ID.into(),
                individual_id: self.individual(),
                added_at: now,
            },
            66..71 => OpPayload::WatchlistRemove {
                object: CUBE_ID.into(),
                individual_id: self.individual(),
            },
            71..79 => self.snapshot(replica, me, now),
            79..85 => {
                let snapshots: Vec<&String> = replica
                    .shared_objects
                    .values()
                    .filter(|o| o.kind() == ObjectKind::Snapshot)
                    .map(|o| &o.id)
                    .collect();
                let snapshot = snapshots
                    .choose(&mut self.rng)
                    .map(|s| s.to_string())
                    .unwrap_or_else(|| "snapshot-0".into());
                OpPayload::DeleteSnapshot { snapshot }
            }
            _ => OpPayload::SetUserPose {
                client: me.clone(),
                pose: Pose::new(
                    Vec3::new(
                        self.rng.random_range(-2.0..2.0),
                        self.rng.random_range(1.4..1.9),
                        self.rng.random_range(-2.0..2.0),
                    ),
                    self.unit_quat(),
                ),
            },
        }
    }

    /// Freezes the currently visible points as seen from a random direction.
    fn snapshot(&mut self, replica: &SessionState, me: &ClientId, now: u64) -> OpPayload {
        let cube = replica.cube().cloned().unwrap_or_default();
        let mapping = cube
            .mapping
            .clone()
            .or_else(|| DimensionMapping::default_for(self.dataset.columns()))
            .expect("numeric columns");
        let visible = apply_filters(&self.dataset, &cube.filter).unwrap_or_default();
        let points = project_points(&self.dataset, &mapping, &visible).unwrap_or_default();
        let view = Vec3::new(
            self.rng.random_range(-1.0..1.0),
            self.rng.random_range(-1.0..1.0),
            self.rng.random_range(-1.0..1.0),
        );
        let rotation = replica
            .object(CUBE_ID)
            .map_or_else(UnitQuat::identity, |o| o.transform.rigid.rotation);
        let face = select_face(&view, &rotation);
        OpPayload::CreateSnapshot {
            face,
            points: project_snapshot(&points, face),
            creator: me.clone(),
            created_at: now,
        }
    }
}
