use crate::viewmath::{AnchorPoint, AnchorSet, GeometryError, RigidTransform};

/// Access to the device's spatial mapping: defining anchors in the local
/// frame and locating previously defined anchors again.
pub trait SpatialSensor: Send {
    /// Anchors for a new session frame, in local coordinates.
    fn define_anchors(&mut self) -> AnchorSet;

    /// Local coordinates of the anchors in `session`, same labels.
    fn measure_anchors(&mut self, session: &AnchorSet) -> Result<AnchorSet, GeometryError>;
}

/// A room whose labelled landmarks sit at known world positions, seen by a
/// device whose local frame is `local_from_world`.
#[derive(Debug, Clone)]
pub struct SimulatedRoom {
    landmarks: AnchorSet,
    local_from_world: RigidTransform,
}

impl SimulatedRoom {
    pub fn new(landmarks: AnchorSet, local_from_world: RigidTransform) -> Self {
        Self {
            landmarks,
            local_from_world,
        }
    }

    pub fn local_from_world(&self) -> &RigidTransform {
        &self.local_from_world
    }
}

impl SpatialSensor for SimulatedRoom {
    fn define_anchors(&mut self) -> AnchorSet {
        self.landmarks.transformed(&self.local_from_world)
    }

    fn measure_anchors(&mut self, session: &AnchorSet) -> Result<AnchorSet, GeometryError> {
        let points = session
            .points()
            .iter()
            .map(|p| {
                self.landmarks
                    .get(&p.label)
                    .map(|world| AnchorPoint::new(p.label.clone(), self.local_from_world.apply(world)))
                    .ok_or(GeometryError::LabelMismatch)
            })
            .collect::<Result<Vec<_>, _>>()?;
        AnchorSet::new(points)
    }
}
