use serde::{Deserialize, Serialize};

use crate::viewmath::{Pose, RigidTransform, UnitQuat, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InputMode {
    GazeTap,
    RayPointer,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PointerSource {
    HandVisible,
    HandHidden,
    AirTap,
    ControllerButton,
    ControllerOrientation(UnitQuat),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointerEvent {
    pub source: PointerSource,
    pub timestamp: u64,
}

/// Active mode plus whether a hand is currently in the field of view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct InputState {
    pub mode: InputMode,
    pub hand_visible: bool,
}

impl Default for InputState {
    fn default() -> Self {
        Self {
            mode: InputMode::GazeTap,
            hand_visible: false,
        }
    }
}

/// A visible hand selects gaze-and-tap; controller activity selects the
/// laser pointer unless a hand is in view. Everything else keeps the mode.
pub fn arbitrate_input(current: InputState, event: &PointerEvent) -> InputState {
    match event.source {
        PointerSource::HandVisible => InputState {
            mode: InputMode::GazeTap,
            hand_visible: true,
        },
        PointerSource::HandHidden => InputState {
            hand_visible: false,
            ..current
        },
        PointerSource::ControllerButton | PointerSource::ControllerOrientation(_)
            if !current.hand_visible =>
        {
            InputState {
                mode: InputMode::RayPointer,
                ..current
            }
        }
        _ => current,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit length.
    pub direction: Vec3,
}

/// The controller has no position of its own; its ray starts at this
/// offset from the head, in head coordinates (right, down).
pub fn controller_ray_offset() -> Vec3 {
    Vec3::new(0.2, -0.2, 0.0)
}

/// Pointing ray in the session frame. `None` for a ray-pointer without a
/// controller orientation.
pub fn pointer_ray(
    mode: InputMode,
    head: &Pose,
    controller: Option<&UnitQuat>,
    alignment: &RigidTransform,
) -> Option<Ray> {
    let (origin, direction) = match mode {
        InputMode::GazeTap => (head.position, head.forward()),
        InputMode::RayPointer => {
            let controller = controller?;
            (
                head.position + head.orientation * controller_ray_offset(),
                controller * -Vec3::z(),
            )
        }
    };
    Some(Ray {
        origin: alignment.apply(&origin),
        direction: alignment.apply_vector(&direction).normalize(),
    })
}
