use serde::{Deserialize, Serialize};

use super::{UnitQuat, Vec3};
use crate::dataset::NormalizedPoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FaceSign {
    Pos,
    Neg,
}

impl FaceSign {
    pub fn value(self) -> f64 {
        match self {
            FaceSign::Pos => 1.0,
            FaceSign::Neg => -1.0,
        }
    }
}

/// One of the six faces of the cube, named by its outward normal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CubeFace {
    pub axis: Axis,
    pub sign: FaceSign,
}

impl CubeFace {
    /// Enumeration order, which is also the tie-break order.
    pub const ALL: [CubeFace; 6] = [
        CubeFace::new(Axis::X, FaceSign::Pos),
        CubeFace::new(Axis::X, FaceSign::Neg),
        CubeFace::new(Axis::Y, FaceSign::Pos),
        CubeFace::new(Axis::Y, FaceSign::Neg),
        CubeFace::new(Axis::Z, FaceSign::Pos),
        CubeFace::new(Axis::Z, FaceSign::Neg),
    ];

    pub const fn new(axis: Axis, sign: FaceSign) -> Self {
        Self { axis, sign }
    }

    /// Outward normal in cube-local coordinates.
    pub fn local_normal(&self) -> Vec3 {
        let mut n = Vec3::zeros();
        n[self.axis.index()] = self.sign.value();
        n
    }

    /// The two axes kept on this face, in X < Y < Z order.
    pub fn retained_axes(&self) -> (Axis, Axis) {
        match self.axis {
            Axis::X => (Axis::Y, Axis::Z),
            Axis::Y => (Axis::X, Axis::Z),
            Axis::Z => (Axis::X, Axis::Y),
        }
    }

    /// Whether the snapshot's first coordinate is flipped (u → 1 − u).
    pub fn mirrors_u(&self) -> bool {
        self.sign == FaceSign::Pos
    }

    pub fn opposite(&self) -> CubeFace {
        let sign = match self.sign {
            FaceSign::Pos => FaceSign::Neg,
            FaceSign::Neg => FaceSign::Pos,
        };
        CubeFace::new(self.axis, sign)
    }
}

/// The face whose rotated outward normal points most against `view_dir`,
/// i.e. the face turned toward the viewer.
pub fn select_face(view_dir: &Vec3, cube_rotation: &UnitQuat) -> CubeFace {
    // dot(view, R n) = dot(Rᵀ view, n): compare in the cube's own frame.
    let local = cube_rotation.inverse_transform_vector(view_dir);
    let mut best = CubeFace::ALL[0];
    let mut best_score = f64::INFINITY;
    for face in CubeFace::ALL {
        let score = face.sign.value() * local[face.axis.index()];
        if score < best_score {
            best = face;
            best_score = score;
        }
    }
    best
}

/// A point of a frozen 2D snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnapshotPoint {
    pub u: f64,
    pub v: f64,
    pub color_t: f64,
    pub size_t: f64,
}

impl SnapshotPoint {
    pub fn is_valid(&self) -> bool {
        [self.u, self.v, self.color_t, self.size_t]
            .iter()
            .all(|c| (0.0..=1.0).contains(c))
    }
}

/// Drops the face's normal axis. Faces on the positive side of their axis
/// flip `u`, so the two snapshots of opposite faces are mirror images.
pub fn project_snapshot(points: &[NormalizedPoint], face: CubeFace) -> Vec<SnapshotPoint> {
    let (u_axis, v_axis) = face.retained_axes();
    points
        .iter()
        .map(|p| {
            let u = p.position[u_axis.index()];
            SnapshotPoint {
                u: if face.mirrors_u() { 1.0 - u } else { u },
                v: p.position[v_axis.index()],
                color_t: p.color_t,
                size_t: p.size_t,
            }
        })
        .collect()
}
