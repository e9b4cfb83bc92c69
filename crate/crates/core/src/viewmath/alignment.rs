use std::collections::BTreeSet;

use nalgebra::{Matrix3, Matrix3xX, Rotation3};
use serde::{Deserialize, Serialize};

use super::{GeometryError, RigidTransform, UnitQuat, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorPoint {
    pub label: String,
    pub position: Vec3,
}

impl AnchorPoint {
    pub fn new(label: impl Into<String>, position: Vec3) -> Self {
        Self {
            label: label.into(),
            position,
        }
    }
}

/// Labeled reference points, at least three and not collinear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<AnchorPoint>", into = "Vec<AnchorPoint>")]
pub struct AnchorSet {
    points: Vec<AnchorPoint>,
}

const DEGENERACY_THRESHOLD: f64 = 1e-9;

fn centered(points: &[Vec3]) -> (Vec3, Matrix3xX<f64>) {
    let centroid = points.iter().sum::<Vec3>() / points.len() as f64;
    let columns: Vec<Vec3> = points.iter().map(|p| p - centroid).collect();
    (centroid, Matrix3xX::from_columns(&columns))
}

impl AnchorSet {
    pub fn new(points: Vec<AnchorPoint>) -> Result<Self, GeometryError> {
        if points.len() < 3 {
            return Err(GeometryError::TooFewAnchors(points.len()));
        }
        let mut labels = BTreeSet::new();
        for p in &points {
            if !labels.insert(p.label.as_str()) {
                return Err(GeometryError::DuplicateLabel(p.label.clone()));
            }
            if !p.position.iter().all(|c| c.is_finite()) {
                return Err(GeometryError::NonFinite);
            }
        }
        let positions: Vec<Vec3> = points.iter().map(|p| p.position).collect();
        let (_, matrix) = centered(&positions);
        let mut singular: Vec<f64> = matrix.singular_values().iter().copied().collect();
        singular.sort_by(|a, b| b.total_cmp(a));
        // Rank two suffices: coplanar anchors still pin down a rotation.
        if singular.get(1).is_none_or(|s| *s <= DEGENERACY_THRESHOLD) {
            return Err(GeometryError::DegenerateAnchors);
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[AnchorPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn get(&self, label: &str) -> Option<&Vec3> {
        self.points
            .iter()
            .find(|p| p.label == label)
            .map(|p| &p.position)
    }

    /// The same labeled points expressed through `transform`.
    pub fn transformed(&self, transform: &RigidTransform) -> AnchorSet {
        AnchorSet {
            points: self
                .points
                .iter()
                .map(|p| AnchorPoint::new(p.label.clone(), transform.apply(&p.position)))
                .collect(),
        }
    }

    /// Label-matched position pairs `(local, session)`.
    fn correspondences(
        session: &AnchorSet,
        local: &AnchorSet,
    ) -> Result<(Vec<Vec3>, Vec<Vec3>), GeometryError> {
        if session.len() != local.len() {
            return Err(GeometryError::LabelMismatch);
        }
        session
            .points
            .iter()
            .map(|s| {
                local
                    .get(&s.label)
                    .map(|l| (*l, s.position))
                    .ok_or(GeometryError::LabelMismatch)
            })
            .collect::<Result<Vec<_>, _>>()
            .map(|pairs| pairs.into_iter().unzip())
    }
}

impl TryFrom<Vec<AnchorPoint>> for AnchorSet {
    type Error = GeometryError;

    fn try_from(points: Vec<AnchorPoint>) -> Result<Self, Self::Error> {
        AnchorSet::new(points)
    }
}

impl From<AnchorSet> for Vec<AnchorPoint> {
    fn from(set: AnchorSet) -> Self {
        set.points
    }
}

/// Least-squares rigid transform taking `local` anchor positions onto the
/// matching `session` positions (Kabsch, reflections excluded).
pub fn solve_alignment(
    session: &AnchorSet,
    local: &AnchorSet,
) -> Result<RigidTransform, GeometryError> {
    let (local_pts, session_pts) = AnchorSet::correspondences(session, local)?;
    let (local_centroid, local_m) = centered(&local_pts);
    let (session_centroid, session_m) = centered(&session_pts);

    let covariance: Matrix3<f64> = &local_m * session_m.transpose();
    let svd = covariance.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(GeometryError::DegenerateAnchors),
    };
    let v = v_t.transpose();
    let reflection = (v * u.transpose()).determinant().signum();
    let correction = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, reflection));
    let rotation_matrix = v * correction * u.transpose();
    if !rotation_matrix.iter().all(|c| c.is_finite()) {
        return Err(GeometryError::NonFinite);
    }

    let rotation =
        UnitQuat::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rotation_matrix));
    let rotation = UnitQuat::new_normalize(rotation.into_inner());
    let translation = session_centroid - rotation * local_centroid;
    Ok(RigidTransform::new(rotation, translation))
}

/// Root-mean-square distance between `transform(local_i)` and `session_i`.
pub fn alignment_residual_rms(
    transform: &RigidTransform,
    session: &AnchorSet,
    local: &AnchorSet,
) -> Result<f64, GeometryError> {
    let (local_pts, session_pts) = AnchorSet::correspondences(session, local)?;
    let sum: f64 = local_pts
        .iter()
        .zip(&session_pts)
        .map(|(l, s)| (transform.apply(l) - s).norm_squared())
        .sum();
    Ok((sum / local_pts.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn table_anchors() -> AnchorSet {
        AnchorSet::new(vec![
            AnchorPoint::new("a", Vec3::new(0.0, 0.0, 0.0)),
            AnchorPoint::new("b", Vec3::new(1.2, 0.0, 0.0)),
            AnchorPoint::new("c", Vec3::new(0.0, 0.0, 0.8)),
            AnchorPoint::new("d", Vec3::new(0.4, 0.75, 0.3)),
        ])
        .unwrap()
    }

    #[test]
    fn identical_sets_give_identity() {
        let anchors = table_anchors();
        let t = solve_alignment(&anchors, &anchors).unwrap();
        assert!(t.error_to(&RigidTransform::identity()) < 1e-12);
    }

    #[test]
    fn recovers_known_offset() {
        let session = table_anchors();
        let quarter = UnitQuat::from_axis_angle(&Vec3::z_axis(), FRAC_PI_2);
        // local = rotate −90° about Z, then shift by (−1, −2, −3)
        let to_local = RigidTransform::from_translation(Vec3::new(-1.0, -2.0, -3.0))
            .compose(&RigidTransform::from_rotation(quarter.inverse()));
        let local = session.transformed(&to_local);
        let expected = RigidTransform::from_rotation(quarter)
            .compose(&RigidTransform::from_translation(Vec3::new(1.0, 2.0, 3.0)));
        let solved = solve_alignment(&session, &local).unwrap();
        assert!(solved.error_to(&expected) < 1e-9, "{solved:?}");
        assert!(alignment_residual_rms(&solved, &session, &local).unwrap() < 1e-9);
    }

    #[test]
    fn coplanar_anchors_are_accepted() {
        let flat = AnchorSet::new(vec![
            AnchorPoint::new("a", Vec3::new(0.0, 0.0, 0.0)),
            AnchorPoint::new("b", Vec3::new(1.0, 0.0, 0.0)),
            AnchorPoint::new("c", Vec3::new(0.0, 0.0, 1.0)),
        ])
        .unwrap();
        let offset = RigidTransform::new(
            UnitQuat::from_euler_angles(0.4, 2.0, -0.9),
            Vec3::new(0.5, -1.0, 2.0),
        );
        let solved = solve_alignment(&flat.transformed(&offset), &flat).unwrap();
        assert!(solved.error_to(&offset) < 1e-9);
    }

    #[test]
    fn invalid_anchor_sets() {
        let p = |l: &str, x: f64| AnchorPoint::new(l, Vec3::new(x, 2.0 * x, 0.0));
        assert_eq!(
            AnchorSet::new(vec![p("a", 0.0), p("b", 1.0)]),
            Err(GeometryError::TooFewAnchors(2))
        );
        assert_eq!(
            AnchorSet::new(vec![p("a", 0.0), p("b", 1.0), p("c", 3.0)]),
            Err(GeometryError::DegenerateAnchors)
        );
        assert_eq!(
            AnchorSet::new(vec![p("a", 0.0), p("a", 1.0), p("c", 3.0)]),
            Err(GeometryError::DuplicateLabel("a".into()))
        );
    }

    #[test]
    fn label_mismatch() {
        let session = table_anchors();
        let other = AnchorSet::new(vec![
            AnchorPoint::new("a", Vec3::new(0.0, 0.0, 0.0)),
            AnchorPoint::new("b", Vec3::new(1.0, 0.0, 0.0)),
            AnchorPoint::new("x", Vec3::new(0.0, 1.0, 0.0)),
            AnchorPoint::new("d", Vec3::new(0.0, 0.0, 1.0)),
        ])
        .unwrap();
        assert_eq!(solve_alignment(&session, &other), Err(GeometryError::LabelMismatch));
    }

    #[test]
    fn labels_are_matched_not_positional() {
        let session = table_anchors();
        let mut shuffled: Vec<AnchorPoint> = session.points().to_vec();
        shuffled.reverse();
        let local = AnchorSet::new(shuffled).unwrap();
        let t = solve_alignment(&session, &local).unwrap();
        assert!(t.error_to(&RigidTransform::identity()) < 1e-12);
    }

    #[test]
    fn serde_rejects_degenerate_sets() {
        let json = r#"[{"label":"a","position":[0,0,0]},{"label":"b","position":[1,0,0]},{"label":"c","position":[2,0,0]}]"#;
        assert!(serde_json::from_str::<AnchorSet>(json).is_err());
        let good = serde_json::to_string(&table_anchors()).unwrap();
        assert_eq!(serde_json::from_str::<AnchorSet>(&good).unwrap(), table_anchors());
    }
}
