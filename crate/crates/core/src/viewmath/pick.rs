use serde::{Deserialize, Serialize};

use super::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PickSphere {
    pub center: Vec3,
    pub radius: f64,
    pub row_index: usize,
}

/// Smallest nonnegative ray parameter at which the ray meets the sphere.
/// `dir` must be unit length.
pub fn ray_sphere_entry(origin: &Vec3, dir: &Vec3, center: &Vec3, radius: f64) -> Option<f64> {
    let oc = origin - center;
    let b = oc.dot(dir);
    let c = oc.norm_squared() - radius * radius;
    let discriminant = b * b - c;
    // also rejects NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(discriminant >= 0.0) {
        return None;
    }
    let root = discriminant.sqrt();
    let (near, far) = (-b - root, -b + root);
    if near >= 0.0 {
        Some(near)
    } else if far >= 0.0 {
        // origin inside the sphere
        Some(far)
    } else {
        None
    }
}

/// Row of the first sphere hit along the ray; earlier entries win exact ties.
pub fn pick_point(origin: &Vec3, dir: &Vec3, spheres: &[PickSphere]) -> Option<usize> {
    spheres
        .iter()
        .filter_map(|s| ray_sphere_entry(origin, dir, &s.center, s.radius).map(|t| (t, s.row_index)))
        .fold(None, |best: Option<(f64, usize)>, (t, row)| match best {
            Some((bt, _)) if bt <= t => best,
            _ => Some((t, row)),
        })
        .map(|(_, row)| row)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(x: f64, y: f64, z: f64, r: f64, row: usize) -> PickSphere {
        PickSphere {
            center: Vec3::new(x, y, z),
            radius: r,
            row_index: row,
        }
    }

    #[test]
    fn head_on_hit_and_miss() {
        let (o, d) = (Vec3::zeros(), Vec3::z());
        assert_eq!(pick_point(&o, &d, &[sphere(0.0, 0.0, 5.0, 0.1, 7)]), Some(7));
        assert_eq!(pick_point(&o, &d, &[sphere(10.0, 0.0, 5.0, 0.1, 7)]), None);
        assert_eq!(pick_point(&o, &d, &[]), None);
    }

    #[test]
    fn nearest_sphere_wins() {
        let (o, d) = (Vec3::zeros(), Vec3::z());
        let spheres = [sphere(0.0, 0.0, 5.0, 0.1, 1), sphere(0.0, 0.0, 3.0, 0.1, 2)];
        // analytic entry points: z − r
        let entry = |s: &PickSphere| ray_sphere_entry(&o, &d, &s.center, s.radius).unwrap();
        assert!((entry(&spheres[0]) - 4.9).abs() < 1e-12);
        assert!((entry(&spheres[1]) - 2.9).abs() < 1e-12);
        assert_eq!(pick_point(&o, &d, &spheres), Some(2));
    }

    #[test]
    fn spheres_behind_origin_are_ignored() {
        let (o, d) = (Vec3::zeros(), Vec3::z());
        assert_eq!(pick_point(&o, &d, &[sphere(0.0, 0.0, -5.0, 0.1, 1)]), None);
        // inside a sphere: the exit point counts
        assert_eq!(ray_sphere_entry(&o, &d, &Vec3::zeros(), 1.0), Some(1.0));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn pick_is_minimal(
                centers in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -2.0f64..6.0, 0.01f64..0.5), 0..12),
                dx in -0.3f64..0.3, dy in -0.3f64..0.3,
            ) {
                let dir = Vec3::new(dx, dy, 1.0).normalize();
                let origin = Vec3::zeros();
                let spheres: Vec<PickSphere> = centers.iter().enumerate()
                    .map(|(i, (x, y, z, r))| sphere(*x, *y, *z, *r, i)).collect();
                let hit = pick_point(&origin, &dir, &spheres);
                let params: Vec<Option<f64>> = spheres.iter()
                    .map(|s| ray_sphere_entry(&origin, &dir, &s.center, s.radius)).collect();
                match hit {
                    None => prop_assert!(params.iter().all(Option::is_none)),
                    Some(row) => {
                        let t = params[row].unwrap();
                        prop_assert!(params.iter().flatten().all(|other| *other >= t));
                    }
                }
            }
        }
    }
}
