//! The view calibrator: projected points that land on silhouette background
//! are snapped to the nearest boundary pixel, keeping their depth, and
//! back-projected. Not differentiable; it operates on plain clouds.

use crate::error::{Error, Result};
use crate::geometry::{CameraTransform, GridIndex, PointCloud, ProjectedPoints};
use crate::silhouette::{extract_boundary, is_foreground, BoundarySet, SilhouetteImage};

/// Indices of projected points whose pixel is background or out of bounds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OutlierSet {
    pub indices: Vec<usize>,
}

impl OutlierSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MovedPoint {
    pub index: usize,
    /// Projected `(x', y')` before calibration.
    pub from: [f64; 2],
    /// Boundary pixel the point was snapped to.
    pub to: [usize; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationReport {
    pub k_before: usize,
    pub k_after: usize,
    pub moved: Vec<MovedPoint>,
}

pub fn classify_outliers(projected: &ProjectedPoints, s: &SilhouetteImage) -> OutlierSet {
    let indices = projected
        .coords
        .iter()
        .enumerate()
        .filter(|(_, q)| !is_foreground(s, q[0], q[1]))
        .map(|(i, _)| i)
        .collect();
    OutlierSet { indices }
}

/// Outlier count of a cloud under one view.
pub fn count_outliers(cloud: &PointCloud, cam: &CameraTransform, s: &SilhouetteImage) -> Result<usize> {
    Ok(classify_outliers(&cam.project(cloud)?, s).len())
}

/// Closest boundary pixel in the image plane; ties go to the first pixel in
/// row-major order.
pub fn nearest_boundary(o: [f64; 2], boundary: &BoundarySet) -> Result<[usize; 2]> {
    let mut best: Option<([usize; 2], f64)> = None;
    for &b in &boundary.pixels {
        let dx = o[0] - b[0] as f64;
        let dy = o[1] - b[1] as f64;
        let d = dx * dx + dy * dy;
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((b, d));
        }
    }
    best.map(|(b, _)| b).ok_or(Error::Empty)
}

/// Sub-pixel nudges toward the pixel centre, tried in order when floating
/// point round-off carries a snapped point just outside its target pixel.
const NUDGES: [f64; 5] = [0.0, 1e-9, 1e-6, 1e-3, 0.5];

/// Snaps every outlier of `cloud` under `cam` onto the silhouette boundary.
/// Inner points are copied unchanged and output order matches input order.
pub fn calibrate(cloud: &PointCloud, cam: &CameraTransform, s: &SilhouetteImage) -> Result<(PointCloud, CalibrationReport)> {
    if (s.width(), s.height()) != (cam.width(), cam.height()) {
        return Err(Error::shape(
            "calibrate",
            format!("silhouette {}x{} vs camera {}x{}", s.width(), s.height(), cam.width(), cam.height()),
        ));
    }
    let projected = cam.project(cloud)?;
    let outliers = classify_outliers(&projected, s);
    let mut points = cloud.points().to_vec();
    let mut moved = Vec::with_capacity(outliers.len());
    if !outliers.is_empty() {
        let boundary = extract_boundary(s)?;
        let bpts = boundary.as_points();
        let index = GridIndex::new(&bpts)?;
        for &i in &outliers.indices {
            let q = projected.coords[i];
            let b = boundary.pixels[index.nearest(&[q[0], q[1]]).0];
            points[i] = snap(cam, s, b, q[2])?;
            moved.push(MovedPoint { index: i, from: [q[0], q[1]], to: b });
        }
    }
    let out = PointCloud::new(points)?;
    let k_after = count_outliers(&out, cam, s)?;
    Ok((out, CalibrationReport { k_before: outliers.len(), k_after, moved }))
}

/// Back-projects `(b, depth)`, checking that the result reprojects into
/// pixel `b`.
fn snap(cam: &CameraTransform, s: &SilhouetteImage, b: [usize; 2], depth: f64) -> Result<[f64; 3]> {
    let mut last = None;
    for eps in NUDGES {
        let p = cam.back_project_point([b[0] as f64 + eps, b[1] as f64 + eps, depth])?;
        let q = cam.project_point(p)?;
        if is_foreground(s, q[0], q[1]) {
            return Ok(p);
        }
        last = Some(p);
    }
    Ok(last.expect("at least one nudge"))
}

/// Applies [`calibrate`] once per view, in `order`.
pub fn calibrate_multi(
    cloud: &PointCloud,
    views: &[(CameraTransform, SilhouetteImage)],
    order: &[usize],
) -> Result<PointCloud> {
    if order.is_empty() {
        return Err(Error::Invalid("calibration needs at least one view".into()));
    }
    let mut current = cloud.clone();
    for &v in order {
        let (cam, s) = views.get(v).ok_or_else(|| Error::Invalid(format!("view {v} out of range")))?;
        current = calibrate(&current, cam, s)?.0;
    }
    Ok(current)
}

/// Total outliers of `cloud` summed over all views.
pub fn cross_view_outliers(cloud: &PointCloud, views: &[(CameraTransform, SilhouetteImage)]) -> Result<usize> {
    views.iter().map(|(cam, s)| count_outliers(cloud, cam, s)).sum()
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::geometry::{look_at_origin, make_view_rig, CameraModel};

    fn disk(w: usize, h: usize, cx: f64, cy: f64, r: f64) -> SilhouetteImage {
        SilhouetteImage::from_fn(w, h, |x, y| (x as f64 + 0.5 - cx).hypot(y as f64 + 0.5 - cy) < r)
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        PointCloud::new((0..n).map(|_| [0, 1, 2].map(|_| rng.gen_range(-0.6..0.6))).collect()).unwrap()
    }

    #[test]
    fn classify_examples() {
        let cam = CameraTransform::identity(8, 8);
        let cloud = PointCloud::new(vec![[0.2, 0.3, 1.0], [5.5, 5.5, 0.0], [-1.0, 2.0, 0.0]]).unwrap();
        let full = SilhouetteImage::from_fn(8, 8, |_, _| true);
        assert_eq!(classify_outliers(&cam.project(&cloud).unwrap(), &full).indices, vec![2]);
        let hole = SilhouetteImage::from_fn(8, 8, |x, y| (x, y) != (0, 0));
        assert_eq!(classify_outliers(&cam.project(&cloud).unwrap(), &hole).indices, vec![0, 2]);
        let inside = PointCloud::new(vec![[3.5, 3.5, 0.0]]).unwrap();
        assert!(classify_outliers(&cam.project(&inside).unwrap(), &full).is_empty());
    }

    #[test]
    fn classify_matches_pointwise_lookup() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = disk(32, 32, 16.0, 16.0, 9.0);
        let pts: Vec<[f64; 3]> = (0..400).map(|_| [rng.gen_range(-4.0..36.0), rng.gen_range(-4.0..36.0), 0.0]).collect();
        let proj = ProjectedPoints { coords: pts.clone() };
        let oracle: Vec<usize> = (0..pts.len())
            .filter(|&i| {
                let (x, y) = (pts[i][0].floor(), pts[i][1].floor());
                !(x >= 0.0 && y >= 0.0 && x < 32.0 && y < 32.0 && s.get(x as usize, y as usize))
            })
            .collect();
        assert_eq!(classify_outliers(&proj, &s).indices, oracle);
    }

    #[test]
    fn nearest_boundary_examples() {
        let one = BoundarySet { pixels: vec![[4, 2]] };
        assert_eq!(nearest_boundary([100.0, -3.0], &one).unwrap(), [4, 2]);
        let two = BoundarySet { pixels: vec![[3, 4], [6, 8]] };
        assert_eq!(nearest_boundary([0.0, 0.0], &two).unwrap(), [3, 4]);
        let tie = BoundarySet { pixels: vec![[1, 0], [0, 1]] };
        assert_eq!(nearest_boundary([0.0, 0.0], &tie).unwrap(), [1, 0]);
        assert!(nearest_boundary([0.0, 0.0], &BoundarySet { pixels: vec![] }).is_err());
    }

    #[test]
    fn grid_pick_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = SilhouetteImage::from_fn(40, 30, |x, y| {
            (x as f64 - 12.0).hypot(y as f64 - 14.0) < 7.0 || (x > 24 && x < 36 && y > 5 && y < 25)
        });
        let b = extract_boundary(&s).unwrap();
        let pts = b.as_points();
        let index = GridIndex::new(&pts).unwrap();
        for _ in 0..500 {
            let q = [rng.gen_range(-10.0..50.0), rng.gen_range(-10.0..40.0)];
            assert_eq!(b.pixels[index.nearest(&q).0], nearest_boundary(q, &b).unwrap());
        }
    }

    #[test]
    fn identity_camera_snap() {
        let cam = CameraTransform::identity(40, 40);
        let s = SilhouetteImage::from_fn(40, 40, |x, y| x >= 20 && x < 30 && y >= 5 && y <= 10);
        let cloud = PointCloud::new(vec![[10.3, 10.7, -2.5], [22.5, 7.5, 1.0]]).unwrap();
        let (out, report) = calibrate(&cloud, &cam, &s).unwrap();
        assert_eq!(out.points()[0], [20.0, 10.0, -2.5]);
        assert_eq!(out.points()[1], cloud.points()[1]);
        assert_eq!((report.k_before, report.k_after), (1, 0));
        assert_eq!(report.moved, vec![MovedPoint { index: 0, from: [10.3, 10.7], to: [20, 10] }]);
    }

    #[test]
    fn all_foreground_is_identity() {
        let cam = CameraTransform::identity(10, 10);
        let s = SilhouetteImage::from_fn(10, 10, |_, _| true);
        let cloud = PointCloud::new(vec![[1.5, 2.5, 3.0], [9.9, 0.0, -1.0]]).unwrap();
        let (out, report) = calibrate(&cloud, &cam, &s).unwrap();
        assert_eq!(out, cloud);
        assert_eq!(report.k_before, 0);
    }

    fn check_postconditions(cloud: &PointCloud, cam: &CameraTransform, s: &SilhouetteImage) {
        let (out, report) = calibrate(cloud, cam, s).unwrap();
        assert_eq!(out.len(), cloud.len());
        assert_eq!(report.k_after, 0);
        assert_eq!(count_outliers(&out, cam, s).unwrap(), 0);
        let before = cam.project(cloud).unwrap();
        let after = cam.project(&out).unwrap();
        let moved: Vec<usize> = report.moved.iter().map(|m| m.index).collect();
        for i in 0..cloud.len() {
            if moved.contains(&i) {
                assert!((before.coords[i][2] - after.coords[i][2]).abs() <= 1e-12 * before.coords[i][2].abs().max(1.0));
            } else {
                assert_eq!(out.points()[i], cloud.points()[i]);
            }
        }
        let (again, second) = calibrate(&out, cam, s).unwrap();
        assert_eq!(second.k_before, 0);
        assert_eq!(again, out);
    }

    #[test]
    fn postconditions_on_rig_views() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for model in [CameraModel::Orthographic, CameraModel::Perspective] {
            let rig = make_view_rig(3.0, (48, 40), model).unwrap();
            for cam in &rig {
                let s = disk(48, 40, rng.gen_range(18.0..30.0), rng.gen_range(15.0..25.0), rng.gen_range(3.0..12.0));
                check_postconditions(&random_cloud(&mut rng, 200), cam, &s);
            }
        }
    }

    #[test]
    fn multi_view_ends_clean_on_last_view() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let rig = make_view_rig(3.0, (32, 32), CameraModel::Orthographic).unwrap();
        let views: Vec<_> = rig.into_iter().map(|c| (c, disk(32, 32, 16.0, 16.0, 8.0))).collect();
        let cloud = random_cloud(&mut rng, 300);
        let single = calibrate_multi(&cloud, &views, &[2]).unwrap();
        assert_eq!(single, calibrate(&cloud, &views[2].0, &views[2].1).unwrap().0);
        let four = calibrate_multi(&cloud, &views, &[0, 1, 2, 3]).unwrap();
        assert_eq!(count_outliers(&four, &views[3].0, &views[3].1).unwrap(), 0);
        assert!(calibrate_multi(&cloud, &views, &[]).is_err());
        assert!(calibrate_multi(&cloud, &views, &[9]).is_err());
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let cam = look_at_origin(0.0, 0.0, 3.0, (16, 16), CameraModel::Orthographic).unwrap();
        let s = SilhouetteImage::from_fn(8, 8, |_, _| true);
        let cloud = PointCloud::new(vec![[0.0; 3]]).unwrap();
        assert!(calibrate(&cloud, &cam, &s).is_err());
    }
}
