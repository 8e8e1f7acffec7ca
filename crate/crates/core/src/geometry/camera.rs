use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use super::PointCloud;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CameraModel {
    /// `(x', y', z', 1) = T (x, y, z, 1)`.
    Orthographic,
    /// `T` followed by division of `x'`, `y'` by the depth row `z'`.
    Perspective,
}

const MIN_DEPTH: f64 = 1e-9;

/// Homogeneous 4x4 camera transform mapping object coordinates to pixel
/// coordinates (`x'` column, `y'` row, origin top-left) and depth `z'`.
///
/// The last row of `T` must be `(0, 0, 0, 1)` for both models.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraTransform {
    matrix: Matrix4<f64>,
    inverse: Matrix4<f64>,
    model: CameraModel,
    width: usize,
    height: usize,
}

/// Projected coordinates, one-to-one with the source cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedPoints {
    pub coords: Vec<[f64; 3]>,
}

impl CameraTransform {
    /// Builds a camera from a row-major 4x4 matrix.
    pub fn new(rows: [f64; 16], model: CameraModel, width: usize, height: usize) -> Result<Self> {
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "camera transform" });
        }
        if width == 0 || height == 0 {
            return Err(Error::Invalid(format!("image size {width}x{height}")));
        }
        let matrix = Matrix4::from_row_slice(&rows);
        if rows[12..] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::Invalid("last row of camera transform must be (0, 0, 0, 1)".into()));
        }
        if matrix.determinant().abs() <= 1e-12 {
            return Err(Error::SingularTransform);
        }
        let inverse = matrix.try_inverse().ok_or(Error::SingularTransform)?;
        Ok(CameraTransform { matrix, inverse, model, width, height })
    }

    pub fn identity(width: usize, height: usize) -> Self {
        let mut rows = [0.0; 16];
        rows[0] = 1.0;
        rows[5] = 1.0;
        rows[10] = 1.0;
        rows[15] = 1.0;
        CameraTransform::new(rows, CameraModel::Orthographic, width, height).expect("identity is valid")
    }

    /// Row-major matrix entries.
    pub fn rows(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = self.matrix[(r, c)];
            }
        }
        out
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.matrix[(row, col)]
    }

    pub fn model(&self) -> CameraModel {
        self.model
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Normalizer that maps pixel coordinates to roughly unit range.
    pub fn pixel_scale(&self) -> f64 {
        self.width.max(self.height) as f64
    }

    pub fn project_point(&self, p: [f64; 3]) -> Result<[f64; 3]> {
        let h = self.matrix * Vector4::new(p[0], p[1], p[2], 1.0);
        match self.model {
            CameraModel::Orthographic => Ok([h[0], h[1], h[2]]),
            CameraModel::Perspective => {
                if h[2] <= MIN_DEPTH {
                    return Err(Error::BehindCamera { depth: h[2] });
                }
                Ok([h[0] / h[2], h[1] / h[2], h[2]])
            }
        }
    }

    pub fn back_project_point(&self, q: [f64; 3]) -> Result<[f64; 3]> {
        let h = match self.model {
            CameraModel::Orthographic => Vector4::new(q[0], q[1], q[2], 1.0),
            CameraModel::Perspective => {
                if q[2] <= MIN_DEPTH {
                    return Err(Error::BehindCamera { depth: q[2] });
                }
                Vector4::new(q[0] * q[2], q[1] * q[2], q[2], 1.0)
            }
        };
        let p = self.inverse * h;
        Ok([p[0], p[1], p[2]])
    }

    pub fn project(&self, cloud: &PointCloud) -> Result<ProjectedPoints> {
        let coords = cloud.points().iter().map(|&p| self.project_point(p)).collect::<Result<_>>()?;
        Ok(ProjectedPoints { coords })
    }

    pub fn back_project(&self, projected: &ProjectedPoints) -> Result<PointCloud> {
        let points = projected.coords.iter().map(|&q| self.back_project_point(q)).collect::<Result<_>>()?;
        PointCloud::new(points)
    }
}

pub fn project(cloud: &PointCloud, cam: &CameraTransform) -> Result<ProjectedPoints> {
    cam.project(cloud)
}

pub fn back_project(projected: &ProjectedPoints, cam: &CameraTransform) -> Result<PointCloud> {
    cam.back_project(projected)
}

/// Elevation of the two camera rings, in degrees.
pub const RIG_ELEVATION_DEG: f64 = 30.0;
/// Fraction of the limiting image dimension covered by the unit cube.
pub const RIG_FILL: f64 = 0.9;

/// Eight cameras looking at the origin: azimuths 0, 90, 180 and 270 degrees
/// about the y-axis, each tilted by +30 degrees (first four views) and -30
/// degrees (last four) about the x-axis.
///
/// Each camera is scaled so the projection of the unit cube `[-0.5, 0.5]^3`
/// spans 90% of the limiting image dimension and stays inside the image.
pub fn make_view_rig(radius: f64, image_size: (usize, usize), model: CameraModel) -> Result<Vec<CameraTransform>> {
    if !(radius > 0.0) {
        return Err(Error::Invalid(format!("rig radius must be positive, got {radius}")));
    }
    let mut cams = Vec::with_capacity(8);
    for elevation in [RIG_ELEVATION_DEG, -RIG_ELEVATION_DEG] {
        for azimuth in [0.0, 90.0, 180.0, 270.0] {
            cams.push(look_at_origin(azimuth, elevation, radius, image_size, model)?);
        }
    }
    Ok(cams)
}

/// Camera at `radius` from the origin, object rotated by `azimuth` about y
/// then by `elevation` about x (both degrees).
pub fn look_at_origin(
    azimuth: f64,
    elevation: f64,
    radius: f64,
    (width, height): (usize, usize),
    model: CameraModel,
) -> Result<CameraTransform> {
    let (sa, ca) = azimuth.to_radians().sin_cos();
    let (se, ce) = elevation.to_radians().sin_cos();
    let ry = [[ca, 0.0, sa], [0.0, 1.0, 0.0], [-sa, 0.0, ca]];
    let rx = [[1.0, 0.0, 0.0], [0.0, ce, -se], [0.0, se, ce]];
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = (0..3).map(|k| rx[i][k] * ry[k][j]).sum();
        }
    }
    let rotate = |p: [f64; 3]| -> [f64; 3] {
        [0, 1, 2].map(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2])
    };
    let corners: Vec<[f64; 3]> = (0..8)
        .map(|c| [0, 1, 2].map(|d| if c >> d & 1 == 1 { 0.5 } else { -0.5 }))
        .map(rotate)
        .collect();
    let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
    // u = cx + s*qx/d, v = cy - s*qy/d with d = radius - qz (d = 1 for orthographic).
    let depth = |q: &[f64; 3]| match model {
        CameraModel::Orthographic => 1.0,
        CameraModel::Perspective => radius - q[2],
    };
    if corners.iter().any(|q| depth(q) <= MIN_DEPTH) {
        return Err(Error::Invalid(format!("radius {radius} places the unit cube behind the camera")));
    }
    let ext_x = corners.iter().map(|q| (q[0] / depth(q)).abs()).fold(0.0, f64::max);
    let ext_y = corners.iter().map(|q| (q[1] / depth(q)).abs()).fold(0.0, f64::max);
    let s = RIG_FILL * (width as f64 / (2.0 * ext_x)).min(height as f64 / (2.0 * ext_y));

    let mut rows = [0.0; 16];
    match model {
        CameraModel::Orthographic => {
            for j in 0..3 {
                rows[j] = s * r[0][j];
                rows[4 + j] = -s * r[1][j];
                rows[8 + j] = -r[2][j];
            }
            rows[3] = cx;
            rows[7] = cy;
            rows[11] = radius;
        }
        CameraModel::Perspective => {
            for j in 0..3 {
                rows[j] = s * r[0][j] - cx * r[2][j];
                rows[4 + j] = -s * r[1][j] - cy * r[2][j];
                rows[8 + j] = -r[2][j];
            }
            rows[3] = cx * radius;
            rows[7] = cy * radius;
            rows[11] = radius;
        }
    }
    rows[15] = 1.0;
    CameraTransform::new(rows, model, width, height)
}
