//! Depth-buffer partial views and splatted silhouettes.

use crate::error::{Error, Result};
use crate::geometry::{nearest_neighbors, resample_to, CameraModel, CameraTransform, GridIndex, PointCloud};
use crate::silhouette::SilhouetteImage;

/// Mean distance from each point to its nearest other point.
pub fn mean_nn_spacing(cloud: &PointCloud) -> Result<f64> {
    if cloud.len() < 2 {
        return Err(Error::Invalid("spacing needs at least two points".into()));
    }
    let index = GridIndex::new(cloud.points())?;
    let total: f64 = cloud
        .points()
        .iter()
        .map(|p| {
            let nn = index.knn(p, 2).expect("two points");
            // The first hit is the point itself unless it has duplicates.
            nn[1].1.sqrt()
        })
        .sum();
    Ok(total / cloud.len() as f64)
}

/// Image-plane pixels per object unit at the origin: the RMS singular value
/// of the projection Jacobian there.
pub fn pixels_per_unit(cam: &CameraTransform) -> f64 {
    let t = |r: usize, c: usize| cam.entry(r, c);
    let mut frob = 0.0;
    for r in 0..2 {
        for c in 0..3 {
            let j = match cam.model() {
                CameraModel::Orthographic => t(r, c),
                CameraModel::Perspective => {
                    let h = t(2, 3);
                    (t(r, c) * h - t(r, 3) * t(2, c)) / (h * h)
                }
            };
            frob += j * j;
        }
    }
    (frob / 2.0).sqrt()
}

/// Visibility-culled view of `dense` under `cam`: points within
/// `1.5 x` the mean nearest-neighbour spacing of the nearest depth in their
/// depth-buffer cell, resampled to `n`.
///
/// Each point writes its depth into every cell within one point spacing so
/// that sampling gaps in near surfaces do not let far points through.
pub fn make_partial(dense: &PointCloud, cam: &CameraTransform, grid: usize, n: usize, seed: u64) -> Result<PointCloud> {
    let visible = visible_subset(dense, cam, grid)?;
    resample_to(&dense.select(&visible)?, n, seed)
}

/// Indices of the points of `dense` that survive depth-buffer culling.
pub fn visible_subset(dense: &PointCloud, cam: &CameraTransform, grid: usize) -> Result<Vec<usize>> {
    if grid == 0 {
        return Err(Error::Invalid("depth grid must be positive".into()));
    }
    let spacing = mean_nn_spacing(dense)?;
    let tol = 1.5 * spacing;
    let proj = cam.project(dense)?;
    let (gw, gh) = (grid, grid);
    let cx = gw as f64 / cam.width() as f64;
    let cy = gh as f64 / cam.height() as f64;
    let radius = (spacing * pixels_per_unit(cam) * cx.max(cy)).ceil() as isize;
    let cell = |q: &[f64; 3]| ((q[0] * cx).floor() as isize, (q[1] * cy).floor() as isize);
    let mut depth = vec![f64::INFINITY; gw * gh];
    for q in &proj.coords {
        let (x0, y0) = cell(q);
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                if dx * dx + dy * dy > radius * radius {
                    continue;
                }
                let (x, y) = (x0 + dx, y0 + dy);
                if x >= 0 && y >= 0 && (x as usize) < gw && (y as usize) < gh {
                    let d = &mut depth[y as usize * gw + x as usize];
                    *d = d.min(q[2]);
                }
            }
        }
    }
    let visible: Vec<usize> = proj
        .coords
        .iter()
        .enumerate()
        .filter(|(_, q)| {
            let (x, y) = cell(q);
            let inside = x >= 0 && y >= 0 && (x as usize) < gw && (y as usize) < gh;
            inside && q[2] <= depth[y as usize * gw + x as usize] + tol
        })
        .map(|(i, _)| i)
        .collect();
    if visible.is_empty() {
        return Err(Error::Empty);
    }
    Ok(visible)
}

/// Default splat radius: the projected point spacing, at least 0.75 px.
pub fn default_splat_radius(dense: &PointCloud, cam: &CameraTransform) -> Result<f64> {
    Ok((mean_nn_spacing(dense)? * pixels_per_unit(cam)).max(0.75))
}

/// Splats every projected point as a filled disk of `radius` pixels (pixel
/// centres within the radius), then applies one 3x3 closing.
pub fn render_silhouette(dense: &PointCloud, cam: &CameraTransform, radius: f64) -> Result<SilhouetteImage> {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::Invalid(format!("splat radius {radius}")));
    }
    let (w, h) = (cam.width(), cam.height());
    let proj = cam.project(dense)?;
    let mut mask = vec![0u8; w * h];
    let r2 = radius * radius;
    for q in &proj.coords {
        let x0 = (q[0] - radius).floor().max(0.0) as usize;
        let y0 = (q[1] - radius).floor().max(0.0) as usize;
        let x1 = ((q[0] + radius).ceil().max(0.0) as usize).min(w);
        let y1 = ((q[1] + radius).ceil().max(0.0) as usize).min(h);
        for y in y0..y1 {
            for x in x0..x1 {
                let (dx, dy) = (x as f64 + 0.5 - q[0], y as f64 + 0.5 - q[1]);
                if dx * dx + dy * dy <= r2 {
                    mask[y * w + x] = 1;
                }
            }
        }
    }
    let s = close_3x3(&SilhouetteImage::new(w, h, mask)?);
    if s.foreground_count() == 0 {
        return Err(Error::EmptyForeground);
    }
    Ok(s)
}

/// Dilation then erosion with a 3x3 square. Outside the image counts as
/// background for dilation and foreground for erosion, so closing never
/// eats into shapes touching the border.
pub fn close_3x3(s: &SilhouetteImage) -> SilhouetteImage {
    let (w, h) = (s.width(), s.height());
    let nbhd = |img: &SilhouetteImage, x: usize, y: usize, outside: bool, want: bool| {
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                let v = if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    outside
                } else {
                    img.get(nx as usize, ny as usize)
                };
                if v == want {
                    return true;
                }
            }
        }
        false
    };
    let dilated = SilhouetteImage::from_fn(w, h, |x, y| nbhd(s, x, y, false, true));
    SilhouetteImage::from_fn(w, h, |x, y| !nbhd(&dilated, x, y, true, false))
}

/// Fraction of `cloud`'s projected points landing on foreground.
pub fn foreground_fraction(cloud: &PointCloud, cam: &CameraTransform, s: &SilhouetteImage) -> Result<f64> {
    let proj = cam.project(cloud)?;
    let inside = proj.coords.iter().filter(|q| crate::silhouette::is_foreground(s, q[0], q[1])).count();
    Ok(inside as f64 / cloud.len() as f64)
}

/// Nearest-neighbour distance from each point of `a` to `b`.
pub fn distances_to(a: &PointCloud, b: &PointCloud) -> Result<Vec<f64>> {
    Ok(nearest_neighbors(a.points(), b.points())?.into_iter().map(|(_, d)| d.sqrt()).collect())
}
