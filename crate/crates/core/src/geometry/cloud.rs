use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Ordered, non-empty set of finite 3D points.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty);
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "point cloud" });
        }
        Ok(PointCloud { points })
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn into_points(self) -> Vec<[f64; 3]> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for p in &self.points {
            for d in 0..3 {
                c[d] += p[d];
            }
        }
        c.map(|v| v / self.points.len() as f64)
    }

    /// Axis-aligned bounds as `(min, max)`.
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        bounds(&self.points)
    }

    /// Index of the point closest to the centroid; ties go to the lower index.
    pub fn index_nearest_centroid(&self) -> usize {
        let c = self.centroid();
        let mut best = (f64::INFINITY, 0);
        for (i, p) in self.points.iter().enumerate() {
            let d = sq_dist(p, &c);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    pub fn select(&self, indices: &[usize]) -> Result<PointCloud> {
        PointCloud::new(indices.iter().map(|&i| self.points[i]).collect())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_rows(&self.points).expect("non-empty cloud")
    }

    pub fn from_tensor(t: &Tensor) -> Result<PointCloud> {
        PointCloud::new(t.to_rows::<3>()?)
    }
}

pub(crate) fn bounds<const D: usize>(points: &[[f64; D]]) -> ([f64; D], [f64; D]) {
    let mut lo = [f64::INFINITY; D];
    let mut hi = [f64::NEG_INFINITY; D];
    for p in points {
        for d in 0..D {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    (lo, hi)
}

/// Squared Euclidean distance, summed in coordinate order.
#[inline]
pub fn sq_dist<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    let mut s = 0.0;
    for d in 0..D {
        let t = a[d] - b[d];
        s += t * t;
    }
    s
}
