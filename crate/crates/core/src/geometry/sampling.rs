use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::cloud::sq_dist;
use super::PointCloud;
use crate::error::{Error, Result};

/// Greedy max-min subset selection starting from `start`. Ties go to the
/// lower index.
pub fn farthest_point_sample(points: &[[f64; 3]], n: usize, start: usize) -> Result<Vec<usize>> {
    if n == 0 || n > points.len() {
        return Err(Error::Invalid(format!("cannot sample {n} of {} points", points.len())));
    }
    if start >= points.len() {
        return Err(Error::Invalid(format!("start index {start} out of range")));
    }
    let mut min_d = vec![f64::INFINITY; points.len()];
    let mut selected = Vec::with_capacity(n);
    let mut current = start;
    for _ in 0..n {
        selected.push(current);
        min_d[current] = f64::NEG_INFINITY;
        let p = points[current];
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for (i, q) in points.iter().enumerate() {
            if min_d[i] == f64::NEG_INFINITY {
                continue;
            }
            let d = sq_dist(&p, q);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if min_d[i] > best.0 {
                best = (min_d[i], i);
            }
        }
        current = best.1;
    }
    Ok(selected)
}

/// Resizes a cloud to exactly `n` points: farthest-point downsampling
/// (anchored at the point nearest the centroid) when larger, seeded uniform
/// duplication when smaller.
pub fn resample_to(cloud: &PointCloud, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::Invalid("cannot resample to zero points".into()));
    }
    let len = cloud.len();
    if len == n {
        return Ok(cloud.clone());
    }
    if len > n {
        let idx = farthest_point_sample(cloud.points(), n, cloud.index_nearest_centroid())?;
        return cloud.select(&idx);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = cloud.points().to_vec();
    for _ in len..n {
        points.push(cloud.points()[rng.gen_range(0..len)]);
    }
    PointCloud::new(points)
}
