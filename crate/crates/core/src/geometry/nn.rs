//! Exact nearest-neighbour queries over a uniform grid.
//!
//! Results are identical to a brute-force scan: distances are computed with
//! the same expression and ties resolve to the lower point index.

use super::cloud::{bounds, sq_dist};
use crate::error::{Error, Result};

const TARGET_PER_CELL: f64 = 2.0;
const MAX_CELLS_PER_DIM: usize = 256;

/// Uniform-grid spatial index over a borrowed point set.
pub struct GridIndex<'a, const D: usize> {
    points: &'a [[f64; D]],
    lo: [f64; D],
    cell: [f64; D],
    dims: [usize; D],
    cell_start: Vec<usize>,
    entries: Vec<usize>,
}

impl<'a, const D: usize> GridIndex<'a, D> {
    pub fn new(points: &'a [[f64; D]]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty);
        }
        let (lo, hi) = bounds(points);
        let extent: [f64; D] = std::array::from_fn(|d| hi[d] - lo[d]);
        let live: Vec<usize> = (0..D).filter(|&d| extent[d] > 0.0).collect();
        let mut dims = [1usize; D];
        let mut cell = [1.0; D];
        if !live.is_empty() {
            let volume: f64 = live.iter().map(|&d| extent[d]).product();
            let target_cells = (points.len() as f64 / TARGET_PER_CELL).max(1.0);
            let side = (volume / target_cells).powf(1.0 / live.len() as f64);
            for &d in &live {
                dims[d] = ((extent[d] / side).ceil() as usize).clamp(1, MAX_CELLS_PER_DIM);
                cell[d] = extent[d] / dims[d] as f64;
            }
        }
        let total: usize = dims.iter().product();
        let mut counts = vec![0usize; total + 1];
        let keys: Vec<usize> = points.iter().map(|p| Self::flat(&dims, &Self::coords(&lo, &cell, &dims, p))).collect();
        for &k in &keys {
            counts[k + 1] += 1;
        }
        for i in 0..total {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut entries = vec![0; points.len()];
        // Increasing point order within each cell.
        for (i, &k) in keys.iter().enumerate() {
            entries[fill[k]] = i;
            fill[k] += 1;
        }
        Ok(GridIndex { points, lo, cell, dims, cell_start: counts, entries })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn coords(lo: &[f64; D], cell: &[f64; D], dims: &[usize; D], p: &[f64; D]) -> [isize; D] {
        std::array::from_fn(|d| {
            let c = ((p[d] - lo[d]) / cell[d]).floor();
            if c.is_nan() || c < 0.0 {
                0
            } else {
                (c as usize).min(dims[d] - 1) as isize
            }
        })
    }

    fn flat(dims: &[usize; D], c: &[isize; D]) -> usize {
        let mut k = 0;
        for d in 0..D {
            k = k * dims[d] + c[d] as usize;
        }
        k
    }

    /// Calls `visit` for every point in cells at Chebyshev distance exactly
    /// `rho` from `center`. Returns the lower bound on the distance from `q`
    /// to any cell further out, or `None` when no such cell exists.
    fn ring(&self, q: &[f64; D], center: &[isize; D], rho: isize, mut visit: impl FnMut(usize)) -> Option<f64> {
        let lo_c: [isize; D] = std::array::from_fn(|d| (center[d] - rho).max(0));
        let hi_c: [isize; D] = std::array::from_fn(|d| (center[d] + rho).min(self.dims[d] as isize - 1));
        let mut c = lo_c;
        'cells: loop {
            let on_ring = (0..D).any(|d| (c[d] - center[d]).abs() == rho);
            if on_ring {
                let k = Self::flat(&self.dims, &c);
                for &i in &self.entries[self.cell_start[k]..self.cell_start[k + 1]] {
                    visit(i);
                }
            }
            for d in (0..D).rev() {
                c[d] += 1;
                if c[d] <= hi_c[d] {
                    continue 'cells;
                }
                c[d] = lo_c[d];
            }
            break;
        }
        let mut bound = f64::INFINITY;
        for d in 0..D {
            if center[d] - rho > 0 {
                bound = bound.min(q[d] - (self.lo[d] + (center[d] - rho) as f64 * self.cell[d]));
            }
            if center[d] + rho < self.dims[d] as isize - 1 {
                bound = bound.min(self.lo[d] + (center[d] + rho + 1) as f64 * self.cell[d] - q[d]);
            }
        }
        bound.is_finite().then_some(bound)
    }

    /// Nearest point to `q` as `(index, squared distance)`.
    pub fn nearest(&self, q: &[f64; D]) -> (usize, f64) {
        let center = Self::coords(&self.lo, &self.cell, &self.dims, q);
        let mut best = (usize::MAX, f64::INFINITY);
        for rho in 0.. {
            let bound = self.ring(q, &center, rho, |i| {
                let d = sq_dist(q, &self.points[i]);
                if d < best.1 || (d == best.1 && i < best.0) {
                    best = (i, d);
                }
            });
            match bound {
                None => break,
                Some(b) if b > 0.0 && best.1 * (1.0 + 1e-9) < b * b => break,
                _ => {}
            }
        }
        best
    }

    /// The `k` nearest points to `q`, ascending by `(distance, index)`.
    pub fn knn(&self, q: &[f64; D], k: usize) -> Result<Vec<(usize, f64)>> {
        if k > self.points.len() {
            return Err(Error::Invalid(format!("k = {k} exceeds {} reference points", self.points.len())));
        }
        let center = Self::coords(&self.lo, &self.cell, &self.dims, q);
        let mut found: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        if k == 0 {
            return Ok(found);
        }
        for rho in 0.. {
            let bound = self.ring(q, &center, rho, |i| {
                let d = sq_dist(q, &self.points[i]);
                let pos = found.partition_point(|&(j, e)| e < d || (e == d && j < i));
                if pos < k {
                    found.insert(pos, (i, d));
                    found.truncate(k);
                }
            });
            match bound {
                None => break,
                Some(b) if b > 0.0 && found.len() == k && found[k - 1].1 * (1.0 + 1e-9) < b * b => break,
                _ => {}
            }
        }
        Ok(found)
    }
}

/// Nearest reference point for every query, as `(index, squared distance)`.
pub fn nearest_neighbors<const D: usize>(queries: &[[f64; D]], refs: &[[f64; D]]) -> Result<Vec<(usize, f64)>> {
    let index = GridIndex::new(refs)?;
    Ok(queries.iter().map(|q| index.nearest(q)).collect())
}

/// `k` nearest reference indices for every query point, ascending by distance
/// with ties broken toward the lower index.
pub fn knn<const D: usize>(queries: &[[f64; D]], refs: &[[f64; D]], k: usize) -> Result<Vec<Vec<usize>>> {
    let index = GridIndex::new(refs)?;
    queries
        .iter()
        .map(|q| Ok(index.knn(q, k)?.into_iter().map(|(i, _)| i).collect()))
        .collect()
}

/// Brute-force kNN over rows of a dense `n x dim` feature matrix against
/// itself, used where the feature dimension is too high for a grid.
pub fn knn_features(features: &[f64], dim: usize, k: usize) -> Result<Vec<usize>> {
    if dim == 0 || features.len() % dim != 0 {
        return Err(Error::shape("knn_features", format!("{} values, dim {dim}", features.len())));
    }
    let n = features.len() / dim;
    if k > n {
        return Err(Error::Invalid(format!("k = {k} exceeds {n} points")));
    }
    let mut out = Vec::with_capacity(n * k);
    let mut dists: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        let fi = &features[i * dim..(i + 1) * dim];
        dists.clear();
        for j in 0..n {
            let fj = &features[j * dim..(j + 1) * dim];
            let mut s = 0.0;
            for c in 0..dim {
                let t = fi[c] - fj[c];
                s += t * t;
            }
            dists.push((s, j));
        }
        dists.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).expect("finite features"));
        let head = &mut dists[..k];
        head.sort_by(|a, b| a.partial_cmp(b).expect("finite features"));
        out.extend(head.iter().map(|&(_, j)| j));
    }
    Ok(out)
}
