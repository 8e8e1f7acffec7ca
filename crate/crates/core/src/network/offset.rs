//! EdgeConv offset predictor for the refinement stage.

use super::layers::{Fwd, Init};
use super::ModelConfig;
use crate::autodiff::{Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::nn::knn_features;
use crate::geometry::PointCloud;

pub const EDGE_LAYERS: usize = 5;

pub(crate) fn init(init: &mut Init, cfg: &ModelConfig) -> Result<()> {
    let e = cfg.widths.edge;
    let mut d_in = 3;
    for l in 0..EDGE_LAYERS {
        init.linear(&format!("op.edge{l}"), 2 * d_in, e)?;
        d_in = e;
    }
    init.linear("op.head.0", EDGE_LAYERS * e, e)?;
    init.linear_zero("op.head.1", e, 3)
}

/// One EdgeConv layer: kNN graph on the current features, edge features
/// `[x_i, x_j - x_i]`, shared linear map, max over neighbours.
fn edge_conv(fwd: &mut Fwd, name: &str, x: Var, k: usize) -> Result<Var> {
    let (n, dim) = {
        let s = fwd.tape.value(x).shape();
        (s[0], s[1])
    };
    let nbrs = knn_features(fwd.tape.value(x).data(), dim, k)?;
    let centre: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, k)).collect();
    let xi = fwd.tape.index_select(x, 0, centre)?;
    let xj = fwd.tape.index_select(x, 0, nbrs)?;
    let rel = fwd.tape.sub(xj, xi)?;
    let edges = fwd.tape.concat(&[xi, rel], 1)?;
    let h = fwd.linear(name, edges)?;
    let h = fwd.act(h)?;
    let w = fwd.tape.value(h).shape()[1];
    let h = fwd.tape.reshape(h, vec![n, k, w])?;
    fwd.tape.reduce_max(h, 1)
}

/// `(offsets [n, 3], P_op = P_cal + offsets)`.
pub(crate) fn predict_offsets(fwd: &mut Fwd, cfg: &ModelConfig, p_cal: &PointCloud) -> Result<(Var, Var)> {
    if p_cal.len() != cfg.n {
        return Err(Error::shape("predict_offsets", format!("expected {} points, got {}", cfg.n, p_cal.len())));
    }
    let x0 = fwd.tape.constant(Tensor::from_rows(p_cal.points())?)?;
    let mut x = x0;
    let mut layers = Vec::with_capacity(EDGE_LAYERS);
    for l in 0..EDGE_LAYERS {
        x = edge_conv(fwd, &format!("op.edge{l}"), x, cfg.k_nn)?;
        layers.push(x);
    }
    let all = fwd.tape.concat(&layers, 1)?;
    let h = fwd.linear("op.head.0", all)?;
    let h = fwd.act(h)?;
    let offsets = fwd.linear("op.head.1", h)?;
    let p_op = fwd.tape.add(x0, offsets)?;
    Ok((offsets, p_op))
}
