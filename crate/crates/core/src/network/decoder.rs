//! Coarse-to-fine decoder: `v -> P0 -> P1 -> P2 -> Pc`.

use super::layers::{Fwd, Init};
use super::ModelConfig;
use crate::autodiff::{Tensor, Var};
use crate::error::Result;
use crate::geometry::{farthest_point_sample, PointCloud};

/// Decoder outputs on the tape.
#[derive(Clone, Debug)]
pub struct CsrOutputs {
    /// Global feature `[1, global]`.
    pub v: Var,
    pub p0: Var,
    pub p1: Var,
    pub p2: Var,
    pub pc: Var,
    /// Rows of `concat(P_in, P0)` selected into `P1`.
    pub p1_indices: Vec<usize>,
}

pub(crate) fn init(init: &mut Init, cfg: &ModelConfig) -> Result<()> {
    let (g, d) = (cfg.widths.global, cfg.widths.decoder);
    init.linear("dec.deconv", g, cfg.n0 * d)?;
    init.mlp("dec.p0", &[d, d, d, d, 3])?;
    init.mlp("dec.p2", &[3 + g, d, d, 3])?;
    init.mlp("dec.embed", &[3 + g, d, d])?;
    init.linear("dec.split", d, cfg.r * d)?;
    init.mlp("dec.child", &[d, d, 3])
}

/// Per-point concatenation of `points [n, 3]` with the global feature.
fn with_global(fwd: &mut Fwd, points: Var, v: Var) -> Result<Var> {
    let n = fwd.tape.value(points).shape()[0];
    let vr = fwd.repeat_row(v, n)?;
    fwd.tape.concat(&[points, vr], 1)
}

pub(crate) fn decode(fwd: &mut Fwd, cfg: &ModelConfig, v: Var, p_in: &PointCloud) -> Result<CsrOutputs> {
    let d = cfg.widths.decoder;

    let h = fwd.linear("dec.deconv", v)?;
    let h = fwd.act(h)?;
    let h = fwd.tape.reshape(h, vec![cfg.n0, d])?;
    let p0 = fwd.mlp("dec.p0", h, 4, false)?;

    let input = fwd.tape.constant(p_in.to_tensor())?;
    let merged = fwd.tape.concat(&[input, p0], 0)?;
    let merged_cloud = PointCloud::from_tensor(fwd.tape.value(merged))?;
    let p1_indices = farthest_point_sample(merged_cloud.points(), cfg.n1, merged_cloud.index_nearest_centroid())?;
    let p1 = fwd.tape.index_select(merged, 0, p1_indices.clone())?;

    let x = with_global(fwd, p1, v)?;
    let delta = fwd.mlp("dec.p2", x, 3, false)?;
    let p2 = fwd.tape.add(p1, delta)?;

    let x = with_global(fwd, p2, v)?;
    let h = fwd.mlp("dec.embed", x, 2, true)?;
    let children = fwd.linear("dec.split", h)?;
    let children = fwd.act(children)?;
    let children = fwd.tape.reshape(children, vec![cfg.n, d])?;
    let offsets = fwd.mlp("dec.child", children, 2, false)?;
    let parents = fwd.tape.index_select(p2, 0, (0..cfg.n).map(|i| i / cfg.r).collect())?;
    let pc = fwd.tape.add(parents, offsets)?;

    Ok(CsrOutputs { v, p0, p1, p2, pc, p1_indices })
}

/// Row-major values of an `[n, 3]` tensor as a cloud.
pub(crate) fn cloud_of(t: &Tensor) -> Result<PointCloud> {
    PointCloud::from_tensor(t)
}
