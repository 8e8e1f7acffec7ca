//! Training objectives built on the tape: 2D Chamfer distance, multi-view
//! projection loss, one-directional partial matching loss, and the stage
//! totals.
//!
//! Nearest-neighbour assignments are searched outside the tape at the current
//! iterate and enter as constant gather indices, so gradients are exact
//! wherever the assignment is locally stable.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{CameraModel, CameraTransform, GridIndex};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossVariant {
    /// Squared Euclidean distances.
    #[default]
    Squared,
    /// Plain Euclidean distances.
    Unsquared,
}

/// One supervising view: its camera and sampled foreground points `G`, in
/// pixel coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewTarget {
    pub camera: CameraTransform,
    pub points: Vec<[f64; 2]>,
}

/// Named loss terms and their unit-weight sum.
#[derive(Clone, Debug)]
pub struct LossBreakdown {
    pub terms: Vec<(&'static str, Var)>,
    pub total: Var,
}

impl LossBreakdown {
    fn from_terms(tape: &mut Tape, terms: Vec<(&'static str, Var)>) -> Result<Self> {
        let mut total = terms[0].1;
        for &(_, v) in &terms[1..] {
            total = tape.add(total, v)?;
        }
        Ok(LossBreakdown { terms, total })
    }

    /// `(name, value)` for every term, in order.
    pub fn values(&self, tape: &Tape) -> Vec<(&'static str, f64)> {
        self.terms.iter().map(|&(n, v)| (n, tape.value(v).data()[0])).collect()
    }

    pub fn total_value(&self, tape: &Tape) -> f64 {
        tape.value(self.total).data()[0]
    }

    /// Sum of the values of all terms whose name starts with `prefix`.
    pub fn sum_matching(&self, tape: &Tape, prefix: &str) -> f64 {
        self.values(tape).iter().filter(|(n, _)| n.starts_with(prefix)).map(|(_, v)| v).sum()
    }
}

fn rows_of<const D: usize>(tape: &Tape, v: Var, op: &'static str) -> Result<Vec<[f64; D]>> {
    let t = tape.value(v);
    if t.shape().len() != 2 || t.shape()[1] != D {
        return Err(Error::shape(op, format!("expected [n, {D}], got {:?}", t.shape())));
    }
    t.to_rows::<D>()
}

/// For every row of `from`, the index of its nearest row in `to`.
fn assign<const D: usize>(from: &[[f64; D]], to: &[[f64; D]]) -> Result<Vec<usize>> {
    let index = GridIndex::new(to)?;
    Ok(from.iter().map(|p| index.nearest(p).0).collect())
}

/// Mean over rows of the (squared) distance between `a` and `b`, both `[n, d]`.
fn mean_distance(tape: &mut Tape, a: Var, b: Var, variant: LossVariant) -> Result<Var> {
    let diff = tape.sub(a, b)?;
    let sq = tape.mul(diff, diff)?;
    let mut d = tape.reduce_sum(sq, 1)?;
    if variant == LossVariant::Unsquared {
        d = tape.sqrt(d)?;
    }
    tape.reduce_mean(d, 0)
}

/// Mean over `from` of the distance to the nearest point of `to`.
fn one_sided<const D: usize>(tape: &mut Tape, from: Var, to: Var, variant: LossVariant, op: &'static str) -> Result<Var> {
    let a = rows_of::<D>(tape, from, op)?;
    let b = rows_of::<D>(tape, to, op)?;
    let idx = assign(&a, &b)?;
    let matched = tape.index_select(to, 0, idx)?;
    mean_distance(tape, from, matched, variant)
}

/// Symmetric 2D Chamfer distance between `[m, 2]` and `[n, 2]` tensors.
pub fn chamfer_2d(tape: &mut Tape, g: Var, q: Var, variant: LossVariant) -> Result<Var> {
    let gq = one_sided::<2>(tape, g, q, variant, "chamfer_2d")?;
    let qg = one_sided::<2>(tape, q, g, variant, "chamfer_2d")?;
    tape.add(gq, qg)
}

/// Projects an `[n, 3]` cloud through `cam` on the tape, returning `[n, 2]`
/// pixel coordinates divided by `scale`.
pub fn project_on_tape(tape: &mut Tape, p: Var, cam: &CameraTransform, scale: f64) -> Result<Var> {
    let rows = match cam.model() {
        CameraModel::Orthographic => 2,
        CameraModel::Perspective => 3,
    };
    let mut lin = Vec::with_capacity(3 * rows);
    for c in 0..3 {
        for r in 0..rows {
            lin.push(cam.entry(r, c));
        }
    }
    let lin = tape.constant(Tensor::new(vec![3, rows], lin)?)?;
    let shift = tape.constant(Tensor::new(vec![rows], (0..rows).map(|r| cam.entry(r, 3)).collect())?)?;
    let h = tape.matmul(p, lin)?;
    let h = tape.add(h, shift)?;
    let xy = match cam.model() {
        CameraModel::Orthographic => h,
        CameraModel::Perspective => {
            let depth = tape.index_select(h, 1, vec![2])?;
            if let Some(&z) = tape.value(depth).data().iter().find(|&&z| z <= 1e-9) {
                return Err(Error::BehindCamera { depth: z });
            }
            let xy = tape.index_select(h, 1, vec![0, 1])?;
            tape.div(xy, depth)?
        }
    };
    tape.scale(xy, 1.0 / scale)
}

/// Mean over views of the 2D Chamfer distance between each view's `G` and
/// the projection of `p`, both normalized by `max(W, H)`.
pub fn projection_loss(tape: &mut Tape, views: &[ViewTarget], p: Var, variant: LossVariant) -> Result<Var> {
    if views.is_empty() {
        return Err(Error::Invalid("projection loss needs at least one view".into()));
    }
    let mut total: Option<Var> = None;
    for view in views {
        if view.points.is_empty() {
            return Err(Error::Empty);
        }
        let s = view.camera.pixel_scale();
        let g: Vec<[f64; 2]> = view.points.iter().map(|u| [u[0] / s, u[1] / s]).collect();
        let g = tape.constant(Tensor::from_rows(&g)?)?;
        let q = project_on_tape(tape, p, &view.camera, s)?;
        let cd = chamfer_2d(tape, g, q, variant)?;
        total = Some(match total {
            None => cd,
            Some(t) => tape.add(t, cd)?,
        });
    }
    tape.scale(total.expect("nonempty"), 1.0 / views.len() as f64)
}

/// Mean over `p_in` of the distance to the nearest point of `p`.
pub fn partial_matching_loss(tape: &mut Tape, p_in: Var, p: Var, variant: LossVariant) -> Result<Var> {
    one_sided::<3>(tape, p_in, p, variant, "partial_matching_loss")
}

/// Coarse-stage total over `P0`, `P2` and `Pc`.
pub fn loss_csr(
    tape: &mut Tape,
    views: &[ViewTarget],
    p0: Var,
    p2: Var,
    pc: Var,
    p_in: Var,
    variant: LossVariant,
) -> Result<LossBreakdown> {
    let terms = vec![
        ("proj_p0", projection_loss(tape, views, p0, variant)?),
        ("part_p0", partial_matching_loss(tape, p_in, p0, variant)?),
        ("proj_p2", projection_loss(tape, views, p2, variant)?),
        ("part_p2", partial_matching_loss(tape, p_in, p2, variant)?),
        ("proj_pc", projection_loss(tape, views, pc, variant)?),
        ("part_pc", partial_matching_loss(tape, p_in, pc, variant)?),
    ];
    LossBreakdown::from_terms(tape, terms)
}

/// Refinement-stage total over the offset predictor output.
pub fn loss_vsr(tape: &mut Tape, views: &[ViewTarget], p_op: Var, p_in: Var, variant: LossVariant) -> Result<LossBreakdown> {
    let terms = vec![
        ("proj_pop", projection_loss(tape, views, p_op, variant)?),
        ("part_pop", partial_matching_loss(tape, p_in, p_op, variant)?),
    ];
    LossBreakdown::from_terms(tape, terms)
}

/// Term names of each stage, in breakdown order.
pub const CSR_TERMS: [&str; 6] = ["proj_p0", "part_p0", "proj_p2", "part_p2", "proj_pc", "part_pc"];
pub const VSR_TERMS: [&str; 2] = ["proj_pop", "part_pop"];
