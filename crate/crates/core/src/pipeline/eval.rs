use rayon::prelude::*;

use super::{calibration_views, PreparedObject};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::metrics::{reported_cd, summarize, EvalSummary};
use crate::network::{Ablation, Completion, Model};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    /// Views handed to the calibrator, input view last; 0 disables it.
    pub calibration_views: usize,
    pub ablation: Ablation,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { calibration_views: 1, ablation: Ablation::full() }
    }
}

/// Reported CDs of one `(object, view)` inference.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewResult {
    pub object: usize,
    pub view: usize,
    /// Coarse output `Pc` against ground truth.
    pub cd_pc: f64,
    /// Final output against ground truth.
    pub cd_out: f64,
    /// Minimum CD of the final output to any reference shape.
    pub mmd: Option<f64>,
}

/// Runs the pipeline on `object` with input view `view`.
pub fn complete_view(model: &Model, object: &PreparedObject, view: usize, options: &EvalOptions) -> Result<Completion> {
    let v = object.views.get(view).ok_or_else(|| Error::Invalid(format!("view {view} out of range")))?;
    let calibration: Vec<_> = calibration_views(view, object.views.len(), options.calibration_views)
        .into_iter()
        .map(|i| (object.views[i].camera.clone(), object.views[i].silhouette.clone()))
        .collect();
    model.complete(&v.p_in, &v.image, &calibration, options.ablation)
}

/// Every view of every object, in parallel with ordered output.
pub fn evaluate_objects(
    model: &Model,
    objects: &[PreparedObject],
    options: &EvalOptions,
    references: Option<&[PointCloud]>,
) -> Result<Vec<ViewResult>> {
    let jobs: Vec<(usize, usize)> =
        objects.iter().enumerate().flat_map(|(o, obj)| (0..obj.views.len()).map(move |v| (o, v))).collect();
    jobs.par_iter()
        .map(|&(o, v)| {
            let obj = &objects[o];
            let c = complete_view(model, obj, v, options)?;
            let mmd = match references {
                Some(refs) if !refs.is_empty() => {
                    let cds = refs.iter().map(|r| reported_cd(&c.p_out, r)).collect::<Result<Vec<_>>>()?;
                    Some(cds.into_iter().fold(f64::INFINITY, f64::min))
                }
                Some(_) => return Err(Error::Empty),
                None => None,
            };
            Ok(ViewResult { object: o, view: v, cd_pc: reported_cd(&c.pc, &obj.gt)?, cd_out: reported_cd(&c.p_out, &obj.gt)?, mmd })
        })
        .collect()
}

/// Per-category CD_min / CD_avg / STD of the final outputs, in the order
/// categories first appear.
pub fn summarize_results(objects: &[PreparedObject], results: &[ViewResult]) -> Result<EvalSummary> {
    let mut per_category: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
    for (o, obj) in objects.iter().enumerate() {
        let cds: Vec<f64> = results.iter().filter(|r| r.object == o).map(|r| r.cd_out).collect();
        if cds.is_empty() {
            continue;
        }
        match per_category.iter_mut().find(|(k, _)| *k == obj.kind) {
            Some((_, rows)) => rows.push(cds),
            None => per_category.push((obj.kind.clone(), vec![cds])),
        }
    }
    let mmds: Vec<f64> = results.iter().filter_map(|r| r.mmd).collect();
    let mmd = (!mmds.is_empty()).then(|| mmds.iter().sum::<f64>() / mmds.len() as f64);
    summarize(&per_category, mmd)
}

/// Mean of `f` over objects, each object first averaged over its views.
pub fn object_means(results: &[ViewResult], f: impl Fn(&ViewResult) -> f64) -> Vec<f64> {
    let objects = results.iter().map(|r| r.object + 1).max().unwrap_or(0);
    (0..objects)
        .filter_map(|o| {
            let v: Vec<f64> = results.iter().filter(|r| r.object == o).map(&f).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect()
}
