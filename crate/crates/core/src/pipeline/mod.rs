//! Training, inference and evaluation on top of a dataset manifest, plus
//! the checkpoint format.

mod checkpoint;
mod config;
mod eval;
mod train;

pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use config::{RunConfig, TrainView};
pub use eval::{complete_view, evaluate_objects, object_means, summarize_results, EvalOptions, ViewResult};
pub use train::{checkpoint_file, train, EpochSummary, LogRow, TrainOutput, Trainer, LOG_FILE};

use rayon::prelude::*;

use crate::dataset::{Manifest, ObjectRecord, Split};
use crate::error::{Error, Result};
use crate::geometry::{resample_to, CameraTransform, PointCloud};
use crate::losses::ViewTarget;
use crate::network::ModelConfig;
use crate::silhouette::{Image, SilhouetteImage};

/// One view of an object, ready for the network.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedView {
    /// Partial cloud resampled to the model's `n`.
    pub p_in: PointCloud,
    pub image: Image,
    pub camera: CameraTransform,
    pub silhouette: SilhouetteImage,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreparedObject {
    pub name: String,
    /// Category used to group evaluation rows.
    pub kind: String,
    pub gt: PointCloud,
    pub views: Vec<PreparedView>,
    /// Projection-loss supervision from every view.
    pub targets: Vec<ViewTarget>,
}

/// Resamples partials to `config.n` and checks image sizes.
pub fn prepare_object(name: &str, record: &ObjectRecord, config: &ModelConfig) -> Result<PreparedObject> {
    let views = record
        .views
        .iter()
        .map(|v| {
            let image = v.silhouette.to_image();
            if image.width != config.image_size || image.height != config.image_size {
                return Err(Error::shape(
                    "prepare",
                    format!("{name}: {}x{} silhouette for a {s}x{s} model", image.width, image.height, s = config.image_size),
                ));
            }
            Ok(PreparedView {
                p_in: resample_to(&v.partial, config.n, 0)?,
                image,
                camera: v.camera.clone(),
                silhouette: v.silhouette.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if views.is_empty() {
        return Err(Error::Invalid(format!("{name} has no views")));
    }
    let targets = record.views.iter().map(|v| ViewTarget { camera: v.camera.clone(), points: v.samples.clone() }).collect();
    Ok(PreparedObject { name: name.into(), kind: record.spec.kind().name().into(), gt: record.gt.clone(), views, targets })
}

/// Loads and prepares every object of `split`, in manifest order.
pub fn load_split(manifest: &Manifest, split: Split, config: &ModelConfig) -> Result<Vec<PreparedObject>> {
    let indices = manifest.split(split);
    if indices.is_empty() {
        return Err(Error::Invalid(format!("dataset has no {split:?} objects")));
    }
    indices
        .par_iter()
        .map(|&i| prepare_object(&manifest.objects[i].name, &manifest.load_object(i)?, config))
        .collect()
}

/// The `count` views used to calibrate a prediction from input view
/// `input`: the views following it in rig order, then `input` itself, so
/// the input view has the last word.
pub fn calibration_views(input: usize, views: usize, count: usize) -> Vec<usize> {
    let count = count.min(views);
    if count == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (1..count).map(|k| (input + k) % views).collect();
    order.push(input);
    order
}
