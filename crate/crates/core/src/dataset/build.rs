//! Dataset generation and loading.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::formats::*;
use super::render::{default_splat_radius, make_partial, render_silhouette};
use super::shapes::{gen_shape, ShapeKind, ShapeSpec};
use crate::error::{Error, Result};
use crate::geometry::{make_view_rig, resample_to, CameraModel, CameraTransform, PointCloud};
use crate::silhouette::{extract_boundary, sample_foreground, BoundarySet, SilhouetteImage};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub objects: usize,
    /// Leading views of the 8-camera rig to keep.
    pub views: usize,
    /// Sampled 2D points per silhouette.
    pub m: usize,
    /// Points in ground-truth and partial clouds.
    pub points: usize,
    /// Dense surface samples per object.
    pub dense: usize,
    /// Square silhouette side in pixels.
    pub image_size: usize,
    pub seed: u64,
    /// Object `j` has kind `kinds[j % kinds.len()]`.
    pub kinds: Vec<ShapeKind>,
    /// The last `test_objects` objects form the test split.
    pub test_objects: usize,
    pub camera_model: CameraModel,
    pub rig_radius: f64,
    /// Also write the dense samples (large).
    pub save_dense: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            objects: 20,
            views: 8,
            m: 4096,
            points: 2048,
            dense: 16384,
            image_size: 64,
            seed: 0,
            kinds: ShapeKind::ALL.to_vec(),
            test_objects: 0,
            camera_model: CameraModel::Orthographic,
            rig_radius: 3.0,
            save_dense: false,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("objects", self.objects),
            ("views", self.views),
            ("m", self.m),
            ("points", self.points),
            ("image_size", self.image_size),
            ("kinds", self.kinds.len()),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Invalid(format!("dataset {name} must be positive")));
        }
        if self.views > 8 {
            return Err(Error::Invalid(format!("the rig has 8 views, {} requested", self.views)));
        }
        if self.dense < 2 {
            return Err(Error::Invalid("need at least two dense samples".into()));
        }
        if self.test_objects > self.objects {
            return Err(Error::Invalid("more test objects than objects".into()));
        }
        Ok(())
    }

    pub fn cameras(&self) -> Result<Vec<CameraTransform>> {
        let mut cams = make_view_rig(self.rig_radius, (self.image_size, self.image_size), self.camera_model)?;
        cams.truncate(self.views);
        Ok(cams)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Paths relative to the dataset root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewEntry {
    pub partial: String,
    pub camera: String,
    pub silhouette: String,
    pub boundary: String,
    pub samples: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectEntry {
    pub name: String,
    pub split: Split,
    pub spec: ShapeSpec,
    pub gt: String,
    pub dense: Option<String>,
    pub views: Vec<ViewEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Directory holding the manifest; set on load, not serialized.
    #[serde(skip)]
    pub root: PathBuf,
    pub config: DatasetConfig,
    pub objects: Vec<ObjectEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path)?;
        let mut manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::format("manifest", e.to_string()))?;
        manifest.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(manifest)
    }

    /// Indices of the objects in `split`.
    pub fn split(&self, split: Split) -> Vec<usize> {
        (0..self.objects.len()).filter(|&i| self.objects[i].split == split).collect()
    }

    pub fn load_object(&self, index: usize) -> Result<ObjectRecord> {
        let entry = self
            .objects
            .get(index)
            .ok_or_else(|| Error::Invalid(format!("object {index} not in manifest")))?;
        let path = |rel: &str| self.root.join(rel);
        let views = entry
            .views
            .iter()
            .map(|v| {
                Ok(ViewRecord {
                    camera: read_camera(&path(&v.camera))?,
                    partial: read_xyz(&path(&v.partial))?,
                    silhouette: read_pgm(&path(&v.silhouette))?,
                    boundary: read_boundary(&path(&v.boundary))?,
                    samples: read_uv(&path(&v.samples))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(ObjectRecord {
            spec: entry.spec.clone(),
            dense: entry.dense.as_deref().map(|d| read_xyz(&path(d))).transpose()?,
            gt: read_xyz(&path(&entry.gt))?,
            views,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewRecord {
    pub camera: CameraTransform,
    pub partial: PointCloud,
    pub silhouette: SilhouetteImage,
    pub boundary: BoundarySet,
    /// `G^i`, pixel coordinates.
    pub samples: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectRecord {
    pub spec: ShapeSpec,
    /// Present when generated in memory or saved with `save_dense`.
    pub dense: Option<PointCloud>,
    pub gt: PointCloud,
    pub views: Vec<ViewRecord>,
}

/// Generates object `index` of the dataset; independent of every other object.
pub fn generate_object(config: &DatasetConfig, index: usize) -> Result<ObjectRecord> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ index as u64);
    let kind = config.kinds[index % config.kinds.len()];
    let spec = ShapeSpec::random(kind, &mut rng);
    let dense = gen_shape(&spec, config.dense, rng.gen())?;
    let gt = resample_to(&dense, config.points, rng.gen())?;
    let views = config
        .cameras()?
        .into_iter()
        .map(|camera| {
            let silhouette = render_silhouette(&dense, &camera, default_splat_radius(&dense, &camera)?)?;
            let partial = make_partial(&dense, &camera, config.image_size, config.points, rng.gen())?;
            let boundary = extract_boundary(&silhouette)?;
            let samples = sample_foreground(&silhouette, config.m, rng.gen())?;
            Ok(ViewRecord { camera, partial, silhouette, boundary, samples })
        })
        .collect::<Result<_>>()?;
    Ok(ObjectRecord { spec, dense: Some(dense), gt, views })
}

fn object_name(config: &DatasetConfig, index: usize) -> String {
    format!("{index:04}_{}", config.kinds[index % config.kinds.len()].name())
}

fn write_object(root: &Path, config: &DatasetConfig, index: usize, record: &ObjectRecord) -> Result<ObjectEntry> {
    let name = object_name(config, index);
    let dir = format!("objects/{name}");
    fs::create_dir_all(root.join(&dir))?;
    let gt = format!("{dir}/gt.xyz");
    write_xyz(&root.join(&gt), &record.gt)?;
    let dense = match (&record.dense, config.save_dense) {
        (Some(d), true) => {
            let rel = format!("{dir}/dense.xyz");
            write_xyz(&root.join(&rel), d)?;
            Some(rel)
        }
        _ => None,
    };
    let mut views = Vec::with_capacity(record.views.len());
    for (v, view) in record.views.iter().enumerate() {
        let entry = ViewEntry {
            partial: format!("{dir}/view{v}_partial.xyz"),
            camera: format!("{dir}/view{v}_camera.json"),
            silhouette: format!("{dir}/view{v}_silhouette.pgm"),
            boundary: format!("{dir}/view{v}_boundary.txt"),
            samples: format!("{dir}/view{v}_samples.uv"),
        };
        write_xyz(&root.join(&entry.partial), &view.partial)?;
        write_camera(&root.join(&entry.camera), &view.camera)?;
        write_pgm(&root.join(&entry.silhouette), &view.silhouette)?;
        write_boundary(&root.join(&entry.boundary), &view.boundary)?;
        write_uv(&root.join(&entry.samples), &view.samples)?;
        views.push(entry);
    }
    let split = if index + config.test_objects >= config.objects { Split::Test } else { Split::Train };
    Ok(ObjectEntry { name, split, spec: record.spec.clone(), gt, dense, views })
}

/// Generates every object, writes it under `out_dir` and writes the
/// manifest last. The parent of `out_dir` must exist.
pub fn build_dataset(config: &DatasetConfig, out_dir: &Path) -> Result<Manifest> {
    config.validate()?;
    if !out_dir.is_dir() {
        fs::create_dir(out_dir)?;
    }
    let objects = (0..config.objects)
        .into_par_iter()
        .map(|i| write_object(out_dir, config, i, &generate_object(config, i)?))
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest { root: out_dir.to_path_buf(), config: config.clone(), objects };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(out_dir.join(MANIFEST_FILE), text)?;
    Ok(manifest)
}
