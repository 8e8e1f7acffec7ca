//! Synthetic training data: procedural shapes, partial scans, silhouettes
//! and their on-disk layout.

mod build;
pub mod formats;
pub mod render;
pub mod shapes;

pub use build::{
    build_dataset, generate_object, DatasetConfig, Manifest, ObjectEntry, ObjectRecord, Split, ViewEntry, ViewRecord,
    MANIFEST_FILE,
};
pub use render::{default_splat_radius, make_partial, mean_nn_spacing, pixels_per_unit, render_silhouette};
pub use shapes::{gen_shape, gen_shape_labeled, surface_area, Normalization, ShapeKind, ShapeSpec};
