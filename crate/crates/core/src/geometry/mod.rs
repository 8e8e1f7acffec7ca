//! Point clouds, camera transforms, and point-set utilities.

mod camera;
mod cloud;
pub mod nn;
mod sampling;

pub use camera::{
    back_project, look_at_origin, make_view_rig, project, CameraModel, CameraTransform, ProjectedPoints,
    RIG_ELEVATION_DEG, RIG_FILL,
};
pub use cloud::{sq_dist, PointCloud};
pub use nn::{knn, nearest_neighbors, GridIndex};
pub use sampling::{farthest_point_sample, resample_to};
