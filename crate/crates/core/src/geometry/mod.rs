//! Point clouds, rigid transforms, exact neighbor search and error measures.

mod cloud;
mod errors;
pub mod io;
mod neighbors;
mod transform;

pub use cloud::{CorrespondenceSet, Point, PointCloud};
pub use errors::{
    euler_xyz_deg, geodesic_angle_deg, mae, rmse, rotation_error, translation_error, EulerXyz,
    RotationError, GIMBAL_LOCK_EPS_DEG,
};
pub use neighbors::{knn, knn_graph_rows, knn_rows, nearest, radius_neighbors};
pub use transform::{apply_transform, RigidTransform};
