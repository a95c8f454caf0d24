//! Stereo-vision indoor navigation stack.
//!
//! The pipeline goes from a synthetic (or captured) stereo pair to a
//! motion decision:
//!
//! 1. [`render`] — ray-cast a textured world model into a stereo pair
//!    with pixel-exact ground-truth disparity;
//! 2. [`matcher`] — SAD block matching with prefilter and post-filter,
//!    plus a brute-force oracle with identical semantics;
//! 3. [`geometry`] — triangulation and disparity-to-3D reprojection;
//! 4. [`obstacle`] — depth-band segmentation and the Forward / Turn /
//!    Stop policy;
//! 5. [`cloud`] — colored point clouds, clustering filter and PLY I/O;
//! 6. [`calib`] — epipolar geometry checks (8-point + RANSAC) that
//!    justify skipping rectification on an aligned rig;
//! 7. [`mapping`] — log-odds occupancy grid from ultrasound beams;
//! 8. [`sim`] — closed-loop differential-drive simulation tying it all
//!    together;
//! 9. [`world`] / [`config`] / [`image`] — file formats;
//! 10. [`cli`] — the `stereonav` command-line front end.
//!
//! See the crate `examples/` directory for one runnable program per
//! capability.

pub mod calib;
pub mod cli;
pub mod cloud;
pub mod config;
pub mod geometry;
pub mod image;
pub mod mapping;
pub mod matcher;
pub mod obstacle;
pub mod render;
pub mod sim;
pub mod world;

pub use calib::{Correspondence, FundamentalMatrix, RansacConfig};
pub use cloud::{CloudFilterParams, ColoredPoint, PointCloud};
pub use geometry::{CameraIntrinsics, Point3, Pose2D, StereoRig};
pub use image::{GrayImage, RgbImage};
pub use mapping::OccupancyGrid;
pub use matcher::{DisparityMap, MatcherParams};
pub use obstacle::Decision;
pub use render::{render_stereo, Scene};
pub use sim::{SimParams, Simulation};
pub use world::WorldModel;
