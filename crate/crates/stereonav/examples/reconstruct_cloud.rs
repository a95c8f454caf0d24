//! Reproject a matched disparity map into a colored 3D point cloud,
//! denoise it, and write an ASCII PLY file.
//!
//! Usage: cargo run --release --example reconstruct_cloud [out.ply]

use std::path::{Path, PathBuf};

use stereonav::cloud::{cloud_from_disparity, filter_cloud, write_ply, CloudFilterParams};
use stereonav::config::load_calibration;
use stereonav::geometry::build_reprojection_matrix;
use stereonav::matcher::{match_sad, prefilter, MatcherParams};
use stereonav::render::{render_stereo, Scene};
use stereonav::world::WorldModel;
use stereonav::Pose2D;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let assets = Path::new(env!("CARGO_MANIFEST_DIR")).join("assets");
    let out: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "scene.ply".into()).into();

    let world = WorldModel::load(&assets.join("worlds/room_03.txt"))?;
    let rig = load_calibration(&assets.join("calibration_sim.cfg"))?;
    let scene = Scene {
        world: &world,
        camera: Pose2D::new(1.0, 1.5, 0.5),
        camera_height: 0.25,
    };
    let r = render_stereo(&scene, &rig);

    let params = MatcherParams { max_disp: 80, ..MatcherParams::default() };
    let dm = match_sad(
        &prefilter(&r.left, params.prefilter_cap),
        &prefilter(&r.right, params.prefilter_cap),
        &params,
    )?;

    let q = build_reprojection_matrix(&rig);
    let raw = cloud_from_disparity(&dm, &r.left_rgb, &q)?;
    let filtered = filter_cloud(&raw, &CloudFilterParams::default());
    write_ply(&out, &filtered)?;
    println!(
        "{} raw points, {} after filtering -> {}",
        raw.len(),
        filtered.len(),
        out.display()
    );
    Ok(())
}
