//! Render a stereo pair (plus ground-truth disparity and occlusion
//! mask) from one of the bundled room descriptions.
//!
//! Usage: cargo run --example render_scene [out_dir]

use std::path::{Path, PathBuf};

use stereonav::config::load_calibration;
use stereonav::image::{write_pgm, write_ppm};
use stereonav::matcher::disparity_to_gray;
use stereonav::render::{render_stereo, Scene};
use stereonav::world::WorldModel;
use stereonav::Pose2D;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let assets = Path::new(env!("CARGO_MANIFEST_DIR")).join("assets");
    let out: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "render_out".into()).into();
    std::fs::create_dir_all(&out)?;

    let world = WorldModel::load(&assets.join("worlds/room_01.txt"))?;
    let rig = load_calibration(&assets.join("calibration_sim.cfg"))?;
    let scene = Scene {
        world: &world,
        camera: Pose2D::new(1.0, 1.5, 0.0),
        camera_height: 0.25,
    };

    let r = render_stereo(&scene, &rig);
    write_pgm(&out.join("left.pgm"), &r.left)?;
    write_pgm(&out.join("right.pgm"), &r.right)?;
    write_ppm(&out.join("left.ppm"), &r.left_rgb)?;
    r.gt_disparity.save(&out.join("gt_disparity.pgm"))?;
    write_pgm(&out.join("gt_vis.pgm"), &disparity_to_gray(&r.gt_disparity, 0, 80))?;
    write_pgm(&out.join("occlusion.pgm"), &r.occlusion.to_gray())?;

    println!(
        "rendered {}x{} pair into {} ({} occluded pixels)",
        r.left.width(),
        r.left.height(),
        out.display(),
        r.occlusion.count()
    );
    Ok(())
}
