//! Full vision decision chain for a single camera pose: render, match,
//! segment the 0.2-0.4 m depth band, find blobs, decide.
//!
//! Usage: cargo run --release --example obstacle_decision

use std::path::Path;

use stereonav::config::load_calibration;
use stereonav::matcher::{match_sad, prefilter, MatcherParams};
use stereonav::obstacle::{decide, find_blobs, segment_near};
use stereonav::render::{render_stereo, Scene};
use stereonav::world::WorldModel;
use stereonav::Pose2D;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let assets = Path::new(env!("CARGO_MANIFEST_DIR")).join("assets");
    let rig = load_calibration(&assets.join("calibration_sim.cfg"))?;
    // a box 0.3 m ahead of the camera, slightly to its left
    let world = WorldModel::parse(
        "floor 4 3\n\
         box 1.25 1.55 0.2 0.2 0.5 7\n",
    )?;
    let scene = Scene {
        world: &world,
        camera: Pose2D::new(1.0, 1.5, 0.0),
        camera_height: 0.25,
    };
    let r = render_stereo(&scene, &rig);

    let params = MatcherParams { max_disp: 80, ..MatcherParams::default() };
    let dm = match_sad(
        &prefilter(&r.left, params.prefilter_cap),
        &prefilter(&r.right, params.prefilter_cap),
        &params,
    )?;

    let horopter = (params.min_disp as f64, params.max_disp as f64);
    let seg = segment_near(&dm, &rig, 0.2, 0.4, horopter)?;
    if seg.exceeds_horopter {
        eprintln!(
            "warning: band needs disparities {:.1}-{:.1} px, outside the searched range",
            seg.band_px.0, seg.band_px.1
        );
    }
    let blobs = find_blobs(&seg.mask, 150);
    for b in &blobs {
        println!(
            "blob: bbox=({},{})-({},{}) centroid=({:.1},{:.1}) area={}",
            b.bbox.0, b.bbox.1, b.bbox.2, b.bbox.3, b.centroid.0, b.centroid.1, b.area
        );
    }
    println!("decision: {}", decide(&blobs, dm.width()));
    Ok(())
}
