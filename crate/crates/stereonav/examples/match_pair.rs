//! Run the SAD block matcher on a rendered stereo pair and compare the
//! result against the renderer's ground-truth disparity.
//!
//! Usage: cargo run --release --example match_pair

use std::path::Path;
use std::time::Instant;

use stereonav::config::load_calibration;
use stereonav::matcher::{match_sad, prefilter, MatcherParams, DISP_SCALE};
use stereonav::render::{render_stereo, Scene};
use stereonav::world::WorldModel;
use stereonav::Pose2D;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let assets = Path::new(env!("CARGO_MANIFEST_DIR")).join("assets");
    let world = WorldModel::load(&assets.join("worlds/room_02.txt"))?;
    let rig = load_calibration(&assets.join("calibration_sim.cfg"))?;
    let scene = Scene {
        world: &world,
        camera: Pose2D::new(1.0, 1.5, 0.3),
        camera_height: 0.25,
    };
    let r = render_stereo(&scene, &rig);

    let params = MatcherParams { max_disp: 80, ..MatcherParams::default() };
    let left = prefilter(&r.left, params.prefilter_cap);
    let right = prefilter(&r.right, params.prefilter_cap);
    let t0 = Instant::now();
    let dm = match_sad(&left, &right, &params)?;
    let elapsed = t0.elapsed();

    // accuracy over non-occluded pixels with valid ground truth
    let (mut total, mut within_1px) = (0u32, 0u32);
    for y in 0..dm.height() {
        for x in 0..dm.width() {
            let (Some(gt), Some(d)) = (r.gt_disparity.get(x, y), dm.get(x, y)) else {
                continue;
            };
            if r.occlusion.get(x, y) {
                continue;
            }
            total += 1;
            if (d - gt).abs() <= 1.0 + 1.0 / DISP_SCALE {
                within_1px += 1;
            }
        }
    }

    println!(
        "matched {}x{} in {:.1} ms: {} valid pixels, {:.1}% within 1 px of ground truth",
        dm.width(),
        dm.height(),
        elapsed.as_secs_f64() * 1e3,
        dm.valid_count(),
        100.0 * within_1px as f64 / total.max(1) as f64
    );
    Ok(())
}
