//! Closed-loop navigation run in a bundled room: vision decisions,
//! ultrasound arbitration, PID heading control, encoder odometry and
//! online occupancy mapping.
//!
//! Usage: cargo run --release --example simulate_run [world.txt]

use std::path::{Path, PathBuf};

use stereonav::config::{load_calibration, load_run_config};
use stereonav::sim::Simulation;
use stereonav::world::WorldModel;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let assets = Path::new(env!("CARGO_MANIFEST_DIR")).join("assets");
    let world_path: PathBuf = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| assets.join("worlds/room_04.txt"));

    let world = WorldModel::load(&world_path)?;
    let rig = load_calibration(&assets.join("calibration_sim.cfg"))?;
    let run = load_run_config(&assets.join("sim_run.cfg"))?;

    let report = Simulation::new(world, rig, run.params, run.start)?.run();
    print!("{}", report.log_csv());
    eprintln!(
        "ticks={} collisions={} final=({:.3},{:.3},{:.3}) odom=({:.3},{:.3},{:.3})",
        report.log.len(),
        report.collisions,
        report.final_pose.x,
        report.final_pose.y,
        report.final_pose.theta,
        report.odom_pose.x,
        report.odom_pose.y,
        report.odom_pose.theta,
    );
    Ok(())
}
