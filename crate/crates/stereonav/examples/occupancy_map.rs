//! Build an occupancy grid from scripted ultrasound sweeps: the sensor
//! poses are generated along a path through a bundled room and the
//! ranges come from exact 2D ray casts against the world model.
//!
//! Usage: cargo run --example occupancy_map [out.pgm]

use std::path::{Path, PathBuf};

use stereonav::mapping::{OccupancyGrid, SensorGeometry, UltrasoundReading};
use stereonav::world::WorldModel;
use stereonav::Pose2D;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let assets = Path::new(env!("CARGO_MANIFEST_DIR")).join("assets");
    let out: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "map.pgm".into()).into();

    let world = WorldModel::load(&assets.join("worlds/room_01.txt"))?;
    let geom = SensorGeometry::default();
    let mut grid = OccupancyGrid::new(100, 80, 0.05, (-0.5, -0.5));

    // spin in place at a few waypoints so the three beams sweep the room
    let waypoints = [(1.0, 1.5), (2.0, 1.0), (3.0, 1.8), (2.0, 2.2)];
    let mut readings = 0u32;
    for &(x, y) in &waypoints {
        for step in 0..72 {
            let theta = step as f64 * 5f64.to_radians();
            let pose = Pose2D::new(x, y, theta);
            for (sensor_index, &mount) in geom.mount_angles.iter().enumerate() {
                let range = world.raycast_2d((x, y), theta + mount, geom.max_range);
                grid.integrate_reading(
                    &UltrasoundReading { sensor_index, range, pose },
                    &geom,
                );
                readings += 1;
            }
        }
    }

    grid.save(&out)?;
    println!(
        "integrated {} readings, {} occupied cells -> {}",
        readings,
        grid.occupied_cells().len(),
        out.display()
    );
    Ok(())
}
