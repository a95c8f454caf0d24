//! Epipolar self-check on synthetic correspondences: estimate F with
//! RANSAC over a contaminated set, derive E, and report the vertical
//! alignment that justifies skipping rectification.
//!
//! Usage: cargo run --example calib_check

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stereonav::calib::{
    check_alignment, epipolar_residual, essential_from_fundamental, project_correspondences,
    ransac_fundamental, Correspondence, RansacConfig,
};
use stereonav::geometry::{CameraIntrinsics, PixelCoord, Point3, StereoRig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cam = CameraIntrinsics::new(500.0, 320.0, 240.0, 640, 480)?;
    let rig = StereoRig::new(cam, cam, 0.063)?;

    // 70 true correspondences from random scene points, 30 gross outliers
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let points: Vec<Point3> = (0..120)
        .map(|_| {
            Point3::new(
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.4..0.4),
                rng.gen_range(0.8..4.0),
            )
        })
        .collect();
    let mut corrs = project_correspondences(&rig, &points, 0.0);
    corrs.truncate(70);
    let mut orng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..30 {
        corrs.push(Correspondence {
            left: PixelCoord { x: orng.gen_range(0.0..640.0), y: orng.gen_range(0.0..480.0) },
            right: PixelCoord { x: orng.gen_range(0.0..640.0), y: orng.gen_range(0.0..480.0) },
        });
    }

    let cfg = RansacConfig { seed: 7, ..Default::default() };
    let (f, mask) = ransac_fundamental(&corrs, &cfg)?;
    let inliers: Vec<&Correspondence> = corrs
        .iter()
        .zip(&mask)
        .filter_map(|(c, &m)| m.then_some(c))
        .collect();
    let max_residual = inliers
        .iter()
        .map(|c| epipolar_residual(&f, c).unwrap())
        .fold(0.0f64, f64::max);

    println!("F =\n{:.6}", f.m);
    println!("inliers: {}/{}", inliers.len(), corrs.len());
    println!("max inlier residual: {max_residual:.3e} px");

    let e = essential_from_fundamental(&f, &rig.left, &rig.right)?;
    println!("E =\n{:.6}", e.m);

    let inlier_corrs: Vec<Correspondence> = inliers.into_iter().copied().collect();
    println!("{}", check_alignment(&inlier_corrs, 1.0)?);
    Ok(())
}
