//! Command-line front end. Every capability of the library is reachable
//! as a subcommand; all outputs are written atomically. Exit codes:
//! 0 success, 1 validation failure (bad data or parameters), 2 I/O or
//! usage errors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::calib::{
    check_alignment, essential_from_fundamental, ransac_fundamental, Correspondence, RansacConfig,
};
use crate::cloud;
use crate::config;
use crate::geometry::{build_reprojection_matrix, PixelCoord, Pose2D};
use crate::image;
use crate::mapping::{OccupancyGrid, SensorGeometry, UltrasoundReading};
use crate::matcher::{disparity_to_gray, match_sad, prefilter, DisparityMap, MatcherParams};
use crate::obstacle::{decide, find_blobs, segment_near};
use crate::render::{render_stereo_with, RenderOptions, Scene};
use crate::sim::Simulation;
use crate::world::WorldModel;

/// Stereo-vision indoor navigation toolkit.
#[derive(Debug, Parser)]
#[command(name = "stereonav", version, about)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Block-match a stereo pair into a disparity map.
    Match(MatchArgs),
    /// Segment near obstacles in a disparity map and print the decision.
    Obstacle(ObstacleArgs),
    /// Reproject a disparity map into a colored PLY point cloud.
    Reconstruct(ReconstructArgs),
    /// Estimate F/E from correspondences and check rig alignment.
    CalibCheck(CalibCheckArgs),
    /// Render a synthetic stereo pair of a world model.
    Render(RenderArgs),
    /// Run the closed-loop navigation simulation.
    Simulate(SimulateArgs),
    /// Build an occupancy grid from logged ultrasound readings.
    Map(MapArgs),
}

#[derive(Debug, Args)]
struct MatcherOpts {
    /// Matching window side (odd, >= 3).
    #[arg(long, default_value_t = 9)]
    window: u32,
    #[arg(long, default_value_t = 0)]
    min_disp: u32,
    #[arg(long, default_value_t = 64)]
    max_disp: u32,
    /// Prefilter gradient clamp.
    #[arg(long, default_value_t = 31)]
    prefilter_cap: u8,
    /// Minimum window texture energy.
    #[arg(long, default_value_t = 10)]
    texture_threshold: u32,
    /// Uniqueness margin in percent.
    #[arg(long, default_value_t = 15)]
    uniqueness_ratio: u32,
}

impl MatcherOpts {
    fn params(&self) -> MatcherParams {
        MatcherParams {
            window: self.window,
            min_disp: self.min_disp,
            max_disp: self.max_disp,
            prefilter_cap: self.prefilter_cap,
            texture_threshold: self.texture_threshold,
            uniqueness_ratio: self.uniqueness_ratio,
        }
    }
}

#[derive(Debug, Args)]
struct MatchArgs {
    /// Left image (8-bit PGM).
    #[arg(long)]
    left: PathBuf,
    /// Right image (8-bit PGM).
    #[arg(long)]
    right: PathBuf,
    /// Output disparity map (16-bit PGM, fixed point x16).
    #[arg(long)]
    out: PathBuf,
    /// Optional grayscale visualization of the disparity map.
    #[arg(long)]
    vis: Option<PathBuf>,
    #[command(flatten)]
    matcher: MatcherOpts,
}

#[derive(Debug, Args)]
struct ObstacleArgs {
    /// Disparity map produced by `match` (16-bit PGM).
    #[arg(long)]
    disparity: PathBuf,
    /// Calibration file.
    #[arg(long)]
    calib: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    z_near: f64,
    #[arg(long, default_value_t = 0.4)]
    z_far: f64,
    #[arg(long, default_value_t = 150)]
    min_area: u32,
    /// Horopter the disparity map was computed over, for the
    /// out-of-range warning.
    #[arg(long, default_value_t = 0)]
    min_disp: u32,
    #[arg(long, default_value_t = 64)]
    max_disp: u32,
    /// Optional segmentation mask output (PGM).
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Optional blob table output (CSV x0,y0,x1,y1,cx,cy,area).
    #[arg(long)]
    blobs: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReconstructArgs {
    #[arg(long)]
    disparity: PathBuf,
    /// Color image aligned with the disparity map (PPM).
    #[arg(long)]
    color: PathBuf,
    #[arg(long)]
    calib: PathBuf,
    /// Output point cloud (ASCII PLY).
    #[arg(long)]
    out: PathBuf,
    /// Apply range/cluster filtering before writing.
    #[arg(long)]
    filter: bool,
    #[arg(long, default_value_t = 30)]
    min_cluster: usize,
    #[arg(long, default_value_t = 0.05)]
    cluster_radius: f64,
    #[arg(long, default_value_t = 5.0)]
    max_range: f64,
}

#[derive(Debug, Args)]
struct CalibCheckArgs {
    /// Correspondence CSV with lines `xl,yl,xr,yr`.
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    calib: PathBuf,
    /// RANSAC inlier threshold in pixels.
    #[arg(long, default_value_t = 1.0)]
    threshold: f64,
    #[arg(long, default_value_t = 500)]
    iterations: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Vertical-alignment pass threshold in pixels.
    #[arg(long, default_value_t = 1.0)]
    align_threshold: f64,
}

#[derive(Debug, Args)]
struct RenderArgs {
    /// World model file.
    #[arg(long)]
    world: PathBuf,
    #[arg(long)]
    calib: PathBuf,
    /// Camera pose as `x,y,theta_deg`.
    #[arg(long, default_value = "0,0,0")]
    pose: String,
    #[arg(long, default_value_t = 0.25)]
    height: f64,
    #[arg(long)]
    left_out: PathBuf,
    #[arg(long)]
    right_out: PathBuf,
    /// Optional ground-truth disparity output (16-bit PGM).
    #[arg(long)]
    gt_out: Option<PathBuf>,
    /// Optional left color image output (PPM).
    #[arg(long)]
    color_out: Option<PathBuf>,
    /// Optional occlusion mask output (PGM).
    #[arg(long)]
    occlusion_out: Option<PathBuf>,
    /// Inject vertical misalignment into the right camera (pixels).
    #[arg(long, default_value_t = 0.0)]
    right_cy_offset: f64,
    /// Additive Gaussian intensity noise sigma (gray levels).
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 0)]
    noise_seed: u64,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    world: PathBuf,
    #[arg(long)]
    calib: PathBuf,
    /// Run configuration (`key = value`; defaults apply when omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Pose log output (CSV t,x,y,theta,decision).
    #[arg(long)]
    log: PathBuf,
    /// Optional occupancy map output (PGM + .meta.txt).
    #[arg(long)]
    map: Option<PathBuf>,
    /// Optional merged point cloud output (PLY).
    #[arg(long)]
    cloud: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MapArgs {
    /// Readings CSV with lines `x,y,theta,sensor,range` (empty range =
    /// nothing within max range).
    #[arg(long)]
    readings: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    resolution: f64,
    #[arg(long, default_value_t = 120)]
    width: usize,
    #[arg(long, default_value_t = 120)]
    height: usize,
    #[arg(long, default_value_t = -3.0)]
    origin_x: f64,
    #[arg(long, default_value_t = -3.0)]
    origin_y: f64,
}

/// CLI failure, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad data or parameters (exit 1).
    Validation(String),
    /// Missing/unreadable/unwritable files (exit 2).
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Io(m) => m,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<config::ConfigError> for CliError {
    fn from(e: config::ConfigError) -> Self {
        match e {
            config::ConfigError::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<image::ImageError> for CliError {
    fn from(e: image::ImageError) -> Self {
        match e {
            image::ImageError::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<crate::world::WorldError> for CliError {
    fn from(e: crate::world::WorldError) -> Self {
        match e {
            crate::world::WorldError::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<cloud::CloudError> for CliError {
    fn from(e: cloud::CloudError) -> Self {
        match e {
            cloud::CloudError::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

fn validation<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Validation(e.to_string())
}

/// Parse args and run; returns the process exit code. Output goes to
/// `out` so tests can capture it.
pub fn run<I, T>(args: I, out: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version (exit 0) and usage errors (2)
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = write!(out as &mut dyn std::io::Write, "{e}");
            return code;
        }
    };
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(out, "error: {}", e.message());
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    match cli.command {
        Command::Match(a) => cmd_match(a, out),
        Command::Obstacle(a) => cmd_obstacle(a, out),
        Command::Reconstruct(a) => cmd_reconstruct(a, out),
        Command::CalibCheck(a) => cmd_calib_check(a, out),
        Command::Render(a) => cmd_render(a, out),
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::Map(a) => cmd_map(a, out),
    }
}

fn cmd_match(a: MatchArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let left = image::read_pgm(&a.left)?;
    let right = image::read_pgm(&a.right)?;
    let p = a.matcher.params();
    let lp = prefilter(&left, p.prefilter_cap);
    let rp = prefilter(&right, p.prefilter_cap);
    let dm = match_sad(&lp, &rp, &p).map_err(validation)?;
    dm.save(&a.out)?;
    if let Some(vis) = &a.vis {
        image::write_pgm(vis, &disparity_to_gray(&dm, p.min_disp, p.max_disp))?;
    }
    writeln!(
        out,
        "matched {}x{}: {} valid pixels -> {}",
        dm.width(),
        dm.height(),
        dm.valid_count(),
        a.out.display()
    )?;
    Ok(())
}

fn cmd_obstacle(a: ObstacleArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let dm = DisparityMap::load(&a.disparity)?;
    let rig = config::load_calibration(&a.calib)?;
    let seg = segment_near(
        &dm,
        &rig,
        a.z_near,
        a.z_far,
        (a.min_disp as f64, a.max_disp as f64),
    )
    .map_err(validation)?;
    if seg.exceeds_horopter {
        writeln!(
            out,
            "warning: depth band [{}, {}] m maps to disparities [{:.2}, {:.2}] px, \
             outside the matched horopter [{}, {}]",
            a.z_near, a.z_far, seg.band_px.0, seg.band_px.1, a.min_disp, a.max_disp
        )?;
    }
    let blobs = find_blobs(&seg.mask, a.min_area);
    let decision = decide(&blobs, dm.width());
    if let Some(mask_path) = &a.mask {
        image::write_pgm(mask_path, &seg.mask.to_gray())?;
    }
    if let Some(blob_path) = &a.blobs {
        let mut csv = String::from("x0,y0,x1,y1,cx,cy,area\n");
        for b in &blobs {
            let _ = writeln!(
                csv,
                "{},{},{},{},{:.2},{:.2},{}",
                b.bbox.0, b.bbox.1, b.bbox.2, b.bbox.3, b.centroid.0, b.centroid.1, b.area
            );
        }
        image::atomic_write(blob_path, csv.as_bytes())?;
    }
    writeln!(out, "blobs: {}", blobs.len())?;
    writeln!(out, "decision: {decision}")?;
    Ok(())
}

fn cmd_reconstruct(a: ReconstructArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let dm = DisparityMap::load(&a.disparity)?;
    let rgb = image::read_ppm(&a.color)?;
    let rig = config::load_calibration(&a.calib)?;
    let q = build_reprojection_matrix(&rig);
    let mut c = cloud::cloud_from_disparity(&dm, &rgb, &q)?;
    if a.filter {
        c = cloud::filter_cloud(
            &c,
            &cloud::CloudFilterParams {
                min_cluster: a.min_cluster,
                cluster_radius: a.cluster_radius,
                max_range: a.max_range,
            },
        );
    }
    cloud::write_ply(&a.out, &c)?;
    writeln!(out, "wrote {} points -> {}", c.len(), a.out.display())?;
    Ok(())
}

fn parse_pairs(path: &Path) -> Result<Vec<Correspondence>, CliError> {
    let text = std::fs::read_to_string(path)?;
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if i == 0 && fields.iter().any(|f| f.parse::<f64>().is_err()) {
            continue; // header line
        }
        if fields.len() != 4 {
            return Err(CliError::Validation(format!(
                "{}:{}: expected 4 fields xl,yl,xr,yr",
                path.display(),
                i + 1
            )));
        }
        let mut v = [0.0f64; 4];
        for (slot, f) in v.iter_mut().zip(&fields) {
            *slot = f.parse().map_err(|_| {
                CliError::Validation(format!("{}:{}: bad number `{f}`", path.display(), i + 1))
            })?;
        }
        pairs.push(Correspondence {
            left: PixelCoord { x: v[0], y: v[1] },
            right: PixelCoord { x: v[2], y: v[3] },
        });
    }
    Ok(pairs)
}

fn cmd_calib_check(a: CalibCheckArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let rig = config::load_calibration(&a.calib)?;
    let pairs = parse_pairs(&a.pairs)?;
    let cfg = RansacConfig {
        iterations: a.iterations,
        inlier_threshold_px: a.threshold,
        seed: a.seed,
        ..Default::default()
    };
    let (f, mask) = ransac_fundamental(&pairs, &cfg).map_err(validation)?;
    let inliers: Vec<Correspondence> = pairs
        .iter()
        .zip(&mask)
        .filter_map(|(c, &m)| m.then_some(*c))
        .collect();
    writeln!(out, "correspondences: {} ({} inliers)", pairs.len(), inliers.len())?;
    writeln!(out, "fundamental matrix:")?;
    for r in 0..3 {
        writeln!(out, "  [{:+.6e} {:+.6e} {:+.6e}]", f.m[(r, 0)], f.m[(r, 1)], f.m[(r, 2)])?;
    }
    let e = essential_from_fundamental(&f, &rig.left, &rig.right).map_err(validation)?;
    writeln!(out, "essential matrix:")?;
    for r in 0..3 {
        writeln!(out, "  [{:+.6e} {:+.6e} {:+.6e}]", e.m[(r, 0)], e.m[(r, 1)], e.m[(r, 2)])?;
    }
    let report = check_alignment(&inliers, a.align_threshold).map_err(validation)?;
    writeln!(out, "{report}")?;
    if !report.pass {
        return Err(CliError::Validation("rig misaligned: rectification required".into()));
    }
    Ok(())
}

fn parse_pose(s: &str) -> Result<Pose2D, CliError> {
    let fields: Vec<&str> = s.split(',').map(str::trim).collect();
    if fields.len() != 3 {
        return Err(CliError::Validation(format!("pose `{s}` must be x,y,theta_deg")));
    }
    let mut v = [0.0f64; 3];
    for (slot, f) in v.iter_mut().zip(&fields) {
        *slot = f
            .parse()
            .map_err(|_| CliError::Validation(format!("bad pose number `{f}`")))?;
    }
    Ok(Pose2D::new(v[0], v[1], v[2].to_radians()))
}

fn cmd_render(a: RenderArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let world = WorldModel::load(&a.world)?;
    let rig = config::load_calibration(&a.calib)?;
    let pose = parse_pose(&a.pose)?;
    let scene = Scene { world: &world, camera: pose, camera_height: a.height };
    let opts = RenderOptions {
        right_cy_offset_px: a.right_cy_offset,
        noise_sigma: a.noise_sigma,
        noise_seed: a.noise_seed,
    };
    let r = render_stereo_with(&scene, &rig, &opts);
    image::write_pgm(&a.left_out, &r.left)?;
    image::write_pgm(&a.right_out, &r.right)?;
    if let Some(p) = &a.gt_out {
        r.gt_disparity.save(p)?;
    }
    if let Some(p) = &a.color_out {
        image::write_ppm(p, &r.left_rgb)?;
    }
    if let Some(p) = &a.occlusion_out {
        image::write_pgm(p, &r.occlusion.to_gray())?;
    }
    writeln!(
        out,
        "rendered {}x{} pair, {} ground-truth pixels",
        rig.left.width,
        rig.left.height,
        r.gt_disparity.valid_count()
    )?;
    Ok(())
}

fn cmd_simulate(a: SimulateArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let world = WorldModel::load(&a.world)?;
    let rig = config::load_calibration(&a.calib)?;
    let rc = match &a.config {
        Some(p) => config::load_run_config(p)?,
        None => config::RunConfig::default(),
    };
    let sim = Simulation::new(world, rig, rc.params, rc.start)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let report = sim.run();
    image::atomic_write(&a.log, report.log_csv().as_bytes())?;
    if let Some(p) = &a.map {
        report.grid.save(p)?;
    }
    if let Some(p) = &a.cloud {
        cloud::write_ply(p, &report.merged_cloud)?;
    }
    writeln!(
        out,
        "simulated {} ticks, {} collisions, final pose ({:.3}, {:.3}, {:.3})",
        report.log.len(),
        report.collisions,
        report.final_pose.x,
        report.final_pose.y,
        report.final_pose.theta
    )?;
    if report.collisions > 0 {
        return Err(CliError::Validation(format!(
            "robot collided {} times",
            report.collisions
        )));
    }
    Ok(())
}

fn cmd_map(a: MapArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&a.readings)?;
    let geometry = SensorGeometry::default();
    let mut grid = OccupancyGrid::new(a.width, a.height, a.resolution, (a.origin_x, a.origin_y));
    let mut n = 0usize;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if i == 0 && fields.first().is_some_and(|f| f.parse::<f64>().is_err()) {
            continue; // header line
        }
        if fields.len() != 5 {
            return Err(CliError::Validation(format!(
                "{}:{}: expected 5 fields x,y,theta,sensor,range",
                a.readings.display(),
                i + 1
            )));
        }
        let num = |s: &str| -> Result<f64, CliError> {
            s.parse().map_err(|_| {
                CliError::Validation(format!(
                    "{}:{}: bad number `{s}`",
                    a.readings.display(),
                    i + 1
                ))
            })
        };
        let range = if fields[4].is_empty() { None } else { Some(num(fields[4])?) };
        let reading = UltrasoundReading {
            sensor_index: num(fields[3])? as usize,
            range,
            pose: Pose2D::new(num(fields[0])?, num(fields[1])?, num(fields[2])?),
        };
        grid.integrate_reading(&reading, &geometry);
        n += 1;
    }
    grid.save(&a.out)?;
    writeln!(
        out,
        "integrated {n} readings, {} occupied cells -> {}",
        grid.occupied_cells().len(),
        a.out.display()
    )?;
    Ok(())
}
