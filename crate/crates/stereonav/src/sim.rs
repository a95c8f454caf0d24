//! Deterministic simulation of the robot platform: differential-drive
//! kinematics, wheel encoders, compass, three forward ultrasound
//! sensors, PID heading control and the vision/ultrasound arbitration
//! loop.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::cloud::{self, CloudFilterParams, PointCloud};
use crate::geometry::{build_reprojection_matrix, normalize_angle, Pose2D, StereoRig};
use crate::mapping::{OccupancyGrid, SensorGeometry, UltrasoundReading};
use crate::matcher::{match_sad, prefilter, MatcherParams};
use crate::obstacle::{decide, find_blobs, segment_near, Decision};
use crate::render::{render_stereo, Scene};
use crate::world::WorldModel;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation parameters: {0}")]
    Params(String),
}

/// Maximum wheel rim speed, 0.20 m/s.
pub const V_MAX: f64 = 0.20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotState {
    pub pose: Pose2D,
    pub v_left: f64,
    pub v_right: f64,
}

impl RobotState {
    pub fn at(pose: Pose2D) -> Self {
        Self { pose, v_left: 0.0, v_right: 0.0 }
    }
}

/// Quadrature-free pulse counter: 400 pulses per wheel revolution
/// (0.9 degrees per pulse), with the fractional remainder carried
/// between reads.
#[derive(Debug, Clone)]
pub struct EncoderModel {
    pub pulses_per_rev: u32,
    pub wheel_radius: f64,
    carry: f64,
    total: i64,
}

impl EncoderModel {
    pub fn new(pulses_per_rev: u32, wheel_radius: f64) -> Self {
        Self { pulses_per_rev, wheel_radius, carry: 0.0, total: 0 }
    }

    /// Feed a wheel rotation (radians) and get the pulse count delta.
    pub fn advance(&mut self, rotation: f64) -> i64 {
        let step = 2.0 * std::f64::consts::PI / self.pulses_per_rev as f64;
        self.carry += rotation;
        // the epsilon keeps an exact multiple of `step` from losing a
        // pulse to floating-point division
        let pulses = (self.carry / step + 1e-9).floor() as i64;
        self.carry -= pulses as f64 * step;
        self.total += pulses;
        pulses
    }

    pub fn total_pulses(&self) -> i64 {
        self.total
    }

    /// Arc length represented by a pulse count.
    pub fn pulses_to_arc(&self, pulses: i64) -> f64 {
        pulses as f64 * 2.0 * std::f64::consts::PI / self.pulses_per_rev as f64
            * self.wheel_radius
    }
}

/// PID with integral anti-windup and output clamping. The output is an
/// angular-velocity command split symmetrically into wheel offsets.
#[derive(Debug, Clone)]
pub struct PidController {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub integral_clamp: f64,
    pub output_clamp: f64,
    integral: f64,
    prev_error: Option<f64>,
}

impl PidController {
    pub fn new(kp: f64, ki: f64, kd: f64) -> Self {
        Self {
            kp,
            ki,
            kd,
            integral_clamp: 1.0,
            output_clamp: 2.0,
            integral: 0.0,
            prev_error: None,
        }
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
        self.prev_error = None;
    }

    pub fn update(&mut self, error: f64, dt: f64) -> f64 {
        self.integral =
            (self.integral + error * dt).clamp(-self.integral_clamp, self.integral_clamp);
        let derivative = match self.prev_error {
            Some(prev) => (error - prev) / dt,
            None => 0.0,
        };
        self.prev_error = Some(error);
        let u = self.kp * error + self.ki * self.integral + self.kd * derivative;
        u.clamp(-self.output_clamp, self.output_clamp)
    }

    pub fn integral(&self) -> f64 {
        self.integral
    }
}

/// Three forward ultrasound sensors.
#[derive(Debug, Clone)]
pub struct UltrasoundModel {
    pub mount_angles: [f64; 3],
    pub max_range: f64,
    pub stop_threshold: f64,
}

impl Default for UltrasoundModel {
    fn default() -> Self {
        Self {
            mount_angles: [-20f64.to_radians(), 0.0, 20f64.to_radians()],
            max_range: 3.0,
            stop_threshold: 0.25,
        }
    }
}

impl UltrasoundModel {
    pub fn sensor_geometry(&self) -> SensorGeometry {
        SensorGeometry { mount_angles: self.mount_angles.to_vec(), max_range: self.max_range }
    }
}

/// Exact arc integration of differential-drive kinematics.
pub fn step_kinematics(s: &RobotState, dt: f64, track_width: f64) -> RobotState {
    let v = 0.5 * (s.v_left + s.v_right);
    let w = (s.v_right - s.v_left) / track_width;
    let pose = if w.abs() < 1e-9 {
        Pose2D::new(
            s.pose.x + v * dt * s.pose.theta.cos(),
            s.pose.y + v * dt * s.pose.theta.sin(),
            s.pose.theta,
        )
    } else {
        let r = v / w;
        let theta2 = s.pose.theta + w * dt;
        Pose2D::new(
            s.pose.x + r * (theta2.sin() - s.pose.theta.sin()),
            s.pose.y - r * (theta2.cos() - s.pose.theta.cos()),
            theta2,
        )
    };
    RobotState { pose, ..*s }
}

/// Compass heading: true theta plus seeded Gaussian noise, normalized.
pub fn read_compass<R: rand::Rng>(s: &RobotState, noise_sigma: f64, rng: &mut R) -> f64 {
    if noise_sigma <= 0.0 {
        return s.pose.theta;
    }
    let normal = Normal::new(0.0, noise_sigma).expect("sigma > 0");
    normalize_angle(s.pose.theta + normal.sample(rng))
}

/// Per-sensor range along the mounted ray; `None` means nothing inside
/// the maximum range.
pub fn read_ultrasound(
    world: &WorldModel,
    s: &RobotState,
    m: &UltrasoundModel,
) -> [Option<f64>; 3] {
    let mut out = [None; 3];
    for (i, angle) in m.mount_angles.iter().enumerate() {
        out[i] = world.raycast_2d(
            (s.pose.x, s.pose.y),
            s.pose.theta + angle,
            m.max_range,
        );
    }
    out
}

/// Ultrasound has priority: any range strictly below the stop threshold
/// forces Stop; otherwise the vision decision passes through.
pub fn arbitrate(ranges: &[Option<f64>; 3], vision: Decision, m: &UltrasoundModel) -> Decision {
    if ranges.iter().flatten().any(|&r| r < m.stop_threshold) {
        Decision::Stop
    } else {
        vision
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SimParams {
    pub seed: u64,
    pub duration_s: f64,
    pub tick_s: f64,
    pub substep_s: f64,
    pub track_width: f64,
    pub wheel_radius: f64,
    pub v_cruise: f64,
    pub v_turn: f64,
    /// In-place turn budget for TurnLeft/TurnRight, radians.
    pub turn_increment: f64,
    pub turn90_right: bool,
    pub compass_noise_sigma: f64,
    pub body_radius: f64,
    pub camera_height: f64,
    pub z_near: f64,
    pub z_far: f64,
    pub min_blob_area: u32,
    pub matcher: MatcherParams,
    pub pid_kp: f64,
    pub pid_ki: f64,
    pub pid_kd: f64,
    pub map_resolution: f64,
    /// Capture a registered point cloud every N ticks (0 disables).
    pub cloud_every_n_ticks: u32,
    pub cloud_filter: CloudFilterParams,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            seed: 0,
            duration_s: 10.0,
            tick_s: 0.2,
            substep_s: 0.01,
            track_width: 0.30,
            wheel_radius: 0.03,
            v_cruise: V_MAX,
            v_turn: 0.10,
            turn_increment: 15f64.to_radians(),
            turn90_right: true,
            compass_noise_sigma: 0.0,
            body_radius: 0.12,
            camera_height: 0.25,
            z_near: 0.20,
            z_far: 0.40,
            min_blob_area: 150,
            matcher: MatcherParams::default(),
            pid_kp: 2.0,
            pid_ki: 0.1,
            pid_kd: 0.05,
            map_resolution: 0.05,
            cloud_every_n_ticks: 0,
            cloud_filter: CloudFilterParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LogRow {
    pub t: f64,
    pub pose: Pose2D,
    pub decision: Decision,
}

#[derive(Debug, Clone, Copy)]
enum Mode {
    Cruise { setpoint: f64 },
    Turning { target: f64, dir: f64, early_exit: bool },
}

#[derive(Debug)]
pub struct SimReport {
    pub log: Vec<LogRow>,
    pub collisions: u32,
    pub grid: OccupancyGrid,
    pub merged_cloud: PointCloud,
    /// True robot pose and odometric estimate at the end of the run.
    pub final_pose: Pose2D,
    pub odom_pose: Pose2D,
}

impl SimReport {
    /// Pose log as CSV `t,x,y,theta,decision`.
    pub fn log_csv(&self) -> String {
        let mut s = String::from("t,x,y,theta,decision\n");
        for row in &self.log {
            s.push_str(&format!(
                "{:.3},{:.6},{:.6},{:.6},{}\n",
                row.t, row.pose.x, row.pose.y, row.pose.theta, row.decision
            ));
        }
        s
    }
}

pub struct Simulation {
    pub world: WorldModel,
    pub rig: StereoRig,
    pub params: SimParams,
    pub ultra: UltrasoundModel,
    state: RobotState,
    mode: Mode,
    pid: PidController,
    rng: ChaCha8Rng,
    enc_left: EncoderModel,
    enc_right: EncoderModel,
    odom: Pose2D,
    grid: OccupancyGrid,
    time: f64,
    tick_index: u32,
    log: Vec<LogRow>,
    collisions: u32,
    clouds: Vec<PointCloud>,
}

impl Simulation {
    pub fn new(
        world: WorldModel,
        rig: StereoRig,
        params: SimParams,
        start: Pose2D,
    ) -> Result<Self, SimError> {
        if params.tick_s <= 0.0 || params.substep_s <= 0.0 || params.substep_s > params.tick_s {
            return Err(SimError::Params("tick/substep durations out of order".into()));
        }
        if params.v_cruise > V_MAX + 1e-12 || params.v_turn > V_MAX + 1e-12 {
            return Err(SimError::Params(format!(
                "wheel speeds must not exceed {V_MAX} m/s"
            )));
        }
        params
            .matcher
            .validate(rig.left.width)
            .map_err(|e| SimError::Params(e.to_string()))?;

        // grid sized to the floor extent (plus margin), or a default span
        let (fw, fh) = world.floor.unwrap_or((6.0, 6.0));
        let margin = 0.5;
        let res = params.map_resolution;
        let grid = OccupancyGrid::new(
            ((fw + 2.0 * margin) / res).ceil() as usize,
            ((fh + 2.0 * margin) / res).ceil() as usize,
            res,
            (-margin, -margin),
        );
        Ok(Self {
            world,
            rig,
            ultra: UltrasoundModel::default(),
            state: RobotState::at(start),
            mode: Mode::Cruise { setpoint: start.theta },
            pid: PidController::new(params.pid_kp, params.pid_ki, params.pid_kd),
            rng: ChaCha8Rng::seed_from_u64(params.seed),
            enc_left: EncoderModel::new(400, params.wheel_radius),
            enc_right: EncoderModel::new(400, params.wheel_radius),
            odom: start,
            grid,
            time: 0.0,
            tick_index: 0,
            log: Vec::new(),
            collisions: 0,
            clouds: Vec::new(),
            params,
        })
    }

    pub fn state(&self) -> &RobotState {
        &self.state
    }

    pub fn odom_pose(&self) -> Pose2D {
        self.odom
    }

    /// Run the stereo pipeline at the current pose and return the
    /// vision decision.
    fn vision_decision(&self) -> Result<Decision, String> {
        let scene = Scene {
            world: &self.world,
            camera: self.state.pose,
            camera_height: self.params.camera_height,
        };
        let out = render_stereo(&scene, &self.rig);
        let p = &self.params.matcher;
        let left = prefilter(&out.left, p.prefilter_cap);
        let right = prefilter(&out.right, p.prefilter_cap);
        let dm = match_sad(&left, &right, p).map_err(|e| e.to_string())?;
        let seg = segment_near(
            &dm,
            &self.rig,
            self.params.z_near,
            self.params.z_far,
            (p.min_disp as f64, p.max_disp as f64),
        )
        .map_err(|e| e.to_string())?;
        let blobs = find_blobs(&seg.mask, self.params.min_blob_area);
        Ok(decide(&blobs, dm.width()))
    }

    fn capture_cloud(&mut self) {
        let scene = Scene {
            world: &self.world,
            camera: self.state.pose,
            camera_height: self.params.camera_height,
        };
        let out = render_stereo(&scene, &self.rig);
        let p = &self.params.matcher;
        let left = prefilter(&out.left, p.prefilter_cap);
        let right = prefilter(&out.right, p.prefilter_cap);
        let Ok(dm) = match_sad(&left, &right, p) else { return };
        let q = build_reprojection_matrix(&self.rig);
        let Ok(cam_cloud) = cloud::cloud_from_disparity(&dm, &out.left_rgb, &q) else {
            return;
        };
        let filtered = cloud::filter_cloud(&cam_cloud, &self.params.cloud_filter);
        let grounded = cloud::camera_to_ground(&filtered, self.params.camera_height);
        // register with the odometric pose, as captured
        self.clouds.push(cloud::transform_cloud(&grounded, &self.odom));
    }

    fn collides(&self, x: f64, y: f64) -> bool {
        self.world
            .boxes
            .iter()
            .any(|b| b.footprint_distance(x, y) < self.params.body_radius)
    }

    /// One 200 ms control tick: vision, arbitration, wheel commands,
    /// kinematic substeps, odometry and mapping.
    pub fn control_tick(&mut self) -> Decision {
        let vision = match self.vision_decision() {
            Ok(d) => d,
            Err(_) => Decision::Stop, // a failed vision frame stops the tick
        };
        let ranges = read_ultrasound(&self.world, &self.state, &self.ultra);
        let decision = arbitrate(&ranges, vision, &self.ultra);

        // map the decision onto wheel commands / controller mode
        let turn_sign = if self.params.turn90_right { -1.0 } else { 1.0 };
        match self.mode {
            Mode::Turning { .. } => {} // finish the turn in progress
            Mode::Cruise { setpoint } => match decision {
                Decision::Forward => {
                    let e = normalize_angle(setpoint - self.state.pose.theta);
                    let w_cmd = self.pid.update(e, self.params.tick_s);
                    let dv = 0.5 * w_cmd * self.params.track_width;
                    self.state.v_left = (self.params.v_cruise - dv).clamp(-V_MAX, V_MAX);
                    self.state.v_right = (self.params.v_cruise + dv).clamp(-V_MAX, V_MAX);
                }
                Decision::TurnLeft | Decision::TurnRight | Decision::Turn90 | Decision::Stop => {
                    self.state.v_left = 0.0;
                    self.state.v_right = 0.0;
                    // Stop from the ultrasound override halts motion;
                    // a pending vision turn is still honored because
                    // rotating in place cannot close the distance.
                    let turn = if decision == Decision::Stop { vision } else { decision };
                    let theta = self.state.pose.theta;
                    match turn {
                        Decision::TurnLeft => {
                            self.mode = Mode::Turning {
                                target: normalize_angle(theta + self.params.turn_increment),
                                dir: 1.0,
                                early_exit: true,
                            };
                        }
                        Decision::TurnRight => {
                            self.mode = Mode::Turning {
                                target: normalize_angle(theta - self.params.turn_increment),
                                dir: -1.0,
                                early_exit: true,
                            };
                        }
                        Decision::Turn90 => {
                            self.mode = Mode::Turning {
                                target: normalize_angle(
                                    theta + turn_sign * std::f64::consts::FRAC_PI_2,
                                ),
                                dir: turn_sign,
                                early_exit: false,
                            };
                        }
                        _ => {}
                    }
                }
            },
        }
        if let Mode::Turning { target, dir, early_exit } = self.mode {
            if early_exit && vision == Decision::Forward {
                self.mode = Mode::Cruise { setpoint: self.state.pose.theta };
                self.pid.reset();
            } else {
                self.state.v_left = -dir * self.params.v_turn;
                self.state.v_right = dir * self.params.v_turn;
                let remaining = normalize_angle(target - self.state.pose.theta) * dir;
                if remaining <= 1e-6 {
                    self.state.v_left = 0.0;
                    self.state.v_right = 0.0;
                    self.mode = Mode::Cruise { setpoint: target };
                    self.pid.reset();
                }
            }
        }

        // integrate kinematics in substeps, accumulating wheel arcs
        let n_sub = (self.params.tick_s / self.params.substep_s).round().max(1.0) as u32;
        let dt = self.params.tick_s / n_sub as f64;
        let mut pulses_l = 0i64;
        let mut pulses_r = 0i64;
        for _ in 0..n_sub {
            self.state = step_kinematics(&self.state, dt, self.params.track_width);
            pulses_l += self.enc_left.advance(self.state.v_left * dt / self.params.wheel_radius);
            pulses_r += self.enc_right.advance(self.state.v_right * dt / self.params.wheel_radius);
            if self.collides(self.state.pose.x, self.state.pose.y) {
                self.collisions += 1;
            }
            // stop a Turning substep exactly at its target
            if let Mode::Turning { target, dir, .. } = self.mode {
                let remaining = normalize_angle(target - self.state.pose.theta) * dir;
                if remaining <= 0.0 {
                    self.state.pose =
                        Pose2D::new(self.state.pose.x, self.state.pose.y, target);
                    self.state.v_left = 0.0;
                    self.state.v_right = 0.0;
                }
            }
        }

        // odometry from encoders + compass
        let heading = read_compass(&self.state, self.params.compass_noise_sigma, &mut self.rng);
        let arc = 0.5
            * (self.enc_left.pulses_to_arc(pulses_l) + self.enc_right.pulses_to_arc(pulses_r));
        self.odom = Pose2D::new(
            self.odom.x + arc * heading.cos(),
            self.odom.y + arc * heading.sin(),
            heading,
        );

        // occupancy mapping from this tick's readings
        let geometry = self.ultra.sensor_geometry();
        let post_ranges = read_ultrasound(&self.world, &self.state, &self.ultra);
        for (i, r) in post_ranges.iter().enumerate() {
            self.grid.integrate_reading(
                &UltrasoundReading { sensor_index: i, range: *r, pose: self.state.pose },
                &geometry,
            );
        }

        if self.params.cloud_every_n_ticks > 0
            && self.tick_index % self.params.cloud_every_n_ticks == 0
        {
            self.capture_cloud();
        }

        self.time += self.params.tick_s;
        self.tick_index += 1;
        self.log.push(LogRow { t: self.time, pose: self.state.pose, decision });
        decision
    }

    pub fn run(mut self) -> SimReport {
        let ticks = (self.params.duration_s / self.params.tick_s).round() as u32;
        for _ in 0..ticks {
            self.control_tick();
        }
        SimReport {
            collisions: self.collisions,
            final_pose: self.state.pose,
            odom_pose: self.odom,
            merged_cloud: cloud::merge_clouds(&self.clouds),
            grid: self.grid,
            log: self.log,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraIntrinsics;
    use crate::world::BoxObstacle;

    fn sim_rig() -> StereoRig {
        let cam = CameraIntrinsics::new(250.0, 160.0, 120.0, 320, 240).unwrap();
        StereoRig::new(cam, cam, 0.063).unwrap()
    }

    fn sim_matcher() -> MatcherParams {
        MatcherParams { max_disp: 80, ..Default::default() }
    }

    #[test]
    fn straight_advance() {
        let s = RobotState {
            pose: Pose2D::identity(),
            v_left: 0.20,
            v_right: 0.20,
        };
        let next = step_kinematics(&s, 1.0, 0.3);
        assert!((next.pose.x - 0.20).abs() < 1e-12);
        assert_eq!(next.pose.y, 0.0);
        assert_eq!(next.pose.theta, 0.0);
    }

    #[test]
    fn pure_rotation() {
        let s = RobotState {
            pose: Pose2D::new(1.0, 2.0, 0.5),
            v_left: -0.1,
            v_right: 0.1,
        };
        let next = step_kinematics(&s, 0.5, 0.3);
        assert!((next.pose.x - 1.0).abs() < 1e-12);
        assert!((next.pose.y - 2.0).abs() < 1e-12);
        let w = 0.2 / 0.3;
        assert!((next.pose.theta - (0.5 + w * 0.5)).abs() < 1e-12);
    }

    #[test]
    fn arc_matches_small_step_integration() {
        let s = RobotState {
            pose: Pose2D::new(0.3, -0.2, 0.7),
            v_left: 0.12,
            v_right: 0.18,
        };
        let exact = step_kinematics(&s, 2.0, 0.3);
        // oracle: forward-Euler at a tiny step
        let mut pose = s.pose;
        let v = 0.15;
        let w = 0.06 / 0.3;
        let n = 2_000_000;
        let dt = 2.0 / n as f64;
        for _ in 0..n {
            pose = Pose2D::new(
                pose.x + v * dt * pose.theta.cos(),
                pose.y + v * dt * pose.theta.sin(),
                pose.theta + w * dt,
            );
        }
        assert!((exact.pose.x - pose.x).abs() < 1e-5);
        assert!((exact.pose.y - pose.y).abs() < 1e-5);
        // the exact pose lies on the circle of radius v/w
        let r = v / w;
        let cx = s.pose.x - r * s.pose.theta.sin();
        let cy = s.pose.y + r * s.pose.theta.cos();
        let dist = ((exact.pose.x - cx).powi(2) + (exact.pose.y - cy).powi(2)).sqrt();
        assert!((dist - r.abs()).abs() < 1e-9);
    }

    #[test]
    fn encoder_full_and_half_rev() {
        let mut e = EncoderModel::new(400, 0.03);
        assert_eq!(e.advance(2.0 * std::f64::consts::PI), 400);
        assert_eq!(e.advance(std::f64::consts::PI), 200);
    }

    #[test]
    fn encoder_carry() {
        let mut e = EncoderModel::new(400, 0.03);
        let step = 0.45f64.to_radians();
        assert_eq!(e.advance(step), 0);
        assert_eq!(e.advance(step), 1);
    }

    #[test]
    fn compass_noise() {
        let s = RobotState::at(Pose2D::new(0.0, 0.0, 1.1));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(read_compass(&s, 0.0, &mut rng), 1.1);

        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let seq_a: Vec<f64> = (0..5).map(|_| read_compass(&s, 0.01, &mut a)).collect();
        let seq_b: Vec<f64> = (0..5).map(|_| read_compass(&s, 0.01, &mut b)).collect();
        assert_eq!(seq_a, seq_b);

        let n = 10_000;
        let sigma = 0.01;
        let mean: f64 = (0..n).map(|_| read_compass(&s, sigma, &mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 1.1).abs() < 3.0 * sigma / (n as f64).sqrt());
    }

    #[test]
    fn ultrasound_ranges() {
        let world = WorldModel {
            boxes: vec![BoxObstacle {
                x: 1.0,
                y: -5.0,
                w: 0.5,
                h: 10.0,
                height: 1.0,
                texture_seed: 0,
            }],
            floor: None,
        };
        let s = RobotState::at(Pose2D::identity());
        let m = UltrasoundModel::default();
        let r = read_ultrasound(&world, &s, &m);
        assert!((r[1].unwrap() - 1.0).abs() < 1e-12);
        let slanted = 1.0 / 20f64.to_radians().cos();
        assert!((r[0].unwrap() - slanted).abs() < 1e-12);
        assert!((r[2].unwrap() - slanted).abs() < 1e-12);

        let empty = WorldModel::default();
        assert_eq!(read_ultrasound(&empty, &s, &m), [None, None, None]);

        let touching = RobotState::at(Pose2D::new(1.0, 0.0, 0.0));
        assert_eq!(read_ultrasound(&world, &touching, &m)[1], Some(0.0));
    }

    #[test]
    fn pid_behavior() {
        let mut pid = PidController::new(2.0, 0.0, 0.0);
        assert_eq!(pid.update(0.0, 0.1), 0.0);
        let mut pid = PidController::new(3.0, 0.0, 0.0);
        assert!((pid.update(0.1, 0.1) - 0.3).abs() < 1e-12);

        // constant error saturates the integral at the clamp
        let mut pid = PidController::new(0.0, 1.0, 0.0);
        let mut last = 0.0;
        for _ in 0..200 {
            last = pid.update(0.5, 0.1);
        }
        assert!((pid.integral() - pid.integral_clamp).abs() < 1e-12);
        assert!((last - pid.integral_clamp).abs() < 1e-12);
    }

    #[test]
    fn arbitration_rules() {
        let m = UltrasoundModel::default();
        assert_eq!(
            arbitrate(&[Some(0.2), Some(3.0), Some(3.0)], Decision::Forward, &m),
            Decision::Stop
        );
        assert_eq!(arbitrate(&[None, None, None], Decision::TurnLeft, &m), Decision::TurnLeft);
        // exactly at threshold passes through (strict <)
        assert_eq!(
            arbitrate(&[Some(0.25), None, None], Decision::Forward, &m),
            Decision::Forward
        );
        // Stop dominates every vision decision
        for d in Decision::ALL {
            assert_eq!(arbitrate(&[None, Some(0.1), None], d, &m), Decision::Stop);
        }
    }

    #[test]
    fn empty_world_drives_straight() {
        let params = SimParams {
            duration_s: 10.0,
            matcher: sim_matcher(),
            ..Default::default()
        };
        let sim = Simulation::new(WorldModel::default(), sim_rig(), params, Pose2D::identity())
            .unwrap();
        let report = sim.run();
        assert_eq!(report.collisions, 0);
        assert!(report.final_pose.theta.abs() < 0.5f64.to_radians());
        assert!((report.final_pose.x - 2.0).abs() < 0.02);
        assert!(report.log.iter().all(|r| r.decision == Decision::Forward));
    }

    #[test]
    fn box_ahead_left_turns_right() {
        let world = WorldModel {
            floor: Some((4.0, 3.0)),
            boxes: vec![BoxObstacle {
                x: 1.6,
                y: 1.1,
                w: 0.3,
                h: 0.3,
                height: 0.5,
                texture_seed: 21,
            }],
        };
        let params = SimParams {
            duration_s: 8.0,
            matcher: sim_matcher(),
            ..Default::default()
        };
        let sim =
            Simulation::new(world, sim_rig(), params, Pose2D::new(0.5, 1.0, 0.0)).unwrap();
        let report = sim.run();
        assert_eq!(report.collisions, 0);
        let first_turn = report
            .log
            .iter()
            .position(|r| r.decision == Decision::TurnRight)
            .expect("vision should issue TurnRight");
        let first_stop = report.log.iter().position(|r| r.decision == Decision::Stop);
        if let Some(stop) = first_stop {
            assert!(first_turn < stop, "TurnRight must come before any ultrasound Stop");
        }
    }

    #[test]
    fn deterministic_pose_log() {
        let world = WorldModel {
            floor: Some((4.0, 3.0)),
            boxes: vec![BoxObstacle {
                x: 2.5,
                y: 1.2,
                w: 0.3,
                h: 0.3,
                height: 0.5,
                texture_seed: 4,
            }],
        };
        let params = SimParams {
            duration_s: 4.0,
            seed: 42,
            compass_noise_sigma: 0.005,
            matcher: sim_matcher(),
            ..Default::default()
        };
        let run = |w: WorldModel| {
            Simulation::new(w, sim_rig(), params, Pose2D::new(0.5, 1.5, 0.0))
                .unwrap()
                .run()
                .log_csv()
        };
        assert_eq!(run(world.clone()), run(world));
    }

    #[test]
    fn odometry_tracks_true_pose() {
        let params = SimParams {
            duration_s: 5.0,
            matcher: sim_matcher(),
            ..Default::default()
        };
        let sim = Simulation::new(WorldModel::default(), sim_rig(), params, Pose2D::identity())
            .unwrap();
        let report = sim.run();
        // noise-free straight run: error bounded by encoder quantization
        let pulse_arc = 2.0 * std::f64::consts::PI * 0.03 / 400.0;
        let err = ((report.odom_pose.x - report.final_pose.x).powi(2)
            + (report.odom_pose.y - report.final_pose.y).powi(2))
        .sqrt();
        assert!(err <= 30.0 * pulse_arc, "odometry error {err}");
        assert_eq!(report.odom_pose.theta, report.final_pose.theta);
    }
}
