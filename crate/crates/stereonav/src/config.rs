//! Plain-text `key = value` configuration files: stereo-rig calibration
//! and simulation run settings. Parse errors carry the line number;
//! unknown keys are rejected so typos fail loudly.

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use crate::cloud::CloudFilterParams;
use crate::geometry::{CameraIntrinsics, GeometryError, Pose2D, StereoRig};
use crate::matcher::MatcherParams;
use crate::sim::SimParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {0}: {1}")]
    Parse(usize, String),
    #[error("missing required key `{0}`")]
    MissingKey(&'static str),
    #[error("invalid value: {0}")]
    Invalid(String),
}

impl From<GeometryError> for ConfigError {
    fn from(e: GeometryError) -> Self {
        ConfigError::Invalid(e.to_string())
    }
}

/// Parse `key = value` lines; `#` starts a comment, blank lines are
/// skipped. Duplicate keys are an error.
pub fn parse_kv(text: &str) -> Result<HashMap<String, (usize, String)>, ConfigError> {
    let mut out = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::Parse(i + 1, format!("expected `key = value`, got `{line}`")));
        };
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if v.is_empty() {
            return Err(ConfigError::Parse(i + 1, format!("empty value for `{k}`")));
        }
        if out.insert(k.clone(), (i + 1, v)).is_some() {
            return Err(ConfigError::Parse(i + 1, format!("duplicate key `{k}`")));
        }
    }
    Ok(out)
}

struct Kv {
    map: HashMap<String, (usize, String)>,
}

impl Kv {
    fn take<T: std::str::FromStr>(&mut self, key: &'static str) -> Result<Option<T>, ConfigError> {
        match self.map.remove(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| ConfigError::Parse(line, format!("bad value `{v}` for `{key}`"))),
        }
    }

    fn require<T: std::str::FromStr>(&mut self, key: &'static str) -> Result<T, ConfigError> {
        self.take(key)?.ok_or(ConfigError::MissingKey(key))
    }

    fn finish(self) -> Result<(), ConfigError> {
        if let Some((k, (line, _))) = self.map.into_iter().next() {
            return Err(ConfigError::Parse(line, format!("unknown key `{k}`")));
        }
        Ok(())
    }
}

/// Parse a stereo calibration file. Required keys: `f_px`, `cx`, `cy`,
/// `baseline_m`, `width`, `height`; optional `right_cx` (defaults to
/// `cx`).
pub fn parse_calibration(text: &str) -> Result<StereoRig, ConfigError> {
    let mut kv = Kv { map: parse_kv(text)? };
    let f: f64 = kv.require("f_px")?;
    let cx: f64 = kv.require("cx")?;
    let cy: f64 = kv.require("cy")?;
    let baseline: f64 = kv.require("baseline_m")?;
    let width: u32 = kv.require("width")?;
    let height: u32 = kv.require("height")?;
    let right_cx: f64 = kv.take("right_cx")?.unwrap_or(cx);
    kv.finish()?;
    let left = CameraIntrinsics::new(f, cx, cy, width, height)?;
    let right = CameraIntrinsics::new(f, right_cx, cy, width, height)?;
    Ok(StereoRig::new(left, right, baseline)?)
}

pub fn load_calibration(path: &Path) -> Result<StereoRig, ConfigError> {
    parse_calibration(&std::fs::read_to_string(path)?)
}

/// A full simulation run configuration: every key is optional and
/// defaults to [`SimParams::default`]; the start pose defaults to the
/// origin.
#[derive(Debug, Clone, Copy)]
pub struct RunConfig {
    pub params: SimParams,
    pub start: Pose2D,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { params: SimParams::default(), start: Pose2D::identity() }
    }
}

pub fn parse_run_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut kv = Kv { map: parse_kv(text)? };
    let d = SimParams::default();
    let m = MatcherParams::default();
    let c = CloudFilterParams::default();
    let params = SimParams {
        seed: kv.take("seed")?.unwrap_or(d.seed),
        duration_s: kv.take("duration_s")?.unwrap_or(d.duration_s),
        tick_s: kv.take("tick_s")?.unwrap_or(d.tick_s),
        substep_s: kv.take("substep_s")?.unwrap_or(d.substep_s),
        track_width: kv.take("track_width_m")?.unwrap_or(d.track_width),
        wheel_radius: kv.take("wheel_radius_m")?.unwrap_or(d.wheel_radius),
        v_cruise: kv.take("v_cruise")?.unwrap_or(d.v_cruise),
        v_turn: kv.take("v_turn")?.unwrap_or(d.v_turn),
        turn_increment: kv
            .take::<f64>("turn_increment_deg")?
            .map(f64::to_radians)
            .unwrap_or(d.turn_increment),
        turn90_right: kv.take("turn90_right")?.unwrap_or(d.turn90_right),
        compass_noise_sigma: kv.take("compass_noise_sigma")?.unwrap_or(d.compass_noise_sigma),
        body_radius: kv.take("body_radius_m")?.unwrap_or(d.body_radius),
        camera_height: kv.take("camera_height_m")?.unwrap_or(d.camera_height),
        z_near: kv.take("z_near_m")?.unwrap_or(d.z_near),
        z_far: kv.take("z_far_m")?.unwrap_or(d.z_far),
        min_blob_area: kv.take("min_blob_area")?.unwrap_or(d.min_blob_area),
        matcher: MatcherParams {
            window: kv.take("window")?.unwrap_or(m.window),
            min_disp: kv.take("min_disp")?.unwrap_or(m.min_disp),
            max_disp: kv.take("max_disp")?.unwrap_or(m.max_disp),
            prefilter_cap: kv.take("prefilter_cap")?.unwrap_or(m.prefilter_cap),
            texture_threshold: kv.take("texture_threshold")?.unwrap_or(m.texture_threshold),
            uniqueness_ratio: kv.take("uniqueness_ratio")?.unwrap_or(m.uniqueness_ratio),
        },
        pid_kp: kv.take("pid_kp")?.unwrap_or(d.pid_kp),
        pid_ki: kv.take("pid_ki")?.unwrap_or(d.pid_ki),
        pid_kd: kv.take("pid_kd")?.unwrap_or(d.pid_kd),
        map_resolution: kv.take("map_resolution_m")?.unwrap_or(d.map_resolution),
        cloud_every_n_ticks: kv.take("cloud_every_n_ticks")?.unwrap_or(d.cloud_every_n_ticks),
        cloud_filter: CloudFilterParams {
            min_cluster: kv.take("cloud_min_cluster")?.unwrap_or(c.min_cluster),
            cluster_radius: kv.take("cloud_cluster_radius_m")?.unwrap_or(c.cluster_radius),
            max_range: kv.take("cloud_max_range_m")?.unwrap_or(c.max_range),
        },
    };
    let start = Pose2D::new(
        kv.take("start_x")?.unwrap_or(0.0),
        kv.take("start_y")?.unwrap_or(0.0),
        kv.take::<f64>("start_theta_deg")?.map(f64::to_radians).unwrap_or(0.0),
    );
    kv.finish()?;
    if params.z_near <= 0.0 || params.z_near >= params.z_far {
        return Err(ConfigError::Invalid(format!(
            "depth band requires 0 < z_near ({}) < z_far ({})",
            params.z_near, params.z_far
        )));
    }
    if params.map_resolution <= 0.0 {
        return Err(ConfigError::Invalid("map_resolution_m must be positive".into()));
    }
    Ok(RunConfig { params, start })
}

pub fn load_run_config(path: &Path) -> Result<RunConfig, ConfigError> {
    parse_run_config(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CALIB: &str = "\
# rig
f_px = 500
cx = 320
cy = 240
baseline_m = 0.063
width = 640
height = 480
";

    #[test]
    fn calibration_parses() {
        let rig = parse_calibration(CALIB).unwrap();
        assert_eq!(rig.left.f, 500.0);
        assert_eq!(rig.baseline_m, 0.063);
        assert_eq!(rig.right.cx, 320.0); // defaults to cx
        assert_eq!((rig.left.width, rig.left.height), (640, 480));
    }

    #[test]
    fn calibration_right_cx_override() {
        let rig = parse_calibration(&format!("{CALIB}right_cx = 310\n")).unwrap();
        assert_eq!(rig.right.cx, 310.0);
    }

    #[test]
    fn calibration_errors() {
        assert!(matches!(
            parse_calibration("f_px = 500\n"),
            Err(ConfigError::MissingKey("cx"))
        ));
        let e = parse_calibration(&format!("{CALIB}bogus = 1\n")).unwrap_err();
        assert!(matches!(e, ConfigError::Parse(8, _)), "{e}");
        let e = parse_calibration("f_px == x\n").unwrap_err();
        assert!(matches!(e, ConfigError::Parse(1, _)));
        // invariants from the rig types still apply
        assert!(parse_calibration(&CALIB.replace("0.063", "-1")).is_err());
    }

    #[test]
    fn duplicate_key_rejected() {
        let e = parse_kv("a = 1\na = 2\n").unwrap_err();
        assert!(matches!(e, ConfigError::Parse(2, _)));
    }

    #[test]
    fn run_config_defaults_and_overrides() {
        let rc = parse_run_config("").unwrap();
        assert_eq!(rc.params.tick_s, 0.2);
        assert_eq!(rc.start, Pose2D::identity());

        let rc = parse_run_config(
            "max_disp = 80\nduration_s = 3\nstart_x = 0.5\nstart_theta_deg = 90\nturn90_right = false\n",
        )
        .unwrap();
        assert_eq!(rc.params.matcher.max_disp, 80);
        assert_eq!(rc.params.duration_s, 3.0);
        assert!(!rc.params.turn90_right);
        assert!((rc.start.theta - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn run_config_rejects_bad_band() {
        let e = parse_run_config("z_near_m = 0.5\nz_far_m = 0.4\n").unwrap_err();
        assert!(matches!(e, ConfigError::Invalid(_)));
        let e = parse_run_config("walrus = 1\n").unwrap_err();
        assert!(matches!(e, ConfigError::Parse(1, _)));
    }
}
