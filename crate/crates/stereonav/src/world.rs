//! Simulated environment: axis-aligned textured boxes standing on an
//! optional floor, with ray queries used by both the renderer (3D) and
//! the ultrasound sensors (2D).
//!
//! World file format, one item per line:
//!
//! ```text
//! # comment
//! floor 5.0 4.0
//! box 1.0 2.0 0.4 0.4 0.5 7
//! ```
//!
//! `floor w h` spans [0, w] x [0, h] at z = 0; `box x y w h height seed`
//! is the footprint corner, footprint size, height and texture seed.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {0}: {1}")]
    Parse(usize, String),
    #[error("box ({0}, {1}) extends outside the floor extent")]
    BoxOutsideFloor(f64, f64),
}

/// Axis-aligned box obstacle standing on the ground plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxObstacle {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub height: f64,
    pub texture_seed: u64,
}

impl BoxObstacle {
    /// Distance from a point to the footprint rectangle (0 inside).
    pub fn footprint_distance(&self, px: f64, py: f64) -> f64 {
        let dx = (self.x - px).max(0.0).max(px - (self.x + self.w));
        let dy = (self.y - py).max(0.0).max(py - (self.y + self.h));
        (dx * dx + dy * dy).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WorldModel {
    pub boxes: Vec<BoxObstacle>,
    /// Floor extent [0, w] x [0, h], if any.
    pub floor: Option<(f64, f64)>,
}

/// A 3D ray hit: parameter along the ray, hit position and the texture
/// seed of the surface.
#[derive(Debug, Clone, Copy)]
pub struct RayHit {
    pub t: f64,
    pub point: [f64; 3],
    pub seed: u64,
}

impl WorldModel {
    pub fn load(path: &Path) -> Result<Self, WorldError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, WorldError> {
        let mut world = WorldModel::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| -> Result<f64, WorldError> {
                s.parse()
                    .map_err(|_| WorldError::Parse(i + 1, format!("bad number {s}")))
            };
            match fields[0] {
                "floor" if fields.len() == 3 => {
                    world.floor = Some((num(fields[1])?, num(fields[2])?));
                }
                "box" if fields.len() == 7 => {
                    world.boxes.push(BoxObstacle {
                        x: num(fields[1])?,
                        y: num(fields[2])?,
                        w: num(fields[3])?,
                        h: num(fields[4])?,
                        height: num(fields[5])?,
                        texture_seed: fields[6].parse().map_err(|_| {
                            WorldError::Parse(i + 1, format!("bad seed {}", fields[6]))
                        })?,
                    });
                }
                other => {
                    return Err(WorldError::Parse(
                        i + 1,
                        format!("expected `floor w h` or `box x y w h height seed`, got `{other}`"),
                    ));
                }
            }
        }
        world.validate()?;
        Ok(world)
    }

    fn validate(&self) -> Result<(), WorldError> {
        if let Some((fw, fh)) = self.floor {
            for b in &self.boxes {
                if b.x < 0.0 || b.y < 0.0 || b.x + b.w > fw || b.y + b.h > fh {
                    return Err(WorldError::BoxOutsideFloor(b.x, b.y));
                }
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if let Some((w, h)) = self.floor {
            s.push_str(&format!("floor {w} {h}\n"));
        }
        for b in &self.boxes {
            s.push_str(&format!(
                "box {} {} {} {} {} {}\n",
                b.x, b.y, b.w, b.h, b.height, b.texture_seed
            ));
        }
        s
    }

    /// Nearest intersection of a 3D ray with the boxes and the floor.
    /// `dir` need not be normalized; `t` is in units of `dir`.
    pub fn raycast(&self, origin: [f64; 3], dir: [f64; 3]) -> Option<RayHit> {
        let mut best: Option<RayHit> = None;
        let mut consider = |t: f64, seed: u64| {
            if t > 1e-9 && best.map_or(true, |b| t < b.t) {
                best = Some(RayHit {
                    t,
                    point: [
                        origin[0] + t * dir[0],
                        origin[1] + t * dir[1],
                        origin[2] + t * dir[2],
                    ],
                    seed,
                });
            }
        };

        for b in &self.boxes {
            if let Some(t) = ray_aabb(
                origin,
                dir,
                [b.x, b.y, 0.0],
                [b.x + b.w, b.y + b.h, b.height],
            ) {
                consider(t, b.texture_seed);
            }
        }
        if let Some((fw, fh)) = self.floor {
            // z = 0 plane clipped to the floor rectangle
            if dir[2].abs() > 1e-12 {
                let t = -origin[2] / dir[2];
                if t > 1e-9 {
                    let (px, py) = (origin[0] + t * dir[0], origin[1] + t * dir[1]);
                    if px >= 0.0 && px <= fw && py >= 0.0 && py <= fh {
                        consider(t, FLOOR_SEED);
                    }
                }
            }
        }
        best
    }

    /// Distance along a planar ray to the nearest box footprint, if it
    /// is within `max_range`.
    pub fn raycast_2d(&self, origin: (f64, f64), angle: f64, max_range: f64) -> Option<f64> {
        let (s, c) = angle.sin_cos();
        let mut best: Option<f64> = None;
        for b in &self.boxes {
            if let Some(t) = ray_rect_2d(origin, (c, s), (b.x, b.y), (b.x + b.w, b.y + b.h)) {
                if t <= max_range && best.map_or(true, |bt| t < bt) {
                    best = Some(t);
                }
            }
        }
        best
    }
}

/// Texture seed used for the floor surface.
pub const FLOOR_SEED: u64 = 0x5eed_f100;

/// Slab-method ray/AABB intersection; returns the entry parameter
/// (clamped to 0 when the origin is inside).
fn ray_aabb(origin: [f64; 3], dir: [f64; 3], lo: [f64; 3], hi: [f64; 3]) -> Option<f64> {
    let mut tmin = f64::NEG_INFINITY;
    let mut tmax = f64::INFINITY;
    for i in 0..3 {
        if dir[i].abs() < 1e-15 {
            if origin[i] < lo[i] || origin[i] > hi[i] {
                return None;
            }
        } else {
            let inv = 1.0 / dir[i];
            let (mut t0, mut t1) = ((lo[i] - origin[i]) * inv, (hi[i] - origin[i]) * inv);
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            tmin = tmin.max(t0);
            tmax = tmax.min(t1);
            if tmin > tmax {
                return None;
            }
        }
    }
    if tmax < 0.0 {
        return None;
    }
    Some(tmin.max(0.0))
}

fn ray_rect_2d(
    origin: (f64, f64),
    dir: (f64, f64),
    lo: (f64, f64),
    hi: (f64, f64),
) -> Option<f64> {
    let o = [origin.0, origin.1, 0.0];
    let d = [dir.0, dir.1, 0.0];
    ray_aabb(o, d, [lo.0, lo.1, -1.0], [hi.0, hi.1, 1.0])
}
