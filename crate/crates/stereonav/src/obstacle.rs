//! Depth-band obstacle segmentation and the reactive navigation policy:
//! threshold the 20-40 cm band of the disparity map, dilate, extract
//! blobs and decide Forward / TurnLeft / TurnRight / Turn90 (Stop is
//! reserved for the ultrasound override).

use thiserror::Error;

use crate::geometry::{depth_to_disparity, StereoRig};
use crate::matcher::DisparityMap;

#[derive(Debug, Error)]
pub enum ObstacleError {
    #[error("invalid depth band: z_near {0} must be < z_far {1}")]
    InvalidBand(f64, f64),
    #[error("mask size mismatch")]
    SizeMismatch,
}

/// Bit mask over the pixels of a disparity map.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, bits: vec![false; (width * height) as usize] }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.bits[(y * self.width + x) as usize] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Render as a grayscale image (set = 255).
    pub fn to_gray(&self) -> crate::image::GrayImage {
        let mut img = crate::image::GrayImage::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    img.set(x, y, 255);
                }
            }
        }
        img
    }
}

/// Connected region of the mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blob {
    /// Inclusive bounding box (x0, y0, x1, y1).
    pub bbox: (u32, u32, u32, u32),
    /// Mean pixel position.
    pub centroid: (f64, f64),
    pub area: u32,
}

/// Navigation decision, one per evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Decision {
    Forward,
    TurnLeft,
    TurnRight,
    Turn90,
    Stop,
}

impl Decision {
    pub const ALL: [Decision; 5] = [
        Decision::Forward,
        Decision::TurnLeft,
        Decision::TurnRight,
        Decision::Turn90,
        Decision::Stop,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Decision::Forward => "Forward",
            Decision::TurnLeft => "TurnLeft",
            Decision::TurnRight => "TurnRight",
            Decision::Turn90 => "Turn90",
            Decision::Stop => "Stop",
        }
    }
}

impl std::fmt::Display for Decision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// 3x3 rectangular dilation, clipped at the borders.
pub fn dilate3x3(m: &BinaryMask) -> BinaryMask {
    let (w, h) = (m.width, m.height);
    let mut out = BinaryMask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let y0 = y.saturating_sub(1);
            let y1 = (y + 1).min(h - 1);
            let x0 = x.saturating_sub(1);
            let x1 = (x + 1).min(w - 1);
            'scan: for ny in y0..=y1 {
                for nx in x0..=x1 {
                    if m.get(nx, ny) {
                        out.set(x, y, true);
                        break 'scan;
                    }
                }
            }
        }
    }
    out
}

/// Result of near-band segmentation. `band_px` is the disparity band
/// (inclusive) that the depth window maps to; `exceeds_horopter` warns
/// that part of the band lies outside `[min_disp, max_disp]` and can
/// never be observed by the matcher.
#[derive(Debug, Clone)]
pub struct NearSegmentation {
    pub mask: BinaryMask,
    pub band_px: (f64, f64),
    pub exceeds_horopter: bool,
}

/// Select pixels whose depth falls in `[z_near, z_far]` (disparity in
/// `[f*T/z_far, f*T/z_near]`), then dilate once to fill small holes.
pub fn segment_near(
    dm: &DisparityMap,
    rig: &StereoRig,
    z_near: f64,
    z_far: f64,
    horopter: (f64, f64),
) -> Result<NearSegmentation, ObstacleError> {
    if !(z_near < z_far) || z_near <= 0.0 {
        return Err(ObstacleError::InvalidBand(z_near, z_far));
    }
    let f = rig.left.f;
    let t = rig.baseline_m;
    let d_lo = depth_to_disparity(f, t, z_far).expect("z_far > 0");
    let d_hi = depth_to_disparity(f, t, z_near).expect("z_near > 0");
    let exceeds = d_lo < horopter.0 || d_hi > horopter.1;

    let mut mask = BinaryMask::new(dm.width(), dm.height());
    for y in 0..dm.height() {
        for x in 0..dm.width() {
            if let Some(d) = dm.get(x, y) {
                if d >= d_lo && d <= d_hi {
                    mask.set(x, y, true);
                }
            }
        }
    }
    Ok(NearSegmentation {
        mask: dilate3x3(&mask),
        band_px: (d_lo, d_hi),
        exceeds_horopter: exceeds,
    })
}

/// 8-connected components with area >= `min_area`, in scan order of
/// their first pixel.
pub fn find_blobs(m: &BinaryMask, min_area: u32) -> Vec<Blob> {
    let (w, h) = (m.width as i64, m.height as i64);
    let mut visited = vec![false; (m.width * m.height) as usize];
    let mut blobs = Vec::new();
    let mut stack = Vec::new();

    for sy in 0..h {
        for sx in 0..w {
            let si = (sy * w + sx) as usize;
            if visited[si] || !m.get(sx as u32, sy as u32) {
                continue;
            }
            let (mut x0, mut y0, mut x1, mut y1) = (sx, sy, sx, sy);
            let (mut sum_x, mut sum_y) = (0f64, 0f64);
            let mut area = 0u32;
            visited[si] = true;
            stack.push((sx, sy));
            while let Some((x, y)) = stack.pop() {
                area += 1;
                sum_x += x as f64;
                sum_y += y as f64;
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
                for dy in -1..=1i64 {
                    for dx in -1..=1i64 {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx < 0 || ny < 0 || nx >= w || ny >= h {
                            continue;
                        }
                        let ni = (ny * w + nx) as usize;
                        if !visited[ni] && m.get(nx as u32, ny as u32) {
                            visited[ni] = true;
                            stack.push((nx, ny));
                        }
                    }
                }
            }
            if area >= min_area {
                blobs.push(Blob {
                    bbox: (x0 as u32, y0 as u32, x1 as u32, y1 as u32),
                    centroid: (sum_x / area as f64, sum_y / area as f64),
                    area,
                });
            }
        }
    }
    blobs
}

/// The decision policy over the left image split into two halves.
/// A centroid exactly on width/2 counts as the right half.
pub fn decide(blobs: &[Blob], image_width: u32) -> Decision {
    if blobs.is_empty() {
        return Decision::Forward;
    }
    let mid = image_width as f64 / 2.0;
    let any_left = blobs.iter().any(|b| b.centroid.0 < mid);
    let any_right = blobs.iter().any(|b| b.centroid.0 >= mid);
    match (any_left, any_right) {
        (true, true) => Decision::Turn90,
        (true, false) => Decision::TurnRight,
        (false, true) => Decision::TurnLeft,
        (false, false) => unreachable!("non-empty blob list"),
    }
}
