//! Synthetic stereo scene renderer: per-pixel ray casting of textured
//! boxes (and the floor) through the two rig cameras, emitting
//! left/right images plus pixel-exact ground-truth disparity and an
//! occlusion mask.

use rayon::prelude::*;

use crate::geometry::{Pose2D, StereoRig};
use crate::image::{GrayImage, RgbImage};
use crate::matcher::{DisparityMap, DISP_SCALE, INVALID};
use crate::obstacle::BinaryMask;
use crate::world::WorldModel;

/// A camera placement inside a world.
#[derive(Debug, Clone, Copy)]
pub struct Scene<'a> {
    pub world: &'a WorldModel,
    pub camera: Pose2D,
    pub camera_height: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RenderOptions {
    /// Vertical misalignment injected into the right camera, in pixels.
    /// The ideal rig uses 0.
    pub right_cy_offset_px: f64,
    /// Optional additive Gaussian intensity noise (sigma in gray
    /// levels), hashed per pixel so the output stays deterministic.
    pub noise_sigma: f64,
    pub noise_seed: u64,
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub left: GrayImage,
    pub right: GrayImage,
    pub left_rgb: RgbImage,
    pub gt_disparity: DisparityMap,
    /// Pixels visible in the left image but not the right.
    pub occlusion: BinaryMask,
}

fn mix(mut h: u64) -> u64 {
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^= h >> 33;
    h
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = mix(
        seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
            ^ (ix as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9)
            ^ (iy as u64).wrapping_mul(0x94d0_49bb_1331_11eb),
    );
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn value_noise(seed: u64, u: f64, v: f64, wavelength: f64) -> f64 {
    let (x, y) = (u / wavelength, v / wavelength);
    let (ix, iy) = (x.floor(), y.floor());
    let (fx, fy) = (smooth(x - ix), smooth(y - iy));
    let (ix, iy) = (ix as i64, iy as i64);
    let s = seed ^ mix(wavelength.to_bits());
    let a = lattice(s, ix, iy);
    let b = lattice(s, ix + 1, iy);
    let c = lattice(s, ix, iy + 1);
    let d = lattice(s, ix + 1, iy + 1);
    a + (b - a) * fx + (c - a) * fy + (a - b - c + d) * fx * fy
}

/// Deterministic band-limited value noise in [0, 255]. Wavelengths span
/// 4-45 mm so a 9x9 matching window always sees intensity variation at
/// indoor working distances.
pub fn procedural_texture(seed: u64, u: f64, v: f64) -> u8 {
    const WAVELENGTHS: [f64; 4] = [0.004, 0.009, 0.020, 0.045];
    let mut acc = 0.0;
    for w in WAVELENGTHS {
        acc += value_noise(seed, u, v, w);
    }
    // stretch the sum-of-octaves distribution back toward full range
    let t = ((acc / WAVELENGTHS.len() as f64 - 0.5) * 2.6 + 0.5).clamp(0.0, 1.0);
    (t * 255.0).round() as u8
}

fn tint(seed: u64) -> [f64; 3] {
    let h = mix(seed ^ 0x7e57);
    [
        0.6 + 0.4 * ((h & 0xff) as f64 / 255.0),
        0.6 + 0.4 * (((h >> 8) & 0xff) as f64 / 255.0),
        0.6 + 0.4 * (((h >> 16) & 0xff) as f64 / 255.0),
    ]
}

/// Surface parameterization for texturing: boxes use (x + y, z) so both
/// vertical face orientations get a 2D pattern, the floor uses (x, y).
fn surface_uv(seed: u64, p: [f64; 3]) -> (f64, f64) {
    if seed == crate::world::FLOOR_SEED {
        (p[0], p[1])
    } else {
        (p[0] + p[1], p[2])
    }
}

fn hash_gaussian(seed: u64, x: u32, y: u32) -> f64 {
    let h1 = mix(seed ^ ((x as u64) << 32 | y as u64));
    let h2 = mix(h1 ^ 0xabcd_ef01);
    let u1 = ((h1 >> 11) as f64 / (1u64 << 53) as f64).max(1e-12);
    let u2 = (h2 >> 11) as f64 / (1u64 << 53) as f64;
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

struct CameraFrame {
    origin: [f64; 3],
    fwd: [f64; 3],
    right: [f64; 3],
    down: [f64; 3],
}

impl CameraFrame {
    fn ray(&self, f: f64, cx: f64, cy: f64, px: f64, py: f64) -> [f64; 3] {
        let a = (px - cx) / f;
        let b = (py - cy) / f;
        [
            self.fwd[0] + a * self.right[0] + b * self.down[0],
            self.fwd[1] + a * self.right[1] + b * self.down[1],
            self.fwd[2] + a * self.right[2] + b * self.down[2],
        ]
    }
}

fn camera_frames(scene: &Scene, rig: &StereoRig) -> (CameraFrame, CameraFrame) {
    let (s, c) = scene.camera.theta.sin_cos();
    let fwd = [c, s, 0.0];
    let right = [s, -c, 0.0];
    let down = [0.0, 0.0, -1.0];
    let left_origin = [scene.camera.x, scene.camera.y, scene.camera_height];
    let right_origin = [
        left_origin[0] + rig.baseline_m * right[0],
        left_origin[1] + rig.baseline_m * right[1],
        left_origin[2],
    ];
    (
        CameraFrame { origin: left_origin, fwd, right, down },
        CameraFrame { origin: right_origin, fwd, right, down },
    )
}

/// Render the stereo pair with ground truth. The two cameras are
/// horizontally displaced by exactly the baseline with identical
/// orientation; `gt_disparity` is f*T/Z at every left-visible pixel,
/// with pixels invisible from the right camera flagged occluded and set
/// INVALID.
pub fn render_stereo(scene: &Scene, rig: &StereoRig) -> RenderOutput {
    render_stereo_with(scene, rig, &RenderOptions::default())
}

pub fn render_stereo_with(scene: &Scene, rig: &StereoRig, opts: &RenderOptions) -> RenderOutput {
    let (w, h) = (rig.left.width, rig.left.height);
    let f = rig.left.f;
    let (left_cam, right_cam) = camera_frames(scene, rig);
    let world = scene.world;

    let shade = |cam: &CameraFrame, cx: f64, cy: f64, x: u32, y: u32| -> (u8, [u8; 3]) {
        let dir = cam.ray(f, cx, cy, x as f64, y as f64);
        match world.raycast(cam.origin, dir) {
            None => (0, [0, 0, 0]),
            Some(hit) => {
                let (u, v) = surface_uv(hit.seed, hit.point);
                let g = procedural_texture(hit.seed, u, v);
                let t = tint(hit.seed);
                (
                    g,
                    [
                        (g as f64 * t[0]).round() as u8,
                        (g as f64 * t[1]).round() as u8,
                        (g as f64 * t[2]).round() as u8,
                    ],
                )
            }
        }
    };

    let mut left = GrayImage::new(w, h);
    let mut left_rgb = RgbImage::new(w, h);
    let mut right = GrayImage::new(w, h);
    let mut gt = vec![INVALID; (w * h) as usize];
    let mut occl = vec![false; (w * h) as usize];

    // left image, ground truth and occlusion
    let rows: Vec<(Vec<u8>, Vec<[u8; 3]>, Vec<u16>, Vec<bool>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut gray_row = vec![0u8; w as usize];
            let mut rgb_row = vec![[0u8; 3]; w as usize];
            let mut gt_row = vec![INVALID; w as usize];
            let mut occ_row = vec![false; w as usize];
            for x in 0..w {
                let (g, rgb) = shade(&left_cam, rig.left.cx, rig.left.cy, x, y);
                gray_row[x as usize] = g;
                rgb_row[x as usize] = rgb;

                let dir = left_cam.ray(f, rig.left.cx, rig.left.cy, x as f64, y as f64);
                let Some(hit) = world.raycast(left_cam.origin, dir) else {
                    continue;
                };
                let z = hit.t; // dir has unit forward component
                let d = f * rig.baseline_m / z;
                let fixed = (d * DISP_SCALE).round();
                if fixed >= INVALID as f64 || fixed < 1.0 {
                    continue; // closer than the fixed-point range can express
                }
                // visibility from the right camera: the match position
                // must be inside the image and the surface unobstructed
                if (x as f64) - d < 0.0 {
                    occ_row[x as usize] = true;
                    continue;
                }
                let to_p = [
                    hit.point[0] - right_cam.origin[0],
                    hit.point[1] - right_cam.origin[1],
                    hit.point[2] - right_cam.origin[2],
                ];
                if let Some(rh) = world.raycast(right_cam.origin, to_p) {
                    if rh.t < 1.0 - 1e-6 {
                        occ_row[x as usize] = true;
                        continue;
                    }
                }
                gt_row[x as usize] = fixed as u16;
            }
            (gray_row, rgb_row, gt_row, occ_row)
        })
        .collect();
    for (y, (gray_row, rgb_row, gt_row, occ_row)) in rows.into_iter().enumerate() {
        for x in 0..w as usize {
            left.set(x as u32, y as u32, gray_row[x]);
            left_rgb.set(x as u32, y as u32, rgb_row[x]);
            gt[y * w as usize + x] = gt_row[x];
            occl[y * w as usize + x] = occ_row[x];
        }
    }

    // right image (optionally with injected vertical misalignment)
    let right_rows: Vec<Vec<u8>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row = vec![0u8; w as usize];
            for x in 0..w {
                let (g, _) = shade(
                    &right_cam,
                    rig.right.cx,
                    rig.right.cy + opts.right_cy_offset_px,
                    x,
                    y,
                );
                row[x as usize] = g;
            }
            row
        })
        .collect();
    for (y, row) in right_rows.into_iter().enumerate() {
        for (x, &g) in row.iter().enumerate() {
            right.set(x as u32, y as u32, g);
        }
    }

    if opts.noise_sigma > 0.0 {
        let apply = |img: &mut GrayImage, which: u64| {
            for y in 0..h {
                for x in 0..w {
                    let n = hash_gaussian(opts.noise_seed ^ which, x, y) * opts.noise_sigma;
                    let v = (img.get(x, y) as f64 + n).clamp(0.0, 255.0).round() as u8;
                    img.set(x, y, v);
                }
            }
        };
        apply(&mut left, 1);
        apply(&mut right, 2);
    }

    let gt_disparity = DisparityMap::from_data(w, h, gt).expect("sized buffer");
    let mut occlusion = BinaryMask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            if occl[(y * w + x) as usize] {
                occlusion.set(x, y, true);
            }
        }
    }
    RenderOutput { left, right, left_rgb, gt_disparity, occlusion }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{triangulate_depth, CameraIntrinsics};
    use crate::world::BoxObstacle;

    fn rig() -> StereoRig {
        let cam = CameraIntrinsics::new(500.0, 320.0, 240.0, 640, 480).unwrap();
        StereoRig::new(cam, cam, 0.063).unwrap()
    }

    fn wall_world(depth: f64) -> WorldModel {
        WorldModel {
            boxes: vec![BoxObstacle {
                x: depth,
                y: -3.0,
                w: 0.5,
                h: 6.0,
                height: 3.0,
                texture_seed: 11,
            }],
            floor: None,
        }
    }

    fn scene(world: &WorldModel) -> Scene<'_> {
        Scene { world, camera: Pose2D::identity(), camera_height: 0.25 }
    }

    #[test]
    fn wall_gives_uniform_gt() {
        let world = wall_world(1.0);
        let out = render_stereo(&scene(&world), &rig());
        let expected = (31.5 * DISP_SCALE) as u16; // f*T/1.0 = 31.5 px
        // rows below y = 365 look under the wall (no floor here)
        for y in (0..360).step_by(31) {
            for x in (64..640).step_by(17) {
                assert_eq!(out.gt_disparity.get_fixed(x, y), expected, "({x},{y})");
            }
        }
        // left edge cannot be seen by the right camera
        assert!(out.occlusion.get(10, 240));
    }

    #[test]
    fn empty_world_all_invalid() {
        let world = WorldModel::default();
        let out = render_stereo(&scene(&world), &rig());
        assert_eq!(out.gt_disparity.valid_count(), 0);
        assert!(out.left.data().iter().all(|&p| p == 0));
    }

    #[test]
    fn gt_consistent_with_raycast_depth() {
        let mut world = wall_world(1.5);
        world.boxes.push(BoxObstacle {
            x: 0.8,
            y: -0.1,
            w: 0.2,
            h: 0.3,
            height: 1.0,
            texture_seed: 3,
        });
        let r = rig();
        let out = render_stereo(&scene(&world), &r);
        let (left_cam, _) = camera_frames(&scene(&world), &r);
        for y in (0..480).step_by(13) {
            for x in (0..640).step_by(11) {
                let Some(d) = out.gt_disparity.get(x, y) else { continue };
                let dir = left_cam.ray(500.0, 320.0, 240.0, x as f64, y as f64);
                let z = world.raycast(left_cam.origin, dir).unwrap().t;
                let z_gt = triangulate_depth(500.0, 0.063, d).unwrap();
                // gt is quantized to 1/16 px
                assert!((z_gt - z).abs() / z < 2e-3, "({x},{y}): {z_gt} vs {z}");
            }
        }
    }

    #[test]
    fn occlusion_band_at_box_edge() {
        // thin near box in front of a far wall (thin, so neither camera
        // sees its side face and the band width is just the disparity
        // difference)
        let mut world = wall_world(2.0);
        world.boxes.push(BoxObstacle {
            x: 1.0,
            y: -0.6,
            w: 0.02,
            h: 0.5,
            height: 2.0,
            texture_seed: 9,
        });
        let r = rig();
        let out = render_stereo(&scene(&world), &r);
        let y = 240u32;
        // the box's left image edge (world y = -0.1) is at pixel
        // x = 320 + 500*0.1/1.0 = 370; the hidden strip of wall sits
        // just left of it, one disparity difference wide
        let d_wall: f64 = 500.0 * 0.063 / 2.0; // 15.75
        let d_box: f64 = 500.0 * 0.063 / 1.0; // 31.5
        let band = (d_box - d_wall).round() as u32; // ~16 px of hidden wall
        let mut occluded = 0;
        for x in (370 - band - 4)..370 {
            if out.occlusion.get(x, y) {
                occluded += 1;
            }
        }
        assert!(
            (occluded as i64 - band as i64).abs() <= 2,
            "occlusion band {occluded} vs expected ~{band}"
        );
    }

    #[test]
    fn texture_deterministic_and_decorrelated() {
        assert_eq!(procedural_texture(5, 0.123, 0.456), procedural_texture(5, 0.123, 0.456));

        let n = 10_000;
        let (mut sa, mut sb, mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            let u = (i % 100) as f64 * 0.013;
            let v = (i / 100) as f64 * 0.017;
            let a = procedural_texture(1, u, v) as f64;
            let b = procedural_texture(2, u, v) as f64;
            sa += a;
            sb += b;
            sab += a * b;
            saa += a * a;
            sbb += b * b;
        }
        let nf = n as f64;
        let cov = sab / nf - (sa / nf) * (sb / nf);
        let var_a = saa / nf - (sa / nf) * (sa / nf);
        let var_b = sbb / nf - (sb / nf) * (sb / nf);
        let rho = cov / (var_a * var_b).sqrt();
        assert!(rho.abs() < 0.1, "fields correlated: rho = {rho}");
    }

    #[test]
    fn rendered_patches_have_texture() {
        use crate::matcher::{prefilter, MatcherParams};
        let world = wall_world(1.0);
        let out = render_stereo(&scene(&world), &rig());
        let p = MatcherParams::default();
        let pre = prefilter(&out.left, p.prefilter_cap);
        // every 9x9 window energy (sum |v - 128|) clears the texture
        // floor; rows below 365 miss the wall and stay black
        for wy in (4..356).step_by(37) {
            for wx in (4..636).step_by(41) {
                let mut energy = 0u32;
                for dy in 0..9 {
                    for dx in 0..9 {
                        energy += (pre.get(wx + dx - 4, wy + dy - 4) as i32 - 128).unsigned_abs();
                    }
                }
                assert!(energy >= p.texture_threshold, "window at ({wx},{wy}): {energy}");
            }
        }
    }

    #[test]
    fn deterministic_rendering() {
        let world = wall_world(1.2);
        let a = render_stereo(&scene(&world), &rig());
        let b = render_stereo(&scene(&world), &rig());
        assert_eq!(a.left.data(), b.left.data());
        assert_eq!(a.right.data(), b.right.data());
        assert_eq!(a.gt_disparity.data(), b.gt_disparity.data());
    }

    #[test]
    fn misalignment_hook_shifts_rows() {
        let world = wall_world(1.0);
        let r = rig();
        let base = render_stereo(&scene(&world), &r);
        let off = render_stereo_with(
            &scene(&world),
            &r,
            &RenderOptions { right_cy_offset_px: 3.0, ..Default::default() },
        );
        // shifting cy by +3 moves right-image content down by 3 rows
        let mut same = 0;
        let mut total = 0;
        for y in 100..200u32 {
            for x in 100..540u32 {
                total += 1;
                if off.right.get(x, y + 3) == base.right.get(x, y) {
                    same += 1;
                }
            }
        }
        assert!(same as f64 / total as f64 > 0.95, "{same}/{total}");
    }
}
