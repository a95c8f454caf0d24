//! Block-matching stereo correspondence: brightness/texture prefilter,
//! horizontal SAD search inside the horopter and post-filtering of bad
//! matches.
//!
//! Disparities are stored in 16-bit fixed point (value = disparity * 16)
//! with `INVALID` = 0xFFFF. `match_sad` is the production path (sliding
//! column sums, parallel over rows); `brute_force_match` is the literal
//! triple-loop definition of the same semantics and serves as its oracle.

use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::image::{self, GrayImage, ImageError};

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("image size mismatch: {0}x{1} vs {2}x{3}")]
    SizeMismatch(u32, u32, u32, u32),
    #[error("invalid matcher params: {0}")]
    ParamsInvalid(String),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Sentinel for pixels with no accepted match.
pub const INVALID: u16 = 0xFFFF;
/// Fixed-point scale: stored value = disparity * 16.
pub const DISP_SCALE: f64 = 16.0;

/// Per-pixel fixed-point disparity map.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    width: u32,
    height: u32,
    data: Vec<u16>,
}

impl DisparityMap {
    pub fn new_invalid(width: u32, height: u32) -> Self {
        Self { width, height, data: vec![INVALID; (width * height) as usize] }
    }

    pub fn from_data(width: u32, height: u32, data: Vec<u16>) -> Result<Self, MatchError> {
        if data.len() != (width * height) as usize {
            return Err(MatchError::ParamsInvalid(format!(
                "disparity buffer length {} does not match {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    #[inline]
    pub fn get_fixed(&self, x: u32, y: u32) -> u16 {
        self.data[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set_fixed(&mut self, x: u32, y: u32, v: u16) {
        self.data[(y * self.width + x) as usize] = v;
    }

    /// Disparity in pixels, or `None` for the invalid sentinel.
    #[inline]
    pub fn get(&self, x: u32, y: u32) -> Option<f64> {
        match self.get_fixed(x, y) {
            INVALID => None,
            v => Some(v as f64 / DISP_SCALE),
        }
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|&&v| v != INVALID).count()
    }

    /// Persist as 16-bit big-endian PGM (maxval 65535).
    pub fn encode(&self) -> Vec<u8> {
        image::encode_pgm16(self.width, self.height, &self.data)
    }

    pub fn save(&self, path: &Path) -> Result<(), ImageError> {
        image::atomic_write(path, &self.encode())?;
        Ok(())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ImageError> {
        let (w, h, data) = image::decode_pgm16(bytes)?;
        Ok(Self { width: w, height: h, data })
    }

    pub fn load(path: &Path) -> Result<Self, ImageError> {
        let bytes = std::fs::read(path)?;
        Self::decode(&bytes)
    }
}

/// Block-matching parameters. `min_disp..=max_disp` is the horopter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatcherParams {
    pub window: u32,
    pub min_disp: u32,
    pub max_disp: u32,
    pub prefilter_cap: u8,
    pub texture_threshold: u32,
    pub uniqueness_ratio: u32,
}

impl Default for MatcherParams {
    fn default() -> Self {
        Self {
            window: 9,
            min_disp: 0,
            max_disp: 64,
            prefilter_cap: 31,
            texture_threshold: 10,
            uniqueness_ratio: 15,
        }
    }
}

impl MatcherParams {
    /// Check the type invariants, including the image-width bound on the
    /// horopter.
    pub fn validate(&self, image_width: u32) -> Result<(), MatchError> {
        if self.window < 3 || self.window % 2 == 0 {
            return Err(MatchError::ParamsInvalid(format!(
                "window must be odd and >= 3, got {}",
                self.window
            )));
        }
        if self.min_disp >= self.max_disp {
            return Err(MatchError::ParamsInvalid(format!(
                "min_disp {} must be < max_disp {}",
                self.min_disp, self.max_disp
            )));
        }
        if self.max_disp >= image_width {
            return Err(MatchError::ParamsInvalid(format!(
                "max_disp {} must be < image width {}",
                self.max_disp, image_width
            )));
        }
        Ok(())
    }
}

/// Brightness-normalizing, texture-enhancing prefilter: the horizontal
/// gradient clamped to `[-cap, cap]` and recentered at 128. Constant
/// regions map to exactly 128; adding a constant to the input (below
/// saturation) does not change the output.
pub fn prefilter(img: &GrayImage, cap: u8) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let cap = cap as i32;
    let mut out = GrayImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            // replicate border
            let xm = x.saturating_sub(1);
            let xp = (x + 1).min(w - 1);
            let g = img.get(xp, y) as i32 - img.get(xm, y) as i32;
            out.set(x, y, (128 + g.clamp(-cap, cap)) as u8);
        }
    }
    out
}

/// Texture energy of a prefiltered window: sum of |p - 128|.
#[inline]
fn texel(p: u8) -> u32 {
    (p as i32 - 128).unsigned_abs()
}

/// Post-filter for one pixel given its full cost curve over the
/// horopter: rejects low-texture windows and ambiguous minima (a
/// non-adjacent disparity whose cost is within `uniqueness_ratio`
/// percent of the best).
pub fn postfilter(costs: &[u32], texture_energy: u32, p: &MatcherParams) -> bool {
    if texture_energy < p.texture_threshold {
        return false;
    }
    let mut best = 0usize;
    for (i, &c) in costs.iter().enumerate() {
        if c < costs[best] {
            best = i;
        }
    }
    let cmin = costs[best] as u64;
    for (i, &c) in costs.iter().enumerate() {
        if (i as i64 - best as i64).abs() > 1 && (c as u64) * 100 <= cmin * (100 + p.uniqueness_ratio as u64)
        {
            return false;
        }
    }
    true
}

/// Turn one pixel's cost curve into a fixed-point disparity (or
/// `INVALID`). Ties break toward the smallest disparity; subpixel
/// refinement is parabolic and disabled at horopter endpoints and at
/// exact (zero-cost) matches.
pub fn resolve_disparity(costs: &[u32], texture_energy: u32, p: &MatcherParams) -> u16 {
    // same decision as `postfilter`, sharing a single argmin scan
    if texture_energy < p.texture_threshold {
        return INVALID;
    }
    let mut best = 0usize;
    for (i, &c) in costs.iter().enumerate() {
        if c < costs[best] {
            best = i;
        }
    }
    let limit = costs[best] as u64 * (100 + p.uniqueness_ratio as u64);
    for (i, &c) in costs.iter().enumerate() {
        if (i as i64 - best as i64).abs() > 1 && (c as u64) * 100 <= limit {
            return INVALID;
        }
    }
    let d = (p.min_disp + best as u32) as f64;
    let mut delta = 0.0;
    if best > 0 && best + 1 < costs.len() {
        let a = costs[best - 1] as f64;
        let c0 = costs[best] as f64;
        let b = costs[best + 1] as f64;
        let denom = a + b - 2.0 * c0;
        if c0 > 0.0 && denom > 0.0 {
            delta = ((a - b) / (2.0 * denom)).clamp(-0.5, 0.5);
        }
    }
    ((d + delta) * DISP_SCALE).round() as u16
}

fn check_inputs(
    left: &GrayImage,
    right: &GrayImage,
    p: &MatcherParams,
) -> Result<(), MatchError> {
    if left.width() != right.width() || left.height() != right.height() {
        return Err(MatchError::SizeMismatch(
            left.width(),
            left.height(),
            right.width(),
            right.height(),
        ));
    }
    p.validate(left.width())
}

/// SAD block matching over prefiltered inputs.
///
/// For each pixel with full window support and full horopter reach,
/// the disparity is the argmin over `d in [min_disp, max_disp]` of the
/// window SAD between `left(x, y)` and `right(x - d, y)`. Pixels failing
/// the post-filter or lacking support are `INVALID`. Row bands are
/// matched in parallel; the output does not depend on the partitioning.
pub fn match_sad(
    left: &GrayImage,
    right: &GrayImage,
    p: &MatcherParams,
) -> Result<DisparityMap, MatchError> {
    check_inputs(left, right, p)?;
    let (w, h) = (left.width() as usize, left.height() as usize);
    let half = (p.window / 2) as usize;
    let nd = (p.max_disp - p.min_disp + 1) as usize;
    let x_lo = (p.max_disp as usize) + half; // full horopter reach
    let x_hi = w.saturating_sub(half); // exclusive
    let mut data = vec![INVALID; w * h];

    if x_lo >= x_hi || h < p.window as usize {
        return DisparityMap::from_data(w as u32, h as u32, data);
    }

    let params = *p;
    let win = 2 * half + 1;
    // vertical column sums (per disparity) roll down one row at a time
    // inside each band; a horizontal moving sum of `win` columns then
    // gives the window cost
    let col_lo = x_lo - half;
    let col_n = x_hi - 1 + half - col_lo + 1;
    let span = x_hi - x_lo;
    let (y_lo, y_hi) = (half, h - half);

    // |l - r| column contribution of one image row, for one disparity
    let sad_seed = |cs: &mut [u32], y: usize, d: usize| {
        let (l, r) = (left.row(y as u32), right.row(y as u32));
        for (i, c) in cs.iter_mut().enumerate() {
            let x = col_lo + i;
            *c += (l[x] as i32 - r[x - d] as i32).unsigned_abs();
        }
    };
    let sad_roll = |cs: &mut [u32], y_add: usize, y_sub: usize, d: usize| {
        let (la, ra) = (left.row(y_add as u32), right.row(y_add as u32));
        let (ls, rs) = (left.row(y_sub as u32), right.row(y_sub as u32));
        for (i, c) in cs.iter_mut().enumerate() {
            let x = col_lo + i;
            *c += (la[x] as i32 - ra[x - d] as i32).unsigned_abs();
            *c -= (ls[x] as i32 - rs[x - d] as i32).unsigned_abs();
        }
    };

    const BAND: usize = 32;
    data[y_lo * w..y_hi * w]
        .par_chunks_mut(BAND * w)
        .enumerate()
        .for_each(|(bi, band)| {
            let y0 = y_lo + bi * BAND;
            let mut colsum = vec![0u32; nd * col_n];
            let mut texcol = vec![0u32; col_n];
            for dy in 0..win {
                let y = y0 - half + dy;
                for di in 0..nd {
                    sad_seed(&mut colsum[di * col_n..][..col_n], y, params.min_disp as usize + di);
                }
                let l = left.row(y as u32);
                for (i, c) in texcol.iter_mut().enumerate() {
                    *c += texel(l[col_lo + i]);
                }
            }

            // window costs laid out per pixel: costs[(x - x_lo) * nd + di]
            let mut costs = vec![0u32; nd * span];
            for (ri, out_row) in band.chunks_mut(w).enumerate() {
                let y = y0 + ri;
                if ri > 0 {
                    let (y_add, y_sub) = (y + half, y - half - 1);
                    for di in 0..nd {
                        sad_roll(
                            &mut colsum[di * col_n..][..col_n],
                            y_add,
                            y_sub,
                            params.min_disp as usize + di,
                        );
                    }
                    let (la, ls) = (left.row(y_add as u32), left.row(y_sub as u32));
                    for (i, c) in texcol.iter_mut().enumerate() {
                        *c += texel(la[col_lo + i]);
                        *c -= texel(ls[col_lo + i]);
                    }
                }

                for di in 0..nd {
                    let cs = &colsum[di * col_n..][..col_n];
                    let mut acc: u32 = cs[..win].iter().sum();
                    costs[di] = acc;
                    for x in (x_lo + 1)..x_hi {
                        let i = x - col_lo;
                        acc = acc + cs[i + half] - cs[i - half - 1];
                        costs[(x - x_lo) * nd + di] = acc;
                    }
                }

                let mut tex_acc: u32 = texcol[..win].iter().sum();
                for x in x_lo..x_hi {
                    if x > x_lo {
                        let i = x - col_lo;
                        tex_acc = tex_acc + texcol[i + half] - texcol[i - half - 1];
                    }
                    let curve = &costs[(x - x_lo) * nd..][..nd];
                    out_row[x] = resolve_disparity(curve, tex_acc, &params);
                }
            }
        });

    DisparityMap::from_data(w as u32, h as u32, data)
}

/// Literal triple-loop evaluation of the matching definition, with no
/// optimizations. This is the semantics `match_sad` must reproduce
/// bit-for-bit.
pub fn brute_force_match(
    left: &GrayImage,
    right: &GrayImage,
    p: &MatcherParams,
) -> Result<DisparityMap, MatchError> {
    check_inputs(left, right, p)?;
    let (w, h) = (left.width() as usize, left.height() as usize);
    let half = (p.window / 2) as usize;
    let nd = (p.max_disp - p.min_disp + 1) as usize;
    let x_lo = (p.max_disp as usize) + half;
    let x_hi = w.saturating_sub(half);
    let mut dm = DisparityMap::new_invalid(w as u32, h as u32);

    if x_lo >= x_hi || h < p.window as usize {
        return Ok(dm);
    }

    let mut costs = vec![0u32; nd];
    for y in half..(h - half) {
        for x in x_lo..x_hi {
            let mut texture = 0u32;
            for dy in 0..(2 * half + 1) {
                for dx in 0..(2 * half + 1) {
                    texture += texel(left.get((x - half + dx) as u32, (y - half + dy) as u32));
                }
            }
            for (di, cost) in costs.iter_mut().enumerate() {
                let d = (p.min_disp as usize) + di;
                let mut s = 0u32;
                for dy in 0..(2 * half + 1) {
                    for dx in 0..(2 * half + 1) {
                        let lx = (x - half + dx) as u32;
                        let ly = (y - half + dy) as u32;
                        s += (left.get(lx, ly) as i32 - right.get(lx - d as u32, ly) as i32)
                            .unsigned_abs();
                    }
                }
                *cost = s;
            }
            dm.set_fixed(x as u32, y as u32, resolve_disparity(&costs, texture, p));
        }
    }
    Ok(dm)
}

/// Grayscale visualization: linear map of `[min_disp, max_disp]` to
/// `[1, 255]`, `INVALID` to 0.
pub fn disparity_to_gray(dm: &DisparityMap, min_disp: u32, max_disp: u32) -> GrayImage {
    let mut out = GrayImage::new(dm.width(), dm.height());
    let span = (max_disp - min_disp) as f64;
    for y in 0..dm.height() {
        for x in 0..dm.width() {
            let v = match dm.get(x, y) {
                None => 0u8,
                Some(d) => {
                    let t = ((d - min_disp as f64) / span).clamp(0.0, 1.0);
                    (1.0 + t * 254.0).round() as u8
                }
            };
            out.set(x, y, v);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn noise_image(w: u32, h: u32, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = GrayImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                img.set(x, y, rng.gen());
            }
        }
        img
    }

    /// Right image = left shifted left by k pixels (a scene at constant
    /// disparity k); the vacated right edge is filled with fresh noise.
    fn shifted_pair(w: u32, h: u32, k: u32, seed: u64) -> (GrayImage, GrayImage) {
        let left = noise_image(w, h, seed);
        let filler = noise_image(w, h, seed ^ 0xdead);
        let mut right = GrayImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                if x + k < w {
                    right.set(x, y, left.get(x + k, y));
                } else {
                    right.set(x, y, filler.get(x, y));
                }
            }
        }
        (left, right)
    }

    #[test]
    fn prefilter_constant_is_128() {
        for level in [0u8, 57, 255] {
            let img = GrayImage::from_data(8, 6, vec![level; 48]).unwrap();
            let out = prefilter(&img, 31);
            assert!(out.data().iter().all(|&p| p == 128));
        }
    }

    #[test]
    fn prefilter_brightness_invariant() {
        let img = noise_image(32, 16, 3);
        // keep away from saturation so the offset is exact
        let img = GrayImage::from_data(
            32,
            16,
            img.data().iter().map(|&p| 40 + p / 2).collect(),
        )
        .unwrap();
        let shifted = img.saturating_add(10);
        assert_eq!(prefilter(&img, 31).data(), prefilter(&shifted, 31).data());
    }

    #[test]
    fn prefilter_step_edge_saturates() {
        let mut img = GrayImage::new(16, 4);
        for y in 0..4 {
            for x in 0..16 {
                img.set(x, y, if x < 8 { 50 } else { 150 });
            }
        }
        let out = prefilter(&img, 31);
        // gradient of +100 across the edge clamps to +31
        assert_eq!(out.get(7, 1), 128 + 31);
        assert_eq!(out.get(8, 1), 128 + 31);
        assert_eq!(out.get(3, 1), 128);
    }

    #[test]
    fn shifted_pair_recovers_k() {
        let k = 12u32;
        let (l, r) = shifted_pair(128, 32, k, 7);
        let p = MatcherParams { max_disp: 32, ..Default::default() };
        let lp = prefilter(&l, p.prefilter_cap);
        let rp = prefilter(&r, p.prefilter_cap);
        let dm = match_sad(&lp, &rp, &p).unwrap();
        let half = p.window / 2;
        let mut total = 0usize;
        let mut exact = 0usize;
        for y in half..(32 - half) {
            // stay clear of the filler noise at the right edge
            for x in (p.max_disp + half)..(128 - half - k) {
                total += 1;
                if dm.get_fixed(x, y) == (k * 16) as u16 {
                    exact += 1;
                }
            }
        }
        assert!(total > 0);
        assert!(
            exact as f64 / total as f64 >= 0.99,
            "only {exact}/{total} pixels exact"
        );
    }

    #[test]
    fn textureless_pair_all_invalid() {
        let l = GrayImage::from_data(64, 24, vec![90; 64 * 24]).unwrap();
        let r = l.clone();
        let p = MatcherParams { max_disp: 16, ..Default::default() };
        let dm = match_sad(&prefilter(&l, 31), &prefilter(&r, 31), &p).unwrap();
        assert_eq!(dm.valid_count(), 0);
    }

    #[test]
    fn oracle_equivalence_small() {
        for seed in 0..4u64 {
            let l = noise_image(64, 48, seed * 2 + 1);
            let r = noise_image(64, 48, seed * 2 + 2);
            for window in [3u32, 9] {
                for max_disp in [16u32, 48] {
                    let p = MatcherParams { window, max_disp, ..Default::default() };
                    let a = match_sad(&l, &r, &p).unwrap();
                    let b = brute_force_match(&l, &r, &p).unwrap();
                    assert_eq!(a.data(), b.data(), "seed {seed} w {window} d {max_disp}");
                }
            }
        }
    }

    #[test]
    fn brightness_invariance_end_to_end() {
        let (l, r) = shifted_pair(96, 32, 8, 11);
        let dim = |img: &GrayImage| {
            GrayImage::from_data(
                img.width(),
                img.height(),
                img.data().iter().map(|&p| 30 + p / 2).collect(),
            )
            .unwrap()
        };
        let (l, r) = (dim(&l), dim(&r));
        let p = MatcherParams { max_disp: 16, ..Default::default() };
        let base = match_sad(&prefilter(&l, 31), &prefilter(&r, 31), &p).unwrap();
        let bright = match_sad(
            &prefilter(&l.saturating_add(20), 31),
            &prefilter(&r.saturating_add(20), 31),
            &p,
        )
        .unwrap();
        assert_eq!(base.data(), bright.data());
    }

    #[test]
    fn postfilter_cases() {
        let p = MatcherParams::default();
        // flat curve is ambiguous
        assert!(!postfilter(&[50; 20], 1000, &p));
        // unique sharp minimum with texture is kept
        let mut curve = vec![500u32; 20];
        curve[7] = 10;
        curve[6] = 200;
        curve[8] = 220;
        assert!(postfilter(&curve, 1000, &p));
        // zero texture always rejected
        assert!(!postfilter(&curve, 0, &p));
    }

    #[test]
    fn params_rejected() {
        let l = noise_image(32, 32, 1);
        let bad = MatcherParams { window: 8, ..Default::default() };
        assert!(matches!(match_sad(&l, &l, &bad), Err(MatchError::ParamsInvalid(_))));
        let bad = MatcherParams { max_disp: 32, ..Default::default() };
        assert!(matches!(match_sad(&l, &l, &bad), Err(MatchError::ParamsInvalid(_))));
        let r = noise_image(16, 16, 2);
        assert!(matches!(
            match_sad(&l, &r, &MatcherParams::default()),
            Err(MatchError::SizeMismatch(..))
        ));
    }

    #[test]
    fn gray_visualization() {
        let mut dm = DisparityMap::new_invalid(4, 1);
        let img = disparity_to_gray(&dm, 0, 64);
        assert!(img.data().iter().all(|&v| v == 0));

        dm.set_fixed(0, 0, 64 * 16); // max_disp
        dm.set_fixed(1, 0, 32 * 16); // midpoint
        let img = disparity_to_gray(&dm, 0, 64);
        assert_eq!(img.get(0, 0), 255);
        assert!((img.get(1, 0) as i32 - 128).abs() <= 1);
    }

    #[test]
    fn disparity_map_file_round_trip() {
        let mut dm = DisparityMap::new_invalid(6, 4);
        dm.set_fixed(2, 1, 123);
        dm.set_fixed(5, 3, 64 * 16);
        let back = DisparityMap::decode(&dm.encode()).unwrap();
        assert_eq!(dm, back);
    }
}
