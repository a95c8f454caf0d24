//! Epipolar calibration checks: normalized 8-point fundamental-matrix
//! estimation inside RANSAC, essential-matrix derivation and the rig
//! alignment check that justifies skipping rectification.

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{project_point, CameraIntrinsics, PixelCoord, Point3, StereoRig};

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("need at least 8 correspondences, got {0}")]
    TooFewCorrespondences(usize),
    #[error("degenerate point configuration")]
    DegenerateConfiguration,
    #[error("consensus too small: best inlier fraction {found:.3} < {required:.3}")]
    ConsensusTooSmall { found: f64, required: f64 },
    #[error("degenerate epipolar line (zero normal)")]
    DegenerateLine,
    #[error("empty correspondence list")]
    EmptyInput,
}

/// A left/right pixel pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub left: PixelCoord,
    pub right: PixelCoord,
}

/// Rank-2, unit-Frobenius-norm fundamental matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FundamentalMatrix {
    pub m: Matrix3<f64>,
}

/// Essential matrix with singular values projected to (s, s, 0).
#[derive(Debug, Clone, PartialEq)]
pub struct EssentialMatrix {
    pub m: Matrix3<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct RansacConfig {
    pub iterations: u32,
    pub inlier_threshold_px: f64,
    pub seed: u64,
    pub min_inlier_fraction: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            inlier_threshold_px: 1.0,
            seed: 0,
            min_inlier_fraction: 0.5,
        }
    }
}

/// Vertical-alignment summary over a set of correspondences.
#[derive(Debug, Clone, Copy)]
pub struct AlignmentReport {
    pub mean_abs_dy: f64,
    pub max_abs_dy: f64,
    pub threshold_px: f64,
    pub pass: bool,
}

impl std::fmt::Display for AlignmentReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "vertical misalignment |y' - y|:")?;
        writeln!(f, "  mean: {:.4} px", self.mean_abs_dy)?;
        writeln!(f, "  max:  {:.4} px", self.max_abs_dy)?;
        write!(
            f,
            "  {} (threshold {:.2} px)",
            if self.pass { "PASS: no rectification required" } else { "FAIL: rig misaligned" },
            self.threshold_px
        )
    }
}

/// Hartley normalization: translate to the centroid and scale so the
/// RMS distance is sqrt(2). Returns the similarity transform.
fn normalize(points: &[PixelCoord]) -> Option<(Matrix3<f64>, Vec<(f64, f64)>)> {
    let n = points.len() as f64;
    let (mut mx, mut my) = (0.0, 0.0);
    for p in points {
        mx += p.x;
        my += p.y;
    }
    mx /= n;
    my /= n;
    let mut rms = 0.0;
    for p in points {
        let (dx, dy) = (p.x - mx, p.y - my);
        rms += dx * dx + dy * dy;
    }
    rms = (rms / n).sqrt();
    if rms < 1e-12 {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / rms;
    let t = Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0);
    let mapped = points.iter().map(|p| (s * (p.x - mx), s * (p.y - my))).collect();
    Some((t, mapped))
}

fn enforce_rank2_and_norm(f: Matrix3<f64>) -> Result<Matrix3<f64>, CalibError> {
    let svd = f.svd(true, true);
    let u = svd.u.ok_or(CalibError::DegenerateConfiguration)?;
    let vt = svd.v_t.ok_or(CalibError::DegenerateConfiguration)?;
    let mut s = svd.singular_values;
    s[2] = 0.0;
    let mut out = u * Matrix3::from_diagonal(&s) * vt;
    let norm = out.norm();
    if norm < 1e-15 {
        return Err(CalibError::DegenerateConfiguration);
    }
    out /= norm;
    // deterministic sign: largest-magnitude entry positive
    let mut pivot = 0.0f64;
    for v in out.iter() {
        if v.abs() > pivot.abs() {
            pivot = *v;
        }
    }
    if pivot < 0.0 {
        out = -out;
    }
    Ok(out)
}

/// Normalized 8-point estimation of F such that x_r^T F x_l = 0.
pub fn estimate_fundamental_8point(
    corrs: &[Correspondence],
) -> Result<FundamentalMatrix, CalibError> {
    if corrs.len() < 8 {
        return Err(CalibError::TooFewCorrespondences(corrs.len()));
    }
    let lefts: Vec<PixelCoord> = corrs.iter().map(|c| c.left).collect();
    let rights: Vec<PixelCoord> = corrs.iter().map(|c| c.right).collect();
    let (tl, nl) = normalize(&lefts).ok_or(CalibError::DegenerateConfiguration)?;
    let (tr, nr) = normalize(&rights).ok_or(CalibError::DegenerateConfiguration)?;

    // at least 9 rows (padding with zeros), so the thin SVD's V^T is
    // 9x9 and its last row spans the nullspace even for a minimal
    // 8-correspondence sample
    let mut a = DMatrix::<f64>::zeros(corrs.len().max(9), 9);
    for (i, ((lx, ly), (rx, ry))) in nl.iter().zip(nr.iter()).enumerate() {
        a[(i, 0)] = rx * lx;
        a[(i, 1)] = rx * ly;
        a[(i, 2)] = *rx;
        a[(i, 3)] = ry * lx;
        a[(i, 4)] = ry * ly;
        a[(i, 5)] = *ry;
        a[(i, 6)] = *lx;
        a[(i, 7)] = *ly;
        a[(i, 8)] = 1.0;
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t.ok_or(CalibError::DegenerateConfiguration)?;
    // nullspace must be (numerically) one dimensional
    let sv = &svd.singular_values;
    if sv.len() >= 2 && sv[sv.len() - 2] < 1e-12 * sv[0].max(1.0) {
        return Err(CalibError::DegenerateConfiguration);
    }
    let f_vec = vt.row(vt.nrows() - 1);
    let fn_ = Matrix3::new(
        f_vec[0], f_vec[1], f_vec[2], f_vec[3], f_vec[4], f_vec[5], f_vec[6], f_vec[7], f_vec[8],
    );
    let f = tr.transpose() * fn_ * tl;
    Ok(FundamentalMatrix { m: enforce_rank2_and_norm(f)? })
}

/// Symmetric epipolar distance in pixels: the mean of the two
/// point-to-epiline distances.
pub fn epipolar_residual(f: &FundamentalMatrix, c: &Correspondence) -> Result<f64, CalibError> {
    let xl = Vector3::new(c.left.x, c.left.y, 1.0);
    let xr = Vector3::new(c.right.x, c.right.y, 1.0);
    let l_right = f.m * xl; // epiline in the right image
    let l_left = f.m.transpose() * xr; // epiline in the left image
    let nr = (l_right[0] * l_right[0] + l_right[1] * l_right[1]).sqrt();
    let nl = (l_left[0] * l_left[0] + l_left[1] * l_left[1]).sqrt();
    if nr < 1e-15 || nl < 1e-15 {
        return Err(CalibError::DegenerateLine);
    }
    let dr = (xr.dot(&l_right)).abs() / nr;
    let dl = (xl.dot(&l_left)).abs() / nl;
    Ok(0.5 * (dr + dl))
}

/// RANSAC around the 8-point solver. Deterministic for a fixed seed;
/// the final model is refit on the full consensus set and the mask is
/// recomputed from the refit model.
pub fn ransac_fundamental(
    corrs: &[Correspondence],
    cfg: &RansacConfig,
) -> Result<(FundamentalMatrix, Vec<bool>), CalibError> {
    if corrs.len() < 8 {
        return Err(CalibError::TooFewCorrespondences(corrs.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best_count = 0usize;
    let mut best_mask: Option<Vec<bool>> = None;

    for _ in 0..cfg.iterations {
        let idx = rand::seq::index::sample(&mut rng, corrs.len(), 8);
        let sample: Vec<Correspondence> = idx.iter().map(|i| corrs[i]).collect();
        let Ok(f) = estimate_fundamental_8point(&sample) else {
            continue;
        };
        let mut mask = vec![false; corrs.len()];
        let mut count = 0usize;
        for (i, c) in corrs.iter().enumerate() {
            if let Ok(r) = epipolar_residual(&f, c) {
                if r <= cfg.inlier_threshold_px {
                    mask[i] = true;
                    count += 1;
                }
            }
        }
        if count > best_count {
            best_count = count;
            best_mask = Some(mask);
        }
    }

    let found = best_count as f64 / corrs.len() as f64;
    if best_count < 8 || found < cfg.min_inlier_fraction {
        return Err(CalibError::ConsensusTooSmall {
            found,
            required: cfg.min_inlier_fraction,
        });
    }
    let mask = best_mask.unwrap();
    let inliers: Vec<Correspondence> = corrs
        .iter()
        .zip(mask.iter())
        .filter_map(|(c, &m)| m.then_some(*c))
        .collect();
    let f = estimate_fundamental_8point(&inliers)?;
    let final_mask: Vec<bool> = corrs
        .iter()
        .map(|c| {
            epipolar_residual(&f, c)
                .map(|r| r <= cfg.inlier_threshold_px)
                .unwrap_or(false)
        })
        .collect();
    Ok((f, final_mask))
}

fn k_matrix(cam: &CameraIntrinsics) -> Matrix3<f64> {
    Matrix3::new(cam.f, 0.0, cam.cx, 0.0, cam.f, cam.cy, 0.0, 0.0, 1.0)
}

/// E = K_r^T * F * K_l with singular values projected to (s, s, 0).
pub fn essential_from_fundamental(
    f: &FundamentalMatrix,
    left: &CameraIntrinsics,
    right: &CameraIntrinsics,
) -> Result<EssentialMatrix, CalibError> {
    let e = k_matrix(right).transpose() * f.m * k_matrix(left);
    let svd = e.svd(true, true);
    let u = svd.u.ok_or(CalibError::DegenerateConfiguration)?;
    let vt = svd.v_t.ok_or(CalibError::DegenerateConfiguration)?;
    let sv = svd.singular_values;
    let s = 0.5 * (sv[0] + sv[1]);
    if s < 1e-15 {
        return Err(CalibError::DegenerateConfiguration);
    }
    let m = u * Matrix3::from_diagonal(&Vector3::new(s, s, 0.0)) * vt;
    Ok(EssentialMatrix { m })
}

/// Vertical disparity check over correspondences; `pass` iff the max
/// |y' - y| stays at or below the threshold.
pub fn check_alignment(
    corrs: &[Correspondence],
    threshold_px: f64,
) -> Result<AlignmentReport, CalibError> {
    if corrs.is_empty() {
        return Err(CalibError::EmptyInput);
    }
    let mut sum = 0.0;
    let mut max = 0.0f64;
    for c in corrs {
        let dy = (c.right.y - c.left.y).abs();
        sum += dy;
        max = max.max(dy);
    }
    Ok(AlignmentReport {
        mean_abs_dy: sum / corrs.len() as f64,
        max_abs_dy: max,
        threshold_px,
        pass: max <= threshold_px,
    })
}

/// Project 3D points (in the left camera frame) through both rig
/// cameras, keeping only pairs that land inside both images. Supplies
/// synthetic correspondences in place of chessboard imagery;
/// `right_y_offset_px` injects vertical misalignment for testing.
pub fn project_correspondences(
    rig: &StereoRig,
    points: &[Point3],
    right_y_offset_px: f64,
) -> Vec<Correspondence> {
    let mut out = Vec::new();
    for p in points {
        let Ok(l) = project_point(&rig.left, p) else { continue };
        let shifted = Point3::new(p.x - rig.baseline_m, p.y, p.z);
        let Ok(mut r) = project_point(&rig.right, &shifted) else { continue };
        r.y += right_y_offset_px;
        let (w, h) = (rig.left.width as f64, rig.left.height as f64);
        if l.x >= 0.0 && l.x < w && l.y >= 0.0 && l.y < h && r.x >= 0.0 && r.x < w && r.y >= 0.0
            && r.y < h
        {
            out.push(Correspondence { left: l, right: r });
        }
    }
    out
}

/// The fundamental matrix of an ideal row-aligned rig, for which the
/// epipolar constraint reduces to y' = y.
pub fn rectified_fundamental() -> FundamentalMatrix {
    let m = Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
    FundamentalMatrix { m: enforce_rank2_and_norm(m).unwrap() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraIntrinsics;
    use rand::Rng;

    fn rig() -> StereoRig {
        let cam = CameraIntrinsics::new(500.0, 320.0, 240.0, 640, 480).unwrap();
        StereoRig::new(cam, cam, 0.063).unwrap()
    }

    fn random_points(n: usize, seed: u64) -> Vec<Point3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.4..0.4),
                    rng.gen_range(0.8..4.0),
                )
            })
            .collect()
    }

    #[test]
    fn eight_point_noise_free() {
        let corrs = project_correspondences(&rig(), &random_points(50, 42), 0.0);
        assert!(corrs.len() >= 40);
        let f = estimate_fundamental_8point(&corrs).unwrap();
        for c in &corrs {
            let xl = Vector3::new(c.left.x, c.left.y, 1.0);
            let xr = Vector3::new(c.right.x, c.right.y, 1.0);
            assert!((xr.dot(&(f.m * xl))).abs() < 1e-9);
        }
        // rank 2, unit norm
        let sv = f.m.svd(false, false).singular_values;
        assert!(sv[2] < 1e-12);
        assert!((f.m.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eight_point_matches_rectified_form() {
        let corrs = project_correspondences(&rig(), &random_points(60, 5), 0.0);
        let f = estimate_fundamental_8point(&corrs).unwrap();
        let expected = rectified_fundamental();
        let diff = (f.m - expected.m).norm().min((f.m + expected.m).norm());
        assert!(diff < 1e-6, "F not proportional to rectified form: {diff}");
    }

    #[test]
    fn too_few_correspondences() {
        let corrs = project_correspondences(&rig(), &random_points(7, 1), 0.0);
        assert!(matches!(
            estimate_fundamental_8point(&corrs[..corrs.len().min(7)]),
            Err(CalibError::TooFewCorrespondences(_))
        ));
    }

    #[test]
    fn residual_rectified_cases() {
        let f = rectified_fundamental();
        let c = Correspondence {
            left: PixelCoord { x: 100.0, y: 50.0 },
            right: PixelCoord { x: 80.0, y: 50.0 },
        };
        assert!(epipolar_residual(&f, &c).unwrap() < 1e-12);
        let c2 = Correspondence {
            left: PixelCoord { x: 100.0, y: 50.0 },
            right: PixelCoord { x: 80.0, y: 52.0 },
        };
        assert!((epipolar_residual(&f, &c2).unwrap() - 2.0).abs() < 1e-12);

        let zero = FundamentalMatrix { m: Matrix3::zeros() };
        assert!(matches!(epipolar_residual(&zero, &c), Err(CalibError::DegenerateLine)));
    }

    #[test]
    fn ransac_rejects_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut corrs = project_correspondences(&rig(), &random_points(120, 12), 0.0);
        corrs.truncate(70);
        let n_inliers = corrs.len();
        for _ in 0..30 {
            corrs.push(Correspondence {
                left: PixelCoord { x: rng.gen_range(0.0..640.0), y: rng.gen_range(0.0..480.0) },
                right: PixelCoord { x: rng.gen_range(0.0..640.0), y: rng.gen_range(0.0..480.0) },
            });
        }
        let cfg = RansacConfig { seed: 7, ..Default::default() };
        let (_f, mask) = ransac_fundamental(&corrs, &cfg).unwrap();
        let recovered = mask[..n_inliers].iter().filter(|&&m| m).count();
        assert!(recovered >= 68, "recovered only {recovered}/70 true inliers");
    }

    #[test]
    fn ransac_all_inliers() {
        let corrs = project_correspondences(&rig(), &random_points(40, 3), 0.0);
        let cfg = RansacConfig { seed: 1, ..Default::default() };
        let (_, mask) = ransac_fundamental(&corrs, &cfg).unwrap();
        assert!(mask.iter().all(|&m| m));
    }

    #[test]
    fn ransac_consensus_too_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut corrs = project_correspondences(&rig(), &random_points(60, 8), 0.0);
        corrs.truncate(30);
        for _ in 0..30 {
            corrs.push(Correspondence {
                left: PixelCoord { x: rng.gen_range(0.0..640.0), y: rng.gen_range(0.0..480.0) },
                right: PixelCoord { x: rng.gen_range(0.0..640.0), y: rng.gen_range(0.0..480.0) },
            });
        }
        let cfg = RansacConfig { seed: 2, min_inlier_fraction: 0.9, ..Default::default() };
        assert!(matches!(
            ransac_fundamental(&corrs, &cfg),
            Err(CalibError::ConsensusTooSmall { .. })
        ));
    }

    #[test]
    fn ransac_deterministic() {
        let corrs = project_correspondences(&rig(), &random_points(80, 21), 0.0);
        let cfg = RansacConfig { seed: 1234, ..Default::default() };
        let (f1, m1) = ransac_fundamental(&corrs, &cfg).unwrap();
        let (f2, m2) = ransac_fundamental(&corrs, &cfg).unwrap();
        assert_eq!(f1.m, f2.m);
        assert_eq!(m1, m2);
    }

    #[test]
    fn essential_identity_k() {
        let cam = CameraIntrinsics::new(1.0, 0.0, 0.0, 10, 10).unwrap();
        let f = rectified_fundamental();
        let e = essential_from_fundamental(&f, &cam, &cam).unwrap();
        let diff = (e.m / e.m.norm() - f.m).norm().min((e.m / e.m.norm() + f.m).norm());
        assert!(diff < 1e-12);
    }

    #[test]
    fn essential_singular_values() {
        let corrs = project_correspondences(&rig(), &random_points(50, 77), 0.0);
        let f = estimate_fundamental_8point(&corrs).unwrap();
        let r = rig();
        let before = k_matrix(&r.right).transpose() * f.m * k_matrix(&r.left);
        let sv = before.svd(false, false).singular_values;
        assert!((sv[0] - sv[1]).abs() / sv[0] < 1e-6);
        assert!(sv[2] / sv[0] < 1e-9);
        let e = essential_from_fundamental(&f, &r.left, &r.right).unwrap();
        let sv = e.m.svd(false, false).singular_values;
        assert!((sv[0] - sv[1]).abs() < 1e-9 * sv[0]);
        assert!(sv[2] < 1e-9 * sv[0]);
    }

    #[test]
    fn alignment_report() {
        let corrs = project_correspondences(&rig(), &random_points(30, 31), 0.0);
        let rep = check_alignment(&corrs, 1.0).unwrap();
        assert_eq!(rep.mean_abs_dy, 0.0);
        assert_eq!(rep.max_abs_dy, 0.0);
        assert!(rep.pass);

        let off = project_correspondences(&rig(), &random_points(30, 31), 3.0);
        let rep = check_alignment(&off, 1.0).unwrap();
        assert!((rep.max_abs_dy - 3.0).abs() < 1e-12);
        assert!(!rep.pass);

        assert!(matches!(check_alignment(&[], 1.0), Err(CalibError::EmptyInput)));
    }
}
