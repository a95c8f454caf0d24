//! Colored 3D point clouds: reprojection from disparity, cluster/range
//! filtering, planar pose registration, merging and ASCII PLY I/O.

use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, Read};
use std::path::Path;

use thiserror::Error;

use crate::geometry::{reproject_pixel, Point3, Pose2D, ReprojectionMatrix};
use crate::image::{atomic_write, RgbImage};
use crate::matcher::DisparityMap;

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("disparity map {0}x{1} does not match color image {2}x{3}")]
    SizeMismatch(u32, u32, u32, u32),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad PLY file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColoredPoint {
    pub position: Point3,
    pub color: [u8; 3],
}

/// A point cloud together with the odometric pose it was captured at.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<ColoredPoint>,
    pub source_pose: Pose2D,
}

impl PointCloud {
    pub fn empty() -> Self {
        Self { points: Vec::new(), source_pose: Pose2D::identity() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CloudFilterParams {
    pub min_cluster: usize,
    pub cluster_radius: f64,
    pub max_range: f64,
}

impl Default for CloudFilterParams {
    fn default() -> Self {
        Self { min_cluster: 30, cluster_radius: 0.05, max_range: 5.0 }
    }
}

/// One point per valid disparity pixel, reprojected through Q and
/// colored from the RGB image. Points stay in the camera frame.
pub fn cloud_from_disparity(
    dm: &DisparityMap,
    rgb: &RgbImage,
    q: &ReprojectionMatrix,
) -> Result<PointCloud, CloudError> {
    if dm.width() != rgb.width() || dm.height() != rgb.height() {
        return Err(CloudError::SizeMismatch(
            dm.width(),
            dm.height(),
            rgb.width(),
            rgb.height(),
        ));
    }
    let mut points = Vec::new();
    for y in 0..dm.height() {
        for x in 0..dm.width() {
            if let Some(d) = dm.get(x, y) {
                if let Ok(p) = reproject_pixel(q, x as f64, y as f64, d) {
                    points.push(ColoredPoint { position: p, color: rgb.get(x, y) });
                }
            }
        }
    }
    Ok(PointCloud { points, source_pose: Pose2D::identity() })
}

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n as u32).collect() }
    }

    fn find(&mut self, i: u32) -> u32 {
        let mut root = i;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        let mut cur = i;
        while self.parent[cur as usize] != root {
            let next = self.parent[cur as usize];
            self.parent[cur as usize] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[rb as usize] = ra;
        }
    }
}

/// Range filter followed by single-linkage clustering within
/// `cluster_radius`; clusters smaller than `min_cluster` are dropped.
///
/// Linkage uses a uniform grid with cell side radius/sqrt(3), so points
/// sharing a cell are always within the radius and can be merged
/// without a distance test; only nearby-cell pairs need explicit
/// checks. The result equals brute-force single linkage.
pub fn filter_cloud(c: &PointCloud, p: &CloudFilterParams) -> PointCloud {
    let kept: Vec<&ColoredPoint> = c
        .points
        .iter()
        .filter(|pt| {
            let q = pt.position;
            (q.x * q.x + q.y * q.y + q.z * q.z).sqrt() <= p.max_range
        })
        .collect();
    if kept.is_empty() {
        return PointCloud { points: Vec::new(), source_pose: c.source_pose };
    }

    let cell = p.cluster_radius / 3f64.sqrt();
    let key = |q: &Point3| {
        (
            (q.x / cell).floor() as i64,
            (q.y / cell).floor() as i64,
            (q.z / cell).floor() as i64,
        )
    };
    let mut grid: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
    for (i, pt) in kept.iter().enumerate() {
        grid.entry(key(&pt.position)).or_default().push(i as u32);
    }

    let mut uf = UnionFind::new(kept.len());
    // same-cell points are within the radius by construction
    for ids in grid.values() {
        for win in ids.windows(2) {
            uf.union(win[0], win[1]);
        }
    }
    // cells whose minimum separation can still be within the radius
    let reach = (p.cluster_radius / cell).ceil() as i64;
    let r2 = p.cluster_radius * p.cluster_radius;
    let cells: Vec<(i64, i64, i64)> = grid.keys().copied().collect();
    for &(cx, cy, cz) in &cells {
        let a = &grid[&(cx, cy, cz)];
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    if (dx, dy, dz) <= (0, 0, 0) {
                        continue; // each unordered cell pair once
                    }
                    let Some(b) = grid.get(&(cx + dx, cy + dy, cz + dz)) else {
                        continue;
                    };
                    'pair: for &ia in a {
                        for &ib in b {
                            if uf.find(ia) == uf.find(ib) {
                                break 'pair;
                            }
                            let pa = kept[ia as usize].position;
                            let pb = kept[ib as usize].position;
                            let (ex, ey, ez) = (pa.x - pb.x, pa.y - pb.y, pa.z - pb.z);
                            if ex * ex + ey * ey + ez * ez <= r2 {
                                uf.union(ia, ib);
                            }
                        }
                    }
                }
            }
        }
    }

    let mut sizes: HashMap<u32, usize> = HashMap::new();
    for i in 0..kept.len() as u32 {
        *sizes.entry(uf.find(i)).or_insert(0) += 1;
    }
    let points = kept
        .iter()
        .enumerate()
        .filter(|(i, _)| sizes[&uf.find(*i as u32)] >= p.min_cluster)
        .map(|(_, pt)| **pt)
        .collect();
    PointCloud { points, source_pose: c.source_pose }
}

/// Convert camera-frame points (x right, y down, z forward) to a
/// ground-aligned frame (x forward, y left, z up), adding the camera
/// mounting height to the vertical coordinate.
pub fn camera_to_ground(c: &PointCloud, camera_height: f64) -> PointCloud {
    let points = c
        .points
        .iter()
        .map(|pt| {
            let p = pt.position;
            ColoredPoint {
                position: Point3::new(p.z, -p.x, camera_height - p.y),
                color: pt.color,
            }
        })
        .collect();
    PointCloud { points, source_pose: c.source_pose }
}

/// Planar rigid motion: rotate the ground plane by `pose.theta`, then
/// translate by `(pose.x, pose.y)`. The vertical coordinate is
/// unchanged.
pub fn transform_cloud(c: &PointCloud, pose: &Pose2D) -> PointCloud {
    let (s, co) = pose.theta.sin_cos();
    let points = c
        .points
        .iter()
        .map(|pt| {
            let p = pt.position;
            ColoredPoint {
                position: Point3::new(
                    pose.x + co * p.x - s * p.y,
                    pose.y + s * p.x + co * p.y,
                    p.z,
                ),
                color: pt.color,
            }
        })
        .collect();
    PointCloud { points, source_pose: *pose }
}

/// Concatenate world-frame clouds in order.
pub fn merge_clouds(clouds: &[PointCloud]) -> PointCloud {
    let mut out = PointCloud::empty();
    for c in clouds {
        out.points.extend_from_slice(&c.points);
    }
    out
}

/// ASCII PLY encoding. Coordinates are written as shortest
/// round-tripping decimals of their f32 value, so write/read is exact
/// at f32 precision.
pub fn encode_ply(c: &PointCloud) -> Vec<u8> {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    s.push_str(&format!("element vertex {}\n", c.points.len()));
    s.push_str("property float x\nproperty float y\nproperty float z\n");
    s.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    s.push_str("end_header\n");
    for pt in &c.points {
        let p = pt.position;
        s.push_str(&format!(
            "{} {} {} {} {} {}\n",
            p.x as f32, p.y as f32, p.z as f32, pt.color[0], pt.color[1], pt.color[2]
        ));
    }
    s.into_bytes()
}

pub fn write_ply(path: &Path, c: &PointCloud) -> Result<(), CloudError> {
    atomic_write(path, &encode_ply(c))?;
    Ok(())
}

pub fn read_ply<R: Read>(reader: R) -> Result<PointCloud, CloudError> {
    let mut lines = BufReader::new(reader).lines();
    let mut next = || -> Result<String, CloudError> {
        lines
            .next()
            .ok_or_else(|| CloudError::Format("unexpected end of file".into()))?
            .map_err(CloudError::Io)
    };
    if next()?.trim() != "ply" {
        return Err(CloudError::Format("missing ply magic".into()));
    }
    let mut count: Option<usize> = None;
    loop {
        let line = next()?;
        let line = line.trim();
        if line == "end_header" {
            break;
        }
        if let Some(rest) = line.strip_prefix("element vertex ") {
            count = Some(
                rest.trim()
                    .parse()
                    .map_err(|_| CloudError::Format(format!("bad vertex count {rest}")))?,
            );
        }
    }
    let count = count.ok_or_else(|| CloudError::Format("missing element vertex".into()))?;
    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let line = next()?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(CloudError::Format(format!("bad vertex line: {line}")));
        }
        let coord = |s: &str| -> Result<f64, CloudError> {
            s.parse::<f32>()
                .map(|v| v as f64)
                .map_err(|_| CloudError::Format(format!("bad coordinate {s}")))
        };
        let chan = |s: &str| -> Result<u8, CloudError> {
            s.parse()
                .map_err(|_| CloudError::Format(format!("bad color channel {s}")))
        };
        points.push(ColoredPoint {
            position: Point3::new(coord(fields[0])?, coord(fields[1])?, coord(fields[2])?),
            color: [chan(fields[3])?, chan(fields[4])?, chan(fields[5])?],
        });
    }
    Ok(PointCloud { points, source_pose: Pose2D::identity() })
}

pub fn load_ply(path: &Path) -> Result<PointCloud, CloudError> {
    read_ply(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_reprojection_matrix, CameraIntrinsics, StereoRig};
    use crate::matcher::{DisparityMap, DISP_SCALE, INVALID};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rig() -> StereoRig {
        let cam = CameraIntrinsics::new(500.0, 320.0, 240.0, 640, 480).unwrap();
        StereoRig::new(cam, cam, 0.063).unwrap()
    }

    fn gray_point(x: f64, y: f64, z: f64) -> ColoredPoint {
        ColoredPoint { position: Point3::new(x, y, z), color: [128, 128, 128] }
    }

    #[test]
    fn principal_point_reprojects_to_axis() {
        let q = build_reprojection_matrix(&rig());
        let mut dm = DisparityMap::new_invalid(640, 480);
        dm.set_fixed(320, 240, (31.5 * DISP_SCALE) as u16); // Z = 1 m
        let mut rgb = RgbImage::new(640, 480);
        rgb.set(320, 240, [9, 8, 7]);
        let c = cloud_from_disparity(&dm, &rgb, &q).unwrap();
        assert_eq!(c.len(), 1);
        let p = c.points[0].position;
        assert!(p.x.abs() < 1e-9 && p.y.abs() < 1e-9 && (p.z - 1.0).abs() < 1e-9);
        assert_eq!(c.points[0].color, [9, 8, 7]);
    }

    #[test]
    fn point_count_conservation() {
        let q = build_reprojection_matrix(&rig());
        let mut dm = DisparityMap::new_invalid(64, 48);
        let mut n = 0;
        for y in (0..48).step_by(5) {
            for x in (0..64).step_by(7) {
                dm.set_fixed(x, y, 160); // d = 10 px
                n += 1;
            }
        }
        let rgb = RgbImage::new(64, 48);
        assert_eq!(cloud_from_disparity(&dm, &rgb, &q).unwrap().len(), n);

        let empty = DisparityMap::new_invalid(64, 48);
        assert!(cloud_from_disparity(&empty, &rgb, &q).unwrap().is_empty());
        assert_eq!(empty.get_fixed(0, 0), INVALID);
    }

    #[test]
    fn size_mismatch_rejected() {
        let q = build_reprojection_matrix(&rig());
        let dm = DisparityMap::new_invalid(64, 48);
        let rgb = RgbImage::new(32, 32);
        assert!(matches!(
            cloud_from_disparity(&dm, &rgb, &q),
            Err(CloudError::SizeMismatch(..))
        ));
    }

    /// Brute-force single-linkage oracle: repeatedly merge any two
    /// clusters containing a pair within the radius.
    fn brute_force_clusters(points: &[ColoredPoint], radius: f64) -> Vec<usize> {
        let n = points.len();
        let mut label: Vec<usize> = (0..n).collect();
        let mut changed = true;
        while changed {
            changed = false;
            for i in 0..n {
                for j in (i + 1)..n {
                    if points[i].position.distance(&points[j].position) <= radius
                        && label[i] != label[j]
                    {
                        let (a, b) = (label[i].min(label[j]), label[i].max(label[j]));
                        for l in label.iter_mut() {
                            if *l == b {
                                *l = a;
                            }
                        }
                        changed = true;
                    }
                }
            }
        }
        label
    }

    #[test]
    fn filter_drops_outliers_and_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut points = Vec::new();
        for _ in 0..200 {
            points.push(gray_point(
                1.0 + rng.gen_range(-0.08..0.08),
                rng.gen_range(-0.08..0.08),
                2.0 + rng.gen_range(-0.08..0.08),
            ));
        }
        points.push(gray_point(3.0, 0.0, 1.0));
        points.push(gray_point(-2.5, 1.0, 3.0));
        points.push(gray_point(0.0, 2.0, 4.5));
        let cloud = PointCloud { points: points.clone(), source_pose: Pose2D::identity() };
        let p = CloudFilterParams { min_cluster: 10, cluster_radius: 0.05, max_range: 10.0 };
        let out = filter_cloud(&cloud, &p);

        // oracle: count surviving points from brute-force labels
        let labels = brute_force_clusters(&points, p.cluster_radius);
        let mut counts = HashMap::new();
        for &l in &labels {
            *counts.entry(l).or_insert(0usize) += 1;
        }
        let expected: usize = labels.iter().filter(|&&l| counts[&l] >= 10).count();
        assert_eq!(out.len(), expected);
        assert_eq!(out.len(), 200);
    }

    #[test]
    fn filter_range_and_idempotence() {
        let cloud = PointCloud {
            points: vec![gray_point(0.0, 0.0, 6.0)],
            source_pose: Pose2D::identity(),
        };
        let p = CloudFilterParams { min_cluster: 1, cluster_radius: 0.05, max_range: 5.0 };
        assert!(filter_cloud(&cloud, &p).is_empty());
        assert!(filter_cloud(&PointCloud::empty(), &p).is_empty());

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let points: Vec<ColoredPoint> = (0..100)
            .map(|_| {
                gray_point(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(0.5..4.0),
                )
            })
            .collect();
        let cloud = PointCloud { points, source_pose: Pose2D::identity() };
        let p = CloudFilterParams { min_cluster: 3, cluster_radius: 0.3, max_range: 3.0 };
        let once = filter_cloud(&cloud, &p);
        let twice = filter_cloud(&once, &p);
        assert_eq!(once, twice);
    }

    #[test]
    fn transform_cases() {
        let cloud = PointCloud {
            points: vec![gray_point(1.0, 2.0, 0.5), gray_point(-0.3, 0.4, 1.1)],
            source_pose: Pose2D::identity(),
        };
        let same = transform_cloud(&cloud, &Pose2D::identity());
        assert_eq!(same.points, cloud.points);

        let shifted = transform_cloud(&cloud, &Pose2D::new(1.0, 2.0, 0.0));
        assert_eq!(shifted.points[0].position, Point3::new(2.0, 4.0, 0.5));

        let pi = std::f64::consts::PI;
        let flipped = transform_cloud(&cloud, &Pose2D::new(0.0, 0.0, pi));
        let p = flipped.points[0].position;
        assert!((p.x + 1.0).abs() < 1e-12 && (p.y + 2.0).abs() < 1e-12);
        assert_eq!(p.z, 0.5);
    }

    #[test]
    fn transform_preserves_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let points: Vec<ColoredPoint> = (0..40)
            .map(|_| {
                gray_point(
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(0.0..2.0),
                )
            })
            .collect();
        let cloud = PointCloud { points, source_pose: Pose2D::identity() };
        let moved = transform_cloud(&cloud, &Pose2D::new(0.7, -1.3, 2.1));
        for i in 0..cloud.len() {
            for j in (i + 1)..cloud.len() {
                let before = cloud.points[i].position.distance(&cloud.points[j].position);
                let after = moved.points[i].position.distance(&moved.points[j].position);
                assert!((before - after).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn merge_counts() {
        assert!(merge_clouds(&[]).is_empty());
        let a = PointCloud {
            points: (0..100).map(|i| gray_point(i as f64, 0.0, 0.0)).collect(),
            source_pose: Pose2D::identity(),
        };
        let b = PointCloud {
            points: (0..50).map(|i| gray_point(0.0, i as f64, 0.0)).collect(),
            source_pose: Pose2D::identity(),
        };
        assert_eq!(merge_clouds(&[a.clone()]).len(), 100);
        assert_eq!(merge_clouds(&[a, b]).len(), 150);
    }

    #[test]
    fn ply_round_trip() {
        let cloud = PointCloud {
            points: vec![
                ColoredPoint { position: Point3::new(0.123456, -2.5, 3.75), color: [1, 2, 3] },
                ColoredPoint {
                    position: Point3::new(-0.001, 100.25, 0.0),
                    color: [255, 0, 128],
                },
            ],
            source_pose: Pose2D::identity(),
        };
        let bytes = encode_ply(&cloud);
        let back = read_ply(&bytes[..]).unwrap();
        assert_eq!(back.len(), 2);
        for (orig, got) in cloud.points.iter().zip(back.points.iter()) {
            // exact at f32 precision
            assert_eq!(orig.position.x as f32, got.position.x as f32);
            assert_eq!(got.position.x, (orig.position.x as f32) as f64);
            assert_eq!(orig.color, got.color);
        }
        // second round trip is byte identical
        assert_eq!(encode_ply(&back), bytes);
    }

    #[test]
    fn ply_header_shape() {
        let text = String::from_utf8(encode_ply(&PointCloud::empty())).unwrap();
        assert!(text.starts_with("ply\nformat ascii 1.0\nelement vertex 0\n"));
        assert!(text.contains("property float x"));
        assert!(text.contains("property uchar red"));
        assert!(text.contains("end_header\n"));
    }
}
