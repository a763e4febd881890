//! Synthetic ray-cast LiDAR with exact ground truth.
//!
//! Rays are cast through the pixel centers of a [`ProjectionConfig`], so each
//! emitted point projects back to the pixel that produced it. With
//! `densify > 1`, several rays at fixed sub-pixel offsets share a pixel and
//! compete for it, and the generator records which of them lose. That record
//! is the reference for occlusion and re-projection checks.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Matrix4;

use crate::cloud::{ClassId, Point3, PointCloud};
use crate::dataio::{self, LabelMap, LabeledScan, SequenceDir};
use crate::error::{Error, Result};
use crate::geometry::RigidTransform;
use crate::rangeview::{self, PixelCoord, ProjectionConfig};

const HIT_EPS: f64 = 1e-9;

/// SemanticKITTI train ids used by the built-in scenes.
pub mod classes {
    use crate::cloud::ClassId;
    pub const ROAD: ClassId = 9;
    pub const BUILDING: ClassId = 13;
    pub const TERRAIN: ClassId = 17;
    pub const POLE: ClassId = 18;
    pub const TRAFFIC_SIGN: ClassId = 19;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    /// The two remaining axes, in ascending order.
    fn others(self) -> (usize, usize) {
        match self {
            Axis::X => (1, 2),
            Axis::Y => (0, 2),
            Axis::Z => (0, 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// Infinite plane `normal . p = offset`.
    Plane { normal: [f64; 3], offset: f64 },
    /// Rectangle perpendicular to `axis` at `position`; `min`/`max` bound the
    /// other two coordinates in ascending axis order.
    Rect {
        axis: Axis,
        position: f64,
        min: [f64; 2],
        max: [f64; 2],
    },
    /// Lateral surface of a vertical cylinder.
    Cylinder {
        center: [f64; 2],
        radius: f64,
        z_min: f64,
        z_max: f64,
    },
}

impl Shape {
    /// Nearest hit distance along a unit direction, if any.
    pub fn intersect(&self, origin: &[f64; 3], dir: &[f64; 3]) -> Option<f64> {
        match self {
            Shape::Plane { normal, offset } => {
                let denom = dot(normal, dir);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = (offset - dot(normal, origin)) / denom;
                (t > HIT_EPS).then_some(t)
            }
            Shape::Rect {
                axis,
                position,
                min,
                max,
            } => {
                let a = axis.index();
                if dir[a].abs() < 1e-12 {
                    return None;
                }
                let t = (position - origin[a]) / dir[a];
                if t <= HIT_EPS {
                    return None;
                }
                let (u, v) = axis.others();
                let pu = origin[u] + t * dir[u];
                let pv = origin[v] + t * dir[v];
                (pu >= min[0] && pu <= max[0] && pv >= min[1] && pv <= max[1]).then_some(t)
            }
            Shape::Cylinder {
                center,
                radius,
                z_min,
                z_max,
            } => {
                let ox = origin[0] - center[0];
                let oy = origin[1] - center[1];
                let a = dir[0] * dir[0] + dir[1] * dir[1];
                if a < 1e-15 {
                    return None;
                }
                let b = 2.0 * (ox * dir[0] + oy * dir[1]);
                let c = ox * ox + oy * oy - radius * radius;
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)]
                    .into_iter()
                    .filter(|&t| t > HIT_EPS)
                    .find(|&t| {
                        let z = origin[2] + t * dir[2];
                        z >= *z_min && z <= *z_max
                    })
            }
        }
    }

    /// Distance from `p` to the (unbounded) surface carrying this shape.
    pub fn surface_distance(&self, p: &Point3) -> f64 {
        let q = [p.x, p.y, p.z];
        match self {
            Shape::Plane { normal, offset } => {
                let n = dot(normal, normal).sqrt();
                (dot(normal, &q) - offset).abs() / n
            }
            Shape::Rect { axis, position, .. } => (q[axis.index()] - position).abs(),
            Shape::Cylinder { center, radius, .. } => ((q[0] - center[0]).hypot(q[1] - center[1]) - radius).abs(),
        }
    }
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub class: ClassId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub primitives: Vec<Primitive>,
}

impl Scene {
    pub fn new(primitives: Vec<Primitive>) -> Result<Self> {
        if primitives.is_empty() {
            return Err(Error::arg("scene needs at least one primitive"));
        }
        Ok(Self { primitives })
    }

    /// Road plane, a terrain bank at x = 9, and a billboard on two poles
    /// standing a meter in front of the bank.
    pub fn billboard() -> Self {
        use classes::*;
        let mut primitives = vec![
            Primitive {
                shape: Shape::Plane {
                    normal: [0.0, 0.0, 1.0],
                    offset: 0.0,
                },
                class: ROAD,
            },
            Primitive {
                shape: Shape::Rect {
                    axis: Axis::X,
                    position: 9.0,
                    min: [-20.0, 0.0],
                    max: [20.0, 4.0],
                },
                class: TERRAIN,
            },
            Primitive {
                shape: Shape::Rect {
                    axis: Axis::X,
                    position: 8.0,
                    min: [-2.0, 1.2],
                    max: [2.0, 3.2],
                },
                class: TRAFFIC_SIGN,
            },
        ];
        for y in [-1.8, 1.8] {
            primitives.push(Primitive {
                shape: Shape::Cylinder {
                    center: [8.1, y],
                    radius: 0.08,
                    z_min: 0.0,
                    z_max: 1.2,
                },
                class: POLE,
            });
        }
        Self { primitives }
    }

    /// [`Scene::billboard`] inside a closed building ring, so every ray hits.
    pub fn enclosed_billboard(ring_radius: f64) -> Self {
        let mut scene = Self::billboard();
        scene.primitives.push(Primitive {
            shape: Shape::Cylinder {
                center: [0.0, 0.0],
                radius: ring_radius,
                z_min: -1e6,
                z_max: 1e6,
            },
            class: classes::BUILDING,
        });
        scene
    }

    /// First hit along a unit ray: `(distance, primitive index)`.
    pub fn cast(&self, origin: &[f64; 3], dir: &[f64; 3], max_range: f64) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for (i, prim) in self.primitives.iter().enumerate() {
            if let Some(t) = prim.shape.intersect(origin, dir) {
                if t <= max_range && best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, i));
                }
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorModel {
    pub cfg: ProjectionConfig,
    pub max_range: f64,
}

impl SensorModel {
    pub fn new(cfg: ProjectionConfig, max_range: f64) -> Result<Self> {
        cfg.validate()?;
        if !(max_range > 0.0) {
            return Err(Error::arg("max_range must be > 0"));
        }
        Ok(Self { cfg, max_range })
    }
}

/// One ray-cast scan in its sensor frame, ground-truth labels attached.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScan {
    pub cloud: PointCloud,
    /// Pixel whose ray produced each point.
    pub pixels: Vec<PixelCoord>,
    /// Scene primitive each point lies on.
    pub primitive: Vec<usize>,
}

impl SyntheticScan {
    pub fn labels(&self) -> &[ClassId] {
        self.cloud.labels().expect("synthetic scans are labeled")
    }
}

/// Sub-pixel offsets of the `densify` rays sharing a pixel, in pixel units.
pub fn subpixel_offsets(densify: usize) -> Vec<f64> {
    (0..densify).map(|i| (i as f64 + 0.5) / densify as f64 - 0.5).collect()
}

/// One ray per pixel center; see [`raycast_scan_dense`].
pub fn raycast_scan(scene: &Scene, sensor_pose: &RigidTransform, model: &SensorModel) -> Result<SyntheticScan> {
    raycast_scan_dense(scene, sensor_pose, model, 1)
}

/// Casts `densify` rays per pixel from `sensor_pose` (sensor to world).
/// Ray `i` of a pixel is shifted by the same sub-pixel offset in row and
/// column. Output is beam-major: row, then column, then sub-ray; misses are
/// omitted.
pub fn raycast_scan_dense(
    scene: &Scene,
    sensor_pose: &RigidTransform,
    model: &SensorModel,
    densify: usize,
) -> Result<SyntheticScan> {
    if densify == 0 {
        return Err(Error::arg("densify must be at least 1"));
    }
    model.cfg.validate()?;
    let m = sensor_pose.matrix();
    let origin = sensor_pose.translation();
    let offsets = subpixel_offsets(densify);
    let cap = model.cfg.pixel_count() * densify;
    let mut points = Vec::with_capacity(cap);
    let mut labels = Vec::with_capacity(cap);
    let mut pixels = Vec::with_capacity(cap);
    let mut primitive = Vec::with_capacity(cap);
    for row in 0..model.cfg.height {
        for col in 0..model.cfg.width {
            for &off in &offsets {
                let (yaw, pitch) = model.cfg.ray_angles(row as f64 + 0.5 + off, col as f64 + 0.5 + off);
                let d = [pitch.cos() * yaw.cos(), pitch.cos() * yaw.sin(), pitch.sin()];
                let world_dir = [
                    m[(0, 0)] * d[0] + m[(0, 1)] * d[1] + m[(0, 2)] * d[2],
                    m[(1, 0)] * d[0] + m[(1, 1)] * d[1] + m[(1, 2)] * d[2],
                    m[(2, 0)] * d[0] + m[(2, 1)] * d[1] + m[(2, 2)] * d[2],
                ];
                if let Some((t, prim)) = scene.cast(&origin, &world_dir, model.max_range) {
                    points.push(Point3::new(t * d[0], t * d[1], t * d[2]));
                    labels.push(scene.primitives[prim].class);
                    pixels.push(PixelCoord {
                        row: row as u32,
                        col: col as u32,
                    });
                    primitive.push(prim);
                }
            }
        }
    }
    let intensity = labels.iter().map(|&l| l as f32 / 20.0).collect();
    let cloud = PointCloud::new(points, intensity)?.with_labels(labels)?;
    Ok(SyntheticScan {
        cloud,
        pixels,
        primitive,
    })
}

/// A point that loses its pixel to a nearer one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OccludedPoint {
    pub index: usize,
    pub true_label: ClassId,
}

/// Occluded points of one scan, from the generating pixels: per pixel the
/// nearest point (lowest index on ties) survives.
pub fn occlusion_oracle(scan: &SyntheticScan) -> Vec<OccludedPoint> {
    let labels = scan.labels();
    let mut out = Vec::new();
    let mut start = 0;
    // Points of one pixel are contiguous by construction.
    while start < scan.pixels.len() {
        let mut end = start + 1;
        while end < scan.pixels.len() && scan.pixels[end] == scan.pixels[start] {
            end += 1;
        }
        let ranges: Vec<f64> = (start..end).map(|i| scan.cloud.points[i].norm()).collect();
        let mut winner = 0;
        for (k, r) in ranges.iter().enumerate() {
            if *r < ranges[winner] {
                winner = k;
            }
        }
        for k in 0..ranges.len() {
            if k != winner {
                out.push(OccludedPoint {
                    index: start + k,
                    true_label: labels[start + k],
                });
            }
        }
        start = end;
    }
    out
}

/// Straight drive along +y at `height`, with a constant yaw rate.
pub fn drive_by_trajectory(frames: usize, start_y: f64, step: f64, yaw_rate: f64, height: f64) -> Vec<RigidTransform> {
    (0..frames)
        .map(|k| RigidTransform::from_yaw_translation(yaw_rate * k as f64, 0.0, start_y + step * k as f64, height))
        .collect()
}

/// Sensor mount height of [`billboard_drive`]. It leaves the road 1e-4 m
/// under a 0.1 m voxel boundary in sensor coordinates, so road votes and the
/// base of the terrain bank fall into different cells.
pub const DRIVE_HEIGHT: f64 = 1.7001;

/// Lateral pass along the billboard scene, 0.5 m per frame, centered on the
/// sign.
pub fn billboard_drive(frames: usize, cfg: ProjectionConfig, densify: usize) -> Result<SyntheticSequence> {
    let model = SensorModel::new(cfg, 80.0)?;
    let trajectory = drive_by_trajectory(frames, -0.25 * frames as f64, 0.5, 0.0, DRIVE_HEIGHT);
    generate_sequence(&Scene::billboard(), &trajectory, &model, densify)
}

/// KITTI-style LiDAR-to-camera extrinsic: `cam = (-y, -z, x)` plus a small offset.
pub fn default_extrinsic() -> Matrix4<f64> {
    Matrix4::new(
        0.0, -1.0, 0.0, 0.0, //
        0.0, 0.0, -1.0, -0.08, //
        1.0, 0.0, 0.0, -0.27, //
        0.0, 0.0, 0.0, 1.0,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSequence {
    pub scans: Vec<SyntheticScan>,
    /// Sensor-to-world pose of each frame.
    pub poses: Vec<RigidTransform>,
    pub occluded: Vec<Vec<OccludedPoint>>,
    pub cfg: ProjectionConfig,
}

pub fn generate_sequence(
    scene: &Scene,
    trajectory: &[RigidTransform],
    model: &SensorModel,
    densify: usize,
) -> Result<SyntheticSequence> {
    if trajectory.is_empty() {
        return Err(Error::arg("trajectory is empty"));
    }
    let scans = trajectory
        .iter()
        .map(|pose| raycast_scan_dense(scene, pose, model, densify))
        .collect::<Result<Vec<_>>>()?;
    let occluded = scans.iter().map(occlusion_oracle).collect();
    Ok(SyntheticSequence {
        scans,
        poses: trajectory.to_vec(),
        occluded,
        cfg: model.cfg,
    })
}

/// Ground truth after a lossless 2D prediction is re-projected to 3D: every
/// point takes the true label of its pixel's winner.
pub fn reprojected_ground_truth(scan: &SyntheticScan, cfg: &ProjectionConfig, ignore: ClassId) -> Result<Vec<ClassId>> {
    let image = rangeview::project(&scan.cloud, cfg)?;
    let label_image = image.winner_labels(scan.labels(), ignore)?;
    rangeview::unproject_labels(&label_image, &image, ignore)
}

impl SyntheticSequence {
    /// Writes the SemanticKITTI layout under `root/sequences/<sequence>` plus
    /// `oracle/FFFFFF.txt` files of `point_index true_label` lines (raw ids).
    /// With `predictions`, also writes many-to-one corrupted labels to
    /// `predictions/`.
    pub fn write(&self, root: &Path, sequence: &str, map: &LabelMap, predictions: bool) -> Result<SequenceDir> {
        let seq = SequenceDir::new(root, sequence);
        let tr = default_extrinsic();
        dataio::write_calib(seq.calib(), &tr)?;
        dataio::write_poses(seq.poses(), &self.poses, &tr)?;
        let oracle_dir = seq.dir.join("oracle");
        fs::create_dir_all(&oracle_dir).map_err(|e| Error::io(&oracle_dir, e))?;
        for (frame, (scan, occ)) in self.scans.iter().zip(&self.occluded).enumerate() {
            dataio::write_scan(seq.scan(frame), &LabeledScan::from_cloud(frame, &scan.cloud))?;
            dataio::write_labels(seq.labels(frame), scan.labels(), map)?;
            let mut text = String::new();
            for o in occ {
                let raw = map
                    .to_raw(o.true_label)
                    .ok_or_else(|| Error::arg(format!("class {} not in label map", o.true_label)))?;
                writeln!(text, "{} {raw}", o.index).unwrap();
            }
            let path = oracle_dir.join(format!("{frame:06}.txt"));
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            if predictions {
                let pred = reprojected_ground_truth(scan, &self.cfg, 0)?;
                dataio::write_labels(seq.labels_in("predictions", frame), &pred, map)?;
            }
        }
        Ok(seq)
    }
}

/// Reads an oracle file back as `(point_index, raw_label)` pairs.
pub fn read_oracle(path: impl AsRef<Path>) -> Result<Vec<(usize, u16)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            let mut it = l.split_whitespace();
            let parsed = (|| Some((it.next()?.parse().ok()?, it.next()?.parse().ok()?)))();
            parsed.ok_or_else(|| Error::FormatAt {
                path: path.to_path_buf(),
                line: n + 1,
                message: format!("expected `point_index true_label`, got `{l}`"),
            })
        })
        .collect()
}
