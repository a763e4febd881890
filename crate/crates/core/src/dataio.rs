//! SemanticKITTI-format I/O: `.bin` scans, `.label` files, `poses.txt` and
//! `calib.txt`, plus the raw-to-train label remapping.
//!
//! Layout: `sequences/NN/velodyne/FFFFFF.bin`, `sequences/NN/labels/FFFFFF.label`,
//! `sequences/NN/poses.txt`, `sequences/NN/calib.txt`. Binary data is always
//! little-endian.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::cloud::{ClassId, Point3, PointCloud};
use crate::error::{Error, Result};
use crate::geometry::RigidTransform;

const KITTI_MAP: &str = include_str!("../config/semantic-kitti.txt");
const POSS_MAP: &str = include_str!("../config/semantic-poss.txt");

const KITTI_NAMES: [&str; 20] = [
    "unlabeled",
    "car",
    "bicycle",
    "motorcycle",
    "truck",
    "other-vehicle",
    "person",
    "bicyclist",
    "motorcyclist",
    "road",
    "parking",
    "sidewalk",
    "other-ground",
    "building",
    "fence",
    "vegetation",
    "trunk",
    "terrain",
    "pole",
    "traffic-sign",
];

const POSS_NAMES: [&str; 14] = [
    "unlabeled",
    "person",
    "rider",
    "car",
    "trunk",
    "plants",
    "traffic-sign",
    "pole",
    "trashcan",
    "building",
    "cone/stone",
    "fence",
    "bike",
    "ground",
];

/// Shipped dataset configurations. Train id 0 is the ignore class in both.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dataset {
    SemanticKitti,
    SemanticPoss,
}

impl Dataset {
    pub fn label_map(&self) -> LabelMap {
        let src = match self {
            Dataset::SemanticKitti => KITTI_MAP,
            Dataset::SemanticPoss => POSS_MAP,
        };
        LabelMap::parse(src, Path::new("<builtin>")).expect("shipped label map parses")
    }

    /// Class names indexed by train id, ignore class first.
    pub fn class_names(&self) -> Vec<String> {
        let names: &[&str] = match self {
            Dataset::SemanticKitti => &KITTI_NAMES,
            Dataset::SemanticPoss => &POSS_NAMES,
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    /// Matrix size including the ignore class.
    pub fn num_classes(&self) -> usize {
        match self {
            Dataset::SemanticKitti => KITTI_NAMES.len(),
            Dataset::SemanticPoss => POSS_NAMES.len(),
        }
    }

    pub fn ignore(&self) -> ClassId {
        0
    }
}

/// Raw 16-bit label id <-> train id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    raw_to_train: BTreeMap<u16, ClassId>,
    train_to_raw: BTreeMap<ClassId, u16>,
}

impl LabelMap {
    /// Parses `raw train` pairs, one per line; `#` starts a comment. The first
    /// raw id listed for a train id becomes its output id.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut raw_to_train = BTreeMap::new();
        let mut train_to_raw = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::FormatAt {
                path: origin.to_path_buf(),
                line: n + 1,
                message,
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [raw, train] = fields[..] else {
                return Err(err(format!("expected `raw train`, got `{line}`")));
            };
            let raw: u16 = raw.parse().map_err(|_| err(format!("bad raw id `{raw}`")))?;
            let train: ClassId = train.parse().map_err(|_| err(format!("bad train id `{train}`")))?;
            if raw_to_train.insert(raw, train).is_some_and(|prev| prev != train) {
                return Err(err(format!("raw id {raw} mapped twice")));
            }
            train_to_raw.entry(train).or_insert(raw);
        }
        if raw_to_train.is_empty() {
            return Err(Error::Format {
                path: origin.to_path_buf(),
                message: "label map is empty".into(),
            });
        }
        Ok(Self {
            raw_to_train,
            train_to_raw,
        })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_train(&self, raw: u16) -> Option<ClassId> {
        self.raw_to_train.get(&raw).copied()
    }

    pub fn to_raw(&self, train: ClassId) -> Option<u16> {
        self.train_to_raw.get(&train).copied()
    }

    /// Largest train id plus one.
    pub fn num_classes(&self) -> usize {
        self.train_to_raw.keys().next_back().map_or(0, |&k| k as usize + 1)
    }
}

/// A scan as stored on disk: `(x, y, z, intensity)` float32 records.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledScan {
    pub frame_id: usize,
    pub points: Vec<[f32; 4]>,
    pub labels: Option<Vec<ClassId>>,
}

impl LabeledScan {
    /// Promotes coordinates to f64.
    pub fn to_cloud(&self) -> Result<PointCloud> {
        let points = self
            .points
            .iter()
            .map(|p| Point3::new(p[0] as f64, p[1] as f64, p[2] as f64))
            .collect();
        let intensity = self.points.iter().map(|p| p[3]).collect();
        let cloud = PointCloud::new(points, intensity)?;
        match &self.labels {
            Some(l) => cloud.with_labels(l.clone()),
            None => Ok(cloud),
        }
    }

    /// Narrows coordinates to f32.
    pub fn from_cloud(frame_id: usize, cloud: &PointCloud) -> Self {
        Self {
            frame_id,
            points: cloud
                .points
                .iter()
                .zip(&cloud.intensity)
                .map(|(p, &i)| [p.x as f32, p.y as f32, p.z as f32, i])
                .collect(),
            labels: cloud.labels.clone(),
        }
    }
}

fn read_bytes(path: &Path, record: usize) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % record != 0 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("size {} is not a multiple of the {record}-byte record", bytes.len()),
        });
    }
    Ok(bytes)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a `.bin` scan of little-endian `f32` quadruples. Labels are left empty.
pub fn read_scan(path: impl AsRef<Path>) -> Result<LabeledScan> {
    let bytes = read_bytes(path.as_ref(), 16)?;
    let points = bytes
        .chunks_exact(16)
        .map(|c| std::array::from_fn(|k| f32::from_le_bytes(c[k * 4..k * 4 + 4].try_into().unwrap())))
        .collect();
    Ok(LabeledScan {
        frame_id: 0,
        points,
        labels: None,
    })
}

pub fn write_scan(path: impl AsRef<Path>, scan: &LabeledScan) -> Result<()> {
    let mut buf = Vec::with_capacity(scan.points.len() * 16);
    for p in &scan.points {
        for v in p {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_bytes(path.as_ref(), &buf)
}

/// Raw `u32` label words (semantic id in the low 16 bits, instance above).
pub fn read_raw_labels(path: impl AsRef<Path>) -> Result<Vec<u32>> {
    let bytes = read_bytes(path.as_ref(), 4)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn write_raw_labels(path: impl AsRef<Path>, words: &[u32]) -> Result<()> {
    let buf: Vec<u8> = words.iter().flat_map(|w| w.to_le_bytes()).collect();
    write_bytes(path.as_ref(), &buf)
}

/// Reads a `.label` file and maps each semantic id to its train id.
pub fn read_labels(path: impl AsRef<Path>, map: &LabelMap) -> Result<Vec<ClassId>> {
    let path = path.as_ref();
    read_raw_labels(path)?
        .into_iter()
        .map(|w| {
            let raw = (w & 0xFFFF) as u16;
            map.to_train(raw).ok_or_else(|| Error::Format {
                path: path.to_path_buf(),
                message: format!("raw label id {raw} is not in the label map"),
            })
        })
        .collect()
}

/// Writes train ids as raw semantic ids with zero instance bits.
pub fn write_labels(path: impl AsRef<Path>, labels: &[ClassId], map: &LabelMap) -> Result<()> {
    let words = labels
        .iter()
        .map(|&l| {
            map.to_raw(l)
                .map(u32::from)
                .ok_or_else(|| Error::arg(format!("train id {l} has no raw id in the label map")))
        })
        .collect::<Result<Vec<u32>>>()?;
    write_raw_labels(path, &words)
}

fn parse_reals(path: &Path, line_no: usize, text: &str) -> Result<[f64; 12]> {
    let err = |message: String| Error::FormatAt {
        path: path.to_path_buf(),
        line: line_no,
        message,
    };
    let vals = text
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| err(format!("bad number `{t}`"))))
        .collect::<Result<Vec<f64>>>()?;
    vals.try_into()
        .map_err(|v: Vec<f64>| err(format!("expected 12 values, found {}", v.len())))
}

fn homogeneous(rows: &[f64; 12]) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    for r in 0..3 {
        for c in 0..4 {
            m[(r, c)] = rows[r * 4 + c];
        }
    }
    m
}

/// Inverse of an affine 4x4 with an exact `[0, 0, 0, 1]` last row.
fn affine_inverse(m: &Matrix4<f64>) -> Option<Matrix4<f64>> {
    let a: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
    let a_inv = a.try_inverse()?;
    let t = -(a_inv * Vector3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]));
    let mut out = Matrix4::identity();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&a_inv);
    out[(0, 3)] = t.x;
    out[(1, 3)] = t.y;
    out[(2, 3)] = t.z;
    Some(out)
}

/// LiDAR-to-camera extrinsic `Tr` from a KITTI `calib.txt`.
pub fn read_calib(path: impl AsRef<Path>) -> Result<Matrix4<f64>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    for (n, line) in text.lines().enumerate() {
        if let Some(rest) = line.trim_start().strip_prefix("Tr:") {
            return Ok(homogeneous(&parse_reals(path, n + 1, rest)?));
        }
    }
    Err(Error::Format {
        path: path.to_path_buf(),
        message: "no `Tr:` line".into(),
    })
}

/// Reads camera-frame poses and converts them to the LiDAR frame as
/// `Tr^-1 * pose * Tr`.
pub fn read_poses(poses_path: impl AsRef<Path>, calib_path: impl AsRef<Path>) -> Result<Vec<RigidTransform>> {
    let calib_path = calib_path.as_ref();
    let tr = read_calib(calib_path)?;
    let tr_inv = affine_inverse(&tr).ok_or_else(|| Error::Format {
        path: calib_path.to_path_buf(),
        message: "Tr is singular".into(),
    })?;
    let path = poses_path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cam = homogeneous(&parse_reals(path, n + 1, line)?);
        let mut lidar = tr_inv * cam * tr;
        lidar
            .fixed_view_mut::<1, 4>(3, 0)
            .copy_from(&nalgebra::RowVector4::new(0.0, 0.0, 0.0, 1.0));
        out.push(RigidTransform::from_matrix(lidar).map_err(|e| Error::FormatAt {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn format_row(vals: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in vals.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        // `{:e}` prints the shortest representation that parses back exactly.
        write!(s, "{v:e}").unwrap();
    }
    s
}

fn rows_of(m: &Matrix4<f64>) -> [f64; 12] {
    std::array::from_fn(|k| m[(k / 4, k % 4)])
}

/// Writes LiDAR-frame poses as camera-frame KITTI pose lines, `Tr * pose * Tr^-1`.
pub fn write_poses(path: impl AsRef<Path>, poses: &[RigidTransform], tr: &Matrix4<f64>) -> Result<()> {
    let path = path.as_ref();
    let tr_inv = affine_inverse(tr).ok_or_else(|| Error::arg("Tr is singular"))?;
    let mut s = String::new();
    for p in poses {
        let cam = tr * p.matrix() * tr_inv;
        s.push_str(&format_row(&rows_of(&cam)));
        s.push('\n');
    }
    write_bytes(path, s.as_bytes())
}

pub fn write_calib(path: impl AsRef<Path>, tr: &Matrix4<f64>) -> Result<()> {
    let ident = rows_of(&Matrix4::identity());
    let mut s = String::new();
    for p in ["P0", "P1", "P2", "P3"] {
        writeln!(s, "{p}: {}", format_row(&ident)).unwrap();
    }
    writeln!(s, "Tr: {}", format_row(&rows_of(tr))).unwrap();
    write_bytes(path.as_ref(), s.as_bytes())
}

/// Paths of one sequence in the SemanticKITTI layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceDir {
    pub dir: PathBuf,
}

impl SequenceDir {
    pub fn new(root: impl AsRef<Path>, sequence: &str) -> Self {
        Self {
            dir: root.as_ref().join("sequences").join(sequence),
        }
    }

    pub fn scan(&self, frame: usize) -> PathBuf {
        self.dir.join("velodyne").join(format!("{frame:06}.bin"))
    }

    pub fn labels(&self, frame: usize) -> PathBuf {
        self.dir.join("labels").join(format!("{frame:06}.label"))
    }

    /// Label file under an arbitrary sibling directory such as `predictions`.
    pub fn labels_in(&self, subdir: &str, frame: usize) -> PathBuf {
        self.dir.join(subdir).join(format!("{frame:06}.label"))
    }

    pub fn poses(&self) -> PathBuf {
        self.dir.join("poses.txt")
    }

    pub fn calib(&self) -> PathBuf {
        self.dir.join("calib.txt")
    }

    /// Frame numbers present in `velodyne/`, sorted.
    pub fn frames(&self) -> Result<Vec<usize>> {
        frames_in(&self.dir.join("velodyne"), "bin")
    }
}

/// Sorted frame numbers of `FFFFFF.<ext>` files in `dir`.
pub fn frames_in(dir: &Path, ext: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some(ext) {
            continue;
        }
        if let Some(n) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse().ok()) {
            out.push(n);
        }
    }
    out.sort_unstable();
    Ok(out)
}
