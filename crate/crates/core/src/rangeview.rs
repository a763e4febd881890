//! Spherical projection of point clouds into H x W x 5 range images.
//!
//! Each pixel keeps the nearest point that maps to it. Points that lose the
//! per-pixel competition are flagged as occluded; on re-projection they
//! inherit the label of the winner, which is the many-to-one failure mode
//! the temporal refiners target.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::cloud::{ClassId, PointCloud};
use crate::error::{Error, Result};

/// Sentinel in [`RangeImage::winner`] for pixels that hold no point.
pub const NO_POINT: u32 = u32::MAX;

/// Magic bytes of the binary range-image dump.
pub const DUMP_MAGIC: &[u8; 4] = b"RNGI";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionConfig {
    /// Beam count (rows).
    pub height: usize,
    /// Azimuth bins (columns).
    pub width: usize,
    /// Upper vertical field of view, degrees.
    pub fov_up: f64,
    /// Lower vertical field of view, degrees (signed).
    pub fov_down: f64,
    /// Drop points whose pitch falls outside the FOV instead of clamping them
    /// into the first/last row.
    pub drop_out_of_fov: bool,
}

impl Default for ProjectionConfig {
    /// HDL-64E at 64 x 2048.
    fn default() -> Self {
        Self {
            height: 64,
            width: 2048,
            fov_up: 3.0,
            fov_down: -25.0,
            drop_out_of_fov: false,
        }
    }
}

/// Where a point landed in the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelCoord {
    pub row: u32,
    pub col: u32,
}

/// Pixel location of a single point and whether its pitch had to be clamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelHit {
    pub pixel: PixelCoord,
    pub range: f64,
    pub clamped: bool,
}

impl ProjectionConfig {
    pub fn new(height: usize, width: usize, fov_up: f64, fov_down: f64) -> Result<Self> {
        let cfg = Self {
            height,
            width,
            fov_up,
            fov_down,
            drop_out_of_fov: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::arg("image height and width must be at least 1"));
        }
        if self.height > u32::MAX as usize || self.width > u32::MAX as usize {
            return Err(Error::arg("image dimensions exceed u32"));
        }
        if !(self.fov_up > self.fov_down) || !self.fov_up.is_finite() || !self.fov_down.is_finite() {
            return Err(Error::arg(format!(
                "fov_up ({}) must exceed fov_down ({})",
                self.fov_up, self.fov_down
            )));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    fn fov_rad(&self) -> (f64, f64) {
        (self.fov_up.to_radians(), self.fov_down.to_radians())
    }

    /// Pixel of a point, or `None` for the origin, non-finite input, or an
    /// out-of-FOV pitch when `drop_out_of_fov` is set.
    ///
    /// `col = floor(0.5 (1 - yaw/pi) W)`,
    /// `row = floor((1 - (pitch - fov_down)/(fov_up - fov_down)) H)`, both clamped.
    pub fn pixel_of(&self, x: f64, y: f64, z: f64) -> Option<PixelHit> {
        let range = (x * x + y * y + z * z).sqrt();
        if !(range > 0.0) || !range.is_finite() {
            return None;
        }
        let (up, down) = self.fov_rad();
        let yaw = y.atan2(x);
        let pitch = (z / range).clamp(-1.0, 1.0).asin();
        let out_of_fov = pitch < down || pitch > up;
        if out_of_fov && self.drop_out_of_fov {
            return None;
        }
        let w = self.width as f64;
        let h = self.height as f64;
        let col = (0.5 * (1.0 - yaw / PI) * w).floor().clamp(0.0, w - 1.0);
        let row = ((1.0 - (pitch - down) / (up - down)) * h).floor().clamp(0.0, h - 1.0);
        Some(PixelHit {
            pixel: PixelCoord {
                row: row as u32,
                col: col as u32,
            },
            range,
            clamped: out_of_fov,
        })
    }

    /// Yaw and pitch (radians) of the ray through fractional pixel
    /// coordinates; `(row + 0.5, col + 0.5)` is the pixel center. Inverse of
    /// the projection formula.
    pub fn ray_angles(&self, row: f64, col: f64) -> (f64, f64) {
        let (up, down) = self.fov_rad();
        let yaw = PI * (1.0 - 2.0 * col / self.width as f64);
        let pitch = down + (1.0 - row / self.height as f64) * (up - down);
        (yaw, pitch)
    }
}

/// Projected scan. Pixel storage is row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeImage {
    pub height: usize,
    pub width: usize,
    /// `(x, y, z, range, intensity)` of each pixel's winning point; zeros where empty.
    pub pixels: Vec<[f32; 5]>,
    /// Index of the winning point per pixel, [`NO_POINT`] where empty.
    pub winner: Vec<u32>,
    /// Pixel each point maps to; `None` for points that were not projected.
    pub point_pixel: Vec<Option<PixelCoord>>,
    /// Range of each point (0 for unprojected points).
    pub point_range: Vec<f64>,
    /// True iff the point's pixel is valid and another point won it.
    pub point_occluded: Vec<bool>,
    /// True for points whose pitch was clamped into the image.
    pub point_clamped: Vec<bool>,
}

impl RangeImage {
    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.winner[self.index(row, col)] != NO_POINT
    }

    pub fn pixel_range(&self, row: usize, col: usize) -> f32 {
        self.pixels[self.index(row, col)][3]
    }

    pub fn num_points(&self) -> usize {
        self.point_pixel.len()
    }

    pub fn valid_pixel_count(&self) -> usize {
        self.winner.iter().filter(|&&w| w != NO_POINT).count()
    }

    pub fn valid_mask(&self) -> Vec<bool> {
        self.winner.iter().map(|&w| w != NO_POINT).collect()
    }

    /// Per-pixel label map taking each winner's label from `point_labels`.
    /// Empty pixels get `fill`.
    pub fn winner_labels(&self, point_labels: &[ClassId], fill: ClassId) -> Result<LabelImage> {
        if point_labels.len() != self.num_points() {
            return Err(Error::arg(format!(
                "{} labels for {} projected points",
                point_labels.len(),
                self.num_points()
            )));
        }
        let data = self
            .winner
            .iter()
            .map(|&w| if w == NO_POINT { fill } else { point_labels[w as usize] })
            .collect();
        Ok(LabelImage {
            height: self.height,
            width: self.width,
            data,
        })
    }

    /// Writes the `RNGI` dump: magic, u32 H, u32 W, then H*W*5 f32, all
    /// little-endian, row-major with interleaved channels.
    pub fn write_dump(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::with_capacity(12 + self.pixels.len() * 20);
        buf.extend_from_slice(DUMP_MAGIC);
        buf.extend_from_slice(&(self.height as u32).to_le_bytes());
        buf.extend_from_slice(&(self.width as u32).to_le_bytes());
        for px in &self.pixels {
            for v in px {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }
}

/// Reads an `RNGI` dump back as `(height, width, pixels)`.
pub fn read_dump(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<[f32; 5]>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let fmt = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    if bytes.len() < 12 || &bytes[..4] != DUMP_MAGIC {
        return Err(fmt("missing RNGI header".into()));
    }
    let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() != h * w * 20 {
        return Err(fmt(format!(
            "expected {} payload bytes for {h}x{w}, found {}",
            h * w * 20,
            body.len()
        )));
    }
    let pixels = body
        .chunks_exact(20)
        .map(|c| {
            let mut px = [0f32; 5];
            for (k, v) in px.iter_mut().enumerate() {
                *v = f32::from_le_bytes(c[k * 4..k * 4 + 4].try_into().unwrap());
            }
            px
        })
        .collect();
    Ok((h, w, pixels))
}

/// H x W class-id map, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<ClassId>,
}

impl LabelImage {
    pub fn new(height: usize, width: usize, data: Vec<ClassId>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::arg(format!(
                "label image data has {} entries, expected {height}x{width}",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: ClassId) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> ClassId {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: ClassId) {
        self.data[row * self.width + col] = value;
    }

    pub(crate) fn check_matches(&self, image: &RangeImage) -> Result<()> {
        if self.height != image.height || self.width != image.width {
            return Err(Error::arg(format!(
                "label image is {}x{} but range image is {}x{}",
                self.height, self.width, image.height, image.width
            )));
        }
        Ok(())
    }
}

/// Projects `cloud` into a range image; per pixel the nearest point wins and
/// exact range ties go to the lowest point index.
///
/// The result is the same as writing points in decreasing-range order, which
/// is how the usual projection resolves collisions.
pub fn project(cloud: &PointCloud, cfg: &ProjectionConfig) -> Result<RangeImage> {
    cfg.validate()?;
    let n = cloud.len();
    if n > (u32::MAX - 1) as usize {
        return Err(Error::arg("too many points for u32 indexing"));
    }
    let npix = cfg.pixel_count();
    let mut winner = vec![NO_POINT; npix];
    let mut best_range = vec![f64::INFINITY; npix];
    let mut point_pixel = Vec::with_capacity(n);
    let mut point_range = Vec::with_capacity(n);
    let mut point_clamped = Vec::with_capacity(n);

    for (i, p) in cloud.points.iter().enumerate() {
        match cfg.pixel_of(p.x, p.y, p.z) {
            Some(hit) => {
                let idx = hit.pixel.row as usize * cfg.width + hit.pixel.col as usize;
                // Strict `<` keeps the lowest index on exact ties since points
                // are visited in index order.
                if hit.range < best_range[idx] {
                    best_range[idx] = hit.range;
                    winner[idx] = i as u32;
                }
                point_pixel.push(Some(hit.pixel));
                point_range.push(hit.range);
                point_clamped.push(hit.clamped);
            }
            None => {
                point_pixel.push(None);
                point_range.push(0.0);
                point_clamped.push(false);
            }
        }
    }

    let mut pixels = vec![[0f32; 5]; npix];
    for (idx, &w) in winner.iter().enumerate() {
        if w != NO_POINT {
            let p = cloud.points[w as usize];
            pixels[idx] = [
                p.x as f32,
                p.y as f32,
                p.z as f32,
                best_range[idx] as f32,
                cloud.intensity[w as usize],
            ];
        }
    }

    let point_occluded = point_pixel
        .iter()
        .enumerate()
        .map(|(i, px)| match px {
            Some(px) => winner[px.row as usize * cfg.width + px.col as usize] != i as u32,
            None => false,
        })
        .collect();

    Ok(RangeImage {
        height: cfg.height,
        width: cfg.width,
        pixels,
        winner,
        point_pixel,
        point_range,
        point_occluded,
        point_clamped,
    })
}

/// Gives every point the label of its pixel, occluded points included.
/// Points that were not projected get `ignore`.
pub fn unproject_labels(image_labels: &LabelImage, image: &RangeImage, ignore: ClassId) -> Result<Vec<ClassId>> {
    image_labels.check_matches(image)?;
    Ok(image
        .point_pixel
        .iter()
        .map(|px| match px {
            Some(px) => image_labels.get(px.row as usize, px.col as usize),
            None => ignore,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OcclusionStats {
    pub total_points: usize,
    pub projected_points: usize,
    /// Projected points that lost their pixel to a nearer point.
    pub occluded_points: usize,
    /// `occluded_points / total_points`.
    pub occluded_fraction: f64,
    /// Pixels holding two or more points.
    pub pixels_multi: usize,
    /// Points whose pitch was outside the FOV and clamped into the image.
    pub clamped_points: usize,
    /// Occluded points that were also clamped.
    pub clamped_occluded_points: usize,
}

impl OcclusionStats {
    /// Sums counts across frames and recomputes the fraction.
    pub fn merge(&self, other: &OcclusionStats) -> OcclusionStats {
        let mut out = OcclusionStats {
            total_points: self.total_points + other.total_points,
            projected_points: self.projected_points + other.projected_points,
            occluded_points: self.occluded_points + other.occluded_points,
            occluded_fraction: 0.0,
            pixels_multi: self.pixels_multi + other.pixels_multi,
            clamped_points: self.clamped_points + other.clamped_points,
            clamped_occluded_points: self.clamped_occluded_points + other.clamped_occluded_points,
        };
        out.occluded_fraction = fraction(out.occluded_points, out.total_points);
        out
    }

    /// `key=value` lines with an optional key prefix.
    pub fn report_lines(&self, prefix: &str) -> Vec<String> {
        vec![
            format!("{prefix}total_points={}", self.total_points),
            format!("{prefix}projected_points={}", self.projected_points),
            format!("{prefix}occluded_points={}", self.occluded_points),
            format!("{prefix}occluded_fraction={}", self.occluded_fraction),
            format!("{prefix}pixels_multi={}", self.pixels_multi),
            format!("{prefix}clamped_points={}", self.clamped_points),
            format!("{prefix}clamped_occluded_points={}", self.clamped_occluded_points),
        ]
    }
}

fn fraction(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn occlusion_stats(image: &RangeImage) -> OcclusionStats {
    let total_points = image.num_points();
    let projected_points = image.point_pixel.iter().filter(|p| p.is_some()).count();
    let occluded_points = image.point_occluded.iter().filter(|&&o| o).count();
    let clamped_points = image.point_clamped.iter().filter(|&&c| c).count();
    let clamped_occluded_points = image
        .point_occluded
        .iter()
        .zip(&image.point_clamped)
        .filter(|(&o, &c)| o && c)
        .count();
    let mut per_pixel = vec![0u32; image.height * image.width];
    for px in image.point_pixel.iter().flatten() {
        per_pixel[image.index(px.row as usize, px.col as usize)] += 1;
    }
    let pixels_multi = per_pixel.iter().filter(|&&c| c >= 2).count();
    OcclusionStats {
        total_points,
        projected_points,
        occluded_points,
        occluded_fraction: fraction(occluded_points, total_points),
        pixels_multi,
        clamped_points,
        clamped_occluded_points,
    }
}
