//! Single-frame range-image refiners: k-NN majority over range-similar patch
//! neighbors, and nearest label assignment for occluded points.

use crate::cloud::ClassId;
use crate::error::{Error, Result};
use crate::rangeview::{LabelImage, RangeImage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnnParams {
    pub k: usize,
    /// Patch edge in pixels (odd).
    pub window: usize,
    /// Max absolute range difference in meters for a neighbor to count.
    pub cutoff: f64,
}

impl Default for KnnParams {
    fn default() -> Self {
        Self {
            k: 5,
            window: 5,
            cutoff: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NlaParams {
    /// Patch edge in pixels (odd).
    pub patch: usize,
    /// Range difference in meters above which a point counts as occluded.
    pub tau: f64,
}

impl Default for NlaParams {
    fn default() -> Self {
        Self { patch: 7, tau: 1.0 }
    }
}

/// A valid patch pixel ranked by how close its range is to the query point.
/// Ordering: range difference, then the center pixel, then row-major position.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    diff: f64,
    off_center: bool,
    row: usize,
    col: usize,
}

impl Candidate {
    fn key(&self) -> (f64, bool, usize, usize) {
        (self.diff, self.off_center, self.row, self.col)
    }
}

fn cmp_candidates(a: &Candidate, b: &Candidate) -> std::cmp::Ordering {
    a.key().partial_cmp(&b.key()).expect("range differences are finite")
}

fn patch_candidates(
    image: &RangeImage,
    row: usize,
    col: usize,
    size: usize,
    point_range: f64,
    out: &mut Vec<Candidate>,
) {
    out.clear();
    let half = size / 2;
    let r0 = row.saturating_sub(half);
    let r1 = (row + half).min(image.height - 1);
    let c0 = col.saturating_sub(half);
    let c1 = (col + half).min(image.width - 1);
    for r in r0..=r1 {
        for c in c0..=c1 {
            if !image.is_valid(r, c) {
                continue;
            }
            out.push(Candidate {
                diff: (image.pixel_range(r, c) as f64 - point_range).abs(),
                off_center: !(r == row && c == col),
                row: r,
                col: c,
            });
        }
    }
}

fn check_patch(size: usize, what: &str) -> Result<()> {
    if size == 0 || size.is_multiple_of(2) {
        return Err(Error::arg(format!("{what} must be odd, got {size}")));
    }
    Ok(())
}

/// For each projected point: rank the valid pixels of its patch by absolute
/// range difference, keep the `k` best within `cutoff`, and take the majority
/// label (ties to the smallest class id). With no candidate inside the cutoff
/// the point keeps its own pixel's label. Unprojected points get `ignore`.
pub fn knn_refine(
    image: &RangeImage,
    image_labels: &LabelImage,
    params: &KnnParams,
    ignore: ClassId,
) -> Result<Vec<ClassId>> {
    image_labels.check_matches(image)?;
    check_patch(params.window, "k-NN window")?;
    if params.k == 0 {
        return Err(Error::arg("k must be at least 1"));
    }
    if params.cutoff.is_nan() || params.cutoff < 0.0 {
        return Err(Error::arg("k-NN cutoff must be non-negative"));
    }
    let mut cands = Vec::with_capacity(params.window * params.window);
    let mut votes: Vec<(ClassId, u32)> = Vec::with_capacity(params.k);
    let mut out = Vec::with_capacity(image.num_points());
    for (i, px) in image.point_pixel.iter().enumerate() {
        let Some(px) = px else {
            out.push(ignore);
            continue;
        };
        let (row, col) = (px.row as usize, px.col as usize);
        patch_candidates(image, row, col, params.window, image.point_range[i], &mut cands);
        cands.retain(|c| c.diff <= params.cutoff);
        if cands.is_empty() {
            out.push(image_labels.get(row, col));
            continue;
        }
        cands.sort_unstable_by(cmp_candidates);
        votes.clear();
        for c in cands.iter().take(params.k) {
            let l = image_labels.get(c.row, c.col);
            match votes.iter_mut().find(|(v, _)| *v == l) {
                Some((_, n)) => *n += 1,
                None => votes.push((l, 1)),
            }
        }
        let (label, _) = votes
            .iter()
            .copied()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            .expect("at least one vote");
        out.push(label);
    }
    Ok(out)
}

/// Points whose range is within `tau` of their pixel's range keep the pixel
/// label. Occluded points take the label of the valid patch pixel with the
/// closest range. Unprojected points get `ignore`.
pub fn nla_refine(
    image: &RangeImage,
    image_labels: &LabelImage,
    params: &NlaParams,
    ignore: ClassId,
) -> Result<Vec<ClassId>> {
    image_labels.check_matches(image)?;
    check_patch(params.patch, "NLA patch")?;
    if !(params.tau > 0.0) {
        return Err(Error::arg(format!("NLA tau must be > 0, got {}", params.tau)));
    }
    let mut cands = Vec::with_capacity(params.patch * params.patch);
    let mut out = Vec::with_capacity(image.num_points());
    for (i, px) in image.point_pixel.iter().enumerate() {
        let Some(px) = px else {
            out.push(ignore);
            continue;
        };
        let (row, col) = (px.row as usize, px.col as usize);
        let point_range = image.point_range[i];
        let own = image_labels.get(row, col);
        if (image.pixel_range(row, col) as f64 - point_range).abs() <= params.tau {
            out.push(own);
            continue;
        }
        patch_candidates(image, row, col, params.patch, point_range, &mut cands);
        let label = cands
            .iter()
            .min_by(|a, b| cmp_candidates(a, b))
            .map(|c| image_labels.get(c.row, c.col))
            .unwrap_or(own);
        out.push(label);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{Point3, PointCloud};
    use crate::rangeview::{project, ProjectionConfig};

    fn cfg() -> ProjectionConfig {
        ProjectionConfig::new(16, 64, 3.0, -25.0).unwrap()
    }

    /// Point at fractional pixel position and range.
    fn at(cfg: &ProjectionConfig, row: f64, col: f64, range: f64) -> Point3 {
        let (yaw, pitch) = cfg.ray_angles(row, col);
        Point3::new(
            range * pitch.cos() * yaw.cos(),
            range * pitch.cos() * yaw.sin(),
            range * pitch.sin(),
        )
    }

    #[test]
    fn isolated_point_keeps_label() {
        let cfg = cfg();
        let cloud = PointCloud::from_points(vec![at(&cfg, 8.5, 32.5, 12.0)]).unwrap();
        let img = project(&cloud, &cfg).unwrap();
        let mut labels = LabelImage::filled(16, 64, 0);
        labels.set(8, 32, 9);
        let knn = knn_refine(&img, &labels, &KnnParams::default(), 0).unwrap();
        let nla = nla_refine(&img, &labels, &NlaParams::default(), 0).unwrap();
        assert_eq!(knn, vec![9]);
        assert_eq!(nla, vec![9]);
    }

    #[test]
    fn occluded_far_point_takes_far_neighbors() {
        // Near billboard (13) at 5 m on pixel (8,32); far terrain (17) at
        // 20 m there and on four neighbors.
        let cfg = cfg();
        let mut pts = vec![at(&cfg, 8.5, 32.5, 5.0), at(&cfg, 8.6, 32.6, 20.0)];
        for (r, c) in [(7.5, 32.5), (9.5, 32.5), (8.5, 31.5), (8.5, 33.5)] {
            pts.push(at(&cfg, r, c, 20.2));
        }
        let img = project(&PointCloud::from_points(pts).unwrap(), &cfg).unwrap();
        assert!(img.point_occluded[1]);
        let mut labels = LabelImage::filled(16, 64, 0);
        labels.set(8, 32, 13);
        for (r, c) in [(7, 32), (9, 32), (8, 31), (8, 33)] {
            labels.set(r, c, 17);
        }
        let knn = knn_refine(
            &img,
            &labels,
            &KnnParams {
                k: 5,
                window: 5,
                cutoff: 1.0,
            },
            0,
        )
        .unwrap();
        assert_eq!(knn[0], 13);
        assert_eq!(knn[1], 17);
        let nla = nla_refine(&img, &labels, &NlaParams::default(), 0).unwrap();
        assert_eq!(nla[0], 13);
        assert_eq!(nla[1], 17);
    }

    #[test]
    fn rejects_even_patch_and_zero_k() {
        let cfg = cfg();
        let img = project(&PointCloud::from_points(vec![at(&cfg, 1.5, 1.5, 3.0)]).unwrap(), &cfg).unwrap();
        let labels = LabelImage::filled(16, 64, 1);
        assert!(knn_refine(
            &img,
            &labels,
            &KnnParams {
                k: 5,
                window: 4,
                cutoff: 1.0
            },
            0
        )
        .is_err());
        assert!(knn_refine(
            &img,
            &labels,
            &KnnParams {
                k: 0,
                window: 5,
                cutoff: 1.0
            },
            0
        )
        .is_err());
        assert!(nla_refine(&img, &labels, &NlaParams { patch: 6, tau: 1.0 }, 0).is_err());
        assert!(nla_refine(&img, &labels, &NlaParams { patch: 7, tau: 0.0 }, 0).is_err());
    }
}
