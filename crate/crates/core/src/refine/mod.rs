//! Post-processing of per-point predictions.
//!
//! [`MvpRefiner`] implements temporal max voting: the last `L` labeled scans
//! are aligned into the newest sensor frame, their labels are counted in a
//! sparse voxel grid, and each current point takes its voxel's majority
//! class. [`knn_refine`] and [`nla_refine`] are the single-frame range-image
//! baselines.

mod baselines;
mod grid;
mod window;

pub use baselines::{knn_refine, nla_refine, KnnParams, NlaParams};
pub use grid::{SparseVoteGrid, VoxelKey};
pub use window::{mvp_push, MvpRefiner, ScanWindow, WindowEntry};

use crate::cloud::{ClassId, Point3};
use crate::error::{Error, Result};

/// How to resolve tied vote maxima.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieBreak {
    /// Keep the point's current class if it is among the maxima, otherwise
    /// take the smallest tied class id.
    #[default]
    KeepCurrent,
    /// Always take the smallest tied class id.
    LowestId,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineParams {
    /// Voxel edge length in meters.
    pub voxel: f64,
    /// Sliding-window length in scans.
    pub window_scans: usize,
    pub tie_break: TieBreak,
}

impl Default for RefineParams {
    fn default() -> Self {
        Self {
            voxel: 0.10,
            window_scans: 10,
            tie_break: TieBreak::KeepCurrent,
        }
    }
}

impl RefineParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.voxel > 0.0) || !self.voxel.is_finite() {
            return Err(Error::arg(format!("voxel must be > 0, got {}", self.voxel)));
        }
        if self.window_scans == 0 {
            return Err(Error::arg("window must hold at least one scan"));
        }
        Ok(())
    }
}

/// Max-vote class of a histogram. The ignore class never wins; an empty
/// histogram returns `current`.
pub fn vote_argmax(histogram: &[u32], current: ClassId, ignore: Option<ClassId>, tie_break: TieBreak) -> ClassId {
    let mut best = 0u32;
    let mut best_class = None;
    for (c, &n) in histogram.iter().enumerate() {
        if Some(c as ClassId) == ignore {
            continue;
        }
        if n > best {
            best = n;
            best_class = Some(c as ClassId);
        }
    }
    let Some(lowest) = best_class else {
        return current;
    };
    if tie_break == TieBreak::KeepCurrent && Some(current) != ignore && histogram.get(current as usize) == Some(&best) {
        return current;
    }
    lowest
}

/// Relabels each point of the current scan with its voxel's max-vote class.
/// Points in cells absent from `grid` and ignore-labeled points keep their label.
pub fn mvp_refine(
    grid: &SparseVoteGrid,
    points: &[Point3],
    labels: &[ClassId],
    tie_break: TieBreak,
) -> Result<Vec<ClassId>> {
    if points.len() != labels.len() {
        return Err(Error::arg("points and labels differ in length"));
    }
    Ok(points
        .iter()
        .zip(labels)
        .map(|(p, &l)| grid.vote(p, l, tie_break))
        .collect())
}
