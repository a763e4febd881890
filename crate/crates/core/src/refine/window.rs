use std::collections::VecDeque;

use super::{mvp_refine, RefineParams, SparseVoteGrid};
use crate::cloud::{ClassId, Point3};
use crate::error::{Error, Result};
use crate::geometry::{compose_chain, transform_points, RigidTransform};

/// One labeled scan held by the window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowEntry {
    pub frame_id: usize,
    /// Points in the window's current reference frame.
    pub points: Vec<Point3>,
    pub labels: Vec<ClassId>,
}

/// FIFO of the last `capacity` scans, oldest first.
#[derive(Debug, Clone)]
pub struct ScanWindow {
    capacity: usize,
    entries: VecDeque<WindowEntry>,
}

impl ScanWindow {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::arg("window capacity must be at least 1"));
        }
        Ok(Self {
            capacity,
            entries: VecDeque::with_capacity(capacity + 1),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    pub fn entries(&self) -> impl Iterator<Item = &WindowEntry> {
        self.entries.iter()
    }

    /// Drops the oldest scan and subtracts its votes.
    pub fn evict_oldest(&mut self, grid: &mut SparseVoteGrid) -> Result<Option<WindowEntry>> {
        match self.entries.pop_front() {
            Some(e) => {
                grid.remove_scan(&e.points, &e.labels)?;
                Ok(Some(e))
            }
            None => Ok(None),
        }
    }

    /// Moves every entry into a new reference frame, one transform per entry
    /// (oldest first), and rebuilds `grid` from the re-keyed points.
    pub fn realign(&mut self, grid: &mut SparseVoteGrid, transforms: &[RigidTransform]) -> Result<()> {
        if transforms.len() != self.entries.len() {
            return Err(Error::arg(format!(
                "{} transforms for {} window entries",
                transforms.len(),
                self.entries.len()
            )));
        }
        for (e, t) in self.entries.iter_mut().zip(transforms) {
            if !t.is_identity() {
                for p in e.points.iter_mut() {
                    *p = t.apply(p);
                }
            }
        }
        self.rebuild(grid)
    }

    /// Recomputes `grid` from scratch out of the current entries.
    pub fn rebuild(&self, grid: &mut SparseVoteGrid) -> Result<()> {
        grid.clear();
        for e in &self.entries {
            grid.add_scan(&e.points, &e.labels)?;
        }
        Ok(())
    }
}

/// Adds an aligned labeled scan to the window and its votes to the grid; if
/// the window was full, the oldest scan's votes are subtracted. All scans
/// carry equal weight. Returns the evicted entry.
pub fn mvp_push(window: &mut ScanWindow, grid: &mut SparseVoteGrid, entry: WindowEntry) -> Result<Option<WindowEntry>> {
    if entry.points.len() != entry.labels.len() {
        return Err(Error::arg("points and labels differ in length"));
    }
    grid.check_labels(&entry.labels)?;
    grid.add_scan(&entry.points, &entry.labels)?;
    window.entries.push_back(entry);
    if window.entries.len() > window.capacity {
        window.evict_oldest(grid)
    } else {
        Ok(None)
    }
}

/// Streaming max-voting refiner. Frame `t` only ever sees frames `<= t`.
///
/// Every call aligns the retained scans into the newest sensor frame by
/// composing the relative transforms since each scan was taken, rebuilds the
/// vote grid, adds the new scan and votes.
#[derive(Debug, Clone)]
pub struct MvpRefiner {
    params: RefineParams,
    window: ScanWindow,
    grid: SparseVoteGrid,
    /// `steps[k]` maps window entry `k` into the frame of entry `k + 1` (or of
    /// the frame being processed, for the last step).
    steps: VecDeque<RigidTransform>,
    // Source-frame points of each entry, so alignment is always one
    // composed transform away from the raw scan.
    sources: VecDeque<Vec<Point3>>,
    next_frame: usize,
}

impl MvpRefiner {
    pub fn new(params: RefineParams, num_classes: usize, ignore: Option<ClassId>) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            window: ScanWindow::new(params.window_scans)?,
            grid: SparseVoteGrid::new(params.voxel, num_classes, ignore)?,
            steps: VecDeque::new(),
            sources: VecDeque::new(),
            next_frame: 0,
        })
    }

    pub fn params(&self) -> &RefineParams {
        &self.params
    }

    pub fn grid(&self) -> &SparseVoteGrid {
        &self.grid
    }

    pub fn window(&self) -> &ScanWindow {
        &self.window
    }

    /// Refines one frame given in its own sensor frame.
    ///
    /// `step` is the relative transform from the previously processed frame
    /// into this one (`T_{t-1}^t`); it is ignored for the first frame.
    pub fn process(&mut self, points: &[Point3], labels: &[ClassId], step: &RigidTransform) -> Result<Vec<ClassId>> {
        if points.len() != labels.len() {
            return Err(Error::arg("points and labels differ in length"));
        }
        self.grid.check_labels(labels)?;

        if self.window.is_full() {
            self.window.entries.pop_front();
            self.sources.pop_front();
            self.steps.pop_front();
        }
        if self.window.is_empty() {
            self.steps.clear();
            self.grid.clear();
        } else {
            self.steps.push_back(*step);
            let chain: Vec<RigidTransform> = self.steps.iter().copied().collect();
            let n = chain.len();
            for (k, (entry, src)) in self.window.entries.iter_mut().zip(&self.sources).enumerate() {
                let t = compose_chain(&chain, k, n)?;
                entry.points = transform_points(src, &t);
            }
            self.window.rebuild(&mut self.grid)?;
        }

        let frame_id = self.next_frame;
        self.next_frame += 1;
        self.sources.push_back(points.to_vec());
        mvp_push(
            &mut self.window,
            &mut self.grid,
            WindowEntry {
                frame_id,
                points: points.to_vec(),
                labels: labels.to_vec(),
            },
        )?;
        mvp_refine(&self.grid, points, labels, self.params.tie_break)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refine::TieBreak;

    fn entry(id: usize, pts: &[(f64, f64, f64)], labels: &[ClassId]) -> WindowEntry {
        WindowEntry {
            frame_id: id,
            points: pts.iter().map(|&(x, y, z)| Point3::new(x, y, z)).collect(),
            labels: labels.to_vec(),
        }
    }

    #[test]
    fn capacity_one_keeps_only_newest() {
        let mut w = ScanWindow::new(1).unwrap();
        let mut g = SparseVoteGrid::new(0.1, 5, None).unwrap();
        mvp_push(&mut w, &mut g, entry(0, &[(0.0, 0.0, 0.0), (1.0, 0.0, 0.0)], &[1, 2])).unwrap();
        let evicted = mvp_push(&mut w, &mut g, entry(1, &[(5.05, 0.0, 0.0)], &[3])).unwrap();
        assert_eq!(evicted.unwrap().frame_id, 0);
        assert_eq!(g.snapshot(), vec![([50, 0, 0], vec![0, 0, 0, 1, 0])]);
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn bad_label_leaves_state_untouched() {
        let mut w = ScanWindow::new(2).unwrap();
        let mut g = SparseVoteGrid::new(0.1, 3, None).unwrap();
        assert!(mvp_push(&mut w, &mut g, entry(0, &[(0.0, 0.0, 0.0)], &[9])).is_err());
        assert!(w.is_empty() && g.is_empty());
    }

    #[test]
    fn refiner_corrects_point_seen_correctly_before() {
        // Frame 0 sees the far point as terrain (17); frame 1 is translated by
        // +1 m in x and mislabels the same world point.
        let mut r = MvpRefiner::new(RefineParams::default(), 20, Some(0)).unwrap();
        let f0 = [Point3::new(10.05, 0.05, 0.05)];
        r.process(&f0, &[17], &RigidTransform::identity()).unwrap();
        let step = RigidTransform::from_translation(-1.0, 0.0, 0.0);
        let f1 = [Point3::new(9.05, 0.05, 0.05), Point3::new(9.06, 0.06, 0.06)];
        let out = r.process(&f1, &[13, 17], &step).unwrap();
        assert_eq!(out, vec![17, 17]);
    }

    #[test]
    fn single_scan_window_with_fine_voxels_is_identity() {
        let params = RefineParams {
            voxel: 1e-3,
            window_scans: 1,
            tie_break: TieBreak::KeepCurrent,
        };
        let mut r = MvpRefiner::new(params, 4, None).unwrap();
        let pts: Vec<_> = (0..50).map(|i| Point3::new(i as f64 * 0.1, 1.0, 0.0)).collect();
        let labels: Vec<ClassId> = (0..50).map(|i| (i % 4) as ClassId).collect();
        for _ in 0..3 {
            let out = r
                .process(&pts, &labels, &RigidTransform::from_translation(0.3, 0.0, 0.0))
                .unwrap();
            assert_eq!(out, labels);
        }
    }
}
