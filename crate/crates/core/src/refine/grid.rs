use std::collections::hash_map::Entry;

use rustc_hash::FxHashMap;

use super::{vote_argmax, TieBreak};
use crate::cloud::{ClassId, Point3};
use crate::error::{Error, Result};

/// Integer voxel coordinate `floor(p / resolution)`.
pub type VoxelKey = [i32; 3];

/// Sparse voxel grid of per-class vote counts. Only non-empty cells exist.
///
/// Counts live in one flat buffer (`num_classes` entries per slot); the map
/// points voxel keys at slots and freed slots are recycled.
#[derive(Debug, Clone)]
pub struct SparseVoteGrid {
    resolution: f64,
    num_classes: usize,
    ignore: Option<ClassId>,
    slots: FxHashMap<VoxelKey, u32>,
    counts: Vec<u32>,
    totals: Vec<u64>,
    free: Vec<u32>,
}

impl SparseVoteGrid {
    pub fn new(resolution: f64, num_classes: usize, ignore: Option<ClassId>) -> Result<Self> {
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(Error::arg(format!("voxel resolution must be > 0, got {resolution}")));
        }
        if num_classes == 0 || num_classes > ClassId::MAX as usize + 1 {
            return Err(Error::arg(format!("invalid class count {num_classes}")));
        }
        Ok(Self {
            resolution,
            num_classes,
            ignore,
            slots: FxHashMap::default(),
            counts: Vec::new(),
            totals: Vec::new(),
            free: Vec::new(),
        })
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn ignore(&self) -> Option<ClassId> {
        self.ignore
    }

    /// Number of non-empty cells.
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn clear(&mut self) {
        self.slots.clear();
        self.counts.clear();
        self.totals.clear();
        self.free.clear();
    }

    #[inline]
    pub fn key(&self, p: &Point3) -> VoxelKey {
        let inv = 1.0 / self.resolution;
        [
            (p.x * inv).floor() as i32,
            (p.y * inv).floor() as i32,
            (p.z * inv).floor() as i32,
        ]
    }

    /// Vote histogram of a cell, if it is non-empty.
    pub fn histogram(&self, key: &VoxelKey) -> Option<&[u32]> {
        self.slots.get(key).map(|&s| self.slot(s))
    }

    /// All cells as `(key, histogram)`, in unspecified order.
    pub fn cells(&self) -> impl Iterator<Item = (&VoxelKey, &[u32])> {
        self.slots.iter().map(|(k, &s)| (k, self.slot(s)))
    }

    #[inline]
    fn slot(&self, s: u32) -> &[u32] {
        let start = s as usize * self.num_classes;
        &self.counts[start..start + self.num_classes]
    }

    /// Rejects labels outside `[0, num_classes)`.
    pub fn check_labels(&self, labels: &[ClassId]) -> Result<()> {
        match labels.iter().find(|&&l| l as usize >= self.num_classes) {
            Some(l) => Err(Error::arg(format!(
                "label {l} out of range for {} classes",
                self.num_classes
            ))),
            None => Ok(()),
        }
    }

    /// Adds one vote per labeled point. Ignore-labeled points are skipped.
    /// Counts saturate at `u32::MAX`.
    pub fn add_scan(&mut self, points: &[Point3], labels: &[ClassId]) -> Result<()> {
        if points.len() != labels.len() {
            return Err(Error::arg("points and labels differ in length"));
        }
        self.check_labels(labels)?;
        for (p, &l) in points.iter().zip(labels) {
            if Some(l) == self.ignore {
                continue;
            }
            let key = self.key(p);
            let slot = match self.slots.entry(key) {
                Entry::Occupied(e) => *e.get(),
                Entry::Vacant(e) => {
                    let s = match self.free.pop() {
                        Some(s) => s,
                        None => {
                            let s = self.totals.len() as u32;
                            self.counts.resize(self.counts.len() + self.num_classes, 0);
                            self.totals.push(0);
                            s
                        }
                    };
                    e.insert(s);
                    s
                }
            };
            let c = &mut self.counts[slot as usize * self.num_classes + l as usize];
            *c = c.saturating_add(1);
            self.totals[slot as usize] += 1;
        }
        Ok(())
    }

    /// Removes the votes a previous [`add_scan`](Self::add_scan) with the same
    /// input contributed, pruning cells whose total reaches zero.
    pub fn remove_scan(&mut self, points: &[Point3], labels: &[ClassId]) -> Result<()> {
        if points.len() != labels.len() {
            return Err(Error::arg("points and labels differ in length"));
        }
        self.check_labels(labels)?;
        for (p, &l) in points.iter().zip(labels) {
            if Some(l) == self.ignore {
                continue;
            }
            let key = self.key(p);
            let Some(&slot) = self.slots.get(&key) else {
                return Err(Error::arg(format!("removing vote from empty voxel {key:?}")));
            };
            let base = slot as usize * self.num_classes;
            let c = &mut self.counts[base + l as usize];
            if *c == 0 {
                return Err(Error::arg(format!("removing absent class {l} from voxel {key:?}")));
            }
            *c -= 1;
            let total = &mut self.totals[slot as usize];
            *total -= 1;
            if *total == 0 {
                self.slots.remove(&key);
                self.counts[base..base + self.num_classes].fill(0);
                self.free.push(slot);
            }
        }
        Ok(())
    }

    /// Refined label for one point: the voxel's max-vote class, or `current`
    /// if the voxel is empty or `current` is the ignore class.
    #[inline]
    pub fn vote(&self, p: &Point3, current: ClassId, tie_break: TieBreak) -> ClassId {
        if Some(current) == self.ignore {
            return current;
        }
        match self.slots.get(&self.key(p)) {
            Some(&s) => vote_argmax(self.slot(s), current, self.ignore, tie_break),
            None => current,
        }
    }

    /// Cell contents as a sorted list, for equality checks.
    pub fn snapshot(&self) -> Vec<(VoxelKey, Vec<u32>)> {
        let mut out: Vec<_> = self.cells().map(|(k, h)| (*k, h.to_vec())).collect();
        out.sort_unstable_by_key(|e| e.0);
        out
    }
}
