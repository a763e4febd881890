//! Frame-by-frame refinement over a sequence.

use std::time::{Duration, Instant};

use crate::cloud::{ClassId, PointCloud};
use crate::error::{Error, Result};
use crate::geometry::{relative_chain, RigidTransform};
use crate::rangeview::{project, ProjectionConfig};
use crate::refine::{knn_refine, nla_refine, KnnParams, MvpRefiner, NlaParams, RefineParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    /// Predictions pass through unchanged.
    None,
    Mvp(RefineParams),
    Knn(KnnParams),
    Nla(NlaParams),
}

/// Label-space setup shared by all refiners.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Classes {
    /// Including the ignore class.
    pub count: usize,
    pub ignore: ClassId,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FrameTiming {
    pub project: Duration,
    pub refine: Duration,
}

impl FrameTiming {
    pub fn total(&self) -> Duration {
        self.project + self.refine
    }
}

/// Streaming refiner: feed frames in order, each with its absolute pose.
pub struct SequenceRefiner {
    method: Method,
    cfg: ProjectionConfig,
    classes: Classes,
    mvp: Option<MvpRefiner>,
    last_pose: Option<RigidTransform>,
}

impl SequenceRefiner {
    pub fn new(method: Method, cfg: ProjectionConfig, classes: Classes) -> Result<Self> {
        cfg.validate()?;
        let mvp = match method {
            Method::Mvp(p) => Some(MvpRefiner::new(p, classes.count, Some(classes.ignore))?),
            _ => None,
        };
        Ok(Self {
            method,
            cfg,
            classes,
            mvp,
            last_pose: None,
        })
    }

    /// Refines one frame. `pose` maps this frame's sensor coordinates into a
    /// common world frame; only MVP uses it.
    pub fn process(
        &mut self,
        cloud: &PointCloud,
        predictions: &[ClassId],
        pose: &RigidTransform,
    ) -> Result<(Vec<ClassId>, FrameTiming)> {
        if predictions.len() != cloud.len() {
            return Err(Error::arg(format!(
                "{} predictions for {} points",
                predictions.len(),
                cloud.len()
            )));
        }
        let mut timing = FrameTiming::default();
        let ignore = self.classes.ignore;
        let out = match self.method {
            Method::None => predictions.to_vec(),
            Method::Mvp(_) => {
                let step = match self.last_pose {
                    Some(prev) => relative_chain(&[prev, *pose])[0],
                    None => RigidTransform::identity(),
                };
                let t0 = Instant::now();
                let out = self.mvp.as_mut().expect("mvp state exists for mvp method").process(
                    &cloud.points,
                    predictions,
                    &step,
                )?;
                timing.refine = t0.elapsed();
                out
            }
            Method::Knn(p) => {
                let t0 = Instant::now();
                let image = project(cloud, &self.cfg)?;
                let labels = image.winner_labels(predictions, ignore)?;
                timing.project = t0.elapsed();
                let t1 = Instant::now();
                let out = knn_refine(&image, &labels, &p, ignore)?;
                timing.refine = t1.elapsed();
                out
            }
            Method::Nla(p) => {
                let t0 = Instant::now();
                let image = project(cloud, &self.cfg)?;
                let labels = image.winner_labels(predictions, ignore)?;
                timing.project = t0.elapsed();
                let t1 = Instant::now();
                let out = nla_refine(&image, &labels, &p, ignore)?;
                timing.refine = t1.elapsed();
                out
            }
        };
        self.last_pose = Some(*pose);
        Ok((out, timing))
    }
}

/// Runs `method` over a whole sequence in frame order.
pub fn refine_sequence(
    method: Method,
    cfg: &ProjectionConfig,
    classes: Classes,
    clouds: &[PointCloud],
    predictions: &[Vec<ClassId>],
    poses: &[RigidTransform],
) -> Result<Vec<Vec<ClassId>>> {
    if clouds.len() != predictions.len() || clouds.len() != poses.len() {
        return Err(Error::arg(format!(
            "{} scans, {} prediction sets, {} poses",
            clouds.len(),
            predictions.len(),
            poses.len()
        )));
    }
    let mut refiner = SequenceRefiner::new(method, *cfg, classes)?;
    clouds
        .iter()
        .zip(predictions)
        .zip(poses)
        .map(|((c, p), pose)| refiner.process(c, p, pose).map(|(l, _)| l))
        .collect()
}
