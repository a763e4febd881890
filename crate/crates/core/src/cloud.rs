use crate::error::{Error, Result};

/// Semantic class id after train-id remapping.
pub type ClassId = u16;

/// A 3D point in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// N points with intensity and optional per-point class ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub intensity: Vec<f32>,
    pub labels: Option<Vec<ClassId>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, intensity: Vec<f32>) -> Result<Self> {
        if points.len() != intensity.len() {
            return Err(Error::arg(format!(
                "{} points but {} intensities",
                points.len(),
                intensity.len()
            )));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::arg(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self {
            points,
            intensity,
            labels: None,
        })
    }

    /// Cloud with zero intensity everywhere.
    pub fn from_points(points: Vec<Point3>) -> Result<Self> {
        let n = points.len();
        Self::new(points, vec![0.0; n])
    }

    pub fn with_labels(mut self, labels: Vec<ClassId>) -> Result<Self> {
        if labels.len() != self.points.len() {
            return Err(Error::arg(format!(
                "{} labels for {} points",
                labels.len(),
                self.points.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn labels(&self) -> Option<&[ClassId]> {
        self.labels.as_deref()
    }
}
