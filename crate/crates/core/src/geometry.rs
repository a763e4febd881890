//! Rigid-body transforms and pose-chain composition.
//!
//! Frames are indexed from 0. A relative chain `chain[k]` maps points from
//! frame `k` into frame `k + 1`, so a chain of `n` transforms spans frames
//! `0..=n`.

use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::cloud::{Point3, PointCloud};
use crate::error::{Error, Result};

const ORTHO_TOL: f64 = 1e-6;

/// A 4x4 homogeneous SE(3) matrix. Translation is in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    matrix: Matrix4<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            matrix: Matrix4::identity(),
        }
    }

    /// Validates orthonormality, determinant and the homogeneous last row.
    pub fn from_matrix(matrix: Matrix4<f64>) -> Result<Self> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidTransform("non-finite entry".into()));
        }
        if matrix[(3, 0)] != 0.0 || matrix[(3, 1)] != 0.0 || matrix[(3, 2)] != 0.0 || matrix[(3, 3)] != 1.0 {
            return Err(Error::InvalidTransform("last row must be exactly [0, 0, 0, 1]".into()));
        }
        let r: Matrix3<f64> = matrix.fixed_view::<3, 3>(0, 0).into_owned();
        let ortho_err = (r.transpose() * r - Matrix3::identity()).amax();
        if ortho_err >= ORTHO_TOL {
            return Err(Error::InvalidTransform(format!(
                "rotation block not orthonormal (max |R^T R - I| = {ortho_err:e})"
            )));
        }
        let det = r.determinant();
        if (det - 1.0).abs() > ORTHO_TOL {
            return Err(Error::InvalidTransform(format!("rotation determinant {det} is not 1")));
        }
        Ok(Self { matrix })
    }

    /// Row-major 3x4 `[R | t]`, the layout of a KITTI pose line.
    pub fn from_rows_3x4(rows: &[f64; 12]) -> Result<Self> {
        let mut m = Matrix4::identity();
        for r in 0..3 {
            for c in 0..4 {
                m[(r, c)] = rows[r * 4 + c];
            }
        }
        Self::from_matrix(m)
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        let mut m = Matrix4::identity();
        m[(0, 3)] = x;
        m[(1, 3)] = y;
        m[(2, 3)] = z;
        Self { matrix: m }
    }

    /// Rotation about `axis` by `angle` radians followed by translation.
    pub fn from_axis_angle(axis: [f64; 3], angle: f64, translation: [f64; 3]) -> Result<Self> {
        let axis = Vector3::from(axis);
        let norm = axis.norm();
        if !(norm > 0.0) || !angle.is_finite() {
            return Err(Error::arg("rotation axis must be non-zero and angle finite"));
        }
        let rot = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(rot.matrix());
        m[(0, 3)] = translation[0];
        m[(1, 3)] = translation[1];
        m[(2, 3)] = translation[2];
        Self::from_matrix(m)
    }

    /// Yaw (about +z) then translation; the common planar-motion case.
    pub fn from_yaw_translation(yaw: f64, x: f64, y: f64, z: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        let mut m = Matrix4::identity();
        m[(0, 0)] = c;
        m[(0, 1)] = -s;
        m[(1, 0)] = s;
        m[(1, 1)] = c;
        m[(0, 3)] = x;
        m[(1, 3)] = y;
        m[(2, 3)] = z;
        Self { matrix: m }
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.matrix
    }

    pub fn rows_3x4(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for r in 0..3 {
            for c in 0..4 {
                out[r * 4 + c] = self.matrix[(r, c)];
            }
        }
        out
    }

    pub fn translation(&self) -> [f64; 3] {
        [self.matrix[(0, 3)], self.matrix[(1, 3)], self.matrix[(2, 3)]]
    }

    pub fn is_identity(&self) -> bool {
        self.matrix == Matrix4::identity()
    }

    /// `self * rhs`: apply `rhs` first, then `self`.
    pub fn compose(&self, rhs: &RigidTransform) -> RigidTransform {
        RigidTransform {
            matrix: self.matrix * rhs.matrix,
        }
    }

    /// Closed-form inverse `[R^T | -R^T t]`.
    pub fn invert(&self) -> RigidTransform {
        let r = self.matrix.fixed_view::<3, 3>(0, 0).transpose();
        let t = Vector3::new(self.matrix[(0, 3)], self.matrix[(1, 3)], self.matrix[(2, 3)]);
        let t_inv = -(r * t);
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m[(0, 3)] = t_inv.x;
        m[(1, 3)] = t_inv.y;
        m[(2, 3)] = t_inv.z;
        RigidTransform { matrix: m }
    }

    #[inline]
    pub fn apply(&self, p: &Point3) -> Point3 {
        let m = &self.matrix;
        Point3 {
            x: m[(0, 0)] * p.x + m[(0, 1)] * p.y + m[(0, 2)] * p.z + m[(0, 3)],
            y: m[(1, 0)] * p.x + m[(1, 1)] * p.y + m[(1, 2)] * p.z + m[(1, 3)],
            z: m[(2, 0)] * p.x + m[(2, 1)] * p.y + m[(2, 2)] * p.z + m[(2, 3)],
        }
    }

    /// Largest element-wise difference between two transforms.
    pub fn max_abs_diff(&self, other: &RigidTransform) -> f64 {
        (self.matrix - other.matrix).amax()
    }
}

impl std::ops::Mul for RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        self.compose(&rhs)
    }
}

/// Composes the relative chain from frame `from` into frame `to`:
/// `chain[to-1] * ... * chain[from]`, each later step applied on the left.
///
/// `from == to` yields the identity; a single step returns that element as is.
pub fn compose_chain(chain: &[RigidTransform], from: usize, to: usize) -> Result<RigidTransform> {
    if from > to || to > chain.len() {
        return Err(Error::arg(format!(
            "chain indices out of range: from={from} to={to} with {} transforms",
            chain.len()
        )));
    }
    let mut steps = chain[from..to].iter();
    let Some(first) = steps.next() else {
        return Ok(RigidTransform::identity());
    };
    Ok(steps.fold(*first, |acc, step| step.compose(&acc)))
}

/// Relative transforms `T_{k}^{k+1} = pose_{k+1}^{-1} * pose_k` from absolute
/// sensor poses (each mapping its sensor frame into a common world frame).
pub fn relative_chain(poses: &[RigidTransform]) -> Vec<RigidTransform> {
    poses.windows(2).map(|w| w[1].invert().compose(&w[0])).collect()
}

/// Maps every point through `transform`; intensity, labels and order carry over.
pub fn transform_cloud(cloud: &PointCloud, transform: &RigidTransform) -> PointCloud {
    if transform.is_identity() {
        return cloud.clone();
    }
    PointCloud {
        points: transform_points(&cloud.points, transform),
        intensity: cloud.intensity.clone(),
        labels: cloud.labels.clone(),
    }
}

pub fn transform_points(points: &[Point3], transform: &RigidTransform) -> Vec<Point3> {
    if transform.is_identity() {
        return points.to_vec();
    }
    points.iter().map(|p| transform.apply(p)).collect()
}
