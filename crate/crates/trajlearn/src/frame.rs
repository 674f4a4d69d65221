//! Task frames: rigid transforms that re-express pose data in local
//! coordinate systems.
//!
//! A frame acts blockwise on a descriptor: every `Euclidean {3}` block is
//! mapped by `R x + b`, every `Sphere {4}` block (unit quaternion, scalar
//! first) by left multiplication with the frame's rotation quaternion. The
//! identity frame is valid on any descriptor; non-identity frames require all
//! blocks to be one of those two kinds.

use nalgebra::{DMatrix, DVector, Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::manifold::{Block, ManifoldDescriptor, Point};

/// Rigid transform (rotation + translation) with the rotation kept in both
/// matrix and quaternion form.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskFrame {
    rotation: Matrix3<f64>,
    /// Same rotation as a unit quaternion, scalar part first.
    quat: [f64; 4],
    translation: Vector3<f64>,
    identity: bool,
}

impl TaskFrame {
    pub fn identity() -> Self {
        TaskFrame {
            rotation: Matrix3::identity(),
            quat: [1.0, 0.0, 0.0, 0.0],
            translation: Vector3::zeros(),
            identity: true,
        }
    }

    /// Builds a frame from a rotation matrix; rejects matrices that are not
    /// orthonormal with determinant +1 (within 1e-9).
    pub fn from_rotation(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let residual = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        if residual > 1e-9 {
            return Err(Error::InvalidFrame(format!(
                "rotation is not orthonormal (residual {residual:.3e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidFrame(format!(
                "rotation determinant is {det}, expected +1"
            )));
        }
        let uq = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rotation));
        let q = [uq.w, uq.i, uq.j, uq.k];
        Ok(Self::assemble(rotation, q, translation))
    }

    /// Builds a frame from a unit quaternion (scalar first). Small norm drift
    /// (up to 1e-6) is renormalized away.
    pub fn from_quaternion(quat: [f64; 4], translation: Vector3<f64>) -> Result<Self> {
        let norm = (quat.iter().map(|x| x * x).sum::<f64>()).sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidFrame(format!(
                "quaternion norm is {norm}, expected 1"
            )));
        }
        let q = [quat[0] / norm, quat[1] / norm, quat[2] / norm, quat[3] / norm];
        let uq = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
        let rotation = uq.to_rotation_matrix().into_inner();
        Ok(Self::assemble(rotation, q, translation))
    }

    fn assemble(rotation: Matrix3<f64>, quat: [f64; 4], translation: Vector3<f64>) -> Self {
        let identity = rotation == Matrix3::identity() && translation == Vector3::zeros();
        TaskFrame { rotation, quat, translation, identity }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn quaternion(&self) -> [f64; 4] {
        self.quat
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn is_identity(&self) -> bool {
        self.identity
    }

    /// `self` after `other`: `compose(a, b).apply(p) == a.apply(b.apply(p))`.
    pub fn compose(&self, other: &TaskFrame) -> TaskFrame {
        let rotation = self.rotation * other.rotation;
        let translation = self.rotation * other.translation + self.translation;
        let quat = quat_mul(self.quat, other.quat);
        Self::assemble(rotation, quat, translation)
    }

    pub fn inverse(&self) -> TaskFrame {
        let rotation = self.rotation.transpose();
        let translation = -(rotation * self.translation);
        let quat = [self.quat[0], -self.quat[1], -self.quat[2], -self.quat[3]];
        Self::assemble(rotation, quat, translation)
    }

    /// Checks that a non-identity frame can act on every block of `m`.
    pub fn check_compatible(&self, m: &ManifoldDescriptor) -> Result<()> {
        if self.identity {
            return Ok(());
        }
        for b in m.blocks() {
            match *b {
                Block::Euclidean { dim: 3 } | Block::Sphere { ambient_dim: 4 } => {}
                other => {
                    return Err(Error::InvalidFrame(format!(
                        "frame transforms act on e:3 and s:4 blocks only, descriptor has {other:?}"
                    )))
                }
            }
        }
        Ok(())
    }

    /// Maps a point from frame coordinates to world coordinates.
    pub fn apply(&self, m: &ManifoldDescriptor, p: &Point) -> Result<Point> {
        if p.coords().len() != m.point_dim() {
            return Err(Error::InvalidArgument(format!(
                "point has {} coordinates, descriptor expects {}",
                p.coords().len(),
                m.point_dim()
            )));
        }
        if self.identity {
            return Ok(p.clone());
        }
        self.check_compatible(m)?;
        let mut out = p.coords().clone();
        for (block, r) in m.block_ranges() {
            match block {
                Block::Euclidean { .. } => {
                    let x = Vector3::new(out[r.start], out[r.start + 1], out[r.start + 2]);
                    let y = self.rotation * x + self.translation;
                    out[r.start] = y[0];
                    out[r.start + 1] = y[1];
                    out[r.start + 2] = y[2];
                }
                Block::Sphere { .. } => {
                    let q = [out[r.start], out[r.start + 1], out[r.start + 2], out[r.start + 3]];
                    let rotated = quat_mul(self.quat, q);
                    for (i, val) in rotated.iter().enumerate() {
                        out[r.start + i] = *val;
                    }
                }
            }
        }
        Ok(Point::from_coords(out))
    }

    /// Maps a world point into frame coordinates.
    pub fn apply_inverse(&self, m: &ManifoldDescriptor, p: &Point) -> Result<Point> {
        self.inverse().apply(m, p)
    }

    /// Differential of `apply` on tangent coordinates: block-diagonal with
    /// the rotation matrix on Euclidean blocks and the quaternion
    /// left-multiplication matrix on sphere blocks. Constant in the base
    /// point because both block actions are linear, and orthogonal, so
    /// pushing a covariance forward preserves its eigenvalues.
    pub fn pushforward_matrix(&self, m: &ManifoldDescriptor) -> Result<DMatrix<f64>> {
        let d = m.point_dim();
        let mut g = DMatrix::identity(d, d);
        if self.identity {
            return Ok(g);
        }
        self.check_compatible(m)?;
        for (block, r) in m.block_ranges() {
            match block {
                Block::Euclidean { .. } => {
                    for i in 0..3 {
                        for j in 0..3 {
                            g[(r.start + i, r.start + j)] = self.rotation[(i, j)];
                        }
                    }
                }
                Block::Sphere { .. } => {
                    let l = quat_left_matrix(self.quat);
                    for i in 0..4 {
                        for j in 0..4 {
                            g[(r.start + i, r.start + j)] = l[(i, j)];
                        }
                    }
                }
            }
        }
        Ok(g)
    }

    /// Pushes a tangent-space covariance through the frame.
    pub fn apply_covariance(&self, m: &ManifoldDescriptor, cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if self.identity {
            return Ok(cov.clone());
        }
        let g = self.pushforward_matrix(m)?;
        Ok(&g * cov * g.transpose())
    }
}

/// Hamilton product, scalar part first.
pub fn quat_mul(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

/// Matrix of left multiplication by `q`: `quat_mul(q, p) == L(q) p`.
fn quat_left_matrix(q: [f64; 4]) -> DMatrix<f64> {
    let [w, x, y, z] = q;
    DMatrix::from_row_slice(
        4,
        4,
        &[
            w, -x, -y, -z, //
            x, w, -z, y, //
            y, z, w, -x, //
            z, -y, x, w,
        ],
    )
}

/// Rotation angle between two unit quaternions, in radians, double-cover
/// aware. Stable near zero where an arccos formulation would lose precision.
pub fn quat_angle(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let dot: f64 = a.dot(b);
    let sign = if dot < 0.0 { -1.0 } else { 1.0 };
    let aligned = b * sign;
    // half the sphere angle via atan2(2 sin, 2 cos); the rotation angle is
    // twice the sphere angle because of the double cover
    let diff = (a - &aligned).norm();
    let sum = (a + &aligned).norm();
    4.0 * diff.atan2(sum)
}
