//! Axis-angle, unit quaternion and rotation matrix conversions.
//!
//! Quaternions are stored `(w, x, y, z)` and kept in a canonical sign so
//! that `q` and `-q` share one representative.

use nalgebra::Matrix3;

use crate::error::{Result, StarError};
use crate::meshcore::{JointNeighborhood, KinematicTree};

const SMALL_ANGLE: f64 = 1e-12;
const TAYLOR_DERIV: f64 = 1e-3;
const UNIT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quaternion { w, x, y, z }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Quaternion::new(a[0], a[1], a[2], a[3])
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Whether this is the representative with `w >= 0` (ties broken on the
    /// first non-zero vector component).
    pub fn is_canonical(&self) -> bool {
        canonical_sign(self) > 0.0
    }

    pub fn canonical(self) -> Self {
        let s = canonical_sign(&self);
        Quaternion::new(s * self.w, s * self.x, s * self.y, s * self.z)
    }

    /// Axis-angle vector of the rotation, angle in `[0, pi]`.
    pub fn to_axis_angle(self) -> [f64; 3] {
        let q = self.canonical();
        let vn = (q.x * q.x + q.y * q.y + q.z * q.z).sqrt();
        if vn < SMALL_ANGLE {
            return [2.0 * q.x, 2.0 * q.y, 2.0 * q.z];
        }
        let angle = 2.0 * vn.atan2(q.w);
        let k = angle / vn;
        [k * q.x, k * q.y, k * q.z]
    }
}

fn canonical_sign(q: &Quaternion) -> f64 {
    if q.w > 0.0 {
        return 1.0;
    }
    if q.w < 0.0 {
        return -1.0;
    }
    for c in [q.x, q.y, q.z] {
        if c != 0.0 {
            return c.signum();
        }
    }
    1.0
}

/// Unit quaternion of an axis-angle rotation vector, in canonical sign.
pub fn axis_angle_to_quaternion(v: [f64; 3]) -> Result<Quaternion> {
    Ok(axis_angle_with_jacobian(v)?.0)
}

/// Canonical quaternion together with its derivative with respect to the
/// axis-angle components; `jac[c][a]` is `d q_c / d v_a` with `q` ordered
/// `(w, x, y, z)`.
pub fn axis_angle_with_jacobian(v: [f64; 3]) -> Result<(Quaternion, [[f64; 3]; 4])> {
    if v.iter().any(|c| !c.is_finite()) {
        return Err(StarError::invalid(format!(
            "axis-angle vector {v:?} is not finite"
        )));
    }
    let a2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    let a = a2.sqrt();

    // s = sin(a/2)/a, g = s'(a)/a
    let (w, s) = if a < SMALL_ANGLE {
        (1.0 - a2 / 8.0, 0.5 - a2 / 48.0)
    } else {
        ((0.5 * a).cos(), (0.5 * a).sin() / a)
    };
    let g = if a < TAYLOR_DERIV {
        -1.0 / 24.0 + a2 / 960.0
    } else {
        (0.5 * a * (0.5 * a).cos() - (0.5 * a).sin()) / (a2 * a)
    };

    let raw = Quaternion::new(w, s * v[0], s * v[1], s * v[2]);
    let mut jac = [[0.0; 3]; 4];
    for k in 0..3 {
        jac[0][k] = -0.5 * s * v[k];
        for c in 0..3 {
            jac[c + 1][k] = g * v[c] * v[k] + if c == k { s } else { 0.0 };
        }
    }
    let sign = canonical_sign(&raw);
    if sign < 0.0 {
        for row in jac.iter_mut() {
            for e in row.iter_mut() {
                *e = -*e;
            }
        }
    }
    Ok((raw.canonical(), jac))
}

/// Rotation matrix of a unit quaternion.
pub fn quaternion_to_matrix(q: Quaternion) -> Result<Matrix3<f64>> {
    let n = q.norm();
    if !n.is_finite() || (n - 1.0).abs() > UNIT_TOL {
        return Err(StarError::invalid(format!(
            "quaternion {:?} has norm {n}, expected 1",
            q.to_array()
        )));
    }
    Ok(rotation_matrix(&q))
}

pub(crate) fn rotation_matrix(q: &Quaternion) -> Matrix3<f64> {
    let Quaternion { w, x, y, z } = *q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Partial derivatives of [`rotation_matrix`] with respect to `w, x, y, z`.
pub(crate) fn rotation_matrix_partials(q: &Quaternion) -> [Matrix3<f64>; 4] {
    let Quaternion { w, x, y, z } = *q;
    let t = 2.0;
    [
        Matrix3::new(0.0, -t * z, t * y, t * z, 0.0, -t * x, -t * y, t * x, 0.0),
        Matrix3::new(0.0, t * y, t * z, t * y, -2.0 * t * x, -t * w, t * z, t * w, -2.0 * t * x),
        Matrix3::new(-2.0 * t * y, t * x, t * w, t * x, 0.0, t * z, -t * w, t * z, -2.0 * t * y),
        Matrix3::new(-2.0 * t * z, -t * w, t * x, t * w, -2.0 * t * z, t * y, t * x, t * y, 0.0),
    ]
}

/// Rotation matrix of an axis-angle vector and its three partials.
pub(crate) fn axis_angle_matrix_with_partials(
    v: [f64; 3],
) -> Result<(Quaternion, [[f64; 3]; 4], Matrix3<f64>, [Matrix3<f64>; 3])> {
    let (q, dq) = axis_angle_with_jacobian(v)?;
    let r = rotation_matrix(&q);
    let dr_dq = rotation_matrix_partials(&q);
    let mut dr = [Matrix3::zeros(); 3];
    for (a, out) in dr.iter_mut().enumerate() {
        for c in 0..4 {
            *out += dr_dq[c] * dq[c][a];
        }
    }
    Ok((q, dq, r, dr))
}

/// Feature fed to joint `j`'s corrective regressor: quaternion differences
/// from rest over `ne(j)` followed by the shape coefficient `beta2`.
pub fn pose_to_feature(
    pose: &[f64],
    tree: &KinematicTree,
    nbhd: &JointNeighborhood,
    j: usize,
    beta2: f64,
) -> Result<Vec<f64>> {
    let k = tree.num_joints();
    if pose.len() != 3 * k {
        return Err(StarError::invalid(format!(
            "pose has {} entries, expected {}",
            pose.len(),
            3 * k
        )));
    }
    let members = nbhd.get(j)?;
    let mut out = Vec::with_capacity(4 * members.len() + 1);
    for &m in members {
        let q = axis_angle_to_quaternion([pose[3 * m], pose[3 * m + 1], pose[3 * m + 2]])?;
        let rest = tree.rest_quaternions()[m];
        out.extend(
            q.to_array()
                .iter()
                .zip(rest.to_array())
                .map(|(a, b)| a - b),
        );
    }
    out.push(beta2);
    Ok(out)
}
