use serde::{Deserialize, Serialize};

use super::{GeometryError, Point3, PointCloud};
use crate::scalar::Real;

pub type Mat3<T> = [[T; 3]; 3];

/// Euler angles in radians, applied about X, then Y, then Z:
/// `R = Rz(rz) * Ry(ry) * Rx(rx)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerRotation<T> {
    pub rx: T,
    pub ry: T,
    pub rz: T,
}

impl<T: Real> EulerRotation<T> {
    pub fn new(rx: T, ry: T, rz: T) -> Self {
        Self { rx, ry, rz }
    }

    pub fn identity() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn matrix(&self) -> Mat3<T> {
        self.matrix_and_partials().0
    }

    /// Rotation matrix and its partial derivatives with respect to rx, ry, rz.
    pub fn matrix_and_partials(&self) -> (Mat3<T>, [Mat3<T>; 3]) {
        let (sx, cx) = self.rx.sin_cos();
        let (sy, cy) = self.ry.sin_cos();
        let (sz, cz) = self.rz.sin_cos();
        let o = T::zero();
        let l = T::one();
        let rx = [[l, o, o], [o, cx, -sx], [o, sx, cx]];
        let ry = [[cy, o, sy], [o, l, o], [-sy, o, cy]];
        let rz = [[cz, -sz, o], [sz, cz, o], [o, o, l]];
        let drx = [[o, o, o], [o, -sx, -cx], [o, cx, -sx]];
        let dry = [[-sy, o, cy], [o, o, o], [-cy, o, -sy]];
        let drz = [[-sz, -cz, o], [cz, -sz, o], [o, o, o]];
        let zy = mat_mul(&rz, &ry);
        let r = mat_mul(&zy, &rx);
        let d_x = mat_mul(&zy, &drx);
        let d_y = mat_mul(&mat_mul(&rz, &dry), &rx);
        let d_z = mat_mul(&mat_mul(&drz, &ry), &rx);
        (r, [d_x, d_y, d_z])
    }

    pub fn is_finite(&self) -> bool {
        self.rx.is_finite() && self.ry.is_finite() && self.rz.is_finite()
    }
}

/// Per-instance layout: translation, Euler rotation and isotropic scale.
/// A canonical point `p` is placed at `s * R * p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayoutParams<T> {
    pub translation: Point3<T>,
    pub rotation: EulerRotation<T>,
    pub scale: T,
}

impl<T: Real> Default for LayoutParams<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> LayoutParams<T> {
    pub fn new(translation: Point3<T>, rotation: EulerRotation<T>, scale: T) -> Result<Self, GeometryError> {
        let p = Self { translation, rotation, scale };
        p.validate()?;
        Ok(p)
    }

    pub fn identity() -> Self {
        Self { translation: [T::zero(); 3], rotation: EulerRotation::identity(), scale: T::one() }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.translation.iter().all(|c| c.is_finite()) && self.rotation.is_finite()) {
            return Err(GeometryError::NonFiniteParams);
        }
        if !(self.scale > T::zero() && self.scale.is_finite()) {
            return Err(GeometryError::InvalidScale(self.scale.as_f64()));
        }
        Ok(())
    }

    /// Parameter vector in optimizer order `(tx, ty, tz, rx, ry, rz, s)`.
    pub fn to_array(&self) -> [T; 7] {
        let t = self.translation;
        let r = self.rotation;
        [t[0], t[1], t[2], r.rx, r.ry, r.rz, self.scale]
    }

    pub fn from_array(v: [T; 7]) -> Self {
        Self {
            translation: [v[0], v[1], v[2]],
            rotation: EulerRotation::new(v[3], v[4], v[5]),
            scale: v[6],
        }
    }

    #[inline]
    pub fn transform_point(&self, rot: &Mat3<T>, p: &Point3<T>) -> Point3<T> {
        let r = mat_vec(rot, p);
        [0, 1, 2].map(|k| self.scale * r[k] + self.translation[k])
    }

    /// Maps a placed point back into the canonical frame: `R^T (q - t) / s`.
    #[inline]
    pub fn inverse_point(&self, rot: &Mat3<T>, q: &Point3<T>) -> Point3<T> {
        let d = [0, 1, 2].map(|k| (q[k] - self.translation[k]) / self.scale);
        mat_t_vec(rot, &d)
    }
}

pub fn apply_transform<T: Real>(cloud: &PointCloud<T>, params: &LayoutParams<T>) -> Result<PointCloud<T>, GeometryError> {
    params.validate()?;
    let rot = params.rotation.matrix();
    let pts = cloud.iter().map(|p| params.transform_point(&rot, p)).collect();
    PointCloud::new(pts)
}

/// Angle of the relative rotation `R(a)^T R(b)`, in radians within `[0, pi]`.
pub fn rotation_geodesic_error<T: Real>(a: &EulerRotation<T>, b: &EulerRotation<T>) -> T {
    geodesic_between(&a.matrix(), &b.matrix())
}

pub(crate) fn geodesic_between<T: Real>(ra: &Mat3<T>, rb: &Mat3<T>) -> T {
    // rel = ra^T rb; the angle is atan2 of the skew part over the trace part,
    // which equals acos((tr - 1) / 2) but stays accurate near 0 and pi.
    let mut rel = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            rel[i][j] = ra[0][i] * rb[0][j] + ra[1][i] * rb[1][j] + ra[2][i] * rb[2][j];
        }
    }
    let two = T::lit(2.0);
    let cos = (rel[0][0] + rel[1][1] + rel[2][2] - T::one()) / two;
    let w = [rel[2][1] - rel[1][2], rel[0][2] - rel[2][0], rel[1][0] - rel[0][1]];
    let sin = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt() / two;
    sin.atan2(cos).max(T::zero()).min(T::PI())
}

#[inline]
pub(crate) fn mat_mul<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

#[inline]
pub(crate) fn mat_vec<T: Real>(m: &Mat3<T>, p: &Point3<T>) -> Point3<T> {
    [0, 1, 2].map(|i| m[i][0] * p[0] + m[i][1] * p[1] + m[i][2] * p[2])
}

#[inline]
pub(crate) fn mat_t_vec<T: Real>(m: &Mat3<T>, p: &Point3<T>) -> Point3<T> {
    [0, 1, 2].map(|i| m[0][i] * p[0] + m[1][i] * p[1] + m[2][i] * p[2])
}
