//! Ideal pinhole camera with one focal length for both axes.
//!
//! Pixel `(u, v)` is the integer (column, row) position with the origin at
//! the top-left of the image. The camera frame is the scene frame: `+z`
//! looks into the scene, `+x` follows columns and `+y` follows rows.

use serde::{Deserialize, Serialize};

use crate::geometry::{Point3, PointCloud};
use crate::scalar::Real;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("point behind camera at index {index} (z = {z})")]
    BehindCamera { index: usize, z: f64 },
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch { expected: (usize, usize), actual: (usize, usize) },
    #[error("degenerate pointmap")]
    DegeneratePointmap,
    #[error("pointmap has no valid pixels")]
    NoValidPixels,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("raster of {width}x{height} needs {expected} values, got {actual}")]
    RasterSize { width: usize, height: usize, expected: usize, actual: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinholeIntrinsics<T> {
    pub focal: T,
    pub cx: T,
    pub cy: T,
    pub width: usize,
    pub height: usize,
}

impl<T: Real> PinholeIntrinsics<T> {
    pub fn new(focal: T, cx: T, cy: T, width: usize, height: usize) -> Result<Self, CameraError> {
        let cam = Self { focal, cx, cy, width, height };
        cam.validate()?;
        Ok(cam)
    }

    /// Principal point at the image center.
    pub fn centered(focal: T, width: usize, height: usize) -> Result<Self, CameraError> {
        let (cx, cy) = center_of(width, height);
        Self::new(focal, cx, cy, width, height)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.focal > T::zero() && self.focal.is_finite()) {
            return Err(CameraError::InvalidIntrinsics(format!("focal must be positive, got {}", self.focal)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(CameraError::InvalidIntrinsics("image size must be positive".into()));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(CameraError::InvalidIntrinsics("principal point must be finite".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn project_point(&self, p: &Point3<T>) -> [T; 2] {
        [self.focal * p[0] / p[2] + self.cx, self.focal * p[1] / p[2] + self.cy]
    }

    /// Direction `(x/z, y/z, 1)` of the ray through pixel `(u, v)`.
    #[inline]
    pub fn pixel_ray(&self, u: T, v: T) -> Point3<T> {
        [(u - self.cx) / self.focal, (v - self.cy) / self.focal, T::one()]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn cast<U: Real>(&self) -> PinholeIntrinsics<U> {
        PinholeIntrinsics {
            focal: U::lit(self.focal.as_f64()),
            cx: U::lit(self.cx.as_f64()),
            cy: U::lit(self.cy.as_f64()),
            width: self.width,
            height: self.height,
        }
    }
}

fn center_of<T: Real>(width: usize, height: usize) -> (T, T) {
    (T::from_usize(width).unwrap() / T::lit(2.0), T::from_usize(height).unwrap() / T::lit(2.0))
}

/// Row-major depth raster. Non-positive or non-finite values are invalid.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap<T> {
    pub width: usize,
    pub height: usize,
    pub values: Vec<T>,
    pub valid: Vec<bool>,
}

impl<T: Real> DepthMap<T> {
    pub fn from_raw(width: usize, height: usize, values: Vec<T>) -> Result<Self, CameraError> {
        check_raster(width, height, values.len())?;
        let valid = values.iter().map(|d| d.is_finite() && *d > T::zero()).collect();
        Ok(Self { width, height, values, valid })
    }

    pub fn get(&self, u: usize, v: usize) -> Option<T> {
        let i = v * self.width + u;
        self.valid[i].then(|| self.values[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Row-major grid of 3D points with per-pixel validity.
#[derive(Debug, Clone, PartialEq)]
pub struct Pointmap<T> {
    pub width: usize,
    pub height: usize,
    pub points: Vec<Point3<T>>,
    pub valid: Vec<bool>,
}

impl<T: Real> Pointmap<T> {
    /// Entries that are non-finite or have `z <= 0` are marked invalid.
    pub fn from_raw(width: usize, height: usize, points: Vec<Point3<T>>) -> Result<Self, CameraError> {
        check_raster(width, height, points.len())?;
        let valid = points
            .iter()
            .map(|p| p.iter().all(|c| c.is_finite()) && p[2] > T::zero())
            .collect();
        Ok(Self { width, height, points, valid })
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

fn check_raster(width: usize, height: usize, actual: usize) -> Result<(), CameraError> {
    let expected = width * height;
    if expected != actual || width == 0 || height == 0 {
        return Err(CameraError::RasterSize { width, height, expected, actual });
    }
    Ok(())
}

/// Projects every point to pixel coordinates. Points outside the image are
/// kept; only points at or behind the camera plane are rejected.
pub fn project<T: Real>(cloud: &PointCloud<T>, cam: &PinholeIntrinsics<T>) -> Result<Vec<[T; 2]>, CameraError> {
    cloud
        .iter()
        .enumerate()
        .map(|(index, p)| {
            if p[2] <= T::zero() {
                Err(CameraError::BehindCamera { index, z: p[2].as_f64() })
            } else {
                Ok(cam.project_point(p))
            }
        })
        .collect()
}

pub fn backproject_depth<T: Real>(depth: &DepthMap<T>, cam: &PinholeIntrinsics<T>) -> Result<Pointmap<T>, CameraError> {
    if (depth.width, depth.height) != cam.dims() {
        return Err(CameraError::DimensionMismatch { expected: cam.dims(), actual: (depth.width, depth.height) });
    }
    let mut points = Vec::with_capacity(depth.values.len());
    for v in 0..depth.height {
        for u in 0..depth.width {
            let i = v * depth.width + u;
            if depth.valid[i] {
                let d = depth.values[i];
                let ray = cam.pixel_ray(T::from_usize(u).unwrap(), T::from_usize(v).unwrap());
                points.push([ray[0] * d, ray[1] * d, d]);
            } else {
                points.push([T::zero(); 3]);
            }
        }
    }
    Ok(Pointmap { width: depth.width, height: depth.height, points, valid: depth.valid.clone() })
}

/// Closed-form least-squares focal length with the principal point fixed at
/// the image center: minimizes the summed squared distance between each
/// valid pixel offset `(u - cx, v - cy)` and `focal * (x/z, y/z)`.
pub fn estimate_focal<T: Real>(pm: &Pointmap<T>) -> Result<PinholeIntrinsics<T>, CameraError> {
    let (cx, cy): (T, T) = center_of(pm.width, pm.height);
    let (cx64, cy64) = (cx.as_f64(), cy.as_f64());
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for v in 0..pm.height {
        for u in 0..pm.width {
            let i = v * pm.width + u;
            if !pm.valid[i] {
                continue;
            }
            let p = pm.points[i].map(|c| c.as_f64());
            if p[2] <= 0.0 {
                return Err(CameraError::BehindCamera { index: i, z: p[2] });
            }
            let (a, b) = (p[0] / p[2], p[1] / p[2]);
            num += (u as f64 - cx64) * a + (v as f64 - cy64) * b;
            den += a * a + b * b;
        }
    }
    if den <= 1e-12 {
        return Err(CameraError::DegeneratePointmap);
    }
    PinholeIntrinsics::new(T::lit(num / den), cx, cy, pm.width, pm.height)
}

/// Valid pointmap entries in row-major order.
pub fn pointmap_to_cloud<T: Real>(pm: &Pointmap<T>) -> Result<PointCloud<T>, CameraError> {
    let pts: Vec<_> = pm
        .points
        .iter()
        .zip(&pm.valid)
        .filter(|(_, ok)| **ok)
        .map(|(p, _)| *p)
        .collect();
    if pts.is_empty() {
        return Err(CameraError::NoValidPixels);
    }
    Ok(PointCloud::from_finite(pts))
}
