//! Double-sphere camera model.

use nalgebra::{Point2, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::SensorGeometry;

#[derive(Debug, Error, PartialEq)]
pub enum CameraError {
    #[error("point ({0:.4}, {1:.4}, {2:.4}) is outside the projection domain")]
    ProjectionDomain(f64, f64, f64),
    #[error("pixel ({0:.3}, {1:.3}) is outside the unprojection domain")]
    UnprojectionDomain(f64, f64),
    #[error("pixel ({0:.3}, {1:.3}) unprojects to a ray behind the camera")]
    BehindCamera(f64, f64),
    #[error("invalid intrinsics: {0}")]
    Invalid(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DsIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub xi: f64,
    pub alpha_ds: f64,
    pub width: u16,
    pub height: u16,
}

impl DsIntrinsics {
    pub fn new(
        geometry: SensorGeometry,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        xi: f64,
        alpha_ds: f64,
    ) -> Result<Self, CameraError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            xi,
            alpha_ds,
            width: geometry.width,
            height: geometry.height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Pinhole intrinsics with the principal point at the image center and
    /// a focal length giving `hfov_deg` across the width.
    pub fn from_hfov(
        geometry: SensorGeometry,
        hfov_deg: f64,
        xi: f64,
        alpha_ds: f64,
    ) -> Result<Self, CameraError> {
        let f = geometry.width as f64 / 2.0 / (hfov_deg.to_radians() / 2.0).tan();
        let cx = (geometry.width as f64 - 1.0) / 2.0;
        let cy = (geometry.height as f64 - 1.0) / 2.0;
        Self::new(geometry, f, f, cx, cy, xi, alpha_ds)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(CameraError::Invalid("focal lengths must be positive"));
        }
        if !(0.0..1.0).contains(&self.alpha_ds) {
            return Err(CameraError::Invalid("alpha_ds must lie in [0, 1)"));
        }
        if !self.xi.is_finite() || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(CameraError::Invalid("non-finite parameter"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(CameraError::Invalid("empty sensor"));
        }
        Ok(())
    }

    pub fn geometry(&self) -> SensorGeometry {
        SensorGeometry {
            width: self.width,
            height: self.height,
        }
    }

    /// Geometric-mean focal length.
    pub fn focal(&self) -> f64 {
        (self.fx * self.fy).sqrt()
    }

    pub fn in_image(&self, px: Point2<f64>) -> bool {
        px.x >= -0.5
            && px.y >= -0.5
            && px.x < self.width as f64 - 0.5
            && px.y < self.height as f64 - 0.5
    }

    fn w2(&self) -> f64 {
        let a = self.alpha_ds;
        let w1 = if a <= 0.5 {
            a / (1.0 - a)
        } else {
            (1.0 - a) / a
        };
        (w1 + self.xi) / (2.0 * w1 * self.xi + self.xi * self.xi + 1.0).sqrt()
    }

    pub fn project(&self, p: &Vector3<f64>) -> Result<Point2<f64>, CameraError> {
        let (x, y, z) = (p.x, p.y, p.z);
        let (xi, a) = (self.xi, self.alpha_ds);
        let d1 = p.norm();
        if !(d1 > 0.0) || !(z > -self.w2() * d1) {
            return Err(CameraError::ProjectionDomain(x, y, z));
        }
        let k = xi * d1 + z;
        let d2 = (x * x + y * y + k * k).sqrt();
        let den = a * d2 + (1.0 - a) * k;
        if !(den > 0.0) {
            return Err(CameraError::ProjectionDomain(x, y, z));
        }
        Ok(Point2::new(
            self.fx * x / den + self.cx,
            self.fy * y / den + self.cy,
        ))
    }

    /// Unit ray through `px`.
    pub fn unproject(&self, px: &Point2<f64>) -> Result<Vector3<f64>, CameraError> {
        let (xi, a) = (self.xi, self.alpha_ds);
        let mx = (px.x - self.cx) / self.fx;
        let my = (px.y - self.cy) / self.fy;
        let r2 = mx * mx + my * my;
        if a > 0.5 && r2 > 1.0 / (2.0 * a - 1.0) {
            return Err(CameraError::UnprojectionDomain(px.x, px.y));
        }
        let mz = (1.0 - a * a * r2) / (a * (1.0 - (2.0 * a - 1.0) * r2).sqrt() + 1.0 - a);
        let disc = mz * mz + (1.0 - xi * xi) * r2;
        if !(disc >= 0.0) {
            return Err(CameraError::UnprojectionDomain(px.x, px.y));
        }
        let s = (mz * xi + disc.sqrt()) / (mz * mz + r2);
        let ray = Vector3::new(s * mx, s * my, s * mz - xi);
        let n = ray.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(CameraError::UnprojectionDomain(px.x, px.y));
        }
        Ok(ray / n)
    }

    /// Normalized image coordinates `(x/z, y/z)` of the ray through `px`.
    pub fn undistort_to_normalized(&self, px: &Point2<f64>) -> Result<Vector2<f64>, CameraError> {
        let r = self.unproject(px)?;
        if r.z <= 0.0 {
            return Err(CameraError::BehindCamera(px.x, px.y));
        }
        Ok(Vector2::new(r.x / r.z, r.y / r.z))
    }
}
