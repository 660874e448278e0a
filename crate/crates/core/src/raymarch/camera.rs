use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{DMat3, DQuat, DVec3, Rigid};

/// Pinhole camera; local axes are x right, y down, z forward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub focal: [f64; 2],
    pub principal: [f64; 2],
    /// Camera-to-world transform.
    pub pose: Rigid,
}

impl Camera {
    pub fn new(width: usize, height: usize, focal: [f64; 2], principal: [f64; 2], pose: Rigid) -> Result<Self> {
        let cam = Camera { width, height, focal, principal, pose };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid(format!("image size {}x{}", self.width, self.height)));
        }
        if !(self.focal[0] > 0.0 && self.focal[1] > 0.0) {
            return Err(Error::invalid(format!("focal length {:?} must be positive", self.focal)));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`, vertical field of view in radians.
    pub fn look_at(eye: DVec3, target: DVec3, up: DVec3, fov_y: f64, width: usize, height: usize) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize()
            .ok_or_else(|| Error::invalid("camera eye coincides with target"))?;
        let right = forward
            .cross(up)
            .try_normalize()
            .ok_or_else(|| Error::invalid("camera up vector parallel to view direction"))?;
        let down = forward.cross(right);
        let rot = DQuat::from_mat3(&DMat3::from_cols(right, down, forward));
        let f = 0.5 * height as f64 / (0.5 * fov_y).tan();
        Camera::new(width, height, [f, f], [0.5 * width as f64, 0.5 * height as f64], Rigid::new(rot, eye))
    }

    pub fn position(&self) -> DVec3 {
        self.pose.translation
    }

    /// World-space ray through the center of pixel `(x, y)`.
    pub fn ray(&self, x: usize, y: usize) -> (DVec3, DVec3) {
        let d = DVec3::new(
            (x as f64 + 0.5 - self.principal[0]) / self.focal[0],
            (y as f64 + 0.5 - self.principal[1]) / self.focal[1],
            1.0,
        );
        (self.position(), self.pose.vector(d).normalize())
    }

    /// Pixel coordinates of a world point, `None` behind the camera.
    pub fn project(&self, p: DVec3) -> Option<[f64; 2]> {
        let c = self.pose.inverse().point(p);
        (c.z > 1e-12).then(|| [self.focal[0] * c.x / c.z + self.principal[0], self.focal[1] * c.y / c.z + self.principal[1]])
    }

    /// Same camera with every world coordinate mapped through `rigid`.
    pub fn transformed(&self, rigid: &Rigid) -> Camera {
        Camera { pose: rigid.then(&self.pose), ..self.clone() }
    }
}
