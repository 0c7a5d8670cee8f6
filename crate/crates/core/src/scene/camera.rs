use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use super::SceneError;

/// Pinhole camera. Pixel (x, y) has its center at (x + 0.5, y + 0.5).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major rigid transform from world to camera coordinates.
    /// The camera looks down +z, with +x right and +y down in the image.
    pub world_to_cam: [[f64; 4]; 4],
}

impl Camera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize, world_to_cam: [[f64; 4]; 4]) -> Result<Self, SceneError> {
        let cam = Self { fx, fy, cx, cy, width, height, world_to_cam };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at the world origin looking down +z.
    pub fn identity_pose(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self, SceneError> {
        let mut m = [[0.0; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Self::new(fx, fy, cx, cy, width, height, m)
    }

    /// Camera at `eye` looking at `target`, with `up` roughly image-up.
    /// Principal point at the image center; `fov_x` in radians.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>, fov_x: f64, width: usize, height: usize) -> Result<Self, SceneError> {
        let forward = (target - eye).try_normalize(1e-12).ok_or_else(|| SceneError::InvalidCamera("eye equals target".into()))?;
        let right = forward.cross(&up).try_normalize(1e-12).ok_or_else(|| SceneError::InvalidCamera("up is parallel to the view direction".into()))?;
        // image y points down
        let down = forward.cross(&right);
        let rot = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -(rot * eye);
        let mut m = [[0.0; 4]; 4];
        for r in 0..3 {
            for c in 0..3 {
                m[r][c] = rot[(r, c)];
            }
            m[r][3] = t[r];
        }
        m[3][3] = 1.0;
        let f = width as f64 / (2.0 * (fov_x / 2.0).tan());
        Self::new(f, f, width as f64 / 2.0, height as f64 / 2.0, width, height, m)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |msg: String| Err(SceneError::InvalidCamera(msg));
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return bad(format!("focal lengths must be positive, got ({}, {})", self.fx, self.fy));
        }
        if self.width == 0 || self.height == 0 {
            return bad(format!("image size {}x{} is empty", self.width, self.height));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return bad("non-finite principal point".into());
        }
        let r = self.rotation();
        let err = (r * r.transpose() - Matrix3::identity()).abs().max();
        if !(err <= 1e-6) {
            return bad(format!("rotation block is not orthonormal (error {err:e})"));
        }
        if (r.determinant() - 1.0).abs() > 1e-6 {
            return bad("rotation block is a reflection".into());
        }
        let m = &self.world_to_cam;
        if m[3] != [0.0, 0.0, 0.0, 1.0] || !m.iter().flatten().all(|v| v.is_finite()) {
            return bad("world_to_cam is not a rigid transform".into());
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        let m = &self.world_to_cam;
        Matrix4::from_fn(|r, c| m[r][c])
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        let m = &self.world_to_cam;
        Matrix3::from_fn(|r, c| m[r][c])
    }

    pub fn translation(&self) -> Vector3<f64> {
        let m = &self.world_to_cam;
        Vector3::new(m[0][3], m[1][3], m[2][3])
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p + self.translation()
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_centers_target() {
        let cam = Camera::look_at(Vector3::new(0.0, -3.0, -4.0), Vector3::zeros(), Vector3::new(0.0, -1.0, 0.0), 1.0, 64, 48).unwrap();
        let p = cam.to_camera(&Vector3::zeros());
        assert!((p.x).abs() < 1e-12 && (p.y).abs() < 1e-12);
        assert!((p.z - 5.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_intrinsics_and_pose() {
        assert!(Camera::identity_pose(0.0, 1.0, 0.0, 0.0, 4, 4).is_err());
        assert!(Camera::identity_pose(1.0, 1.0, 0.0, 0.0, 0, 4).is_err());
        let mut m = [[0.0; 4]; 4];
        m[0][0] = 2.0;
        m[1][1] = 1.0;
        m[2][2] = 1.0;
        m[3][3] = 1.0;
        assert!(Camera::new(1.0, 1.0, 0.0, 0.0, 4, 4, m).is_err());
    }
}
