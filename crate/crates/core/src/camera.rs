use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Pinhole camera. Camera space is x right, y down, z forward; pixel
/// `(ix, iy)` samples the image plane at `(ix + 0.5, iy + 0.5)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    /// World-to-camera rotation.
    pub rotation: Matrix3<f64>,
    /// World-to-camera translation.
    pub translation: Vector3<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
}

impl Camera {
    /// Camera at `eye` looking at `target` with a vertical field of view in
    /// radians. The principal point is the image center.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        fov_y: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Domain("eye and target coincide".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Domain("up is parallel to the view direction".into()))?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        let focal = 0.5 * height as f64 / (0.5 * fov_y).tan();
        let cam = Camera {
            rotation,
            translation,
            fx: focal,
            fy: focal,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            width,
            height,
            near: 0.01,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Domain(format!(
                "image resolution {}x{} is empty",
                self.width, self.height
            )));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Domain("focal lengths must be positive".into()));
        }
        if !(self.near > 0.0) {
            return Err(Error::Domain("near plane must be positive".into()));
        }
        Ok(())
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn with_resolution(&self, width: usize, height: usize) -> Camera {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Camera {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
            ..self.clone()
        }
    }

    /// Cameras spread over a sphere of `radius` by a Fibonacci lattice, all
    /// looking at the origin.
    pub fn orbit(count: usize, radius: f64, fov_y: f64, width: usize, height: usize) -> Result<Vec<Camera>> {
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        (0..count)
            .map(|i| {
                // Keep away from the poles so `up` never aligns with the view.
                let t = (i as f64 + 0.5) / count as f64;
                let y = 0.85 * (1.0 - 2.0 * t);
                let r = (1.0 - y * y).sqrt();
                let phi = golden * i as f64;
                let eye = Vector3::new(r * phi.cos(), y, r * phi.sin()) * radius;
                Camera::look_at(eye, Vector3::zeros(), Vector3::new(0.0, -1.0, 0.0), fov_y, width, height)
            })
            .collect()
    }
}
