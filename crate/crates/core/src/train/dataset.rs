//! Posed reference images. On disk: `cameras.csv` plus one PPM per view.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::GaussianCloud;
use crate::image::RenderedImage;
use crate::render::{render, RenderOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub name: String,
    pub camera: Camera,
    pub image: RenderedImage,
    pub test: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub views: Vec<View>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CameraRecord {
    name: String,
    split: String,
    width: usize,
    height: usize,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    near: f64,
    r00: f64,
    r01: f64,
    r02: f64,
    r10: f64,
    r11: f64,
    r12: f64,
    r20: f64,
    r21: f64,
    r22: f64,
    t0: f64,
    t1: f64,
    t2: f64,
}

impl Dataset {
    /// Renders `scene` from orbit cameras described by `config`.
    pub fn from_scene(scene: &GaussianCloud, config: &TrainConfig) -> Result<Self> {
        let cameras = Camera::orbit(
            config.num_views,
            config.camera_radius,
            config.fov_y_deg.to_radians(),
            config.width,
            config.height,
        )?;
        let options = RenderOptions {
            background: config.background,
            ..RenderOptions::default()
        };
        let views = cameras
            .into_iter()
            .enumerate()
            .map(|(i, camera)| {
                let (image, _) = render(scene, &camera, None, None, &options)?;
                Ok(View {
                    name: format!("view_{i:03}"),
                    camera,
                    image: image.clamped(),
                    test: config.test_every > 0 && i % config.test_every == config.test_every - 1,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let ds = Dataset { views };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.train().next().is_none() {
            return Err(Error::Config("dataset has no training views".into()));
        }
        for v in &self.views {
            v.camera.validate()?;
            if v.image.width != v.camera.width || v.image.height != v.camera.height {
                return Err(Error::Shape(format!(
                    "view {}: image is {}x{}, camera is {}x{}",
                    v.name, v.image.width, v.image.height, v.camera.width, v.camera.height
                )));
            }
        }
        Ok(())
    }

    pub fn train(&self) -> impl Iterator<Item = &View> {
        self.views.iter().filter(|v| !v.test)
    }

    /// Held-out views, or all views when nothing is held out.
    pub fn test(&self) -> Vec<&View> {
        let held: Vec<&View> = self.views.iter().filter(|v| v.test).collect();
        if held.is_empty() {
            self.views.iter().collect()
        } else {
            held
        }
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("cameras.csv")).map_err(csv_error)?;
        for v in &self.views {
            let r = &v.camera.rotation;
            let t = &v.camera.translation;
            w.serialize(CameraRecord {
                name: v.name.clone(),
                split: if v.test { "test" } else { "train" }.into(),
                width: v.camera.width,
                height: v.camera.height,
                fx: v.camera.fx,
                fy: v.camera.fy,
                cx: v.camera.cx,
                cy: v.camera.cy,
                near: v.camera.near,
                r00: r[(0, 0)],
                r01: r[(0, 1)],
                r02: r[(0, 2)],
                r10: r[(1, 0)],
                r11: r[(1, 1)],
                r12: r[(1, 2)],
                r20: r[(2, 0)],
                r21: r[(2, 1)],
                r22: r[(2, 2)],
                t0: t[0],
                t1: t[1],
                t2: t[2],
            })
            .map_err(csv_error)?;
            v.image.save_ppm(dir.join(format!("{}.ppm", v.name)))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut r = csv::Reader::from_path(dir.join("cameras.csv")).map_err(csv_error)?;
        let mut views = Vec::new();
        for rec in r.deserialize() {
            let rec: CameraRecord = rec.map_err(csv_error)?;
            let camera = Camera {
                rotation: Matrix3::new(
                    rec.r00, rec.r01, rec.r02, rec.r10, rec.r11, rec.r12, rec.r20, rec.r21, rec.r22,
                ),
                translation: Vector3::new(rec.t0, rec.t1, rec.t2),
                fx: rec.fx,
                fy: rec.fy,
                cx: rec.cx,
                cy: rec.cy,
                width: rec.width,
                height: rec.height,
                near: rec.near,
            };
            let image = RenderedImage::load_ppm(dir.join(format!("{}.ppm", rec.name)))?;
            views.push(View {
                name: rec.name,
                camera,
                image,
                test: match rec.split.as_str() {
                    "train" => false,
                    "test" => true,
                    other => return Err(Error::Config(format!("unknown split `{other}`"))),
                },
            });
        }
        let ds = Dataset { views };
        ds.validate()?;
        Ok(ds)
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Config(format!("camera file: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::scene::synthetic_scene;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn save_load_roundtrip() {
        let cfg = TrainConfig {
            num_views: 5,
            test_every: 2,
            width: 16,
            height: 12,
            ..TrainConfig::default()
        };
        let scene = synthetic_scene(2, 20, &mut ChaCha8Rng::seed_from_u64(0));
        let ds = Dataset::from_scene(&scene, &cfg).unwrap();
        assert_eq!(ds.test().len(), 2);
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back.views.len(), 5);
        for (a, b) in ds.views.iter().zip(&back.views) {
            assert_eq!(a.camera, b.camera);
            assert_eq!(a.test, b.test);
            // PPM stores 8 bits per channel.
            assert!(a.image.data.iter().zip(&b.image.data).all(|(x, y)| (x - y).abs() <= 0.5 / 255.0 + 1e-12));
        }
    }
}
