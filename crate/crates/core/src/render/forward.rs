use rayon::prelude::*;

use super::project::{project_all, tile_grid, ProjectedGaussian};
use super::{QuantizedView, RenderOptions, SplatInputs, MIN_CONTRIBUTION, TILE_SIZE, TRANSMITTANCE_STOP};
use crate::camera::Camera;
use crate::error::Result;
use crate::gaussian::GaussianCloud;
use crate::image::RenderedImage;
use crate::pruning::MaskSet;

/// One Gaussian composited at one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contribution {
    pub gaussian: u32,
    /// Position of the Gaussian in its tile's depth-sorted list.
    pub slot: u32,
    /// 2D Gaussian falloff `M(p)` at the pixel.
    pub falloff: f64,
    /// `sigma = alpha * M(p)`.
    pub sigma: f64,
    /// Transmittance before this Gaussian was composited.
    pub transmittance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TileTape {
    /// Gaussian ids overlapping the tile, sorted front to back.
    pub gaussians: Vec<u32>,
    /// `(pixel index, first contribution, contribution count)` per pixel.
    pub pixels: Vec<(u32, u32, u32)>,
    pub contributions: Vec<Contribution>,
}

/// Forward-pass record consumed by [`super::render_backward`].
#[derive(Debug, Clone)]
pub struct RenderTape {
    pub(crate) inputs: SplatInputs,
    pub(crate) camera: Camera,
    pub(crate) options: RenderOptions,
    pub projected: Vec<ProjectedGaussian>,
    pub tiles: Vec<TileTape>,
    /// Transmittance left after compositing, per pixel.
    pub final_transmittance: Vec<f64>,
}

impl RenderTape {
    pub fn width(&self) -> usize {
        self.camera.width
    }

    pub fn height(&self) -> usize {
        self.camera.height
    }

    pub fn num_gaussians(&self) -> usize {
        self.projected.len()
    }

    /// Ordered contributions at pixel `(x, y)`.
    pub fn pixel_contributions(&self, x: usize, y: usize) -> &[Contribution] {
        let (tw, _) = tile_grid(&self.camera);
        let tile = &self.tiles[(y / TILE_SIZE) * tw + x / TILE_SIZE];
        let idx = (y * self.camera.width + x) as u32;
        let &(_, start, len) = tile
            .pixels
            .iter()
            .find(|p| p.0 == idx)
            .expect("pixel belongs to its tile");
        &tile.contributions[start as usize..(start + len) as usize]
    }

    /// Ids of every Gaussian that contributes to at least one pixel.
    pub fn contributing_gaussians(&self) -> Vec<u32> {
        let mut seen = vec![false; self.projected.len()];
        for t in &self.tiles {
            for c in &t.contributions {
                seen[c.gaussian as usize] = true;
            }
        }
        (0..seen.len() as u32).filter(|&i| seen[i as usize]).collect()
    }
}

fn build_tile_lists(projected: &[ProjectedGaussian], cam: &Camera) -> Vec<Vec<u32>> {
    let (tw, th) = tile_grid(cam);
    let mut lists = vec![Vec::new(); tw * th];
    for (i, g) in projected.iter().enumerate() {
        if g.culled {
            continue;
        }
        let (x0, y0, x1, y1) = g.tiles;
        for ty in y0..=y1 {
            for tx in x0..=x1 {
                lists[ty * tw + tx].push(i as u32);
            }
        }
    }
    for list in &mut lists {
        // Ids are pushed in increasing order, so a stable sort on depth breaks
        // ties by original index.
        list.sort_by(|&a, &b| projected[a as usize].depth.total_cmp(&projected[b as usize].depth));
    }
    lists
}

fn rasterize_tile(
    tile_index: usize,
    gaussians: Vec<u32>,
    projected: &[ProjectedGaussian],
    cam: &Camera,
    options: &RenderOptions,
) -> (TileTape, Vec<(usize, [f64; 3], f64)>) {
    let (tw, _) = tile_grid(cam);
    let (tx, ty) = (tile_index % tw, tile_index / tw);
    let x_end = ((tx + 1) * TILE_SIZE).min(cam.width);
    let y_end = ((ty + 1) * TILE_SIZE).min(cam.height);

    // Below this exponent a Gaussian cannot reach the contribution cutoff.
    let cutoff_power: Vec<f64> = gaussians
        .iter()
        .map(|&g| (MIN_CONTRIBUTION / projected[g as usize].alpha).ln() - 1e-9)
        .collect();

    let mut tape = TileTape {
        gaussians,
        pixels: Vec::new(),
        contributions: Vec::new(),
    };
    let mut colors = Vec::new();
    for py in ty * TILE_SIZE..y_end {
        for px in tx * TILE_SIZE..x_end {
            let pix = [px as f64 + 0.5, py as f64 + 0.5];
            let start = tape.contributions.len();
            let mut t = 1.0;
            let mut rgb = [0.0; 3];
            for (slot, &gid) in tape.gaussians.iter().enumerate() {
                let g = &projected[gid as usize];
                let dx = pix[0] - g.mean[0];
                let dy = pix[1] - g.mean[1];
                let power = -0.5 * (g.conic[0] * dx * dx + g.conic[2] * dy * dy) - g.conic[1] * dx * dy;
                if power < cutoff_power[slot] || power > 0.0 {
                    continue;
                }
                let falloff = power.exp();
                let sigma = g.alpha * falloff;
                if sigma < MIN_CONTRIBUTION {
                    continue;
                }
                tape.contributions.push(Contribution {
                    gaussian: gid,
                    slot: slot as u32,
                    falloff,
                    sigma,
                    transmittance: t,
                });
                for c in 0..3 {
                    rgb[c] += g.color[c] * sigma * t;
                }
                t *= 1.0 - sigma;
                if options.early_stop && t < TRANSMITTANCE_STOP {
                    break;
                }
            }
            for c in 0..3 {
                rgb[c] += t * options.background[c];
            }
            let idx = py * cam.width + px;
            tape.pixels
                .push((idx as u32, start as u32, (tape.contributions.len() - start) as u32));
            colors.push((idx, rgb, t));
        }
    }
    (tape, colors)
}

/// Renders `cloud` from `cam`, optionally with masks and a quantized view.
pub fn render(
    cloud: &GaussianCloud,
    cam: &Camera,
    masks: Option<&MaskSet>,
    quantized: Option<&QuantizedView>,
    options: &RenderOptions,
) -> Result<(RenderedImage, RenderTape)> {
    cam.validate()?;
    let inputs = SplatInputs::resolve(cloud, masks, quantized)?;
    Ok(render_inputs(inputs, cam, options))
}

pub(crate) fn render_inputs(inputs: SplatInputs, cam: &Camera, options: &RenderOptions) -> (RenderedImage, RenderTape) {
    let projected = project_all(&inputs, cam);
    let lists = build_tile_lists(&projected, cam);
    let results: Vec<_> = lists
        .into_par_iter()
        .enumerate()
        .map(|(i, list)| rasterize_tile(i, list, &projected, cam, options))
        .collect();

    let mut image = RenderedImage::new(cam.width, cam.height);
    let mut alpha = vec![0.0; cam.width * cam.height];
    let mut final_t = vec![1.0; cam.width * cam.height];
    let mut tiles = Vec::with_capacity(results.len());
    for (tape, colors) in results {
        for (idx, rgb, t) in colors {
            image.data[idx * 3..idx * 3 + 3].copy_from_slice(&rgb);
            alpha[idx] = 1.0 - t;
            final_t[idx] = t;
        }
        tiles.push(tape);
    }
    image.alpha = Some(alpha);
    let tape = RenderTape {
        inputs,
        camera: cam.clone(),
        options: options.clone(),
        projected,
        tiles,
        final_transmittance: final_t,
    };
    (image, tape)
}
