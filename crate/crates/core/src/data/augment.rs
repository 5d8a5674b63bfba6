//! Geometric training augmentation: scale, rotate, flip, crop (in that
//! order). Depth follows nearest-neighbour sampling and is divided by the
//! scale factor; colour is sampled bilinearly.

use super::SceneSample;
use crate::error::{Error, Result};
use crate::tensor::bilinear_resize;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    pub enabled: bool,
    /// Output `[height, width]`.
    pub crop: [usize; 2],
    pub flip_prob: f64,
    pub scale_range: [f64; 2],
    /// Rotation range in degrees.
    pub rotation_range: [f64; 2],
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            enabled: false,
            crop: [64, 64],
            flip_prob: 0.5,
            scale_range: [0.75, 1.25],
            rotation_range: [-10.0, 10.0],
            seed: 0,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        let [s0, s1] = self.scale_range;
        if !(s0 > 0.0 && s0 <= s1 && s1.is_finite()) {
            return Err(Error::Config(format!("scale range {:?} must be ordered and positive", self.scale_range)));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config(format!("flip probability {} outside [0, 1]", self.flip_prob)));
        }
        let [r0, r1] = self.rotation_range;
        if !(r0 <= r1 && r0.is_finite() && r1.is_finite()) {
            return Err(Error::Config(format!("rotation range {:?} must be ordered", self.rotation_range)));
        }
        if self.crop[0] == 0 || self.crop[1] == 0 {
            return Err(Error::Config("crop size must be positive".into()));
        }
        Ok(())
    }
}

/// One concrete draw of the augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub scale: f64,
    pub angle_degrees: f64,
    pub flip: bool,
    /// Top-left corner of the crop in the transformed image.
    pub crop_origin: (usize, usize),
    pub crop_size: (usize, usize),
}

fn scaled_size(h: usize, w: usize, s: f64) -> (usize, usize) {
    ((h as f64 * s).round() as usize, (w as f64 * s).round() as usize)
}

impl Transform {
    pub fn identity(height: usize, width: usize) -> Self {
        Transform {
            scale: 1.0,
            angle_degrees: 0.0,
            flip: false,
            crop_origin: (0, 0),
            crop_size: (height, width),
        }
    }

    pub fn sample<R: Rng>(cfg: &AugmentationConfig, height: usize, width: usize, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let draw = |rng: &mut R, r: [f64; 2]| if r[0] == r[1] { r[0] } else { rng.gen_range(r[0]..=r[1]) };
        let scale = draw(rng, cfg.scale_range);
        let angle_degrees = draw(rng, cfg.rotation_range);
        let flip = rng.gen_bool(cfg.flip_prob);
        let (h1, w1) = scaled_size(height, width, scale);
        let [ch, cw] = cfg.crop;
        if ch > h1 || cw > w1 {
            return Err(Error::Config(format!(
                "crop {ch}×{cw} larger than the {h1}×{w1} image after scaling by {scale:.3}"
            )));
        }
        let crop_origin = (rng.gen_range(0..=h1 - ch), rng.gen_range(0..=w1 - cw));
        Ok(Transform {
            scale,
            angle_degrees,
            flip,
            crop_origin,
            crop_size: (ch, cw),
        })
    }

    fn check(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!("scale {} must be positive", self.scale)));
        }
        let (h1, w1) = scaled_size(height, width, self.scale);
        let (y0, x0) = self.crop_origin;
        let (ch, cw) = self.crop_size;
        if h1 == 0 || w1 == 0 || y0 + ch > h1 || x0 + cw > w1 || ch == 0 || cw == 0 {
            return Err(Error::Config(format!(
                "crop {ch}×{cw} at ({y0}, {x0}) does not fit the {h1}×{w1} transformed image"
            )));
        }
        Ok((h1, w1))
    }

    /// Where, in the scaled image, the rotation samples output pixel (x, y).
    fn rotate_source(&self, h1: usize, w1: usize, x: usize, y: usize) -> (f64, f64) {
        let (sin, cos) = self.angle_degrees.to_radians().sin_cos();
        let (cx, cy) = (w1 as f64 / 2.0, h1 as f64 / 2.0);
        let (px, py) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
        (cos * px + sin * py + cx, -sin * px + cos * py + cy)
    }

    /// Nearest-neighbour source pixel in the input for every output pixel;
    /// `None` where the rotation looks outside the frame.
    pub fn source_indices(&self, height: usize, width: usize) -> Result<Vec<Option<usize>>> {
        let (h1, w1) = self.check(height, width)?;
        let (y0, x0) = self.crop_origin;
        let (ch, cw) = self.crop_size;
        let mut out = Vec::with_capacity(ch * cw);
        for y in y0..y0 + ch {
            for xc in x0..x0 + cw {
                let x = if self.flip { w1 - 1 - xc } else { xc };
                let (sx, sy) = if self.angle_degrees == 0.0 {
                    (x as f64 + 0.5, y as f64 + 0.5)
                } else {
                    self.rotate_source(h1, w1, x, y)
                };
                if !(sx >= 0.0 && sy >= 0.0 && sx < w1 as f64 && sy < h1 as f64) {
                    out.push(None);
                    continue;
                }
                let (ry, rx) = (sy.floor() as usize, sx.floor() as usize);
                let oy = ((ry * 2 + 1) * height / (2 * h1)).min(height - 1);
                let ox = ((rx * 2 + 1) * width / (2 * w1)).min(width - 1);
                out.push(Some(oy * width + ox));
            }
        }
        Ok(out)
    }

    pub fn apply(&self, sample: &SceneSample) -> Result<SceneSample> {
        let (h, w) = (sample.height, sample.width);
        let (h1, w1) = self.check(h, w)?;
        let (ch, cw) = self.crop_size;
        let (y0, x0) = self.crop_origin;

        let sources = self.source_indices(h, w)?;
        let mut depth = Vec::with_capacity(ch * cw);
        let mut mask = Vec::with_capacity(ch * cw);
        for src in sources {
            match src {
                Some(i) if sample.mask[i] => {
                    depth.push((f64::from(sample.depth[i]) / self.scale) as f32);
                    mask.push(true);
                }
                _ => {
                    depth.push(0.0);
                    mask.push(false);
                }
            }
        }

        let scaled = if (h1, w1) == (h, w) {
            sample.image_tensor()
        } else {
            bilinear_resize(&sample.image_tensor(), h1, w1)?
        };
        let plane = h1 * w1;
        let bilinear = |c: usize, fx: f64, fy: f64| -> f64 {
            let x = (fx - 0.5).clamp(0.0, (w1 - 1) as f64);
            let y = (fy - 0.5).clamp(0.0, (h1 - 1) as f64);
            let (xa, ya) = (x.floor() as usize, y.floor() as usize);
            let (xb, yb) = ((xa + 1).min(w1 - 1), (ya + 1).min(h1 - 1));
            let (tx, ty) = (x - xa as f64, y - ya as f64);
            let at = |yy: usize, xx: usize| scaled.data()[c * plane + yy * w1 + xx];
            let top = at(ya, xa) + tx * (at(ya, xb) - at(ya, xa));
            let bottom = at(yb, xa) + tx * (at(yb, xb) - at(yb, xa));
            top + ty * (bottom - top)
        };
        let mut rgb = Vec::with_capacity(3 * ch * cw);
        for y in y0..y0 + ch {
            for xc in x0..x0 + cw {
                let x = if self.flip { w1 - 1 - xc } else { xc };
                if self.angle_degrees == 0.0 {
                    for c in 0..3 {
                        rgb.push(scaled.data()[c * plane + y * w1 + x] as f32);
                    }
                    continue;
                }
                let (sx, sy) = self.rotate_source(h1, w1, x, y);
                let inside = sx >= 0.0 && sy >= 0.0 && sx < w1 as f64 && sy < h1 as f64;
                for c in 0..3 {
                    rgb.push(if inside { bilinear(c, sx, sy).clamp(0.0, 1.0) as f32 } else { 0.0 });
                }
            }
        }
        SceneSample::new(ch, cw, rgb, depth, mask)
    }
}

/// Draws a transform from `cfg` and applies it.
pub fn augment<R: Rng>(sample: &SceneSample, cfg: &AugmentationConfig, rng: &mut R) -> Result<SceneSample> {
    Transform::sample(cfg, sample.height, sample.width, rng)?.apply(sample)
}
