//! Synthetic RGB-D scenes, augmentation, supervision targets and the
//! on-disk image/depth formats.

mod augment;
mod dataset;
mod io;
mod synth;
mod targets;

pub use augment::{augment, AugmentationConfig, Transform};
pub use dataset::{generate_dataset, generate_samples, load_dataset, Manifest, ManifestEntry, MANIFEST_FILE};
pub use io::{decode_dmap, decode_ppm, encode_dmap, encode_ppm, read_dmap, read_ppm, write_dmap, write_ppm, DMAP_MAGIC};
pub use synth::{render, render_scene, sample_scene, Billboard, Block, Material, Scene, SyntheticWorldConfig};
pub use targets::{make_targets, Targets};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An RGB image with metric depth and a validity mask, all row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub height: usize,
    pub width: usize,
    /// Interleaved `H×W×3` values in [0, 1].
    pub rgb: Vec<f32>,
    /// Meters; only meaningful where `mask` is true.
    pub depth: Vec<f32>,
    pub mask: Vec<bool>,
}

impl SceneSample {
    pub fn new(height: usize, width: usize, rgb: Vec<f32>, depth: Vec<f32>, mask: Vec<bool>) -> Result<Self> {
        let n = height * width;
        if n == 0 || rgb.len() != 3 * n || depth.len() != n || mask.len() != n {
            return Err(Error::shape(
                "SceneSample",
                format!(
                    "{height}×{width} needs {} rgb, {n} depth and {n} mask entries; got {}, {}, {}",
                    3 * n,
                    rgb.len(),
                    depth.len(),
                    mask.len()
                ),
            ));
        }
        let sample = SceneSample {
            height,
            width,
            rgb,
            depth,
            mask,
        };
        sample.validate()?;
        Ok(sample)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.rgb.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config(format!("rgb value {} at index {i} outside [0, 1]", self.rgb[i])));
        }
        for (i, (&d, &m)) in self.depth.iter().zip(&self.mask).enumerate() {
            if m && !(d.is_finite() && d > 0.0) {
                return Err(Error::Config(format!("valid pixel {i} has depth {d}")));
            }
        }
        Ok(())
    }

    /// The image as a `1×3×H×W` tensor.
    pub fn image_tensor(&self) -> Tensor {
        let (h, w) = (self.height, self.width);
        Tensor::from_fn(&[1, 3, h, w], |i| {
            let c = i / (h * w);
            let p = i % (h * w);
            f64::from(self.rgb[p * 3 + c])
        })
    }

    /// Depth as f64 with invalid pixels set to NaN.
    pub fn depth_f64(&self) -> Vec<f64> {
        self.depth
            .iter()
            .zip(&self.mask)
            .map(|(&d, &m)| if m { f64::from(d) } else { f64::NAN })
            .collect()
    }

    /// The centred `height×width` window.
    pub fn center_crop(&self, height: usize, width: usize) -> Result<SceneSample> {
        if height > self.height || width > self.width {
            return Err(Error::Config(format!(
                "crop {height}×{width} larger than image {}×{}",
                self.height, self.width
            )));
        }
        Ok(self.crop((self.height - height) / 2, (self.width - width) / 2, height, width))
    }

    pub(crate) fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> SceneSample {
        let mut rgb = Vec::with_capacity(3 * height * width);
        let mut depth = Vec::with_capacity(height * width);
        let mut mask = Vec::with_capacity(height * width);
        for y in y0..y0 + height {
            let row = y * self.width;
            rgb.extend_from_slice(&self.rgb[(row + x0) * 3..(row + x0 + width) * 3]);
            depth.extend_from_slice(&self.depth[row + x0..row + x0 + width]);
            mask.extend_from_slice(&self.mask[row + x0..row + x0 + width]);
        }
        SceneSample {
            height,
            width,
            rgb,
            depth,
            mask,
        }
    }
}
