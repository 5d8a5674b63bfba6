//! Supervision at the coarse (/8) and refinement (/4) grids.

use super::SceneSample;
use crate::discretize::DiscretizationScheme;
use crate::error::{Error, Result};
use crate::model::NetworkSpec;
use crate::tensor::Tensor;

/// Per-head targets for one sample. Invalid cells carry `mask = false`
/// (continuous maps) or the scheme's ignore index (bin maps).
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub coarse_size: (usize, usize),
    /// Block-mean log-depth on the /8 grid.
    pub coarse_log: Vec<f64>,
    pub coarse_mask: Vec<bool>,
    /// Bins of the block-mean depth, for a discrete coarse head.
    pub coarse_bins: Vec<usize>,
    /// Bins of the centre pixel of each /8 block.
    pub fine_bins: Vec<usize>,
    pub refine_size: (usize, usize),
    /// Bins of the centre pixel of each /4 block.
    pub refine_bins: Vec<usize>,
    /// Block-mean log-depth on the /4 grid.
    pub fusion_log: Vec<f64>,
    pub fusion_mask: Vec<bool>,
}

impl Targets {
    pub fn coarse_log_tensor(&self) -> Tensor {
        let (h, w) = self.coarse_size;
        Tensor::new(vec![1, 1, h, w], self.coarse_log.clone()).expect("target grid is non-empty")
    }

    pub fn fusion_log_tensor(&self) -> Tensor {
        let (h, w) = self.refine_size;
        Tensor::new(vec![1, 1, h, w], self.fusion_log.clone()).expect("target grid is non-empty")
    }
}

fn block_mean_log(sample: &SceneSample, f: usize) -> (Vec<f64>, Vec<bool>) {
    let (h, w) = (sample.height / f, sample.width / f);
    let mut mean = vec![0.0; h * w];
    let mut mask = vec![false; h * w];
    for by in 0..h {
        for bx in 0..w {
            let (mut sum, mut n) = (0.0, 0usize);
            for y in by * f..(by + 1) * f {
                for x in bx * f..(bx + 1) * f {
                    let i = y * sample.width + x;
                    if sample.mask[i] {
                        sum += f64::from(sample.depth[i]).ln();
                        n += 1;
                    }
                }
            }
            if n > 0 {
                mean[by * w + bx] = sum / n as f64;
                mask[by * w + bx] = true;
            }
        }
    }
    (mean, mask)
}

fn centre_bins(sample: &SceneSample, scheme: &DiscretizationScheme, f: usize) -> Result<Vec<usize>> {
    let (h, w) = (sample.height / f, sample.width / f);
    let mut bins = Vec::with_capacity(h * w);
    for by in 0..h {
        for bx in 0..w {
            let i = (by * f + f / 2) * sample.width + bx * f + f / 2;
            bins.push(if sample.mask[i] {
                scheme.encode(f64::from(sample.depth[i]))?
            } else {
                scheme.ignore_index()
            });
        }
    }
    Ok(bins)
}

pub fn make_targets(sample: &SceneSample, scheme: &DiscretizationScheme, spec: &NetworkSpec) -> Result<Targets> {
    let (h, w) = (sample.height, sample.width);
    if h % 8 != 0 || w % 8 != 0 {
        return Err(Error::shape("make_targets", format!("{h}×{w} is not divisible by 8")));
    }
    if (h, w) != (spec.input_height, spec.input_width) {
        return Err(Error::shape(
            "make_targets",
            format!("sample {h}×{w} but network input {}×{}", spec.input_height, spec.input_width),
        ));
    }
    let (coarse_log, coarse_mask) = block_mean_log(sample, 8);
    let coarse_bins = coarse_log
        .iter()
        .zip(&coarse_mask)
        .map(|(&l, &m)| if m { scheme.encode(l.exp()) } else { Ok(scheme.ignore_index()) })
        .collect::<Result<_>>()?;
    let (fusion_log, fusion_mask) = block_mean_log(sample, 4);
    Ok(Targets {
        coarse_size: (h / 8, w / 8),
        coarse_log,
        coarse_mask,
        coarse_bins,
        fine_bins: centre_bins(sample, scheme, 8)?,
        refine_size: (h / 4, w / 4),
        refine_bins: centre_bins(sample, scheme, 4)?,
        fusion_log,
        fusion_mask,
    })
}
