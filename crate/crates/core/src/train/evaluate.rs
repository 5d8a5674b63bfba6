use crate::data::{make_targets, SceneSample};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, compute_metrics, MetricsReport};
use crate::model::{ModelState, NetworkSpec};
use serde::{Deserialize, Serialize};

/// Evaluation conventions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Clamp prediction and ground truth to the scheme's range before scoring.
    pub cap: bool,
    /// Score only the central fraction of each axis, e.g. `Some(0.8)`.
    pub center_crop: Option<f64>,
}

/// Metrics for every head the model has trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadReports {
    /// Coarse map `D0`, upsampled.
    pub coarse: Option<MetricsReport>,
    /// Fine head (decoded for discrete variants).
    pub fine: MetricsReport,
    pub refined: Option<MetricsReport>,
    pub fused: Option<MetricsReport>,
}

impl HeadReports {
    /// The most refined head available.
    pub fn best(&self) -> &MetricsReport {
        self.fused.as_ref().or(self.refined.as_ref()).unwrap_or(&self.fine)
    }
}

/// Centre-crops a rendered sample to the network input size.
pub fn fit_to_input(sample: &SceneSample, spec: &NetworkSpec) -> Result<SceneSample> {
    if (sample.height, sample.width) == (spec.input_height, spec.input_width) {
        return Ok(sample.clone());
    }
    sample.center_crop(spec.input_height, spec.input_width)
}

fn region_mask(sample: &SceneSample, crop: Option<f64>) -> Result<Vec<bool>> {
    let Some(f) = crop else {
        return Ok(sample.mask.clone());
    };
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::Config(format!("center crop fraction {f} outside (0, 1]")));
    }
    let (h, w) = (sample.height, sample.width);
    let (mh, mw) = (((1.0 - f) * h as f64 / 2.0).round() as usize, ((1.0 - f) * w as f64 / 2.0).round() as usize);
    Ok((0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            sample.mask[i] && y >= mh && y < h - mh && x >= mw && x < w - mw
        })
        .collect())
}

/// Per-sample metrics for every trained head.
pub fn evaluate_per_sample(model: &ModelState, samples: &[SceneSample], opts: &EvalOptions) -> Result<Vec<HeadReports>> {
    if samples.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let cap = opts.cap.then_some((model.scheme.min_depth, model.scheme.max_depth));
    samples
        .iter()
        .map(|s| {
            let s = fit_to_input(s, &model.spec)?;
            let target = s.depth_f64();
            let mask = region_mask(&s, opts.center_crop)?;
            let maps = model.head_maps(&s.image_tensor())?;
            let score = |t: &crate::tensor::Tensor| compute_metrics(t.data(), &target, &mask, cap);
            Ok(HeadReports {
                coarse: maps.coarse.as_ref().map(score).transpose()?,
                fine: score(&maps.fine)?,
                refined: maps.refined.as_ref().map(score).transpose()?,
                fused: maps.fused.as_ref().map(score).transpose()?,
            })
        })
        .collect()
}

/// Pixel-weighted metrics over `samples` for every trained head.
pub fn evaluate(model: &ModelState, samples: &[SceneSample], opts: &EvalOptions) -> Result<HeadReports> {
    let per = evaluate_per_sample(model, samples, opts)?;
    let pool = |f: &dyn Fn(&HeadReports) -> Option<MetricsReport>| -> Result<Option<MetricsReport>> {
        let parts: Option<Vec<MetricsReport>> = per.iter().map(f).collect();
        parts.map(|p| aggregate(&p)).transpose()
    };
    Ok(HeadReports {
        coarse: pool(&|r| r.coarse)?,
        fine: pool(&|r| Some(r.fine))?.expect("fine head always scored"),
        refined: pool(&|r| r.refined)?,
        fused: pool(&|r| r.fused)?,
    })
}

/// RMSE in log space of the fused head on its own /4 grid against the
/// block-mean log-depth targets it was trained on.
pub fn supervision_rmse_log(model: &ModelState, samples: &[SceneSample]) -> Result<f64> {
    if !(model.spec.variant.has_post_refinement() && model.stages_completed >= 4) {
        return Err(Error::Config("the model has no trained fusion head".into()));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for s in samples {
        let s = fit_to_input(s, &model.spec)?;
        let targets = make_targets(&s, &model.scheme, &model.spec)?;
        let image = s.image_tensor();
        let cache = model.forward_scoped(&image, crate::model::Scope::Full, false)?;
        let rc = model.forward_refine(&image, &cache, false)?;
        let fc = model.forward_fusion(&cache, &rc, false)?;
        for ((&p, &t), &m) in fc.log_depth.data().iter().zip(&targets.fusion_log).zip(&targets.fusion_mask) {
            if m {
                sum += (p - t) * (p - t);
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::Config("no valid target cells".into()));
    }
    Ok((sum / n as f64).sqrt())
}
