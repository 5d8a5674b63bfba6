//! The four-stage training protocol.

use super::config::ExperimentConfig;
use super::evaluate::fit_to_input;
use super::sgd::{learning_rate, sgd_step};
use crate::data::{augment, make_targets, SceneSample, Targets};
use crate::error::{Error, Result};
use crate::loss::{classification_loss_weighted, joint_loss, regression_loss, LossReport};
use crate::model::{save, Gradients, Group, ModelState, Scope};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::time::Instant;

/// Loss above which a run counts as diverged.
const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Regression = 1,
    Joint = 2,
    Refinement = 3,
    Fusion = 4,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Regression, Stage::Joint, Stage::Refinement, Stage::Fusion];

    fn groups(self) -> &'static [Group] {
        match self {
            Stage::Regression => &Group::REGRESSION,
            Stage::Joint => &Group::CASCADE,
            Stage::Refinement => &[Group::Refinement],
            Stage::Fusion => &[Group::Fusion],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Global iteration index across all stages.
    pub iter: usize,
    pub stage: u8,
    pub loss_r: f64,
    pub loss_c: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Where to write `stageN.rccn` after each stage.
    pub checkpoint_dir: Option<PathBuf>,
    /// Print one progress line every this many iterations (0 = silent).
    pub log_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub stage_iters: [usize; 4],
    pub curve: Vec<CurvePoint>,
    pub checkpoints: Vec<PathBuf>,
    pub wall_seconds: f64,
}

struct Prepared {
    sample: SceneSample,
    targets: Targets,
    /// Fusion-stage inputs, computed once the frozen upstream is final.
    fusion_input: Option<Tensor>,
}

/// Loss and gradients of one sample for the given stage.
fn sample_step(model: &ModelState, stage: Stage, cfg: &ExperimentConfig, p: &Prepared, grads: &mut Gradients) -> Result<LossReport> {
    let image = p.sample.image_tensor();
    let weights = cfg.train.loss;
    match stage {
        Stage::Regression | Stage::Joint => {
            let scope = if stage == Stage::Regression { Scope::Coarse } else { Scope::Full };
            let cache = model.forward_scoped(&image, scope, true)?;
            let (report, seeds) = joint_loss(model, &cache, &p.targets, weights, scope)?;
            model.backward_rccn(&cache, &seeds, grads)?;
            Ok(report)
        }
        Stage::Refinement => {
            let cache = model.forward_scoped(&image, Scope::Full, false)?;
            let rc = model.forward_refine(&image, &cache, true)?;
            let l = classification_loss_weighted(&rc.logits, &p.targets.refine_bins, model.scheme.ignore_index(), weights.lambda)?;
            model.backward_refine(&rc, l.grad, grads)?;
            Ok(LossReport {
                loss_c: l.loss,
                total: l.loss,
                n_c: l.n_valid,
                ..Default::default()
            })
        }
        Stage::Fusion => {
            let fc = match &p.fusion_input {
                Some(input) => model.fuse(input.clone(), true)?,
                None => {
                    let cache = model.forward_scoped(&image, Scope::Full, false)?;
                    let rc = model.forward_refine(&image, &cache, false)?;
                    model.forward_fusion(&cache, &rc, true)?
                }
            };
            let l = regression_loss(&fc.log_depth, &p.targets.fusion_log_tensor(), &p.targets.fusion_mask)?;
            model.backward_fusion(&fc, l.grad, grads)?;
            Ok(LossReport {
                loss_r: l.loss,
                total: l.loss,
                n_r: l.n_valid,
                ..Default::default()
            })
        }
    }
}

/// Runs the staged protocol on `samples` and returns the trained model.
///
/// Stage 1 trains the shared blocks and the coarse branch alone, stage 2 the
/// whole cascade, stage 3 the refinement network (initialised from the
/// shared blocks) and stage 4 the fusion network; later stages leave every
/// earlier parameter untouched.
pub fn train(cfg: &ExperimentConfig, samples: &[SceneSample], opts: &TrainOptions) -> Result<(ModelState, TrainReport)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let start = Instant::now();
    let spec = cfg.spec()?;
    let tc = &cfg.train;
    let mut model = ModelState::build(&spec, &cfg.scheme, tc.seed)?;
    let stage_iters = tc.stage_iters(spec.variant);

    let mut order_rng = ChaCha8Rng::seed_from_u64(tc.seed);
    order_rng.set_stream(1);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(cfg.augmentation.seed ^ tc.seed);
    aug_rng.set_stream(2);

    let mut fixed: Vec<Prepared> = if cfg.augmentation.enabled {
        Vec::new()
    } else {
        samples
            .iter()
            .map(|s| {
                let sample = fit_to_input(s, &spec)?;
                let targets = make_targets(&sample, &cfg.scheme, &spec)?;
                Ok(Prepared {
                    sample,
                    targets,
                    fusion_input: None,
                })
            })
            .collect::<Result<_>>()?
    };

    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut report = TrainReport {
        stage_iters,
        curve: Vec::new(),
        checkpoints: Vec::new(),
        wall_seconds: 0.0,
    };
    let mut global = 0usize;
    let mut last_checkpoint: Option<PathBuf> = None;
    let mut grads = model.zero_grads();

    for (stage, &iters) in Stage::ALL.iter().zip(&stage_iters) {
        if iters == 0 {
            continue;
        }
        if *stage == Stage::Refinement {
            model.init_refinement_from_shared();
        }
        if *stage == Stage::Fusion {
            for p in &mut fixed {
                let image = p.sample.image_tensor();
                let cache = model.forward_scoped(&image, Scope::Full, false)?;
                let rc = model.forward_refine(&image, &cache, false)?;
                p.fusion_input = Some(model.fusion_inputs(&cache, &rc)?);
            }
        }
        for t in 0..iters {
            grads.zero();
            let mut loss = LossReport::default();
            for _ in 0..tc.batch_size {
                if cursor == order.len() {
                    order = (0..samples.len()).collect();
                    order.shuffle(&mut order_rng);
                    cursor = 0;
                }
                let idx = order[cursor];
                cursor += 1;
                let augmented;
                let prepared = if cfg.augmentation.enabled {
                    let sample = augment(&samples[idx], &cfg.augmentation, &mut aug_rng)?;
                    let targets = make_targets(&sample, &cfg.scheme, &spec)?;
                    augmented = Prepared {
                        sample,
                        targets,
                        fusion_input: None,
                    };
                    &augmented
                } else {
                    &fixed[idx]
                };
                let diverged = |loss: f64| Error::Diverged {
                    stage: *stage as usize,
                    iteration: t,
                    loss,
                    last_checkpoint: last_checkpoint.clone(),
                };
                let r = match sample_step(&model, *stage, cfg, prepared, &mut grads) {
                    Ok(r) => r,
                    Err(Error::NonFinite(_)) => return Err(diverged(f64::NAN)),
                    Err(e) => return Err(e),
                };
                if !r.total.is_finite() || r.total > DIVERGENCE_LIMIT {
                    return Err(diverged(r.total));
                }
                loss.accumulate(&r, tc.batch_size);
            }
            grads.scale(1.0 / tc.batch_size as f64);
            let lr = learning_rate(tc.base_lr, tc.power, t, iters);
            if let Err(Error::NonFinite(_)) = sgd_step(&mut model.params, &grads, lr, tc, stage.groups()) {
                return Err(Error::Diverged {
                    stage: *stage as usize,
                    iteration: t,
                    loss: f64::NAN,
                    last_checkpoint,
                });
            }
            if global % tc.curve_every == 0 {
                report.curve.push(CurvePoint {
                    iter: global,
                    stage: *stage as u8,
                    loss_r: loss.loss_r,
                    loss_c: loss.loss_c,
                    total: loss.total,
                });
            }
            if opts.log_every > 0 && global % opts.log_every == 0 {
                eprintln!(
                    "stage {} iter {global:>6}  lr {lr:.3e}  loss_r {:.5}  loss_c {:.5}  total {:.5}",
                    *stage as u8, loss.loss_r, loss.loss_c, loss.total
                );
            }
            global += 1;
        }
        model.stages_completed = *stage as u32;
        if let Some(dir) = &opts.checkpoint_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(format!("stage{}.rccn", *stage as u8));
            save(&model, &path)?;
            report.checkpoints.push(path.clone());
            last_checkpoint = Some(path);
        }
    }
    if model.stages_completed == 0 {
        return Err(Error::Config("the stage plan schedules no iterations".into()));
    }
    report.wall_seconds = start.elapsed().as_secs_f64();
    Ok((model, report))
}
