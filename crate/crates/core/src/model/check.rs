//! Finite-difference hooks for the whole network.

use super::{Group, ModelState, Scope};
use crate::data::Targets;
use crate::error::Result;
use crate::loss::{classification_loss, joint_loss, regression_loss, LossWeights};
use crate::tensor::{Checkable, Tensor};

/// Which objective a [`NetworkObjective`] differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckTarget {
    /// Joint regression + classification loss of the cascade.
    Cascade,
    /// Cross-entropy of the refinement head (cascade frozen).
    Refinement,
    /// Log-space squared error of the fusion head (everything else frozen).
    Fusion,
}

impl CheckTarget {
    fn groups(self) -> &'static [Group] {
        match self {
            CheckTarget::Cascade => &Group::CASCADE,
            CheckTarget::Refinement => &[Group::Refinement],
            CheckTarget::Fusion => &[Group::Fusion],
        }
    }
}

/// One sample's loss as a function of the parameters of the chosen part.
pub struct NetworkObjective {
    pub model: ModelState,
    image: Tensor,
    targets: Targets,
    target: CheckTarget,
    weights: LossWeights,
    /// Indices into `model.params` being checked.
    ids: Vec<usize>,
}

impl NetworkObjective {
    pub fn new(model: ModelState, image: Tensor, targets: Targets, target: CheckTarget) -> Self {
        let ids = model
            .params
            .iter()
            .enumerate()
            .filter(|(_, p)| target.groups().contains(&p.group))
            .map(|(i, _)| i)
            .collect();
        NetworkObjective {
            model,
            image,
            targets,
            target,
            weights: LossWeights::default(),
            ids,
        }
    }

    fn evaluate(&self, want_grads: bool) -> Result<(f64, Option<Vec<Tensor>>)> {
        let m = &self.model;
        let mut grads = m.zero_grads();
        let loss = match self.target {
            CheckTarget::Cascade => {
                let cache = m.forward_scoped(&self.image, Scope::Full, want_grads)?;
                let (report, seeds) = joint_loss(m, &cache, &self.targets, self.weights, Scope::Full)?;
                if want_grads {
                    m.backward_rccn(&cache, &seeds, &mut grads)?;
                }
                report.total
            }
            CheckTarget::Refinement => {
                let cache = m.forward_scoped(&self.image, Scope::Full, false)?;
                let rc = m.forward_refine(&self.image, &cache, want_grads)?;
                let l = classification_loss(&rc.logits, &self.targets.refine_bins, m.scheme.ignore_index())?;
                if want_grads {
                    m.backward_refine(&rc, l.grad, &mut grads)?;
                }
                l.loss
            }
            CheckTarget::Fusion => {
                let cache = m.forward_scoped(&self.image, Scope::Full, false)?;
                let rc = m.forward_refine(&self.image, &cache, false)?;
                let fc = m.forward_fusion(&cache, &rc, want_grads)?;
                let l = regression_loss(&fc.log_depth, &self.targets.fusion_log_tensor(), &self.targets.fusion_mask)?;
                if want_grads {
                    m.backward_fusion(&fc, l.grad, &mut grads)?;
                }
                l.loss
            }
        };
        let grads = want_grads.then(|| self.ids.iter().map(|&i| grads.0[i].clone()).collect());
        Ok((loss, grads))
    }
}

impl Checkable for NetworkObjective {
    fn param_count(&self) -> usize {
        self.ids.len()
    }

    fn param_name(&self, index: usize) -> String {
        self.model.params[self.ids[index]].name.clone()
    }

    fn param_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self.model.params[self.ids[index]].value
    }

    fn loss(&self) -> Result<f64> {
        Ok(self.evaluate(false)?.0)
    }

    fn gradients(&mut self) -> Result<Vec<Tensor>> {
        Ok(self.evaluate(true)?.1.expect("gradients requested"))
    }
}

/// A 32×32 network with very few channels and four depth classes, used for
/// end-to-end gradient checks.
pub fn tiny_spec(variant: super::Variant) -> super::NetworkSpec {
    super::NetworkSpec::scaled(32, 32, 4, 64, variant)
}

/// Builds the tiny network with random heads on a rendered scene and
/// returns the objective for `target`.
///
/// The image is dithered with a little uniform noise: flat regions of a
/// quantized rendering produce exactly tied max-pool windows, where the loss
/// has a kink that central differences average across.
pub fn tiny_objective(variant: super::Variant, target: CheckTarget, seed: u64) -> Result<NetworkObjective> {
    use crate::data::{make_targets, render, SyntheticWorldConfig};
    use crate::discretize::{DiscretizationScheme, Mode};
    use rand::{Rng, SeedableRng};

    let world = SyntheticWorldConfig {
        height: 32,
        width: 32,
        seed,
        ..Default::default()
    };
    let sample = render(&world, 0)?;
    let scheme = DiscretizationScheme::new(Mode::SpacingIncreasing, world.min_depth, world.max_depth, 4)?;
    let spec = tiny_spec(variant);
    let mut model = ModelState::build(&spec, &scheme, seed)?;
    model.randomize_for_check(seed.wrapping_add(1));
    let targets = make_targets(&sample, &scheme, &spec)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let image = sample
        .image_tensor()
        .map(|v| (v + rng.gen_range(-2e-3..2e-3)).clamp(0.0, 1.0));
    Ok(NetworkObjective::new(model, image, targets, target))
}
