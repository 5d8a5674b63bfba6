use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{Gradients, Group, Param};

/// Polynomial decay `base · (1 − t/T)^power`, zero from `t = T` on.
pub fn learning_rate(base_lr: f64, power: f64, t: usize, total: usize) -> f64 {
    if total == 0 || t >= total {
        return 0.0;
    }
    base_lr * (1.0 - t as f64 / total as f64).powf(power)
}

/// One momentum update of a single scalar; returns the new `(w, v)`.
pub fn sgd_update(w: f64, v: f64, g: f64, lr: f64, momentum: f64, decay: f64) -> (f64, f64) {
    let v = momentum * v + g + decay * w;
    (w - lr * v, v)
}

/// Updates every parameter in `groups` with momentum SGD at rate `lr`.
/// Weight decay applies to weights only. Values and momenta are kept on the
/// 32-bit grid so they survive the model file unchanged.
pub fn sgd_step(params: &mut [Param], grads: &Gradients, lr: f64, cfg: &TrainConfig, groups: &[Group]) -> Result<()> {
    if grads.0.len() != params.len() {
        return Err(Error::shape(
            "sgd_step",
            format!("{} gradients for {} parameters", grads.0.len(), params.len()),
        ));
    }
    for (p, g) in params.iter().zip(&grads.0) {
        if !groups.contains(&p.group) {
            continue;
        }
        if g.shape() != p.value.shape() {
            return Err(Error::shape("sgd_step", format!("gradient of {} has shape {:?}", p.name, g.shape())));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {}", p.name)));
        }
    }
    for (p, g) in params.iter_mut().zip(&grads.0) {
        if !groups.contains(&p.group) {
            continue;
        }
        let decay = if p.decay { cfg.weight_decay } else { 0.0 };
        let values = p.value.data_mut();
        let moms = p.momentum.data_mut();
        for ((w, v), &g) in values.iter_mut().zip(moms.iter_mut()).zip(g.data()) {
            let (nw, nv) = sgd_update(*w, *v, g, lr, cfg.momentum, decay);
            *w = nw as f32 as f64;
            *v = nv as f32 as f64;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn schedule_endpoints() {
        assert_eq!(learning_rate(0.1, 0.9, 0, 100), 0.1);
        assert_eq!(learning_rate(0.1, 0.9, 100, 100), 0.0);
        let mut prev = f64::INFINITY;
        for t in 0..=100 {
            let lr = learning_rate(0.1, 0.9, t, 100);
            assert!(lr < prev);
            prev = lr;
        }
    }

    #[test]
    fn plain_sgd_without_momentum_or_decay() {
        assert_eq!(sgd_update(1.0, 0.0, 0.5, 0.1, 0.0, 0.0), (0.95, 0.5));
    }

    #[test]
    fn two_momentum_steps_match_closed_form() {
        // w0 = 1, g = 0.5 both steps, lr = 0.1, m = 0.9, wd = 0.01
        let (w1, v1) = sgd_update(1.0, 0.0, 0.5, 0.1, 0.9, 0.01);
        assert!((v1 - 0.51).abs() < 1e-15);
        assert!((w1 - 0.949).abs() < 1e-15);
        let (w2, v2) = sgd_update(w1, v1, 0.5, 0.1, 0.9, 0.01);
        assert!((v2 - (0.9 * 0.51 + 0.5 + 0.01 * 0.949)).abs() < 1e-15);
        assert!((w2 - (0.949 - 0.1 * 0.96849)).abs() < 1e-15);
    }

    fn param(group: Group, decay: bool) -> Param {
        Param {
            name: "p".into(),
            group,
            value: Tensor::full(&[2], 1.0),
            momentum: Tensor::zeros(&[2]),
            decay,
        }
    }

    #[test]
    fn frozen_groups_and_bias_decay() {
        let cfg = TrainConfig {
            momentum: 0.0,
            weight_decay: 0.5,
            ..Default::default()
        };
        let mut ps = vec![param(Group::Shared, true), param(Group::Fusion, false), param(Group::Refinement, true)];
        let grads = Gradients(vec![Tensor::zeros(&[2]); 3]);
        sgd_step(&mut ps, &grads, 0.5, &cfg, &[Group::Shared, Group::Fusion]).unwrap();
        assert_eq!(ps[0].value.data(), &[0.75, 0.75]);
        assert_eq!(ps[1].value.data(), &[1.0, 1.0]);
        assert_eq!(ps[2].value.data(), &[1.0, 1.0]);
    }

    #[test]
    fn zero_rate_leaves_parameters_unchanged() {
        let cfg = TrainConfig::default();
        let mut ps = vec![param(Group::Shared, true)];
        let grads = Gradients(vec![Tensor::full(&[2], 3.0)]);
        sgd_step(&mut ps, &grads, learning_rate(0.1, 0.9, 10, 10), &cfg, &[Group::Shared]).unwrap();
        assert_eq!(ps[0].value.data(), &[1.0, 1.0]);
    }

    #[test]
    fn non_finite_gradient_aborts_without_mutation() {
        let cfg = TrainConfig::default();
        let mut ps = vec![param(Group::Shared, true), param(Group::Shared, true)];
        let grads = Gradients(vec![Tensor::full(&[2], 1.0), Tensor::full(&[2], f64::NAN)]);
        assert!(matches!(sgd_step(&mut ps, &grads, 0.1, &cfg, &[Group::Shared]), Err(Error::NonFinite(_))));
        assert_eq!(ps[0].value.data(), &[1.0, 1.0]);
    }
}
