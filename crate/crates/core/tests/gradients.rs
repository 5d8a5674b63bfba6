//! Finite-difference checks of the composed network and of each layer on
//! its own.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rccn::loss::{classification_loss, regression_loss};
use rccn::model::{tiny_objective, CheckTarget};
use rccn::tensor::{
    bilinear_resize, conv2d, conv2d_backward, deconv2d, deconv2d_backward, fc_backward, fully_connected, gradcheck,
    maxpool2d, maxpool2d_backward, relu, relu_backward, ConvParams, FnObjective, Tensor, DEFAULT_STEP,
};
use rccn::Variant;

#[test]
fn cascade_gradients_match_finite_differences_for_every_variant() {
    for variant in Variant::ALL {
        let mut obj = tiny_objective(variant, CheckTarget::Cascade, 7).unwrap();
        let report = gradcheck(&mut obj, DEFAULT_STEP).unwrap();
        assert!(report.max_rel_error < 1e-4, "{variant}: {report:?}");
    }
}

#[test]
fn refinement_gradients_with_frozen_cascade() {
    let mut obj = tiny_objective(Variant::Rccn, CheckTarget::Refinement, 7).unwrap();
    let report = gradcheck(&mut obj, DEFAULT_STEP).unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn fusion_gradients() {
    let mut obj = tiny_objective(Variant::Rccn, CheckTarget::Fusion, 7).unwrap();
    let report = gradcheck(&mut obj, DEFAULT_STEP).unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

/// Loss `Σ r·y` with fixed random `r` makes the upstream gradient of `y`
/// equal to `r`.
fn probe(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn check_isolated(params: Vec<(&str, Tensor)>, f: impl Fn(&[Tensor]) -> rccn::Result<(f64, Vec<Tensor>)>) -> f64 {
    let named = params.into_iter().map(|(n, t)| (n.to_string(), t)).collect();
    let mut obj = FnObjective::new(named, f);
    let report = gradcheck(&mut obj, DEFAULT_STEP).unwrap();
    assert!(report.max_rel_error < 1e-6, "{report:?}");
    report.max_rel_error
}

#[test]
fn isolated_convolutions() {
    for (stride, padding, dilation) in [(1, 1, 1), (2, 1, 1), (1, 2, 2), (2, 0, 1)] {
        let x = probe(&[2, 2, 7, 6], 1);
        let w = probe(&[3, 2, 3, 3], 2);
        let b = probe(&[3], 3);
        let out_shape = conv2d(&x, &ConvParams::new(&w, &b).stride(stride).padding(padding).dilation(dilation))
            .unwrap()
            .shape()
            .to_vec();
        let r = probe(&out_shape, 4);
        check_isolated(vec![("x", x), ("w", w), ("b", b)], |p| {
            let cp = ConvParams::new(&p[1], &p[2]).stride(stride).padding(padding).dilation(dilation);
            let y = conv2d(&p[0], &cp)?;
            let g = conv2d_backward(&p[0], &cp, &r)?;
            Ok((y.dot(&r)?, vec![g.input, g.weights, g.bias]))
        });
    }
}

#[test]
fn isolated_transposed_convolutions() {
    for (k, stride, padding) in [(4, 2, 1), (3, 1, 1), (2, 2, 0)] {
        let x = probe(&[1, 3, 4, 5], 5);
        let w = probe(&[3, 2, k, k], 6);
        let b = probe(&[2], 7);
        let out_shape = deconv2d(&x, &ConvParams::new(&w, &b).stride(stride).padding(padding))
            .unwrap()
            .shape()
            .to_vec();
        let r = probe(&out_shape, 8);
        check_isolated(vec![("x", x), ("w", w), ("b", b)], |p| {
            let cp = ConvParams::new(&p[1], &p[2]).stride(stride).padding(padding);
            let y = deconv2d(&p[0], &cp)?;
            let g = deconv2d_backward(&p[0], &cp, &r)?;
            Ok((y.dot(&r)?, vec![g.input, g.weights, g.bias]))
        });
    }
}

#[test]
fn isolated_fully_connected_relu_pool_and_resize() {
    let r = probe(&[2, 4], 9);
    check_isolated(vec![("x", probe(&[2, 3, 2, 1], 10)), ("w", probe(&[4, 6], 11)), ("b", probe(&[4], 12))], |p| {
        let y = fully_connected(&p[0], &p[1], &p[2])?;
        let g = fc_backward(&p[0], &p[1], &p[2], &r)?;
        Ok((y.dot(&r)?, vec![g.input, g.weights, g.bias]))
    });

    let r = probe(&[1, 2, 5, 5], 13);
    check_isolated(vec![("x", probe(&[1, 2, 5, 5], 14))], |p| {
        let y = relu(&p[0]);
        Ok((y.dot(&r)?, vec![relu_backward(&p[0], &r)?]))
    });

    for (window, stride, padding) in [(2, 2, 0), (3, 1, 1), (3, 2, 1)] {
        let x = probe(&[1, 2, 6, 6], 15);
        let shape = maxpool2d(&x, window, stride, padding).unwrap().output.shape().to_vec();
        let r = probe(&shape, 16);
        check_isolated(vec![("x", x)], |p| {
            let pooled = maxpool2d(&p[0], window, stride, padding)?;
            Ok((pooled.output.dot(&r)?, vec![maxpool2d_backward(p[0].shape(), &pooled.argmax, &r)?]))
        });
    }

    // Bilinear resampling is linear, so its gradient is the transpose map,
    // read off column by column.
    let r = probe(&[1, 1, 8, 6], 17);
    check_isolated(vec![("x", probe(&[1, 1, 4, 3], 18))], |p| {
        let y = bilinear_resize(&p[0], 8, 6)?;
        let grad = Tensor::from_fn(p[0].shape(), |i| {
            let mut e = Tensor::zeros(p[0].shape());
            e.data_mut()[i] = 1.0;
            bilinear_resize(&e, 8, 6).unwrap().dot(&r).unwrap()
        });
        Ok((y.dot(&r)?, vec![grad]))
    });
}

#[test]
fn isolated_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let targets: Vec<usize> = (0..12).map(|i| if i == 5 { 4 } else { rng.gen_range(0..4) }).collect();
    check_isolated(vec![("logits", probe(&[1, 4, 3, 4], 20))], |p| {
        let l = classification_loss(&p[0], &targets, 4)?;
        Ok((l.loss, vec![l.grad]))
    });
    let target = probe(&[1, 1, 3, 4], 21);
    let mask: Vec<bool> = (0..12).map(|i| i % 5 != 2).collect();
    check_isolated(vec![("pred", probe(&[1, 1, 3, 4], 22))], |p| {
        let l = regression_loss(&p[0], &target, &mask)?;
        Ok((l.loss, vec![l.grad]))
    });
}
