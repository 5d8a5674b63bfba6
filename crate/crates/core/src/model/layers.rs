//! Straight chains of layers with cached activations for the backward pass.

use super::params::{Gradients, Param};
use crate::error::{Error, Result};
use crate::tensor::{
    conv2d, conv2d_backward_opt, deconv2d, deconv2d_backward, fc_backward, fully_connected,
    maxpool2d, maxpool2d_backward, relu, relu_backward, ConvParams, Tensor,
};

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Conv {
        weights: usize,
        bias: usize,
        stride: usize,
        padding: usize,
        dilation: usize,
    },
    Deconv {
        weights: usize,
        bias: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool {
        window: usize,
        stride: usize,
        padding: usize,
    },
    Flatten,
    Fc {
        weights: usize,
        bias: usize,
    },
}

#[derive(Debug, Clone)]
pub(crate) struct Layer {
    pub name: String,
    pub op: Op,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Seq {
    pub layers: Vec<Layer>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct SeqCache {
    inputs: Vec<Tensor>,
    argmax: Vec<Vec<usize>>,
}

fn conv_params<'a>(params: &'a [Param], w: usize, b: usize) -> ConvParams<'a> {
    ConvParams::new(&params[w].value, &params[b].value)
}

impl Seq {
    pub fn push(&mut self, name: impl Into<String>, op: Op) {
        self.layers.push(Layer { name: name.into(), op });
    }

    /// Runs the chain; with `keep` the activations needed by
    /// [`Seq::backward`] are retained.
    pub fn forward(&self, params: &[Param], input: Tensor, keep: bool) -> Result<(Tensor, SeqCache)> {
        let mut cache = SeqCache::default();
        let mut x = input;
        for layer in &self.layers {
            let y = match layer.op {
                Op::Conv {
                    weights,
                    bias,
                    stride,
                    padding,
                    dilation,
                } => conv2d(
                    &x,
                    &conv_params(params, weights, bias)
                        .stride(stride)
                        .padding(padding)
                        .dilation(dilation),
                )?,
                Op::Deconv {
                    weights,
                    bias,
                    stride,
                    padding,
                } => deconv2d(&x, &conv_params(params, weights, bias).stride(stride).padding(padding))?,
                Op::Relu => relu(&x),
                Op::MaxPool {
                    window,
                    stride,
                    padding,
                } => {
                    let out = maxpool2d(&x, window, stride, padding)?;
                    if keep {
                        cache.argmax.push(out.argmax);
                    }
                    out.output
                }
                Op::Flatten => {
                    let n = x.shape()[0];
                    let len = x.len();
                    let flat = x.clone().reshape(&[n, len / n])?;
                    flat
                }
                Op::Fc { weights, bias } => {
                    fully_connected(&x, &params[weights].value, &params[bias].value)?
                }
            };
            if !y.is_finite() {
                return Err(Error::NonFinite(format!("output of layer {}", layer.name)));
            }
            if keep {
                cache.inputs.push(x);
            }
            x = y;
        }
        Ok((x, cache))
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the chain's input (None when `want_input` is false).
    pub fn backward(
        &self,
        params: &[Param],
        grads: &mut Gradients,
        cache: &SeqCache,
        grad_out: Tensor,
        want_input: bool,
    ) -> Result<Option<Tensor>> {
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::shape("backward", "forward was run without keeping activations"));
        }
        let mut g = grad_out;
        let mut pools = cache.argmax.len();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.inputs[i];
            let need = want_input || i > 0;
            g = match layer.op {
                Op::Conv {
                    weights,
                    bias,
                    stride,
                    padding,
                    dilation,
                } => {
                    let p = conv_params(params, weights, bias)
                        .stride(stride)
                        .padding(padding)
                        .dilation(dilation);
                    let cg = conv2d_backward_opt(input, &p, &g, need)?;
                    grads.add(weights, &cg.weights);
                    grads.add(bias, &cg.bias);
                    cg.input
                }
                Op::Deconv {
                    weights,
                    bias,
                    stride,
                    padding,
                } => {
                    let p = conv_params(params, weights, bias).stride(stride).padding(padding);
                    let cg = deconv2d_backward(input, &p, &g)?;
                    grads.add(weights, &cg.weights);
                    grads.add(bias, &cg.bias);
                    cg.input
                }
                Op::Relu => relu_backward(input, &g)?,
                Op::MaxPool { .. } => {
                    pools -= 1;
                    maxpool2d_backward(input.shape(), &cache.argmax[pools], &g)?
                }
                Op::Flatten => g.reshape(input.shape())?,
                Op::Fc { weights, bias } => {
                    let fg = fc_backward(input, &params[weights].value, &params[bias].value, &g)?;
                    grads.add(weights, &fg.weights);
                    grads.add(bias, &fg.bias);
                    fg.input
                }
            };
        }
        Ok(want_input.then_some(g))
    }
}
