use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PoolOutput {
    pub output: Tensor,
    /// Flat index into the input for each output element.
    pub argmax: Vec<usize>,
}

/// Max pooling over `window×window` patches. Padded cells never win; ties go
/// to the smallest flat input index.
pub fn maxpool2d(input: &Tensor, window: usize, stride: usize, padding: usize) -> Result<PoolOutput> {
    if window == 0 || stride == 0 {
        return Err(Error::shape("maxpool2d", "window and stride must be >= 1"));
    }
    if padding >= window {
        return Err(Error::shape("maxpool2d", "padding must be smaller than the window"));
    }
    if input.shape().len() != 4 {
        return Err(Error::shape("maxpool2d", "input must be N×C×H×W"));
    }
    let (n, c, h, w) = input.dims4();
    if window > h + 2 * padding || window > w + 2 * padding {
        return Err(Error::shape(
            "maxpool2d",
            format!("window {window} exceeds padded input {}×{}", h + 2 * padding, w + 2 * padding),
        ));
    }
    let out_h = (h + 2 * padding - window) / stride + 1;
    let out_w = (w + 2 * padding - window) / stride + 1;
    let mut out = Vec::with_capacity(n * c * out_h * out_w);
    let mut argmax = Vec::with_capacity(out.capacity());
    let data = input.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..out_h {
            let y0 = (oy * stride) as isize - padding as isize;
            for ox in 0..out_w {
                let x0 = (ox * stride) as isize - padding as isize;
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = usize::MAX;
                for y in y0.max(0)..(y0 + window as isize).min(h as isize) {
                    for x in x0.max(0)..(x0 + window as isize).min(w as isize) {
                        let idx = base + y as usize * w + x as usize;
                        if best_idx == usize::MAX || data[idx] > best {
                            best = data[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok(PoolOutput {
        output: Tensor::new(vec![n, c, out_h, out_w], out)?,
        argmax,
    })
}

pub fn maxpool2d_backward(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    if argmax.len() != grad_out.len() {
        return Err(Error::shape(
            "maxpool2d_backward",
            format!("{} argmax entries for {} gradients", argmax.len(), grad_out.len()),
        ));
    }
    let mut grad = Tensor::zeros(input_shape);
    let g = grad.data_mut();
    for (&idx, &go) in argmax.iter().zip(grad_out.data()) {
        g[idx] += go;
    }
    Ok(grad)
}
