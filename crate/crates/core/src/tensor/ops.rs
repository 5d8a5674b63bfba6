use super::gemm::gemm;
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FcGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

fn fc_dims(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize)> {
    if weights.shape().len() != 2 {
        return Err(Error::shape("fully_connected", "weights must be Out×In"));
    }
    let (out, fan_in) = (weights.shape()[0], weights.shape()[1]);
    let batch = input.shape()[0];
    if input.len() != batch * fan_in {
        return Err(Error::shape(
            "fully_connected",
            format!("input has {} features per item, fan-in is {fan_in}", input.len() / batch),
        ));
    }
    if bias.len() != out {
        return Err(Error::shape(
            "fully_connected",
            format!("bias length {} != outputs {out}", bias.len()),
        ));
    }
    Ok((batch, fan_in, out))
}

/// `y = W·x + b` for every item along the leading dimension; trailing
/// dimensions of `input` are flattened.
pub fn fully_connected(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (batch, fan_in, out) = fc_dims(input, weights, bias)?;
    let mut y = Vec::with_capacity(batch * out);
    for _ in 0..batch {
        y.extend_from_slice(bias.data());
    }
    gemm(batch, fan_in, out, input.data(), false, weights.data(), true, &mut y, true);
    Tensor::new(vec![batch, out], y)
}

pub fn fc_backward(input: &Tensor, weights: &Tensor, bias: &Tensor, grad_out: &Tensor) -> Result<FcGrads> {
    let (batch, fan_in, out) = fc_dims(input, weights, bias)?;
    if grad_out.len() != batch * out {
        return Err(Error::shape("fc_backward", "grad_out length mismatch"));
    }
    let mut gi = vec![0.0; batch * fan_in];
    gemm(batch, out, fan_in, grad_out.data(), false, weights.data(), false, &mut gi, false);
    let mut gw = vec![0.0; out * fan_in];
    gemm(out, batch, fan_in, grad_out.data(), true, input.data(), false, &mut gw, false);
    let mut gb = vec![0.0; out];
    for row in grad_out.data().chunks(out) {
        for (g, v) in gb.iter_mut().zip(row) {
            *g += v;
        }
    }
    Ok(FcGrads {
        input: Tensor::new(input.shape().to_vec(), gi)?,
        weights: Tensor::new(vec![out, fan_in], gw)?,
        bias: Tensor::new(vec![out], gb)?,
    })
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Gradient of ReLU given its input; zero at the kink.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if input.shape() != grad_out.shape() {
        return Err(Error::shape("relu_backward", "grad_out shape differs from input"));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

/// Stacks 4-D tensors along the channel axis, in argument order.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::shape("concat_channels", "nothing to concatenate"))?;
    let (n, _, h, w) = first.dims4();
    let mut channels = 0;
    for p in parts {
        let (pn, pc, ph, pw) = p.dims4();
        if p.shape().len() != 4 || pn != n || ph != h || pw != w {
            return Err(Error::shape(
                "concat_channels",
                format!("{:?} does not match N={n}, H={h}, W={w}", p.shape()),
            ));
        }
        channels += pc;
    }
    let mut data = Vec::with_capacity(n * channels * h * w);
    for b in 0..n {
        for p in parts {
            let c = p.shape()[1];
            data.extend_from_slice(&p.data()[b * c * h * w..(b + 1) * c * h * w]);
        }
    }
    Tensor::new(vec![n, channels, h, w], data)
}

/// Inverse of [`concat_channels`] for gradients.
pub fn split_channels(x: &Tensor, sizes: &[usize]) -> Result<Vec<Tensor>> {
    let (n, c, h, w) = x.dims4();
    if sizes.iter().sum::<usize>() != c {
        return Err(Error::shape("split_channels", format!("{sizes:?} does not sum to {c}")));
    }
    let mut parts: Vec<Vec<f64>> = sizes.iter().map(|s| Vec::with_capacity(n * s * h * w)).collect();
    for b in 0..n {
        let mut offset = b * c * h * w;
        for (part, &s) in parts.iter_mut().zip(sizes) {
            part.extend_from_slice(&x.data()[offset..offset + s * h * w]);
            offset += s * h * w;
        }
    }
    parts
        .into_iter()
        .zip(sizes)
        .map(|(d, &s)| Tensor::new(vec![n, s, h, w], d))
        .collect()
}

fn sample_axis(dst: usize, in_size: usize, out_size: usize) -> (usize, usize, f64) {
    let scale = in_size as f64 / out_size as f64;
    let src = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
    let lo = (src.floor() as usize).min(in_size - 1);
    let hi = (lo + 1).min(in_size - 1);
    let t = if hi == lo { 0.0 } else { src - lo as f64 };
    (lo, hi, t)
}

/// Bilinear resampling with half-pixel centres (align-corners = false).
pub fn bilinear_resize(input: &Tensor, new_h: usize, new_w: usize) -> Result<Tensor> {
    if new_h == 0 || new_w == 0 {
        return Err(Error::shape("bilinear_resize", "target size must be >= 1"));
    }
    if input.shape().len() != 4 {
        return Err(Error::shape("bilinear_resize", "input must be N×C×H×W"));
    }
    let (n, c, h, w) = input.dims4();
    let rows: Vec<_> = (0..new_h).map(|y| sample_axis(y, h, new_h)).collect();
    let cols: Vec<_> = (0..new_w).map(|x| sample_axis(x, w, new_w)).collect();
    let lerp = |a: f64, b: f64, t: f64| a + t * (b - a);
    let mut out = Vec::with_capacity(n * c * new_h * new_w);
    for plane in 0..n * c {
        let src = &input.data()[plane * h * w..(plane + 1) * h * w];
        for &(y0, y1, ty) in &rows {
            for &(x0, x1, tx) in &cols {
                let top = lerp(src[y0 * w + x0], src[y0 * w + x1], tx);
                let bottom = lerp(src[y1 * w + x0], src[y1 * w + x1], tx);
                out.push(lerp(top, bottom, ty));
            }
        }
    }
    Tensor::new(vec![n, c, new_h, new_w], out)
}
