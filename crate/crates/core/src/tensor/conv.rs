use super::gemm::gemm;
use super::Tensor;
use crate::error::{Error, Result};

/// Borrowed view of a convolution layer's parameters.
///
/// Weights are laid out `Cout×Cin×kh×kw` for both [`conv2d`] and [`deconv2d`];
/// the transposed convolution maps `Cout` channels back to `Cin`, so its bias
/// has `Cin` entries while the forward convolution's bias has `Cout`.
#[derive(Debug, Clone, Copy)]
pub struct ConvParams<'a> {
    pub weights: &'a Tensor,
    pub bias: &'a Tensor,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    dilation: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

fn conv_extent(size: usize, k: usize, stride: usize, padding: usize, dilation: usize) -> Option<usize> {
    let span = dilation * (k - 1) + 1;
    let padded = size + 2 * padding;
    (padded >= span).then(|| (padded - span) / stride + 1)
}

impl<'a> ConvParams<'a> {
    pub fn new(weights: &'a Tensor, bias: &'a Tensor) -> Self {
        ConvParams {
            weights,
            bias,
            stride: 1,
            padding: 0,
            dilation: 1,
        }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    fn kernel_dims(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        if self.weights.shape().len() != 4 {
            return Err(Error::shape(
                op,
                format!("weights must be 4-D, got {:?}", self.weights.shape()),
            ));
        }
        if self.stride == 0 || self.dilation == 0 {
            return Err(Error::shape(op, "stride and dilation must be >= 1"));
        }
        Ok(self.weights.dims4())
    }

    /// Geometry of the forward convolution applied to `input`.
    fn forward_geometry(&self, input: &Tensor) -> Result<Geometry> {
        let (cout, cin, kh, kw) = self.kernel_dims("conv2d")?;
        let (_, c, h, w) = input.dims4();
        if input.shape().len() != 4 {
            return Err(Error::shape("conv2d", "input must be N×C×H×W"));
        }
        if c != cin {
            return Err(Error::shape(
                "conv2d",
                format!("input channels {c} != weight Cin {cin}"),
            ));
        }
        if self.bias.len() != cout {
            return Err(Error::shape(
                "conv2d",
                format!("bias length {} != Cout {cout}", self.bias.len()),
            ));
        }
        let out_h = conv_extent(h, kh, self.stride, self.padding, self.dilation)
            .ok_or_else(|| Error::shape("conv2d", format!("output height < 1 for input height {h}")))?;
        let out_w = conv_extent(w, kw, self.stride, self.padding, self.dilation)
            .ok_or_else(|| Error::shape("conv2d", format!("output width < 1 for input width {w}")))?;
        Ok(Geometry {
            channels: cin,
            height: h,
            width: w,
            kh,
            kw,
            stride: self.stride,
            padding: self.padding,
            dilation: self.dilation,
            out_h,
            out_w,
        })
    }

    /// Geometry of the convolution whose input-gradient map the transposed
    /// convolution of `input` realises. `input` has `Cout` channels here.
    fn transposed_geometry(&self, input: &Tensor) -> Result<Geometry> {
        let (cout, cin, kh, kw) = self.kernel_dims("deconv2d")?;
        if input.shape().len() != 4 {
            return Err(Error::shape("deconv2d", "input must be N×C×H×W"));
        }
        let (_, c, h, w) = input.dims4();
        if c != cout {
            return Err(Error::shape(
                "deconv2d",
                format!("input channels {c} != weight Cout {cout}"),
            ));
        }
        if self.bias.len() != cin {
            return Err(Error::shape(
                "deconv2d",
                format!("bias length {} != output channels {cin}", self.bias.len()),
            ));
        }
        let extent = |size: usize, k: usize, dim: &str| -> Result<usize> {
            let full = (size - 1) * self.stride + self.dilation * (k - 1) + 1;
            full.checked_sub(2 * self.padding)
                .filter(|&v| v >= 1)
                .ok_or_else(|| Error::shape("deconv2d", format!("computed output {dim} < 1")))
        };
        let out_h = extent(h, kh, "height")?;
        let out_w = extent(w, kw, "width")?;
        Ok(Geometry {
            channels: cin,
            height: out_h,
            width: out_w,
            kh,
            kw,
            stride: self.stride,
            padding: self.padding,
            dilation: self.dilation,
            out_h: h,
            out_w: w,
        })
    }
}

fn im2col(image: &[f64], g: &Geometry) -> Vec<f64> {
    let cols = g.cols();
    let mut out = vec![0.0; g.rows() * cols];
    for c in 0..g.channels {
        let plane = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut out[row * cols..(row + 1) * cols];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky * g.dilation) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx * g.dilation) as isize - g.padding as isize;
                        if ix >= 0 && ix < g.width as isize {
                            dst[oy * g.out_w + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    out
}

fn col2im(cols_data: &[f64], g: &Geometry, image: &mut [f64]) {
    let cols = g.cols();
    for c in 0..g.channels {
        let plane = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols_data[row * cols..(row + 1) * cols];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky * g.dilation) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx * g.dilation) as isize - g.padding as isize;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation with zero padding, stride and dilation.
pub fn conv2d(input: &Tensor, p: &ConvParams) -> Result<Tensor> {
    let g = p.forward_geometry(input)?;
    let (n, _, _, _) = input.dims4();
    let cout = p.weights.shape()[0];
    let in_len = g.channels * g.height * g.width;
    let out_len = cout * g.cols();
    let mut out = vec![0.0; n * out_len];
    for b in 0..n {
        let cols = im2col(&input.data()[b * in_len..(b + 1) * in_len], &g);
        let dst = &mut out[b * out_len..(b + 1) * out_len];
        for (co, &bias) in p.bias.data().iter().enumerate() {
            dst[co * g.cols()..(co + 1) * g.cols()].fill(bias);
        }
        gemm(cout, g.rows(), g.cols(), p.weights.data(), false, &cols, false, dst, true);
    }
    Tensor::new(vec![n, cout, g.out_h, g.out_w], out)
}

pub fn conv2d_backward(input: &Tensor, p: &ConvParams, grad_out: &Tensor) -> Result<ConvGrads> {
    conv2d_backward_opt(input, p, grad_out, true)
}

/// As [`conv2d_backward`]; when `want_input` is false the input gradient is
/// left at zero and its cost skipped.
pub(crate) fn conv2d_backward_opt(
    input: &Tensor,
    p: &ConvParams,
    grad_out: &Tensor,
    want_input: bool,
) -> Result<ConvGrads> {
    let g = p.forward_geometry(input)?;
    let (n, _, _, _) = input.dims4();
    let cout = p.weights.shape()[0];
    if grad_out.shape() != [n, cout, g.out_h, g.out_w] {
        return Err(Error::shape(
            "conv2d_backward",
            format!(
                "grad_out {:?} != output {:?}",
                grad_out.shape(),
                [n, cout, g.out_h, g.out_w]
            ),
        ));
    }
    let in_len = g.channels * g.height * g.width;
    let out_len = cout * g.cols();
    let mut grad_input = vec![0.0; input.len()];
    let mut grad_w = vec![0.0; p.weights.len()];
    let mut grad_b = vec![0.0; cout];
    let mut grad_cols = vec![0.0; if want_input { g.rows() * g.cols() } else { 0 }];
    for b in 0..n {
        let go = &grad_out.data()[b * out_len..(b + 1) * out_len];
        for (co, gb) in grad_b.iter_mut().enumerate() {
            *gb += go[co * g.cols()..(co + 1) * g.cols()].iter().sum::<f64>();
        }
        let cols = im2col(&input.data()[b * in_len..(b + 1) * in_len], &g);
        gemm(cout, g.cols(), g.rows(), go, false, &cols, true, &mut grad_w, true);
        if want_input {
            gemm(g.rows(), cout, g.cols(), p.weights.data(), true, go, false, &mut grad_cols, false);
            col2im(&grad_cols, &g, &mut grad_input[b * in_len..(b + 1) * in_len]);
        }
    }
    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), grad_input)?,
        weights: Tensor::new(p.weights.shape().to_vec(), grad_w)?,
        bias: Tensor::new(vec![cout], grad_b)?,
    })
}

/// Transposed convolution: the adjoint of [`conv2d`]'s input-gradient map
/// under the same parameters, plus a per-output-channel bias.
pub fn deconv2d(input: &Tensor, p: &ConvParams) -> Result<Tensor> {
    let g = p.transposed_geometry(input)?;
    let (n, cout, _, _) = input.dims4();
    let in_len = cout * g.cols();
    let out_len = g.channels * g.height * g.width;
    let mut out = vec![0.0; n * out_len];
    let mut cols = vec![0.0; g.rows() * g.cols()];
    for b in 0..n {
        let y = &input.data()[b * in_len..(b + 1) * in_len];
        gemm(g.rows(), cout, g.cols(), p.weights.data(), true, y, false, &mut cols, false);
        let dst = &mut out[b * out_len..(b + 1) * out_len];
        col2im(&cols, &g, dst);
        let plane = g.height * g.width;
        for (c, &bias) in p.bias.data().iter().enumerate() {
            dst[c * plane..(c + 1) * plane].iter_mut().for_each(|v| *v += bias);
        }
    }
    Tensor::new(vec![n, g.channels, g.height, g.width], out)
}

pub fn deconv2d_backward(input: &Tensor, p: &ConvParams, grad_out: &Tensor) -> Result<ConvGrads> {
    let g = p.transposed_geometry(input)?;
    let (n, cout, _, _) = input.dims4();
    if grad_out.shape() != [n, g.channels, g.height, g.width] {
        return Err(Error::shape(
            "deconv2d_backward",
            format!(
                "grad_out {:?} != output {:?}",
                grad_out.shape(),
                [n, g.channels, g.height, g.width]
            ),
        ));
    }
    let in_len = cout * g.cols();
    let out_len = g.channels * g.height * g.width;
    let plane = g.height * g.width;
    let mut grad_input = vec![0.0; input.len()];
    let mut grad_w = vec![0.0; p.weights.len()];
    let mut grad_b = vec![0.0; g.channels];
    for b in 0..n {
        let go = &grad_out.data()[b * out_len..(b + 1) * out_len];
        for (c, gb) in grad_b.iter_mut().enumerate() {
            *gb += go[c * plane..(c + 1) * plane].iter().sum::<f64>();
        }
        let cols = im2col(go, &g);
        let y = &input.data()[b * in_len..(b + 1) * in_len];
        gemm(cout, g.rows(), g.cols(), p.weights.data(), false, &cols, false,
            &mut grad_input[b * in_len..(b + 1) * in_len], false);
        gemm(cout, g.cols(), g.rows(), y, false, &cols, true, &mut grad_w, true);
    }
    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), grad_input)?,
        weights: Tensor::new(p.weights.shape().to_vec(), grad_w)?,
        bias: Tensor::new(vec![g.channels], grad_b)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ones_kernel_counts_overlap() {
        let x = Tensor::full(&[1, 1, 3, 3], 1.0);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let b = Tensor::zeros(&[1]);
        let y = conv2d(&x, &ConvParams::new(&w, &b).padding(1)).unwrap();
        assert_eq!(y.data(), &[4., 6., 4., 6., 9., 6., 4., 6., 4.]);
    }

    #[test]
    fn dilated_kernel_on_one_hot_center_selects_center_tap() {
        let mut x = Tensor::zeros(&[1, 1, 5, 5]);
        x.data_mut()[12] = 1.0;
        let w = Tensor::from_fn(&[1, 1, 3, 3], |i| i as f64 + 1.0);
        let b = Tensor::zeros(&[1]);
        let y = conv2d(&x, &ConvParams::new(&w, &b).dilation(2)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data()[0], 5.0);
    }

    #[test]
    fn channel_mismatch_names_dimension() {
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        let w = Tensor::zeros(&[1, 3, 3, 3]);
        let b = Tensor::zeros(&[1]);
        let err = conv2d(&x, &ConvParams::new(&w, &b)).unwrap_err().to_string();
        assert!(err.contains("input channels 2"), "{err}");
    }

    #[test]
    fn too_small_input_is_rejected() {
        let x = Tensor::zeros(&[1, 1, 2, 2]);
        let w = Tensor::zeros(&[1, 1, 3, 3]);
        let b = Tensor::zeros(&[1]);
        assert!(conv2d(&x, &ConvParams::new(&w, &b)).is_err());
        assert!(conv2d(&x, &ConvParams::new(&w, &b).padding(1)).is_ok());
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let x = Tensor::from_fn(&[1, 2, 4, 4], |i| (i as f64).sin());
        let w = Tensor::from_fn(&[3, 2, 3, 3], |i| (i as f64).cos());
        let b = Tensor::zeros(&[3]);
        let p = ConvParams::new(&w, &b).padding(1);
        let g = conv2d_backward(&x, &p, &Tensor::zeros(&[1, 3, 4, 4])).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.weights.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_pixel_output_bias_grad_is_one() {
        let x = Tensor::from_fn(&[1, 1, 3, 3], |i| i as f64);
        let w = Tensor::full(&[2, 1, 3, 3], 0.5);
        let b = Tensor::zeros(&[2]);
        let p = ConvParams::new(&w, &b);
        let g = conv2d_backward(&x, &p, &Tensor::full(&[1, 2, 1, 1], 1.0)).unwrap();
        assert_eq!(g.bias.data(), &[1.0, 1.0]);
    }

    #[test]
    fn deconv_stamps_kernel() {
        let x = Tensor::full(&[1, 1, 1, 1], 3.5);
        let w = Tensor::full(&[1, 1, 2, 2], 1.0);
        let b = Tensor::zeros(&[1]);
        let y = deconv2d(&x, &ConvParams::new(&w, &b).stride(2)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[3.5; 4]);
    }

    #[test]
    fn deconv_of_zero_is_bias() {
        let x = Tensor::zeros(&[1, 2, 3, 3]);
        let w = Tensor::from_fn(&[2, 3, 4, 4], |i| i as f64);
        let b = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let y = deconv2d(&x, &ConvParams::new(&w, &b).stride(2).padding(1)).unwrap();
        assert_eq!(y.shape(), &[1, 3, 6, 6]);
        for c in 0..3 {
            assert!(y.plane(0, c).iter().all(|&v| v == b.data()[c]));
        }
    }

    #[test]
    fn deconv_rejects_empty_output() {
        let x = Tensor::zeros(&[1, 1, 1, 1]);
        let w = Tensor::zeros(&[1, 1, 2, 2]);
        let b = Tensor::zeros(&[1]);
        assert!(deconv2d(&x, &ConvParams::new(&w, &b).padding(1)).is_err());
    }
}
