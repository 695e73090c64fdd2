//! Forward and backward kernels for the primitive operations.
//!
//! These are plain functions of tensors. The [`Graph`](crate::autodiff::Graph)
//! records calls to them and chains the backward kernels in reverse.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Padding rule for [`conv2d`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// No padding; the kernel must fit inside the input.
    Valid,
    /// Output spatial size is `ceil(input / stride)`. Odd padding totals put
    /// the extra row/column on the bottom/right.
    Same,
}

/// Geometry of a 2D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub padding: Padding,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvSpec {
    /// Square kernel, equal strides.
    pub fn square(kernel: usize, stride: usize, padding: Padding, in_channels: usize, out_channels: usize) -> Self {
        ConvSpec {
            kernel_h: kernel,
            kernel_w: kernel,
            stride_h: stride,
            stride_w: stride,
            padding,
            in_channels,
            out_channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_h == 0 || self.kernel_w == 0 {
            return Err(Error::shape("conv2d", "kernel dims must be >= 1"));
        }
        if self.stride_h == 0 || self.stride_w == 0 {
            return Err(Error::shape("conv2d", "strides must be >= 1"));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::shape("conv2d", "channel counts must be >= 1"));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(self.out_channels, self.in_channels, self.kernel_h, self.kernel_w)
    }

    /// Output `(height, width)` and leading `(top, left)` padding for an input
    /// of the given spatial size.
    pub fn geometry(&self, height: usize, width: usize) -> Result<ConvGeometry> {
        let (out_h, pad_top) = axis(height, self.kernel_h, self.stride_h, self.padding, "height")?;
        let (out_w, pad_left) = axis(width, self.kernel_w, self.stride_w, self.padding, "width")?;
        Ok(ConvGeometry {
            in_h: height,
            in_w: width,
            out_h,
            out_w,
            pad_top,
            pad_left,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.kernel_h == 1 && self.kernel_w == 1 && self.stride_h == 1 && self.stride_w == 1
    }
}

fn axis(input: usize, kernel: usize, stride: usize, padding: Padding, dim: &'static str) -> Result<(usize, usize)> {
    match padding {
        Padding::Valid => {
            if input < kernel {
                return Err(Error::ShapeMismatch {
                    op: "conv2d",
                    dim,
                    got: input,
                    expected: kernel,
                });
            }
            Ok(((input - kernel) / stride + 1, 0))
        }
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Ok((out, total / 2))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

fn check_conv_args(input: &Tensor, weights: &Tensor, bias: &Tensor, spec: &ConvSpec) -> Result<ConvGeometry> {
    spec.validate()?;
    let s = input.shape();
    if s.channels != spec.in_channels {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            dim: "input channels",
            got: s.channels,
            expected: spec.in_channels,
        });
    }
    weights.expect_shape(spec.weight_shape(), "conv2d weights")?;
    if bias.len() != spec.out_channels {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            dim: "bias length",
            got: bias.len(),
            expected: spec.out_channels,
        });
    }
    spec.geometry(s.height, s.width)
}

/// Unrolls one batch item into a `(in_ch * kh * kw) x (out_h * out_w)` matrix.
fn im2col(item: &[f64], spec: &ConvSpec, g: &ConvGeometry, col: &mut [f64]) {
    let plane = g.out_h * g.out_w;
    let mut row = 0;
    for c in 0..spec.in_channels {
        let src = &item[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..spec.kernel_h {
            for kx in 0..spec.kernel_w {
                let dst = &mut col[row * plane..(row + 1) * plane];
                for oy in 0..g.out_h {
                    let iy = (oy * spec.stride_h + ky) as isize - g.pad_top as isize;
                    let out_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.in_h as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src_row = &src[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = (ox * spec.stride_w + kx) as isize - g.pad_left as isize;
                        *v = if ix < 0 || ix >= g.in_w as isize {
                            0.0
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-adds a column matrix back into an input-shaped item.
fn col2im(col: &[f64], spec: &ConvSpec, g: &ConvGeometry, item: &mut [f64]) {
    let plane = g.out_h * g.out_w;
    let mut row = 0;
    for c in 0..spec.in_channels {
        let dst = &mut item[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..spec.kernel_h {
            for kx in 0..spec.kernel_w {
                let src = &col[row * plane..(row + 1) * plane];
                for oy in 0..g.out_h {
                    let iy = (oy * spec.stride_h + ky) as isize - g.pad_top as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for ox in 0..g.out_w {
                        let ix = (ox * spec.stride_w + kx) as isize - g.pad_left as isize;
                        if ix >= 0 && (ix as usize) < g.in_w {
                            dst_row[ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Row-major GEMM: `c = alpha * op(a) * op(b) + beta * c`, with operands
/// described by explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(a.len() >= (m - 1) * rsa + (k - 1) * csa + 1);
    debug_assert!(b.len() >= (k - 1) * rsb + (n - 1) * csb + 1);
    debug_assert!(c.len() >= m * n);
    // SAFETY: the slice bounds checked above cover every element addressed by
    // the given dimensions and strides, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// 2D cross-correlation (the kernel is not flipped).
///
/// `weights` has shape `(out_channels, in_channels, kernel_h, kernel_w)` and
/// `bias` holds `out_channels` values in any shape.
pub fn conv2d(input: &Tensor, weights: &Tensor, bias: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    let g = check_conv_args(input, weights, bias, spec)?;
    let s = input.shape();
    let plane = g.out_h * g.out_w;
    let k = spec.in_channels * spec.kernel_h * spec.kernel_w;
    let out_shape = Shape::new(s.batch, spec.out_channels, g.out_h, g.out_w);
    let mut out = Tensor::zeros(out_shape);
    let pointwise = spec.is_pointwise();
    let mut col = if pointwise { Vec::new() } else { vec![0.0; k * plane] };
    let item_len = out_shape.item();
    for b in 0..s.batch {
        let dst = &mut out.data_mut()[b * item_len..(b + 1) * item_len];
        for (o, &bv) in bias.data().iter().enumerate() {
            dst[o * plane..(o + 1) * plane].fill(bv);
        }
        let src: &[f64] = if pointwise {
            input.item(b)
        } else {
            im2col(input.item(b), spec, &g, &mut col);
            &col
        };
        gemm(spec.out_channels, k, plane, weights.data(), (k, 1), src, (plane, 1), 1.0, dst);
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to its three operands.
pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub weights: Tensor,
    pub bias: Vec<f64>,
}

/// Backward pass of [`conv2d`] given the upstream gradient of its output.
/// The input gradient is skipped when `need_input` is false.
pub fn conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    spec: &ConvSpec,
    grad_out: &Tensor,
    need_input: bool,
) -> Result<ConvGrads> {
    let s = input.shape();
    let g = spec.geometry(s.height, s.width)?;
    let plane = g.out_h * g.out_w;
    let k = spec.in_channels * spec.kernel_h * spec.kernel_w;
    grad_out.expect_shape(Shape::new(s.batch, spec.out_channels, g.out_h, g.out_w), "conv2d backward")?;

    let pointwise = spec.is_pointwise();
    let mut col = if pointwise { Vec::new() } else { vec![0.0; k * plane] };
    let mut dcol = vec![0.0; k * plane];
    let mut dw = Tensor::zeros(spec.weight_shape());
    let mut db = vec![0.0; spec.out_channels];
    let mut dx = need_input.then(|| Tensor::zeros(s));

    for b in 0..s.batch {
        let go = grad_out.item(b);
        for (o, acc) in db.iter_mut().enumerate() {
            *acc += go[o * plane..(o + 1) * plane].iter().sum::<f64>();
        }
        let src: &[f64] = if pointwise {
            input.item(b)
        } else {
            im2col(input.item(b), spec, &g, &mut col);
            &col
        };
        // dW (out x k) += dOut (out x plane) * col^T (plane x k)
        gemm(spec.out_channels, plane, k, go, (plane, 1), src, (1, plane), 1.0, dw.data_mut());

        if let Some(dx) = dx.as_mut() {
            // dcol (k x plane) = W^T (k x out) * dOut (out x plane)
            gemm(k, spec.out_channels, plane, weights.data(), (1, k), go, (plane, 1), 0.0, &mut dcol);
            let item_len = s.item();
            let dst = &mut dx.data_mut()[b * item_len..(b + 1) * item_len];
            if pointwise {
                for (d, v) in dst.iter_mut().zip(&dcol) {
                    *d += v;
                }
            } else {
                col2im(&dcol, spec, &g, dst);
            }
        }
    }
    Ok(ConvGrads {
        input: dx,
        weights: dw,
        bias: db,
    })
}

/// 2x2 max pooling with stride 2. Also returns, for every output cell, the
/// flat input index it was taken from (first maximum in row-major order).
pub fn maxpool2x2(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let s = input.shape();
    if s.height % 2 != 0 {
        return Err(Error::shape("maxpool2x2", format!("height {} is odd", s.height)));
    }
    if s.width % 2 != 0 {
        return Err(Error::shape("maxpool2x2", format!("width {} is odd", s.width)));
    }
    let os = Shape::new(s.batch, s.channels, s.height / 2, s.width / 2);
    let mut out = Tensor::zeros(os);
    let mut argmax = vec![0; os.numel()];
    let src = input.data();
    let mut o = 0;
    for bc in 0..s.batch * s.channels {
        let base = bc * s.plane();
        for oy in 0..os.height {
            for ox in 0..os.width {
                let top = base + 2 * oy * s.width + 2 * ox;
                let mut best = top;
                for idx in [top + 1, top + s.width, top + s.width + 1] {
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                out.data_mut()[o] = src[best];
                argmax[o] = best;
                o += 1;
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool2x2_backward(input_shape: Shape, argmax: &[usize], grad_out: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(input_shape);
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        dx.data_mut()[i] += g;
    }
    dx
}

/// Moves `block x block` groups of channels into spatial positions.
///
/// Output pixel `(y * block + dy, x * block + dx)` of channel `k` reads input
/// channel `k * block^2 + dy * block + dx` at `(y, x)`.
pub fn depth_to_space(input: &Tensor, block: usize) -> Result<Tensor> {
    let s = input.shape();
    let bb = block * block;
    if block == 0 || s.channels % bb != 0 {
        return Err(Error::shape(
            "depth_to_space",
            format!("{} channels not divisible by block^2 = {bb}", s.channels),
        ));
    }
    let os = Shape::new(s.batch, s.channels / bb, s.height * block, s.width * block);
    let mut out = Tensor::zeros(os);
    let src = input.data();
    let dst = out.data_mut();
    for b in 0..s.batch {
        for k in 0..os.channels {
            for dy in 0..block {
                for dx in 0..block {
                    let c = k * bb + dy * block + dx;
                    for y in 0..s.height {
                        for x in 0..s.width {
                            dst[os.index(b, k, y * block + dy, x * block + dx)] = src[s.index(b, c, y, x)];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Exact inverse of [`depth_to_space`].
pub fn space_to_depth(input: &Tensor, block: usize) -> Result<Tensor> {
    let s = input.shape();
    if block == 0 || s.height % block != 0 || s.width % block != 0 {
        return Err(Error::shape(
            "space_to_depth",
            format!("spatial dims {}x{} not divisible by block {block}", s.height, s.width),
        ));
    }
    let bb = block * block;
    let os = Shape::new(s.batch, s.channels * bb, s.height / block, s.width / block);
    let mut out = Tensor::zeros(os);
    let src = input.data();
    let dst = out.data_mut();
    for b in 0..s.batch {
        for k in 0..s.channels {
            for dy in 0..block {
                for dx in 0..block {
                    let c = k * bb + dy * block + dx;
                    for y in 0..os.height {
                        for x in 0..os.width {
                            dst[os.index(b, c, y, x)] = src[s.index(b, k, y * block + dy, x * block + dx)];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    /// ReLU uses a zero subgradient at the origin.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

pub fn activation(input: &Tensor, kind: Activation) -> Tensor {
    input.map(|v| kind.apply(v))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Combine {
    Add,
    Average,
}

pub fn elementwise_combine(a: &Tensor, b: &Tensor, kind: Combine) -> Result<Tensor> {
    match kind {
        Combine::Add => a.zip_map(b, "add", |x, y| x + y),
        Combine::Average => a.zip_map(b, "average", |x, y| (x + y) / 2.0),
    }
}
