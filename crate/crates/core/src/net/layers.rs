//! Forward and backward kernels for each layer type.

use super::{NetError, Tensor};

pub const KERNEL: usize = 5;
/// Zero padding per side; keeps the spatial size under a 5x5 kernel.
pub const PAD: usize = 2;

/// 5x5 same-padded convolution; weights are (out, in, 5, 5) row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub out_channels: usize,
    pub in_channels: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(out_channels: usize, in_channels: usize) -> Self {
        Self {
            out_channels,
            in_channels,
            weights: vec![0.0; out_channels * in_channels * KERNEL * KERNEL],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn weight_index(&self, m: usize, c: usize, ky: usize, kx: usize) -> usize {
        ((m * self.in_channels + c) * KERNEL + ky) * KERNEL + kx
    }
}

/// Fully connected layer; weights are (out, in) row-major. The input is
/// flattened whatever its shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub outputs: usize,
    pub inputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(outputs: usize, inputs: usize) -> Self {
        Self {
            outputs,
            inputs,
            weights: vec![0.0; outputs * inputs],
            bias: vec![0.0; outputs],
        }
    }
}

/// Gradient (or momentum buffer) for one parameterized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ParamGrad {
    pub fn zeros(n_weights: usize, n_bias: usize) -> Self {
        Self {
            weights: vec![0.0; n_weights],
            bias: vec![0.0; n_bias],
        }
    }

    pub fn add_assign(&mut self, other: &ParamGrad) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }
}

/// Valid output range along one axis for kernel offset `k`, plus the signed
/// input shift.
#[inline]
fn tap_range(k: usize, len: usize) -> (usize, usize, isize) {
    let d = k as isize - PAD as isize;
    let lo = (-d).max(0).min(len as isize);
    let hi = (len as isize - d.max(0)).max(lo);
    (lo as usize, hi as usize, d)
}

/// Unfold a (c, h, w) input into a (c*25, h*w) patch matrix: row (c, ky, kx)
/// holds the input seen by that kernel tap at every output position, with
/// zeros where the tap falls into the padding.
fn im2col(x: &[f64], c_in: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut cols = vec![0.0; c_in * KERNEL * KERNEL * hw];
    for c in 0..c_in {
        let in_c = &x[c * hw..(c + 1) * hw];
        for ky in 0..KERNEL {
            let (y0, y1, dy) = tap_range(ky, h);
            for kx in 0..KERNEL {
                let (x0, x1, dx) = tap_range(kx, w);
                if x0 == x1 {
                    continue;
                }
                let row = (c * KERNEL + ky) * KERNEL + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for oy in y0..y1 {
                    let iy = (oy as isize + dy) as usize;
                    let ix0 = (x0 as isize + dx) as usize;
                    dst[oy * w + x0..oy * w + x1]
                        .copy_from_slice(&in_c[iy * w + ix0..iy * w + ix0 + (x1 - x0)]);
                }
            }
        }
    }
    cols
}

/// Inverse scatter of `im2col`: accumulate patch-matrix gradients back onto
/// the input positions they were read from.
fn col2im(cols: &[f64], c_in: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut x = vec![0.0; c_in * hw];
    for c in 0..c_in {
        let in_c = &mut x[c * hw..(c + 1) * hw];
        for ky in 0..KERNEL {
            let (y0, y1, dy) = tap_range(ky, h);
            for kx in 0..KERNEL {
                let (x0, x1, dx) = tap_range(kx, w);
                if x0 == x1 {
                    continue;
                }
                let row = (c * KERNEL + ky) * KERNEL + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                for oy in y0..y1 {
                    let iy = (oy as isize + dy) as usize;
                    let ix0 = (x0 as isize + dx) as usize;
                    for (d, s) in in_c[iy * w + ix0..iy * w + ix0 + (x1 - x0)]
                        .iter_mut()
                        .zip(&src[oy * w + x0..oy * w + x1])
                    {
                        *d += s;
                    }
                }
            }
        }
    }
    x
}

/// C (m x n) = A (m x k) * B (k x n) + beta * C, every operand given with
/// explicit (row, column) strides.
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
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: the asserts above keep every strided access inside the slices.
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
            rsc as isize,
            csc as isize,
        );
    }
}

pub fn conv2d_forward(input: &Tensor, conv: &Conv2d) -> Result<Tensor, NetError> {
    let (c_in, h, w) = input.chw();
    if c_in != conv.in_channels {
        return Err(NetError::Shape(format!(
            "conv expects {} input channels, got {c_in}",
            conv.in_channels
        )));
    }
    let hw = h * w;
    let ck = c_in * KERNEL * KERNEL;
    let cols = im2col(input.data(), c_in, h, w);
    let mut out = vec![0.0; conv.out_channels * hw];
    for (row, &b) in out.chunks_exact_mut(hw).zip(&conv.bias) {
        row.fill(b);
    }
    gemm(
        conv.out_channels,
        ck,
        hw,
        &conv.weights,
        (ck, 1),
        &cols,
        (hw, 1),
        1.0,
        &mut out,
        (hw, 1),
    );
    Tensor::new(vec![conv.out_channels, h, w], out)
}

/// Accumulates parameter gradients into `grad`; returns the input gradient
/// when `want_input` is set.
pub fn conv2d_backward(
    input: &Tensor,
    conv: &Conv2d,
    grad_out: &Tensor,
    grad: Option<&mut ParamGrad>,
    want_input: bool,
) -> Option<Tensor> {
    let (c_in, h, w) = input.chw();
    let hw = h * w;
    let ck = c_in * KERNEL * KERNEL;
    let m = conv.out_channels;
    let g = grad_out.data();

    if let Some(grad) = grad {
        let cols = im2col(input.data(), c_in, h, w);
        for (gb, g_m) in grad.bias.iter_mut().zip(g.chunks_exact(hw)) {
            *gb += g_m.iter().sum::<f64>();
        }
        // dW^T (ck x m) += cols (ck x hw) * G^T (hw x m), stored transposed
        // into the (m x ck) weight gradient.
        gemm(ck, hw, m, &cols, (hw, 1), g, (1, hw), 1.0, &mut grad.weights, (1, ck));
    }

    if !want_input {
        return None;
    }
    // dcols (ck x hw) = W^T (ck x m) * G (m x hw)
    let mut dcols = vec![0.0; ck * hw];
    gemm(ck, m, hw, &conv.weights, (1, ck), g, (hw, 1), 0.0, &mut dcols, (hw, 1));
    let gin = col2im(&dcols, c_in, h, w);
    Some(Tensor::new(input.shape().to_vec(), gin).expect("input gradient shape"))
}

/// 2x2 max pooling, stride 2, floor on odd sizes. Returns the flat input index
/// of each window's maximum (first maximum on ties).
pub fn maxpool_forward(input: &Tensor) -> (Tensor, Vec<u32>) {
    let (c, h, w) = input.chw();
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] || x[idx].is_nan() {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best as u32);
            }
        }
    }
    (
        Tensor::new(vec![c, oh, ow], out).expect("pool shape"),
        argmax,
    )
}

pub fn maxpool_backward(grad_out: &Tensor, argmax: &[u32], input_shape: &[usize]) -> Tensor {
    let mut gin = Tensor::zeros(input_shape.to_vec());
    let gi = gin.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        gi[idx as usize] += g;
    }
    gin
}

pub fn relu_forward(input: &Tensor) -> Tensor {
    Tensor::new(
        input.shape().to_vec(),
        // NaN passes through so divergence stays visible in the loss.
        input.data().iter().map(|&v| if v < 0.0 { 0.0 } else { v }).collect(),
    )
    .expect("same shape")
}

pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data).expect("same shape")
}

/// Guided ReLU backward: a gradient survives only where both the forward
/// input and the incoming gradient are positive.
pub fn guided_relu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 && g > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data).expect("same shape")
}

/// Dot product with eight independent partial sums, so it vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    acc.iter().sum::<f64>() + tail
}

pub fn dense_forward(input: &Tensor, dense: &Dense) -> Result<Tensor, NetError> {
    let x = input.data();
    if x.len() != dense.inputs {
        return Err(NetError::Shape(format!(
            "dense layer expects {} inputs, got {}",
            dense.inputs,
            x.len()
        )));
    }
    let out = dense
        .weights
        .chunks_exact(dense.inputs)
        .zip(&dense.bias)
        .map(|(row, b)| b + dot(row, x))
        .collect();
    Tensor::new(vec![dense.outputs], out)
}

pub fn dense_backward(
    input: &Tensor,
    dense: &Dense,
    grad_out: &Tensor,
    grad: Option<&mut ParamGrad>,
    want_input: bool,
) -> Option<Tensor> {
    let x = input.data();
    let g = grad_out.data();
    if let Some(grad) = grad {
        for ((gw_row, gb), &go) in grad
            .weights
            .chunks_exact_mut(dense.inputs)
            .zip(grad.bias.iter_mut())
            .zip(g)
        {
            *gb += go;
            if go != 0.0 {
                for (gw, v) in gw_row.iter_mut().zip(x) {
                    *gw += go * v;
                }
            }
        }
    }
    if !want_input {
        return None;
    }
    let mut gin = vec![0.0; dense.inputs];
    for (row, &go) in dense.weights.chunks_exact(dense.inputs).zip(g) {
        if go != 0.0 {
            for (gi, w) in gin.iter_mut().zip(row) {
                *gi += go * w;
            }
        }
    }
    Some(Tensor::new(input.shape().to_vec(), gin).expect("input gradient shape"))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of a target distribution against softmax(logits), computed
/// in log space so that confident predictions keep a nonzero loss.
pub fn cross_entropy_logits(logits: &[f64], target: &[f64]) -> f64 {
    let (imax, &m) = logits
        .iter()
        .enumerate()
        .fold((0, &f64::NEG_INFINITY), |best, cur| if *cur.1 > *best.1 { cur } else { best });
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != imax)
        .map(|(_, &z)| (z - m).exp())
        .sum();
    let lse_minus_max = rest.ln_1p();
    logits
        .iter()
        .zip(target)
        .filter(|(_, &t)| t > 0.0)
        .map(|(&z, &t)| t * ((m - z) + lse_minus_max))
        .sum()
}

/// Cross-entropy of predicted probabilities against a target distribution.
pub fn cross_entropy(probs: &[f64], target: &[f64]) -> f64 {
    probs
        .iter()
        .zip(target)
        .filter(|(_, &t)| t > 0.0)
        .map(|(&p, &t)| -t * p.max(f64::MIN_POSITIVE).ln())
        .sum()
}
