//! Per-layer forward/backward kernels.
//!
//! Direct-loop implementations over row-major storage. Batch-norm moments
//! are accumulated in f64 so the per-feature statistics stay exact at any
//! reduction size the desk-scale runs use.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// y[b,o] = sum_i x[b,i] * w[o,i] + bias[o]
pub fn dense_forward(x: &Tensor, w: &Tensor, bias: &Tensor) -> Tensor {
    let (batch, in_dim) = (x.shape()[0], x.shape()[1]);
    let out_dim = w.shape()[0];
    let mut y = Tensor::zeros(&[batch, out_dim]);
    for b in 0..batch {
        let xb = &x.data()[b * in_dim..(b + 1) * in_dim];
        let yb = &mut y.data_mut()[b * out_dim..(b + 1) * out_dim];
        for o in 0..out_dim {
            let wo = &w.data()[o * in_dim..(o + 1) * in_dim];
            let mut acc = bias.data()[o];
            for i in 0..in_dim {
                acc += xb[i] * wo[i];
            }
            yb[o] = acc;
        }
    }
    y
}

/// Writes dw/db and returns dx. Gradients are plain vector-Jacobian
/// products; any batch-mean scaling rides in on `dy`.
pub fn dense_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    dw: &mut Tensor,
    db: &mut Tensor,
) -> Tensor {
    let (batch, in_dim) = (x.shape()[0], x.shape()[1]);
    let out_dim = w.shape()[0];
    let mut dx = Tensor::zeros(&[batch, in_dim]);
    dw.fill(0.0);
    db.fill(0.0);
    for b in 0..batch {
        let xb = &x.data()[b * in_dim..(b + 1) * in_dim];
        let dyb = &dy.data()[b * out_dim..(b + 1) * out_dim];
        for o in 0..out_dim {
            let g = dyb[o];
            db.data_mut()[o] += g;
            let dwo = &mut dw.data_mut()[o * in_dim..(o + 1) * in_dim];
            for i in 0..in_dim {
                dwo[i] += g * xb[i];
            }
        }
        let dxb = &mut dx.data_mut()[b * in_dim..(b + 1) * in_dim];
        for o in 0..out_dim {
            let g = dyb[o];
            let wo = &w.data()[o * in_dim..(o + 1) * in_dim];
            for i in 0..in_dim {
                dxb[i] += g * wo[i];
            }
        }
    }
    dx
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v = 0.0;
        }
    });
    y
}

pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        if v <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

pub fn flatten_forward(x: &Tensor) -> Tensor {
    let batch = x.shape()[0];
    let rest: usize = x.shape()[1..].iter().product();
    Tensor::from_vec(&[batch, rest], x.data().to_vec()).expect("flatten preserves length")
}

pub fn flatten_backward(input_shape: &[usize], dy: &Tensor) -> Tensor {
    Tensor::from_vec(input_shape, dy.data().to_vec()).expect("flatten preserves length")
}

fn conv_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = len + 2 * pad;
    if padded < kernel {
        return Err(Error::config(format!(
            "conv kernel {kernel} larger than padded input {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Direct (naive-loop) 2-D convolution. x: [B,C,H,W], w: [O,C,K,K].
pub fn conv2d_forward(
    x: &Tensor,
    w: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let (b_n, c_in, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (c_out, k) = (w.shape()[0], w.shape()[2]);
    let h_out = conv_out_len(h, k, stride, pad)?;
    let w_out = conv_out_len(wd, k, stride, pad)?;
    let mut y = Tensor::zeros(&[b_n, c_out, h_out, w_out]);
    let xd = x.data();
    let wdta = w.data();
    let yd = y.data_mut();
    for b in 0..b_n {
        for o in 0..c_out {
            for oh in 0..h_out {
                for ow in 0..w_out {
                    let mut acc = bias.data()[o];
                    for c in 0..c_in {
                        for kh in 0..k {
                            let ih = (oh * stride + kh) as isize - pad as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            for kw in 0..k {
                                let iw = (ow * stride + kw) as isize - pad as isize;
                                if iw < 0 || iw >= wd as isize {
                                    continue;
                                }
                                let xi = ((b * c_in + c) * h + ih as usize) * wd + iw as usize;
                                let wi = ((o * c_in + c) * k + kh) * k + kw;
                                acc += xd[xi] * wdta[wi];
                            }
                        }
                    }
                    yd[((b * c_out + o) * h_out + oh) * w_out + ow] = acc;
                }
            }
        }
    }
    Ok(y)
}

pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    stride: usize,
    pad: usize,
    dw: &mut Tensor,
    db: &mut Tensor,
) -> Tensor {
    let (b_n, c_in, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (c_out, k) = (w.shape()[0], w.shape()[2]);
    let (h_out, w_out) = (dy.shape()[2], dy.shape()[3]);
    let mut dx = Tensor::zeros(x.shape());
    dw.fill(0.0);
    db.fill(0.0);
    let xd = x.data();
    let wdta = w.data();
    let dyd = dy.data();
    for b in 0..b_n {
        for o in 0..c_out {
            for oh in 0..h_out {
                for ow in 0..w_out {
                    let g = dyd[((b * c_out + o) * h_out + oh) * w_out + ow];
                    if g == 0.0 {
                        continue;
                    }
                    db.data_mut()[o] += g;
                    for c in 0..c_in {
                        for kh in 0..k {
                            let ih = (oh * stride + kh) as isize - pad as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            for kw in 0..k {
                                let iw = (ow * stride + kw) as isize - pad as isize;
                                if iw < 0 || iw >= wd as isize {
                                    continue;
                                }
                                let xi = ((b * c_in + c) * h + ih as usize) * wd + iw as usize;
                                let wi = ((o * c_in + c) * k + kh) * k + kw;
                                dw.data_mut()[wi] += g * xd[xi];
                                dx.data_mut()[xi] += g * wdta[wi];
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Batch-norm layout: features along axis 1, reduction over every other
/// axis. Rank 2 ([B,F]) and rank 4 ([B,C,H,W]) are supported.
pub struct BnLayout {
    pub features: usize,
    /// Elements reduced per feature (B or B*H*W).
    pub group: usize,
    /// Spatial extent (1 for rank 2, H*W for rank 4).
    pub inner: usize,
}

pub fn bn_layout(x: &Tensor, features: usize) -> Result<BnLayout> {
    let shape = x.shape();
    let ok = match shape.len() {
        2 => shape[1] == features,
        4 => shape[1] == features,
        _ => false,
    };
    if !ok {
        return Err(Error::config(format!(
            "batchnorm({features}) cannot normalize input of shape {shape:?}"
        )));
    }
    let inner: usize = shape[2..].iter().product();
    Ok(BnLayout {
        features,
        group: shape[0] * inner,
        inner,
    })
}

/// Per-feature mean and population variance, accumulated in f64.
pub fn bn_batch_moments(x: &Tensor, layout: &BnLayout) -> (Vec<f64>, Vec<f64>) {
    let (sum, sumsq) = bn_feature_sums(x, layout);
    let m = layout.group as f64;
    let mut mean = vec![0.0; layout.features];
    let mut var = vec![0.0; layout.features];
    for f in 0..layout.features {
        mean[f] = sum[f] / m;
        var[f] = (sumsq[f] / m - mean[f] * mean[f]).max(0.0);
    }
    (mean, var)
}

/// Raw per-feature sum and sum-of-squares (f64), matching `bn_layout`.
pub fn bn_feature_sums(x: &Tensor, layout: &BnLayout) -> (Vec<f64>, Vec<f64>) {
    let mut sum = vec![0.0f64; layout.features];
    let mut sumsq = vec![0.0f64; layout.features];
    let batch = x.shape()[0];
    let inner = layout.inner;
    let xd = x.data();
    for b in 0..batch {
        for f in 0..layout.features {
            let base = (b * layout.features + f) * inner;
            for i in 0..inner {
                let v = xd[base + i] as f64;
                sum[f] += v;
                sumsq[f] += v * v;
            }
        }
    }
    (sum, sumsq)
}

/// Normalize with the given per-feature moments. Returns (y, xhat, inv_std).
pub fn bn_apply(
    x: &Tensor,
    layout: &BnLayout,
    mean: &[f64],
    var: &[f64],
    gamma: &Tensor,
    beta: &Tensor,
    eps: f32,
) -> (Tensor, Tensor, Vec<f32>) {
    let inv_std: Vec<f32> = var
        .iter()
        .map(|&v| 1.0 / ((v as f32) + eps).sqrt())
        .collect();
    let mut xhat = x.clone();
    let mut y = Tensor::zeros(x.shape());
    let batch = x.shape()[0];
    let inner = layout.inner;
    for b in 0..batch {
        for f in 0..layout.features {
            let base = (b * layout.features + f) * inner;
            let (mu, istd) = (mean[f] as f32, inv_std[f]);
            let (g, bt) = (gamma.data()[f], beta.data()[f]);
            for i in 0..inner {
                let xh = (xhat.data()[base + i] - mu) * istd;
                xhat.data_mut()[base + i] = xh;
                y.data_mut()[base + i] = g * xh + bt;
            }
        }
    }
    (y, xhat, inv_std)
}

/// Backward through batch-stats normalization.
/// Returns dx and writes dgamma/dbeta.
pub fn bn_backward(
    xhat: &Tensor,
    inv_std: &[f32],
    layout: &BnLayout,
    gamma: &Tensor,
    dy: &Tensor,
    dgamma: &mut Tensor,
    dbeta: &mut Tensor,
) -> Tensor {
    let batch = dy.shape()[0];
    let inner = layout.inner;
    let m = layout.group as f64;
    dgamma.fill(0.0);
    dbeta.fill(0.0);
    // Per-feature reductions first (f64 accumulators).
    let mut sum_dy = vec![0.0f64; layout.features];
    let mut sum_dy_xhat = vec![0.0f64; layout.features];
    for b in 0..batch {
        for f in 0..layout.features {
            let base = (b * layout.features + f) * inner;
            for i in 0..inner {
                let d = dy.data()[base + i] as f64;
                sum_dy[f] += d;
                sum_dy_xhat[f] += d * xhat.data()[base + i] as f64;
            }
        }
    }
    for f in 0..layout.features {
        dbeta.data_mut()[f] = sum_dy[f] as f32;
        dgamma.data_mut()[f] = sum_dy_xhat[f] as f32;
    }
    let mut dx = Tensor::zeros(dy.shape());
    for b in 0..batch {
        for f in 0..layout.features {
            let base = (b * layout.features + f) * inner;
            let scale = gamma.data()[f] * inv_std[f];
            let mean_dy = (sum_dy[f] / m) as f32;
            let mean_dy_xhat = (sum_dy_xhat[f] / m) as f32;
            for i in 0..inner {
                let d = dy.data()[base + i];
                let xh = xhat.data()[base + i];
                dx.data_mut()[base + i] = scale * (d - mean_dy - xh * mean_dy_xhat);
            }
        }
    }
    dx
}

/// Eval-mode batch norm: normalize by running statistics only.
pub fn bn_eval_forward(
    x: &Tensor,
    layout: &BnLayout,
    running_mean: &Tensor,
    running_var: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f32,
) -> Tensor {
    let mut y = Tensor::zeros(x.shape());
    let batch = x.shape()[0];
    let inner = layout.inner;
    for b in 0..batch {
        for f in 0..layout.features {
            let base = (b * layout.features + f) * inner;
            let istd = 1.0 / (running_var.data()[f] + eps).sqrt();
            let mu = running_mean.data()[f];
            let (g, bt) = (gamma.data()[f], beta.data()[f]);
            for i in 0..inner {
                y.data_mut()[base + i] = g * (x.data()[base + i] - mu) * istd + bt;
            }
        }
    }
    y
}
