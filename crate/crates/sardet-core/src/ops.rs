//! Forward and backward kernels for the network primitives.
//!
//! Kernels are plain functions over [`Tensor`]s so the same code serves the
//! recording tape and the tape-free inference path. Inner loops run over
//! contiguous rows to keep them vectorizable.
//!
//! Conventions: images and feature maps are `[channels, height, width]`,
//! convolution kernels `[out_ch, in_ch, kh, kw]` with valid padding and
//! stride 1, fully-connected weights `[in, out]`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn shape_err(op: &'static str, expected: String, got: String) -> Error {
    Error::ShapeMismatch { op, expected, got }
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

pub(crate) struct ConvDims {
    pub ic: usize,
    pub h: usize,
    pub w: usize,
    pub oc: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
}

pub(crate) fn conv2d_dims(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<ConvDims> {
    let (&[ic, h, w], &[oc, kic, kh, kw]) = (input.shape(), kernel.shape()) else {
        return Err(shape_err(
            "conv2d",
            "input [c,h,w] and kernel [oc,ic,kh,kw]".into(),
            format!("input {:?}, kernel {:?}", input.shape(), kernel.shape()),
        ));
    };
    if kic != ic {
        return Err(shape_err(
            "conv2d",
            format!("kernel with {ic} input channels"),
            format!("kernel {:?}", kernel.shape()),
        ));
    }
    if bias.shape() != [oc] {
        return Err(shape_err(
            "conv2d",
            format!("bias [{oc}]"),
            format!("bias {:?}", bias.shape()),
        ));
    }
    if kh > h || kw > w || kh == 0 || kw == 0 {
        return Err(shape_err(
            "conv2d",
            format!("kernel no larger than the {h}x{w} input (valid padding, stride 1)"),
            format!("kernel {kh}x{kw}"),
        ));
    }
    Ok(ConvDims {
        ic,
        h,
        w,
        oc,
        kh,
        kw,
        oh: h - kh + 1,
        ow: w - kw + 1,
    })
}

pub(crate) fn conv2d(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let d = conv2d_dims(input, kernel, bias)?;
    let x = input.data();
    let k = kernel.data();
    let mut out = vec![0.0f32; d.oc * d.oh * d.ow];
    for o in 0..d.oc {
        let plane = &mut out[o * d.oh * d.ow..(o + 1) * d.oh * d.ow];
        plane.fill(bias.data()[o]);
        for c in 0..d.ic {
            for ky in 0..d.kh {
                for kx in 0..d.kw {
                    let kv = k[((o * d.ic + c) * d.kh + ky) * d.kw + kx];
                    for oy in 0..d.oh {
                        let in_row = &x[(c * d.h + oy + ky) * d.w + kx..][..d.ow];
                        let out_row = &mut plane[oy * d.ow..][..d.ow];
                        for (ov, iv) in out_row.iter_mut().zip(in_row) {
                            *ov += kv * iv;
                        }
                    }
                }
            }
        }
    }
    let t = Tensor::from_raw(vec![d.oc, d.oh, d.ow], out);
    t.check_finite("conv2d")?;
    Ok(t)
}

/// Gradients for conv2d: (d_input, d_kernel, d_bias).
pub(crate) fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let d = conv2d_dims(input, kernel, bias)?;
    let x = input.data();
    let k = kernel.data();
    let g = grad_out.data();
    let mut dx = vec![0.0f32; x.len()];
    let mut dk = vec![0.0f32; k.len()];
    let mut db = vec![0.0f32; d.oc];
    for o in 0..d.oc {
        let g_plane = &g[o * d.oh * d.ow..(o + 1) * d.oh * d.ow];
        db[o] = g_plane.iter().sum();
        for c in 0..d.ic {
            for ky in 0..d.kh {
                for kx in 0..d.kw {
                    let kv = k[((o * d.ic + c) * d.kh + ky) * d.kw + kx];
                    let mut acc = 0.0f32;
                    for oy in 0..d.oh {
                        let g_row = &g_plane[oy * d.ow..][..d.ow];
                        let base = (c * d.h + oy + ky) * d.w + kx;
                        let in_row = &x[base..][..d.ow];
                        let dx_row = &mut dx[base..][..d.ow];
                        for ((dv, gv), iv) in dx_row.iter_mut().zip(g_row).zip(in_row) {
                            *dv += kv * gv;
                            acc += gv * iv;
                        }
                    }
                    dk[((o * d.ic + c) * d.kh + ky) * d.kw + kx] += acc;
                }
            }
        }
    }
    Ok((
        Tensor::from_raw(vec![d.ic, d.h, d.w], dx),
        Tensor::from_raw(vec![d.oc, d.ic, d.kh, d.kw], dk),
        Tensor::from_raw(vec![d.oc], db),
    ))
}

// ---------------------------------------------------------------------------
// Max pooling
// ---------------------------------------------------------------------------

/// Max-pool with a square window. Trailing rows/columns that do not fill a
/// whole window are truncated, matching the valid convention.
pub(crate) fn max_pool(
    input: &Tensor,
    window: usize,
    stride: usize,
) -> Result<(Tensor, Vec<u32>)> {
    let &[c, h, w] = input.shape() else {
        return Err(shape_err(
            "max_pool",
            "input [c,h,w]".into(),
            format!("{:?}", input.shape()),
        ));
    };
    if window == 0 || stride == 0 {
        return Err(shape_err(
            "max_pool",
            "window and stride >= 1".into(),
            format!("window {window}, stride {stride}"),
        ));
    }
    if h < window || w < window {
        return Err(shape_err(
            "max_pool",
            format!("input at least {window}x{window} (trailing extents truncate)"),
            format!("{h}x{w}"),
        ));
    }
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let x = input.data();
    let mut out = vec![0.0f32; c * oh * ow];
    let mut switches = vec![0u32; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = (ch * h + oy * stride) * w + ox * stride;
                let mut best = x[best_idx];
                for dy in 0..window {
                    for dx in 0..window {
                        let idx = (ch * h + oy * stride + dy) * w + ox * stride + dx;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = (ch * oh + oy) * ow + ox;
                out[o] = best;
                switches[o] = best_idx as u32;
            }
        }
    }
    Ok((Tensor::from_raw(vec![c, oh, ow], out), switches))
}

pub(crate) fn max_pool_backward(
    input_shape: &[usize],
    switches: &[u32],
    grad_out: &Tensor,
) -> Tensor {
    let mut dx = Tensor::zeros(input_shape.to_vec());
    let d = dx.data_mut();
    for (&s, &g) in switches.iter().zip(grad_out.data()) {
        d[s as usize] += g;
    }
    dx
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

pub(crate) fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Standard rule: pass gradient where the forward input was positive.
pub(crate) fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut dx = grad_out.clone();
    for (d, &x) in dx.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

/// Guided rule: pass gradient only where the forward input was positive
/// AND the upstream gradient is positive.
pub(crate) fn relu_backward_guided(input: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut dx = grad_out.clone();
    for (d, &x) in dx.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 || *d <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// Fully connected
// ---------------------------------------------------------------------------

pub(crate) fn fc_dims(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<(usize, usize)> {
    let &[n, m] = weight.shape() else {
        return Err(shape_err(
            "fully_connected",
            "weight [in, out]".into(),
            format!("{:?}", weight.shape()),
        ));
    };
    if input.len() != n {
        return Err(shape_err(
            "fully_connected",
            format!("input with {n} elements"),
            format!("{:?} ({} elements)", input.shape(), input.len()),
        ));
    }
    if bias.shape() != [m] {
        return Err(shape_err(
            "fully_connected",
            format!("bias [{m}]"),
            format!("{:?}", bias.shape()),
        ));
    }
    Ok((n, m))
}

/// `out[j] = bias[j] + sum_i input[i] * weight[i, j]`; the input is used
/// flattened in row-major order.
pub(crate) fn fully_connected(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, m) = fc_dims(input, weight, bias)?;
    let mut out = bias.data().to_vec();
    let wd = weight.data();
    for i in 0..n {
        let xv = input.data()[i];
        if xv == 0.0 {
            continue;
        }
        let w_row = &wd[i * m..][..m];
        for (ov, wv) in out.iter_mut().zip(w_row) {
            *ov += xv * wv;
        }
    }
    let t = Tensor::from_raw(vec![m], out);
    t.check_finite("fully_connected")?;
    Ok(t)
}

pub(crate) fn fully_connected_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let &[n, m] = weight.shape() else {
        unreachable!("validated at forward time");
    };
    let g = grad_out.data();
    let wd = weight.data();
    let mut dx = vec![0.0f32; n];
    let mut dw = vec![0.0f32; n * m];
    for i in 0..n {
        let w_row = &wd[i * m..][..m];
        let mut acc = 0.0f32;
        let xv = input.data()[i];
        let dw_row = &mut dw[i * m..][..m];
        for ((dwv, gv), wv) in dw_row.iter_mut().zip(g).zip(w_row) {
            *dwv += xv * gv;
            acc += gv * wv;
        }
        dx[i] = acc;
    }
    Ok((
        Tensor::from_raw(input.shape().to_vec(), dx),
        Tensor::from_raw(vec![n, m], dw),
        grad_out.clone(),
    ))
}

// ---------------------------------------------------------------------------
// Log-softmax and negative log-likelihood
// ---------------------------------------------------------------------------

/// Numerically stable log-softmax over a rank-1 logit vector
/// (max subtraction, f64 accumulation of the normalizer).
pub(crate) fn log_softmax(input: &Tensor) -> Result<Tensor> {
    if input.shape().len() != 1 || input.is_empty() {
        return Err(shape_err(
            "log_softmax",
            "non-empty rank-1 logits".into(),
            format!("{:?}", input.shape()),
        ));
    }
    let x = input.data();
    let m = x.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let z: f64 = x.iter().map(|&v| ((v - m) as f64).exp()).sum();
    let lz = z.ln() as f32;
    let out: Vec<f32> = x.iter().map(|&v| v - m - lz).collect();
    let t = Tensor::from_raw(vec![x.len()], out);
    t.check_finite("log_softmax")?;
    Ok(t)
}

pub(crate) fn log_softmax_backward(output: &Tensor, grad_out: &Tensor) -> Tensor {
    let gsum: f64 = grad_out.data().iter().map(|&g| g as f64).sum();
    let mut dx = grad_out.clone();
    for (d, &y) in dx.data_mut().iter_mut().zip(output.data()) {
        *d -= (y as f64).exp() as f32 * gsum as f32;
    }
    dx
}

/// `-log_probs[target]` as a 1-element tensor.
pub(crate) fn nll_loss(log_probs: &Tensor, target: usize) -> Result<Tensor> {
    if log_probs.shape().len() != 1 {
        return Err(shape_err(
            "nll_loss",
            "rank-1 log-probabilities".into(),
            format!("{:?}", log_probs.shape()),
        ));
    }
    if target >= log_probs.len() {
        return Err(Error::OutOfBounds {
            what: "nll_loss target",
            detail: format!("class {target} with {} classes", log_probs.len()),
        });
    }
    Ok(Tensor::from_vec(vec![-log_probs.data()[target]]))
}

pub(crate) fn nll_loss_backward(len: usize, target: usize, grad_out: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(vec![len]);
    dx.data_mut()[target] = -grad_out.data()[0];
    dx
}

// ---------------------------------------------------------------------------
// Scalar scale
// ---------------------------------------------------------------------------

pub(crate) fn scale(input: &Tensor, factor: f32) -> Result<Tensor> {
    let mut out = input.clone();
    for v in out.data_mut() {
        *v *= factor;
    }
    out.check_finite("scale")?;
    Ok(out)
}

/// Softmax in f64, used by the inference paths that feed entropies.
pub fn softmax_f64(logits: &Tensor) -> Vec<f64> {
    let m = logits
        .data()
        .iter()
        .copied()
        .fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = logits
        .data()
        .iter()
        .map(|&v| ((v as f64) - m).exp())
        .collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_matches_definition() {
        let t = Tensor::new(vec![3], vec![-1.0, 0.0, 2.5]).unwrap();
        assert_eq!(relu(&t).data(), &[0.0, 0.0, 2.5]);
    }

    #[test]
    fn conv_unit_kernel_sums_window() {
        let input = Tensor::filled(vec![1, 3, 3], 1.0);
        let kernel = Tensor::filled(vec![1, 1, 2, 2], 1.0);
        let bias = Tensor::zeros(vec![1]);
        let out = conv2d(&input, &kernel, &bias).unwrap();
        assert_eq!(out.shape(), &[1, 2, 2]);
        assert_eq!(out.data(), &[4.0, 4.0, 4.0, 4.0]);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let input = Tensor::filled(vec![2, 3, 3], 1.0);
        let kernel = Tensor::filled(vec![1, 1, 2, 2], 1.0);
        let bias = Tensor::zeros(vec![1]);
        let err = conv2d(&input, &kernel, &bias).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("conv2d") && msg.contains("expected"), "{msg}");
    }

    #[test]
    fn maxpool_takes_window_max() {
        let input = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (out, switches) = max_pool(&input, 2, 2).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1]);
        assert_eq!(out.data(), &[4.0]);
        assert_eq!(switches, &[3]);
    }

    #[test]
    fn maxpool_truncates_trailing() {
        // 3x3 with window 2, stride 2: only one full window fits.
        let input = Tensor::new(vec![1, 3, 3], (0..9).map(|v| v as f32).collect()).unwrap();
        let (out, _) = max_pool(&input, 2, 2).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1]);
        assert_eq!(out.data(), &[4.0]);
    }

    #[test]
    fn fc_shape_follows_weight() {
        let x = Tensor::from_vec(vec![1.0, 2.0]);
        let w = Tensor::new(vec![2, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let b = Tensor::from_vec(vec![0.0, 0.0, 5.0]);
        let out = fully_connected(&x, &w, &b).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0, 5.0]);
    }

    #[test]
    fn log_softmax_normalizes() {
        let t = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
        let ls = log_softmax(&t).unwrap();
        let total: f64 = ls.data().iter().map(|&v| (v as f64).exp()).sum();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn log_softmax_survives_large_logits() {
        let t = Tensor::from_vec(vec![500.0, 0.0]);
        let ls = log_softmax(&t).unwrap();
        assert!(ls.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn nll_picks_target() {
        let lp = Tensor::from_vec(vec![-0.5, -1.5]);
        assert_eq!(nll_loss(&lp, 1).unwrap().data(), &[1.5]);
        assert!(nll_loss(&lp, 2).is_err());
    }
}
