//! Layer arithmetic, generic over the float width.
//!
//! Every kernel is written once against `num_traits::Float` and monomorphized
//! at f32 for training/inference and at f64 for the gradient checks in
//! [`super::reference`]. Shapes are passed explicitly; callers are expected to
//! have validated them (the public wrappers in `nn` do).

use num_traits::Float;

#[inline]
fn tf<T: Float>(x: f64) -> T {
    T::from(x).expect("float conversion")
}

/// Valid output range `[lo, hi)` such that `o*stride + k - pad` stays in `[0, limit)`.
#[inline]
fn valid_range(k: usize, pad: usize, stride: usize, limit: usize, out_len: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k + stride - 1) / stride } else { 0 };
    // largest o with o*stride + k - pad <= limit - 1
    let hi = if limit + pad < k + 1 {
        0
    } else {
        ((limit + pad - k - 1) / stride + 1).min(out_len)
    };
    (lo.min(hi), hi)
}

/// Spatial output size of a convolution: floor((h + 2p - k)/s) + 1.
pub fn conv_out_dim(h: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = h + 2 * pad;
    if padded < k || stride == 0 {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// 2-D convolution forward. `input` is NCHW, `w` is OCkk, `b` has O entries.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward<T: Float>(
    input: &[T],
    w: &[T],
    b: &[T],
    n: usize,
    c_in: usize,
    h: usize,
    wd: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
    out: &mut [T],
) {
    let ho = conv_out_dim(h, k, stride, pad).unwrap();
    let wo = conv_out_dim(wd, k, stride, pad).unwrap();
    debug_assert_eq!(out.len(), n * c_out * ho * wo);

    for ni in 0..n {
        for oc in 0..c_out {
            let out_base = (ni * c_out + oc) * ho * wo;
            let bias = b[oc];
            for v in &mut out[out_base..out_base + ho * wo] {
                *v = bias;
            }
            for ic in 0..c_in {
                let in_base = (ni * c_in + ic) * h * wd;
                for kh in 0..k {
                    let (ho_lo, ho_hi) = valid_range(kh, pad, stride, h, ho);
                    for kw in 0..k {
                        let wv = w[((oc * c_in + ic) * k + kh) * k + kw];
                        if wv == T::zero() {
                            continue;
                        }
                        let (wo_lo, wo_hi) = valid_range(kw, pad, stride, wd, wo);
                        let count = wo_hi.saturating_sub(wo_lo);
                        if count == 0 {
                            continue;
                        }
                        for oy in ho_lo..ho_hi {
                            let iy = oy * stride + kh - pad;
                            let in_row = in_base + iy * wd;
                            let out_row = out_base + oy * wo;
                            let in_start = in_row + wo_lo * stride + kw - pad;
                            let orow = &mut out[out_row + wo_lo..out_row + wo_hi];
                            if stride == 1 {
                                let irow = &input[in_start..in_start + count];
                                for (o, &x) in orow.iter_mut().zip(irow) {
                                    *o = *o + wv * x;
                                }
                            } else {
                                let irow = input[in_start..].iter().step_by(stride);
                                for (o, &x) in orow.iter_mut().zip(irow) {
                                    *o = *o + wv * x;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2-D convolution backward: fills `d_input`, `d_w`, `d_b` (all pre-zeroed by caller).
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Float>(
    input: &[T],
    w: &[T],
    d_out: &[T],
    n: usize,
    c_in: usize,
    h: usize,
    wd: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
    d_input: &mut [T],
    d_w: &mut [T],
    d_b: &mut [T],
) {
    let ho = conv_out_dim(h, k, stride, pad).unwrap();
    let wo = conv_out_dim(wd, k, stride, pad).unwrap();

    for ni in 0..n {
        for oc in 0..c_out {
            let out_base = (ni * c_out + oc) * ho * wo;
            let mut acc = T::zero();
            for &g in &d_out[out_base..out_base + ho * wo] {
                acc = acc + g;
            }
            d_b[oc] = d_b[oc] + acc;

            for ic in 0..c_in {
                let in_base = (ni * c_in + ic) * h * wd;
                for kh in 0..k {
                    let (ho_lo, ho_hi) = valid_range(kh, pad, stride, h, ho);
                    for kw in 0..k {
                        let widx = ((oc * c_in + ic) * k + kh) * k + kw;
                        let wv = w[widx];
                        let (wo_lo, wo_hi) = valid_range(kw, pad, stride, wd, wo);
                        let count = wo_hi.saturating_sub(wo_lo);
                        if count == 0 {
                            continue;
                        }
                        let mut wacc = T::zero();
                        for oy in ho_lo..ho_hi {
                            let iy = oy * stride + kh - pad;
                            let in_row = in_base + iy * wd;
                            let out_row = out_base + oy * wo;
                            let in_start = in_row + wo_lo * stride + kw - pad;
                            let grow = &d_out[out_row + wo_lo..out_row + wo_hi];
                            if stride == 1 {
                                let xrow = &input[in_start..in_start + count];
                                let dxrow = &mut d_input[in_start..in_start + count];
                                for ((&g, &x), dx) in grow.iter().zip(xrow).zip(dxrow) {
                                    wacc = wacc + g * x;
                                    *dx = *dx + wv * g;
                                }
                            } else {
                                let xrow = input[in_start..].iter().step_by(stride);
                                let dxrow = d_input[in_start..].iter_mut().step_by(stride);
                                for ((&g, &x), dx) in grow.iter().zip(xrow).zip(dxrow) {
                                    wacc = wacc + g * x;
                                    *dx = *dx + wv * g;
                                }
                            }
                        }
                        d_w[widx] = d_w[widx] + wacc;
                    }
                }
            }
        }
    }
}

/// Fully connected forward: `x` is [n, f], `w` is [o, f] (one row per output), `b` has o entries.
pub fn dense_forward<T: Float>(x: &[T], w: &[T], b: &[T], n: usize, f: usize, o: usize, out: &mut [T]) {
    for ni in 0..n {
        let xrow = &x[ni * f..(ni + 1) * f];
        let orow = &mut out[ni * o..(ni + 1) * o];
        for (oi, ov) in orow.iter_mut().enumerate() {
            let wrow = &w[oi * f..(oi + 1) * f];
            let mut acc = b[oi];
            for i in 0..f {
                acc = acc + wrow[i] * xrow[i];
            }
            *ov = acc;
        }
    }
}

/// Fully connected backward: fills `d_x`, `d_w`, `d_b` (pre-zeroed).
#[allow(clippy::too_many_arguments)]
pub fn dense_backward<T: Float>(
    x: &[T],
    w: &[T],
    d_out: &[T],
    n: usize,
    f: usize,
    o: usize,
    d_x: &mut [T],
    d_w: &mut [T],
    d_b: &mut [T],
) {
    for ni in 0..n {
        let xrow = &x[ni * f..(ni + 1) * f];
        let grow = &d_out[ni * o..(ni + 1) * o];
        let dxrow = &mut d_x[ni * f..(ni + 1) * f];
        for (oi, &g) in grow.iter().enumerate() {
            d_b[oi] = d_b[oi] + g;
            let wrow = &w[oi * f..(oi + 1) * f];
            let dwrow = &mut d_w[oi * f..(oi + 1) * f];
            for i in 0..f {
                dwrow[i] = dwrow[i] + g * xrow[i];
                dxrow[i] = dxrow[i] + g * wrow[i];
            }
        }
    }
}

/// Elementwise max(0, x).
pub fn relu_forward<T: Float>(x: &[T], out: &mut [T]) {
    for (o, &v) in out.iter_mut().zip(x.iter()) {
        *o = if v > T::zero() { v } else { T::zero() };
    }
}

/// Passes gradient where the forward input was strictly positive.
pub fn relu_backward<T: Float>(x: &[T], d_out: &[T], d_x: &mut [T]) {
    for i in 0..x.len() {
        d_x[i] = if x[i] > T::zero() { d_out[i] } else { T::zero() };
    }
}

/// Non-overlapping max pooling with square window `m` and stride `m`.
/// Trailing rows/columns that do not fill a window are dropped.
/// Returns flat input indices of each window's max (first max wins on ties).
pub fn maxpool_forward<T: Float>(
    x: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    m: usize,
    out: &mut [T],
    argmax: &mut [u32],
) {
    let ho = h / m;
    let wo = w / m;
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * h * w;
            let obase = (ni * c + ci) * ho * wo;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = x[base + (oy * m) * w + ox * m];
                    let mut best_idx = base + (oy * m) * w + ox * m;
                    for dy in 0..m {
                        let row = base + (oy * m + dy) * w;
                        for dx in 0..m {
                            let idx = row + ox * m + dx;
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out[obase + oy * wo + ox] = best;
                    argmax[obase + oy * wo + ox] = best_idx as u32;
                }
            }
        }
    }
}

/// Routes each pooled gradient back to the element that won the window.
pub fn maxpool_backward<T: Float>(argmax: &[u32], d_out: &[T], d_x: &mut [T]) {
    for (i, &src) in argmax.iter().enumerate() {
        let j = src as usize;
        d_x[j] = d_x[j] + d_out[i];
    }
}

/// Mean over the spatial dimensions: NCHW -> NC.
pub fn global_avg_pool_forward<T: Float>(x: &[T], n: usize, c: usize, h: usize, w: usize, out: &mut [T]) {
    let area = tf::<T>((h * w) as f64);
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * h * w;
            let mut acc = T::zero();
            for &v in &x[base..base + h * w] {
                acc = acc + v;
            }
            out[ni * c + ci] = acc / area;
        }
    }
}

pub fn global_avg_pool_backward<T: Float>(d_out: &[T], n: usize, c: usize, h: usize, w: usize, d_x: &mut [T]) {
    let area = tf::<T>((h * w) as f64);
    for ni in 0..n {
        for ci in 0..c {
            let g = d_out[ni * c + ci] / area;
            let base = (ni * c + ci) * h * w;
            for v in &mut d_x[base..base + h * w] {
                *v = g;
            }
        }
    }
}

/// Mean softmax cross-entropy over rows of `logits` ([n, k]) against integer labels.
///
/// Per-row terms are computed at the kernel's precision with the usual
/// max-subtraction for stability; the mean is accumulated in f64. Also fills
/// `d_logits` with the gradient (softmax minus one-hot, divided by n).
pub fn softmax_xent<T: Float>(logits: &[T], labels: &[u8], n: usize, k: usize, d_logits: &mut [T]) -> f64 {
    debug_assert_eq!(logits.len(), n * k);
    let inv_n = tf::<T>(1.0 / n as f64);
    let mut total = 0.0_f64;
    for (ni, &label) in labels.iter().enumerate() {
        let row = &logits[ni * k..(ni + 1) * k];
        let mut m = row[0];
        for &v in &row[1..] {
            if v > m {
                m = v;
            }
        }
        let mut sum = T::zero();
        for &v in row {
            sum = sum + (v - m).exp();
        }
        let log_sum = sum.ln();
        let y = label as usize;
        let row_loss = -(row[y] - m - log_sum);
        total += row_loss.to_f64().expect("loss to f64");
        let drow = &mut d_logits[ni * k..(ni + 1) * k];
        for (ki, dv) in drow.iter_mut().enumerate() {
            let p = (row[ki] - m).exp() / sum;
            let target = if ki == y { T::one() } else { T::zero() };
            *dv = (p - target) * inv_n;
        }
    }
    total / n as f64
}

/// Softmax probabilities per row (used by evaluation for scores).
pub fn softmax_rows<T: Float>(logits: &[T], n: usize, k: usize, out: &mut [T]) {
    for ni in 0..n {
        let row = &logits[ni * k..(ni + 1) * k];
        let mut m = row[0];
        for &v in &row[1..] {
            if v > m {
                m = v;
            }
        }
        let mut sum = T::zero();
        for &v in row {
            sum = sum + (v - m).exp();
        }
        let orow = &mut out[ni * k..(ni + 1) * k];
        for (ki, ov) in orow.iter_mut().enumerate() {
            *ov = (row[ki] - m).exp() / sum;
        }
    }
}
