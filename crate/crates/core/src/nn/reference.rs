//! Double-precision twin of the training engine.
//!
//! Instantiates the same layer kernels at f64 so tests can compare analytic
//! gradients against central finite differences without f32 rounding noise
//! swamping the comparison. Not used on any production path.

use crate::error::{Error, Result};
use crate::nn::{self, kernels, Architecture, ParamStore64};
use crate::tensor::Tensor64;

/// Mean softmax cross-entropy at f64.
pub fn loss64(arch: &Architecture, params: &ParamStore64, batch: &Tensor64, labels: &[u8]) -> Result<f64> {
    let (logits, _) = nn::forward_cached(arch, params, batch)?;
    let (rows, classes) = match *logits.shape() {
        [n, k] => (n, k),
        ref s => return Err(Error::Architecture(format!("loss head got {s:?}"))),
    };
    let mut scratch = Tensor64::zeros(logits.shape());
    Ok(kernels::softmax_xent(logits.data(), labels, rows, classes, scratch.data_mut()))
}

/// Analytic gradients at f64 (same backward code as production, wider floats).
pub fn grads64(
    arch: &Architecture,
    params: &ParamStore64,
    batch: &Tensor64,
    labels: &[u8],
) -> Result<(f64, ParamStore64)> {
    let (logits, caches) = nn::forward_cached(arch, params, batch)?;
    let (rows, classes) = match *logits.shape() {
        [n, k] => (n, k),
        ref s => return Err(Error::Architecture(format!("loss head got {s:?}"))),
    };
    let mut d_logits = Tensor64::zeros(logits.shape());
    let loss = kernels::softmax_xent(logits.data(), labels, rows, classes, d_logits.data_mut());
    let grads = nn::backward_from_caches(arch, params, &caches, d_logits)?;
    Ok((loss, grads))
}

/// Central finite-difference gradient of the loss w.r.t. every parameter.
///
/// This is the independent oracle for the backward pass: it only ever calls
/// the forward path.
pub fn fd_grads64(
    arch: &Architecture,
    params: &ParamStore64,
    batch: &Tensor64,
    labels: &[u8],
    epsilon: f64,
) -> Result<ParamStore64> {
    let mut probe = params.clone();
    let mut out = ParamStore64::zeros(arch)?;
    let n_layers = probe.layers().len();
    for li in 0..n_layers {
        for si in 0..probe.layers()[li].len() {
            for ei in 0..probe.layers()[li][si].len() {
                let orig = probe.layers()[li][si].data()[ei];
                probe.layers_mut()[li][si].data_mut()[ei] = orig + epsilon;
                let lp = loss64(arch, &probe, batch, labels)?;
                probe.layers_mut()[li][si].data_mut()[ei] = orig - epsilon;
                let lm = loss64(arch, &probe, batch, labels)?;
                probe.layers_mut()[li][si].data_mut()[ei] = orig;
                out.layers_mut()[li][si].data_mut()[ei] = (lp - lm) / (2.0 * epsilon);
            }
        }
    }
    Ok(out)
}

/// Largest relative disagreement between two gradient stores.
///
/// Per entry: |a-b| / max(|a|, |b|, floor). The floor keeps entries that are
/// numerically zero on both sides from reporting spurious mismatches.
pub fn max_rel_err(a: &ParamStore64, b: &ParamStore64, floor: f64) -> f64 {
    let mut worst = 0.0_f64;
    for (sa, sb) in a.slots().zip(b.slots()) {
        for (&va, &vb) in sa.data().iter().zip(sb.data()) {
            let denom = va.abs().max(vb.abs()).max(floor);
            let rel = (va - vb).abs() / denom;
            if rel > worst {
                worst = rel;
            }
        }
    }
    worst
}
