//! Compact CNN training engine.
//!
//! An [`Architecture`] is a flat list of [`LayerSpec`]s applied to NCHW image
//! batches. Parameters live in a [`ParamStore`] with one slot list per layer
//! (weight tensors first, then bias tensors), which fixes the canonical
//! flattening order used by serialization and federated averaging.
//!
//! Training is plain SGD on softmax cross-entropy. All working arithmetic is
//! f32; reductions that could drift (loss means) accumulate in f64. The
//! [`reference`] submodule instantiates the same kernels at f64 for
//! finite-difference verification.

pub(crate) mod kernels;
pub mod reference;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Tensor, TensorBase};
use num_traits::Float;
use rand::Rng;

/// One layer of a model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSpec {
    /// 2-D convolution with square kernel.
    Conv2d { in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize },
    /// Fully connected layer; flattens its input implicitly.
    Dense { in_features: usize, out_features: usize },
    /// Elementwise max(0, x).
    Relu,
    /// Non-overlapping square max pooling (stride = window).
    MaxPool2d { size: usize },
    /// Mean over spatial dims: NCHW -> NC.
    GlobalAvgPool,
    /// conv-relu-conv with identity skip and a trailing relu. Stride 1,
    /// odd kernel, same-padding, so the inner path preserves shape.
    ResidualBlock { channels: usize, kernel: usize },
    /// Loss head marker. Identity in the forward pass; the trainer applies
    /// softmax cross-entropy to whatever flows out of the last layer.
    SoftmaxXent,
}

/// Activation shape while walking an architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Spatial { c: usize, h: usize, w: usize },
    Flat { f: usize },
}

impl Shape {
    pub fn numel(&self) -> usize {
        match *self {
            Shape::Spatial { c, h, w } => c * h * w,
            Shape::Flat { f } => f,
        }
    }
}

/// A full model structure: input dims plus layer list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    /// Input channels, height, width.
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    pub fn new(input: [usize; 3], layers: Vec<LayerSpec>) -> Self {
        Architecture { input, layers }
    }

    /// Checks structural consistency and returns the shape after every layer.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let [c, h, w] = self.input;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::Architecture("input dims must be positive".into()));
        }
        let mut cur = Shape::Spatial { c, h, w };
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let fail = |msg: String| Error::Architecture(format!("layer {i}: {msg}"));
            cur = match *layer {
                LayerSpec::Conv2d { in_ch, out_ch, kernel, stride, padding } => {
                    let Shape::Spatial { c, h, w } = cur else {
                        return Err(fail("conv2d needs a spatial input".into()));
                    };
                    if in_ch != c {
                        return Err(fail(format!("conv2d expects {in_ch} channels, input has {c}")));
                    }
                    if out_ch == 0 || kernel == 0 || stride == 0 {
                        return Err(fail("conv2d dims must be positive".into()));
                    }
                    let ho = kernels::conv_out_dim(h, kernel, stride, padding);
                    let wo = kernels::conv_out_dim(w, kernel, stride, padding);
                    match (ho, wo) {
                        (Some(ho), Some(wo)) if ho > 0 && wo > 0 => {
                            Shape::Spatial { c: out_ch, h: ho, w: wo }
                        }
                        _ => return Err(fail(format!("conv2d kernel {kernel} too large for {h}x{w}"))),
                    }
                }
                LayerSpec::Dense { in_features, out_features } => {
                    if out_features == 0 {
                        return Err(fail("dense output must be positive".into()));
                    }
                    if in_features != cur.numel() {
                        return Err(fail(format!(
                            "dense expects {in_features} features, input flattens to {}",
                            cur.numel()
                        )));
                    }
                    Shape::Flat { f: out_features }
                }
                LayerSpec::Relu => cur,
                LayerSpec::MaxPool2d { size } => {
                    let Shape::Spatial { c, h, w } = cur else {
                        return Err(fail("maxpool2d needs a spatial input".into()));
                    };
                    if size == 0 || h < size || w < size {
                        return Err(fail(format!("maxpool2d window {size} too large for {h}x{w}")));
                    }
                    Shape::Spatial { c, h: h / size, w: w / size }
                }
                LayerSpec::GlobalAvgPool => {
                    let Shape::Spatial { c, .. } = cur else {
                        return Err(fail("global_avg_pool needs a spatial input".into()));
                    };
                    Shape::Flat { f: c }
                }
                LayerSpec::ResidualBlock { channels, kernel } => {
                    let Shape::Spatial { c, h, w } = cur else {
                        return Err(fail("residual_block needs a spatial input".into()));
                    };
                    if channels != c {
                        return Err(fail(format!("residual_block expects {channels} channels, input has {c}")));
                    }
                    if kernel % 2 == 0 || kernel == 0 || kernel > h.min(w) * 2 {
                        return Err(fail(format!("residual_block kernel must be odd and fit, got {kernel}")));
                    }
                    Shape::Spatial { c, h, w }
                }
                LayerSpec::SoftmaxXent => {
                    if i + 1 != self.layers.len() {
                        return Err(fail("softmax_xent must be the final layer".into()));
                    }
                    cur
                }
            };
            out.push(cur);
        }
        Ok(out)
    }

    /// Parameter tensor shapes per layer, weights before biases.
    pub fn param_shapes(&self) -> Result<Vec<Vec<Vec<usize>>>> {
        self.shapes()?; // structural validation
        Ok(self
            .layers
            .iter()
            .map(|layer| match *layer {
                LayerSpec::Conv2d { in_ch, out_ch, kernel, .. } => {
                    vec![vec![out_ch, in_ch, kernel, kernel], vec![out_ch]]
                }
                LayerSpec::Dense { in_features, out_features } => {
                    vec![vec![out_features, in_features], vec![out_features]]
                }
                LayerSpec::ResidualBlock { channels, kernel } => vec![
                    vec![channels, channels, kernel, kernel],
                    vec![channels, channels, kernel, kernel],
                    vec![channels],
                    vec![channels],
                ],
                _ => vec![],
            })
            .collect())
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> Result<usize> {
        Ok(self
            .param_shapes()?
            .iter()
            .flat_map(|slots| slots.iter())
            .map(|s| s.iter().product::<usize>())
            .sum())
    }
}

/// Per-layer parameter slots. Slot order within a layer is weights (in layer
/// definition order) followed by biases; this order is load-bearing for
/// flattening and aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStoreBase<T> {
    layers: Vec<Vec<TensorBase<T>>>,
}

pub type ParamStore = ParamStoreBase<f32>;
pub type ParamStore64 = ParamStoreBase<f64>;

impl<T: Copy + Default> ParamStoreBase<T> {
    /// Zero-valued parameters for an architecture.
    pub fn zeros(arch: &Architecture) -> Result<Self> {
        let shapes = arch.param_shapes()?;
        Ok(ParamStoreBase {
            layers: shapes
                .iter()
                .map(|slots| slots.iter().map(|s| TensorBase::zeros(s)).collect())
                .collect(),
        })
    }

    pub fn layers(&self) -> &[Vec<TensorBase<T>>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Vec<TensorBase<T>>] {
        &mut self.layers
    }

    /// All parameter tensors in canonical order.
    pub fn slots(&self) -> impl Iterator<Item = &TensorBase<T>> {
        self.layers.iter().flat_map(|l| l.iter())
    }

    pub fn slots_mut(&mut self) -> impl Iterator<Item = &mut TensorBase<T>> {
        self.layers.iter_mut().flat_map(|l| l.iter_mut())
    }

    /// Total scalar parameter count.
    pub fn len(&self) -> usize {
        self.slots().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn from_layers(layers: Vec<Vec<TensorBase<T>>>) -> Self {
        ParamStoreBase { layers }
    }
}

impl ParamStore {
    pub fn to_f64(&self) -> ParamStore64 {
        ParamStoreBase {
            layers: self.layers.iter().map(|l| l.iter().map(|t| t.to_f64()).collect()).collect(),
        }
    }
}

impl ParamStore64 {
    pub fn to_f32(&self) -> ParamStore {
        ParamStoreBase {
            layers: self.layers.iter().map(|l| l.iter().map(|t| t.to_f32()).collect()).collect(),
        }
    }
}

/// Xavier-uniform weights (limit sqrt(6/(fan_in+fan_out))), zero biases.
/// Fully determined by the seed.
pub fn init_params(arch: &Architecture, seed: u64) -> Result<ParamStore> {
    let mut store = ParamStore::zeros(arch)?;
    let mut rng = rng::rng_from(rng::derive(seed, "xavier-init"));
    for (layer, slots) in arch.layers.iter().zip(store.layers_mut()) {
        let fans: Option<(usize, usize)> = match *layer {
            LayerSpec::Conv2d { in_ch, out_ch, kernel, .. } => {
                Some((in_ch * kernel * kernel, out_ch * kernel * kernel))
            }
            LayerSpec::Dense { in_features, out_features } => Some((in_features, out_features)),
            LayerSpec::ResidualBlock { channels, kernel } => {
                Some((channels * kernel * kernel, channels * kernel * kernel))
            }
            _ => None,
        };
        let Some((fan_in, fan_out)) = fans else { continue };
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
        for slot in slots.iter_mut() {
            // Biases (rank-1 slots) stay zero.
            if slot.shape().len() == 1 {
                continue;
            }
            for v in slot.data_mut() {
                *v = limit * (2.0 * rng.gen::<f32>() - 1.0);
            }
        }
    }
    Ok(store)
}

/// Saved forward state needed by the backward pass, one entry per layer.
pub(crate) enum CacheEntry<T> {
    ConvInput(TensorBase<T>),
    DenseInput(TensorBase<T>),
    ReluInput(TensorBase<T>),
    MaxPool { argmax: Vec<u32>, in_shape: Vec<usize> },
    Gap { in_shape: Vec<usize> },
    Residual {
        input: TensorBase<T>,
        pre1: TensorBase<T>,
        mid: TensorBase<T>,
        pre2: TensorBase<T>,
    },
    Identity,
}

fn spatial_dims<T: Copy + Default>(t: &TensorBase<T>) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [n, c, h, w] => Ok((n, c, h, w)),
        ref s => Err(Error::Architecture(format!("expected NCHW activation, got {s:?}"))),
    }
}

fn conv_apply<T: Float + Default + std::fmt::Debug>(
    x: &TensorBase<T>,
    w: &TensorBase<T>,
    b: &TensorBase<T>,
    stride: usize,
    padding: usize,
) -> Result<TensorBase<T>> {
    let (n, c, h, wd) = spatial_dims(x)?;
    let (oc, k) = (w.shape()[0], w.shape()[2]);
    let ho = kernels::conv_out_dim(h, k, stride, padding).unwrap();
    let wo = kernels::conv_out_dim(wd, k, stride, padding).unwrap();
    let mut out = TensorBase::zeros(&[n, oc, ho, wo]);
    kernels::conv2d_forward(
        x.data(),
        w.data(),
        b.data(),
        n,
        c,
        h,
        wd,
        oc,
        k,
        stride,
        padding,
        out.data_mut(),
    );
    Ok(out)
}

/// Runs the model and captures per-layer caches for the backward pass.
pub(crate) fn forward_cached<T: Float + Default + std::fmt::Debug>(
    arch: &Architecture,
    params: &ParamStoreBase<T>,
    batch: &TensorBase<T>,
) -> Result<(TensorBase<T>, Vec<CacheEntry<T>>)> {
    let shapes = arch.shapes()?;
    let n = match *batch.shape() {
        [n, c, h, w] if [c, h, w] == arch.input => n,
        ref s => {
            return Err(Error::Architecture(format!(
                "batch shape {s:?} does not match model input {:?}",
                arch.input
            )))
        }
    };
    if n == 0 {
        return Err(Error::Data("empty batch".into()));
    }
    if params.layers().len() != arch.layers.len() {
        return Err(Error::Architecture(format!(
            "param store has {} layers, architecture has {}",
            params.layers().len(),
            arch.layers.len()
        )));
    }

    let mut cur = batch.clone();
    let mut caches = Vec::with_capacity(arch.layers.len());
    for (i, layer) in arch.layers.iter().enumerate() {
        let slots = &params.layers()[i];
        let (next, cache) = match *layer {
            LayerSpec::Conv2d { stride, padding, .. } => {
                let out = conv_apply(&cur, &slots[0], &slots[1], stride, padding)?;
                (out, CacheEntry::ConvInput(cur))
            }
            LayerSpec::Dense { in_features, out_features } => {
                let x2d = cur.reshaped(&[cur.len() / in_features, in_features])?;
                let rows = x2d.shape()[0];
                let mut out = TensorBase::zeros(&[rows, out_features]);
                kernels::dense_forward(
                    x2d.data(),
                    slots[0].data(),
                    slots[1].data(),
                    rows,
                    in_features,
                    out_features,
                    out.data_mut(),
                );
                (out, CacheEntry::DenseInput(x2d))
            }
            LayerSpec::Relu => {
                let mut out = TensorBase::zeros(cur.shape());
                kernels::relu_forward(cur.data(), out.data_mut());
                (out, CacheEntry::ReluInput(cur))
            }
            LayerSpec::MaxPool2d { size } => {
                let (n, c, h, w) = spatial_dims(&cur)?;
                let mut out = TensorBase::zeros(&[n, c, h / size, w / size]);
                let mut argmax = vec![0u32; out.len()];
                kernels::maxpool_forward(cur.data(), n, c, h, w, size, out.data_mut(), &mut argmax);
                (out, CacheEntry::MaxPool { argmax, in_shape: cur.shape().to_vec() })
            }
            LayerSpec::GlobalAvgPool => {
                let (n, c, h, w) = spatial_dims(&cur)?;
                let mut out = TensorBase::zeros(&[n, c]);
                kernels::global_avg_pool_forward(cur.data(), n, c, h, w, out.data_mut());
                (out, CacheEntry::Gap { in_shape: cur.shape().to_vec() })
            }
            LayerSpec::ResidualBlock { kernel, .. } => {
                let pad = (kernel - 1) / 2;
                let pre1 = conv_apply(&cur, &slots[0], &slots[2], 1, pad)?;
                let mut mid = TensorBase::zeros(pre1.shape());
                kernels::relu_forward(pre1.data(), mid.data_mut());
                let mut pre2 = conv_apply(&mid, &slots[1], &slots[3], 1, pad)?;
                for (o, &x) in pre2.data_mut().iter_mut().zip(cur.data()) {
                    *o = *o + x;
                }
                let mut out = TensorBase::zeros(pre2.shape());
                kernels::relu_forward(pre2.data(), out.data_mut());
                (out, CacheEntry::Residual { input: cur, pre1, mid, pre2 })
            }
            LayerSpec::SoftmaxXent => (cur.clone(), CacheEntry::Identity),
        };
        debug_assert_eq!(
            next.len(),
            n * shapes[i].numel(),
            "layer {i} produced unexpected activation size"
        );
        caches.push(cache);
        cur = next;
    }
    Ok((cur, caches))
}

/// Backpropagates `d_logits` through the cached forward pass; returns
/// parameter gradients in the same store layout.
pub(crate) fn backward_from_caches<T: Float + Default + std::fmt::Debug>(
    arch: &Architecture,
    params: &ParamStoreBase<T>,
    caches: &[CacheEntry<T>],
    d_logits: TensorBase<T>,
) -> Result<ParamStoreBase<T>> {
    let mut grads: Vec<Vec<TensorBase<T>>> = params
        .layers()
        .iter()
        .map(|slots| slots.iter().map(|t| TensorBase::zeros(t.shape())).collect())
        .collect();

    let mut d_cur = d_logits;
    for (i, layer) in arch.layers.iter().enumerate().rev() {
        let slots = &params.layers()[i];
        d_cur = match (layer, &caches[i]) {
            (LayerSpec::Conv2d { stride, padding, .. }, CacheEntry::ConvInput(x)) => {
                let (n, c, h, w) = spatial_dims(x)?;
                let (oc, k) = (slots[0].shape()[0], slots[0].shape()[2]);
                let mut dx = TensorBase::zeros(x.shape());
                let (dw, db) = grads[i].split_at_mut(1);
                kernels::conv2d_backward(
                    x.data(),
                    slots[0].data(),
                    d_cur.data(),
                    n,
                    c,
                    h,
                    w,
                    oc,
                    k,
                    *stride,
                    *padding,
                    dx.data_mut(),
                    dw[0].data_mut(),
                    db[0].data_mut(),
                );
                dx
            }
            (LayerSpec::Dense { in_features, out_features }, CacheEntry::DenseInput(x2d)) => {
                let rows = x2d.shape()[0];
                let mut dx = TensorBase::zeros(x2d.shape());
                let (dw, db) = grads[i].split_at_mut(1);
                kernels::dense_backward(
                    x2d.data(),
                    slots[0].data(),
                    d_cur.data(),
                    rows,
                    *in_features,
                    *out_features,
                    dx.data_mut(),
                    dw[0].data_mut(),
                    db[0].data_mut(),
                );
                dx
            }
            (LayerSpec::Relu, CacheEntry::ReluInput(x)) => {
                let mut dx = TensorBase::zeros(x.shape());
                kernels::relu_backward(x.data(), d_cur.data(), dx.data_mut());
                dx
            }
            (LayerSpec::MaxPool2d { .. }, CacheEntry::MaxPool { argmax, in_shape }) => {
                let mut dx = TensorBase::zeros(in_shape);
                kernels::maxpool_backward(argmax, d_cur.data(), dx.data_mut());
                dx
            }
            (LayerSpec::GlobalAvgPool, CacheEntry::Gap { in_shape }) => {
                let (n, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
                let mut dx = TensorBase::zeros(in_shape);
                kernels::global_avg_pool_backward(d_cur.data(), n, c, h, w, dx.data_mut());
                dx
            }
            (
                LayerSpec::ResidualBlock { kernel, .. },
                CacheEntry::Residual { input, pre1, mid, pre2 },
            ) => {
                let pad = (kernel - 1) / 2;
                let (n, c, h, w) = spatial_dims(input)?;
                let k = *kernel;

                let mut d_sum = TensorBase::zeros(pre2.shape());
                kernels::relu_backward(pre2.data(), d_cur.data(), d_sum.data_mut());

                // Slot layout [w1, w2, b1, b2]: split into weight and bias halves.
                let (dw, db) = grads[i].split_at_mut(2);

                let mut d_mid = TensorBase::zeros(mid.shape());
                kernels::conv2d_backward(
                    mid.data(),
                    slots[1].data(),
                    d_sum.data(),
                    n,
                    c,
                    h,
                    w,
                    c,
                    k,
                    1,
                    pad,
                    d_mid.data_mut(),
                    dw[1].data_mut(),
                    db[1].data_mut(),
                );

                let mut d_pre1 = TensorBase::zeros(pre1.shape());
                kernels::relu_backward(pre1.data(), d_mid.data(), d_pre1.data_mut());

                let mut dx = TensorBase::zeros(input.shape());
                kernels::conv2d_backward(
                    input.data(),
                    slots[0].data(),
                    d_pre1.data(),
                    n,
                    c,
                    h,
                    w,
                    c,
                    k,
                    1,
                    pad,
                    dx.data_mut(),
                    dw[0].data_mut(),
                    db[0].data_mut(),
                );

                // Identity skip: gradient of the sum flows to the input as-is.
                for (d, &g) in dx.data_mut().iter_mut().zip(d_sum.data()) {
                    *d = *d + g;
                }
                dx
            }
            (LayerSpec::SoftmaxXent, CacheEntry::Identity) => d_cur,
            _ => {
                return Err(Error::Architecture(format!(
                    "layer {i}: cache does not match layer kind"
                )))
            }
        };
    }
    Ok(ParamStoreBase::from_layers(grads))
}

/// Runs the model on a batch; returns logits.
pub fn forward(arch: &Architecture, params: &ParamStore, batch: &Tensor) -> Result<Tensor> {
    batch.check_finite("forward input")?;
    let (logits, _) = forward_cached(arch, params, batch)?;
    logits.check_finite("logits")?;
    Ok(logits)
}

fn check_labels(labels: &[u8], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::Data(format!("{} labels for {} rows", labels.len(), rows)));
    }
    if let Some(&bad) = labels.iter().find(|&&l| (l as usize) >= classes) {
        return Err(Error::Data(format!("label {bad} out of range for {classes} classes")));
    }
    Ok(())
}

/// Mean softmax cross-entropy plus parameter gradients for one batch.
pub fn loss_and_grads(
    arch: &Architecture,
    params: &ParamStore,
    batch: &Tensor,
    labels: &[u8],
) -> Result<(f64, ParamStore)> {
    batch.check_finite("training batch")?;
    let (logits, caches) = forward_cached(arch, params, batch)?;
    let (rows, classes) = match *logits.shape() {
        [n, k] => (n, k),
        ref s => {
            return Err(Error::Architecture(format!(
                "loss head needs [N, classes] logits, model produced {s:?}"
            )))
        }
    };
    check_labels(labels, rows, classes)?;
    let mut d_logits = Tensor::zeros(logits.shape());
    let loss = kernels::softmax_xent(logits.data(), labels, rows, classes, d_logits.data_mut());
    if !loss.is_finite() {
        return Err(Error::Data("non-finite training loss".into()));
    }
    let grads = backward_from_caches(arch, params, &caches, d_logits)?;
    Ok((loss, grads))
}

/// Mean softmax cross-entropy only (no gradients).
pub fn loss(arch: &Architecture, params: &ParamStore, batch: &Tensor, labels: &[u8]) -> Result<f64> {
    batch.check_finite("batch")?;
    let (logits, _) = forward_cached(arch, params, batch)?;
    let (rows, classes) = match *logits.shape() {
        [n, k] => (n, k),
        ref s => return Err(Error::Architecture(format!("loss head got {s:?}"))),
    };
    check_labels(labels, rows, classes)?;
    let mut scratch = Tensor::zeros(logits.shape());
    Ok(kernels::softmax_xent(logits.data(), labels, rows, classes, scratch.data_mut()))
}

/// In-place SGD update: p <- p - lr * g.
pub fn sgd_step(params: &mut ParamStore, grads: &ParamStore, lr: f32) -> Result<()> {
    if params.layers().len() != grads.layers().len() {
        return Err(Error::Architecture("gradient store layer count mismatch".into()));
    }
    for (p_slots, g_slots) in params.layers_mut().iter_mut().zip(grads.layers()) {
        if p_slots.len() != g_slots.len() {
            return Err(Error::Architecture("gradient store slot count mismatch".into()));
        }
        for (p, g) in p_slots.iter_mut().zip(g_slots) {
            if p.shape() != g.shape() {
                return Err(Error::Architecture(format!(
                    "gradient shape {:?} does not match parameter shape {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            for (pv, &gv) in p.data_mut().iter_mut().zip(g.data()) {
                *pv -= lr * gv;
            }
        }
    }
    Ok(())
}

/// Softmax class probabilities for a batch, shape [N, classes].
pub fn predict_proba(arch: &Architecture, params: &ParamStore, batch: &Tensor) -> Result<Tensor> {
    let logits = forward(arch, params, batch)?;
    let (rows, classes) = match *logits.shape() {
        [n, k] => (n, k),
        ref s => return Err(Error::Architecture(format!("expected [N, classes] logits, got {s:?}"))),
    };
    let mut out = Tensor::zeros(logits.shape());
    kernels::softmax_rows(logits.data(), rows, classes, out.data_mut());
    Ok(out)
}
