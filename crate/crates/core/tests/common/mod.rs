//! Helpers shared across the integration suites.

#![allow(dead_code)] // each test binary uses its own subset

use fedrover::nn::reference::{fd_grads64, grads64, max_rel_err};
use fedrover::nn::{init_params, Architecture, LayerSpec};
use fedrover::rng::rng_from;
use fedrover::tensor::Tensor64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Layer kinds covered by the gradient suite.
pub const LAYER_KINDS: &[&str] =
    &["conv2d", "dense", "relu", "maxpool2d", "global_avg_pool", "residual_block"];

/// Appends a two-class logits head sized to the current output.
pub fn with_head(input: [usize; 3], mut layers: Vec<LayerSpec>) -> Architecture {
    let probe = Architecture::new(input, layers.clone());
    let shapes = probe.shapes().expect("probe architecture must be valid");
    let flat = shapes.last().expect("at least one layer").numel();
    layers.push(LayerSpec::Dense { in_features: flat, out_features: 2 });
    Architecture::new(input, layers)
}

/// A small random architecture exercising one layer kind.
pub fn random_layer_arch(kind: &str, rng: &mut ChaCha8Rng) -> Architecture {
    match kind {
        "conv2d" => {
            let c = rng.gen_range(1..=3);
            let h = rng.gen_range(5..=8);
            let w = rng.gen_range(5..=8);
            let oc = rng.gen_range(1..=4);
            let k = [1usize, 3, 5][rng.gen_range(0..3)];
            let s = rng.gen_range(1..=2);
            let p = rng.gen_range(0..=k / 2);
            with_head(
                [c, h, w],
                vec![LayerSpec::Conv2d { in_ch: c, out_ch: oc, kernel: k, stride: s, padding: p }],
            )
        }
        "dense" => {
            let m = rng.gen_range(4..=12);
            let j = rng.gen_range(2..=6);
            with_head([m, 1, 1], vec![LayerSpec::Dense { in_features: m, out_features: j }])
        }
        "relu" => {
            let c = rng.gen_range(1..=3);
            let h = rng.gen_range(3..=6);
            with_head([c, h, h], vec![LayerSpec::Relu])
        }
        "maxpool2d" => {
            let c = rng.gen_range(1..=3);
            let size = rng.gen_range(2..=3);
            let h = rng.gen_range(size..=(size * 3));
            with_head([c, h, h], vec![LayerSpec::MaxPool2d { size }])
        }
        "global_avg_pool" => {
            let c = rng.gen_range(2..=5);
            let h = rng.gen_range(2..=6);
            with_head([c, h, h], vec![LayerSpec::GlobalAvgPool])
        }
        "residual_block" => {
            let c = rng.gen_range(2..=3);
            let h = rng.gen_range(4..=6);
            let k = if rng.gen_bool(0.5) { 1 } else { 3 };
            with_head([c, h, h], vec![LayerSpec::ResidualBlock { channels: c, kernel: k }])
        }
        other => panic!("unknown layer kind '{other}'"),
    }
}

/// Central finite differences vs. backprop, in f64: returns the worst
/// relative error across all parameters.
pub fn gradcheck(arch: &Architecture, seed: u64, eps: f64) -> f64 {
    let mut rng = rng_from(seed);
    let params = init_params(arch, rng.gen()).expect("init").to_f64();
    let n = rng.gen_range(2..=3);
    let [c, h, w] = arch.input;
    let data: Vec<f64> = (0..n * c * h * w).map(|_| rng.gen::<f64>()).collect();
    let batch = Tensor64::from_vec(&[n, c, h, w], data).expect("batch");
    let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.5))).collect();

    let (_, analytic) = grads64(arch, &params, &batch, &labels).expect("backprop");
    let fd = fd_grads64(arch, &params, &batch, &labels, eps).expect("finite differences");
    max_rel_err(&analytic, &fd, 1e-6)
}

/// Independent weighted-mean oracle: numerator-first accumulation per
/// dimension, a different algebra from the production implementation.
pub fn brute_force_mean(entries: &[(Vec<f32>, u32)]) -> Vec<f32> {
    let dim = entries[0].0.len();
    let total: f64 = entries.iter().map(|&(_, n)| f64::from(n)).sum();
    (0..dim)
        .map(|i| {
            let num: f64 =
                entries.iter().map(|(w, n)| f64::from(*n) * f64::from(w[i])).sum();
            (num / total) as f32
        })
        .collect()
}

/// Largest relative disagreement between two f32 vectors.
pub fn max_rel_err_f32(a: &[f32], b: &[f32], floor: f32) -> f32 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f32::max)
}
