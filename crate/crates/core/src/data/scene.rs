//! Scene descriptions and the procedural renderer.
//!
//! Every training image is rendered from a [`SceneSpec`]: an environment id,
//! a (possibly empty) list of obstacle blobs, and a texture seed. The label
//! is a pure function of the scene — blocked iff the blob list is non-empty —
//! so re-rendering a stored scene always reproduces its label.
//!
//! Environments differ in floor palette, stripe texture, and noise level;
//! real-realm environments additionally get a fixed gain/bias transform, a
//! per-image gain/bias jitter, and heavier sensor noise. Those shift
//! magnitudes come from [`ShiftKnobs`].

use crate::data::{EnvironmentId, Realm};
use crate::rng;
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Image geometry: channels, height, width.
pub const IMG_SHAPE: [usize; 3] = [3, 32, 32];

/// Domain-shift magnitudes applied to real-realm rendering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShiftKnobs {
    /// Multiplicative gain applied to real-realm pixels.
    pub real_gain: f32,
    /// Additive bias applied to real-realm pixels.
    pub real_bias: f32,
    /// Sensor-noise multiplier for the real realm.
    pub real_noise_mult: f32,
    /// Half-range of the per-image uniform gain/bias wobble (real realm only).
    pub real_jitter: f32,
}

impl Default for ShiftKnobs {
    fn default() -> Self {
        ShiftKnobs { real_gain: 0.82, real_bias: 0.10, real_noise_mult: 2.5, real_jitter: 0.06 }
    }
}

/// Obstacle silhouette families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlobShape {
    Ellipse,
    Rect,
}

/// One obstacle blob in normalized image coordinates (0..1, y down).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub shape: BlobShape,
    pub cx: f32,
    pub cy: f32,
    pub rx: f32,
    pub ry: f32,
    /// Rotation in radians.
    pub rot: f32,
}

impl Blob {
    /// Point-in-blob test in normalized coordinates.
    pub fn contains(&self, u: f32, v: f32) -> bool {
        let (du, dv) = (u - self.cx, v - self.cy);
        let (c, s) = (self.rot.cos(), self.rot.sin());
        let x = du * c + dv * s;
        let y = -du * s + dv * c;
        match self.shape {
            BlobShape::Ellipse => {
                (x / self.rx) * (x / self.rx) + (y / self.ry) * (y / self.ry) <= 1.0
            }
            BlobShape::Rect => x.abs() <= self.rx && y.abs() <= self.ry,
        }
    }
}

/// Full generative description of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub env: EnvironmentId,
    /// Empty means a free path; non-empty means blocked.
    pub blobs: Vec<Blob>,
    /// Seeds the texture phase, jitter, and sensor noise.
    pub texture_seed: u64,
}

impl SceneSpec {
    /// The label this scene renders to: 1 = blocked, 0 = free.
    pub fn label(&self) -> u8 {
        u8::from(!self.blobs.is_empty())
    }
}

/// Static per-environment rendering parameters.
#[derive(Debug, Clone, Copy)]
pub struct EnvProfile {
    pub base: [f32; 3],
    pub accent_amp: f32,
    pub stripe_freq: f32,
    pub stripe_angle: f32,
    pub noise_sigma: f32,
    pub blob_color: [f32; 3],
    pub gain: f32,
    pub bias: f32,
    pub jitter: f32,
}

impl EnvProfile {
    /// Profile for an environment under the given shift knobs.
    ///
    /// Base palettes are spread across a brightness ladder so any two
    /// environments are separable from image statistics alone; real-realm
    /// palettes are pre-divided by the gain/bias transform so their rendered
    /// brightness lands on the ladder too.
    pub fn of(env: EnvironmentId, knobs: &ShiftKnobs) -> EnvProfile {
        let (base, accent_amp, stripe_freq, stripe_angle, blob_color) = match env {
            EnvironmentId::Sim(0) => ([0.40, 0.33, 0.29], 0.06, 3.0, 0.3, [0.10, 0.08, 0.07]),
            EnvironmentId::Sim(1) => ([0.42, 0.47, 0.49], 0.05, 5.0, 1.2, [0.08, 0.10, 0.12]),
            EnvironmentId::Sim(2) => ([0.61, 0.58, 0.55], 0.07, 2.0, 0.7, [0.12, 0.10, 0.08]),
            EnvironmentId::HuskySim => ([0.68, 0.70, 0.72], 0.05, 4.0, 1.9, [0.09, 0.09, 0.11]),
            EnvironmentId::Real(0) => ([0.42, 0.36, 0.32], 0.06, 4.5, 2.4, [0.11, 0.09, 0.08]),
            EnvironmentId::Real(1) => ([0.48, 0.52, 0.54], 0.05, 2.5, 0.9, [0.07, 0.09, 0.11]),
            EnvironmentId::Real(2) => ([0.68, 0.66, 0.63], 0.07, 3.5, 1.5, [0.12, 0.11, 0.09]),
            EnvironmentId::HuskyReal => ([0.79, 0.81, 0.82], 0.05, 5.5, 0.1, [0.10, 0.10, 0.10]),
            // Only indices 0..=2 exist for numbered environments.
            EnvironmentId::Sim(n) | EnvironmentId::Real(n) => {
                unreachable!("environment index {n} out of range")
            }
        };
        let base_sigma = 0.025;
        match env.realm() {
            Realm::Sim => EnvProfile {
                base,
                accent_amp,
                stripe_freq,
                stripe_angle,
                noise_sigma: base_sigma,
                blob_color,
                gain: 1.0,
                bias: 0.0,
                jitter: 0.0,
            },
            Realm::Real => EnvProfile {
                base,
                accent_amp,
                stripe_freq,
                stripe_angle,
                noise_sigma: base_sigma * knobs.real_noise_mult,
                blob_color,
                gain: knobs.real_gain,
                bias: knobs.real_bias,
                jitter: knobs.real_jitter,
            },
        }
    }
}

/// Fraction of the frame's lower half covered by the scene's blobs.
pub fn lower_half_coverage(blobs: &[Blob]) -> f32 {
    let (h, w) = (IMG_SHAPE[1], IMG_SHAPE[2]);
    let mut covered = 0usize;
    for y in h / 2..h {
        let v = (y as f32 + 0.5) / h as f32;
        for x in 0..w {
            let u = (x as f32 + 0.5) / w as f32;
            if blobs.iter().any(|b| b.contains(u, v)) {
                covered += 1;
            }
        }
    }
    covered as f32 / ((h / 2) * w) as f32
}

/// Renders a scene to a [3, 32, 32] image with values in [0, 1].
///
/// Fully deterministic in (scene, knobs): all randomness comes from a ChaCha
/// stream seeded by `scene.texture_seed`, with a pinned draw order — stripe
/// phase, then (real realm only) gain and bias jitter, then per-pixel noise
/// in channel-major row-major order.
pub fn render(scene: &SceneSpec, knobs: &ShiftKnobs) -> Tensor {
    let profile = EnvProfile::of(scene.env, knobs);
    let (ch, h, w) = (IMG_SHAPE[0], IMG_SHAPE[1], IMG_SHAPE[2]);
    let mut rng = rng::rng_from(rng::derive(scene.texture_seed, "render"));

    let phase: f32 = rng.gen::<f32>() * std::f32::consts::TAU;
    let (gain, bias) = if profile.jitter > 0.0 {
        let jg: f32 = rng.gen_range(-profile.jitter..=profile.jitter);
        let jb: f32 = rng.gen_range(-profile.jitter..=profile.jitter);
        (profile.gain * (1.0 + jg), profile.bias + jb)
    } else {
        (profile.gain, profile.bias)
    };
    // Uniform sensor noise with the same standard deviation as a Gaussian of
    // sigma `noise_sigma`.
    let noise_amp = profile.noise_sigma * 3.0_f32.sqrt();

    let (sa, ca) = (profile.stripe_angle.sin(), profile.stripe_angle.cos());
    let mut img = Tensor::zeros(&[ch, h, w]);
    let data = img.data_mut();
    for c in 0..ch {
        for y in 0..h {
            let v = (y as f32 + 0.5) / h as f32;
            for x in 0..w {
                let u = (x as f32 + 0.5) / w as f32;
                let stripe = profile.accent_amp
                    * (std::f32::consts::TAU * profile.stripe_freq * (u * ca + v * sa) + phase).sin();
                let floor = profile.base[c] + stripe;
                let value = if scene.blobs.iter().any(|b| b.contains(u, v)) {
                    // Slight floor bleed keeps blob interiors textured.
                    0.85 * profile.blob_color[c] + 0.15 * floor
                } else {
                    floor
                };
                let shifted = gain * value + bias;
                let noisy = shifted + rng.gen_range(-noise_amp..=noise_amp);
                data[(c * h + y) * w + x] = noisy.clamp(0.0, 1.0);
            }
        }
    }
    img
}
