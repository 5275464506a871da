//! Registered model architectures, canonical descriptors, and flat weight
//! vectors.
//!
//! Two desk-scale classifiers are registered:
//!
//! * `alexnet_lite` — conv/pool feature stack with a small MLP head (38 818
//!   parameters).
//! * `resnet_lite` — strided stem, two identity-skip residual blocks, global
//!   average pooling (9 762 parameters).
//!
//! Each architecture has a canonical textual descriptor (one line per layer,
//! `\n`-joined, no whitespace) whose FNV-1a 64-bit hash identifies the
//! architecture on the wire and in saved models. Server and clients refuse to
//! mix weights whose digests disagree.
//!
//! Descriptor grammar, by example:
//!
//! ```text
//! input,c=3,h=32,w=32
//! conv2d,in=3,out=16,k=5,s=2,p=2
//! relu
//! maxpool2d,k=2
//! dense,in=512,out=64
//! global_avg_pool
//! residual_block,ch=16,k=3
//! softmax_xent
//! ```
//!
//! Weights flatten to a single `Vec<f32>` in descriptor order: layers
//! ascending, and within a layer every weight tensor (in definition order)
//! before every bias tensor, each tensor row-major.

use crate::error::{Error, Result};
use crate::nn::{self, Architecture, LayerSpec, ParamStore};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

/// Names of the registered architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchName {
    AlexnetLite,
    ResnetLite,
}

impl ArchName {
    pub fn all() -> [ArchName; 2] {
        [ArchName::AlexnetLite, ArchName::ResnetLite]
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ArchName::AlexnetLite => "alexnet_lite",
            ArchName::ResnetLite => "resnet_lite",
        }
    }

    pub fn parse(s: &str) -> Result<ArchName> {
        match s {
            "alexnet_lite" => Ok(ArchName::AlexnetLite),
            "resnet_lite" => Ok(ArchName::ResnetLite),
            other => Err(Error::Config(format!("unknown architecture '{other}'"))),
        }
    }

    /// The full layer structure for this name.
    pub fn architecture(&self) -> Architecture {
        match self {
            ArchName::AlexnetLite => Architecture::new(
                [3, 32, 32],
                vec![
                    LayerSpec::Conv2d { in_ch: 3, out_ch: 16, kernel: 5, stride: 2, padding: 2 },
                    LayerSpec::Relu,
                    LayerSpec::MaxPool2d { size: 2 },
                    LayerSpec::Conv2d { in_ch: 16, out_ch: 32, kernel: 3, stride: 1, padding: 1 },
                    LayerSpec::Relu,
                    LayerSpec::MaxPool2d { size: 2 },
                    LayerSpec::Dense { in_features: 512, out_features: 64 },
                    LayerSpec::Relu,
                    LayerSpec::Dense { in_features: 64, out_features: 2 },
                ],
            ),
            ArchName::ResnetLite => Architecture::new(
                [3, 32, 32],
                vec![
                    LayerSpec::Conv2d { in_ch: 3, out_ch: 16, kernel: 3, stride: 2, padding: 1 },
                    LayerSpec::Relu,
                    LayerSpec::ResidualBlock { channels: 16, kernel: 3 },
                    LayerSpec::ResidualBlock { channels: 16, kernel: 3 },
                    LayerSpec::GlobalAvgPool,
                    LayerSpec::Dense { in_features: 16, out_features: 2 },
                ],
            ),
        }
    }

    /// Canonical one-line-per-layer descriptor (see module docs for grammar).
    pub fn descriptor(&self) -> String {
        descriptor_of(&self.architecture())
    }

    /// FNV-1a 64-bit hash of the canonical descriptor.
    pub fn digest(&self) -> u64 {
        fnv1a64(self.descriptor().as_bytes())
    }

    /// Reverse lookup from a wire digest.
    pub fn from_digest(digest: u64) -> Result<ArchName> {
        ArchName::all()
            .into_iter()
            .find(|a| a.digest() == digest)
            .ok_or_else(|| {
                Error::IncompatibleArch(format!("no registered architecture with digest {digest:#018x}"))
            })
    }

    pub fn param_count(&self) -> usize {
        // Registered architectures are valid by construction.
        self.architecture().param_count().expect("registered architecture")
    }
}

impl fmt::Display for ArchName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Renders the canonical descriptor for any architecture.
pub fn descriptor_of(arch: &Architecture) -> String {
    let mut lines = vec![format!("input,c={},h={},w={}", arch.input[0], arch.input[1], arch.input[2])];
    for layer in &arch.layers {
        lines.push(match *layer {
            LayerSpec::Conv2d { in_ch, out_ch, kernel, stride, padding } => {
                format!("conv2d,in={in_ch},out={out_ch},k={kernel},s={stride},p={padding}")
            }
            LayerSpec::Dense { in_features, out_features } => {
                format!("dense,in={in_features},out={out_features}")
            }
            LayerSpec::Relu => "relu".to_string(),
            LayerSpec::MaxPool2d { size } => format!("maxpool2d,k={size}"),
            LayerSpec::GlobalAvgPool => "global_avg_pool".to_string(),
            LayerSpec::ResidualBlock { channels, kernel } => {
                format!("residual_block,ch={channels},k={kernel}")
            }
            LayerSpec::SoftmaxXent => "softmax_xent".to_string(),
        });
    }
    lines.join("\n")
}

/// FNV-1a 64-bit hash.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// A model's weights as one flat vector, tagged with its architecture and a
/// version counter (the federated round that produced it; 0 = fresh init).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: ArchName,
    pub version: u32,
    pub weights: Vec<f32>,
}

impl ModelParams {
    /// Freshly initialized weights (Xavier-uniform, zero biases), version 0.
    pub fn init(arch: ArchName, seed: u64) -> ModelParams {
        let store = nn::init_params(&arch.architecture(), seed).expect("registered architecture");
        ModelParams::from_store(arch, 0, &store).expect("registered architecture")
    }

    pub fn digest(&self) -> u64 {
        self.arch.digest()
    }

    /// Flattens a parameter store in canonical order.
    pub fn from_store(arch: ArchName, version: u32, store: &ParamStore) -> Result<ModelParams> {
        let expect = arch.param_count();
        let mut weights = Vec::with_capacity(expect);
        for slot in store.slots() {
            weights.extend_from_slice(slot.data());
        }
        if weights.len() != expect {
            return Err(Error::IncompatibleArch(format!(
                "store has {} parameters, {} has {expect}",
                weights.len(),
                arch
            )));
        }
        Ok(ModelParams { arch, version, weights })
    }

    /// Rebuilds the per-layer store. Fails on any length mismatch without
    /// producing a partial store.
    pub fn to_store(&self) -> Result<ParamStore> {
        let architecture = self.arch.architecture();
        let shapes = architecture.param_shapes()?;
        let expect: usize = shapes.iter().flatten().map(|s| s.iter().product::<usize>()).sum();
        if self.weights.len() != expect {
            return Err(Error::IncompatibleArch(format!(
                "weight vector has {} entries, {} wants {expect}",
                self.weights.len(),
                self.arch
            )));
        }
        let mut cursor = 0usize;
        let mut layers = Vec::with_capacity(shapes.len());
        for slots in &shapes {
            let mut built = Vec::with_capacity(slots.len());
            for shape in slots {
                let n: usize = shape.iter().product();
                let t = Tensor::from_vec(shape, self.weights[cursor..cursor + n].to_vec())?;
                cursor += n;
                built.push(t);
            }
            layers.push(built);
        }
        Ok(ParamStore::from_layers(layers))
    }
}

const MODEL_MAGIC: &[u8; 4] = b"FEDM";
const MODEL_FORMAT_VERSION: u8 = 1;

/// Writes a model to the binary `.fedm` format:
/// magic `FEDM`, format version u8, arch digest u64 LE, model version u32 LE,
/// weight count u32 LE, weights as f32 LE.
pub fn save_model(path: &Path, model: &ModelParams) -> Result<()> {
    let mut buf = Vec::with_capacity(21 + model.weights.len() * 4);
    buf.extend_from_slice(MODEL_MAGIC);
    buf.push(MODEL_FORMAT_VERSION);
    buf.extend_from_slice(&model.digest().to_le_bytes());
    buf.extend_from_slice(&model.version.to_le_bytes());
    buf.extend_from_slice(&(model.weights.len() as u32).to_le_bytes());
    for w in &model.weights {
        buf.extend_from_slice(&w.to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Reads a `.fedm` model file, validating magic, version, digest, and length.
pub fn load_model(path: &Path) -> Result<ModelParams> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let fail = |offset: usize, reason: &str| Error::Format { offset, reason: reason.to_string() };
    if bytes.len() < 21 {
        return Err(fail(bytes.len(), "model file truncated before header end"));
    }
    if &bytes[0..4] != MODEL_MAGIC {
        return Err(fail(0, "bad magic, expected FEDM"));
    }
    if bytes[4] != MODEL_FORMAT_VERSION {
        return Err(fail(4, "unsupported model format version"));
    }
    let digest = u64::from_le_bytes(bytes[5..13].try_into().unwrap());
    let version = u32::from_le_bytes(bytes[13..17].try_into().unwrap());
    let count = u32::from_le_bytes(bytes[17..21].try_into().unwrap()) as usize;
    let arch = ArchName::from_digest(digest)?;
    if count != arch.param_count() {
        return Err(fail(17, "weight count does not match architecture"));
    }
    let want = 21 + count * 4;
    if bytes.len() != want {
        return Err(fail(bytes.len().min(want), "model file length mismatch"));
    }
    let weights = bytes[21..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(ModelParams { arch, version, weights })
}
