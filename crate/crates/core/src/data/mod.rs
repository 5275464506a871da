//! Synthetic obstacle/free image datasets.
//!
//! Eight environments exist: three numbered simulation rooms (`sim0`–`sim2`),
//! their real-realm counterparts (`real0`–`real2`), and the two robot-camera
//! environments (`husky_sim`, `husky_real`) used by the continual-learning
//! loop. Generation is bitwise deterministic in (environment, split, seed,
//! size).

pub mod feds;
mod scene;

pub use scene::{
    lower_half_coverage, render, Blob, BlobShape, EnvProfile, SceneSpec, ShiftKnobs, IMG_SHAPE,
};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Whether an environment belongs to the simulation or the "real" sensor realm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Realm {
    Sim,
    Real,
}

/// Dataset split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    fn tag(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

/// Environment identifier. Numbered variants accept indices 0..=2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EnvironmentId {
    Sim(u8),
    Real(u8),
    HuskySim,
    HuskyReal,
}

impl EnvironmentId {
    pub fn all() -> [EnvironmentId; 8] {
        [
            EnvironmentId::Sim(0),
            EnvironmentId::Sim(1),
            EnvironmentId::Sim(2),
            EnvironmentId::Real(0),
            EnvironmentId::Real(1),
            EnvironmentId::Real(2),
            EnvironmentId::HuskySim,
            EnvironmentId::HuskyReal,
        ]
    }

    pub fn realm(&self) -> Realm {
        match self {
            EnvironmentId::Sim(_) | EnvironmentId::HuskySim => Realm::Sim,
            EnvironmentId::Real(_) | EnvironmentId::HuskyReal => Realm::Real,
        }
    }

    /// Stable numeric tag used for seed derivation.
    fn tag(&self) -> u64 {
        match *self {
            EnvironmentId::Sim(i) => u64::from(i),
            EnvironmentId::Real(i) => 16 + u64::from(i),
            EnvironmentId::HuskySim => 32,
            EnvironmentId::HuskyReal => 33,
        }
    }

    pub fn parse(s: &str) -> Result<EnvironmentId> {
        let id = match s {
            "sim0" => EnvironmentId::Sim(0),
            "sim1" => EnvironmentId::Sim(1),
            "sim2" => EnvironmentId::Sim(2),
            "real0" => EnvironmentId::Real(0),
            "real1" => EnvironmentId::Real(1),
            "real2" => EnvironmentId::Real(2),
            "husky_sim" => EnvironmentId::HuskySim,
            "husky_real" => EnvironmentId::HuskyReal,
            other => return Err(Error::Config(format!("unknown environment '{other}'"))),
        };
        Ok(id)
    }

    fn check(&self) -> Result<()> {
        match *self {
            EnvironmentId::Sim(i) | EnvironmentId::Real(i) if i > 2 => {
                Err(Error::Config(format!("environment index {i} out of range (0..=2)")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for EnvironmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            EnvironmentId::Sim(i) => write!(f, "sim{i}"),
            EnvironmentId::Real(i) => write!(f, "real{i}"),
            EnvironmentId::HuskySim => f.write_str("husky_sim"),
            EnvironmentId::HuskyReal => f.write_str("husky_real"),
        }
    }
}

impl Serialize for EnvironmentId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for EnvironmentId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        EnvironmentId::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// One image with its label and originating environment.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    /// [3, 32, 32], values in [0, 1].
    pub image: Tensor,
    /// 1 = blocked, 0 = free.
    pub label: u8,
    pub env: EnvironmentId,
}

/// Provenance of one contiguous run of examples inside a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceEntry {
    pub env: EnvironmentId,
    pub count: u32,
    pub seed: u64,
}

/// A set of labeled examples, possibly combined from several environments.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentDataset {
    pub examples: Vec<LabeledExample>,
    pub split: Split,
    /// Ordered provenance; concatenating regenerated sources reproduces the
    /// set exactly.
    pub sources: Vec<SourceEntry>,
}

impl EnvironmentDataset {
    /// The single source environment, if there is exactly one.
    pub fn env(&self) -> Option<EnvironmentId> {
        match self.sources.as_slice() {
            [one] => Some(one.env),
            _ => None,
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// (blocked, free) counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let blocked = self.examples.iter().filter(|e| e.label == 1).count();
        (blocked, self.examples.len() - blocked)
    }

    /// Stacks a contiguous range of examples into an NCHW batch plus labels.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<u8>)> {
        if indices.is_empty() {
            return Err(Error::Data("empty batch request".into()));
        }
        let [c, h, w] = IMG_SHAPE;
        let mut data = Vec::with_capacity(indices.len() * c * h * w);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let ex = self
                .examples
                .get(i)
                .ok_or_else(|| Error::Data(format!("example index {i} out of range")))?;
            data.extend_from_slice(ex.image.data());
            labels.push(ex.label);
        }
        Ok((Tensor::from_vec(&[indices.len(), c, h, w], data)?, labels))
    }
}

/// Samples the obstacle blobs for one blocked scene.
///
/// Blobs sit in or near the frame's lower half and are resampled until they
/// cover at least 8% of it, so "blocked" is always visually committed.
fn sample_blobs(rng: &mut impl Rng) -> Vec<Blob> {
    loop {
        let count = rng.gen_range(1..=3);
        let blobs: Vec<Blob> = (0..count)
            .map(|_| Blob {
                shape: if rng.gen::<bool>() { BlobShape::Ellipse } else { BlobShape::Rect },
                cx: rng.gen_range(0.15..0.85),
                cy: rng.gen_range(0.55..0.92),
                rx: rng.gen_range(0.09..0.22),
                ry: rng.gen_range(0.08..0.20),
                rot: rng.gen_range(0.0..std::f32::consts::PI),
            })
            .collect();
        if lower_half_coverage(&blobs) >= 0.08 {
            return blobs;
        }
    }
}

/// Generates a dataset for one environment.
///
/// Determinism: the whole set is a pure function of (env, split, seed, size).
/// Class balance: exactly floor(size/2) blocked examples, order shuffled.
pub fn generate(
    env: EnvironmentId,
    split: Split,
    size: usize,
    seed: u64,
    knobs: &ShiftKnobs,
) -> Result<EnvironmentDataset> {
    env.check()?;
    if size < 2 {
        return Err(Error::Config(format!("dataset size {size} is below the minimum of 2")));
    }
    let mut rng =
        rng::rng_from(rng::derive_indexed(seed, "dataset", &[env.tag(), split.tag(), size as u64]));

    let blocked = size / 2;
    let mut labels: Vec<u8> = std::iter::repeat(1u8)
        .take(blocked)
        .chain(std::iter::repeat(0u8).take(size - blocked))
        .collect();
    labels.shuffle(&mut rng);

    let examples = labels
        .iter()
        .map(|&label| {
            let blobs = if label == 1 { sample_blobs(&mut rng) } else { Vec::new() };
            let scene = SceneSpec { env, blobs, texture_seed: rng.gen::<u64>() };
            debug_assert_eq!(scene.label(), label);
            LabeledExample { image: render(&scene, knobs), label, env }
        })
        .collect();

    Ok(EnvironmentDataset {
        examples,
        split,
        sources: vec![SourceEntry { env, count: size as u32, seed }],
    })
}

/// Concatenates datasets of the same split, preserving order and provenance.
pub fn combine(sets: &[EnvironmentDataset]) -> Result<EnvironmentDataset> {
    let Some(first) = sets.first() else {
        return Err(Error::Config("combine needs at least one dataset".into()));
    };
    if sets.iter().any(|s| s.split != first.split) {
        return Err(Error::Config("cannot combine datasets from different splits".into()));
    }
    let mut examples = Vec::with_capacity(sets.iter().map(|s| s.len()).sum());
    let mut sources = Vec::new();
    for s in sets {
        examples.extend(s.examples.iter().cloned());
        sources.extend(s.sources.iter().copied());
    }
    Ok(EnvironmentDataset { examples, split: first.split, sources })
}

/// Generates and combines one dataset per environment with a shared seed.
pub fn generate_combined(
    envs: &[EnvironmentId],
    split: Split,
    size_per_env: usize,
    seed: u64,
    knobs: &ShiftKnobs,
) -> Result<EnvironmentDataset> {
    if envs.is_empty() {
        return Err(Error::Config("environment list is empty".into()));
    }
    let sets: Vec<EnvironmentDataset> = envs
        .iter()
        .map(|&e| generate(e, split, size_per_env, seed, knobs))
        .collect::<Result<_>>()?;
    combine(&sets)
}
