//! On-disk dataset format.
//!
//! A `.feds` file is a 24-byte header followed by packed examples:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "FEDS"
//! 4       1     format version (1)
//! 5       1     reserved (0)
//! 6       2     reserved (0)
//! 8       4     example count, u32 LE
//! 12      4     channels, u32 LE
//! 16      4     height, u32 LE
//! 20      4     width, u32 LE
//! 24      ...   count x (label u8, then C*H*W f32 LE pixels)
//! ```
//!
//! Total size is therefore `24 + count * (1 + C*H*W*4)` bytes. A JSON
//! manifest sits next to every `.feds` file (same stem, `.json`) recording
//! split, shape, and the ordered source runs (environment, count, seed) so a
//! combined set can be reconstructed exactly.

use crate::data::{EnvironmentDataset, LabeledExample, Realm, SourceEntry, Split, IMG_SHAPE};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

const MAGIC: &[u8; 4] = b"FEDS";
const FORMAT_VERSION: u8 = 1;
const HEADER_LEN: usize = 24;

/// Sidecar metadata for a `.feds` file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    /// Single source environment name, or "combined".
    pub env: String,
    /// "sim", "real", or "mixed".
    pub realm: String,
    pub split: Split,
    /// Generation seed when the set has a single source.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub count: u32,
    pub shape: [usize; 3],
    pub sources: Vec<SourceEntry>,
}

impl Manifest {
    fn for_dataset(ds: &EnvironmentDataset) -> Manifest {
        let realms: Vec<Realm> = ds.sources.iter().map(|s| s.env.realm()).collect();
        let realm = if realms.iter().all(|&r| r == Realm::Sim) {
            "sim"
        } else if realms.iter().all(|&r| r == Realm::Real) {
            "real"
        } else {
            "mixed"
        };
        Manifest {
            env: ds.env().map_or_else(|| "combined".to_string(), |e| e.to_string()),
            realm: realm.to_string(),
            split: ds.split,
            seed: ds.sources.first().filter(|_| ds.sources.len() == 1).map(|s| s.seed),
            count: ds.len() as u32,
            shape: IMG_SHAPE,
            sources: ds.sources.clone(),
        }
    }
}

/// Path of the manifest sitting next to a `.feds` file.
pub fn manifest_path(feds_path: &Path) -> PathBuf {
    feds_path.with_extension("json")
}

/// Writes a dataset and its manifest.
pub fn save(path: &Path, ds: &EnvironmentDataset) -> Result<()> {
    let [c, h, w] = IMG_SHAPE;
    let px = c * h * w;
    let mut buf = Vec::with_capacity(HEADER_LEN + ds.len() * (1 + px * 4));
    buf.extend_from_slice(MAGIC);
    buf.push(FORMAT_VERSION);
    buf.push(0);
    buf.extend_from_slice(&0u16.to_le_bytes());
    buf.extend_from_slice(&(ds.len() as u32).to_le_bytes());
    for dim in IMG_SHAPE {
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for ex in &ds.examples {
        if ex.image.len() != px {
            return Err(Error::Data(format!(
                "example has {} pixels, format wants {px}",
                ex.image.len()
            )));
        }
        buf.push(ex.label);
        for &v in ex.image.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::File::create(path)?.write_all(&buf)?;

    let manifest = Manifest::for_dataset(ds);
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::File::create(manifest_path(path))?.write_all(json.as_bytes())?;
    Ok(())
}

/// Reads a dataset previously written by [`save`].
///
/// Validates the binary header byte-by-byte (errors carry the offset of the
/// first problem) and cross-checks the manifest's source runs against the
/// example count.
pub fn load(path: &Path) -> Result<EnvironmentDataset> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let fail = |offset: usize, reason: String| Error::Format { offset, reason };

    if bytes.len() < HEADER_LEN {
        return Err(fail(bytes.len(), "truncated before header end".into()));
    }
    if &bytes[0..4] != MAGIC {
        return Err(fail(0, "bad magic, expected FEDS".into()));
    }
    if bytes[4] != FORMAT_VERSION {
        return Err(fail(4, format!("unsupported format version {}", bytes[4])));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let c = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[20..24].try_into().unwrap()) as usize;
    if [c, h, w] != IMG_SHAPE {
        return Err(fail(12, format!("unsupported image shape [{c}, {h}, {w}]")));
    }
    let px = c * h * w;
    let stride = 1 + px * 4;
    let want = HEADER_LEN + count * stride;
    if bytes.len() != want {
        return Err(fail(
            bytes.len().min(want),
            format!("file is {} bytes, header implies {want}", bytes.len()),
        ));
    }

    let mpath = manifest_path(path);
    if !mpath.exists() {
        return Err(Error::Config(format!("manifest {} not found next to dataset", mpath.display())));
    }
    let manifest: Manifest = serde_json::from_reader(std::fs::File::open(&mpath)?)?;
    if manifest.count as usize != count {
        return Err(Error::Config(format!(
            "manifest count {} disagrees with file count {count}",
            manifest.count
        )));
    }
    let source_total: u64 = manifest.sources.iter().map(|s| u64::from(s.count)).sum();
    if source_total != count as u64 {
        return Err(Error::Config(format!(
            "manifest sources sum to {source_total}, file has {count} examples"
        )));
    }

    // Expand source runs to a per-example environment list.
    let envs = manifest
        .sources
        .iter()
        .flat_map(|s| std::iter::repeat(s.env).take(s.count as usize));

    let mut examples = Vec::with_capacity(count);
    for (i, env) in envs.enumerate() {
        let base = HEADER_LEN + i * stride;
        let label = bytes[base];
        if label > 1 {
            return Err(fail(base, format!("label byte must be 0 or 1, got {label}")));
        }
        let mut data = Vec::with_capacity(px);
        for j in 0..px {
            let o = base + 1 + j * 4;
            let v = f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
            if !v.is_finite() {
                return Err(fail(o, "non-finite pixel value".into()));
            }
            data.push(v);
        }
        examples.push(LabeledExample { image: Tensor::from_vec(&IMG_SHAPE, data)?, label, env });
    }

    Ok(EnvironmentDataset { examples, split: manifest.split, sources: manifest.sources })
}
