//! Versioned checkpoint container.
//!
//! A checkpoint is the line `KTSEG-CHECKPOINT`, one line of JSON metadata,
//! then every parameter tensor as little-endian `f32` in metadata order.
//! The metadata carries a CRC-32 of the weight blob.

use std::fs;
use std::path::Path;

use ktseg_core::{ArchSpec, ModelRegistry, Param, SegmentationModel, TrainingConfig};
use serde::{Deserialize, Serialize};

use crate::error::{KtError, Result};

pub const MAGIC: &str = "KTSEG-CHECKPOINT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub architecture_id: String,
    pub arch_spec: ArchSpec,
    /// Number of completed training epochs.
    pub epoch: usize,
    pub seed: u64,
    pub training_config: Option<TrainingConfig>,
    pub tensors: Vec<TensorInfo>,
    pub blob_len: usize,
    pub crc32: u32,
}

/// Training provenance stored next to the weights.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Provenance {
    pub epoch: usize,
    pub seed: u64,
    pub training_config: Option<TrainingConfig>,
}

pub fn encode(model: &dyn SegmentationModel, provenance: &Provenance) -> Vec<u8> {
    let mut blob = Vec::with_capacity(model.parameter_count() * 4);
    for p in model.parameters() {
        for v in &p.value {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let meta = CheckpointMeta {
        format_version: FORMAT_VERSION,
        architecture_id: model.architecture_id().to_string(),
        arch_spec: model.arch_spec().clone(),
        epoch: provenance.epoch,
        seed: provenance.seed,
        training_config: provenance.training_config.clone(),
        tensors: model
            .parameters()
            .iter()
            .map(|p| TensorInfo {
                name: p.name.clone(),
                shape: p.shape.clone(),
            })
            .collect(),
        blob_len: blob.len(),
        crc32: crc32fast::hash(&blob),
    };
    let mut out = format!(
        "{MAGIC}\n{}\n",
        serde_json::to_string(&meta).expect("metadata serializes")
    )
    .into_bytes();
    out.extend_from_slice(&blob);
    out
}

pub fn save_checkpoint(
    model: &dyn SegmentationModel,
    provenance: &Provenance,
    path: &Path,
) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| KtError::io(dir, e))?;
    }
    fs::write(path, encode(model, provenance)).map_err(|e| KtError::io(path, e))
}

fn split_line(bytes: &[u8]) -> Option<(&[u8], &[u8])> {
    let at = bytes.iter().position(|&b| b == b'\n')?;
    Some((&bytes[..at], &bytes[at + 1..]))
}

/// Parses and verifies a checkpoint, returning its metadata and tensors.
pub fn decode(bytes: &[u8], path: &Path) -> Result<(CheckpointMeta, Vec<Param>)> {
    let corrupt = |message: String| KtError::CheckpointCorrupt {
        path: path.to_path_buf(),
        message,
    };
    let (magic, rest) = split_line(bytes).ok_or_else(|| corrupt("missing header".into()))?;
    if magic != MAGIC.as_bytes() {
        return Err(corrupt("not a checkpoint file".into()));
    }
    let (header, blob) = split_line(rest).ok_or_else(|| corrupt("missing metadata line".into()))?;
    let value: serde_json::Value =
        serde_json::from_slice(header).map_err(|e| corrupt(format!("metadata: {e}")))?;
    let version = value.get("format_version").and_then(|v| v.as_u64());
    match version {
        Some(v) if v == FORMAT_VERSION as u64 => {}
        Some(v) => {
            return Err(KtError::CheckpointVersion {
                found: v as u32,
                expected: FORMAT_VERSION,
            })
        }
        None => return Err(corrupt("metadata lacks format_version".into())),
    }
    let meta: CheckpointMeta =
        serde_json::from_value(value).map_err(|e| corrupt(format!("metadata: {e}")))?;
    if blob.len() != meta.blob_len {
        return Err(corrupt(format!(
            "weight blob is {} bytes, expected {}",
            blob.len(),
            meta.blob_len
        )));
    }
    if crc32fast::hash(blob) != meta.crc32 {
        return Err(corrupt("weight blob checksum mismatch".into()));
    }
    let expected: usize = meta
        .tensors
        .iter()
        .map(|t| t.shape.iter().product::<usize>())
        .sum();
    if expected * 4 != blob.len() {
        return Err(corrupt(
            "tensor shapes do not add up to the blob length".into(),
        ));
    }
    let mut floats = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let params = meta
        .tensors
        .iter()
        .map(|t| Param {
            name: t.name.clone(),
            shape: t.shape.clone(),
            value: floats.by_ref().take(t.shape.iter().product()).collect(),
        })
        .collect();
    Ok((meta, params))
}

/// Loaded model plus its stored metadata.
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub model: Box<dyn SegmentationModel>,
}

impl Checkpoint {
    pub fn provenance(&self) -> Provenance {
        Provenance {
            epoch: self.meta.epoch,
            seed: self.meta.seed,
            training_config: self.meta.training_config.clone(),
        }
    }
}

/// Rebuilds the model through `registry` and installs the stored weights.
pub fn load_checkpoint_with(registry: &ModelRegistry, path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| KtError::io(path, e))?;
    let (meta, params) = decode(&bytes, path)?;
    let mut model = registry.build(&meta.architecture_id, &meta.arch_spec, meta.seed)?;
    model.load_parameters(params)?;
    Ok(Checkpoint { meta, model })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    load_checkpoint_with(&ModelRegistry::default(), path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ktseg_core::{build_model, Grid, MINI_DILATED, MINI_UNET};

    fn small(id: &str, seed: u64) -> Box<dyn SegmentationModel> {
        build_model(
            id,
            &ArchSpec {
                base_channels: 4,
                ..ArchSpec::default()
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let probe = Grid::from_fn(384, 384, |x, y| ((x ^ y) % 256) as f32 / 255.0);
        for id in [MINI_UNET, MINI_DILATED] {
            let model = small(id, 9);
            let prov = Provenance {
                epoch: 17,
                seed: 9,
                training_config: Some(TrainingConfig::default()),
            };
            let path = dir.path().join(format!("{id}.ckpt"));
            save_checkpoint(model.as_ref(), &prov, &path).unwrap();
            let ck = load_checkpoint(&path).unwrap();
            assert_eq!(ck.provenance(), prov);
            assert_eq!(ck.meta.architecture_id, id);
            let a = model.predict(&probe).unwrap();
            let b = ck.model.predict(&probe).unwrap();
            assert!(a
                .as_slice()
                .iter()
                .zip(b.as_slice())
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn version_and_corruption_are_distinct() {
        let model = small(MINI_DILATED, 1);
        let bytes = encode(model.as_ref(), &Provenance::default());
        let p = Path::new("mem.ckpt");

        let text = String::from_utf8_lossy(&bytes[..200]).to_string();
        assert!(text.contains("\"format_version\":1"));
        let bumped: Vec<u8> = {
            let s = bytes.clone();
            let at = s
                .windows(18)
                .position(|w| w == b"\"format_version\":1")
                .unwrap();
            let mut v = s[..at].to_vec();
            v.extend_from_slice(b"\"format_version\":7");
            v.extend_from_slice(&s[at + 18..]);
            v
        };
        assert!(matches!(
            decode(&bumped, p),
            Err(KtError::CheckpointVersion {
                found: 7,
                expected: 1
            })
        ));

        let mut flipped = bytes.clone();
        let last = flipped.len() - 1;
        flipped[last] ^= 0x40;
        assert_eq!(
            decode(&flipped, p).unwrap_err().kind(),
            "checkpoint_corrupt"
        );
        assert_eq!(
            decode(&bytes[..bytes.len() - 8], p).unwrap_err().kind(),
            "checkpoint_corrupt"
        );
        assert_eq!(
            decode(b"hello\nworld\n", p).unwrap_err().kind(),
            "checkpoint_corrupt"
        );
    }
}
