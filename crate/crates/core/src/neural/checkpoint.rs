//! On-disk model format: `manifest.json` plus one little-endian `f32` file
//! per named parameter slice.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::{InitScheme, NetParams, NetShape};
use super::NeuralError;

pub const CHECKPOINT_FORMAT: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const ARCHITECTURE: &str = "fc-relu/gru/fc-relu/linear";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub kind: String,
    pub shape: NetShape,
    pub init: InitScheme,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: u32,
    pub architecture: Architecture,
    pub slices: Vec<SliceEntry>,
    pub seed: u64,
    /// Free-form training metadata.
    #[serde(default)]
    pub metadata: serde_json::Value,
}

pub fn save_checkpoint(
    dir: &Path,
    params: &NetParams<f32>,
    init: InitScheme,
    seed: u64,
    metadata: serde_json::Value,
) -> Result<CheckpointManifest, NeuralError> {
    fs::create_dir_all(dir)?;
    let mut slices = Vec::new();
    for (name, rows, cols) in params.shape.slices() {
        let file = format!("{name}.f32");
        let data = params.slice(name).expect("slice exists");
        let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(dir.join(&file), bytes)?;
        slices.push(SliceEntry {
            name: name.to_string(),
            shape: [rows, cols],
            file,
        });
    }
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT,
        architecture: Architecture {
            kind: ARCHITECTURE.to_string(),
            shape: params.shape,
            init,
        },
        slices,
        seed,
        metadata,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<(NetParams<f32>, CheckpointManifest), NeuralError> {
    let bad = |m: String| NeuralError::Checkpoint(m);
    let manifest: CheckpointManifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(bad(format!("unsupported checkpoint format {}", manifest.format)));
    }
    if manifest.architecture.kind != ARCHITECTURE {
        return Err(bad(format!("unknown architecture {:?}", manifest.architecture.kind)));
    }
    let shape = manifest.architecture.shape;
    let mut params = NetParams::<f32>::zeros(shape);
    let expected = shape.slices();
    if manifest.slices.len() != expected.len() {
        return Err(bad(format!("expected {} slices, found {}", expected.len(), manifest.slices.len())));
    }
    for (entry, (name, rows, cols)) in manifest.slices.iter().zip(expected) {
        if entry.name != name || entry.shape != [rows, cols] {
            return Err(bad(format!(
                "slice {:?} {:?} does not match {name} [{rows}, {cols}]",
                entry.name, entry.shape
            )));
        }
        if entry.file.contains(['/', '\\']) {
            return Err(bad(format!("slice file {:?} must be a bare file name", entry.file)));
        }
        let bytes = fs::read(dir.join(&entry.file))?;
        if bytes.len() != rows * cols * 4 {
            return Err(bad(format!("{}: expected {} bytes, found {}", entry.file, rows * cols * 4, bytes.len())));
        }
        let dst = params.slice_mut(name).expect("slice exists");
        for (v, chunk) in dst.iter_mut().zip(bytes.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    Ok((params, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = NetParams::<f32>::init(NetShape::new(9, 7), InitScheme::FanInUniform, &mut ChaCha8Rng::seed_from_u64(4));
        p.data[0] = f32::MIN_POSITIVE / 3.0;
        p.data[1] = -0.0;
        save_checkpoint(dir.path(), &p, InitScheme::FanInUniform, 4, serde_json::json!({"episodes": 10})).unwrap();
        let (q, m) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(m.seed, 4);
        assert_eq!(m.metadata["episodes"], 10);
        let a: Vec<u32> = p.data.iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = q.data.iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        let bytes = fs::read(dir.path().join("out.b.f32")).unwrap();
        assert_eq!(bytes.len(), 7 * 4);
    }

    #[test]
    fn truncated_slice_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = NetParams::<f32>::zeros(NetShape::new(3, 7));
        save_checkpoint(dir.path(), &p, InitScheme::Zeros, 0, serde_json::Value::Null).unwrap();
        fs::write(dir.path().join("fc2.w.f32"), [0u8; 12]).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(NeuralError::Checkpoint(_))));
    }
}
