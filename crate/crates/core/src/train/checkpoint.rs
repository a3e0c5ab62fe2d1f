//! Model checkpoints: a weight payload plus a JSON sidecar manifest that
//! records provenance and the payload hash.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fit::EpochRecord;
use crate::backbone::{Variant, VariantConfig};
use crate::error::{Error, Result};
use crate::fusion::FusionHeadConfig;
use crate::model::EffiSegNet;
use crate::weights;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub variant: Variant,
    pub input_resolution: usize,
    pub fusion: FusionHeadConfig,
    pub seed: u64,
    /// Completed epochs when the snapshot was taken.
    pub epoch: usize,
    pub config_hash: String,
    pub metrics: Option<EpochRecord>,
    pub payload_sha256: String,
    pub created: String,
}

/// Provenance supplied by the caller when saving.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointInfo {
    pub seed: u64,
    pub epoch: usize,
    pub config_hash: String,
    pub metrics: Option<EpochRecord>,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("manifest.json")
}

fn ckpt_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Checkpoint { path: path.to_path_buf(), reason: reason.into() }
}

/// Writes the payload and then its manifest, each atomically.
pub fn save_checkpoint(model: &EffiSegNet, path: &Path, info: CheckpointInfo) -> Result<CheckpointManifest> {
    let payload = weights::encode(&weights::collect(model, ""));
    let manifest = CheckpointManifest {
        variant: model.variant().variant,
        input_resolution: model.variant().input_resolution,
        fusion: model.head().config().clone(),
        seed: info.seed,
        epoch: info.epoch,
        config_hash: info.config_hash,
        metrics: info.metrics,
        payload_sha256: weights::sha256_hex(&payload),
        created: chrono::Utc::now().to_rfc3339(),
    };
    weights::write_atomic(path, &payload)?;
    weights::write_atomic(&manifest_path(path), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<CheckpointManifest> {
    let mpath = manifest_path(path);
    let text = std::fs::read_to_string(&mpath).map_err(|e| ckpt_err(path, format!("manifest {}: {e}", mpath.display())))?;
    serde_json::from_str(&text).map_err(|e| ckpt_err(path, format!("manifest {}: {e}", mpath.display())))
}

/// Loads a checkpoint, refusing it when its variant differs from `expected`
/// or when the payload does not match the manifest hash.
pub fn load_checkpoint(path: &Path, expected: Option<Variant>) -> Result<(EffiSegNet, CheckpointManifest)> {
    let manifest = read_manifest(path)?;
    if let Some(v) = expected.filter(|&v| v != manifest.variant) {
        return Err(ckpt_err(path, format!("checkpoint was trained as {}, refusing to load it as {v}", manifest.variant)));
    }
    let bytes = std::fs::read(path).map_err(|e| ckpt_err(path, e.to_string()))?;
    let digest = weights::sha256_hex(&bytes);
    if digest != manifest.payload_sha256 {
        return Err(ckpt_err(
            path,
            format!("payload hash {digest} does not match manifest {} (corrupt or truncated file)", manifest.payload_sha256),
        ));
    }
    let tensors = weights::decode(&bytes).map_err(|e| ckpt_err(path, e))?;
    // Initial values are overwritten; the seed is irrelevant.
    let mut model = EffiSegNet::new(
        &VariantConfig::new(manifest.variant).with_resolution(manifest.input_resolution),
        manifest.fusion.clone(),
        false,
        &mut ChaCha8Rng::seed_from_u64(0),
    )?;
    weights::assign(&mut model, "", &weights::index(tensors), str::to_string).map_err(|e| ckpt_err(path, e))?;
    Ok((model, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn info() -> CheckpointInfo {
        CheckpointInfo { seed: 1, epoch: 0, config_hash: "abc".into(), metrics: None }
    }

    #[test]
    fn round_trip_is_bit_identical_and_guards_hold() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("m.ckpt");
        let config = VariantConfig::new(Variant::B0).with_resolution(64);
        let model =
            EffiSegNet::new(&config, FusionHeadConfig::default(), false, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        save_checkpoint(&model, &path, info()).unwrap();
        assert!(tmp.path().join("m.manifest.json").is_file());

        let (back, manifest) = load_checkpoint(&path, Some(Variant::B0)).unwrap();
        assert_eq!(manifest.variant, Variant::B0);
        let x = Tensor::from_fn([1, 3, 64, 64], |_, c, y, x| ((c + 2 * y + 3 * x) as f32 * 0.05).cos());
        let a = model.predict_mask_probabilities(&x).unwrap();
        let b = back.predict_mask_probabilities(&x).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));

        let err = load_checkpoint(&path, Some(Variant::B4)).unwrap_err().to_string();
        assert!(err.contains("refusing"), "{err}");

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_checkpoint(&path, None), Err(Error::Checkpoint { .. })));
    }
}
