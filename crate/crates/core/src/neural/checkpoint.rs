//! Checkpoint persistence: a JSON manifest plus a flat little-endian f64 blob.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Network, NetworkSpec, ParamTensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "ubp-checkpoint-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: String,
    pub spec: NetworkSpec,
    pub shapes: Vec<Vec<usize>>,
    pub seed: u64,
    pub epoch: usize,
    pub validation_loss: f64,
    /// Auxiliary scalars such as label scaling statistics.
    #[serde(default)]
    pub metadata: BTreeMap<String, f64>,
    /// Hex SHA-256 of the parameter blob.
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub params: Vec<ParamTensor>,
}

impl Checkpoint {
    pub fn from_network(
        net: &Network,
        seed: u64,
        epoch: usize,
        validation_loss: f64,
        metadata: BTreeMap<String, f64>,
    ) -> Self {
        let params: Vec<ParamTensor> = net
            .params()
            .iter()
            .map(|p| ParamTensor::new(p.shape().to_vec(), p.values.clone()).expect("valid tensor"))
            .collect();
        let blob = encode_params(&params);
        Self {
            manifest: CheckpointManifest {
                format: CHECKPOINT_FORMAT.to_string(),
                spec: net.spec().clone(),
                shapes: params.iter().map(|p| p.shape().to_vec()).collect(),
                seed,
                epoch,
                validation_loss,
                metadata,
                digest: hex::encode(Sha256::digest(&blob)),
            },
            params,
        }
    }

    pub fn to_network(&self) -> Result<Network> {
        Network::from_parts(self.manifest.spec.clone(), self.params.clone())
    }

    pub fn blob(&self) -> Vec<u8> {
        encode_params(&self.params)
    }

    pub fn manifest_json(&self) -> String {
        serde_json::to_string_pretty(&self.manifest).expect("manifest serialises")
    }

    /// Writes `<stem>.json` and `<stem>.bin` and returns both paths.
    pub fn write(&self, stem: &Path) -> Result<(PathBuf, PathBuf)> {
        let (json_path, bin_path) = checkpoint_paths(stem);
        if let Some(parent) = json_path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&bin_path, self.blob()).map_err(|e| Error::io(&bin_path, e))?;
        std::fs::write(&json_path, self.manifest_json()).map_err(|e| Error::io(&json_path, e))?;
        Ok((json_path, bin_path))
    }

    pub fn read(stem: &Path) -> Result<Self> {
        let (json_path, bin_path) = checkpoint_paths(stem);
        let json = std::fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let blob = std::fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
        parse_checkpoint(&json, &blob).map_err(|e| match e {
            Error::Integrity { detail, .. } => Error::Integrity { path: bin_path, detail },
            Error::Parse { what, detail } => Error::Parse {
                what: format!("{what} ({})", json_path.display()),
                detail,
            },
            other => other,
        })
    }
}

pub fn checkpoint_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("json"), stem.with_extension("bin"))
}

fn encode_params(params: &[ParamTensor]) -> Vec<u8> {
    params
        .iter()
        .flat_map(|p| p.values.iter().flat_map(|v| v.to_le_bytes()))
        .collect()
}

/// Parses and verifies a checkpoint from its manifest text and parameter blob.
pub fn parse_checkpoint(manifest_json: &str, blob: &[u8]) -> Result<Checkpoint> {
    let manifest: CheckpointManifest =
        serde_json::from_str(manifest_json).map_err(|e| Error::parse("checkpoint manifest", e))?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::parse(
            "checkpoint manifest",
            format!("unsupported format {:?}", manifest.format),
        ));
    }
    let integrity = |detail: String| Error::Integrity {
        path: PathBuf::from("<checkpoint>"),
        detail,
    };
    let actual = hex::encode(Sha256::digest(blob));
    if !actual.eq_ignore_ascii_case(&manifest.digest) {
        return Err(integrity(format!("digest mismatch: manifest {}, blob {actual}", manifest.digest)));
    }
    if blob.len() % 8 != 0 {
        return Err(integrity(format!("blob length {} is not a multiple of 8", blob.len())));
    }
    let available = blob.len() / 8;
    let mut counts = Vec::with_capacity(manifest.shapes.len());
    let mut total = 0usize;
    for shape in &manifest.shapes {
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= available)
            .ok_or_else(|| integrity(format!("shape {shape:?} exceeds blob size")))?;
        total = total
            .checked_add(n)
            .filter(|&t| t <= available)
            .ok_or_else(|| integrity("shapes exceed blob size".into()))?;
        counts.push(n);
    }
    if total != available {
        return Err(integrity(format!("blob holds {available} values, shapes need {total}")));
    }
    let mut values = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let params = manifest
        .shapes
        .iter()
        .zip(counts)
        .map(|(shape, n)| ParamTensor::new(shape.clone(), values.by_ref().take(n).collect()))
        .collect::<Result<Vec<_>>>()?;
    // Validates that the stored shapes fit the architecture.
    Network::from_parts(manifest.spec.clone(), params.clone())?;
    Ok(Checkpoint { manifest, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::models;

    #[test]
    fn round_trip_and_tamper() {
        let net = Network::new(models::image_model(8, 0.5), 3).unwrap();
        let ck = Checkpoint::from_network(&net, 3, 7, 0.25, BTreeMap::from([("sbp_mean".into(), 120.0)]));
        let json = ck.manifest_json();
        let blob = ck.blob();
        let back = parse_checkpoint(&json, &blob).unwrap();
        assert_eq!(back, ck);
        let mut bad = blob.clone();
        bad[5] ^= 1;
        assert!(matches!(parse_checkpoint(&json, &bad), Err(Error::Integrity { .. })));
        assert!(parse_checkpoint("{}", &blob).is_err());
    }
}
