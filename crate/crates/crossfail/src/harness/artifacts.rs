//! Artifact persistence: denoiser checkpoints bound to their schedules and
//! normalization, manifests with content hashes, and missing-artifact
//! errors that name the producing command.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::diffusion::{ConditioningSpec, DenoiserModel, VarianceSchedule};
use crate::distill::StudentModel;
use crate::nn::{Checkpoint, MetaBlock, ScaleBlock};
use crate::sim::Branch;

use super::HarnessError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let d = h.finalize();
    let mut s = String::with_capacity(64);
    for b in d {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

pub fn file_hash(path: &Path) -> Result<String, HarnessError> {
    let bytes = std::fs::read(path)
        .map_err(|e| HarnessError::Io(format!("hashing {}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

/// Writes a manifest next to a command's outputs: the resolved seed, the
/// hashes of every input artifact consumed and output produced.
pub fn write_manifest(
    dir: &Path,
    command: &str,
    seed: u64,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
) -> Result<(), HarnessError> {
    let mut doc = String::new();
    doc.push_str(&format!("command = {command:?}\nseed = {seed}\n"));
    let section = |name: &str, paths: &[PathBuf]| -> Result<String, HarnessError> {
        let mut map = BTreeMap::new();
        for p in paths {
            map.insert(p.display().to_string(), file_hash(p)?);
        }
        let mut s = format!("\n[{name}]\n");
        for (k, v) in map {
            s.push_str(&format!("{k:?} = {v:?}\n"));
        }
        Ok(s)
    };
    doc.push_str(&section("inputs", inputs)?);
    doc.push_str(&section("outputs", outputs)?);
    std::fs::write(dir.join(format!("{command}-manifest.toml")), doc)
        .map_err(|e| HarnessError::Io(format!("writing manifest: {e}")))?;
    Ok(())
}

pub fn save_denoiser(model: &DenoiserModel, path: &Path) -> Result<(), HarnessError> {
    let ck = Checkpoint {
        net: model.net.clone(),
        optimizer: None,
        schedule_betas: Some(model.schedule.betas().to_vec()),
        scale: Some(ScaleBlock {
            prior_scale: model.prior_scale,
            data_scale: model.data_scale.clone(),
        }),
        meta: Some(MetaBlock {
            scenario: model.scenario.map(|b| b.index() as u8).unwrap_or(255),
            beta_hat: if model.schedule.len() == 1 {
                model.schedule.beta(1)
            } else {
                f64::NAN
            },
            rho_bounds: model.cond.rho_bounds,
            s0_bounds: model.cond.s0_bounds.clone(),
            k_embed_dim: model.cond.k_embed_dim as u32,
        }),
    };
    ck.save(path)
        .map_err(|e| HarnessError::Io(format!("saving {}: {e}", path.display())))
}

pub fn load_denoiser(path: &Path, producer: &str) -> Result<DenoiserModel, HarnessError> {
    if !path.exists() {
        return Err(HarnessError::MissingArtifact {
            path: path.display().to_string(),
            producer: producer.into(),
        });
    }
    let ck = Checkpoint::load(path)
        .map_err(|e| HarnessError::Io(format!("loading {}: {e}", path.display())))?;
    let betas = ck
        .schedule_betas
        .ok_or_else(|| HarnessError::Io(format!("{}: missing schedule", path.display())))?;
    let scale = ck
        .scale
        .ok_or_else(|| HarnessError::Io(format!("{}: missing scale block", path.display())))?;
    let meta = ck
        .meta
        .ok_or_else(|| HarnessError::Io(format!("{}: missing metadata", path.display())))?;
    let schedule = VarianceSchedule::from_betas(betas)
        .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    Ok(DenoiserModel {
        net: ck.net,
        schedule,
        cond: ConditioningSpec {
            k_embed_dim: meta.k_embed_dim as usize,
            rho_bounds: meta.rho_bounds,
            s0_bounds: meta.s0_bounds,
        },
        prior_scale: scale.prior_scale,
        data_scale: scale.data_scale,
        scenario: if meta.scenario == 255 {
            None
        } else {
            Branch::from_index(meta.scenario as usize)
        },
    })
}

pub fn load_student(path: &Path, producer: &str) -> Result<StudentModel, HarnessError> {
    let model = load_denoiser(path, producer)?;
    if model.schedule.len() != 1 {
        return Err(HarnessError::Io(format!(
            "{}: expected a one-step student checkpoint, schedule has {} steps",
            path.display(),
            model.schedule.len()
        )));
    }
    Ok(StudentModel { model })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use crate::nn::Network;
    use crate::rng::stream;

    #[test]
    fn denoiser_round_trips_through_checkpoint() {
        let cond = ConditioningSpec {
            k_embed_dim: 16,
            rho_bounds: (0.0, 0.7),
            s0_bounds: vec![(-1.1, 1.1); 8],
        };
        let net = Network::residual_mlp(
            92 + cond.dim(),
            32,
            1,
            92,
            Activation::Identity,
            &mut stream(201, "art", 0),
        );
        let model = DenoiserModel {
            net,
            schedule: VarianceSchedule::cosine(12).unwrap(),
            cond,
            prior_scale: 1.7,
            data_scale: vec![1.0; 92],
            scenario: Some(Branch::South),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("teacher.cfnn");
        save_denoiser(&model, &path).unwrap();
        let back = load_denoiser(&path, "train").unwrap();
        assert_eq!(back.schedule, model.schedule);
        assert_eq!(back.cond, model.cond);
        assert_eq!(back.scenario, Some(Branch::South));
        assert_eq!(back.net.params_vec(), model.net.params_vec());
    }

    #[test]
    fn missing_artifact_names_producer() {
        let err = load_denoiser(Path::new("/nonexistent/teacher.cfnn"), "train").unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("train"), "{msg}");
    }
}
