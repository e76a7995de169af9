//! Checkpoint directories: `manifest.json` plus one safetensors file per
//! parameter group (and optionally the optimizer moments).

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ConditioningSpec, ModelConfig};
use super::denoiser::TryOnDenoiser;
use super::params::ParamGroup;
use super::temporal::TemporalInit;
use crate::data::store::{load_tensors, read_json, save_tensors, write_json};
use crate::error::{invalid_state, Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: &str = "1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const OPTIMIZER_FILE: &str = "optimizer.safetensors";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupInventory {
    pub file: String,
    /// Full parameter name -> shape.
    pub params: BTreeMap<String, Vec<usize>>,
    pub numel: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: String,
    pub phase: String,
    pub frame_length: usize,
    pub config: ModelConfig,
    pub cond_spec: ConditioningSpec,
    pub seed: u64,
    pub dtype: String,
    pub groups: BTreeMap<String, GroupInventory>,
    /// Global optimizer step at save time.
    pub step: u64,
    pub has_optimizer: bool,
    /// Free-form trainer state (optimizer hyperparameters, RNG positions, ...).
    #[serde(default)]
    pub trainer: serde_json::Value,
}

#[derive(Debug)]
pub struct LoadedCheckpoint {
    pub model: TryOnDenoiser,
    pub manifest: CheckpointManifest,
    pub optimizer: Option<HashMap<String, Tensor>>,
}

fn dtype_name(dtype: DType) -> Result<&'static str> {
    Ok(match dtype {
        DType::F32 => "f32",
        DType::F64 => "f64",
        other => return Err(Error::InvalidArgument(format!("unsupported parameter dtype {other:?}"))),
    })
}

fn parse_dtype(name: &str) -> Result<DType> {
    match name {
        "f32" => Ok(DType::F32),
        "f64" => Ok(DType::F64),
        other => Err(Error::InvalidState(format!("unknown checkpoint dtype {other}"))),
    }
}

fn inventory(model: &TryOnDenoiser) -> BTreeMap<String, GroupInventory> {
    let store = model.params();
    let mut out = BTreeMap::new();
    for group in ParamGroup::ALL {
        let params: BTreeMap<String, Vec<usize>> = store
            .iter()
            .filter(|(_, p)| p.group == group)
            .map(|(n, p)| (n.clone(), p.var.dims().to_vec()))
            .collect();
        if params.is_empty() {
            continue;
        }
        out.insert(
            group.name().to_string(),
            GroupInventory {
                file: format!("{}.safetensors", group.name()),
                numel: store.group_numel(group),
                params,
            },
        );
    }
    out
}

/// Writes a checkpoint directory atomically: everything goes to a sibling
/// temp directory that is renamed into place at the end.
pub fn save_checkpoint(
    dir: &Path,
    model: &TryOnDenoiser,
    phase: &str,
    step: u64,
    optimizer: Option<&HashMap<String, Tensor>>,
    trainer: serde_json::Value,
) -> Result<CheckpointManifest> {
    let tmp = temp_sibling(dir);
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;

    let groups = inventory(model);
    for (name, inv) in &groups {
        let group = ParamGroup::from_name(name).expect("inventory uses group names");
        let tensors: HashMap<String, Tensor> = model.params().group_tensors(group)?.into_iter().collect();
        save_tensors(&tmp.join(&inv.file), &tensors)?;
    }
    if let Some(opt) = optimizer {
        save_tensors(&tmp.join(OPTIMIZER_FILE), opt)?;
    }
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_FORMAT_VERSION.to_string(),
        phase: phase.to_string(),
        frame_length: model.config().frame_length,
        config: model.config().clone(),
        cond_spec: *model.cond_spec(),
        seed: model.seed(),
        dtype: dtype_name(model.dtype())?.to_string(),
        groups,
        step,
        has_optimizer: optimizer.is_some(),
        trainer,
    };
    write_json(&tmp.join(MANIFEST_FILE), &manifest)?;

    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    if let Some(parent) = dir.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))?;
    Ok(manifest)
}

fn temp_sibling(dir: &Path) -> PathBuf {
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".into());
    dir.with_file_name(format!(".{name}.tmp-{}", std::process::id()))
}

pub fn load_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let manifest: CheckpointManifest = read_json(&dir.join(MANIFEST_FILE))?;
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
        invalid_state!(
            "checkpoint {} has format_version {}, expected {}",
            dir.display(),
            manifest.format_version,
            CHECKPOINT_FORMAT_VERSION
        );
    }
    Ok(manifest)
}

/// Loads and validates a checkpoint. The parameter inventory recorded in
/// the manifest must match what its config builds, and every tensor file
/// must match the inventory.
pub fn load_checkpoint(dir: &Path) -> Result<LoadedCheckpoint> {
    let manifest = load_manifest(dir)?;
    if manifest.frame_length != manifest.config.frame_length {
        invalid_state!(
            "manifest frame_length {} disagrees with config frame_length {}",
            manifest.frame_length,
            manifest.config.frame_length
        );
    }
    let dtype = parse_dtype(&manifest.dtype)?;
    let model = TryOnDenoiser::build(
        &manifest.config,
        &manifest.cond_spec,
        manifest.seed,
        dtype,
        TemporalInit::Identity,
    )
    .map_err(|e| Error::InvalidState(format!("checkpoint config invalid: {e}")))?;
    let expected = inventory(&model);
    if expected != manifest.groups {
        let want: Vec<_> = expected.keys().collect();
        let got: Vec<_> = manifest.groups.keys().collect();
        invalid_state!(
            "checkpoint inventory does not match its config (groups {got:?}, config builds {want:?})"
        );
    }
    for (name, inv) in &manifest.groups {
        let tensors = load_tensors(&dir.join(&inv.file))?;
        if tensors.len() != inv.params.len() {
            invalid_state!("group {name}: file has {} tensors, inventory lists {}", tensors.len(), inv.params.len());
        }
        for (pname, shape) in &inv.params {
            let t = tensors
                .get(pname)
                .ok_or_else(|| Error::InvalidState(format!("group {name}: missing tensor {pname}")))?;
            if t.dims() != shape.as_slice() {
                invalid_state!("tensor {pname}: shape {:?}, inventory {:?}", t.dims(), shape);
            }
            model.params().set(pname, t)?;
        }
    }
    let optimizer = if manifest.has_optimizer {
        Some(load_tensors(&dir.join(OPTIMIZER_FILE))?)
    } else {
        None
    };
    Ok(LoadedCheckpoint {
        model,
        manifest,
        optimizer,
    })
}

/// SHA-256 over the manifest and group files, in a fixed order.
pub fn checkpoint_hash(dir: &Path) -> Result<String> {
    let manifest = load_manifest(dir)?;
    let mut hasher = Sha256::new();
    let mut files = vec![MANIFEST_FILE.to_string()];
    files.extend(manifest.groups.values().map(|g| g.file.clone()));
    for f in files {
        let path = dir.join(&f);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        hasher.update(f.as_bytes());
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(format!("{:x}", hasher.finalize()))
}
