//! On-disk dataset layout:
//!
//! ```text
//! <dir>/manifest.json            format_version, dims, scene list
//! <dir>/scene_00000.safetensors  frames, masks, segmentation, labels, poses
//! <dir>/scene_00000.json         seed, dims, motion, appearance, label legend
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scene::{generate_scene, Appearance, MotionParams, Region, SyntheticScene, NUM_JOINTS};
use crate::error::{invalid_arg, Error, Result};
use crate::tensor::{VideoDims, VideoTensor};

pub const DATASET_FORMAT_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataParams {
    pub num_scenes: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for DataParams {
    fn default() -> Self {
        Self {
            num_scenes: 16,
            frames: 64,
            height: 64,
            width: 48,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub index: usize,
    pub seed: u64,
    pub file: String,
    pub sidecar: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: String,
    pub base_seed: u64,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub label_legend: BTreeMap<u8, String>,
    pub scenes: Vec<SceneEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SceneSidecar {
    format_version: String,
    seed: u64,
    frames: usize,
    height: usize,
    width: usize,
    garment_color_id: u32,
    motion: MotionParams,
    appearance: Appearance,
    label_legend: BTreeMap<u8, String>,
}

pub fn label_legend() -> BTreeMap<u8, String> {
    Region::ALL.iter().map(|r| (*r as u8, r.name().to_string())).collect()
}

/// Seed of scene `index` in a dataset generated from `base_seed`.
pub fn scene_seed(base_seed: u64, index: usize) -> u64 {
    base_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64)
}

pub fn generate_scenes(params: &DataParams, base_seed: u64, workers: usize) -> Result<Vec<SyntheticScene>> {
    let gen = |i: usize| generate_scene(scene_seed(base_seed, i), params.frames, params.height, params.width);
    if workers <= 1 {
        return (0..params.num_scenes).map(gen).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidState(format!("thread pool: {e}")))?;
    pool.install(|| (0..params.num_scenes).into_par_iter().map(gen).collect())
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `bytes` to `path` via a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn save_tensors(path: &Path, tensors: &HashMap<String, Tensor>) -> Result<()> {
    let tmp = path.with_extension("tmp");
    candle_core::safetensors::save(tensors, &tmp).map_err(|e| match e {
        candle_core::Error::Io(io) => Error::io(&tmp, io),
        other => Error::Tensor(other),
    })?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_tensors(path: &Path) -> Result<HashMap<String, Tensor>> {
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    Ok(candle_core::safetensors::load(path, &Device::Cpu)?)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn save_dataset(dir: &Path, scenes: &[SyntheticScene], params: &DataParams, base_seed: u64) -> Result<DatasetManifest> {
    create_dir(dir)?;
    let legend = label_legend();
    let mut entries = Vec::with_capacity(scenes.len());
    for (i, s) in scenes.iter().enumerate() {
        let file = format!("scene_{i:05}.safetensors");
        let sidecar = format!("scene_{i:05}.json");
        let (t, h, w) = (s.num_frames(), s.height(), s.width());
        let mut map = HashMap::new();
        map.insert("frames".to_string(), s.frames.tensor().clone());
        map.insert("person_masks".to_string(), s.person_masks.tensor().clone());
        map.insert("garment_segmentation".to_string(), s.garment_segmentation.tensor().clone());
        map.insert(
            "labels".to_string(),
            Tensor::from_vec(s.labels.clone(), (t, h, w), &Device::Cpu)?,
        );
        let poses: Vec<f32> = s.person_poses.iter().flatten().flatten().copied().collect();
        map.insert("poses".to_string(), Tensor::from_vec(poses, (t, NUM_JOINTS, 2), &Device::Cpu)?);
        save_tensors(&dir.join(&file), &map)?;
        write_json(
            &dir.join(&sidecar),
            &SceneSidecar {
                format_version: DATASET_FORMAT_VERSION.into(),
                seed: s.seed,
                frames: t,
                height: h,
                width: w,
                garment_color_id: s.garment_color_id,
                motion: s.motion,
                appearance: s.appearance.clone(),
                label_legend: legend.clone(),
            },
        )?;
        entries.push(SceneEntry {
            index: i,
            seed: s.seed,
            file,
            sidecar,
        });
    }
    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION.into(),
        base_seed,
        frames: params.frames,
        height: params.height,
        width: params.width,
        label_legend: legend,
        scenes: entries,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let m: DatasetManifest = read_json(&dir.join("manifest.json"))?;
    if m.format_version != DATASET_FORMAT_VERSION {
        invalid_arg!("unsupported dataset format_version {}", m.format_version);
    }
    Ok(m)
}

pub fn load_dataset(dir: &Path) -> Result<Vec<SyntheticScene>> {
    let m = load_manifest(dir)?;
    m.scenes.iter().map(|e| load_scene(dir, e)).collect()
}

fn take(map: &mut HashMap<String, Tensor>, key: &str, path: &Path) -> Result<Tensor> {
    map.remove(key)
        .ok_or_else(|| Error::InvalidArgument(format!("{} is missing array `{key}`", path.display())))
}

fn load_scene(dir: &Path, entry: &SceneEntry) -> Result<SyntheticScene> {
    let path: PathBuf = dir.join(&entry.file);
    let side: SceneSidecar = read_json(&dir.join(&entry.sidecar))?;
    let mut map = load_tensors(&path)?;
    let frames = VideoTensor::new(take(&mut map, "frames", &path)?)?;
    let want = VideoDims::new(1, side.frames, side.height, side.width, 3);
    if frames.dims() != want {
        invalid_arg!("{}: frames shape {:?} disagrees with sidecar", path.display(), frames.dims().as_array());
    }
    let labels = take(&mut map, "labels", &path)?.flatten_all()?.to_vec1::<u8>()?;
    let poses = take(&mut map, "poses", &path)?.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    let person_poses = poses
        .chunks(NUM_JOINTS * 2)
        .map(|f| f.chunks(2).map(|j| [j[0], j[1]]).collect())
        .collect();
    Ok(SyntheticScene {
        seed: side.seed,
        frames,
        person_masks: VideoTensor::new(take(&mut map, "person_masks", &path)?)?,
        garment_segmentation: VideoTensor::new(take(&mut map, "garment_segmentation", &path)?)?,
        labels,
        person_poses,
        garment_color_id: side.garment_color_id,
        motion: side.motion,
        appearance: side.appearance,
    })
}
