//! Named, grouped trainable parameters with seed-deterministic init.

use std::collections::BTreeMap;
use std::fmt;

use candle_core::{DType, Device, Shape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Spatial,
    Temporal,
    TemporalResampling,
    ConditioningEncoders,
    PoseEmbedders,
    Dit,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 6] = [
        ParamGroup::Spatial,
        ParamGroup::Temporal,
        ParamGroup::TemporalResampling,
        ParamGroup::ConditioningEncoders,
        ParamGroup::PoseEmbedders,
        ParamGroup::Dit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Spatial => "spatial",
            ParamGroup::Temporal => "temporal",
            ParamGroup::TemporalResampling => "temporal_resampling",
            ParamGroup::ConditioningEncoders => "conditioning_encoders",
            ParamGroup::PoseEmbedders => "pose_embedders",
            ParamGroup::Dit => "dit",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|g| g.name() == name)
    }

    /// Groups skipped entirely on image batches.
    pub fn is_temporal(self) -> bool {
        matches!(self, ParamGroup::Temporal | ParamGroup::TemporalResampling)
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Const(f64),
    /// Zero-mean normal with the given standard deviation.
    Normal(f64),
    /// Normal with std `gain / sqrt(fan_in)`.
    FanIn { fan_in: usize, gain: f64 },
}

#[derive(Debug, Clone)]
pub struct Param {
    pub group: ParamGroup,
    pub var: Var,
}

/// FNV-1a, used to give every parameter its own init stream.
fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
    dtype: DType,
    seed: u64,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self {
            params: BTreeMap::new(),
            dtype,
            seed,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Creates parameter `group.name` (which must not exist) and returns its tensor.
    pub fn create(&mut self, group: ParamGroup, name: &str, shape: impl Into<Shape>, init: Init) -> Result<Tensor> {
        let full = format!("{}.{}", group.name(), name);
        if self.params.contains_key(&full) {
            invalid_arg!("duplicate parameter name {full}");
        }
        let shape: Shape = shape.into();
        let n = shape.elem_count();
        let values: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Const(c) => vec![c; n],
            Init::Normal(std) => sample_normal(self.seed, &full, std, n),
            Init::FanIn { fan_in, gain } => sample_normal(self.seed, &full, gain / (fan_in.max(1) as f64).sqrt(), n),
        };
        let t = Tensor::from_vec(values, shape, &Device::Cpu)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let tensor = var.as_tensor().clone();
        self.params.insert(full, Param { group, var });
        Ok(tensor)
    }

    pub fn get(&self, full_name: &str) -> Option<&Param> {
        self.params.get(full_name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn group_names(&self, group: ParamGroup) -> Vec<String> {
        self.params
            .iter()
            .filter(|(_, p)| p.group == group)
            .map(|(n, _)| n.clone())
            .collect()
    }

    pub fn group_numel(&self, group: ParamGroup) -> usize {
        self.params
            .values()
            .filter(|p| p.group == group)
            .map(|p| p.var.elem_count())
            .sum()
    }

    pub fn numel(&self) -> usize {
        self.params.values().map(|p| p.var.elem_count()).sum()
    }

    /// Overwrites parameter values in place.
    pub fn set(&self, full_name: &str, value: &Tensor) -> Result<()> {
        let p = self
            .params
            .get(full_name)
            .ok_or_else(|| crate::Error::InvalidArgument(format!("unknown parameter {full_name}")))?;
        if p.var.dims() != value.dims() {
            invalid_arg!(
                "parameter {full_name}: shape {:?} does not match stored {:?}",
                value.dims(),
                p.var.dims()
            );
        }
        p.var.set(&value.to_dtype(self.dtype)?)?;
        Ok(())
    }

    /// Copies every parameter of `other` that exists here with equal shape.
    /// Returns how many were copied.
    pub fn copy_from(&self, other: &ParamStore) -> Result<usize> {
        let mut n = 0;
        for (name, p) in other.iter() {
            if self.params.contains_key(name) {
                self.set(name, p.var.as_tensor())?;
                n += 1;
            }
        }
        Ok(n)
    }

    /// Snapshot of one group's values, detached from the graph.
    pub fn group_tensors(&self, group: ParamGroup) -> Result<BTreeMap<String, Tensor>> {
        self.params
            .iter()
            .filter(|(_, p)| p.group == group)
            .map(|(n, p)| Ok((n.clone(), p.var.as_tensor().detach().copy()?)))
            .collect()
    }
}

fn sample_normal(seed: u64, name: &str, std: f64, n: usize) -> Vec<f64> {
    if std == 0.0 {
        return vec![0.0; n];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(name));
    let dist = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| dist.sample(&mut rng)).collect()
}
