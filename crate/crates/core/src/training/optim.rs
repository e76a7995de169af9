//! Adam with a warmup-then-linear-decay learning rate.

use std::collections::{BTreeMap, HashMap};

use candle_core::backprop::GradStore;
use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{invalid_state, Result};
use crate::model::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub kind: OptimizerKind,
    pub lr_start: f64,
    pub lr_end: f64,
    pub warmup_steps: u64,
    pub decay_steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerSpec {
    /// Full-scale budget: 10K warmup, 1M decay.
    pub fn paper_scale() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr_start: 1e-4,
            lr_end: 1e-5,
            warmup_steps: 10_000,
            decay_steps: 1_000_000,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Same shape, scaled to the desk-scale plan (about 9K steps in total).
    pub fn desk_scale() -> Self {
        Self {
            warmup_steps: 100,
            decay_steps: 9_000,
            ..Self::paper_scale()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr_start.is_finite()
            && self.lr_end.is_finite()
            && self.lr_start > 0.0
            && self.lr_end >= 0.0
            && self.lr_end <= self.lr_start
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if !ok {
            return Err(crate::Error::config(
                "optimizer",
                "need 0 <= lr_end <= lr_start, betas in [0, 1) and eps > 0",
            ));
        }
        Ok(())
    }
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        Self::desk_scale()
    }
}

/// Linear warmup from 0, linear decay to `lr_end`, constant afterwards.
pub fn lr_at(step: u64, spec: &OptimizerSpec) -> f64 {
    if step < spec.warmup_steps {
        return spec.lr_start * step as f64 / spec.warmup_steps as f64;
    }
    let k = step - spec.warmup_steps;
    if k >= spec.decay_steps {
        return spec.lr_end;
    }
    let f = k as f64 / spec.decay_steps as f64;
    spec.lr_start + (spec.lr_end - spec.lr_start) * f
}

/// Adam state. Each parameter keeps its own update count, so parameters
/// that only receive gradients on some steps get correct bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    spec: OptimizerSpec,
    step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
    counts: BTreeMap<String, u64>,
}

impl Adam {
    pub fn new(spec: OptimizerSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            counts: BTreeMap::new(),
        })
    }

    pub fn spec(&self) -> &OptimizerSpec {
        &self.spec
    }

    /// Global step counter (number of `step` calls so far).
    pub fn global_step(&self) -> u64 {
        self.step
    }

    pub fn set_global_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn current_lr(&self) -> f64 {
        lr_at(self.step, &self.spec)
    }

    /// Applies one update to every parameter that has a gradient; others
    /// are left untouched. Returns the learning rate used.
    pub fn step(&mut self, params: &ParamStore, grads: &GradStore) -> Result<f64> {
        let lr = self.current_lr();
        let (b1, b2) = (self.spec.beta1, self.spec.beta2);
        for (name, p) in params.iter() {
            let Some(g) = grads.get(p.var.as_tensor()) else {
                continue;
            };
            let g = g.detach();
            let count = self.counts.entry(name.clone()).or_insert(0);
            *count += 1;
            let t = *count as i32;
            let m = match self.m.get(name) {
                Some(m) => ((m * b1)? + (&g * (1.0 - b1))?)?,
                None => (&g * (1.0 - b1))?,
            };
            let v = match self.v.get(name) {
                Some(v) => ((v * b2)? + (g.sqr()? * (1.0 - b2))?)?,
                None => (g.sqr()? * (1.0 - b2))?,
            };
            let m_hat = (&m / (1.0 - b1.powi(t)))?;
            let v_hat = (&v / (1.0 - b2.powi(t)))?;
            let update = (m_hat / (v_hat.sqrt()? + self.spec.eps)?)?;
            let cur = p.var.as_tensor().detach();
            p.var.set(&(cur - (update * lr)?)?)?;
            self.m.insert(name.clone(), m);
            self.v.insert(name.clone(), v);
        }
        self.step += 1;
        Ok(lr)
    }

    /// Moment tensors and counts, keyed `m.<param>`, `v.<param>`, `n.<param>`.
    pub fn state_tensors(&self) -> Result<HashMap<String, Tensor>> {
        let mut out = HashMap::new();
        for (k, t) in &self.m {
            out.insert(format!("m.{k}"), t.clone());
        }
        for (k, t) in &self.v {
            out.insert(format!("v.{k}"), t.clone());
        }
        for (k, &n) in &self.counts {
            out.insert(format!("n.{k}"), Tensor::new(&[n as f64], &Device::Cpu)?);
        }
        Ok(out)
    }

    pub fn from_state(spec: OptimizerSpec, step: u64, state: &HashMap<String, Tensor>, params: &ParamStore) -> Result<Self> {
        let mut opt = Self::new(spec)?;
        opt.step = step;
        for (key, t) in state {
            let Some((kind, name)) = key.split_once('.') else {
                invalid_state!("malformed optimizer state key {key}");
            };
            let Some(p) = params.get(name) else {
                invalid_state!("optimizer state for unknown parameter {name}");
            };
            match kind {
                "m" | "v" => {
                    if t.dims() != p.var.dims() {
                        invalid_state!("optimizer moment {key} has shape {:?}, parameter {:?}", t.dims(), p.var.dims());
                    }
                    let t = t.to_dtype(params.dtype())?;
                    if kind == "m" {
                        opt.m.insert(name.to_string(), t);
                    } else {
                        opt.v.insert(name.to_string(), t);
                    }
                }
                "n" => {
                    let n = t.to_dtype(DType::F64)?.to_vec1::<f64>()?[0];
                    opt.counts.insert(name.to_string(), n as u64);
                }
                _ => invalid_state!("unknown optimizer state kind in {key}"),
            }
        }
        Ok(opt)
    }

    /// Bitwise comparison of all state, for resume checks.
    pub fn state_eq(&self, other: &Adam) -> Result<bool> {
        if self.step != other.step || self.counts != other.counts || self.spec != other.spec {
            return Ok(false);
        }
        for (a, b) in [(&self.m, &other.m), (&self.v, &other.v)] {
            if a.len() != b.len() {
                return Ok(false);
            }
            for (k, t) in a {
                let Some(u) = b.get(k) else { return Ok(false) };
                let x = t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
                let y = u.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
                if x.iter().zip(&y).any(|(p, q)| p.to_bits() != q.to_bits()) {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }
}
