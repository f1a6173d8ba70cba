//! Parameter storage and the handful of layers the reference transformer needs.
//! Initialization draws from a seeded ChaCha stream so two models built from
//! the same seed are bitwise identical.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::ParameterGroup;
use crate::error::{QuistError, Result};

#[derive(Debug)]
pub struct ParamStore {
    params: BTreeMap<String, (ParameterGroup, Var)>,
    rng: ChaCha8Rng,
    device: Device,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            params: BTreeMap::new(),
            rng: crate::seed::labeled_rng(seed, "param_init"),
            device: Device::Cpu,
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn insert(&mut self, name: String, group: ParameterGroup, tensor: Tensor) -> Result<Tensor> {
        let var = Var::from_tensor(&tensor)?;
        let t = var.as_tensor().clone();
        if self.params.insert(name.clone(), (group, var)).is_some() {
            return Err(QuistError::Argument(format!("duplicate parameter {name}")));
        }
        Ok(t)
    }

    pub fn normal(&mut self, name: String, group: ParameterGroup, shape: &[usize], std: f32) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| self.rng.sample::<f32, _>(StandardNormal) * std).collect();
        let t = Tensor::from_vec(data, shape, &self.device)?;
        self.insert(name, group, t)
    }

    pub fn constant(&mut self, name: String, group: ParameterGroup, shape: &[usize], value: f32) -> Result<Tensor> {
        let t = (Tensor::ones(shape, DType::F32, &self.device)? * value as f64)?;
        self.insert(name, group, t)
    }

    pub fn vars_in(&self, groups: &[ParameterGroup]) -> Vec<Var> {
        self.params
            .values()
            .filter(|(g, _)| groups.contains(g))
            .map(|(_, v)| v.clone())
            .collect()
    }

    pub fn names_in(&self, group: ParameterGroup) -> impl Iterator<Item = &str> {
        self.params
            .iter()
            .filter(move |(_, (g, _))| *g == group)
            .map(|(n, _)| n.as_str())
    }

    pub fn count(&self, group: ParameterGroup) -> usize {
        self.params
            .values()
            .filter(|(g, _)| *g == group)
            .map(|(_, v)| v.elem_count())
            .sum()
    }

    /// Deep copy of every parameter value, keyed by name.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        self.params
            .iter()
            .map(|(n, (_, v))| Ok((n.clone(), v.as_tensor().copy()?)))
            .collect()
    }

    pub fn restore(&self, snapshot: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, (_, var)) in &self.params {
            let value = snapshot
                .get(name)
                .ok_or_else(|| QuistError::Lookup(format!("snapshot lacks parameter {name}")))?;
            var.set(value)?;
        }
        Ok(())
    }

    /// Flat f32 values of every parameter in a group, in name order.
    pub fn group_values(&self, group: ParameterGroup) -> Result<Vec<f32>> {
        let mut out = Vec::new();
        for (g, v) in self.params.values() {
            if *g == group {
                out.extend(v.as_tensor().flatten_all()?.to_vec1::<f32>()?);
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let map: HashMap<String, Tensor> = self
            .params
            .iter()
            .map(|(n, (_, v))| (n.clone(), v.as_tensor().clone()))
            .collect();
        candle_core::safetensors::save(&map, path)?;
        Ok(())
    }

    pub fn load(&self, path: &Path) -> Result<()> {
        let loaded = candle_core::safetensors::load(path, &self.device)?;
        let snapshot: BTreeMap<String, Tensor> = loaded.into_iter().collect();
        self.restore(&snapshot)
    }
}

pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, group: ParameterGroup, d_in: usize, d_out: usize) -> Result<Self> {
        let std = (1.0 / d_in as f32).sqrt();
        Ok(Self {
            weight: store.normal(format!("{name}.weight"), group, &[d_in, d_out], std)?,
            bias: store.constant(format!("{name}.bias"), group, &[d_out], 0.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let d_in = *dims.last().expect("non-scalar input");
        let rows: usize = dims[..dims.len() - 1].iter().product();
        let y = x
            .reshape((rows, d_in))?
            .matmul(&self.weight)?
            .broadcast_add(&self.bias)?;
        let mut out_dims = dims;
        *out_dims.last_mut().unwrap() = self.weight.dim(1)?;
        Ok(y.reshape(out_dims)?)
    }
}

pub struct LayerNorm {
    gain: Tensor,
    bias: Tensor,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, group: ParameterGroup, d: usize) -> Result<Self> {
        Ok(Self {
            gain: store.constant(format!("{name}.gain"), group, &[d], 1.0)?,
            bias: store.constant(format!("{name}.bias"), group, &[d], 0.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + 1e-5)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gain)?.broadcast_add(&self.bias)?)
    }
}

pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

pub fn log_softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let shifted = x.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

pub struct MultiHeadAttention {
    query: Linear,
    key: Linear,
    value: Linear,
    output: Linear,
    heads: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, group: ParameterGroup, d: usize, heads: usize) -> Result<Self> {
        if !d.is_multiple_of(heads) {
            return Err(QuistError::Argument(format!("width {d} not divisible by {heads} heads")));
        }
        Ok(Self {
            query: Linear::new(store, &format!("{name}.query"), group, d, d)?,
            key: Linear::new(store, &format!("{name}.key"), group, d, d)?,
            value: Linear::new(store, &format!("{name}.value"), group, d, d)?,
            output: Linear::new(store, &format!("{name}.output"), group, d, d)?,
            heads,
        })
    }

    fn split_heads(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, d) = x.dims3()?;
        Ok(x.reshape((b, t, self.heads, d / self.heads))?
            .transpose(1, 2)?
            .contiguous()?)
    }

    /// `bias` is added to the attention scores and broadcasts to
    /// `[batch, heads, queries, keys]`; it carries padding and causal masks.
    pub fn forward(&self, queries: &Tensor, keys: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let (b, t, d) = queries.dims3()?;
        let q = self.split_heads(&self.query.forward(queries)?)?;
        let k = self.split_heads(&self.key.forward(keys)?)?;
        let v = self.split_heads(&self.value.forward(keys)?)?;
        let scale = 1.0 / ((d / self.heads) as f64).sqrt();
        let mut scores = (q.matmul(&k.transpose(2, 3)?.contiguous()?)? * scale)?;
        if let Some(bias) = bias {
            scores = scores.broadcast_add(bias)?;
        }
        let attn = softmax_last(&scores)?;
        let ctx = attn.matmul(&v)?.transpose(1, 2)?.reshape((b, t, d))?;
        self.output.forward(&ctx)
    }
}

pub struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, group: ParameterGroup, d: usize, d_ff: usize) -> Result<Self> {
        Ok(Self {
            up: Linear::new(store, &format!("{name}.up"), group, d, d_ff)?,
            down: Linear::new(store, &format!("{name}.down"), group, d_ff, d)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.down.forward(&self.up.forward(x)?.gelu()?)
    }
}

/// Fixed sinusoidal position table `[len, d]`.
pub fn positions(len: usize, d: usize, device: &Device) -> Result<Tensor> {
    let mut data = Vec::with_capacity(len * d);
    for pos in 0..len {
        for i in 0..d {
            let rate = 1.0 / 10_000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 * rate;
            data.push(if i % 2 == 0 { angle.sin() } else { angle.cos() } as f32);
        }
    }
    Ok(Tensor::from_vec(data, (len, d), device)?)
}

/// Large negative score used to mask attention.
pub const NEG_INF: f32 = -1e9;
