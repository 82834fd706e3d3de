//! SDFM model checkpoints.
//!
//! ```text
//! "SDFM"  version:u32  config_len:u32  config:utf8[config_len]
//! tensor_count:u32
//! per tensor: name_len:u16 name:utf8 ndim:u8 dims:u32[ndim] data:f32 LE
//! ```
//!
//! The config blob is `key = value` text: the model configuration, optimiser
//! settings and any caller-supplied entries. Adam moments are stored as
//! tensors named `adam.m.<param>` and `adam.v.<param>`.

use std::fs;
use std::path::Path;

use sleepdiff_core::config::parse_kv;
use sleepdiff_core::optim::{Adam, AdamConfig};
use sleepdiff_core::{ModelConfig, SleepDiffFormer, Tensor};

use crate::format::{put_f32s, FormatError, Reader, Result};

pub const MAGIC: &[u8; 4] = b"SDFM";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: SleepDiffFormer<f32>,
    pub adam: Option<Adam<f32>>,
    /// Config entries outside the `model.`, `ablation.` and `adam.` keys.
    pub extra: Vec<(String, String)>,
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(t.ndim() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    put_f32s(out, t.data());
}

pub fn encode_checkpoint(model: &SleepDiffFormer<f32>, adam: Option<&Adam<f32>>, extra: &[(String, String)]) -> Vec<u8> {
    let mut config = model.config.to_kv();
    if let Some(a) = adam {
        config.push_str(&format!(
            "adam.step = {}\nadam.lr = {:e}\nadam.beta1 = {}\nadam.beta2 = {}\nadam.eps = {:e}\n",
            a.t, a.cfg.lr, a.cfg.beta1, a.cfg.beta2, a.cfg.eps
        ));
    }
    for (k, v) in extra {
        config.push_str(&format!("{k} = {v}\n"));
    }
    let store = &model.store;
    let mut out = Vec::with_capacity(64 + config.len() + store.numel() * 4 * if adam.is_some() { 3 } else { 1 });
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    let count = store.len() * if adam.is_some() { 3 } else { 1 };
    out.extend_from_slice(&(count as u32).to_le_bytes());
    for (name, t) in store.iter() {
        put_tensor(&mut out, name, t);
    }
    if let Some(a) = adam {
        for (id, (name, _)) in store.ids().zip(store.iter()) {
            put_tensor(&mut out, &format!("adam.m.{name}"), &a.m[id.index()]);
            put_tensor(&mut out, &format!("adam.v.{name}"), &a.v[id.index()]);
        }
    }
    out
}

fn invalid(msg: impl Into<String>) -> FormatError {
    FormatError::Invalid(msg.into())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(FormatError::BadVersion(version));
    }
    let len = r.u32("config length")? as usize;
    let text = std::str::from_utf8(r.take(len, "config")?).map_err(|_| invalid("config is not UTF-8"))?;
    let mut config = ModelConfig::standard();
    let (mut adam_cfg, mut step) = (AdamConfig::default(), None::<u64>);
    let mut extra = Vec::new();
    for (k, v) in parse_kv(text).map_err(|e| invalid(e.to_string()))? {
        let num = |v: &str| v.parse::<f64>().map_err(|_| invalid(format!("{k}: bad number {v:?}")));
        match k.as_str() {
            "adam.step" => step = Some(v.parse().map_err(|_| invalid(format!("adam.step: bad value {v:?}")))?),
            "adam.lr" => adam_cfg.lr = num(&v)?,
            "adam.beta1" => adam_cfg.beta1 = num(&v)?,
            "adam.beta2" => adam_cfg.beta2 = num(&v)?,
            "adam.eps" => adam_cfg.eps = num(&v)?,
            _ => {
                if !config.apply_kv(&k, &v).map_err(|e| invalid(e.to_string()))? {
                    extra.push((k, v));
                }
            }
        }
    }
    let mut model = SleepDiffFormer::<f32>::new(config, 0).map_err(|e| invalid(e.to_string()))?;
    let mut adam = step.map(|t| {
        let mut a = Adam::new(&model.store, adam_cfg);
        a.t = t;
        a
    });
    let count = r.u32("tensor count")? as usize;
    let mut seen = vec![[false; 3]; model.store.len()];
    for _ in 0..count {
        let nlen = r.u16("tensor name length")? as usize;
        let name = std::str::from_utf8(r.take(nlen, "tensor name")?).map_err(|_| invalid("tensor name is not UTF-8"))?;
        let ndim = r.u8("tensor rank")? as usize;
        let dims = (0..ndim).map(|_| r.u32("tensor dims").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n = dims.iter().product::<usize>();
        let data = r.f32s(n, "tensor data")?;
        let (slot, pname) = match (name.strip_prefix("adam.m."), name.strip_prefix("adam.v.")) {
            (Some(p), _) => (1, p),
            (_, Some(p)) => (2, p),
            _ => (0, name),
        };
        let id = model.store.id(pname).ok_or_else(|| FormatError::UnknownTensor(name.to_string()))?;
        if model.store.get(id).shape() != dims.as_slice() {
            return Err(invalid(format!("{name}: shape {dims:?}, expected {:?}", model.store.get(id).shape())));
        }
        let t = Tensor::new(&dims, data).map_err(|e| invalid(e.to_string()))?;
        match (slot, adam.as_mut()) {
            (0, _) => *model.store.get_mut(id) = t,
            (1, Some(a)) => a.m[id.index()] = t,
            (2, Some(a)) => a.v[id.index()] = t,
            _ => return Err(invalid(format!("{name}: optimiser moments without optimiser state"))),
        }
        seen[id.index()][slot] = true;
    }
    let need = if adam.is_some() { 3 } else { 1 };
    if let Some(i) = seen.iter().position(|s| s[..need].iter().any(|&x| !x)) {
        let name = model.store.ids().nth(i).map(|id| model.store.name(id).to_string()).unwrap_or_default();
        return Err(invalid(format!("checkpoint is missing tensor {name:?}")));
    }
    if !r.is_empty() {
        return Err(invalid("trailing bytes after tensor table"));
    }
    Ok(Checkpoint { model, adam, extra })
}

pub fn save_checkpoint(path: &Path, model: &SleepDiffFormer<f32>, adam: Option<&Adam<f32>>, extra: &[(String, String)]) -> Result<()> {
    fs::write(path, encode_checkpoint(model, adam, extra))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}
