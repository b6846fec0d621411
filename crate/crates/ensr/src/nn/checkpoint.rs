//! Checkpoints: a directory of tensor files plus a meta.json manifest.
//!
//! Tensor files carry an "ENST" magic, a little-endian u32 rank and
//! dims, then raw f64 payload. meta.json is written last and acts as
//! the commit marker — a directory without it is an interrupted save
//! and refuses to load. Same-input saves are byte-identical.

use super::adam::Adam;
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

const MAGIC: &[u8; 4] = b"ENST";

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + 4 * t.shape().len() + 8 * t.numel());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Checkpoint(format!("{}: {}", path.display(), msg));
    if buf.len() < 8 || &buf[0..4] != MAGIC {
        return Err(bad("not a tensor file"));
    }
    let ndim = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
    if ndim > 8 {
        return Err(bad("implausible rank"));
    }
    let head = 8 + 4 * ndim;
    if buf.len() < head {
        return Err(bad("truncated header"));
    }
    let shape: Vec<usize> = (0..ndim)
        .map(|i| u32::from_le_bytes(buf[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize)
        .collect();
    let n: usize = shape.iter().product();
    if buf.len() != head + 8 * n {
        return Err(bad("payload length does not match shape"));
    }
    let data = buf[head..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Tensor::new(shape, data).unwrap())
}

#[derive(Serialize, Deserialize)]
struct AdamMeta {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    moments: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    schema: u32,
    params: BTreeMap<String, Vec<usize>>,
    adam: Option<AdamMeta>,
    extra: serde_json::Value,
}

pub struct Checkpoint {
    pub params: ParamStore,
    pub adam: Option<Adam>,
    pub extra: serde_json::Value,
}

pub fn save(dir: &Path, params: &ParamStore, adam: Option<&Adam>, extra: &serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta_path = dir.join("meta.json");
    if meta_path.exists() {
        // drop the commit marker first so a crash mid-save cannot leave
        // a directory that parses as a complete older checkpoint
        fs::remove_file(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    }
    let mut shapes = BTreeMap::new();
    for (name, t) in params.iter() {
        write_tensor(&dir.join(format!("p.{}.raw", name)), t)?;
        shapes.insert(name.to_string(), t.shape().to_vec());
    }
    let adam_meta = match adam {
        Some(a) => {
            let mut moments = Vec::new();
            for (name, m) in &a.m {
                write_tensor(&dir.join(format!("m.{}.raw", name)), m)?;
                write_tensor(&dir.join(format!("v.{}.raw", name)), &a.v[name])?;
                moments.push(name.clone());
            }
            Some(AdamMeta {
                lr: a.lr,
                beta1: a.beta1,
                beta2: a.beta2,
                eps: a.eps,
                t: a.t,
                moments,
            })
        }
        None => None,
    };
    let meta = Meta {
        schema: 1,
        params: shapes,
        adam: adam_meta,
        extra: extra.clone(),
    };
    let body = serde_json::to_string_pretty(&meta)? + "\n";
    fs::write(&meta_path, body).map_err(|e| Error::io(&meta_path, e))
}

pub fn load(dir: &Path) -> Result<Checkpoint> {
    let meta_path = dir.join("meta.json");
    if !meta_path.exists() {
        return Err(Error::Checkpoint(format!(
            "{}: no meta.json (missing or incomplete checkpoint)",
            dir.display()
        )));
    }
    let body = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: Meta = serde_json::from_str(&body)?;
    if meta.schema != 1 {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint schema {}",
            meta.schema
        )));
    }
    let mut params = ParamStore::new();
    for (name, shape) in &meta.params {
        let t = read_tensor(&dir.join(format!("p.{}.raw", name)))?;
        if t.shape() != &shape[..] {
            return Err(Error::Checkpoint(format!(
                "parameter {} has shape {:?}, manifest says {:?}",
                name,
                t.shape(),
                shape
            )));
        }
        params.insert(name, t);
    }
    let adam = match meta.adam {
        Some(am) => {
            let mut a = Adam::new(am.lr, am.beta1, am.beta2);
            a.eps = am.eps;
            a.t = am.t;
            for name in &am.moments {
                if !params.contains(name) {
                    return Err(Error::Checkpoint(format!(
                        "moment for unknown parameter {}",
                        name
                    )));
                }
                a.m.insert(name.clone(), read_tensor(&dir.join(format!("m.{}.raw", name)))?);
                a.v.insert(name.clone(), read_tensor(&dir.join(format!("v.{}.raw", name)))?);
            }
            Some(a)
        }
        None => None,
    };
    Ok(Checkpoint {
        params,
        adam,
        extra: meta.extra,
    })
}
