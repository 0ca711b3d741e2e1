//! Checkpoint files.
//!
//! ```text
//! b"SGCK" | version: u32 | config_len: u32 | config (TOML, UTF-8)
//!         | n_tensors: u32 | { name_len: u32 | name | SGT1 block } * n_tensors
//! ```
//!
//! The config block holds `step`, an optional training `mode` and a `[model]`
//! table. Optimizer moments,
//! when present, are stored as extra tensors prefixed `adam.m.` / `adam.v.`.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::training::TrainMode;
use crate::tensor::{read_exact, read_sgt, read_u32, to_f32, write_sgt};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub step: u64,
    /// Objective the parameters were trained with, when known.
    pub mode: Option<TrainMode>,
    pub params: ModelParams,
    /// Adam first and second moments.
    pub moments: Option<(ModelParams, ModelParams)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    step: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mode: Option<TrainMode>,
    model: ModelConfig,
}

fn push_tensors(out: &mut Vec<(String, Array2<f32>)>, params: &ModelParams, prefix: &str) {
    for t in params.tensors() {
        let a = Array2::from_shape_vec(t.shape, t.data.to_vec()).expect("consistent shape");
        out.push((format!("{prefix}{}", t.name), to_f32(a.view())));
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = toml::to_string(&Header {
            step: self.step,
            mode: self.mode,
            model: self.config.clone(),
        })
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut tensors = Vec::new();
        push_tensors(&mut tensors, &self.params, "");
        if let Some((m, v)) = &self.moments {
            push_tensors(&mut tensors, m, "adam.m.");
            push_tensors(&mut tensors, v, "adam.v.");
        }
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
        buf.extend_from_slice(header.as_bytes());
        buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in &tensors {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            write_sgt(&mut buf, t.view())?;
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "magic").map_err(ck)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(format!(
                "bad magic {:?}, expected \"SGCK\"",
                String::from_utf8_lossy(&magic)
            )));
        }
        let version = read_u32(&mut r, "version").map_err(ck)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (this build reads {CHECKPOINT_VERSION})"
            )));
        }
        let len = read_u32(&mut r, "config length").map_err(ck)? as usize;
        let mut text = vec![0u8; len];
        read_exact(&mut r, &mut text, "config block").map_err(ck)?;
        let text = String::from_utf8(text).map_err(|_| Error::Checkpoint("config block is not UTF-8".into()))?;
        let header: Header = toml::from_str(&text).map_err(|e| Error::Checkpoint(format!("config block: {e}")))?;
        header.model.validate()?;

        let n = read_u32(&mut r, "tensor count").map_err(ck)? as usize;
        let mut named = HashMap::with_capacity(n);
        for _ in 0..n {
            let name_len = read_u32(&mut r, "tensor name length").map_err(ck)? as usize;
            let mut name = vec![0u8; name_len];
            read_exact(&mut r, &mut name, "tensor name").map_err(ck)?;
            let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let t = read_sgt(&mut r).map_err(|e| Error::Checkpoint(format!("tensor `{name}`: {e}")))?;
            named.insert(name, t);
        }
        if !r.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.len())));
        }
        let params = fill(&header.model, &mut named, "")?;
        let moments = if named.keys().any(|k| k.starts_with("adam.")) {
            Some((fill(&header.model, &mut named, "adam.m.")?, fill(&header.model, &mut named, "adam.v.")?))
        } else {
            None
        };
        if let Some(extra) = named.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected tensor `{extra}`")));
        }
        Ok(Self {
            config: header.model,
            step: header.step,
            mode: header.mode,
            params,
            moments,
        })
    }

    /// Writes through a temporary file so readers never see a partial file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

fn ck(e: Error) -> Error {
    match e {
        Error::Container(m) => Error::Checkpoint(m),
        other => other,
    }
}

fn fill(config: &ModelConfig, named: &mut HashMap<String, Array2<f32>>, prefix: &str) -> Result<ModelParams> {
    let mut p = ModelParams::zeros(config);
    let names = p.tensor_names();
    let shapes: Vec<(usize, usize)> = p.tensors().iter().map(|t| t.shape).collect();
    for ((name, shape), dst) in names.iter().zip(shapes).zip(p.slices_mut()) {
        let key = format!("{prefix}{name}");
        let t = named
            .remove(&key)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{key}`")))?;
        if t.dim() != shape {
            return Err(Error::Checkpoint(format!(
                "tensor `{key}` has shape {:?}, config implies {:?}",
                t.dim(),
                shape
            )));
        }
        for (d, s) in dst.iter_mut().zip(t.iter()) {
            *d = f64::from(*s);
        }
    }
    Ok(p)
}

pub fn save_checkpoint(params: &ModelParams, config: &ModelConfig, step: u64, path: &Path) -> Result<()> {
    Checkpoint {
        config: config.clone(),
        step,
        mode: None,
        params: params.clone(),
        moments: None,
    }
    .save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, ModelConfig, u64)> {
    let c = Checkpoint::load(path)?;
    Ok((c.params, c.config, c.step))
}

/// Loads and checks the stored config against `expected`, naming the first
/// differing field.
pub fn load_checkpoint_expecting(path: &Path, expected: &ModelConfig) -> Result<(ModelParams, u64)> {
    let (params, found, step) = load_checkpoint(path)?;
    let fields = [
        ("input_dim", expected.input_dim, found.input_dim),
        ("encoder_layers", expected.encoder_layers, found.encoder_layers),
        ("encoder_units", expected.encoder_units, found.encoder_units),
        ("prediction_layers", expected.prediction_layers, found.prediction_layers),
        ("prediction_units", expected.prediction_units, found.prediction_units),
        ("joint_units", expected.joint_units, found.joint_units),
        ("vocab_size", expected.vocab_size, found.vocab_size),
    ];
    for (field, e, f) in fields {
        if e != f {
            return Err(Error::ConfigMismatch {
                field,
                expected: e.to_string(),
                found: f.to_string(),
            });
        }
    }
    Ok((params, step))
}
