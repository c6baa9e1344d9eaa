use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{AmtNet, NetConfig};
use super::{Float, Params};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"AMTC";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config: NetConfig,
    pruned: bool,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    meta: serde_json::Value,
}

/// A loaded model with the free-form metadata stored beside it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: AmtNet<f32>,
    pub meta: serde_json::Value,
}

/// Writes `AMTC`, a u32 version, a u32 header length, a JSON header listing
/// tensor names and shapes, then every tensor as little-endian f32.
pub fn save_checkpoint<F: Float>(path: &Path, model: &AmtNet<F>, meta: &serde_json::Value) -> Result<()> {
    let mut tensors = Vec::new();
    let mut data: Vec<u8> = Vec::new();
    model.visit("", &mut |name, _, v| {
        tensors.push(TensorEntry { name: name.to_string(), shape: v.shape().to_vec() });
        for x in v.iter() {
            data.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
        }
    });
    let header = Header { config: model.config.clone(), pruned: model.pruned, tensors, meta: meta.clone() };
    let json = serde_json::to_vec(&header).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&data)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bad = |reason: String| Error::Format { path: path.to_path_buf(), reason };
    let mut r = BufReader::new(File::open(path)?);
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(|_| bad("file too short".into()))?;
    if word != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint (bad magic)".into()));
    }
    r.read_exact(&mut word).map_err(|_| bad("file too short".into()))?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    r.read_exact(&mut word).map_err(|_| bad("file too short".into()))?;
    let mut json = vec![0u8; u32::from_le_bytes(word) as usize];
    r.read_exact(&mut json).map_err(|_| bad("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| bad(format!("header: {e}")))?;

    let mut config = header.config.clone();
    if header.pruned {
        config.n_aux = None;
    }
    let mut model = AmtNet::<f32>::zeros(config)?;
    model.config = header.config;
    model.pruned = header.pruned;

    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let mut offset = 0;
    let mut index = 0;
    let mut failure: Option<String> = None;
    model.visit_mut("", &mut |name, _, mut v| {
        if failure.is_some() {
            return;
        }
        let Some(entry) = header.tensors.get(index) else {
            failure = Some(format!("missing tensor {name}"));
            return;
        };
        index += 1;
        if entry.name != name || entry.shape != v.shape() {
            failure = Some(format!("expected {name} {:?}, found {} {:?}", v.shape(), entry.name, entry.shape));
            return;
        }
        let bytes = v.len() * 4;
        if offset + bytes > payload.len() {
            failure = Some(format!("payload ends inside {name}"));
            return;
        }
        for (x, chunk) in v.iter_mut().zip(payload[offset..offset + bytes].chunks_exact(4)) {
            *x = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        }
        offset += bytes;
    });
    if let Some(reason) = failure {
        return Err(bad(reason));
    }
    if index != header.tensors.len() || offset != payload.len() {
        return Err(bad("extra tensors or trailing bytes".into()));
    }
    Ok(Checkpoint { model, meta: header.meta })
}
