//! Versioned checkpoint container.
//!
//! Layout: magic `CSR1`, u64 little-endian JSON header length, the JSON
//! header (config, step, validation score, and the name/shape table in
//! storage order), then the raw f64 little-endian weight data in the
//! same order. Weights round-trip bit-exactly.

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::nn::{Array, ParamStore};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"CSR1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    version: u32,
    cfg: ModelConfig,
    step: u64,
    val_cardiac_psnr: Option<f64>,
    entries: Vec<EntryMeta>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EntryMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub step: u64,
    pub val_cardiac_psnr: Option<f64>,
}

pub fn save_checkpoint(
    path: &Path,
    model: &Model,
    step: u64,
    val_cardiac_psnr: Option<f64>,
) -> Result<()> {
    let header = Header {
        version: VERSION,
        cfg: model.cfg,
        step,
        val_cardiac_psnr,
        entries: model
            .params
            .iter()
            .map(|(name, arr)| EntryMeta { name: name.to_string(), shape: arr.shape.clone() })
            .collect(),
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| Error::Schema(format!("checkpoint header: {e}")))?;

    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("ckpt.tmp");
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(MAGIC)?;
        file.write_all(&(header_json.len() as u64).to_le_bytes())?;
        file.write_all(&header_json)?;
        for (_, arr) in model.params.iter() {
            let mut buf = Vec::with_capacity(arr.len() * 8);
            for v in &arr.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            file.write_all(&buf)?;
        }
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, CheckpointMeta)> {
    let mut file = fs::File::open(path)?;
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)
        .map_err(|_| Error::Schema(format!("{}: truncated checkpoint", path.display())))?;
    if &magic != MAGIC {
        return Err(Error::Schema(format!(
            "{}: not a checkpoint file (bad magic)",
            path.display()
        )));
    }
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    file.read_exact(&mut header_json)
        .map_err(|_| Error::Schema(format!("{}: truncated header", path.display())))?;
    let header: Header = serde_json::from_slice(&header_json)
        .map_err(|e| Error::Schema(format!("{}: bad header: {e}", path.display())))?;
    if header.version != VERSION {
        return Err(Error::Schema(format!(
            "{}: unsupported checkpoint version {}",
            path.display(),
            header.version
        )));
    }

    let mut params = ParamStore::new();
    for entry in &header.entries {
        let len: usize = entry.shape.iter().product();
        let mut buf = vec![0u8; len * 8];
        file.read_exact(&mut buf).map_err(|_| {
            Error::Schema(format!("{}: truncated weights for {}", path.display(), entry.name))
        })?;
        let data: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.add(entry.name.clone(), Array::new(entry.shape.clone(), data));
    }

    // Weights must line up with what the stored config would build.
    let reference = Model::new(header.cfg, 0)?;
    if reference.params.len() != params.len() {
        return Err(Error::Config(format!(
            "{}: checkpoint has {} tensors but the config builds {}",
            path.display(),
            params.len(),
            reference.params.len()
        )));
    }
    for idx in 0..params.len() {
        let (got_name, got) = (params.name(idx), params.array(idx));
        let want_name = reference.params.name(idx);
        let want = reference.params.array(idx);
        if got_name != want_name || got.shape != want.shape {
            return Err(Error::Config(format!(
                "{}: tensor {idx} is {got_name}{:?}, config expects {want_name}{:?}",
                path.display(),
                got.shape,
                want.shape
            )));
        }
    }

    Ok((
        Model { cfg: header.cfg, params },
        CheckpointMeta { step: header.step, val_cardiac_psnr: header.val_cardiac_psnr },
    ))
}
