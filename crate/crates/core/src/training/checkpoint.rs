//! Checkpoint layout: `CKPT`, a little-endian `u32` header length, a JSON
//! header, then raw little-endian `f32` blobs at the offsets the header lists.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RmsProp;
use crate::error::{Error, Result};
use crate::io::{format_err, read_file, write_atomic};
use crate::models::ModelConfig;
use crate::tensor::{ParamKind, ParamStore, Tensor};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"CKPT";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    /// Number of completed epochs.
    pub epoch: usize,
    pub best_val_ssim: Option<f64>,
    pub params: ParamStore<f32>,
    pub optimizer: Option<RmsProp<f32>>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    byte_offset: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    kind: Option<ParamKind>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    kind: String,
    rho: f64,
    eps: f64,
    steps: u64,
    square_avg: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    epoch: usize,
    best_val_ssim: Option<f64>,
    params: Vec<TensorEntry>,
    optimizer: Option<OptimizerHeader>,
}

fn push_blob(blob: &mut Vec<u8>, data: &[f32]) -> usize {
    let at = blob.len();
    for v in data {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    at
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut blob = Vec::new();
    let params = ckpt
        .params
        .iter()
        .map(|(name, p)| TensorEntry {
            name: name.to_string(),
            shape: p.tensor.shape().to_vec(),
            dtype: "f32".into(),
            byte_offset: push_blob(&mut blob, p.tensor.data()),
            kind: Some(p.kind),
        })
        .collect();
    let optimizer = ckpt.optimizer.as_ref().map(|opt| OptimizerHeader {
        kind: "rmsprop".into(),
        rho: opt.rho,
        eps: opt.eps,
        steps: opt.steps,
        square_avg: opt
            .square_avg
            .iter()
            .map(|(name, v)| TensorEntry {
                name: name.clone(),
                shape: vec![v.len()],
                dtype: "f32".into(),
                byte_offset: push_blob(&mut blob, v),
                kind: None,
            })
            .collect(),
    });
    let header = serde_json::to_vec(&Header {
        format_version: FORMAT_VERSION,
        config: ckpt.config.clone(),
        epoch: ckpt.epoch,
        best_val_ssim: ckpt.best_val_ssim,
        params,
        optimizer,
    })?;
    let len = u32::try_from(header.len()).map_err(|_| Error::invalid("checkpoint header too large"))?;
    let mut out = Vec::with_capacity(8 + header.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&blob);
    Ok(out)
}

fn read_blob(blob: &[u8], entry: &TensorEntry, path: &Path) -> Result<Vec<f32>> {
    if entry.dtype != "f32" {
        return Err(format_err(path, format!("tensor {:?} has dtype {:?}", entry.name, entry.dtype)));
    }
    let n: usize = entry.shape.iter().product();
    let end = entry.byte_offset.checked_add(4 * n).filter(|&e| e <= blob.len());
    let end = end.ok_or_else(|| format_err(path, format!("tensor {:?} runs past end of file", entry.name)))?;
    Ok(blob[entry.byte_offset..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect())
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "CKPT",
        });
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let header_bytes = bytes
        .get(8..8 + len)
        .ok_or_else(|| format_err(path, "truncated header"))?;
    let header: Header =
        serde_json::from_slice(header_bytes).map_err(|e| format_err(path, format!("header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(format_err(
            path,
            format!("format version {} is not {FORMAT_VERSION}", header.format_version),
        ));
    }
    header.config.validate()?;
    let blob = &bytes[8 + len..];
    let mut params = ParamStore::new();
    for e in &header.params {
        let kind = e
            .kind
            .ok_or_else(|| format_err(path, format!("parameter {:?} has no kind", e.name)))?;
        params.insert(e.name.clone(), kind, Tensor::new(&e.shape, read_blob(blob, e, path)?)?)?;
    }
    let optimizer = match header.optimizer {
        None => None,
        Some(o) if o.kind == "rmsprop" => {
            let mut opt = RmsProp::new(o.rho, o.eps);
            opt.steps = o.steps;
            for e in &o.square_avg {
                opt.square_avg.insert(e.name.clone(), read_blob(blob, e, path)?);
            }
            Some(opt)
        }
        Some(o) => return Err(format_err(path, format!("unknown optimizer {:?}", o.kind))),
    };
    Ok(Checkpoint {
        config: header.config,
        epoch: header.epoch,
        best_val_ssim: header.best_val_ssim,
        params,
        optimizer,
    })
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ckpt)?)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&read_file(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::KvNet;

    fn small() -> Checkpoint {
        let config = ModelConfig {
            c_v: 4,
            c_k: 2,
            levels: 1,
            blocks: 1,
            ..ModelConfig::default()
        };
        let params = KvNet::new(config.clone()).unwrap().init_params::<f32>(11).unwrap();
        let mut opt = RmsProp::new(0.99, 1e-8);
        opt.steps = 3;
        for (name, p) in params.iter() {
            opt.square_avg
                .insert(name.to_string(), p.tensor.data().iter().map(|v| v * v + 1e-30).collect());
        }
        Checkpoint {
            config,
            epoch: 2,
            best_val_ssim: Some(0.5),
            params,
            optimizer: Some(opt),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ckpt = small();
        let bytes = encode_checkpoint(&ckpt).unwrap();
        let back = decode_checkpoint(&bytes, Path::new("x")).unwrap();
        assert_eq!(back.config, ckpt.config);
        assert_eq!(back.epoch, 2);
        for ((n1, p1), (n2, p2)) in ckpt.params.iter().zip(back.params.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(p1.kind, p2.kind);
            let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&p1.tensor), bits(&p2.tensor));
        }
        assert_eq!(back.optimizer, ckpt.optimizer);
        assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
    }

    #[test]
    fn bad_magic_and_truncation() {
        let bytes = encode_checkpoint(&small()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(decode_checkpoint(&bad, Path::new("x")).unwrap_err().category(), "bad-magic");
        let cut = &bytes[..bytes.len() - 4];
        assert_eq!(decode_checkpoint(cut, Path::new("x")).unwrap_err().category(), "format");
    }
}
