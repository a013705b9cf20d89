//! HRM1 model container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "HRM1"
//! u64 length, then that many bytes of ModelSpec JSON
//! u32 tap count, then per tap: u32 stage, u32 channels, u32 height, u32 width
//! u32 tensor count, then per tensor: u32 name length, UTF-8 name, HRT1 tensor
//! ```
//!
//! Phase-2 head tensors use the reserved names `head.weight` and `head.bias`.

use std::io::Read;
use std::path::Path;

use crate::backbone::params::{HeadWeights, Parameters, HEAD_BIAS, HEAD_WEIGHT};
use crate::backbone::spec::{ModelSpec, Tap, TapSet};
use crate::error::{Error, Result};
use crate::io::hrt::{encode_tensor, read_tensor};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"HRM1";

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile<T> {
    pub spec: ModelSpec,
    pub taps: TapSet,
    pub params: Parameters<T>,
    pub head: Option<HeadWeights<T>>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Format { kind: "HRM1 model", msg: msg.into() }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode_model<T: Scalar>(m: &ModelFile<T>) -> Result<Vec<u8>> {
    let mut out = MAGIC.to_vec();
    let json = serde_json::to_vec(&m.spec)?;
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    put_u32(&mut out, m.taps.len());
    for t in &m.taps.taps {
        for v in [t.stage, t.channels, t.height, t.width] {
            put_u32(&mut out, v);
        }
    }
    let mut tensors: Vec<(&str, &Tensor<T>)> = m.params.iter().map(|(n, t)| (n.as_str(), t)).collect();
    if let Some(h) = &m.head {
        tensors.push((HEAD_WEIGHT, &h.weight));
        tensors.push((HEAD_BIAS, &h.bias));
    }
    put_u32(&mut out, tensors.len());
    for (name, t) in tensors {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&encode_tensor(t));
    }
    Ok(out)
}

fn get_u32(r: &mut &[u8]) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| bad("truncated"))?;
    Ok(u32::from_le_bytes(b) as usize)
}

pub fn decode_model<T: Scalar>(bytes: &[u8]) -> Result<ModelFile<T>> {
    let mut r = bytes;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("truncated"))?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(|_| bad("truncated"))?;
    let len = u64::from_le_bytes(len) as usize;
    if len > r.len() {
        return Err(bad("spec segment overruns file"));
    }
    let spec: ModelSpec = serde_json::from_slice(&r[..len])?;
    r = &r[len..];
    let tap_count = get_u32(&mut r)?;
    let mut taps = Vec::with_capacity(tap_count.min(1024));
    for _ in 0..tap_count {
        taps.push(Tap { stage: get_u32(&mut r)?, channels: get_u32(&mut r)?, height: get_u32(&mut r)?, width: get_u32(&mut r)? });
    }
    let taps = TapSet { taps };
    if spec.tap_set()? != taps {
        return Err(bad("stored tap set disagrees with the model spec"));
    }
    let count = get_u32(&mut r)?;
    let mut params = Parameters::default();
    let (mut head_w, mut head_b) = (None, None);
    for _ in 0..count {
        let n = get_u32(&mut r)?;
        if n > r.len() {
            return Err(bad("name overruns file"));
        }
        let name = std::str::from_utf8(&r[..n]).map_err(|_| bad("tensor name is not UTF-8"))?.to_string();
        r = &r[n..];
        let t = read_tensor::<T, _>(&mut r)?;
        match name.as_str() {
            HEAD_WEIGHT => head_w = Some(t),
            HEAD_BIAS => head_b = Some(t),
            _ => params.insert(name, t),
        }
    }
    params.check_against(&spec)?;
    let head = match (head_w, head_b) {
        (Some(weight), Some(bias)) => {
            let h = HeadWeights { weight, bias };
            h.check_against(&taps, spec.class_count)?;
            Some(h)
        }
        (None, None) => None,
        _ => return Err(bad("head needs both head.weight and head.bias")),
    };
    Ok(ModelFile { spec, taps, params, head })
}

pub fn write_model<T: Scalar>(path: &Path, m: &ModelFile<T>) -> Result<()> {
    std::fs::write(path, encode_model(m)?).map_err(|e| Error::io(path, e))
}

pub fn read_model<T: Scalar>(path: &Path) -> Result<ModelFile<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}
