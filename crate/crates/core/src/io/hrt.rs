//! HRT1 tensor format: `"HRT1"`, dtype tag (u8: 0 = f32, 1 = f64), rank (u8),
//! `rank` little-endian u64 extents, then little-endian values in row-major order.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"HRT1";

fn bad(msg: impl Into<String>) -> Error {
    Error::Format { kind: "HRT1 tensor", msg: msg.into() }
}

pub fn encode_tensor<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + 8 * t.rank() + t.len() * T::DTYPE.size());
    out.extend_from_slice(MAGIC);
    out.push(T::DTYPE as u8);
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.extend_from_slice(&t.to_le_bytes());
    out
}

pub fn write_tensor<T: Scalar, W: Write>(w: &mut W, t: &Tensor<T>) -> std::io::Result<()> {
    w.write_all(&encode_tensor(t))
}

/// Reads one tensor; the stored dtype must match `T`.
pub fn read_tensor<T: Scalar, R: Read>(r: &mut R) -> Result<Tensor<T>> {
    let mut head = [0u8; 6];
    r.read_exact(&mut head).map_err(|e| bad(format!("header: {e}")))?;
    if &head[..4] != MAGIC {
        return Err(bad("bad magic"));
    }
    let dtype = DType::from_tag(head[4]).ok_or_else(|| bad(format!("unknown dtype tag {}", head[4])))?;
    if dtype != T::DTYPE {
        return Err(bad(format!("stored dtype {dtype:?}, requested {:?}", T::DTYPE)));
    }
    let rank = head[5] as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut b = [0u8; 8];
        r.read_exact(&mut b).map_err(|e| bad(format!("extents: {e}")))?;
        shape.push(usize::try_from(u64::from_le_bytes(b)).map_err(|_| bad("extent overflow"))?);
    }
    let len = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| bad("element count overflow"))?;
    let size = dtype.size();
    let mut raw = vec![0u8; len.checked_mul(size).ok_or_else(|| bad("byte count overflow"))?];
    r.read_exact(&mut raw).map_err(|e| bad(format!("values: {e}")))?;
    let data = raw.chunks_exact(size).map(T::read_le).collect();
    Tensor::new(shape, data).map_err(|e| bad(e.to_string()))
}

pub fn write_tensor_file<T: Scalar>(path: &Path, t: &Tensor<T>) -> Result<()> {
    std::fs::write(path, encode_tensor(t)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor_file<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_tensor(&mut bytes.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![2, 1], vec![1.0f32, -2.0]).unwrap();
        let b = encode_tensor(&t);
        assert_eq!(&b[..6], b"HRT1\x00\x02");
        assert_eq!(&b[6..14], &2u64.to_le_bytes());
        assert_eq!(&b[22..26], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 6 + 16 + 8);
    }

    #[test]
    fn dtype_mismatch_rejected() {
        let b = encode_tensor(&Tensor::scalar(1.0f64));
        assert!(read_tensor::<f32, _>(&mut b.as_slice()).is_err());
        assert!(read_tensor::<f64, _>(&mut &b[..b.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(shape in prop::collection::vec(1usize..4, 1..4), seed in any::<u64>()) {
            let t = crate::testutil::rand_tensor::<f64>(&shape, seed);
            let back: Tensor<f64> = read_tensor(&mut encode_tensor(&t).as_slice()).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
