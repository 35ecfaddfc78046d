//! Parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"VSEGCKPT"            magic
//! u32                    format version (1)
//! u32, bytes             canonical spec text
//! [u8; 32]               SHA-256 of the spec text
//! u32                    tensor count
//! per tensor:
//!   u32, bytes           name (UTF-8)
//!   u32, u64 * ndim      shape
//!   f64 * prod(shape)    values, row-major
//! ```

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array4};

use super::params::NetParams;
use super::spec::NetSpec;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"VSEGCKPT";
const VERSION: u32 = 1;

pub fn encode(spec: &NetSpec, params: &NetParams) -> Result<Vec<u8>> {
    params.check_shapes(spec)?;
    let text = spec.canonical();
    let mut out = Vec::with_capacity(64 + params.num_values() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&spec.hash());
    let tensors = params.named_tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, shape, values) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }
}

/// Decode a checkpoint, verifying the stored spec hash and tensor shapes.
pub fn decode(bytes: &[u8]) -> Result<(NetSpec, NetParams)> {
    let mut r = Reader { buf: bytes };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a vidseg checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let text = r.string()?;
    let stored: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let spec = NetSpec::parse_canonical(&text)?;
    if spec.hash() != stored {
        return Err(Error::Checkpoint(
            "spec hash does not match spec text".into(),
        ));
    }
    let count = r.u32()? as usize;
    let mut params = NetParams::zeros(&spec);
    if count != params.convs.len() * 2 {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {count}",
            params.convs.len() * 2
        )));
    }
    for i in 0..count {
        let name = r.string()?;
        let conv = i / 2;
        let expect_name = if i % 2 == 0 {
            format!("conv{conv}.weight")
        } else {
            format!("conv{conv}.bias")
        };
        if name != expect_name {
            return Err(Error::Checkpoint(format!(
                "expected tensor {expect_name}, found {name}"
            )));
        }
        let ndim = r.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let target = &mut params.convs[conv];
        let expected: Vec<usize> = if i % 2 == 0 {
            target.weight.shape().to_vec()
        } else {
            target.bias.shape().to_vec()
        };
        if shape != expected {
            return Err(Error::Checkpoint(format!(
                "{name}: shape {shape:?} does not match spec {expected:?}"
            )));
        }
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        if i % 2 == 0 {
            let dims = (shape[0], shape[1], shape[2], shape[3]);
            target.weight = Array4::from_shape_vec(dims, values).expect("shape checked");
        } else {
            target.bias = Array1::from_vec(values);
        }
    }
    if !r.buf.is_empty() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    if !params.is_finite() {
        return Err(Error::NonFinite("checkpoint parameters".into()));
    }
    Ok((spec, params))
}

pub fn save(path: &Path, spec: &NetSpec, params: &NetParams) -> Result<()> {
    fs::write(path, encode(spec, params)?).map_err(|e| Error::io(path, e))
}

/// Load a checkpoint; if `expected` is given, its hash must match the stored spec.
pub fn load(path: &Path, expected: Option<&NetSpec>) -> Result<(NetSpec, NetParams)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (spec, params) = decode(&bytes)?;
    if let Some(e) = expected {
        if e.hash() != spec.hash() {
            return Err(Error::Checkpoint(format!(
                "{}: network spec differs from the expected one",
                path.display()
            )));
        }
    }
    Ok((spec, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::init_params;

    #[test]
    fn round_trip() {
        let spec = NetSpec::default_priming(6);
        let params = init_params(&spec, 11);
        let bytes = encode(&spec, &params).unwrap();
        let (s2, p2) = decode(&bytes).unwrap();
        assert_eq!(s2, spec);
        assert_eq!(p2, params);
    }

    #[test]
    fn detects_tampering() {
        let spec = NetSpec::default_approximating(4);
        let params = init_params(&spec, 1);
        let mut bytes = encode(&spec, &params).unwrap();
        // flip a digit inside the spec text
        let pos = bytes.windows(6).position(|w| w == b"conv 3").unwrap() + 5;
        bytes[pos] = b'4';
        assert!(decode(&bytes).is_err());
        let good = encode(&spec, &params).unwrap();
        assert!(decode(&good[..good.len() - 3]).is_err());
        assert!(decode(b"NOTACKPT").is_err());
    }

    #[test]
    fn load_checks_expected_spec() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let spec = NetSpec::default_ensemble(4);
        save(&path, &spec, &init_params(&spec, 0)).unwrap();
        assert!(load(&path, Some(&spec)).is_ok());
        assert!(load(&path, Some(&NetSpec::default_ensemble(5))).is_err());
    }
}
